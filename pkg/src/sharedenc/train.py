"""Contrastive training loop and cross-modal retrieval evaluation."""
from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .checkpoint import save_checkpoint
from .config import TrainConfig, config_hash
from .data import PairedDataset, generate_dataset, subsample
from .encoder import EncoderModel
from .errors import ConfigError, DivergenceError, InputError
from .objective import contrastive_loss
from .optim import Adam, AdamConfig

log = logging.getLogger(__name__)

I2T = "I2T"
T2I = "T2I"
EVAL_BATCH = 256


@dataclass
class RetrievalReport:
    direction: str
    recall: dict[int, float]
    n_queries: int
    seed: int = 0
    config_hash: str = ""
    fraction: float = 1.0

    def records(self, **extra) -> list[dict]:
        return [dict(extra, direction=self.direction, k=k, recall=r, n_queries=self.n_queries,
                     seed=self.seed, config_hash=self.config_hash, fraction=self.fraction)
                for k, r in sorted(self.recall.items())]


@dataclass
class TrainResult:
    model: EncoderModel
    loss_trace: list[float]
    evals: list[tuple[int, RetrievalReport, RetrievalReport]] = field(default_factory=list)


def recall_at_k(sim: np.ndarray, k: int) -> float:
    """Fraction of rows whose diagonal entry ranks within the top ``k``.

    Rank is by descending similarity; ties go to the lower column index.
    """
    sim = np.asarray(sim)
    if sim.ndim != 2 or sim.shape[0] != sim.shape[1]:
        raise InputError(f"recall_at_k needs a square similarity matrix, got {sim.shape}")
    n = sim.shape[0]
    if not 1 <= k <= n:
        raise InputError(f"k must lie in [1, {n}], got {k}")
    diag = np.diagonal(sim)[:, None]
    above = (sim > diag).sum(axis=1)
    earlier_ties = np.tril(sim == diag, k=-1).sum(axis=1)
    rank = above + earlier_ties + 1
    return float((rank <= k).mean())


def embed_split(model: EncoderModel, images: np.ndarray, captions: np.ndarray,
                batch: int = EVAL_BATCH) -> tuple[np.ndarray, np.ndarray]:
    zi, zt = [], []
    with T.no_grad():
        for s in range(0, len(images), batch):
            zi.append(model.embed_images(images[s:s + batch]).data)
            zt.append(model.embed_texts(captions[s:s + batch]).data)
    return np.concatenate(zi), np.concatenate(zt)


def evaluate_retrieval(model: EncoderModel, dataset: PairedDataset, split: str = "test",
                       ks: Sequence[int] = (1, 5, 10), *, seed: int = 0, cfg_hash: str = "",
                       ) -> tuple[RetrievalReport, RetrievalReport]:
    """Image->text and text->image Recall@k on one split.

    k values larger than the split are clamped to its size (recall 1).
    """
    images, captions = dataset.arrays(split)
    if len(images) == 0:
        raise InputError(f"split {split!r} is empty")
    z_img, z_txt = embed_split(model, images, captions)
    sim = z_img @ z_txt.T
    n = len(images)
    ks = sorted(set(int(k) for k in ks))
    reports = []
    for direction, mat in ((I2T, sim), (T2I, sim.T)):
        rec = {k: recall_at_k(mat, min(k, n)) for k in ks}
        reports.append(RetrievalReport(direction, rec, n, seed, cfg_hash, dataset.fraction))
    return reports[0], reports[1]


def build_dataset(config: TrainConfig) -> PairedDataset:
    ds = generate_dataset(config.data.size, config.data.seed)
    if config.data.fraction < 1:
        ds = subsample(ds, config.data.fraction, config.data.seed)
    return ds


def build_model(config: TrainConfig) -> EncoderModel:
    return EncoderModel(dataclasses.replace(config.model, seed=config.seed))


def train(config: TrainConfig, dataset: PairedDataset | None = None, *,
          model: EncoderModel | None = None,
          on_step: Callable[[int, float], None] | None = None) -> TrainResult:
    """Run ``config.steps`` Adam steps on the symmetric contrastive loss.

    Batches are drawn without replacement from seeded per-epoch permutations
    of the training split. Raises :class:`DivergenceError` on a non-finite loss.
    """
    if dataset is None:
        dataset = build_dataset(config)
    images, captions = dataset.arrays("train")
    n = len(images)
    if n < 2:
        raise ConfigError(f"training split has {n} pair(s); contrastive training needs >= 2")
    batch = min(config.batch_size, n)
    if model is None:
        model = build_model(config)
    opt = Adam(model.params, AdamConfig(config.lr, config.beta1, config.beta2, config.eps))
    rng = np.random.default_rng([config.seed, 0x5EED])
    cfg_hash = config_hash(config)
    order = np.empty(0, dtype=np.int64)
    trace: list[float] = []
    result = TrainResult(model, trace)
    for step in range(config.steps):
        if len(order) < batch:
            order = rng.permutation(n)
        idx, order = order[:batch], order[batch:]
        opt.zero_grad()
        z_img = model.embed_images(images[idx])
        z_txt = model.embed_texts(captions[idx])
        loss = contrastive_loss(z_img, z_txt, model.params["log_tau"])
        value = loss.item()
        if not math.isfinite(value):
            raise DivergenceError(step, value)
        loss.backward()
        opt.step()
        trace.append(value)
        if on_step is not None:
            on_step(step, value)
        if config.eval_every and (step + 1) % config.eval_every == 0:
            i2t, t2i = evaluate_retrieval(model, dataset, config.eval_split, config.eval_k,
                                          seed=config.seed, cfg_hash=cfg_hash)
            result.evals.append((step + 1, i2t, t2i))
            log.info("step %d loss %.4f I2T@1 %.3f T2I@1 %.3f", step + 1, value,
                     i2t.recall[min(i2t.recall)], t2i.recall[min(t2i.recall)])
    if config.checkpoint_path:
        save_checkpoint(model, config.checkpoint_path, config)
    return result
