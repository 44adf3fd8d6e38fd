"""Shared / modality-specific transformer encoders for images and captions.

An :class:`EncoderModel` owns every trainable tensor:

* per-modality embedders (token table or patch projection, positional table),
* one CLS embedding shared by both modalities,
* optional modality identifiers (an appended feature vector or an extra token),
* ``layers_early`` modality-specific blocks, ``layers_shared`` blocks used by
  every modality, and ``layers_late`` modality-specific blocks,
* a shared projection head and a learnable log-temperature.

A disjoint two-tower baseline is the special case ``layers_shared == 0`` with
``layers_early > 0``.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigError, InputError, ShapeError
from .tensor import Tensor

IMAGE = "image"
TEXT = "text"
MODALITIES = (IMAGE, TEXT)

IDENTIFIER_KINDS = ("none", "vector", "token")
MODALITY_VECTOR_GRID = (10, 20, 50)
# 20 of 768 features at full width; scaled proportionally below that
REFERENCE_VECTOR_WIDTH = 20
REFERENCE_MODEL_WIDTH = 768

LAYER_PARAM_NAMES = (
    "ln1.gain", "ln1.bias",
    "attn.wq", "attn.bq", "attn.wk", "attn.bk", "attn.wv", "attn.bv", "attn.wo", "attn.bo",
    "ln2.gain", "ln2.bias",
    "mlp.w1", "mlp.b1", "mlp.w2", "mlp.b2",
)


def default_vector_width(d: int) -> int:
    """Width of the modality feature vector for model width ``d`` (20 at d=768, min 1)."""
    return max(1, math.floor(REFERENCE_VECTOR_WIDTH / REFERENCE_MODEL_WIDTH * d + 0.5))


def layer_param_count(d: int, mlp_ratio: int = 4) -> int:
    """Closed-form trainable-scalar count of one pre-LN transformer block."""
    hidden = mlp_ratio * d
    attention = 4 * d * d + 4 * d
    mlp = 2 * d * hidden + hidden + d
    norms = 4 * d
    return attention + mlp + norms


@dataclass
class ModelConfig:
    d: int = 64
    identifier: str = "none"
    d_m: int | None = None
    n_heads: int = 4
    mlp_ratio: int = 4
    layers_early: int = 0
    layers_shared: int = 4
    layers_late: int = 0
    d_proj: int | None = None
    vocab_size: int = 30
    max_seq_len: int = 12
    image_size: int = 32
    patch_size: int = 8
    channels: int = 3
    tau_init: float = 0.07
    init_std: float = 0.02
    seed: int = 0

    def __post_init__(self):
        if self.identifier not in IDENTIFIER_KINDS:
            raise ConfigError(f"identifier: must be one of {IDENTIFIER_KINDS}, got {self.identifier!r}")
        if self.identifier == "vector":
            if self.d_m is None:
                self.d_m = default_vector_width(self.d)
            if self.d_m < 1:
                raise ConfigError("d_m: the 'vector' identifier needs d_m >= 1")
        elif self.d_m:
            raise ConfigError(f"d_m: must be 0 unless identifier='vector' (got {self.d_m})")
        else:
            self.d_m = 0
        if self.d_proj is None:
            self.d_proj = self.d
        for name in ("d", "n_heads", "mlp_ratio", "d_proj", "vocab_size", "max_seq_len",
                     "image_size", "patch_size", "channels"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name}: must be a positive integer")
        for name in ("layers_early", "layers_shared", "layers_late"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name}: must be >= 0")
        if self.d_m >= self.d:
            raise ConfigError(f"d_m: {self.d_m} leaves no content width inside d={self.d}")
        if self.d % self.n_heads:
            raise ConfigError(f"n_heads: {self.n_heads} does not divide d={self.d}")
        if self.image_size % self.patch_size:
            raise ConfigError(f"patch_size: {self.patch_size} does not divide image_size={self.image_size}")
        if self.tau_init <= 0:
            raise ConfigError("tau_init: must be positive")

    @property
    def d_e(self) -> int:
        return self.d - self.d_m

    @property
    def num_patches(self) -> int:
        return (self.image_size // self.patch_size) ** 2

    @property
    def patch_dim(self) -> int:
        return self.patch_size * self.patch_size * self.channels

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, values: dict) -> "ModelConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise ConfigError(f"unknown model field(s): {sorted(unknown)}")
        return cls(**values)


@dataclass
class ModalitySpec:
    """Everything that distinguishes one modality's input path."""

    modality: str
    identifier: str
    d_e: int
    d_m: int = 0

    @property
    def d(self) -> int:
        return self.d_e + self.d_m


@dataclass
class ParamCount:
    total: int
    breakdown: dict[str, int] = field(default_factory=dict)

    @property
    def matchable(self) -> int:
        """Count used for budget matching: identifier parameters are excluded."""
        return self.total - self.breakdown.get("identifiers", 0)


def _group_of(name: str) -> str:
    head = name.split(".", 1)[0]
    if head in ("early", "shared", "late"):
        return head
    if head == "proj":
        return "projection"
    if head == "log_tau":
        return "temperature"
    if name.endswith(("modality_vector", "modality_token")):
        return "identifiers"
    return "embedders"


class EncoderModel:
    """Parameter store plus forward pass for the shared-encoder family."""

    def __init__(self, config: ModelConfig, specs: dict[str, ModalitySpec] | None = None):
        self.config = config
        if specs is None:
            specs = {m: ModalitySpec(m, config.identifier, config.d_e, config.d_m) for m in MODALITIES}
        widths = {m: s.d for m, s in specs.items()}
        if len(set(widths.values())) != 1 or config.d not in widths.values():
            raise ConfigError(f"model width must be identical across modalities and equal d={config.d}; got {widths}")
        for m, s in specs.items():
            if s.identifier != config.identifier:
                raise ConfigError(f"modality {m!r}: identifier {s.identifier!r} != model's {config.identifier!r}")
            if s.identifier == "vector" and s.d_m < 1:
                raise ConfigError(f"modality {m!r}: feature-vector identifier needs d_m >= 1")
            if s.identifier != "vector" and s.d_m != 0:
                raise ConfigError(f"modality {m!r}: d_m must be 0 without a feature-vector identifier")
        if set(specs) != set(MODALITIES):
            raise ConfigError(f"expected modalities {MODALITIES}, got {tuple(specs)}")
        self.specs = specs
        self.params: dict[str, Tensor] = {}
        self._init_params(np.random.default_rng(config.seed))

    # ------------------------------------------------------------ parameters

    def _add(self, rng, name, shape, kind="normal"):
        if kind == "normal":
            data = rng.normal(0.0, self.config.init_std, size=shape)
        elif kind == "ones":
            data = np.ones(shape)
        else:
            data = np.zeros(shape)
        self.params[name] = T.parameter(data.astype(np.float32), name=name)

    def _add_layer(self, rng, prefix):
        c = self.config
        d, hidden = c.d, c.mlp_ratio * c.d
        shapes = {
            "ln1.gain": ((d,), "ones"), "ln1.bias": ((d,), "zeros"),
            "attn.wq": ((d, d), "normal"), "attn.bq": ((d,), "zeros"),
            "attn.wk": ((d, d), "normal"), "attn.bk": ((d,), "zeros"),
            "attn.wv": ((d, d), "normal"), "attn.bv": ((d,), "zeros"),
            "attn.wo": ((d, d), "normal"), "attn.bo": ((d,), "zeros"),
            "ln2.gain": ((d,), "ones"), "ln2.bias": ((d,), "zeros"),
            "mlp.w1": ((d, hidden), "normal"), "mlp.b1": ((hidden,), "zeros"),
            "mlp.w2": ((hidden, d), "normal"), "mlp.b2": ((d,), "zeros"),
        }
        for pname in LAYER_PARAM_NAMES:
            shape, kind = shapes[pname]
            self._add(rng, f"{prefix}.{pname}", shape, kind)

    def _init_params(self, rng):
        c = self.config
        d_e = c.d_e
        self._add(rng, "cls", (d_e,))
        self._add(rng, "text.token_table", (c.vocab_size, d_e))
        self._add(rng, "text.pos", (c.max_seq_len, d_e))
        self._add(rng, "image.patch_proj", (c.patch_dim, d_e))
        self._add(rng, "image.pos", (c.num_patches, d_e))
        for m in MODALITIES:
            if c.identifier == "vector":
                self._add(rng, f"{m}.modality_vector", (self.specs[m].d_m,))
            elif c.identifier == "token":
                self._add(rng, f"{m}.modality_token", (c.d,))
        for m in MODALITIES:
            for i in range(c.layers_early):
                self._add_layer(rng, f"early.{m}.{i}")
        for i in range(c.layers_shared):
            self._add_layer(rng, f"shared.{i}")
        for m in MODALITIES:
            for i in range(c.layers_late):
                self._add_layer(rng, f"late.{m}.{i}")
        self._add(rng, "proj", (c.d, c.d_proj))
        self.params["log_tau"] = T.parameter(np.float32(math.log(c.tau_init)), name="log_tau")

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def named_parameters(self):
        return self.params.items()

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def layer(self, prefix: str) -> dict[str, Tensor]:
        return {n: self.params[f"{prefix}.{n}"] for n in LAYER_PARAM_NAMES}

    def stack_prefixes(self, modality: str) -> list[str]:
        """Layer prefixes applied to ``modality`` in order: early, shared, late."""
        c = self.config
        return ([f"early.{modality}.{i}" for i in range(c.layers_early)]
                + [f"shared.{i}" for i in range(c.layers_shared)]
                + [f"late.{modality}.{i}" for i in range(c.layers_late)])

    @property
    def tau(self) -> float:
        return float(np.exp(self.params["log_tau"].data))

    def state_dict(self) -> dict[str, np.ndarray]:
        return {n: p.data.copy() for n, p in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]):
        if set(state) != set(self.params):
            missing = sorted(set(self.params) - set(state))
            extra = sorted(set(state) - set(self.params))
            raise ConfigError(f"state mismatch: missing {missing}, unexpected {extra}")
        for n, p in self.params.items():
            arr = np.asarray(state[n], dtype=np.float32)
            if arr.shape != p.shape:
                raise ShapeError(f"{n}: expected shape {p.shape}, got {arr.shape}")
            p.data = np.asarray(arr, order="C")

    # --------------------------------------------------------------- forward

    def _check_modality(self, modality: str):
        if modality not in self.specs:
            raise ConfigError(f"modality {modality!r} is not registered with this model")

    def input_sequence(self, modality: str, raw) -> Tensor:
        """Raw batch -> encoder input h0 of shape (N, s', d)."""
        if modality == TEXT:
            content = embed_text(self, raw)
        elif modality == IMAGE:
            content = embed_image(self, raw)
        else:
            raise ConfigError(f"modality {modality!r} is not registered with this model")
        return assemble_input(self, content, modality)

    def encode(self, h0: Tensor, modality: str) -> Tensor:
        return encode(self, h0, modality)

    def embed(self, modality: str, raw) -> Tensor:
        """Raw batch -> unit-norm embeddings (N, d_proj)."""
        return pool_and_project(self, self.encode(self.input_sequence(modality, raw), modality))

    def embed_images(self, images) -> Tensor:
        return self.embed(IMAGE, images)

    def embed_texts(self, token_ids) -> Tensor:
        return self.embed(TEXT, token_ids)


# ------------------------------------------------------------------ embedders

def _batched(x: Tensor, single: bool) -> Tensor:
    return T.reshape(x, x.shape[1:]) if single else x


def embed_text(model: EncoderModel, token_ids) -> Tensor:
    """Token ids (s,) or (N, s) -> content embeddings (s, d_e) or (N, s, d_e)."""
    c = model.config
    ids = np.asarray(token_ids)
    if ids.dtype.kind not in "iu" and ids.size:
        raise InputError("token ids must be integers")
    ids = ids.astype(np.int64)
    single = ids.ndim == 1
    if single:
        ids = ids[None]
    if ids.ndim != 2 or ids.shape[1] < 1:
        raise InputError(f"text input must hold at least one token, got shape {np.shape(token_ids)}")
    s = ids.shape[1]
    if s > c.max_seq_len:
        raise InputError(f"text length {s} exceeds max_seq_len={c.max_seq_len}")
    if ids.min() < 0 or ids.max() >= c.vocab_size:
        raise InputError(f"token ids must lie in [0, {c.vocab_size})")
    tok = T.embedding(model.params["text.token_table"], ids)
    pos = T.slice_axis(model.params["text.pos"], 0, 0, s)
    return _batched(T.add(tok, pos), single)


def patchify(images: np.ndarray, patch_size: int) -> np.ndarray:
    """(N, c, h, w) -> (N, num_patches, c*p*p); patches row-major, each flattened channel-major."""
    n, ch, h, w = images.shape
    p = patch_size
    x = images.reshape(n, ch, h // p, p, w // p, p)
    x = x.transpose(0, 2, 4, 1, 3, 5)
    return x.reshape(n, (h // p) * (w // p), ch * p * p)


def embed_image(model: EncoderModel, images) -> Tensor:
    """Images (c, h, w) or (N, c, h, w) -> patch embeddings (s, d_e) or (N, s, d_e)."""
    c = model.config
    arr = np.asarray(images, dtype=np.float32)
    single = arr.ndim == 3
    if single:
        arr = arr[None]
    expected = (c.channels, c.image_size, c.image_size)
    if arr.ndim != 4 or arr.shape[1:] != expected:
        raise InputError(f"image must have shape {expected}, got {np.shape(images)}")
    patches = Tensor(patchify(arr, c.patch_size))
    x = T.matmul(patches, model.params["image.patch_proj"])
    return _batched(T.add(x, model.params["image.pos"]), single)


# ------------------------------------------------------- modality identifiers

def attach_modality_vector(seq: Tensor, vector: Tensor) -> Tensor:
    """Append ``vector`` to every row of ``seq``: (..., s, d_e) -> (..., s, d_e + d_m)."""
    if vector.ndim != 1 or vector.shape[0] < 1:
        raise ConfigError(f"modality vector must be 1-D with d_m >= 1, got {vector.shape}")
    tiled = T.broadcast_to(vector, seq.shape[:-1] + vector.shape)
    return T.concat([seq, tiled], axis=-1)


def prepend_cls_and_modality_token(model: EncoderModel, seq: Tensor, modality: str) -> Tensor:
    """Prefix ``seq`` (N, s, d) with CLS and, under the token identifier, the modality token."""
    model._check_modality(modality)
    c = model.config
    if seq.ndim != 3 or seq.shape[-1] != c.d:
        raise ShapeError(f"expected (N, s, {c.d}) sequence, got {seq.shape}")
    n = seq.shape[0]
    cls = model.params["cls"]
    if c.identifier == "vector":
        cls = T.concat([cls, model.params[f"{modality}.modality_vector"]])
    rows = [T.broadcast_to(cls, (n, 1, c.d))]
    if c.identifier == "token":
        rows.append(T.broadcast_to(model.params[f"{modality}.modality_token"], (n, 1, c.d)))
    return T.concat(rows + [seq], axis=1)


def assemble_input(model: EncoderModel, content: Tensor, modality: str) -> Tensor:
    """Content embeddings (N, s, d_e) -> h0 (N, s', d) with identifiers and CLS."""
    model._check_modality(modality)
    if content.ndim == 2:
        content = T.reshape(content, (1,) + content.shape)
    if model.config.identifier == "vector":
        content = attach_modality_vector(content, model.params[f"{modality}.modality_vector"])
    return prepend_cls_and_modality_token(model, content, modality)


# ------------------------------------------------------------ encoder stacks

def transformer_layer(x: Tensor, p: dict[str, Tensor], n_heads: int) -> Tensor:
    """Pre-LN block: x + MHA(LN(x)), then + MLP(LN(.)). Shape (N, s, d) preserved."""
    n, s, d = x.shape
    dh = d // n_heads
    h = T.layernorm(x, p["ln1.gain"], p["ln1.bias"])

    def heads(w, b, axes):
        y = T.add(T.matmul(h, w), b)
        return T.permute(T.reshape(y, (n, s, n_heads, dh)), axes)

    q = heads(p["attn.wq"], p["attn.bq"], (0, 2, 1, 3))
    kt = heads(p["attn.wk"], p["attn.bk"], (0, 2, 3, 1))
    v = heads(p["attn.wv"], p["attn.bv"], (0, 2, 1, 3))
    att = T.softmax(T.scale(T.matmul(q, kt), 1.0 / math.sqrt(dh)))
    o = T.reshape(T.permute(T.matmul(att, v), (0, 2, 1, 3)), (n, s, d))
    x = T.add(x, T.add(T.matmul(o, p["attn.wo"]), p["attn.bo"]))
    h2 = T.layernorm(x, p["ln2.gain"], p["ln2.bias"])
    m = T.gelu(T.add(T.matmul(h2, p["mlp.w1"]), p["mlp.b1"]))
    return T.add(x, T.add(T.matmul(m, p["mlp.w2"]), p["mlp.b2"]))


def encode(model: EncoderModel, h0: Tensor, modality: str) -> Tensor:
    """Apply early (modality) -> shared -> late (modality) blocks; (N, s', d) or (s', d) in, same shape out."""
    model._check_modality(modality)
    if h0.shape[-1] != model.config.d:
        raise ShapeError(f"encoder expects width {model.config.d}, got {h0.shape}")
    single = h0.ndim == 2
    x = T.reshape(h0, (1,) + h0.shape) if single else h0
    for prefix in model.stack_prefixes(modality):
        x = transformer_layer(x, model.layer(prefix), model.config.n_heads)
    return T.reshape(x, x.shape[1:]) if single else x


def pool_and_project(model: EncoderModel, encoded: Tensor) -> Tensor:
    """CLS row -> projection -> unit norm. (N, s', d) -> (N, d_proj); (s', d) -> (d_proj,)."""
    single = encoded.ndim == 2
    x = T.reshape(encoded, (1,) + encoded.shape) if single else encoded
    cls = T.slice_axis(x, 1, 0)
    z = T.l2_normalize(T.matmul(cls, model.params["proj"]))
    return T.reshape(z, z.shape[1:]) if single else z


def count_params(model: EncoderModel) -> ParamCount:
    groups = dict.fromkeys(
        ("embedders", "identifiers", "early", "shared", "late", "projection", "temperature"), 0)
    for name, p in model.params.items():
        groups[_group_of(name)] += int(p.size)
    return ParamCount(total=sum(groups.values()), breakdown=groups)
