"""Deterministic synthetic image-caption pairs.

A scene places 1-4 coloured primitives on a 4x4 grid of 8x8-pixel cells,
rendered on black into a 3x32x32 image. Its caption lists the objects in
row-major cell order as ``(colour, shape, position)`` token triples, padded to
12 tokens. Captions determine images exactly, so retrieval on held-out pairs
is learnable in principle.
"""
from __future__ import annotations

import hashlib
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InputError

GRID = 4
CELL = 8
IMAGE_SIZE = GRID * CELL
CAPTION_LEN = 12
MAX_OBJECTS = 4

SHAPES = ("square", "circle", "triangle", "cross")
COLORS = {
    "red": (1.0, 0.0, 0.0),
    "green": (0.0, 1.0, 0.0),
    "blue": (0.0, 0.0, 1.0),
    "yellow": (1.0, 1.0, 0.0),
    "cyan": (0.0, 1.0, 1.0),
    "magenta": (1.0, 0.0, 1.0),
    "white": (1.0, 1.0, 1.0),
    "orange": (1.0, 0.5, 0.0),
}
COLOR_NAMES = tuple(COLORS)

PAD = 0
CLS_RESERVED = 1
VOCAB = (("<pad>", "<cls>") + COLOR_NAMES + SHAPES
         + tuple(f"pos-{r}-{c}" for r in range(GRID) for c in range(GRID)))
TOKEN_ID = {tok: i for i, tok in enumerate(VOCAB)}
VOCAB_SIZE = len(VOCAB)

SPLIT_FRACTIONS = (("train", 0.8), ("val", 0.1), ("test", 0.1))


def _shape_masks() -> dict[str, np.ndarray]:
    yy, xx = np.mgrid[0:CELL, 0:CELL].astype(np.float64)
    c = (CELL - 1) / 2
    inner = (xx >= 1) & (xx <= CELL - 2) & (yy >= 1) & (yy <= CELL - 2)
    return {
        "square": inner,
        "circle": (xx - c) ** 2 + (yy - c) ** 2 <= 3.0 ** 2,
        "triangle": inner & (np.abs(xx - c) <= (yy - 0.5) / 2),
        "cross": inner & ((np.abs(xx - c) < 1) | (np.abs(yy - c) < 1)),
    }


SHAPE_MASKS = _shape_masks()


@dataclass(frozen=True)
class SceneObject:
    shape: str
    color: str
    cell: int  # row-major index on the 4x4 grid

    @property
    def row(self) -> int:
        return self.cell // GRID

    @property
    def col(self) -> int:
        return self.cell % GRID


@dataclass(frozen=True)
class Scene:
    objects: tuple[SceneObject, ...]
    seed: int = 0

    def __post_init__(self):
        if not 1 <= len(self.objects) <= MAX_OBJECTS:
            raise InputError(f"a scene holds 1..{MAX_OBJECTS} objects, got {len(self.objects)}")
        cells = [o.cell for o in self.objects]
        if len(set(cells)) != len(cells):
            raise InputError("two objects share a cell")
        for o in self.objects:
            if o.shape not in SHAPES or o.color not in COLORS or not 0 <= o.cell < GRID * GRID:
                raise InputError(f"invalid object {o}")

    def canonical(self) -> tuple[SceneObject, ...]:
        return tuple(sorted(self.objects, key=lambda o: o.cell))

    def key(self) -> tuple:
        return tuple((o.cell, o.shape, o.color) for o in self.canonical())


@dataclass
class PairedExample:
    pair_id: int
    scene: Scene
    image: np.ndarray   # (3, 32, 32) float32 in [0, 1]
    caption: np.ndarray  # (12,) int64


def caption_tokens(scene: Scene) -> np.ndarray:
    ids = []
    for o in scene.canonical():
        ids += [TOKEN_ID[o.color], TOKEN_ID[o.shape], TOKEN_ID[f"pos-{o.row}-{o.col}"]]
    ids += [PAD] * (CAPTION_LEN - len(ids))
    return np.asarray(ids, dtype=np.int64)


def decode_caption(ids) -> list[str]:
    return [VOCAB[i] for i in ids if i != PAD]


def render(scene: Scene) -> np.ndarray:
    img = np.zeros((3, IMAGE_SIZE, IMAGE_SIZE), dtype=np.float32)
    for o in scene.objects:
        r0, c0 = o.row * CELL, o.col * CELL
        mask = SHAPE_MASKS[o.shape]
        for ch, value in enumerate(COLORS[o.color]):
            img[ch, r0:r0 + CELL, c0:c0 + CELL][mask] = value
    return img


def random_scene(rng: np.random.Generator, seed: int = 0) -> Scene:
    k = int(rng.integers(1, MAX_OBJECTS + 1))
    cells = rng.choice(GRID * GRID, size=k, replace=False)
    shapes = rng.integers(0, len(SHAPES), size=k)
    colors = rng.integers(0, len(COLOR_NAMES), size=k)
    objs = tuple(SceneObject(SHAPES[s], COLOR_NAMES[c], int(cell))
                 for cell, s, c in zip(cells, shapes, colors))
    return Scene(objs, seed)


def _hash_key(*parts) -> str:
    return hashlib.sha256(":".join(map(str, parts)).encode()).hexdigest()


def _split_ids(pair_ids: list[int], seed: int) -> dict[str, list[int]]:
    ordered = sorted(pair_ids, key=lambda pid: _hash_key("split", seed, pid))
    n = len(ordered)
    n_train = round(SPLIT_FRACTIONS[0][1] * n)
    n_val = round(SPLIT_FRACTIONS[1][1] * n)
    return {
        "train": sorted(ordered[:n_train]),
        "val": sorted(ordered[n_train:n_train + n_val]),
        "test": sorted(ordered[n_train + n_val:]),
    }


@dataclass
class PairedDataset:
    """Paired examples plus a train/val/test assignment of pair ids."""

    examples: list[PairedExample]
    splits: dict[str, list[int]]
    seed: int = 0
    fraction: float = 1.0
    _index: dict[int, int] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self._index = {ex.pair_id: i for i, ex in enumerate(self.examples)}

    def __len__(self):
        return len(self.examples)

    def __iter__(self):
        return iter(self.examples)

    def __getitem__(self, i):
        return self.examples[i]

    def split(self, name: str) -> list[PairedExample]:
        if name not in self.splits:
            raise InputError(f"unknown split {name!r}; have {sorted(self.splits)}")
        return [self.examples[self._index[pid]] for pid in self.splits[name]]

    def arrays(self, name: str) -> tuple[np.ndarray, np.ndarray]:
        """Stacked (images (n, 3, 32, 32), captions (n, 12)) for one split."""
        exs = self.split(name)
        if not exs:
            return (np.zeros((0, 3, IMAGE_SIZE, IMAGE_SIZE), np.float32),
                    np.zeros((0, CAPTION_LEN), np.int64))
        return np.stack([e.image for e in exs]), np.stack([e.caption for e in exs])


def generate_dataset(n: int, seed: int = 0) -> PairedDataset:
    """``n`` distinct scenes with an 80/10/10 split by hashed pair id."""
    if not isinstance(n, (int, np.integer)) or n < 1:
        raise InputError(f"dataset size must be a positive integer, got {n!r}")
    rng = np.random.default_rng(seed)
    seen: set[tuple] = set()
    examples = []
    while len(examples) < n:
        scene = random_scene(rng, seed)
        if scene.key() in seen:
            continue
        seen.add(scene.key())
        pid = len(examples)
        examples.append(PairedExample(pid, scene, render(scene), caption_tokens(scene)))
    return PairedDataset(examples, _split_ids([e.pair_id for e in examples], seed), seed)


def subsample(dataset: PairedDataset, fraction: float, seed: int = 0) -> PairedDataset:
    """Keep ceil(fraction * n_train) training pairs; val/test untouched.

    Training ids are ranked by a seeded hash and the prefix is kept, so smaller
    fractions (same seed) are subsets of larger ones.
    """
    if not 0 < fraction <= 1:
        raise InputError(f"fraction must lie in (0, 1], got {fraction}")
    train = dataset.splits["train"]
    keep = math.ceil(round(fraction * len(train), 9))
    ranked = sorted(train, key=lambda pid: _hash_key("subsample", seed, pid))
    splits = dict(dataset.splits)
    splits["train"] = sorted(ranked[:keep])
    return PairedDataset(dataset.examples, splits, dataset.seed, fraction * dataset.fraction)


def export_dataset(dataset: PairedDataset, directory: str | os.PathLike) -> Path:
    """Write ``images/<pair_id>.f32`` (raw little-endian float32, 3x32x32) and ``captions.tsv``.

    ``captions.tsv`` has one line per pair: ``pair_id<TAB>split<TAB>space-separated token ids``.
    """
    root = Path(directory)
    (root / "images").mkdir(parents=True, exist_ok=True)
    split_of = {pid: name for name, ids in dataset.splits.items() for pid in ids}
    lines = []
    for ex in dataset.examples:
        ex.image.astype("<f4").tofile(root / "images" / f"{ex.pair_id:06d}.f32")
        toks = " ".join(str(int(t)) for t in ex.caption)
        lines.append(f"{ex.pair_id}\t{split_of.get(ex.pair_id, '-')}\t{toks}\n")
    (root / "captions.tsv").write_text("".join(lines))
    return root


def read_exported(directory: str | os.PathLike) -> list[tuple[int, str, np.ndarray, np.ndarray]]:
    root = Path(directory)
    out = []
    for line in (root / "captions.tsv").read_text().splitlines():
        pid, split, toks = line.split("\t")
        img = np.fromfile(root / "images" / f"{int(pid):06d}.f32", dtype="<f4")
        out.append((int(pid), split, img.reshape(3, IMAGE_SIZE, IMAGE_SIZE),
                    np.array([int(t) for t in toks.split()], dtype=np.int64)))
    return out
