"""Synthetic image tasks generated from a seed, plus the train/validation split."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class Dataset:
    x: np.ndarray  # (n, channels, size, size)
    y: np.ndarray  # (n,) int
    num_classes: int

    def __post_init__(self):
        if len(self.x) != len(self.y):
            raise ValueError(f"x has {len(self.x)} examples but y has {len(self.y)}")

    def __len__(self) -> int:
        return len(self.y)

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.x[idx], self.y[idx], self.num_classes)

    @property
    def in_channels(self) -> int:
        return self.x.shape[1]

    @property
    def image_size(self) -> int:
        return self.x.shape[2]


@dataclass
class SplitDataset:
    train: Dataset
    val: Dataset
    train_idx: np.ndarray
    val_idx: np.ndarray


def split_dataset(dataset: Dataset, fraction: float = 0.5, seed: int = 0) -> SplitDataset:
    """Random disjoint split; ``fraction`` of the examples go to the training side."""
    if not 0 < fraction < 1:
        raise ValueError(f"fraction must be in (0, 1), got {fraction}")
    n = len(dataset)
    if n < 2:
        raise ValueError("cannot split a dataset with fewer than 2 examples")
    perm = np.random.default_rng(seed).permutation(n)
    n_train = min(max(int(round(fraction * n)), 1), n - 1)
    tr, va = np.sort(perm[:n_train]), np.sort(perm[n_train:])
    return SplitDataset(dataset.subset(tr), dataset.subset(va), tr, va)


# unit step (dr, dc) along each orientation class
_DIRECTIONS = {
    0: (0, 1),    # horizontal
    1: (1, 0),    # vertical
    2: (1, 1),    # diagonal
    3: (1, -1),   # anti-diagonal
}


def _draw_stroke(img: np.ndarray, rng: np.random.Generator, orientation: int, length: int,
                 random_polarity: bool) -> None:
    dr, dc = _DIRECTIONS[orientation]
    size = img.shape[-1]
    h = length // 2
    r = rng.integers(h * abs(dr), size - h * abs(dr))
    c = rng.integers(h * abs(dc), size - h * abs(dc))
    amp = rng.uniform(0.8, 1.2)
    if random_polarity and rng.random() < 0.5:
        amp = -amp
    for t in range(-h, h + 1):
        img[r + t * dr, c + t * dc] += amp


def make_oriented_edges(n: int, image_size: int = 8, num_classes: int = 4, noise: float = 0.15,
                        strokes: int = 1, length: int = 5, distractors: int = 1,
                        distractor_length: int = 3, random_polarity: bool = False,
                        seed: int = 0) -> Dataset:
    """Images whose class is the orientation of the long stroke(s).

    Each image holds ``strokes`` strokes of ``length`` pixels in its class's
    orientation plus ``distractors`` shorter strokes of random orientation,
    at random positions, on Gaussian background noise. A single 3x3 filter
    cannot tell a long stroke from a short one, so the class needs a receptive
    field of at least ``length`` pixels.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if not 2 <= num_classes <= 4:
        raise ValueError("oriented-edge task supports 2 to 4 classes")
    if image_size < 4:
        raise ValueError("image_size must be >= 4")
    if not 1 <= length <= image_size or length % 2 == 0:
        raise ValueError(f"length must be odd and fit the image, got {length}")
    if not 1 <= distractor_length <= image_size or distractor_length % 2 == 0:
        raise ValueError(f"distractor_length must be odd and fit the image, got {distractor_length}")
    rng = np.random.default_rng(seed)
    x = noise * rng.standard_normal((n, 1, image_size, image_size))
    y = rng.integers(0, num_classes, size=n)
    for i in range(n):
        for _ in range(strokes):
            _draw_stroke(x[i, 0], rng, int(y[i]), length, random_polarity)
        for _ in range(distractors):
            _draw_stroke(x[i, 0], rng, int(rng.integers(0, 4)), distractor_length, random_polarity)
    return Dataset(x, y.astype(np.int64), num_classes)


def make_linear_toy(n: int, image_size: int = 8, num_classes: int = 4, noise: float = 0.3,
                    seed: int = 0) -> Dataset:
    """Class = which image quadrant is bright; linearly separable."""
    if not 2 <= num_classes <= 4:
        raise ValueError("linear toy task supports 2 to 4 classes")
    rng = np.random.default_rng(seed)
    x = noise * rng.standard_normal((n, 1, image_size, image_size))
    y = rng.integers(0, num_classes, size=n)
    h = image_size // 2
    quads = [(slice(0, h), slice(0, h)), (slice(0, h), slice(h, None)),
             (slice(h, None), slice(0, h)), (slice(h, None), slice(h, None))]
    for i in range(n):
        rs, cs = quads[int(y[i])]
        x[i, 0, rs, cs] += 1.0
    return Dataset(x, y.astype(np.int64), num_classes)


GENERATORS = {
    "oriented_edges": make_oriented_edges,
    "linear_toy": make_linear_toy,
}


def make_dataset(kind: str, **kwargs) -> Dataset:
    try:
        gen = GENERATORS[kind]
    except KeyError:
        raise ValueError(f"unknown dataset kind {kind!r}; expected one of {sorted(GENERATORS)}") from None
    return gen(**kwargs)


def batches(n: int, batch_size: int, rng: np.random.Generator):
    """Shuffled index batches covering range(n) once; the last may be short."""
    perm = rng.permutation(n)
    return [perm[i : i + batch_size] for i in range(0, n, batch_size)]
