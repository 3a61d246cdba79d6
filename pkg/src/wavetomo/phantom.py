"""Procedural breast-like speed-of-sound phantoms with density classes and lesions.

A phantom is an elliptical breast support with a 2-pixel skin rim, a fatty
background and fibroglandular blobs (a smoothed random field thresholded to a
class-dependent areal fraction), plus optional disk lesions.  Glandular
fractions are measured over the breast interior, i.e. the support minus the
skin rim.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage

from .grid import C_WATER, Grid

DENSITY_CLASSES = ("A", "B", "C", "D")

# target glandular fraction of the breast interior, per class
GLAND_FRACTION = {"A": (0.03, 0.09), "B": (0.12, 0.24), "C": (0.28, 0.56), "D": (0.62, 0.80)}
# mean support radius as a fraction of the FOV width
SUPPORT_RADIUS = {"A": 0.30, "B": 0.30, "C": 0.30, "D": 0.25}

FAT_SOS = (1.44, 0.01)
GLAND_SOS = (1.54, 0.015)
SKIN_SOS = 1.58
TUMOR_SOS = (1.57, 0.01)
SOS_RANGE = (1.35, 1.65)
SKIN_WIDTH = 2

# tissue labels
WATER, FAT, GLAND, SKIN = 0, 1, 2, 3

# full-size per-class counts (A, B, C, D) of the training / testing sets
STUDY_COUNTS = {
    1: ({"A": 88, "B": 274, "C": 272, "D": 186}, {"A": 67, "B": 206, "C": 204, "D": 138}),
    2: ({"A": 162, "B": 488, "C": 484, "D": 0}, {"A": 0, "B": 0, "C": 0, "D": 324}),
}


@dataclass(frozen=True)
class PhantomExample:
    sos: np.ndarray
    tumor_mask: np.ndarray
    density_class: str
    seed: int
    labels: np.ndarray = field(repr=False, default=None)

    @property
    def support(self) -> np.ndarray:
        return self.labels != WATER

    @property
    def gland_fraction(self) -> float:
        interior = (self.labels == FAT) | (self.labels == GLAND)
        return float(np.sum(self.labels == GLAND) / max(np.sum(interior), 1))


def _class_index(density_class: str) -> int:
    if density_class not in DENSITY_CLASSES:
        raise ValueError(f"density class must be one of {DENSITY_CLASSES}, got {density_class!r}")
    return DENSITY_CLASSES.index(density_class)


def _ellipse(n: int, ry: float, rx: float, theta: float, shift: tuple[float, float]) -> np.ndarray:
    yy, xx = np.mgrid[:n, :n].astype(float)
    yy -= n // 2 + shift[0]
    xx -= n // 2 + shift[1]
    ct, st = np.cos(theta), np.sin(theta)
    u = ct * xx + st * yy
    v = -st * xx + ct * yy
    return (u / rx) ** 2 + (v / ry) ** 2 <= 1.0


def generate_phantom(seed: int, density_class: str, grid: Grid, c0: float = C_WATER,
                     blob_scale: float | None = None) -> PhantomExample:
    """Deterministic phantom (no lesions) for ``(seed, density_class, grid)``."""
    cls = _class_index(density_class)
    rng = np.random.default_rng([seed, cls, grid.n_fov])
    n = grid.n_fov

    radius = n * (SUPPORT_RADIUS[density_class] + 0.02 * rng.standard_normal())
    radius = float(np.clip(radius, 0.18 * n, 0.36 * n))
    aspect = rng.uniform(0.85, 1.0)
    support = _ellipse(n, radius * aspect, radius, rng.uniform(0, np.pi),
                       tuple(rng.uniform(-0.02 * n, 0.02 * n, 2)))
    interior = ndimage.binary_erosion(support, iterations=SKIN_WIDTH)

    fat = float(np.clip(rng.normal(*FAT_SOS), 1.40, 1.48))
    gland = float(np.clip(rng.normal(*GLAND_SOS), 1.50, 1.58))

    scale = blob_scale if blob_scale is not None else max(n / 40.0, 1.0)
    field_ = ndimage.gaussian_filter(rng.standard_normal((n, n)), 1.5 * scale)
    texture = ndimage.gaussian_filter(rng.standard_normal((n, n)), scale)
    texture /= max(np.abs(texture).max(), 1e-12)
    target = rng.uniform(*GLAND_FRACTION[density_class])

    labels = np.full((n, n), WATER, dtype=np.uint8)
    labels[support] = SKIN
    labels[interior] = FAT
    n_int = int(interior.sum())
    n_gland = int(round(target * n_int))
    if n_gland > 0:
        vals = field_[interior]
        order = np.argsort(-vals, kind="stable")
        idx = np.flatnonzero(interior.ravel())[order[:n_gland]]
        labels.ravel()[idx] = GLAND

    sos = np.full((n, n), float(c0))
    sos[labels == FAT] = fat + 0.004 * texture[labels == FAT]
    sos[labels == GLAND] = gland + 0.01 * texture[labels == GLAND]
    sos[labels == SKIN] = SKIN_SOS
    sos[support] = np.clip(sos[support], *SOS_RANGE)
    return PhantomExample(sos, np.zeros((n, n), dtype=np.uint8), density_class, int(seed), labels)


def rasterize_disk(n: int, center: tuple[float, float], radius: float) -> np.ndarray:
    yy, xx = np.mgrid[:n, :n]
    return (yy - center[0]) ** 2 + (xx - center[1]) ** 2 <= radius**2


def insert_tumor(example: PhantomExample, seed: int, count_range: tuple[int, int] = (0, 2),
                 radius_range: tuple[float, float] = (2.0, 6.0), presence: float = 0.5) -> PhantomExample:
    """Add up to ``count_range[1]`` fast disk lesions fully inside the breast interior.

    With probability ``1 - presence`` the phantom stays lesion-free; otherwise
    the count is drawn uniformly from ``[max(lo, 1), hi]``.
    """
    lo, hi = count_range
    rng = np.random.default_rng([seed, 7919])
    if hi <= 0 or rng.random() >= presence:
        return example
    count = int(rng.integers(max(lo, 1), hi + 1))
    interior = (example.labels == FAT) | (example.labels == GLAND)
    depth = ndimage.distance_transform_edt(interior)
    sos = example.sos.copy()
    mask = example.tumor_mask.copy()
    n = sos.shape[0]
    for _ in range(count):
        radius = float(rng.uniform(*radius_range))
        cand = np.argwhere(depth > radius + 0.5)
        if len(cand) == 0:
            break
        center = cand[rng.integers(len(cand))]
        disk = rasterize_disk(n, tuple(center), radius)
        sos[disk] = float(np.clip(rng.normal(*TUMOR_SOS), 1.54, SOS_RANGE[1]))
        mask[disk] = 1
    return replace(example, sos=sos, tumor_mask=mask)


def make_example(seed: int, density_class: str, grid: Grid, c0: float = C_WATER,
                 radius_range: tuple[float, float] = (2.0, 6.0)) -> PhantomExample:
    return insert_tumor(generate_phantom(seed, density_class, grid, c0), seed, radius_range=radius_range)


@dataclass
class DatasetSplit:
    study_id: int
    train: list[PhantomExample]
    test: list[PhantomExample]

    @property
    def train_counts(self) -> dict[str, int]:
        return _count(self.train)

    @property
    def test_counts(self) -> dict[str, int]:
        return _count(self.test)


def _count(examples) -> dict[str, int]:
    out = {c: 0 for c in DENSITY_CLASSES}
    for e in examples:
        out[e.density_class] += 1
    return out


def phantom_seed(rng_seed: int, density_class: str, index: int) -> int:
    """Seed of the ``index``-th phantom of a class in the pool defined by ``rng_seed``."""
    ss = np.random.SeedSequence([rng_seed, _class_index(density_class), index])
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def scaled_counts(study_id: int, scale: float) -> tuple[dict[str, int], dict[str, int]]:
    """Per-class (train, test) counts of a study scaled from the full-size set counts."""
    if study_id in (1, 4):
        train, test = STUDY_COUNTS[1]
    elif study_id == 2:
        train, test = STUDY_COUNTS[2]
    elif study_id == 3:
        train1, test1 = scaled_counts(1, scale)
        train = {c: (v + 1) // 2 for c, v in train1.items()}
        test = {c: test1[c] + train1[c] - train[c] for c in DENSITY_CLASSES}
        return train, test
    else:
        raise ValueError(f"unknown study {study_id}")
    return ({c: int(round(v * scale)) for c, v in train.items()},
            {c: int(round(v * scale)) for c, v in test.items()})


def build_split(study_id: int, scale: float, rng_seed: int, grid: Grid,
                radius_range: tuple[float, float] = (2.0, 6.0),
                counts: tuple[dict[str, int], dict[str, int]] | None = None) -> DatasetSplit:
    """Train/test phantoms of a study drawn from one per-class pool.

    Studies 1, 3 and 4 share the same pool ordering: Study 1 uses the first
    train-count phantoms of each class for training and the next ones for
    testing; Study 3 keeps the first half of that training set and moves the
    rest to the test set.  Study 2 trains on classes A-C and tests on D.
    """
    train_c, test_c = counts if counts is not None else scaled_counts(study_id, scale)
    if any(v < 0 for v in list(train_c.values()) + list(test_c.values())):
        raise ValueError("class counts must be nonnegative")

    def pool(c, start, stop):
        return [make_example(phantom_seed(rng_seed, c, i), c, grid, radius_range=radius_range)
                for i in range(start, stop)]

    train, test = [], []
    if study_id == 3 and counts is None:
        train1, _ = scaled_counts(1, scale)
        for c in DENSITY_CLASSES:
            train += pool(c, 0, train_c[c])
        for c in DENSITY_CLASSES:
            test += pool(c, train1[c], train1[c] + test_c[c] - (train1[c] - train_c[c]))
            test += pool(c, train_c[c], train1[c])
    else:
        for c in DENSITY_CLASSES:
            train += pool(c, 0, train_c[c])
        for c in DENSITY_CLASSES:
            test += pool(c, train_c[c] if study_id != 2 else 0,
                         (train_c[c] if study_id != 2 else 0) + test_c[c])
    overlap = {e.seed for e in train} & {e.seed for e in test}
    if overlap:
        raise ValueError(f"train and test share phantom seeds {sorted(overlap)[:5]}")
    return DatasetSplit(study_id, train, test)
