"""Toy data generators, non-iid partitioners and mini-batch sampling."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

SWISS_T_RANGE = (1.5 * np.pi, 4.5 * np.pi)
# maps the outermost turn (radius 4.5*pi) onto radius 2
SWISS_SCALE = 4.5 * np.pi / 2.0

PROFILE_LEN = 24


@dataclass
class Dataset:
    samples: np.ndarray
    labels: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim == 1:
            self.samples = self.samples[:, None]
        if len(self.samples) < 1:
            raise ValueError("dataset must hold at least one sample")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.float64)
            if self.labels.ndim == 1:
                self.labels = self.labels[:, None]
            if len(self.labels) != len(self.samples):
                raise ValueError("labels are not row-aligned with samples")

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def dim(self) -> int:
        return self.samples.shape[1]

    @property
    def kind(self) -> str:
        return self.meta.get("kind", "custom")

    def label_groups(self) -> np.ndarray:
        """Integer group id per sample, used by the ``by_label`` partition."""
        if self.labels is None:
            raise ValueError("dataset has no labels")
        if self.kind == "profiles":
            return np.argmax(self.labels[:, :self.meta["archetypes"]], axis=1)
        if self.labels.shape[1] == 1:
            return np.rint(self.labels[:, 0]).astype(int)
        return np.argmax(self.labels, axis=1)

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=int)
        labels = None if self.labels is None else self.labels[idx]
        return Dataset(self.samples[idx], labels, dict(self.meta))

    def to_csv(self, path) -> None:
        header = [f"x{j}" for j in range(self.dim)]
        cols = [self.samples]
        if self.labels is not None:
            header += [f"label{j}" for j in range(self.labels.shape[1])]
            cols.append(self.labels)
        table = np.hstack(cols)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for row in table:
                w.writerow([repr(float(v)) for v in row])

    @classmethod
    def from_csv(cls, path, meta: dict | None = None) -> "Dataset":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], np.array(rows[1:], dtype=np.float64).reshape(len(rows) - 1, len(rows[0]))
        xcols = [i for i, h in enumerate(header) if h.startswith("x")]
        lcols = [i for i, h in enumerate(header) if h.startswith("label")]
        labels = body[:, lcols] if lcols else None
        return cls(body[:, xcols], labels, dict(meta or {"kind": "custom", "source": str(Path(path))}))


def gen_uniform_1d(n: int, lo: float = -1.0, hi: float = 1.0, seed: int = 0) -> Dataset:
    if n < 1 or not lo < hi:
        raise ValueError("need n >= 1 and lo < hi")
    rng = np.random.default_rng(seed)
    x = rng.uniform(lo, hi, size=(n, 1))
    return Dataset(x, None, {"kind": "uniform1d", "n": n, "lo": lo, "hi": hi, "seed": seed})


def mixture_centers(modes: int, radius: float) -> np.ndarray:
    ang = 2.0 * np.pi * np.arange(modes) / modes
    return radius * np.column_stack([np.cos(ang), np.sin(ang)])


def gen_mixed_gaussians(n: int, modes: int = 8, radius: float = 2.0, sigma: float = 0.02,
                        seed: int = 0) -> Dataset:
    if modes < 2:
        raise ValueError("modes must be >= 2")
    rng = np.random.default_rng(seed)
    k = rng.integers(0, modes, size=n)
    x = mixture_centers(modes, radius)[k] + sigma * rng.standard_normal((n, 2))
    meta = {"kind": "gaussians", "n": n, "modes": modes, "radius": radius, "sigma": sigma, "seed": seed}
    return Dataset(x, k[:, None].astype(float), meta)


def gen_swiss_roll(n: int, noise: float = 0.25, seed: int = 0) -> Dataset:
    """2-D Swiss roll; ``noise`` is a Gaussian std in raw (unscaled) roll units.

    The label column holds the roll parameter ``t``, which orders points by
    arc length and drives the ``by_arc`` partition.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    t = rng.uniform(*SWISS_T_RANGE, size=n)
    raw = np.column_stack([t * np.cos(t), t * np.sin(t)]) + noise * rng.standard_normal((n, 2))
    meta = {"kind": "swiss", "n": n, "noise": noise, "seed": seed, "scale": SWISS_SCALE}
    return Dataset(raw / SWISS_SCALE, t[:, None], meta)


# -- synthetic daily load profiles ------------------------------------------

# (centre hour, width in hours, height) bumps on top of a base load
_ARCHETYPES = [
    ("morning_peak", 0.12, [(7.5, 1.5, 0.55), (19.0, 2.0, 0.2)]),
    ("evening_peak", 0.12, [(19.5, 1.8, 0.6), (8.0, 1.2, 0.12)]),
    ("flat", 0.35, [(13.0, 6.0, 0.12)]),
    ("night_charging", 0.08, [(1.5, 1.8, 0.6), (23.5, 1.2, 0.3)]),
    ("midday_peak", 0.1, [(12.5, 2.5, 0.55)]),
    ("double_peak", 0.1, [(7.0, 1.2, 0.4), (20.0, 1.5, 0.45)]),
]
_WEEKEND_SHIFT = 1.5  # hours later on weekends
_AMP_SIGMA = 0.15
_NOISE = 0.03


def profile_base_curve(archetype: int, weekend: bool) -> np.ndarray:
    """Expected normalized profile of an archetype (before amplitude and noise)."""
    _, base, bumps = _ARCHETYPES[archetype]
    h = np.arange(PROFILE_LEN, dtype=float)
    curve = np.full(PROFILE_LEN, base)
    shift = _WEEKEND_SHIFT if weekend else 0.0
    for centre, width, height in bumps:
        # circular distance so bumps wrap over midnight
        d = (h - centre - shift + 12.0) % 24.0 - 12.0
        curve += height * np.exp(-0.5 * (d / width) ** 2)
    return curve


def gen_synthetic_profiles(n: int, archetypes: int = 5, seed: int = 0) -> Dataset:
    """Hourly day profiles: archetype curve x lognormal amplitude + noise, clipped to [0, 1].

    Labels are ``one_hot(archetype) ++ [weekend]``.  The amplitude has unit
    mean, so each archetype's mean profile is its base curve up to the
    (rare) clipping.
    """
    if not 2 <= archetypes <= len(_ARCHETYPES):
        raise ValueError(f"archetypes must be in [2, {len(_ARCHETYPES)}]")
    rng = np.random.default_rng(seed)
    arch = rng.integers(0, archetypes, size=n)
    weekend = rng.random(n) < 2.0 / 7.0
    curves = np.stack([[profile_base_curve(a, w) for w in (False, True)] for a in range(archetypes)])
    amp = rng.lognormal(-0.5 * _AMP_SIGMA ** 2, _AMP_SIGMA, size=(n, 1))
    x = amp * curves[arch, weekend.astype(int)] + _NOISE * rng.standard_normal((n, PROFILE_LEN))
    x = np.clip(x, 0.0, 1.0)
    labels = np.zeros((n, archetypes + 1))
    labels[np.arange(n), arch] = 1.0
    labels[:, -1] = weekend
    meta = {"kind": "profiles", "n": n, "archetypes": archetypes, "seed": seed}
    return Dataset(x, labels, meta)


# -- partitions -------------------------------------------------------------


@dataclass
class Partition:
    assignments: list[np.ndarray]
    weights: np.ndarray

    def __post_init__(self):
        sizes = np.array([len(a) for a in self.assignments])
        if np.any(sizes == 0):
            raise ValueError("partition produced an empty agent")

    @property
    def B(self) -> int:
        return len(self.assignments)

    @classmethod
    def from_assignments(cls, assignments) -> "Partition":
        assignments = [np.asarray(a, dtype=int) for a in assignments]
        sizes = np.array([len(a) for a in assignments], dtype=float)
        return cls(assignments, sizes / sizes.sum())


def partition_noniid(ds: Dataset, B: int, strategy: str, seed: int = 0) -> Partition:
    """Split ``ds`` into ``B`` disjoint, jointly covering, non-iid agent shards.

    * ``by_range``: equal-width segments of the first coordinate's range
    * ``by_label``: whole label groups, in sorted order, as contiguous blocks
    * ``by_arc``: equal-count segments along the Swiss-roll parameter
    """
    if B < 2:
        raise ValueError("need at least two agents")
    n = len(ds)
    if strategy == "by_range":
        if ds.dim != 1:
            raise ValueError("by_range needs a 1-D dataset")
        x = ds.samples[:, 0]
        lo = ds.meta.get("lo", float(x.min()))
        hi = ds.meta.get("hi", float(np.nextafter(x.max(), np.inf)))
        edges = lo + (hi - lo) * np.arange(1, B) / B
        seg = np.searchsorted(edges, x, side="right")
        assignments = [np.flatnonzero(seg == b) for b in range(B)]
    elif strategy == "by_label":
        groups = ds.label_groups()
        uniq = np.unique(groups)
        if len(uniq) < B:
            raise ValueError(f"{len(uniq)} label groups cannot cover {B} agents")
        blocks = np.array_split(uniq, B)
        assignments = [np.flatnonzero(np.isin(groups, blk)) for blk in blocks]
    elif strategy == "by_arc":
        if ds.kind != "swiss":
            raise ValueError("by_arc needs a Swiss-roll dataset")
        order = np.argsort(ds.labels[:, 0], kind="stable")
        assignments = [np.sort(a) for a in np.array_split(order, B)]
    else:
        raise ValueError(f"unknown strategy {strategy!r}")
    part = Partition.from_assignments(assignments)
    if sum(len(a) for a in part.assignments) != n:
        raise AssertionError("partition does not cover the dataset")
    return part


def split_holdout(part: Partition, fraction: float, seed: int = 0) -> tuple[Partition, np.ndarray]:
    """Set aside ``fraction`` of every agent's indices; returns (train partition, holdout indices)."""
    if fraction <= 0:
        return part, np.zeros(0, dtype=int)
    rng = np.random.default_rng(seed)
    train, held = [], []
    for idx in part.assignments:
        perm = rng.permutation(idx)
        k = int(round(fraction * len(idx)))
        held.append(np.sort(perm[:k]))
        train.append(np.sort(perm[k:]))
    return Partition.from_assignments(train), np.concatenate(held)


def sample_minibatch(ds: Dataset, indices, batch: int, rng: np.random.Generator):
    """Draw ``batch`` rows with replacement from ``indices``; returns (samples, labels)."""
    indices = np.asarray(indices)
    if len(indices) == 0:
        raise ValueError("agent has no data")
    if batch < 1:
        raise ValueError("batch must be >= 1")
    pick = indices[rng.integers(0, len(indices), size=batch)]
    labels = None if ds.labels is None else ds.labels[pick]
    return ds.samples[pick], labels
