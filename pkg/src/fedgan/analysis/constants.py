"""Exact-gradient fields and empirical estimates of the regularity constants.

The constants are running maxima over a finite probe set, so they are
scoped to the probe region that produced them (recorded on the result).
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, replace

import numpy as np

from ..autodiff import ParamVector
from ..datasets import Dataset, Partition, sample_minibatch
from ..federation import weighted_sum
from ..models import GanModel, LossSpec, TrueGradOracle, stochastic_grads


class PreconditionError(ValueError):
    """An analysis was asked of data or a run that cannot support it."""


def _labels(ds: Dataset, model: GanModel, idx):
    return ds.labels[idx] if model.conditional else None


class GradientField:
    """``q(z) = (g(z), h(z))`` on flat ``[params_d, params_g]`` vectors via the exact oracle."""

    def __init__(self, model: GanModel, loss, ds: Dataset, indices=None, n_latent: int = 2 ** 14,
                 seed: int = 0):
        idx = np.arange(len(ds)) if indices is None else np.asarray(indices)
        self.model = model
        self.n_d = model.discriminator.n_params
        self.oracle = TrueGradOracle(model, loss, ds.samples[idx], n_latent, seed, _labels(ds, model, idx))
        self.evals = 0

    def split(self, z: np.ndarray) -> tuple[ParamVector, ParamVector]:
        return (ParamVector(z[:self.n_d], self.model.discriminator.layout),
                ParamVector(z[self.n_d:], self.model.generator.layout))

    def __call__(self, z: np.ndarray) -> np.ndarray:
        self.evals += 1
        gp = self.oracle(*self.split(np.asarray(z, dtype=np.float64)))
        return np.concatenate([gp.d_grad.data, gp.g_grad.data])


class AgentFields:
    """Per-agent exact gradients ``(g^i, h^i)``, all sharing one latent sample."""

    def __init__(self, model: GanModel, loss, ds: Dataset, partition: Partition,
                 n_latent: int = 2 ** 14, seed: int = 0):
        self.fields = [GradientField(model, loss, ds, idx, n_latent, seed) for idx in partition.assignments]
        self.p = np.asarray(partition.weights)
        self.n_d = self.fields[0].n_d

    def local(self, z: np.ndarray) -> np.ndarray:
        """(B, P) array of agent gradients at ``z``."""
        return np.stack([f(z) for f in self.fields])

    def combined(self, local: np.ndarray) -> np.ndarray:
        return weighted_sum(list(local), self.p)


@dataclass(frozen=True)
class EstimatedConstants:
    L: float
    sigma_g: float
    sigma_h: float
    mu_g: float
    mu_h: float = 0.0
    n_probes: int = 0
    n_pairs: int = 0
    noise_batches: int = 0
    batch: int = 0
    probe_lo: tuple = ()
    probe_hi: tuple = ()

    def __post_init__(self):
        if min(self.L, self.sigma_g, self.sigma_h, self.mu_g, self.mu_h) < 0:
            raise ValueError("constants must be non-negative")

    def inflated(self, factor: float) -> "EstimatedConstants":
        return replace(self, L=self.L * factor, sigma_g=self.sigma_g * factor,
                       sigma_h=self.sigma_h * factor, mu_g=self.mu_g * factor, mu_h=self.mu_h * factor)

    def summary(self) -> dict:
        d = asdict(self)
        d["probe_lo"] = [float(v) for v in self.probe_lo]
        d["probe_hi"] = [float(v) for v in self.probe_hi]
        return d


@dataclass(frozen=True)
class ProbeBox:
    """Axis-aligned box in flat parameter space."""
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        if np.shape(self.lo) != np.shape(self.hi) or np.any(np.asarray(self.hi) < np.asarray(self.lo)):
            raise ValueError("probe box needs lo <= hi of equal shape")
        if not np.any(np.asarray(self.hi) > np.asarray(self.lo)):
            raise PreconditionError("degenerate probe region (zero diameter)")

    @property
    def diameter(self) -> float:
        return float(np.linalg.norm(np.asarray(self.hi) - np.asarray(self.lo)))

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.uniform(self.lo, self.hi, size=(n, len(self.lo)))

    @classmethod
    def around(cls, points: np.ndarray, margin: float) -> "ProbeBox":
        """Bounding box of ``points`` widened by ``margin`` on every side."""
        points = np.atleast_2d(points)
        return cls(points.min(axis=0) - margin, points.max(axis=0) + margin)


def estimate_constants(model: GanModel, loss, ds: Dataset, partition: Partition, probe_region: ProbeBox,
                       n_probes: int = 100, batch: int = 64, seed: int = 0, noise_batches: int = 64,
                       n_latent: int = 2 ** 12, extra_points=None) -> EstimatedConstants:
    """Lipschitz, noise and heterogeneity constants as maxima over probe points.

    * ``L``: max ratio ``|q^i(z) - q^i(z')| / |z - z'|`` over agents and over
      probe pairs (each probe against a close neighbour and a random probe).
    * ``sigma_g``/``sigma_h``: max over probes and agents of the Monte Carlo
      mean of ``|g~ - g^i|`` (resp. ``h``) across ``noise_batches`` mini-batches.
    * ``mu_g``: max over probes and agents of ``|g^i - sum_j p_j g^j|``.

    ``extra_points`` (e.g. logged trajectory states) are probed in addition.
    """
    if n_probes < 100:
        raise PreconditionError("n_probes must be >= 100")
    loss = LossSpec.parse(loss)
    rng = np.random.default_rng(seed)
    fields = AgentFields(model, loss, ds, partition, n_latent, seed)
    n_d = fields.n_d
    probes = probe_region.sample(rng, n_probes)
    if extra_points is not None and len(extra_points):
        probes = np.vstack([probes, np.atleast_2d(extra_points)])
    L = sg = sh = mg = mh = 0.0
    pairs = 0
    close = 1e-3 * probe_region.diameter
    grads = [fields.local(z) for z in probes]
    for k, z in enumerate(probes):
        local = grads[k]
        mean = fields.combined(local)
        mg = max(mg, float(np.max(np.linalg.norm(local[:, :n_d] - mean[:n_d], axis=1))))
        mh = max(mh, float(np.max(np.linalg.norm(local[:, n_d:] - mean[n_d:], axis=1))))
        # Lipschitz pairs: a close neighbour and another probe
        u = rng.standard_normal(len(z))
        neighbours = [(z + close * u / np.linalg.norm(u), None), (probes[(k + 1) % len(probes)], (k + 1) % len(probes))]
        for z2, k2 in neighbours:
            dz = np.linalg.norm(z2 - z)
            if dz == 0:
                continue
            other = grads[k2] if k2 is not None else fields.local(z2)
            L = max(L, float(np.max(np.linalg.norm(other - local, axis=1)) / dz))
            pairs += 1
        # mini-batch noise
        pd, pg = fields.fields[0].split(z)
        for i, idx in enumerate(partition.assignments):
            eg = eh = 0.0
            for _ in range(noise_batches):
                real, labels = sample_minibatch(ds, idx, batch, rng)
                gp = stochastic_grads(model, loss, pd, pg, real, rng, labels if model.conditional else None)
                eg += np.linalg.norm(gp.d_grad.data - local[i, :n_d])
                eh += np.linalg.norm(gp.g_grad.data - local[i, n_d:])
            sg = max(sg, float(eg) / noise_batches)
            sh = max(sh, float(eh) / noise_batches)
    return EstimatedConstants(float(L), float(sg), float(sh), float(mg), float(mh), len(probes), pairs, noise_batches, batch,
                              tuple(np.asarray(probe_region.lo, float)), tuple(np.asarray(probe_region.hi, float)))
