"""Mean-field ODE ``z' = q(z)`` and tracking of the interpolated SGD path."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.interpolate import CubicHermiteSpline
from scipy.stats import theilslopes

from ..federation import TrajectoryLog, schedule_of
from .constants import PreconditionError


class OdeError(RuntimeError):
    """Step halving hit its floor before the tolerance was met."""


class InterpolatedPath:
    """Piecewise-linear path through ``(t_n, z_n)``; exact at the knots."""

    def __init__(self, t: np.ndarray, z: np.ndarray):
        t = np.asarray(t, dtype=np.float64)
        z = np.asarray(z, dtype=np.float64)
        if t.ndim != 1 or len(t) != len(z) or len(t) < 1:
            raise ValueError("need one knot time per value row")
        if np.any(np.diff(t) <= 0):
            raise ValueError("knot times must be strictly increasing")
        self.t, self.z = t, z

    @classmethod
    def from_trajectory(cls, traj: TrajectoryLog) -> "InterpolatedPath":
        """Knots ``t(n)`` accumulate the rate actually applied by each update.

        ``z_n`` is the p-weighted agent average at every step: the synced
        value at sync steps and the virtual average in between.
        """
        steps = traj.step_array
        if len(steps) < 2 or np.any(np.diff(steps) != 1):
            raise PreconditionError("path needs a trajectory recorded at every step (stride 1)")
        rates = np.asarray(traj.rate_a, dtype=np.float64)
        t = np.concatenate([[0.0], np.cumsum(rates[1:])])
        return cls(t, traj.mean_array())

    @property
    def t_range(self) -> tuple[float, float]:
        return float(self.t[0]), float(self.t[-1])

    def __call__(self, t: float) -> np.ndarray:
        if not self.t[0] <= t <= self.t[-1]:
            raise ValueError(f"t={t} outside [{self.t[0]}, {self.t[-1]}]")
        i = int(np.searchsorted(self.t, t, side="right")) - 1
        if i >= len(self.t) - 1:
            return self.z[-1].copy()
        frac = (t - self.t[i]) / (self.t[i + 1] - self.t[i])
        if frac == 0.0:
            return self.z[i].copy()
        return self.z[i] + frac * (self.z[i + 1] - self.z[i])


@dataclass
class OdeSolution:
    t: np.ndarray        # grid, increasing or decreasing
    z: np.ndarray        # (len(t), P)
    dz: np.ndarray       # q(z) at the grid
    h: float
    halvings: int
    error_estimate: float

    def __post_init__(self):
        order = np.argsort(self.t)
        self._spline = None if len(self.t) < 2 else CubicHermiteSpline(self.t[order], self.z[order],
                                                                       self.dz[order], axis=0)

    def __call__(self, t: float) -> np.ndarray:
        if t == self.t[0]:
            return self.z[0].copy()
        lo, hi = min(self.t[0], self.t[-1]), max(self.t[0], self.t[-1])
        if not lo <= t <= hi:
            raise ValueError(f"t={t} outside the solved interval")
        return self._spline(t)

    @property
    def final(self) -> np.ndarray:
        return self.z[-1]


def rk4(q: Callable[[np.ndarray], np.ndarray], z0: np.ndarray, t0: float, t1: float,
        n_steps: int) -> OdeSolution:
    """Classical fourth-order Runge-Kutta with ``n_steps`` equal steps (signed)."""
    h = (t1 - t0) / n_steps
    t = t0 + h * np.arange(n_steps + 1)
    t[-1] = t1
    z = np.empty((n_steps + 1, len(z0)))
    dz = np.empty_like(z)
    z[0] = z0
    for k in range(n_steps):
        k1 = q(z[k])
        dz[k] = k1
        k2 = q(z[k] + 0.5 * h * k1)
        k3 = q(z[k] + 0.5 * h * k2)
        k4 = q(z[k] + h * k3)
        z[k + 1] = z[k] + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    dz[-1] = q(z[-1])
    return OdeSolution(t, z, dz, abs(h), 0, float("nan"))


def integrate_ode(q: Callable[[np.ndarray], np.ndarray], z0, t0: float, t1: float, tol: float,
                  h0: float | None = None, max_halvings: int = 12) -> OdeSolution:
    """RK4 with the step halved until two successive grids agree to ``tol`` (sup norm).

    ``t1 < t0`` integrates backwards.  The finer of the last two solutions is
    returned.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    z0 = np.asarray(z0, dtype=np.float64)
    span = abs(t1 - t0)
    if span == 0:
        return OdeSolution(np.array([t0]), z0[None].copy(), np.asarray(q(z0))[None], 0.0, 0, 0.0)
    n = max(1, int(np.ceil(span / (h0 if h0 else span / 16))))
    coarse = rk4(q, z0, t0, t1, n)
    for k in range(1, max_halvings + 1):
        fine = rk4(q, z0, t0, t1, 2 * n)
        err = float(np.max(np.abs(fine.z[::2] - coarse.z)))
        if not np.isfinite(err):
            raise OdeError("non-finite ODE solution")
        if err < tol:
            fine.halvings, fine.error_estimate = k, err
            return fine
        coarse, n = fine, 2 * n
    raise OdeError(f"step underflow: no agreement to tol={tol} after {max_halvings} halvings (stiff?)")


def euler(q, z0, t0: float, t1: float, h: float) -> np.ndarray:
    """Explicit Euler end point; the fine-step reference for the RK4 checks."""
    n = max(1, int(round(abs(t1 - t0) / h)))
    step = (t1 - t0) / n
    z = np.asarray(z0, dtype=np.float64).copy()
    for _ in range(n):
        z = z + step * q(z)
    return z


@dataclass
class TrackingReport:
    s: np.ndarray
    T: float
    deviations: np.ndarray
    n_knots: np.ndarray
    slope: float
    slope_lo: float
    slope_hi: float

    @property
    def final_over_first(self) -> float:
        return float(self.deviations[-1] / self.deviations[0]) if self.deviations[0] > 0 else float("nan")

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["s", "T", "deviation", "n_knots"])
            for s, d, k in zip(self.s, self.deviations, self.n_knots):
                w.writerow([repr(float(s)), repr(float(self.T)), repr(float(d)), int(k)])
            w.writerow([])
            w.writerow(["theil_sen_slope", "slope_lo", "slope_hi", "final_over_first"])
            w.writerow([repr(self.slope), repr(self.slope_lo), repr(self.slope_hi), repr(self.final_over_first)])


def deviation_at(path: InterpolatedPath, q, s: float, T: float, tol: float) -> tuple[float, int]:
    """``sup |zbar(t) - z^s(t)|`` over the knots in ``[s, s + T]`` (plus ``s`` itself)."""
    t0, t1 = path.t_range
    if s < t0 or s + T > t1 or T < 0:
        raise PreconditionError(f"[s, s+T] = [{s}, {s + T}] not inside the trajectory's [{t0}, {t1}]")
    zs = path(s)
    if T == 0:
        return 0.0, 1
    sol = integrate_ode(q, zs, s, s + T, tol)
    lo = int(np.searchsorted(path.t, s, side="left"))
    hi = int(np.searchsorted(path.t, s + T, side="right"))
    dev = 0.0
    for k in range(lo, hi):
        dev = max(dev, float(np.linalg.norm(path.z[k] - sol(path.t[k]))))
    return dev, hi - lo


def theorem1_deviation(traj: TrajectoryLog, q, s_list, T: float, tol: float = 1e-6) -> TrackingReport:
    """Deviation of the interpolated path from the ODE started on it, per start time ``s``."""
    sched = schedule_of(traj)
    if sched.mode != "equal":
        raise PreconditionError("the tracking check applies to equal time-scale runs")
    path = InterpolatedPath.from_trajectory(traj)
    s_arr = np.asarray(s_list, dtype=np.float64)
    out = [deviation_at(path, q, float(s), T, tol) for s in s_arr]
    dev = np.array([d for d, _ in out])
    knots = np.array([k for _, k in out])
    if len(s_arr) >= 2:
        slope, _, lo, hi = theilslopes(dev, s_arr)
    else:
        slope = lo = hi = float("nan")
    return TrackingReport(s_arr, T, dev, knots, float(slope), float(lo), float(hi))


def quantile_starts(traj: TrajectoryLog, fractions=(0.2, 0.4, 0.6, 0.8)) -> list[float]:
    """Start times at fractions of the trajectory's learning-rate-time span."""
    t_end = float(np.cumsum(np.asarray(traj.rate_a)[1:])[-1])
    return [f * t_end for f in fractions]
