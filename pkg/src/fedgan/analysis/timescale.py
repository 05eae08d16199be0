"""Schedule validity and the fast-variable attractor check for two time-scale runs."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.stats import theilslopes

from ..federation import Schedule, TrajectoryLog, schedule_of
from .constants import GradientField, PreconditionError


def validate_schedule(schedule) -> bool:
    """Square-summable but not summable rates (``p in (0.5, 1]``), and ``p_b > p_a`` when two time-scale."""
    if not isinstance(schedule, Schedule):
        raise TypeError("only the a0 / (1 + n/tau)**p family is supported")
    ok = 0.5 < schedule.p_a <= 1.0 and 0.5 < schedule.p_b <= 1.0
    if schedule.mode == "equal":
        ok = ok and schedule.p_a == schedule.p_b and schedule.a0 == schedule.b0
    else:
        ok = ok and schedule.p_b > schedule.p_a
    return bool(ok)


@dataclass
class LambdaResult:
    w: np.ndarray
    grad_norm: float
    iterations: int
    converged: bool


def find_lambda(q: GradientField, theta: np.ndarray, w_init: np.ndarray, tol: float,
                rate: float = 1.0, max_iter: int = 20000) -> LambdaResult:
    """Exact-gradient ascent on the discriminator with the generator frozen at ``theta``."""
    if not tol > 0:
        raise ValueError("tol must be positive")
    w = np.asarray(w_init, dtype=np.float64).copy()
    theta = np.asarray(theta, dtype=np.float64)
    n_d = q.n_d
    for it in range(max_iter + 1):
        g = q(np.concatenate([w, theta]))[:n_d]
        norm = float(np.linalg.norm(g))
        if norm < tol:
            return LambdaResult(w, norm, it, True)
        if not np.isfinite(norm):
            break
        w = w + rate * g
    return LambdaResult(w, norm, max_iter, False)


@dataclass
class TimescaleReport:
    steps: np.ndarray
    gaps: np.ndarray
    converged: np.ndarray
    late_from: int
    slope: float
    final: np.ndarray

    @property
    def late_gap(self) -> float:
        """Largest gap among converged late-phase samples."""
        mask = (self.steps >= self.late_from) & self.converged
        return float(self.gaps[mask].max()) if mask.any() else float("nan")

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["n", "gap", "lambda_converged"])
            for n, g, c in zip(self.steps, self.gaps, self.converged):
                w.writerow([int(n), repr(float(g)), bool(c)])
            w.writerow([])
            w.writerow(["late_from", "late_gap", "theil_sen_slope"])
            w.writerow([self.late_from, repr(self.late_gap), repr(self.slope)])


def check_two_timescale(traj: TrajectoryLog, q: GradientField, sample_steps, tol: float = 1e-6,
                        late_fraction: float = 0.5, rate: float = 1.0, max_iter: int = 20000) -> TimescaleReport:
    """Gap ``|w_n - lambda(theta_n)|`` at the sampled steps, warm-started at ``w_n``.

    Samples where the inner ascent does not converge are kept but flagged
    and excluded from the late-phase statistics.
    """
    if schedule_of(traj).mode != "two_timescale":
        raise PreconditionError("check needs a two time-scale run")
    steps = traj.step_array
    means = traj.mean_array()
    n_d = traj.n_d
    rows = []
    for n in sample_steps:
        hit = np.flatnonzero(steps == n)
        if len(hit) == 0:
            raise PreconditionError(f"step {n} not recorded")
        z = means[hit[0]]
        lam = find_lambda(q, z[n_d:], z[:n_d], tol, rate, max_iter)
        rows.append((n, float(np.linalg.norm(z[:n_d] - lam.w)), lam.converged))
    s = np.array([r[0] for r in rows])
    gaps = np.array([r[1] for r in rows])
    conv = np.array([r[2] for r in rows])
    late_from = int(steps[-1] * (1.0 - late_fraction))
    late = (s >= late_from) & conv
    slope = float(theilslopes(gaps[late], s[late])[0]) if late.sum() >= 2 else float("nan")
    return TimescaleReport(s, gaps, conv, late_from, slope, means[-1])
