"""Window-divergence bounds and their Monte Carlo checks.

Inside a synchronization window starting at ``n1`` the reference sequence
``(v, phi)`` starts from the synced state and follows the exact gradients
at the frozen window rates.  The bounds cap how far each agent (``r1``) and
the agents' average (``r2``) can drift from it in expectation.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from ..autodiff import ParamVector, axpy
from ..datasets import Dataset, Partition
from ..federation import AgentState, TrajectoryLog, local_step, schedule_of, sync
from ..models import GanModel, LossSpec
from .constants import AgentFields, EstimatedConstants, GradientField, PreconditionError

DEFAULT_SLACK = 0.05


def lemma1_bound(consts: EstimatedConstants, a_window: float, n: int, K: int) -> float:
    """``(sigma_g + mu_g + sigma_h) / (2L) * ((1 + 2aL)**(n mod K) - 1)``."""
    if not consts.L > 0:
        raise ValueError("L must be positive")
    c = consts.sigma_g + consts.mu_g + consts.sigma_h
    return c / (2 * consts.L) * ((1 + 2 * a_window * consts.L) ** (n % K) - 1)


def lemma2_bound(consts: EstimatedConstants, a_window: float, K: int) -> float:
    """``(sigma_g + sigma_h + mu_g) / (2L) * ((1 + 2aL)**K - 1) - a * mu_g * K``."""
    if not consts.L > 0:
        raise ValueError("L must be positive")
    c = consts.sigma_g + consts.sigma_h + consts.mu_g
    return c / (2 * consts.L) * ((1 + 2 * a_window * consts.L) ** K - 1) - a_window * consts.mu_g * K


@dataclass
class WindowTrajectory:
    n1: int
    v: np.ndarray     # (K+1, n_d)
    phi: np.ndarray   # (K+1, n_g)


def window_trajectory(fld: GradientField, start: np.ndarray, n1: int, a: float, b: float,
                      K: int) -> WindowTrajectory:
    """Exact-gradient recursion from the synced state, kept as anchor + displacement
    exactly like the agents so a noise-free replay matches it bit for bit."""
    pd, pg = fld.split(np.asarray(start, dtype=np.float64))
    dd, dg = ParamVector.zeros(pd.layout), ParamVector.zeros(pg.layout)
    v, phi = [pd.data.copy()], [pg.data.copy()]
    for _ in range(K):
        q = fld(np.concatenate([pd.data + dd.data, pg.data + dg.data]))
        dd = axpy(a, ParamVector(q[:fld.n_d], pd.layout), dd)
        dg = axpy(b, ParamVector(q[fld.n_d:], pg.layout), dg)
        v.append(pd.data + dd.data)
        phi.append(pg.data + dg.data)
    return WindowTrajectory(n1, np.array(v), np.array(phi))


def replay_window(model: GanModel, loss, ds: Dataset, partition: Partition, start: np.ndarray,
                  a: float, b: float, K: int, batch: int, mc_runs: int, seed: int,
                  exact: AgentFields | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Re-run one window ``mc_runs`` times from ``start`` with fresh noise.

    Returns agent states ``(mc, K+1, B, P)`` before averaging and the synced
    state ``(mc, P)`` at the window end.  With ``exact`` the agents step
    along their own exact gradients instead (noise-free mode).
    """
    n_d = model.discriminator.n_params
    pd = ParamVector(start[:n_d].copy(), model.discriminator.layout)
    pg = ParamVector(start[n_d:].copy(), model.generator.layout)
    loss = LossSpec.parse(loss)
    streams = np.random.SeedSequence(seed).spawn(mc_runs)
    P = len(start)
    states = np.empty((mc_runs, K + 1, partition.B, P))
    synced = np.empty((mc_runs, P))
    for r in range(mc_runs):
        rngs = [np.random.default_rng(s) for s in streams[r].spawn(partition.B)]
        agents = [AgentState.fresh(i, pd, pg, idx, float(p), rngs[i])
                  for i, (idx, p) in enumerate(zip(partition.assignments, partition.weights))]
        states[r, 0] = [ag.flat() for ag in agents]
        for k in range(1, K + 1):
            if exact is None:
                agents = [local_step(ag, model, loss, a, b, batch, ds) for ag in agents]
            else:
                for i, ag in enumerate(agents):
                    q = exact.fields[i](ag.flat())
                    ag.delta_d = axpy(a, ParamVector(q[:n_d], pd.layout), ag.delta_d)
                    ag.delta_g = axpy(b, ParamVector(q[n_d:], pg.layout), ag.delta_g)
            states[r, k] = [ag.flat() for ag in agents]
        w_bar, th_bar = sync(agents)
        synced[r] = np.concatenate([w_bar.data, th_bar.data])
    return states, synced


@dataclass
class LemmaReport:
    kind: str                     # "lemma1" or "lemma2"
    window: tuple[int, int]
    steps: np.ndarray
    lhs: np.ndarray
    bound: np.ndarray
    slack: float
    status: str                   # satisfied | constants_underestimated | violated
    consts: EstimatedConstants
    mc_runs: int = 0
    inflated_bound: np.ndarray | None = field(default=None, repr=False)

    @property
    def satisfied(self) -> bool:
        return self.status == "satisfied"

    def rows(self) -> list[list]:
        return [[self.kind, self.window[0], int(n), repr(float(l)), repr(float(r)),
                 bool(l <= r * (1 + self.slack))] for n, l, r in zip(self.steps, self.lhs, self.bound)]


def _status(lhs, bound, inflated, slack) -> str:
    if np.all(lhs <= bound * (1 + slack)):
        return "satisfied"
    if np.all(lhs <= inflated * (1 + slack)):
        return "constants_underestimated"
    return "violated"


def _window_start_state(traj: TrajectoryLog, n1: int) -> np.ndarray:
    steps = traj.step_array
    hit = np.flatnonzero(steps == n1)
    if len(hit) == 0:
        raise PreconditionError(f"step {n1} was not recorded; rerun with a smaller record stride")
    row = int(hit[0])
    if not traj.synced[row]:
        raise PreconditionError(f"step {n1} is not a synchronization point")
    return traj.mean_params[row]


def check_lemmas(traj: TrajectoryLog, model: GanModel, loss, consts: EstimatedConstants,
                 window: tuple[int, int], mc_runs: int, ds: Dataset, partition: Partition,
                 batch: int | None = None, seed: int = 0, slack: float = DEFAULT_SLACK,
                 fld: GradientField | None = None, exact: AgentFields | None = None,
                 n_latent: int = 2 ** 12) -> tuple[LemmaReport, LemmaReport]:
    """Both window checks from one set of replays; returns (lemma1, lemma2) reports."""
    if consts is None:
        raise PreconditionError("constants not estimated")
    if not traj.param_level:
        raise PreconditionError("lemma checks need parameter-level trajectory rows")
    if mc_runs < 32:
        raise PreconditionError("mc_runs must be >= 32")
    sched = schedule_of(traj)
    K = sched.K
    n1, n2 = window
    if n1 % K or n2 - n1 != K:
        raise PreconditionError(f"window {window} is not aligned to the sync interval K={K}")
    if partition.B != traj.B:
        raise PreconditionError("partition does not match the trajectory's agents")
    batch = batch or traj.meta.get("batch", 64)
    start = _window_start_state(traj, n1)
    a, b = sched.a(n1), sched.b(n1)
    if fld is None:
        fld = GradientField(model, loss, ds, np.concatenate(partition.assignments), n_latent, seed)
    wt = window_trajectory(fld, start, n1, a, b, K)
    states, synced = replay_window(model, loss, ds, partition, start, a, b, K, batch, mc_runs,
                                   seed + 1 + n1, exact)
    n_d = fld.n_d
    ref = np.concatenate([wt.v, wt.phi], axis=1)                      # (K+1, P)
    dev = states - ref[None, :, None, :]
    lhs_agent = (np.linalg.norm(dev[..., :n_d], axis=-1) + np.linalg.norm(dev[..., n_d:], axis=-1)).mean(axis=0)
    # lemma 1 covers n1 <= n < n1 + K; at n1 + K the agents are averaged and a new window starts
    lhs1 = lhs_agent.max(axis=1)[:K]
    steps = np.arange(n1, n2)
    infl = consts.inflated(2.0)
    bound1 = np.array([lemma1_bound(consts, a, int(n), K) for n in steps])
    inflated1 = np.array([lemma1_bound(infl, a, int(n), K) for n in steps])
    r1 = LemmaReport("lemma1", window, steps, lhs1, bound1, slack,
                     _status(lhs1, bound1, inflated1, slack), consts, mc_runs, inflated1)
    dend = synced - ref[-1]
    lhs2 = np.array([(np.linalg.norm(dend[:, :n_d], axis=1) + np.linalg.norm(dend[:, n_d:], axis=1)).mean()])
    bound2 = np.array([lemma2_bound(consts, a, K)])
    inflated2 = np.array([lemma2_bound(infl, a, K)])
    r2 = LemmaReport("lemma2", window, np.array([n2]), lhs2, bound2, slack,
                     _status(lhs2, bound2, inflated2, slack), consts, mc_runs, inflated2)
    return r1, r2


def check_lemma1(*args, **kwargs) -> LemmaReport:
    return check_lemmas(*args, **kwargs)[0]


def check_lemma2(*args, **kwargs) -> LemmaReport:
    return check_lemmas(*args, **kwargs)[1]


def check_windows(traj: TrajectoryLog, model: GanModel, loss, consts: EstimatedConstants, ds: Dataset,
                  partition: Partition, n_windows: int = 20, first: int = 0, mc_runs: int = 32,
                  seed: int = 0, slack: float = DEFAULT_SLACK, n_latent: int = 2 ** 12,
                  exact: AgentFields | None = None) -> list[tuple[LemmaReport, LemmaReport]]:
    """Consecutive windows starting at window index ``first``."""
    K = schedule_of(traj).K
    fld = GradientField(model, loss, ds, np.concatenate(partition.assignments), n_latent, seed)
    out = []
    for w in range(first, first + n_windows):
        out.append(check_lemmas(traj, model, loss, consts, (w * K, (w + 1) * K), mc_runs, ds, partition,
                                seed=seed, slack=slack, fld=fld, exact=exact))
    return out


def overall_status(reports) -> str:
    flat = [r for pair in reports for r in (pair if isinstance(pair, tuple) else (pair,))]
    if any(r.status == "violated" for r in flat):
        return "violated"
    if any(r.status == "constants_underestimated" for r in flat):
        return "constants_underestimated"
    return "satisfied"


def write_lemma_csv(path, reports) -> None:
    flat = [r for pair in reports for r in (pair if isinstance(pair, tuple) else (pair,))]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["check", "window_start", "n", "lhs", "bound", "ok"])
        for r in flat:
            w.writerows(r.rows())
        c = flat[0].consts if flat else None
        if c is not None:
            w.writerow([])
            w.writerow(["status", "slack", "L", "sigma_g", "sigma_h", "mu_g", "mu_h", "mc_runs"])
            w.writerow([overall_status(reports), flat[0].slack, repr(c.L), repr(c.sigma_g), repr(c.sigma_h),
                        repr(c.mu_g), repr(c.mu_h), flat[0].mc_runs])
