"""FedGAN engine: local ascent steps, intermediary averaging, schedules, logs.

Each agent keeps its parameters as ``anchor + delta`` where ``anchor`` is the
last broadcast value and ``delta`` the displacement accumulated by local
steps since then.  Averaging the displacements rather than the full vectors
loses less precision, and with one step per window it makes the federated
recursion coincide bit for bit with ``w + sum_i p_i (a * g_i)``.
"""
from __future__ import annotations

import csv
import hashlib
import logging
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .autodiff import NonFiniteError, ParamVector, axpy
from .datasets import Dataset, Partition, sample_minibatch
from .models import GanModel, LossSpec, stochastic_grads

log = logging.getLogger(__name__)

BYTES_PER_SCALAR = 8
PARAM_LEVEL_LIMIT = 10_000


class ConfigError(ValueError):
    """Inconsistent run configuration."""


# --------------------------------------------------------------------------
# Schedules


@dataclass(frozen=True)
class Schedule:
    """Rates ``a(n) = a0 / (1 + n/tau)**p_a`` (discriminator) and ``b(n)`` (generator).

    Rates are frozen inside each synchronization window: the update that
    produces step ``n`` uses the rate of the window start ``K*floor((n-1)/K)``.
    """

    mode: str = "equal"
    a0: float = 0.1
    b0: float = 0.1
    tau: float = 100.0
    p_a: float = 0.6
    p_b: float = 0.6
    K: int = 1

    def __post_init__(self):
        if self.mode not in ("equal", "two_timescale"):
            raise ConfigError(f"unknown schedule mode {self.mode!r}")
        if self.K < 1:
            raise ConfigError("K must be >= 1")
        if self.a0 <= 0 or self.b0 <= 0 or self.tau <= 0:
            raise ConfigError("a0, b0 and tau must be positive")
        if self.p_a < 0 or self.p_b < 0:
            raise ConfigError("decay exponents must be non-negative")
        if self.mode == "equal" and (self.a0 != self.b0 or self.p_a != self.p_b):
            raise ConfigError("equal mode requires a0 == b0 and p_a == p_b")

    @classmethod
    def equal(cls, a0: float, tau: float, p: float, K: int) -> "Schedule":
        return cls("equal", a0, a0, tau, p, p, K)

    @classmethod
    def two_timescale(cls, a0: float, b0: float, tau: float, p_a: float, p_b: float, K: int) -> "Schedule":
        return cls("two_timescale", a0, b0, tau, p_a, p_b, K)

    def a(self, n) -> float:
        return self.a0 / (1.0 + n / self.tau) ** self.p_a

    def b(self, n) -> float:
        return self.b0 / (1.0 + n / self.tau) ** self.p_b

    def window_start(self, n: int) -> int:
        """Start of the window containing update ``n`` (n >= 1)."""
        return self.K * ((n - 1) // self.K)

    def rates_for_step(self, n: int) -> tuple[float, float]:
        w = self.window_start(n)
        return self.a(w), self.b(w)

    def with_K(self, K: int) -> "Schedule":
        return replace(self, K=K)


# --------------------------------------------------------------------------
# Agents


@dataclass
class AgentState:
    id: int
    anchor_d: ParamVector
    anchor_g: ParamVector
    delta_d: ParamVector
    delta_g: ParamVector
    data_indices: np.ndarray
    p: float
    rng: np.random.Generator
    objectives: tuple[float, float] = (float("nan"), float("nan"))

    @classmethod
    def fresh(cls, id: int, params_d: ParamVector, params_g: ParamVector, indices, p: float,
              rng: np.random.Generator) -> "AgentState":
        return cls(id, params_d, params_g, ParamVector.zeros(params_d.layout),
                   ParamVector.zeros(params_g.layout), np.asarray(indices), p, rng)

    @property
    def params_d(self) -> ParamVector:
        return ParamVector(self.anchor_d.data + self.delta_d.data, self.anchor_d.layout)

    @property
    def params_g(self) -> ParamVector:
        return ParamVector(self.anchor_g.data + self.delta_g.data, self.anchor_g.layout)

    def flat(self) -> np.ndarray:
        return np.concatenate([self.params_d.data, self.params_g.data])


def local_step(agent: AgentState, model: GanModel, loss: LossSpec, a_n: float, b_n: float,
               batch: int, ds: Dataset, step: int | None = None) -> AgentState:
    """One simultaneous ascent step on a fresh mini-batch; ``agent`` is not modified.

    The returned state carries its own copy of the RNG, advanced past the
    draws made here.
    """
    if a_n < 0 or b_n < 0:
        raise ConfigError("learning rates must be non-negative")
    rng = _copy_rng(agent.rng)
    real, labels = sample_minibatch(ds, agent.data_indices, batch, rng)
    try:
        gp = stochastic_grads(model, loss, agent.params_d, agent.params_g, real, rng,
                              labels if model.conditional else None)
    except NonFiniteError as exc:
        where = f" at step {step}" if step is not None else ""
        raise NonFiniteError(f"agent {agent.id}{where}: {exc}") from exc
    return replace(agent,
                   delta_d=axpy(a_n, gp.d_grad, agent.delta_d),
                   delta_g=axpy(b_n, gp.g_grad, agent.delta_g),
                   rng=rng, objectives=(gp.objective_d, gp.objective_g))


def _copy_rng(rng: np.random.Generator) -> np.random.Generator:
    clone = np.random.Generator(type(rng.bit_generator)())
    clone.bit_generator.state = rng.bit_generator.state
    return clone


def weighted_sum(vectors: list[np.ndarray], weights) -> np.ndarray:
    """Fixed-order compensated (Neumaier) sum of ``w_i * v_i``."""
    total = np.zeros_like(vectors[0], dtype=np.float64)
    comp = np.zeros_like(total)
    for v, w in zip(vectors, weights):
        term = w * v
        t = total + term
        big = np.abs(total) >= np.abs(term)
        comp += np.where(big, (total - t) + term, (term - t) + total)
        total = t
    return total + comp


def _check_weights(agents: list[AgentState]) -> np.ndarray:
    if not agents:
        raise ConfigError("sync needs at least one agent")
    p = np.array([a.p for a in agents])
    if abs(p.sum() - 1.0) > 1e-12:
        raise ConfigError(f"agent weights sum to {p.sum()!r}, not 1")
    for a in agents[1:]:
        agents[0].anchor_d.check_layout(a.anchor_d)
        agents[0].anchor_g.check_layout(a.anchor_g)
    return p


def sync(agents: list[AgentState]) -> tuple[ParamVector, ParamVector]:
    """Average with weights ``p_i`` and broadcast: every agent is reset in place."""
    p = _check_weights(agents)
    first = agents[0]
    common = all(a.anchor_d is first.anchor_d or np.array_equal(a.anchor_d.data, first.anchor_d.data)
                 for a in agents) and all(
        a.anchor_g is first.anchor_g or np.array_equal(a.anchor_g.data, first.anchor_g.data) for a in agents)
    if common:
        w = first.anchor_d.data + weighted_sum([a.delta_d.data for a in agents], p)
        th = first.anchor_g.data + weighted_sum([a.delta_g.data for a in agents], p)
    else:
        w = weighted_sum([a.params_d.data for a in agents], p)
        th = weighted_sum([a.params_g.data for a in agents], p)
    w_bar = ParamVector(w, first.anchor_d.layout)
    theta_bar = ParamVector(th, first.anchor_g.layout)
    for a in agents:
        a.anchor_d, a.anchor_g = w_bar, theta_bar
        a.delta_d = ParamVector.zeros(w_bar.layout)
        a.delta_g = ParamVector.zeros(theta_bar.layout)
    return w_bar, theta_bar


def average(agents: list[AgentState]) -> np.ndarray:
    """Weighted average of the agents' concatenated (d, g) vectors, no broadcast."""
    p = np.array([a.p for a in agents])
    return weighted_sum([a.flat() for a in agents], p)


# --------------------------------------------------------------------------
# Communication accounting


@dataclass(frozen=True)
class CommReport:
    M: float
    B: int
    K: int
    rounds: int
    per_agent_per_round: float
    total_scalars: int
    baseline_per_agent_per_round: float


def comm_report(M: float, B: int, K: int, rounds: int) -> CommReport:
    """Scalars exchanged: every sync moves 2 networks of size M up and down (4M per agent).

    ``M`` may be a half-integer when generator and discriminator differ in
    size (``M = (M_d + M_g) / 2``); ``4M`` is then still an integer.
    """
    if M < 1 or B < 1 or K < 1 or rounds < 1:
        raise ConfigError("comm_report inputs must be >= 1")
    per_sync = 4 * M
    return CommReport(M, B, K, rounds, per_sync / K, int(round(B * per_sync * (rounds // K))), per_sync)


def model_M(model: GanModel) -> float:
    return (model.discriminator.n_params + model.generator.n_params) / 2


# --------------------------------------------------------------------------
# Trajectory log


@dataclass
class TrajectoryLog:
    B: int
    K: int
    weights: np.ndarray
    n_d: int
    n_g: int
    param_level: bool
    steps: list[int] = field(default_factory=list)
    agent_params: list[np.ndarray] = field(default_factory=list)   # (B, P) per row
    mean_params: list[np.ndarray] = field(default_factory=list)    # (P,) per row
    synced: list[bool] = field(default_factory=list)
    rate_a: list[float] = field(default_factory=list)
    rate_b: list[float] = field(default_factory=list)
    loss_d: list[float] = field(default_factory=list)
    loss_g: list[float] = field(default_factory=list)
    cum_scalars: list[int] = field(default_factory=list)
    norms: list[np.ndarray] = field(default_factory=list)          # (B,) per row
    checksums: list[list[str]] = field(default_factory=list)
    last_synced_step: int = 0
    last_synced: np.ndarray | None = None
    last_local: np.ndarray | None = None   # (B, P) after the final step
    N: int = 0
    meta: dict = field(default_factory=dict)

    def append(self, n: int, agents: list[AgentState], synced: bool, a: float, b: float, cum: int):
        flat = np.stack([ag.flat() for ag in agents])
        self.steps.append(n)
        self.synced.append(synced)
        self.rate_a.append(a)
        self.rate_b.append(b)
        objs = np.array([ag.objectives for ag in agents])
        self.loss_d.append(float(np.dot(self.weights, objs[:, 0])))
        self.loss_g.append(float(np.dot(self.weights, objs[:, 1])))
        self.cum_scalars.append(cum)
        # after a sync every row is the broadcast value; re-averaging could move it by an ulp
        self.mean_params.append(flat[0].copy() if synced else weighted_sum(list(flat), self.weights))
        if self.param_level:
            self.agent_params.append(flat)
        else:
            self.norms.append(np.linalg.norm(flat, axis=1))
            self.checksums.append([hashlib.sha256(r.tobytes()).hexdigest()[:16] for r in flat])

    # convenience views
    @property
    def step_array(self) -> np.ndarray:
        return np.asarray(self.steps)

    def mean_array(self) -> np.ndarray:
        return np.asarray(self.mean_params)

    def agents_array(self) -> np.ndarray:
        if not self.param_level:
            raise ConfigError("trajectory was recorded without parameter-level rows")
        return np.asarray(self.agent_params)

    def split(self, flat: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return flat[..., :self.n_d], flat[..., self.n_d:]

    def synced_rows(self) -> tuple[np.ndarray, np.ndarray]:
        idx = np.flatnonzero(self.synced)
        return self.step_array[idx], self.mean_array()[idx]

    @property
    def total_scalars(self) -> int:
        return self.cum_scalars[-1] if self.cum_scalars else 0

    # CSV ------------------------------------------------------------------
    def to_csv(self, path) -> None:
        P = self.n_d + self.n_g
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            if self.param_level:
                w.writerow(["step", "agent_id"] + [f"param_{j}" for j in range(P)]
                           + ["loss_d", "loss_g", "cum_scalars", "rate_a", "rate_b"])
            else:
                w.writerow(["step", "agent_id", "param_norm", "checksum",
                            "loss_d", "loss_g", "cum_scalars", "rate_a", "rate_b"])
            for r, n in enumerate(self.steps):
                tail = [repr(self.loss_d[r]), repr(self.loss_g[r]), self.cum_scalars[r],
                        repr(self.rate_a[r]), repr(self.rate_b[r])]
                for i in range(self.B):
                    if self.param_level:
                        body = [repr(float(v)) for v in self.agent_params[r][i]]
                    else:
                        body = [repr(float(self.norms[r][i])), self.checksums[r][i]]
                    w.writerow([n, i] + body + tail)
                if self.synced[r]:
                    m = self.mean_params[r]
                    if self.param_level:
                        body = [repr(float(v)) for v in m]
                    else:
                        body = [repr(float(np.linalg.norm(m))),
                                hashlib.sha256(m.tobytes()).hexdigest()[:16]]
                    w.writerow([n, "synced"] + body + tail)

    def header_meta(self) -> dict:
        return {"B": self.B, "K": self.K, "weights": [repr(float(p)) for p in self.weights],
                "n_d": self.n_d, "n_g": self.n_g, "param_level": self.param_level, "N": self.N,
                "last_synced_step": self.last_synced_step,
                "last_synced": None if self.last_synced is None else [repr(float(v)) for v in self.last_synced],
                "last_local": None if self.last_local is None else [[repr(float(v)) for v in row]
                                                                     for row in self.last_local],
                **self.meta}

    @classmethod
    def from_csv(cls, path, header: dict) -> "TrajectoryLog":
        weights = np.array([float(p) for p in header["weights"]])
        tl = cls(header["B"], header["K"], weights, header["n_d"], header["n_g"], header["param_level"])
        tl.N = header["N"]
        tl.last_synced_step = header["last_synced_step"]
        if header.get("last_synced") is not None:
            tl.last_synced = np.array([float(v) for v in header["last_synced"]])
        if header.get("last_local") is not None:
            tl.last_local = np.array([[float(v) for v in row] for row in header["last_local"]])
        P = tl.n_d + tl.n_g
        with open(path, newline="") as fh:
            rows = csv.reader(fh)
            next(rows)
            pending: list[list[str]] = []
            for row in rows:
                if row[1] == "synced":
                    tl.synced[-1] = True
                    continue
                pending.append(row)
                if len(pending) == tl.B:
                    first = pending[0]
                    n = int(first[0])
                    tail = first[-5:]
                    tl.steps.append(n)
                    tl.synced.append(False)
                    tl.loss_d.append(float(tail[0]))
                    tl.loss_g.append(float(tail[1]))
                    tl.cum_scalars.append(int(tail[2]))
                    tl.rate_a.append(float(tail[3]))
                    tl.rate_b.append(float(tail[4]))
                    if tl.param_level:
                        flat = np.array([[float(v) for v in r[2:2 + P]] for r in pending])
                        tl.agent_params.append(flat)
                        tl.mean_params.append(weighted_sum(list(flat), weights))
                        if np.all(flat == flat[0]):
                            tl.mean_params[-1] = flat[0].copy()
                    else:
                        tl.norms.append(np.array([float(r[2]) for r in pending]))
                        tl.checksums.append([r[3] for r in pending])
                    pending = []
        tl.meta = {k: v for k, v in header.items() if k not in
                   ("B", "K", "weights", "n_d", "n_g", "param_level", "N", "last_synced_step",
                    "last_synced", "last_local")}
        return tl


# --------------------------------------------------------------------------
# Runners


def init_agents(model: GanModel, partition: Partition, master_seed: int, init=None) -> list[AgentState]:
    """Common initial (w, theta) for all agents plus one RNG stream per agent."""
    seeds = np.random.SeedSequence(master_seed).spawn(1 + partition.B)
    if init is None:
        params_d, params_g = model.init_params(np.random.default_rng(seeds[0]))
    else:
        params_d, params_g = init
    return [AgentState.fresh(i, params_d, params_g, idx, float(p), np.random.default_rng(seeds[1 + i]))
            for i, (idx, p) in enumerate(zip(partition.assignments, partition.weights))]


def _loop(model, loss, ds: Dataset, partition: Partition, schedule: Schedule, N: int, batch: int,
          master_seed: int, init, record_stride: int, federated: bool, baseline_agents: int,
          param_level: bool | None) -> TrajectoryLog:
    if N < 1:
        raise ConfigError("N must be >= 1")
    if batch < 1 or record_stride < 1:
        raise ConfigError("batch and record_stride must be >= 1")
    loss = LossSpec.parse(loss)
    agents = init_agents(model, partition, master_seed, init)
    n_d, n_g = model.discriminator.n_params, model.generator.n_params
    if param_level is None:
        param_level = n_d + n_g <= PARAM_LEVEL_LIMIT
    B, K = len(agents), schedule.K
    traj = TrajectoryLog(B, K, np.array([a.p for a in agents]), n_d, n_g, param_level)
    traj.N = N
    traj.meta = {"federated": federated, "schedule": asdict(schedule), "batch": batch}
    per_sync = 2 * (n_d + n_g)
    cum = 0
    a0, b0 = schedule.a(0), schedule.b(0)
    traj.append(0, agents, True, a0, b0, cum)
    traj.last_synced = traj.mean_params[-1].copy()
    for n in range(1, N):
        a_n, b_n = schedule.rates_for_step(n)
        agents = [local_step(ag, model, loss, a_n, b_n, batch, ds, step=n) for ag in agents]
        is_sync = n % K == 0
        if is_sync:
            # for the single pooled agent this only folds delta into the anchor
            sync(agents)
            traj.last_synced_step = n
            if federated:
                cum += B * per_sync
        if baseline_agents:
            cum += baseline_agents * per_sync
        if n % record_stride == 0 or n == N - 1:
            traj.append(n, agents, is_sync, a_n, b_n, cum)
        if is_sync:
            traj.last_synced = np.concatenate([agents[0].anchor_d.data, agents[0].anchor_g.data])
    traj.last_local = np.stack([ag.flat() for ag in agents])
    return traj


def run_fedgan(model: GanModel, loss, ds: Dataset, partition: Partition, schedule: Schedule, N: int,
               batch: int, master_seed: int = 0, init=None, record_stride: int = 1,
               param_level: bool | None = None) -> TrajectoryLog:
    """Algorithm loop: for n = 1..N-1 every agent steps, and every K steps they sync.

    ``init`` optionally fixes the common starting (params_d, params_g).
    """
    return _loop(model, loss, ds, partition, schedule, N, batch, master_seed, init, record_stride,
                 True, 0, param_level)


def run_centralized(model: GanModel, loss, ds: Dataset, schedule: Schedule, N: int, batch: int,
                    seed: int = 0, init=None, record_stride: int = 1, baseline_agents: int = 0,
                    indices=None, param_level: bool | None = None) -> TrajectoryLog:
    """Plain SGD on the pooled data (``indices`` defaults to the whole dataset).

    The displacement is folded into the anchor at every window boundary, the
    same arithmetic a one-agent sync performs.

    ``baseline_agents > 0`` charges the distributed-GAN baseline of 4M scalars
    per agent per step to the log.
    """
    idx = np.arange(len(ds)) if indices is None else np.asarray(indices)
    single = Partition([idx], np.array([1.0]))
    return _loop(model, loss, ds, single, schedule, N, batch, seed, init, record_stride,
                 False, baseline_agents, param_level)


def schedule_of(traj: TrajectoryLog) -> Schedule:
    """Rebuild the schedule a trajectory was produced with."""
    try:
        return Schedule(**traj.meta["schedule"])
    except KeyError as exc:
        raise ConfigError("trajectory carries no schedule metadata") from exc
