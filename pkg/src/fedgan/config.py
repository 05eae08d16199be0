"""Experiment configuration: INI files with every default written out."""
from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .federation import ConfigError, Schedule

SECTIONS = {
    "run": ("name", "N", "batch", "master_seed", "record_stride", "param_level", "compare_centralized"),
    "model": ("model", "hidden", "depth", "latent_dim", "latent_law", "loss", "init", "init_theta",
              "init_psi", "init_gain"),
    "data": ("dataset", "n_samples", "data_seed", "modes", "radius", "sigma", "noise", "archetypes",
             "strategy", "B", "holdout", "partition_seed"),
    "schedule": ("mode", "a0", "b0", "tau", "p_a", "p_b", "K"),
    "analysis": ("lemmas", "theorem1", "two_timescale", "metrics", "lemma_windows", "mc_runs",
                 "n_probes", "theorem_T", "metric_samples", "n_latent"),
}


@dataclass(frozen=True)
class ExperimentConfig:
    name: str = "custom"
    N: int = 10_000
    batch: int = 64
    master_seed: int = 0
    record_stride: int = 1
    param_level: str = "auto"          # auto | true | false
    compare_centralized: bool = False

    model: str = "analytic2d"          # analytic2d | mlp | cgan
    hidden: int = 64
    depth: int = 2
    latent_dim: int = 2
    latent_law: str = "normal"
    loss: str = "non_saturating"
    init: str = "point"                # point (analytic2d) | uniform | glorot
    init_theta: float = 0.5
    init_psi: float = 0.8
    init_gain: float = 1.0

    dataset: str = "uniform1d"         # uniform1d | gaussians | swiss | profiles
    n_samples: int = 20_000
    data_seed: int = 1
    modes: int = 8
    radius: float = 2.0
    sigma: float = 0.02
    noise: float = 0.25
    archetypes: int = 5
    strategy: str = "by_range"
    B: int = 5
    holdout: float = 0.0
    partition_seed: int = 0

    mode: str = "equal"
    a0: float = 0.2
    b0: float = 0.2
    tau: float = 200.0
    p_a: float = 0.6
    p_b: float = 0.6
    K: int = 5

    lemmas: bool = False
    theorem1: bool = False
    two_timescale: bool = False
    metrics: bool = False
    lemma_windows: int = 20
    mc_runs: int = 32
    n_probes: int = 100
    theorem_T: float = 50.0
    metric_samples: int = 10_000
    n_latent: int = 4096

    notes: dict = field(default_factory=dict, compare=False)   # key -> provenance comment

    def __post_init__(self):
        self.validate()

    def schedule(self) -> Schedule:
        return Schedule(self.mode, self.a0, self.b0, self.tau, self.p_a, self.p_b, self.K)

    def validate(self) -> None:
        from .analysis.timescale import validate_schedule
        if self.model not in ("analytic2d", "mlp", "cgan"):
            raise ConfigError(f"unknown model {self.model!r}")
        if self.dataset not in ("uniform1d", "gaussians", "swiss", "profiles"):
            raise ConfigError(f"unknown dataset {self.dataset!r}")
        if self.param_level not in ("auto", "true", "false"):
            raise ConfigError("param_level must be auto, true or false")
        if self.N < 1 or self.batch < 1 or self.record_stride < 1 or self.B < 1:
            raise ConfigError("N, batch, record_stride and B must be >= 1")
        if not 0.0 <= self.holdout < 1.0:
            raise ConfigError("holdout must be in [0, 1)")
        if not validate_schedule(self.schedule()):
            raise ConfigError("schedule violates the step-size conditions "
                              "(need p in (0.5, 1], and p_b > p_a for two time-scale)")
        if self.model == "cgan" and self.dataset != "profiles":
            raise ConfigError("the conditional model is only wired to the profiles dataset")

    def with_overrides(self, **kw) -> "ExperimentConfig":
        return replace(self, **kw)


_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}


def _coerce(key: str, raw: str):
    kind = _TYPES[key]
    if kind == "bool":
        low = raw.strip().lower()
        if low not in ("true", "false", "yes", "no", "1", "0"):
            raise ValueError(f"expected a boolean, got {raw!r}")
        return low in ("true", "yes", "1")
    if kind == "int":
        return int(float(raw)) if "e" in raw.lower() else int(raw)
    if kind == "float":
        return float(raw)
    return raw.strip()


def _line_of(text: str, key: str) -> int:
    for i, line in enumerate(text.splitlines(), 1):
        if line.split("=", 1)[0].strip() == key:
            return i
    return 0


def load_config(path) -> ExperimentConfig:
    """Parse an INI file; errors name the offending line."""
    path = Path(path)
    text = path.read_text()
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        cp.read_string(text, source=str(path))
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    values = {}
    for section in cp.sections():
        if section not in SECTIONS:
            raise ConfigError(f"{path}: unknown section [{section}]")
        for key, raw in cp.items(section):
            if key not in SECTIONS[section]:
                raise ConfigError(f"{path}:{_line_of(text, key)}: unknown key {key!r} in [{section}]")
            try:
                values[key] = _coerce(key, raw)
            except ValueError as exc:
                raise ConfigError(f"{path}:{_line_of(text, key)}: {key}: {exc}") from exc
    try:
        return ExperimentConfig(**values)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def dump_config(cfg: ExperimentConfig) -> str:
    """Snapshot with all values materialized; provenance notes become comments."""
    out = [f"# experiment {cfg.name}"]
    for section, keys in SECTIONS.items():
        out.append("")
        out.append(f"[{section}]")
        for key in keys:
            note = cfg.notes.get(key)
            if note:
                out.append(f"# {note}")
            out.append(f"{key} = {_fmt(getattr(cfg, key))}")
    return "\n".join(out) + "\n"
