"""Build models, data and partitions from a config, run, and evaluate."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import ParamVector
from .config import ExperimentConfig
from .datasets import (Dataset, Partition, gen_mixed_gaussians, gen_swiss_roll, gen_synthetic_profiles,
                       gen_uniform_1d, mixture_centers, partition_noniid, split_holdout)
from .federation import (ConfigError, TrajectoryLog, comm_report, model_M, run_centralized, run_fedgan)
from .metrics import centroid_compare, median_bandwidth, mmd2, mode_coverage
from .models import GanModel, analytic2d_params, make_analytic2d, make_conditional_gan, make_mlp_gan


@dataclass
class Setup:
    cfg: ExperimentConfig
    model: GanModel
    ds: Dataset
    full_partition: Partition
    partition: Partition        # training shards (holdout removed)
    holdout: np.ndarray


def make_dataset(cfg: ExperimentConfig, n: int | None = None, seed: int | None = None) -> Dataset:
    n = cfg.n_samples if n is None else n
    seed = cfg.data_seed if seed is None else seed
    if cfg.dataset == "uniform1d":
        return gen_uniform_1d(n, -1.0, 1.0, seed)
    if cfg.dataset == "gaussians":
        return gen_mixed_gaussians(n, cfg.modes, cfg.radius, cfg.sigma, seed)
    if cfg.dataset == "swiss":
        return gen_swiss_roll(n, cfg.noise, seed)
    return gen_synthetic_profiles(n, cfg.archetypes, seed)


def make_model(cfg: ExperimentConfig, ds: Dataset) -> GanModel:
    if cfg.model == "analytic2d":
        if ds.dim != 1:
            raise ConfigError("analytic2d needs 1-D data")
        return make_analytic2d()
    if cfg.model == "mlp":
        return make_mlp_gan(cfg.hidden, cfg.depth, ds.dim, cfg.latent_dim, cfg.latent_law)
    return make_conditional_gan(ds.labels.shape[1], ds.dim, cfg.hidden, cfg.latent_dim, cfg.depth)


def initial_params(cfg: ExperimentConfig, model: GanModel):
    if cfg.init == "point":
        if cfg.model != "analytic2d":
            raise ConfigError("init=point only applies to analytic2d")
        return analytic2d_params(cfg.init_theta, cfg.init_psi)
    rng = np.random.default_rng(np.random.SeedSequence(cfg.master_seed).spawn(1)[0])
    return model.init_params(rng, cfg.init_gain if cfg.init == "glorot" else 0.05,
                             "glorot" if cfg.init == "glorot" else "uniform")


def build(cfg: ExperimentConfig) -> Setup:
    ds = make_dataset(cfg)
    model = make_model(cfg, ds)
    if cfg.B == 1:
        full = Partition.from_assignments([np.arange(len(ds))])
    else:
        full = partition_noniid(ds, cfg.B, cfg.strategy, cfg.partition_seed)
    part, hold = split_holdout(full, cfg.holdout, cfg.partition_seed)
    return Setup(cfg, model, ds, full, part, hold)


def _param_level(cfg: ExperimentConfig):
    return None if cfg.param_level == "auto" else cfg.param_level == "true"


def train(setup: Setup) -> TrajectoryLog:
    cfg = setup.cfg
    return run_fedgan(setup.model, cfg.loss, setup.ds, setup.partition, cfg.schedule(), cfg.N, cfg.batch,
                      cfg.master_seed, initial_params(cfg, setup.model), cfg.record_stride,
                      _param_level(cfg))


def train_centralized(setup: Setup) -> TrajectoryLog:
    cfg = setup.cfg
    idx = np.sort(np.concatenate(setup.partition.assignments))
    return run_centralized(setup.model, cfg.loss, setup.ds, cfg.schedule(), cfg.N, cfg.batch,
                           cfg.master_seed, initial_params(cfg, setup.model), cfg.record_stride,
                           baseline_agents=cfg.B, indices=idx, param_level=_param_level(cfg))


def comm_for(setup: Setup, traj: TrajectoryLog):
    """Accounting over the ``N - 1`` executed updates."""
    return comm_report(model_M(setup.model), setup.partition.B, setup.cfg.K, max(1, traj.N - 1))


def final_params(model: GanModel, flat: np.ndarray) -> tuple[ParamVector, ParamVector]:
    n_d = model.discriminator.n_params
    return (ParamVector(np.asarray(flat[:n_d], float), model.discriminator.layout),
            ParamVector(np.asarray(flat[n_d:], float), model.generator.layout))


def generate(setup: Setup, flat: np.ndarray, n: int, seed: int, labels=None) -> np.ndarray:
    _, pg = final_params(setup.model, flat)
    rng = np.random.default_rng(seed)
    z = setup.model.sample_latent(rng, n)
    if setup.model.conditional and labels is None:
        raise ConfigError("conditional generation needs labels")
    return setup.model.generate(pg, z, labels)


# -- metrics ----------------------------------------------------------------

N_NULL_MMD = 5
N_NULL_CENTROID = 20
NULL_SEED_BASE = 10_000


def evaluate(setup: Setup, flat: np.ndarray, n: int, seed: int = 1) -> dict:
    """Metrics of the trained generator against the held-out real sample.

    The nulls compare fresh real draws (new data seeds, same size as the
    generated sample) with the same holdout, under the same settings.
    """
    cfg = setup.cfg
    if len(setup.holdout) < 2:
        raise ConfigError("metrics need a held-out real sample (holdout > 0)")
    real = setup.ds.samples[setup.holdout]
    out: dict = {"family": cfg.dataset, "n_generated": n, "n_holdout": len(real)}
    if cfg.dataset in ("gaussians", "swiss"):
        gen = generate(setup, flat, n, seed)
        bw = median_bandwidth(real)
        out["bandwidth"] = bw
        out["mmd2"] = mmd2(gen, real, bw).mmd2
        nulls = [mmd2(make_dataset(cfg, n, NULL_SEED_BASE + k).samples, real, bw).mmd2 for k in range(N_NULL_MMD)]
        out["mmd2_null"] = float(np.mean(nulls))
        out["mmd2_ratio"] = out["mmd2"] / out["mmd2_null"]
        if cfg.dataset == "gaussians":
            r = 3 * cfg.sigma
            cov = mode_coverage(gen, mixture_centers(cfg.modes, cfg.radius), r)
            out.update(modes_hit=cov.modes_hit, total_modes=cov.total_modes,
                       high_quality_fraction=cov.high_quality_fraction, radius=r)
        out["generated"] = gen
    elif cfg.dataset == "profiles":
        rng = np.random.default_rng(seed)
        labels = setup.ds.labels[setup.holdout][rng.integers(0, len(real), size=n)]
        gen = generate(setup, flat, n, seed + 1, labels)
        rep = centroid_compare(real, gen, 9, seed)
        nulls = [centroid_compare(real, make_dataset(cfg, n, NULL_SEED_BASE + k).samples, 9, seed).mean_matched_distance
                 for k in range(N_NULL_CENTROID)]
        out.update(mean_matched_distance=rep.mean_matched_distance,
                   centroid_null_p95=float(np.percentile(nulls, 95)), centroid_report=rep, generated=gen)
    else:
        raise ConfigError(f"no sample-quality metrics for dataset {cfg.dataset!r}")
    return out
