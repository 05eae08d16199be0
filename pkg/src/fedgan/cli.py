"""Command-line experiment runner.

Subcommands: run, verify, metrics, plot, sweep.  Exit codes: 0 success,
1 a check was violated, 2 configuration or precondition error, 3 runtime
abort (non-finite values).
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import plotting
from .analysis import (AgentFields, GradientField, PreconditionError, ProbeBox, check_two_timescale,
                       check_windows, estimate_constants, overall_status, quantile_starts,
                       theorem1_deviation, write_lemma_csv)
from .autodiff import NonFiniteError
from .bundle import (load_manifest, read_json, read_vector, update_manifest, write_json, write_rows,
                     write_vector)
from .config import ExperimentConfig, dump_config, load_config
from .experiment import Setup, build, comm_for, evaluate, train, train_centralized
from .federation import ConfigError, TrajectoryLog
from .presets import PRESETS, get_preset

EXIT_OK, EXIT_VIOLATED, EXIT_CONFIG, EXIT_ABORT = 0, 1, 2, 3

log = logging.getLogger("fedgan")


def output_root() -> Path:
    return Path(os.environ.get("FEDGAN_OUT", "runs"))


def resolve_config(args) -> ExperimentConfig:
    if getattr(args, "config", None) and getattr(args, "preset", None):
        raise ConfigError("give either --config or --preset, not both")
    if getattr(args, "config", None):
        cfg = load_config(args.config)
    elif getattr(args, "preset", None):
        cfg = get_preset(args.preset)
    else:
        raise ConfigError("need --config or --preset")
    over = {}
    if getattr(args, "seed", None) is not None:
        over["master_seed"] = args.seed
    if getattr(args, "stride", None) is not None:
        over["record_stride"] = args.stride
    return cfg.with_overrides(**over) if over else cfg


def load_bundle(bundle) -> tuple[ExperimentConfig, Setup, TrajectoryLog]:
    bundle = Path(bundle)
    for name in ("config.ini", "trajectory.csv", "meta.json"):
        if not (bundle / name).exists():
            raise PreconditionError(f"bundle {bundle} lacks {name}")
    cfg = load_config(bundle / "config.ini")
    traj = TrajectoryLog.from_csv(bundle / "trajectory.csv", read_json(bundle / "meta.json"))
    return cfg, build(cfg), traj


def _final_flat(bundle: Path, traj: TrajectoryLog) -> np.ndarray:
    if (bundle / "final_params.csv").exists():
        return read_vector(bundle / "final_params.csv")
    if traj.last_synced is None:
        raise PreconditionError("bundle holds no final parameters")
    return traj.last_synced


# -- run ----------------------------------------------------------------------


def cmd_run(cfg: ExperimentConfig, out: Path) -> int:
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.ini").write_text(dump_config(cfg))
    setup = build(cfg)
    try:
        traj = train(setup)
        central = train_centralized(setup) if cfg.compare_centralized else None
    except NonFiniteError as exc:
        update_manifest(out, status="aborted", error=str(exc))
        log.error("run aborted: %s", exc)
        return EXIT_ABORT
    traj.to_csv(out / "trajectory.csv")
    write_json(out / "meta.json", traj.header_meta())
    write_vector(out / "final_params.csv", "value", traj.last_synced)
    write_rows(out / "final_local.csv", ["agent_id"] + [f"param_{j}" for j in range(traj.last_local.shape[1])],
               [[i] + [repr(float(v)) for v in row] for i, row in enumerate(traj.last_local)])
    comm = comm_for(setup, traj)
    write_rows(out / "comm.csv",
               ["M", "B", "K", "rounds", "per_agent_per_round", "baseline_per_agent_per_round",
                "total_scalars", "logged_scalars", "agree"],
               [[comm.M, comm.B, comm.K, comm.rounds, repr(comm.per_agent_per_round),
                 repr(comm.baseline_per_agent_per_round), comm.total_scalars, traj.total_scalars,
                 comm.total_scalars == traj.total_scalars]])
    if central is not None:
        central.to_csv(out / "centralized_trajectory.csv")
        write_vector(out / "centralized_final_params.csv", "value", central.last_synced)
    summary = {"name": cfg.name, "final_synced_step": traj.last_synced_step, "N": cfg.N}
    if cfg.model == "analytic2d":
        psi, theta = traj.last_synced
        summary.update(theta=float(theta), psi=float(psi),
                       linf_to_equilibrium=float(max(abs(theta - 1.0), abs(psi))))
    write_json(out / "summary.json", summary)
    notices = []
    if cfg.metrics:
        rc = _metrics(out, cfg, setup, traj, cfg.metric_samples, notices)
        if rc:
            return rc
    _plots(out, cfg, setup, traj, notices)
    update_manifest(out, status="ok", notices=notices)
    return EXIT_OK


# -- verify -------------------------------------------------------------------


def cmd_verify(bundle: Path, which: list[str]) -> int:
    cfg, setup, traj = load_bundle(bundle)
    violated = False
    notices = []
    for what in which:
        if what == "lemmas":
            status = _verify_lemmas(bundle, cfg, setup, traj)
        elif what == "theorem1":
            status = _verify_theorem1(bundle, cfg, setup, traj)
        elif what == "two-timescale":
            status = _verify_timescale(bundle, cfg, setup, traj)
        else:
            raise ConfigError(f"unknown check {what!r}")
        notices.append(f"{what}: {status}")
        violated |= status == "violated"
    update_manifest(bundle, notices=notices)
    for n in notices:
        print(n)
    return EXIT_VIOLATED if violated else EXIT_OK


def _require_param_level(traj: TrajectoryLog) -> None:
    if not traj.param_level:
        raise PreconditionError("model too large for parameter-level replay (only norms were logged)")


def _verify_lemmas(bundle, cfg, setup, traj) -> str:
    _require_param_level(traj)
    K = cfg.K
    n_needed = cfg.lemma_windows * K
    if n_needed >= traj.N:
        raise PreconditionError("trajectory shorter than the requested windows")
    states = traj.mean_array()[traj.step_array <= n_needed]
    margin = 0.25 * max(float(np.ptp(states, axis=0).max()), 0.1)
    box = ProbeBox.around(states, margin)
    consts = estimate_constants(setup.model, cfg.loss, setup.ds, setup.partition, box, cfg.n_probes,
                                cfg.batch, cfg.master_seed, n_latent=cfg.n_latent,
                                extra_points=states[::max(1, len(states) // 50)])
    reports = check_windows(traj, setup.model, cfg.loss, consts, setup.ds, setup.partition,
                            cfg.lemma_windows, 0, cfg.mc_runs, cfg.master_seed, n_latent=cfg.n_latent)
    write_lemma_csv(Path(bundle) / "lemmas.csv", reports)
    write_json(Path(bundle) / "constants.json", consts.summary())
    return overall_status(reports)


def _verify_theorem1(bundle, cfg, setup, traj) -> str:
    _require_param_level(traj)
    q = GradientField(setup.model, cfg.loss, setup.ds, np.concatenate(setup.partition.assignments), cfg.n_latent)
    rep = theorem1_deviation(traj, q, quantile_starts(traj), cfg.theorem_T)
    rep.to_csv(Path(bundle) / "theorem1.csv")
    ok = rep.slope <= 0 and rep.deviations[-1] <= 0.25 * rep.deviations[0]
    return "satisfied" if ok else "violated"


def _verify_timescale(bundle, cfg, setup, traj) -> str:
    _require_param_level(traj)
    q = GradientField(setup.model, cfg.loss, setup.ds, np.concatenate(setup.partition.assignments), cfg.n_latent)
    steps = traj.step_array
    picks = np.unique(np.linspace(0, len(steps) - 1, 21).astype(int))
    rep = check_two_timescale(traj, q, steps[picks], tol=1e-7)
    rep.to_csv(Path(bundle) / "two_timescale.csv")
    return "satisfied" if rep.late_gap < 0.05 else "violated"


# -- metrics ------------------------------------------------------------------


def cmd_metrics(bundle: Path, n: int | None) -> int:
    cfg, setup, traj = load_bundle(bundle)
    notices = []
    rc = _metrics(bundle, cfg, setup, traj, n or cfg.metric_samples, notices)
    update_manifest(bundle, notices=notices)
    return rc


def _metrics(bundle, cfg, setup, traj, n, notices) -> int:
    bundle = Path(bundle)
    if cfg.dataset == "uniform1d":
        notices.append("metrics skipped: no sample-quality metric for the 1-D toy data")
        return EXIT_OK
    res = evaluate(setup, _final_flat(bundle, traj), n, seed=cfg.master_seed + 1)
    gen = res.pop("generated")
    rep = res.pop("centroid_report", None)
    if rep is not None:
        rep.to_csv(bundle / "centroids.csv")
    write_rows(bundle / "metrics.csv", ["metric", "value"], [[k, repr(float(v)) if isinstance(v, (float, np.floating)) else v]
                                                             for k, v in sorted(res.items())])
    np.savetxt(bundle / "generated_sample.csv", gen[:2000], delimiter=",", fmt="%.17g")
    return EXIT_OK


# -- plot ---------------------------------------------------------------------


def cmd_plot(bundle: Path) -> int:
    cfg, setup, traj = load_bundle(bundle)
    notices = []
    _plots(bundle, cfg, setup, traj, notices)
    update_manifest(bundle, notices=notices)
    return EXIT_OK


def _plots(bundle, cfg, setup, traj, notices) -> None:
    bundle = Path(bundle)
    if cfg.model == "analytic2d" and traj.param_level:
        steps, synced = traj.synced_rows()
        plotting.plot_2d_trajectory(bundle / "trajectory_2d.svg", steps, synced)
    gen_path = bundle / "generated_sample.csv"
    if cfg.dataset in ("gaussians", "swiss") and gen_path.exists():
        gen = np.loadtxt(gen_path, delimiter=",", ndmin=2)
        real = setup.ds.samples[setup.holdout][:2000]
        plotting.plot_scatter(bundle / "scatter.svg", real, gen, cfg.name)
    elif cfg.dataset in ("gaussians", "swiss"):
        notices.append("scatter plot skipped: no generated sample (run metrics first)")
    if (bundle / "centroids.csv").exists():
        _plot_centroids(bundle)
    if (bundle / "theorem1.csv").exists():
        s, dev = _read_table(bundle / "theorem1.csv", ("s", "deviation"))
        plotting.plot_deviation(bundle / "theorem1.svg", s, dev)
    if (bundle / "lemmas.csv").exists():
        _plot_lemmas(bundle)
    if (bundle / "two_timescale.csv").exists():
        n, gap = _read_table(bundle / "two_timescale.csv", ("n", "gap"))
        plotting.plot_gap(bundle / "two_timescale.svg", n, gap)


def _read_table(path, cols):
    import csv
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header = rows[0]
    body = []
    for r in rows[1:]:
        if not r:
            break
        body.append(r)
    idx = [header.index(c) for c in cols]
    return tuple(np.array([float(r[i]) for r in body]) for i in idx)


def _plot_lemmas(bundle: Path) -> None:
    import csv
    with open(bundle / "lemmas.csv", newline="") as fh:
        rows = [r for r in csv.reader(fh)][1:]
    for kind in ("lemma1", "lemma2"):
        sel = [r for r in rows if r and r[0] == kind]
        n = np.array([int(r[2]) for r in sel])
        plotting.plot_lemma(bundle / f"{kind}.svg", n, np.array([float(r[3]) for r in sel]),
                            np.array([float(r[4]) for r in sel]), kind)


def _plot_centroids(bundle: Path) -> None:
    import csv
    with open(bundle / "centroids.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    rc = [i for i, h in enumerate(header) if h.startswith("real_") and h != "real_index"]
    gc = [i for i, h in enumerate(header) if h.startswith("gen_") and h != "gen_index"]
    real = np.array([[float(r[i]) for i in rc] for r in body])
    gen = np.array([[float(r[i]) for i in gc] for r in body])
    plotting.plot_centroids(bundle / "centroids.svg", real, gen, [(k, k) for k in range(len(body))])


# -- sweep --------------------------------------------------------------------


def cmd_sweep(cfg: ExperimentConfig, k_list: list[int], out: Path) -> int:
    if len(set(k_list)) < 2:
        raise ConfigError("a sweep needs at least two distinct K values")
    rows = []
    worst = EXIT_OK
    for K in k_list:
        sub = cfg.with_overrides(K=K, name=f"{cfg.name}-K{K}", lemmas=False, theorem1=False)
        rc = cmd_run(sub, out / f"K{K}")
        worst = max(worst, rc)
        if rc == EXIT_ABORT:
            rows.append([K, "aborted", "", "", "", "", ""])
            continue
        comm = _read_table_one(out / f"K{K}" / "comm.csv")
        final = read_vector(out / f"K{K}" / "final_params.csv")
        if cfg.model == "analytic2d":
            metric = repr(float(max(abs(final[1] - 1.0), abs(final[0]))))
        elif (out / f"K{K}" / "metrics.csv").exists():
            m = dict(_read_pairs(out / f"K{K}" / "metrics.csv"))
            metric = m.get("mmd2", m.get("mean_matched_distance", ""))
        else:
            metric = ""
        rows.append([K, metric, comm["total_scalars"], comm["logged_scalars"], comm["per_agent_per_round"],
                     comm["baseline_per_agent_per_round"], comm["agree"]])
    write_rows(out / "sweep.csv", ["K", "final_metric", "comm_scalars", "logged_scalars",
                                   "per_agent_per_round", "baseline_per_agent_per_round", "comm_agree"], rows)
    update_manifest(out, status="ok" if worst == EXIT_OK else "partial")
    return worst


def _read_table_one(path) -> dict:
    import csv
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return dict(zip(rows[0], rows[1]))


def _read_pairs(path):
    import csv
    with open(path, newline="") as fh:
        return [tuple(r) for r in list(csv.reader(fh))[1:]]


# -- entry point ----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fedgan", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="cmd", required=True)

    def common(p):
        p.add_argument("--config", help="INI experiment file")
        p.add_argument("--preset", choices=sorted(PRESETS))
        p.add_argument("--out", help="output directory (default: $FEDGAN_OUT/<name>, else runs/<name>)")
        p.add_argument("--seed", type=int, help="override master_seed")
        p.add_argument("--stride", type=int, help="override record_stride")

    common(sub.add_parser("run", help="train and write a bundle"))
    p = sub.add_parser("sweep", help="run one config for several K")
    common(p)
    p.add_argument("--k-list", required=True, help="comma-separated K values, e.g. 1,5,20,50")
    p = sub.add_parser("verify", help="run theory checks on a bundle")
    p.add_argument("bundle")
    p.add_argument("--which", action="append", choices=("lemmas", "theorem1", "two-timescale"))
    p = sub.add_parser("metrics", help="sample-quality metrics for a bundle")
    p.add_argument("bundle")
    p.add_argument("--samples", type=int)
    p = sub.add_parser("plot", help="render SVG figures for a bundle")
    p.add_argument("bundle")
    sub.add_parser("presets", help="list presets")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        if args.cmd == "presets":
            for name in sorted(PRESETS):
                print(name)
            return EXIT_OK
        if args.cmd in ("run", "sweep"):
            cfg = resolve_config(args)
            out = Path(args.out) if args.out else output_root() / cfg.name
            if args.cmd == "run":
                return cmd_run(cfg, out)
            try:
                ks = [int(k) for k in args.k_list.split(",") if k.strip()]
            except ValueError:
                raise ConfigError(f"bad --k-list {args.k_list!r}") from None
            return cmd_sweep(cfg, ks, out)
        bundle = Path(args.bundle)
        if not bundle.is_dir():
            raise PreconditionError(f"no bundle at {bundle}")
        if args.cmd == "verify":
            cfg = load_config(bundle / "config.ini")
            which = args.which or [w for w, on in (("lemmas", cfg.lemmas), ("theorem1", cfg.theorem1),
                                                   ("two-timescale", cfg.two_timescale)) if on]
            if not which:
                raise ConfigError("nothing to verify: pass --which or enable checks in the config")
            return cmd_verify(bundle, which)
        if args.cmd == "metrics":
            return cmd_metrics(bundle, args.samples)
        return cmd_plot(bundle)
    except (ConfigError, PreconditionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NonFiniteError as exc:
        print(f"aborted: {exc}", file=sys.stderr)
        return EXIT_ABORT


if __name__ == "__main__":
    sys.exit(main())
