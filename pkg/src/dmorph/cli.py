"""Command-line entry point: ``dmorph <command> [options]``.

Every command accepts ``--config FILE`` (YAML), ``--seed N``, ``--out DIR`` and
``--format csv|json``.  On failure a one-line JSON error record is written to
stderr and the exit status is nonzero (2 for configuration problems).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import experiments as ex
from .config import ExperimentConfig, load_config
from .errors import ConfigError, DmorphError
from .flow import climb, normalize_to_start
from .metrics import separability_index, straight_shot
from .dynamics import synthesize_field

log = logging.getLogger("dmorph")


def _write_record(record: dict, out: Path, stem: str, fmt: str):
    out.mkdir(parents=True, exist_ok=True)
    if fmt == "json":
        path = out / f"{stem}.json"
        path.write_text(json.dumps(record, indent=2) + "\n", encoding="utf-8")
    else:
        path = out / f"{stem}.csv"
        keys = list(record)
        path.write_text(",".join(keys) + "\n" + ",".join(ex.fmt(record[k]) for k in keys) + "\n",
                        encoding="utf-8")
    return path


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg = cfg.replace("batch", seed=args.seed)
        cfg = cfg.replace("pso", seed=args.seed)
    return cfg


def _start_field(args, cfg):
    """Trial field from ``--params`` or from run 0 of the seed; returns (params, cfg, label)."""
    if getattr(args, "params", None):
        params, cfg, _ = ex.read_params(args.params)
        return params, cfg, Path(args.params).stem
    return ex.trial_params(cfg.batch.seed, 0), cfg, str(cfg.batch.seed)


def _climb_from(args, cfg, stride=1):
    params, cfg, label = _start_field(args, cfg)
    system, trans, grid = cfg.system.build(), cfg.transition.build(), cfg.system.grid
    flow = cfg.flow.build(stride)
    start = normalize_to_start(system, trans, synthesize_field(params, grid), flow)
    traj = climb(system, trans, start, flow)
    return system, trans, traj, label


def cmd_climb(args):
    cfg = _config(args)
    system, trans, traj, label = _climb_from(args, cfg)
    from .metrics import compute_r

    m = compute_r(traj, system)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    lines = ["s,P,grad_norm\n"] + [f"{ex.fmt(s)},{ex.fmt(p)},{ex.fmt(g)}\n"
                                   for s, p, g in zip(traj.s, traj.probabilities, traj.grad_norms)]
    (out / f"traj_{label}.csv").write_text("".join(lines), encoding="utf-8")
    np.save(out / f"traj_{label}_fields.npy", traj.fields)
    record = {"R": m.r, "d_PL": m.d_pl, "d_EL": m.d_el, "s_max": m.s_max, "steps": traj.steps,
              "bound": m.bound, "bound_ok": m.bound_satisfied}
    _write_record(record, out, f"metrics_{label}", args.format)
    print(f"R={m.r:.8f} d_PL={m.d_pl:.6f} d_EL={m.d_el:.6f} s_max={m.s_max:.4f} steps={traj.steps}")


def _batch_config(args):
    cfg = _config(args)
    if args.runs is not None:
        cfg = cfg.replace("batch", runs=args.runs)
    if args.dipole is not None:
        cfg = cfg.replace("system", dipole=args.dipole)
    return cfg


def cmd_batch(args):
    cfg = _batch_config(args)
    summary = ex.run_batch(cfg, args.out)
    agg = summary.aggregates()
    _write_record(agg, Path(args.out), "summary", args.format)
    print(f"runs={agg['count']} failures={agg['failures']} R min/mean/max = "
          f"{agg['r_min']:.5f}/{agg['r_mean']:.5f}/{agg['r_max']:.5f}")


def cmd_sweep(args):
    cfg = _batch_config(args)
    results = ex.precision_sweep(cfg, args.out)
    for case, summary in results.items():
        agg = summary.aggregates()
        _write_record(agg, Path(args.out) / f"case_{case}", "summary", args.format)
        print(f"case {case}: mean R = {agg['r_mean']:.5f} ({agg['count']} runs)")


def cmd_distances(args):
    if args.batch_dir:
        summary = ex.load_summary(args.batch_dir)
        cfg_path = Path(args.batch_dir) / "manifest.json"
        if cfg_path.exists():
            from .config import parse_config

            conf = json.loads(cfg_path.read_text())["config"]
            summary.config = parse_config(ex.dump_yaml({k: conf[k] for k in ("system", "transition")}))
    else:
        summary = ex.run_batch(_batch_config(args), args.out)
    result = ex.split_distance_analysis(summary, args.fraction)
    record = {}
    for name, ds in result.items():
        record[f"{name}_mean_R"] = ds.mean_r
        for pop, value in ds.means().items():
            record[f"{name}_{pop}"] = value
    _write_record(record, Path(summary.out_dir), "distance_summary", args.format)
    for k, v in record.items():
        print(f"{k} = {v:.6f}")


def cmd_straight_shot(args):
    cfg = _config(args)
    system, trans, traj, label = _climb_from(args, cfg)
    from .metrics import compute_r

    m = compute_r(traj)
    res = straight_shot(system, trans, traj.start, distance_scale=m.d_el)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / f"straight_shot_{label}.csv").write_text(
        "u,P\n" + "".join(f"{ex.fmt(u)},{ex.fmt(p)}\n" for u, p in zip(res.u, res.probabilities)),
        encoding="utf-8")
    _write_record({"R": m.r, "u_star": res.u_star, "P_star": res.p_star}, out,
                  f"straight_shot_{label}_result", args.format)
    print(f"R={m.r:.6f} first local max P*={res.p_star:.6f} at u={res.u_star:.6g}")


def cmd_separability(args):
    cfg = _config(args)
    system, trans, traj, label = _climb_from(args, cfg, stride=args.stride)
    rep = separability_index(traj, system, trans)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    np.save(out / f"separability_{label}_G.npy", rep.G)
    np.savetxt(out / f"separability_{label}_s.csv", traj.s, fmt="%.17g")
    _write_record({"index": rep.index, "min_cosine": rep.min_cosine, "snapshots": traj.n_snapshots},
                  out, f"separability_{label}", args.format)
    print(f"separability index sigma2/sigma1 = {rep.index:.6e} over {traj.n_snapshots} snapshots")


def cmd_pso(args):
    cfg = _config(args)
    changes = {"sense": args.sense}
    if args.particles is not None:
        changes["particles"] = args.particles
    if args.generations is not None:
        changes["generations"] = args.generations
    for key, value in changes.items():
        cfg = cfg.replace("pso", **{key: value})
    state = ex.run_pso_experiment(cfg, args.out)
    print(f"best R={state.best_value:.8f} after {state.generation} generations")


def cmd_replay(args):
    r, logged = ex.replay(args.params)
    record = {"R": r, "logged_R": logged if logged is not None else float("nan"),
              "difference": abs(r - logged) if logged is not None else float("nan")}
    _write_record(record, Path(args.out), "replay", args.format)
    print(f"R={r:.12f} logged={logged}")
    if logged is not None and abs(r - logged) > 1e-9:
        raise DmorphError(f"replayed R {r!r} differs from logged {logged!r}")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML experiment config")
    common.add_argument("--seed", type=int, help="master seed (batch and swarm)")
    common.add_argument("--out", default="out", help="output directory")
    common.add_argument("--format", choices=("csv", "json"), default="csv", help="summary output format")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="dmorph", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("climb", parents=[common], help="one normalized climb with full snapshots")
    p.add_argument("--params", help="field parameter document to start from")
    p.set_defaults(func=cmd_climb)

    for name, func, text in (("batch", cmd_batch, "seeded batch of climbs"),
                             ("sweep-precision", cmd_sweep, "batches for the four precision cases")):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("--runs", type=int)
        p.add_argument("--dipole", choices=("standard", "free", "restricted"))
        p.set_defaults(func=func)

    p = sub.add_parser("distances", parents=[common], help="low/high-R pairwise distance analysis")
    p.add_argument("--batch-dir", help="existing batch directory (otherwise a batch is run into --out)")
    p.add_argument("--fraction", type=float, default=0.25)
    p.add_argument("--runs", type=int)
    p.add_argument("--dipole", choices=("standard", "free", "restricted"))
    p.set_defaults(func=cmd_distances)

    p = sub.add_parser("straight-shot", parents=[common], help="march along the initial gradient")
    p.add_argument("--params")
    p.set_defaults(func=cmd_straight_shot)

    p = sub.add_parser("separability", parents=[common], help="rank-one test of the gradient surface")
    p.add_argument("--params")
    p.add_argument("--stride", type=int, default=1)
    p.set_defaults(func=cmd_separability)

    p = sub.add_parser("pso", parents=[common], help="particle swarm search for extremal R")
    p.add_argument("--sense", choices=("min", "max"), default="min")
    p.add_argument("--particles", type=int)
    p.add_argument("--generations", type=int)
    p.set_defaults(func=cmd_pso)

    p = sub.add_parser("replay", parents=[common], help="re-run a stored field parametrization")
    p.add_argument("--params", required=True)
    p.set_defaults(func=cmd_replay)
    return parser


def _error(kind, exc, code, **extra):
    record = {"status": "error", "type": kind, "message": str(exc), **extra}
    print(json.dumps(record), file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except ConfigError as exc:
        return _error("ConfigError", exc, 2, key=exc.key, line=exc.line)
    except (DmorphError, ValueError, OSError) as exc:
        return _error(type(exc).__name__, exc, 1)
    return 0


if __name__ == "__main__":
    sys.exit(main())
