"""Seeded batch experiments and their on-disk formats.

Seeds: run ``i`` of a batch with master seed ``m`` draws its trial-field
parameters from ``numpy.random.default_rng([m, i])``, so any run can be
reproduced in isolation and results never depend on execution order.

Batch directory layout::

    runs.csv            one row per run (header row, floats with 17 significant digits)
    fields/run_NNNNNN.npy   (2, M+1) array: normalized start field, final field
    histogram.csv       fixed-edge histogram of log10(R - 1)
    manifest.json       config, seeds, aggregates, versions

``runs.csv`` is appended after each run (field file first, then the row), and
rewritten sorted by run index when the batch completes.  Restarting an
interrupted batch skips run indices already present.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import os
import platform
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from . import __version__
from .config import ExperimentConfig
from .dynamics import ControlField, FieldParametrization, TimeGrid, synthesize_field, transition_probability
from .errors import DmorphError
from .flow import climb, normalize_to_start
from .metrics import compute_r, cross_distances, pairwise_distances, upper_values
from .pso import evaluate_particle, run_swarm

log = logging.getLogger(__name__)

RUN_COLUMNS = ["run", "seed", "converged", "R", "d_PL", "d_EL", "s_max", "steps", "p_trial",
               "bound_ok", "error"]
# log10(R - 1) bin edges; values outside land in the under/overflow rows
HIST_EDGES = np.round(np.arange(-7.0, 1.0 + 1e-9, 0.1), 10)


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return str(x)


def run_rng(master_seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng([master_seed, index])


def trial_params(master_seed: int, index: int) -> FieldParametrization:
    return FieldParametrization.random(run_rng(master_seed, index))


@dataclass(frozen=True)
class RunRow:
    run: int
    seed: int
    converged: bool
    R: float = math.nan
    d_PL: float = math.nan
    d_EL: float = math.nan
    s_max: float = math.nan
    steps: int = 0
    p_trial: float = math.nan
    bound_ok: bool = False
    error: str = ""

    def cells(self):
        return [fmt(getattr(self, c)) for c in RUN_COLUMNS]

    @classmethod
    def parse(cls, rec: dict) -> "RunRow":
        return cls(run=int(rec["run"]), seed=int(rec["seed"]), converged=rec["converged"] == "1",
                   R=float(rec["R"]), d_PL=float(rec["d_PL"]), d_EL=float(rec["d_EL"]),
                   s_max=float(rec["s_max"]), steps=int(rec["steps"]), p_trial=float(rec["p_trial"]),
                   bound_ok=rec["bound_ok"] == "1", error=rec["error"])


@dataclass
class BatchSummary:
    rows: list
    config: Optional[ExperimentConfig] = None
    out_dir: Optional[Path] = None

    @property
    def ok_rows(self):
        return [r for r in self.rows if r.converged]

    @property
    def failures(self) -> int:
        return len(self.rows) - len(self.ok_rows)

    @property
    def r_values(self) -> np.ndarray:
        return np.array([r.R for r in self.ok_rows])

    def aggregates(self) -> dict:
        r = self.r_values
        if r.size == 0:
            return {"count": 0, "failures": self.failures, "r_min": math.nan, "r_mean": math.nan,
                    "r_max": math.nan}
        return {"count": int(r.size), "failures": self.failures, "r_min": float(r.min()),
                "r_mean": float(r.mean()), "r_max": float(r.max())}

    def histogram(self):
        """Counts of log10(R - 1) in ``HIST_EDGES`` plus (underflow, overflow)."""
        with np.errstate(divide="ignore", invalid="ignore"):
            x = np.log10(self.r_values - 1.0)
        counts, _ = np.histogram(x, bins=HIST_EDGES)
        under = int(np.sum(~(x >= HIST_EDGES[0])))
        over = int(np.sum(x > HIST_EDGES[-1]))
        return counts, under, over

    def split(self, fraction: float = 0.25):
        """Run indices of the lowest- and highest-R fractions (ties broken by run index)."""
        ok = sorted(self.ok_rows, key=lambda r: (r.R, r.run))
        n = max(int(round(fraction * len(ok))), 2)
        return [r.run for r in ok[:n]], [r.run for r in ok[-n:]]


def _fsync_append(path: Path, line: str):
    with open(path, "a", encoding="utf-8", newline="") as fh:
        fh.write(line)
        fh.flush()
        os.fsync(fh.fileno())


def _csv_line(cells) -> str:
    import io

    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerow(cells)
    return buf.getvalue()


def read_rows(path: Path) -> list:
    """Rows of a (possibly interrupted) runs.csv; a torn trailing line is ignored."""
    if not path.exists():
        return []
    text = path.read_text(encoding="utf-8")
    lines = text.splitlines(keepends=True)
    if lines and not lines[-1].endswith("\n"):
        lines = lines[:-1]
    reader = csv.DictReader(lines)
    rows = []
    for rec in reader:
        if None in rec or any(v is None for v in rec.values()):
            continue
        rows.append(RunRow.parse(rec))
    return rows


def field_path(out_dir: Path, run: int) -> Path:
    return Path(out_dir) / "fields" / f"run_{run:06d}.npy"


def execute_run(config: ExperimentConfig, index: int):
    """One normalize-and-climb run.  Returns the row and the (start, final) fields."""
    system = config.system.build()
    trans = config.transition.build()
    grid = config.system.grid
    flow = config.flow.build(config.batch.snapshot_stride)
    seed = config.batch.seed
    try:
        trial = synthesize_field(trial_params(seed, index), grid)
        p_trial = transition_probability(system, trial, trans)
        start = normalize_to_start(system, trans, trial, flow)
        traj = climb(system, trans, start, flow, provenance={"run": index, "seed": seed})
        m = compute_r(traj, system)
    except DmorphError as exc:
        log.warning("run %d failed: %s", index, exc)
        return RunRow(run=index, seed=seed, converged=False, error=f"{type(exc).__name__}: {exc}"), None
    row = RunRow(run=index, seed=seed, converged=True, R=m.r, d_PL=m.d_pl, d_EL=m.d_el, s_max=m.s_max,
                 steps=traj.steps, p_trial=p_trial, bound_ok=bool(m.bound_satisfied))
    return row, np.stack([traj.fields[0], traj.fields[-1]])


def _execute_star(args):
    return execute_run(*args)


def _manifest(config: ExperimentConfig, summary: BatchSummary) -> dict:
    return {
        "package": "dmorph",
        "version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "config": config.to_dict(),
        "seed_rule": "run i uses numpy.random.default_rng([batch.seed, i])",
        "runs": [r.run for r in summary.rows],
        "aggregates": summary.aggregates(),
        "histogram_edges": "log10(R-1), see histogram.csv",
    }


def write_histogram(summary: BatchSummary, path: Path):
    counts, under, over = summary.histogram()
    lines = ["bin_lo,bin_hi,count\n", f"-inf,{fmt(HIST_EDGES[0])},{under}\n"]
    for lo, hi, c in zip(HIST_EDGES[:-1], HIST_EDGES[1:], counts):
        lines.append(f"{fmt(lo)},{fmt(hi)},{int(c)}\n")
    lines.append(f"{fmt(HIST_EDGES[-1])},inf,{over}\n")
    Path(path).write_text("".join(lines), encoding="utf-8")


def write_rows(rows, path: Path):
    tmp = Path(str(path) + ".tmp")
    with open(tmp, "w", encoding="utf-8", newline="") as fh:
        fh.write(_csv_line(RUN_COLUMNS))
        for r in sorted(rows, key=lambda r: r.run):
            fh.write(_csv_line(r.cells()))
    os.replace(tmp, path)


def _run_identity(config: ExperimentConfig) -> dict:
    """The part of a config that determines each run's result."""
    d = config.to_dict()
    return {"system": d["system"], "transition": d["transition"], "flow": d["flow"],
            "seed": config.batch.seed, "snapshot_stride": config.batch.snapshot_stride}


def run_batch(config: ExperimentConfig, out_dir, max_new_runs: Optional[int] = None) -> BatchSummary:
    """Run (or resume) a batch.  ``max_new_runs`` stops early, leaving a resumable directory.

    Resuming with a config that would change individual runs raises DmorphError.
    """
    out = Path(out_dir)
    (out / "fields").mkdir(parents=True, exist_ok=True)
    ident_path = out / "batch_identity.json"
    ident = _run_identity(config)
    if ident_path.exists():
        if json.loads(ident_path.read_text(encoding="utf-8")) != ident:
            raise DmorphError(f"{out} holds runs made with a different configuration")
    else:
        ident_path.write_text(json.dumps(ident, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    runs_path = out / "runs.csv"
    done = {r.run: r for r in read_rows(runs_path)}
    # drop rows whose field file went missing; they are simply rerun
    done = {k: r for k, r in done.items() if not r.converged or field_path(out, k).exists()}
    write_rows(done.values(), runs_path)
    todo = [i for i in range(config.batch.runs) if i not in done]
    if max_new_runs is not None:
        todo = todo[:max_new_runs]

    def record(row, fields):
        if fields is not None:
            np.save(field_path(out, row.run), fields)
        _fsync_append(runs_path, _csv_line(row.cells()))
        done[row.run] = row
        log.info("run %d: R=%s", row.run, fmt(row.R))

    if config.batch.workers > 1 and len(todo) > 1:
        with ProcessPoolExecutor(config.batch.workers) as pool:
            for row, fields in pool.map(_execute_star, [(config, i) for i in todo]):
                record(row, fields)
    else:
        for i in todo:
            record(*execute_run(config, i))

    rows = sorted(done.values(), key=lambda r: r.run)
    summary = BatchSummary(rows=rows, config=config, out_dir=out)
    if len(rows) == config.batch.runs:
        write_rows(rows, runs_path)
        write_histogram(summary, out / "histogram.csv")
        (out / "manifest.json").write_text(json.dumps(_manifest(config, summary), indent=2, sort_keys=True)
                                           + "\n", encoding="utf-8")
    return summary


def load_summary(out_dir) -> BatchSummary:
    """Load a completed batch and check the manifest aggregates against the rows."""
    out = Path(out_dir)
    rows = read_rows(out / "runs.csv")
    summary = BatchSummary(rows=rows, out_dir=out)
    manifest_path = out / "manifest.json"
    if manifest_path.exists():
        stored = json.loads(manifest_path.read_text(encoding="utf-8"))["aggregates"]
        fresh = summary.aggregates()
        for key, value in stored.items():
            a, b = fresh[key], value
            same = (a == b) or (isinstance(a, float) and math.isnan(a) and b is not None and math.isnan(b))
            if not same:
                raise DmorphError(f"manifest aggregate {key}={b} does not match rows ({a})")
    return summary


def precision_sweep(config: ExperimentConfig, out_dir, cases=(1, 2, 3, 4)) -> dict:
    """Matched-seed batches for each named precision case, in ``case_<n>`` subdirectories."""
    results = {}
    for case in cases:
        cfg = config.replace("flow", precision_case=case, p_start=None, p_end=None)
        results[case] = run_batch(cfg, Path(out_dir) / f"case_{case}")
    return results


@dataclass(frozen=True)
class DistanceSet:
    runs: list
    mean_r: float
    initial_initial: np.ndarray
    final_final: np.ndarray
    initial_final: np.ndarray

    def means(self) -> dict:
        return {name: float(np.mean(getattr(self, name)))
                for name in ("initial_initial", "final_final", "initial_final")}


def _distance_set(summary: BatchSummary, runs) -> DistanceSet:
    grid = summary.config.system.grid if summary.config else None
    arrays = [np.load(field_path(summary.out_dir, k)) for k in runs]
    if grid is None:
        grid = TimeGrid(10.0, arrays[0].shape[1] - 1)
    starts = [ControlField(grid, a[0]) for a in arrays]
    finals = [ControlField(grid, a[1]) for a in arrays]
    cross = cross_distances(starts, finals)
    off_diag = cross[~np.eye(len(runs), dtype=bool)]
    r_by_run = {r.run: r.R for r in summary.rows}
    return DistanceSet(
        runs=list(runs),
        mean_r=float(np.mean([r_by_run[k] for k in runs])),
        initial_initial=upper_values(pairwise_distances(starts)),
        final_final=upper_values(pairwise_distances(finals)),
        initial_final=off_diag,
    )


def split_distance_analysis(summary: BatchSummary, fraction: float = 0.25, write: bool = True):
    """Pairwise distance populations for the lowest- and highest-R subsets.

    ``initial_final`` uses every ordered pair (i, j) with i != j, so it excludes
    each run's own start-to-end distance.
    """
    low, high = summary.split(fraction)
    if len(low) < 2:
        raise DmorphError("each subset needs at least two runs")
    result = {"low": _distance_set(summary, low), "high": _distance_set(summary, high)}
    if write and summary.out_dir is not None:
        for name, ds in result.items():
            lines = ["population,distance\n"]
            for pop in ("initial_initial", "final_final", "initial_final"):
                lines.extend(f"{pop},{fmt(v)}\n" for v in getattr(ds, pop))
            (Path(summary.out_dir) / f"distances_{name}.csv").write_text("".join(lines), encoding="utf-8")
    return result


def _float_representer(dumper, value):
    if math.isnan(value):
        text = ".nan"
    elif math.isinf(value):
        text = ".inf" if value > 0 else "-.inf"
    else:
        text = format(value, ".17g")
        if "." not in text and "e" not in text and "n" not in text:
            text += ".0"
    return dumper.represent_scalar("tag:yaml.org,2002:float", text)


class _Dumper(yaml.SafeDumper):
    pass


_Dumper.add_representer(float, _float_representer)


def dump_yaml(data) -> str:
    return yaml.dump(data, Dumper=_Dumper, sort_keys=False, default_flow_style=None)


def params_document(params: FieldParametrization, config: ExperimentConfig, r: Optional[float] = None,
                    note: str = "") -> dict:
    doc = {
        "field": {"amplitudes": [float(x) for x in params.amplitudes],
                  "phases": [float(x) for x in params.phases]},
        "system": asdict(config.system),
        "transition": asdict(config.transition),
        "flow": asdict(config.flow),
    }
    if r is not None:
        doc["logged"] = {"R": float(r), "note": note}
    return doc


def write_params(path, params, config, r=None, note=""):
    Path(path).write_text(dump_yaml(params_document(params, config, r, note)), encoding="utf-8")


def read_params(path):
    """Inverse of :func:`write_params`: (params, config, logged R or None)."""
    from .config import parse_config

    doc = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    params = FieldParametrization(doc["field"]["amplitudes"], doc["field"]["phases"])
    sections = {k: doc[k] for k in ("system", "transition", "flow") if k in doc}
    config = parse_config(dump_yaml(sections))
    logged = doc.get("logged", {}).get("R")
    return params, config, logged


def replay(path) -> tuple:
    """Re-run the evaluation stored in a parameter document; returns (R, logged R)."""
    params, config, logged = read_params(path)
    ev = evaluate_particle(config.system.build(), config.transition.build(), params.to_vector(),
                           config.flow.build(1), config.system.grid)
    return ev.r, logged


SWARM_COLUMNS = ["generation", "particle", "ok", "R", "best_so_far", "steps", "error"]


def write_swarm(state, path):
    lines = [_csv_line(SWARM_COLUMNS)]
    for e in state.log:
        ev = e.evaluation
        lines.append(_csv_line([e.generation, e.particle, fmt(ev.ok), fmt(ev.r), fmt(e.best_so_far),
                                ev.steps, ev.message]))
    Path(path).write_text("".join(lines), encoding="utf-8")


def run_pso_experiment(config: ExperimentConfig, out_dir, on_generation=None):
    """Swarm search with the config's PSO section; writes swarm.csv and best_params.yaml."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    state = run_swarm(config.system.build(), config.transition.build(), config.pso,
                      config.flow.build(1), config.system.grid, on_generation=on_generation)
    write_swarm(state, out / "swarm.csv")
    write_params(out / "best_params.yaml", state.best_params, config, state.best_value,
                 note=f"pso sense={config.pso.sense} seed={config.pso.seed}")
    summary = {
        "sense": config.pso.sense,
        "best_R": state.best_value,
        "best_history": state.best_history,
        "diversity": state.diversity,
        "evaluations": len(state.log),
        "failures": sum(not e.evaluation.ok for e in state.log),
    }
    (out / "pso_summary.json").write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
    return state
