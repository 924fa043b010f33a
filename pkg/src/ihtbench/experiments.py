"""Grid sweep over (m, mu) comparing IHT, noisy IHT and parametric IHT."""
import csv
import io
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .parametric import TrainConfig, TrainingDiverged, train
from .problems import MatrixEnsemble, RngState, make_instance
from .solvers import IhtConfig, NoisyIhtConfig, refine, resolve_tau, run_iht, run_noisy_iht

METHODS = ("iht", "noisy", "parametric")

RUN_COLUMNS = ("method", "m", "mu", "s", "run", "objective_error", "failure",
               "rel_recovery_error", "iterations", "wall_ms", "aborted")
AGGREGATE_COLUMNS = ("method", "m", "mu", "s", "runs", "mean_objective_error",
                     "failure_count", "mean_rel_recovery_error")

# consumer ids inside one (m, mu, run) stream
INSTANCE_STREAM, NOISY_STREAM, TRAIN_STREAM = 0, 1, 2


@dataclass(frozen=True)
class GridConfig:
    n: int = 200
    m_values: tuple = (50, 60, 70, 80, 90, 100, 110, 120)
    mu_values: tuple = (0.025, 0.05, 0.075, 0.1, 0.125, 0.15, 0.175, 0.2)
    runs_per_cell: int = 20
    ensemble: str = "gaussian"
    normalized: bool = True
    methods: tuple = METHODS
    failure_threshold: float = 0.03
    seed: int = 0
    tau: object = "auto"
    rounds: int = 5
    iters_per_round: int = 600
    sigma: float = 0.025
    momentum: float = 0.9
    learning_rate: float = 1e-4
    train_iterations: int = 2000
    dropout_rate: float = 0.05
    threshold_grad: str = "indicator"
    record_timing: bool = False

    def __post_init__(self):
        if not self.m_values or not self.mu_values or not self.methods:
            raise ValueError("m_values, mu_values and methods must be non-empty")
        if self.runs_per_cell < 1:
            raise ValueError("runs_per_cell must be at least 1")
        if not self.failure_threshold > 0:
            raise ValueError("failure_threshold must be positive")
        bad = set(self.methods) - set(METHODS)
        if bad:
            raise ValueError(f"unknown methods {sorted(bad)}")
        # validate the derived solver configs early
        self.noisy_config()
        self.train_config()

    @property
    def iht_iterations(self):
        # equal budget with noisy IHT
        return self.rounds * self.iters_per_round

    def noisy_config(self):
        return NoisyIhtConfig(rounds=self.rounds, iters_per_round=self.iters_per_round,
                              sigma=self.sigma, inner=IhtConfig(tau=self.tau))

    def train_config(self):
        return TrainConfig(momentum=self.momentum, learning_rate=self.learning_rate,
                           iterations=self.train_iterations, dropout_rate=self.dropout_rate,
                           threshold_grad=self.threshold_grad)

    def stream(self, m, mu, run):
        return RngState(self.seed).child(m, mu_key(mu), run)

    def as_dict(self):
        d = asdict(self)
        for k in ("m_values", "mu_values", "methods"):
            d[k] = list(d[k])
        return d


def mu_key(mu):
    """Integer stream key for a relative sparsity (parts per million)."""
    return int(round(mu * 1_000_000))


@dataclass
class RunRow:
    method: str
    m: int
    mu: float
    s: int
    run: int
    objective_error: float
    failure: int
    rel_recovery_error: float
    iterations: int
    wall_ms: Optional[float] = None
    aborted: int = 0


@dataclass
class CellMetrics:
    s: int
    runs: int
    mean_objective_error: float
    failure_count: int
    mean_rel_recovery_error: float


@dataclass
class GridMetrics:
    config: GridConfig
    rows: list
    # (method, m, mu) -> CellMetrics
    cells: dict = field(default_factory=dict)
    # method -> mean of the cell means
    overall: dict = field(default_factory=dict)


def _row(cfg, method, m, mu, run, p, res, wall_ms=None, aborted=False):
    err = res.objective
    rel = float(np.sum((res.u - p.u_gen) ** 2) / np.sum(p.u_gen ** 2))
    return RunRow(method=method, m=m, mu=mu, s=p.s, run=run, objective_error=err,
                  failure=int(err > cfg.failure_threshold), rel_recovery_error=rel,
                  iterations=res.iterations_run,
                  wall_ms=wall_ms if cfg.record_timing else None, aborted=int(aborted))


def run_cell(cfg, m, mu, run_idx):
    """Solve one random instance with every configured method.

    Returns ``(results, rows)``: refined :class:`SolverResult` objects keyed
    by method, and one :class:`RunRow` per reported method. The parametric
    method warm-starts from this run's noisy-IHT output.
    """
    base = cfg.stream(m, mu, run_idx)
    ens = MatrixEnsemble(cfg.ensemble, m, cfg.n, normalized=cfg.normalized)
    p = make_instance(ens, mu, base.child(INSTANCE_STREAM))
    tau = resolve_tau(p.A, cfg.tau)
    results, rows, walls = {}, [], {}
    aborted = False

    def timed(fn, *args, **kw):
        t0 = time.perf_counter()
        out = fn(*args, **kw)
        return out, (time.perf_counter() - t0) * 1000.0

    if "iht" in cfg.methods:
        raw, walls["iht"] = timed(run_iht, p, IhtConfig(tau=tau, max_iters=cfg.iht_iterations))
        results["iht"] = refine(p, raw)
    if "noisy" in cfg.methods or "parametric" in cfg.methods:
        ncfg = NoisyIhtConfig(rounds=cfg.rounds, iters_per_round=cfg.iters_per_round,
                              sigma=cfg.sigma, inner=IhtConfig(tau=tau))
        warm, walls["noisy"] = timed(run_noisy_iht, p, ncfg, base.child(NOISY_STREAM))
        results["noisy"] = refine(p, warm)
    if "parametric" in cfg.methods:
        t0 = time.perf_counter()
        try:
            trained = train(p, warm.u, cfg.train_config(), tau, base.child(TRAIN_STREAM))
            results["parametric"] = refine(p, trained)
        except TrainingDiverged as exc:
            aborted = True
            fallback = refine(p, warm)
            fallback.method = "parametric"
            fallback.meta["abort"] = str(exc)
            results["parametric"] = fallback
        walls["parametric"] = (time.perf_counter() - t0) * 1000.0
    for method in METHODS:
        if method in cfg.methods:
            rows.append(_row(cfg, method, m, mu, run_idx, p, results[method],
                             walls.get(method),
                             aborted=aborted and method == "parametric"))
    return results, rows


def _cell_task(args):
    cfg, m, mu, run = args
    return run_cell(cfg, m, mu, run)[1]


def cell_order(cfg):
    return [(m, mu, run) for m in cfg.m_values for mu in cfg.mu_values
            for run in range(cfg.runs_per_cell)]


def run_grid(cfg, jobs=1, progress=None):
    """Run every (m, mu, run) of the grid and aggregate.

    Output is identical for any `jobs`: each run owns its RNG stream and the
    reduction happens in a fixed (method, m, mu, run) order.
    """
    tasks = [(cfg, m, mu, run) for m, mu, run in cell_order(cfg)]
    collected = []
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            for rows in ex.map(_cell_task, tasks):
                collected.extend(rows)
                if progress:
                    progress(rows)
    else:
        for t in tasks:
            rows = _cell_task(t)
            collected.extend(rows)
            if progress:
                progress(rows)
    return aggregate(cfg, collected)


def aggregate(cfg, rows):
    midx = {m: i for i, m in enumerate(METHODS)}
    rows = sorted(rows, key=lambda r: (midx[r.method], r.m, r.mu, r.run))
    cells = {}
    for method in (m for m in METHODS if m in cfg.methods):
        for m in cfg.m_values:
            for mu in cfg.mu_values:
                rs = [r for r in rows if r.method == method and r.m == m and r.mu == mu]
                if not rs:
                    continue
                cells[(method, m, mu)] = CellMetrics(
                    s=rs[0].s, runs=len(rs),
                    mean_objective_error=float(np.mean([r.objective_error for r in rs])),
                    failure_count=sum(r.failure for r in rs),
                    mean_rel_recovery_error=float(np.mean([r.rel_recovery_error for r in rs])),
                )
    overall = {}
    for method in (m for m in METHODS if m in cfg.methods):
        means = [c.mean_objective_error for k, c in cells.items() if k[0] == method]
        overall[method] = float(np.mean(means))
    return GridMetrics(config=cfg, rows=rows, cells=cells, overall=overall)


# ---------------------------------------------------------------- serialization

def fmt_float(x):
    return format(x, ".17g")


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return fmt_float(v)
    return str(v)


def manifest_line(manifest):
    return "# manifest: " + json.dumps(manifest, sort_keys=True) + "\n"


def _csv_text(manifest, columns, records):
    buf = io.StringIO()
    if manifest is not None:
        buf.write(manifest_line(manifest))
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for rec in records:
        w.writerow([_fmt(v) for v in rec])
    return buf.getvalue()


def runs_csv(metrics, manifest=None):
    recs = [[getattr(r, c) for c in RUN_COLUMNS] for r in metrics.rows]
    return _csv_text(manifest, RUN_COLUMNS, recs)


def aggregate_csv(metrics, manifest=None):
    recs = [[method, m, mu, c.s, c.runs, c.mean_objective_error, c.failure_count,
             c.mean_rel_recovery_error]
            for (method, m, mu), c in metrics.cells.items()]
    return _csv_text(manifest, AGGREGATE_COLUMNS, recs)


def summary_json(metrics, manifest=None):
    doc = {
        "manifest": manifest,
        "overall_mean_objective_error": metrics.overall,
        "table1_avg_100x_objective_error": {k: 100.0 * v for k, v in metrics.overall.items()},
        "cells": len(metrics.cells),
        "runs": len(metrics.rows),
        "aborted_runs": sum(r.aborted for r in metrics.rows),
    }
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def read_csv(text):
    """Parse a CSV written by this module; returns ``(manifest, rows)``."""
    manifest = None
    body = []
    for line in text.splitlines(keepends=True):
        if line.startswith("# manifest: "):
            manifest = json.loads(line[len("# manifest: "):])
        elif not line.startswith("#"):
            body.append(line)
    return manifest, list(csv.DictReader(body))


def read_aggregate(text):
    """Aggregate CSV back into ``(manifest, {(method, m, mu): row dict})``."""
    manifest, rows = read_csv(text)
    out = {}
    for r in rows:
        out[(r["method"], int(r["m"]), float(r["mu"]))] = {
            "s": int(r["s"]),
            "runs": int(r["runs"]),
            "mean_objective_error": float(r["mean_objective_error"]),
            "failure_count": int(r["failure_count"]),
            "mean_rel_recovery_error": float(r["mean_rel_recovery_error"]),
        }
    return manifest, out
