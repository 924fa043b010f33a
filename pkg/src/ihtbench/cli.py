"""Command-line driver: ihtbench solve | grid | basin2d.

Exit codes: 0 success, 2 usage or config error, 3 runtime failure.
"""
import argparse
import dataclasses
import json
import logging
import os
import secrets
import sys

import numpy as np

from . import __version__
from .basin2d import BasinStudyConfig, run_basin_study
from .experiments import (GridConfig, aggregate_csv, fmt_float, manifest_line, mu_key,
                          read_aggregate, run_grid, runs_csv, summary_json)
from .parametric import TrainConfig, TrainingDiverged, train
from .problems import MatrixEnsemble, RngState, make_instance
from .render import basin_map_svg, grid_heatmaps
from .solvers import IhtConfig, NoisyIhtConfig, refine, resolve_tau, run_iht, run_noisy_iht

log = logging.getLogger("ihtbench")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 2, 3


class UsageError(Exception):
    pass


def read_config(path):
    """Flat ``key = value`` file; ``#`` starts a comment, lists are comma separated."""
    out = {}
    try:
        with open(path) as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    for no, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{no}: expected 'key = value'")
        key, val = (t.strip() for t in line.split("=", 1))
        out[key.replace("-", "_")] = val
    return out


def _parse_bool(text):
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def coerce(default, text):
    """Parse `text` to the type of `default`."""
    if isinstance(default, bool):
        return _parse_bool(text)
    if isinstance(default, int):
        return int(text)
    if isinstance(default, float):
        return float(text)
    if isinstance(default, tuple):
        items = [t.strip() for t in text.split(",") if t.strip()]
        elem = default[0] if default else ""
        return tuple(coerce(elem, t) for t in items)
    if default == "auto":
        return "auto" if text.strip() == "auto" else float(text)
    return text.strip()


def build_config(cls, settings):
    defaults = {f.name: f.default for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, text in settings.items():
        if key not in defaults:
            raise UsageError(f"unknown config key {key!r} for {cls.__name__}")
        try:
            kwargs[key] = coerce(defaults[key], text)
        except ValueError as exc:
            raise UsageError(f"bad value for {key}: {exc}") from exc
    try:
        return cls(**kwargs)
    except (ValueError, TypeError) as exc:
        raise UsageError(str(exc)) from exc


def _jsonable(obj):
    if isinstance(obj, tuple):
        return [_jsonable(x) for x in obj]
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    return obj


def make_manifest(subcommand, seed, config, outputs):
    return {
        "tool": "ihtbench",
        "version": __version__,
        "subcommand": subcommand,
        "seed": seed,
        "config": _jsonable(config),
        "outputs": sorted(outputs),
    }


def prepare_outdir(path):
    try:
        os.makedirs(path, exist_ok=True)
        probe = os.path.join(path, ".write-probe")
        with open(probe, "w") as fh:
            fh.write("")
        os.remove(probe)
    except OSError as exc:
        raise RuntimeError(f"output directory {path!r} is not writable: {exc}") from exc


def write_text(outdir, name, text):
    with open(os.path.join(outdir, name), "w", newline="") as fh:
        fh.write(text)


def resolve_seed(seed):
    if seed is None:
        seed = secrets.randbits(63)
        log.warning("no --seed given; using generated seed %d", seed)
    return seed


# ----------------------------------------------------------------------- solve

def cmd_solve(args):
    seed = resolve_seed(args.seed)
    try:
        ens = MatrixEnsemble(args.ensemble, args.m, args.n, normalized=not args.raw_scale)
        rng = RngState(seed).child(args.m, mu_key(args.mu), 0)
        p = make_instance(ens, args.mu, rng.child(0))
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    tau = resolve_tau(p.A, "auto")
    ncfg = NoisyIhtConfig(rounds=args.rounds, iters_per_round=args.iters_per_round,
                          sigma=args.sigma, inner=IhtConfig(tau=tau))
    if args.method == "iht":
        raw = run_iht(p, IhtConfig(tau=tau, max_iters=args.rounds * args.iters_per_round))
    else:
        raw = run_noisy_iht(p, ncfg, rng.child(1))
        if args.method == "parametric":
            tcfg = TrainConfig(iterations=args.train_iterations, learning_rate=args.learning_rate,
                               momentum=args.momentum, dropout_rate=args.dropout_rate)
            raw = train(p, raw.u, tcfg, tau, rng.child(2))
    res = refine(p, raw)
    rel = float(np.sum((res.u - p.u_gen) ** 2) / np.sum(p.u_gen ** 2))
    doc = {
        "method": args.method,
        "ensemble": args.ensemble,
        "m": p.m, "n": p.n, "mu": args.mu, "s": p.s,
        "seed": seed,
        "tau": tau,
        "objective": res.objective,
        "unrefined_objective": raw.objective,
        "support_size": int(res.support.size),
        "rel_recovery_error": rel,
        "iterations": res.iterations_run,
    }
    if args.method == "parametric":
        doc["training_initial_loss"] = raw.meta["initial_loss"]
        doc["training_final_loss"] = raw.meta["final_loss"]
    sys.stdout.write(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return EXIT_OK


# ------------------------------------------------------------------------ grid

GRID_FLAGS = {"runs": "runs_per_cell", "m_values": "m_values", "mu_values": "mu_values",
              "n": "n", "ensemble": "ensemble", "methods": "methods",
              "threshold": "failure_threshold"}


def grid_outputs(metrics, manifest_for):
    """All grid files as ``{name: text}``; `manifest_for` gives the manifest."""
    files = {
        "runs.csv": runs_csv(metrics, manifest_for),
        "aggregate.csv": aggregate_csv(metrics, manifest_for),
        "summary.json": summary_json(metrics, manifest_for),
    }
    _, cells = read_aggregate(files["aggregate.csv"])
    files.update(grid_heatmaps(cells, manifest_for))
    return files


def render_from_aggregate(text):
    """Re-render the heatmaps from an aggregate CSV written by ``grid``."""
    manifest, cells = read_aggregate(text)
    return grid_heatmaps(cells, manifest)


def cmd_grid(args):
    settings = read_config(args.config) if args.config else {}
    for flag, key in GRID_FLAGS.items():
        val = getattr(args, flag)
        if val is not None:
            settings[key] = str(val)
    if args.record_timing:
        settings["record_timing"] = "true"
    if args.seed is not None:
        settings["seed"] = str(args.seed)
    elif "seed" not in settings:
        settings["seed"] = str(resolve_seed(None))
    cfg = build_config(GridConfig, settings)
    prepare_outdir(args.out)

    names = ["runs.csv", "aggregate.csv", "summary.json"]
    methods = [m for m in ("iht", "noisy", "parametric") if m in cfg.methods]
    names += [f"heatmap_{metric}_{m}.svg"
              for metric in ("mean_objective_error", "failure_count", "mean_rel_recovery_error")
              for m in methods]
    manifest = make_manifest("grid", cfg.seed, cfg.as_dict(), names)
    total = len(cfg.m_values) * len(cfg.mu_values) * cfg.runs_per_cell
    done = [0]

    def progress(rows):
        done[0] += 1
        log.info("run %d/%d (m=%d, mu=%s) done", done[0], total, rows[0].m, rows[0].mu)

    metrics = run_grid(cfg, jobs=args.jobs, progress=progress)
    for name, text in grid_outputs(metrics, manifest).items():
        write_text(args.out, name, text)
    sys.stdout.write(json.dumps({"seed": cfg.seed, "out": args.out,
                                 "overall_mean_objective_error": metrics.overall},
                                indent=2, sort_keys=True) + "\n")
    return EXIT_OK


# --------------------------------------------------------------------- basin2d

BASIN_FLAGS = {"num_settings": "num_settings", "grid_points": "grid_points_per_axis",
               "max_iters": "max_iters", "step_norm": "step_norm", "tau_scale": "tau_scale"}

SETTING_COLUMNS = ("setting", "tau", "num_fixed_points", "two_minima", "eligible",
                   "unconverged", "global_x", "global_y", "global_objective",
                   "local_x", "local_y", "local_objective",
                   "d_global_to_local_region", "d_local_to_global_region",
                   "witness_global_to_local", "witness_local_to_global")


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, float):
        return fmt_float(v)
    return str(v)


def setting_row(rep):
    g = next((fp for fp in rep.fixed_points if fp.is_global), None)
    loc = next((fp for fp in rep.fixed_points if not fp.is_global), None) \
        if rep.eligible else None
    return [rep.setting_id, rep.tau, len(rep.fixed_points), rep.two_minima, rep.eligible,
            rep.unconverged,
            None if g is None else float(g.location[0]),
            None if g is None else float(g.location[1]),
            None if g is None else g.objective,
            None if loc is None else float(loc.location[0]),
            None if loc is None else float(loc.location[1]),
            None if loc is None else loc.objective,
            rep.d_global_to_local_region, rep.d_local_to_global_region,
            rep.witness_global_to_local, rep.witness_local_to_global]


def settings_csv(reports, manifest):
    lines = [manifest_line(manifest), ",".join(SETTING_COLUMNS) + "\n"]
    for rep in reports:
        lines.append(",".join(_fmt(v) for v in setting_row(rep)) + "\n")
    return "".join(lines)


def labels_csv(rep, manifest):
    """Label grid as text: comment lines carry the grid and the fixed points."""
    fps = [{"location": [float(x) for x in fp.location], "objective": fp.objective,
            "is_global": bool(fp.is_global), "basin_size": fp.basin_size}
           for fp in rep.fixed_points]
    lines = [manifest_line(manifest),
             "# grid: " + json.dumps([float(rep.grid[0]), float(rep.grid[-1]), len(rep.grid)]) + "\n",
             "# fixed_points: " + json.dumps(fps, sort_keys=True) + "\n"]
    for row in rep.labels:
        lines.append(",".join(str(int(v)) for v in row) + "\n")
    return "".join(lines)


def read_labels_csv(text):
    manifest, grid, fps, rows = None, None, None, []
    for line in text.splitlines():
        if line.startswith("# manifest: "):
            manifest = json.loads(line[len("# manifest: "):])
        elif line.startswith("# grid: "):
            lo, hi, k = json.loads(line[len("# grid: "):])
            grid = np.linspace(lo, hi, k)
        elif line.startswith("# fixed_points: "):
            fps = json.loads(line[len("# fixed_points: "):])
        elif line.strip():
            rows.append([int(t) for t in line.split(",")])
    return manifest, grid, fps, np.array(rows)


def render_basin_from_labels(text, setting_id):
    manifest, grid, fps, labels = read_labels_csv(text)
    return basin_map_svg(labels, grid, fps, manifest, title=f"setting {setting_id}")


def cmd_basin2d(args):
    settings = read_config(args.config) if args.config else {}
    render = settings.pop("render", "")
    seed_text = settings.pop("seed", None)
    for flag, key in BASIN_FLAGS.items():
        val = getattr(args, flag)
        if val is not None:
            settings[key] = str(val)
    if args.render is not None:
        render = args.render
    try:
        render_ids = sorted({int(t) for t in str(render).split(",") if t.strip()})
    except ValueError as exc:
        raise UsageError(f"bad --render list: {exc}") from exc
    if args.seed is not None:
        seed = args.seed
    elif seed_text is not None:
        seed = int(seed_text)
    else:
        seed = resolve_seed(None)
    cfg = build_config(BasinStudyConfig, settings)
    bad = [i for i in render_ids if not 0 <= i < cfg.num_settings]
    if bad:
        raise UsageError(f"--render ids {bad} outside 0..{cfg.num_settings - 1}")
    prepare_outdir(args.out)

    names = ["basin_summary.json", "basin_settings.csv"]
    names += [f"basin_labels_{i}.csv" for i in render_ids]
    names += [f"basin_map_{i}.svg" for i in render_ids]
    conf = dataclasses.asdict(cfg)
    conf["render"] = render_ids
    manifest = make_manifest("basin2d", seed, conf, names)

    def progress(rep):
        if (rep.setting_id + 1) % 50 == 0:
            log.info("setting %d/%d done", rep.setting_id + 1, cfg.num_settings)

    summary = run_basin_study(cfg, RngState(seed), jobs=args.jobs, progress=progress)
    doc = dict(summary.as_dict(), manifest=manifest)
    write_text(args.out, "basin_summary.json", json.dumps(doc, indent=2, sort_keys=True) + "\n")
    write_text(args.out, "basin_settings.csv", settings_csv(summary.reports, manifest))
    for i in render_ids:
        text = labels_csv(summary.reports[i], manifest)
        write_text(args.out, f"basin_labels_{i}.csv", text)
        write_text(args.out, f"basin_map_{i}.svg", render_basin_from_labels(text, i))
    sys.stdout.write(json.dumps(summary.as_dict(), indent=2, sort_keys=True) + "\n")
    return EXIT_OK


# ---------------------------------------------------------------------- parser

def _common(p):
    p.add_argument("--seed", type=int, default=None, help="master seed (unsigned 64-bit)")
    p.add_argument("--jobs", type=int, default=1, help="worker processes")
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--config", default=None, help="flat key = value config file")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser():
    ap = argparse.ArgumentParser(prog="ihtbench", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", help="solve one random instance and print a JSON summary")
    _common(s)
    s.add_argument("--ensemble", default="gaussian",
                   choices=("gaussian", "bernoulli", "subsampled_dct"))
    s.add_argument("--m", type=int, required=True)
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--mu", type=float, required=True)
    s.add_argument("--method", required=True, choices=("iht", "noisy", "parametric"))
    s.add_argument("--rounds", type=int, default=5)
    s.add_argument("--iters-per-round", type=int, default=600)
    s.add_argument("--sigma", type=float, default=0.025)
    s.add_argument("--train-iterations", type=int, default=2000)
    s.add_argument("--learning-rate", type=float, default=1e-4)
    s.add_argument("--momentum", type=float, default=0.9)
    s.add_argument("--dropout-rate", type=float, default=0.05)
    s.add_argument("--raw-scale", action="store_true",
                   help="do not scale Gaussian/Bernoulli entries by 1/sqrt(m)")
    s.set_defaults(func=cmd_solve)

    g = sub.add_parser("grid", help="run the (m, mu) sweep")
    _common(g)
    g.add_argument("--runs", type=int, default=None)
    g.add_argument("--m-values", default=None, help="comma separated")
    g.add_argument("--mu-values", default=None, help="comma separated")
    g.add_argument("--n", type=int, default=None)
    g.add_argument("--ensemble", default=None)
    g.add_argument("--methods", default=None, help="comma separated subset of iht,noisy,parametric")
    g.add_argument("--threshold", type=float, default=None, help="failure threshold")
    g.add_argument("--record-timing", action="store_true",
                   help="fill the wall_ms column (makes outputs run-dependent)")
    g.set_defaults(func=cmd_grid)

    b = sub.add_parser("basin2d", help="run the 2D basin-of-attraction study")
    _common(b)
    b.add_argument("--num-settings", type=int, default=None)
    b.add_argument("--grid-points", type=int, default=None)
    b.add_argument("--max-iters", type=int, default=None)
    b.add_argument("--step-norm", choices=("spectral", "frobenius"), default=None)
    b.add_argument("--tau-scale", type=float, default=None)
    b.add_argument("--render", default=None, help="comma separated setting ids to draw")
    b.set_defaults(func=cmd_basin2d)
    return ap


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    if args.jobs < 1:
        parser.print_usage(sys.stderr)
        print("ihtbench: error: --jobs must be at least 1", file=sys.stderr)
        return EXIT_USAGE
    if args.seed is not None and not 0 <= args.seed < 2 ** 64:
        parser.print_usage(sys.stderr)
        print("ihtbench: error: --seed must be an unsigned 64-bit integer", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"ihtbench: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TrainingDiverged as exc:
        print(f"ihtbench: training aborted: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except RuntimeError as exc:
        print(f"ihtbench: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
