import json

import numpy as np
import pytest

from ihtbench.experiments import (GridConfig, RunRow, aggregate, aggregate_csv, mu_key,
                                  read_aggregate, read_csv, run_cell, run_grid, runs_csv,
                                  summary_json)
from ihtbench.problems import MatrixEnsemble, make_instance
from ihtbench.solvers import IhtConfig, NoisyIhtConfig, refine, resolve_tau, run_iht, run_noisy_iht

TINY = GridConfig(n=40, m_values=(16, 20), mu_values=(0.05, 0.1), runs_per_cell=2, seed=3,
                  rounds=2, iters_per_round=60, train_iterations=30)


@pytest.fixture(scope="module")
def tiny_metrics():
    return run_grid(TINY)


def test_mu_key():
    assert mu_key(0.025) == 25000
    assert mu_key(0.1) == mu_key(0.30000000000000004 / 3)


def test_fair_budget():
    assert TINY.iht_iterations == TINY.rounds * TINY.iters_per_round
    assert GridConfig().iht_iterations == 3000


def test_methods_share_instance_and_warm_start():
    results, rows = run_cell(TINY, 20, 0.1, 1)
    assert [r.method for r in rows] == ["iht", "noisy", "parametric"]
    assert len({r.s for r in rows}) == 1
    # rebuild the pieces from the documented streams
    base = TINY.stream(20, 0.1, 1)
    p = make_instance(MatrixEnsemble("gaussian", 20, 40), 0.1, base.child(0))
    tau = resolve_tau(p.A, "auto")
    iht = refine(p, run_iht(p, IhtConfig(tau=tau, max_iters=TINY.iht_iterations)))
    assert np.array_equal(results["iht"].u, iht.u)
    noisy = run_noisy_iht(p, NoisyIhtConfig(rounds=2, iters_per_round=60, inner=IhtConfig(tau=tau)),
                          base.child(1))
    assert np.array_equal(results["noisy"].u, refine(p, noisy).u)
    assert rows[1].iterations == rows[0].iterations == 120


def test_row_metrics_definitions():
    results, rows = run_cell(TINY, 16, 0.05, 0)
    p = make_instance(MatrixEnsemble("gaussian", 16, 40), 0.05, TINY.stream(16, 0.05, 0).child(0))
    for r in rows:
        res = results[r.method]
        assert r.objective_error == res.objective
        assert r.failure == int(res.objective > 0.03)
        rel = np.sum((res.u - p.u_gen) ** 2) / np.sum(p.u_gen ** 2)
        assert r.rel_recovery_error == pytest.approx(rel, rel=1e-12)
        assert r.wall_ms is None and r.aborted == 0


def test_methods_subset():
    cfg = GridConfig(n=40, m_values=(16,), mu_values=(0.1,), runs_per_cell=1, methods=("iht",),
                     rounds=2, iters_per_round=20)
    results, rows = run_cell(cfg, 16, 0.1, 0)
    assert list(results) == ["iht"] and len(rows) == 1


def test_record_timing_fills_wall_ms():
    cfg = GridConfig(n=40, m_values=(16,), mu_values=(0.1,), runs_per_cell=1, rounds=1,
                     iters_per_round=10, train_iterations=5, record_timing=True)
    _, rows = run_cell(cfg, 16, 0.1, 0)
    assert all(r.wall_ms is not None and r.wall_ms >= 0 for r in rows)


def test_training_abort_falls_back(monkeypatch):
    cfg = GridConfig(n=40, m_values=(16,), mu_values=(0.1,), runs_per_cell=1, rounds=1,
                     iters_per_round=30, train_iterations=200, learning_rate=1e6, momentum=0.99)
    results, rows = run_cell(cfg, 16, 0.1, 0)
    assert rows[2].aborted == 1
    assert np.array_equal(results["parametric"].u, results["noisy"].u)


def test_singleton_aggregate_equals_row():
    row = RunRow(method="iht", m=16, mu=0.1, s=4, run=0, objective_error=0.125, failure=1,
                 rel_recovery_error=0.5, iterations=10)
    cfg = GridConfig(m_values=(16,), mu_values=(0.1,), runs_per_cell=1, methods=("iht",))
    gm = aggregate(cfg, [row])
    c = gm.cells[("iht", 16, 0.1)]
    assert (c.runs, c.mean_objective_error, c.failure_count) == (1, 0.125, 1)
    assert c.mean_rel_recovery_error == 0.5
    assert gm.overall["iht"] == 0.125


def test_overall_is_mean_of_cell_means(tiny_metrics):
    for method in ("iht", "noisy", "parametric"):
        cell_means = [c.mean_objective_error for k, c in tiny_metrics.cells.items()
                      if k[0] == method]
        assert len(cell_means) == 4
        assert abs(tiny_metrics.overall[method] - sum(cell_means) / 4) <= 1e-12
    assert len(tiny_metrics.rows) == 3 * 2 * 2 * 2


def test_aggregate_ignores_row_order(tiny_metrics):
    shuffled = list(tiny_metrics.rows)[::-1]
    again = aggregate(TINY, shuffled)
    assert aggregate_csv(again) == aggregate_csv(tiny_metrics)


def test_parallel_equals_serial(tiny_metrics):
    par = run_grid(TINY, jobs=2)
    assert runs_csv(par) == runs_csv(tiny_metrics)
    assert aggregate_csv(par) == aggregate_csv(tiny_metrics)


def test_csv_round_trip(tiny_metrics):
    manifest = {"seed": 3}
    text = runs_csv(tiny_metrics, manifest)
    assert text.startswith("# manifest: ")
    man, rows = read_csv(text)
    assert man == manifest and len(rows) == len(tiny_metrics.rows)
    for parsed, row in zip(rows, tiny_metrics.rows):
        assert float(parsed["objective_error"]) == row.objective_error
        assert float(parsed["mu"]) == row.mu
        assert parsed["wall_ms"] == ""
    man, cells = read_aggregate(aggregate_csv(tiny_metrics, manifest))
    for key, c in tiny_metrics.cells.items():
        assert cells[key]["mean_objective_error"] == c.mean_objective_error
        assert cells[key]["failure_count"] == c.failure_count


def test_summary_json(tiny_metrics):
    doc = json.loads(summary_json(tiny_metrics, {"seed": 3}))
    for method, v in tiny_metrics.overall.items():
        assert doc["overall_mean_objective_error"][method] == v
        assert doc["table1_avg_100x_objective_error"][method] == pytest.approx(100 * v)
    assert doc["runs"] == 24 and doc["cells"] == 12 and doc["aborted_runs"] == 0


def test_grid_config_validation():
    with pytest.raises(ValueError):
        GridConfig(methods=("lasso",))
    with pytest.raises(ValueError):
        GridConfig(runs_per_cell=0)
    with pytest.raises(ValueError):
        GridConfig(m_values=())
