"""Basins of attraction of IHT on random two-dimensional problems with s = 1.

Every point of a square grid of starting positions is run to convergence; the
limits are grouped into fixed points, and for settings with exactly two fixed
points we measure how close each minimum lies to the other one's basin.
"""
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .linalg import least_squares_on_support, spectral_norm_sq
from .problems import RngState, gen_basin2d_setting
from .solvers import iht_operator, objective

UNCONVERGED = -1

# relative gap below which two fixed-point objectives count as tied
OBJECTIVE_TIE_RTOL = 1e-12


@dataclass(frozen=True)
class BasinStudyConfig:
    num_settings: int = 1000
    grid_points_per_axis: int = 81
    bounds: tuple = (-1.0, 1.0)
    tau_scale: float = 0.05
    # norm in tau = tau_scale / ||A||^2: "spectral" or "frobenius"
    step_norm: str = "spectral"
    max_iters: int = 20000
    fixed_point_tol: float = 1e-10
    cluster_tol: float = 1e-6

    def __post_init__(self):
        if self.grid_points_per_axis < 2:
            raise ValueError("grid_points_per_axis must be at least 2")
        if not self.cluster_tol > 0:
            raise ValueError("cluster_tol must be positive")
        if self.step_norm not in ("spectral", "frobenius"):
            raise ValueError(f"unknown step_norm {self.step_norm!r}")
        if not self.bounds[0] < self.bounds[1]:
            raise ValueError("bounds must be increasing")
        if self.num_settings < 1 or self.max_iters < 1:
            raise ValueError("num_settings and max_iters must be positive")


@dataclass
class FixedPoint:
    location: np.ndarray
    objective: float
    support: tuple
    basin_size: int
    in_domain: bool
    is_global: bool = False


@dataclass
class BasinReport:
    setting_id: int
    tau: float
    fixed_points: list
    # labels[i, j] belongs to the start (grid[i], grid[j]); -1 marks unconverged
    labels: np.ndarray
    grid: np.ndarray
    unconverged: int
    two_minima: bool
    eligible: bool
    d_global_to_local_region: Optional[float] = None
    d_local_to_global_region: Optional[float] = None
    # flat grid indices of the starts realizing the two distances
    witness_global_to_local: Optional[int] = None
    witness_local_to_global: Optional[int] = None
    limits: Optional[np.ndarray] = field(default=None, repr=False)

    def starts(self):
        X, Y = np.meshgrid(self.grid, self.grid, indexing="ij")
        return np.column_stack([X.ravel(), Y.ravel()])


def step_size(A, cfg):
    if cfg.step_norm == "frobenius":
        nrm_sq = float(np.sum(A * A))
    else:
        nrm_sq = spectral_norm_sq(A)
    return cfg.tau_scale / nrm_sq


def batch_threshold(Z, s):
    """Column-wise hard thresholding of an ``(n, N)`` array, smaller index wins ties."""
    out = np.zeros_like(Z)
    cols = np.arange(Z.shape[1])
    if s == 1:
        # argmax returns the first maximal index
        keep = np.argmax(np.abs(Z), axis=0)
        out[keep, cols] = Z[keep, cols]
    else:
        keep = np.argsort(-np.abs(Z), axis=0, kind="stable")[:s]
        out[keep, cols] = Z[keep, cols]
    return out


def iht_batch(p, tau, starts, max_iters, tol):
    """Run IHT from every row of `starts`; returns ``(limits, converged)``.

    A start is converged once a step moves it by at most `tol` in max-norm;
    converged starts are frozen and dropped from further work.
    """
    W, b = iht_operator(p.A, p.f, tau)
    U = np.array(starts, dtype=np.float64).T.copy()
    b = b[:, None]
    active = np.arange(U.shape[1])
    converged = np.zeros(U.shape[1], dtype=bool)
    Ua = U
    for it in range(max_iters):
        Z = batch_threshold(W @ Ua + b, p.s)
        done = np.abs(Z - Ua).max(axis=0) <= tol
        Ua = Z
        if done.any():
            U[:, active] = Ua
            converged[active[done]] = True
            active = active[~done]
            Ua = Ua[:, ~done]
            if active.size == 0:
                break
    U[:, active] = Ua
    return U.T.copy(), converged


def cluster_limits(limits, converged, tol):
    """Greedy grouping in grid order: each unlabeled converged limit opens a
    cluster that absorbs every unlabeled limit within `tol` in max-norm."""
    labels = np.full(limits.shape[0], UNCONVERGED)
    reps = []
    free = converged.copy()
    while free.any():
        i = int(np.flatnonzero(free)[0])
        close = free & (np.max(np.abs(limits - limits[i]), axis=1) <= tol)
        labels[close] = len(reps)
        reps.append(i)
        free &= ~close
    return labels, reps


def _region_distance(point, starts, members):
    idx = np.flatnonzero(members)
    dist = np.linalg.norm(starts[idx] - point, axis=1)
    k = int(np.argmin(dist))
    return float(dist[k]), int(idx[k])


def run_basin_setting(p, cfg=BasinStudyConfig(), setting_id=0, keep_limits=True):
    if p.n != 2 or p.s != 1:
        raise ValueError("basin analysis needs a two-dimensional problem with s = 1")
    lo, hi = cfg.bounds
    k = cfg.grid_points_per_axis
    grid = np.linspace(lo, hi, k)
    X, Y = np.meshgrid(grid, grid, indexing="ij")
    starts = np.column_stack([X.ravel(), Y.ravel()])
    tau = step_size(p.A, cfg)
    limits, converged = iht_batch(p, tau, starts, cfg.max_iters, cfg.fixed_point_tol)
    labels, reps = cluster_limits(limits, converged, cfg.cluster_tol)

    fps = []
    for j, i in enumerate(reps):
        supp = tuple(int(t) for t in np.flatnonzero(limits[i]))
        # a converged limit is the least-squares fit on its own support
        loc = least_squares_on_support(p.A, p.f, list(supp))
        fps.append(FixedPoint(location=loc, objective=objective(p.A, loc, p.f), support=supp,
                              basin_size=int(np.sum(labels == j)),
                              in_domain=bool(np.all((loc >= lo) & (loc <= hi)))))
    if fps:
        best = min(fp.objective for fp in fps)
        for fp in fps:
            fp.is_global = fp.objective <= best + OBJECTIVE_TIE_RTOL * best

    two = len(fps) == 2 and all(fp.in_domain for fp in fps)
    eligible = two and sum(fp.is_global for fp in fps) == 1
    rep = BasinReport(setting_id=setting_id, tau=tau, fixed_points=fps,
                      labels=labels.reshape(k, k), grid=grid,
                      unconverged=int(np.sum(~converged)), two_minima=two, eligible=eligible,
                      limits=limits if keep_limits else None)
    if eligible:
        g = 0 if fps[0].is_global else 1
        loc = 1 - g
        rep.d_global_to_local_region, rep.witness_global_to_local = _region_distance(
            fps[g].location, starts, labels == loc)
        rep.d_local_to_global_region, rep.witness_local_to_global = _region_distance(
            fps[loc].location, starts, labels == g)
    return rep


@dataclass
class StudySummary:
    num_settings: int
    two_minima_count: int
    eligible_count: int
    mean_dist_global_to_local_region: Optional[float]
    mean_dist_local_to_global_region: Optional[float]
    reports: list

    def as_dict(self):
        return {
            "num_settings": self.num_settings,
            "two_minima_count": self.two_minima_count,
            "eligible_count": self.eligible_count,
            "mean_dist_global_to_local_region": self.mean_dist_global_to_local_region,
            "mean_dist_local_to_global_region": self.mean_dist_local_to_global_region,
        }


def _setting_task(args):
    cfg, rng, i = args
    return run_basin_setting(gen_basin2d_setting(rng.child(i)), cfg, setting_id=i,
                             keep_limits=False)


def run_basin_study(cfg=BasinStudyConfig(), rng=RngState(0), jobs=1, progress=None):
    """Run `cfg.num_settings` random settings and aggregate the distances.

    Setting ``i`` is drawn from stream ``rng.child(i)``, so the summary does
    not depend on `jobs`. `progress`, if given, is called with each finished
    report in setting order.
    """
    tasks = [(cfg, rng, i) for i in range(cfg.num_settings)]
    reports = []
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            for rep in ex.map(_setting_task, tasks, chunksize=8):
                reports.append(rep)
                if progress:
                    progress(rep)
    else:
        for t in tasks:
            rep = _setting_task(t)
            reports.append(rep)
            if progress:
                progress(rep)
    elig = [r for r in reports if r.eligible]
    mean = lambda xs: float(np.mean(xs)) if xs else None
    return StudySummary(
        num_settings=len(reports),
        two_minima_count=sum(r.two_minima for r in reports),
        eligible_count=len(elig),
        mean_dist_global_to_local_region=mean([r.d_global_to_local_region for r in elig]),
        mean_dist_local_to_global_region=mean([r.d_local_to_global_region for r in elig]),
        reports=reports,
    )
