"""Hard thresholding, IHT, noisy IHT and least-squares refinement."""
from dataclasses import dataclass, field, replace
from typing import Optional, Union

import numpy as np

from .linalg import (DimensionError, least_squares_on_support, matvec,
                     spectral_norm_sq)


@dataclass
class SolverResult:
    u: np.ndarray
    support: np.ndarray
    objective: float
    iterations_run: int
    method: str
    meta: dict = field(default_factory=dict)
    # per-iteration objective values, only filled when requested
    trace: Optional[list] = None


@dataclass(frozen=True)
class IhtConfig:
    tau: Union[float, str] = "auto"
    max_iters: int = 3000
    fixed_point_tol: float = 0.0

    def __post_init__(self):
        if self.tau != "auto" and not self.tau > 0:
            raise ValueError(f"tau must be positive or 'auto', got {self.tau!r}")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")


@dataclass(frozen=True)
class NoisyIhtConfig:
    rounds: int = 5
    iters_per_round: int = 600
    sigma: float = 0.025
    inner: IhtConfig = IhtConfig()

    def __post_init__(self):
        if self.rounds < 1:
            raise ValueError("rounds must be at least 1")
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")


AUTO_STEP = 0.99


def resolve_tau(A, tau):
    """Turn ``"auto"`` into ``0.99 / sigma_max(A)^2``."""
    if tau == "auto":
        return AUTO_STEP / spectral_norm_sq(A)
    return float(tau)


def hard_threshold(x, s):
    """Keep the `s` largest-magnitude entries of `x`, zero the rest.

    Ties in magnitude go to the smaller index.

    >>> hard_threshold(np.array([3.0, -5.0, 1.0, 4.0]), 2)
    array([ 0., -5.,  0.,  4.])
    """
    x = np.asarray(x, dtype=np.float64)
    if s < 0:
        raise ValueError("s must be non-negative")
    if s >= x.shape[0]:
        return x.copy()
    out = np.zeros_like(x)
    if s == 0:
        return out
    keep = threshold_indices(x, s)
    out[keep] = x[keep]
    return out


def threshold_indices(x, s):
    """Indices kept by :func:`hard_threshold`, in decreasing magnitude order."""
    # a stable sort of -|x| keeps the smaller index first among equal magnitudes
    return np.argsort(-np.abs(x), kind="stable")[:s]


def objective(A, u, f):
    """||A u - f||^2."""
    if A.shape[0] != f.shape[0]:
        raise DimensionError(f"A is {A.shape}, f has length {f.shape[0]}")
    r = matvec(A, u) - f
    return float(r @ r)


def _result(p, u, iters, method, **meta):
    return SolverResult(u=u, support=np.flatnonzero(u), objective=objective(p.A, u, p.f),
                        iterations_run=iters, method=method, meta=meta)


def iht_operator(A, f, tau):
    """Affine part of one IHT iteration as ``(W, b)``.

    ``W = I - tau A^T A`` and ``b = tau A^T f``, so that
    ``W @ u + b == u - tau A^T (A u - f)`` up to rounding. Every IHT iterate in
    this package is computed in this form, which makes an unrolled layer
    initialized from it reproduce IHT bit for bit.
    """
    W = np.eye(A.shape[1]) - tau * (A.T @ A)
    b = tau * (A.T @ f)
    return W, b


def iht_step(W, b, u, s):
    """One iteration u <- H_s(W u + b)."""
    return hard_threshold(W @ u + b, s)


def run_iht(p, cfg=IhtConfig(), u0=None, trace=False):
    """Classical iterative hard thresholding from `u0` (zeros by default).

    Runs `cfg.max_iters` iterations, or fewer if the max-norm change between
    consecutive iterates drops to `cfg.fixed_point_tol` (0 disables the check).
    The last iterate is returned. With ``trace=True`` the objective of every
    iterate, starting with `u0`, is stored in ``result.trace``.
    """
    A, f, s = p.A, p.f, p.s
    u = np.zeros(p.n) if u0 is None else np.asarray(u0, dtype=np.float64).copy()
    if u.shape != (p.n,):
        raise DimensionError(f"u0 has shape {u.shape}, expected ({p.n},)")
    tau = resolve_tau(A, cfg.tau)
    W, b = iht_operator(A, f, tau)
    tol = cfg.fixed_point_tol
    hist = [objective(A, u, f)] if trace else None
    it = 0
    while it < cfg.max_iters:
        new = iht_step(W, b, u, s)
        it += 1
        moved = np.max(np.abs(new - u))
        u = new
        if trace:
            hist.append(objective(A, u, f))
        if tol > 0 and moved <= tol:
            break
    res = _result(p, u, it, "iht", tau=tau)
    res.trace = hist
    return res


def run_noisy_iht(p, cfg=NoisyIhtConfig(), rng=None, u0=None):
    """IHT restarted from Gaussian-perturbed iterates.

    The first round starts from `u0` (zeros by default). Each later round adds
    i.i.d. N(0, sigma^2) noise to every entry of the previous round's output
    and runs IHT again. The final round's output is returned as is; there is
    no best-iterate tracking.
    """
    if rng is None:
        raise ValueError("run_noisy_iht needs an RngState for its perturbations")
    inner = replace(cfg.inner, max_iters=cfg.iters_per_round)
    tau = resolve_tau(p.A, inner.tau)
    inner = replace(inner, tau=tau)
    g = rng.generator()
    res = run_iht(p, inner, u0)
    total = res.iterations_run
    for _ in range(cfg.rounds - 1):
        start = res.u + g.normal(0.0, cfg.sigma, size=p.n)
        res = run_iht(p, inner, start)
        total += res.iterations_run
    return _result(p, res.u, total, "noisy", tau=tau, sigma=cfg.sigma, rounds=cfg.rounds)


def refine(p, r):
    """Replace `r.u` by the least-squares fit of f on `r.support`."""
    u = least_squares_on_support(p.A, p.f, r.support)
    meta = dict(r.meta, refined=True, unrefined_objective=r.objective)
    return _result(p, u, r.iterations_run, r.method, **meta)
