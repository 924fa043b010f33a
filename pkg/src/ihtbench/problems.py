"""Random sparse-recovery instances and the seeded stream plumbing behind them."""
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.fft

from .linalg import as_matrix, as_vector

ENSEMBLES = ("gaussian", "bernoulli", "subsampled_dct")

MAX_RETRIES = 10


@dataclass(frozen=True)
class RngState:
    """A master seed plus a path of integers naming one independent stream.

    Streams come from numpy's ``SeedSequence`` spawn keys feeding a Philox
    (counter-based) bit generator, so ``(seed, path)`` fully determines the
    draws and distinct paths are statistically independent.
    """

    seed: int
    path: tuple = ()

    def child(self, *keys):
        return RngState(self.seed, self.path + tuple(int(k) for k in keys))

    def generator(self):
        ss = np.random.SeedSequence(self.seed, spawn_key=self.path)
        return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class MatrixEnsemble:
    """Random sensing-matrix family.

    With ``normalized=True`` Gaussian and Bernoulli entries are divided by
    sqrt(m) so every column has unit expected norm, the same scale the
    subsampled DCT has by construction. The absolute noise level of noisy IHT
    and the learning rate of the parametric method are tuned to this scale.
    """

    kind: str
    m: int
    n: int
    normalized: bool = True

    def __post_init__(self):
        if self.kind not in ENSEMBLES:
            raise ValueError(f"unknown ensemble {self.kind!r}; choose from {ENSEMBLES}")
        if self.m < 1 or self.n < 1:
            raise ValueError("ensemble dimensions must be positive")


@dataclass
class ProblemInstance:
    """min ||A u - f||^2 subject to |u|_0 <= s."""

    A: np.ndarray
    f: np.ndarray
    s: int
    u_gen: Optional[np.ndarray] = field(default=None)

    def __post_init__(self):
        self.A = as_matrix(self.A)
        self.f = as_vector(self.f)
        if self.f.shape[0] != self.A.shape[0]:
            raise ValueError(f"f has length {self.f.shape[0]}, A has {self.A.shape[0]} rows")
        if not 1 <= self.s <= self.A.shape[1]:
            raise ValueError(f"sparsity {self.s} outside [1, {self.A.shape[1]}]")
        if self.u_gen is not None:
            self.u_gen = as_vector(self.u_gen)
            if self.u_gen.shape[0] != self.A.shape[1]:
                raise ValueError("u_gen length does not match the number of columns of A")

    @property
    def m(self):
        return self.A.shape[0]

    @property
    def n(self):
        return self.A.shape[1]


def round_half_up(x):
    return int(np.floor(x + 0.5))


def dct_matrix(n):
    """Orthonormal type-II DCT matrix ``D`` with ``D @ x == dct(x, norm='ortho')``."""
    return scipy.fft.dct(np.eye(n), type=2, norm="ortho", axis=0)


def gen_matrix(ensemble, rng):
    g = rng.generator()
    m, n = ensemble.m, ensemble.n
    scale = 1.0 / np.sqrt(m) if ensemble.normalized else 1.0
    if ensemble.kind == "gaussian":
        return g.standard_normal((m, n)) * scale
    if ensemble.kind == "bernoulli":
        return np.where(g.random((m, n)) < 0.5, -scale, scale)
    if m > n:
        raise ValueError(f"subsampled DCT needs m <= n, got m={m}, n={n}")
    rows = np.sort(g.choice(n, size=m, replace=False))
    return dct_matrix(n)[rows] * np.sqrt(n / m)


def gen_sparse_signal(n, s, rng):
    """Vector of length `n` with exactly `s` standard-normal nonzeros at random positions."""
    if not 1 <= s <= n:
        raise ValueError(f"need 1 <= s <= n, got s={s}, n={n}")
    g = rng.generator()
    pos = g.choice(n, size=s, replace=False)
    vals = g.standard_normal(s)
    while np.any(vals == 0.0):
        zero = vals == 0.0
        vals[zero] = g.standard_normal(int(zero.sum()))
    u = np.zeros(n)
    u[pos] = vals
    return u


def make_instance(ensemble, mu, rng):
    """Exact-data instance with ``s = round(mu * n)`` and ``||f||_2 = 1``.

    The generating signal is rescaled by the same factor as the data so that
    ``f == A @ u_gen`` still holds after normalization.
    """
    if not 0 < mu <= 1:
        raise ValueError(f"mu must lie in (0, 1], got {mu}")
    s = round_half_up(mu * ensemble.n)
    if s < 1:
        raise ValueError(f"round(mu * n) = {s}; need at least one nonzero")
    for attempt in range(MAX_RETRIES + 1):
        sub = rng.child(attempt)
        A = gen_matrix(ensemble, sub.child(0))
        u = gen_sparse_signal(ensemble.n, s, sub.child(1))
        f0 = A @ u
        nrm = np.linalg.norm(f0)
        if nrm > 0.0:
            c = 1.0 / nrm
            u_gen = u * c
            # f is defined through u_gen so the exact-data identity holds to rounding
            return ProblemInstance(A=A, f=A @ u_gen, s=s, u_gen=u_gen)
    raise RuntimeError(f"data vector was zero in {MAX_RETRIES + 1} attempts")


def gen_basin2d_setting(rng):
    """2x2 instance with column norms 2, unit-norm data and sparsity 1."""
    for attempt in range(MAX_RETRIES + 1):
        g = rng.child(attempt).generator()
        A = g.standard_normal((2, 2))
        f = g.standard_normal(2)
        cn = np.linalg.norm(A, axis=0)
        fn = np.linalg.norm(f)
        if np.all(cn > 0) and fn > 0:
            return ProblemInstance(A=A * (2.0 / cn), f=f / fn, s=1)
    raise RuntimeError("degenerate 2D draw in every attempt")


def format_instance(p):
    """Plain-text dump: ``m n s`` header, A row by row, f, then u_gen or ``none``."""
    fmt = lambda v: " ".join(format(x, ".17g") for x in v)
    lines = [f"{p.m} {p.n} {p.s}"]
    lines += [fmt(row) for row in p.A]
    lines.append(fmt(p.f))
    lines.append("none" if p.u_gen is None else fmt(p.u_gen))
    return "\n".join(lines) + "\n"


def parse_instance(text):
    lines = [ln for ln in text.splitlines() if ln.strip()]
    m, n, s = (int(t) for t in lines[0].split())
    if len(lines) != m + 3:
        raise ValueError(f"expected {m + 3} non-empty lines, got {len(lines)}")
    A = np.array([[float(t) for t in ln.split()] for ln in lines[1:m + 1]])
    if A.shape != (m, n):
        raise ValueError(f"matrix block has shape {A.shape}, header says {(m, n)}")
    f = np.array([float(t) for t in lines[m + 1].split()])
    last = lines[m + 2].strip()
    u_gen = None if last == "none" else np.array([float(t) for t in last.split()])
    return ProblemInstance(A=A, f=f, s=s, u_gen=u_gen)
