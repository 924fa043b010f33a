"""Small dense linear algebra layer shared by the solvers.

Matrices and vectors are plain float64 numpy arrays; the helpers here only add
shape/finiteness checks and the two non-trivial routines the solvers need.
"""
import warnings

import numpy as np
import scipy.linalg


class DimensionError(ValueError):
    """Raised when operand shapes do not conform."""


class PowerIterationWarning(RuntimeWarning):
    """Power iteration hit its iteration cap before the tolerance was met."""


def as_matrix(a):
    """Return `a` as a finite 2D float64 array (row-major)."""
    a = np.ascontiguousarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
        raise DimensionError(f"expected a non-empty 2D array, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix has non-finite entries")
    return a


def as_vector(x):
    """Return `x` as a finite 1D float64 array."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] < 1:
        raise DimensionError(f"expected a non-empty 1D array, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("vector has non-finite entries")
    return x


def matvec(A, x):
    """Compute ``A @ x`` after checking that the inner dimensions agree."""
    if A.shape[1] != x.shape[0]:
        raise DimensionError(f"matvec: A is {A.shape}, x has length {x.shape[0]}")
    return A @ x


def matvec_transpose(A, y):
    """Compute ``A.T @ y`` after checking that the inner dimensions agree."""
    if A.shape[0] != y.shape[0]:
        raise DimensionError(f"matvec_transpose: A is {A.shape}, y has length {y.shape[0]}")
    return A.T @ y


def spectral_norm_sq(A, tol=1e-10, max_iters=10000):
    """Largest eigenvalue of ``A.T @ A`` by power iteration.

    Starts from the all-ones vector so the result does not depend on any
    random state. Iteration stops once the relative change between successive
    Rayleigh quotients drops below `tol`. If `max_iters` is exhausted the last
    Rayleigh quotient is returned and a :class:`PowerIterationWarning` is issued.
    A result below the largest squared column norm means the start was an
    eigenvector of a smaller eigenvalue; the iteration is then repeated from
    that column's basis vector.

    Returns 0.0 for the zero matrix.
    """
    if not np.any(A):
        return 0.0
    x = np.ones(A.shape[1])
    col_sq = np.sum(A * A, axis=0)
    lam = _power_iterate(A, x / np.linalg.norm(x), tol, max_iters)
    j = int(np.argmax(col_sq))
    if lam < col_sq[j]:
        # the all-ones start sat on a lower eigenvector (e.g. equal column
        # norms in two dimensions); the Rayleigh quotient only increases from
        # a start that already beats it
        x = np.zeros(A.shape[1])
        x[j] = 1.0
        lam = max(lam, _power_iterate(A, x, tol, max_iters))
    return lam


def _power_iterate(A, x, tol, max_iters):
    prev = None
    for _ in range(max_iters):
        Ax = A @ x
        y = A.T @ Ax
        rq = float(Ax @ Ax)
        ny = np.linalg.norm(y)
        if ny == 0.0:
            # start vector lies in the null space; restart from a basis vector
            # of the column with the largest norm
            x = np.zeros(A.shape[1])
            x[int(np.argmax(np.sum(A * A, axis=0)))] = 1.0
            prev = None
            continue
        x = y / ny
        if prev is not None and abs(rq - prev) <= tol * abs(rq):
            return rq
        prev = rq
    warnings.warn(f"power iteration did not reach tol={tol} in {max_iters} steps",
                  PowerIterationWarning, stacklevel=3)
    return rq


def least_squares_on_support(A, f, support, pivot_tol=1e-12):
    """Least-squares fit of `f` using only the columns of `A` in `support`.

    Uses a column-pivoted Householder QR of the column submatrix. Columns whose
    pivot falls below ``pivot_tol * |largest pivot|`` are treated as dependent
    and get a zero coefficient. Returns a full-length vector that is zero off
    the support; an empty support gives the zero vector.
    """
    support = np.asarray(support, dtype=np.intp).ravel()
    n = A.shape[1]
    if A.shape[0] != f.shape[0]:
        raise DimensionError(f"A is {A.shape}, f has length {f.shape[0]}")
    if support.size and (support.min() < 0 or support.max() >= n):
        raise IndexError("support index out of range")
    if np.unique(support).size != support.size:
        raise ValueError("support indices must be distinct")
    u = np.zeros(n)
    if support.size == 0:
        return u
    Q, R, piv = scipy.linalg.qr(A[:, support], mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    if diag.size == 0 or diag[0] == 0.0:
        return u
    rank = int(np.count_nonzero(diag > pivot_tol * diag[0]))
    c = scipy.linalg.solve_triangular(R[:rank, :rank], Q[:, :rank].T @ f)
    u[support[piv[:rank]]] = c
    return u
