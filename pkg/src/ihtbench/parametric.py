"""Two unrolled IHT iterations treated as a trainable network.

The network is ``H_s(W2 H_s(drop(W1 u0 + b1)) + b2)``. Its weights start at the
IHT operator and are fitted to the single instance at hand by heavy-ball
subgradient descent on ``||A N(u0) - f||^2``, with a fresh dropout mask on the
first layer at every step. Gradients are written out by hand.
"""
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .problems import round_half_up
from .solvers import (SolverResult, iht_operator, objective, resolve_tau,
                      threshold_indices)

THRESHOLD_GRADS = ("indicator", "literal")


class TrainingDiverged(FloatingPointError):
    """The training loss became non-finite."""

    def __init__(self, iteration, loss):
        super().__init__(f"non-finite training loss {loss!r} at iteration {iteration}")
        self.iteration = iteration
        self.loss = loss


@dataclass
class UnrolledParams:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    def blocks(self):
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2}

    def copy(self):
        return UnrolledParams(self.w1.copy(), self.b1.copy(), self.w2.copy(), self.b2.copy())


@dataclass(frozen=True)
class TrainConfig:
    momentum: float = 0.9
    learning_rate: float = 1e-4
    iterations: int = 2000
    dropout_rate: float = 0.05
    # "indicator": straight-through 0/1 mask on kept entries;
    # "literal": mask times the pre-threshold value
    threshold_grad: str = "indicator"

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be non-negative")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if not 0 <= self.dropout_rate < 1:
            raise ValueError("dropout_rate must lie in [0, 1)")
        if self.iterations < 0:
            raise ValueError("iterations must be non-negative")
        if self.threshold_grad not in THRESHOLD_GRADS:
            raise ValueError(f"threshold_grad must be one of {THRESHOLD_GRADS}")


@dataclass
class ForwardTape:
    u0: np.ndarray
    z1: np.ndarray
    dropout_mask: Optional[np.ndarray]
    d: np.ndarray
    m1: np.ndarray
    h1: np.ndarray
    z2: np.ndarray
    m2: np.ndarray
    u_out: np.ndarray


def init_params(p, tau):
    """Both layers set to the IHT operator with step `tau`."""
    if not tau >= 0:
        raise ValueError("tau must be non-negative")
    W, b = iht_operator(p.A, p.f, tau)
    return UnrolledParams(W, b, W.copy(), b.copy())


def _threshold(x, s):
    mask = np.zeros_like(x)
    mask[threshold_indices(x, s)] = 1.0
    out = np.zeros_like(x)
    keep = mask > 0
    out[keep] = x[keep]
    return out, mask


def forward(params, u0, s, dropout_mask=None):
    """Evaluate the network at `u0`; returns ``(u_out, tape)``.

    Without a dropout mask this is the inference path.
    """
    z1 = params.w1 @ u0 + params.b1
    d = z1 if dropout_mask is None else z1 * dropout_mask
    h1, m1 = _threshold(d, s)
    z2 = params.w2 @ h1 + params.b2
    u_out, m2 = _threshold(z2, s)
    tape = ForwardTape(u0=u0, z1=z1, dropout_mask=dropout_mask, d=d, m1=m1, h1=h1,
                       z2=z2, m2=m2, u_out=u_out)
    return u_out, tape


def backward(tape, params, A, f, threshold_grad="indicator"):
    """Gradients of ``||A u_out - f||^2`` with respect to w1, b1, w2, b2.

    Non-differentiable points of the thresholding are ignored: the derivative
    of H_s is taken as the kept-entry mask (or, for ``threshold_grad="literal"``,
    the mask times the entry value).
    """
    g_out = 2.0 * (A.T @ (A @ tape.u_out - f))
    if threshold_grad == "literal":
        g_z2 = tape.m2 * tape.z2 * g_out
    else:
        g_z2 = tape.m2 * g_out
    g_h1 = params.w2.T @ g_z2
    g_d = tape.m1 * tape.d * g_h1 if threshold_grad == "literal" else tape.m1 * g_h1
    g_z1 = g_d if tape.dropout_mask is None else tape.dropout_mask * g_d
    return {
        "w1": np.outer(g_z1, tape.u0),
        "b1": g_z1,
        "w2": np.outer(g_z2, tape.h1),
        "b2": g_z2,
    }


def dropout_mask(n, rate, gen):
    """0/1 vector with exactly ``round(rate * n)`` zeros at random positions."""
    mask = np.ones(n)
    k = round_half_up(rate * n)
    if k:
        mask[gen.choice(n, size=k, replace=False)] = 0.0
    return mask


def train(p, u0, cfg=TrainConfig(), tau=None, rng=None, return_params=False):
    """Fit the unrolled network to instance `p` starting from warm start `u0`.

    Returns a :class:`SolverResult` holding the dropout-free prediction of the
    trained network. ``meta`` records the dropout-free objective before and
    after training. Raises :class:`TrainingDiverged` on a non-finite loss.
    """
    if rng is None:
        raise ValueError("train needs an RngState for the dropout masks")
    if tau is None:
        tau = resolve_tau(p.A, "auto")
    A, f, s, n = p.A, p.f, p.s, p.n
    u0 = np.asarray(u0, dtype=np.float64)
    params = init_params(p, tau)
    initial_loss = objective(A, forward(params, u0, s)[0], f)
    blocks = params.blocks()
    velocity = {k: np.zeros_like(v) for k, v in blocks.items()}
    gen = rng.generator()
    # overflow shows up as a non-finite loss and is reported as TrainingDiverged
    with np.errstate(over="ignore", invalid="ignore"):
        for it in range(cfg.iterations):
            mask = dropout_mask(n, cfg.dropout_rate, gen)
            out, tape = forward(params, u0, s, mask)
            r = A @ out - f
            loss = float(r @ r)
            if not np.isfinite(loss):
                raise TrainingDiverged(it, loss)
            grads = backward(tape, params, A, f, cfg.threshold_grad)
            for k, theta in blocks.items():
                v = velocity[k]
                v *= cfg.momentum
                v -= cfg.learning_rate * grads[k]
                theta += v
        pred = forward(params, u0, s)[0]
        final_loss = objective(A, pred, f) if np.all(np.isfinite(pred)) else float("nan")
        if not np.isfinite(final_loss):
            raise TrainingDiverged(cfg.iterations, final_loss)
    res = SolverResult(u=pred, support=np.flatnonzero(pred), objective=final_loss,
                       iterations_run=cfg.iterations, method="parametric",
                       meta={"tau": tau, "initial_loss": initial_loss, "final_loss": final_loss})
    return (res, params) if return_params else res
