"""Mean-weight recursion for the u(d)-gated LMS update of a single ReLU unit.

Two routes to the same operator are provided.  :func:`assemble_blocks` builds
``R = E{u(d) x x^T}``, ``r = E{u(d) x}`` and ``p = E{d u(d) x}`` entry by entry;
:func:`assemble_operator` builds the compact rank-two-update form

    A = u0 (I + mu_bar mu_bar^T - e_1 e_1^T) - K e_{L+1} e_{L+1}^T

together with its forcing vector.  The mean of the augmented weight vector
then evolves as ``E{w_new} = (I - eta A) E{w} + eta b``.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .model import SignalModel, optimal_weights
from .moments import moment0, moment1

__all__ = [
    "BlockMoments",
    "TheoryOperator",
    "SpectrumReport",
    "MeanTrajectory",
    "NumericalError",
    "StabilityWarning",
    "assemble_blocks",
    "assemble_operator",
    "block_operator",
    "eigen_report",
    "fixed_point",
    "iterate_mean",
    "averaged_error_curve",
    "degenerate_eigenvectors",
    "gated_input_power",
    "default_step_size",
    "MULTIPLICITY_TOL",
    "DEFAULT_STEP_SCALE",
]

MULTIPLICITY_TOL = 1e-9
MAX_CONDITION = 1e12
DEFAULT_STEP_SCALE = 0.2


class NumericalError(ArithmeticError):
    """Raised when a linear-algebra step would return untrustworthy numbers."""

    def __init__(self, message, **diagnostics):
        super().__init__(message)
        self.diagnostics = diagnostics


class StabilityWarning(RuntimeWarning):
    pass


@dataclass(frozen=True, eq=False)
class BlockMoments:
    R: np.ndarray
    r: np.ndarray
    p: np.ndarray
    m1: float


@dataclass(frozen=True, eq=False)
class TheoryOperator:
    A: np.ndarray
    b_vec: np.ndarray
    K: float
    mu_bar: np.ndarray
    h: float
    u0: float
    model: SignalModel = field(repr=False)

    @property
    def size(self) -> int:
        return self.A.shape[0]


def _common(model: SignalModel):
    g = model.gaussian
    u0 = moment0(g)
    phi = g.gauss_factor()  # exp(-mu_d^2 / 2a^2) / sqrt(2 pi)
    sgn = math.copysign(1.0, model.a)
    return u0, phi, sgn


def assemble_blocks(model: SignalModel) -> BlockMoments:
    """Entry-wise closed forms of R, r, p and E{d u(d)}."""
    u0, phi, sgn = _common(model)
    a, c, L = model.a, model.c, model.L
    mu = model.mu
    mu_L = float(mu[-1])
    head = mu[:-1]

    R = np.empty((L, L))
    R[:-1, :-1] = np.outer(head, head) * u0
    R[:-1, :-1] += np.eye(L - 1) * u0
    R[:-1, -1] = head * sgn * phi + head * mu_L * u0
    R[-1, :-1] = R[:-1, -1]
    R[-1, -1] = (mu_L * sgn - c / abs(a)) * phi + (mu_L**2 + 1.0) * u0

    p = np.empty(L)
    p[:-1] = a * R[:-1, -1] + head * c * u0
    p[-1] = a * (mu_L * sgn * phi + (mu_L**2 + 1.0 + (c / a) * mu_L) * u0)

    r = np.empty(L)
    r[:-1] = head * u0
    r[-1] = sgn * phi + mu_L * u0

    return BlockMoments(R=R, r=r, p=p, m1=moment1(model.gaussian))


def block_operator(blocks: BlockMoments, u0: float):
    """Stack the blocks into the augmented ``(A, b)`` pair: ``[[u0, r^T], [r, R]]`` and ``[m1; p]``."""
    L = blocks.r.size
    A = np.empty((L + 1, L + 1))
    A[0, 0] = u0
    A[0, 1:] = blocks.r
    A[1:, 0] = blocks.r
    A[1:, 1:] = blocks.R
    b = np.concatenate([[blocks.m1], blocks.p])
    return A, b


def assemble_operator(model: SignalModel) -> TheoryOperator:
    """Compact form of the augmented mean-recursion operator."""
    u0, phi, sgn = _common(model)
    a, c, L = model.a, model.c, model.L
    mu_L = float(model.mu[-1])

    h = mu_L + sgn * phi / u0
    mu_bar = np.concatenate([[1.0], model.mu[:-1], [h]])
    K = (mu_L * sgn + c / abs(a)) * phi + phi * phi / u0

    n = L + 1
    A = np.outer(mu_bar, mu_bar)
    A += np.eye(n)
    A[0, 0] -= 1.0
    A *= u0
    A[-1, -1] -= K

    b = mu_bar * (u0 * (c + a * h))
    b[-1] += a * (u0 - K)

    for arr in (A, b, mu_bar):
        arr.setflags(write=False)
    return TheoryOperator(A=A, b_vec=b, K=K, mu_bar=mu_bar, h=h, u0=u0, model=model)


@dataclass(frozen=True)
class SpectrumReport:
    eigenvalues: np.ndarray
    u0: float
    multiplicity: int
    lambda_max: float
    lambda_min: float
    eta_max: float
    tol: float = MULTIPLICITY_TOL

    def to_dict(self) -> dict[str, Any]:
        return {
            "eigenvalues": [float(v) for v in self.eigenvalues],
            "u0": self.u0,
            "multiplicity_u0": self.multiplicity,
            "lambda_max": self.lambda_max,
            "lambda_min": self.lambda_min,
            "eta_max": self.eta_max,
            "multiplicity_tol": self.tol,
        }


def eigen_report(op: TheoryOperator, tol: float = MULTIPLICITY_TOL) -> SpectrumReport:
    lam = np.linalg.eigvalsh(op.A)
    mult = int(np.count_nonzero(np.abs(lam - op.u0) <= tol))
    lam_max = float(lam[-1])
    return SpectrumReport(
        eigenvalues=lam,
        u0=op.u0,
        multiplicity=mult,
        lambda_max=lam_max,
        lambda_min=float(lam[0]),
        eta_max=2.0 / lam_max,
        tol=tol,
    )


def degenerate_eigenvectors(op: TheoryOperator, tol: float = MULTIPLICITY_TOL) -> np.ndarray:
    """Orthonormal basis (columns) of the eigenspace of A at eigenvalue u0."""
    lam, vecs = np.linalg.eigh(op.A)
    return vecs[:, np.abs(lam - op.u0) <= tol]


def gated_input_power(op: TheoryOperator) -> float:
    """E{||x_bar||^2 | d > 0} = tr(A) / u0, the mean input power seen by an update."""
    return float(np.trace(op.A)) / op.u0


def default_step_size(ops, scale: float = DEFAULT_STEP_SCALE) -> float:
    """Shared step ``scale / max E{||x_bar||^2 | d > 0}`` over a sweep of operators.

    Normalizing by the gated input power (as in NLMS) keeps the gradient
    noise that the mean recursion ignores at a similar, small level for
    every activation probability, while the step stays far inside the
    ``2 / lambda_max`` stability limit since ``lambda_max <= tr(A)``.
    """
    ops = list(ops)
    if not ops:
        raise ValueError("need at least one operator")
    return scale / max(gated_input_power(op) for op in ops)


def fixed_point(op: TheoryOperator) -> np.ndarray:
    """Steady state ``A^{-1} b`` of the mean recursion."""
    cond = float(np.linalg.cond(op.A))
    if not math.isfinite(cond) or cond > MAX_CONDITION:
        raise NumericalError(
            f"operator is ill-conditioned (cond={cond:.3e} > {MAX_CONDITION:.0e})",
            condition_number=cond,
            u0=op.u0,
            K=op.K,
            activation_prob=op.model.activation_prob,
        )
    return np.linalg.solve(op.A, op.b_vec)


def _check_step(op: TheoryOperator, eta: float) -> bool:
    """Warn (never refuse) when eta is outside the contraction range."""
    lam_max = float(np.linalg.eigvalsh(op.A)[-1])
    stable = 0.0 < eta < 2.0 / lam_max
    if not stable:
        warnings.warn(
            f"eta={eta:g} is outside (0, 2/lambda_max={2.0 / lam_max:g}); the mean recursion will not contract",
            StabilityWarning,
            stacklevel=3,
        )
    return stable


@dataclass(frozen=True, eq=False)
class MeanTrajectory:
    iterations: np.ndarray
    means: np.ndarray | None
    error_norm_sq: np.ndarray
    eta: float
    stable: bool
    runs: int = 1

    def to_csv_rows(self):
        yield ("iteration", "error_norm_sq")
        for k, e in zip(self.iterations, self.error_norm_sq):
            yield (int(k), repr(float(e)))


def iterate_mean(op: TheoryOperator, w0, eta: float, iters: int, w_star=None) -> MeanTrajectory:
    """Run the mean recursion from ``w0`` for ``iters`` steps.

    Returns the means at k = 0..iters and ``||E{w}_k - w_star||^2``;
    ``w_star`` defaults to the exact linear solution ``[c, 0, ..., 0, a]``.
    """
    if iters < 0:
        raise ValueError("iters must be >= 0")
    stable = _check_step(op, eta)
    w_star = optimal_weights(op.model) if w_star is None else np.asarray(w_star, dtype=float)
    A, b = op.A, op.b_vec
    means = np.empty((iters + 1, op.size))
    means[0] = np.asarray(w0, dtype=float)
    for k in range(iters):
        w = means[k]
        means[k + 1] = w - eta * (A @ w) + eta * b
    err = means - w_star
    return MeanTrajectory(
        iterations=np.arange(iters + 1),
        means=means,
        error_norm_sq=np.einsum("ij,ij->i", err, err),
        eta=eta,
        stable=stable,
    )


def averaged_error_curve(
    op: TheoryOperator,
    w0s,
    eta: float,
    iters: int,
    stride: int = 1,
    w_star=None,
) -> MeanTrajectory:
    """Average of ``||E{w}_k - w_star||^2`` over one mean recursion per initial condition.

    ``w0s`` has one row per run.  Points are recorded at ``k = 0, stride, ...``
    below ``iters``, the same grid the Monte Carlo simulator uses, and the
    across-run average is an exactly rounded sum.
    """
    if stride < 1:
        raise ValueError("stride must be >= 1")
    stable = _check_step(op, eta)
    w_star = optimal_weights(op.model) if w_star is None else np.asarray(w_star, dtype=float)
    W = np.array(w0s, dtype=float, ndmin=2)
    runs = W.shape[0]
    recorded = np.arange(0, iters, stride)
    per_run = np.empty((recorded.size, runs))
    A, b = op.A, op.b_vec
    j = 0
    for k in range(iters):
        if k % stride == 0:
            e = W - w_star
            per_run[j] = np.einsum("ij,ij->i", e, e)
            j += 1
        W = W - eta * (W @ A) + eta * b
    avg = np.array([math.fsum(row) / runs for row in per_run])
    return MeanTrajectory(
        iterations=recorded, means=None, error_norm_sq=avg, eta=eta, stable=stable, runs=runs
    )
