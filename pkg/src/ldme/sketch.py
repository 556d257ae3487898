"""Johnson-Lindenstrauss sketching for batched inner products against exp(B).

Estimates <M_i, exp(B)> for factorized PSD targets M_i = U_i U_i^T without
ever forming exp(B): the half-exponent trick squares a truncated Taylor
series of exp(B/2) through the sketch, so every estimate is a sum of squares
and hence nonnegative by construction.
"""

from __future__ import annotations

import math

import numpy as np

from .spectral import ExpOperator, MatVecOperator

# Constant c in the sketch-row count l = ceil(c (log m + log n + log 1/delta) / eps^2).
JL_ROW_CONSTANT = 64.0

# Rows are generated and applied in blocks of this many to bound memory.
ROW_BLOCK = 4096


def sketch_row_count(n_targets, dim, eps, delta):
    val = JL_ROW_CONSTANT * (math.log(max(n_targets, 2)) + math.log(max(dim, 2)) + math.log(1.0 / delta)) / eps**2
    return max(1, int(math.ceil(val)))


def half_exp_degree(kappa, eps):
    """Taylor degree for exp(B/2): max{4 e^2 kappa, log(4/eps)}."""
    return max(1, int(math.ceil(max(4.0 * math.e**2 * kappa, math.log(4.0 / eps)))))


def half_exp_operator(B, kappa, eps, log_shift=0.0, economical=False):
    """Operator whose square is the (1 +/- eps)-sandwich of exp(B) (times e^{-log_shift}).

    `economical` drops the stated 4*e^2*kappa truncation to the e^2*kappa the
    sandwich lemma needs; the sketch estimators keep the stated degree, hot
    inner loops (the SDP solver) use the economical one.
    """
    half = MatVecOperator(B.dim, lambda x: 0.5 * B.apply(x), psd=B.psd)
    op = ExpOperator(half, kappa / 2.0, eps / 4.0, log_shift=log_shift / 2.0)
    if not economical and op.segments == 1:
        op.degree = half_exp_degree(kappa, eps)
    return op


def _stack_targets(targets, dim):
    cols = []
    slices = []
    at = 0
    for U in targets:
        U = np.asarray(U, dtype=np.float64)
        if U.ndim == 1:
            U = U[:, None]
        if U.shape[0] != dim:
            raise ValueError("target factor dimension mismatch")
        cols.append(U)
        slices.append((at, at + U.shape[1]))
        at += U.shape[1]
    if not cols:
        return np.zeros((dim, 0)), []
    return np.concatenate(cols, axis=1), slices


def sketched_square_norms(half_exp, targets, rows, rng):
    """||Pi * half_exp * U_i||_F^2 per target, with Pi ~ N(0, 1/rows) generated in blocks.

    This is the shared inner loop of inner-product and trace estimation; the
    caller controls `rows` (accuracy) and the half-exponent operator (which may
    carry a log-domain shift for scale safety).
    """
    dim = half_exp.dim
    stacked, slices = _stack_targets(targets, dim)
    if stacked.shape[1] == 0:
        return np.zeros(0)
    Y = half_exp.apply(stacked)  # dim x total_cols
    total = np.zeros(Y.shape[1])
    remaining = rows
    scale = 1.0 / rows
    while remaining > 0:
        blk = min(ROW_BLOCK, remaining)
        Pi = rng.standard_normal((blk, dim))
        QY = Pi @ Y
        total += scale * np.einsum("ij,ij->j", QY, QY)
        remaining -= blk
    return np.asarray([float(np.sum(total[a:b])) for a, b in slices])


def _check_eps_delta(eps, delta):
    if not (0.0 < eps < 0.25) or not (0.0 < delta < 0.25):
        raise ValueError("eps and delta must lie in (0, 1/4)")


def estimate_inner_products(B, kappa, targets, eps, delta, rng, rows=None, log_shift=0.0):
    """Simultaneous (1 +/- eps) estimates of <U_i U_i^T, exp(B)> w.p. >= 1 - delta.

    B is any PSD matvec operator with ||B|| <= kappa (caller-asserted). `rows`
    overrides the default JL row count; `log_shift` returns estimates of
    e^{-log_shift} <M_i, exp(B)> instead, for callers working at shifted scale.
    """
    _check_eps_delta(eps, delta)
    if kappa < 0:
        raise ValueError("kappa must be >= 0")
    if rows is None:
        rows = sketch_row_count(len(targets), B.dim, eps, delta)
    half = half_exp_operator(B, kappa, eps, log_shift=log_shift)
    return sketched_square_norms(half, targets, rows, rng)


def estimate_trace(B, kappa, C, eps, delta, rng, rows=None, log_shift=0.0):
    """(1 +/- eps) estimate of sum_i v_i^T exp(B) v_i for the columns v_i of C.

    C = None uses the identity columns, estimating Tr exp(B).
    """
    _check_eps_delta(eps, delta)
    if kappa < 0:
        raise ValueError("kappa must be >= 0")
    if C is None:
        C = np.eye(B.dim)
    C = np.asarray(C, dtype=np.float64)
    if C.ndim == 1:
        C = C[:, None]
    if rows is None:
        rows = sketch_row_count(C.shape[1], B.dim, eps, delta)
    half = half_exp_operator(B, kappa, eps, log_shift=log_shift)
    vals = sketched_square_norms(half, [C], rows, rng)
    return float(vals[0])
