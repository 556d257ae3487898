"""Approximate entropic projection onto {(M, W): M,W >= 0, Tr M + Tr W = 1, ||W|| <= Tr W / k}.

The projection is never materialized: the output is an implicit handle of
scalars, k eigenpairs and a reference to a half-exponent Taylor operator
(applying it twice realizes exp sandwiched within (1 +/- eps)). Exponential
scales are carried as log-domain shifts so the routines stay finite for gain
matrices with spectral norms in the hundreds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import sketch
from .oracle import solve_threshold
from .spectral import pca_topk

SIGMA_LOG_FLOOR = 1e-30

# The JL row formula explodes quadratically as eps shrinks; beyond this many
# rows the empirical sketch error is already far below any tolerance used
# here, so trace estimates inside projections cap the row count.
TRACE_ROWS_CAP = 32768


@dataclass
class TauEquation:
    """Data of the piecewise-linear threshold equation k*t = (1-eps)*T + sum min(sigma_i, t)."""

    sigma: np.ndarray     # k approximate top eigenvalues, descending
    tail_trace: float     # T >= 0
    k: int
    eps: float = 0.0


def solve_tau(eq):
    """Unique solution in [sigma_k, inf) of the threshold equation via breakpoint scan."""
    sig = np.asarray(eq.sigma, dtype=np.float64)
    if sig.shape[0] != eq.k:
        raise ValueError("expected exactly k leading eigenvalues")
    if eq.tail_trace < 0:
        raise ValueError("tail trace must be nonnegative")
    tail = (1.0 - eq.eps) * eq.tail_trace
    return solve_threshold(sig, tail, eq.k)


@dataclass
class WPartHandle:
    """Implicit representation of the approximate W-projection p~(G).

    p~(G) = sum_j top_coef[j] v_j v_j^T + perp_coef * P_perp exp_s(G) P_perp,
    where exp_s(G) = e^{-shift} exp(G) is realized by applying `half_g` twice.
    `sigma` and `tau` live at the same shifted scale, so every stored
    coefficient is an overflow-safe ratio.
    """

    vectors: np.ndarray        # m x k, orthonormal
    sigma: np.ndarray          # shifted top eigenvalue estimates of exp(G), descending
    tau: float                 # shifted threshold
    shift: float               # log-scale shift s
    top_coef: np.ndarray       # (1-4k*eps) * min(sigma_j, tau) / (k*tau)
    perp_coef: float           # (1-4k*eps) * (1-2*eps) / (k*tau)
    half_g: object             # half-exponent operator carrying shift/2
    tail_trace: float          # shifted trace estimate of H = (1-2eps) P_perp exp(G) P_perp
    k: int
    eps: float

    @property
    def dim(self):
        return self.vectors.shape[0]

    def perp(self, x):
        V = self.vectors
        return x - V @ (V.T @ x)

    def exp_apply(self, x):
        return self.half_g.apply(self.half_g.apply(x))

    def apply(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[0] != self.dim:
            raise ValueError("dimension mismatch in W-part apply")
        V = self.vectors
        coef = self.top_coef
        head = V @ ((V.T @ x) * (coef[:, None] if x.ndim > 1 else coef))
        tail = self.perp_coef * self.perp(self.exp_apply(self.perp(x)))
        return head + tail

    def trace_estimate(self):
        scale = 1.0 - 4.0 * self.k * self.eps
        return scale * (float(np.sum(np.minimum(self.sigma, self.tau))) + self.tail_trace) / (self.k * self.tau)

    def to_dense(self):
        return self.apply(np.eye(self.dim))


@dataclass
class ProjectionHandle:
    """Joint (M, W) projection handle: mass split plus the two scaled parts."""

    gamma: float
    zeta: float
    mass_m: float
    mass_w: float
    half_f: object             # half-exponent operator for the M side
    z1: float                  # shifted trace estimate of exp(F)
    shift_f: float
    w_part: WPartHandle

    @property
    def dim_m(self):
        return self.half_f.dim

    @property
    def dim_w(self):
        return self.w_part.dim

    @property
    def tau(self):
        return self.w_part.tau

    @property
    def m_scale(self):
        """Scalar c with M~ = c * exp_s(F) at the shifted scale."""
        return self.mass_m / self.z1

    def apply_m(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[0] != self.dim_m:
            raise ValueError("dimension mismatch in M-part apply")
        return self.m_scale * self.half_f.apply(self.half_f.apply(x))

    def apply_w(self, x):
        return self.mass_w * self.w_part.apply(x)

    def trace_m(self):
        return self.mass_m

    def trace_w(self):
        return self.mass_w * self.w_part.trace_estimate()


def _mass_split(gamma, zeta):
    t = zeta - gamma
    if t > 50:
        m = math.exp(-t)
    elif t < -50:
        m = 1.0
    else:
        m = 1.0 / (1.0 + math.exp(t))
    return m, 1.0 - m


def _check_proj_args(kappa, k, eps, delta):
    if kappa < 0:
        raise ValueError("spectral-norm bound must be >= 0")
    if k < 1:
        raise ValueError("rank parameter k must be >= 1")
    if not (0.0 < eps < 1.0 / k**2):
        raise ValueError(f"eps must lie in (0, 1/k^2) = (0, {1.0 / k**2:.3g})")
    if not (0.0 < delta < 1.0):
        raise ValueError("delta must lie in (0, 1)")


def _default_trace_rows(dim, eps, delta):
    return min(sketch.sketch_row_count(dim, dim, min(eps, 0.2), delta), TRACE_ROWS_CAP)


def simple_projection(G, kappa_g, k, eps, delta, rng, power_iters=None, trace_rows=None,
                      warm=None):
    """W-part-only approximate projection of exp(G) (trace-norm error 4*sqrt(k*eps) + 9*k*eps).

    Top-k directions come from power-method PCA on G (exp is operator monotone,
    so the eigenvectors and their order agree with exp(G)); eigenvalue estimates
    are shifted quadratic forms through the half-exponent operator, the tail
    trace is sketched, and the threshold equation is solved exactly.
    """
    _check_proj_args(kappa_g, k, eps, delta)
    kk = min(k, G.dim)
    sand = pca_topk(G, kk, eps, delta, rng, iters=power_iters, warm=warm)
    shift = float(np.max(sand.lambdas)) if kk > 0 else 0.0
    half_g = sketch.half_exp_operator(G, kappa_g, eps, log_shift=shift)
    return projection_w_part(half_g, sand.vectors, shift, kk, eps, delta, rng,
                             trace_rows=trace_rows)


def projection_w_part(half_g, V, shift, k, eps, delta, rng, trace_rows=None):
    """Assemble the W-part handle from prepared pieces (shared with the SDP solver)."""
    m = half_g.dim
    kk = min(k, m, V.shape[1])
    V = V[:, :kk]

    # Shifted eigenvalue estimates sigma_i = v_i^T exp_s(G) v_i = ||half_g v_i||^2.
    HV = half_g.apply(V)
    sig = np.einsum("ij,ij->j", HV, HV)
    sig = np.maximum(sig, SIGMA_LOG_FLOOR)
    order = np.argsort(sig)[::-1]
    sig = sig[order]
    V = V[:, order]

    # H = (1-2eps) P_perp exp(G) P_perp: compress after exponentiating, so the
    # trace runs over the deflated identity columns P_perp e_i.
    if m > kk:
        if trace_rows is None:
            trace_rows = _default_trace_rows(m, eps, delta)
        perp_cols = np.eye(m) - V @ V.T
        tail_raw = sketch.sketched_square_norms(half_g, [perp_cols], trace_rows, rng)[0]
    else:
        tail_raw = 0.0
    tail = (1.0 - 2.0 * eps) * max(float(tail_raw), 0.0)

    if float(np.sum(sig)) <= SIGMA_LOG_FLOOR * kk and tail <= 0.0:
        raise ValueError("projection of the zero matrix is degenerate")

    tau = solve_tau(TauEquation(sigma=sig[:kk], tail_trace=tail, k=kk, eps=eps))
    scale = 1.0 - 4.0 * kk * eps
    top_coef = scale * np.minimum(sig[:kk], tau) / (kk * tau)
    perp_coef = scale * (1.0 - 2.0 * eps) / (kk * tau)

    return WPartHandle(vectors=V, sigma=sig[:kk], tau=tau, shift=shift,
                       top_coef=top_coef, perp_coef=perp_coef, half_g=half_g,
                       tail_trace=tail, k=kk, eps=eps)


def compose_projection(w_part, half_f, z1, shift_f):
    """Combine a W-part handle with M-side exponential data into the joint handle."""
    z1 = max(float(z1), SIGMA_LOG_FLOOR)
    gamma = math.log(z1) + shift_f

    kk = w_part.k
    sig = np.maximum(w_part.sigma, SIGMA_LOG_FLOOR)
    z2 = max(kk * w_part.tau, SIGMA_LOG_FLOOR)
    log_ratio = float(np.sum(np.log(sig) - np.log(np.minimum(sig, w_part.tau)))) / kk
    zeta = math.log(z2) + w_part.shift + log_ratio

    mass_m, mass_w = _mass_split(gamma, zeta)
    return ProjectionHandle(gamma=gamma, zeta=zeta, mass_m=mass_m, mass_w=mass_w,
                            half_f=half_f, z1=z1, shift_f=shift_f, w_part=w_part)


def full_projection(F, G, k, eps, delta, rng, kappa_f, kappa_g,
                    power_iters=None, trace_rows=None, warm=None):
    """Joint approximate projection onto S; returns a ProjectionHandle.

    M-part error O(k*eps) and W-part error O(sqrt(k*eps)) in trace norm versus
    the exact joint optimizer.
    """
    _check_proj_args(kappa_f, k, eps, delta)
    w_part = simple_projection(G, kappa_g, k, eps, delta, rng,
                               power_iters=power_iters, trace_rows=trace_rows, warm=warm)

    # Shift for the F side from a cheap top-eigenvalue probe.
    probe = pca_topk(F, 1, max(eps, 0.05), delta, rng, iters=power_iters)
    shift_f = float(probe.lambdas[0])
    half_f = sketch.half_exp_operator(F, kappa_f, eps, log_shift=shift_f)
    if trace_rows is None:
        trace_rows = _default_trace_rows(F.dim, eps, delta)
    z1 = sketch.sketched_square_norms(half_f, [np.eye(F.dim)], trace_rows, rng)[0]
    return compose_projection(w_part, half_f, z1, shift_f)


def projection_apply(handle, side, x):
    """Apply the M- or W-part of a ProjectionHandle to a vector."""
    if side == "M":
        return handle.apply_m(x)
    if side == "W":
        return handle.apply_w(x)
    raise ValueError("side must be 'M' or 'W'")
