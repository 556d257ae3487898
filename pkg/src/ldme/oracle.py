"""Dense, small-scale reference implementations used to validate the fast routines.

All routines here are O(n^3) or worse by design and enforce a size cap; they
exist to certify the sketched / power-method / MWU code paths, never to serve
production-sized inputs.
"""

from __future__ import annotations

import math

import numpy as np

DENSE_CAP = 256

SYMMETRY_RTOL = 1e-12


class OracleSizeError(ValueError):
    pass


def _check_dense_sym(M, cap=DENSE_CAP):
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError("expected a square matrix")
    n = M.shape[0]
    if n > cap:
        raise OracleSizeError(f"dense oracle cap exceeded: {n} > {cap}")
    scale = max(np.abs(M).max(), 1.0)
    if np.abs(M - M.T).max() > SYMMETRY_RTOL * scale * n:
        raise ValueError("matrix is not symmetric within tolerance")
    return 0.5 * (M + M.T)


def dense_eig(M, cap=DENSE_CAP):
    """Eigendecomposition of a symmetric matrix, eigenvalues descending."""
    M = _check_dense_sym(M, cap)
    vals, vecs = np.linalg.eigh(M)
    order = np.argsort(vals)[::-1]
    return vals[order], vecs[:, order]


def dense_expm(M, cap=DENSE_CAP):
    """exp(M) for symmetric PSD M via eigendecomposition."""
    vals, vecs = dense_eig(M, cap)
    return (vecs * np.exp(vals)) @ vecs.T


def exact_kyfan_norm(M, k, cap=DENSE_CAP):
    """Sum of the top-k singular values."""
    M = np.asarray(M, dtype=np.float64)
    n = min(M.shape)
    if not (1 <= k <= n):
        raise ValueError(f"k must lie in [1, {n}], got {k}")
    if max(M.shape) > cap:
        raise OracleSizeError("dense oracle cap exceeded")
    sing = np.linalg.svd(M, compute_uv=False)
    return float(np.sum(sing[:k]))


def solve_threshold(top_vals, tail, k):
    """Unique tau in [top_vals[k-1], inf) with k*tau = tail + sum_i min(top_vals_i, tau).

    top_vals must be sorted descending with exactly k entries; closed-form scan
    over the breakpoints. Returns tau; raises on the all-zero degenerate input.
    """
    sig = np.asarray(top_vals, dtype=np.float64)
    if sig.ndim != 1 or sig.shape[0] != k:
        raise ValueError("expected exactly k leading values")
    if np.any(np.diff(sig) > 1e-12):
        raise ValueError("leading values must be sorted descending")
    if np.any(sig < -1e-12):
        raise ValueError("leading values must be nonnegative")
    if tail < 0:
        tail = 0.0
    if tail == 0.0 and float(sig.sum()) == 0.0:
        raise ValueError("degenerate all-zero threshold equation (projection of zero matrix)")

    # With j values strictly above tau: k*tau = tail + j*tau + sum_{i>j} sig_i.
    suffix = np.concatenate([np.cumsum(sig[::-1])[::-1], [0.0]])  # suffix[j] = sum_{i >= j}
    for j in range(k):
        tau = (tail + suffix[j]) / (k - j)
        hi = sig[j - 1] if j > 0 else math.inf
        lo = sig[j]
        if lo - 1e-12 <= tau <= hi + 1e-12:
            return float(max(tau, lo))
    # Fallback: all k values above tau cannot happen for j < k exhausted.
    raise ArithmeticError("threshold scan failed to bracket a breakpoint interval")


def exact_fantope_projection(F, G, k, cap=DENSE_CAP):
    """Exact entropic projection onto {(M, W): M,W >= 0, Tr M + Tr W = 1, ||W|| <= Tr W / k}.

    Implements the closed form: the optimizer splits mass e^gamma : e^zeta
    between M ~ exp(F)/Z1 and the nu*-truncated exp(G)/Z2.
    Returns (M_star, W_star, gamma, zeta, tau).
    """
    F = _check_dense_sym(F, cap)
    G = _check_dense_sym(G, cap)
    m = G.shape[0]
    if not (1 <= k <= m):
        raise ValueError(f"k must lie in [1, {m}]")

    gvals, gvecs = dense_eig(G)
    lam = np.exp(gvals)  # eigenvalues of H = exp(G), descending
    tail = float(np.sum(lam[k:]))
    tau = solve_threshold(lam[:k], tail, k)

    clipped = np.minimum(lam, tau)
    Z2 = float(np.sum(clipped))
    W_hat = (gvecs * clipped) @ gvecs.T / Z2

    Q = dense_expm(F)
    Z1 = float(np.trace(Q))
    M_hat = Q / Z1

    gamma = math.log(Z1)
    zeta = math.log(Z2) + sum(math.log(lam[i]) - math.log(min(lam[i], tau)) for i in range(k)) / k

    # Mass split, computed stably from the log-odds.
    t = zeta - gamma
    mass_m = 1.0 / (1.0 + math.exp(t)) if t < 50 else math.exp(-t)
    mass_w = 1.0 - mass_m if t < 50 else 1.0
    return mass_m * M_hat, mass_w * W_hat, gamma, zeta, tau


def project_capped_simplex(y, b, total=1.0):
    """Euclidean projection onto {w: 0 <= w <= b, sum w = total} by bisection on the shift."""
    y = np.asarray(y, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if np.sum(b) < total - 1e-12:
        raise ValueError("budget sum below required total; polytope empty")

    def mass(theta):
        return np.clip(y - theta, 0.0, b).sum()

    lo = float(np.min(y - b)) - 1.0
    hi = float(np.max(y)) + 1.0
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        if mass(mid) > total:
            lo = mid
        else:
            hi = mid
    w = np.clip(y - 0.5 * (lo + hi), 0.0, b)
    s = w.sum()
    if s > 0:
        # Distribute any bisection residue over unsaturated coordinates.
        room = b - w
        deficit = total - s
        if abs(deficit) > 1e-15 and room.sum() > 0:
            if deficit > 0:
                w = w + room * min(1.0, deficit / room.sum())
            else:
                w = w * (total / s)
    return np.minimum(w, b)


def exact_cost_small(Z, b, k, iters=10_000, restarts=1, seed=0, n_cap=20, d_cap=8):
    """min_{w in Phi_b(1)} ||sum_i w_i z_i z_i^T||_k by projected subgradient.

    Z is N x d of centered points. The objective is convex in w (max over the
    fantope of a linear form); subgradient at w is the top-k projector inner
    products, step D/sqrt(t). Returns (value, w_best).
    """
    Z = np.asarray(Z, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    N, d = Z.shape
    if N > n_cap or d > d_cap:
        raise OracleSizeError(f"exact_cost_small caps exceeded: N={N} (<= {n_cap}), d={d} (<= {d_cap})")
    if not (1 <= k <= d):
        raise ValueError("k out of range")
    if b.sum() < 1.0 - 1e-12:
        raise ValueError("budgets sum below 1; Phi_b(1) empty")

    rng = np.random.default_rng(seed)
    diam = 2.0 * math.sqrt(float(np.sum(np.minimum(b, 1.0) ** 2)))

    def value_and_subgrad(w):
        S = (Z.T * w) @ Z
        vals, vecs = dense_eig(S)
        Vk = vecs[:, :k]
        val = float(np.sum(vals[:k]))
        # d f / d w_i = || Vk^T z_i ||^2
        g = np.einsum("ij,ij->i", Z @ Vk, Z @ Vk)
        return val, g

    best_val = math.inf
    best_w = None
    for r in range(restarts):
        if r == 0:
            w = project_capped_simplex(np.full(N, 1.0 / N), b)
        else:
            w = project_capped_simplex(rng.random(N), b)
        for t in range(1, iters + 1):
            val, g = value_and_subgrad(w)
            if val < best_val:
                best_val, best_w = val, w.copy()
            step = diam / math.sqrt(t)
            gn = np.linalg.norm(g)
            if gn > 0:
                w = project_capped_simplex(w - step * g / gn, b)
    return best_val, best_w
