"""Width-independent solver for the generalized packing/covering SDP pair under a Ky-Fan cap.

Decision problem: either a dual feasible w >= 0 with sum w >= 1 - eps for

    sum_i w_i A_i <= I,   || sum_i w_i B_i ||_k <= k,

or a primal feasible (M, W) with Tr M + Tr W <= 1 + eps, <A_i,M> + <B_i,W> >= 1
for all i, and ||W|| <= Tr W / k. Constraint matrices arrive factorized and are
only ever touched through matvecs and sketched inner products.

The multiplicative-weights loop keeps the published update structure (weights
on the under-covered set S_t grow by a factor 1 + alpha_t) but replaces the
worst-case step and iteration constants, which are astronomically conservative,
with tracked spectral upper bounds: alpha_t = eps_dagger / max(1, |Psi|, |Phi|)
is the largest step for which the regret argument's gain matrices stay bounded
by 1. Exits are certified by measurement rather than by the worst-case
induction: the dual is normalized by measured norm bounds after the weight
mass clears its target, and an empty S_t triggers an immediate primal exit
after a fat-sketch recheck.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import fantope, sketch
from .oracle import dense_eig, exact_kyfan_norm
from .spectral import MatVecOperator, pca_topk


class FactorSide:
    """One side's n PSD constraint matrices A_i = U_i U_i^T, stored as stacked factor columns."""

    def __init__(self, dim, factors):
        self.dim = int(dim)
        cols = []
        starts = [0]
        for U in factors:
            U = np.asarray(U, dtype=np.float64)
            if U.ndim == 1:
                U = U[:, None]
            if U.shape[0] != dim:
                raise ValueError("factor dimension mismatch")
            cols.append(U)
            starts.append(starts[-1] + U.shape[1])
        self.stacked = np.concatenate(cols, axis=1) if cols else np.zeros((dim, 0))
        self.starts = np.asarray(starts[:-1], dtype=np.intp)
        self.widths = np.diff(np.asarray(starts, dtype=np.intp))
        self.n = len(factors)
        self.rank_one = bool(np.all(self.widths == 1))
        self.traces = self.segment_sum(np.einsum("ij,ij->j", self.stacked, self.stacked))

    def segment_sum(self, per_col):
        if self.n == 0:
            return np.zeros(0)
        if self.rank_one:
            return np.asarray(per_col, dtype=np.float64).copy()
        return np.add.reduceat(per_col, self.starts)

    def _col_weights(self, w):
        if self.rank_one:
            return w
        return np.repeat(w, self.widths)

    def weighted_apply(self, w, x):
        cw = self._col_weights(w)
        t = self.stacked.T @ x
        t = t * (cw[:, None] if t.ndim > 1 else cw)
        return self.stacked @ t

    def op(self, w):
        wc = np.array(w, dtype=np.float64, copy=True)
        return MatVecOperator(self.dim, lambda x: self.weighted_apply(wc, x), psd=True)

    def weighted_trace(self, w):
        return float(w @ self.traces)

    def deflated_stacked(self, V):
        return self.stacked - V @ (V.T @ self.stacked)

    def quad_sums(self, V, coefs):
        """Per-constraint sum_j coefs_j * ||U_i^T v_j||^2."""
        M = self.stacked.T @ V
        return self.segment_sum((M * M) @ np.asarray(coefs, dtype=np.float64))

    def sketch_sums(self, QY):
        """Per-constraint squared Frobenius norms from a sketched block QY (rows x total_cols)."""
        return self.segment_sum(np.einsum("ij,ij->j", QY.T, QY.T))

    def dense(self, i):
        U = self.stacked[:, self.starts[i]:self.starts[i] + self.widths[i]]
        return U @ U.T

    def dense_weighted(self, w):
        cw = self._col_weights(np.asarray(w, dtype=np.float64))
        return (self.stacked * cw) @ self.stacked.T


class DiagSide(FactorSide):
    """Diagonal rank-1 constraints A_i = c_i e_i e_i^T (dim == n); exponentials are exact."""

    def __init__(self, coef):
        coef = np.asarray(coef, dtype=np.float64)
        if np.any(coef < 0):
            raise ValueError("diagonal coefficients must be nonnegative")
        n = coef.shape[0]
        self.coef = coef
        factors = [np.sqrt(coef[i]) * _unit(n, i) for i in range(n)]
        super().__init__(n, factors)

    def weighted_apply(self, w, x):
        d = w * self.coef
        return x * (d[:, None] if x.ndim > 1 else d)

    def op(self, w):
        d = np.array(w * self.coef, dtype=np.float64)
        return MatVecOperator(self.dim, lambda x: x * (d[:, None] if x.ndim > 1 else d), psd=True)


def _unit(n, i):
    e = np.zeros(n)
    e[i] = 1.0
    return e


class _DiagHalfExp:
    """Elementwise half-exponent e^{(d - shift)/2} * x for diagonal gain matrices."""

    def __init__(self, diag, shift):
        self.half = np.exp(0.5 * (diag - shift))
        self.dim = diag.shape[0]
        self.psd = True

    def apply(self, x):
        return x * (self.half[:, None] if np.ndim(x) > 1 else self.half)


@dataclass
class SdpInstance:
    """Factorized instance of the generalized packing/covering pair."""

    a_side: FactorSide
    b_side: FactorSide
    k: int
    eps: float
    delta: float

    def __post_init__(self):
        if self.a_side.n != self.b_side.n:
            raise ValueError("constraint counts differ between sides")
        if not (1 <= self.k <= self.b_side.dim):
            raise ValueError("rank parameter k out of range")
        if not (0 < self.eps < 1):
            raise ValueError("eps must lie in (0, 1)")
        if not np.all(np.isfinite(self.a_side.stacked)) or not np.all(np.isfinite(self.b_side.stacked)):
            raise ValueError("constraint factors must be finite")

    @property
    def n(self):
        return self.a_side.n

    @property
    def l(self):
        return self.a_side.dim

    @property
    def m(self):
        return self.b_side.dim

    @staticmethod
    def from_rank_one(a_factors, b_factors, k, eps, delta):
        a = [np.asarray(f, dtype=np.float64) for f in a_factors]
        b = [np.asarray(f, dtype=np.float64) for f in b_factors]
        l = a[0].shape[0]
        m = b[0].shape[0]
        return SdpInstance(FactorSide(l, a), FactorSide(m, b), k, eps, delta)


class PrimalOperator:
    """ridge*I plus a weighted mean of projection-handle parts on one side."""

    def __init__(self, dim, parts, side, ridge=0.0):
        self.dim = dim
        self.parts = parts          # list of (weight, ProjectionHandle)
        self.side = side            # "M" or "W"
        self.ridge = float(ridge)

    def apply(self, x):
        x = np.asarray(x, dtype=np.float64)
        acc = self.ridge * x
        for wgt, h in self.parts:
            acc = acc + wgt * (h.apply_m(x) if self.side == "M" else h.apply_w(x))
        return acc

    def trace_estimate(self):
        t = self.ridge * self.dim
        for wgt, h in self.parts:
            t += wgt * (h.trace_m() if self.side == "M" else h.trace_w())
        return t

    def to_dense(self):
        return self.apply(np.eye(self.dim))

    def with_ridge(self, extra):
        return PrimalOperator(self.dim, self.parts, self.side, self.ridge + extra)


@dataclass
class SdpAnswer:
    """Tagged certificate: exactly one of the dual weights or the primal handle pair."""

    tag: str                      # "dual" | "primal"
    dual: np.ndarray = None
    primal_m: PrimalOperator = None
    primal_w: PrimalOperator = None
    info: dict = field(default_factory=dict)


@dataclass
class SolverOptions:
    eps_dagger: float = None        # projection/sketch tolerance and step scale
    power_iters: int = 140          # cold-start power iterations per component
    power_iters_warm: int = 16      # with a warm start from the previous iterate
    sketch_rows: int = 192          # rows for the per-iteration S_t estimates
    trace_rows: int = 1024          # rows for Z1 / tail-trace estimates
    recheck_rows: int = 8192        # rows for the primal-exit recheck
    recalibrate_every: int = 25     # iterations between measured norm recalibrations
    mass_margin: float = None       # dual exit mass target is 1 - mass_margin (default eps/2)
    alpha_cap: float = 0.25
    soft_cap: int = 30_000          # practical iteration ceiling (paper cap R also enforced)
    plateau_window: int = 600       # stagnant mass/normalization ratio triggers a dual exit
    wrapper_scale: float = 1.0      # decision wrapper runs the loop at eps*scale
    instrument: object = None       # callback(dict) per iteration, test hook


def _derived_constants(inst, options):
    n, l, m, k = inst.n, inst.l, inst.m, inst.k
    eps = inst.eps
    K = (1.0 + math.log(n + l + m)) / eps
    eps_dag = options.eps_dagger
    if eps_dag is None:
        eps_dag = min(max(eps / 4.0, 0.02), 0.5 / k**2)
    R_paper = int(math.ceil(512.0 * math.log(n + l + m) * K * k / (eps_dag * eps)))
    R = min(R_paper, options.soft_cap)
    delta_sub = max(inst.delta / (5.0 * min(R, 4096)), 1e-12)
    mass_margin = options.mass_margin if options.mass_margin is not None else eps / 2.0
    return K, eps_dag, R, R_paper, delta_sub, mass_margin


def _norm_upper(op, k_probe, rng, iters, diag=None):
    """Measured upper bound on the spectral norm (exact for diagonal operators)."""
    if diag is not None:
        return float(np.max(diag, initial=0.0))
    sand = pca_topk(op, 1, 0.1, 0.05, rng, iters=iters)
    return float(sand.lambdas[0]) / (1.0 - 2.0 * 0.1)


def solver_loop(inst, rng, options=None):
    """Run the multiplicative-weights packing/covering loop on a preprocessed instance.

    Returns an SdpAnswer; `inst.eps` is the decision tolerance of this loop.
    """
    options = options or SolverOptions()
    K, eps_dag, R, R_paper, delta_sub, mass_margin = _derived_constants(inst, options)
    n, l, m, k = inst.n, inst.l, inst.m, inst.k
    eps = inst.eps
    a_side, b_side = inst.a_side, inst.b_side
    a_diag = isinstance(a_side, DiagSide)

    tr_ab = a_side.traces + b_side.traces
    if np.any(tr_ab <= 0):
        raise ValueError("every constraint needs a nonzero factor on at least one side")
    w0 = 1.0 / (n * tr_ab)
    w = w0.copy()

    # Upper bounds on ||Psi^t|| and ||Phi^t||; trace sums are always valid,
    # the incremental product bound tightens them between recalibrations.
    psi_up = a_side.weighted_trace(w)
    phi_up = b_side.weighted_trace(w)

    # The running primal average only matters on the rare cap-exhausted path;
    # a bounded tail keeps memory flat over long dual climbs.
    history = deque(maxlen=4096)
    prev_V = None
    prev_top_a = None
    exit_reason = None
    dual_scale = None
    best_ratio = 0.0
    t_best = 0
    t = 0

    def _dual_targets(w_vec, tighten=False):
        """(spec_norm_bound_A, kyfan_bound_B/k) from cheap certificates, optionally remeasured."""
        tr_a = a_side.weighted_trace(w_vec)
        tr_b = b_side.weighted_trace(w_vec)
        if a_diag:
            pa = float(np.max(w_vec * a_side.coef))
        else:
            pa = min(psi_up, tr_a)
            if tighten:
                pa = min(pa, _norm_upper(a_side.op(w_vec), 1, rng, iters=options.power_iters))
        pb = min(phi_up, tr_b)
        if tighten:
            pb = min(pb, _norm_upper(b_side.op(w_vec), 1, rng, iters=options.power_iters))
        ky_b = min(tr_b, k * pb)
        return pa, ky_b / k

    while t < R:
        # Dual exit: weight mass cleared both the K threshold and the measured
        # normalization target with the requested mass margin.
        mass = float(np.sum(w))
        pa, kyb = _dual_targets(w)
        d_hat = max(pa, kyb)
        ratio = mass / d_hat if d_hat > 0 else math.inf
        if ratio > best_ratio + 1e-3:
            best_ratio, t_best = ratio, t
        if mass >= K and mass * (1.0 - mass_margin) >= d_hat:
            pa_t, kyb_t = _dual_targets(w, tighten=True)
            d_final = max(pa_t, kyb_t) * (1.0 + 1e-9)
            if mass * (1.0 - mass_margin) >= d_final:
                exit_reason = "dual"
                dual_scale = d_final
                break

        # Plateau: the ratio of mass to its normalization has saturated (the
        # packing optimum sits below the overshoot target); exit dual once the
        # saturated ratio still clears 1 - eps on remeasurement.
        if mass >= K and t - t_best >= options.plateau_window and ratio >= 1.0 - eps:
            pa_t, kyb_t = _dual_targets(w, tighten=True)
            d_final = max(pa_t, kyb_t) * (1.0 + 1e-9)
            if mass / d_final >= 1.0 - eps:
                exit_reason = "dual-plateau"
                dual_scale = d_final
                break
            t_best = t

        t += 1
        omega = w - w0

        # W-side projection pieces for the current gains Theta = Phi^{t-1} - Phi^0.
        theta_op = b_side.op(omega)
        kappa_g = phi_up * 1.05 + 1.0
        iters = options.power_iters if prev_V is None else options.power_iters_warm
        sand = pca_topk(theta_op, min(k, m), eps_dag, delta_sub, rng, iters=iters, warm=prev_V)
        prev_V = sand.vectors
        shift_g = float(np.max(sand.lambdas))
        half_g = sketch.half_exp_operator(theta_op, kappa_g, eps_dag, log_shift=shift_g,
                                          economical=True)
        w_part = fantope.projection_w_part(half_g, sand.vectors, shift_g, k, eps_dag,
                                           delta_sub, rng, trace_rows=options.trace_rows)
        V = w_part.vectors

        # M-side exponential of Omega = Psi^{t-1} - Psi^0.
        if a_diag:
            omc = omega * a_side.coef
            shift_f = float(np.max(omc, initial=0.0))
            half_f = _DiagHalfExp(omc, shift_f)
            expvals = half_f.half**2
            z1 = float(np.sum(expvals))
            y_vals = a_side.coef * expvals
        else:
            omega_op = a_side.op(omega)
            kappa_f = psi_up * 1.05 + 1.0
            probe = pca_topk(omega_op, 1, 0.1, delta_sub, rng,
                             iters=options.power_iters_warm if prev_top_a is not None else options.power_iters,
                             warm=prev_top_a)
            prev_top_a = probe.vectors
            shift_f = float(probe.lambdas[0])
            half_f = sketch.half_exp_operator(omega_op, kappa_f, eps_dag, log_shift=shift_f,
                                              economical=True)
            z1 = sketch.sketched_square_norms(half_f, [np.eye(l)], options.trace_rows, rng)[0]
            y_vals = None  # estimated below against the sketch rows

        handle = fantope.compose_projection(w_part, half_f, z1, shift_f)

        defl_b = b_side.deflated_stacked(V)

        def _covering(rows):
            if y_vals is not None:
                y = y_vals
            else:
                y = sketch.sketched_square_norms(half_f, [a_side.stacked[:, s:s + wd]
                                                          for s, wd in zip(a_side.starts, a_side.widths)],
                                                 rows, rng)
            z = sketch.sketched_square_norms(half_g, [defl_b[:, s:s + wd]
                                                      for s, wd in zip(b_side.starts, b_side.widths)],
                                             rows, rng)
            quad = b_side.quad_sums(V, handle.mass_w * w_part.top_coef)
            return handle.m_scale * y + (handle.mass_w * w_part.perp_coef) * z + quad

        covering = _covering(options.sketch_rows)
        S = covering <= (1.0 + eps)

        if not np.any(S):
            covering2 = _covering(options.recheck_rows)
            if np.min(covering2) >= (1.0 + eps) * (1.0 - eps_dag):
                exit_reason = "primal-early"
                history = [(1.0, handle)]
                break
            S = covering2 <= (1.0 + eps)
            if not np.any(S):
                S = covering2 <= np.min(covering2) * (1.0 + 1e-9)

        history.append((1.0, handle))
        alpha_t = min(eps_dag / max(1.0, psi_up, phi_up), options.alpha_cap)
        w = w + alpha_t * np.where(S, w, 0.0)

        psi_up = min(psi_up * (1.0 + alpha_t), a_side.weighted_trace(w))
        phi_up = min(phi_up * (1.0 + alpha_t), b_side.weighted_trace(w))
        if t % options.recalibrate_every == 0:
            if a_diag:
                psi_up = float(np.max(w * a_side.coef))
            else:
                psi_up = min(psi_up, _norm_upper(a_side.op(w), 1, rng, iters=options.power_iters_warm * 4))
            phi_up = min(phi_up, _norm_upper(b_side.op(w), 1, rng, iters=options.power_iters_warm * 4))

        if options.instrument is not None:
            options.instrument({
                "t": t, "w": w.copy(), "alpha": alpha_t, "covering": covering,
                "S": S.copy(), "psi_up": psi_up, "phi_up": phi_up, "K": K,
                "mass": float(np.sum(w)),
            })

    info = {"iterations": t, "K": K, "eps_dagger": eps_dag, "R": R, "R_paper": R_paper,
            "exit": exit_reason}

    if exit_reason in ("dual", "dual-plateau"):
        w_star = w / dual_scale
        info["dual_mass"] = float(np.sum(w_star))
        info["dual_scale"] = dual_scale
        return SdpAnswer(tag="dual", dual=w_star, info=info)

    if exit_reason is None:
        # Iteration budget exhausted: prefer a dual answer when the mass supports
        # it, otherwise fall back to the running primal average.
        pa_t, kyb_t = _dual_targets(w, tighten=True)
        d_final = max(pa_t, kyb_t) * (1.0 + 1e-9)
        if float(np.sum(w)) / d_final >= 1.0 - eps:
            info["exit"] = "dual-cap"
            info["dual_scale"] = d_final
            return SdpAnswer(tag="dual", dual=w / d_final, info=info)
        info["exit"] = "primal-cap"

    if not history:
        raise RuntimeError("solver terminated without producing a certificate")
    total = sum(wgt for wgt, _ in history)
    parts = [(wgt / total, h) for wgt, h in history]
    m_op = PrimalOperator(l, parts, "M")
    w_op = PrimalOperator(m, parts, "W")
    return SdpAnswer(tag="primal", primal_m=m_op, primal_w=w_op, info=info)


def packing_covering_decision(inst, rng, options=None):
    """Preprocessing wrapper: trace filtering, T=0 shortcut, solve, certificate post-shift."""
    if inst.eps < 1.0 / inst.n**2:
        raise ValueError("error tolerance must satisfy eps >= 1/n^2")
    return decision_core(inst, rng, options)


def decision_core(inst, rng, options=None):
    """The wrapper body without the eps >= 1/n^2 size precondition (internal callers)."""
    options = options or SolverOptions()
    n = inst.n
    size5 = float(n + inst.l + inst.m) ** 5
    ridge = 1.0 / size5

    keep = np.flatnonzero((inst.a_side.traces < size5) & (inst.b_side.traces < size5))
    discarded = np.setdiff1d(np.arange(n), keep)

    if keep.size == 0:
        m_op = PrimalOperator(inst.l, [], "M", ridge=ridge)
        w_op = PrimalOperator(inst.m, [], "W", ridge=ridge)
        return SdpAnswer(tag="primal", primal_m=m_op, primal_w=w_op,
                         info={"exit": "all-discarded", "discarded": discarded.tolist()})

    if keep.size == n:
        sub = inst
    else:
        a_fac = [inst.a_side.stacked[:, inst.a_side.starts[i]:inst.a_side.starts[i] + inst.a_side.widths[i]]
                 for i in keep]
        b_fac = [inst.b_side.stacked[:, inst.b_side.starts[i]:inst.b_side.starts[i] + inst.b_side.widths[i]]
                 for i in keep]
        if isinstance(inst.a_side, DiagSide) and np.array_equal(keep, np.arange(n)):
            a_side = inst.a_side
        else:
            a_side = FactorSide(inst.l, a_fac)
        sub = SdpInstance(a_side, FactorSide(inst.m, b_fac), inst.k, inst.eps, inst.delta)

    run = SdpInstance(sub.a_side, sub.b_side, sub.k,
                      sub.eps * options.wrapper_scale, sub.delta)
    ans = solver_loop(run, rng, options)
    ans.info["discarded"] = discarded.tolist()

    if ans.tag == "dual":
        w_full = np.zeros(n)
        w_full[keep] = ans.dual
        return SdpAnswer(tag="dual", dual=w_full, info=ans.info)

    return SdpAnswer(tag="primal",
                     primal_m=ans.primal_m.with_ridge(ridge),
                     primal_w=ans.primal_w.with_ridge(ridge),
                     info=ans.info)


def verify_certificate(inst, ans, tol=1e-6):
    """Independent dense feasibility check of an answer; returns (ok, report)."""
    report = {"tag": ans.tag, "violations": []}
    viol = report["violations"]
    eps = inst.eps
    k = inst.k

    if ans.tag == "dual":
        w = ans.dual
        if np.any(w < -tol):
            viol.append(("dual_nonneg", float(np.min(w)), 0.0))
        mass = float(np.sum(w))
        report["mass"] = mass
        if mass < 1.0 - eps - tol:
            viol.append(("dual_mass", mass, 1.0 - eps))
        Psi = inst.a_side.dense_weighted(w)
        lam_a = dense_eig(Psi)[0][0] if inst.l else 0.0
        report["psi_norm"] = float(lam_a)
        if lam_a > 1.0 + tol:
            viol.append(("dual_spectral_cap", float(lam_a), 1.0))
        Phi = inst.b_side.dense_weighted(w)
        ky = exact_kyfan_norm(Phi, k)
        report["phi_kyfan"] = ky
        if ky > k + tol:
            viol.append(("dual_kyfan_cap", ky, float(k)))
    elif ans.tag == "primal":
        M = ans.primal_m.to_dense()
        W = ans.primal_w.to_dense()
        M = 0.5 * (M + M.T)
        W = 0.5 * (W + W.T)
        scale = max(np.abs(M).max(), np.abs(W).max(), 1.0)
        if dense_eig(M)[0][-1] < -tol * scale:
            viol.append(("primal_m_psd", float(dense_eig(M)[0][-1]), 0.0))
        w_vals = dense_eig(W)[0]
        if w_vals[-1] < -tol * scale:
            viol.append(("primal_w_psd", float(w_vals[-1]), 0.0))
        tr = float(np.trace(M) + np.trace(W))
        report["trace"] = tr
        if tr > 1.0 + eps + tol:
            viol.append(("primal_trace", tr, 1.0 + eps))
        cap = float(np.trace(W)) / k
        if w_vals[0] > cap + tol:
            viol.append(("primal_w_spectral_cap", float(w_vals[0]), cap))
        for i in range(inst.n):
            c = float(np.sum(inst.a_side.dense(i) * M) + np.sum(inst.b_side.dense(i) * W))
            if c < 1.0 - tol:
                viol.append((f"primal_covering_{i}", c, 1.0))
        report["min_covering"] = min(
            float(np.sum(inst.a_side.dense(i) * M) + np.sum(inst.b_side.dense(i) * W))
            for i in range(inst.n)) if inst.n else None
    else:
        viol.append(("unknown_tag", ans.tag, ""))

    return len(viol) == 0, report
