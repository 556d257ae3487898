"""List-decoding driver: cost descent with warm start, sanitizing tuples, weight removal.

`output_list` repeatedly runs `descend_cost`, appending each candidate mean and
subtracting the removed weights from the per-point budget ledger until the
budget is spent, yielding at most 4/alpha candidates, one of which lands within
r*sigma/sqrt(alpha) of the true mean on bounded-covariance inlier sets.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .cost import TRACE_ROUTE_RATIO, CostQuery, approx_cost, greedy_budget_fill
from .spectral import MatVecOperator, pca_topk

# Estimator-facing cost slack; cost queries run at this eps.
COST_EPS = 0.01

# Recovery radius constant: the guarantee is r * sigma / sqrt(alpha).
RADIUS_CONSTANT = 2e3

# Power iterations for the top-ell subspace of the weighted second moment.
SUBSPACE_POWER_ITERS = 300


@dataclass
class EstimationProblem:
    """Dataset plus contamination parameters and derived algorithm constants."""

    X: np.ndarray
    alpha: float
    sigma: float
    seed: int = 0
    ell: int = None            # override of the fantope trace, default 100*ceil(1/alpha)
    inliers: np.ndarray = None  # synthetic-mode ground truth (indices), diagnostics only

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        if self.X.ndim != 2 or self.X.shape[0] < 1:
            raise ValueError("dataset must be a nonempty N x d matrix")
        if not (0.0 < self.alpha <= 0.5):
            raise ValueError("alpha must lie in (0, 1/2]")
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if self.ell is None:
            self.ell = 100 * self.k

    @property
    def n_points(self):
        return self.X.shape[0]

    @property
    def dim(self):
        return self.X.shape[1]

    @property
    def k(self):
        return int(math.ceil(1.0 / self.alpha))

    @property
    def p(self):
        d = max(self.dim, 2)
        val = 10.0 * math.log(d) / math.log(1.0 / (1.0 - self.alpha))
        return min(max(1, int(math.ceil(val))), self.n_points)

    @property
    def radius(self):
        return RADIUS_CONSTANT * self.sigma / math.sqrt(self.alpha)


@dataclass
class SanitizingTuple:
    muhat: np.ndarray
    what: np.ndarray
    info: dict = field(default_factory=dict)


@dataclass
class BudgetLedger:
    """Per-point weight caps b, initialized to 2/(alpha*N) and nonincreasing."""

    values: np.ndarray

    @staticmethod
    def fresh(prob):
        n = prob.n_points
        return BudgetLedger(np.full(n, 2.0 / (prob.alpha * n)))

    def remove(self, what):
        if np.any(what > self.values + 1e-12):
            raise ValueError("removed weights exceed remaining budgets")
        self.values = np.maximum(self.values - what, 0.0)

    @property
    def mass(self):
        return float(np.sum(self.values))


def _sq_dists(X, centers):
    """||x_i - y_j||^2 as an N x p matrix."""
    xx = np.einsum("ij,ij->i", X, X)
    yy = np.einsum("ij,ij->i", centers, centers)
    return np.maximum(xx[:, None] - 2.0 * (X @ centers.T) + yy[None, :], 0.0)


def _batched_trace_costs(sq, budgets):
    """Greedy trace cost per candidate column of the squared-distance matrix."""
    orders = np.argsort(sq, axis=0, kind="stable")
    b_ord = budgets[orders]
    cum = np.cumsum(b_ord, axis=0)
    take = np.clip(1.0 - (cum - b_ord), 0.0, b_ord)
    sq_ord = np.take_along_axis(sq, orders, axis=0)
    return np.einsum("ij,ij->j", take, sq_ord)


def _use_trace_route(prob):
    return prob.ell >= prob.dim or prob.ell >= TRACE_ROUTE_RATIO * prob.dim


def _evaluate_candidates(prob, budgets, candidates, rng):
    """(thetas, best_index, wbar_best) over a batch of candidate centers."""
    if _use_trace_route(prob):
        sq = _sq_dists(prob.X, candidates)
        thetas = _batched_trace_costs(sq, budgets)
        j = int(np.argmin(thetas))
        wbar = greedy_budget_fill(sq[:, j], budgets)
        return thetas, j, wbar
    thetas = np.empty(candidates.shape[0])
    wbars = []
    for j in range(candidates.shape[0]):
        cert = approx_cost(CostQuery(prob.X, candidates[j], budgets, prob.ell,
                                     eps=COST_EPS, delta=COST_EPS), rng)
        thetas[j] = cert.theta
        wbars.append(cert.wbar)
    j = int(np.argmin(thetas))
    return thetas, j, wbars[j]


def warm_start(prob, budgets, rng):
    """Evaluate the cost at p random data points; return (theta, nu, wbar) of the best."""
    if float(np.sum(budgets)) <= 0:
        raise ValueError("warm start requires remaining budget mass")
    n = prob.n_points
    p = prob.p
    idx = np.arange(n) if p >= n else rng.choice(n, size=p, replace=False)
    cands = prob.X[idx]
    thetas, j, wbar = _evaluate_candidates(prob, budgets, cands, rng)
    return float(thetas[j]), cands[j].copy(), wbar


def _top_subspace(prob, wbar, nu, rng):
    """Top-ell eigenvectors of the normalized weighted second moment, or None for identity."""
    if _use_trace_route(prob):
        return None
    z = prob.X - nu
    w = wbar / max(float(np.sum(wbar)), 1e-300)

    def apply(x):
        t = z @ x
        t = t * (w[:, None] if t.ndim > 1 else w)
        return z.T @ t

    op = MatVecOperator(prob.dim, apply, psd=True)
    m = min(prob.ell, prob.dim)
    sand = pca_topk(op, m, 0.05, 0.05, rng, iters=SUBSPACE_POWER_ITERS)
    return sand.vectors


def _project_rows(rows, V):
    if V is None:
        return rows
    return (rows @ V) @ V.T


def weight_removal(X, nu, V, wbar):
    """Keep the prefix of wbar in ascending order of ||Pi_V(x_i - nu)|| up to mass 0.5.

    Ties are broken by original index; raises if wbar carries less than 0.5 mass.
    """
    wbar = np.asarray(wbar, dtype=np.float64)
    if float(np.sum(wbar)) < 0.5 - 1e-9:
        raise ValueError("weight removal needs ||wbar||_1 >= 0.5")
    proj = _project_rows(X - nu, V)
    lengths = np.sqrt(np.einsum("ij,ij->i", proj, proj))
    order = np.argsort(lengths, kind="stable")
    cum = np.cumsum(wbar[order])
    istar = int(np.searchsorted(cum, 0.5 - 1e-12))
    what = np.zeros_like(wbar)
    keep = order[:istar + 1]
    what[keep] = wbar[keep]
    return what


def descend_cost(prob, budgets, rng):
    """One sanitizing round: descend the cost until it stalls or drops below sigma^2."""
    sigma_sq = prob.sigma**2
    cap = max(4, int(math.ceil(10.0 * math.log(max(prob.dim, 2)))))

    theta_prev = math.inf
    theta, nu, wbar = warm_start(prob, budgets, rng)
    trace = [{"t": 1, "theta": theta}]
    last = None  # (nu, wbar, V) of iteration T for the removal path
    t = 1

    while theta >= sigma_sq and theta <= 0.5 * theta_prev and t <= cap:
        V = _top_subspace(prob, wbar, nu, rng)
        idx = (np.arange(prob.n_points) if prob.p >= prob.n_points
               else rng.choice(prob.n_points, size=prob.p, replace=False))
        cands = nu + _project_rows(prob.X[idx] - nu, V)
        thetas, j, wbar_next = _evaluate_candidates(prob, budgets, cands, rng)
        last = (nu, wbar, V)
        theta_prev, theta = theta, float(thetas[j])
        nu, wbar = cands[j].copy(), wbar_next
        t += 1
        trace.append({"t": t, "theta": theta})

    if theta < sigma_sq:
        return SanitizingTuple(muhat=nu, what=wbar,
                               info={"exit": "base-case", "iterations": t, "trace": trace})

    if last is None:
        # The loop never ran: theta >= sigma^2 but the warm start already stalled
        # against theta_0 = inf cannot happen, so this is the iteration cap path.
        nu_T, wbar_T, V_T = nu, wbar, _top_subspace(prob, wbar, nu, rng)
    else:
        nu_T, wbar_T, V_T = last
    what = weight_removal(prob.X, nu_T, V_T, wbar_T)
    return SanitizingTuple(muhat=nu_T, what=what,
                           info={"exit": "weight-removal", "iterations": t, "trace": trace})


def output_list(prob, rng=None):
    """Run the full list-decoding loop; returns (means, diagnostics).

    means is a q x d array with q <= 4/alpha; diagnostics records per-round
    cost traces, budget mass, and (when ground truth is attached) inlier mass.
    """
    if rng is None:
        rng = np.random.default_rng(prob.seed)
    ledger = BudgetLedger.fresh(prob)
    cap = int(math.ceil(4.0 / prob.alpha)) + 1
    means = []
    rounds = []
    failure = False

    while ledger.mass >= 1.0 - 1e-9:
        if len(means) >= cap:
            failure = True
            break
        tup = descend_cost(prob, ledger.values, rng)
        means.append(tup.muhat)
        entry = {"round": len(means), "exit": tup.info["exit"],
                 "iterations": tup.info["iterations"],
                 "removed_mass": float(np.sum(tup.what)),
                 "budget_mass_before": ledger.mass}
        if prob.inliers is not None:
            entry["inlier_budget"] = float(np.sum(ledger.values[prob.inliers]))
            entry["inlier_removed"] = float(np.sum(tup.what[prob.inliers]))
        rounds.append(entry)
        ledger.remove(np.minimum(tup.what, ledger.values))

    diagnostics = {"rounds": rounds, "failure": failure,
                   "final_budget_mass": ledger.mass,
                   "list_length": len(means), "cap": cap}
    means_arr = np.asarray(means) if means else np.zeros((0, prob.dim))
    return means_arr, diagnostics


def resilience_check(w, w_prime, mu, mu_prime, sigma1, sigma2, tol=1e-9):
    """Check ||mu - mu'|| <= sqrt(2(sigma1^2 + sigma2^2)/gamma) for overlapping soft weights.

    gamma is the overlap sum(min(w, w')). Returns a dict with the verdict; a
    zero overlap makes the bound vacuous and is flagged instead of asserted.
    """
    w = np.asarray(w, dtype=np.float64)
    w_prime = np.asarray(w_prime, dtype=np.float64)
    gamma = float(np.sum(np.minimum(w, w_prime)))
    lhs = float(np.linalg.norm(np.asarray(mu) - np.asarray(mu_prime)))
    if gamma <= 0.0:
        return {"vacuous": True, "gamma": gamma, "lhs": lhs, "rhs": math.inf, "holds": True}
    rhs = math.sqrt(2.0 * (sigma1**2 + sigma2**2) / gamma)
    return {"vacuous": False, "gamma": gamma, "lhs": lhs, "rhs": rhs,
            "holds": lhs <= rhs + tol}
