"""Power-method eigensolver with deflation and Taylor matrix-exponential operators.

Everything here works through matrix-vector products only; no routine ever
materializes a dense matrix of the operator it is given.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

# Multiplier on the power-iteration count t = L*(log d + log 1/delta + log 1/eps)/eps.
# L = 1 already suffices for the tempered-start argument; 2 keeps a 2x margin.
POWER_ITER_CONSTANT = 2.0

# Below this norm a power iterate is treated as annihilated by the operator.
ZERO_NORM_TOL = 1e-30


class MatVecOperator:
    """Symmetric linear operator given only by its action on vectors.

    `apply` must accept both vectors of shape (dim,) and blocks of shape
    (dim, b); linearity and (when `psd` is set) positive semidefiniteness
    are the caller's responsibility.
    """

    __slots__ = ("dim", "_apply", "psd")

    def __init__(self, dim, apply_fn, psd=True):
        if dim < 1:
            raise ValueError("operator dimension must be >= 1")
        self.dim = int(dim)
        self._apply = apply_fn
        self.psd = bool(psd)

    def apply(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[0] != self.dim:
            raise ValueError(f"dimension mismatch: operator dim {self.dim}, vector dim {x.shape[0]}")
        return self._apply(x)

    def __call__(self, x):
        return self.apply(x)

    @staticmethod
    def from_dense(mat, psd=True):
        mat = np.asarray(mat, dtype=np.float64)
        if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
            raise ValueError("expected a square matrix")
        return MatVecOperator(mat.shape[0], lambda x: mat @ x, psd=psd)

    @staticmethod
    def zero(dim):
        return MatVecOperator(dim, lambda x: np.zeros_like(x), psd=True)

    @staticmethod
    def identity(dim, scale=1.0):
        return MatVecOperator(dim, lambda x: scale * x, psd=scale >= 0)

    def scaled(self, c):
        return MatVecOperator(self.dim, lambda x: c * self.apply(x), psd=self.psd and c >= 0)

    def add(self, other):
        if other.dim != self.dim:
            raise ValueError("dimension mismatch in operator sum")
        return MatVecOperator(self.dim, lambda x: self.apply(x) + other.apply(x),
                              psd=self.psd and other.psd)

    def shifted(self, c):
        """Operator + c*I."""
        return MatVecOperator(self.dim, lambda x: self.apply(x) + c * x,
                              psd=self.psd and c >= 0)

    def deflated(self, vectors):
        """P_perp * A * P_perp for the orthogonal complement of the given columns."""
        V = np.asarray(vectors, dtype=np.float64)
        if V.ndim == 1:
            V = V[:, None]
        if V.shape[0] != self.dim:
            raise ValueError("dimension mismatch in deflation basis")

        def _apply(x):
            y = x - V @ (V.T @ x)
            y = self.apply(y)
            return y - V @ (V.T @ y)

        return MatVecOperator(self.dim, _apply, psd=self.psd)

    def to_dense(self):
        """Materialize as a dense array (test/verification helper)."""
        return self.apply(np.eye(self.dim))


def _project_out(x, basis):
    """One Gram-Schmidt sweep of x against orthonormal columns of basis."""
    if basis is not None and basis.shape[1] > 0:
        x = x - basis @ (basis.T @ x)
    return x


def power_iteration_count(dim, eps, delta):
    val = POWER_ITER_CONSTANT * (math.log(max(dim, 2)) + math.log(1.0 / delta) + math.log(1.0 / eps)) / eps
    return max(1, int(math.ceil(val)))


def _canonical_unit(dim, basis=None):
    """First canonical basis vector with nonzero residual against `basis`."""
    for j in range(dim):
        e = np.zeros(dim)
        e[j] = 1.0
        r = _project_out(e, basis)
        nrm = np.linalg.norm(r)
        if nrm > 1e-8:
            return r / nrm
    raise ValueError("no canonical direction orthogonal to basis")


def power_method(A, eps, delta, rng, iters=None, start=None, deflate=None):
    """Top-eigenvector approximation v = A^t g / ||A^t g|| (seeded Gaussian start).

    Returns (v, zero_flag). When the iterate collapses below ZERO_NORM_TOL the
    operator is treated as zero on the working subspace: a canonical unit
    vector is returned with zero_flag set.

    `start` (warm start) and `iters` override the default Gaussian start and
    the iteration count t = ceil(L*(log d + log 1/delta + log 1/eps)/eps);
    both overrides preserve determinism for a fixed rng state.
    """
    if not A.psd:
        raise ValueError("power_method requires a PSD-flagged operator")
    if not (0.0 < eps < 1.0) or not (0.0 < delta < 1.0):
        raise ValueError("eps and delta must lie in (0, 1)")
    d = A.dim
    t = power_iteration_count(d, eps, delta) if iters is None else int(iters)

    if start is None:
        g = rng.standard_normal(d)
    else:
        g = np.array(start, dtype=np.float64, copy=True)
    g = _project_out(g, deflate)
    nrm = np.linalg.norm(g)
    if nrm < ZERO_NORM_TOL:
        return _canonical_unit(d, deflate), True

    v = g / nrm
    for _ in range(t):
        w = A.apply(v)
        w = _project_out(w, deflate)
        nrm = np.linalg.norm(w)
        if nrm < ZERO_NORM_TOL:
            return _canonical_unit(d, deflate), True
        v = w / nrm
    return v, False


@dataclass
class SpectralSandwich:
    """Top-m eigenpairs of a PSD operator plus the deflated remainder.

    Represents A_tilde = sum_i lam[i] * v_i v_i^T + P_perp A P_perp, which
    sandwiches A within (1 +/- eps)^m with probability 1 - O(m*delta).
    """

    lambdas: np.ndarray          # descending, >= 0
    vectors: np.ndarray          # dim x m, orthonormal columns
    source: MatVecOperator
    eps: float
    delta: float
    zero_flags: np.ndarray = field(default=None)

    @property
    def dim(self):
        return self.source.dim

    @property
    def m(self):
        return self.vectors.shape[1]

    def perp(self, x):
        V = self.vectors
        return x - V @ (V.T @ x)

    def apply(self, x):
        """A_tilde x = sum lam_i <v_i, x> v_i + P_perp A P_perp x."""
        x = np.asarray(x, dtype=np.float64)
        if x.shape[0] != self.dim:
            raise ValueError("dimension mismatch in sandwich apply")
        V = self.vectors
        head = V @ (self.lambdas * (V.T @ x).T).T if x.ndim > 1 else V @ (self.lambdas * (V.T @ x))
        return head + self.perp(self.source.apply(self.perp(x)))

    def to_dense(self):
        return self.apply(np.eye(self.dim))


def pca_topk(A, m, eps, delta, rng, iters=None, warm=None):
    """Deflation PCA: m rounds of the power method, each at accuracy eps/(2m).

    Eigenvalue estimates are Rayleigh quotients against the deflated operator;
    each new vector is re-orthogonalized against its predecessors once to
    control floating-point drift of the exact projector.
    """
    if not (1 <= m <= A.dim):
        raise ValueError("component count must satisfy 1 <= m <= dim")
    eps_c = eps / (2.0 * m)
    delta_c = delta / (2.0 * m)
    d = A.dim

    vecs = np.zeros((d, 0))
    lams = []
    flags = []
    for i in range(m):
        start = None
        if warm is not None and i < warm.shape[1]:
            start = warm[:, i]
        v, flag = power_method(A, eps_c, delta_c, rng, iters=iters, start=start, deflate=vecs)
        v = _project_out(v, vecs)
        nrm = np.linalg.norm(v)
        if nrm < 1e-12:
            v = _canonical_unit(d, vecs)
            flag = True
        else:
            v = v / nrm
        Av = A.apply(_project_out(v, vecs))
        lam = float(v @ _project_out(Av, vecs))
        if flag or lam < 0:
            lam = max(lam, 0.0)
        vecs = np.column_stack([vecs, v])
        lams.append(lam)
        flags.append(flag)

    return SpectralSandwich(
        lambdas=np.asarray(lams), vectors=vecs, source=A,
        eps=eps, delta=delta, zero_flags=np.asarray(flags),
    )


def sandwich_apply(S, x):
    return S.apply(x)


def exp_taylor_degree(kappa, eps):
    """Truncation degree max{e^2*kappa, log(2/eps)} for the PSD exp sandwich."""
    if kappa < 0:
        raise ValueError("spectral-norm bound kappa must be >= 0")
    return max(1, int(math.ceil(max(math.e ** 2 * kappa, math.log(2.0 / eps)))))


class ExpOperator:
    """Truncated-Taylor surrogate for exp(B) of a PSD operator with ||B|| <= kappa.

    Satisfies (1 - eps) exp(B) <= B_hat <= exp(B). For large kappa the action
    is computed in `segments` sequential stages exp(B) = exp(B/q)^q so that
    intermediate Taylor terms stay finite; `log_shift` applies an extra factor
    e^{-log_shift} spread across the stages, letting callers keep astronomically
    scaled exponentials in a representable range.
    """

    def __init__(self, base, kappa, eps, log_shift=0.0, segment_norm=40.0):
        if kappa < 0:
            raise ValueError("kappa must be >= 0")
        if not base.psd:
            raise ValueError("ExpOperator requires a PSD base operator")
        self.base = base
        self.kappa = float(kappa)
        self.eps = float(eps)
        self.log_shift = float(log_shift)
        self.segments = max(1, int(math.ceil(kappa / segment_norm)))
        self.degree = exp_taylor_degree(kappa / self.segments, eps / self.segments)
        self.dim = base.dim
        self.psd = True

    def apply(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[0] != self.dim:
            raise ValueError("dimension mismatch in exp apply")
        q = self.segments
        seg_shift = math.exp(-self.log_shift / q) if self.log_shift != 0.0 else 1.0
        inv_q = 1.0 / q
        y = x.astype(np.float64, copy=True)
        for _ in range(q):
            term = y.copy()
            acc = y.copy()
            for i in range(1, self.degree + 1):
                term = self.base.apply(term) * (inv_q / i)
                acc += term
            y = acc * seg_shift if seg_shift != 1.0 else acc
        return y

    def __call__(self, x):
        return self.apply(x)

    def as_operator(self):
        return MatVecOperator(self.dim, self.apply, psd=True)

    def to_dense(self):
        return self.apply(np.eye(self.dim))


def exp_operator(B, kappa, eps):
    return ExpOperator(B, kappa, eps)
