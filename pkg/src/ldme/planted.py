"""Semirandom planted partition: generation, reduction to mean estimation, rounding.

A directed graph on n vertices where the out-neighborhood rows of a planted set
S (|S| = alpha*n) are random (edge probability a/n into S, b/n outside) and all
other rows are adversarial. Recovery scales the rows so the planted rows have
unit covariance, runs the list-decodable mean estimator, and thresholds each
candidate at (a+b)/(2n).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .estimator import EstimationProblem, output_list

ADVERSARIES = ("empty", "mimic", "random-dense")


@dataclass
class PlantedInstance:
    n: int
    alpha: float
    a: float
    b: float
    planted: np.ndarray        # sorted indices of S
    adjacency: np.ndarray      # n x n uint8 rows A_u
    adversary: str
    seed: int

    @property
    def planted_size(self):
        return self.planted.shape[0]


def generate(n, alpha, a, b, adversary="empty", seed=0):
    """Sample a planted-partition instance; self-loops are allowed.

    Rows of S are Bernoulli(a/n) into S and Bernoulli(b/n) outside; the
    adversary fills the remaining rows: "empty" leaves them zero, "mimic"
    replays the S-row marginal on a decoy set, "random-dense" uses fair coins.
    """
    if adversary not in ADVERSARIES:
        raise ValueError(f"unknown adversary policy {adversary!r}")
    if not (0 < alpha <= 1) or round(alpha * n) < 1:
        raise ValueError("alpha*n must be at least 1")
    if a > n or b > n or a < 0 or b < 0:
        raise ValueError("edge-probability numerators must lie in [0, n]")

    rng = np.random.default_rng(seed)
    s = int(round(alpha * n))
    perm = rng.permutation(n)
    planted = np.sort(perm[:s])
    in_s = np.zeros(n, dtype=bool)
    in_s[planted] = True

    adj = np.zeros((n, n), dtype=np.uint8)
    probs = np.where(in_s, a / n, b / n)
    adj[planted] = rng.random((s, n)) < probs

    rest = np.flatnonzero(~in_s)
    if adversary == "mimic" and rest.size:
        decoy = np.sort(rng.permutation(rest)[:min(s, rest.size)])
        in_decoy = np.zeros(n, dtype=bool)
        in_decoy[decoy] = True
        decoy_probs = np.where(in_decoy, a / n, b / n)
        adj[rest] = rng.random((rest.size, n)) < decoy_probs
    elif adversary == "random-dense" and rest.size:
        adj[rest] = rng.random((rest.size, n)) < 0.5

    return PlantedInstance(n=n, alpha=alpha, a=a, b=b, planted=planted,
                           adjacency=adj, adversary=adversary, seed=seed)


def round_vector(phi, a, b, n):
    """Threshold a candidate mean row at (a+b)/(2n); direction follows sign(a-b)."""
    if a == b:
        raise ValueError("a == b leaves the partition unidentifiable by thresholding")
    thr = (a + b) / (2.0 * n)
    if a > b:
        return np.flatnonzero(phi > thr)
    return np.flatnonzero(phi < thr)


def recover(inst, seed=0, alpha=None, a=None, b=None):
    """List-decode the planted set: returns (list of candidate vertex sets, diagnostics).

    Rows are scaled by sqrt(alpha*n/(24c)) with c = max(a, b) so the planted
    rows have covariance bounded by the identity; the estimator runs at inlier
    fraction alpha/2 (the bounded-covariance core of S), its candidates are
    unscaled and thresholded.
    """
    alpha = inst.alpha if alpha is None else alpha
    a = inst.a if a is None else a
    b = inst.b if b is None else b
    if a == b:
        raise ValueError("a == b leaves the partition unidentifiable by thresholding")
    n = inst.n
    c = max(a, b, 1.0)
    scale = math.sqrt(alpha * n / (24.0 * c))

    X = inst.adjacency.astype(np.float64) * scale
    prob = EstimationProblem(X, alpha=alpha / 2.0, sigma=1.0, seed=seed,
                             inliers=inst.planted)
    rng = np.random.default_rng(seed)
    means, diag = output_list(prob, rng)

    sets = []
    for phi in means / scale:
        sets.append(round_vector(phi, a, b, n))
    return sets, {"estimator": diag, "scale": scale, "n_candidates": len(sets)}


def partition_error(S, S_tilde):
    """|S symmetric-difference S_tilde| for two vertex index collections."""
    return int(np.setxor1d(np.asarray(S), np.asarray(S_tilde)).size)
