"""Dataset and graph I/O, synthetic generators, run configuration, seeded RNG plumbing.

Binary dataset layout: magic b"LDME1\n", header of N and d as u64 little-endian,
then N*d float64 little-endian row-major, then an optional inlier trailer
(magic b"INLR", u64 count, count u64 indices) in synthetic mode.
"""

from __future__ import annotations

import math
import os
import struct
import zlib

import numpy as np

DATASET_MAGIC = b"LDME1\n"
TRAILER_MAGIC = b"INLR"
GRAPH_MAGIC = b"LDPG1\n"

CONFIG_KEYS = ("alpha", "sigma", "eps", "delta", "seed", "flags")


class FormatError(ValueError):
    """Malformed file; carries the byte offset of the failure."""

    def __init__(self, message, offset):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


def derive_rng(master_seed, label):
    """Deterministic per-module RNG: the label is folded in via CRC32."""
    return np.random.default_rng(
        np.random.SeedSequence([int(master_seed) & 0xFFFFFFFFFFFF, zlib.crc32(label.encode())]))


def resolve_seed(seed):
    """Environment variable LDME_SEED overrides any configured seed."""
    env = os.environ.get("LDME_SEED")
    return int(env) if env is not None else int(seed)


def write_dataset(path, X, inliers=None):
    X = np.ascontiguousarray(X, dtype="<f8")
    if X.ndim != 2:
        raise ValueError("dataset must be N x d")
    if not np.all(np.isfinite(X)):
        raise ValueError("dataset values must be finite")
    n, d = X.shape
    with open(path, "wb") as fh:
        fh.write(DATASET_MAGIC)
        fh.write(struct.pack("<QQ", n, d))
        fh.write(X.tobytes())
        if inliers is not None:
            idx = np.asarray(inliers, dtype="<u8")
            fh.write(TRAILER_MAGIC)
            fh.write(struct.pack("<Q", idx.size))
            fh.write(idx.tobytes())


def read_dataset(path):
    """Returns (X, inliers-or-None); malformed input raises FormatError with an offset."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:6] != DATASET_MAGIC:
        raise FormatError("bad dataset magic", 0)
    if len(data) < 22:
        raise FormatError("truncated header", len(data))
    n, d = struct.unpack_from("<QQ", data, 6)
    need = 22 + 8 * n * d
    if len(data) < need:
        raise FormatError("truncated payload", len(data))
    X = np.frombuffer(data, dtype="<f8", count=n * d, offset=22).reshape(n, d).copy()
    if not np.all(np.isfinite(X)):
        raise FormatError("non-finite payload values", 22)
    inliers = None
    if len(data) > need:
        if data[need:need + 4] != TRAILER_MAGIC:
            raise FormatError("bad trailer magic", need)
        if len(data) < need + 12:
            raise FormatError("truncated trailer header", len(data))
        cnt = struct.unpack_from("<Q", data, need + 4)[0]
        end = need + 12 + 8 * cnt
        if len(data) < end:
            raise FormatError("truncated trailer indices", len(data))
        inliers = np.frombuffer(data, dtype="<u8", count=cnt, offset=need + 12).astype(np.intp)
    return X, inliers


def write_csv(path, X):
    X = np.asarray(X, dtype=np.float64)
    header = ",".join(f"x{j + 1}" for j in range(X.shape[1]))
    np.savetxt(path, X, delimiter=",", header=header, comments="", fmt="%.17g")


def read_csv(path):
    with open(path, "r") as fh:
        header = fh.readline().strip()
    d = len(header.split(","))
    X = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if X.shape[1] != d:
        raise FormatError("csv column count mismatch", 0)
    return X


def _truncated_normal_rows(rng, size, dim, sigma, clip=3.0):
    """Per-coordinate truncation at clip*sigma keeps the covariance bounded outright."""
    out = rng.standard_normal((size, dim))
    bad = np.abs(out) > clip
    while np.any(bad):
        out[bad] = rng.standard_normal(int(np.sum(bad)))
        bad = np.abs(out) > clip
    return out * sigma


def gen_mixture(clusters, dim, per_cluster, separation, sigma, outlier="none",
                outlier_frac=0.0, seed=0):
    """Synthetic mixture: `clusters` truncated-normal clusters plus an outlier block.

    Cluster i is centered at separation * e_{i mod d} * (1 + i // d). Outlier
    policies: "none"; "far-blob" (a tight blob at distance 1e4*sigma/sqrt(alpha));
    "mimic" (decoy clusters with the inlier spread at moderate distance).
    Returns (X, inlier_indices_of_cluster_0, true_means).
    """
    if separation < 0:
        raise ValueError("separation must be nonnegative")
    if not (0.0 <= outlier_frac < 1.0):
        raise ValueError("outlier fraction must lie in [0, 1)")
    rng = np.random.default_rng(seed)

    means = []
    for i in range(clusters):
        mu = np.zeros(dim)
        mu[i % dim] = separation * (1.0 + i // dim)
        means.append(mu)

    blocks = []
    for i in range(clusters):
        blocks.append(means[i] + _truncated_normal_rows(rng, per_cluster, dim, sigma))

    n_struct = clusters * per_cluster
    n_out = 0
    if outlier != "none" and outlier_frac > 0:
        n_out = int(round(n_struct * outlier_frac / (1.0 - outlier_frac)))
    alpha = per_cluster / max(n_struct + n_out, 1)

    if n_out > 0:
        if outlier == "far-blob":
            center = np.full(dim, 1e4 * sigma / math.sqrt(alpha) / math.sqrt(dim))
            blocks.append(center + _truncated_normal_rows(rng, n_out, dim, sigma / 100.0))
        elif outlier == "mimic":
            n_decoys = max(1, int(math.ceil(1.0 / alpha)) - clusters)
            base = 50.0 * sigma / math.sqrt(alpha)
            sizes = np.full(n_decoys, n_out // n_decoys)
            sizes[: n_out - int(np.sum(sizes))] += 1
            for j, sz in enumerate(sizes):
                if sz == 0:
                    continue
                direction = rng.standard_normal(dim)
                direction /= np.linalg.norm(direction)
                blocks.append(base * (1.0 + 0.5 * j) * direction
                              + _truncated_normal_rows(rng, int(sz), dim, sigma))
        else:
            raise ValueError(f"unknown outlier policy {outlier!r}")

    X = np.concatenate(blocks, axis=0)
    order = rng.permutation(X.shape[0])
    X = X[order]
    inv = np.argsort(order)
    inliers = np.sort(inv[:per_cluster])
    return X, inliers, np.asarray(means)


def write_graph(path, inst):
    with open(path, "wb") as fh:
        fh.write(GRAPH_MAGIC)
        fh.write(struct.pack("<Qddd", inst.n, inst.alpha, inst.a, inst.b))
        fh.write(struct.pack("<Q", inst.seed & 0xFFFFFFFFFFFFFFFF))
        fh.write(np.packbits(inst.adjacency, axis=1).astype("<u1").tobytes())
        idx = np.asarray(inst.planted, dtype="<u8")
        fh.write(struct.pack("<Q", idx.size))
        fh.write(idx.tobytes())


def read_graph(path):
    from .planted import PlantedInstance

    with open(path, "rb") as fh:
        data = fh.read()
    if data[:6] != GRAPH_MAGIC:
        raise FormatError("bad graph magic", 0)
    n, alpha, a, b = struct.unpack_from("<Qddd", data, 6)
    seed = struct.unpack_from("<Q", data, 38)[0]
    row_bytes = (n + 7) // 8
    need = 46 + n * row_bytes
    if len(data) < need:
        raise FormatError("truncated adjacency rows", len(data))
    packed = np.frombuffer(data, dtype="<u1", count=n * row_bytes, offset=46)
    adjacency = np.unpackbits(packed.reshape(n, row_bytes), axis=1)[:, :n].astype(np.uint8)
    cnt = struct.unpack_from("<Q", data, need)[0]
    planted = np.frombuffer(data, dtype="<u8", count=cnt, offset=need + 8).astype(np.intp)
    return PlantedInstance(n=int(n), alpha=alpha, a=a, b=b, planted=planted,
                           adjacency=adjacency, adversary="file", seed=int(seed))


def parse_config(text):
    """Line-oriented key=value configuration; unknown keys are rejected."""
    config = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected key=value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in CONFIG_KEYS:
            raise ValueError(f"config line {lineno}: unknown key {key!r}")
        config[key] = value
    return config


def read_config(path):
    with open(path, "r") as fh:
        return parse_config(fh.read())
