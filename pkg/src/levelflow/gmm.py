"""Gaussian-mixture condition models over normalized control vectors.

Plain EM with k-means++ initialization and a constant covariance ridge;
components whose weight collapses below 1e-6 are dropped after fitting.
Conditional sampling does exact Gaussian conditioning on fixed dimensions.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import CheckpointError, LevelFlowError, TailoredGmmError

REG = 1e-6
WEIGHT_FLOOR = 1e-6


@dataclass
class GmmModel:
    weights: np.ndarray       # (K,)
    means: np.ndarray         # (K, d)
    covariances: np.ndarray   # (K, d, d)
    labels: tuple[str, ...] = ()
    denominators: tuple[str, ...] = ()
    size: tuple[int, int] | None = None
    log_likelihoods: list[float] = field(default_factory=list)
    conditional_fallbacks: int = 0

    @property
    def k(self) -> int:
        return int(self.weights.shape[0])

    @property
    def dim(self) -> int:
        return int(self.means.shape[1])

    def cholesky(self) -> np.ndarray:
        return np.linalg.cholesky(self.covariances)


def _log_gauss(points: np.ndarray, mean: np.ndarray, cov: np.ndarray) -> np.ndarray:
    """Log density of each row of ``points`` under N(mean, cov)."""
    d = mean.shape[0]
    chol = np.linalg.cholesky(cov)
    diff = points - mean
    y = np.linalg.solve(chol, diff.T)
    quad = (y * y).sum(axis=0)
    logdet = 2.0 * np.log(np.diag(chol)).sum()
    return -0.5 * (quad + logdet + d * np.log(2.0 * np.pi))


def _kmeanspp(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    centers = [points[int(rng.integers(n))]]
    for _ in range(1, k):
        d2 = np.min(
            [((points - c) ** 2).sum(axis=1) for c in centers], axis=0)
        total = d2.sum()
        if total <= 0:
            centers.append(points[int(rng.integers(n))])
            continue
        r = rng.random() * total
        idx = int(np.searchsorted(np.cumsum(d2), r))
        centers.append(points[min(idx, n - 1)])
    return np.stack(centers)


def fit_gmm(points: np.ndarray, k: int = 16, iters: int = 100,
            rng: np.random.Generator | None = None,
            labels: tuple[str, ...] = (), denominators: tuple[str, ...] = (),
            size: tuple[int, int] | None = None) -> GmmModel:
    """Fit a full-covariance mixture by EM.

    ``k`` is reduced to the number of distinct points when necessary; the
    per-iteration data log-likelihood history is kept on the model.
    """
    rng = rng if rng is not None else np.random.default_rng()
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[0] == 0:
        raise LevelFlowError(f"fit_gmm needs an (n, d) point matrix, got {points.shape}")
    n, d = points.shape
    if d == 0:
        raise LevelFlowError("fit_gmm: points must have at least one dimension")
    distinct = np.unique(points, axis=0)
    k = max(1, min(k, distinct.shape[0]))

    means = _kmeanspp(distinct, k, rng)
    base_cov = np.cov(points.T).reshape(d, d) if n > 1 else np.zeros((d, d))
    covs = np.repeat((base_cov + np.eye(d) * max(REG, 1e-3))[None], k, axis=0)
    weights = np.full(k, 1.0 / k)

    history: list[float] = []
    resp = np.zeros((n, k))
    for _ in range(iters):
        # E step
        log_prob = np.stack([
            np.log(weights[j]) + _log_gauss(points, means[j], covs[j])
            for j in range(k)
        ], axis=1)
        m = log_prob.max(axis=1, keepdims=True)
        log_norm = m + np.log(np.exp(log_prob - m).sum(axis=1, keepdims=True))
        history.append(float(log_norm.sum()))
        resp = np.exp(log_prob - log_norm)
        # M step
        nk = resp.sum(axis=0)
        nk = np.maximum(nk, 1e-12)
        weights = nk / n
        means = (resp.T @ points) / nk[:, None]
        for j in range(k):
            diff = points - means[j]
            cov = (resp[:, j][:, None] * diff).T @ diff / nk[j]
            covs[j] = (cov + cov.T) / 2.0 + np.eye(d) * REG

    keep = weights > WEIGHT_FLOOR
    if keep.sum() == 0:
        keep[np.argmax(weights)] = True
    weights = weights[keep]
    weights = weights / weights.sum()
    return GmmModel(weights, means[keep], covs[keep], tuple(labels),
                    tuple(denominators), size, history)


def sample_gmm(model: GmmModel, rng: np.random.Generator) -> np.ndarray:
    """Component by weight, then a multivariate normal draw via Cholesky."""
    j = int(np.searchsorted(np.cumsum(model.weights), rng.random()))
    j = min(j, model.k - 1)
    chol = np.linalg.cholesky(model.covariances[j])
    return model.means[j] + chol @ rng.standard_normal(model.dim)


def conditional_sample_gmm(model: GmmModel, fixed: dict[int, float],
                           rng: np.random.Generator) -> np.ndarray:
    """Sample with some dimensions pinned: exact Gaussian conditioning.

    Component weights are re-weighted by the marginal density of the fixed
    values; the free dimensions follow the chosen component's conditional
    normal. Output carries the fixed values bit-for-bit.
    """
    if not fixed:
        return sample_gmm(model, rng)
    d = model.dim
    fixed_idx = np.array(sorted(fixed), dtype=np.intp)
    if len(fixed_idx) >= d:
        raise LevelFlowError("conditional sampling needs at least one free dimension")
    free_idx = np.array([i for i in range(d) if i not in fixed], dtype=np.intp)
    v = np.array([fixed[int(i)] for i in fixed_idx], dtype=np.float64)

    log_w = np.full(model.k, -np.inf)
    quad = np.full(model.k, np.inf)
    for j in range(model.k):
        cov_ff = model.covariances[j][np.ix_(fixed_idx, fixed_idx)]
        cov_ff = cov_ff + np.eye(len(fixed_idx)) * REG
        diff = v - model.means[j][fixed_idx]
        chol = np.linalg.cholesky(cov_ff)
        y = np.linalg.solve(chol, diff)
        quad[j] = float((y * y).sum())
        logdet = 2.0 * np.log(np.diag(chol)).sum()
        density = -0.5 * (quad[j] + logdet + len(fixed_idx) * np.log(2 * np.pi))
        log_w[j] = np.log(model.weights[j]) + density

    if np.all(np.isinf(log_w)):
        j = int(np.argmin(quad))
        model.conditional_fallbacks += 1
    else:
        log_w = log_w - log_w.max()
        w = np.exp(log_w)
        w = w / w.sum()
        j = int(np.searchsorted(np.cumsum(w), rng.random()))
        j = min(j, model.k - 1)

    mean = model.means[j]
    cov = model.covariances[j]
    cov_ff = cov[np.ix_(fixed_idx, fixed_idx)] + np.eye(len(fixed_idx)) * REG
    cov_rf = cov[np.ix_(free_idx, fixed_idx)]
    cov_rr = cov[np.ix_(free_idx, free_idx)]
    solve = np.linalg.solve(cov_ff, (v - mean[fixed_idx]))
    cond_mean = mean[free_idx] + cov_rf @ solve
    cond_cov = cov_rr - cov_rf @ np.linalg.solve(cov_ff, cov_rf.T)
    cond_cov = (cond_cov + cond_cov.T) / 2.0 + np.eye(len(free_idx)) * REG
    chol = np.linalg.cholesky(cond_cov)
    sample = cond_mean + chol @ rng.standard_normal(len(free_idx))

    out = np.empty(d, dtype=np.float64)
    out[fixed_idx] = v
    out[free_idx] = sample
    return out


def tailored_gmm(policy, game, base_model: GmmModel, size: tuple[int, int],
                 sample_n: int = 1000, rng: np.random.Generator | None = None,
                 k: int = 16, iters: int = 100, chunk: int = 250) -> GmmModel:
    """Refit a condition model at an out-of-training size.

    Rolls out ``sample_n`` levels at ``size`` with conditions from the
    base model (closest in-training size), then fits on the playable
    levels' measured normalized controls.
    """
    from .games import measure_controls, normalize_vector, snap_vector

    rng = rng if rng is not None else np.random.default_rng()
    w, h = size
    specs = game.controls
    measured: list[np.ndarray] = []
    done = 0
    while done < sample_n:
        b = min(chunk, sample_n - done)
        u_rows = np.zeros((b, len(specs)))
        for i in range(b):
            raw = sample_gmm(base_model, rng)
            snapped = snap_vector(
                np.array([spec.unnormalize(raw[j], w, h) for j, spec in enumerate(specs)]),
                specs, w, h)
            u_rows[i] = normalize_vector(snapped, specs, w, h)
        batch = policy.run(None, u_rows, w, h, rng=rng)
        for level in batch.levels(game.name):
            analysis = game.analyze(level)
            if analysis.playable:
                measured.append(measure_controls(level, analysis, specs))
        done += b
    if not measured:
        raise TailoredGmmError(
            f"no playable levels in a {sample_n}-level sample at {w}x{h}; "
            "use the closest in-training size's model instead")
    return fit_gmm(np.stack(measured), k=k, iters=iters, rng=rng,
                   labels=base_model.labels, denominators=base_model.denominators,
                   size=size)


_GMM_MAGIC = b"LVGM"
_GMM_VERSION = 1


def gmm_to_bytes(model: GmmModel) -> bytes:
    header = json.dumps({
        "labels": list(model.labels),
        "denominators": list(model.denominators),
        "size": list(model.size) if model.size else None,
    }, sort_keys=True).encode()
    parts = [
        _GMM_MAGIC,
        struct.pack("<III", _GMM_VERSION, model.k, model.dim),
        struct.pack("<I", len(header)), header,
        model.weights.astype("<f8").tobytes(),
        model.means.astype("<f8").tobytes(),
        model.covariances.astype("<f8").tobytes(),
    ]
    return b"".join(parts)


def gmm_from_bytes(data: bytes) -> GmmModel:
    if data[:4] != _GMM_MAGIC:
        raise CheckpointError("not a condition-model blob")
    version, k, d = struct.unpack_from("<III", data, 4)
    if version != _GMM_VERSION:
        raise CheckpointError(f"unsupported condition-model version {version}")
    (hlen,) = struct.unpack_from("<I", data, 16)
    header = json.loads(data[20:20 + hlen].decode())
    off = 20 + hlen
    weights = np.frombuffer(data, "<f8", k, off).copy()
    off += 8 * k
    means = np.frombuffer(data, "<f8", k * d, off).reshape(k, d).copy()
    off += 8 * k * d
    covs = np.frombuffer(data, "<f8", k * d * d, off).reshape(k, d, d).copy()
    return GmmModel(weights, means, covs, tuple(header["labels"]),
                    tuple(header["denominators"]),
                    tuple(header["size"]) if header["size"] else None)


def save_gmm(path, model: GmmModel) -> None:
    with open(path, "wb") as f:
        f.write(gmm_to_bytes(model))


def load_gmm(path) -> GmmModel:
    with open(path, "rb") as f:
        return gmm_from_bytes(f.read())
