"""RBF kernel evaluation, Gram construction, bandwidth selection, Nystrom
approximation, and PSD repair.

A kernel (Gram) matrix here is a plain ndarray: symmetric, unit diagonal,
entries in (0, 1]. Exact symmetry is guaranteed by construction (upper
triangle computed once and mirrored).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist, pdist

from .errors import ValidationError


@dataclass(frozen=True)
class RbfParams:
    """Bandwidth of the Gaussian kernel k(x, z) = exp(-||x-z||^2 / (2 sigma^2))."""

    sigma: float

    def __post_init__(self):
        if not np.isfinite(self.sigma) or self.sigma <= 0:
            raise ValidationError(f"sigma must be a positive finite real, got {self.sigma}")


def _as_frames(x, name="X"):
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[0] < 1 or x.shape[1] < 1:
        raise ValidationError(f"{name} must be a nonempty n x d matrix, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValidationError(f"{name} contains non-finite entries")
    return x


def rbf_eval(x, z, params: RbfParams) -> float:
    """Kernel value exp(-||x-z||^2 / (2 sigma^2)); equals 1 iff x == z."""
    x = np.asarray(x, dtype=float).ravel()
    z = np.asarray(z, dtype=float).ravel()
    if x.shape != z.shape:
        raise ValidationError(f"dimension mismatch: {x.shape} vs {z.shape}")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(z))):
        raise ValidationError("non-finite input to rbf_eval")
    sq = float(np.sum((x - z) ** 2))
    return float(np.exp(-sq / (2.0 * params.sigma**2)))


def cross_gram(x1, x2, params: RbfParams) -> np.ndarray:
    """n1 x n2 matrix of kernel values between the frames of two sequences."""
    x1 = _as_frames(x1, "X1")
    x2 = _as_frames(x2, "X2")
    if x1.shape[1] != x2.shape[1]:
        raise ValidationError(
            f"feature dimension mismatch: {x1.shape[1]} vs {x2.shape[1]}"
        )
    sq = cdist(x1, x2, "sqeuclidean")
    return np.exp(-sq / (2.0 * params.sigma**2))


def gram(x, params: RbfParams) -> np.ndarray:
    """Self kernel matrix of a sequence: symmetric, unit diagonal, PSD."""
    x = _as_frames(x)
    k = cross_gram(x, x, params)
    # mirror the upper triangle so K == K.T holds exactly
    upper = np.triu(k, 1)
    k = upper + upper.T
    np.fill_diagonal(k, 1.0)
    return k


def median_bandwidth(x) -> RbfParams:
    """Median of pairwise frame distances; the default bandwidth heuristic."""
    x = _as_frames(x)
    if x.shape[0] < 2:
        raise ValidationError("median bandwidth needs at least two frames")
    d = pdist(x, "euclidean")
    sigma = float(np.median(d))
    if sigma <= 0:
        raise ValidationError("degenerate sequence, supply sigma explicitly")
    return RbfParams(sigma=sigma)


class NystromApprox:
    """Low-rank reconstruction K_hat = C M C^T from m sampled columns of K.

    C holds the sampled columns (original row order), M the pseudo-inverse of
    the m x m core K[idx][:, idx]; under the permutation that moves the
    sampled rows first, the core is the leading sub-block of C.
    """

    def __init__(self, sampled_columns, core_pinv, sample_indices):
        self.sampled_columns = sampled_columns
        self.core_pinv = core_pinv
        self.sample_indices = sample_indices
        self.m = len(sample_indices)

    def reconstruct(self) -> np.ndarray:
        k_hat = self.sampled_columns @ self.core_pinv @ self.sampled_columns.T
        return 0.5 * (k_hat + k_hat.T)


def nystrom(k, m: int, seed: int = 0) -> NystromApprox:
    """Sample m columns of a symmetric kernel matrix uniformly without replacement.

    The core pseudo-inverse drops eigenvalues below 1e-10 times the largest,
    since clustered frames make the core near-singular.
    """
    k = np.asarray(k, dtype=float)
    n = k.shape[0]
    if k.ndim != 2 or k.shape[1] != n:
        raise ValidationError(f"kernel matrix must be square, got shape {k.shape}")
    if m < 1 or m > n:
        raise ValidationError(f"sample count m={m} must satisfy 1 <= m <= n={n}")
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(n, size=m, replace=False))
    cols = k[:, idx]
    core = k[np.ix_(idx, idx)]
    w, v = np.linalg.eigh(core)
    cutoff = 1e-10 * max(float(w.max()), 0.0)
    inv = np.zeros_like(w)
    keep = w > cutoff
    inv[keep] = 1.0 / w[keep]
    pinv = (v * inv) @ v.T
    pinv = 0.5 * (pinv + pinv.T)
    return NystromApprox(cols, pinv, idx)


def psd_project(g, epsilon: float = 0.0) -> np.ndarray:
    """Clip eigenvalues of a symmetric matrix below epsilon up to epsilon."""
    g = np.asarray(g, dtype=float)
    if g.ndim != 2 or g.shape[0] != g.shape[1]:
        raise ValidationError(f"psd_project expects a square matrix, got {g.shape}")
    if not np.allclose(g, g.T, rtol=0.0, atol=1e-10):
        raise ValidationError("psd_project expects a symmetric matrix")
    w, v = np.linalg.eigh(g)
    if w.min() >= epsilon:
        return g
    out = (v * np.maximum(w, epsilon)) @ v.T
    return 0.5 * (out + out.T)
