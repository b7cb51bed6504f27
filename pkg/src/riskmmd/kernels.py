"""Laplacian kernel, kernel matrices and the weighted (biased) squared MMD.

Everything is evaluated through the kernel trick; no feature map is ever
built. The Laplacian kernel here uses the L1 norm::

    K(z, z') = exp(-||z - z'||_1 / sigma)
"""

from dataclasses import dataclass

import numpy as np

from ._backend import kernels as _k

#: Pre-clamp MMD values below this are treated as a bug rather than round-off.
NEGATIVE_TOL = 1e-9


def _check_sigma(sigma):
    if not np.isfinite(sigma) or sigma <= 0:
        raise ValueError(f"kernel width must be positive, got {sigma!r}")


def _as_2d(X):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2:
        raise ValueError(f"expected a 2-D sample matrix, got shape {X.shape}")
    return X


@dataclass(frozen=True)
class WeightedSampleSet:
    """Rows of ``points`` are samples; ``weights`` must sum to one.

    A 1-D ``points`` array is read as M scalar samples.
    """

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        pts = _as_2d(self.points)
        w = np.asarray(self.weights, dtype=float).ravel()
        if pts.shape[0] < 1 or pts.shape[1] < 1:
            raise ValueError("a sample set needs at least one point of dimension >= 1")
        if w.shape[0] != pts.shape[0]:
            raise ValueError(f"{w.shape[0]} weights for {pts.shape[0]} points")
        if abs(w.sum() - 1.0) > 1e-9:
            raise ValueError(f"weights sum to {w.sum():.12g}, expected 1")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    @classmethod
    def uniform(cls, points):
        pts = _as_2d(points)
        return cls(pts, np.full(pts.shape[0], 1.0 / pts.shape[0]))


def laplacian_kernel(z, z_prime, sigma):
    z = np.atleast_1d(np.asarray(z, dtype=float))
    z_prime = np.atleast_1d(np.asarray(z_prime, dtype=float))
    if z.shape != z_prime.shape:
        raise ValueError(f"dimension mismatch: {z.shape} vs {z_prime.shape}")
    _check_sigma(sigma)
    return float(np.exp(-np.abs(z - z_prime).sum() / sigma))


def kernel_matrix(A, B, sigma):
    """Entry (i, j) is ``laplacian_kernel(A[i], B[j], sigma)``."""
    A = _as_2d(A)
    B = _as_2d(B)
    if A.shape[1] != B.shape[1]:
        raise ValueError(f"dimension mismatch: {A.shape[1]} vs {B.shape[1]}")
    _check_sigma(sigma)
    return np.exp(-_k.l1_distances(A, B) / sigma)


def _cross(X, Y, sigma):
    # Both summation orders are added so that swapping X and Y gives the same
    # value bit for bit. The transpose is copied since BLAS may sum a strided
    # product in a different order.
    K = kernel_matrix(X.points, Y.points, sigma)
    KT = np.ascontiguousarray(K.T)
    return 0.5 * ((X.weights @ K) @ Y.weights + (Y.weights @ KT) @ X.weights)


def mmd_squared_raw(X, Y, sigma):
    """Biased weighted MMD^2 without clamping (may be slightly negative)."""
    if X.points.shape[1] != Y.points.shape[1]:
        raise ValueError(
            f"dimension mismatch: {X.points.shape[1]} vs {Y.points.shape[1]}")
    xx = X.weights @ kernel_matrix(X.points, X.points, sigma) @ X.weights
    yy = Y.weights @ kernel_matrix(Y.points, Y.points, sigma) @ Y.weights
    return float((xx + yy) - 2.0 * _cross(X, Y, sigma))


def mmd_squared(X, Y, sigma):
    """Biased (V-statistic) squared MMD between two weighted sample sets.

    Computes ``wx' K(X,X) wx - 2 wx' K(X,Y) wy + wy' K(Y,Y) wy`` and clamps
    round-off negatives to zero.
    """
    raw = mmd_squared_raw(X, Y, sigma)
    if raw < -NEGATIVE_TOL:
        raise FloatingPointError(f"MMD^2 pre-clamp value {raw:.3e} is too negative")
    return max(raw, 0.0)


def median_l1(X):
    """Median pairwise L1 distance between distinct rows (0 if fewer than 2)."""
    X = _as_2d(X)
    if X.shape[0] < 2:
        return 0.0
    D = _k.l1_distances(X, X)
    iu = np.triu_indices(X.shape[0], k=1)
    return float(np.median(D[iu]))
