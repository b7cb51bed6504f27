"""Distillation of N^2 rollouts into an optimally weighted reduced set of N.

The outer problem searches over a selection vector ``lambda`` (one entry per
rollout) and the kernel width with a cross-entropy method; for every candidate
the inner problem, an equality-constrained QP over the weights ``beta``, is
solved exactly through its KKT system.
"""

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from ._backend import kernels as _k
from .kernels import kernel_matrix, median_l1

log = logging.getLogger(__name__)


class DistillError(RuntimeError):
    pass


@dataclass(frozen=True)
class DistillConfig:
    cem_samples: int = 50
    cem_iters: int = 8
    cem_elite_frac: float = 0.2
    #: Absolute ``(low, high)`` kernel-width bounds; ``None`` means
    #: ``(0.05 m, 20 m)`` with ``m`` the median pairwise L1 distance.
    sigma_range: tuple = None
    lambda_init_std: float = 1.0
    qp_ridge: float = 1e-6
    seed: int = 0

    def __post_init__(self):
        if self.cem_samples < 1 or self.cem_iters < 1:
            raise ValueError("cem_samples and cem_iters must be positive")
        if not 0.0 < self.cem_elite_frac <= 1.0:
            raise ValueError("cem_elite_frac must lie in (0, 1]")
        if self.qp_ridge <= 0:
            raise ValueError("qp_ridge must be positive")
        if self.lambda_init_std <= 0:
            raise ValueError("lambda_init_std must be positive")
        if self.sigma_range is not None:
            lo, hi = self.sigma_range
            if not 0 < lo < hi:
                raise ValueError(f"invalid sigma_range {self.sigma_range}")


@dataclass
class ReducedSet:
    indices: np.ndarray
    beta: np.ndarray
    sigma: float
    discrepancy: float
    n_failed: int = 0
    history: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if len(set(self.indices.tolist())) != len(self.indices):
            raise ValueError("reduced-set indices must be distinct")
        if abs(self.beta.sum() - 1.0) > 1e-9:
            raise ValueError(f"beta sums to {self.beta.sum():.12g}")
        if self.discrepancy < 0:
            raise ValueError("discrepancy must be nonnegative")


def _n_from_rows(n_rows):
    n = math.isqrt(n_rows)
    if n < 1 or n * n != n_rows:
        raise ValueError(f"rollout matrix must have a perfect-square row count, got {n_rows}")
    return n


def select_reduced_rows(lam, O, N):
    """Rows with the N largest ``|lambda|``.

    These are the last N positions of a stable ascending argsort of
    ``|lambda|``, so ties keep their original index order.
    """
    lam = np.asarray(lam, dtype=float)
    n_rows = np.shape(O)[0]
    if lam.shape != (n_rows,):
        raise ValueError(f"lambda has shape {lam.shape}, expected ({n_rows},)")
    if not np.all(np.isfinite(lam)):
        raise ValueError("lambda must be finite")
    if not 1 <= N <= n_rows:
        raise ValueError(f"cannot select {N} rows out of {n_rows}")
    order = np.argsort(np.abs(lam), kind="stable")
    return order[n_rows - N:]


def kkt_system(O, indices, sigma, ridge):
    """Build the KKT matrix and right-hand side of the inner weight QP.

    Returns ``(A, rhs, K_rr, q, full)`` where ``full`` is the constant
    ``mean(K(O, O))`` term of the outer objective.
    """
    O = np.asarray(O, dtype=float)
    R = O.shape[0]
    K_full = kernel_matrix(O, O, sigma)
    idx = np.asarray(indices)
    K_rr = K_full[np.ix_(idx, idx)]
    q = K_full[idx].mean(axis=1)
    n = idx.size
    A = np.zeros((n + 1, n + 1))
    A[:n, :n] = 2.0 * (K_rr + ridge * np.eye(n))
    A[:n, n] = 1.0
    A[n, :n] = 1.0
    rhs = np.append(2.0 * q, 1.0)
    return A, rhs, K_rr, q, K_full.sum() / (R * R)


def outer_objective(K_rr, q, full, beta):
    val = beta @ K_rr @ beta - 2.0 * beta @ q + full
    return max(float(val), 0.0)


def solve_inner_qp(O, indices, sigma, ridge=1e-6):
    """Optimal weights for a fixed selection.

    Minimizes ``beta' (K_rr + ridge I) beta - 2 beta' q`` subject to
    ``sum(beta) == 1``. Returns ``(beta, objective)`` where the objective is
    the full squared MMD between the weighted reduced set and the uniformly
    weighted full set, evaluated without the ridge.
    """
    idx = np.asarray(indices)
    n_rows = np.shape(O)[0]
    if idx.size == 0 or len(set(idx.tolist())) != idx.size:
        raise ValueError("indices must be distinct and non-empty")
    if idx.min() < 0 or idx.max() >= n_rows:
        raise ValueError("indices out of range")
    A, rhs, K_rr, q, full = kkt_system(O, idx, sigma, ridge)
    cond = np.linalg.cond(A)
    if not np.isfinite(cond) or cond > 1e15:
        raise np.linalg.LinAlgError(f"KKT system is singular (condition estimate {cond:.3e})")
    sol = np.linalg.solve(A, rhs)
    beta = sol[:-1]
    return beta, outer_objective(K_rr, q, full, beta)


def sigma_bounds(O, cfg):
    if cfg.sigma_range is not None:
        return float(cfg.sigma_range[0]), float(cfg.sigma_range[1])
    m = median_l1(O)
    if not m > 0:
        m = 1.0
    return 0.05 * m, 20.0 * m


def _draws(rng, cfg, n_rows, batch=None):
    lead = () if batch is None else (batch,)
    z_lam = rng.standard_normal(lead + (cfg.cem_iters, cfg.cem_samples, n_rows))
    u0 = rng.random(lead + (cfg.cem_samples,))
    z_sig = rng.standard_normal(lead + (cfg.cem_iters, cfg.cem_samples))
    return z_lam, u0, z_sig


def distill(O, N, cfg=None):
    """Choose N of the N^2 rows of ``O`` together with weights and kernel width.

    Deterministic for a given ``cfg.seed``.
    """
    cfg = cfg or DistillConfig()
    O = np.asarray(O, dtype=float)
    if O.ndim != 2:
        raise ValueError("rollout matrix must be 2-D")
    n_rows = O.shape[0]
    _n_from_rows(n_rows)
    if not 1 <= N <= n_rows:
        raise ValueError(f"cannot select {N} rows out of {n_rows}")
    lo, hi = sigma_bounds(O, cfg)
    rng = np.random.default_rng(cfg.seed)
    z_lam, u0, z_sig = _draws(rng, cfg, n_rows)
    D = _k.l1_distances(O, O)
    sel, beta, sigma, best, n_fail, history = _k.distill_core(
        D, N, z_lam, u0, z_sig, math.log(lo), math.log(hi),
        cfg.lambda_init_std, cfg.cem_elite_frac, cfg.qp_ridge)
    if n_fail:
        log.warning("distill discarded %d of %d candidates", n_fail,
                    cfg.cem_iters * cfg.cem_samples)
    if not np.isfinite(best):
        raise DistillError("every distillation candidate failed")
    return ReducedSet(np.asarray(sel), np.asarray(beta), float(sigma), float(best),
                      int(n_fail), np.asarray(history))


def distill_many(Ob, N, cfg, rng):
    """Distill a batch of rollout matrices ``Ob`` of shape (B, N^2, D).

    Random draws for all members come from ``rng`` in one block. Returns arrays
    ``(indices, beta, sigma, discrepancy, n_failed)`` with leading dimension B;
    failed members carry an infinite discrepancy.
    """
    Ob = np.asarray(Ob, dtype=float)
    B, n_rows, _ = Ob.shape
    _n_from_rows(n_rows)
    D = _k.pairwise_l1_batch(Ob)
    if cfg.sigma_range is not None:
        lo = np.full(B, float(cfg.sigma_range[0]))
        hi = np.full(B, float(cfg.sigma_range[1]))
    else:
        iu = np.triu_indices(n_rows, k=1)
        m = np.median(D[:, iu[0], iu[1]], axis=1) if iu[0].size else np.zeros(B)
        m = np.where(m > 0, m, 1.0)
        lo, hi = 0.05 * m, 20.0 * m
    z_lam, u0, z_sig = _draws(rng, cfg, n_rows, batch=B)
    return _k.distill_batch(D, N, z_lam, u0, z_sig, np.log(lo), np.log(hi),
                            cfg.lambda_init_std, cfg.cem_elite_frac, cfg.qp_ridge)


def random_subset_baseline(O, N, sigma, n_subsets=50, seed=0):
    """Best squared MMD over ``n_subsets`` random uniform-weight subsets."""
    O = np.asarray(O, dtype=float)
    n_rows = O.shape[0]
    K = kernel_matrix(O, O, sigma)
    full = K.sum() / (n_rows * n_rows)
    rng = np.random.default_rng(seed)
    w = np.full(N, 1.0 / N)
    best = np.inf
    for _ in range(n_subsets):
        idx = rng.choice(n_rows, size=N, replace=False)
        best = min(best, outer_objective(K[np.ix_(idx, idx)], K[idx].mean(axis=1), full, w))
    return best


def with_seed(cfg, seed):
    return replace(cfg, seed=int(seed))
