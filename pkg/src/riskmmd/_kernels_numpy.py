"""Vectorized numpy twins of the kernels in ``_kernels_numba``."""

import numpy as np


def l1_distances(A, B):
    return np.abs(A[:, None, :] - B[None, :, :]).sum(axis=-1)


def pairwise_l1_batch(X):
    return np.abs(X[:, :, None, :] - X[:, None, :, :]).sum(axis=-1)


def rollout(x0, a, th, wheelbase, dt, kappa):
    R, H = a.shape
    out = np.empty((R, H, 5))
    s = x0[:, 0].copy()
    d = x0[:, 1].copy()
    psi = x0[:, 2].copy()
    v = x0[:, 4].copy()
    for k in range(H):
        sdot = v * np.cos(psi) / (1.0 - d * kappa)
        ddot = v * np.sin(psi)
        psidot = v * np.tan(th[:, k]) / wheelbase - kappa * sdot
        s = s + dt * sdot
        d = d + dt * ddot
        psi = psi + dt * psidot
        v = np.maximum(v + dt * a[:, k], 0.0)
        out[:, k, 0] = s
        out[:, k, 1] = d
        out[:, k, 2] = psi
        out[:, k, 3] = psidot
        out[:, k, 4] = v
    return out


def constraint_h(pos, centers, axes, d_lb, d_ub, include_lane):
    R = pos.shape[0]
    worst = np.full(R, -np.inf)
    if centers.shape[0]:
        ds = (pos[:, None, :, 0] - centers[None, :, :, 0]) / axes[None, :, 0, None]
        dd = (pos[:, None, :, 1] - centers[None, :, :, 1]) / axes[None, :, 1, None]
        worst = np.maximum(worst, (1.0 - ds * ds - dd * dd).max(axis=(1, 2)))
    if include_lane:
        d = pos[:, :, 1]
        worst = np.maximum(worst, np.maximum(d - d_ub, d_lb - d).max(axis=1))
    return worst


def _score_samples(D, sel, sigma, ridge):
    S, n = sel.shape
    R = D.shape[0]
    E = np.exp(-D[None, :, :] / sigma[:, None, None])
    full = E.sum(axis=(1, 2)) / (R * R)
    rows = np.take_along_axis(E, sel[:, :, None], axis=1)
    q = rows.mean(axis=2)
    K = np.take_along_axis(rows, sel[:, None, :], axis=2)
    A = np.zeros((S, n + 1, n + 1))
    A[:, :n, :n] = 2.0 * K + 2.0 * ridge * np.eye(n)
    A[:, :n, n] = 1.0
    A[:, n, :n] = 1.0
    rhs = np.concatenate([2.0 * q, np.ones((S, 1))], axis=1)
    with np.errstate(all="ignore"):
        beta = np.linalg.solve(A, rhs[:, :, None])[:, :n, 0]
        val = (np.einsum("si,sij,sj->s", beta, K, beta)
               - 2.0 * np.einsum("si,si->s", beta, q) + full)
    val = np.where(np.isfinite(val), np.maximum(val, 0.0), np.inf)
    return beta, val


def distill_core(D, n_sel, z_lam, u0, z_sig, log_lo, log_hi, lam_std0,
                 elite_frac, ridge):
    R = D.shape[0]
    iters, S, _ = z_lam.shape
    n_elite = max(1, int(round(elite_frac * S)))

    mu_lam = np.zeros(R)
    sd_lam = np.full(R, float(lam_std0))
    mu_ls = 0.5 * (log_lo + log_hi)
    sd_ls = 0.5 * (log_hi - log_lo)

    best = np.inf
    best_sel = np.arange(R - n_sel, R)
    best_beta = np.full(n_sel, 1.0 / n_sel)
    best_sigma = np.exp(mu_ls)
    history = np.empty(iters)
    n_fail = 0

    for it in range(iters):
        lam = mu_lam + sd_lam * z_lam[it]
        if it == 0:
            logsig = log_lo + u0 * (log_hi - log_lo)
        else:
            logsig = np.clip(mu_ls + sd_ls * z_sig[it], log_lo, log_hi)
        order = np.argsort(np.abs(lam), axis=1, kind="stable")
        sel = order[:, R - n_sel:]
        beta, scores = _score_samples(D, sel, np.exp(logsig), ridge)
        n_fail += int(np.count_nonzero(~np.isfinite(scores)))
        # first occurrence of the minimum, matching the sequential scan
        s = int(np.argmin(scores))
        if scores[s] < best:
            best = float(scores[s])
            best_sel = sel[s].copy()
            best_beta = beta[s].copy()
            best_sigma = float(np.exp(logsig[s]))
        history[it] = best

        elite = np.argsort(scores, kind="stable")[:n_elite]
        elite = elite[np.isfinite(scores[elite])]
        if elite.size == 0:
            continue
        mu_lam = lam[elite].mean(axis=0)
        sd_lam = np.maximum(np.sqrt(((lam[elite] - mu_lam) ** 2).mean(axis=0)), 1e-6)
        mu_ls = logsig[elite].mean()
        sd_ls = max(np.sqrt(((logsig[elite] - mu_ls) ** 2).mean()), 1e-6)

    return best_sel, best_beta, best_sigma, best, n_fail, history


def distill_batch(Db, n_sel, z_lam, u0, z_sig, log_lo, log_hi, lam_std0,
                  elite_frac, ridge):
    B = Db.shape[0]
    sel = np.empty((B, n_sel), dtype=np.int64)
    beta = np.empty((B, n_sel))
    sigma = np.empty(B)
    disc = np.empty(B)
    fails = np.empty(B, dtype=np.int64)
    for b in range(B):
        out = distill_core(Db[b], n_sel, z_lam[b], u0[b], z_sig[b], log_lo[b],
                           log_hi[b], lam_std0, elite_frac, ridge)
        sel[b], beta[b], sigma[b], disc[b], fails[b] = out[:5]
    return sel, beta, sigma, disc, fails
