"""numba implementations of the hot loops.

Every function here has a twin with the same name and signature in
``_kernels_numpy``. Random numbers are always drawn by the caller and passed
in, so both backends consume identical inputs.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def l1_distances(A, B):
    M, D = A.shape
    P = B.shape[0]
    out = np.empty((M, P))
    for i in range(M):
        for j in range(P):
            acc = 0.0
            for k in range(D):
                acc += abs(A[i, k] - B[j, k])
            out[i, j] = acc
    return out


@njit(cache=True)
def pairwise_l1_batch(X):
    B, R, D = X.shape
    out = np.empty((B, R, R))
    for b in range(B):
        for i in range(R):
            out[b, i, i] = 0.0
            for j in range(i + 1, R):
                acc = 0.0
                for k in range(D):
                    acc += abs(X[b, i, k] - X[b, j, k])
                out[b, i, j] = acc
                out[b, j, i] = acc
    return out


@njit(cache=True)
def rollout(x0, a, th, wheelbase, dt, kappa):
    R, H = a.shape
    out = np.empty((R, H, 5))
    for r in range(R):
        s = x0[r, 0]
        d = x0[r, 1]
        psi = x0[r, 2]
        v = x0[r, 4]
        for k in range(H):
            sdot = v * np.cos(psi) / (1.0 - d * kappa)
            ddot = v * np.sin(psi)
            psidot = v * np.tan(th[r, k]) / wheelbase - kappa * sdot
            s = s + dt * sdot
            d = d + dt * ddot
            psi = psi + dt * psidot
            v = v + dt * a[r, k]
            if v < 0.0:
                v = 0.0
            out[r, k, 0] = s
            out[r, k, 1] = d
            out[r, k, 2] = psi
            out[r, k, 3] = psidot
            out[r, k, 4] = v
    return out


@njit(cache=True)
def constraint_h(pos, centers, axes, d_lb, d_ub, include_lane):
    R, H, _ = pos.shape
    n_obs = centers.shape[0]
    out = np.empty(R)
    for r in range(R):
        worst = -np.inf
        for k in range(H):
            sk = pos[r, k, 0]
            dk = pos[r, k, 1]
            for o in range(n_obs):
                ds = (sk - centers[o, k, 0]) / axes[o, 0]
                dd = (dk - centers[o, k, 1]) / axes[o, 1]
                h = 1.0 - ds * ds - dd * dd
                if h > worst:
                    worst = h
            if include_lane:
                h = max(dk - d_ub, d_lb - dk)
                if h > worst:
                    worst = h
        out[r] = worst
    return out


@njit(cache=True)
def _full_term(D, sigma):
    R = D.shape[0]
    acc = 0.0
    for i in range(R):
        for j in range(i + 1, R):
            acc += np.exp(-D[i, j] / sigma)
    return (2.0 * acc + R) / (R * R)


@njit(cache=True)
def _solve_inplace(A, x):
    """Gaussian elimination with partial pivoting; overwrites A, x holds rhs."""
    n = x.size
    for c in range(n):
        p = c
        big = abs(A[c, c])
        for r in range(c + 1, n):
            if abs(A[r, c]) > big:
                big = abs(A[r, c])
                p = r
        if big == 0.0:
            return False
        if p != c:
            for k in range(n):
                tmp = A[c, k]
                A[c, k] = A[p, k]
                A[p, k] = tmp
            tmp = x[c]
            x[c] = x[p]
            x[p] = tmp
        for r in range(c + 1, n):
            f = A[r, c] / A[c, c]
            if f != 0.0:
                for k in range(c, n):
                    A[r, k] -= f * A[c, k]
                x[r] -= f * x[c]
    for c in range(n - 1, -1, -1):
        acc = x[c]
        for k in range(c + 1, n):
            acc -= A[c, k] * x[k]
        x[c] = acc / A[c, c]
    return True


@njit(cache=True)
def _qp_buf(D, sel, sigma, ridge, full, beta, A, sol, K, q):
    n = sel.size
    R = D.shape[0]
    for a in range(n):
        ra = sel[a]
        for b in range(n):
            K[a, b] = np.exp(-D[ra, sel[b]] / sigma)
            A[a, b] = 2.0 * K[a, b]
        A[a, a] += 2.0 * ridge
        A[a, n] = 1.0
        A[n, a] = 1.0
        acc = 0.0
        for t in range(R):
            acc += np.exp(-D[ra, t] / sigma)
        q[a] = acc / R
        sol[a] = 2.0 * q[a]
    A[n, n] = 0.0
    sol[n] = 1.0
    if not _solve_inplace(A, sol):
        return np.inf
    quad = 0.0
    lin = 0.0
    for a in range(n):
        beta[a] = sol[a]
        lin += sol[a] * q[a]
        for b in range(n):
            quad += sol[a] * K[a, b] * sol[b]
    val = quad - 2.0 * lin + full
    if not np.isfinite(val):
        return np.inf
    return max(val, 0.0)


@njit(cache=True)
def _qp(D, sel, sigma, ridge, full, beta):
    """Solve the equality-constrained QP for one selection; returns MMD^2."""
    n = sel.size
    return _qp_buf(D, sel, sigma, ridge, full, beta, np.empty((n + 1, n + 1)),
                   np.empty(n + 1), np.empty((n, n)), np.empty(n))


@njit(cache=True)
def distill_core(D, n_sel, z_lam, u0, z_sig, log_lo, log_hi, lam_std0,
                 elite_frac, ridge):
    R = D.shape[0]
    iters, S, _ = z_lam.shape
    n_elite = max(1, int(round(elite_frac * S)))

    mu_lam = np.zeros(R)
    sd_lam = np.full(R, lam_std0)
    mu_ls = 0.5 * (log_lo + log_hi)
    sd_ls = 0.5 * (log_hi - log_lo)

    lam = np.empty((S, R))
    logsig = np.empty(S)
    scores = np.empty(S)
    beta = np.empty(n_sel)
    A = np.empty((n_sel + 1, n_sel + 1))
    sol = np.empty(n_sel + 1)
    K = np.empty((n_sel, n_sel))
    q = np.empty(n_sel)
    absl = np.empty(R)

    best = np.inf
    best_sel = np.arange(R - n_sel, R)
    best_beta = np.full(n_sel, 1.0 / n_sel)
    best_sigma = np.exp(mu_ls)
    history = np.empty(iters)
    n_fail = 0

    for it in range(iters):
        for s in range(S):
            for t in range(R):
                lam[s, t] = mu_lam[t] + sd_lam[t] * z_lam[it, s, t]
            if it == 0:
                ls = log_lo + u0[s] * (log_hi - log_lo)
            else:
                ls = min(max(mu_ls + sd_ls * z_sig[it, s], log_lo), log_hi)
            logsig[s] = ls
            sigma = np.exp(ls)
            for t in range(R):
                absl[t] = abs(lam[s, t])
            sel = np.argsort(absl, kind="mergesort")[R - n_sel:]
            val = _qp_buf(D, sel, sigma, ridge, _full_term(D, sigma), beta, A, sol, K, q)
            scores[s] = val
            if not np.isfinite(val):
                n_fail += 1
            elif val < best:
                best = val
                best_sel = sel.copy()
                best_beta = beta.copy()
                best_sigma = sigma
        history[it] = best

        elite = np.argsort(scores, kind="mergesort")[:n_elite]
        m = 0
        for e in elite:
            if np.isfinite(scores[e]):
                m += 1
        if m == 0:
            continue
        for t in range(R):
            acc = 0.0
            for e in elite:
                if np.isfinite(scores[e]):
                    acc += lam[e, t]
            mean = acc / m
            acc = 0.0
            for e in elite:
                if np.isfinite(scores[e]):
                    acc += (lam[e, t] - mean) ** 2
            mu_lam[t] = mean
            sd_lam[t] = max(np.sqrt(acc / m), 1e-6)
        acc = 0.0
        for e in elite:
            if np.isfinite(scores[e]):
                acc += logsig[e]
        mean = acc / m
        acc = 0.0
        for e in elite:
            if np.isfinite(scores[e]):
                acc += (logsig[e] - mean) ** 2
        mu_ls = mean
        sd_ls = max(np.sqrt(acc / m), 1e-6)

    return best_sel, best_beta, best_sigma, best, n_fail, history


@njit(cache=True)
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
        sel[b] = out[0]
        beta[b] = out[1]
        sigma[b] = out[2]
        disc[b] = out[3]
        fails[b] = out[4]
    return sel, beta, sigma, disc, fails
