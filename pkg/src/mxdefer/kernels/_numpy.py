"""Vectorised numpy kernels.

Every kernel evaluates the weighted base loss

    f(s, w) = sum_k w[k] * ell(s, k)

row by row, which covers both the surrogate (weights 1 on the true class and
1 - c_j on expert labels) and the conditional surrogate risk (weights q).
"""

import numpy as np

from .codes import (
    COMP_EXP, COMP_LOG, COMP_GCE, COMP_MAE,
    SUM_SQ, SUM_EXP, SUM_RHO,
    CSTND_HINGE, CSTND_SQ, CSTND_EXP, CSTND_RHO,
    EXP_CLAMP,
)


def _softmax(S):
    z = S - S.max(axis=1, keepdims=True)
    e = np.exp(z)
    tot = e.sum(axis=1, keepdims=True)
    return e / tot, np.log(tot) - z  # probabilities, -log p


def _phi(code, t, rho):
    """Margin function and its right derivative, elementwise."""
    if code == 0:  # hinge
        v = np.maximum(0.0, 1.0 - t)
        d = np.where(t < 1.0, -1.0, 0.0)
        return v, d, 0
    if code == 1:  # squared hinge
        r = np.maximum(0.0, 1.0 - t)
        return r * r, -2.0 * r, 0
    if code == 2:  # exponential
        a = -t
        over = a > EXP_CLAMP
        e = np.exp(np.minimum(a, EXP_CLAMP))
        return e, np.where(over, 0.0, -e), int(over.sum())
    # rho-margin
    v = np.minimum(np.maximum(0.0, 1.0 - t / rho), 1.0)
    d = np.where((t >= 0.0) & (t < rho), -1.0 / rho, 0.0)
    return v, d, 0


_SUM_PHI = {SUM_SQ: 1, SUM_EXP: 2, SUM_RHO: 3}
_CSTND_PHI = {CSTND_HINGE: 0, CSTND_SQ: 1, CSTND_EXP: 2, CSTND_RHO: 3}


def weighted_loss_grad(code, alpha, rho, S, W):
    """Return (loss per row, gradient wrt scores, number of clamped exponents)."""
    S = np.ascontiguousarray(S, dtype=np.float64)
    W = np.ascontiguousarray(W, dtype=np.float64)
    B, K = S.shape
    Wsum = W.sum(axis=1, keepdims=True)
    clamped = 0

    if code <= COMP_MAE:
        P, nlogp = _softmax(S)
        if code == COMP_LOG:
            L = (W * nlogp).sum(axis=1)
            G = Wsum * P - W
        elif code == COMP_EXP:
            over = nlogp > EXP_CLAMP
            clamped = int(over.sum())
            E = np.exp(np.minimum(nlogp, EXP_CLAMP))  # 1/p_k
            L = (W * (E - 1.0)).sum(axis=1)
            WE = np.where(over, 0.0, W * E)
            G = P * WE.sum(axis=1, keepdims=True) - WE
        elif code == COMP_GCE:
            Pa = P ** alpha
            L = (W * (1.0 - Pa)).sum(axis=1) / alpha
            G = P * (W * Pa).sum(axis=1, keepdims=True) - W * Pa
        else:
            L = (W * (1.0 - P)).sum(axis=1)
            G = P * (W * P).sum(axis=1, keepdims=True) - W * P
        return L, G, clamped

    off = ~np.eye(K, dtype=bool)
    if code in _SUM_PHI:
        # M[b, k, j] = s_k - s_j
        M = S[:, :, None] - S[:, None, :]
        V, D, clamped = _phi(_SUM_PHI[code], M, rho)
        V = V * off
        D = D * off
        L = (W * V.sum(axis=2)).sum(axis=1)
        WD = W[:, :, None] * D
        G = WD.sum(axis=2) - WD.sum(axis=1)
        return L, G, clamped

    # constrained: sum_k w_k sum_{j != k} phi(-s_j) = sum_j (W - w_j) phi(-s_j)
    V, D, clamped = _phi(_CSTND_PHI[code], -S, rho)
    coef = Wsum - W
    return (coef * V).sum(axis=1), -coef * D, clamped


def project(v, lam, zero_sum):
    """Euclidean projection onto {|s_i| <= lam} intersected with {sum s = 0}."""
    v = np.asarray(v, dtype=np.float64)
    if not zero_sum:
        return np.clip(v, -lam, lam) if np.isfinite(lam) else v.copy()
    if not np.isfinite(lam):
        return v - v.mean()
    lo, hi = v.min() - lam, v.max() + lam
    for _ in range(200):
        tau = 0.5 * (lo + hi)
        if np.clip(v - tau, -lam, lam).sum() > 0.0:
            lo = tau
        else:
            hi = tau
    return np.clip(v - 0.5 * (lo + hi), -lam, lam)


def minimize_weighted(code, alpha, rho, w, starts, lam, zero_sum, steps, step0, tol):
    """Projected gradient descent from every start; returns (best value, best point).

    The step is halved on non-improvement and grown by 1.5 after an accepted
    step; a start stops once the step drops below ``tol`` or an accepted step
    improves by less than ``tol`` twice in a row.
    """
    w = np.asarray(w, dtype=np.float64)[None, :]
    best_val, best_x = np.inf, None
    for x0 in starts:
        x = project(x0, lam, zero_sum)
        f, g, _ = weighted_loss_grad(code, alpha, rho, x[None, :], w)
        f, g = f[0], g[0]
        eta = step0
        small = 0
        for _ in range(steps):
            xn = project(x - eta * g, lam, zero_sum)
            fn, gn, _ = weighted_loss_grad(code, alpha, rho, xn[None, :], w)
            if fn[0] < f:
                gain = f - fn[0]
                x, f, g = xn, fn[0], gn[0]
                eta *= 1.5
                small = small + 1 if gain < tol else 0
                if small >= 2:
                    break
            else:
                eta *= 0.5
                if eta < tol:
                    break
        if f < best_val:
            best_val, best_x = f, x
    return best_val, best_x
