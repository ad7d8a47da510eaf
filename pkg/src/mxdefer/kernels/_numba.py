"""numba versions of the kernels in ``_numpy``; same signatures, same results."""

import math

import numpy as np
from numba import njit

from .codes import COMP_LOG, COMP_EXP, COMP_GCE, COMP_MAE, SUM_SQ, SUM_EXP, SUM_RHO, EXP_CLAMP


@njit(cache=True)
def _phi(kind, t, rho, out):
    # out[0] = value, out[1] = right derivative; returns 1 when clamped
    if kind == 0:
        if t < 1.0:
            out[0] = 1.0 - t
            out[1] = -1.0
        else:
            out[0] = 0.0
            out[1] = 0.0
        return 0
    if kind == 1:
        r = 1.0 - t if t < 1.0 else 0.0
        out[0] = r * r
        out[1] = -2.0 * r
        return 0
    if kind == 2:
        a = -t
        if a > EXP_CLAMP:
            out[0] = math.exp(EXP_CLAMP)
            out[1] = 0.0
            return 1
        e = math.exp(a)
        out[0] = e
        out[1] = -e
        return 0
    if t < 0.0:
        out[0] = 1.0
        out[1] = 0.0
    elif t < rho:
        out[0] = 1.0 - t / rho
        out[1] = -1.0 / rho
    else:
        out[0] = 0.0
        out[1] = 0.0
    return 0


@njit(cache=True)
def _row(code, alpha, rho, s, w, g, buf):
    """Loss of one row; writes the gradient into g. buf[0] counts clamps."""
    K = s.shape[0]
    wsum = 0.0
    for k in range(K):
        wsum += w[k]
    loss = 0.0
    if code <= COMP_MAE:
        mx = s[0]
        for k in range(1, K):
            if s[k] > mx:
                mx = s[k]
        tot = 0.0
        for k in range(K):
            tot += math.exp(s[k] - mx)
        lt = math.log(tot)
        if code == COMP_LOG:
            for k in range(K):
                nlp = lt - (s[k] - mx)
                loss += w[k] * nlp
                g[k] = wsum * math.exp(-nlp) - w[k]
        elif code == COMP_EXP:
            acc = 0.0
            for k in range(K):
                nlp = lt - (s[k] - mx)
                if nlp > EXP_CLAMP:
                    buf[0] += 1
                    loss += w[k] * (math.exp(EXP_CLAMP) - 1.0)
                    g[k] = 0.0
                else:
                    e = math.exp(nlp)
                    loss += w[k] * (e - 1.0)
                    g[k] = w[k] * e
                    acc += w[k] * e
            for k in range(K):
                g[k] = math.exp(s[k] - mx - lt) * acc - g[k]
        elif code == COMP_GCE:
            acc = 0.0
            for k in range(K):
                pa = math.exp(alpha * (s[k] - mx - lt))
                loss += w[k] * (1.0 - pa)
                g[k] = w[k] * pa
                acc += w[k] * pa
            loss /= alpha
            for k in range(K):
                g[k] = math.exp(s[k] - mx - lt) * acc - g[k]
        else:
            acc = 0.0
            for k in range(K):
                p = math.exp(s[k] - mx - lt)
                loss += w[k] * (1.0 - p)
                g[k] = w[k] * p
                acc += w[k] * p
            for k in range(K):
                g[k] = math.exp(s[k] - mx - lt) * acc - g[k]
        return loss

    out = np.empty(2)
    for k in range(K):
        g[k] = 0.0
    if code <= SUM_RHO:
        kind = 1 if code == SUM_SQ else (2 if code == SUM_EXP else 3)
        for k in range(K):
            for j in range(K):
                if j == k:
                    continue
                buf[0] += _phi(kind, s[k] - s[j], rho, out)
                loss += w[k] * out[0]
                g[k] += w[k] * out[1]
                g[j] -= w[k] * out[1]
        return loss

    kind = code - 7  # hinge, sq, exp, rho
    for j in range(K):
        buf[0] += _phi(kind, -s[j], rho, out)
        c = wsum - w[j]
        loss += c * out[0]
        g[j] = -c * out[1]
    return loss


@njit(cache=True)
def _weighted_loss_grad(code, alpha, rho, S, W):
    B, K = S.shape
    L = np.empty(B)
    G = np.empty((B, K))
    buf = np.zeros(1, dtype=np.int64)
    for b in range(B):
        L[b] = _row(code, alpha, rho, S[b], W[b], G[b], buf)
    return L, G, buf[0]


def weighted_loss_grad(code, alpha, rho, S, W):
    S = np.ascontiguousarray(S, dtype=np.float64)
    W = np.ascontiguousarray(W, dtype=np.float64)
    L, G, c = _weighted_loss_grad(code, float(alpha), float(rho), S, W)
    return L, G, int(c)


@njit(cache=True)
def _project(v, lam, zero_sum, out):
    K = v.shape[0]
    if not zero_sum:
        for i in range(K):
            x = v[i]
            if x > lam:
                x = lam
            elif x < -lam:
                x = -lam
            out[i] = x
        return
    if not math.isfinite(lam):
        m = 0.0
        for i in range(K):
            m += v[i]
        m /= K
        for i in range(K):
            out[i] = v[i] - m
        return
    lo = v.min() - lam
    hi = v.max() + lam
    for _ in range(200):
        tau = 0.5 * (lo + hi)
        tot = 0.0
        for i in range(K):
            x = v[i] - tau
            tot += min(max(x, -lam), lam)
        if tot > 0.0:
            lo = tau
        else:
            hi = tau
    tau = 0.5 * (lo + hi)
    for i in range(K):
        out[i] = min(max(v[i] - tau, -lam), lam)


@njit(cache=True)
def _minimize(code, alpha, rho, w, starts, lam, zero_sum, steps, step0, tol):
    R, K = starts.shape
    best_val = np.inf
    best_x = np.zeros(K)
    x = np.empty(K)
    xn = np.empty(K)
    g = np.empty(K)
    gn = np.empty(K)
    tmp = np.empty(K)
    buf = np.zeros(1, dtype=np.int64)
    for r in range(R):
        _project(starts[r], lam, zero_sum, x)
        f = _row(code, alpha, rho, x, w, g, buf)
        eta = step0
        small = 0
        for _ in range(steps):
            for i in range(K):
                tmp[i] = x[i] - eta * g[i]
            _project(tmp, lam, zero_sum, xn)
            fn = _row(code, alpha, rho, xn, w, gn, buf)
            if fn < f:
                gain = f - fn
                x[:] = xn
                g[:] = gn
                f = fn
                eta *= 1.5
                if gain < tol:
                    small += 1
                else:
                    small = 0
                if small >= 2:
                    break
            else:
                eta *= 0.5
                if eta < tol:
                    break
        if f < best_val:
            best_val = f
            best_x[:] = x
    return best_val, best_x


def project(v, lam, zero_sum):
    v = np.ascontiguousarray(v, dtype=np.float64)
    out = np.empty_like(v)
    _project(v, float(lam), bool(zero_sum), out)
    return out


def minimize_weighted(code, alpha, rho, w, starts, lam, zero_sum, steps, step0, tol):
    return _minimize(
        code, float(alpha), float(rho),
        np.ascontiguousarray(w, dtype=np.float64),
        np.ascontiguousarray(starts, dtype=np.float64),
        float(lam), bool(zero_sum), int(steps), float(step0), float(tol),
    )
