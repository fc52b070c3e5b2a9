"""Replica-parallel walk accumulators.

Every replica r owns its environment seed and uniform stream, so results
depend only on (seed, r), never on how replicas are spread over threads.
"""

import numpy as np
from numba import njit, prange

from . import _core


@njit(cache=True, parallel=True)
def accumulate(law, a, b, zk, field_seeds, keys, d, lam, checkpoints, targets, want_sup):
    """Run one walk per replica and record statistics at each checkpoint.

    Returns
      pos    (R, C, d)  X_t
      drift  (R, C, d)  sum_{k<t} d_omega(X_k)
      qvar   (R, C)     sum_{k<t} (d2 - d_1^2)(X_k)
      logw   (R, T, C)  log dP_target / dP_lam of the path up to t
      sup    (R, C)     max_{m<=t} |sum_{k<m} d_omega(X_k)|^2   (zeros unless want_sup)
      ok     (R,)       number of steps completed (n unless a degenerate vertex was hit)
    """
    R = field_seeds.shape[0]
    C = checkpoints.shape[0]
    T = targets.shape[0]
    n = checkpoints[C - 1]
    pos = np.zeros((R, C, d), np.int64)
    drift = np.zeros((R, C, d))
    qvar = np.zeros((R, C))
    logw = np.zeros((R, T, C))
    sup = np.zeros((R, C))
    ok = np.zeros(R, np.int64)
    _, fs, fb = _core.tilt_factors(lam)
    tf = np.empty((T, 2))
    for j in range(T):
        tf[j, 0] = np.exp(-targets[j])
        tf[j, 1] = np.exp(-2.0 * targets[j])
    for r in prange(R):
        seed = np.uint64(field_seeds[r])
        key = np.uint64(keys[r])
        x = np.zeros(d, np.int64)
        om = np.empty(2 * d)
        w = np.empty(2 * d)
        w2 = np.empty(2 * d)
        q = np.empty(2 * d + 1)
        sc = np.empty(d, np.int64)
        dsum = np.zeros(d)
        qsum = 0.0
        lw = np.zeros(T)
        best = 0.0
        c = 0
        t = 0
        while c < C and checkpoints[c] == 0:
            c += 1
        done = True
        while t < n:
            _core.site_conductances(law, a, b, zk, seed, x, om, sc)
            s = _core.tilt(om, fs, fb, w)
            if not s > 0.0:
                done = False
                break
            _core.thresholds(w, s, q)
            inv = 1.0 / s
            for i in range(d):
                dsum[i] += (w[i] - w[i + d]) * inv
            d1 = (w[0] - w[d]) * inv
            qsum += (w[0] + w[d]) * inv - d1 * d1
            if T > 0:
                ls = np.log(s) + lam
                for j in range(T):
                    s2 = _core.tilt(om, tf[j, 0], tf[j, 1], w2)
                    lw[j] += ls - (np.log(s2) + targets[j])
            k = _core.pick(q, _core.walk_uniform(key, t))
            _core.apply_step(x, k)
            if T > 0 and (k == 0 or k == d):
                sgn = 1.0 if k == 0 else -1.0
                for j in range(T):
                    lw[j] += sgn * (targets[j] - lam)
            t += 1
            if want_sup:
                nrm = 0.0
                for i in range(d):
                    nrm += dsum[i] * dsum[i]
                if nrm > best:
                    best = nrm
            while c < C and checkpoints[c] == t:
                for i in range(d):
                    pos[r, c, i] = x[i]
                    drift[r, c, i] = dsum[i]
                qvar[r, c] = qsum
                for j in range(T):
                    logw[r, j, c] = lw[j]
                sup[r, c] = best
                c += 1
        ok[r] = t if not done else n
    return pos, drift, qvar, logw, sup, ok


@njit(cache=True)
def coupled_run(laws, pa, pb, zks, seeds, lams, d, key, n, start):
    """K walks driven by one uniform stream; returns positions (K, n+1, d) and steps done."""
    K = laws.shape[0]
    pos = np.zeros((K, n + 1, d), np.int64)
    om = np.empty(2 * d)
    w = np.empty(2 * d)
    q = np.empty(2 * d + 1)
    sc = np.empty(d, np.int64)
    x = np.empty(d, np.int64)
    for i in range(K):
        for j in range(d):
            pos[i, 0, j] = start[i, j]
    for t in range(n):
        u = _core.walk_uniform(key, t)
        for i in range(K):
            for j in range(d):
                x[j] = pos[i, t, j]
            _core.site_conductances(laws[i], pa[i], pb[i], zks[i], np.uint64(seeds[i]), x, om, sc)
            _, fs, fb = _core.tilt_factors(lams[i])
            s = _core.tilt(om, fs, fb, w)
            if not s > 0.0:
                return pos, t
            _core.thresholds(w, s, q)
            k = _core.pick(q, u)
            _core.apply_step(x, k)
            for j in range(d):
                pos[i, t + 1, j] = x[j]
    return pos, n


@njit(cache=True, parallel=True)
def paths_e1(law, a, b, zk, field_seeds, keys, d, lam, n):
    """First coordinates of R walks, (R, n+1), plus completed steps per replica."""
    R = field_seeds.shape[0]
    out = np.zeros((R, n + 1), np.int64)
    ok = np.zeros(R, np.int64)
    _, fs, fb = _core.tilt_factors(lam)
    for r in prange(R):
        seed = np.uint64(field_seeds[r])
        key = np.uint64(keys[r])
        x = np.zeros(d, np.int64)
        om = np.empty(2 * d)
        w = np.empty(2 * d)
        q = np.empty(2 * d + 1)
        sc = np.empty(d, np.int64)
        t = 0
        while t < n:
            _core.site_conductances(law, a, b, zk, seed, x, om, sc)
            s = _core.tilt(om, fs, fb, w)
            if not s > 0.0:
                break
            _core.thresholds(w, s, q)
            k = _core.pick(q, _core.walk_uniform(key, t))
            _core.apply_step(x, k)
            t += 1
            out[r, t] = x[0]
        ok[r] = t
    return out, ok


@njit(cache=True)
def y_walk(key, n, threshold):
    """Auxiliary +-1 walk: Y_{k+1} - Y_k = +1 iff U_k <= threshold."""
    y = np.zeros(n + 1, np.int64)
    for t in range(n):
        y[t + 1] = y[t] + (1 if _core.walk_uniform(key, t) <= threshold else -1)
    return y
