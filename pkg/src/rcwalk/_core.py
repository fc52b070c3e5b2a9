"""Compiled primitives shared by every module.

All randomness is counter based: a value is a pure function of
(seed, tag, coordinates), so fields and walk uniforms can be re-queried in any
order, from any thread, and give identical results.
"""

import numpy as np
from numba import njit

# law codes
HOMOGENEOUS = 0
UE_TWO_POINT = 1
UE_INTERVAL = 2
TWO_POINT = 3

_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_TWO_M53 = 1.0 / 9007199254740992.0

FIELD_TAG = np.uint64(0x6669656C64)  # "field"
WALK_TAG = np.uint64(0x77616C6B)  # "walk"
REPLICA_TAG = np.uint64(0x7265706C)  # "repl"


@njit(cache=True, inline="always")
def mix64(z):
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@njit(cache=True, inline="always")
def absorb(h, v):
    """Fold one signed 64-bit word into a running hash."""
    return mix64(h + _GOLDEN + np.uint64(np.int64(v)))


@njit(cache=True, inline="always")
def to_unit(h):
    """Map a hash to the grid {1, ..., 2^53} / 2^53, a subset of (0, 1]."""
    return (np.float64(h >> _S11) + 1.0) * _TWO_M53


@njit(cache=True, inline="always")
def derive_seed(master, tag, index):
    return absorb(absorb(mix64(np.uint64(master) ^ np.uint64(tag)), index), 0)


@njit(cache=True, inline="always")
def walk_uniform(stream, n):
    """Uniform U_n of a walk stream; `stream` is already replica specific."""
    return to_unit(absorb(stream, n))


@njit(cache=True, inline="always")
def edge_uniform(seed, base, axis):
    h = mix64(seed ^ FIELD_TAG)
    h = absorb(h, axis)
    for i in range(base.shape[0]):
        h = absorb(h, base[i])
    return to_unit(h)


@njit(cache=True, inline="always")
def law_value(law, a, b, zero_kappa, u):
    if law == HOMOGENEOUS:
        return a
    if law == UE_TWO_POINT:
        return 1.0 - a if u <= 0.5 else 1.0 + a
    if law == UE_INTERVAL:
        return 1.0 - a + 2.0 * a * u
    # two point: 1 with probability p=a, kappa=b otherwise
    if u <= a:
        return 1.0
    return 0.0 if zero_kappa else b


@njit(cache=True, inline="always")
def conductance(law, a, b, zero_kappa, seed, base, axis):
    if law == HOMOGENEOUS:
        return a
    return law_value(law, a, b, zero_kappa, edge_uniform(seed, base, axis))


@njit(cache=True, inline="always")
def site_conductances(law, a, b, zero_kappa, seed, x, out, scratch):
    """Conductances of the 2d edges at x, ordered +e_1..+e_d, -e_1..-e_d."""
    d = x.shape[0]
    if law == HOMOGENEOUS:
        for k in range(2 * d):
            out[k] = a
        return
    h0 = mix64(seed ^ FIELD_TAG)
    for k in range(2 * d):
        axis = k if k < d else k - d
        h = absorb(h0, axis)
        for i in range(d):
            v = x[i]
            if k >= d and i == axis:
                v -= 1
            h = absorb(h, v)
        out[k] = law_value(law, a, b, zero_kappa, to_unit(h))


@njit(cache=True, inline="always")
def tilt_factors(lam):
    """(forward, sideways, backward) tilts scaled by exp(-lam).

    The common factor exp(-lam) keeps every tilt in (0, 1], so large biases
    never overflow.
    """
    return 1.0, np.exp(-lam), np.exp(-2.0 * lam)


@njit(cache=True, inline="always")
def tilt(omega, f_side, f_back, out):
    """Scaled move weights from conductances; returns their sum."""
    d = omega.shape[0] // 2
    s = 0.0
    for k in range(2 * d):
        if k == 0:
            w = omega[k]
        elif k == d:
            w = omega[k] * f_back
        else:
            w = omega[k] * f_side
        out[k] = w
        s += w
    return s


@njit(cache=True, inline="always")
def thresholds(weights, s, q):
    """Cumulative thresholds q[0..2d]; q[0]=0 and q[2d]=1 exactly."""
    m = weights.shape[0]
    q[0] = 0.0
    inv = 1.0 / s
    c = 0.0
    for k in range(m):
        c += weights[k]
        q[k + 1] = c * inv
    q[m] = 1.0


@njit(cache=True, inline="always")
def pick(q, u):
    """Direction k (0-based) with q[k] < u <= q[k+1]."""
    m = q.shape[0] - 1
    for k in range(m):
        if u <= q[k + 1]:
            return k
    return m - 1


@njit(cache=True, inline="always")
def apply_step(x, k):
    d = x.shape[0]
    if k < d:
        x[k] += 1
    else:
        x[k - d] -= 1


@njit(cache=True, inline="always")
def log_partition(weights, lam):
    """log sum_e omega(x, x+e) exp(lam e.e1) from the scaled weights."""
    s = 0.0
    for k in range(weights.shape[0]):
        s += weights[k]
    return np.log(s) + lam
