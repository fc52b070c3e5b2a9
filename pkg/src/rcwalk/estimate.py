"""Velocity and speed-derivative estimators.

All estimators are annealed: replica r walks in its own environment with seed
derived from (seed, r) and its own uniform stream. Reusing a seed across
biases therefore gives common random numbers for free.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from . import _core, _engine
from .env import ConductanceField, EnvironmentLaw
from .kernel import (BiasedKernel, WalkPath, WalkStream, field_seed, homogeneous_speed, run_path,
                     stream_key)


@dataclass
class EstimateSummary:
    estimate: np.ndarray | float
    stderr: np.ndarray | float
    replicas: int
    horizon: int
    method: str
    extra: dict = field(default_factory=dict)

    def e1(self) -> tuple[float, float]:
        return float(np.atleast_1d(self.estimate)[0]), float(np.atleast_1d(self.stderr)[0])

    def record(self, law: EnvironmentLaw, lam: float, seed: int) -> dict:
        est, se = np.atleast_1d(self.estimate), np.atleast_1d(self.stderr)
        return {
            "method": self.method,
            "law": law_label(law),
            "lambda": lam,
            "horizon": self.horizon,
            "replicas": self.replicas,
            "estimate": [float(v) for v in est],
            "stderr": [float(v) for v in se],
            "seed": int(seed),
        }


def law_label(law: EnvironmentLaw) -> str:
    if law.kind == "homogeneous":
        return f"homogeneous(c={law.c:g})"
    if law.kind == "uniform_elliptic":
        return f"uniform_elliptic(delta={law.delta:g},{law.marginal})"
    return f"two_point(p={law.p:g},kappa={law.kappa:g})"


def replica_keys(seed: int, replicas: int, offset: int = 0):
    """(field seeds, stream keys) for replicas offset..offset+replicas-1."""
    ids = range(offset, offset + replicas)
    fs = np.array([field_seed(seed, r) for r in ids], dtype=np.uint64)
    ks = np.array([stream_key(seed, r) for r in ids], dtype=np.uint64)
    return fs, ks


@dataclass
class Ensemble:
    """Raw per-replica accumulators at a set of checkpoint times."""

    checkpoints: np.ndarray
    pos: np.ndarray
    drift: np.ndarray
    qvar: np.ndarray
    logw: np.ndarray
    sup: np.ndarray
    completed: np.ndarray

    @property
    def replicas(self) -> int:
        return self.pos.shape[0]


class NumericalFailure(RuntimeError):
    pass


def simulate(law: EnvironmentLaw, d: int, lam: float, checkpoints, replicas: int, seed: int,
             targets=(), want_sup: bool = False, zero_kappa: bool = False) -> Ensemble:
    cps = np.unique(np.asarray(checkpoints, dtype=np.int64))
    if cps.size == 0 or cps[0] < 0:
        raise ValueError("checkpoints must be nonnegative")
    if replicas < 1:
        raise ValueError("need at least one replica")
    fs, ks = replica_keys(seed, replicas)
    probe = ConductanceField(law, d, 0, zero_kappa=zero_kappa)
    code, a, b, zk, _ = probe.args
    out = _engine.accumulate(code, a, b, zk, fs, ks, d, float(lam), cps,
                             np.asarray(targets, dtype=np.float64), bool(want_sup))
    ens = Ensemble(cps, *out)
    if np.any(ens.completed < cps[-1]):
        bad = int(np.argmin(ens.completed))
        raise NumericalFailure(f"replica {bad} hit a degenerate vertex at step {ens.completed[bad]}")
    return ens


def _mean_se(values: np.ndarray, axis=0):
    n = values.shape[axis]
    mean = values.mean(axis=axis)
    if n < 2:
        return mean, np.full_like(np.asarray(mean, dtype=float), np.inf)
    return mean, values.std(axis=axis, ddof=1) / math.sqrt(n)


def estimate_velocity(law: EnvironmentLaw, lam: float, horizon: int, replicas: int, seed: int,
                      d: int = 2) -> EstimateSummary:
    """Mean of X_n / n over independent (environment, walk) replicas."""
    if horizon < 1:
        raise ValueError("horizon must be positive")
    ens = simulate(law, d, lam, [horizon], replicas, seed)
    v = ens.pos[:, -1, :] / horizon
    mean, se = _mean_se(v)
    return EstimateSummary(mean, se, replicas, horizon, "plain", {"per_replica": v[:, 0]})


def velocity_curve(law: EnvironmentLaw, lams, horizon: int, replicas: int, seed: int,
                   d: int = 2) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Speeds on a bias grid with shared seeds.

    Returns (estimates, stderrs, per-replica e_1 speeds of shape (len(lams), R)).
    Adjacent differences should use the per-replica array: the runs share
    environments and uniforms, so the speeds are positively correlated and
    paired differences have smaller variance than independent ones.
    """
    per = np.empty((len(lams), replicas))
    for i, lam in enumerate(lams):
        per[i] = estimate_velocity(law, lam, horizon, replicas, seed, d).extra["per_replica"]
    mean, se = _mean_se(per, axis=1)
    return mean, se, per


def paired_difference(a: np.ndarray, b: np.ndarray) -> tuple[float, float]:
    """Mean and standard error of b - a over paired replicas."""
    m, s = _mean_se(np.asarray(b) - np.asarray(a))
    return float(m), float(s)


def _batches(replicas: int, batches: int) -> np.ndarray:
    b = max(2, min(batches, replicas))
    return np.arange(replicas) * b // replicas


def estimate_derivative_cov(law: EnvironmentLaw, lam: float, horizon: int, replicas: int, seed: int,
                            d: int = 2, batches: int = 20) -> EstimateSummary:
    """Covariance estimate of the speed derivative.

    M_n = X_n - sum_{k<n} d_omega(X_k) has mean zero exactly, so
    E[M_n.e_1 (X_n - n v)] / n is estimated by a plain average once v is
    replaced by a velocity estimate built from the other batches
    (leave-one-batch-out keeps the plug-in independent of the replica).
    The standard error is the replica-level one.
    """
    if replicas < 2:
        raise ValueError("covariance needs at least two replicas")
    if lam < 0:
        raise ValueError("bias must be nonnegative")
    ens = simulate(law, d, lam, [horizon], replicas, seed)
    X = ens.pos[:, -1, :].astype(float)
    M = X - ens.drift[:, -1, :]
    lab = _batches(replicas, batches)
    nb = lab.max() + 1
    sums = np.array([X[lab == b].sum(axis=0) for b in range(nb)])
    counts = np.bincount(lab, minlength=nb)
    v_out = (sums.sum(axis=0) - sums) / (replicas - counts)[:, None] / horizon
    N = X - horizon * v_out[lab]
    prod = M[:, :1] * N / horizon  # row r: M_1 N_j / n
    # replica-level spread; the shared plug-in only adds O(1/R) correlation
    est, se = _mean_se(prod)
    vel, vel_se = _mean_se(X / horizon)
    return EstimateSummary(est, se, replicas, horizon, "covariance",
                           {"velocity": vel, "velocity_se": vel_se,
                            "var_M": M[:, 0].var(ddof=1) / horizon,
                            "var_N": N[:, 0].var(ddof=1) / horizon})


def estimate_derivative_fd(law: EnvironmentLaw, lam: float, h: float, horizon: int, replicas: int,
                           seed: int, d: int = 2) -> EstimateSummary:
    """Central difference of speeds at lam +- h with common random numbers."""
    if h <= 0 or lam - h < 0:
        raise ValueError("need 0 < h <= lam")
    up = estimate_velocity(law, lam + h, horizon, replicas, seed, d).extra["per_replica"]
    lo = estimate_velocity(law, lam - h, horizon, replicas, seed, d).extra["per_replica"]
    m, s = _mean_se((up - lo) / (2 * h))
    return EstimateSummary(m, s, replicas, horizon, "finite-difference", {"h": h})


# ------------------------------------------------------------ martingales

@dataclass
class MartingalePair:
    """Running M_n = X_n - sum_{k<n} d_omega(X_k) and N_n = X_n - n v.

    `cross` accumulates M_k.e_1 * N_k over the updates seen so far.
    """

    M: np.ndarray
    N: np.ndarray
    n: int
    velocity: np.ndarray
    cross: np.ndarray

    @classmethod
    def start(cls, d: int, velocity) -> "MartingalePair":
        v = np.broadcast_to(np.asarray(velocity, dtype=float), (d,)).copy()
        return cls(np.zeros(d), np.zeros(d), 0, v, np.zeros(d))

    def update(self, step, drift) -> "MartingalePair":
        self.M = self.M + step - drift
        self.N = self.N + step - self.velocity
        self.n += 1
        self.cross = self.cross + self.M[0] * self.N
        return self

    def covariance(self) -> np.ndarray:
        """M_n.e_1 N_n / n at the current step."""
        return self.M[0] * self.N / max(self.n, 1)


@njit(cache=True)
def _path_drifts(law, a, b, zk, seed, lam, pos):
    n = pos.shape[0] - 1
    d = pos.shape[1]
    om = np.empty(2 * d)
    w = np.empty(2 * d)
    sc = np.empty(d, np.int64)
    x = np.empty(d, np.int64)
    _, fs, fb = _core.tilt_factors(lam)
    out = np.empty((n, d))
    for t in range(n):
        for i in range(d):
            x[i] = pos[t, i]
        _core.site_conductances(law, a, b, zk, seed, x, om, sc)
        s = _core.tilt(om, fs, fb, w)
        for i in range(d):
            out[t, i] = (w[i] - w[d + i]) / s
    return out


def path_drifts(path: WalkPath, fld: ConductanceField, lam: float) -> np.ndarray:
    """d_omega(X_k) for k < len(path), shape (n, d)."""
    return _path_drifts(*fld.args, float(lam), path.positions())


def martingale_pair(path: WalkPath, fld: ConductanceField, lam: float, velocity) -> MartingalePair:
    """Run the pair along a whole path."""
    pos = path.positions()
    steps = np.diff(pos, axis=0).astype(float)
    mp = MartingalePair.start(pos.shape[1], velocity)
    for st, dr in zip(steps, path_drifts(path, fld, lam)):
        mp.update(st, dr)
    return mp


def martingale_increments(law: EnvironmentLaw, lam: float, steps: int, walks: int, seed: int,
                          d: int = 2) -> np.ndarray:
    """(X_{k+1} - X_k) - d_omega(X_k) stacked over `walks` walks, shape (walks, steps, d)."""
    out = np.empty((walks, steps, d))
    for r in range(walks):
        fld = ConductanceField(law, d, field_seed(seed, r))
        path = run_path(BiasedKernel(fld, lam), np.zeros(d, np.int64), steps,
                        WalkStream(seed, r), store_uniforms=False)
        pos = path.positions()
        out[r] = np.diff(pos, axis=0) - _path_drifts(*fld.args, float(lam), pos)
    return out


def martingale_check(law: EnvironmentLaw, lam: float, pairs: int = 100_000, seed: int = 0,
                     d: int = 2, walks: int = 100) -> dict:
    """Mean increment of M and its z-score per component.

    Increments along one walk are uncorrelated but not independent, so the
    standard error is taken over walk-level means.
    """
    steps = max(1, pairs // walks)
    inc = martingale_increments(law, lam, steps, walks, seed, d)
    m, s = _mean_se(inc.mean(axis=1))
    return {"mean": m, "stderr": s, "z": m / s, "pairs": walks * steps}


# ------------------------------------------------------------ reweighting

@dataclass
class GirsanovWeight:
    log_weight: float
    lam0: float
    lam: float
    steps: int
    expansion: float

    @property
    def weight(self) -> float:
        return math.exp(self.log_weight)


@njit(cache=True)
def _path_log_ratio(law, a, b, zk, seed, lam0, lam, pos):
    n = pos.shape[0] - 1
    d = pos.shape[1]
    om = np.empty(2 * d)
    w0 = np.empty(2 * d)
    w1 = np.empty(2 * d)
    sc = np.empty(d, np.int64)
    x = np.empty(d, np.int64)
    _, fs0, fb0 = _core.tilt_factors(lam0)
    _, fs1, fb1 = _core.tilt_factors(lam)
    lw = 0.0
    msum = 0.0
    vsum = 0.0
    for t in range(n):
        for i in range(d):
            x[i] = pos[t, i]
        _core.site_conductances(law, a, b, zk, seed, x, om, sc)
        s0 = _core.tilt(om, fs0, fb0, w0)
        s1 = _core.tilt(om, fs1, fb1, w1)
        step = pos[t + 1, 0] - pos[t, 0]
        lw += (lam - lam0) * step + (np.log(s0) + lam0) - (np.log(s1) + lam)
        d1 = (w0[0] - w0[d]) / s0
        d2 = (w0[0] + w0[d]) / s0
        msum += step - d1
        vsum += d2 - d1 * d1
    lb = lam - lam0
    return lw, lb * msum - 0.5 * lb * lb * vsum


def girsanov_weight(path: WalkPath, lam0: float, lam: float, fld: ConductanceField) -> GirsanovWeight:
    """Exact likelihood ratio dP_lam / dP_lam0 of a path.

    `expansion` is the second-order surrogate lbar*M_t.e_1 - lbar^2/2 *
    sum (d2 - d^2), returned for comparison only.
    """
    pos = path.positions()
    lw, expn = _path_log_ratio(*fld.args, float(lam0), float(lam), pos)
    return GirsanovWeight(float(lw), lam0, lam, len(path), float(expn))


def girsanov_check(law: EnvironmentLaw, lam0: float, lam: float, horizon: int, replicas: int,
                   seed: int, d: int = 2) -> dict:
    """Mean likelihood ratio and the reweighted speed at lam from lam0 walks."""
    ens = simulate(law, d, lam0, [horizon], replicas, seed, targets=[lam])
    w = np.exp(ens.logw[:, 0, -1])
    wm, wse = _mean_se(w)
    xv = ens.pos[:, -1, 0] / horizon
    rv, rse = _mean_se(w * xv)
    return {"mean_weight": float(wm), "mean_weight_se": float(wse),
            "reweighted_speed": float(rv), "reweighted_speed_se": float(rse),
            "weight_l2": float(np.sqrt(np.mean(w**2)))}


class HorizonError(ValueError):
    def __init__(self, required, cap):
        super().__init__(f"window needs horizon {required} > cap {cap}")
        self.required = required


def window_length(alpha: float, lam0: float, lam: float) -> int:
    if lam == lam0:
        raise ValueError("window length is infinite at lam == lam0")
    if alpha <= 1:
        raise ValueError("alpha must exceed 1")
    return int(alpha / (lam - lam0) ** 2)


def reweighted_window_mean(law: EnvironmentLaw, lam0: float, lam: float, alphas, replicas: int,
                           seed: int, d: int = 2, v0: float | None = None,
                           horizon_cap: int = 10**6) -> list[EstimateSummary]:
    """Window difference quotients (E_lam[X_t]/t - v(lam0)) / (lam - lam0).

    t = alpha / (lam - lam0)^2. Paths are simulated once under lam0 and
    reweighted by the exact likelihood ratio at each window length, so all
    alphas share the same walks. `v0` defaults to the closed form on
    homogeneous laws and must be supplied otherwise.
    """
    alphas = np.atleast_1d(np.asarray(alphas, dtype=float))
    ts = [window_length(a, lam0, lam) for a in alphas]
    if max(ts) > horizon_cap:
        raise HorizonError(max(ts), horizon_cap)
    if v0 is None:
        if law.kind != "homogeneous":
            raise ValueError("v0 is required for random environments")
        v0 = homogeneous_speed(lam0, d)
    ens = simulate(law, d, lam0, ts, replicas, seed, targets=[lam])
    lb = lam - lam0
    out = []
    for a, t in zip(alphas, ts):
        c = int(np.searchsorted(ens.checkpoints, t))
        w = np.exp(ens.logw[:, 0, c])
        vals = w * (ens.pos[:, c, 0] - t * v0) / (t * lb)
        m, s = _mean_se(vals)
        out.append(EstimateSummary(float(m), float(s), replicas, t, "reweighted",
                                   {"alpha": float(a), "mean_weight": float(w.mean()),
                                    "weight_l2": float(np.sqrt(np.mean(w**2)))}))
    return out


# ------------------------------------------------------------ drift sums

def drift_sum_diagnostic(deltas, horizons, replicas: int, seed: int, d: int = 2,
                         marginal: str = "two_point_sym") -> dict:
    """E[sup_{n<=L} |sum_{k<n} d_omega(X_k)|^2] / (L delta) for the unbiased walk."""
    horizons = sorted(int(h) for h in horizons)
    rows = []
    for delta in deltas:
        law = EnvironmentLaw.uniform_elliptic(delta, marginal)
        ens = simulate(law, d, 0.0, horizons, replicas, seed, want_sup=True)
        for c, L in enumerate(horizons):
            m, s = _mean_se(ens.sup[:, c])
            scale = L * delta if delta > 0 else 1.0
            rows.append({"delta": float(delta), "L": L, "mean_sup": float(m),
                         "ratio": float(m / scale) if delta > 0 else 0.0,
                         "ratio_se": float(s / scale) if delta > 0 else 0.0})
    slopes = []
    for delta in deltas:
        if delta == 0:
            continue
        r = [row for row in rows if row["delta"] == delta]
        lo, hi = r[0], r[-1]
        dl = math.log(hi["L"] / lo["L"])
        sl = math.log(hi["ratio"] / lo["ratio"]) / dl
        se = math.sqrt((hi["ratio_se"] / hi["ratio"]) ** 2 + (lo["ratio_se"] / lo["ratio"]) ** 2) / dl
        slopes.append((sl, se))
    if slopes:
        wts = np.array([1 / s**2 for _, s in slopes])
        pooled = float(np.sum(wts * np.array([v for v, _ in slopes])) / wts.sum())
        pooled_se = float(1 / math.sqrt(wts.sum()))
    else:
        pooled, pooled_se = 0.0, 0.0
    ratios = [row["ratio"] for row in rows]
    return {"rows": rows, "slope": pooled, "slope_se": pooled_se,
            "max_ratio": float(max(ratios)) if ratios else 0.0}


@njit(cache=True)
def _xi(law, a, b, zk, seed, lam, pos):
    n = pos.shape[0] - 1
    d = pos.shape[1]
    om = np.empty(2 * d)
    w = np.empty(2 * d)
    sc = np.empty(d, np.int64)
    x = np.empty(d, np.int64)
    _, fs, fb = _core.tilt_factors(lam)
    flat = np.ones(2 * d)
    wf = np.empty(2 * d)
    sf = _core.tilt(flat, fs, fb, wf)
    dbar = (wf[0] - wf[d]) / sf
    out = np.zeros(n + 1)
    for t in range(n):
        for i in range(d):
            x[i] = pos[t, i]
        _core.site_conductances(law, a, b, zk, seed, x, om, sc)
        s = _core.tilt(om, fs, fb, w)
        out[t + 1] = out[t] + (w[0] - w[d]) / s - dbar
    return out


def xi_sum(path: WalkPath, fld: ConductanceField, lam: float) -> np.ndarray:
    """xi_n = sum_{k<n} (d_omega - d_flat)(X_k).e_1 along a path, n = 0..len."""
    return _xi(*fld.args, float(lam), path.positions())


def drift_sum_e1(path: WalkPath, fld: ConductanceField, lam: float) -> np.ndarray:
    """sum_{k<n} d_omega(X_k).e_1 along a path, n = 0..len."""
    xi = _xi(*fld.args, float(lam), path.positions())
    return xi + np.arange(xi.shape[0]) * homogeneous_speed(lam, fld.dim)
