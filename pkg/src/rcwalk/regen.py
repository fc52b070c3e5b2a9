"""Hyperplane hitting times, fresh epochs, regenerations and ladder times.

Everything here is a pure function of a finite path. "Never returns" is
decided on the observed window only, and a candidate is confirmed once
the walk has moved `confirm_margin` levels beyond it, as for
super-regenerations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from . import _core, _engine
from .coupling import InsufficientRegenerations, ratio_estimate
from .env import ConductanceField, EnvironmentLaw, LawError
from .estimate import replica_keys
from .kernel import WalkPath
from .traps import DEFAULT_HORIZON, dead_end_depth, find_dead_ends


def _e1(path) -> np.ndarray:
    if isinstance(path, WalkPath):
        return path.e1()
    a = np.asarray(path)
    return a[:, 0] if a.ndim == 2 else a


def _positions(path) -> np.ndarray:
    if isinstance(path, WalkPath):
        return path.positions()
    a = np.asarray(path)
    return a if a.ndim == 2 else a[:, None]


@dataclass(frozen=True)
class HittingRecord:
    level: int
    time: int | None  # None when censored

    @property
    def censored(self) -> bool:
        return self.time is None


def first_hitting_time(path, h) -> HittingRecord:
    """First n with X_n . e1 = floor(h)."""
    level = math.floor(h)
    hit = np.flatnonzero(_e1(path) == level)
    return HittingRecord(level, int(hit[0]) if hit.size else None)


def detect_fresh_epochs(path) -> np.ndarray:
    """Times n >= 1 whose e1-coordinate beats every earlier one."""
    x = _e1(path)
    if x.size < 2:
        return np.zeros(0, np.int64)
    prev = np.maximum.accumulate(x)[:-1]
    return np.flatnonzero(x[1:] > prev) + 1


@dataclass
class RegenerationLog:
    fresh_epochs: np.ndarray
    regenerations: np.ndarray
    censored_tail: bool


def detect_regenerations(path, confirm_margin: int = 64) -> RegenerationLog:
    """Fresh epochs after which the walk stays strictly to the right."""
    x = _e1(path)
    fresh = detect_fresh_epochs(x)
    if fresh.size == 0:
        return RegenerationLog(fresh, fresh, False)
    sufmin = np.empty(x.size, x.dtype)  # min over k > n
    sufmin[-1] = np.iinfo(np.int64).max
    sufmin[:-1] = np.minimum.accumulate(x[::-1])[::-1][1:]
    cand = fresh[x[fresh] < sufmin[fresh]]
    keep = x[cand] + confirm_margin <= x.max()
    return RegenerationLog(fresh, cand[keep], bool(np.any(~keep)))


@dataclass
class RegenerationSpeed:
    ratio: np.ndarray
    stderr: np.ndarray
    increments: int
    displacements: np.ndarray
    durations: np.ndarray


def _increments(pos: np.ndarray, regs: np.ndarray):
    # drop the first pair: increments start at R_2
    r = np.asarray(regs)[1:]
    return np.diff(pos[r], axis=0), np.diff(r)


def regeneration_speed(path, log: RegenerationLog, batches: int = 20) -> RegenerationSpeed:
    """Ratio of mean displacement to mean duration between regenerations R_n, n >= 2.

    The standard error comes from contiguous batches of increments.
    """
    if log.regenerations.size < 3:
        raise InsufficientRegenerations("need at least three confirmed regenerations")
    disp, dur = _increments(_positions(path), log.regenerations)
    m = dur.size
    groups = np.arange(m) * min(batches, m) // m
    ratio, se = ratio_estimate(disp, dur, groups)
    return RegenerationSpeed(ratio, se, m, disp, dur)


def pooled_regeneration_speed(paths, confirm_margin: int = 64) -> RegenerationSpeed:
    """Pool increments over independent replicas; the replica is the cluster unit."""
    disp_all, dur_all, grp = [], [], []
    for r, path in enumerate(paths):
        log = detect_regenerations(path, confirm_margin)
        if log.regenerations.size < 3:
            continue
        disp, dur = _increments(_positions(path), log.regenerations)
        disp_all.append(disp)
        dur_all.append(dur)
        grp.append(np.full(dur.size, r))
    if not dur_all:
        raise InsufficientRegenerations("no replica has three confirmed regenerations")
    disp, dur = np.vstack(disp_all), np.concatenate(dur_all)
    ratio, se = ratio_estimate(disp, dur, np.concatenate(grp))
    return RegenerationSpeed(ratio, se, dur.size, disp, dur)


def e1_paths(law: EnvironmentLaw, lam: float, horizon: int, replicas: int, seed: int,
             d: int = 2, zero_kappa: bool = False) -> np.ndarray:
    """First coordinates (R, n+1) of annealed replicas; same replicas as `simulate`."""
    fs, ks = replica_keys(seed, replicas)
    code, a, b, zk, _ = ConductanceField(law, d, 0, zero_kappa=zero_kappa).args
    x, ok = _engine.paths_e1(code, a, b, zk, fs, ks, d, float(lam), int(horizon))
    if np.any(ok < horizon):
        from .estimate import NumericalFailure
        raise NumericalFailure("a replica hit a degenerate vertex")
    return x


@dataclass
class MomentReport:
    lam: float
    c: float
    count: int
    mean: float        # of lambda^2 * (R_{n+1} - R_n)
    mean_se: float
    var: float
    exp_moment: float  # mean of exp(c lambda^2 (R_{n+1} - R_n))
    exp_moment_se: float


def inter_regeneration_moments(durations, lam: float, c: float = 0.1) -> MomentReport:
    """Moments of lambda^2 times the inter-regeneration durations.

    `durations` is one array per replica (or a single array). With fewer
    than two values the standard errors are reported as inf.
    """
    if isinstance(durations, np.ndarray) and durations.ndim == 1:
        durations = [durations]
    s = lam**2 * np.concatenate([np.asarray(t, float) for t in durations])
    n = s.size
    if n == 0:
        nan = float("nan")
        return MomentReport(lam, c, 0, nan, nan, nan, nan, nan)
    e = np.exp(c * s)
    if n < 2:
        return MomentReport(lam, c, n, float(s[0]), float("inf"), 0.0, float(e[0]), float("inf"))
    return MomentReport(lam, c, n, float(s.mean()), float(s.std(ddof=1) / math.sqrt(n)),
                        float(s.var(ddof=1)), float(e.mean()), float(e.std(ddof=1) / math.sqrt(n)))


def regeneration_durations(e1: np.ndarray, confirm_margin: int = 64) -> np.ndarray:
    log = detect_regenerations(e1, confirm_margin)
    return np.diff(log.regenerations[1:])


# ------------------------------------------------------------------ ladders

@dataclass
class LadderLog:
    times: np.ndarray       # L_0 = 0, L_1, ...
    depths: np.ndarray      # d(A_i)
    occupation: np.ndarray  # T_{A_i}
    censored: bool


def ladder_decomposition(path, fld: ConductanceField, H: int = DEFAULT_HORIZON) -> LadderLog:
    """Ladder times, dead-end depths and times spent in the dead ends.

    T_A is the time, measured from L_i, until the walk leaves the slab
    X_{L_i}.e1 < z.e1 <= X_{L_i}.e1 + d(A_i); it is 0 without a dead end.
    The ladder stops (censored) when the path ends before the next ladder
    time or inside a slab.
    """
    if fld.dim != 2 or fld.law.kind != "two_point":
        raise LawError("ladder decomposition needs a two-point field in d=2")
    pos = _positions(path)
    x = pos[:, 0]
    n = x.size
    fresh = detect_fresh_epochs(x)
    # first fresh epoch at each level above the start
    level_time = np.full(int(x.max() - x[0]) + 2, -1, np.int64)
    level_time[0] = 0
    level_time[x[fresh] - x[0]] = fresh
    cand = np.concatenate([[0], fresh])
    depths_all = dead_end_depth(fld, pos[cand], H)
    depth_of = dict(zip(cand.tolist(), depths_all.tolist()))
    times, depths, occ = [], [], []
    t = 0
    censored = False
    while True:
        d = int(depth_of[t])
        base = x[t]
        if d > 0:
            after = x[t + 1 :]
            out = np.flatnonzero((after <= base) | (after > base + d))
            if out.size == 0:
                censored = True
                break
            ta = int(out[0]) + 1
        else:
            ta = 0
        times.append(t)
        depths.append(d)
        occ.append(ta)
        nxt = base + d + 1 - x[0]
        if nxt >= level_time.size or level_time[nxt] < 0:
            censored = True
            break
        t = int(level_time[nxt])
    return LadderLog(np.array(times, np.int64), np.array(depths, np.int64),
                     np.array(occ, np.int64), censored)


# ------------------------------------------------------------------ exports

def write_regenerations_csv(fh, rows) -> None:
    """rows: (replica, R_n, X_{R_n}.e1)."""
    fh.write("replica,R,x1\n")
    for r, t, x in rows:
        fh.write(f"{int(r)},{int(t)},{int(x)}\n")


def write_ladder_csv(fh, rows) -> None:
    """rows: (replica, L_i, d(A_i), T_{A_i})."""
    fh.write("replica,L,depth,T_A\n")
    for r, t, d, ta in rows:
        fh.write(f"{int(r)},{int(t)},{int(d)},{int(ta)}\n")


# ------------------------------------------------------------------ dead-end clocks

@njit(cache=True)
def _slab_exit(law, a, b, zk, seed, lam, x, depth, key, cap):
    """Steps until X.e1 <= x.e1 or X.e1 > x.e1 + depth, capped at `cap`."""
    d = x.shape[0]
    y = x.copy()
    om = np.empty(2 * d)
    w = np.empty(2 * d)
    q = np.empty(2 * d + 1)
    sc = np.empty(d, np.int64)
    _, fs, fb = _core.tilt_factors(lam)
    for t in range(cap):
        _core.site_conductances(law, a, b, zk, seed, y, om, sc)
        s = _core.tilt(om, fs, fb, w)
        _core.thresholds(w, s, q)
        _core.apply_step(y, _core.pick(q, _core.walk_uniform(key, t)))
        if y[0] <= x[0] or y[0] > x[0] + depth:
            return t + 1
    return cap


@dataclass
class OccupationStudy:
    lam: float
    kappas: tuple
    sites_scanned: int
    dead_ends: int
    p_dead_end: float
    cond_mean: np.ndarray   # E[T_A | dead end], per kappa
    cond_se: np.ndarray
    mean: np.ndarray        # E[T_A] = P(dead end) E[T_A | dead end]
    censored: np.ndarray    # walks that hit the cap, per kappa
    paired_diff: np.ndarray  # mean of T_A(kappa_{i+1}) - T_A(kappa_i), shared uniforms
    paired_se: np.ndarray


def dead_end_occupation(p: float, kappas, lam: float, seed: int, boxes: int = 20, side: int = 400,
                        walks: int = 20, cap: int = 10**6, H: int = DEFAULT_HORIZON) -> OccupationStudy:
    """Mean time spent in the dead end at the origin, for several kappa.

    Openness depends on p only, so one scan of `boxes` fields locates the
    dead ends for every kappa; from each start `walks` slab-exit clocks are
    run with uniforms shared across kappa.
    """
    kappas = tuple(float(k) for k in kappas)
    per = [[] for _ in kappas]
    scanned = 0
    found = 0
    for bx in range(boxes):
        fseed = int(_core.derive_seed(np.uint64(seed), _core.FIELD_TAG, bx))
        base = ConductanceField(EnvironmentLaw.two_point(p, kappas[0]), 2, fseed)
        xs, dd = find_dead_ends(base, (0, 0), (side - 1, side - 1), H)
        scanned += side * side
        found += len(dd)
        for k, kap in enumerate(kappas):
            code, a, b, zk, s = ConductanceField(EnvironmentLaw.two_point(p, kap), 2, fseed).args
            for m in range(len(dd)):
                for w in range(walks):
                    key = np.uint64(_core.derive_seed(np.uint64(seed), _core.WALK_TAG, (bx * 1_000_003 + m) * 1024 + w))
                    per[k].append(_slab_exit(code, a, b, zk, s, float(lam), xs[m].astype(np.int64),
                                             int(dd[m]), key, int(cap)))
    T = np.array(per, dtype=float)  # (K, samples)
    K = len(kappas)
    pd = found / scanned
    if T.shape[1] == 0:
        nan = np.full(K, np.nan)
        return OccupationStudy(lam, kappas, scanned, 0, pd, nan, nan, nan, np.zeros(K, int),
                               np.full(K - 1, np.nan), np.full(K - 1, np.nan))
    # the dead end is the sampling unit; walks from one start are averaged
    units = T.reshape(K, found, walks).mean(axis=2)
    cm = units.mean(axis=1)
    cse = units.std(axis=1, ddof=1) / math.sqrt(found) if found > 1 else np.full(K, np.inf)
    diff = np.diff(units, axis=0)
    dm = diff.mean(axis=1)
    dse = diff.std(axis=1, ddof=1) / math.sqrt(found) if found > 1 else np.full(K - 1, np.inf)
    return OccupationStudy(lam, kappas, scanned, found, pd, cm, cse, pd * cm,
                           (T >= cap).sum(axis=1), dm, dse)
