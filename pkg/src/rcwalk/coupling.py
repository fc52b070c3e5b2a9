"""Shared-uniform coupling of walks in different environments and biases.

Every member of an ensemble reads the same U_n and moves by its own
thresholds. With the auxiliary +-1 walk Y driven by the same uniforms, a
strict two-step climb of Y that is never undercut forces the same climb in
every member whose bias exceeds lambda_s (super-regenerations).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _core, _engine
from .env import ConductanceField, DegenerateVertexError, beta
from .kernel import BiasedKernel, WalkPath, WalkStream, cumulative_thresholds, moves


@dataclass
class CoupledEnsemble:
    kernels: list
    stream: WalkStream
    positions: list = field(default_factory=list)  # per member, list of sites
    time: int = 0

    def __post_init__(self):
        dims = {k.dim for k in self.kernels}
        if len(dims) != 1:
            raise ValueError("all kernels must share the dimension")
        if not self.positions:
            d = dims.pop()
            self.positions = [[np.zeros(d, dtype=np.int64)] for _ in self.kernels]

    def current(self, i: int) -> np.ndarray:
        return self.positions[i][-1]

    def paths(self) -> list[WalkPath]:
        d = self.kernels[0].dim
        table = {tuple(m): i for i, m in enumerate(moves(d))}
        out = []
        for track in self.positions:
            steps = [table[tuple(b - a)] for a, b in zip(track[:-1], track[1:])]
            out.append(WalkPath(track[0], np.array(steps, dtype=np.int8),
                                self.stream.uniforms(0, len(steps))))
        return out


def coupled_step(ens: CoupledEnsemble) -> CoupledEnsemble:
    """Consume U_t and advance every member by its own thresholds."""
    u = ens.stream.uniform(ens.time)
    d = ens.kernels[0].dim
    mv = moves(d)
    new = []
    for i, kern in enumerate(ens.kernels):
        x = ens.current(i)
        q = cumulative_thresholds(kern, x)  # raises on a degenerate vertex
        k = int(np.searchsorted(q[1:], u, side="left"))
        new.append(x + mv[min(k, 2 * d - 1)])
    for track, x in zip(ens.positions, new):
        track.append(x)
    ens.time += 1
    return ens


def run_coupled(kernels, n: int, stream: WalkStream, start=None) -> np.ndarray:
    """Positions (K, n+1, d) of K coupled walks over n steps."""
    d = kernels[0].dim
    if any(k.dim != d for k in kernels):
        raise ValueError("all kernels must share the dimension")
    K = len(kernels)
    st = np.zeros((K, d), np.int64) if start is None else np.broadcast_to(
        np.asarray(start, np.int64), (K, d)).copy()
    args = [k.args for k in kernels]
    laws = np.array([a[0] for a in args], np.int64)
    pa = np.array([a[1] for a in args])
    pb = np.array([a[2] for a in args])
    zks = np.array([a[3] for a in args], np.bool_)
    seeds = np.array([a[4] for a in args], np.uint64)
    lams = np.array([a[5] for a in args])
    pos, done = _engine.coupled_run(laws, pa, pb, zks, seeds, lams, d, stream.key, int(n), st)
    if done < n:
        # the member that failed is the first whose site at `done` is degenerate
        for i, kern in enumerate(kernels):
            if not np.any(kern.field.site(pos[i, done]) > 0):
                raise DegenerateVertexError(pos[i, done], path=pos[i, : done + 1])
        raise DegenerateVertexError(pos[0, done], path=pos[0, : done + 1])
    return pos


# ------------------------------------------------------------ the Y walk

def y_threshold(lambda_s: float, delta: float, d: int) -> float:
    """P(Y steps right) = e^ls / (e^ls + (2d-1) beta)."""
    if lambda_s <= 0:
        raise ValueError("lambda_s must be positive")
    if not 0 <= delta < 1:
        raise ValueError("delta must lie in [0, 1)")
    return 1.0 / (1.0 + (2 * d - 1) * beta(delta) * math.exp(-lambda_s))


def y_drift_threshold(delta: float, d: int) -> float:
    """lambda_s must exceed log(beta) + log(2d-1) for Y to drift right."""
    return math.log(beta(delta)) + math.log(2 * d - 1)


@dataclass
class AuxiliaryYWalk:
    lambda_s: float
    beta: float
    values: np.ndarray

    @classmethod
    def from_stream(cls, stream: WalkStream, n: int, lambda_s: float, delta: float, d: int):
        th = y_threshold(lambda_s, delta, d)
        return cls(lambda_s, beta(delta), _engine.y_walk(stream.key, int(n), th))


@dataclass
class SuperRegenerationLog:
    times: np.ndarray
    censored_tail: bool


def _ladder_candidates(y: np.ndarray) -> np.ndarray:
    """Times n >= 1 with max_{k<n-1} y_k < y_{n-1} < y_n < min_{n<k<=end} y_k."""
    y = np.asarray(y, dtype=np.int64)
    n = y.shape[0]
    if n < 2:
        return np.zeros(0, np.int64)
    prefmax = np.full(n, np.iinfo(np.int64).min)  # prefmax[m] = max_{k<m} y_k
    prefmax[1:] = np.maximum.accumulate(y[:-1])
    sufmin = np.full(n, np.iinfo(np.int64).max)  # sufmin[m] = min_{k>m} y_k
    sufmin[:-1] = np.minimum.accumulate(y[::-1])[::-1][1:]
    idx = np.arange(1, n)
    ok = (prefmax[idx - 1] < y[idx - 1]) & (y[idx - 1] < y[idx]) & (y[idx] < sufmin[idx])
    return idx[ok]


def confirmed_ladder_times(y, confirm_margin: int) -> tuple[np.ndarray, bool]:
    """Candidates whose level the sequence later exceeds by `confirm_margin`."""
    y = np.asarray(y, dtype=np.int64)
    cand = _ladder_candidates(y)
    if cand.size == 0:
        return cand, False
    keep = y[cand] + confirm_margin <= int(y.max())
    return cand[keep], bool(np.any(~keep))


def detect_super_regenerations(y: AuxiliaryYWalk | np.ndarray, horizon: int | None = None,
                               confirm_margin: int = 64) -> SuperRegenerationLog:
    """Super-regeneration times of Y within the first `horizon` steps.

    A candidate is declared only after Y has climbed `confirm_margin` above
    it without returning; the unconfirmed remainder is the censored tail.
    """
    vals = y.values if isinstance(y, AuxiliaryYWalk) else np.asarray(y)
    if horizon is not None:
        if vals.shape[0] < horizon + 1:
            raise ValueError("Y walk shorter than the horizon")
        vals = vals[: horizon + 1]
    times, censored = confirmed_ladder_times(vals, confirm_margin)
    return SuperRegenerationLog(times, censored)


class InsufficientRegenerations(ValueError):
    pass


def regeneration_increments(positions: np.ndarray, times: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(displacements, durations) between consecutive regeneration times."""
    times = np.asarray(times, dtype=np.int64)
    if times.size < 2:
        raise InsufficientRegenerations("need at least two regeneration times")
    pos = positions[times]
    return np.diff(pos, axis=0), np.diff(times)


def ratio_estimate(disp: np.ndarray, dur: np.ndarray, groups: np.ndarray | None = None):
    """Ratio of means sum(disp) / sum(dur) with a delta-method standard error.

    With `groups`, increments are clustered (e.g. by replica) before the
    variance is taken, which absorbs dependence inside a group.
    """
    disp = np.atleast_2d(np.asarray(disp, dtype=float).T).T
    dur = np.asarray(dur, dtype=float)
    if groups is None:
        groups = np.arange(dur.shape[0])
    labels, inv = np.unique(groups, return_inverse=True)
    g = labels.shape[0]
    sx = np.zeros((g, disp.shape[1]))
    np.add.at(sx, inv, disp)
    st = np.bincount(inv, weights=dur, minlength=g)
    ratio = sx.sum(axis=0) / st.sum()
    if g < 2:
        return ratio, np.full_like(ratio, np.inf)
    resid = sx - ratio[None, :] * st[:, None]
    se = np.sqrt(g / (g - 1) * np.sum(resid**2, axis=0)) / st.sum()
    return ratio, se


def regeneration_speed_ratio(positions: np.ndarray, log: SuperRegenerationLog) -> np.ndarray:
    """Mean inter-regeneration displacement over mean inter-regeneration time."""
    disp, dur = regeneration_increments(positions, log.times)
    return disp.sum(axis=0) / dur.sum()


def super_regeneration_speed(kernel_law, d: int, lam: float, lambda_s: float, horizon: int,
                             replicas: int, seed: int, confirm_margin: int = 64):
    """Pooled super-regeneration estimate of the speed over annealed replicas.

    Returns (ratio vector, stderr vector, increments table).
    """
    from .estimate import replica_keys

    delta = kernel_law.ellipticity
    if lam <= lambda_s:
        raise ValueError("super-regenerations need lam > lambda_s")
    th = y_threshold(lambda_s, delta, d)
    fs, ks = replica_keys(seed, replicas)
    disp_all, dur_all, grp = [], [], []
    for r in range(replicas):
        kern = BiasedKernel(ConductanceField(kernel_law, d, int(fs[r])), lam)
        stream = WalkStream(seed, r)
        pos = run_coupled([kern], horizon, stream)[0]
        y = _engine.y_walk(stream.key, horizon, th)
        times, _ = confirmed_ladder_times(y, confirm_margin)
        if times.size < 2:
            continue
        disp, dur = regeneration_increments(pos, times)
        disp_all.append(disp)
        dur_all.append(dur)
        grp.append(np.full(dur.shape[0], r))
    if not dur_all:
        raise InsufficientRegenerations("no replica produced two super-regenerations")
    disp = np.vstack(disp_all)
    dur = np.concatenate(dur_all)
    ratio, se = ratio_estimate(disp, dur, np.concatenate(grp))
    return ratio, se, (disp, dur, np.concatenate(grp))


# ------------------------------------------------------------ divergence

def cell_disagreement(q_a: np.ndarray, q_b: np.ndarray) -> float:
    """P(u picks different moves under thresholds q_a and q_b), u ~ U(0, 1]."""
    lo = np.maximum(q_a[:-1], q_b[:-1])
    hi = np.minimum(q_a[1:], q_b[1:])
    return float(1.0 - np.clip(hi - lo, 0.0, None).sum())


def coupling_divergence_rate(field_a: ConductanceField, field_b: ConductanceField, lam: float,
                             n: int, replicas: int, seed: int) -> tuple[float, float]:
    """Per-step frequency of differing moves for two coupled walks; (rate, stderr)."""
    if field_a.dim != field_b.dim:
        raise ValueError("fields must share the dimension")
    rates = np.empty(replicas)
    for r in range(replicas):
        fa = field_a.with_seed(int(_core.derive_seed(np.uint64(field_a.seed), _core.REPLICA_TAG, r)))
        fb = field_b.with_seed(int(_core.derive_seed(np.uint64(field_b.seed), _core.REPLICA_TAG, r)))
        pos = run_coupled([BiasedKernel(fa, lam), BiasedKernel(fb, lam)], n, WalkStream(seed, r))
        inc = np.diff(pos, axis=1)
        rates[r] = np.mean(np.any(inc[0] != inc[1], axis=1))
    se = rates.std(ddof=1) / math.sqrt(replicas) if replicas > 1 else float("inf")
    return float(rates.mean()), float(se)


def count_disagreement_events(pos_a: np.ndarray, pos_b: np.ndarray, y: np.ndarray,
                              times: np.ndarray) -> dict:
    """Diagnostics for the comparison argument between two coupled biases.

    For each excursion between consecutive super-regenerations, count the
    left steps of Y and whether the two walks ever took different steps
    inside it; returns a histogram {k: (excursions with k left steps, of
    which disagreeing)}.
    """
    out: dict[int, list[int]] = {}
    for s, e in zip(times[:-1], times[1:]):
        left = int(np.sum(np.diff(y[s : e + 1]) < 0))
        diff = bool(np.any(np.diff(pos_a[s : e + 1], axis=0) != np.diff(pos_b[s : e + 1], axis=0)))
        rec = out.setdefault(left, [0, 0])
        rec[0] += 1
        rec[1] += int(diff)
    return {k: tuple(v) for k, v in sorted(out.items())}


def write_regeneration_csv(fh, rows) -> None:
    """rows: iterable of (replica, tau_k, X_tau . e_1, censored)."""
    fh.write("replica,tau,x1,censored\n")
    for r, t, x, c in rows:
        fh.write(f"{int(r)},{int(t)},{int(x)},{int(bool(c))}\n")
