"""Open clusters, good points, traps and dead ends of two-point fields in d=2.

An edge is open when its conductance equals 1. All geometry works on a
`ClusterQuery`, the open/closed pattern of a finite box, so handcrafted
configurations and hashed fields go through the same code. Properties of
the infinite cluster are certified by reaching the box boundary (or a
stated radius), which is the only way to decide them in finite time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from . import _core
from .env import ConductanceField, LawError

DEFAULT_HORIZON = 64


# ------------------------------------------------------------------ box data

@njit(cache=True)
def _fill_open(law, a, b, zk, seed, lo0, lo1, nx, ny):
    h = np.zeros((nx, ny), np.bool_)  # h[i, j]: (i, j) -- (i+1, j); last row unused
    v = np.zeros((nx, ny), np.bool_)  # v[i, j]: (i, j) -- (i, j+1); last column unused
    base = np.empty(2, np.int64)
    for i in range(nx):
        for j in range(ny):
            base[0] = lo0 + i
            base[1] = lo1 + j
            if i + 1 < nx:
                h[i, j] = _core.law_value(law, a, b, zk, _core.edge_uniform(seed, base, 0)) == 1.0
            if j + 1 < ny:
                v[i, j] = _core.law_value(law, a, b, zk, _core.edge_uniform(seed, base, 1)) == 1.0
    return h, v


@dataclass
class ClusterQuery:
    """Open-edge pattern on the box lo..hi (inclusive corners)."""

    lo: tuple
    h: np.ndarray
    v: np.ndarray
    source: ConductanceField | None = None
    _stamp: np.ndarray | None = field(default=None, repr=False)
    _qid: int = field(default=0, repr=False)
    _stack: np.ndarray | None = field(default=None, repr=False)

    @classmethod
    def from_field(cls, fld: ConductanceField, lo, hi) -> "ClusterQuery":
        if fld.dim != 2:
            raise LawError("trap geometry is implemented for d=2")
        if fld.law.kind != "two_point":
            raise LawError("open edges are defined for two-point laws")
        lo = (int(lo[0]), int(lo[1]))
        nx, ny = int(hi[0]) - lo[0] + 1, int(hi[1]) - lo[1] + 1
        if nx < 1 or ny < 1:
            raise ValueError("empty box")
        code, a, b, zk, seed = fld.args
        h, v = _fill_open(code, a, b, zk, seed, lo[0], lo[1], nx, ny)
        return cls(lo, h, v, fld)

    @classmethod
    def from_arrays(cls, h, v, lo=(0, 0)) -> "ClusterQuery":
        h = np.asarray(h, dtype=bool).copy()
        v = np.asarray(v, dtype=bool).copy()
        if h.shape != v.shape:
            raise ValueError("h and v must have the box shape")
        h[-1, :] = False
        v[:, -1] = False
        return cls((int(lo[0]), int(lo[1])), h, v)

    @classmethod
    def all_open(cls, lo, hi) -> "ClusterQuery":
        shape = (int(hi[0]) - int(lo[0]) + 1, int(hi[1]) - int(lo[1]) + 1)
        return cls.from_arrays(np.ones(shape, bool), np.ones(shape, bool), lo)

    @property
    def shape(self):
        return self.h.shape

    @property
    def hi(self):
        return (self.lo[0] + self.shape[0] - 1, self.lo[1] + self.shape[1] - 1)

    def local(self, x) -> tuple[int, int]:
        i, j = int(x[0]) - self.lo[0], int(x[1]) - self.lo[1]
        if not (0 <= i < self.shape[0] and 0 <= j < self.shape[1]):
            raise ValueError(f"site {tuple(x)} outside the box")
        return i, j

    def close(self, x, y) -> None:
        """Close the edge {x, y} (for building configurations by hand)."""
        self._set(x, y, False)

    def open(self, x, y) -> None:
        self._set(x, y, True)

    def _set(self, x, y, val):
        (i, j), (k, m) = self.local(x), self.local(y)
        if abs(i - k) + abs(j - m) != 1:
            raise ValueError("not nearest neighbours")
        if i != k:
            self.h[min(i, k), j] = val
        else:
            self.v[i, min(j, m)] = val

    def next_stamp(self) -> tuple[np.ndarray, int]:
        if self._stamp is None or self._stamp.shape != self.shape or self._qid > 2**30:
            self._stamp = np.zeros(self.shape, np.int32)
            self._qid = 0
        self._qid += 1
        return self._stamp, self._qid

    def stack(self) -> np.ndarray:
        if self._stack is None:
            self._stack = np.empty((4 * self.h.size + 4, 2), np.int64)
        return self._stack


# ------------------------------------------------------------------ good points

def _good_dp(h: np.ndarray, v: np.ndarray, H: int) -> np.ndarray:
    """g[i, j]: an admissible staircase of H steps starts at (i, j) inside the box."""
    nx, ny = h.shape
    g = np.ones((nx, ny), bool)
    up = np.zeros((nx, ny), bool)  # (i, j) -> (i+1, j) -> (i+1, j+1)
    dn = np.zeros((nx, ny), bool)  # (i, j) -> (i+1, j) -> (i+1, j-1)
    up[:-1, :] = h[:-1, :] & v[1:, :]
    dn[:-1, 1:] = h[:-1, 1:] & v[1:, :-1]
    for _ in range(H):
        nxt = np.zeros_like(g)
        nxt[:-1, :-1] |= up[:-1, :-1] & g[1:, 1:]
        nxt[:-1, 1:] |= dn[:-1, 1:] & g[1:, :-1]
        g = nxt
    return g


def good_mask(q: ClusterQuery, H: int = DEFAULT_HORIZON) -> tuple[np.ndarray, np.ndarray]:
    """(good, certified): certified sites have their whole staircase cone in the box."""
    if H < 0:
        raise ValueError("horizon must be nonnegative")
    nx, ny = q.shape
    g = _good_dp(q.h, q.v, H)
    cert = np.zeros((nx, ny), bool)
    if nx > H and ny > 2 * H:
        cert[: nx - H, H : ny - H] = True
    return g & cert, cert


@dataclass(frozen=True)
class GoodPoint:
    site: tuple
    good: bool
    horizon: int


def is_good_point(src, x, H: int = DEFAULT_HORIZON) -> GoodPoint:
    """Certified good-point test: a staircase reaches column x.e1 + H."""
    x = (int(x[0]), int(x[1]))
    if isinstance(src, ConductanceField):
        q = ClusterQuery.from_field(src, (x[0], x[1] - H), (x[0] + H, x[1] + H))
    else:
        q = src
    i, j = q.local(x)
    if i + H > q.shape[0] - 1 or j - H < 0 or j + H > q.shape[1] - 1:
        raise ValueError("box too small for the requested horizon")
    return GoodPoint(x, bool(_good_site(q.h, q.v, i, j, H)), H)


@njit(cache=True)
def _good_site(h, v, i, j, H):
    ny = h.shape[1]
    cur = np.zeros(ny, np.bool_)
    cur[j] = True
    for k in range(H):
        c = i + k
        nxt = np.zeros(ny, np.bool_)
        alive = False
        for r in range(ny):
            if not cur[r] or not h[c, r]:
                continue
            if r + 1 < ny and v[c + 1, r]:
                nxt[r + 1] = True
                alive = True
            if r >= 1 and v[c + 1, r - 1]:
                nxt[r - 1] = True
                alive = True
        if not alive:
            return False
        cur = nxt
    return True


# ------------------------------------------------------------------ clusters

@njit(cache=True)
def _label(h, v, mask):
    """Open-edge components of the sites in `mask`; label -1 outside."""
    nx, ny = h.shape
    lab = np.full((nx, ny), -1, np.int64)
    stack = np.empty((nx * ny, 2), np.int64)
    n = 0
    for i0 in range(nx):
        for j0 in range(ny):
            if not mask[i0, j0] or lab[i0, j0] >= 0:
                continue
            lab[i0, j0] = n
            top = 0
            stack[0, 0] = i0
            stack[0, 1] = j0
            top = 1
            while top > 0:
                top -= 1
                i = stack[top, 0]
                j = stack[top, 1]
                for e in range(4):
                    if e == 0:
                        ok = i + 1 < nx and h[i, j]
                        a, b = i + 1, j
                    elif e == 1:
                        ok = i >= 1 and h[i - 1, j]
                        a, b = i - 1, j
                    elif e == 2:
                        ok = j + 1 < ny and v[i, j]
                        a, b = i, j + 1
                    else:
                        ok = j >= 1 and v[i, j - 1]
                        a, b = i, j - 1
                    if ok and mask[a, b] and lab[a, b] < 0:
                        lab[a, b] = n
                        stack[top, 0] = a
                        stack[top, 1] = b
                        top += 1
            n += 1
    return lab, n


def _touching(lab: np.ndarray, n: int, region: np.ndarray) -> np.ndarray:
    """Boolean per label: some site of the component lies in `region`."""
    hit = np.zeros(n, bool)
    sel = lab[region]
    hit[sel[sel >= 0]] = True
    return hit


def _border(shape) -> np.ndarray:
    b = np.zeros(shape, bool)
    b[0, :] = b[-1, :] = b[:, 0] = b[:, -1] = True
    return b


def infinite_cluster_mask(q: ClusterQuery) -> np.ndarray:
    """Sites whose open cluster reaches the box boundary."""
    lab, n = _label(q.h, q.v, np.ones(q.shape, np.bool_))
    return _touching(lab, n, _border(q.shape))[lab]


@dataclass
class TrapReport:
    site: tuple
    is_good: bool
    in_cluster: bool
    horizon: int
    trap_sites: list
    length: int
    width: int
    inconclusive: bool = False


@dataclass
class TrapMap:
    """Trap components of a whole box."""

    query: ClusterQuery
    horizon: int
    cluster: np.ndarray   # infinite-cluster sites
    good: np.ndarray
    certified: np.ndarray
    labels: np.ndarray    # trap id per site, -1 if not in a trap
    length: np.ndarray    # per trap id
    width: np.ndarray
    conclusive: np.ndarray  # per trap id: strictly inside the certified region

    def site_lengths(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(L, W, usable) per site; L = W = 0 off traps."""
        L = np.zeros(self.labels.shape, np.int64)
        W = np.zeros(self.labels.shape, np.int64)
        m = self.labels >= 0
        L[m] = self.length[self.labels[m]]
        W[m] = self.width[self.labels[m]]
        usable = self.certified.copy()
        usable[m] &= self.conclusive[self.labels[m]]
        return L, W, usable


def trap_map(q: ClusterQuery, H: int = DEFAULT_HORIZON) -> TrapMap:
    good, cert = good_mask(q, H)
    cluster = infinite_cluster_mask(q)
    bad = cluster & ~good & cert
    lab, n = _label(q.h, q.v, bad)
    edge = _border(q.shape) | ~cert
    # a trap is decided only if no neighbour of it is undecided
    grown = edge.copy()
    grown[1:, :] |= edge[:-1, :]
    grown[:-1, :] |= edge[1:, :]
    grown[:, 1:] |= edge[:, :-1]
    grown[:, :-1] |= edge[:, 1:]
    conclusive = ~_touching(lab, n, grown)
    ii, jj = np.nonzero(lab >= 0)
    ids = lab[ii, jj]
    big = np.iinfo(np.int64).max
    mn_i = np.full(n, big)
    mx_i = np.full(n, -1)
    mn_j = np.full(n, big)
    mx_j = np.full(n, -1)
    np.minimum.at(mn_i, ids, ii)
    np.maximum.at(mx_i, ids, ii)
    np.minimum.at(mn_j, ids, jj)
    np.maximum.at(mx_j, ids, jj)
    return TrapMap(q, H, cluster, good, cert, lab, mx_i - mn_i, mx_j - mn_j, conclusive)


def trap_of(src, x, box=None, H: int = DEFAULT_HORIZON) -> TrapReport:
    """Trap containing x: bad infinite-cluster sites joined by open edges.

    `src` is a ClusterQuery or a two-point ConductanceField; for a field the
    box defaults to x + [-4H, 4H]^2.
    """
    x = (int(x[0]), int(x[1]))
    if isinstance(src, ConductanceField):
        r = 4 * H if box is None else int(box)
        q = ClusterQuery.from_field(src, (x[0] - r, x[1] - r), (x[0] + r, x[1] + r))
    else:
        q = src
    tm = trap_map(q, H)
    i, j = q.local(x)
    if not tm.certified[i, j]:
        raise ValueError("site lies outside the certified part of the box")
    t = tm.labels[i, j]
    if t < 0:
        return TrapReport(x, bool(tm.good[i, j]), bool(tm.cluster[i, j]), H, [], 0, 0)
    si, sj = np.nonzero(tm.labels == t)
    sites = sorted((int(a) + q.lo[0], int(b) + q.lo[1]) for a, b in zip(si, sj))
    return TrapReport(x, False, True, H, sites, int(tm.length[t]), int(tm.width[t]),
                      inconclusive=not bool(tm.conclusive[t]))


# ------------------------------------------------------------------ dead ends

@njit(cache=True)
def _explore(h, v, i0, j0, radius, halfplane, prefer, stamp, qid, collect, stack):
    """DFS over open edges from (i0, j0) within l-infinity distance `radius`.

    halfplane restricts to columns >= i0. `prefer` (+1 or -1) is the e1
    direction tried first so that escapes are found quickly. Returns
    (escaped, max column offset, number of sites, sites array).
    """
    nx, ny = h.shape
    cap = nx * ny if collect else 1
    sites = np.empty((cap, 2), np.int64)
    top = 1
    stack[0, 0] = i0
    stack[0, 1] = j0
    stamp[i0, j0] = qid
    count = 0
    far = 0
    while top > 0:
        top -= 1
        i = stack[top, 0]
        j = stack[top, 1]
        if collect:
            sites[count, 0] = i
            sites[count, 1] = j
        count += 1
        if i - i0 > far:
            far = i - i0
        if (abs(i - i0) >= radius or abs(j - j0) >= radius or i == 0 or j == 0
                or i == nx - 1 or j == ny - 1):
            return True, far, count, sites[:count]
        # push the preferred direction last so it is popped first
        for e in range(4):
            if prefer > 0:
                order = (3, 2, 1, 0)[e]
            else:
                order = (3, 2, 0, 1)[e]
            if order == 0:
                ok = h[i, j]
                a, b = i + 1, j
            elif order == 1:
                ok = h[i - 1, j] and (not halfplane or i - 1 >= i0)
                a, b = i - 1, j
            elif order == 2:
                ok = v[i, j]
                a, b = i, j + 1
            else:
                ok = v[i, j - 1]
                a, b = i, j - 1
            if ok and stamp[a, b] != qid:
                stamp[a, b] = qid
                stack[top, 0] = a
                stack[top, 1] = b
                top += 1
    return False, far, count, sites[:count]


@dataclass
class DeadEndReport:
    site: tuple
    is_dead_end_start: bool
    dead_end_sites: list
    depth: int
    horizon: int
    inconclusive: bool = False


def dead_end_at(q: ClusterQuery, x, H: int = DEFAULT_HORIZON, collect: bool = True) -> DeadEndReport:
    """Dead end beginning at x: finite right part of an infinite open cluster.

    "Infinite" means reaching l-infinity distance H from x; a component is
    inconclusive when it meets the box boundary before that radius.
    """
    x = (int(x[0]), int(x[1]))
    i, j = q.local(x)
    stamp, qid = q.next_stamp()
    esc, far, cnt, sites = _explore(q.h, q.v, i, j, H, True, 1, stamp, qid, collect, q.stack())
    near_wall = min(i, j, q.shape[0] - 1 - i, q.shape[1] - 1 - j) < H
    if esc:
        return DeadEndReport(x, False, [], 0, H, inconclusive=near_wall)
    stamp, qid = q.next_stamp()
    esc_full, _, _, _ = _explore(q.h, q.v, i, j, H, False, -1, stamp, qid, False, q.stack())
    if not esc_full:
        return DeadEndReport(x, False, [], 0, H)
    pts = [(int(a) + q.lo[0], int(b) + q.lo[1]) for a, b in sites] if collect else []
    return DeadEndReport(x, True, sorted(pts), int(far), H)


@njit(cache=True)
def dead_end_depths(h, v, cols, rows, H):
    """Depth of the dead end at each (col, row) box index, 0 if none."""
    nx, ny = h.shape
    stamp = np.zeros((nx, ny), np.int32)
    stack = np.empty((4 * nx * ny + 4, 2), np.int64)
    out = np.zeros(cols.shape[0], np.int64)
    qid = 0
    for k in range(cols.shape[0]):
        qid += 1
        esc, far, _, _ = _explore(h, v, cols[k], rows[k], H, True, 1, stamp, qid, False, stack)
        if esc:
            continue
        qid += 1
        esc2, _, _, _ = _explore(h, v, cols[k], rows[k], H, False, -1, stamp, qid, False, stack)
        if esc2:
            out[k] = far
    return out


# ------------------------------------------------------------------ kappa pockets

def kappa_component(q: ClusterQuery, x) -> list:
    """J(x): lattice-connected sites all of whose edges are closed."""
    nx, ny = q.shape
    deg = np.zeros(q.shape, np.int64)
    deg[:-1, :] += q.h[:-1, :]
    deg[1:, :] += q.h[:-1, :]
    deg[:, :-1] += q.v[:, :-1]
    deg[:, 1:] += q.v[:, :-1]
    closed = deg == 0
    i, j = q.local(x)
    if not closed[i, j]:
        return []
    full = ClusterQuery.all_open(q.lo, q.hi)
    lab, _ = _label(full.h, full.v, closed)
    si, sj = np.nonzero(lab == lab[i, j])
    if np.any(si == 0) or np.any(sj == 0) or np.any(si == nx - 1) or np.any(sj == ny - 1):
        raise ValueError("kappa component touches the box boundary; enlarge the box")
    return sorted((int(a) + q.lo[0], int(b) + q.lo[1]) for a, b in zip(si, sj))


def diameter(sites) -> int:
    """Largest l1 distance between two sites of a finite set."""
    if len(sites) < 2:
        return 0
    s = np.asarray(sites)
    return int(np.abs(s[:, None, :] - s[None, :, :]).sum(axis=2).max())


# ------------------------------------------------------------------ statistics

def wilson_interval(k: int, n: int, z: float = 1.96) -> tuple[float, float]:
    if n == 0:
        return 0.0, 1.0
    ph = k / n
    den = 1 + z * z / n
    mid = (ph + z * z / (2 * n)) / den
    half = z * math.sqrt(ph * (1 - ph) / n + z * z / (4 * n * n)) / den
    return max(0.0, mid - half), min(1.0, mid + half)


@dataclass
class TailFit:
    slope: float
    intercept: float
    r2: float
    alpha: float
    alpha_se: float
    points: int


@dataclass
class TailTable:
    p: float
    ns: np.ndarray
    sites: int
    boxes: int
    L_counts: np.ndarray
    W_counts: np.ndarray
    D_counts: np.ndarray | None
    L_fit: TailFit
    W_fit: TailFit

    def tail(self, which="L") -> np.ndarray:
        c = {"L": self.L_counts, "W": self.W_counts, "D": self.D_counts}[which]
        return c.sum(axis=0) / self.sites

    def wilson(self, which="L") -> list[tuple[float, float]]:
        c = {"L": self.L_counts, "W": self.W_counts, "D": self.D_counts}[which].sum(axis=0)
        return [wilson_interval(int(k), self.sites) for k in c]

    @property
    def alpha_hat(self) -> float:
        return self.L_fit.alpha


def log_linear_fit(ns: np.ndarray, tail: np.ndarray) -> tuple[float, float, float, int]:
    """Least-squares fit of log tail on n over positive entries."""
    m = tail > 0
    if m.sum() < 2:
        return float("nan"), float("nan"), float("nan"), int(m.sum())
    x, y = ns[m].astype(float), np.log(tail[m])
    slope, icpt = np.polyfit(x, y, 1)
    res = y - (slope * x + icpt)
    tot = np.sum((y - y.mean()) ** 2)
    r2 = 1.0 - np.sum(res**2) / tot if tot > 0 else 1.0
    return float(slope), float(icpt), float(r2), int(m.sum())


def _fit_with_jackknife(ns, counts, sizes, min_count) -> TailFit:
    tot = counts.sum(axis=0)
    use = tot >= min_count
    ns_u = ns[use]
    def fit(c, n):
        return log_linear_fit(ns_u, c[use] / n)
    slope, icpt, r2, k = fit(tot, sizes.sum())
    B = counts.shape[0]
    if B > 2 and k >= 2:
        jk = np.array([fit(tot - counts[b], sizes.sum() - sizes[b])[0] for b in range(B)])
        jk = jk[np.isfinite(jk)]
        se_slope = math.sqrt((len(jk) - 1) / len(jk) * np.sum((jk - jk.mean()) ** 2)) if len(jk) > 2 else float("inf")
    else:
        se_slope = float("inf")
    alpha = math.exp(slope) if np.isfinite(slope) else float("nan")
    return TailFit(slope, icpt, r2, alpha, alpha * se_slope, k)


def trap_tail_statistics(p: float, n_max: int = 12, samples: int = 100_000, seed: int = 0,
                         kappa: float = 0.5, H: int = DEFAULT_HORIZON, side: int = 128,
                         min_count: int = 20, depths: bool = False) -> TailTable:
    """Empirical P(L(0) >= n), P(W(0) >= n) for n = 1..n_max.

    Sites are taken from the certified interiors of independent boxes
    (`side` x `side` sampled sites each, margins added for the staircase
    cone and cluster certification). Tails count every sampled site, with
    L = W = 0 off traps. The decay rate alpha = exp(slope) of a log-linear
    fit, with a delete-one-box jackknife standard error. The value of kappa
    does not matter: only which edges are open.
    """
    from .env import EnvironmentLaw

    if not 0.5 < p <= 1:
        raise ValueError("need p in (1/2, 1]")
    ns = np.arange(1, n_max + 1)
    law = EnvironmentLaw.two_point(p, kappa if kappa < 1 else 0.5)
    m = H + 8
    boxes = max(1, math.ceil(samples / side**2))
    Lc = np.zeros((boxes, n_max), np.int64)
    Wc = np.zeros((boxes, n_max), np.int64)
    Dc = np.zeros((boxes, n_max), np.int64) if depths else None
    sizes = np.zeros(boxes, np.int64)
    for bx in range(boxes):
        fld = ConductanceField(law, 2, int(_core.derive_seed(np.uint64(seed), _core.FIELD_TAG, bx)))
        q = ClusterQuery.from_field(fld, (-m, -m - H), (side + 2 * m, side + m + H))
        tm = trap_map(q, H)
        L, W, ok = tm.site_lengths()
        sl = (slice(m, m + side), slice(m + H, m + H + side))
        Ls, Ws, oks = L[sl], W[sl], ok[sl]
        sizes[bx] = Ls.size
        # undecided sites count as long traps; they are rare and this is conservative
        Ls = np.where(oks, Ls, n_max)
        Ws = np.where(oks, Ws, n_max)
        Lc[bx] = (Ls.ravel()[:, None] >= ns[None, :]).sum(axis=0)
        Wc[bx] = (Ws.ravel()[:, None] >= ns[None, :]).sum(axis=0)
        if depths:
            ci, cj = np.nonzero(np.ones(Ls.shape, bool))
            dd = dead_end_depths(q.h, q.v, ci + m, cj + m + H, H)
            Dc[bx] = (dd[:, None] >= ns[None, :]).sum(axis=0)
    return TailTable(p, ns, int(sizes.sum()), boxes, Lc, Wc, Dc,
                     _fit_with_jackknife(ns, Lc, sizes, min_count),
                     _fit_with_jackknife(ns, Wc, sizes, min_count))


def trap_census(fld: ConductanceField, lo, hi, H: int = DEFAULT_HORIZON) -> dict:
    """JSON-ready classification of every certified site in the box lo..hi."""
    m = H + 8
    q = ClusterQuery.from_field(fld, (lo[0] - m, lo[1] - m - H), (hi[0] + m + H, hi[1] + m + H))
    tm = trap_map(q, H)
    L, W, ok = tm.site_lengths()
    rows = []
    for x0 in range(lo[0], hi[0] + 1):
        for x1 in range(lo[1], hi[1] + 1):
            i, j = q.local((x0, x1))
            if not tm.cluster[i, j]:
                cls = "outside"
            elif tm.good[i, j]:
                cls = "good"
            else:
                cls = "bad"
            de = dead_end_at(q, (x0, x1), H, collect=False)
            rows.append({"site": [x0, x1], "class": cls, "L": int(L[i, j]), "W": int(W[i, j]),
                         "depth": de.depth, "conclusive": bool(ok[i, j])})
    return {"horizon": H, "box": [list(lo), list(hi)], "sites": rows}


# ------------------------------------------------------------------ lazy dead ends

@njit(cache=True)
def _open_at(law, a, b, zk, seed, base, axis):
    return _core.law_value(law, a, b, zk, _core.edge_uniform(seed, base, axis)) == 1.0


@njit(cache=True)
def _explore_lazy(law, a, b, zk, seed, x0, x1, H, halfplane, prefer, stamp, qid, stack):
    """As `_explore`, querying the hashed field on demand around (x0, x1)."""
    w = 2 * H + 1
    base = np.empty(2, np.int64)
    top = 1
    stack[0, 0] = 0
    stack[0, 1] = 0
    stamp[H, H] = qid
    far = 0
    count = 0
    while top > 0:
        top -= 1
        i = stack[top, 0]
        j = stack[top, 1]
        count += 1
        if i > far:
            far = i
        if abs(i) >= H or abs(j) >= H:
            return True, far, count
        for e in range(4):
            if prefer > 0:
                order = (3, 2, 1, 0)[e]
            else:
                order = (3, 2, 0, 1)[e]
            if order == 0:
                base[0] = x0 + i
                base[1] = x1 + j
                ax = 0
                a2, b2 = i + 1, j
            elif order == 1:
                if halfplane and i - 1 < 0:
                    continue
                base[0] = x0 + i - 1
                base[1] = x1 + j
                ax = 0
                a2, b2 = i - 1, j
            elif order == 2:
                base[0] = x0 + i
                base[1] = x1 + j
                ax = 1
                a2, b2 = i, j + 1
            else:
                base[0] = x0 + i
                base[1] = x1 + j - 1
                ax = 1
                a2, b2 = i, j - 1
            if stamp[a2 + H, b2 + H] == qid:
                continue
            if _open_at(law, a, b, zk, seed, base, ax):
                stamp[a2 + H, b2 + H] = qid
                stack[top, 0] = a2
                stack[top, 1] = b2
                top += 1
    return False, far, count


@njit(cache=True)
def lazy_dead_end_depths(law, a, b, zk, seed, xs, H):
    """Dead-end depth at each site of xs (n, 2), 0 if none."""
    w = 2 * H + 1
    stamp = np.zeros((w, w), np.int32)
    stack = np.empty((4 * w * w + 4, 2), np.int64)
    out = np.zeros(xs.shape[0], np.int64)
    qid = 0
    for k in range(xs.shape[0]):
        qid += 1
        esc, far, _ = _explore_lazy(law, a, b, zk, seed, xs[k, 0], xs[k, 1], H, True, 1,
                                    stamp, qid, stack)
        if esc:
            continue
        qid += 1
        esc2, _, _ = _explore_lazy(law, a, b, zk, seed, xs[k, 0], xs[k, 1], H, False, -1,
                                   stamp, qid, stack)
        if esc2:
            out[k] = far
    return out


def dead_end_depth(fld: ConductanceField, xs, H: int = DEFAULT_HORIZON) -> np.ndarray:
    """Depths d(A) of dead ends beginning at the sites xs of a hashed field."""
    if fld.dim != 2 or fld.law.kind != "two_point":
        raise LawError("dead ends are defined for two-point fields in d=2")
    xs = np.ascontiguousarray(np.atleast_2d(xs), dtype=np.int64)
    code, a, b, zk, seed = fld.args
    return lazy_dead_end_depths(code, a, b, zk, seed, xs, int(H))


def find_dead_ends(fld: ConductanceField, lo, hi, H: int = DEFAULT_HORIZON) -> tuple[np.ndarray, np.ndarray]:
    """All dead-end starts x in the box lo..hi with their depths.

    A good point has a staircase reaching distance H inside the right
    half-plane, so only sites that are not good need a search.
    """
    q = ClusterQuery.from_field(fld, (lo[0] - H - 2, lo[1] - H - 2), (hi[0] + H + 2, hi[1] + H + 2))
    off = H + 2
    g = _good_dp(q.h, q.v, H)
    nx, ny = hi[0] - lo[0] + 1, hi[1] - lo[1] + 1
    cand = ~g[off : off + nx, off : off + ny]
    ci, cj = np.nonzero(cand)
    dd = dead_end_depths(q.h, q.v, ci + off, cj + off, H)
    m = dd > 0
    xs = np.stack([ci[m] + lo[0], cj[m] + lo[1]], axis=1)
    return xs, dd[m]
