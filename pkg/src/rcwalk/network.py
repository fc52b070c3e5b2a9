"""Electrical networks on finite boxes: Dirichlet solves and walk bounds.

Tilted weights are w(x, y) = omega(x, y) exp(lam (x + y).e1), rescaled by a
common factor so the smallest column sits near 1; uniform scaling changes
neither transition nor exit probabilities.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from numba import njit

from .env import ConductanceField
from .kernel import BiasedKernel, log_reversible_measure, moves, step_distribution


class SolverError(RuntimeError):
    def __init__(self, msg, residual=None):
        super().__init__(msg)
        self.residual = residual


class CutError(ValueError):
    pass


@dataclass
class TiltedNetwork:
    """Undirected weighted graph; `coords` is set for lattice boxes."""

    n: int
    edges: np.ndarray    # (m, 2) vertex indices, i < j not required
    weights: np.ndarray  # (m,) positive
    coords: np.ndarray | None = None
    log_scale: float = 0.0  # true weights are weights * exp(log_scale)

    def __post_init__(self):
        self.edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        self.weights = np.asarray(self.weights, dtype=float)
        if self.weights.shape[0] != self.edges.shape[0]:
            raise ValueError("one weight per edge")
        if np.any(self.weights <= 0) or not np.all(np.isfinite(self.weights)):
            raise ValueError("weights must be positive and finite")
        if self.edges.size and (self.edges.min() < 0 or self.edges.max() >= self.n):
            raise ValueError("edge endpoint out of range")
        if np.any(self.edges[:, 0] == self.edges[:, 1]):
            raise ValueError("self-loops are not allowed")

    @classmethod
    def from_box(cls, fld: ConductanceField, lam: float, lo, hi, drop_zero: bool = True) -> "TiltedNetwork":
        """Nearest-neighbour edges inside lo..hi with tilted weights."""
        lo = np.asarray(lo, dtype=np.int64)
        hi = np.asarray(hi, dtype=np.int64)
        shape = tuple(hi - lo + 1)
        if len(shape) != fld.dim or min(shape) < 1:
            raise ValueError("bad box")
        grid = np.indices(shape).reshape(fld.dim, -1).T + lo
        index = np.arange(grid.shape[0]).reshape(shape)
        eds, axes = [], []
        for ax in range(fld.dim):
            sl_a = [slice(None)] * fld.dim
            sl_b = [slice(None)] * fld.dim
            sl_a[ax] = slice(0, -1)
            sl_b[ax] = slice(1, None)
            a = index[tuple(sl_a)].ravel()
            b = index[tuple(sl_b)].ravel()
            eds.append(np.stack([a, b], axis=1))
            axes.append(np.full(a.size, ax))
        edges = np.vstack(eds) if eds else np.zeros((0, 2), np.int64)
        axis = np.concatenate(axes)
        omega = fld.edges(grid[edges[:, 0]], axis)
        ref = int(lo[0])
        s = grid[edges[:, 0], 0] + grid[edges[:, 1], 0] - 2 * ref
        w = omega * np.exp(lam * s)
        keep = w > 0 if drop_zero else np.ones(w.size, bool)
        return cls(grid.shape[0], edges[keep], w[keep], grid, 2.0 * lam * ref)

    def index_of(self, x) -> int:
        if self.coords is None:
            raise ValueError("network has no coordinates")
        hit = np.flatnonzero(np.all(self.coords == np.asarray(x), axis=1))
        if hit.size == 0:
            raise ValueError(f"{tuple(x)} not in the network")
        return int(hit[0])

    def laplacian(self) -> sp.csr_matrix:
        i, j = self.edges[:, 0], self.edges[:, 1]
        W = sp.coo_matrix((np.r_[self.weights, self.weights], (np.r_[i, j], np.r_[j, i])),
                          shape=(self.n, self.n)).tocsr()
        return (sp.diags(np.asarray(W.sum(axis=1)).ravel()) - W).tocsr()

    def pi(self) -> np.ndarray:
        """Sum of incident weights (scaled)."""
        out = np.zeros(self.n)
        np.add.at(out, self.edges[:, 0], self.weights)
        np.add.at(out, self.edges[:, 1], self.weights)
        return out

    def adjacency(self) -> list[list[tuple[int, int]]]:
        adj: list[list[tuple[int, int]]] = [[] for _ in range(self.n)]
        for k, (a, b) in enumerate(self.edges):
            adj[a].append((int(b), k))
            adj[b].append((int(a), k))
        return adj

    def with_weights(self, w) -> "TiltedNetwork":
        return TiltedNetwork(self.n, self.edges.copy(), w, self.coords, self.log_scale)


@dataclass
class DirichletSolution:
    potentials: np.ndarray
    flow: np.ndarray  # per edge, from edges[:, 0] to edges[:, 1]
    effective_conductance: float
    residual: float
    iterations: int

    def energy(self, net: TiltedNetwork) -> float:
        return float(np.sum(self.flow**2 / net.weights))


def _as_set(v) -> np.ndarray:
    return np.unique(np.atleast_1d(np.asarray(v, dtype=np.int64)))


def _reach(net: TiltedNetwork, start: np.ndarray, blocked: np.ndarray | None = None) -> np.ndarray:
    seen = np.zeros(net.n, bool)
    adj = net.adjacency()
    dq = deque(int(s) for s in start)
    seen[start] = True
    while dq:
        a = dq.popleft()
        for b, k in adj[a]:
            if blocked is not None and blocked[k]:
                continue
            if not seen[b]:
                seen[b] = True
                dq.append(b)
    return seen


def _setup(net, source, sinks):
    src = _as_set(source)
    snk = _as_set(sinks)
    if np.intersect1d(src, snk).size:
        raise ValueError("source and sink sets overlap")
    fixed = np.zeros(net.n, bool)
    fixed[src] = fixed[snk] = True
    phi = np.zeros(net.n)
    phi[src] = 1.0
    return src, snk, fixed, phi


def _finish(net, src, phi, res, its):
    i, j = net.edges[:, 0], net.edges[:, 1]
    flow = net.weights * (phi[i] - phi[j])
    out = np.zeros(net.n)
    np.add.at(out, i, flow)
    np.add.at(out, j, -flow)
    return DirichletSolution(phi, flow, float(out[src].sum()), res, its)


def solve_dirichlet(net: TiltedNetwork, source, sinks, tol: float = 1e-10,
                    maxiter: int | None = None) -> DirichletSolution:
    """Unit potential on `source`, zero on `sinks`, insulated elsewhere.

    Solves the reduced Laplacian by Jacobi-preconditioned conjugate
    gradients. Vertices not connected to the source keep potential 0, and
    a source cut off from every sink gives conductance exactly 0.
    """
    src, snk, fixed, phi = _setup(net, source, sinks)
    seen = _reach(net, src)
    if not seen[snk].any():
        return DirichletSolution(np.where(np.isin(np.arange(net.n), src), 1.0, 0.0),
                                 np.zeros(len(net.weights)), 0.0, 0.0, 0)
    free = np.flatnonzero(seen & ~fixed)
    if free.size == 0:
        return _finish(net, src, phi, 0.0, 0)
    L = net.laplacian()
    A = L[free][:, free].tocsr()
    b = -(L[free][:, np.flatnonzero(fixed)] @ phi[fixed])
    diag = A.diagonal()
    M = sp.diags(1.0 / diag)
    iters = [0]

    def count(_):
        iters[0] += 1

    maxiter = maxiter or 10 * net.n
    x, info = spla.cg(A, b, rtol=tol, atol=0.0, maxiter=maxiter, M=M, callback=count)
    res = float(np.linalg.norm(A @ x - b) / max(np.linalg.norm(b), 1e-300))
    if info != 0 or res > 10 * tol:
        raise SolverError(f"conjugate gradients did not converge (residual {res:.3g})", res)
    phi[free] = x
    return _finish(net, src, phi, res, iters[0])


def solve_dirichlet_dense(net: TiltedNetwork, source, sinks) -> DirichletSolution:
    """Same problem by dense Gaussian elimination; an oracle for small networks."""
    if net.n > 2000:
        raise ValueError("dense oracle limited to 2000 vertices")
    src, snk, fixed, phi = _setup(net, source, sinks)
    seen = _reach(net, src)
    if not seen[snk].any():
        return DirichletSolution(np.where(np.isin(np.arange(net.n), src), 1.0, 0.0),
                                 np.zeros(len(net.weights)), 0.0, 0.0, 0)
    free = np.flatnonzero(seen & ~fixed)
    L = net.laplacian().toarray()
    if free.size:
        A = L[np.ix_(free, free)]
        b = -L[np.ix_(free, np.flatnonzero(fixed))] @ phi[fixed]
        phi[free] = np.linalg.solve(A, b)
    return _finish(net, src, phi, 0.0, 0)


def harmonic_residual(net: TiltedNetwork, sol: DirichletSolution, source, sinks) -> float:
    """Largest |net current| at a vertex that is neither source nor sink, relative to C_eff."""
    fixed = np.zeros(net.n, bool)
    fixed[_as_set(source)] = fixed[_as_set(sinks)] = True
    out = np.zeros(net.n)
    np.add.at(out, net.edges[:, 0], sol.flow)
    np.add.at(out, net.edges[:, 1], -sol.flow)
    inner = out[~fixed]
    scale = max(abs(sol.effective_conductance), 1e-300)
    return float(np.abs(inner).max() / scale) if inner.size else 0.0


def series_conductance(ws) -> float:
    return 1.0 / sum(1.0 / w for w in ws)


def parallel_conductance(ws) -> float:
    return float(sum(ws))


# ------------------------------------------------------------------ Nash-Williams

def nash_williams_bound(net: TiltedNetwork, source, sinks, cuts) -> float:
    """Upper bound on C_eff from disjoint edge cutsets separating source and sinks."""
    src, snk = _as_set(source), _as_set(sinks)
    used = np.zeros(len(net.weights), bool)
    total = 0.0
    for cut in cuts:
        c = np.unique(np.asarray(cut, dtype=np.int64))
        if c.size == 0:
            raise CutError("empty cut")
        if used[c].any():
            raise CutError("cuts must be disjoint")
        used[c] = True
        blocked = np.zeros(len(net.weights), bool)
        blocked[c] = True
        if _reach(net, src, blocked)[snk].any():
            raise CutError("cut does not separate source from sinks")
        total += 1.0 / net.weights[c].sum()
    if total == 0:
        raise CutError("no cuts given")
    return 1.0 / total


def lateral_layer_sum(lam: float, x1: int, ell: int) -> float:
    """exp(-lam ell) * sum_{i = x1-ell}^{x1+ell/3} exp(2 lam (i+1)), the lateral-face bound."""
    i = np.arange(x1 - ell, x1 + ell // 3 + 1)
    return float(np.exp(-lam * ell) * np.sum(np.exp(2 * lam * (i + 1))))


# ------------------------------------------------------------------ exit probabilities

@njit(cache=True)
def _gth_exit(wt, aL, aR, xi, b):
    """Absorption in the left set by state reduction without subtractions.

    wt (n, 2b+1): band of unnormalised transition weights among transient
    states, wt[i, j - i + b]; aL, aR: weights to the two absorbing sets;
    states are eliminated in index order except xi.
    """
    n = wt.shape[0]
    rx = np.zeros(n)   # row of xi
    cx = np.zeros(n)   # column of xi
    for j in range(max(0, xi - b), min(n, xi + b + 1)):
        if j != xi:
            rx[j] = wt[xi, j - xi + b]
            cx[j] = wt[j, xi - j + b]
            wt[j, xi - j + b] = 0.0
            wt[xi, j - xi + b] = 0.0
    aLx = aL[xi]
    aRx = aR[xi]
    for k in range(n):
        if k == xi:
            continue
        s = aL[k] + aR[k] + cx[k]
        hi = min(n, k + b + 1)
        for j in range(k + 1, hi):
            if j != xi:
                s += wt[k, j - k + b]
        if s <= 0.0:
            continue
        for i in range(k + 1, hi):
            if i == xi:
                continue
            pik = wt[i, k - i + b]
            if pik == 0.0:
                continue
            f = pik / s
            for j in range(k + 1, hi):
                if j != xi:
                    wt[i, j - i + b] += f * wt[k, j - k + b]
            cx[i] += f * cx[k]
            aL[i] += f * aL[k]
            aR[i] += f * aR[k]
        f = rx[k] / s
        if f != 0.0:
            for j in range(k + 1, hi):
                if j != xi:
                    rx[j] += f * wt[k, j - k + b]
            aLx += f * aL[k]
            aRx += f * aR[k]
    return aLx / (aLx + aRx)


def exit_probability_exact(fld: ConductanceField, lam: float, x, ell: int, height: int | None = None,
                           right: int | None = None) -> float:
    """P_x(reach column x.e1 - ell before column x.e1 + right), d = 2.

    The walk moves in the strip of rows x.e2 +- height with insulated top
    and bottom (edges leaving the strip removed). `right` defaults to
    ceil(ell / 3). Computed by state reduction, which keeps full relative
    accuracy for probabilities far below machine epsilon.
    """
    if fld.dim != 2:
        raise ValueError("exit probabilities are implemented for d=2")
    x = np.asarray(x, dtype=np.int64)
    r = math.ceil(ell / 3) if right is None else int(right)
    h = ell if height is None else int(height)
    if ell < 1 or r < 1 or h < 0:
        raise ValueError("need ell >= 1, right >= 1, height >= 0")
    ncol = ell + r - 1  # transient columns x1-ell+1 .. x1+r-1
    ny = 2 * h + 1
    n = ncol * ny
    b = ny
    wt = np.zeros((n, 2 * b + 1))
    aL = np.zeros(n)
    aR = np.zeros(n)
    cols = np.arange(x[0] - ell + 1, x[0] + r)
    rows = np.arange(x[1] - h, x[1] + h + 1)
    C, R = np.meshgrid(cols, rows, indexing="ij")
    sites = np.stack([C.ravel(), R.ravel()], axis=1)
    fs, fb = math.exp(-lam), math.exp(-2 * lam)
    om_f = fld.edges(sites, 0)
    om_b = fld.edges(sites - [1, 0], 0)
    om_u = fld.edges(sites, 1)
    om_d = fld.edges(sites - [0, 1], 1)
    idx = np.arange(n)
    ci, ri = idx // ny, idx % ny
    # forward
    inner = ci < ncol - 1
    wt[idx[inner], b + ny] = om_f[inner]
    aR[~inner] = om_f[~inner]
    # backward
    inner = ci > 0
    wt[idx[inner], b - ny] = om_b[inner] * fb
    aL[~inner] = om_b[~inner] * fb
    # up / down inside the strip only
    m = ri < ny - 1
    wt[idx[m], b + 1] = om_u[m] * fs
    m = ri > 0
    wt[idx[m], b - 1] = om_d[m] * fs
    xi = (ell - 1) * ny + h
    return float(_gth_exit(wt, aL, aR, xi, b))


def exit_probability_network(fld: ConductanceField, lam: float, x, ell: int, height: int | None = None,
                             right: int | None = None, tol: float = 1e-12) -> float:
    """Same quantity as `exit_probability_exact` from a Dirichlet solve (moderate ell only)."""
    x = np.asarray(x, dtype=np.int64)
    r = math.ceil(ell / 3) if right is None else int(right)
    h = ell if height is None else int(height)
    lo = (x[0] - ell, x[1] - h)
    hi = (x[0] + r, x[1] + h)
    net = TiltedNetwork.from_box(fld, lam, lo, hi)
    # vertical edges inside the absorbing columns play no role
    left = np.flatnonzero(net.coords[:, 0] == lo[0])
    right_set = np.flatnonzero(net.coords[:, 0] == hi[0])
    both = np.isin(net.edges, np.r_[left, right_set]).all(axis=1)
    net = TiltedNetwork(net.n, net.edges[~both], net.weights[~both], net.coords, net.log_scale)
    sol = solve_dirichlet(net, left, right_set, tol=tol)
    return float(sol.potentials[net.index_of(x)])


def gamblers_ruin_left(lam: float, left: int, right: int) -> float:
    """1-D walk with P(+1) = 1/(1 + e^{-2 lam}): P(hit -left before +right) from 0."""
    if lam == 0:
        return right / (left + right)
    r = math.exp(-2 * lam)
    # r < 1, so no power overflows
    num = r**left - r ** (left + right)
    den = 1.0 - r ** (left + right)
    return num / den


# ------------------------------------------------------------------ heat kernel

@dataclass
class CVViolation:
    n: int
    y: tuple
    probability: float
    bound: float


@dataclass
class CVReport:
    violations: list
    max_ratio: float
    checked: int


def carne_varopoulos_check(fld: ConductanceField, lam: float, x, n_max: int) -> CVReport:
    """Exact n-step probabilities vs 2 sqrt(pi(y)/pi(x)) exp(-|x-y|_1^2 / (2n)).

    Forward dynamic programming over the ball of radius n_max; distances
    are l1 lattice distances, which equal graph distances when every
    conductance is positive.
    """
    if n_max > 30:
        raise ValueError("n_max must be at most 30")
    x = np.asarray(x, dtype=np.int64)
    d = fld.dim
    kern = BiasedKernel(fld, lam)
    mv = moves(d)
    r = n_max
    shape = (2 * r + 1,) * d
    grid = np.indices(shape).reshape(d, -1).T - r
    sites = grid + x
    inside = np.abs(grid).sum(axis=1) <= r
    probs = np.zeros((grid.shape[0], 2 * d))
    logpi = np.full(grid.shape[0], -np.inf)
    for k in np.flatnonzero(inside):
        probs[k] = step_distribution(kern, sites[k]).probs
        logpi[k] = log_reversible_measure(kern, sites[k])
    lpx = log_reversible_measure(kern, x)
    strides = np.array([int(np.prod(shape[i + 1 :])) for i in range(d)])
    shift = mv @ strides
    center = int(r * strides.sum())
    P = np.zeros(grid.shape[0])
    P[center] = 1.0
    dist = np.abs(grid).sum(axis=1)
    viol, worst, checked = [], 0.0, 0
    for n in range(1, n_max + 1):
        Q = np.zeros_like(P)
        for k in range(2 * d):
            src = np.flatnonzero(P > 0)
            np.add.at(Q, src + shift[k], P[src] * probs[src, k])
        P = Q
        live = np.flatnonzero(P > 0)
        bound = 2.0 * np.exp(0.5 * (logpi[live] - lpx) - dist[live] ** 2 / (2.0 * n))
        ratio = P[live] / bound
        checked += live.size
        worst = max(worst, float(ratio.max()))
        for k in live[ratio > 1.0 + 1e-12]:
            viol.append(CVViolation(n, tuple(int(c) for c in sites[k]), float(P[k]),
                                    float(2.0 * np.exp(0.5 * (logpi[k] - lpx) - dist[k] ** 2 / (2.0 * n)))))
    return CVReport(viol, worst, checked)


# ------------------------------------------------------------------ kappa pockets

@dataclass
class KappaEscape:
    sites: list
    diameter: int
    mean_exit_time: float
    exit_pmf: np.ndarray  # P(T_x = m), m = 0..len-1


def kappa_component_escape(fld: ConductanceField, lam: float, x, radius: int = 32,
                           m_max: int = 200) -> KappaEscape:
    """J(x) and the law of T_x = inf{n >= 0 : X_n not in J(x)}.

    The mean comes from the absorbing-chain solve (I - Q) t = 1 and the
    distribution from repeated multiplication by Q.
    """
    from .traps import ClusterQuery, diameter, kappa_component

    x = np.asarray(x, dtype=np.int64)
    q = ClusterQuery.from_field(fld, x - radius, x + radius)
    J = kappa_component(q, x)
    pmf = np.zeros(m_max + 1)
    if not J:
        pmf[0] = 1.0
        return KappaEscape([], 0, 0.0, pmf)
    kern = BiasedKernel(fld, lam)
    index = {s: i for i, s in enumerate(J)}
    m = len(J)
    Q = np.zeros((m, m))
    mv = moves(fld.dim)
    for s, i in index.items():
        p = step_distribution(kern, s).probs
        for k in range(2 * fld.dim):
            t = tuple(int(c) for c in np.asarray(s) + mv[k])
            if t in index:
                Q[i, index[t]] += p[k]
    t = np.linalg.solve(np.eye(m) - Q, np.ones(m))
    i0 = index[tuple(int(c) for c in x)]
    v = np.zeros(m)
    v[i0] = 1.0
    leave = 1.0 - Q.sum(axis=1)
    for n in range(1, m_max + 1):
        pmf[n] = v @ leave
        v = v @ Q
    return KappaEscape(J, diameter(J), float(t[i0]), pmf)


# ------------------------------------------------------------------ checks and dumps

def rayleigh_check(net: TiltedNetwork, source, sinks, trials: int = 20, seed: int = 0) -> int:
    """Count perturbations where raising one weight lowered C_eff (expected 0)."""
    rng = np.random.default_rng(seed)
    base = solve_dirichlet(net, source, sinks).effective_conductance
    bad = 0
    for _ in range(trials):
        w = net.weights.copy()
        k = rng.integers(w.size)
        w[k] *= 1.0 + rng.random() * 3.0
        c = solve_dirichlet(net.with_weights(w), source, sinks).effective_conductance
        if c < base * (1 - 1e-8):
            bad += 1
    return bad


def write_edges_csv(net: TiltedNetwork, fh) -> None:
    d = 0 if net.coords is None else net.coords.shape[1]
    head = ["x", "y"] if d == 0 else [f"x{i}" for i in range(d)] + [f"y{i}" for i in range(d)]
    fh.write(",".join(head + ["weight"]) + "\n")
    for (a, b), w in zip(net.edges, net.weights):
        if d:
            parts = [str(int(c)) for c in net.coords[a]] + [str(int(c)) for c in net.coords[b]]
        else:
            parts = [str(int(a)), str(int(b))]
        fh.write(",".join(parts) + f",{w!r}\n")


def write_potentials_csv(net: TiltedNetwork, sol: DirichletSolution, fh) -> None:
    d = 0 if net.coords is None else net.coords.shape[1]
    head = ["vertex"] if d == 0 else [f"x{i}" for i in range(d)]
    fh.write(",".join(head + ["potential"]) + "\n")
    for v in range(net.n):
        parts = [str(v)] if d == 0 else [str(int(c)) for c in net.coords[v]]
        fh.write(",".join(parts) + f",{float(sol.potentials[v])!r}\n")
