"""Lazily evaluated iid conductance fields on Z^d.

A field never stores edge values. Each conductance is the law's inverse CDF
applied to a counter-based hash of (seed, edge), so any finite piece of an
infinite environment can be queried in O(1) memory and in any order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np
from numba import njit

from . import _core

LAW_NAMES = ("homogeneous", "uniform_elliptic", "two_point")
MARGINALS = ("two_point_sym", "uniform_interval")


class LawError(ValueError):
    pass


class DegenerateVertexError(RuntimeError):
    """Every edge at a site has conductance zero, so the walk is undefined."""

    def __init__(self, site, path=None):
        super().__init__(f"degenerate vertex at {tuple(int(c) for c in site)}")
        self.site = tuple(int(c) for c in site)
        self.path = path


@dataclass(frozen=True)
class EnvironmentLaw:
    """Marginal law of one conductance.

    kind="homogeneous" uses `c`; "uniform_elliptic" uses `delta` and
    `marginal`; "two_point" puts mass `p` on 1 and 1-p on `kappa`.
    """

    kind: str
    c: float = 1.0
    delta: float = 0.0
    marginal: str = "two_point_sym"
    p: float = 1.0
    kappa: float = 1.0

    def __post_init__(self):
        if self.kind not in LAW_NAMES:
            raise LawError(f"unknown law {self.kind!r}")
        if self.kind == "homogeneous" and not self.c > 0:
            raise LawError("homogeneous conductance must be positive")
        if self.kind == "uniform_elliptic":
            if not 0.0 <= self.delta < 1.0:
                raise LawError("delta must lie in [0, 1)")
            if self.marginal not in MARGINALS:
                raise LawError(f"unknown marginal {self.marginal!r}")
        if self.kind == "two_point":
            if not 0.0 < self.p <= 1.0:
                raise LawError("p must lie in (0, 1]")
            if not 0.0 < self.kappa <= 1.0:
                raise LawError("kappa must lie in (0, 1]")

    @classmethod
    def homogeneous(cls, c=1.0):
        return cls("homogeneous", c=c)

    @classmethod
    def uniform_elliptic(cls, delta, marginal="two_point_sym"):
        return cls("uniform_elliptic", delta=delta, marginal=marginal)

    @classmethod
    def two_point(cls, p, kappa):
        return cls("two_point", p=p, kappa=kappa)

    @property
    def code(self) -> int:
        if self.kind == "homogeneous":
            return _core.HOMOGENEOUS
        if self.kind == "uniform_elliptic":
            return _core.UE_TWO_POINT if self.marginal == "two_point_sym" else _core.UE_INTERVAL
        return _core.TWO_POINT

    @property
    def params(self) -> tuple[float, float]:
        if self.kind == "homogeneous":
            return float(self.c), 0.0
        if self.kind == "uniform_elliptic":
            return float(self.delta), 0.0
        return float(self.p), float(self.kappa)

    @property
    def ellipticity(self) -> float:
        """Smallest delta with every value in [1-delta, 1+delta] (up to scaling)."""
        if self.kind == "homogeneous":
            return 0.0
        if self.kind == "uniform_elliptic":
            return self.delta
        if self.p == 1.0 or self.kappa == 1.0:
            return 0.0
        # rescale {kappa, 1} to {1-delta, 1+delta}
        return (1.0 - self.kappa) / (1.0 + self.kappa)

    def cdf(self, x):
        """Marginal CDF, used by goodness-of-fit checks."""
        x = np.asarray(x, dtype=float)
        if self.kind == "homogeneous":
            return (x >= self.c).astype(float)
        if self.kind == "uniform_elliptic":
            lo, hi = 1.0 - self.delta, 1.0 + self.delta
            if self.marginal == "uniform_interval":
                if self.delta == 0:
                    return (x >= 1.0).astype(float)
                return np.clip((x - lo) / (hi - lo), 0.0, 1.0)
            return 0.5 * (x >= lo) + 0.5 * (x >= hi)
        return (1.0 - self.p) * (x >= self.kappa) + self.p * (x >= 1.0)


class Edge(NamedTuple):
    """Canonical edge {base, base + e_axis}; axis is 0-based."""

    base: tuple
    axis: int


def canonical_edge(x, y) -> Edge:
    x = tuple(int(c) for c in x)
    y = tuple(int(c) for c in y)
    if len(x) != len(y):
        raise ValueError("endpoints live in different dimensions")
    diff = [b - a for a, b in zip(x, y)]
    nz = [i for i, v in enumerate(diff) if v != 0]
    if len(nz) != 1 or abs(diff[nz[0]]) != 1:
        raise ValueError(f"{x} and {y} are not nearest neighbours")
    i = nz[0]
    return Edge(x if diff[i] == 1 else y, i)


@dataclass(frozen=True)
class ConductanceField:
    law: EnvironmentLaw
    dim: int
    seed: int
    zero_kappa: bool = field(default=False)

    def __post_init__(self):
        if self.dim < 1:
            raise LawError("dimension must be at least 1")
        if not 0 <= int(self.seed) < 2**64:
            raise LawError("seed must fit in 64 unsigned bits")
        if self.zero_kappa and self.law.kind != "two_point":
            raise LawError("zero-kappa projection needs a two-point law")

    @property
    def args(self):
        """Positional arguments understood by the compiled kernels."""
        a, b = self.law.params
        return self.law.code, a, b, self.zero_kappa, np.uint64(self.seed)

    def conductance(self, edge: Edge) -> float:
        return conductance(self, edge)

    def between(self, x, y) -> float:
        return conductance(self, canonical_edge(x, y))

    def site(self, x) -> np.ndarray:
        """Conductances of the 2d edges at x (order +e_1..+e_d, -e_1..-e_d)."""
        x = np.asarray(x, dtype=np.int64)
        if x.shape != (self.dim,):
            raise ValueError("site has wrong dimension")
        out = np.empty(2 * self.dim)
        _site(*self.args, x, out)
        return out

    def edges(self, bases, axes) -> np.ndarray:
        """Vectorised conductance of many canonical edges."""
        bases = np.ascontiguousarray(np.atleast_2d(bases), dtype=np.int64)
        axes = np.ascontiguousarray(np.broadcast_to(axes, bases.shape[:1]), dtype=np.int64)
        if bases.shape[1] != self.dim:
            raise ValueError("bases have wrong dimension")
        return _edges(*self.args, bases, axes)

    def with_seed(self, seed) -> "ConductanceField":
        return replace(self, seed=int(seed))


def conductance(fld: ConductanceField, edge: Edge) -> float:
    base = np.asarray(edge.base, dtype=np.int64)
    if base.shape != (fld.dim,) or not 0 <= edge.axis < fld.dim:
        raise ValueError("edge does not match field dimension")
    return float(_edges(*fld.args, base[None, :], np.array([edge.axis], dtype=np.int64))[0])


def zero_kappa_projection(fld: ConductanceField) -> ConductanceField:
    """Same field with every kappa edge set to conductance 0."""
    if fld.law.kind != "two_point":
        raise LawError("zero-kappa projection is defined for two-point laws only")
    return replace(fld, zero_kappa=True)


@njit(cache=True)
def _site(law, a, b, zk, seed, x, out):
    scratch = np.empty(x.shape[0], np.int64)
    _core.site_conductances(law, a, b, zk, seed, x, out, scratch)


@njit(cache=True)
def _edges(law, a, b, zk, seed, bases, axes):
    n = bases.shape[0]
    out = np.empty(n)
    for i in range(n):
        if law == _core.HOMOGENEOUS:
            out[i] = a
        else:
            out[i] = _core.law_value(law, a, b, zk, _core.edge_uniform(seed, bases[i], axes[i]))
    return out


# ---------------------------------------------------------------- law spec text

def format_spec(fld: ConductanceField) -> str:
    """Flat key=value block; `parse_spec(format_spec(f)) == f`."""
    law = fld.law
    lines = []
    if law.kind == "homogeneous":
        lines += ["law=homogeneous", f"c={law.c!r}"]
    elif law.kind == "uniform_elliptic":
        lines += ["law=uniform_elliptic", f"delta={law.delta!r}", f"marginal={law.marginal}"]
    else:
        lines += ["law=two_point", f"p={law.p!r}", f"kappa={law.kappa!r}"]
        if fld.zero_kappa:
            lines.append("zero_kappa=true")
    lines += [f"seed={int(fld.seed)}", f"d={fld.dim}"]
    return "\n".join(lines) + "\n"


def parse_pairs(text: str) -> dict:
    pairs = {}
    for raw in text.replace(",", "\n").splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise LawError(f"expected key=value, got {line!r}")
        k, v = (t.strip() for t in line.split("=", 1))
        pairs[k] = v
    return pairs


def law_from_pairs(pairs: dict) -> EnvironmentLaw:
    kind = pairs.get("law")
    try:
        if kind == "homogeneous":
            return EnvironmentLaw.homogeneous(float(pairs.get("c", 1.0)))
        if kind == "uniform_elliptic":
            return EnvironmentLaw.uniform_elliptic(
                float(pairs["delta"]), pairs.get("marginal", "two_point_sym"))
        if kind == "two_point":
            return EnvironmentLaw.two_point(float(pairs["p"]), float(pairs["kappa"]))
    except KeyError as exc:
        raise LawError(f"law {kind!r} needs parameter {exc.args[0]!r}") from None
    raise LawError(f"unknown law {kind!r}")


def parse_spec(text: str) -> ConductanceField:
    pairs = parse_pairs(text)
    law = law_from_pairs(pairs)
    try:
        seed = int(pairs.get("seed", 0))
        d = int(pairs.get("d", 2))
    except ValueError as exc:
        raise LawError(str(exc)) from None
    zk = pairs.get("zero_kappa", "false").lower() in ("1", "true", "yes")
    return ConductanceField(law, d, seed, zero_kappa=zk)


def beta(delta: float) -> float:
    """Ellipticity ratio (1 + delta) / (1 - delta)."""
    return (1.0 + delta) / (1.0 - delta)


def right_step_floor(lam: float, delta: float, d: int) -> float:
    """Uniform lower bound on p(x, +e_1) for conductances in [1-delta, 1+delta]."""
    return 1.0 / ((2 * d - 1) * beta(delta) * math.exp(-lam) + 1.0)
