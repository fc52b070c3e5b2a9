"""Quenched dynamics of the biased walk among conductances.

Moves are indexed 0..2d-1: index k < d is +e_{k+1}, index k >= d is
-e_{k-d+1}. A move is chosen from a uniform u by the half-open rule
q[k] < u <= q[k+1] on the cumulative thresholds, the same rule for every
kernel, so walks in different environments can share their uniforms.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numba import njit

from . import _core
from .env import ConductanceField, DegenerateVertexError, format_spec, parse_spec


def moves(d: int) -> np.ndarray:
    """(2d, d) integer array of unit moves in kernel order."""
    eye = np.eye(d, dtype=np.int64)
    return np.vstack([eye, -eye])


@dataclass(frozen=True)
class BiasedKernel:
    field: ConductanceField
    lam: float

    def __post_init__(self):
        if not (math.isfinite(self.lam) and self.lam >= 0):
            raise ValueError("bias must be finite and nonnegative")

    @property
    def dim(self) -> int:
        return self.field.dim

    @property
    def args(self):
        return (*self.field.args, float(self.lam))


@dataclass(frozen=True)
class StepDistribution:
    probs: np.ndarray

    def prob(self, k: int) -> float:
        return float(self.probs[k])


class WalkStream:
    """Uniform stream of one replica, keyed by (master seed, replica id).

    Values are computed, not drawn, so a stream can be replayed from any
    offset. Streams are disjoint from conductance fields by construction
    (different hash tags).
    """

    def __init__(self, seed: int, replica: int = 0):
        self.seed = int(seed)
        self.replica = int(replica)
        self.key = stream_key(self.seed, self.replica)

    def uniform(self, n: int) -> float:
        return float(_uniform(self.key, n))

    def uniforms(self, start: int, stop: int) -> np.ndarray:
        return _uniforms(self.key, start, stop)

    def __repr__(self):
        return f"WalkStream(seed={self.seed}, replica={self.replica})"


def stream_key(seed, replica) -> np.uint64:
    return np.uint64(_core.derive_seed(np.uint64(seed), _core.WALK_TAG, int(replica)))


def field_seed(seed, replica) -> int:
    """Environment seed of replica `replica` in an annealed run."""
    return int(_core.derive_seed(np.uint64(seed), _core.FIELD_TAG, int(replica)))


@njit(cache=True)
def _uniform(key, n):
    return _core.walk_uniform(key, n)


@njit(cache=True)
def _uniforms(key, start, stop):
    out = np.empty(max(stop - start, 0))
    for i in range(out.shape[0]):
        out[i] = _core.walk_uniform(key, start + i)
    return out


@njit(cache=True)
def _site_probs(law, a, b, zk, seed, lam, x):
    d = x.shape[0]
    om = np.empty(2 * d)
    w = np.empty(2 * d)
    sc = np.empty(d, np.int64)
    _core.site_conductances(law, a, b, zk, seed, x, om, sc)
    _, fs, fb = _core.tilt_factors(lam)
    s = _core.tilt(om, fs, fb, w)
    return w, s


def _weights(kernel: BiasedKernel, x):
    x = np.asarray(x, dtype=np.int64)
    if x.shape != (kernel.dim,):
        raise ValueError("site has wrong dimension")
    w, s = _site_probs(*kernel.args, x)
    if not s > 0:
        raise DegenerateVertexError(x)
    return w, s


def step_distribution(kernel: BiasedKernel, x) -> StepDistribution:
    w, s = _weights(kernel, x)
    return StepDistribution(w / s)


def cumulative_thresholds(kernel: BiasedKernel, x) -> np.ndarray:
    w, s = _weights(kernel, x)
    q = np.empty(w.shape[0] + 1)
    _thresholds(w, s, q)
    return q


@njit(cache=True)
def _thresholds(w, s, q):
    _core.thresholds(w, s, q)


@njit(cache=True)
def _pick(q, u):
    return _core.pick(q, u)


def step_from_uniform(kernel: BiasedKernel, x, u: float) -> int:
    """Move index (0-based) selected by u in (0, 1]."""
    if not 0.0 < u <= 1.0:
        raise ValueError("u must lie in (0, 1]")
    return int(_pick(cumulative_thresholds(kernel, x), float(u)))


def local_drift(kernel: BiasedKernel, x) -> np.ndarray:
    p = step_distribution(kernel, x).probs
    d = kernel.dim
    return p[:d] - p[d:]


def local_second_moment(kernel: BiasedKernel, x) -> float:
    """E[((X_1 - X_0).e_1)^2] from x."""
    p = step_distribution(kernel, x).probs
    return float(p[0] + p[kernel.dim])


def reversible_measure(kernel: BiasedKernel, x) -> float:
    """pi(x) = sum_z omega(x, z) exp(lam (x + z).e_1)."""
    return math.exp(log_reversible_measure(kernel, x))


def log_reversible_measure(kernel: BiasedKernel, x) -> float:
    x = np.asarray(x, dtype=np.int64)
    om = kernel.field.site(x)
    d = kernel.dim
    shifts = np.zeros(2 * d)
    shifts[0], shifts[d] = 1.0, -1.0
    expo = kernel.lam * (2.0 * x[0] + shifts)
    top = expo.max()
    with np.errstate(divide="ignore"):
        return float(top + np.log(np.sum(om * np.exp(expo - top))))


def homogeneous_speed(lam: float, d: int) -> float:
    """Speed in direction e_1 when every conductance is equal."""
    if lam < 0:
        raise ValueError("bias must be nonnegative")
    em, em2 = math.exp(-lam), math.exp(-2.0 * lam)
    return (1.0 - em2) / (1.0 + em2 + (2 * d - 2) * em)


def homogeneous_speed_derivative(lam: float, d: int) -> float:
    """d/dlam of the homogeneous speed, equal to the one-step variance of X.e_1."""
    em, em2 = math.exp(-lam), math.exp(-2.0 * lam)
    s = 1.0 + em2 + (2 * d - 2) * em
    return ((1.0 + em2) * s - (1.0 - em2) ** 2) / s**2


# ------------------------------------------------------------------ paths

@dataclass
class WalkPath:
    start: np.ndarray
    steps: np.ndarray  # int8 move indices
    uniforms: np.ndarray | None = None

    def __post_init__(self):
        self.start = np.asarray(self.start, dtype=np.int64)
        self.steps = np.asarray(self.steps, dtype=np.int8)

    @property
    def dim(self) -> int:
        return self.start.shape[0]

    def __len__(self):
        return self.steps.shape[0]

    def positions(self) -> np.ndarray:
        """(n + 1, d) array of visited sites."""
        inc = moves(self.dim)[self.steps.astype(np.int64)] if len(self) else np.zeros((0, self.dim), np.int64)
        pos = np.empty((len(self) + 1, self.dim), dtype=np.int64)
        pos[0] = self.start
        np.cumsum(inc, axis=0, out=pos[1:])
        pos[1:] += self.start
        return pos

    def e1(self) -> np.ndarray:
        """First coordinates X_n . e_1, n = 0..len."""
        d = self.dim
        inc = np.where(self.steps == 0, 1, np.where(self.steps == d, -1, 0)).astype(np.int64)
        out = np.empty(len(self) + 1, dtype=np.int64)
        out[0] = self.start[0]
        np.cumsum(inc, out=out[1:])
        out[1:] += self.start[0]
        return out


@njit(cache=True)
def _run(law, a, b, zk, seed, lam, start, n, key, store):
    d = start.shape[0]
    x = start.copy()
    om = np.empty(2 * d)
    w = np.empty(2 * d)
    q = np.empty(2 * d + 1)
    sc = np.empty(d, np.int64)
    steps = np.empty(n, np.int8)
    us = np.empty(n if store else 0)
    _, fs, fb = _core.tilt_factors(lam)
    for t in range(n):
        _core.site_conductances(law, a, b, zk, seed, x, om, sc)
        s = _core.tilt(om, fs, fb, w)
        if not s > 0.0:
            return steps[:t], us[:t] if store else us, t
        _core.thresholds(w, s, q)
        u = _core.walk_uniform(key, t)
        k = _core.pick(q, u)
        steps[t] = k
        if store:
            us[t] = u
        _core.apply_step(x, k)
    return steps, us, n


@njit(cache=True)
def _replay(law, a, b, zk, seed, lam, start, uniforms):
    d = start.shape[0]
    n = uniforms.shape[0]
    x = start.copy()
    om = np.empty(2 * d)
    w = np.empty(2 * d)
    q = np.empty(2 * d + 1)
    sc = np.empty(d, np.int64)
    steps = np.empty(n, np.int8)
    _, fs, fb = _core.tilt_factors(lam)
    for t in range(n):
        _core.site_conductances(law, a, b, zk, seed, x, om, sc)
        s = _core.tilt(om, fs, fb, w)
        if not s > 0.0:
            return steps[:t], t
        _core.thresholds(w, s, q)
        k = _core.pick(q, uniforms[t])
        steps[t] = k
        _core.apply_step(x, k)
    return steps, n


def run_path(kernel: BiasedKernel, start, n_steps: int, stream: WalkStream,
             store_uniforms: bool = True) -> WalkPath:
    """Walk of `n_steps` steps driven by U_0, U_1, ... of `stream`."""
    if n_steps < 0:
        raise ValueError("n_steps must be nonnegative")
    start = np.asarray(start, dtype=np.int64)
    if start.shape != (kernel.dim,):
        raise ValueError("start has wrong dimension")
    steps, us, done = _run(*kernel.args, start, int(n_steps), stream.key, bool(store_uniforms))
    path = WalkPath(start, steps.copy(), us.copy() if store_uniforms else None)
    if done < n_steps:
        raise DegenerateVertexError(path.positions()[-1], path=path)
    return path


def replay(kernel: BiasedKernel, start, uniforms) -> WalkPath:
    """Walk driven by an explicit uniform sequence."""
    start = np.asarray(start, dtype=np.int64)
    us = np.ascontiguousarray(uniforms, dtype=np.float64)
    if us.size and not (np.all(us > 0) and np.all(us <= 1)):
        raise ValueError("uniforms must lie in (0, 1]")
    steps, done = _replay(*kernel.args, start, us)
    path = WalkPath(start, steps.copy(), us[:done].copy())
    if done < us.shape[0]:
        raise DegenerateVertexError(path.positions()[-1], path=path)
    return path


# ------------------------------------------------------------ path dump format
#
# little endian:
#   magic   4s   b"RCWP"
#   version u16  1
#   dim     u16
#   flags   u32  bit 0: uniforms present
#   n       u64  number of steps
#   start   i64 * dim
#   steps   u8 * n
#   uniforms f64 * n   (only if flag bit 0)
# The JSON sidecar `<file>.json` holds {"field": <law spec text>, "lambda": ...}.

_HEADER = struct.Struct("<4sHHIQ")
MAGIC = b"RCWP"


def dump_path(path: WalkPath, file, kernel: BiasedKernel | None = None) -> None:
    file = Path(file)
    flags = 1 if path.uniforms is not None else 0
    with open(file, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, 1, path.dim, flags, len(path)))
        fh.write(path.start.astype("<i8").tobytes())
        fh.write(path.steps.astype(np.uint8).tobytes())
        if flags:
            fh.write(np.asarray(path.uniforms, dtype="<f8").tobytes())
    if kernel is not None:
        meta = {"field": format_spec(kernel.field), "lambda": kernel.lam, "format": "RCWP/1"}
        Path(str(file) + ".json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def load_path(file) -> tuple[WalkPath, BiasedKernel | None]:
    file = Path(file)
    raw = file.read_bytes()
    magic, version, dim, flags, n = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC or version != 1:
        raise ValueError(f"{file} is not a version-1 path dump")
    off = _HEADER.size
    start = np.frombuffer(raw, "<i8", dim, off).astype(np.int64)
    off += 8 * dim
    steps = np.frombuffer(raw, np.uint8, n, off).astype(np.int8)
    off += n
    us = np.frombuffer(raw, "<f8", n, off).copy() if flags & 1 else None
    kernel = None
    side = Path(str(file) + ".json")
    if side.exists():
        meta = json.loads(side.read_text())
        kernel = BiasedKernel(parse_spec(meta["field"]), float(meta["lambda"]))
    return WalkPath(start, steps, us), kernel
