"""Command-line experiment runner.

    rcwalk <subcommand> <config.ini> [--section.key=value ...]

Subcommands: speed-curve, derivative-curve, nonmono-scan, trap-census,
validate-bounds, coupling-diag. Configuration is an INI file; see
`ExperimentConfig` for the recognised keys. Data go to the configured
output path (or standard output), progress to standard error.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 bound violation. The thread count is read from RCWALK_THREADS and never
changes the results.
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import io
import json
import logging
import math
import os
import subprocess
import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__

log = logging.getLogger("rcwalk")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_VIOLATION = 0, 2, 3, 4
SCHEMA_FILE = "csv_schema_v1.json"

COMMANDS = ("speed-curve", "derivative-curve", "nonmono-scan", "trap-census",
            "validate-bounds", "coupling-diag")


class ConfigError(ValueError):
    pass


# ------------------------------------------------------------------ config

def parse_grid(text: str) -> np.ndarray:
    """'a:b:n' (n evenly spaced points) or a comma list."""
    text = text.strip()
    if not text:
        return np.empty(0)
    try:
        if ":" in text:
            parts = text.split(":")
            if len(parts) != 3:
                raise ConfigError(f"range grid must be a:b:n, got {text!r}")
            a, b, n = float(parts[0]), float(parts[1]), int(parts[2])
            if n < 1:
                raise ConfigError("range grid needs n >= 1")
            return np.round(np.linspace(a, b, n), 12)
        return np.array([float(t) for t in text.split(",") if t.strip()])
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"bad grid {text!r}: {exc}") from None


def parse_box(text: str) -> tuple[tuple[int, ...], tuple[int, ...]]:
    """'x0,y0:x1,y1' with lo <= hi componentwise."""
    try:
        lo_s, hi_s = text.split(":")
        lo = tuple(int(t) for t in lo_s.split(","))
        hi = tuple(int(t) for t in hi_s.split(","))
    except ValueError:
        raise ConfigError(f"box must look like x0,y0:x1,y1, got {text!r}") from None
    if len(lo) != len(hi) or any(a > b for a, b in zip(lo, hi)):
        raise ConfigError(f"malformed box {text!r}")
    return lo, hi


def _apply_overrides(cp: configparser.ConfigParser, overrides) -> list[str]:
    applied = []
    for item in overrides:
        if not item.startswith("--") or "=" not in item:
            raise ConfigError(f"override must be --section.key=value, got {item!r}")
        key, value = item[2:].split("=", 1)
        if "." not in key:
            raise ConfigError(f"override key needs a section: {key!r}")
        sec, k = key.split(".", 1)
        if not cp.has_section(sec):
            cp.add_section(sec)
        cp.set(sec, k, value)
        applied.append(f"{sec}.{k}={value}")
    return applied


@dataclass
class ExperimentConfig:
    """Validated view of an INI configuration.

    [experiment] name, seed, d, output (path or '-')
    [law]        law = homogeneous | uniform_elliptic | two_point, plus c / delta, marginal / p, kappa
    [grid]       lambdas (list or a:b:n); p and kappa lists for nonmono-scan and trap-census
    [run]        horizon, replicas and command-specific keys
    """

    command: str
    text: str
    overrides: list[str]
    sections: dict[str, dict[str, str]]
    name: str
    seed: int
    d: int
    output: str
    lambdas: np.ndarray
    horizon: int
    replicas: int
    law: object = None
    run: dict = field(default_factory=dict)

    @property
    def sha256(self) -> str:
        blob = self.text + "\n" + "\n".join(self.overrides)
        return hashlib.sha256(blob.encode()).hexdigest()

    def get(self, key: str, default=None, kind=str):
        raw = self.run.get(key)
        if raw is None:
            return default
        try:
            return kind(raw)
        except ValueError:
            raise ConfigError(f"[run] {key}={raw!r} is not a valid {kind.__name__}") from None

    def grid(self, key: str) -> np.ndarray:
        return parse_grid(self.sections.get("grid", {}).get(key, ""))


def load_config(command: str, path: str, overrides=()) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc).splitlines()[0]) from None
    applied = _apply_overrides(cp, overrides)
    sections = {s: dict(cp.items(s)) for s in cp.sections()}
    exp = sections.get("experiment", {})
    run = sections.get("run", {})
    try:
        seed = int(exp.get("seed", 0))
        d = int(exp.get("d", 2))
        horizon = int(float(run.get("horizon", 10_000)))
        replicas = int(run.get("replicas", 100))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if seed < 0:
        raise ConfigError("seed must be nonnegative")
    if d < 1:
        raise ConfigError("d must be positive")
    if horizon < 1 or replicas < 1:
        raise ConfigError("horizon and replicas must be positive")
    lambdas = parse_grid(sections.get("grid", {}).get("lambdas", ""))
    if np.any(lambdas < 0) or not np.all(np.isfinite(lambdas)):
        raise ConfigError("biases must be finite and nonnegative")
    law = None
    if "law" in sections:
        from .env import law_from_pairs
        law = law_from_pairs(sections["law"])
    cfg = ExperimentConfig(command, text, applied, sections, exp.get("name", "experiment"),
                           seed, d, exp.get("output", "-"), lambdas, horizon, replicas, law, run)
    _VALIDATORS[command](cfg)
    return cfg


def _need_law(cfg):
    if cfg.law is None:
        raise ConfigError("missing [law] section")


def _need_lambdas(cfg):
    if cfg.lambdas.size == 0:
        raise ConfigError("empty bias grid: set [grid] lambdas")


def _check_speed(cfg):
    _need_law(cfg)
    _need_lambdas(cfg)
    methods = [m.strip() for m in cfg.run.get("methods", "plain").split(",") if m.strip()]
    bad = set(methods) - {"plain", "hyperplane-regen", "super-regen"}
    if bad or not methods:
        raise ConfigError(f"unknown methods {sorted(bad)}")
    if "super-regen" in methods and cfg.law.kind == "two_point":
        raise ConfigError("super-regenerations need a uniformly elliptic law")


def _check_derivative(cfg):
    _need_law(cfg)
    _need_lambdas(cfg)
    h = cfg.get("fd_step", 0.05, float)
    if h <= 0 or h > cfg.lambdas.min():
        raise ConfigError(f"fd_step={h} must lie in (0, min lambda]")
    gaps = np.diff(np.sort(cfg.lambdas))
    if gaps.size and h > gaps.min() / 2:
        raise ConfigError(f"fd_step={h} exceeds half the grid spacing {gaps.min():g}")
    if cfg.replicas < 2:
        raise ConfigError("covariance needs at least two replicas")


def _check_nonmono(cfg):
    _need_law(cfg)
    _need_lambdas(cfg)
    if cfg.d != 2:
        raise ConfigError("nonmono-scan runs in d = 2")
    if cfg.replicas < 2:
        raise ConfigError("paired comparisons need at least two replicas")
    if cfg.law.kind == "two_point":
        for key in ("p", "kappa"):
            g = cfg.grid(key)
            if g.size and (np.any(g <= 0) or np.any(g > 1)):
                raise ConfigError(f"[grid] {key} values must lie in (0, 1]")


def _check_traps(cfg):
    if cfg.d != 2:
        raise ConfigError("trap-census runs in d = 2")
    _need_law(cfg)
    if cfg.law.kind != "two_point":
        raise ConfigError("trap-census needs the two_point law")
    parse_box(cfg.run.get("box", "0,0:15,15"))
    g = cfg.grid("p")
    if g.size and (np.any(g <= 0.5) or np.any(g > 1)):
        raise ConfigError("[grid] p values must lie in (1/2, 1]")


def _check_bounds(cfg):
    _need_law(cfg)
    _need_lambdas(cfg)
    if cfg.d != 2:
        raise ConfigError("validate-bounds runs in d = 2")
    lo, hi = parse_box(cfg.run.get("box", "-2,-2:2,2"))
    if len(lo) != 2:
        raise ConfigError("box must be two-dimensional")
    n = cfg.get("cv_steps", 20, int)
    if not 1 <= n <= 30:
        raise ConfigError("cv_steps must lie in 1..30")
    ells = parse_grid(cfg.run.get("ells", "6,12,24"))
    if ells.size < 2 or np.any(ells < 1) or np.any(ells != np.round(ells)):
        raise ConfigError("ells needs at least two positive integers")


def _check_coupling(cfg):
    _need_law(cfg)
    _need_lambdas(cfg)
    if cfg.lambdas.size < 2:
        raise ConfigError("coupling-diag needs at least two biases")


_VALIDATORS = {
    "speed-curve": _check_speed,
    "derivative-curve": _check_derivative,
    "nonmono-scan": _check_nonmono,
    "trap-census": _check_traps,
    "validate-bounds": _check_bounds,
    "coupling-diag": _check_coupling,
}


# ------------------------------------------------------------------ output

def build_id() -> str:
    """Package version plus `git describe` of the source tree when available."""
    here = Path(__file__).resolve().parent
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"], cwd=here,
                             capture_output=True, text=True, timeout=5)
        desc = out.stdout.strip() if out.returncode == 0 else ""
    except (OSError, subprocess.SubprocessError):
        desc = ""
    return f"{__version__}+{desc}" if desc else __version__


def load_schema() -> dict:
    return json.loads(resources.files("rcwalk").joinpath("schema", SCHEMA_FILE).read_text())


def header_lines(cfg: ExperimentConfig, table: str | None = None) -> list[str]:
    schema = load_schema()
    lines = [f"build: {build_id()}", f"config_sha256: {cfg.sha256}", f"seed: {cfg.seed}",
             f"command: {cfg.command}"]
    if table is not None:
        lines.append(f"schema: {schema['schema']}/{schema['version']} table={table}")
    lines.append("config:")
    lines += ["| " + ln for ln in cfg.text.splitlines()]
    lines += ["| override " + o for o in cfg.overrides]
    return lines


def _fmt(v) -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def render_csv(cfg: ExperimentConfig, table: str, rows: list[dict]) -> str:
    cols = list(load_schema()["tables"][table]["columns"])
    buf = io.StringIO()
    for ln in header_lines(cfg, table):
        buf.write("# " + ln + "\n")
    buf.write(",".join(cols) + "\n")
    for row in rows:
        buf.write(",".join(_fmt(row.get(c)) for c in cols) + "\n")
    return buf.getvalue()


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if math.isfinite(f) else str(f)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def render_json(cfg: ExperimentConfig, body: dict) -> str:
    meta = {"build": build_id(), "config_sha256": cfg.sha256, "seed": cfg.seed,
            "command": cfg.command, "config": cfg.text, "overrides": cfg.overrides}
    return json.dumps({"meta": meta, **_jsonable(body)}, indent=1, sort_keys=False) + "\n"


def emit(target: str, text: str) -> None:
    """Single writer per output file; '-' is standard output."""
    if target == "-":
        sys.stdout.write(text)
        sys.stdout.flush()
        return
    p = Path(target)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text(text)
    log.info("wrote %s", p)


# ------------------------------------------------------------------ commands

def _exact_speed(cfg, lam):
    from .kernel import homogeneous_speed
    return homogeneous_speed(lam, cfg.d) if cfg.law.kind == "homogeneous" else None


def cmd_speed_curve(cfg: ExperimentConfig) -> int:
    from .coupling import super_regeneration_speed
    from .estimate import estimate_velocity
    from .regen import e1_paths, pooled_regeneration_speed

    methods = [m.strip() for m in cfg.run.get("methods", "plain").split(",") if m.strip()]
    margin = cfg.get("confirm_margin", 64, int)
    rows = []
    for lam in cfg.lambdas:
        lam = float(lam)
        log.info("speed-curve lambda=%g", lam)
        for m in methods:
            if m == "plain":
                v, se = estimate_velocity(cfg.law, lam, cfg.horizon, cfg.replicas, cfg.seed, cfg.d).e1()
            elif m == "hyperplane-regen":
                paths = e1_paths(cfg.law, lam, cfg.horizon, cfg.replicas, cfg.seed, cfg.d)
                rs = pooled_regeneration_speed(paths, margin)
                v, se = float(np.atleast_1d(rs.ratio)[0]), float(np.atleast_1d(rs.stderr)[0])
            else:
                lam_s = cfg.get("lambda_s", 0.6 * lam, float)
                r, s, _ = super_regeneration_speed(cfg.law, cfg.d, lam, lam_s, cfg.horizon,
                                                   cfg.replicas, cfg.seed, margin)
                v, se = float(r[0]), float(s[0])
            rows.append({"method": m, "lambda": lam, "v1_hat": v, "stderr": se,
                         "v1_exact": _exact_speed(cfg, lam)})
    emit(cfg.output, render_csv(cfg, "speed_curve", rows))
    return EXIT_OK


def cmd_derivative_curve(cfg: ExperimentConfig) -> int:
    from .estimate import estimate_derivative_cov, estimate_derivative_fd
    from .kernel import homogeneous_speed_derivative

    h = cfg.get("fd_step", 0.05, float)
    rows = []
    for lam in cfg.lambdas:
        lam = float(lam)
        log.info("derivative-curve lambda=%g", lam)
        cov = estimate_derivative_cov(cfg.law, lam, cfg.horizon, cfg.replicas, cfg.seed, cfg.d)
        fd = estimate_derivative_fd(cfg.law, lam, h, cfg.horizon, cfg.replicas, cfg.seed, cfg.d)
        rows.append({"lambda": lam, "v1_hat": float(cov.extra["velocity"][0]),
                     "stderr": float(cov.extra["velocity_se"][0]),
                     "dv1_hat": cov.e1()[0], "dv1_stderr": cov.e1()[1],
                     "dv1_fd": fd.e1()[0], "dv1_fd_stderr": fd.e1()[1],
                     "dv1_exact": homogeneous_speed_derivative(lam, cfg.d)
                     if cfg.law.kind == "homogeneous" else None})
    emit(cfg.output, render_csv(cfg, "derivative_curve", rows))
    return EXIT_OK


def flag_decreases(lams, per: np.ndarray, z: float = 3.0) -> list[dict]:
    """Pairs i < j with mean(v_i - v_j) > z * paired standard error."""
    from .estimate import paired_difference
    out = []
    for i in range(len(lams)):
        for j in range(i + 1, len(lams)):
            m, s = paired_difference(per[j], per[i])  # mean of v_i - v_j
            if m > z * s:
                out.append({"lambda1": float(lams[i]), "lambda2": float(lams[j]),
                            "drop": m, "stderr": s})
    return out


def _law_cells(cfg):
    from .env import EnvironmentLaw
    if cfg.law.kind != "two_point":
        return [(None, None, cfg.law)]
    ps = cfg.grid("p")
    ks = cfg.grid("kappa")
    ps = ps if ps.size else np.array([cfg.law.p])
    ks = ks if ks.size else np.array([cfg.law.kappa])
    return [(float(p), float(k), EnvironmentLaw.two_point(float(p), float(k))) for p in ps for k in ks]


def cmd_nonmono_scan(cfg: ExperimentConfig) -> int:
    from .estimate import velocity_curve
    from .regen import dead_end_occupation

    lams = np.sort(cfg.lambdas)
    curve, cells = [], []
    for p, kap, law in _law_cells(cfg):
        log.info("nonmono-scan p=%s kappa=%s", p, kap)
        mean, se, per = velocity_curve(law, lams, cfg.horizon, cfg.replicas, cfg.seed, cfg.d)
        for lam, m, s in zip(lams, mean, se):
            curve.append({"p": p, "kappa": kap, "lambda": float(lam), "v1_hat": float(m),
                          "stderr": float(s)})
        cells.append({"p": p, "kappa": kap, "flagged": flag_decreases(lams, per)})
    occupation = []
    boxes = cfg.get("occupation_boxes", 0, int)
    if cfg.law.kind == "two_point" and boxes > 0:
        kappas = sorted({c["kappa"] for c in cells}, reverse=True)
        for p in sorted({c["p"] for c in cells}):
            log.info("dead-end occupation p=%g", p)
            st = dead_end_occupation(p, kappas, float(lams[-1]), cfg.seed, boxes=boxes,
                                     side=cfg.get("occupation_side", 400, int),
                                     walks=cfg.get("occupation_walks", 20, int),
                                     cap=cfg.get("occupation_cap", 10**6, int),
                                     H=cfg.get("dead_end_horizon", 64, int))
            occupation.append({"p": p, "lambda": st.lam, "kappas": list(st.kappas),
                               "sites_scanned": st.sites_scanned, "dead_ends": st.dead_ends,
                               "p_dead_end": st.p_dead_end,
                               "mean_T_A_given_dead_end": st.cond_mean,
                               "mean_T_A_given_dead_end_se": st.cond_se,
                               "mean_T_A": st.mean, "censored": st.censored,
                               "paired_increase": st.paired_diff, "paired_increase_se": st.paired_se})
    body = {"lambdas": lams, "curve": curve, "cells": cells,
            "any_flagged": any(c["flagged"] for c in cells), "occupation": occupation}
    curve_path = cfg.run.get("curve_output")
    if curve_path:
        emit(curve_path, render_csv(cfg, "nonmono_curve", curve))
    emit(cfg.output, render_json(cfg, body))
    return EXIT_OK


def cmd_trap_census(cfg: ExperimentConfig) -> int:
    from .env import ConductanceField
    from .traps import trap_census, trap_tail_statistics

    H = cfg.get("horizon_H", 64, int)
    lo, hi = parse_box(cfg.run.get("box", "0,0:15,15"))
    fld = ConductanceField(cfg.law, 2, cfg.seed)
    log.info("trap census over %s..%s", lo, hi)
    body = {"census": trap_census(fld, lo, hi, H), "tails": []}
    samples = cfg.get("tail_samples", 0, int)
    if samples > 0:
        n_max = cfg.get("n_max", 12, int)
        ps = cfg.grid("p")
        for p in (ps if ps.size else [cfg.law.p]):
            log.info("trap tails p=%g", p)
            t = trap_tail_statistics(float(p), n_max, samples, cfg.seed, H=H,
                                     side=cfg.get("tail_side", 128, int))
            body["tails"].append({
                "p": float(p), "n": t.ns, "sites": t.sites, "boxes": t.boxes,
                "tail_L": t.tail("L"), "tail_W": t.tail("W"),
                "fit_L": vars(t.L_fit), "fit_W": vars(t.W_fit), "alpha_hat": t.alpha_hat})
    emit(cfg.output, render_json(cfg, body))
    return EXIT_OK


def _shell_cuts(net, center, radius):
    """Edge sets crossing the l_inf shells around `center`, innermost first."""
    c = net.coords
    r = np.abs(c - np.asarray(center)).max(axis=1)
    ra, rb = r[net.edges[:, 0]], r[net.edges[:, 1]]
    cuts = []
    for k in range(radius):
        cut = np.flatnonzero(np.minimum(ra, rb) == k)
        cut = cut[np.maximum(ra, rb)[cut] == k + 1]
        if cut.size:
            cuts.append(cut)
    return cuts


def validate_bounds(cfg: ExperimentConfig) -> dict:
    """Run the electrical-network checks; returns a JSON-ready report with a `passed` flag."""
    from .env import ConductanceField
    from .kernel import field_seed
    from .network import (TiltedNetwork, carne_varopoulos_check, exit_probability_exact,
                          nash_williams_bound, parallel_conductance, series_conductance,
                          solve_dirichlet, solve_dirichlet_dense)

    rng = np.random.default_rng(cfg.seed)
    checks = []
    # series and parallel laws
    ws = rng.uniform(0.1, 2.0, size=8)
    chain = TiltedNetwork(9, np.c_[np.arange(8), np.arange(1, 9)], ws)
    c_chain = solve_dirichlet_dense(chain, 0, 8).effective_conductance
    par = TiltedNetwork(2, np.zeros((8, 2), np.int64) + [0, 1], ws)
    c_par = solve_dirichlet_dense(par, 0, 1).effective_conductance
    err = max(abs(c_chain - series_conductance(ws)), abs(c_par - parallel_conductance(ws)))
    checks.append({"check": "series-parallel", "max_error": err, "passed": err <= 1e-12})

    lo, hi = parse_box(cfg.run.get("box", "-2,-2:2,2"))
    networks = cfg.get("networks", 100, int)
    nw_viol, solver_err = 0, 0.0
    for k in range(networks):
        fld = ConductanceField(cfg.law, 2, field_seed(cfg.seed, k))
        lam = float(cfg.lambdas[k % cfg.lambdas.size])
        net = TiltedNetwork.from_box(fld, lam, lo, hi, drop_zero=False)
        center = tuple((a + b) // 2 for a, b in zip(lo, hi))
        src = net.index_of(center)
        r = np.abs(net.coords - np.asarray(center)).max(axis=1)
        radius = int(r.max())
        sinks = np.flatnonzero(r == radius)
        exact = solve_dirichlet(net, src, sinks, tol=1e-13)
        dense = solve_dirichlet_dense(net, src, sinks)
        scale = max(abs(dense.effective_conductance), 1e-300)
        solver_err = max(solver_err, abs(exact.effective_conductance - dense.effective_conductance) / scale)
        bound = nash_williams_bound(net, src, sinks, _shell_cuts(net, center, radius))
        if bound < dense.effective_conductance * (1 - 1e-10):
            nw_viol += 1
    checks.append({"check": "solver-vs-dense", "networks": networks, "max_rel_error": solver_err,
                   "passed": solver_err <= 1e-8})
    checks.append({"check": "nash-williams", "networks": networks, "violations": nw_viol,
                   "passed": nw_viol == 0})

    # exit probabilities: log-slope in ell against -lam/3
    ells = parse_grid(cfg.run.get("ells", "6,12,24")).astype(int)
    fields = cfg.get("exit_fields", 20, int)
    for lam in cfg.lambdas:
        lam = float(lam)
        slopes = np.empty(fields)
        for k in range(fields):
            fld = ConductanceField(cfg.law, 2, field_seed(cfg.seed + 1, k))
            lp = [math.log(max(exit_probability_exact(fld, lam, (0, 0), int(e)), 1e-300)) for e in ells]
            slopes[k] = np.polyfit(ells, lp, 1)[0]
        m = float(slopes.mean())
        se = float(slopes.std(ddof=1) / math.sqrt(fields)) if fields > 1 else 0.0
        checks.append({"check": "exit-slope", "lambda": lam, "ells": ells, "slope": m,
                       "stderr": se, "limit": -lam / 3, "passed": m <= -lam / 3 + 1.96 * se})

    # heat kernel
    n = cfg.get("cv_steps", 20, int)
    cv_fields = cfg.get("cv_fields", 3, int)
    for lam in cfg.lambdas:
        viol, worst, checked = 0, 0.0, 0
        for k in range(cv_fields):
            fld = ConductanceField(cfg.law, 2, field_seed(cfg.seed + 2, k))
            rep = carne_varopoulos_check(fld, float(lam), (0, 0), n)
            viol += len(rep.violations)
            worst = max(worst, rep.max_ratio)
            checked += rep.checked
        checks.append({"check": "carne-varopoulos", "lambda": float(lam), "steps": n,
                       "checked": checked, "violations": viol, "max_ratio": worst,
                       "passed": viol == 0})
    return {"checks": checks, "passed": all(c["passed"] for c in checks)}


def cmd_validate_bounds(cfg: ExperimentConfig) -> int:
    rep = validate_bounds(cfg)
    for c in rep["checks"]:
        log.info("%s %s", c["check"], "ok" if c["passed"] else "VIOLATED")
    emit(cfg.output, render_json(cfg, rep))
    return EXIT_OK if rep["passed"] else EXIT_VIOLATION


def cmd_coupling_diag(cfg: ExperimentConfig) -> int:
    from .coupling import coupling_divergence_rate, run_coupled, super_regeneration_speed
    from .env import ConductanceField, EnvironmentLaw
    from .kernel import field_seed
    from .kernel import BiasedKernel, WalkStream

    lams = np.sort(cfg.lambdas)
    n = cfg.horizon
    seeds = cfg.get("seeds", cfg.replicas, int)
    body = {}
    if cfg.d == 1:
        viol = 0
        for r in range(seeds):
            fld = ConductanceField(cfg.law, 1, field_seed(cfg.seed, r))
            pos = run_coupled([BiasedKernel(fld, float(lam)) for lam in lams], n,
                              WalkStream(cfg.seed, r))[:, :, 0]
            viol += int(np.sum(np.diff(pos, axis=0) < 0))
        body["monotonicity"] = {"seeds": seeds, "steps": n, "lambdas": lams, "violations": viol}
        log.info("coupled monotonicity: %d violations", viol)
    fa = ConductanceField(cfg.law, cfg.d, cfg.seed)
    fb = ConductanceField(EnvironmentLaw.homogeneous(), cfg.d, cfg.seed)
    rate = []
    for lam in lams:
        m, s = coupling_divergence_rate(fa, fb, float(lam), n, min(cfg.replicas, 50), cfg.seed)
        rate.append({"lambda": float(lam), "rate": m, "stderr": s})
    body["divergence_vs_homogeneous"] = rate
    if cfg.law.kind != "two_point":
        sr = []
        for lam in lams:
            lam_s = cfg.get("lambda_s", 0.6 * float(lam), float)
            try:
                r, s, inc = super_regeneration_speed(cfg.law, cfg.d, float(lam), lam_s, n,
                                                     cfg.replicas, cfg.seed,
                                                     cfg.get("confirm_margin", 64, int))
                sr.append({"lambda": float(lam), "lambda_s": lam_s, "speed": r, "stderr": s,
                           "increments": int(inc[1].size)})
            except ValueError as exc:
                sr.append({"lambda": float(lam), "lambda_s": lam_s, "error": str(exc)})
        body["super_regeneration"] = sr
    emit(cfg.output, render_json(cfg, body))
    if body.get("monotonicity", {}).get("violations", 0):
        return EXIT_VIOLATION
    return EXIT_OK


COMMAND_FUNCS = {
    "speed-curve": cmd_speed_curve,
    "derivative-curve": cmd_derivative_curve,
    "nonmono-scan": cmd_nonmono_scan,
    "trap-census": cmd_trap_census,
    "validate-bounds": cmd_validate_bounds,
    "coupling-diag": cmd_coupling_diag,
}


# ------------------------------------------------------------------ entry point

def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="rcwalk", description="Biased random walks among random conductances.",
        epilog="Overrides: --section.key=value, e.g. --run.replicas=50. "
               "Threads: RCWALK_THREADS (results do not depend on it).")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("config", help="INI configuration file")
    ap.add_argument("-q", "--quiet", action="store_true", help="suppress progress on stderr")
    return ap


def main(argv=None) -> int:
    ap = _parser()
    args, extra = ap.parse_known_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="rcwalk: %(message)s", stream=sys.stderr)
    from .coupling import InsufficientRegenerations
    from .env import DegenerateVertexError, LawError
    from .estimate import HorizonError, NumericalFailure
    from .network import SolverError

    try:
        cfg = load_config(args.command, args.config, extra)
    except (ConfigError, LawError) as exc:
        print(f"rcwalk: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    log.info("%s %s (threads=%s)", cfg.command, cfg.name, os.environ.get("RCWALK_THREADS", "default"))
    try:
        return COMMAND_FUNCS[cfg.command](cfg)
    except (NumericalFailure, SolverError, DegenerateVertexError, InsufficientRegenerations) as exc:
        print(f"rcwalk: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (LawError, HorizonError, ValueError) as exc:
        print(f"rcwalk: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
