import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from rcwalk.env import (ConductanceField, DegenerateVertexError, Edge, EnvironmentLaw, LawError,
                        canonical_edge, conductance, format_spec, parse_spec, right_step_floor,
                        zero_kappa_projection)
from rcwalk.kernel import BiasedKernel, WalkStream, run_path, step_distribution

LAWS = [
    EnvironmentLaw.homogeneous(),
    EnvironmentLaw.uniform_elliptic(0.3),
    EnvironmentLaw.uniform_elliptic(0.3, "uniform_interval"),
    EnvironmentLaw.two_point(0.9, 0.1),
]

coords = st.integers(-10**6, 10**6)


def test_homogeneous_is_constant():
    fld = ConductanceField(EnvironmentLaw.homogeneous(), 2, 7)
    bases = np.random.default_rng(0).integers(-1000, 1000, size=(500, 2))
    assert np.all(fld.edges(bases, 0) == 1.0)
    assert np.all(fld.edges(bases, 1) == 1.0)


def test_two_point_support():
    fld = ConductanceField(EnvironmentLaw.two_point(0.7, 0.1), 3, 1)
    bases = np.random.default_rng(1).integers(-1000, 1000, size=(2000, 3))
    vals = fld.edges(bases, 2)
    assert set(np.unique(vals)) <= {0.1, 1.0}


def test_two_point_open_fraction():
    # 10^6 distinct edges: one row of horizontal edges
    fld = ConductanceField(EnvironmentLaw.two_point(0.9, 0.1), 2, 11)
    n = 10**6
    bases = np.c_[np.arange(n), np.zeros(n, np.int64)]
    frac = np.mean(fld.edges(bases, 0) == 1.0)
    se = math.sqrt(0.9 * 0.1 / n)
    assert abs(frac - 0.9) < 4 * se


@pytest.mark.parametrize("law", LAWS[1:], ids=lambda l: l.kind + "-" + l.marginal)
def test_marginal_ks(law):
    fld = ConductanceField(law, 2, 3)
    n = 10**5
    bases = np.c_[np.arange(n), np.arange(n) % 17]
    vals = fld.edges(bases, 1)
    if law.marginal == "uniform_interval" and law.kind == "uniform_elliptic":
        p = stats.kstest(vals, lambda x: law.cdf(x)).pvalue
        assert p > 0.01
    else:
        # discrete law: compare atom frequencies
        atoms = np.unique(vals)
        assert atoms.size == 2
        p_hi = np.mean(vals == atoms[1])
        expect = 0.5 if law.kind == "uniform_elliptic" else law.p
        assert abs(p_hi - expect) < 4 * math.sqrt(expect * (1 - expect) / n)


@pytest.mark.parametrize("law", LAWS, ids=lambda l: l.kind)
def test_uniform_elliptic_bounds(law):
    fld = ConductanceField(law, 2, 5)
    vals = fld.edges(np.random.default_rng(2).integers(-50, 50, size=(3000, 2)), 0)
    assert np.all(vals > 0)
    if law.kind == "uniform_elliptic":
        assert np.all(vals >= 1 - law.delta) and np.all(vals <= 1 + law.delta)


@given(x=st.tuples(coords, coords), axis=st.integers(0, 1), sign=st.sampled_from([1, -1]))
def test_symmetry_either_endpoint(x, axis, sign):
    fld = ConductanceField(EnvironmentLaw.uniform_elliptic(0.4, "uniform_interval"), 2, 99)
    y = list(x)
    y[axis] += sign
    assert fld.between(x, y) == fld.between(y, x)
    e = canonical_edge(x, y)
    assert e == canonical_edge(y, x)
    assert e.base[axis] == min(x[axis], y[axis])


@given(pts=st.lists(st.tuples(coords, coords, coords), min_size=1, max_size=30),
       seed=st.integers(0, 2**64 - 1))
def test_determinism_any_order(pts, seed):
    law = EnvironmentLaw.two_point(0.5, 0.3)
    a = ConductanceField(law, 3, seed)
    b = ConductanceField(law, 3, seed)
    bases = np.array(pts)
    fwd = a.edges(bases, 1)
    rev = b.edges(bases[::-1], 1)[::-1]
    assert np.array_equal(fwd, rev)
    assert conductance(a, Edge(tuple(pts[0]), 1)) == fwd[0]


def test_seeds_differ():
    law = EnvironmentLaw.uniform_elliptic(0.5, "uniform_interval")
    bases = np.c_[np.arange(100), np.zeros(100, np.int64)]
    a = ConductanceField(law, 2, 1).edges(bases, 0)
    b = ConductanceField(law, 2, 2).edges(bases, 0)
    assert not np.array_equal(a, b)


def test_not_neighbours():
    with pytest.raises(ValueError):
        canonical_edge((0, 0), (1, 1))
    with pytest.raises(ValueError):
        canonical_edge((0, 0), (2, 0))


@pytest.mark.parametrize("kw", [dict(kind="nope"), dict(kind="homogeneous", c=0.0),
                                dict(kind="uniform_elliptic", delta=1.0),
                                dict(kind="two_point", p=0.0, kappa=0.5),
                                dict(kind="two_point", p=0.5, kappa=0.0)])
def test_law_validation(kw):
    with pytest.raises(LawError):
        EnvironmentLaw(**kw)


def test_zero_kappa_projection():
    fld = ConductanceField(EnvironmentLaw.two_point(0.6, 0.1), 2, 4)
    proj = zero_kappa_projection(fld)
    bases = np.random.default_rng(3).integers(-200, 200, size=(5000, 2))
    a, b = fld.edges(bases, 0), proj.edges(bases, 0)
    assert np.all(b[a == 1.0] == 1.0)
    assert np.all(b[a == 0.1] == 0.0)
    with pytest.raises(LawError):
        zero_kappa_projection(ConductanceField(EnvironmentLaw.homogeneous(), 2, 0))


def _isolated_site(fld, radius=200):
    for i in range(-radius, radius):
        for j in range(-radius, radius):
            if np.all(fld.site((i, j)) == 0):
                return np.array([i, j])
    return None


def test_projected_degenerate_vertex_flagged():
    proj = zero_kappa_projection(ConductanceField(EnvironmentLaw.two_point(0.3, 0.1), 2, 8))
    x = _isolated_site(proj)
    assert x is not None
    kern = BiasedKernel(proj, 0.5)
    with pytest.raises(DegenerateVertexError) as ei:
        step_distribution(kern, x)
    assert ei.value.site == tuple(x)
    with pytest.raises(DegenerateVertexError):
        run_path(kern, x, 5, WalkStream(0))


@pytest.mark.parametrize("fld", [
    ConductanceField(EnvironmentLaw.two_point(0.95, 0.001), 2, 42),
    ConductanceField(EnvironmentLaw.uniform_elliptic(0.2, "uniform_interval"), 3, 2**63 + 5),
    ConductanceField(EnvironmentLaw.homogeneous(2.5), 1, 0),
    ConductanceField(EnvironmentLaw.two_point(0.5, 0.25), 2, 1, zero_kappa=True),
])
def test_spec_round_trip(fld):
    assert parse_spec(format_spec(fld)) == fld


def test_parse_spec_flat_text():
    fld = parse_spec("law=two_point, p=0.95, kappa=0.001, seed=42, d=2")
    assert fld.law == EnvironmentLaw.two_point(0.95, 0.001)
    assert (fld.seed, fld.dim) == (42, 2)
    with pytest.raises(LawError):
        parse_spec("law=two_point, p=0.9")
    with pytest.raises(LawError):
        parse_spec("law=cauchy")


@given(lam=st.floats(0, 10), delta=st.floats(0, 0.9), d=st.integers(1, 4))
def test_right_step_floor_is_probability(lam, delta, d):
    f = right_step_floor(lam, delta, d)
    assert 0 < f <= 1
