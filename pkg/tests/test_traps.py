import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rcwalk.env import ConductanceField, EnvironmentLaw, LawError
from rcwalk.traps import (ClusterQuery, dead_end_at, dead_end_depth, dead_end_depths, diameter,
                          find_dead_ends, good_mask, infinite_cluster_mask, is_good_point,
                          kappa_component, log_linear_fit, trap_census, trap_map, trap_of,
                          trap_tail_statistics, wilson_interval)

TP = EnvironmentLaw.two_point(0.9, 0.1)


def brute_good(q, x, H):
    """Staircase search by explicit recursion over +-e2 branches."""
    i, j = q.local(x)

    def go(i, j, k):
        if k == H:
            return True
        if not q.h[i, j]:
            return False
        c = i + 1
        if j + 1 < q.shape[1] and q.v[c, j] and go(c, j + 1, k + 1):
            return True
        return j >= 1 and q.v[c, j - 1] and go(c, j - 1, k + 1)

    return go(i, j, 0)


def brute_components(q, mask):
    """Union-find over open edges restricted to mask."""
    nx, ny = q.shape
    parent = list(range(nx * ny))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for i in range(nx):
        for j in range(ny):
            if not mask[i, j]:
                continue
            if i + 1 < nx and q.h[i, j] and mask[i + 1, j]:
                parent[find(i * ny + j)] = find((i + 1) * ny + j)
            if j + 1 < ny and q.v[i, j] and mask[i, j + 1]:
                parent[find(i * ny + j)] = find(i * ny + j + 1)
    return np.array([[find(i * ny + j) for j in range(ny)] for i in range(nx)])


def corridor(lo=(0, 0), hi=(40, 40), start=(15, 20), length=2, entrance="below"):
    """All-open box with an isolated horizontal corridor of `length` edges."""
    q = ClusterQuery.all_open(lo, hi)
    x0, y0 = start
    cells = [(x0 + k, y0) for k in range(length + 1)]
    for c in cells:
        for nb in [(c[0], c[1] + 1), (c[0], c[1] - 1)]:
            q.close(c, nb)
    q.close((x0 - 1, y0), (x0, y0))
    q.close(cells[-1], (cells[-1][0] + 1, y0))
    if entrance == "below":
        q.open((x0, y0 - 1), (x0, y0))
    else:
        q.open((x0 - 1, y0), (x0, y0))
    return q, cells


# ------------------------------------------------------------------ construction

def test_cluster_query_requires_two_point_d2():
    with pytest.raises(LawError):
        ClusterQuery.from_field(ConductanceField(EnvironmentLaw.homogeneous(), 2, 0), (0, 0), (3, 3))
    with pytest.raises(LawError):
        ClusterQuery.from_field(ConductanceField(TP, 3, 0), (0, 0), (3, 3))


def test_open_edges_match_unit_conductance():
    fld = ConductanceField(TP, 2, 17)
    q = ClusterQuery.from_field(fld, (-3, -2), (5, 6))
    for x0 in range(-3, 5):
        for x1 in range(-2, 6):
            i, j = q.local((x0, x1))
            assert q.h[i, j] == (fld.between((x0, x1), (x0 + 1, x1)) == 1.0)
            assert q.v[i, j] == (fld.between((x0, x1), (x0, x1 + 1)) == 1.0)


def test_local_rejects_outside():
    q = ClusterQuery.all_open((0, 0), (4, 4))
    with pytest.raises(ValueError):
        q.local((5, 0))
    with pytest.raises(ValueError):
        q.close((0, 0), (2, 0))


# ------------------------------------------------------------------ good points

def test_all_open_good_for_every_horizon():
    q = ClusterQuery.all_open((0, 0), (30, 60))
    for H in [0, 1, 5, 30]:
        assert is_good_point(q, (0, 30), H).good


def test_blocked_first_column_not_good():
    q = ClusterQuery.all_open((0, 0), (6, 6))
    for r in range(7):
        q.close((1, r), (2, r))
        if r < 6:
            q.close((1, r), (1, r + 1))
    assert not is_good_point(q, (0, 3), 1).good


def test_good_point_box_too_small():
    q = ClusterQuery.all_open((0, 0), (5, 5))
    with pytest.raises(ValueError):
        is_good_point(q, (0, 3), 6)


@pytest.mark.parametrize("seed", range(6))
def test_good_point_matches_recursive_oracle(seed):
    fld = ConductanceField(EnvironmentLaw.two_point(0.75, 0.2), 2, seed)
    H = 12
    q = ClusterQuery.from_field(fld, (0, 0), (H + 6, 2 * H + 6))
    g = good_mask(q, H)[0]
    for i in range(6):
        for j in range(H, H + 6):
            ref = brute_good(q, (i, j), H)
            assert is_good_point(q, (i, j), H).good == ref
            assert g[i, j] == ref


@given(st.integers(0, 2**32), st.integers(1, 8))
def test_good_monotone_in_horizon(seed, H):
    fld = ConductanceField(EnvironmentLaw.two_point(0.7, 0.3), 2, seed)
    q = ClusterQuery.from_field(fld, (0, -10), (12, 10))
    if is_good_point(q, (0, 0), H + 1).good:
        assert is_good_point(q, (0, 0), H).good


def test_good_point_from_field_is_deterministic():
    fld = ConductanceField(TP, 2, 5)
    a = [is_good_point(fld, (k, 0), 16).good for k in range(10)]
    b = [is_good_point(ConductanceField(TP, 2, 5), (k, 0), 16).good for k in range(10)]
    assert a == b


# ------------------------------------------------------------------ clusters and traps

def test_infinite_cluster_matches_union_find():
    fld = ConductanceField(EnvironmentLaw.two_point(0.55, 0.2), 2, 3)
    q = ClusterQuery.from_field(fld, (0, 0), (14, 14))
    comp = brute_components(q, np.ones(q.shape, bool))
    border = np.zeros(q.shape, bool)
    border[0, :] = border[-1, :] = border[:, 0] = border[:, -1] = True
    roots = set(comp[border].ravel())
    ref = np.isin(comp, list(roots))
    assert np.array_equal(infinite_cluster_mask(q), ref)


def test_all_open_has_no_traps():
    q = ClusterQuery.all_open((0, 0), (40, 60))
    r = trap_of(q, (10, 30), H=8)
    assert r.is_good and r.trap_sites == [] and r.length == 0 and r.width == 0


def test_handcrafted_three_site_trap():
    q, cells = corridor(length=2)
    r = trap_of(q, cells[1], H=8)
    assert not r.is_good and r.in_cluster
    assert r.trap_sites == sorted(cells)
    assert r.length == 2 and r.width == 0
    assert not r.inconclusive
    # the entrance site has an escaping staircase
    assert trap_of(q, (15, 19), H=8).is_good


def test_trap_components_match_bad_site_oracle():
    fld = ConductanceField(EnvironmentLaw.two_point(0.8, 0.2), 2, 11)
    H = 10
    q = ClusterQuery.from_field(fld, (0, 0), (50, 60))
    tm = trap_map(q, H)
    bad = tm.cluster & ~tm.good & tm.certified
    comp = brute_components(q, bad)
    for t in range(len(tm.length)):
        ii, jj = np.nonzero(tm.labels == t)
        roots = set(comp[ii, jj])
        assert len(roots) == 1
        assert np.sum(comp[bad] == roots.pop()) == len(ii)
        assert tm.length[t] == ii.max() - ii.min()
        assert tm.width[t] == jj.max() - jj.min()


def test_good_bad_partition_of_cluster():
    fld = ConductanceField(EnvironmentLaw.two_point(0.8, 0.2), 2, 2)
    q = ClusterQuery.from_field(fld, (0, 0), (40, 50))
    tm = trap_map(q, 8)
    inside = tm.cluster & tm.certified
    in_trap = tm.labels >= 0
    assert not np.any(tm.good & in_trap)
    assert np.array_equal(inside, (tm.good & inside) | in_trap)


def test_trap_of_outside_certified_region():
    q = ClusterQuery.all_open((0, 0), (20, 20))
    with pytest.raises(ValueError):
        trap_of(q, (19, 10), H=8)


# ------------------------------------------------------------------ dead ends

def test_all_open_no_dead_ends():
    q = ClusterQuery.all_open((0, 0), (30, 30))
    for x in [(10, 10), (15, 12), (5, 20)]:
        assert not dead_end_at(q, x, 8).is_dead_end_start


@pytest.mark.parametrize("depth", [1, 2, 3, 5])
def test_handcrafted_cul_de_sac_depth(depth):
    q, cells = corridor(length=depth, entrance="left")
    r = dead_end_at(q, cells[0], 10)
    assert r.is_dead_end_start and r.depth == depth
    assert r.dead_end_sites == sorted(cells)
    # the entrance from the left is an ordinary point
    assert not dead_end_at(q, (cells[0][0] - 1, cells[0][1]), 10).is_dead_end_start


def test_isolated_component_is_not_a_dead_end():
    q, cells = corridor(length=3, entrance="left")
    q.close((cells[0][0] - 1, cells[0][1]), cells[0])
    assert not dead_end_at(q, cells[0], 10).is_dead_end_start


def test_lazy_depths_match_box_depths():
    fld = ConductanceField(EnvironmentLaw.two_point(0.7, 0.1), 2, 9)
    H = 20
    xs, dd = find_dead_ends(fld, (0, 0), (30, 30), H)
    assert len(xs) > 0
    assert np.array_equal(dead_end_depth(fld, xs, H), dd)
    q = ClusterQuery.from_field(fld, (-H - 2, -H - 2), (30 + H + 2, 30 + H + 2))
    for x, d in zip(xs[:20], dd[:20]):
        assert dead_end_at(q, x, H).depth == d


def test_dead_end_depths_vectorized_matches_reports():
    q, cells = corridor(length=4, entrance="left")
    cols = np.array([cells[0][0], cells[0][0] - 1, 3])
    rows = np.array([cells[0][1], cells[0][1], 3])
    assert list(dead_end_depths(q.h, q.v, cols, rows, 10)) == [4, 0, 0]


# ------------------------------------------------------------------ kappa pockets

def test_kappa_component_empty_at_open_site():
    q = ClusterQuery.all_open((0, 0), (6, 6))
    assert kappa_component(q, (3, 3)) == []


def test_kappa_component_two_site_pocket():
    q = ClusterQuery.all_open((0, 0), (8, 8))
    for c in [(4, 4), (5, 4)]:
        for nb in [(c[0] + 1, c[1]), (c[0] - 1, c[1]), (c[0], c[1] + 1), (c[0], c[1] - 1)]:
            q.close(c, nb)
    assert kappa_component(q, (4, 4)) == [(4, 4), (5, 4)]
    assert diameter([(4, 4), (5, 4)]) == 1


def test_kappa_component_touching_boundary():
    q = ClusterQuery.from_arrays(np.zeros((5, 5), bool), np.zeros((5, 5), bool))
    with pytest.raises(ValueError):
        kappa_component(q, (2, 2))


def test_diameter_l1():
    assert diameter([]) == 0
    assert diameter([(0, 0), (2, 3), (1, -1)]) == 5


# ------------------------------------------------------------------ statistics

@pytest.mark.parametrize("k,n", [(0, 10), (5, 10), (10, 10), (3, 1000)])
def test_wilson_contains_estimate(k, n):
    lo, hi = wilson_interval(k, n)
    assert 0 <= lo <= k / n <= hi <= 1


def test_wilson_empty():
    assert wilson_interval(0, 0) == (0.0, 1.0)


def test_log_linear_fit_exact_geometric():
    ns = np.arange(1, 9)
    s, c, r2, k = log_linear_fit(ns, 0.7 * 0.3**ns)
    assert s == pytest.approx(np.log(0.3)) and c == pytest.approx(np.log(0.7))
    assert r2 == pytest.approx(1.0) and k == 8


def test_log_linear_fit_too_few_points():
    s, _, _, k = log_linear_fit(np.arange(1, 4), np.array([0.1, 0.0, 0.0]))
    assert np.isnan(s) and k == 1


def test_tails_vanish_at_p_one():
    t = trap_tail_statistics(1.0, n_max=6, samples=2000, H=16, side=48)
    assert np.all(t.tail("L") == 0) and np.all(t.tail("W") == 0)


def test_tails_decay_at_p_09():
    t = trap_tail_statistics(0.9, n_max=8, samples=30_000, H=32, side=96, depths=True)
    for which in "LWD":
        tail = t.tail(which)
        assert np.all(np.diff(tail) <= 0)
    assert t.L_fit.slope < 0 and t.W_fit.slope < 0
    assert 0 < t.alpha_hat < 1
    assert all(lo <= p <= hi for (lo, hi), p in zip(t.wilson("L"), t.tail("L")))


def test_tail_statistics_rejects_subcritical():
    with pytest.raises(ValueError):
        trap_tail_statistics(0.5)


def test_census_is_json_and_reproducible():
    fld = ConductanceField(TP, 2, 4)
    a = trap_census(fld, (0, 0), (4, 4), H=12)
    b = trap_census(ConductanceField(TP, 2, 4), (0, 0), (4, 4), H=12)
    assert json.dumps(a) == json.dumps(b)
    assert len(a["sites"]) == 25
    assert {r["class"] for r in a["sites"]} <= {"good", "bad", "outside"}
