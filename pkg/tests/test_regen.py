import io
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from rcwalk.coupling import InsufficientRegenerations
from rcwalk.env import ConductanceField, EnvironmentLaw, LawError
from rcwalk.estimate import estimate_velocity
from rcwalk.kernel import BiasedKernel, WalkPath, WalkStream, homogeneous_speed, run_path
from rcwalk.regen import (dead_end_occupation, detect_fresh_epochs, detect_regenerations,
                          e1_paths, first_hitting_time, inter_regeneration_moments,
                          ladder_decomposition, pooled_regeneration_speed, regeneration_durations,
                          regeneration_speed, write_ladder_csv, write_regenerations_csv)
from rcwalk.traps import dead_end_depth, find_dead_ends

HOM = EnvironmentLaw.homogeneous()
walks = st.lists(st.sampled_from([-1, 0, 1]), min_size=0, max_size=150).map(
    lambda s: np.r_[0, np.cumsum(s)].astype(np.int64))


def brute_fresh(x):
    return [n for n in range(1, len(x)) if all(x[n] > x[k] for k in range(n))]


def brute_regen(x):
    return [n for n in brute_fresh(x) if all(x[n] < x[k] for k in range(n + 1, len(x)))]


def test_hitting_examples():
    p = WalkPath(np.zeros(2, np.int64), np.array([0, 0], np.int8))
    assert first_hitting_time(p, 0).time == 0
    assert first_hitting_time(p, 2).time == 2
    assert first_hitting_time(p, 2.7).time == 2
    rec = first_hitting_time(p, 5)
    assert rec.censored and rec.level == 5


@given(x=walks, h=st.integers(-5, 5))
def test_hitting_linear_scan(x, h):
    rec = first_hitting_time(x, h)
    scan = next((n for n, v in enumerate(x) if v == h), None)
    assert rec.time == scan


def test_fresh_examples():
    assert list(detect_fresh_epochs(np.arange(6))) == [1, 2, 3, 4, 5]
    # 0, e1, e1+e2, e2
    p = WalkPath(np.zeros(2, np.int64), np.array([0, 1, 2], np.int8))
    assert list(detect_fresh_epochs(p)) == [1]
    assert detect_fresh_epochs(np.array([0])).size == 0


@given(x=walks)
def test_fresh_and_regenerations_brute_force(x):
    assert list(detect_fresh_epochs(x)) == brute_fresh(x)
    log = detect_regenerations(x, confirm_margin=0)
    assert list(log.regenerations) == brute_regen(x)
    assert set(log.regenerations) <= set(log.fresh_epochs)


def test_regenerations_increasing_path():
    log = detect_regenerations(np.arange(100), confirm_margin=10)
    assert list(log.regenerations) == list(range(1, 90))
    assert log.censored_tail


def test_revisit_excludes_epoch():
    x = np.array([0, 1, 2, 1, 2, 3, 4, 5, 6, 7, 8])
    log = detect_regenerations(x, confirm_margin=0)
    assert list(log.regenerations) == [5, 6, 7, 8, 9, 10]  # levels 1 and 2 are revisited


def test_regeneration_speed_homogeneous():
    lam = 1.0
    paths = e1_paths(HOM, lam, 20_000, 40, 3)
    rs = pooled_regeneration_speed(paths)
    assert abs(rs.ratio[0] - homogeneous_speed(lam, 2)) < 3 * rs.stderr[0]
    assert np.all(rs.displacements[:, 0] >= 1)
    single = regeneration_speed(paths[0], detect_regenerations(paths[0]))
    assert single.increments > 100 and single.stderr[0] > 0


def test_e1_paths_match_plain_estimator():
    paths = e1_paths(EnvironmentLaw.uniform_elliptic(0.2), 0.7, 3000, 20, 4)
    s = estimate_velocity(EnvironmentLaw.uniform_elliptic(0.2), 0.7, 3000, 20, 4)
    assert np.allclose(paths[:, -1] / 3000, s.extra["per_replica"])


def test_regeneration_speed_needs_three():
    x = np.array([0, 1, 2, 1, 0])
    with pytest.raises(InsufficientRegenerations):
        regeneration_speed(x, detect_regenerations(x, 0))
    with pytest.raises(InsufficientRegenerations):
        pooled_regeneration_speed([x])


def test_increments_stationary():
    x = e1_paths(EnvironmentLaw.uniform_elliptic(0.3), 0.8, 200_000, 1, 5)[0]
    dur = regeneration_durations(x)
    half = dur.size // 2
    assert stats.ks_2samp(dur[:half], dur[half:]).pvalue > 0.001


def test_moment_lower_bound_across_grid():
    means = []
    for lam in (0.25, 0.5, 1.0):
        paths = e1_paths(HOM, lam, 40_000, 8, 6)
        rep = inter_regeneration_moments([regeneration_durations(p) for p in paths], lam)
        means.append(rep.mean)
        assert rep.count > 50 and math.isfinite(rep.exp_moment)
    assert min(means) > 0.1


def test_exp_moment_stable_under_horizon_doubling():
    lam = 1.0
    reps = []
    for n in (20_000, 40_000):
        paths = e1_paths(HOM, lam, n, 8, 7)
        reps.append(inter_regeneration_moments([regeneration_durations(p) for p in paths], lam))
    a, b = reps
    assert abs(a.exp_moment - b.exp_moment) < 4 * math.hypot(a.exp_moment_se, b.exp_moment_se)


def test_moments_single_value():
    rep = inter_regeneration_moments(np.array([4]), 0.5)
    assert rep.count == 1 and rep.mean == 1.0 and math.isinf(rep.mean_se)


def test_ladders_all_open():
    fld = ConductanceField(EnvironmentLaw.two_point(1.0, 0.5), 2, 1)
    p = run_path(BiasedKernel(fld, 1.0), (0, 0), 2000, WalkStream(1))
    lad = ladder_decomposition(p, fld)
    assert np.all(lad.depths == 0) and np.all(lad.occupation == 0)
    x = p.e1()
    fresh = detect_fresh_epochs(p)
    assert list(lad.times[1:]) == list(fresh[: len(lad.times) - 1])
    assert np.all(np.diff(x[lad.times]) == 1)


def test_ladder_invariants_with_dead_ends():
    fld = ConductanceField(EnvironmentLaw.two_point(0.7, 0.05), 2, 3)
    p = run_path(BiasedKernel(fld, 1.5), (0, 0), 20_000, WalkStream(3))
    lad = ladder_decomposition(p, fld)
    x = p.e1()
    L = lad.times
    assert np.all(x[L[1:]] > x[L[:-1]] + lad.depths[:-1])
    assert np.all(np.diff(L) >= lad.occupation[:-1])
    assert np.all(lad.depths >= 0)
    assert np.any(lad.depths > 0)
    with pytest.raises(LawError):
        ladder_decomposition(p, ConductanceField(HOM, 2, 0))


def test_dead_end_clock_by_replay():
    # locate a real dead end, start a walk at its entrance and recount the slab exit by hand
    fld = ConductanceField(EnvironmentLaw.two_point(0.7, 0.05), 2, 11)
    xs, dd = find_dead_ends(fld, (0, 0), (60, 60), 32)
    assert len(dd) > 0
    k = int(np.argmax(dd))
    x0, d = xs[k], int(dd[k])
    assert dead_end_depth(fld, xs[k : k + 1], 32)[0] == d >= 1
    p = run_path(BiasedKernel(fld, 1.0), x0, 5000, WalkStream(2))
    lad = ladder_decomposition(p, fld, H=32)
    assert lad.depths[0] == d
    e1 = p.e1()
    t = next(n for n in range(1, len(e1)) if e1[n] <= e1[0] or e1[n] > e1[0] + d)
    assert lad.occupation[0] == t


def test_occupation_study_runs():
    st_ = dead_end_occupation(0.75, [1e-1, 1e-2], 2.0, 1, boxes=2, side=60, walks=3, cap=10**5, H=32)
    assert st_.dead_ends > 0
    assert st_.cond_mean.shape == (2,) and np.all(st_.cond_mean >= 1)
    assert st_.paired_diff.shape == (1,)
    assert st_.sites_scanned == 2 * 60 * 60


def test_csv_exports():
    buf = io.StringIO()
    write_regenerations_csv(buf, [(0, 3, 2), (0, 8, 5)])
    assert buf.getvalue().splitlines() == ["replica,R,x1", "0,3,2", "0,8,5"]
    buf = io.StringIO()
    write_ladder_csv(buf, [(1, 0, 2, 7)])
    assert buf.getvalue().splitlines() == ["replica,L,depth,T_A", "1,0,2,7"]
