import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cocyclelab.cocycles import CocycleGenerator
from cocyclelab.experiments import (OBSERVABLES, ScanConfig, birkhoff_check, bunching_transfer,
                                    iterate_returns, map_oracle_check, openness_probe,
                                    random_initial_points, relation_experiment, simplicity_scan,
                                    suspension_consistency)

X0 = (1.0, 1.0, 20.0)


@pytest.fixture(scope="module")
def small_scan():
    return ScanConfig(n_seeds=6, horizon=500.0, epsilon_grid=(0.0, 0.1))


def test_scan_is_deterministic(small_scan):
    a = simplicity_scan(small_scan)
    b = simplicity_scan(small_scan)
    assert [r.to_dict() for r in a.records] == [r.to_dict() for r in b.records]


def test_scan_counts_only_resolved(small_scan):
    res = simplicity_scan(small_scan)
    zero, pert = res.per_epsilon
    # epsilon = 0 leaves the identity cocycle: every cell resolved as degenerate
    assert zero.resolved_count == 6 and zero.fraction_simple == 0.0
    recs = [r for r in res.records if r.epsilon == 0.1]
    resolved = [r for r in recs if r.resolved]
    assert pert.resolved_count == len(resolved)
    assert pert.fraction_simple == pytest.approx(sum(r.simple for r in resolved) / len(resolved))
    assert all(r.resolved for r in recs if r.simple)
    assert "consistent with" in res.statement


def test_scan_resolution_monotone_in_horizon():
    cfg = dict(n_seeds=8, epsilon_grid=(0.1,))
    short = simplicity_scan(ScanConfig(horizon=500.0, **cfg)).per_epsilon[0]
    long = simplicity_scan(ScanConfig(horizon=1000.0, **cfg)).per_epsilon[0]
    assert long.unresolved_count <= short.unresolved_count


def test_scan_parallel_matches_serial(small_scan):
    a = simplicity_scan(small_scan, jobs=1)
    b = simplicity_scan(small_scan, jobs=2)
    assert [r.to_dict() for r in a.records] == [r.to_dict() for r in b.records]


def test_scan_config_validation():
    with pytest.raises(ValueError):
        ScanConfig(epsilon_grid=(0.2, 0.1))
    with pytest.raises(ValueError):
        ScanConfig(n_seeds=0)
    with pytest.raises(ValueError):
        ScanConfig(dim=3, base_generator=CocycleGenerator.zero(2))


def test_openness_zero_delta_keeps_everything():
    g = CocycleGenerator.random(2, seed=0)
    cfg = ScanConfig(base_generator=g, horizon=300.0)
    r = openness_probe(g, [0.0, 0.01], 3, cfg)
    assert r.retention[0] == 1.0
    assert r.min_gaps[0] == pytest.approx(r.base_min_gap, abs=0)
    assert r.threshold_heuristic == pytest.approx(r.base_min_gap / (10 * 0.75 * 2))


def test_suspension_identity_cocycle(lorenz, section, start):
    r = suspension_consistency(CocycleGenerator.zero(2), lorenz, section, 10, x_start=start,
                               n_matrix=5)
    assert r.max_exponent_rel_diff == 0.0
    assert max(r.matrix_errors) == 0.0


def test_suspension_constant_diagonal(lorenz, section, start):
    r = suspension_consistency(CocycleGenerator.constant(np.diag([1.0, -1.0])), lorenz, section,
                               20, x_start=start, n_matrix=5)
    np.testing.assert_allclose(r.legs_exponents, [1.0, -1.0], atol=1e-8)
    assert max(r.matrix_errors) < 1e-8
    assert r.time_identity_error < 1e-8


def test_suspension_random_generator(lorenz, section, start):
    r = suspension_consistency(CocycleGenerator.random(2, seed=0), lorenz, section, 100,
                               x_start=start)
    assert r.max_exponent_rel_diff < 0.01
    assert r.time_identity_error < 1e-8
    # accumulated integrator error grows with the number of legs
    k = np.arange(1, len(r.matrix_errors) + 1)
    slope = np.polyfit(k, r.matrix_errors, 1)[0]
    assert slope > 0


def test_birkhoff_constant_observable(lorenz):
    rep = birkhoff_check(lorenz, "one", random_initial_points(3, 0), 100.0)
    assert rep.averages == [1.0, 1.0, 1.0] and rep.spread == 0.0


def test_birkhoff_averages_agree_across_points(lorenz):
    # finite-sample spread fluctuates too much to test a decay rate; check the size instead
    names = ["z", "z2", "z_above_27"]  # x averages to ~0, relative spread is ill-conditioned
    a = birkhoff_check(lorenz, names, random_initial_points(4, 1), 2000.0)
    b = birkhoff_check(lorenz, names, random_initial_points(4, 2), 2000.0)
    for ra, rb in zip(a, b):
        assert ra.relative_spread < 0.02
        assert np.mean(ra.averages) == pytest.approx(np.mean(rb.averages), rel=0.02)


def test_birkhoff_rejects_unknown_observable(lorenz):
    with pytest.raises(ValueError):
        birkhoff_check(lorenz, "w", [X0], 10.0)
    assert set(OBSERVABLES) == {"one", "x", "y", "z", "z2", "z_above_27"}


def test_random_initial_points_deterministic():
    assert random_initial_points(4, 9) == random_initial_points(4, 9)
    assert random_initial_points(4, 9) != random_initial_points(4, 10)


def test_iterate_returns(orbit):
    pairs = iterate_returns(orbit[:6], 2)
    assert len(pairs) == 3
    assert pairs[0][1] == pytest.approx(orbit[0].tau + orbit[1].tau)


@settings(max_examples=4, deadline=None)
@given(st.integers(0, 1000), st.floats(0.0, 0.12), st.floats(0.75, 0.95))
def test_bunching_transfer_property(lorenz, orbit, seed, scale, theta):
    g = CocycleGenerator.random(2, seed=seed, scale=scale)
    r = bunching_transfer(g, lorenz, orbit[:40], theta, 1.0, [0.5, 1.0], order=2)
    assert r.all_tau_above_one
    assert r.transfer_holds


def test_map_oracle_small():
    r = map_oracle_check(n_matrices=5, dims=(2,), seed=3)
    assert r.max_error < 1e-8 and len(r.errors) == 5


def test_relation_experiment_runs(lorenz, section, start):
    g = CocycleGenerator.random(2, seed=0)
    r = relation_experiment(g, lorenz, section, 500, x_start=start)
    assert len(r.errors) == 2 and all(math.isfinite(e) for e in r.errors)
    assert 0.7 < r.mean_tau < 0.8
    with pytest.raises(ValueError):
        relation_experiment(CocycleGenerator.dynamical(), lorenz, section, 500, x_start=start)
