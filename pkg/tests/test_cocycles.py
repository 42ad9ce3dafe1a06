import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cocyclelab.cocycles import (CocycleGenerator, check_bunching_flow, check_bunching_map,
                                 estimate_hoelder, evolve_cocycle, evolve_cocycle_path,
                                 induce_along_orbit, induce_map_cocycle, perturb_generator,
                                 rng_for, sup_norm_difference)
from cocyclelab.errors import SingularMatrix
from cocyclelab.flows import tangent_map

X0 = (1.0, 1.0, 20.0)


def test_zero_generator_gives_identity(lorenz):
    g = CocycleGenerator.zero(2)
    for t in (0.0, 0.5, 3.0):
        np.testing.assert_allclose(evolve_cocycle(g, lorenz, X0, t), np.eye(2), atol=1e-14)


def test_constant_diagonal_closed_form(lorenz):
    g = CocycleGenerator.constant(np.diag([1.0, -1.0]))
    A = evolve_cocycle(g, lorenz, X0, 2.0)
    np.testing.assert_allclose(A, np.diag([math.exp(2.0), math.exp(-2.0)]), rtol=1e-9)


def test_cocycle_law(lorenz):
    g = CocycleGenerator.random(2, seed=7)
    from cocyclelab.flows import flow_map

    A_s = evolve_cocycle(g, lorenz, X0, 1.0)
    A_t = evolve_cocycle(g, lorenz, flow_map(lorenz, X0, 1.0), 1.0)
    A_ts = evolve_cocycle(g, lorenz, X0, 2.0)
    assert np.linalg.norm(A_t @ A_s - A_ts) / np.linalg.norm(A_ts) < 1e-6


@settings(max_examples=8, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.1, 2.0))
def test_traceless_keeps_determinant_one(seed, t):
    from cocyclelab.flows import VectorFieldSpec

    g = CocycleGenerator.random(3, seed=seed, scale=0.5)
    A = evolve_cocycle(g, VectorFieldSpec.lorenz(), X0, t)
    assert np.linalg.det(A) == pytest.approx(1.0, abs=1e-8)


def test_dynamical_kind_is_tangent_map(lorenz):
    g = CocycleGenerator.dynamical()
    assert g.dim == 3 and g.scalars == "real"
    np.testing.assert_allclose(evolve_cocycle(g, lorenz, X0, 0.7), tangent_map(lorenz, X0, 0.7)[1])
    with pytest.raises(TypeError):
        perturb_generator(g, 0.1, 0)


def test_complex_generator_realifies(lorenz):
    g = CocycleGenerator.random(2, seed=3, scalars="complex", scale=0.5)
    assert g.real_dim == 4
    A = evolve_cocycle(g, lorenz, X0, 0.5)
    assert A.shape == (2, 2) and np.iscomplexobj(A)
    assert abs(np.linalg.det(A)) == pytest.approx(1.0, abs=1e-8)


def test_evolve_path_matches_direct(lorenz):
    g = CocycleGenerator.random(2, seed=1)
    mats = evolve_cocycle_path(g, lorenz, X0, [0.0, 0.5, 1.5])
    np.testing.assert_allclose(mats[0], np.eye(2))
    np.testing.assert_allclose(mats[2], evolve_cocycle(g, lorenz, X0, 1.5), rtol=1e-7, atol=1e-8)
    with pytest.raises(ValueError):
        evolve_cocycle_path(g, lorenz, X0, [1.0, 0.5])


def test_negative_time_rejected(lorenz):
    with pytest.raises(ValueError):
        evolve_cocycle(CocycleGenerator.zero(2), lorenz, X0, -1.0)


def test_json_round_trip():
    for g in (CocycleGenerator.random(3, seed=2), CocycleGenerator.random(2, seed=2, scalars="complex"),
              CocycleGenerator.dynamical(), CocycleGenerator.constant(np.diag([2.0, -1.0]))):
        h = CocycleGenerator.from_json(g.to_json())
        assert h == g
        assert json.loads(g.to_json())["format_version"] == "1"


def test_generator_is_immutable():
    g = CocycleGenerator.random(2, seed=0)
    with pytest.raises(ValueError):
        g.C0[0, 0] = 1.0


def test_perturbation_properties():
    base = CocycleGenerator.zero(2)
    assert perturb_generator(base, 0.0, 5) == base
    g = perturb_generator(base, 0.3, 5)
    assert g.coefficient_norm() == pytest.approx(0.3)
    assert perturb_generator(base, 0.3, 5) == g
    assert perturb_generator(base, 0.3, 6) != g
    assert np.allclose(np.trace(g.C0), 0.0)
    with pytest.raises(ValueError):
        perturb_generator(base, -0.1, 0)


def test_rng_streams_are_keyed():
    a = rng_for(1, 2, 3).standard_normal(4)
    assert np.array_equal(a, rng_for(1, 2, 3).standard_normal(4))
    assert not np.array_equal(a, rng_for(1, 2, 4).standard_normal(4))


def test_sup_norm_difference():
    base = CocycleGenerator.zero(2)
    g = perturb_generator(base, 0.2, 1)
    pts = np.random.default_rng(0).uniform(-20, 20, (50, 3))
    d = sup_norm_difference(base, g, pts)
    # spectral norm of a sum of 7 coefficient terms with total Frobenius norm 0.2
    assert 0 < d <= 0.2 * math.sqrt(g.n_terms)


def test_hoelder_running_sup_monotone(lorenz):
    g = CocycleGenerator.random(2, seed=4)
    rng = np.random.default_rng(1)
    base = rng.uniform([-10, -10, 15], [10, 10, 35], (6, 3))
    pairs = [(p, p + rng.normal(0, 1e-2, 3)) for p in base]
    est = estimate_hoelder(g, lorenz, pairs, 1.0, 0.5)
    assert est.n_pairs == 6 and est.constant >= 0
    assert np.all(np.diff(est.running) >= 0)
    with pytest.raises(ValueError):
        estimate_hoelder(g, lorenz, pairs, 1.5, 0.5)


def test_bunching_identity_cocycle(lorenz):
    rep = check_bunching_flow(CocycleGenerator.zero(2), lorenz, [X0], 0.8, 1.0, [0.5, 1.0])
    assert rep.verdict and rep.gamma_star == pytest.approx(0.8)
    assert rep.margin == pytest.approx(-math.log(0.8))


@settings(max_examples=20, deadline=None)
@given(st.floats(0.05, 0.95), st.floats(0.1, 1.0), st.floats(1.0, 3.0))
def test_bunching_verdict_matches_gamma(theta, eta, c):
    """verdict <=> gamma_star < 1, and margin = -log(gamma_star)."""
    A = np.diag([c, 1.0 / c])
    rep = check_bunching_map([(A, 1.5), (np.eye(2), 0.7)], theta, eta)
    assert rep.verdict == (rep.gamma_star < 1)
    assert rep.margin == pytest.approx(-math.log(rep.gamma_star))
    assert rep.short_return_count == 1


def test_bunching_rejects_theta():
    with pytest.raises(ValueError, match=r"theta must lie in \(0,1\)"):
        check_bunching_map([(np.eye(2), 1.0)], 1.2, 1.0)


def test_singular_matrix_detected():
    with pytest.raises(SingularMatrix):
        check_bunching_map([(np.array([[1.0, 0.0], [0.0, 0.0]]), 1.0)], 0.5, 1.0)


def test_induce_map_cocycle_matches_along_orbit(lorenz, section, start, orbit):
    g = CocycleGenerator.random(2, seed=0)
    legs = induce_map_cocycle(g, lorenz, orbit[:5])
    taus, pts, mats = induce_along_orbit(g, lorenz, section, start, 5)
    np.testing.assert_allclose(taus, [s.tau for s in orbit[:5]], rtol=1e-8)
    for (_, a), b in zip(legs, mats):
        np.testing.assert_allclose(a, b, rtol=1e-6, atol=1e-6)
