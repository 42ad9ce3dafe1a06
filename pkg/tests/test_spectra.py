import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cocyclelab.cocycles import CocycleGenerator
from cocyclelab.errors import DimensionMismatch
from cocyclelab.flows import IntegratorConfig, VectorFieldSpec
from cocyclelab.spectra import (LyapunovSpectrum, backward_vectors, check_singular_hyperbolicity,
                                covariant_splitting, exponent_relation_check, forward_vectors,
                                qr_lyapunov_flow, qr_lyapunov_map, simplicity_verdict)

X0 = (1.0, 1.0, 20.0)


def _spec(ex, hw):
    return LyapunovSpectrum(np.array(ex, float), np.array(hw, float), 100.0, 0.5)


def test_constant_generator_spectrum(lorenz):
    g = CocycleGenerator.constant(np.diag([2.0, -1.0]))
    s = qr_lyapunov_flow(g, lorenz, X0, 200.0, transient=50.0)
    np.testing.assert_allclose(s.exponents, [2.0, -1.0], atol=1e-8)
    assert s.horizon == pytest.approx(150.0)


def test_zero_generator_spectrum(lorenz):
    s = qr_lyapunov_flow(CocycleGenerator.zero(3), lorenz, X0, 120.0, transient=20.0)
    np.testing.assert_allclose(s.exponents, 0.0, atol=1e-12)
    simple, gap, resolved = simplicity_verdict(s, 1e-4)
    assert resolved and not simple


def test_complex_constant_spectrum(lorenz):
    # eigenvalues 1 +- 2i and -1: complex pair collapses to one exponent
    M = np.array([[1.0 + 2.0j, 0.0], [0.0, -1.0]])
    s = qr_lyapunov_flow(CocycleGenerator.constant(M), lorenz, X0, 120.0, transient=20.0)
    np.testing.assert_allclose(s.exponents, [1.0, -1.0], atol=1e-8)


def test_dynamical_sum_is_divergence(lorenz):
    s = qr_lyapunov_flow(CocycleGenerator.dynamical(), lorenz, X0, 1000.0)
    assert s.exponents.sum() == pytest.approx(lorenz.divergence, abs=1e-6)
    assert np.all(np.diff(s.exponents) < 0)
    assert np.all(s.half_widths >= 0)


def test_flow_spectrum_argument_checks(lorenz):
    g = CocycleGenerator.zero(2)
    with pytest.raises(ValueError):
        qr_lyapunov_flow(g, lorenz, X0, 10.0, transient=20.0)
    with pytest.raises(ValueError):
        qr_lyapunov_flow(g, lorenz, X0, 100.0, renorm_dt=0.0, transient=10.0)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10**6), st.sampled_from([2, 3]))
def test_map_spectrum_matches_eigenvalues(seed, d):
    rng = np.random.default_rng(seed)
    while True:
        M = rng.standard_normal((d, d))
        mod = np.sort(np.abs(np.linalg.eigvals(M)))[::-1]
        if mod[-1] > 0 and np.all(-np.diff(mod) > 0.1):
            break
    s = qr_lyapunov_map([M] * 1000, discard=500)
    np.testing.assert_allclose(s.exponents, np.log(mod), atol=1e-8)


def test_map_spectrum_sorted_and_traceless_sum():
    rng = np.random.default_rng(2)
    mats = []
    for _ in range(300):
        A = rng.standard_normal((3, 3))
        mats.append(A / abs(np.linalg.det(A)) ** (1 / 3))
    s = qr_lyapunov_map(mats)
    assert np.all(np.diff(s.exponents) <= 0)
    assert s.exponents.sum() == pytest.approx(0.0, abs=1e-12)


def test_map_spectrum_renorm_every():
    M = np.diag([3.0, 0.5])
    for k in (1, 4):
        np.testing.assert_allclose(qr_lyapunov_map([M] * 200, renorm_every=k).exponents,
                                   np.log([3.0, 0.5]), atol=1e-12)


def test_map_spectrum_input_checks():
    with pytest.raises(ValueError):
        qr_lyapunov_map([np.eye(2)] * 10)
    with pytest.raises(DimensionMismatch):
        qr_lyapunov_map([np.eye(2)] * 100 + [np.eye(3)])
    with pytest.raises(ValueError):
        qr_lyapunov_map([np.eye(2)] * 100, renorm_every=0)


def test_simplicity_verdict_cases():
    assert simplicity_verdict(_spec([1.0, 0.0, -1.0], [0.01] * 3), 1e-3) == (True, 1.0, True)
    simple, gap, resolved = simplicity_verdict(_spec([0.1, 0.09], [0.05, 0.05]), 1e-3)
    assert not simple and not resolved
    simple, gap, resolved = simplicity_verdict(_spec([1e-6, -1e-6], [1e-6, 1e-6]), 1e-3)
    assert not simple and resolved
    simple, gap, resolved = simplicity_verdict(_spec([0.5, 0.2], [np.nan, np.nan]), 1e-3)
    assert not resolved


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=2, max_size=4),
       st.lists(st.floats(0, 0.5), min_size=4, max_size=4), st.floats(0, 0.1))
def test_unresolved_never_simple(ex, hw, floor):
    ex = sorted(ex, reverse=True)
    simple, _, resolved = simplicity_verdict(_spec(ex, hw[:len(ex)]), floor)
    assert resolved or not simple


def test_relation_check_drops_flow_direction():
    flow = _spec([0.9, 1e-4, -14.5], [0.01] * 3)
    mp = _spec([0.9 * 0.75, -14.5 * 0.75], [0.01] * 2)
    rc = exponent_relation_check(flow, mp, 0.75)
    np.testing.assert_allclose(rc.errors, 0.0, atol=1e-12)
    with pytest.raises(DimensionMismatch):
        exponent_relation_check(_spec([1, 0, -1, -2], [0] * 4), mp, 0.75)


def test_forward_backward_vectors_diagonal():
    P = [np.diag([2.0, 0.5])] * 30
    fw = forward_vectors(P, [1.0, 1.0])
    bw = backward_vectors(P, [1.0, 1.0])
    np.testing.assert_allclose(np.abs(fw[-1]), [1.0, 0.0], atol=1e-12)
    np.testing.assert_allclose(np.abs(bw[0]), [0.0, 1.0], atol=1e-12)


@pytest.fixture(scope="module")
def linear_split():
    spec = VectorFieldSpec.linear_singularity(-3.0, -1.0, 2.0)
    cfg = IntegratorConfig(max_norm=1e12)
    return spec, cfg, covariant_splitting(spec, (0.0, 1e-6, 1.0), 6.0, 8.0, cfg,
                                          sample_dt=0.1, n_samples=20)


def test_linear_singularity_splitting(linear_split):
    _, _, sp = linear_split
    np.testing.assert_allclose(np.abs(sp.e_s), np.tile([1.0, 0.0, 0.0], (20, 1)), atol=1e-6)
    np.testing.assert_allclose(np.abs(sp.e_u), np.tile([0.0, 1.0, 0.0], (20, 1)), atol=1e-6)
    assert sp.flags["forward_converged"] and sp.flags["backward_converged"]


def test_linear_singularity_hyperbolicity(linear_split):
    spec, cfg, sp = linear_split
    chk = check_singular_hyperbolicity(sp, spec, [0.5, 1.0], math.exp(-1.0), cfg)
    assert chk.pass_fraction["all"] == 1.0
    assert chk.fraction_at(math.exp(-1.0)) == 1.0
    with pytest.raises(ValueError):
        check_singular_hyperbolicity(sp, spec, [0.5], 1.2, cfg)


def test_lorenz_splitting_invariance(lorenz):
    """e_u at sample k+1 is DX^dt e_u at sample k (the splitting is covariant)."""
    from cocyclelab.flows import tangent_map

    sp = covariant_splitting(lorenz, X0, 20.0, 5.0, sample_dt=0.1, n_samples=10)
    for k in range(9):
        _, D = tangent_map(lorenz, sp.points[k], 0.1)
        for v, w in ((sp.e_u[k], sp.e_u[k + 1]), (sp.e_s[k], sp.e_s[k + 1])):
            u = D @ v
            assert abs(abs(u @ w) / np.linalg.norm(u) - 1) < 1e-6
    ang = sp.angles
    assert np.all(ang["s_u"] > 0)
