import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.linalg import expm

from cocyclelab.errors import Divergence
from cocyclelab.flows import (DEFAULT_CONFIG, IntegratorConfig, VectorFieldSpec, evaluate_field,
                              flow_map, integrate_flow, integrate_variational, jacobian_field,
                              singularity_eigen, tangent_map)

coord = st.floats(-20, 20, allow_nan=False)
points = st.tuples(coord, coord, st.floats(0, 45))


def test_lorenz_field_value(lorenz):
    np.testing.assert_allclose(evaluate_field(lorenz, (1, 1, 1)), [0.0, 26.0, -5.0 / 3.0],
                               rtol=0, atol=1e-14)


def test_lorenz_z_equation_recorded(lorenz):
    d = lorenz.to_dict()
    assert d["z_equation"] == "xy - b*z"
    assert VectorFieldSpec.from_dict(d) == lorenz


@settings(max_examples=40, deadline=None)
@given(points)
def test_jacobian_matches_finite_differences(p):
    spec = VectorFieldSpec.lorenz()
    J = jacobian_field(spec, p)
    h = 1e-6
    fd = np.column_stack([(evaluate_field(spec, np.add(p, h * e)) -
                           evaluate_field(spec, np.subtract(p, h * e))) / (2 * h)
                          for e in np.eye(3)])
    np.testing.assert_allclose(J, fd, atol=1e-6)


@settings(max_examples=30, deadline=None)
@given(points)
def test_divergence_is_trace(p):
    spec = VectorFieldSpec.lorenz()
    assert np.trace(jacobian_field(spec, p)) == pytest.approx(spec.divergence, abs=1e-12)


def test_singularity_eigenvalues_closed_form(lorenz):
    ev, ok = singularity_eigen(lorenz)
    s, r, b = 10.0, 28.0, 8.0 / 3.0
    disc = math.sqrt((s + 1) ** 2 + 4 * s * (r - 1))
    np.testing.assert_allclose(ev, [(-(s + 1) - disc) / 2, -b, (-(s + 1) + disc) / 2],
                               rtol=0, atol=1e-10)
    assert ok


def test_linear_singularity_eigen():
    ev, ok = singularity_eigen(VectorFieldSpec.linear_singularity(-3.0, -1.0, 2.0))
    np.testing.assert_allclose(ev, [-3.0, -1.0, 2.0])
    assert ok
    # -alpha_s must stay below alpha_u for the ordering chain
    _, ok2 = singularity_eigen(VectorFieldSpec.linear_singularity(-3.0, -2.5, 2.0))
    assert not ok2


def test_linear_singularity_rejects_bad_signs():
    with pytest.raises(ValueError):
        VectorFieldSpec.linear_singularity(-3.0, 1.0, 2.0)


def test_linear_flow_matches_exponential():
    spec = VectorFieldSpec.linear_singularity(-3.0, -1.0, 2.0)
    x0 = np.array([1.0, 0.5, -2.0])
    for t in (0.1, 1.0, 3.0):
        exact = expm(spec.linear_part * t) @ x0
        np.testing.assert_allclose(flow_map(spec, x0, t), exact, rtol=1e-8, atol=1e-12)


def test_affine_flow_box():
    spec = VectorFieldSpec.affine(np.zeros((3, 3)), (1.0, 0.0, 0.0))
    np.testing.assert_allclose(flow_map(spec, (0, 0, 0), 2.5), [2.5, 0, 0], atol=1e-12)


def test_flow_composition(lorenz):
    x0 = (1.0, 1.0, 20.0)
    a = flow_map(lorenz, flow_map(lorenz, x0, 0.7), 0.8)
    b = flow_map(lorenz, x0, 1.5)
    np.testing.assert_allclose(a, b, rtol=1e-7, atol=1e-7)


def test_dense_output_interpolates(lorenz):
    tr = integrate_flow(lorenz, (1.0, 1.0, 20.0), 2.0)
    for t in (0.33, 1.111, 1.9):
        np.testing.assert_allclose(tr(t), flow_map(lorenz, (1.0, 1.0, 20.0), t), atol=1e-5)
    np.testing.assert_allclose(tr(0.0), [1.0, 1.0, 20.0])
    with pytest.raises(ValueError):
        tr(2.5)


def test_rk4_agrees_with_dopri(lorenz):
    a = flow_map(lorenz, (1.0, 1.0, 20.0), 1.0)
    b = flow_map(lorenz, (1.0, 1.0, 20.0), 1.0, IntegratorConfig(method="rk4", max_step=1e-3))
    np.testing.assert_allclose(a, b, atol=1e-8)


def test_tangent_map_matches_finite_differences(lorenz):
    x0 = np.array([2.0, -3.0, 25.0])
    p, D = tangent_map(lorenz, x0, 0.5)
    h = 1e-6
    fd = np.column_stack([(flow_map(lorenz, x0 + h * e, 0.5) - flow_map(lorenz, x0 - h * e, 0.5))
                          / (2 * h) for e in np.eye(3)])
    np.testing.assert_allclose(D, fd, rtol=1e-5, atol=1e-5)
    np.testing.assert_allclose(p, flow_map(lorenz, x0, 0.5), atol=1e-10)


@settings(max_examples=10, deadline=None)
@given(st.floats(0.05, 2.0))
def test_liouville_determinant(t):
    spec = VectorFieldSpec.lorenz()
    path = integrate_variational(spec, (1.0, 1.0, 20.0), t)
    assert path.log_abs_det[-1] == pytest.approx(spec.divergence * t, rel=1e-7)
    assert path.trajectory.times[-1] == pytest.approx(t)


def test_variational_path_consistent(lorenz):
    path = integrate_variational(lorenz, (1.0, 1.0, 20.0), 1.0)
    _, D = tangent_map(lorenz, (1.0, 1.0, 20.0), 1.0)
    np.testing.assert_allclose(path.matrices[-1], D, rtol=1e-6, atol=1e-6)
    np.testing.assert_allclose(path.matrices[0], np.eye(3))


def test_divergence_raises():
    spec = VectorFieldSpec.linear_singularity(-3.0, -1.0, 2.0)
    cfg = IntegratorConfig(max_norm=10.0)
    with pytest.raises(Divergence):
        flow_map(spec, (0.0, 1.0, 0.0), 5.0, cfg)


def test_config_validation():
    with pytest.raises(ValueError):
        IntegratorConfig(method="euler")
    with pytest.raises(ValueError):
        IntegratorConfig(abs_tol=0.0)
    assert DEFAULT_CONFIG.to_dict()["rel_tol"] == 1e-10


def test_integrate_flow_rejects_bad_input(lorenz):
    with pytest.raises(ValueError):
        integrate_flow(lorenz, (1, 1, 1), 0.0)
    with pytest.raises(ValueError):
        integrate_flow(lorenz, (np.nan, 1, 1), 1.0)
