import os
import subprocess
import sys

import numpy as np
import pytest

from cocyclelab import kernels
from cocyclelab.cocycles import CocycleGenerator
from cocyclelab.flows import DEFAULT_CONFIG, IntegratorConfig, VectorFieldSpec, kernel_model

try:
    compiled = kernels.get_backend("compiled")
except ImportError:
    compiled = None
python = kernels.get_backend("python")

needs_compiled = pytest.mark.skipif(compiled is None, reason="compiled kernel not built")

LORENZ = VectorFieldSpec.lorenz()
Y0 = np.array([1.0, 1.0, 20.0])


def gen_model(seed=0, dim=2):
    g = CocycleGenerator.random(dim, seed=seed)
    return g.kernel_model(LORENZ), np.concatenate([Y0, np.eye(dim).ravel()])


@needs_compiled
@pytest.mark.parametrize("method", ["dopri5", "rk4"])
def test_integrate_parity(method):
    cfg = IntegratorConfig(method=method, max_step=0.01 if method == "rk4" else 0.1)
    model, y0 = gen_model()
    a = compiled.integrate(model, y0, 5.0, cfg.opts(), True)
    b = python.integrate(model, y0, 5.0, cfg.opts(), True)
    assert a[0] == b[0] == kernels.OK
    assert a[3] == b[3]
    np.testing.assert_allclose(a[1], b[1], rtol=1e-9, atol=1e-9)
    # step times agree up to summation order, amplified by the chaotic base
    np.testing.assert_allclose(a[4], b[4], rtol=1e-6, atol=1e-8)


@needs_compiled
def test_integrate_tangent_parity():
    model = kernel_model(LORENZ, block=1, m=3)
    y0 = np.concatenate([Y0, np.eye(3).ravel()])
    a = compiled.integrate(model, y0, 1.0, DEFAULT_CONFIG.opts(), False)
    b = python.integrate(model, y0, 1.0, DEFAULT_CONFIG.opts(), False)
    np.testing.assert_allclose(a[1], b[1], rtol=1e-9)


@needs_compiled
@pytest.mark.parametrize("renorm", [False, True])
def test_integrate_events_parity(renorm):
    model, y0 = gen_model(seed=1)
    args = (model, y0, 100.0, [0.0, 0.0, 27.0], [0.0, 0.0, 1.0], -1, 0.05, 20,
            DEFAULT_CONFIG.opts(), renorm)
    a = compiled.integrate_events(*args)
    b = python.integrate_events(*args)
    assert a[0] == b[0] == kernels.OK
    np.testing.assert_allclose(a[1], b[1], rtol=1e-9)
    np.testing.assert_allclose(a[2], b[2], rtol=1e-6, atol=1e-6)
    np.testing.assert_array_equal(a[3], b[3])
    np.testing.assert_allclose(a[4], b[4], rtol=1e-6, atol=1e-6)


@needs_compiled
def test_lyapunov_flow_parity():
    model, y0 = gen_model(seed=2, dim=3)
    a = compiled.lyapunov_flow(model, y0, 0.5, 20, DEFAULT_CONFIG.opts())
    b = python.lyapunov_flow(model, y0, 0.5, 20, DEFAULT_CONFIG.opts())
    assert a[0] == b[0] == kernels.OK and a[4] == b[4] == 20
    np.testing.assert_allclose(a[1], b[1], rtol=1e-8, atol=1e-10)


@needs_compiled
def test_qr_parity(rng):
    B = rng.standard_normal((4, 3))
    Qa, Ra = compiled.qr(B)
    Qb, Rb = python.qr(B)
    np.testing.assert_allclose(Qa, Qb, atol=1e-13)
    np.testing.assert_allclose(Ra, Rb, atol=1e-13)
    np.testing.assert_allclose(Qa @ Ra, B, atol=1e-13)
    assert np.all(np.diag(Ra) > 0)


@pytest.mark.parametrize("be", ["python", pytest.param("compiled", marks=needs_compiled)])
def test_divergence_status(be):
    backend = kernels.get_backend(be)
    model = kernel_model(LORENZ)
    opts = IntegratorConfig(max_norm=5.0).opts()
    assert backend.integrate(model, Y0, 1.0, opts, False)[0] == kernels.DIVERGENCE


def test_get_backend_rejects_unknown():
    with pytest.raises(ValueError):
        kernels.get_backend("fortran")


def test_pure_python_env_switch():
    env = dict(os.environ, COCYCLELAB_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c",
                          "from cocyclelab import kernels; print(kernels.BACKEND_NAME)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
