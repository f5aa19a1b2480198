"""Cross-checks between the numba loop kernels and their numpy fallbacks."""

import os
import subprocess
import sys

import numpy as np

from invattn._backend import HAVE_NUMBA
from invattn.kernels import (
    backend_name,
    jacobi_eigvals_loops,
    jacobi_eigvals_numpy,
    lu_logabsdet_loops,
    lu_logabsdet_numpy,
    ssim_mean_loops,
    ssim_mean_numpy,
)


def test_backend_name_valid():
    assert backend_name() in ("numba", "numpy")


def test_jacobi_flavors_agree():
    rng = np.random.default_rng(0)
    for n in (2, 3, 8, 17, 32):
        a = rng.standard_normal((n, n))
        sym = a @ a.T
        got_np = jacobi_eigvals_numpy(sym)
        got_nb = jacobi_eigvals_loops(sym)
        assert np.allclose(got_np, got_nb, atol=1e-10)
        assert np.allclose(got_np, np.sort(np.linalg.eigvalsh(sym))[::-1], atol=1e-9)


def test_jacobi_handles_tiny_offdiagonals():
    a = np.diag([1.0, 2.0, 3.0])
    a[0, 1] = a[1, 0] = 1e-280
    assert np.allclose(jacobi_eigvals_numpy(a), [3.0, 2.0, 1.0], atol=1e-12)
    assert np.allclose(jacobi_eigvals_loops(a), [3.0, 2.0, 1.0], atol=1e-12)


def test_lu_flavors_agree():
    rng = np.random.default_rng(1)
    for n in (1, 2, 7, 20, 40):
        m = rng.standard_normal((n, n))
        la, sa = lu_logabsdet_numpy(m)
        lb, sb = lu_logabsdet_loops(m)
        assert sa == sb
        assert abs(la - lb) <= 1e-10


def test_lu_flavors_agree_on_singular():
    m = np.array([[1.0, 2.0], [0.5, 1.0]])
    assert lu_logabsdet_numpy(m) == lu_logabsdet_loops(m)


def test_ssim_flavors_agree():
    rng = np.random.default_rng(2)
    a = np.ascontiguousarray(rng.uniform(0, 255, (3, 24, 18)))
    b = np.ascontiguousarray(np.clip(a + rng.normal(0, 25, a.shape), 0, 255))
    c1, c2 = (0.01 * 255) ** 2, (0.03 * 255) ** 2
    got_np = ssim_mean_numpy(a, b, 8, c1, c2)
    got_nb = ssim_mean_loops(a, b, 8, c1, c2)
    assert abs(got_np - got_nb) <= 1e-12


def test_env_flag_selects_numpy_path():
    env = dict(os.environ, INVATTN_NUMBA="0")
    out = subprocess.run(
        [sys.executable, "-c", "from invattn.kernels import backend_name; print(backend_name())"],
        env=env,
        capture_output=True,
        text=True,
        check=True,
    )
    assert out.stdout.strip() == "numpy"


def test_env_flag_auto_uses_numba_when_available():
    if not HAVE_NUMBA:
        return
    env = dict(os.environ, INVATTN_NUMBA="auto")
    out = subprocess.run(
        [sys.executable, "-c", "from invattn.kernels import backend_name; print(backend_name())"],
        env=env,
        capture_output=True,
        text=True,
        check=True,
    )
    assert out.stdout.strip() == "numba"
