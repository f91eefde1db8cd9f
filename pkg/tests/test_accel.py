import os
import subprocess
import sys

import numpy as np
import pytest

from sqglab import _accel


def test_backend_flag():
    assert _accel.BACKEND in ("cython", "python")


@pytest.mark.skipif(_accel.BACKEND != "cython", reason="compiled core not built")
def test_compiled_matches_fallback():
    rng = np.random.default_rng(5)
    n = 40
    F = rng.standard_normal((n, n))
    sample = np.zeros((n, n), np.uint8)
    sample[5:-5, 5:-5] = 1
    offs = np.array([(i, j) for i in range(-3, 4) for j in range(-3, 4) if i or j], np.int64)
    w = 1.0 / np.hypot(offs[:, 0], offs[:, 1])
    a = _accel.holder_sup(F, sample, offs, w)
    b = _accel.holder_sup_py(F, sample.astype(bool), offs, w)
    assert np.allclose(a[0], b[0], rtol=0, atol=1e-13)
    assert np.allclose(_accel.singular_sum(F, offs, w ** 3, sample),
                       _accel.singular_sum_py(F, offs, w ** 3, sample.astype(bool)), rtol=0, atol=1e-12)
    m = 16
    u = rng.standard_normal((m, m))
    b11, b22 = 1 + 0.1 * rng.random((m, m)), 1 + 0.1 * rng.random((m, m))
    b12 = 0.05 * rng.random((m, m))
    args = (u, b11, b12, b22, np.ones((m, m)))
    assert np.allclose(_accel.frozen_sum(*args, np.ones((m, m), bool), 4),
                       _accel.frozen_sum_py(*args, np.ones((m, m), bool), 4), rtol=0, atol=1e-12)


def test_pure_python_switch():
    out = subprocess.run([sys.executable, "-c", "from sqglab import _accel; print(_accel.BACKEND)"],
                         env={**os.environ, "SQGLAB_PURE": "1"}, capture_output=True, text=True)
    assert out.stdout.strip() == "python"
