from __future__ import annotations

import os
import subprocess
import sys

import numpy as np
import pytest

from robustform import _backend, _fallback

compiled = pytest.importorskip("robustform._kernels")


def _level(rng, n, b, m, n_next=None):
    n_next = n_next or n * b
    child = np.arange(n * b, dtype=np.int64).reshape(n, b) % n_next
    kernels = rng.dirichlet(np.ones(b), size=(n, m))
    return child, kernels


@pytest.mark.parametrize("seed", range(20))
def test_sup_step_agrees(seed):
    rng = np.random.default_rng(seed)
    n, b, m = int(rng.integers(1, 200)), int(rng.integers(2, 7)), int(rng.integers(1, 6))
    child, kernels = _level(rng, n, b, m)
    v = rng.normal(size=n * b)
    vf, af = _fallback.sup_step(v, child, kernels)
    vc, ac = compiled.sup_step(v, child, kernels.copy())
    np.testing.assert_allclose(vc, vf, rtol=0, atol=1e-14)
    np.testing.assert_array_equal(ac, af)


def test_sup_step_ties_pick_lowest_index():
    child = np.array([[0, 1]], dtype=np.int64)
    kernels = np.array([[[0.5, 0.5], [0.5, 0.5], [1.0, 0.0]]])
    v = np.array([1.0, 1.0])
    for fn in (_fallback.sup_step, compiled.sup_step):
        val, arg = fn(v, child, kernels)
        assert val[0] == 1.0 and arg[0] == 0


@pytest.mark.parametrize("seed", range(10))
def test_expect_step_agrees(seed):
    rng = np.random.default_rng(100 + seed)
    n, b = int(rng.integers(1, 300)), int(rng.integers(2, 7))
    child, kernels = _level(rng, n, b, 1)
    w = kernels[:, 0]
    v = rng.normal(size=n * b)
    np.testing.assert_allclose(compiled.expect_step(v, child, w), _fallback.expect_step(v, child, w), atol=1e-14)


@pytest.mark.parametrize("seed", range(20))
def test_minimax_step_agrees(seed):
    rng = np.random.default_rng(200 + seed)
    n, b = int(rng.integers(1, 150)), int(rng.integers(2, 7))
    child = np.arange(n * b, dtype=np.int64).reshape(n, b)
    s_now = rng.uniform(50, 150, size=n)
    s_next = np.repeat(s_now, b) * rng.uniform(0.7, 1.3, size=n * b)
    v_next = rng.normal(size=n * b) * 10
    v_now = rng.normal(size=n)
    support = rng.random((n, b)) < 0.8
    support[:, 0] = True
    df, rf = _fallback.minimax_step(v_next, v_now, s_next, s_now, child, support)
    dc, rc = compiled.minimax_step(v_next, v_now, s_next, s_now, child, support.astype(np.uint8))
    np.testing.assert_allclose(rc, rf, rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(dc, df, rtol=1e-12, atol=1e-12)


def test_backend_name():
    assert _backend.NAME in ("cython", "python")


def test_forced_fallback_gives_same_prices():
    code = (
        "import numpy as np\n"
        "from robustform import BACKEND\n"
        "from robustform.config import load_config\n"
        "from robustform.f_expectation import sublinear_expectation\n"
        "cfg = load_config('configs/corpus_default.json')\n"
        "x = np.maximum(cfg.tree.asset[-1] - 100, 0)\n"
        "print(BACKEND, repr(sublinear_expectation(cfg.tree, cfg.ambiguity, x).root))\n"
    )
    root = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
    out = {}
    for name in ("python", ""):
        env = dict(os.environ, ROBUSTFORM_BACKEND=name)
        res = subprocess.run([sys.executable, "-c", code], cwd=root, env=env, capture_output=True, text=True, check=True)
        backend, value = res.stdout.split()
        out[backend] = float(value)
    assert set(out) == {"python", "cython"}
    assert out["python"] == pytest.approx(out["cython"], abs=1e-13)
