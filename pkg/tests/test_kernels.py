"""Kernel lane parity and basic properties."""

import importlib

import numpy as np
import numpy.testing as npt
import pytest

from protogzsl import kernels
from protogzsl.kernels import _pykern

from oracles import entropy_direct, softmax_direct

try:
    from protogzsl.kernels import _ckern
except ImportError:
    _ckern = None

LANES = [_pykern] + ([_ckern] if _ckern is not None else [])


@pytest.fixture(params=LANES, ids=lambda m: m.__name__.split(".")[-1])
def lane(request):
    return request.param


def random_probs(rng, n, k):
    raw = rng.random((n, k)) + 1e-6
    return raw / raw.sum(axis=1, keepdims=True)


def test_backend_reported():
    assert kernels.BACKEND in ("cython", "python")


def test_softmax_matches_direct(lane):
    rng = np.random.default_rng(0)
    logits = rng.normal(0, 3, (40, 7))
    got = lane.softmax_rows(logits)
    for i in range(40):
        npt.assert_allclose(got[i], softmax_direct(logits[i]), rtol=1e-12)


def test_softmax_shift_invariance(lane):
    rng = np.random.default_rng(1)
    logits = rng.normal(0, 2, (10, 5))
    base = lane.softmax_rows(logits)
    shifted = lane.softmax_rows(logits + 123.0)
    npt.assert_allclose(base, shifted, atol=1e-12)


def test_softmax_large_logits_stable(lane):
    probs = lane.softmax_rows(np.array([[1000.0, 1000.0, 999.0]]))
    assert np.all(np.isfinite(probs))
    npt.assert_allclose(probs.sum(), 1.0, atol=1e-12)


def test_entropy_matches_direct(lane):
    rng = np.random.default_rng(2)
    probs = random_probs(rng, 30, 6)
    got = lane.entropy_rows(probs, 1e-12)
    want = [entropy_direct(row) for row in probs]
    npt.assert_allclose(got, want, rtol=1e-12)


def test_entropy_one_hot_exact_zero(lane):
    row = np.zeros((1, 8))
    row[0, 3] = 1.0
    assert lane.entropy_rows(row, 1e-12)[0] == 0.0


def test_entropy_grad_matches_finite_differences(lane):
    rng = np.random.default_rng(3)
    probs = random_probs(rng, 5, 4)
    grad = lane.entropy_rows_grad(probs, 1e-12)
    h = 1e-7
    for i in range(5):
        for j in range(4):
            up = probs.copy()
            up[i, j] += h
            down = probs.copy()
            down[i, j] -= h
            fd = (lane.entropy_rows(up, 1e-12)[i]
                  - lane.entropy_rows(down, 1e-12)[i]) / (2 * h)
            npt.assert_allclose(grad[i, j], fd, rtol=1e-6)


def test_softmax_backward_matches_finite_differences(lane):
    rng = np.random.default_rng(4)
    logits = rng.normal(0, 1, (4, 5))
    dprobs = rng.normal(0, 1, (4, 5))
    probs = lane.softmax_rows(logits)
    ds = lane.softmax_backward_rows(probs, dprobs)
    h = 1e-6
    for i in range(4):
        for j in range(5):
            up = logits.copy()
            up[i, j] += h
            down = logits.copy()
            down[i, j] -= h
            fd = (np.sum(lane.softmax_rows(up)[i] * dprobs[i])
                  - np.sum(lane.softmax_rows(down)[i] * dprobs[i])) / (2 * h)
            npt.assert_allclose(ds[i, j], fd, rtol=1e-5, atol=1e-10)


@pytest.mark.skipif(_ckern is None, reason="compiled kernels unavailable")
def test_lane_parity():
    rng = np.random.default_rng(5)
    logits = rng.normal(0, 4, (64, 17))
    p_py = _pykern.softmax_rows(logits)
    p_cy = _ckern.softmax_rows(logits)
    npt.assert_allclose(p_py, p_cy, rtol=1e-13, atol=1e-16)
    npt.assert_allclose(_pykern.entropy_rows(p_py, 1e-12),
                        _ckern.entropy_rows(p_cy, 1e-12), rtol=1e-12)
    dp = rng.normal(0, 1, logits.shape)
    npt.assert_allclose(_pykern.softmax_backward_rows(p_py, dp),
                        _ckern.softmax_backward_rows(p_cy, dp),
                        rtol=1e-12, atol=1e-15)
    npt.assert_allclose(_pykern.entropy_rows_grad(p_py, 1e-12),
                        _ckern.entropy_rows_grad(p_cy, 1e-12), rtol=1e-12)


def test_pure_python_env_forces_fallback(monkeypatch):
    monkeypatch.setenv("PROTOGZSL_PURE_PYTHON", "1")
    mod = importlib.reload(importlib.import_module("protogzsl.kernels"))
    try:
        assert mod.BACKEND == "python"
    finally:
        monkeypatch.delenv("PROTOGZSL_PURE_PYTHON")
        importlib.reload(mod)
