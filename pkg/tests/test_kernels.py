import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sstage.autodiff import _pykernels, kernels

try:
    from sstage.autodiff import _ckernels
except ImportError:  # pragma: no cover - extension not built
    _ckernels = None

needs_ext = pytest.mark.skipif(_ckernels is None, reason="compiled extension not built")


@st.composite
def conv_case(draw):
    B = draw(st.integers(1, 2))
    cin, cout = draw(st.integers(1, 4)), draw(st.integers(1, 4))
    kh, kw = draw(st.sampled_from([1, 3])), draw(st.sampled_from([1, 3]))
    ph, pw = draw(st.integers(0, kh // 2)), draw(st.integers(0, kw // 2))
    H = draw(st.integers(max(1, kh - 2 * ph), 6))
    W = draw(st.integers(max(1, kw - 2 * pw), 6))
    seed = draw(st.integers(0, 2**31))
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((B, cin, H, W))
    w = rng.standard_normal((cin, cout, kh, kw))
    b = rng.standard_normal(cout)
    return x, w, b, ph, pw


@needs_ext
@given(conv_case(), st.sampled_from([np.float32, np.float64]))
def test_backends_agree(case, dtype):
    x, w, b, ph, pw = (a.astype(dtype) if isinstance(a, np.ndarray) else a for a in case)
    yc = _ckernels.conv2d_forward(x, w, b, ph, pw)
    yp = _pykernels.conv2d_forward(x, w, b, ph, pw)
    assert yc.dtype == yp.dtype == dtype
    tol = 1e-5 if dtype == np.float32 else 1e-12
    assert np.allclose(yc, yp, rtol=tol, atol=tol)
    gy = np.random.default_rng(0).standard_normal(yc.shape).astype(dtype)
    for gc, gp in zip(_ckernels.conv2d_backward(gy, x, w, ph, pw), _pykernels.conv2d_backward(gy, x, w, ph, pw)):
        assert gc.shape == gp.shape and gc.dtype == gp.dtype
        assert np.allclose(gc, gp, rtol=tol, atol=tol)


@given(conv_case())
def test_backward_is_adjoint_of_forward(case):
    # <conv(x), gy> is bilinear in (x, w): its x-gradient is the backward pass
    x, w, b, ph, pw = case
    gy = np.random.default_rng(1).standard_normal(kernels.conv2d_forward(x, w, b, ph, pw).shape)
    gx, gw, gb = kernels.conv2d_backward(gy, x, w, ph, pw)
    zero = np.zeros_like(b)
    lhs = np.sum(kernels.conv2d_forward(x, w, zero, ph, pw) * gy)
    assert np.isclose(lhs, np.sum(gx * x), rtol=1e-9, atol=1e-9)
    assert np.isclose(lhs, np.sum(gw * w), rtol=1e-9, atol=1e-9)
    assert np.allclose(gb, gy.sum(axis=(0, 2, 3)))


def test_non_contiguous_inputs_are_accepted():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((1, 4, 3, 2)).transpose(0, 1, 3, 2)
    w = rng.standard_normal((4, 2, 3, 3))
    y = kernels.conv2d_forward(x, w, np.zeros(2), 1, 1)
    assert np.allclose(y, _pykernels.conv2d_forward(np.ascontiguousarray(x), w, np.zeros(2), 1, 1))


def test_backend_reported():
    assert kernels.BACKEND in ("cython", "python")
    if _ckernels is not None:
        assert kernels.BACKEND == "cython"


def test_environment_forces_fallback():
    env = dict(os.environ, SSTAGE_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "from sstage.autodiff import kernels; print(kernels.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


def test_model_output_independent_of_backend(monkeypatch):
    from sstage.gradsuite import gradient_scene
    from sstage.model import STAGE, ModelConfig

    scene = gradient_scene(3, agents=3)
    model = STAGE(ModelConfig(modes=3), seed=1, dtype=np.float64).eval()
    ref = model.predict(scene)
    monkeypatch.setattr(kernels, "_impl", _pykernels)
    alt = model.predict(scene)
    assert np.allclose(ref.displacements, alt.displacements, atol=1e-12)
    assert np.allclose(ref.probs, alt.probs, atol=1e-12)
