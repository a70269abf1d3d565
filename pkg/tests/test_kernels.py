"""Backend parity and shape checks for the dense kernels."""

import numpy as np
import pytest

from purecc.kernels import _pyref

try:
    from purecc.kernels import _ckern
except ImportError:
    _ckern = None

needs_ext = pytest.mark.skipif(_ckern is None, reason="compiled kernels not built")

FUNCS = ["affine_fwd", "affine_bwd_x", "affine_bwd_w", "colsum", "tanh_fwd", "tanh_bwd"]


def _random_args(rng, name):
    n, m, k = rng.integers(1, 40, size=3)
    if name == "affine_fwd":
        b = rng.standard_normal(m) if rng.random() < 0.5 else None
        return (rng.standard_normal((n, k)), rng.standard_normal((m, k)), b)
    if name == "affine_bwd_x":
        return (rng.standard_normal((n, m)), rng.standard_normal((m, k)))
    if name == "affine_bwd_w":
        return (rng.standard_normal((n, m)), rng.standard_normal((n, k)))
    if name in ("colsum", "tanh_fwd"):
        return (rng.standard_normal((n, m)),)
    return (np.tanh(rng.standard_normal((n, m))), rng.standard_normal((n, m)))


@needs_ext
@pytest.mark.parametrize("name", FUNCS)
def test_backends_agree(name):
    rng = np.random.default_rng(42)
    for _ in range(25):
        args = _random_args(rng, name)
        ref = getattr(_pyref, name)(*args)
        fast = getattr(_ckern, name)(*args)
        assert fast.shape == ref.shape
        np.testing.assert_allclose(fast, ref, rtol=1e-12, atol=1e-13)


def test_affine_fwd_matches_manual():
    x = np.array([[1.0, 2.0], [3.0, -1.0]])
    w = np.array([[0.5, -0.25], [2.0, 1.0], [0.0, 1.0]])
    b = np.array([1.0, 0.0, -1.0])
    expected = x @ w.T + b
    np.testing.assert_array_equal(_pyref.affine_fwd(x, w, b), expected)


def test_tanh_roundtrip_gradient_identity():
    rng = np.random.default_rng(3)
    z = rng.standard_normal((5, 7))
    a = _pyref.tanh_fwd(z)
    da = rng.standard_normal((5, 7))
    np.testing.assert_allclose(_pyref.tanh_bwd(a, da), da * (1 - np.tanh(z) ** 2))


def test_dispatch_exposes_backend():
    import purecc.kernels as K

    assert K.BACKEND in ("c", "py")
    assert callable(K.affine_fwd)
