"""NumPy reference implementation of the dense kernels.

All functions take C-contiguous float64 arrays and are the fallback used
when the compiled extension is unavailable.
"""

import numpy as np


def affine_fwd(x, w, b):
    """y = x @ w.T (+ b). x: (n, k), w: (m, k), b: (m,) or None."""
    y = x @ w.T
    if b is not None:
        y += b
    return y


def affine_bwd_x(dy, w):
    """Gradient w.r.t. the input: dy @ w. dy: (n, m), w: (m, k)."""
    return dy @ w


def affine_bwd_w(dy, x):
    """Gradient w.r.t. the weight: dy.T @ x. dy: (n, m), x: (n, k)."""
    return dy.T @ x


def colsum(dy):
    """Gradient w.r.t. the bias: column sums of dy."""
    return dy.sum(axis=0)


def tanh_fwd(z):
    return np.tanh(z)


def tanh_bwd(a, da):
    """Backward through tanh given its output a."""
    return da * (1.0 - a * a)
