"""Dense math kernels: a NumPy backend and an optional compiled backend.

The NumPy backend is the default: its matmul-heavy primitives run on BLAS
and measure faster than the compiled loops at every batch size that
matters here (see benchmarks/bench_kernels.py). The Cython backend stays
available for comparison and for environments where tiny-batch dispatch
overhead dominates. The backend is picked once at import: set
PURECC_KERNELS=c to force the compiled kernels (raises if unbuilt) or
PURECC_KERNELS=py to insist on NumPy.
"""

import os

from . import _pyref

_choice = os.environ.get("PURECC_KERNELS", "auto")
if _choice not in ("auto", "c", "py"):
    raise ValueError(f"PURECC_KERNELS must be auto, c or py, not {_choice!r}")

_impl = _pyref
BACKEND = "py"
if _choice == "c":
    from . import _ckern as _impl  # type: ignore[no-redef]

    BACKEND = "c"

affine_fwd = _impl.affine_fwd
affine_bwd_x = _impl.affine_bwd_x
affine_bwd_w = _impl.affine_bwd_w
colsum = _impl.colsum
tanh_fwd = _impl.tanh_fwd
tanh_bwd = _impl.tanh_bwd
