"""Compare the compiled kernels against the NumPy fallback.

Times the raw kernel primitives on representative shapes, then a full
network forward+backward with each backend swapped in. Run with:

    python benchmarks/bench_kernels.py
"""

import time

import numpy as np

import purecc.kernels as K
from purecc.condition import Condition
from purecc.kernels import _pyref
from purecc.net import NetworkConfig, build_network

try:
    from purecc.kernels import _ckern
except ImportError:
    _ckern = None


def timeit(fn, *args, min_time=0.2):
    fn(*args)  # warmup
    n, elapsed = 0, 0.0
    while elapsed < min_time:
        t0 = time.perf_counter()
        fn(*args)
        elapsed += time.perf_counter() - t0
        n += 1
    return elapsed / n


def bench_primitives():
    rng = np.random.default_rng(0)
    print(f"{'kernel':14s} {'shape':>18s} {'numpy':>10s} {'compiled':>10s} {'speedup':>8s}")
    for n in (2, 8, 128, 2000):
        x = rng.standard_normal((n, 67))
        w = rng.standard_normal((32, 67))
        b = rng.standard_normal(32)
        dy = rng.standard_normal((n, 32))
        a = np.tanh(rng.standard_normal((n, 32)))
        cases = [
            ("affine_fwd", (x, w, b)),
            ("affine_bwd_x", (dy, w)),
            ("affine_bwd_w", (dy, x)),
            ("colsum", (dy,)),
            ("tanh_fwd", (x,)),
            ("tanh_bwd", (a, dy)),
        ]
        for name, args in cases:
            t_py = timeit(getattr(_pyref, name), *args)
            if _ckern is None:
                print(f"{name:14s} {f'n={n}':>18s} {t_py*1e6:9.2f}u {'-':>10s} {'-':>8s}")
                continue
            t_c = timeit(getattr(_ckern, name), *args)
            print(
                f"{name:14s} {f'n={n}':>18s} {t_py*1e6:9.2f}u {t_c*1e6:9.2f}u "
                f"{t_py / t_c:7.2f}x"
            )


def bench_network():
    cfg = NetworkConfig(input_dim=2, hidden_width=32, num_layers=3, embed_dim=32, vocab_size=5)
    net = build_network(cfg, seed=0)
    y = Condition("complete", (4, 3, 1), concept_slot=0)
    rng = np.random.default_rng(1)
    names = ("affine_fwd", "affine_bwd_x", "affine_bwd_w", "colsum", "tanh_fwd", "tanh_bwd")
    backends = {"numpy": _pyref}
    if _ckern is not None:
        backends["compiled"] = _ckern
    print(f"\n{'net fwd+bwd':14s} {'batch':>8s} " + " ".join(f"{k:>12s}" for k in backends))
    for n in (2, 8, 128, 2000):
        x = rng.standard_normal((n, 2))
        t = rng.random(n)
        up = rng.standard_normal((n, 2))
        row = []
        for impl in backends.values():
            for name in names:
                setattr(K, name, getattr(impl, name))
            row.append(timeit(lambda: net.backward(x, t, y, up)))
        for name in names:  # restore the import-time selection
            setattr(K, name, getattr(K._impl, name))
        print(f"{'':14s} {n:8d} " + " ".join(f"{v*1e3:11.3f}m" for v in row))


if __name__ == "__main__":
    print(f"active backend: {K.BACKEND}")
    bench_primitives()
    bench_network()
