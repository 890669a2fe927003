"""Compare the numba and pure-numpy versions of the hot kernels.

Both variants are called directly, so the MSDATF_DISABLE_NUMBA flag does not
matter here. Shapes follow the first convolutional block of the reduced
generator on a 32-sample batch.

    python3 benchmarks/bench_kernels.py [--repeat 20] [--batch 32]
"""

import argparse
import time

import numpy as np

from msdatf.numerics import kernels as K


def best_of(fn, repeat):
    fn()  # warm-up (triggers JIT compilation on the first call)
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def cases(batch):
    rng = np.random.default_rng(0)
    xp = rng.standard_normal((batch, 16, 64, 11))          # padded feature map
    k = 3
    cols = K.im2col_numpy(xp, k)
    fm = rng.standard_normal((batch, 32, 62, 9))
    _, arg = K.maxpool_forward_numpy(fm, 2, 2)
    g = rng.standard_normal(arg.shape)
    return {
        "im2col": (lambda f: f(xp, k), K.im2col_numpy, K.im2col_numba),
        "col2im": (lambda f: f(cols, 16, 64, 11, k), K.col2im_numpy, K.col2im_numba),
        "maxpool_fwd": (lambda f: f(fm, 2, 2), K.maxpool_forward_numpy, K.maxpool_forward_numba),
        "maxpool_bwd": (lambda f: f(g, arg, 62, 9, 2, 2), K.maxpool_backward_numpy,
                        K.maxpool_backward_numba),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--batch", type=int, default=32)
    args = ap.parse_args()
    if not K.HAVE_NUMBA:
        print("numba is not installed; only the numpy path is available")
    print(f"{'kernel':<12} {'numpy ms':>10} {'numba ms':>10} {'speedup':>8}  agree")
    for name, (call, f_np, f_nb) in cases(args.batch).items():
        a, b = call(f_np), call(f_nb)
        a = a if isinstance(a, tuple) else (a,)
        b = b if isinstance(b, tuple) else (b,)
        agree = all(np.allclose(u, v, rtol=0, atol=1e-12) for u, v in zip(a, b))
        t_np = best_of(lambda: call(f_np), args.repeat)
        t_nb = best_of(lambda: call(f_nb), args.repeat)
        print(f"{name:<12} {1e3 * t_np:>10.3f} {1e3 * t_nb:>10.3f} {t_np / t_nb:>7.2f}x  {agree}")


if __name__ == "__main__":
    main()
