"""Timing comparison of the spatial kernel backends.

Runs the convolution and pooling kernels on frame-sized inputs with both
the numpy reference implementation and the compiled extension (when it is
available), checks that the outputs agree, and prints a timing table.

    python3 benchmarks/bench_kernels.py [--repeats N] [--sizes 32,64,128]
"""

import argparse
import statistics
import time

import numpy as np

from belieftrack.autodiff.kernels import reference

try:
    from belieftrack.autodiff.kernels import _native as native
except ImportError:
    native = None


def timed(fn, repeats):
    fn()                                   # warm up
    samples = []
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        samples.append(time.perf_counter() - start)
    return statistics.median(samples) * 1000.0


def flat_max_diff(a, b):
    if isinstance(a, tuple):
        return max(flat_max_diff(x, y) for x, y in zip(a, b))
    return float(np.max(np.abs(np.asarray(a, dtype=np.float64)
                               - np.asarray(b, dtype=np.float64))))


def workloads(sizes):
    rng = np.random.default_rng(0)
    for size in sizes:
        for c_in, c_out in ((3, 10), (10, 10)):
            x = rng.standard_normal((c_in, size, size))
            w = rng.standard_normal((c_out, c_in, 3, 3)) * 0.1
            b = rng.standard_normal(c_out) * 0.1
            half = reference.conv_output_size(size, 3, 2, 1)
            g = rng.standard_normal((c_out, half, half))
            yield (f"conv2d fwd  {c_in}x{size}^2 -> {c_out}",
                   lambda impl, x=x, w=w, b=b:
                       impl.conv2d_forward(x, w, b, 2, 1))
            yield (f"conv2d bwd  {c_in}x{size}^2 -> {c_out}",
                   lambda impl, x=x, w=w, g=g:
                       impl.conv2d_backward(x, w, g, 2, 1))
        xp = rng.standard_normal((10, size, size))
        _, idx = reference.maxpool2x2_forward(xp)
        gp = rng.standard_normal(idx.shape)
        yield (f"maxpool fwd 10x{size}^2",
               lambda impl, xp=xp: impl.maxpool2x2_forward(xp))
        yield (f"maxpool bwd 10x{size}^2",
               lambda impl, xp=xp, idx=idx, gp=gp:
                   impl.maxpool2x2_backward(xp.shape, idx, gp))


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=20)
    parser.add_argument("--sizes", default="32,64,128",
                        help="comma separated square frame sizes")
    args = parser.parse_args()
    sizes = [int(s) for s in args.sizes.split(",")]

    if native is None:
        print("compiled extension not available; timing reference only\n")
    header = f"{'workload':<28}{'reference':>12}{'native':>12}{'speedup':>9}"
    print(header)
    print("-" * len(header))
    worst = 0.0
    for label, call in workloads(sizes):
        ref_ms = timed(lambda: call(reference), args.repeats)
        if native is None:
            print(f"{label:<28}{ref_ms:>10.3f}ms{'-':>12}{'-':>9}")
            continue
        nat_ms = timed(lambda: call(native), args.repeats)
        worst = max(worst, flat_max_diff(call(reference), call(native)))
        print(f"{label:<28}{ref_ms:>10.3f}ms{nat_ms:>10.3f}ms"
              f"{ref_ms / nat_ms:>8.1f}x")
    if native is not None:
        print(f"\nmax |reference - native| across runs: {worst:.3e}")
        if worst > 1e-9:
            raise SystemExit("backend outputs disagree")


if __name__ == "__main__":
    main()
