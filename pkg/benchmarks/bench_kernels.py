"""Compare the compiled and pure-Python kernel backends.

Run with ``python benchmarks/bench_kernels.py [--repeat N]``.  Each kernel is
timed on both backends with identical inputs; outputs are checked to agree
before timings are reported.
"""

import argparse
import sys
import timeit

import numpy as np

from sonolab import kernels
from sonolab.acquisition import Pulse, default_pitch, random_phantom, synth_channel_data
from sonolab.delays import SPEED_OF_SOUND, beam_end_time
from sonolab.geometry import make_linear_array


def _cases(rng):
    g = make_linear_array(64, default_pitch())
    cd = synth_channel_data(random_phantom(20, (0.01, 0.042), 0.0, 0.1, seed=0), g, Pulse(),
                            16e6, 64e-6, 0.05)
    a = g.offsets / SPEED_OF_SOUND
    s = np.sin(0.05)
    t_b = beam_end_time(a, s, cd.T)
    n_out = int(np.floor(t_b * cd.fs))
    w = np.full(g.n_elements, 1.0 / g.n_elements)
    u = rng.standard_normal((64, 1024)) + 1j * rng.standard_normal((64, 1024))
    frame = rng.random((128, 128))
    xs, zs = rng.uniform(5, 123, 50), rng.uniform(5, 123, 50)
    amp = np.ones(50)
    return {
        "delay_channels": lambda b: kernels.delay_channels(cd.samples, cd.fs, a, s, t_b, n_out,
                                                           backend=b),
        "das_sum": lambda b: kernels.das_sum(cd.samples, cd.fs, a, s, w, t_b, n_out, backend=b),
        "selfconv_direct": lambda b: kernels.selfconv_direct(u, backend=b),
        "render_gaussians": lambda b: kernels.render_gaussians(
            np.zeros((128, 128)), xs, zs, amp, 1.9, 7.6, backend=b),
        "local_maxima": lambda b: np.concatenate(kernels.local_maxima(frame, 0.5, backend=b)),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    backends = kernels.available_backends()
    if "cython" not in backends:
        print("compiled backend not built; only the Python fallback is available")
    cases = _cases(np.random.default_rng(0))
    print(f"{'kernel':<18}" + "".join(f"{b:>12}" for b in backends) + "     speed-up")
    for name, fn in cases.items():
        outs = [np.asarray(fn(b)) for b in backends]
        for o in outs[1:]:
            if not np.allclose(o, outs[0], rtol=1e-10, atol=1e-12):
                print(f"{name}: backends disagree", file=sys.stderr)
                return 1
        times = [min(timeit.repeat(lambda: fn(b), number=1, repeat=args.repeat))
                 for b in backends]
        ratio = times[0] / times[-1] if len(times) > 1 else 1.0
        print(f"{name:<18}" + "".join(f"{t * 1e3:>10.2f}ms" for t in times)
              + f"{ratio:>12.1f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
