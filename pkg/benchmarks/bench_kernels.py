"""Time the compiled kernels against the pure-Python fallback.

    python3 benchmarks/bench_kernels.py [--repeat N]

Each kernel is run on inputs shaped like desk-scale training (a batch of
eight utterances of about 300 frames, 32-unit LSTMs) and the two backends
are checked to agree before timing.
"""

import argparse
import sys
import timeit

import numpy as np

from cslid import _kernels_py
from cslid import kernels


def make_cases(rng):
    T, B, H = 300, 8, 32
    mask = np.ones((T, B))
    mask[250:, 4:] = 0.0
    xproj = rng.normal(size=(T, B, 4 * H))
    w_h = rng.uniform(-0.1, 0.1, size=(H, 4 * H))
    fwd = _kernels_py.lstm_seq_forward(xproj, w_h, mask, False)
    dout = rng.normal(size=(T, B, H))

    lp = rng.normal(size=(150, 9))
    lp -= np.log(np.exp(lp).sum(axis=1, keepdims=True))
    target = np.array(rng.integers(0, 8, size=40), dtype=np.int64)

    ref = np.array(rng.integers(0, 7, size=200), dtype=np.int64)
    hyp = np.array(rng.integers(0, 7, size=180), dtype=np.int64)
    return {
        "lstm_seq_forward (T=300, B=8, H=32)": ("lstm_seq_forward", (xproj, w_h, mask, False)),
        "lstm_seq_backward (T=300, B=8, H=32)": ("lstm_seq_backward", (dout, w_h, mask, False) + fwd[1:]),
        "ctc_loss_grad (T=150, L=40)": ("ctc_loss_grad", (lp, target, 8)),
        "edit_counts (200 x 180)": ("edit_counts", (ref, hyp)),
    }


def _flatten(result):
    if isinstance(result, tuple):
        return [np.asarray(r, dtype=np.float64).ravel() for r in result]
    return [np.asarray(result, dtype=np.float64).ravel()]


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    fast = kernels.compiled()
    if fast is None:
        print("compiled extension not built; only the fallback is available")
        return 1
    cases = make_cases(np.random.default_rng(0))
    print(f"{'kernel':<40}{'python ms':>12}{'cython ms':>12}{'speedup':>10}")
    for label, (name, call_args) in cases.items():
        py_fn, cy_fn = getattr(_kernels_py, name), getattr(fast, name)
        for a, b in zip(_flatten(py_fn(*call_args)), _flatten(cy_fn(*call_args))):
            if not np.allclose(a, b, rtol=1e-10, atol=1e-10):
                print(f"{label}: backends disagree", file=sys.stderr)
                return 1
        n_py = max(1, args.repeat // 2)
        t_py = min(timeit.repeat(lambda: py_fn(*call_args), number=1, repeat=n_py)) * 1e3
        t_cy = min(timeit.repeat(lambda: cy_fn(*call_args), number=1, repeat=args.repeat)) * 1e3
        print(f"{label:<40}{t_py:>12.2f}{t_cy:>12.2f}{t_py / t_cy:>9.1f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
