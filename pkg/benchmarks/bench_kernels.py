"""Compare the numpy reference kernels against the compiled extension.

Times each hot kernel on training-representative shapes and prints the
per-call latency of both backends plus the speedup.  Run after an editable
install:

    python3 benchmarks/bench_kernels.py [--repeats 200] [--batch-tokens 512]
"""

import argparse
import time

import numpy as np

from masktune import kernels
from masktune.kernels import reference


def _time(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def build_cases(rows, d_model, d_ff, vocab):
    rng = np.random.default_rng(0)
    x = rng.normal(size=(rows, d_model))
    # gelu and adam operate on flat views, matching their call sites
    x_ff = rng.normal(size=rows * d_ff)
    gain = rng.normal(size=d_model)
    bias = rng.normal(size=d_model)
    logits = rng.normal(size=(rows, vocab))
    targets = rng.integers(0, vocab, size=rows)
    sel = np.ones(rows, dtype=np.uint8)
    _, probs = reference.cross_entropy_fwd(logits, targets, sel)
    y = reference.softmax_fwd(x)
    dy = rng.normal(size=x.shape)
    _, xhat, inv_std = reference.layer_norm_fwd(x, gain, bias, 1e-5)
    p = rng.normal(size=rows * d_model)
    g = rng.normal(size=rows * d_model)
    m = np.zeros_like(p)
    v = np.zeros_like(p)

    return {
        "softmax_fwd": lambda k: k.softmax_fwd(x),
        "softmax_bwd": lambda k: k.softmax_bwd(y, dy),
        "layer_norm_fwd": lambda k: k.layer_norm_fwd(x, gain, bias, 1e-5),
        "layer_norm_bwd": lambda k: k.layer_norm_bwd(dy, xhat, inv_std, gain),
        "gelu_fwd": lambda k: k.gelu_fwd(x_ff),
        "gelu_bwd": lambda k: k.gelu_bwd(x_ff, x_ff),
        "cross_entropy_fwd": lambda k: k.cross_entropy_fwd(logits, targets, sel),
        "cross_entropy_bwd": lambda k: k.cross_entropy_bwd(probs, targets, sel, 1.0),
        "adam_step": lambda k: k.adam_step(p.copy(), g, m.copy(), v.copy(),
                                           1, 1e-3, 0.9, 0.999, 1e-8, 0.01),
    }


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=200)
    parser.add_argument("--batch-tokens", type=int, default=512,
                        help="rows per kernel call (batch x sequence)")
    parser.add_argument("--d-model", type=int, default=64)
    parser.add_argument("--d-ff", type=int, default=256)
    parser.add_argument("--vocab", type=int, default=128)
    args = parser.parse_args()

    backends = kernels.available_backends()
    print(f"available backends: {', '.join(backends)}")
    if "cython" not in backends:
        print("compiled extension not built; timing the numpy reference only")

    cases = build_cases(args.batch_tokens, args.d_model, args.d_ff, args.vocab)
    initial = kernels.BACKEND
    results = {}
    for backend in backends:
        kernels.use_backend(backend)
        for name, fn in cases.items():
            results.setdefault(name, {})[backend] = _time(
                lambda: fn(kernels), args.repeats)
    kernels.use_backend(initial)

    width = max(len(n) for n in cases)
    header = f"{'kernel':<{width}}  " + "".join(f"{b:>12}" for b in backends)
    if len(backends) > 1:
        header += f"{'speedup':>10}"
    print(header)
    for name, timings in results.items():
        row = f"{name:<{width}}  "
        row += "".join(f"{timings[b] * 1e6:>10.1f}us" for b in backends)
        if len(backends) > 1:
            row += f"{timings['numpy'] / timings['cython']:>9.2f}x"
        print(row)


if __name__ == "__main__":
    main()
