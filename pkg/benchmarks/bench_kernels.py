"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 200] [--json out.json]

Prints one line per kernel with the per-call time of each backend and the
speed-up.  Without a built extension only the fallback is timed.
"""
from __future__ import annotations

import argparse
import json
import timeit

import numpy as np

from memonet import _kernels_py
from memonet.kernels import backends
from memonet.tasks import graph


def _cases(rng):
    x = rng.normal(size=(64, 32))
    y = _kernels_py.softmax_rows_forward(x)
    g = rng.normal(size=x.shape)
    z = rng.normal(size=(64, 64))
    gz = rng.normal(size=z.shape)
    gain, bias = np.ones(64), np.zeros(64)
    _, xhat, inv = _kernels_py.layernorm_rows_forward(z, gain, bias, 1e-5)
    p = rng.random((64, 32)) + 1e-3
    p /= p.sum(1, keepdims=True)
    q = rng.random((64, 32)) + 1e-3
    q /= q.sum(1, keepdims=True)
    gr = graph.random_graph(graph.PRESETS["20-5-3"], rng)
    h = rng.random(20)
    r = rng.normal(size=20)
    v = rng.normal(size=20)
    return {
        "softmax_rows_forward": lambda k: k.softmax_rows_forward(x),
        "softmax_rows_backward": lambda k: k.softmax_rows_backward(y, g),
        "layernorm_rows_forward": lambda k: k.layernorm_rows_forward(z, gain, bias, 1e-5),
        "layernorm_rows_backward": lambda k: k.layernorm_rows_backward(gz, xhat, inv, gain),
        "bhattacharyya_rows": lambda k: k.bhattacharyya_rows(p, q, 1e-12),
        "bfs_distances": lambda k: k.bfs_distances(gr.indptr, gr.indices, 0),
        "lex_shortest_path": lambda k: k.lex_shortest_path(gr.indptr, gr.indices, 0, 19),
        "act_weights": lambda k: k.act_weights(h, 0.01),
        "nstep_returns": lambda k: k.nstep_returns(r, v, 0.9, 3),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=200)
    ap.add_argument("--json", help="write timings here")
    args = ap.parse_args(argv)
    impls = backends()
    cases = _cases(np.random.default_rng(0))
    rows = {}
    print(f"{'kernel':<26}" + "".join(f"{n:>12}" for n in impls) + "     speed-up")
    for name, fn in cases.items():
        t = {b: min(timeit.repeat(lambda: fn(mod), number=args.repeat, repeat=3)) / args.repeat
             for b, mod in impls.items()}
        rows[name] = t
        line = f"{name:<26}" + "".join(f"{t[b] * 1e6:10.1f}us" for b in impls)
        if "cython" in t:
            line += f"  {t['python'] / t['cython']:8.1f}x"
        print(line)
    if args.json:
        with open(args.json, "w") as f:
            json.dump(rows, f, indent=2)


if __name__ == "__main__":
    main()
