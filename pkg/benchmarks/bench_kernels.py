"""Compare the numba and numpy kernel backends.

    python benchmarks/bench_kernels.py [--repeat 200] [--json out.json]

Part one times individual kernels on typical list sizes (K = 10 and 40
items, a 46-64-32-1 network). Part two runs a short meta-training job in a
subprocess per backend, selected with ``MLTR_NUMBA``.
"""

import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np

from mltr.kernels import backends

DIMS = np.array([46, 64, 32, 1], dtype=np.int64)

E2E = """
import time
from mltr import kernels
from mltr.data import make_synthetic_dataset, split_by_query
from mltr.meta import MetaConfig, meta_train, SECOND_ORDER
ds = make_synthetic_dataset(n_queries=60, docs_per_query=(40, 60), dims=46, seed=0)
tr, va, _ = split_by_query(ds, seed=0)
cfg = MetaConfig(alpha=0.05, beta=0.01, epochs=3, batch_size=8, gradient_mode={mode!r})
meta_train(tr, va, cfg.with_(epochs=1))  # warm-up / jit
t0 = time.perf_counter()
meta_train(tr, va, cfg)
print(kernels.BACKEND, time.perf_counter() - t0)
"""


def kernel_cases(mod, n, rng):
    n_par = int(sum((DIMS[:-1] + 1) * DIMS[1:]))
    theta = rng.normal(scale=0.1, size=n_par)
    X = rng.random((n, int(DIMS[0])))
    y = rng.integers(0, 3, size=n).astype(np.float64)
    v = rng.normal(size=n_par)
    s, zbuf = mod.mlp_forward(theta, DIMS, X)
    g = mod.ranknet(s, y, 1.0)[1]
    rs, rz = mod.mlp_rforward(theta, DIMS, X, zbuf, v)
    rg = mod.ranknet_hvp(s, y, 1.0, rs)
    return {
        "mlp_forward": lambda: mod.mlp_forward(theta, DIMS, X),
        "mlp_backward": lambda: mod.mlp_backward(theta, DIMS, X, zbuf, g),
        "mlp_hvp": lambda: (mod.mlp_rforward(theta, DIMS, X, zbuf, v),
                            mod.mlp_rbackward(theta, DIMS, X, zbuf, rz, g, rg, v)),
        "ranknet": lambda: mod.ranknet(s, y, 1.0),
        "lambdarank": lambda: mod.lambdarank(s, y, 1.0),
        "listnet": lambda: mod.listnet(s, y),
    }


def bench_kernels(repeat):
    out = {}
    for name, mod in backends().items():
        for n in (10, 40):
            cases = kernel_cases(mod, n, np.random.default_rng(0))
            for kernel, fn in cases.items():
                fn()  # compile
                best = min(timeit.repeat(fn, number=repeat, repeat=3)) / repeat
                out.setdefault(f"{kernel}[K={n}]", {})[name] = best * 1e6
    return out


def bench_end_to_end(mode):
    out = {}
    for flag in ("1", "0"):
        env = dict(os.environ, MLTR_NUMBA=flag)
        res = subprocess.run([sys.executable, "-c", E2E.format(mode=mode)], env=env,
                             capture_output=True, text=True, check=True)
        backend, secs = res.stdout.split()
        out[backend] = float(secs)
    return out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=200)
    ap.add_argument("--skip-e2e", action="store_true")
    ap.add_argument("--json", help="also write results here")
    args = ap.parse_args(argv)

    res = {"kernels_us": bench_kernels(args.repeat)}
    names = sorted({b for row in res["kernels_us"].values() for b in row})
    print(f"{'kernel':<22}" + "".join(f"{n + ' us':>14}" for n in names) + f"{'speedup':>10}")
    for kernel, row in res["kernels_us"].items():
        speed = row["numpy"] / row["numba"] if "numba" in row else float("nan")
        print(f"{kernel:<22}" + "".join(f"{row[n]:>14.2f}" for n in names) + f"{speed:>9.1f}x")
    if not args.skip_e2e:
        for mode in ("first_order", "second_order"):
            e2e = bench_end_to_end(mode)
            res[f"meta_train_3_epochs_{mode}_s"] = e2e
            print(f"meta_train 3 epochs, {mode}: " + ", ".join(f"{k} {v:.2f}s" for k, v in e2e.items()))
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(res, fh, indent=2)


if __name__ == "__main__":
    main()
