"""Compare the compiled kernels against the numpy fallback.

Kernel timings call both implementations directly. The end-to-end row times
one full posterior evaluation plus a sweep of block updates, once per
backend, in a subprocess with the backend forced by environment variable.

    python3 benchmarks/bench_kernels.py [--repeat 200]
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from prevsynth import _pykernels
from prevsynth.strata import AGE_GROUPS

try:
    from prevsynth import _ckernels
except ImportError:
    _ckernels = None


def _inputs(seed=0):
    rng = np.random.default_rng(seed)
    fD = rng.dirichlet(np.ones(46))
    fT = rng.dirichlet(np.ones(46))
    fA = rng.dirichlet(np.ones(56))
    lo = np.array([b.lower for b in AGE_GROUPS], dtype=np.intp)
    hi = np.array([b.upper for b in AGE_GROUPS], dtype=np.intp)
    pi_year = rng.uniform(0.05, 0.8, size=(4, 46, 46))
    cells = rng.uniform(0.05, 0.8, size=(4, 7, 7))
    edges = np.array([0, 2, 5, 10, 15, 20, 30, 46])
    cat = np.repeat(np.arange(7), np.diff(edges)).astype(np.intp)
    n = rng.integers(10, 500, size=200).astype(float)
    y = np.floor(n * rng.uniform(0, 1, size=200))
    p = rng.uniform(0.01, 0.99, size=200)
    logc = np.zeros(200)
    return dict(fD=fD, fT=fT, fA=fA, lo=lo, hi=hi, pi_year=pi_year, cells=cells, cat=cat, y=y, n=n, p=p, logc=logc)


def _calls(mod, x):
    h = mod.history_kernel(x["fD"], x["fT"], x["fA"], x["lo"], x["hi"], True)
    fTc = np.ascontiguousarray(h[3])
    fTe = np.ascontiguousarray(h[4])
    return {
        "history_kernel": lambda: mod.history_kernel(x["fD"], x["fT"], x["fA"], x["lo"], x["hi"], True),
        "prevalence_kernel": lambda: mod.prevalence_kernel(x["pi_year"], x["fD"], fTc, fTe),
        "cell_prevalence_kernel": lambda: mod.cell_prevalence_kernel(x["cells"], x["cat"], x["cat"], x["fD"], fTc, fTe),
        "binomial_loglik": lambda: mod.binomial_loglik(x["y"], x["n"], x["p"], x["logc"]),
        "binomial_deviance": lambda: mod.binomial_deviance(x["y"], x["n"], x["p"]),
    }


def _best_us(fn, repeat):
    number = max(1, repeat // 10)
    return min(timeit.repeat(fn, number=number, repeat=10)) / number * 1e6


_END_TO_END = """
import time, numpy as np
from prevsynth import kernels, synthgen
from prevsynth.inference import build_blocks, SamplerConfig
from prevsynth.model import Posterior
from prevsynth.observation import BiasStructure
sc = synthgen.facsimile_scenario()
obs = synthgen.generate_observations(sc, 0)
post = Posterior(obs, sc.census, BiasStructure.B5)
rng = np.random.default_rng(0)
theta = rng.normal(0, 0.3, post.layout.size)
st = post.evaluate(theta)
blocks = build_blocks(post, SamplerConfig())
t0 = time.perf_counter()
for _ in range(30):
    for b in blocks:
        th = st.theta.copy()
        th[b.idx] += rng.normal(0, 0.01, len(b.idx))
        post.update(st, b, th)
print(kernels.BACKEND, (time.perf_counter() - t0) / 30 * 1e3)
"""


def _end_to_end(pure: bool):
    env = dict(os.environ, PREVSYNTH_PURE_PYTHON="1" if pure else "0")
    out = subprocess.run([sys.executable, "-c", _END_TO_END], env=env, capture_output=True, text=True, check=True)
    backend, ms = out.stdout.split()
    return backend, float(ms)


def main(argv=None):
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=200)
    ap.add_argument("--no-end-to-end", action="store_true")
    args = ap.parse_args(argv)

    x = _inputs()
    py = _calls(_pykernels, x)
    cy = _calls(_ckernels, x) if _ckernels is not None else None
    if cy is None:
        print("compiled extension not built; showing the numpy fallback only")
    print(f"{'kernel':<24}{'python (us)':>14}{'cython (us)':>14}{'speedup':>10}")
    for name, fn in py.items():
        tp = _best_us(fn, args.repeat)
        if cy is None:
            print(f"{name:<24}{tp:>14.1f}{'-':>14}{'-':>10}")
            continue
        tc = _best_us(cy[name], args.repeat)
        print(f"{name:<24}{tp:>14.1f}{tc:>14.1f}{tp / tc:>9.1f}x")

    if not args.no_end_to_end:
        print()
        rows = [_end_to_end(pure=True)]
        if cy is not None:
            rows.append(_end_to_end(pure=False))
        for backend, ms in rows:
            print(f"one sweep of block updates, {backend:<7}: {ms:8.2f} ms")
        if len(rows) == 2:
            print(f"end-to-end speedup: {rows[0][1] / rows[1][1]:.1f}x")


if __name__ == "__main__":
    main()
