"""Compare the compiled and numpy scoring kernels.

Times each kernel on its own and one full item selection per mode, once per
available backend, and prints the median of several repeats.

    python benchmarks/bench_kernels.py [--groups 16] [--items 200] [--samples 100]
"""

import argparse
import statistics
import time

import numpy as np

from latentbandit import kernels
from latentbandit.data import synth_model
from latentbandit.model import RatingHistory, draw_ratings
from latentbandit.policy import PolicyConfig, select_item


def timed(fn, repeats):
    fn()  # warm-up
    out = []
    for _ in range(repeats):
        t = time.perf_counter()
        fn()
        out.append(time.perf_counter() - t)
    return statistics.median(out)


def use_backend(module):
    kernels.linear_explore = module.linear_explore
    kernels.mc_explore = module.mc_explore
    kernels.future_loss_matrix = module.future_loss_matrix


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--groups", type=int, default=16)
    ap.add_argument("--items", type=int, default=200)
    ap.add_argument("--samples", type=int, default=100, help="Monte Carlo samples per candidate")
    ap.add_argument("--history", type=int, default=5, help="ratings already observed")
    ap.add_argument("--repeats", type=int, default=7)
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    model = synth_model(args.groups, args.items, 2.0, rng)
    ratings = draw_ratings(model, [0], rng)[0]
    asked = rng.choice(args.items, size=args.history, replace=False)
    history = RatingHistory(tuple((int(v), float(ratings[v])) for v in asked))

    G, C, S = args.groups, args.items - args.history, args.samples
    lp = np.log(rng.dirichlet(np.ones(G)))
    mu = np.ascontiguousarray(model.mu[:, :C])
    sig = np.ascontiguousarray(model.sigma[:, :C])
    hls = np.ascontiguousarray(model.half_log_sigma2[:, :C])
    i2s = np.ascontiguousarray(model.inv_two_sigma2[:, :C])
    z = rng.standard_normal((C, G, S))
    idx = np.arange(G)
    order = np.argsort(-mu, axis=1, kind="stable")
    w = np.ones(C)

    lba = PolicyConfig(beta=1.0)
    mc = PolicyConfig(mode="explore_mc", mc_samples=S)
    cases = {
        "linear_explore": lambda k: k.linear_explore(lp, mu, hls, i2s),
        "mc_explore": lambda k: k.mc_explore(lp, mu, sig, hls, i2s, z, idx, idx),
        "future_loss_matrix": lambda k: k.future_loss_matrix(mu, order, w),
        "select lba_linear": lambda k: select_item(model, history, lba),
        "select explore_mc": lambda k: select_item(model, history, mc, np.random.default_rng(1)),
    }

    backends = kernels.available_backends()
    saved = (kernels.linear_explore, kernels.mc_explore, kernels.future_loss_matrix)
    results = {}
    try:
        for name, module in backends.items():
            use_backend(module)
            results[name] = {case: timed(lambda: fn(module), args.repeats) for case, fn in cases.items()}
    finally:
        kernels.linear_explore, kernels.mc_explore, kernels.future_loss_matrix = saved

    print(f"groups={G} candidates={C} samples={S} repeats={args.repeats} (median ms)")
    names = list(backends)
    print(f"{'case':<22}" + "".join(f"{n:>12}" for n in names) + ("     speedup" if len(names) > 1 else ""))
    for case in cases:
        row = [results[n][case] * 1e3 for n in names]
        line = f"{case:<22}" + "".join(f"{x:>12.3f}" for x in row)
        if len(names) > 1:
            line += f"{row[0] / row[1]:>11.1f}x"
        print(line)


if __name__ == "__main__":
    main()
