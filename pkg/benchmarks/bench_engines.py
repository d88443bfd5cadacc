#!/usr/bin/env python3
"""Throughput comparison of the compiled and pure numpy engines.

Both engines produce bit-identical results (asserted here on every workload);
this script measures what the compiled extension buys.  Reported rates count
chain transitions per second (a coupled pair advances two chains per step).

Usage: python3 benchmarks/bench_engines.py [--quick]
"""

import argparse
import sys
import time

import numpy as np

from sagald import _core, model, noise
from sagald.randommap import MapConsts, derive_constants, with_overrides


def _engines():
    engines = {e.BACKEND: e for e in _core.available_engines()}
    if "cython" not in engines:
        print("compiled engine not built; nothing to compare", file=sys.stderr)
        sys.exit(1)
    return engines


def bench_direct(engine, problem, eta, n_reps, steps, seed=11):
    pk = problem.pack
    rng = np.random.default_rng(seed)
    x = np.ascontiguousarray(rng.normal(size=(n_reps, problem.dim)))
    table = np.ascontiguousarray(model.eval_all_components(problem, x))
    stream = noise.NoiseStream(seed, problem.count, problem.dim)
    bad = np.zeros(n_reps, np.uint8)
    bad_step = np.zeros(n_reps, np.int64)
    none_i = np.empty(0, np.int64)
    none_f2 = np.empty((0, 0))
    none_f3 = np.empty((0, 0, 0))
    phi_acc = np.empty((n_reps, 0))
    chunks = []
    for c in range((steps + noise.STEP_CHUNK - 1) // noise.STEP_CHUNK):
        g, i = stream.chain_chunk(0, c)
        n = min(noise.STEP_CHUNK, steps - c * noise.STEP_CHUNK)
        chunks.append((np.ascontiguousarray(g[:n_reps, :n]),
                       np.ascontiguousarray(i[:n_reps, :n]), n))
    t0 = time.perf_counter()
    for g, i, n in chunks:
        engine.direct_chunk(pk.kinds, pk.aff_a, pk.aff_b, pk.well_u,
                            pk.well_amp, x, table, g, i, n,
                            eta, eta / problem.count, float(np.sqrt(2 * eta)),
                            bad, bad_step, 0, none_f2, none_f3,
                            none_i, np.empty((0, 2)), phi_acc,
                            none_f2, none_f3)
    return time.perf_counter() - t0, x.copy(), table.copy()


def bench_coupled(engine, problem, bundle, n_reps, steps, seed=13):
    pk = problem.pack
    consts = MapConsts(problem, bundle)
    rng = np.random.default_rng(seed)
    xa = np.ascontiguousarray(rng.normal(size=(n_reps, problem.dim)))
    ta = np.ascontiguousarray(model.eval_all_components(problem, xa))
    xb = np.zeros_like(xa)
    tb = np.ascontiguousarray(model.eval_all_components(problem, xb))
    stream = noise.NoiseStream(seed, problem.count, problem.dim,
                               cache_chunks=0)
    met = np.zeros(n_reps, np.uint8)
    meet_step = np.full(n_reps, -1, np.int64)
    carry = np.zeros((n_reps, 4), np.uint8)
    bad = np.zeros(n_reps, np.uint8)
    bad_step = np.zeros(n_reps, np.int64)
    block_len = problem.count + 1
    n_alloc = steps // block_len + 1
    cnt = [np.zeros(n_alloc, np.int64) for _ in range(4)]
    viol = np.zeros(1, np.int64)
    vinfo = np.full(2, -1, np.int64)
    occ = np.empty(0, np.int64)
    rep_ids = np.arange(n_reps, dtype=np.int64)
    chunks = []
    for c in range((steps + noise.STEP_CHUNK - 1) // noise.STEP_CHUNK):
        arrs = stream.map_chunk(0, c)
        n = min(noise.STEP_CHUNK, steps - c * noise.STEP_CHUNK)
        chunks.append(tuple(np.ascontiguousarray(a[:n_reps, :n])
                            for a in arrs) + (n, c * noise.STEP_CHUNK))
    t0 = time.perf_counter()
    for g, i, s, rg, rz, rlw, n, step0 in chunks:
        engine.map_chunk(pk.kinds, pk.aff_a, pk.aff_b, pk.well_u, pk.well_amp,
                         xa, ta, xb, tb, True, g, i, s, rg, rz, rlw, n,
                         consts.eta, consts.eta_over_n, consts.sqrt2eta,
                         consts.k2, consts.g2, consts.regen_radius, consts.r2,
                         consts.beta, consts.resid_const,
                         block_len, step0, met, meet_step, carry,
                         cnt[0], cnt[1], cnt[2], cnt[3], viol, vinfo, occ,
                         bad, bad_step, rep_ids, step0, seed)
    return time.perf_counter() - t0, xa.copy(), ta.copy(), meet_step.copy()


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--quick", action="store_true")
    args = ap.parse_args()
    engines = _engines()
    scale = 4 if args.quick else 1

    lin = model.builtin_problem("lin-1d")
    well = model.builtin_problem("well-2d")
    micro = model.builtin_problem("micro-1d")
    bundle = with_overrides(
        micro, derive_constants(micro, 0.5, 0.1, unsafe_eta=True),
        k_override=0.2, regen_radius=0.2)

    workloads = [
        ("direct lin-1d", bench_direct,
         (lin, 1 / 32, 256, 40960 // scale), 1),
        ("direct well-2d", bench_direct,
         (well, 1 / 256, 256, 20480 // scale), 1),
        ("coupled map micro-1d", bench_coupled,
         (micro, bundle, 256, 20480 // scale), 2),
    ]
    print(f"{'workload':24s} {'python':>12s} {'cython':>12s} {'speedup':>9s}")
    for name, fn, params, chains in workloads:
        results, rates = {}, {}
        for backend in ("python", "cython"):
            out = fn(engines[backend], *params)
            results[backend] = out[1:]
            n_reps, steps = params[-2], params[-1]
            rates[backend] = n_reps * steps * chains / out[0]
        for a, b in zip(results["python"], results["cython"]):
            assert np.array_equal(a, b), f"engines disagree on {name}"
        print(f"{name:24s} {rates['python'] / 1e6:9.2f} M/s "
              f"{rates['cython'] / 1e6:9.2f} M/s "
              f"{rates['cython'] / rates['python']:8.1f}x")
    print("\nbit-identical outputs verified on every workload")


if __name__ == "__main__":
    main()
