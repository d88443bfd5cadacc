"""Shared test oracles, independent of the engine code paths they check."""

import numpy as np

from sagald import model, noise


def chain_indices(seed, replication, steps, n_components, dim):
    """The 1-based component draws a direct chain consumes, read off the stream."""
    stream = noise.NoiseStream(seed, n_components, dim)
    out = np.empty(steps, dtype=np.int64)
    block, rb = divmod(replication, noise.REP_BLOCK)
    for c0 in range(0, steps, noise.STEP_CHUNK):
        _, idx = stream.chain_chunk(block, c0 // noise.STEP_CHUNK)
        n = min(noise.STEP_CHUNK, steps - c0)
        out[c0:c0 + n] = idx[rb, :n]
    return out + 1


def bookkeeper_tables(problem, xs, draws):
    """Brute-force last-update bookkeeper for the gradient table.

    Given the state trajectory xs (steps+1, d) and the 1-based draw sequence
    (steps,), reconstructs the full table history (steps+1, N, d) from the
    definition: row i at time m is F_i evaluated at the state of the most
    recent transition that drew i (the initial table rows when i was never
    drawn).  Evaluations reuse the public component_eval only.
    """
    steps = draws.shape[0]
    n, d = problem.count, problem.dim
    tables = np.empty((steps + 1, n, d))
    for i in range(1, n + 1):
        times = np.nonzero(draws == i)[0]
        vals = np.empty((times.shape[0] + 1, d))
        vals[0] = model.component_eval(problem, i, xs[0])
        if times.shape[0]:
            vals[1:] = problem.components[i - 1].eval_batch(xs[times])
            # spot-check the batched evaluation against the scalar surface
            for t in times[:: max(1, times.shape[0] // 4)]:
                k = int(np.searchsorted(times, t)) + 1
                assert np.array_equal(vals[k],
                                      model.component_eval(problem, i, xs[t]))
        # row at time m uses the last update strictly before m
        pos = np.searchsorted(times, np.arange(steps + 1), side="left")
        tables[:, i - 1, :] = vals[pos]
    return tables


def fresh_table(problem, x0):
    return np.array([model.component_eval(problem, i, x0)
                     for i in range(1, problem.count + 1)])
