"""Batched run drivers on top of the chunked engines.

Drivers own everything the kernels must not: noise generation, segmentation
at chunk boundaries and checkpoints, worker threading, and reductions.  Work
is split over fixed replication blocks (the noise layout's REP_BLOCK), so
results are identical for any thread count: each block's trajectory is a pure
function of (seed, block, chunk) noise, per-block outputs land in disjoint
slices, and cross-block reductions happen in block order.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import _core, noise
from .errors import NumericOverflowError
from .randommap import MapConsts

_EMPTY_F2 = np.empty((0, 0))
_EMPTY_F3 = np.empty((0, 0, 0))
_EMPTY_I1 = np.empty(0, dtype=np.int64)


def _pack_args(problem):
    p = problem.pack
    return (p.kinds, p.aff_a, p.aff_b, p.well_u, p.well_amp)


def _blocks(n_reps):
    for b in range((n_reps + noise.REP_BLOCK - 1) // noise.REP_BLOCK):
        lo = b * noise.REP_BLOCK
        yield b, lo, min(lo + noise.REP_BLOCK, n_reps)


def _segments(start, stop, cuts):
    """Half-open segments of [start, stop) split at chunk edges and cuts."""
    edges = {start, stop}
    c = (start // noise.STEP_CHUNK + 1) * noise.STEP_CHUNK
    while c < stop:
        edges.add(c)
        c += noise.STEP_CHUNK
    for cut in cuts:
        if start < cut < stop:
            edges.add(int(cut))
    order = sorted(edges)
    return list(zip(order[:-1], order[1:]))


def _raise_if_bad(bad, bad_step, lo):
    if bad.any():
        idxs = np.nonzero(bad)[0]
        r = int(idxs[np.argmin(bad_step[idxs])])
        raise NumericOverflowError(int(bad_step[r]), float("nan"), lo + r)


def _run_threaded(tasks, threads):
    if threads <= 1:
        for t in tasks:
            t()
        return
    with ThreadPoolExecutor(max_workers=threads) as pool:
        futures = [pool.submit(t) for t in tasks]
        for f in futures:
            f.result()


# ---------------------------------------------------------------------------
# Direct-chain runs.

@dataclass
class DirectResult:
    final_x: np.ndarray
    final_table: np.ndarray
    snapshots: dict = field(default_factory=dict)      # step -> (R, d) states
    xsq: np.ndarray = None                             # (R, steps) |x_n|^2
    gsq: np.ndarray = None                             # (R, steps, N)
    phi_sums: dict = field(default_factory=dict)       # step -> (R, n_obs)
    traj: tuple = None                                 # (steps_arr, xs, tables)


def run_direct(problem, x0s, tables0, eta, steps, seed, *,
               checkpoints=(), want_moments=False,
               observables=(), obs_checkpoints=(),
               traj_stride=None, threads=1):
    """Evolve R independent direct chains for `steps` transitions.

    `checkpoints` collect state marginals, `obs_checkpoints` collect running
    observable sums (over steps 1..k).  `traj_stride` records a full
    trajectory and requires a single replication.
    """
    x0s = np.ascontiguousarray(x0s, dtype=np.float64)
    tables0 = np.ascontiguousarray(tables0, dtype=np.float64)
    n_reps, d = x0s.shape
    n_comp = tables0.shape[1]
    eta = float(eta)
    eta_over_n = eta / problem.count
    sqrt2eta = float(np.sqrt(2.0 * eta))

    if traj_stride is not None and n_reps != 1:
        raise ValueError("trajectory capture requires a single replication")
    if want_moments and n_reps * steps * (n_comp + 1) > 5e7:
        raise ValueError("per-step moment capture too large; reduce steps or reps")

    obs_codes = np.array([o[0] for o in observables], dtype=np.int64)
    obs_params = np.array([[o[1], o[2]] for o in observables], dtype=np.float64) \
        if observables else np.empty((0, 2))
    n_obs = obs_codes.shape[0]

    res = DirectResult(final_x=np.empty_like(x0s),
                       final_table=np.empty_like(tables0))
    ckpts = sorted(set(int(c) for c in checkpoints))
    octs = sorted(set(int(c) for c in obs_checkpoints))
    if (ckpts and not 0 <= ckpts[0] <= ckpts[-1] <= steps) \
            or (octs and not 0 <= octs[0] <= octs[-1] <= steps):
        raise ValueError("checkpoints must lie in [0, steps]")
    if n_obs and steps not in octs:
        octs.append(steps)
        octs.sort()
    for c in ckpts:
        res.snapshots[c] = np.empty((n_reps, d))
    for c in octs:
        res.phi_sums[c] = np.empty((n_reps, n_obs))
    if want_moments:
        res.xsq = np.empty((n_reps, steps))
        res.gsq = np.empty((n_reps, steps, n_comp))
    traj_rows = []
    cuts = set(ckpts) | set(octs)
    stream = noise.NoiseStream(seed, problem.count, d, cache_chunks=0)
    pack = _pack_args(problem)

    def task(b, lo, hi):
        nb = hi - lo
        x = x0s[lo:hi].copy()
        table = tables0[lo:hi].copy()
        bad = np.zeros(nb, dtype=np.uint8)
        bad_step = np.zeros(nb, dtype=np.int64)
        phi_acc = np.zeros((nb, n_obs))
        if 0 in res.snapshots:
            res.snapshots[0][lo:hi] = x
        if 0 in res.phi_sums:
            res.phi_sums[0][lo:hi] = phi_acc
        for s0, s1 in _segments(0, steps, cuts):
            chunk = s0 // noise.STEP_CHUNK
            o0 = s0 - chunk * noise.STEP_CHUNK
            gauss, idx = stream.chain_chunk(b, chunk)
            nseg = s1 - s0
            g_seg = np.ascontiguousarray(gauss[:nb, o0:o0 + nseg])
            i_seg = np.ascontiguousarray(idx[:nb, o0:o0 + nseg])
            if want_moments:
                o_xsq = np.empty((nb, nseg))
                o_gsq = np.empty((nb, nseg, n_comp))
            else:
                o_xsq, o_gsq = _EMPTY_F2, _EMPTY_F3
            if traj_stride is not None:
                t_x = np.empty((nseg, d))
                t_g = np.empty((nseg, n_comp, d))
            else:
                t_x, t_g = _EMPTY_F2, _EMPTY_F3
            _core.direct_chunk(*pack, x, table, g_seg, i_seg, nseg,
                               eta, eta_over_n, sqrt2eta,
                               bad, bad_step, s0,
                               o_xsq, o_gsq,
                               obs_codes, obs_params, phi_acc,
                               t_x, t_g)
            if want_moments:
                res.xsq[lo:hi, s0:s1] = o_xsq
                res.gsq[lo:hi, s0:s1] = o_gsq
            if traj_stride is not None:
                ks = np.arange(s0 + 1, s1 + 1)
                keep = (ks % traj_stride == 0) | (ks == steps)
                if keep.any():
                    traj_rows.append((ks[keep], t_x[keep].copy(),
                                      t_g[keep].copy()))
            if s1 in res.snapshots:
                res.snapshots[s1][lo:hi] = x
            if s1 in res.phi_sums:
                res.phi_sums[s1][lo:hi] = phi_acc
        _raise_if_bad(bad, bad_step, lo)
        res.final_x[lo:hi] = x
        res.final_table[lo:hi] = table

    _run_threaded([lambda b=b, lo=lo, hi=hi: task(b, lo, hi)
                   for b, lo, hi in _blocks(n_reps)], threads)

    if traj_stride is not None:
        rows = sorted(traj_rows, key=lambda r: int(r[0][0]))
        res.traj = (
            np.concatenate([np.zeros(1, dtype=np.int64)]
                           + [r[0] for r in rows]),
            np.concatenate([x0s[0][None, :]] + [r[1] for r in rows]),
            np.concatenate([tables0[0][None, :, :]] + [r[2] for r in rows]))
    return res


def run_direct_single(problem, state, eta, steps, seed, stride):
    """Single-chain run returning a Trajectory (sampler.run_chain backend)."""
    from .sampler import ChainState, Trajectory

    out = run_direct(problem, state.x[None, :], state.table[None, :, :],
                     eta, steps, seed, traj_stride=stride)
    steps_arr, xs, tables = out.traj
    final = ChainState(out.final_x[0].copy(), out.final_table[0].copy(), steps)
    return Trajectory(steps=steps_arr, xs=xs, tables=tables, final=final)


# ---------------------------------------------------------------------------
# Random-map runs (single chains or coupled pairs on shared noise).

@dataclass
class MapResult:
    final_xa: np.ndarray
    final_ta: np.ndarray
    met: np.ndarray = None
    meet_after: np.ndarray = None       # transitions after coupling start; -1 unmet
    snapshots: dict = field(default_factory=dict)
    cnt_h: np.ndarray = None
    cnt_d: np.ndarray = None
    cnt_hbar_d: np.ndarray = None
    cnt_i: np.ndarray = None
    violations: int = 0
    viol_info: tuple = (-1, -1)
    occ_count: np.ndarray = None
    occ_steps: int = 0
    n_blocks: int = 0


def run_map(problem, bundle, inits_x, inits_table, steps, seed, *,
            anchor=None, couple_from=0, checkpoints=(),
            want_blocks=False, want_occupancy=False, threads=1):
    """Evolve R map chains; optionally couple each to an anchor copy.

    With `anchor` set, a second chain starts from the anchor state at step
    `couple_from` and consumes the same noise records as its partner from
    that step on.  Block bookkeeping (meeting, good-set occupancy of block
    boundaries, regeneration-sweep events) is on the grid of N+1-step blocks
    relative to `couple_from`.
    """
    inits_x = np.ascontiguousarray(inits_x, dtype=np.float64)
    inits_table = np.ascontiguousarray(inits_table, dtype=np.float64)
    n_reps, d = inits_x.shape
    n_comp = problem.count
    consts = MapConsts(problem, bundle)
    coupled = anchor is not None
    block_len = n_comp + 1
    # complete blocks fit the horizon; one extra slot absorbs the bookkeeping
    # of a trailing partial block's start
    n_blocks = max(0, (steps - couple_from) // block_len) if coupled else 0
    n_alloc = n_blocks + 1
    if want_blocks and not coupled:
        raise ValueError("block bookkeeping requires a coupled run")

    if coupled and not 0 <= couple_from < steps:
        raise ValueError("couple_from must lie in [0, steps)")
    res = MapResult(final_xa=np.empty_like(inits_x),
                    final_ta=np.empty_like(inits_table))
    ckpts = sorted(set(int(c) for c in checkpoints))
    if ckpts and not 0 <= ckpts[0] <= ckpts[-1] <= steps:
        raise ValueError("checkpoints must lie in [0, steps]")
    for c in ckpts:
        res.snapshots[c] = np.empty((n_reps, d))
    res.met = np.zeros(n_reps, dtype=np.uint8)
    res.meet_after = np.full(n_reps, -1, dtype=np.int64)
    if want_blocks:
        res.cnt_h = np.zeros(n_alloc, dtype=np.int64)
        res.cnt_d = np.zeros(n_alloc, dtype=np.int64)
        res.cnt_hbar_d = np.zeros(n_alloc, dtype=np.int64)
        res.cnt_i = np.zeros(n_alloc, dtype=np.int64)
    if want_occupancy:
        res.occ_count = np.zeros(n_reps, dtype=np.int64)
        res.occ_steps = steps
    res.n_blocks = n_blocks

    if coupled:
        ax, at = anchor
        ax = np.asarray(ax, dtype=np.float64)
        at = np.asarray(at, dtype=np.float64)
        if ax.ndim == 1:
            ax = np.broadcast_to(ax, (n_reps, d))
        if at.ndim == 2:
            at = np.broadcast_to(at, (n_reps, n_comp, d))
    stream = noise.NoiseStream(seed, n_comp, d, cache_chunks=0)
    pack = _pack_args(problem)
    cuts = set(ckpts) | ({couple_from} if coupled else set())
    lock_stats = []

    def task(b, lo, hi):
        nb = hi - lo
        xa = inits_x[lo:hi].copy()
        ta = inits_table[lo:hi].copy()
        xb = np.zeros_like(xa)
        tb = np.zeros_like(ta)
        met = np.zeros(nb, dtype=np.uint8)
        meet_step = np.full(nb, -1, dtype=np.int64)
        carry = np.zeros((nb, 4), dtype=np.uint8)
        bad = np.zeros(nb, dtype=np.uint8)
        bad_step = np.zeros(nb, dtype=np.int64)
        rep_ids = np.arange(lo, hi, dtype=np.int64)
        if want_blocks:
            w_h = np.zeros(n_alloc, dtype=np.int64)
            w_d = np.zeros(n_alloc, dtype=np.int64)
            w_hb = np.zeros(n_alloc, dtype=np.int64)
            w_i = np.zeros(n_alloc, dtype=np.int64)
        else:
            w_h = w_d = w_hb = w_i = _EMPTY_I1
        w_viol = np.zeros(1, dtype=np.int64)
        w_vinfo = np.full(2, -1, dtype=np.int64)
        w_occ = np.zeros(nb, dtype=np.int64) if want_occupancy else _EMPTY_I1
        pair_live = False
        if 0 in res.snapshots:
            res.snapshots[0][lo:hi] = xa
        for s0, s1 in _segments(0, steps, cuts):
            if coupled and not pair_live and s0 >= couple_from:
                xb[...] = ax[lo:hi]
                tb[...] = at[lo:hi]
                pair_live = True
                eq = np.all(xa == xb, axis=1) \
                    & np.all(ta.reshape(nb, -1) == tb.reshape(nb, -1), axis=1)
                met[eq] = 1
                meet_step[eq] = 0
            chunk = s0 // noise.STEP_CHUNK
            o0 = s0 - chunk * noise.STEP_CHUNK
            gauss, idx, sel, regen, rz, rlw = stream.map_chunk(b, chunk)
            nseg = s1 - s0
            sl = slice(o0, o0 + nseg)
            _core.map_chunk(*pack,
                            xa, ta, xb, tb, pair_live,
                            np.ascontiguousarray(gauss[:nb, sl]),
                            np.ascontiguousarray(idx[:nb, sl]),
                            np.ascontiguousarray(sel[:nb, sl]),
                            np.ascontiguousarray(regen[:nb, sl]),
                            np.ascontiguousarray(rz[:nb, sl]),
                            np.ascontiguousarray(rlw[:nb, sl]),
                            nseg,
                            consts.eta, consts.eta_over_n, consts.sqrt2eta,
                            consts.k2, consts.g2, consts.regen_radius,
                            consts.r2, consts.beta, consts.resid_const,
                            block_len, s0 - couple_from if pair_live else 0,
                            met, meet_step, carry,
                            w_h if pair_live else _EMPTY_I1, w_d, w_hb, w_i,
                            w_viol, w_vinfo,
                            w_occ,
                            bad, bad_step,
                            rep_ids, s0, stream.seed)
            if s1 in res.snapshots:
                res.snapshots[s1][lo:hi] = xa
        _raise_if_bad(bad, bad_step, lo)
        res.final_xa[lo:hi] = xa
        res.final_ta[lo:hi] = ta
        res.met[lo:hi] = met
        res.meet_after[lo:hi] = meet_step
        if want_occupancy:
            res.occ_count[lo:hi] = w_occ
        lock_stats.append((b, w_h, w_d, w_hb, w_i, w_viol, w_vinfo))

    _run_threaded([lambda b=b, lo=lo, hi=hi: task(b, lo, hi)
                   for b, lo, hi in _blocks(n_reps)], threads)

    if want_blocks:
        for b, w_h, w_d, w_hb, w_i, w_viol, w_vinfo in sorted(lock_stats):
            res.cnt_h += w_h
            res.cnt_d += w_d
            res.cnt_hbar_d += w_hb
            res.cnt_i += w_i
            if w_viol[0] and res.violations == 0:
                res.viol_info = (int(w_vinfo[0]), int(w_vinfo[1]))
            res.violations += int(w_viol[0])
    return res
