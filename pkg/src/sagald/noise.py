"""Counter-based randomness shared by every engine and experiment.

All randomness is derived from Philox streams keyed by
(master seed, stream tag, replication block, step chunk).  A chunk of noise is
therefore a pure function of those four integers: any worker thread, either
engine, or a later re-run reproduces exactly the same values regardless of
scheduling.  Replications are grouped in fixed blocks of REP_BLOCK and steps
in fixed chunks of STEP_CHUNK, so a replication's stream does not depend on
how many replications a particular run happens to use.

One transition consumes one record: a standard Gaussian vector (used by the
plain Gaussian branch), a uniform component index, a regeneration selector, a
point uniform on the unit ball (scaled to the regeneration ball by the
consumer), and a block of rejection-sampling proposals for the residual
kernel.  The proposal block is sized so exhausting it is a ~1e-6 event per
residual draw; the overflow path continues on a dedicated per-(replication,
step) substream, keeping every transition's randomness independent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.random import Generator, Philox

__all__ = ["NoiseStream", "NoiseRecord", "REP_BLOCK", "STEP_CHUNK", "N_PROPOSALS"]

REP_BLOCK = 256
STEP_CHUNK = 256
N_PROPOSALS = 8

TAG_CHAIN = 1       # direct-chain records (gauss, index)
TAG_MAP = 2         # random-map records (full)
TAG_INIT = 3        # initial-state draws
TAG_VERIFY = 4      # verification harness sampling
TAG_SLOW = 5        # residual rejection overflow substreams

_MASK28 = (1 << 28) - 1


def _key(seed, tag, block, chunk):
    if not 0 <= block <= _MASK28 or not 0 <= chunk <= _MASK28:
        raise ValueError("replication block or step chunk out of range")
    packed = (np.uint64(tag) << np.uint64(56)) \
        | (np.uint64(block) << np.uint64(28)) | np.uint64(chunk)
    return np.array([np.uint64(seed & 0xFFFFFFFFFFFFFFFF), packed], dtype=np.uint64)


def _gen(seed, tag, block, chunk):
    return Generator(Philox(key=_key(seed, tag, block, chunk)))


@lru_cache(maxsize=24)
def _chain_chunk_cached(seed, n_components, dim, block, chunk):
    g = _gen(seed, TAG_CHAIN, block, chunk)
    gauss = g.standard_normal((REP_BLOCK, STEP_CHUNK, dim))
    idx = g.integers(0, n_components, size=(REP_BLOCK, STEP_CHUNK),
                     dtype=np.int64)
    gauss.setflags(write=False)
    idx.setflags(write=False)
    return gauss, idx


def unit_ball(rng, shape, dim):
    """Points uniform on the closed unit ball of R^dim; shape excludes dim."""
    z = rng.standard_normal(shape + (dim,))
    norm = np.sqrt(np.sum(z * z, axis=-1, keepdims=True))
    np.maximum(norm, 1e-300, out=norm)
    radius = rng.random(shape) ** (1.0 / dim)
    return z / norm * radius[..., None]


@dataclass(frozen=True)
class NoiseRecord:
    """The randomness of one transition for one replication.

    `index` is 1-based.  `regen_point` is uniform on the unit ball; the map
    scales it by the regeneration radius.  `resid_logw` stores log-uniforms so
    consumers never need a transcendental call of their own.
    """

    gauss: np.ndarray
    index: int
    selector: float
    regen_point: np.ndarray
    resid_z: np.ndarray
    resid_logw: np.ndarray
    slow_key: tuple


class NoiseStream:
    """Chunked access to the per-(replication, step) noise records.

    Two consumers holding streams with the same (seed, n_components, dim) see
    identical records at identical (replication, step) addresses; this is what
    lets differently initialized chains share their driving noise.
    """

    def __init__(self, seed, n_components, dim, tag=TAG_MAP, cache_chunks=32):
        self.seed = int(seed)
        self.n_components = int(n_components)
        self.dim = int(dim)
        self.tag = int(tag)
        self._cache = {}
        self._cache_cap = int(cache_chunks)

    # -- raw chunk interface (used by the engines) --------------------------

    def chain_chunk(self, block, chunk):
        """(gauss, index0) arrays of shape (REP_BLOCK, STEP_CHUNK, d) / (.., ..).

        Cached module-wide (read-only): a chunk is a pure function of its
        address, and replaying a run's draws is a common verification step.
        """
        return _chain_chunk_cached(self.seed, self.n_components, self.dim,
                                   block, chunk)

    def map_chunk(self, block, chunk):
        """Full record arrays for the random-map engines.

        Field order is frozen: gauss, index, selector, regeneration point,
        proposal Gaussians, proposal log-uniforms.
        """
        key = (block, chunk)
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        g = _gen(self.seed, self.tag, block, chunk)
        rb, c, d, j = REP_BLOCK, STEP_CHUNK, self.dim, N_PROPOSALS
        gauss = g.standard_normal((rb, c, d))
        idx = g.integers(0, self.n_components, size=(rb, c), dtype=np.int64)
        sel = g.random((rb, c))
        regen = unit_ball(g, (rb, c), d)
        rz = g.standard_normal((rb, c, j, d))
        with np.errstate(divide="ignore"):
            rlw = np.log(g.random((rb, c, j)))
        out = (gauss, idx, sel, regen, rz, rlw)
        if self._cache_cap > 0:
            if len(self._cache) >= self._cache_cap:
                self._cache.pop(next(iter(self._cache)))
            self._cache[key] = out
        return out

    # -- single-record interface (used by the step-level operations) --------

    def record(self, replication, step):
        block, rb = divmod(int(replication), REP_BLOCK)
        chunk, cs = divmod(int(step), STEP_CHUNK)
        gauss, idx, sel, regen, rz, rlw = self.map_chunk(block, chunk)
        return NoiseRecord(
            gauss=gauss[rb, cs].copy(),
            index=int(idx[rb, cs]) + 1,
            selector=float(sel[rb, cs]),
            regen_point=regen[rb, cs].copy(),
            resid_z=rz[rb, cs].copy(),
            resid_logw=rlw[rb, cs].copy(),
            slow_key=(self.seed, int(replication), int(step)),
        )

    def lane(self, replication):
        return NoiseLane(self, int(replication))


class NoiseLane:
    """A single replication's view of a stream, addressed by absolute step."""

    def __init__(self, stream, replication):
        self.stream = stream
        self.replication = replication

    def record(self, step):
        return self.stream.record(self.replication, step)


def init_draws(seed, n_replications, dim):
    """Standard-normal draws for initial states, one d-vector per replication."""
    out = np.empty((n_replications, dim))
    n_blocks = (n_replications + REP_BLOCK - 1) // REP_BLOCK
    for b in range(n_blocks):
        g = _gen(seed, TAG_INIT, b, 0)
        z = g.standard_normal((REP_BLOCK, dim))
        lo = b * REP_BLOCK
        hi = min(lo + REP_BLOCK, n_replications)
        out[lo:hi] = z[: hi - lo]
    return out


def verify_rng(seed, lane=0):
    """Generator for verification harnesses (assumption scans, density checks)."""
    return _gen(seed, TAG_VERIFY, lane, 0)


def slow_residual_draw(slow_key, mean, sqrt2eta, resid_const, regen_radius_sq):
    """Continue a residual rejection loop after the pre-drawn block is exhausted.

    Deterministic in (seed, replication, step); proposals are fresh i.i.d.
    Gaussians around `mean`, accepted when the log-uniform clears the density
    threshold or the proposal lands outside the regeneration ball.
    """
    seed, replication, step = slow_key
    g = Generator(Philox(key=_key(seed, TAG_SLOW, 0, 0),
                         counter=[0, np.uint64(replication),
                                  np.uint64(step), 0]))
    d = mean.shape[0]
    while True:
        z = g.standard_normal(d)
        u = g.random()
        lw = math.log(u) if u > 0.0 else -math.inf
        y = mean + sqrt2eta * z
        zsq = z[0] * z[0]
        for c in range(1, d):
            zsq += z[c] * z[c]
        ysq = y[0] * y[0]
        for c in range(1, d):
            ysq += y[c] * y[c]
        if ysq > regen_radius_sq or lw >= 0.5 * zsq + resid_const:
            return y
