"""The direct variance-reduced Langevin chain and its plain-gradient baseline.

State is the pair (x, table): the d-dimensional sampling variable together
with an N x d table whose row i caches F_i evaluated at the most recent state
at which component i was drawn.  One transition with step size eta, Gaussian
draw xi and drawn index s is

    x'      = x - [ (eta/N) * sum_i table_i + eta * (F_s(x) - table_s) ] + sqrt(2 eta) xi
    table'_s = F_s(x)            (all other rows unchanged; x is the pre-step state)

The baseline chain replaces the bracket by eta * F_s(x) and keeps no table.

Arithmetic note: the update is evaluated in a fixed order (row sum left to
right, then eta/N * sum + eta * (F_s - table_s)) so that engines, step-level
operations and bookkeeping oracles agree bitwise.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, EtaCapError, NumericOverflowError

__all__ = [
    "ChainState",
    "TransitionInput",
    "Trajectory",
    "init_chain",
    "update_term",
    "saga_step",
    "sgld_step",
    "eta_max",
    "run_chain",
]


@dataclass(frozen=True)
class ChainState:
    """Immutable snapshot (x, table, step index)."""

    x: np.ndarray
    table: np.ndarray
    step: int

    def copy(self):
        return ChainState(self.x.copy(), self.table.copy(), self.step)


@dataclass(frozen=True)
class TransitionInput:
    """One transition's randomness for the direct chain: xi and a 1-based index."""

    gauss: np.ndarray
    index: int


def eta_max(problem):
    """Step-size cap c2 / (8 M^2) under which the moment bounds hold."""
    return problem.dissip_c2 / (8.0 * problem.lipschitz * problem.lipschitz)


def init_chain(problem, x0):
    """Start a chain at x0 with table row i = F_i(x0)."""
    x0 = problem.check_vector(x0, "x0")
    table = np.empty((problem.count, problem.dim))
    for i in range(problem.count):
        table[i] = problem.components[i].eval(x0)
    return ChainState(x=x0.copy(), table=table, step=0)


def _row_sum(table):
    acc = table[0].copy()
    for i in range(1, table.shape[0]):
        acc += table[i]
    return acc


def update_term(problem, state, index, eta):
    """Drift estimate (eta/N) * sum_i table_i + eta * (F_s(x) - table_s)."""
    if not eta > 0:
        raise ValueError("eta must be positive")
    if not 1 <= index <= problem.count:
        raise ValueError(f"index {index} out of range 1..{problem.count}")
    fs = problem.components[index - 1].eval(state.x)
    eta_over_n = eta / problem.count
    return eta_over_n * _row_sum(state.table) + eta * (fs - state.table[index - 1])


def saga_step(problem, state, inp, eta):
    """One variance-reduced transition; table update uses the pre-step x."""
    gauss = problem.check_vector(inp.gauss, "gauss")
    if not 1 <= inp.index <= problem.count:
        raise ValueError(f"index {inp.index} out of range 1..{problem.count}")
    if not eta > 0:
        raise ValueError("eta must be positive")
    s = inp.index - 1
    fs = problem.components[s].eval(state.x)
    eta_over_n = eta / problem.count
    upd = eta_over_n * _row_sum(state.table) + eta * (fs - state.table[s])
    sqrt2eta = float(np.sqrt(2.0 * eta))
    x_new = (state.x - upd) + sqrt2eta * gauss
    if not np.all(np.isfinite(x_new)):
        raise NumericOverflowError(state.step + 1,
                                   float(np.linalg.norm(state.x)))
    table_new = state.table.copy()
    table_new[s] = fs
    return ChainState(x=x_new, table=table_new, step=state.step + 1)


def sgld_step(problem, x, inp, eta):
    """Baseline transition x' = x - eta F_s(x) + sqrt(2 eta) xi."""
    x = problem.check_vector(x)
    gauss = problem.check_vector(inp.gauss, "gauss")
    if not eta > 0:
        raise ValueError("eta must be positive")
    fs = problem.components[inp.index - 1].eval(x)
    x_new = (x - eta * fs) + float(np.sqrt(2.0 * eta)) * gauss
    if not np.all(np.isfinite(x_new)):
        raise NumericOverflowError(0, float(np.linalg.norm(x)))
    return x_new


# ---------------------------------------------------------------------------
# Batched runs (engine-backed).

@dataclass(frozen=True)
class Trajectory:
    """Strided snapshots of a single run; rows align across the three arrays."""

    steps: np.ndarray    # (n_snap,) int64
    xs: np.ndarray       # (n_snap, d)
    tables: np.ndarray   # (n_snap, N, d)
    final: ChainState

    def to_csv(self, path, header_comment=None):
        d, n = self.xs.shape[1], self.tables.shape[1]
        cols = ["step"] + [f"x_{c}" for c in range(d)] \
            + [f"g_{i + 1},{c}" for i in range(n) for c in range(d)]
        with open(path, "w", newline="") as fh:
            if header_comment:
                fh.write(f"# {header_comment}\n")
            fh.write(",".join(cols) + "\n")
            for k in range(self.steps.shape[0]):
                row = [str(int(self.steps[k]))]
                row += [f"{v:.17g}" for v in self.xs[k]]
                row += [f"{v:.17g}" for v in self.tables[k].ravel()]
                fh.write(",".join(row) + "\n")

    def to_binary(self, path, config_hash=0):
        """Little-endian frame: magic, config hash, rows, cols, then float64
        rows [step, x_0.., g_1,0 ..] in row-major order."""
        d, n = self.xs.shape[1], self.tables.shape[1]
        rows = self.steps.shape[0]
        cols = 1 + d + n * d
        mat = np.empty((rows, cols))
        mat[:, 0] = self.steps
        mat[:, 1:1 + d] = self.xs
        mat[:, 1 + d:] = self.tables.reshape(rows, n * d)
        with open(path, "wb") as fh:
            fh.write(b"SAGLDTRJ")
            fh.write(struct.pack("<QQQ", config_hash & 0xFFFFFFFFFFFFFFFF,
                                 rows, cols))
            fh.write(mat.astype("<f8").tobytes())


def run_chain(problem, x0, eta, steps, seed, stride=1, unsafe_eta=False):
    """Run one direct chain for `steps` transitions; deterministic in seed.

    Snapshots are taken at every multiple of `stride` (and step 0).  Runs
    beyond 1e6 steps must set a stride explicitly.  eta above the cap is a
    configuration error unless unsafe_eta is set.
    """
    from . import engine

    if steps < 1:
        raise ValueError("steps must be >= 1")
    cap = eta_max(problem)
    if eta > cap and not unsafe_eta:
        raise EtaCapError(
            f"eta={eta} exceeds the moment-bound cap {cap}; "
            "pass unsafe_eta=True to override")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    if steps > 1_000_000 and stride == 1:
        raise ConfigurationError("runs beyond 1e6 steps require an explicit stride")
    state = init_chain(problem, x0)
    return engine.run_direct_single(problem, state, eta, steps, seed, stride)
