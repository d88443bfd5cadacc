"""Coupled map-chains on shared noise: meetings, block events, bounds.

A coupled pair consumes one noise stream from two initializations.  Meetings
(exact floating-point equality of x and the whole table) are absorbing, since
both copies are the same deterministic map of the shared records afterwards.
Blocks of N+1 consecutive transitions carry the regeneration-sweep event: all
selectors clear beta and the interior indices sweep 1..N in order, which from
an unmet good-set block start forces the pair to coincide at the block end.

Coupling runs require the regeneration ball inside the good set
(regen_radius <= K): a sweep's intermediate states must remain in the good
set or the later regenerations of the block are not taken.  The textbook
constants satisfy this with room to spare (K is astronomically large there).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import engine, model, noise
from .errors import ConfigurationError

__all__ = [
    "CouplingTrace",
    "BlockRecord",
    "run_coupled",
    "block_event_indicator",
    "empirical_meet_prob",
    "theoretical_meet_bound",
    "n_zero",
    "good_set_occupancy",
    "draw_inits",
]


@dataclass(frozen=True)
class BlockRecord:
    k: int
    in_h: bool       # pair equal at the block start
    in_d: bool       # every coordinate block of both copies inside B(K)
    i_event: bool    # unmet, in D, selectors cleared beta, ordered sweep


@dataclass(frozen=True)
class CouplingTrace:
    meet_step: int | None        # first step with full (x, table) equality
    block_log: tuple             # BlockRecord per complete block
    horizon: int
    violations: int              # sweep events not followed by a meeting


def _check_coupling_bundle(bundle):
    if bundle.regen_radius > bundle.good_x_radius:
        raise ConfigurationError(
            "coupling requires regen_radius <= good-set radius K "
            f"(got r={bundle.regen_radius}, K={bundle.good_x_radius}); "
            "a regeneration sweep must stay inside the good set")


def run_coupled(problem, init_a, init_b, horizon, eta, bundle, seed,
                threads=1):
    """Couple two chains from explicit (x, table) pairs over shared noise."""
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    if abs(eta - bundle.eta) > 0:
        raise ConfigurationError("bundle was derived for a different eta")
    _check_coupling_bundle(bundle)
    xa, ta = init_a
    xb, tb = init_b
    xa = problem.check_vector(xa, "init_a.x")
    xb = problem.check_vector(xb, "init_b.x")
    res = engine.run_map(problem, bundle, xa[None, :],
                         np.asarray(ta, dtype=np.float64)[None, :, :],
                         horizon, seed,
                         anchor=(np.asarray(xb, dtype=np.float64),
                                 np.asarray(tb, dtype=np.float64)),
                         couple_from=0, want_blocks=True, threads=threads)
    n_blocks = res.n_blocks
    log = tuple(
        BlockRecord(k=k, in_h=bool(res.cnt_h[k]), in_d=bool(res.cnt_d[k]),
                    i_event=bool(res.cnt_i[k]))
        for k in range(n_blocks))
    meet = int(res.meet_after[0])
    return CouplingTrace(meet_step=None if meet < 0 else meet,
                         block_log=log, horizon=horizon,
                         violations=res.violations)


def block_event_indicator(trace, k, lane, bundle, n_components):
    """Recompute the sweep event for block k from raw noise records.

    Independent of the engine bookkeeping: reads the stream's selectors and
    indices directly and combines them with the logged block-start flags.
    """
    rec = trace.block_log[k]
    if rec.in_h or not rec.in_d:
        return False
    beta = bundle.beta
    block_len = n_components + 1
    base = k * block_len
    for off in range(block_len):
        r = lane.record(base + off)
        if not r.selector <= beta:
            return False
        if off >= 1 and r.index != off:
            return False
    return True


def draw_inits(problem, law, n, seed, lane=0):
    """Initial (x, table) batches from a named law; table rows are F_i(x0).

    law: ("point", vector) or ("gauss", center, sigma).  Returns
    (x0s, tables, e_x0_sq) with the analytic second moment of the law.
    """
    d = problem.dim
    kind = law[0]
    if kind == "point":
        x0 = np.asarray(law[1], dtype=np.float64).reshape(d)
        xs = np.tile(x0, (n, 1))
        e_sq = float(x0 @ x0)
    elif kind == "gauss":
        center = np.asarray(law[1], dtype=np.float64).reshape(d)
        sigma = float(law[2])
        z = noise.init_draws(seed + lane, n, d)
        xs = center[None, :] + sigma * z
        e_sq = float(center @ center) + d * sigma * sigma
    else:
        raise ValueError(f"unknown initial law {kind!r}")
    tables = model.eval_all_components(problem, xs)
    return xs, tables, e_sq


def empirical_meet_prob(problem, law_a, law_b, k_max, replications, eta,
                        bundle, seed, threads=1):
    """Meeting probability by block k with Monte-Carlo standard errors.

    Returns a dict with p_hat[k] = fraction of pairs met by step k(N+1) for
    k = 0..k_max (nondecreasing by absorption), the per-k standard error
    sqrt(p(1-p)/reps), block-start statistics and the sweep-event counts.
    """
    if replications < 100:
        raise ValueError("replications must be >= 100")
    _check_coupling_bundle(bundle)
    block_len = problem.count + 1
    horizon = k_max * block_len
    xa, ta, _ = draw_inits(problem, law_a, replications, seed, lane=1)
    xb, tb, _ = draw_inits(problem, law_b, replications, seed, lane=2)
    res = engine.run_map(problem, bundle, xa, ta, horizon, seed,
                         anchor=(xb, tb), couple_from=0,
                         want_blocks=True, threads=threads)
    meets = res.meet_after
    ks = np.arange(k_max + 1)
    p_hat = np.array([(meets >= 0) & (meets <= k * block_len) for k in ks]) \
        .mean(axis=1)
    stderr = np.sqrt(p_hat * (1.0 - p_hat) / replications)
    n_blocks = res.n_blocks
    return {
        "k": ks,
        "p_hat": p_hat,
        "stderr": stderr,
        "meet_after": meets,
        "cnt_h": res.cnt_h[:n_blocks],
        "cnt_d": res.cnt_d[:n_blocks],
        "cnt_hbar_d": res.cnt_hbar_d[:n_blocks],
        "cnt_i": res.cnt_i[:n_blocks],
        "violations": res.violations,
        "replications": replications,
        "n_blocks": n_blocks,
    }


def recursion_check(meet_report, bundle, n_components, min_survivors=100):
    """One-sided Monte-Carlo check of the block meeting recursion.

    For every block k with at least `min_survivors` unmet pairs, the observed
    increment must not fall short of the regeneration-sweep rate acting on
    the unmet good-set mass:

        p_hat[k+1] - p_hat[k] + 3 stderr_k >= P_hat(unmet and D at k) * beta (beta/N)^N

    stderr_k is the difference-of-proportions standard error plus the 1/R
    resolution floor (one meeting changes p_hat by 1/R, so a slack below
    that would make the test fail on discreteness alone when the rate is a
    fraction of one expected event).
    """
    p = meet_report["p_hat"]
    reps = meet_report["replications"]
    log_rate = (n_components + 1) * bundle.log_beta \
        - n_components * math.log(n_components)
    rate = math.exp(log_rate) if log_rate > -745.0 else 0.0
    rows = []
    ok = True
    for k in range(min(len(p) - 1, meet_report["cnt_hbar_d"].shape[0])):
        survivors = (1.0 - p[k]) * reps
        if survivors < min_survivors:
            break
        stderr = math.sqrt(p[k + 1] * (1 - p[k + 1]) / reps
                           + p[k] * (1 - p[k]) / reps) + 1.0 / reps
        lhs = p[k + 1] - p[k] + 3.0 * stderr
        rhs = meet_report["cnt_hbar_d"][k] / reps * rate
        rows.append((k, p[k], p[k + 1], stderr, rhs, lhs >= rhs))
        ok = ok and lhs >= rhs
    return {"pass": ok, "rows": rows, "rate": rate,
            "checked_blocks": len(rows)}


def theoretical_meet_bound(k, log_beta, n_components, eps):
    """(1 - 2 eps) * [1 - (1 - beta (beta/N)^N)^k], stable for tiny beta."""
    if k < 0:
        raise ValueError("k must be >= 0")
    log_rate = (n_components + 1) * log_beta - n_components * math.log(n_components)
    rate = math.exp(log_rate) if log_rate > -745.0 else 0.0
    if rate >= 1.0:
        return 1.0 - 2.0 * eps
    return -(1.0 - 2.0 * eps) * math.expm1(k * math.log1p(-rate))


def n_zero(log_beta, n_components, eps):
    """Block horizon after which the unmet probability drops below 3 eps.

    Returns {n_zero, k_star, log10_n_zero}; at faithful constants the count
    overflows any integer width and is reported as an infinity sentinel with
    its log-scale magnitude.
    """
    if not 0.0 < eps < 1.0 / 3.0:
        raise ConfigurationError("eps must lie in (0, 1/3)")
    block_len = n_components + 1
    log_rate = (n_components + 1) * log_beta - n_components * math.log(n_components)
    if log_rate <= -745.0:
        # asymptotically k* ~ ln(1/eps) / rate
        log10_k = math.log10(math.log(1.0 / eps)) - log_rate / math.log(10.0)
        return {"n_zero": math.inf, "k_star": math.inf,
                "log10_n_zero": log10_k + math.log10(block_len)}
    rate = math.exp(log_rate)
    k_star = max(1, math.ceil(math.log(eps) / math.log1p(-rate)))
    # ceil on a float ratio can overshoot by one; take the smallest valid k
    while k_star > 1 and (k_star - 1) * math.log1p(-rate) <= math.log(eps):
        k_star -= 1
    n0 = block_len * k_star
    return {"n_zero": n0, "k_star": k_star, "log10_n_zero": math.log10(n0)}


def good_set_occupancy(problem, eta, bundle, steps, replications, seed,
                       x0_law=None, threads=1):
    """Fraction of (step, replication) pairs with every coordinate block in B(K).

    The standard error is estimated across replications (steps within one
    replication are dependent).
    """
    if abs(eta - bundle.eta) > 0:
        raise ConfigurationError("bundle was derived for a different eta")
    law = x0_law if x0_law is not None else ("point", np.zeros(problem.dim))
    xs, tables, _ = draw_inits(problem, law, replications, seed, lane=3)
    res = engine.run_map(problem, bundle, xs, tables, steps, seed,
                         want_occupancy=True, threads=threads)
    fracs = res.occ_count / float(steps)
    occupancy = float(fracs.mean())
    stderr = float(fracs.std(ddof=1) / math.sqrt(replications)) \
        if replications > 1 else math.nan
    return {"occupancy": occupancy, "stderr": stderr,
            "per_replication": fracs, "steps": steps,
            "replications": replications}
