"""Ergodicity and mixing diagnostics.

Moment tracking against the uniform-in-time second-moment bounds, total
variation estimation between marginal laws via common-binning histograms, a
threshold-event lower bound on the strong mixing coefficient, the coupling
upper bound it is tested against, and law-of-large-numbers checks for
registered linear-growth observables.

The mixing estimator scans a finite grid of one-dimensional threshold events,
so it certifies a LOWER bound on alpha(lag); comparing it against the
coupling bound 2 P(no meeting within lag) is therefore a genuine one-sided
test.  Richer event families could only tighten the same check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import coupling as coupling_mod
from . import engine, model
from .errors import ConfigurationError, EtaCapError
from .randommap import moment_bound_x
from .sampler import eta_max

__all__ = [
    "Observable",
    "parse_observable",
    "MomentSeries",
    "MixingReport",
    "track_moments",
    "tv_estimate",
    "tv_cauchy_scan",
    "alpha_estimate",
    "mixing_vs_coupling",
    "lln_check",
]


# ---------------------------------------------------------------------------
# Registered observables (linear growth |phi(u)| <= C (1 + |u|) by construction).

@dataclass(frozen=True)
class Observable:
    name: str
    code: int
    p0: float
    p1: float
    growth: float

    def engine_params(self):
        return (self.code, self.p0, self.p1)

    def eval(self, x):
        """Vectorized evaluation on states (R, d); mirrors the engines."""
        if self.code == 0:
            return np.full(x.shape[0], self.p0)
        if self.code == 1:
            return x[:, int(self.p0)]
        sq = x[..., 0] * x[..., 0]
        for c in range(1, x.shape[-1]):
            sq = sq + x[..., c] * x[..., c]
        if self.code == 2:
            return np.sqrt(sq)
        if self.code == 3:
            return np.minimum(sq, self.p0)
        t = (self.p0 - x[:, 0]) / self.p1
        return np.minimum(np.maximum(t, 0.0), 1.0)


def parse_observable(name):
    """Parse a registered observable name.

    Family: "const:<v>", "coord:<j>", "norm", "sqcap:<cap>", "ramp:<a>:<h>".
    Anything else is rejected: the growth constant must be declared by the
    registry, not guessed.
    """
    parts = str(name).split(":")
    kind = parts[0]
    try:
        if kind == "const" and len(parts) == 2:
            v = float(parts[1])
            return Observable(name, 0, v, 0.0, abs(v))
        if kind == "coord" and len(parts) == 2:
            return Observable(name, 1, float(int(parts[1])), 0.0, 1.0)
        if kind == "norm" and len(parts) == 1:
            return Observable(name, 2, 0.0, 0.0, 1.0)
        if kind == "sqcap" and len(parts) == 2:
            cap = float(parts[1])
            if not cap > 0:
                raise ValueError
            return Observable(name, 3, cap, 0.0, cap)
        if kind == "ramp" and len(parts) == 3:
            a, h = float(parts[1]), float(parts[2])
            if not h > 0:
                raise ValueError
            return Observable(name, 4, a, h, 1.0)
    except (ValueError, TypeError):
        raise ValueError(f"malformed observable {name!r}") from None
    raise ValueError(f"unregistered observable {name!r} "
                     "(no declared growth constant)")


# ---------------------------------------------------------------------------
# Moment tracking.

@dataclass
class MomentSeries:
    steps: np.ndarray          # 0..n
    ex_sq: np.ndarray          # empirical E|X_n|^2
    eg_sq_max: np.ndarray      # empirical max_i E|G^i_n|^2
    running_max: np.ndarray    # L_hat_n = running max of ex_sq
    bound_x: float
    bound_g: np.ndarray        # 2 [m_hat^2 + M^2 L_hat_n]
    replications: int
    applicable: bool           # False when eta exceeded the cap
    x_ok: bool = False
    g_ok: bool = False


def track_moments(problem, x0_law, eta, steps, replications, seed,
                  unsafe_eta=False, threads=1):
    """Empirical second-moment curves with their theoretical envelopes.

    PASS flags compare the empirical curves against the bounds at every step;
    with an unsafe step size the bounds are reported as not applicable.
    """
    if replications < 100:
        raise ValueError("replications must be >= 100")
    cap = eta_max(problem)
    if eta > cap and not unsafe_eta:
        raise EtaCapError(
            f"eta={eta} exceeds the moment-bound cap {cap}; "
            "pass unsafe_eta=True to override")
    applicable = eta <= cap
    xs, tables, e_x0_sq = coupling_mod.draw_inits(problem, x0_law,
                                                  replications, seed, lane=4)
    res = engine.run_direct(problem, xs, tables, eta, steps, seed,
                            want_moments=True, threads=threads)
    ex0 = _sq_rows_np(xs).mean()
    eg0 = _sq_rows_np(tables).mean(axis=0)
    ex_sq = np.concatenate([[ex0], res.xsq.mean(axis=0)])
    eg_all = np.concatenate([eg0[None, :], res.gsq.mean(axis=0)], axis=0)
    eg_sq_max = eg_all.max(axis=1)
    running_max = np.maximum.accumulate(ex_sq)
    bound_x = moment_bound_x(problem, eta, e_x0_sq)
    bound_g = 2.0 * (problem.m_hat ** 2
                     + problem.lipschitz ** 2 * running_max)
    series = MomentSeries(
        steps=np.arange(steps + 1), ex_sq=ex_sq, eg_sq_max=eg_sq_max,
        running_max=running_max, bound_x=bound_x, bound_g=bound_g,
        replications=replications, applicable=applicable)
    if applicable:
        series.x_ok = bool(np.all(ex_sq <= bound_x))
        series.g_ok = bool(np.all(eg_sq_max <= bound_g))
    return series


def _sq_rows_np(v):
    sq = v[..., 0] * v[..., 0]
    for c in range(1, v.shape[-1]):
        sq = sq + v[..., c] * v[..., c]
    return sq


# ---------------------------------------------------------------------------
# Total variation between sample sets.

def tv_estimate(samples_a, samples_b, bins=None):
    """Half L1 distance between histogram densities on a common binning.

    Equal-width bins per axis over the pooled range; default bin count is
    ceil(min sample count ^ (1/3)) per axis, capped at 256.  Estimates the
    total variation distance up to binning bias; symmetric, in [0, 1].
    """
    a = np.atleast_2d(np.asarray(samples_a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(samples_b, dtype=np.float64))
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError("sample sets must be (n, d) arrays")
    if a.shape[0] == 0 or b.shape[0] == 0:
        raise ValueError("sample sets must be nonempty")
    if a.shape[1] != b.shape[1]:
        raise ValueError("sample sets must share a dimension")
    d = a.shape[1]
    if bins is None:
        bins = min(256, int(math.ceil(min(a.shape[0], b.shape[0]) ** (1.0 / 3.0))))
    bins = max(1, int(bins))
    edges = []
    for c in range(d):
        lo = min(a[:, c].min(), b[:, c].min())
        hi = max(a[:, c].max(), b[:, c].max())
        if not hi > lo:
            lo, hi = lo - 0.5, hi + 0.5
        edges.append(np.linspace(lo, hi, bins + 1))
    ha, _ = np.histogramdd(a, bins=edges)
    hb, _ = np.histogramdd(b, bins=edges)
    return float(0.5 * np.abs(ha / a.shape[0] - hb / b.shape[0]).sum())


def tv_cauchy_scan(problem, eta, checkpoints, replications, seed,
                   x0_law=None, bins=None, threads=1, unsafe_eta=False):
    """Pairwise TV estimates between the chain's marginals at checkpoints.

    The diagnostic passes when the TV between successive checkpoints shrinks
    from the first pair to the last (within an 0.02 cushion along the way):
    the marginal laws form a Cauchy sequence, observed through the histogram
    estimator.
    """
    raw = [int(c) for c in checkpoints]
    if raw != sorted(raw):
        raise ValueError("checkpoints must be nondecreasing")
    cks = sorted(set(raw))
    law = x0_law if x0_law is not None else \
        ("point", np.full(problem.dim, 3.0))
    cap = eta_max(problem)
    if eta > cap and not unsafe_eta:
        raise EtaCapError(f"eta={eta} exceeds the moment-bound cap {cap}; "
                          "pass unsafe_eta=True to override")
    xs, tables, _ = coupling_mod.draw_inits(problem, law, replications, seed,
                                            lane=5)
    res = engine.run_direct(problem, xs, tables, eta, max(cks), seed,
                            checkpoints=cks, threads=threads)
    snaps = {c: res.snapshots[c] for c in cks}
    n = len(cks)
    tv = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            tv[i, j] = tv[j, i] = tv_estimate(snaps[cks[i]], snaps[cks[j]],
                                              bins=bins)
    succ = [tv[i, i + 1] for i in range(n - 1)]
    ok = all(succ[i + 1] <= succ[i] + 0.02 for i in range(len(succ) - 1))
    if len(succ) >= 2:
        ok = ok and succ[-1] < succ[0]
    return {"checkpoints": cks, "tv": tv, "successive": succ,
            "pass": bool(ok), "snapshots": snaps}


# ---------------------------------------------------------------------------
# Strong mixing: threshold-event estimator vs. the coupling bound.

def alpha_estimate(vals_j, vals_lag, grid=9, min_count=1000):
    """Lower-bound estimator of the mixing coefficient between two time points.

    Scans threshold events A = {v_j <= a}, B = {v_{j+lag} <= b} over empirical
    quantile grids and returns max |P(A and B) - P(A) P(B)| together with a
    delta-method standard error at the maximizing pair.  Bounded by 1/4 up to
    sampling noise (covariance of indicators).
    """
    vj = np.asarray(vals_j, dtype=np.float64).ravel()
    vl = np.asarray(vals_lag, dtype=np.float64).ravel()
    if vj.shape[0] != vl.shape[0]:
        raise ValueError("ensembles must pair replications")
    n = vj.shape[0]
    if n < min_count:
        raise ValueError(f"ensemble too small ({n} < {min_count})")
    qs = np.linspace(0.1, 0.9, grid)
    ta = np.quantile(vj, qs)
    tb = np.quantile(vl, qs)
    ind_a = (vj[:, None] <= ta[None, :]).astype(np.float64)
    ind_b = (vl[:, None] <= tb[None, :]).astype(np.float64)
    p_a = ind_a.mean(axis=0)
    p_b = ind_b.mean(axis=0)
    p_ab = ind_a.T @ ind_b / n
    dev = np.abs(p_ab - p_a[:, None] * p_b[None, :])
    i, j = np.unravel_index(np.argmax(dev), dev.shape)
    pab, pa, pb = p_ab[i, j], p_a[i], p_b[j]
    se = math.sqrt(max(pab * (1 - pab), 1e-12) / n) \
        + pb * math.sqrt(max(pa * (1 - pa), 1e-12) / n) \
        + pa * math.sqrt(max(pb * (1 - pb), 1e-12) / n)
    return {"alpha_hat": float(dev[i, j]), "stderr": float(se),
            "argmax": (float(ta[i]), float(tb[j])),
            "grid": int(grid), "count": int(n)}


@dataclass
class MixingReport:
    lags: list
    alpha_hat: list
    alpha_stderr: list
    coupling_bound: list
    bound_stderr: list
    event_family: str
    anchor_step: int
    replications: int
    pass_inequality: bool = False
    pass_monotone: bool = False
    details: dict = field(default_factory=dict)


def mixing_vs_coupling(problem, eta, bundle, lags, replications, seed,
                       anchor_step=512, grid=9, threads=1):
    """Mixing lower bound against the coupling upper bound, lag by lag.

    One coupled experiment provides both curves: chain A runs from the anchor
    state (x = 0, rows F_i(0)); at `anchor_step` a copy B restarts from the
    anchor on the same noise.  A's marginals at (anchor_step, anchor_step +
    lag) feed the threshold estimator; the meeting times of the pair give the
    bound 2 (1 - P(meet within lag)).  The inequality alpha <= bound holds
    for the simulated chain by construction of the shared-noise coupling, so
    violations beyond noise indicate an implementation fault.
    """
    lags = sorted(set(int(v) for v in lags))
    if lags[0] < 1:
        raise ValueError("lags must be >= 1")
    coupling_mod._check_coupling_bundle(bundle)
    if abs(eta - bundle.eta) > 0:
        raise ConfigurationError("bundle was derived for a different eta")
    d = problem.dim
    anchor_x = np.zeros(d)
    anchor_t = model.eval_all_components(problem, anchor_x[None, :])[0]
    horizon = anchor_step + lags[-1]
    cks = [anchor_step] + [anchor_step + v for v in lags]
    xs = np.tile(anchor_x, (replications, 1))
    ts = np.tile(anchor_t, (replications, 1, 1))
    res = engine.run_map(problem, bundle, xs, ts, horizon, seed,
                         anchor=(anchor_x, anchor_t),
                         couple_from=anchor_step,
                         checkpoints=cks, threads=threads)
    vals_j = res.snapshots[anchor_step][:, 0]
    meets = res.meet_after
    report = MixingReport(lags=[], alpha_hat=[], alpha_stderr=[],
                          coupling_bound=[], bound_stderr=[],
                          event_family=f"one-sided thresholds, {grid}x{grid} "
                                       "empirical quantile grid on the first "
                                       "coordinate",
                          anchor_step=anchor_step, replications=replications)
    for lag in lags:
        est = alpha_estimate(vals_j, res.snapshots[anchor_step + lag][:, 0],
                             grid=grid, min_count=min(1000, replications))
        p_meet = float(((meets >= 0) & (meets <= lag)).mean())
        bound = 2.0 * (1.0 - p_meet)
        b_se = 2.0 * math.sqrt(p_meet * (1.0 - p_meet) / replications)
        report.lags.append(lag)
        report.alpha_hat.append(est["alpha_hat"])
        report.alpha_stderr.append(est["stderr"])
        report.coupling_bound.append(bound)
        report.bound_stderr.append(b_se)
    a = np.array(report.alpha_hat)
    se = np.array(report.alpha_stderr)
    bound = np.array(report.coupling_bound)
    bse = np.array(report.bound_stderr)
    report.pass_inequality = bool(np.all(a <= bound + 3.0 * (se + bse)))
    report.pass_monotone = bool(np.all(a[1:] <= a[:-1] + 3.0 * (se[1:] + se[:-1])))
    report.details["p_meet"] = [
        float(((meets >= 0) & (meets <= v)).mean()) for v in report.lags]
    return report


# ---------------------------------------------------------------------------
# Law of large numbers for ergodic averages.

def lln_check(problem, eta, phi, horizon, replications, seed,
              x0_law=None, burn_frac=0.1, ui_grid=(1.0, 10.0, 100.0, 1000.0),
              threads=1, unsafe_eta=False):
    """Ergodic averages of a registered observable at n and n/2 per replication.

    Reports per-replication averages (with and without a burn-in, both
    emitted), the cross-replication spread at both horizons, and the
    uniform-integrability diagnostic sup_n E[(phi - mean)^2] / V on a V grid
    (an L2-bounded sequence is uniformly integrable with tail bound C_W / V).
    """
    obs = phi if isinstance(phi, Observable) else parse_observable(phi)
    cap = eta_max(problem)
    if eta > cap and not unsafe_eta:
        raise EtaCapError(f"eta={eta} exceeds the moment-bound cap {cap}; "
                          "pass unsafe_eta=True to override")
    if horizon < 10:
        raise ValueError("horizon must be >= 10")
    law = x0_law if x0_law is not None else ("point", np.zeros(problem.dim))
    xs, tables, _ = coupling_mod.draw_inits(problem, law, replications, seed,
                                            lane=6)
    burn = int(horizon * burn_frac)
    half = horizon // 2
    octs = sorted({burn, half, horizon} - {0})
    # coarse grid of marginal snapshots for the variance envelope
    var_grid = sorted({max(1, (k * horizon) // 16) for k in range(1, 17)})
    res = engine.run_direct(problem, xs, tables, eta, horizon, seed,
                            observables=[obs.engine_params()],
                            obs_checkpoints=octs,
                            checkpoints=var_grid, threads=threads)
    s_burn = res.phi_sums[burn][:, 0] if burn > 0 else np.zeros(replications)
    s_half = res.phi_sums[half][:, 0]
    s_full = res.phi_sums[horizon][:, 0]
    avg_half = s_half / half
    avg_full = s_full / horizon
    avg_burned = (s_full - s_burn) / (horizon - burn)
    c_w = 0.0
    for step in var_grid:
        vals = obs.eval(res.snapshots[step])
        c_w = max(c_w, float(np.mean((vals - vals.mean()) ** 2)))
    return {
        "observable": obs.name,
        "growth_constant": obs.growth,
        "horizon": horizon,
        "burn_in": burn,
        "avg_half": avg_half,
        "avg_full": avg_full,
        "avg_burned": avg_burned,
        "mean_full": float(avg_full.mean()),
        "mean_burned": float(avg_burned.mean()),
        "spread_half": float(np.mean(np.abs(avg_half - avg_half.mean()))),
        "spread_full": float(np.mean(np.abs(avg_full - avg_full.mean()))),
        "c_w_hat": c_w,
        "ui_bound": {float(v): c_w / float(v) for v in ui_grid},
        "replications": replications,
    }
