"""Random-map representation of the (x, table) chain with regeneration.

The one-step conditional law of x given (x, table, s) is Gaussian with mean

    m(x, table, s) = x - (eta/N) sum_i table_i - eta (F_s(x) - table_s)

and covariance 2 eta I.  On the "good set" {|x| <= K, all rows <= m_hat + M K}
this Gaussian dominates beta times the uniform law on the regeneration ball
B(r): a minorization.  The map realizes the split explicitly: with the shared
selector below beta the next x is the shared regeneration point (the same for
every good-set state, which is what couples differently initialized copies);
otherwise it is a residual-kernel draw realized by rejection.  Outside the
good set the map takes the plain Gaussian step.  In every branch the marginal
law of x' is exactly the Gaussian above, so the map-chain and the direct
chain agree in law.

The textbook construction uses r = 1.  A smaller regeneration ball (r <= K)
is supported so that regeneration is observable at desk scale; the derived
constant beta(K, r) keeps the worst-case density ratio exactly one, which
`verify_minorization` checks analytically and by Monte Carlo.

beta is carried in log space throughout: at faithful constants it underflows
any float, and the map then (correctly) never regenerates.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace

import numpy as np

from . import noise as noise_mod
from .errors import ConfigurationError, EtaCapError
from .sampler import eta_max

__all__ = [
    "ConstantsBundle",
    "unit_ball_volume",
    "beta_for",
    "beta_log_radius",
    "derive_constants",
    "with_overrides",
    "transition_mean",
    "residual_sample",
    "map_step",
    "iterate_Z",
    "verify_minorization",
    "MapConsts",
]


def unit_ball_volume(d):
    """Lebesgue volume of the d-dimensional unit ball."""
    return math.pi ** (d / 2.0) / math.gamma(d / 2.0 + 1.0)


def beta_log_radius(d, eta, k_radius, m_hat, lipschitz, regen_radius=1.0):
    """log beta for a regeneration ball of radius r.

    beta = vol(B(r)) * (4 pi eta)^(-d/2) * exp(-(3 m_hat + 4 M K + r)^2 / (4 eta)).

    The exponent radius bounds |u - m| for u in B(r) and any good-set mean m
    (|m| <= K + 3 eta (m_hat + M K) <= 3 m_hat + 4 M K for eta <= 1, M >= 1).
    Valid for every eta; no step-size cap is needed here.
    """
    if not eta > 0:
        raise ValueError("eta must be positive")
    if k_radius < 0 or regen_radius <= 0:
        raise ValueError("radii must be nonnegative (regeneration radius positive)")
    vol = unit_ball_volume(d) * regen_radius ** d
    reach = 3.0 * m_hat + 4.0 * lipschitz * k_radius + regen_radius
    return math.log(vol) - reach * reach / (4.0 * eta) \
        - 0.5 * d * math.log(4.0 * math.pi * eta)


def beta_for(d, eta, k_radius, m_hat, lipschitz):
    """log beta for the unit regeneration ball (the default construction)."""
    return beta_log_radius(d, eta, k_radius, m_hat, lipschitz, regen_radius=1.0)


@dataclass(frozen=True)
class ConstantsBundle:
    """Derived constants with full provenance of their inputs.

    c_check bounds the chain's stationary second moment scale, c_hat the same
    for re-initializations drawn from the running chain, k_eps the good-set
    radius making excursions outside it eps-rare, and log_beta the
    minorization constant on that good set.
    """

    eps: float
    eta: float
    c_check: float
    c_hat: float
    k_eps: float
    log_beta: float
    good_x_radius: float
    good_g_radius: float
    regen_radius: float
    e_x0_sq: float
    problem_name: str = ""
    unsafe_eta: bool = False
    overridden: bool = False

    @property
    def beta(self):
        """Linear-space beta; underflows to 0.0 at faithful constants."""
        try:
            return math.exp(self.log_beta)
        except OverflowError:
            return math.inf

    def to_json(self):
        return json.dumps({
            "eps": self.eps,
            "eta": self.eta,
            "c_check": self.c_check,
            "c_hat": self.c_hat,
            "K": self.k_eps,
            "log_beta": self.log_beta,
            "good_x_radius": self.good_x_radius,
            "good_g_radius": self.good_g_radius,
            "regen_radius": self.regen_radius,
            "e_x0_sq": self.e_x0_sq,
            "problem": self.problem_name,
            "unsafe_eta": self.unsafe_eta,
            "overridden": self.overridden,
        }, sort_keys=True)


def moment_bound_x(problem, eta, e_x0_sq):
    """Uniform-in-time bound on E|X_n|^2: 2(2d + c1 + 2 m_hat^2 + E|X_0|^2)/(c2 eta)."""
    p = problem
    return 2.0 * (2.0 * p.dim + p.dissip_c1 + 2.0 * p.m_hat ** 2 + e_x0_sq) \
        / (p.dissip_c2 * eta)


def derive_constants(problem, eta, eps, e_x0_sq=0.0, unsafe_eta=False):
    """Build the full constants bundle for a problem and step size.

    eps must lie in (0, 1/3).  eta beyond the moment cap is refused unless
    unsafe_eta is set (and is never allowed beyond 1, where the good-set
    reach bound behind beta stops holding).
    """
    if not 0.0 < eps < 1.0 / 3.0:
        raise ConfigurationError("eps must lie in (0, 1/3)")
    cap = eta_max(problem)
    if eta > cap and not unsafe_eta:
        raise EtaCapError(
            f"eta={eta} exceeds the moment-bound cap {cap}; "
            "pass unsafe_eta=True to override")
    if not 0.0 < eta <= 1.0:
        raise ConfigurationError("eta must lie in (0, 1]")
    p = problem
    front = 2.0 * (p.count + 1) * (p.m_hat ** 2 + p.lipschitz ** 2)
    c_check = front * moment_bound_x(p, eta, e_x0_sq)
    c_hat = front * moment_bound_x(p, eta, c_check)
    k_eps = math.sqrt((2.0 * p.count + 2.0) * c_hat / eps)
    log_beta = beta_for(p.dim, eta, k_eps, p.m_hat, p.lipschitz)
    return ConstantsBundle(
        eps=eps, eta=eta, c_check=c_check, c_hat=c_hat, k_eps=k_eps,
        log_beta=log_beta,
        good_x_radius=k_eps,
        good_g_radius=p.m_hat + p.lipschitz * k_eps,
        regen_radius=1.0,
        e_x0_sq=e_x0_sq,
        problem_name=p.name,
        unsafe_eta=bool(eta > cap),
    )


def with_overrides(problem, bundle, k_override=None, regen_radius=None):
    """Shrink the good set (and optionally the regeneration ball) for testability.

    beta is recomputed from the declared constants at the overridden radii, so
    it remains a valid minorization lower bound (gate with
    `verify_minorization`).  Coupling experiments additionally require
    regen_radius <= K so that a regeneration sweep stays inside the good set.
    """
    k = bundle.k_eps if k_override is None else float(k_override)
    r = bundle.regen_radius if regen_radius is None else float(regen_radius)
    if k < 0 or r <= 0:
        raise ConfigurationError("overridden radii must be nonnegative "
                                 "(regeneration radius positive)")
    log_beta = beta_log_radius(problem.dim, bundle.eta, k, problem.m_hat,
                               problem.lipschitz, regen_radius=r)
    return replace(
        bundle,
        k_eps=k,
        good_x_radius=k,
        good_g_radius=problem.m_hat + problem.lipschitz * k,
        regen_radius=r,
        log_beta=log_beta,
        overridden=True,
    )


class MapConsts:
    """Scalar constants consumed by the map engines (one shared derivation)."""

    __slots__ = ("eta", "eta_over_n", "sqrt2eta", "k2", "g2", "regen_radius",
                 "r2", "beta", "resid_const", "log_beta", "ln_nu")

    def __init__(self, problem, bundle):
        d = problem.dim
        self.eta = float(bundle.eta)
        self.eta_over_n = self.eta / problem.count
        self.sqrt2eta = math.sqrt(2.0 * self.eta)
        self.k2 = bundle.good_x_radius * bundle.good_x_radius
        self.g2 = bundle.good_g_radius * bundle.good_g_radius
        self.regen_radius = float(bundle.regen_radius)
        self.r2 = self.regen_radius * self.regen_radius
        self.log_beta = float(bundle.log_beta)
        try:
            self.beta = math.exp(self.log_beta)
        except OverflowError:
            raise ConfigurationError("beta must be below 1") from None
        if self.beta >= 1.0:
            raise ConfigurationError("beta must be below 1")
        # log of the uniform density on the regeneration ball
        self.ln_nu = -math.log(unit_ball_volume(d) * self.regen_radius ** d)
        # residual acceptance threshold: accept a proposal z (log-uniform lw)
        # iff lw >= 0.5|z|^2 + resid_const, or the proposal leaves the ball.
        self.resid_const = self.log_beta + self.ln_nu \
            + 0.5 * d * math.log(4.0 * math.pi * self.eta)


def transition_mean(problem, x, table, index, eta):
    """Conditional mean of the next x; its law is N(mean, 2 eta I)."""
    if not 1 <= index <= problem.count:
        raise ValueError(f"index {index} out of range 1..{problem.count}")
    s = index - 1
    fs = problem.components[s].eval(x)
    acc = table[0].copy()
    for i in range(1, table.shape[0]):
        acc += table[i]
    upd = (eta / problem.count) * acc + eta * (fs - table[s])
    return x - upd


def _sq_norm(v):
    acc = v[0] * v[0]
    for c in range(1, v.shape[0]):
        acc += v[c] * v[c]
    return acc


def _in_good_set(x, table, consts):
    if not _sq_norm(x) <= consts.k2:
        return False
    for i in range(table.shape[0]):
        if not _sq_norm(table[i]) <= consts.g2:
            return False
    return True


def residual_sample(problem, x, table, index, eta, bundle, record):
    """Draw from (q - beta nu) / (1 - beta) by rejection against q.

    Proposals y = m + sqrt(2 eta) z come from the Gaussian kernel itself; a
    proposal is accepted when w * q(y) >= beta * nu(y) for a fresh uniform w,
    which is automatic outside the regeneration ball where nu vanishes.
    Deterministic in the record's substream.  Raises if beta exceeds the
    minorization bound at this state's mean (the residual would be signed).
    """
    consts = MapConsts(problem, bundle)
    m = transition_mean(problem, x, table, index, eta)
    reach = math.sqrt(_sq_norm(m)) + consts.regen_radius
    worst_ln_q = -reach * reach / (4.0 * eta) \
        - 0.5 * problem.dim * math.log(4.0 * math.pi * eta)
    if consts.log_beta + consts.ln_nu > worst_ln_q + 1e-12:
        raise ValueError("beta exceeds the minorization bound at this state")
    return _residual_from_record(m, consts, record)


def _residual_from_record(m, consts, record):
    d = m.shape[0]
    for j in range(record.resid_z.shape[0]):
        z = record.resid_z[j]
        y = m + consts.sqrt2eta * z
        if _sq_norm(y) > consts.r2:
            return y
        if record.resid_logw[j] >= 0.5 * _sq_norm(z) + consts.resid_const:
            return y
    return noise_mod.slow_residual_draw(record.slow_key, m, consts.sqrt2eta,
                                        consts.resid_const, consts.r2)


def map_step(problem, x, table, record, eta, bundle):
    """One random-map transition; marginal law of x' equals the Gaussian kernel.

    On the good set: the shared regeneration point (scaled to the regeneration
    ball) when the selector clears beta, a residual draw otherwise.  Off the
    good set: the plain Gaussian step.  The table updates exactly as in the
    direct chain, from the pre-step x.
    """
    if abs(eta - bundle.eta) > 0:
        raise ConfigurationError("bundle was derived for a different eta")
    consts = MapConsts(problem, bundle)
    s = record.index - 1
    fs = problem.components[s].eval(x)
    if _in_good_set(x, table, consts):
        if record.selector <= consts.beta:
            x_new = consts.regen_radius * record.regen_point
        else:
            m = transition_mean(problem, x, table, record.index, eta)
            x_new = _residual_from_record(m, consts, record)
    else:
        m = transition_mean(problem, x, table, record.index, eta)
        x_new = m + consts.sqrt2eta * record.gauss
    table_new = table.copy()
    table_new[s] = fs
    return x_new, table_new


def iterate_Z(problem, start, stop, x, table, lane, eta, bundle):
    """Compose map steps along a noise lane from step `start` to step `stop`.

    Records are addressed by absolute step, so two calls sharing a lane share
    their randomness.  Returns the pair unchanged when stop <= start.
    """
    if start < 0:
        raise ValueError("start must be >= 0")
    x = np.array(x, dtype=np.float64, copy=True)
    table = np.array(table, dtype=np.float64, copy=True)
    for step in range(start, stop):
        x, table = map_step(problem, x, table, lane.record(step), eta, bundle)
    return x, table


def verify_minorization(problem, eta, bundle, trials=10000, seed=0):
    """Check q(x, g, s, u) >= beta * nu(u) on the good set.

    Analytic part: at the extreme configuration |u - m| = 3 m_hat + 4 M K + r
    the density ratio equals one by the construction of beta; checked to a few
    ulp.  Monte-Carlo part: random good-set states and points u in the
    regeneration ball must give ratio >= 1.  Report-only.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    consts = MapConsts(problem, bundle)
    d = problem.dim
    half_d_ln = 0.5 * d * math.log(4.0 * math.pi * eta)

    def ln_ratio(dist_sq):
        ln_q = -dist_sq / (4.0 * eta) - half_d_ln
        return ln_q - (consts.log_beta + consts.ln_nu)

    # Analytic worst case: mean at maximal reach, u diametrically opposite.
    reach = 3.0 * problem.m_hat + 4.0 * problem.lipschitz * bundle.good_x_radius \
        + consts.regen_radius
    worst_ratio = math.exp(ln_ratio(reach * reach))
    center_log_ratio = ln_ratio(0.0)

    rng = noise_mod.verify_rng(seed)
    k, g_rad, r = bundle.good_x_radius, bundle.good_g_radius, consts.regen_radius
    min_ratio_log = math.inf
    block = 4096
    done = 0
    while done < trials:
        n = min(block, trials - done)
        xs = noise_mod.unit_ball(rng, (n,), d) * k
        tables = noise_mod.unit_ball(rng, (n, problem.count), d) * g_rad
        ss = rng.integers(1, problem.count + 1, size=n)
        us = noise_mod.unit_ball(rng, (n,), d) * r
        for t in range(n):
            m = transition_mean(problem, xs[t], tables[t], int(ss[t]), eta)
            diff = us[t] - m
            min_ratio_log = min(min_ratio_log, ln_ratio(_sq_norm(diff)))
        done += n

    min_ratio = math.exp(min_ratio_log) if min_ratio_log < 700 else math.inf
    ok_worst = abs(worst_ratio - 1.0) <= 4 * np.spacing(1.0)
    ok_samples = min_ratio_log >= 0.0
    return {
        "min_density_ratio": min_ratio,
        "min_log_ratio": min_ratio_log,
        "worst_case_ratio": worst_ratio,
        "center_log_ratio": center_log_ratio,
        "trials": int(trials),
        "worst_case_ok": bool(ok_worst),
        "samples_ok": bool(ok_samples),
        "pass": bool(ok_worst and ok_samples),
    }
