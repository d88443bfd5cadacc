"""Sum-decomposable drift problems and verification of their standing assumptions.

A problem is a mean drift F(x) = (1/N) * sum_i F_i(x) together with declared
constants: a Lipschitz modulus M (>= 1), the offset bound m_hat = max_i |F_i(0)|,
and dissipativity constants c1 > 0, 0 < c2 <= 1 with <F(x), x> >= c2|x|^2 - c1.
Components come from named analytic families (not opaque callables) so the
constants can be derived, checked and serialized.

All component evaluations use a fixed left-to-right accumulation order.  The
compiled and pure-python engines reproduce exactly the same floating-point
values, which the test suite checks bitwise.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "AffineComponent",
    "TanhWellComponent",
    "Problem",
    "ProblemPack",
    "builtin_problem",
    "BUILTIN_NAMES",
    "component_eval",
    "mean_drift",
    "verify_assumptions",
    "problem_to_json",
    "problem_from_json",
]

KIND_AFFINE = 0
KIND_TANH_WELL = 1

# Scalar tanh must agree bitwise between engines; libm tanh (math.tanh) is the
# canonical definition.  numpy's SIMD tanh differs in the last ulp on this
# platform, so it is never used on chain data.
_tanh_map = np.frompyfunc(math.tanh, 1, 1)


def _tanh_batch(t):
    """Elementwise libm tanh for float64 arrays."""
    return _tanh_map(t).astype(np.float64)


@dataclass(frozen=True, eq=False)
class AffineComponent:
    """F(x) = A x + b."""

    matrix: np.ndarray
    offset: np.ndarray

    kind = KIND_AFFINE

    def eval(self, x):
        d = self.offset.shape[0]
        out = self.offset.copy()
        for c in range(d):
            out += self.matrix[:, c] * x[c]
        return out

    def eval_batch(self, x):
        # x: (R, d); accumulation order per output coordinate matches eval().
        r, d = x.shape
        out = np.repeat(self.offset[None, :], r, axis=0)
        for c in range(d):
            out += x[:, c:c + 1] * self.matrix[:, c][None, :]
        return out

    def lipschitz(self):
        return float(np.linalg.norm(self.matrix, 2))

    def params(self):
        return {"matrix": self.matrix.tolist(), "offset": self.offset.tolist()}


@dataclass(frozen=True, eq=False)
class TanhWellComponent:
    """F(x) = x - amplitude * tanh(<x, u>) * u for a unit direction u."""

    direction: np.ndarray
    amplitude: float

    kind = KIND_TANH_WELL

    def eval(self, x):
        d = self.direction.shape[0]
        t = x[0] * self.direction[0]
        for c in range(1, d):
            t += x[c] * self.direction[c]
        w = self.amplitude * math.tanh(t)
        return x - w * self.direction

    def eval_batch(self, x):
        d = self.direction.shape[0]
        t = x[:, 0] * self.direction[0]
        for c in range(1, d):
            t += x[:, c] * self.direction[c]
        w = self.amplitude * _tanh_batch(t)
        return x - w[:, None] * self.direction[None, :]

    def lipschitz(self):
        # Jacobian I - a*sech^2(t) u u^T has spectrum {1, 1 - a*sech^2};
        # the modulus is max(1, a - 1).
        return max(1.0, abs(self.amplitude) - 1.0)

    def params(self):
        return {"direction": self.direction.tolist(), "amplitude": self.amplitude}


_COMPONENT_KINDS = {"affine": AffineComponent, "tanh_well": TanhWellComponent}


@dataclass(frozen=True, eq=False)
class Problem:
    """A sum-decomposable drift with declared regularity constants.

    Immutable after construction; safe for concurrent shared reads.
    """

    dim: int
    count: int
    components: tuple
    lipschitz: float           # M >= 1
    m_hat: float               # max_i |F_i(0)|
    dissip_c1: float           # c1 > 0
    dissip_c2: float           # 0 < c2 <= 1
    name: str = ""
    _pack: "ProblemPack" = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.dim < 1 or self.count < 1:
            raise ValueError("dim and count must be positive")
        if len(self.components) != self.count:
            raise ValueError(f"expected {self.count} components, "
                             f"got {len(self.components)}")
        if self.lipschitz < 1.0:
            raise ValueError("declared Lipschitz modulus must satisfy M >= 1")
        if self.m_hat < 0.0:
            raise ValueError("m_hat must be nonnegative")
        if not (self.dissip_c1 > 0.0):
            raise ValueError("dissipativity requires c1 > 0")
        if not (0.0 < self.dissip_c2 <= 1.0):
            raise ValueError("dissipativity requires 0 < c2 <= 1")
        object.__setattr__(self, "_pack", ProblemPack.from_problem(self))

    @property
    def pack(self):
        return self._pack

    def check_vector(self, x, what="x"):
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.dim,):
            raise ValueError(f"{what} must have shape ({self.dim},), got {x.shape}")
        if not np.all(np.isfinite(x)):
            raise ValueError(f"{what} must be finite")
        return x


class ProblemPack:
    """Flat parameter arrays consumed by the chain engines."""

    __slots__ = ("dim", "count", "kinds", "aff_a", "aff_b", "well_u", "well_amp")

    @classmethod
    def from_problem(cls, problem):
        self = cls()
        d, n = problem.dim, problem.count
        self.dim, self.count = d, n
        self.kinds = np.zeros(n, dtype=np.int64)
        self.aff_a = np.zeros((n, d, d))
        self.aff_b = np.zeros((n, d))
        self.well_u = np.zeros((n, d))
        self.well_amp = np.zeros(n)
        for i, comp in enumerate(problem.components):
            self.kinds[i] = comp.kind
            if comp.kind == KIND_AFFINE:
                self.aff_a[i] = comp.matrix
                self.aff_b[i] = comp.offset
            else:
                self.well_u[i] = comp.direction
                self.well_amp[i] = comp.amplitude
        for arr in (self.kinds, self.aff_a, self.aff_b, self.well_u, self.well_amp):
            arr.setflags(write=False)
        return self


def component_eval(problem, i, x):
    """Evaluate F_i(x) for a 1-based component index."""
    if not 1 <= i <= problem.count:
        raise ValueError(f"component index {i} out of range 1..{problem.count}")
    x = problem.check_vector(x)
    return problem.components[i - 1].eval(x)


def mean_drift(problem, x):
    """Mean drift (1/N) * sum_i F_i(x), accumulated left to right."""
    x = problem.check_vector(x)
    acc = problem.components[0].eval(x)
    for comp in problem.components[1:]:
        acc += comp.eval(x)
    return acc / problem.count


def eval_all_components(problem, x_batch):
    """Evaluate every component on a batch of states; returns (R, N, d)."""
    r = x_batch.shape[0]
    out = np.empty((r, problem.count, problem.dim))
    for i, comp in enumerate(problem.components):
        out[:, i, :] = comp.eval_batch(x_batch)
    return out


# ---------------------------------------------------------------------------
# Built-in problems with closed-form constants.

def _lin_1d():
    comps = (
        AffineComponent(np.array([[2.0]]), np.array([-1.0])),
        AffineComponent(np.array([[1.0]]), np.array([1.0])),
    )
    return Problem(dim=1, count=2, components=comps, lipschitz=2.0, m_hat=1.0,
                   dissip_c1=0.01, dissip_c2=1.0, name="lin-1d")


def _micro_1d():
    comps = (
        AffineComponent(np.array([[1.0]]), np.array([0.1])),
        AffineComponent(np.array([[1.0]]), np.array([-0.1])),
    )
    return Problem(dim=1, count=2, components=comps, lipschitz=1.0, m_hat=0.1,
                   dissip_c1=0.01, dissip_c2=1.0, name="micro-1d")


def _well_2d():
    isq = math.sqrt(0.5)
    dirs = [(1.0, 0.0), (0.0, 1.0), (isq, isq), (-isq, isq)]
    comps = tuple(TanhWellComponent(np.array(u), 3.0) for u in dirs)
    # Each well direction contributes <x,u>^2 inward pull of at most 3|x|;
    # over the four directions <F(x),x> >= |x|^2 - 3|x| >= 0.5|x|^2 - 4.5.
    return Problem(dim=2, count=4, components=comps, lipschitz=4.0, m_hat=0.0,
                   dissip_c1=4.5, dissip_c2=0.5, name="well-2d")


_BUILTINS = {"lin-1d": _lin_1d, "micro-1d": _micro_1d, "well-2d": _well_2d}
BUILTIN_NAMES = tuple(sorted(_BUILTINS))


def builtin_problem(name):
    try:
        return _BUILTINS[name]()
    except KeyError:
        raise ValueError(f"unknown builtin problem {name!r}; "
                         f"choose from {BUILTIN_NAMES}") from None


# ---------------------------------------------------------------------------
# Sampled verification of the declared constants.

def verify_assumptions(problem, sample_count=1000, radius=10.0, seed=0):
    """Monte-Carlo check of the Lipschitz and dissipativity declarations.

    Draws `sample_count` random pairs (x, y) and points x in the ball of the
    given radius and reports

    * worst_ratio  = max_i,x,y |F_i(x)-F_i(y)| / |x-y|
    * worst_margin = min_x <F(x), x> - c2|x|^2 + c1

    Both flags are true iff the declared constants hold on every sample.
    Report-only: never raises on a violation.
    """
    if sample_count < 1:
        raise ValueError("sample_count must be >= 1")
    if not radius > 0:
        raise ValueError("radius must be positive")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5A6A]))
    d = problem.dim

    def ball(n):
        z = rng.standard_normal((n, d))
        z /= np.maximum(np.linalg.norm(z, axis=1, keepdims=True), 1e-300)
        return z * (radius * rng.random((n, 1)) ** (1.0 / d))

    xs, ys, zs = ball(sample_count), ball(sample_count), ball(sample_count)
    worst_ratio = 0.0
    for comp in problem.components:
        diff = np.linalg.norm(comp.eval_batch(xs) - comp.eval_batch(ys), axis=1)
        dist = np.linalg.norm(xs - ys, axis=1)
        ok = dist > 0
        if ok.any():
            worst_ratio = max(worst_ratio, float(np.max(diff[ok] / dist[ok])))

    mean = eval_all_components(problem, zs).mean(axis=1)
    margin = (np.einsum("ij,ij->i", mean, zs)
              - problem.dissip_c2 * np.einsum("ij,ij->i", zs, zs)
              + problem.dissip_c1)
    worst_margin = float(np.min(margin))

    offsets = max(float(np.linalg.norm(c.eval(np.zeros(d)))) for c in problem.components)
    return {
        "lipschitz_ok": bool(worst_ratio <= problem.lipschitz * (1.0 + 1e-12)),
        "dissip_ok": bool(worst_margin >= -1e-12),
        "m_hat_ok": bool(offsets <= problem.m_hat * (1.0 + 1e-12) + 1e-300),
        "worst_ratio": worst_ratio,
        "worst_margin": worst_margin,
        "samples": int(sample_count),
        "radius": float(radius),
    }


# ---------------------------------------------------------------------------
# JSON round-tripping.

def problem_to_json(problem):
    doc = {
        "dim": problem.dim,
        "count": problem.count,
        "components": [{"kind": ("affine" if c.kind == KIND_AFFINE else "tanh_well"),
                        "params": c.params()} for c in problem.components],
        "lipschitz": problem.lipschitz,
        "m_hat": problem.m_hat,
        "c1": problem.dissip_c1,
        "c2": problem.dissip_c2,
    }
    if problem.name:
        doc["name"] = problem.name
    return json.dumps(doc, sort_keys=True)


def problem_from_json(text):
    doc = json.loads(text) if isinstance(text, str) else dict(text)
    comps = []
    for entry in doc["components"]:
        kind, params = entry["kind"], entry["params"]
        if kind == "affine":
            comps.append(AffineComponent(
                np.asarray(params["matrix"], dtype=np.float64),
                np.asarray(params["offset"], dtype=np.float64)))
        elif kind == "tanh_well":
            comps.append(TanhWellComponent(
                np.asarray(params["direction"], dtype=np.float64),
                float(params["amplitude"])))
        else:
            raise ValueError(f"unknown component kind {kind!r}")
    return Problem(dim=int(doc["dim"]), count=int(doc["count"]),
                   components=tuple(comps), lipschitz=float(doc["lipschitz"]),
                   m_hat=float(doc["m_hat"]), dissip_c1=float(doc["c1"]),
                   dissip_c2=float(doc["c2"]), name=doc.get("name", ""))
