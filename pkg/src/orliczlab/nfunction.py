"""N-functions: prototypes, conjugation, shifting, square roots and growth constants.

An N-function is stored through its derivative ``phi'`` (and ``phi''``);
``phi`` itself is either a closed form or the integral of ``phi'`` from 0.
All evaluators are vectorized over numpy arrays.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional

import numpy as np

from .quadrature import integrate_from_zero

__all__ = [
    "NFunctionSpec",
    "GrowthConstants",
    "LogGrid",
    "ShiftedNFunction",
    "InequalityCheck",
    "make_prototype",
    "prototype_from_json",
    "power_function",
    "eval_phi",
    "inverse_phi_prime",
    "conjugate",
    "conjugate_spec",
    "shift",
    "shifted_phi",
    "shifted_phi_prime",
    "shifted_phi_second",
    "sqrt_nfunction",
    "estimate_growth_constants",
    "calibrate_young_constant",
    "check_young",
    "almost_increasing_constant",
    "is_phi_second_almost_increasing",
    "shift_order_ratios",
    "shift_scaling_ratios",
    "phi_second_at_zero",
    "DEFAULT_GRID",
    "ZERO_PROBE",
]

Evaluator = Callable[[np.ndarray], np.ndarray]

ZERO_PROBE = 1e-12
"""Stand-in argument for right limits at 0; ``phi''`` is never evaluated at 0."""

_BISECT_MAX_ITER = 200
_T_MAX_LIMIT = 1e300


class InequalityCheck(NamedTuple):
    passed: bool
    slack: float


@dataclass(frozen=True)
class LogGrid:
    lo: float = 1e-6
    hi: float = 1e6
    count: int = 2048

    def points(self) -> np.ndarray:
        return np.geomspace(self.lo, self.hi, self.count)

    def to_dict(self) -> dict:
        return {"lo": self.lo, "hi": self.hi, "count": self.count}


DEFAULT_GRID = LogGrid()


@dataclass(frozen=True)
class NFunctionSpec:
    """An N-function given by its first two derivatives.

    ``params`` holds the ``{kind, p, mu}`` triple for prototypes so they can
    be serialized; derived objects (conjugates, shifts, square roots) carry
    ``None``.
    """

    phi_prime: Evaluator
    phi_second: Evaluator
    phi_closed: Optional[Evaluator] = None
    label: str = "phi"
    params: Optional[dict] = field(default=None, compare=False)

    def phi(self, t):
        return eval_phi(self, t)

    def dphi(self, t):
        t = _nonneg(t)
        return self.phi_prime(t)

    def ddphi(self, t):
        t = np.asarray(t, dtype=float)
        if np.any(t <= 0):
            raise ValueError(f"{self.label}: phi'' is only evaluated at t > 0")
        return self.phi_second(t)

    def phi_by_quadrature(self, t):
        t = _nonneg(t)
        return integrate_from_zero(lambda s, _i: self.phi_prime(s), t)

    def to_json(self) -> str:
        if self.params is None:
            raise ValueError(f"{self.label} is not a serializable prototype")
        return json.dumps(self.params, sort_keys=True)


@dataclass(frozen=True)
class GrowthConstants:
    g_lo: float
    g_hi: float
    delta2: float
    q1: float
    q2: float
    grid: LogGrid

    @property
    def G(self) -> float:
        """Optimal two-sided constant of ``phi'(t) ~ t phi''(t)``."""
        return max(self.g_hi, 1.0 / self.g_lo)

    def to_dict(self) -> dict:
        return {
            "g_lo": self.g_lo,
            "g_hi": self.g_hi,
            "G": self.G,
            "delta2": self.delta2,
            "q1": self.q1,
            "q2": self.q2,
            "grid": self.grid.to_dict(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> "GrowthConstants":
        return cls(
            g_lo=float(data["g_lo"]),
            g_hi=float(data["g_hi"]),
            delta2=float(data["delta2"]),
            q1=float(data["q1"]),
            q2=float(data["q2"]),
            grid=LogGrid(**data["grid"]),
        )


def _nonneg(t) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    if np.any(t < 0) or np.any(np.isnan(t)):
        raise ValueError("N-functions are evaluated at t >= 0 only")
    return t


# --- prototypes --------------------------------------------------------------


def make_prototype(kind: str, p: float, mu: float = 0.0) -> NFunctionSpec:
    """Build one of the p-Laplacian type potentials.

    ``A1``: ``phi'(s) = (mu + s^(p-2)) s``;
    ``A2``: ``phi'(s) = (mu + s^2)^((p-2)/2) s``;
    ``A3``: ``phi'(s) = (mu + s)^(p-2) s ln(e + s)`` (requires ``p >= 2``).
    """
    kind = kind.upper()
    p = float(p)
    mu = float(mu)
    if not p > 1:
        raise ValueError(f"invalid prototype parameters: p={p} must exceed 1")
    if mu < 0:
        raise ValueError(f"invalid prototype parameters: mu={mu} must be >= 0")
    params = {"kind": kind, "p": p, "mu": mu}
    label = f"phi{kind[-1]}(p={p:g},mu={mu:g})"

    if kind == "A1":

        def d1(s):
            return mu * s + s ** (p - 1.0)

        def d2(s):
            return mu + (p - 1.0) * s ** (p - 2.0)

        def closed(t):
            return 0.5 * mu * t * t + t**p / p

        return NFunctionSpec(d1, d2, closed, label, params)

    if kind == "A2" and p == 2:
        # (mu + s^2)^0 s = s for every mu; keep the quadratic bit-exact
        return NFunctionSpec(
            lambda s: 1.0 * s, lambda s: np.ones_like(s), lambda t: 0.5 * t * t, label, params
        )

    if kind == "A2":

        def d1(s):
            with np.errstate(divide="ignore", invalid="ignore"):
                out = (mu + s * s) ** (0.5 * (p - 2.0)) * s
            return np.where(s == 0, 0.0, out)

        def d2(s):
            return (mu + s * s) ** (0.5 * (p - 4.0)) * (mu + (p - 1.0) * s * s)

        if mu == 0:

            def closed(t):
                return t**p / p

        else:
            mu_p = mu ** (0.5 * p)

            def closed(t):
                return mu_p * np.expm1(0.5 * p * np.log1p(t * t / mu)) / p

        return NFunctionSpec(d1, d2, closed, label, params)

    if kind == "A3":
        if p < 2:
            raise ValueError(
                f"invalid prototype parameters: A3 needs p >= 2 (got {p}) "
                "for phi'' to be almost increasing"
            )

        def d1(s):
            return (mu + s) ** (p - 2.0) * s * np.log(math.e + s)

        def d2(s):
            base = mu + s
            log = np.log(math.e + s)
            return base ** (p - 2.0) * (
                (p - 2.0) * s / base * log + log + s / (math.e + s)
            )

        return NFunctionSpec(d1, d2, None, label, params)

    raise ValueError(f"unknown prototype kind {kind!r}")


def prototype_from_json(text: str) -> NFunctionSpec:
    data = json.loads(text) if isinstance(text, str) else dict(text)
    return make_prototype(data["kind"], data["p"], data.get("mu", 0.0))


def power_function(p: float) -> NFunctionSpec:
    """``t^p / p``, the model N-function."""
    spec = make_prototype("A1", p, 0.0)
    return NFunctionSpec(
        spec.phi_prime, spec.phi_second, spec.phi_closed, f"t^{p:g}/{p:g}", spec.params
    )


# --- evaluation --------------------------------------------------------------


def eval_phi(spec: NFunctionSpec, t):
    """``phi(t)``: closed form when available, quadrature of ``phi'`` otherwise."""
    t = _nonneg(t)
    if spec.phi_closed is not None:
        return spec.phi_closed(t)
    return integrate_from_zero(lambda s, _i: spec.phi_prime(s), t)


def inverse_phi_prime(spec: NFunctionSpec, s) -> np.ndarray:
    """Generalized right-continuous inverse ``sup{u >= 0 : phi'(u) <= s}``.

    Bisection on ``[0, T_max]`` with ``T_max`` doubled until ``phi'(T_max) > s``.
    """
    s = _nonneg(s)
    flat = s.ravel()
    lo = np.zeros(flat.shape)
    hi = np.ones(flat.shape)
    active = flat > 0
    grow = active & (spec.phi_prime(hi) <= flat)
    while grow.any():
        lo = np.where(grow, hi, lo)
        hi = np.where(grow, 2.0 * hi, hi)
        if np.any(hi[grow] > _T_MAX_LIMIT):
            bad = flat[grow & (hi > _T_MAX_LIMIT)][0]
            raise ValueError(
                f"inverse out of sampled range: phi' stays <= {bad:g} on [0, {_T_MAX_LIMIT:g}]"
            )
        grow = active & (spec.phi_prime(hi) <= flat)

    for _ in range(_BISECT_MAX_ITER):
        open_ = active & (hi - lo > 4.0 * np.finfo(float).eps * hi)
        if not open_.any():
            break
        mid = 0.5 * (lo + hi)
        below = spec.phi_prime(mid) <= flat
        lo = np.where(open_ & below, mid, lo)
        hi = np.where(open_ & ~below, mid, hi)
    return np.where(active, lo, 0.0).reshape(s.shape)


def conjugate_spec(spec: NFunctionSpec) -> NFunctionSpec:
    """The complementary N-function, ``(phi*)' = (phi')^{-1}``."""

    def d1(s):
        return inverse_phi_prime(spec, s)

    def d2(s):
        return 1.0 / spec.phi_second(inverse_phi_prime(spec, s))

    return NFunctionSpec(d1, d2, None, f"({spec.label})*")


def conjugate(spec: NFunctionSpec, t):
    """``phi*(t) = int_0^t (phi')^{-1}(s) ds``."""
    return eval_phi(conjugate_spec(spec), t)


# --- shifted N-functions -----------------------------------------------------


def shifted_phi_prime(spec: NFunctionSpec, a, t):
    """``phi'_a(t) = phi'(a + t) t / (a + t)``, broadcasting ``a`` against ``t``."""
    a = _nonneg(a)
    t = _nonneg(t)
    a, t = np.broadcast_arrays(a, t)
    at = a + t
    with np.errstate(divide="ignore", invalid="ignore"):
        out = spec.phi_prime(at) * t / at
    out = np.where(at == 0, 0.0, out)
    return np.where(a == 0, spec.phi_prime(t), out)


def shifted_phi_second(spec: NFunctionSpec, a, t):
    a = _nonneg(a)
    t = np.asarray(t, dtype=float)
    if np.any(t <= 0):
        raise ValueError("phi''_a is only evaluated at t > 0")
    a, t = np.broadcast_arrays(a, t)
    at = a + t
    return spec.phi_second(at) * t / at + spec.phi_prime(at) * a / (at * at)


def shifted_phi(spec: NFunctionSpec, a, t):
    """``phi_a(t) = int_0^t phi'(a + s) s / (a + s) ds`` (vectorized in ``a`` and ``t``)."""
    a = _nonneg(a)
    t = _nonneg(t)
    a, t = np.broadcast_arrays(a, t)
    a_flat = np.ascontiguousarray(a).ravel()

    def integrand(s, idx):
        shift_ = a_flat[idx]
        at = shift_ + s
        with np.errstate(divide="ignore", invalid="ignore"):
            val = spec.phi_prime(at) * s / at
        return np.where(at == 0, 0.0, val)

    out = integrate_from_zero(integrand, t)
    if np.any(a == 0):
        out = np.where(a == 0, eval_phi(spec, t), out)
    return out


@dataclass(frozen=True)
class ShiftedNFunction:
    base: NFunctionSpec
    shift: float

    def phi(self, t):
        return shifted_phi(self.base, self.shift, t)

    def dphi(self, t):
        return shifted_phi_prime(self.base, self.shift, t)

    def ddphi(self, t):
        return shifted_phi_second(self.base, self.shift, t)

    def as_spec(self) -> NFunctionSpec:
        if self.shift == 0:
            return self.base
        a = self.shift
        base = self.base
        return NFunctionSpec(
            lambda t: shifted_phi_prime(base, a, t),
            lambda t: shifted_phi_second(base, a, t),
            None,
            f"{base.label}_{a:g}",
        )


def shift(spec: NFunctionSpec, a: float) -> ShiftedNFunction:
    if a < 0:
        raise ValueError(f"shift must be >= 0, got {a}")
    return ShiftedNFunction(spec, float(a))


# --- square root -------------------------------------------------------------


def sqrt_nfunction(spec: NFunctionSpec) -> NFunctionSpec:
    """The square-root potential with ``phibar'(t) = sqrt(t phi'(t))``."""

    def d1(t):
        return np.sqrt(t * spec.phi_prime(t))

    def d2(t):
        d = spec.phi_prime(t)
        return (d + t * spec.phi_second(t)) / (2.0 * np.sqrt(t * d))

    return NFunctionSpec(d1, d2, None, f"sqrt[{spec.label}]")


# --- growth constants --------------------------------------------------------

_BOYD_FACTORS = 2.0 ** np.arange(1, 10)  # 2 .. 512; exact scalings keep power laws exact


def estimate_growth_constants(
    spec: NFunctionSpec, grid: LogGrid = DEFAULT_GRID
) -> GrowthConstants:
    """Sampled ``G(phi')`` bounds, ``Delta_2`` and Boyd indices on a log grid."""
    if grid.count < 1000 or grid.lo > 1e-6 or grid.hi < 1e6:
        raise ValueError("growth constants need >= 1000 points spanning [1e-6, 1e6]")
    t = grid.points()
    d1 = spec.phi_prime(t)
    if np.any(d1 <= 0):
        raise ValueError(f"degenerate N-function {spec.label}: phi' vanishes on the grid")
    ratio = t * spec.phi_second(t) / d1

    args = np.concatenate([t, (t[None, :] * _BOYD_FACTORS[:, None]).ravel()])
    values = eval_phi(spec, args)
    phi_t = values[: t.size]
    scaled = values[t.size :].reshape(_BOYD_FACTORS.size, t.size)
    delta2 = np.max(scaled[0] / phi_t)
    boyd = np.log2(scaled / phi_t) / np.log2(_BOYD_FACTORS)[:, None]
    return GrowthConstants(
        g_lo=float(ratio.min()),
        g_hi=float(ratio.max()),
        delta2=float(delta2),
        q1=float(boyd.min()),
        q2=float(boyd.max()),
        grid=grid,
    )


def almost_increasing_constant(values) -> float:
    """Smallest ``C`` with ``g(x) <= C g(y)`` for ``x <= y`` over sampled values."""
    values = np.asarray(values, dtype=float)
    running_max = np.maximum.accumulate(values)
    return float(np.max(running_max / values))


def is_phi_second_almost_increasing(spec: NFunctionSpec, bound: float = 10.0, grid: LogGrid = DEFAULT_GRID) -> bool:
    """Whether ``phi''`` is almost increasing on ``grid`` with constant at most ``bound``."""
    return almost_increasing_constant(spec.phi_second(grid.points())) <= bound


def shift_order_ratios(spec: NFunctionSpec, a, b, t) -> np.ndarray:
    """``phi_a(t) / phi_b(t)`` for shifts ``a <= b``; bounded when ``phi''`` is almost increasing."""
    a, b, t = np.broadcast_arrays(_nonneg(a), _nonneg(b), _nonneg(t))
    if np.any(a > b):
        raise ValueError("shift ordering needs a <= b")
    num, den = shifted_phi(spec, a, t), shifted_phi(spec, b, t)
    keep = den > 0
    return num[keep] / den[keep]


def shift_scaling_ratios(spec: NFunctionSpec, s, lam) -> np.ndarray:
    """``phi_s(lam s) / (lam^2 phi(s))`` for ``s > 0`` and ``lam`` in ``(0, 1]``."""
    s, lam = np.broadcast_arrays(np.asarray(s, dtype=float), np.asarray(lam, dtype=float))
    if np.any(s <= 0) or np.any(lam <= 0) or np.any(lam > 1):
        raise ValueError("need s > 0 and 0 < lam <= 1")
    return shifted_phi(spec, s, lam * s) / (lam**2 * eval_phi(spec, s))


def phi_second_at_zero(spec: NFunctionSpec) -> float:
    """Right limit of ``phi''`` at 0, probed at ``ZERO_PROBE``."""
    return float(spec.phi_second(np.array(ZERO_PROBE)))


# --- Young's inequality ------------------------------------------------------


def calibrate_young_constant(
    spec: NFunctionSpec, delta: float, grid: LogGrid = LogGrid(1e-3, 1e3, 241)
) -> float:
    """``C(delta) = max (ab - delta phi(a)) / phi*(b)`` over grid pairs."""
    if delta <= 0:
        raise ValueError("delta must be positive")
    pts = grid.points()
    phi_a = eval_phi(spec, pts)
    phi_star_b = conjugate(spec, pts)
    gap = pts[:, None] * pts[None, :] - delta * phi_a[:, None]
    return float(np.max(gap / phi_star_b[None, :]))


def check_young(
    spec: NFunctionSpec, a: float, b: float, delta: float, C: float, rtol: float = 1e-12
) -> InequalityCheck:
    """Check ``ab <= delta phi(a) + C phi*(b)``; slack is rhs minus lhs."""
    if delta <= 0:
        raise ValueError("delta must be positive")
    rhs = delta * float(eval_phi(spec, a)) + C * float(conjugate(spec, b))
    slack = rhs - a * b
    return InequalityCheck(slack >= -rtol * max(1.0, abs(rhs)), slack)
