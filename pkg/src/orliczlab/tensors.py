"""Growth tensors on symmetric matrices and the monotonicity equivalences.

Matrices are numpy arrays with the two trailing axes holding the ``d x d``
entries; any leading axes are batch axes.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from .calibration import fit_two_sided
from .nfunction import (
    InequalityCheck,
    NFunctionSpec,
    shifted_phi,
    shifted_phi_prime,
    sqrt_nfunction,
)

__all__ = [
    "GrowthTensor",
    "MonotonicityQuadruple",
    "frob",
    "sym",
    "apply_A",
    "apply_V",
    "radial_map",
    "random_sym",
    "sample_pairs",
    "monotonicity_quadruple",
    "quadruple_equivalence",
    "check_assumption1",
    "check_shift_change",
    "shift_change_ratios",
    "quadruple_csv",
    "RATIO_NAMES",
]

FORMS = ("potential", "closed-A1", "closed-A2", "closed-A3")


def frob(Q) -> np.ndarray:
    """Frobenius norm over the two trailing axes."""
    Q = np.asarray(Q, dtype=float)
    return np.sqrt(np.sum(Q * Q, axis=(-2, -1)))


def sym(M) -> np.ndarray:
    M = np.asarray(M)
    return 0.5 * (M + np.swapaxes(M, -1, -2))


def radial_map(Q, magnitude_fn) -> np.ndarray:
    """``g(|Q|) Q / |Q|`` with value 0 at ``Q = 0``."""
    Q = np.asarray(Q, dtype=float)
    n = frob(Q)
    safe = np.where(n > 0, n, 1.0)
    scale = np.where(n > 0, magnitude_fn(safe) / safe, 0.0)
    return scale[..., None, None] * Q


@dataclass(frozen=True)
class GrowthTensor:
    """``A(Q)``, either ``phi'(|Q|) Q/|Q|`` or a closed prototype formula."""

    phi: NFunctionSpec
    form: str = "potential"

    def __post_init__(self):
        if self.form not in FORMS:
            raise ValueError(f"unknown tensor form {self.form!r}")
        if self.form != "potential":
            params = self.phi.params
            if params is None or params["kind"] != self.form.split("-")[1]:
                raise ValueError(f"{self.form} needs a matching prototype, got {self.phi.label}")

    def __call__(self, Q):
        return apply_A(self, Q)

    @property
    def is_identity(self) -> bool:
        params = self.phi.params
        return params is not None and params["kind"] in ("A1", "A2") and params["p"] == 2 and (
            params["kind"] == "A2" or params["mu"] == 0
        )


def apply_A(tensor: GrowthTensor, Q) -> np.ndarray:
    Q = np.asarray(Q, dtype=float)
    if tensor.form == "potential":
        return radial_map(Q, tensor.phi.phi_prime)
    params = tensor.phi.params
    p, mu = params["p"], params["mu"]
    n = frob(Q)
    safe = np.where(n > 0, n, 1.0)
    if tensor.form == "closed-A1":
        coeff = mu + safe ** (p - 2.0)
    elif tensor.form == "closed-A2":
        coeff = (mu + safe * safe) ** (0.5 * (p - 2.0))
    else:
        coeff = (mu + safe) ** (p - 2.0) * np.log(math.e + safe)
    return np.where(n > 0, coeff, 0.0)[..., None, None] * Q


def apply_V(phi: NFunctionSpec, Q) -> np.ndarray:
    """The square-root tensor ``phibar'(|Q|) Q/|Q|``."""
    return radial_map(Q, sqrt_nfunction(phi).phi_prime)


# --- sampling ----------------------------------------------------------------


def random_sym(rng: np.random.Generator, n: int, d: int, norms) -> np.ndarray:
    """``n`` symmetric ``d x d`` matrices with prescribed Frobenius norms."""
    M = sym(rng.standard_normal((n, d, d)))
    M /= frob(M)[:, None, None]
    return M * np.asarray(norms, dtype=float).reshape(-1, 1, 1)


def _log_uniform(rng, n, lo, hi):
    return np.exp(rng.uniform(math.log(lo), math.log(hi), n))


def sample_pairs(seed: int, n: int, d: int, lo: float = 1e-4, hi: float = 1e4):
    """Seeded pairs ``(P, Q)`` with norms log-uniform in ``[lo, hi]``."""
    rng = np.random.default_rng(seed)
    P = random_sym(rng, n, d, _log_uniform(rng, n, lo, hi))
    Q = random_sym(rng, n, d, _log_uniform(rng, n, lo, hi))
    return P, Q


# --- the four monotonicity expressions ---------------------------------------

RATIO_NAMES = (
    "inner/curvature",
    "inner/shifted",
    "inner/vgap",
    "curvature/shifted",
    "curvature/vgap",
    "shifted/vgap",
)


@dataclass(frozen=True)
class MonotonicityQuadruple:
    inner: np.ndarray
    curvature: np.ndarray
    shifted: np.ndarray
    vgap: np.ndarray
    valid: np.ndarray

    def ratios(self) -> np.ndarray:
        """Six pairwise ratios over the valid entries, shape ``(n_valid, 6)``."""
        vals = [np.asarray(x)[self.valid] for x in (self.inner, self.curvature, self.shifted, self.vgap)]
        cols = [vals[i] / vals[j] for i in range(4) for j in range(i + 1, 4)]
        return np.stack(cols, axis=-1)


def monotonicity_quadruple(
    phi: NFunctionSpec, tensor: GrowthTensor, P, Q, zero_rtol: float = 1e-12
) -> MonotonicityQuadruple:
    """Evaluate ``(A(P)-A(Q)):(P-Q)``, ``phi''(|P|+|Q|)|P-Q|^2``,
    ``phi_{|P|}(|P-Q|)`` and ``|V(P)-V(Q)|^2``.

    Pairs with ``|P-Q| < zero_rtol (1+|P|+|Q|)`` are reported as zeros and
    flagged invalid.
    """
    P = np.asarray(P, dtype=float)
    Q = np.asarray(Q, dtype=float)
    D = P - Q
    nP, nQ, nD = frob(P), frob(Q), frob(D)
    valid = nD >= zero_rtol * (1.0 + nP + nQ)
    inner = np.sum((apply_A(tensor, P) - apply_A(tensor, Q)) * D, axis=(-2, -1))
    s = nP + nQ
    curvature = np.where(valid, phi.phi_second(np.where(s > 0, s, 1.0)) * nD * nD, 0.0)
    shifted = np.where(valid, shifted_phi(phi, nP, nD), 0.0)
    vgap = np.sum((apply_V(phi, P) - apply_V(phi, Q)) ** 2, axis=(-2, -1))
    zero = ~valid
    return MonotonicityQuadruple(
        np.where(zero, 0.0, inner),
        curvature,
        shifted,
        np.where(zero, 0.0, vgap),
        valid,
    )


@dataclass(frozen=True)
class EquivalenceResult:
    fits: dict
    violations: int
    n_valid: int

    @property
    def passed(self) -> bool:
        return self.violations == 0 and all(f.passed for f in self.fits.values())


def quadruple_equivalence(
    phi: NFunctionSpec,
    tensor: GrowthTensor,
    seed: int,
    n: int = 10_000,
    d: int = 2,
    headroom: float = 1.25,
) -> EquivalenceResult:
    """Fit and validate all six ratio constants on seeded random pairs."""
    P, Q = sample_pairs(seed, n, d)
    quad = monotonicity_quadruple(phi, tensor, P, Q)
    violations = int(np.sum(quad.valid & (quad.inner <= 0)))
    ratios = quad.ratios()
    fits = {name: fit_two_sided(ratios[:, k], headroom) for k, name in enumerate(RATIO_NAMES)}
    return EquivalenceResult(fits, violations, int(quad.valid.sum()))


def check_assumption1(
    tensor: GrowthTensor, phi: NFunctionSpec, samples: int = 1000, seed: int = 0, d: int = 2
) -> tuple[float, float]:
    """Sampled ``c = min`` of the monotonicity ratio and ``C = max`` of the growth ratio.

    Raises
    ------
    ArithmeticError
        If ``(A(P)-A(Q)):(P-Q) <= 0`` for some ``P != Q``.
    """
    if samples < 1000:
        raise ValueError("check_assumption1 needs at least 1000 samples")
    P, Q = sample_pairs(seed, samples, d)
    D = P - Q
    nD = frob(D)
    keep = nD >= 1e-12 * (1.0 + frob(P) + frob(Q))
    dA = apply_A(tensor, P) - apply_A(tensor, Q)
    inner = np.sum(dA * D, axis=(-2, -1))
    if np.any(inner[keep] <= 0):
        raise ArithmeticError("monotonicity violated")
    curv = phi.phi_second(frob(P) + frob(Q))
    lower = inner[keep] / (curv[keep] * nD[keep] ** 2)
    upper = frob(dA)[keep] / (curv[keep] * nD[keep])
    c, C = float(lower.min()), float(upper.max())
    if not (0 < c and np.isfinite(C)):
        raise ArithmeticError(f"Assumption 1 constants degenerate: c={c}, C={C}")
    return c, C


# --- shift change ------------------------------------------------------------


def _shift_change_sides(phi, S, T, C):
    nS, nSC, nTC = frob(S), frob(S - C), frob(T - C)
    lhs = shifted_phi_prime(phi, nS, frob(S - T))
    rhs = shifted_phi_prime(phi, frob(C), nSC) + shifted_phi_prime(phi, frob(C), nTC)
    return lhs, rhs


def check_shift_change(phi: NFunctionSpec, S, T, C, K: float, rtol: float = 1e-12) -> InequalityCheck:
    """``phi'_{|S|}(|S-T|) <= K (phi'_{|C|}(|S-C|) + phi'_{|C|}(|T-C|))``."""
    lhs, rhs = _shift_change_sides(phi, S, T, C)
    slack = float(K * rhs - lhs)
    return InequalityCheck(slack >= -rtol * max(1.0, float(K * rhs)), slack)


def shift_change_ratios(phi: NFunctionSpec, S, T, C) -> np.ndarray:
    """lhs/rhs of the shift-change inequality for batches of triples (rhs > 0)."""
    lhs, rhs = _shift_change_sides(phi, S, T, C)
    return lhs[rhs > 0] / rhs[rhs > 0]


# --- export ------------------------------------------------------------------


def quadruple_csv(seed: int, P, Q, quad: MonotonicityQuadruple) -> str:
    """CSV rows ``seed, |P|, |Q|, four values, six ratios`` (valid pairs only)."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["seed", "norm_P", "norm_Q", "inner", "curvature", "shifted", "vgap", *RATIO_NAMES])
    ratios = quad.ratios()
    nP, nQ = frob(P)[quad.valid], frob(Q)[quad.valid]
    vals = [np.asarray(x)[quad.valid] for x in (quad.inner, quad.curvature, quad.shifted, quad.vgap)]
    for k in range(ratios.shape[0]):
        writer.writerow(
            [seed, repr(float(nP[k])), repr(float(nQ[k]))]
            + [repr(float(v[k])) for v in vals]
            + [repr(float(r)) for r in ratios[k]]
        )
    return buf.getvalue()
