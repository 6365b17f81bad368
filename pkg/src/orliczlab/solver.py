"""Implicit Euler for ``u_t - div A(G u) = f`` on the periodic box.

``G`` is the symmetric gradient for ``sAL`` and the full gradient for ``AL``.
Each step is solved by damped Picard iteration: the correction solves a
linear problem with the frozen isotropic coefficient ``phi''(|G u_k| + reg)``
(conjugate gradients), and the step length is halved until the nonlinear
residual decreases.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np
from scipy.sparse.linalg import LinearOperator, cg

from .fields import Grid, SpaceTimeField, divergence, gradient, sym_gradient, tensor_sq
from .nfunction import NFunctionSpec, ZERO_PROBE, eval_phi
from .tensors import GrowthTensor, apply_A

__all__ = [
    "SYSTEMS",
    "ProblemSpec",
    "SolveReport",
    "Forcing",
    "ConvergenceError",
    "apply_operator",
    "operator_G",
    "as_matrices",
    "from_matrices",
    "step_implicit",
    "solve",
    "manufactured_forcing",
    "energy_monitor",
    "l2_norm",
    "rms_norm",
]

log = logging.getLogger(__name__)

SYSTEMS = ("sAL", "AL")
REG = 1e-10
COEFF_CAP = 1e12


class ConvergenceError(RuntimeError):
    """Picard iteration failed; ``history`` holds the residual norms."""

    def __init__(self, message: str, history: list):
        super().__init__(message)
        self.history = list(history)


def as_matrices(T, dim: int):
    """Move the two matrix axes (just before space) to the end."""
    nd = np.ndim(T)
    return np.moveaxis(T, (nd - dim - 2, nd - dim - 1), (-2, -1))


def from_matrices(M, dim: int):
    nd = np.ndim(M)
    return np.moveaxis(M, (-2, -1), (nd - dim - 2, nd - dim - 1))


def operator_G(system: str, u, hx: float, dim: int):
    if system == "sAL":
        return sym_gradient(u, hx, dim)
    if system == "AL":
        return gradient(u, hx, dim)
    raise ValueError(f"unknown system {system!r}; expected one of {SYSTEMS}")


def apply_operator(system: str, tensor: GrowthTensor, u, grid: Grid):
    """``-div A(G u)``, the divergence being the exact adjoint of ``G``."""
    Gu = operator_G(system, u, grid.hx, grid.dim)
    sigma = from_matrices(apply_A(tensor, as_matrices(Gu, grid.dim)), grid.dim)
    return -divergence(sigma, grid.hx, grid.dim)


def l2_norm(v, grid: Grid) -> float:
    return math.sqrt(float(np.sum(np.asarray(v) ** 2)) * grid.cell_volume)


def rms_norm(v, grid: Grid) -> float:
    """L2 norm normalized by the box volume."""
    return l2_norm(v, grid) / math.sqrt(grid.L**grid.dim)


# --- problem definition ------------------------------------------------------


@dataclass(frozen=True)
class Forcing:
    """Forcing sampled on every slice, with its spatial gradient."""

    values: np.ndarray  # (m+1, d, *space)
    grad: np.ndarray  # (m+1, d, dim, *space)


ForcingLike = Union[None, Forcing, np.ndarray, Callable[[float], np.ndarray]]


@dataclass
class ProblemSpec:
    system: str
    tensor: GrowthTensor
    grid: Grid
    u0: np.ndarray
    forcing: ForcingLike = None
    tol: float = 1e-9
    max_iter: int = 200
    cg_factor: float = 1e-2

    def __post_init__(self):
        if self.system not in SYSTEMS:
            raise ValueError(f"unknown system {self.system!r}")
        g = self.grid
        if g.dt > g.L**2 / 4:
            raise ValueError("dt exceeds the L^2/4 sanity cap")
        if self.u0.shape != (g.dim,) + g.space_shape:
            raise ValueError(f"u0 shape {self.u0.shape} does not match grid {g}")
        if not np.all(np.isfinite(self.u0)):
            raise ValueError("initial field must be finite")

    @property
    def phi(self) -> NFunctionSpec:
        return self.tensor.phi

    def forcing_slice(self, k: int) -> np.ndarray:
        f = self.forcing
        if f is None:
            return np.zeros_like(self.u0)
        if isinstance(f, Forcing):
            out = f.values[k]
        elif callable(f):
            out = np.asarray(f(k * self.grid.dt), dtype=float)
        else:
            out = np.asarray(f)[k]
        if not np.all(np.isfinite(out)):
            raise ValueError(f"forcing not finite at slice {k}")
        return out


@dataclass
class SolveReport:
    trajectory: SpaceTimeField
    iterations: list = field(default_factory=list)
    residuals: list = field(default_factory=list)
    residual_histories: list = field(default_factory=list)
    capped: bool = False
    floor_steps: int = 0  # steps stopped at the rounding floor above tol
    energy: dict = field(default_factory=dict)

    def summary(self) -> dict:
        g = self.trajectory.grid
        return {
            "grid": {"dim": g.dim, "n": g.n, "L": g.L, "dt": g.dt, "m": g.m},
            "steps": len(self.iterations),
            "max_iterations": max(self.iterations, default=0),
            "total_iterations": int(sum(self.iterations)),
            "max_residual": max(self.residuals, default=0.0),
            "capped": self.capped,
            "floor_steps": self.floor_steps,
            "final_l2_energy": self.energy["l2"][-1] if self.energy else None,
        }

    def summary_json(self) -> str:
        return json.dumps(self.summary(), sort_keys=True)


# --- one implicit step -------------------------------------------------------


def _frozen_coefficient(phi: NFunctionSpec, Gu, dim: int):
    mag = np.sqrt(tensor_sq(Gu, dim, 2))
    c = phi.phi_second(mag + REG)
    capped = bool(np.any(c > COEFF_CAP))
    return np.minimum(c, COEFF_CAP), capped


def _rounding_floor(grid: Grid, u, u_prev, f_next, r) -> float:
    """Residual size reachable in double precision: a few hundred ulps of the largest term."""
    dt = grid.dt
    op = r - (u - u_prev) / dt + f_next
    scale = (l2_norm(u, grid) + l2_norm(u_prev, grid)) / dt + l2_norm(op, grid) + l2_norm(f_next, grid)
    return 256 * np.finfo(float).eps * scale


def step_implicit(spec: ProblemSpec, u_prev, f_next, return_info: bool = False):
    """Solve ``(u - u_prev)/dt - div A(G u) = f_next`` for ``u``."""
    grid = spec.grid
    dim, hx, dt = grid.dim, grid.hx, grid.dt
    u_prev = np.asarray(u_prev, dtype=float)
    if not np.all(np.isfinite(u_prev)):
        raise FloatingPointError("previous slice is not finite")
    shape = u_prev.shape
    f_norm = l2_norm(f_next, grid)
    target = spec.tol * (1.0 + f_norm)

    def residual(u):
        return (u - u_prev) / dt + apply_operator(spec.system, spec.tensor, u, grid) - f_next

    u = u_prev.copy()
    r = residual(u)
    rn = l2_norm(r, grid)
    history = [rn]
    capped = False
    at_floor = False
    iters = 0
    while rn > target:
        if rn <= _rounding_floor(grid, u, u_prev, f_next, r):
            at_floor = True
            break
        if iters >= spec.max_iter:
            raise ConvergenceError(
                f"Picard did not converge in {spec.max_iter} iterations (residual {rn:.3e})", history
            )
        coeff, cap = _frozen_coefficient(spec.phi, operator_G(spec.system, u, hx, dim), dim)
        capped |= cap

        def matvec(v, coeff=coeff):
            v = v.reshape(shape)
            Gv = operator_G(spec.system, v, hx, dim)
            return (v / dt - divergence(coeff * Gv, hx, dim)).ravel()

        A = LinearOperator((u.size, u.size), matvec=matvec, dtype=float)
        rhs = -r.ravel()
        delta, info = cg(A, rhs, rtol=spec.cg_factor, atol=0.0, maxiter=10 * u.size)
        if info < 0:
            raise ConvergenceError("inner CG breakdown", history)
        delta = delta.reshape(shape)

        theta = 1.0
        while True:
            trial = u + theta * delta
            r_trial = residual(trial)
            rn_trial = l2_norm(r_trial, grid)
            if not math.isfinite(rn_trial):
                raise FloatingPointError("NaN in Picard iterate")
            if rn_trial < rn:
                break
            theta *= 0.5
            if theta < 1e-8:
                raise ConvergenceError(
                    f"no residual decrease along the Picard direction (residual {rn:.3e})", history
                )
        u, r, rn = trial, r_trial, rn_trial
        history.append(rn)
        iters += 1
    if return_info:
        return u, {"iterations": iters, "residual": rn, "history": history, "capped": capped, "at_floor": at_floor}
    return u


def solve(spec: ProblemSpec) -> SolveReport:
    """March ``grid.m`` implicit steps from ``u0``."""
    grid = spec.grid
    values = np.empty((grid.m + 1,) + spec.u0.shape)
    values[0] = spec.u0
    report = SolveReport(trajectory=None)  # type: ignore[arg-type]
    for k in range(grid.m):
        u, info = step_implicit(spec, values[k], spec.forcing_slice(k + 1), return_info=True)
        values[k + 1] = u
        report.iterations.append(info["iterations"])
        report.residuals.append(info["residual"])
        report.residual_histories.append(info["history"])
        report.capped |= info["capped"]
        report.floor_steps += int(info["at_floor"])
    if report.capped:
        log.warning("frozen coefficients were capped at %g", COEFF_CAP)
    report.trajectory = SpaceTimeField(grid, values)
    grads = gradient(values, grid.hx, grid.dim)
    report.energy = {
        "l2": (0.5 * np.sum(values**2, axis=tuple(range(1, values.ndim))) * grid.cell_volume).tolist(),
        "gradient": (0.5 * np.sum(grads**2, axis=tuple(range(1, grads.ndim))) * grid.cell_volume).tolist(),
    }
    return report


# --- manufactured solutions --------------------------------------------------


def manufactured_forcing(
    u_exact: Callable[[list, float], np.ndarray],
    system: str,
    tensor: GrowthTensor,
    grid: Grid,
    u_exact_t: Optional[Callable[[list, float], np.ndarray]] = None,
    grad_f: Optional[Callable[[list, float], np.ndarray]] = None,
    refine: int = 1,
) -> Forcing:
    """``f = u_t + (-div A(G u_exact))`` sampled on every slice.

    ``u_exact(x, t)`` takes the coordinate arrays of a grid.  The operator is
    evaluated on a grid ``refine`` times finer and subsampled, so that with
    ``refine > 1`` the forcing approximates the continuous one.  Without
    ``u_exact_t`` the time derivative is a centered difference with step
    ``1e-3 dt``.  ``grad_f`` overrides the differenced forcing gradient.
    """
    fine = Grid(grid.dim, grid.n * refine, grid.L, grid.dt, grid.m)
    xf = fine.coords()
    xc = grid.coords()
    sub = (slice(None),) + (slice(None, None, refine),) * grid.dim
    values = np.empty((grid.m + 1, grid.dim) + grid.space_shape)
    for k, t in enumerate(grid.times()):
        if u_exact_t is not None:
            ut = np.asarray(u_exact_t(xc, t))
        else:
            h = 1e-3 * grid.dt
            ut = (np.asarray(u_exact(xc, t + h)) - np.asarray(u_exact(xc, t - h))) / (2 * h)
        op = apply_operator(system, tensor, np.asarray(u_exact(xf, t)), fine)[sub]
        values[k] = ut + op
    if grad_f is not None:
        grad = np.stack([np.asarray(grad_f(xc, t)) for t in grid.times()])
    else:
        grad = gradient(values, grid.hx, grid.dim)
    return Forcing(values, grad)


# --- energy monitor ----------------------------------------------------------


def energy_monitor(
    report: SolveReport,
    cutoff,
    system: str,
    phi: NFunctionSpec,
    forcing_grad: Optional[np.ndarray] = None,
    eps: Optional[float] = None,
) -> dict:
    """Discrete terms of the local energy inequality tested with ``div(grad u psi^2)``.

    Returns labeled terms; ``lhs`` and ``rhs`` are their unit-constant sums.
    The time window ``[t1, t2]`` is the support of the time cutoff.
    """
    traj = report.trajectory
    grid = traj.grid
    dim, hx, dt, vol = grid.dim, grid.hx, grid.dt, grid.cell_volume
    u = traj.values
    psi = cutoff.psi()
    window = np.nonzero(cutoff.sigma > 0)[0]
    if window.size == 0:
        raise ValueError("time cutoff has empty support on the grid")
    k1 = max(window[0] - 1, 0)
    k2 = min(window[-1] + 1, grid.m)
    sl = slice(k1, k2 + 1)
    t_len = (k2 - k1) * dt
    if eps is None:
        eps = 1.0 / (4.0 * max(t_len, dt))

    grad_u = gradient(u[sl], hx, dim)
    Gu = operator_G(system, u[sl], hx, dim)
    grad_Gu = gradient(Gu, hx, dim)
    grad_sq = tensor_sq(grad_u, dim, 2)
    mag = np.sqrt(tensor_sq(Gu, dim, 2))
    curv = phi.phi_second(np.maximum(mag, ZERO_PROBE))
    psi_w = psi[sl]
    support = psi_w > 0

    psi_t = np.diff(psi, axis=0) / dt if grid.m > 0 else np.zeros_like(psi)
    psi_t_sup = float(np.max(np.abs(psi_t))) if psi_t.size else 0.0
    grad_psi_sup = float(np.max(np.sqrt(tensor_sq(gradient(psi, hx, dim), dim, 1))))

    weighted = 0.5 * np.sum(grad_sq * psi_w**2, axis=tuple(range(1, grad_sq.ndim))) * vol
    terms = {
        "sup_weighted_gradient": float(weighted.max()),
        "dissipation": float(np.sum(curv * tensor_sq(grad_Gu, dim, 3) * psi_w**2) * vol * dt),
        "time_cutoff": float(psi_t_sup * np.sum(grad_sq * psi_w) * vol * dt),
        "gradient_cutoff": float(grad_psi_sup**2 * np.sum((curv * grad_sq)[support]) * vol * dt),
        "initial": float(weighted[0]),
        "eps_term": float(eps * np.sum(grad_sq * psi_w**2) * vol * dt),
        "forcing": 0.0,
        "eps": eps,
    }
    if forcing_grad is not None:
        fg = tensor_sq(np.asarray(forcing_grad)[sl], dim, 2)
        terms["forcing"] = float(np.sum(fg[support]) * vol * dt / (4.0 * eps))
    terms["lhs"] = terms["sup_weighted_gradient"] + terms["dissipation"]
    terms["rhs"] = sum(terms[k] for k in ("time_cutoff", "gradient_cutoff", "initial", "eps_term", "forcing"))
    return terms


def phi_integral(phi: NFunctionSpec, values) -> np.ndarray:
    """``phi`` applied to a non-negative array of any shape."""
    return eval_phi(phi, values)
