"""Both sides of the interior Caccioppoli estimates and the Korn inequality.

All right-hand sides use unit constants; the reported ``ratio = lhs / rhs``
is the empirical constant.  Estimate ids:

``4``  sAL, full gradient on the right, shift ``delta0``
``5``  sAL, symmetric gradient plus oscillation on the right
``6``  ``4`` with ``delta0 = 0`` and the ``phi''(0) |grad^2 u|^2`` term (needs ``phi''(0) > 0``)
``7``  ``5`` likewise
``8``  AL on nested cylinders
``9``  AL on a time slab between balls ``B_R`` and ``B_R0``
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .fields import (
    Grid,
    ParabolicCylinder,
    SpaceTimeField,
    ball_mask,
    gradient,
    hessian,
    slice_mask,
    sym_gradient,
    tensor_sq,
)
from .nfunction import (
    DEFAULT_GRID,
    NFunctionSpec,
    ZERO_PROBE,
    estimate_growth_constants,
    eval_phi,
    phi_second_at_zero,
)
from .solver import Forcing, as_matrices, from_matrices
from .tensors import GrowthTensor, apply_V

__all__ = [
    "CaccioppoliReport",
    "KornReport",
    "FamilyNotUniformError",
    "POSITIVE_CURVATURE",
    "default_delta0",
    "caccioppoli_rhs",
    "audit_caccioppoli_sAL",
    "audit_caccioppoli_AL",
    "audit_korn",
    "uniformity_sweep",
    "reports_to_csv",
    "reports_to_json",
]

POSITIVE_CURVATURE = 1e-8
"""Threshold for ``phi''(delta0)`` in the default shift and for ``phi''(0) > 0``."""


@dataclass
class CaccioppoliReport:
    estimate: str
    r: float
    R: float
    delta0: Optional[float]
    lhs_terms: dict
    rhs_terms: dict
    weights: dict
    lhs: float
    rhs: float
    context: dict = field(default_factory=dict)
    slab: Optional[dict] = None

    @property
    def ratio(self) -> float:
        if self.rhs == 0.0:
            return 0.0 if self.lhs == 0.0 else math.inf
        return self.lhs / self.rhs

    def to_dict(self) -> dict:
        return {
            "estimate": self.estimate,
            "r": self.r,
            "R": self.R,
            "slab": self.slab,
            "delta0": self.delta0,
            "lhs_terms": self.lhs_terms,
            "rhs_terms": self.rhs_terms,
            "weights": self.weights,
            "lhs": self.lhs,
            "rhs": self.rhs,
            "ratio": self.ratio,
            "context": self.context,
        }


@dataclass
class KornReport:
    r: float
    lhs: float
    sym_term: float
    osc_term: float
    context: dict = field(default_factory=dict)

    @property
    def rhs(self) -> float:
        return self.sym_term + self.osc_term

    @property
    def ratio(self) -> float:
        if self.rhs == 0.0:
            return 0.0 if self.lhs == 0.0 else math.inf
        return self.lhs / self.rhs

    def to_dict(self) -> dict:
        return {
            "r": self.r,
            "lhs": self.lhs,
            "rhs_terms": {"phi_sym": self.sym_term, "phi_osc": self.osc_term},
            "rhs": self.rhs,
            "ratio": self.ratio,
            "context": self.context,
        }


class FamilyNotUniformError(ValueError):
    """The growth constants of a parameter family disagree; ``rows`` holds them."""

    def __init__(self, rows: list):
        super().__init__("family not G-uniform: " + ", ".join(f"mu={r['mu']}: G={r['G']:.6g}" for r in rows))
        self.rows = rows


# --- helpers -----------------------------------------------------------------


def default_delta0(phi: NFunctionSpec) -> float:
    """Smallest point of the default growth grid with ``phi'' >= 1e-8``."""
    t = DEFAULT_GRID.points()
    ok = np.nonzero(phi.phi_second(t) >= POSITIVE_CURVATURE)[0]
    if ok.size == 0:
        raise ValueError(f"invalid δ₀: phi'' < {POSITIVE_CURVATURE} on the whole grid for {phi.label}")
    return float(t[ok[0]])


def _curvature_at(phi: NFunctionSpec, delta0: float) -> float:
    if delta0 < 0 or not np.isfinite(delta0):
        raise ValueError(f"invalid δ₀ = {delta0}")
    arg = delta0 if delta0 > 0 else ZERO_PROBE
    c = float(phi.phi_second(np.array(arg)))
    if not c > 0:
        raise ValueError(f"invalid δ₀ = {delta0}: phi''(δ₀) = {c}")
    return c


def caccioppoli_rhs(integrals: dict, gap: float, curvature: float, forcing: float) -> tuple[dict, float]:
    """Unit-constant right side ``(1 + 1/c)/gap^2 * sum(integrals) + gap^2 * forcing``.

    Returns the weights and the total; the summation order over
    ``integrals`` is the insertion order, so equal inputs give equal bits.
    """
    coefficient = (1.0 + 1.0 / curvature) / gap**2
    weight = gap**2
    total = 0.0
    for value in integrals.values():
        total += value
    return {"coefficient": coefficient, "forcing_weight": weight}, coefficient * total + weight * forcing


def _check_ball(grid: Grid, center, rho: float):
    margin = 2 * grid.hx
    c = np.asarray(center, dtype=float)
    if c.size != grid.dim:
        raise ValueError("ball center has the wrong dimension")
    if np.any(c - rho - margin < 0) or np.any(c + rho + margin > grid.L):
        raise ValueError(f"ball outside domain: radius {rho} at {tuple(center)}")


def _forcing_grad(forcing, shape) -> Optional[np.ndarray]:
    if forcing is None:
        return None
    if isinstance(forcing, Forcing):
        return np.asarray(forcing.grad)
    arr = np.asarray(forcing, dtype=float)
    if arr.shape != shape:
        raise ValueError(f"forcing gradient has shape {arr.shape}, expected {shape}")
    return arr


def _context(traj: SpaceTimeField, phi: NFunctionSpec, tensor: Optional[GrowthTensor], G: Optional[float]) -> dict:
    g = traj.grid
    ctx = {
        "grid": {"dim": g.dim, "n": g.n, "L": g.L, "dt": g.dt, "m": g.m},
        "phi": phi.label,
        "phi_params": phi.params,
        "tensor_form": tensor.form if tensor is not None else None,
    }
    if G is not None:
        ctx["G"] = G
    return ctx


def _default_placement(grid: Grid, R: float, center, t0):
    if center is None:
        center = tuple([grid.L / 2] * grid.dim)
    if t0 is None:
        t0 = grid.m * grid.dt / 2
    return tuple(center), float(t0)


class _Cylinders:
    """Slice and node masks of the nested cylinders ``Q_r`` and ``Q_R``."""

    def __init__(self, grid: Grid, center, t0: float, r: float, R: float):
        if not 0 < r < R:
            raise ValueError(f"need 0 < r < R, got r={r}, R={R}")
        outer = ParabolicCylinder(center, t0, R)
        outer.check_fits(grid)
        self.grid = grid
        self.window = np.nonzero(slice_mask(grid, t0, R * R))[0]
        inner_t = slice_mask(grid, t0, r * r)[self.window]
        self.inner_slices = inner_t
        self.ball_R = ball_mask(grid, center, R)
        self.ball_r = ball_mask(grid, center, r)

    def over_R(self, g) -> float:
        return float(np.sum(g[:, self.ball_R]) * self.grid.cell_volume * self.grid.dt)

    def over_r(self, g) -> float:
        return float(np.sum(g[self.inner_slices][:, self.ball_r]) * self.grid.cell_volume * self.grid.dt)

    def sup_r(self, g) -> float:
        per_slice = np.sum(g[self.inner_slices][:, self.ball_r], axis=1) * self.grid.cell_volume
        return float(per_slice.max())


def _v_gradient_sq(phi: NFunctionSpec, M, hx: float, dim: int):
    """``|grad V(M)|^2`` with ``V`` applied nodewise to the matrix field ``M``."""
    VM = from_matrices(apply_V(phi, as_matrices(M, dim)), dim)
    return tensor_sq(gradient(VM, hx, dim), dim, 3)


# --- Caccioppoli audits ------------------------------------------------------


def audit_caccioppoli_sAL(
    trajectory: SpaceTimeField,
    forcing,
    phi: NFunctionSpec,
    tensor: Optional[GrowthTensor],
    r: float,
    R: float,
    delta0: Optional[float] = None,
    center: Optional[Sequence[float]] = None,
    t0: Optional[float] = None,
    G: Optional[float] = None,
) -> dict:
    """Estimates ``4`` and ``5`` (and ``6``, ``7`` when ``phi''(0) > 0``).

    ``forcing`` is a :class:`Forcing`, a gradient array ``(m+1, d, dim, *space)``
    or None for zero forcing.  The mean ``(u)`` in the oscillation term is
    taken over the nodes of ``Q_R``.  Returns a dict keyed by estimate id.
    """
    grid = trajectory.grid
    dim, hx = grid.dim, grid.hx
    center, t0 = _default_placement(grid, R, center, t0)
    cyl = _Cylinders(grid, center, t0, r, R)
    if delta0 is None:
        delta0 = default_delta0(phi)
    curv = _curvature_at(phi, delta0)

    u = np.asarray(trajectory.values)[cyl.window]
    grad_u = gradient(u, hx, dim)
    Du = sym_gradient(u, hx, dim)
    grad_sq = tensor_sq(grad_u, dim, 2)
    lhs_terms = {
        "sup_gradient": cyl.sup_r(grad_sq),
        "v_gradient": cyl.over_r(_v_gradient_sq(phi, Du, hx, dim)),
    }

    fgrad = _forcing_grad(forcing, (grid.m + 1, dim, dim) + grid.space_shape)
    f_term = 0.0 if fgrad is None else cyl.over_R(tensor_sq(fgrad[cyl.window], dim, 2))

    phi_grad = cyl.over_R(eval_phi(phi, np.sqrt(grad_sq)))
    phi_sym = cyl.over_R(eval_phi(phi, np.sqrt(tensor_sq(Du, dim, 2))))
    inside = u[:, :, cyl.ball_R]
    mean = np.mean(inside, axis=(0, 2))
    dev = np.sqrt(np.sum((u - mean.reshape((1, -1) + (1,) * dim)) ** 2, axis=1))
    phi_osc = cyl.over_R(eval_phi(phi, dev / R))
    phi_delta = cyl.over_R(np.broadcast_to(eval_phi(phi, np.array(delta0)), dev.shape))

    ctx = _context(trajectory, phi, tensor, G)
    ctx.update({"center": list(center), "t0": t0, "mean_QR": mean.tolist()})
    gap = R - r

    def report(eid, integrals, curvature, lhs_extra=None, d0=delta0):
        lt = dict(lhs_terms)
        if lhs_extra:
            lt.update(lhs_extra)
        weights, rhs = caccioppoli_rhs(integrals, gap, curvature, f_term)
        rhs_terms = dict(integrals)
        rhs_terms["forcing"] = f_term
        return CaccioppoliReport(eid, r, R, d0, lt, rhs_terms, weights, float(sum(lt.values())), rhs, ctx)

    out = {
        "4": report("4", {"phi_grad": phi_grad, "phi_delta0": phi_delta}, curv),
        "5": report("5", {"phi_sym": phi_sym, "phi_osc": phi_osc, "phi_delta0": phi_delta}, curv),
    }
    c0 = phi_second_at_zero(phi)
    if c0 > POSITIVE_CURVATURE:
        hess = {"hessian": c0 * cyl.over_r(tensor_sq(hessian(u, hx, dim), dim, 3))}
        out["6"] = report("6", {"phi_grad": phi_grad}, c0, hess, 0.0)
        out["7"] = report("7", {"phi_sym": phi_sym, "phi_osc": phi_osc}, c0, hess, 0.0)
    return out


def audit_caccioppoli_AL(
    trajectory: SpaceTimeField,
    forcing,
    phi: NFunctionSpec,
    tensor: Optional[GrowthTensor],
    r: float,
    R: float,
    center: Optional[Sequence[float]] = None,
    t0: Optional[float] = None,
    slab: Optional[dict] = None,
    G: Optional[float] = None,
) -> dict:
    """Estimate ``8`` on ``Q_r``, ``Q_R``; estimate ``9`` when ``slab`` is given.

    ``slab = {"t1": .., "t2": .., "R0": ..}`` uses the balls ``B_R`` and
    ``B_R0`` around ``center`` over the slices in ``[t1, t2]``.  The length
    ``|I_{r,2}|`` of the inner time interval is ``2 r^2``.
    """
    grid = trajectory.grid
    dim, hx = grid.dim, grid.hx
    center, t0 = _default_placement(grid, R, center, t0)
    cyl = _Cylinders(grid, center, t0, r, R)

    u = np.asarray(trajectory.values)[cyl.window]
    grad_u = gradient(u, hx, dim)
    grad_sq = tensor_sq(grad_u, dim, 2)
    lhs_terms = {
        "sup_gradient": cyl.sup_r(grad_sq),
        "v_gradient": cyl.over_r(_v_gradient_sq(phi, grad_u, hx, dim)),
    }
    fgrad = _forcing_grad(forcing, (grid.m + 1, dim, dim) + grid.space_shape)
    f_term = 0.0 if fgrad is None else cyl.over_R(tensor_sq(fgrad[cyl.window], dim, 2))
    rhs_terms = {
        "phi_grad": cyl.over_R(eval_phi(phi, np.sqrt(grad_sq))),
        "grad_sq": cyl.over_R(grad_sq),
        "forcing": f_term,
    }
    coefficient = 1.0 / (R - r) ** 2
    interval = 2.0 * r * r
    rhs = coefficient * (rhs_terms["phi_grad"] + rhs_terms["grad_sq"]) + interval * f_term
    ctx = _context(trajectory, phi, tensor, G)
    ctx.update({"center": list(center), "t0": t0})
    out = {
        "8": CaccioppoliReport(
            "8",
            r,
            R,
            None,
            lhs_terms,
            rhs_terms,
            {"coefficient": coefficient, "forcing_weight": interval},
            float(sum(lhs_terms.values())),
            rhs,
            ctx,
        )
    }
    if slab is not None:
        out["9"] = _audit_slab(trajectory, phi, tensor, R, center, slab, G)
    return out


def _audit_slab(trajectory, phi, tensor, R, center, slab, G) -> CaccioppoliReport:
    grid = trajectory.grid
    dim, hx = grid.dim, grid.hx
    t1, t2, R0 = float(slab["t1"]), float(slab["t2"]), float(slab["R0"])
    if not 0 < R < R0:
        raise ValueError(f"need 0 < R < R0, got R={R}, R0={R0}")
    _check_ball(grid, center, R0)
    times = grid.times()
    tol = 1e-9 * grid.dt
    if not (-tol <= t1 <= t2 <= times[-1] + tol):
        raise ValueError(f"time slab [{t1}, {t2}] outside [0, {times[-1]}]")
    idx = np.nonzero((times >= t1 - tol) & (times <= t2 + tol))[0]
    u = np.asarray(trajectory.values)[idx]
    grad_u = gradient(u, hx, dim)
    grad_sq = tensor_sq(grad_u, dim, 2)
    bR, bR0 = ball_mask(grid, center, R), ball_mask(grid, center, R0)
    vol, dt = grid.cell_volume, grid.dt
    lhs_terms = {
        "sup_gradient": float(np.max(np.sum(grad_sq[:, bR], axis=1)) * vol),
        "v_gradient": float(np.sum(_v_gradient_sq(phi, grad_u, hx, dim)[:, bR]) * vol * dt),
    }
    rhs_terms = {
        "initial_gradient": float(np.sum(grad_sq[0][bR0]) * vol),
        "phi_grad": float(np.sum(eval_phi(phi, np.sqrt(grad_sq))[:, bR0]) * vol * dt),
    }
    coefficient = 1.0 / (R0 - R) ** 2
    rhs = rhs_terms["initial_gradient"] + coefficient * rhs_terms["phi_grad"]
    ctx = _context(trajectory, phi, tensor, G)
    ctx.update({"center": list(center)})
    return CaccioppoliReport(
        "9",
        R,
        R0,
        None,
        lhs_terms,
        rhs_terms,
        {"coefficient": coefficient},
        float(sum(lhs_terms.values())),
        rhs,
        ctx,
        {"t1": float(times[idx[0]]), "t2": float(times[idx[-1]]), "R0": R0},
    )


# --- Korn --------------------------------------------------------------------


def audit_korn(
    u_slice,
    grid: Grid,
    phi: NFunctionSpec,
    r: float,
    center: Optional[Sequence[float]] = None,
) -> KornReport:
    """``int_{B_r} phi(|grad u|)`` against ``int phi(|Du|) + phi(|u - (u)|/r)``.

    ``(u)`` is the mean of ``u`` over the nodes of ``B_r``.
    """
    u = np.asarray(u_slice, dtype=float)
    dim, hx = grid.dim, grid.hx
    if u.shape != (dim,) + grid.space_shape:
        raise ValueError(f"field slice shape {u.shape} does not match grid")
    if center is None:
        center = tuple([grid.L / 2] * dim)
    _check_ball(grid, center, r)
    ball = ball_mask(grid, center, r)
    vol = grid.cell_volume
    grad_u = gradient(u, hx, dim)
    Du = sym_gradient(u, hx, dim)
    lhs = float(np.sum(eval_phi(phi, np.sqrt(tensor_sq(grad_u, dim, 2)))[ball]) * vol)
    sym_term = float(np.sum(eval_phi(phi, np.sqrt(tensor_sq(Du, dim, 2)))[ball]) * vol)
    mean = np.mean(u[:, ball], axis=1)
    dev = np.sqrt(np.sum((u[:, ball] - mean[:, None]) ** 2, axis=0))
    osc_term = float(np.sum(eval_phi(phi, dev / r)) * vol)
    ctx = {"grid": {"dim": dim, "n": grid.n, "L": grid.L}, "phi": phi.label, "center": list(center)}
    return KornReport(r, lhs, sym_term, osc_term, ctx)


# --- uniformity sweep --------------------------------------------------------


def uniformity_sweep(
    template: dict,
    mu_list: Sequence[float],
    r: float,
    R: float,
    estimate: str = "4",
    seed: int = 0,
    g_tol: float = 0.10,
    center=None,
    t0=None,
    delta0: Optional[float] = None,
) -> list:
    """Solve and audit one problem per ``mu``; rows ``{mu, G, ratio, report}``.

    ``template`` is a problem config (see :func:`orliczlab.problems.build_problem`);
    only ``tensor.mu`` is varied.  The sampled ``G(phi')`` must agree within
    ``g_tol`` (relative spread) across the family, checked before solving.
    ``delta0`` is shared by every member (sAL only); None picks
    :func:`default_delta0` per member, which lets ``1/phi''(delta0)`` follow mu.
    """
    from .problems import build_problem
    from .solver import solve

    if not mu_list:
        raise ValueError("empty mu list")
    if any(mu <= 0 for mu in mu_list):
        raise ValueError("uniformity sweep needs mu > 0")
    offered = {"sAL": ("4", "5", "6", "7"), "AL": ("8",)}.get(template.get("system"), ())
    if estimate not in offered:
        raise ValueError(f"estimate {estimate} not available for system {template.get('system')}")
    if delta0 is not None and template.get("system") != "sAL":
        raise ValueError("a shared delta0 applies to the sAL estimates only")
    configs = []
    rows = []
    for mu in mu_list:
        cfg = json.loads(json.dumps(template))
        cfg["tensor"]["mu"] = float(mu)
        spec, _ = build_problem(cfg, seed)
        rows.append({"mu": float(mu), "G": estimate_growth_constants(spec.phi).G})
        configs.append((spec, cfg))
    Gs = [row["G"] for row in rows]
    if max(Gs) > (1.0 + g_tol) * min(Gs):
        raise FamilyNotUniformError(rows)

    for row, (spec, cfg) in zip(rows, configs):
        result = solve(spec)
        forcing = spec.forcing if isinstance(spec.forcing, Forcing) else None
        if spec.system == "sAL":
            reports = audit_caccioppoli_sAL(
                result.trajectory, forcing, spec.phi, spec.tensor, r, R, delta0, center=center, t0=t0, G=row["G"]
            )
        else:
            reports = audit_caccioppoli_AL(
                result.trajectory, forcing, spec.phi, spec.tensor, r, R, center=center, t0=t0, G=row["G"]
            )
        if estimate not in reports:
            raise ValueError(f"estimate {estimate} not available for system {spec.system}")
        rep = reports[estimate]
        rep.context["capped"] = result.capped
        row["ratio"] = rep.ratio
        row["report"] = rep
    return rows


# --- serialization -----------------------------------------------------------

_CSV_TERMS = (
    "sup_gradient",
    "v_gradient",
    "hessian",
    "phi_grad",
    "phi_sym",
    "phi_osc",
    "phi_delta0",
    "grad_sq",
    "initial_gradient",
    "forcing",
)


def reports_to_csv(reports: Sequence[CaccioppoliReport], run_id: str = "") -> str:
    """One row per audit: id, parameters, every term, lhs, rhs, ratio."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(
        ["run_id", "estimate", "r", "R", "R0", "t1", "t2", "delta0", "n", "dt"]
        + list(_CSV_TERMS)
        + ["coefficient", "forcing_weight", "lhs", "rhs", "ratio"]
    )
    for rep in reports:
        terms = {**rep.lhs_terms, **rep.rhs_terms}
        slab = rep.slab or {}
        grid = rep.context.get("grid", {})
        writer.writerow(
            [run_id, rep.estimate, repr(rep.r), repr(rep.R)]
            + [repr(slab[k]) if k in slab else "" for k in ("R0", "t1", "t2")]
            + ["" if rep.delta0 is None else repr(rep.delta0), grid.get("n", ""), grid.get("dt", "")]
            + [repr(terms[k]) if k in terms else "" for k in _CSV_TERMS]
            + [repr(rep.weights.get(k)) if k in rep.weights else "" for k in ("coefficient", "forcing_weight")]
            + [repr(rep.lhs), repr(rep.rhs), repr(rep.ratio)]
        )
    return buf.getvalue()


def reports_to_json(reports, run_id: str = "") -> str:
    return json.dumps({"run_id": run_id, "reports": [rep.to_dict() for rep in reports]}, indent=2, sort_keys=True)
