"""Discrete space-time fields on a periodic box.

Field arrays keep the spatial axes *last*: a vector trajectory has shape
``(m + 1, d, n, ..., n)``, a single slice ``(d, n, ..., n)``, a scalar
trajectory ``(m + 1, n, ..., n)``.  Every spatial operator acts on the
trailing ``dim`` axes and leaves the leading ones alone, so the same code
handles slices, trajectories and tensors.  The operators only use
``np.roll`` and arithmetic, hence also run on ``object`` arrays of
``fractions.Fraction`` for exact-arithmetic identity checks.
"""

from __future__ import annotations

import csv
import io
import struct
from fractions import Fraction
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .nfunction import InequalityCheck

__all__ = [
    "Grid",
    "SpaceTimeField",
    "ParabolicCylinder",
    "CutoffPair",
    "gradient",
    "sym_gradient",
    "divergence",
    "hessian",
    "translate",
    "shift_diff",
    "time_diff",
    "steklov",
    "ball_mask",
    "slice_mask",
    "cylinder_integral",
    "ess_sup_slices",
    "ball_integral",
    "make_cutoff",
    "smallest_cutoff_power",
    "fundamental_line_bound_check",
    "hessian_symgrad_ratio",
    "tensor_sq",
    "field_to_bytes",
    "field_from_bytes",
    "field_to_csv",
    "to_exact",
]


@dataclass(frozen=True)
class Grid:
    """Uniform periodic box ``[0, L)^d`` times ``m + 1`` time slices."""

    dim: int
    n: int
    L: float = 2 * np.pi
    dt: float = 1e-2
    m: int = 0

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise ValueError(f"dim must be 2 or 3, got {self.dim}")
        if self.n < 4:
            raise ValueError("need at least 4 nodes per axis")

    @property
    def hx(self) -> float:
        return self.L / self.n

    @property
    def space_shape(self) -> tuple:
        return (self.n,) * self.dim

    @property
    def cell_volume(self) -> float:
        return self.hx**self.dim

    def coords(self) -> list[np.ndarray]:
        """Node coordinates ``x_j = i_j hx`` as ``dim`` broadcastable arrays."""
        axis = np.arange(self.n) * self.hx
        return list(np.meshgrid(*([axis] * self.dim), indexing="ij"))

    def times(self) -> np.ndarray:
        return np.arange(self.m + 1) * self.dt

    def with_steps(self, m: int) -> "Grid":
        return Grid(self.dim, self.n, self.L, self.dt, m)


@dataclass(frozen=True)
class SpaceTimeField:
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        v = self.values
        g = self.grid
        if v.shape[0] != g.m + 1 or v.shape[-g.dim :] != g.space_shape:
            raise ValueError(f"values shape {v.shape} does not match {g}")
        if v.dtype != object and not np.all(np.isfinite(v)):
            raise ValueError("field values must be finite")

    @property
    def components(self) -> int:
        return int(np.prod(self.values.shape[1 : -self.grid.dim], dtype=int))

    def slice(self, k: int) -> np.ndarray:
        return self.values[k]


def to_exact(values) -> np.ndarray:
    """Object array of :class:`~fractions.Fraction` holding the floats exactly."""
    arr = np.asarray(values, dtype=float)
    out = np.empty(arr.shape, dtype=object)
    for idx, v in np.ndenumerate(arr):
        out[idx] = Fraction(v)
    return out


# --- spatial operators -------------------------------------------------------


def _space_axis(dim: int, j: int) -> int:
    return j - dim


def gradient(u, hx, dim: int):
    """Centered periodic differences; output gets a derivative axis after the
    component axes: ``out[..., j, x] = d_j u[..., x]``."""
    parts = [
        (np.roll(u, -1, axis=_space_axis(dim, j)) - np.roll(u, 1, axis=_space_axis(dim, j))) / (2 * hx)
        for j in range(dim)
    ]
    return np.stack(parts, axis=np.ndim(u) - dim)


def sym_gradient(u, hx, dim: int):
    g = gradient(u, hx, dim)
    a, b = -dim - 2, -dim - 1
    return (g + np.swapaxes(g, a, b)) / 2


def divergence(sigma, hx, dim: int):
    """Row divergence ``sum_j d_j sigma[..., i, j, x]``; minus the adjoint of ``gradient``."""
    j_axis = np.ndim(sigma) - dim - 1
    total = None
    for j in range(dim):
        comp = np.take(sigma, j, axis=j_axis)
        term = (np.roll(comp, -1, axis=_space_axis(dim, j)) - np.roll(comp, 1, axis=_space_axis(dim, j))) / (
            2 * hx
        )
        total = term if total is None else total + term
    return total


def hessian(u, hx, dim: int):
    """Composition of two centered gradients, ``out[..., j, k, x] = d_k d_j u``."""
    return gradient(gradient(u, hx, dim), hx, dim)


def tensor_sq(T, dim: int, rank: int):
    """Pointwise squared Euclidean norm over the ``rank`` axes preceding space."""
    axes = tuple(range(np.ndim(T) - dim - rank, np.ndim(T) - dim))
    return np.sum(T * T, axis=axes)


def translate(g, s: Sequence[int], dim: int):
    """``T_s g(x) = g(x + s hx)`` for a lattice vector ``s``."""
    if len(s) != dim:
        raise ValueError(f"lattice vector {s} must have {dim} entries")
    out = g
    for j, sj in enumerate(s):
        if sj:
            out = np.roll(out, -int(sj), axis=_space_axis(dim, j))
    return out


def shift_diff(g, s: Sequence[int], dim: int):
    """``Delta^s g = T_s g - g`` with periodic wrap."""
    return translate(g, s, dim) - g


# --- time operators ----------------------------------------------------------


def _check_h(h: int, m: int):
    if not (1 <= h <= m):
        raise ValueError(f"time step count h={h} must lie in [1, {m}]")


def time_diff(g, h: int):
    """``Delta_h g(t) = g(t + h) - g(t)`` on slices ``0 .. m - h`` (axis 0 is time)."""
    m = len(g) - 1
    _check_h(h, m)
    return g[h:] - g[:-h]


def steklov(v, h: int):
    """Forward moving mean over ``h`` slices.

    ``v_h[t] = (v[t] + ... + v[t + h - 1]) / h`` for ``t = 0 .. m - h`` and 0
    on the remaining slices.  With this left-closed window the forward
    difference of ``v_h`` equals ``Delta_h v / h``.
    """
    m = len(v) - 1
    _check_h(h, m)
    out = np.zeros_like(v)
    acc = v[0 : m - h + 1]
    for j in range(1, h):
        acc = acc + v[j : m - h + 1 + j]
    out[: m - h + 1] = acc / h
    return out


# --- cylinders and integrals -------------------------------------------------


@dataclass(frozen=True)
class ParabolicCylinder:
    """``B_rho(center) x [t0 - rho^2, t0 + rho^2]``."""

    center: tuple
    t0: float
    rho: float

    @property
    def half_time(self) -> float:
        return self.rho**2

    def check_fits(self, grid: Grid):
        margin = 2 * grid.hx
        c = np.asarray(self.center, dtype=float)
        if c.size != grid.dim:
            raise ValueError("cylinder center has the wrong dimension")
        if np.any(c - self.rho - margin < 0) or np.any(c + self.rho + margin > grid.L):
            raise ValueError(f"cylinder outside domain: ball radius {self.rho} at {self.center}")
        t_end = grid.m * grid.dt
        eps = 1e-9 * grid.dt
        if self.t0 - self.half_time < -eps or self.t0 + self.half_time > t_end + eps:
            raise ValueError(
                f"cylinder outside domain: time interval [{self.t0 - self.half_time}, "
                f"{self.t0 + self.half_time}] not in [0, {t_end}]"
            )

    def shrink(self, rho: float) -> "ParabolicCylinder":
        return ParabolicCylinder(self.center, self.t0, rho)


def ball_mask(grid: Grid, center, rho: float) -> np.ndarray:
    """Nodes with ``|x - center| < rho`` (strict, Euclidean, no wrap)."""
    x = grid.coords()
    r2 = sum((xi - ci) ** 2 for xi, ci in zip(x, center))
    return r2 < rho * rho


def slice_mask(grid: Grid, t0: float, half: float) -> np.ndarray:
    t = grid.times()
    return np.abs(t - t0) <= half * (1 + 1e-12) + 1e-12 * grid.dt


def ball_integral(g_slice, grid: Grid, center, rho: float) -> float:
    mask = ball_mask(grid, center, rho)
    return float(np.sum(np.asarray(g_slice)[..., mask], axis=-1).sum() * grid.cell_volume)


def cylinder_integral(g, grid: Grid, Q: ParabolicCylinder) -> float:
    """Midpoint-rule ``hx^d dt`` sum of a scalar trajectory over ``Q``."""
    Q.check_fits(grid)
    g = np.asarray(g)
    sl = slice_mask(grid, Q.t0, Q.half_time)
    mask = ball_mask(grid, Q.center, Q.rho)
    return float(np.sum(g[sl][:, mask]) * grid.cell_volume * grid.dt)


def ess_sup_slices(g, grid: Grid, Q: ParabolicCylinder) -> float:
    """Largest ball integral over the slices of ``Q``."""
    Q.check_fits(grid)
    g = np.asarray(g)
    sl = slice_mask(grid, Q.t0, Q.half_time)
    mask = ball_mask(grid, Q.center, Q.rho)
    per_slice = np.sum(g[sl][:, mask], axis=1) * grid.cell_volume
    return float(per_slice.max())


# --- cutoffs -----------------------------------------------------------------

_SMOOTHSTEP_SLOPE = 15.0 / 8.0  # max of d/dx (6x^5 - 15x^4 + 10x^3)


def _smoothstep(x):
    x = np.clip(x, 0.0, 1.0)
    return x**3 * (x * (6.0 * x - 15.0) + 10.0)


def smallest_cutoff_power(q1: float) -> int:
    """Smallest integer ``k`` with ``(2k - 1) q1 > 2k``."""
    if q1 <= 1:
        raise ValueError("lower Boyd index must exceed 1")
    k = 1
    while (2 * k - 1) * q1 <= 2 * k:
        k += 1
    return k


@dataclass(frozen=True)
class CutoffPair:
    rho1: float
    rho2: float
    k: int
    center: tuple
    t0: float
    eta: np.ndarray  # base space profile, shape grid.space_shape
    sigma: np.ndarray  # base time profile, shape (m + 1,)
    c_eta: float
    c_sigma: float

    def psi(self) -> np.ndarray:
        """``(eta sigma)^k`` as a scalar trajectory."""
        return (self.sigma.reshape((-1,) + (1,) * self.eta.ndim) * self.eta[None]) ** self.k

    def eta_k(self) -> np.ndarray:
        return self.eta**self.k

    def sigma_k(self) -> np.ndarray:
        return self.sigma**self.k


def make_cutoff(
    grid: Grid,
    center,
    t0: float,
    rho1: float,
    rho2: float,
    k: Optional[int] = None,
    q1: Optional[float] = None,
) -> CutoffPair:
    """Quintic-smoothstep cutoffs between ``Q_rho1`` and ``Q_rho2``.

    ``k`` defaults to the smallest power with ``(2k-1) q1 > 2k`` when ``q1`` is
    given and to 4 otherwise.  The certified slopes are checked on the grid.
    """
    if not rho1 < rho2:
        raise ValueError("need rho1 < rho2")
    gap = rho2 - rho1
    if gap < 4 * grid.hx:
        raise ValueError(f"cutoff unresolvable on grid: rho2 - rho1 = {gap:.4g} < 4 hx = {4 * grid.hx:.4g}")
    if k is None:
        k = smallest_cutoff_power(q1) if q1 is not None else 4
    if k < 1:
        raise ValueError("cutoff power must be >= 1")
    ParabolicCylinder(tuple(center), t0, rho2).check_fits(grid)

    x = grid.coords()
    r = np.sqrt(sum((xi - ci) ** 2 for xi, ci in zip(x, center)))
    eta = _smoothstep((rho2 - r) / gap)
    tgap = rho2**2 - rho1**2
    sigma = _smoothstep((rho2**2 - np.abs(grid.times() - t0)) / tgap)

    c_eta = c_sigma = _SMOOTHSTEP_SLOPE
    slope = np.sqrt(tensor_sq(gradient(eta, grid.hx, grid.dim), grid.dim, 1))
    if slope.max() > c_eta / gap * (1 + 1e-12):
        raise ArithmeticError("cutoff gradient exceeds its certified bound")
    if grid.m > 0:
        dsig = np.abs(np.diff(sigma)) / grid.dt
        if dsig.max() > c_sigma / gap**2 * (1 + 1e-12):
            raise ArithmeticError("time cutoff derivative exceeds its certified bound")
    return CutoffPair(rho1, rho2, int(k), tuple(center), t0, eta, sigma, c_eta, c_sigma)


# --- pointwise identities ----------------------------------------------------


def fundamental_line_bound_check(u, hx: float, dim: int, direction: int, l: int, alpha: int) -> InequalityCheck:
    """``|Delta^{l e_i} u|^alpha <= |l hx|^alpha * mean_k |D^+_i u(x + k e_i)|^alpha``.

    ``u`` is a vector slice ``(d, *space)``.  ``D^+`` is the one-sided forward
    difference; the mean runs over the ``|l|`` steps of the lattice path.
    The slack is the minimum of rhs minus lhs over all nodes.
    """
    if alpha not in (1, 2):
        raise ValueError("alpha must be 1 or 2")
    if l == 0:
        return InequalityCheck(True, 0.0)
    step = 1 if l > 0 else -1
    e = [0] * dim
    e[direction] = step
    norm = lambda v: np.sqrt(np.sum(v * v, axis=0))  # noqa: E731
    lhs = norm(shift_diff(u, [c * abs(l) for c in e], dim)) ** alpha
    forward = shift_diff(u, e, dim) / hx
    acc = np.zeros(lhs.shape)
    moved = forward
    for _ in range(abs(l)):
        acc += norm(moved) ** alpha
        moved = translate(moved, e, dim)
    rhs = (abs(l) * hx) ** alpha * acc / abs(l)
    slack = float(np.min(rhs - lhs))
    scale = float(np.max(rhs)) if rhs.size else 1.0
    return InequalityCheck(slack >= -1e-12 * max(scale, 1.0), slack)


def hessian_symgrad_ratio(u, hx: float, dim: int) -> np.ndarray:
    """Pointwise ``|grad^2 u|^2 / |grad Du|^2`` (nodes with ``grad Du = 0`` give 0 or inf)."""
    num = tensor_sq(hessian(u, hx, dim), dim, 3)
    den = tensor_sq(gradient(sym_gradient(u, hx, dim), hx, dim), dim, 3)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(den > 0, num / den, np.where(num > 0, np.inf, 0.0))


# --- serialization -----------------------------------------------------------

_MAGIC = b"OLF1"
_HEADER = struct.Struct("<4sIIIddI")


def field_to_bytes(field: SpaceTimeField) -> bytes:
    """Header ``(d, n, m, L, dt, ncomp)`` then slice-, node-, component-major float64."""
    g = field.grid
    v = np.asarray(field.values, dtype="<f8")
    ncomp = field.components
    flat = v.reshape(g.m + 1, ncomp, -1)
    body = np.ascontiguousarray(np.swapaxes(flat, 1, 2))
    return _HEADER.pack(_MAGIC, g.dim, g.n, g.m, g.L, g.dt, ncomp) + body.tobytes()


def field_from_bytes(data: bytes, component_shape: Optional[tuple] = None) -> SpaceTimeField:
    magic, dim, n, m, L, dt, ncomp = _HEADER.unpack_from(data)
    if magic != _MAGIC:
        raise ValueError("not a field snapshot")
    grid = Grid(dim, n, L, dt, m)
    body = np.frombuffer(data, dtype="<f8", offset=_HEADER.size)
    nodes = n**dim
    arr = np.swapaxes(body.reshape(m + 1, nodes, ncomp), 1, 2)
    if component_shape is None:
        component_shape = () if ncomp == 1 else (ncomp,)
    values = arr.reshape((m + 1,) + tuple(component_shape) + grid.space_shape).astype(float)
    return SpaceTimeField(grid, values)


def field_to_csv(field: SpaceTimeField) -> str:
    g = field.grid
    ncomp = field.components
    flat = np.asarray(field.values, dtype=float).reshape(g.m + 1, ncomp, -1)
    idx = np.array(np.unravel_index(np.arange(g.n**g.dim), g.space_shape)).T
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["slice", "t"] + [f"i{j}" for j in range(g.dim)] + [f"c{c}" for c in range(ncomp)])
    for k in range(g.m + 1):
        for node, ij in enumerate(idx):
            writer.writerow([k, repr(k * g.dt)] + list(map(int, ij)) + [repr(float(x)) for x in flat[k, :, node]])
    return buf.getvalue()
