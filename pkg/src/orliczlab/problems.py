"""Analytic fields used as initial data, manufactured solutions and audit inputs.

Every exact solution is a pair ``(u, u_t)`` of callables taking the
coordinate arrays of a :class:`~orliczlab.fields.Grid` and a time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .fields import Grid
from .nfunction import make_prototype
from .solver import ProblemSpec, manufactured_forcing
from .tensors import GrowthTensor

__all__ = [
    "ExactSolution",
    "heat_sal",
    "heat_al",
    "pulsating",
    "bandlimited",
    "rigid_rotation",
    "EXACT_SOLUTIONS",
    "tensor_from_dict",
    "grid_from_dict",
    "build_problem",
]


@dataclass(frozen=True)
class ExactSolution:
    name: str
    u: Callable[[list, float], np.ndarray]
    u_t: Optional[Callable[[list, float], np.ndarray]] = None


def _zeros_like(x):
    return np.zeros_like(x[0])


def heat_sal(dim: int = 2) -> ExactSolution:
    """``e^{-t/2} (sin x_2, 0, ...)``: for ``A(Q) = Q``, ``div Du = -u/2``."""

    def u(x, t):
        comps = [np.exp(-t / 2) * np.sin(x[1])] + [_zeros_like(x)] * (dim - 1)
        return np.stack(comps)

    return ExactSolution("heat_sal", u, lambda x, t: -0.5 * u(x, t))


def heat_al(dim: int = 2) -> ExactSolution:
    """``e^{-d t} prod_j sin x_j`` in every component."""

    def u(x, t):
        s = np.exp(-dim * t) * np.prod([np.sin(xj) for xj in x], axis=0)
        return np.stack([s] * dim)

    return ExactSolution("heat_al", u, lambda x, t: -dim * u(x, t))


def _pulse_profile(x):
    if len(x) == 2:
        x1, x2 = x
        return np.stack([np.sin(x2) + 0.5 * np.cos(x1 + x2), np.sin(x1) - 0.3 * np.sin(2 * x2)])
    x1, x2, x3 = x
    return np.stack(
        [np.sin(x2) + 0.5 * np.cos(x1 + x3), np.sin(x3) - 0.3 * np.sin(2 * x1), np.sin(x1) + 0.2 * np.cos(x2)]
    )


def pulsating(amplitude: float = 1.0, omega: float = 2.0) -> ExactSolution:
    """``amplitude (1 + sin(omega t)/2) U(x)`` with a fixed smooth periodic ``U``."""

    def u(x, t):
        return amplitude * (1.0 + 0.5 * math.sin(omega * t)) * _pulse_profile(x)

    def u_t(x, t):
        return amplitude * 0.5 * omega * math.cos(omega * t) * _pulse_profile(x)

    return ExactSolution("pulsating", u, u_t)


def bandlimited(seed: int, dim: int = 2, kmax: int = 3, amplitude: float = 1.0) -> ExactSolution:
    """Seeded random trigonometric vector field with wave numbers ``|k_j| <= kmax``.

    The field is a function of the continuous coordinates, so it can be
    sampled on grids of any resolution.
    """
    rng = np.random.default_rng(seed)
    ks = np.array(np.meshgrid(*([np.arange(-kmax, kmax + 1)] * dim), indexing="ij")).reshape(dim, -1).T
    ks = ks[np.any(ks != 0, axis=1)]
    decay = 1.0 / (1.0 + np.sum(ks**2, axis=1))
    a = rng.standard_normal((dim, len(ks))) * decay
    b = rng.standard_normal((dim, len(ks))) * decay
    norm = amplitude / math.sqrt(float(np.sum(a**2 + b**2)))

    def u(x, t=0.0):
        phase = np.tensordot(ks, np.stack(x), axes=(1, 0))
        return norm * (np.tensordot(a, np.cos(phase), axes=(1, 0)) + np.tensordot(b, np.sin(phase), axes=(1, 0)))

    return ExactSolution(f"bandlimited[{seed}]", u, lambda x, t=0.0: np.zeros((dim,) + x[0].shape))


def rigid_rotation(W, center) -> ExactSolution:
    """``u(x) = W (x - center)`` for antisymmetric ``W`` (not periodic; use away from the seam)."""
    W = np.asarray(W, dtype=float)
    if not np.allclose(W, -W.T):
        raise ValueError("rigid rotation needs an antisymmetric matrix")

    def u(x, t=0.0):
        rel = np.stack([xj - cj for xj, cj in zip(x, center)])
        return np.tensordot(W, rel, axes=(1, 0))

    return ExactSolution("rigid_rotation", u, lambda x, t=0.0: np.zeros((len(x),) + x[0].shape))


EXACT_SOLUTIONS = {
    "heat_sal": heat_sal,
    "heat_al": heat_al,
    "pulsating": pulsating,
}


def tensor_from_dict(data: dict) -> GrowthTensor:
    phi = make_prototype(data["kind"], data["p"], data.get("mu", 0.0))
    form = data.get("form", "closed")
    if form == "closed":
        form = f"closed-{phi.params['kind']}"
    return GrowthTensor(phi, form)


def grid_from_dict(data: dict) -> Grid:
    return Grid(
        dim=int(data.get("dim", 2)),
        n=int(data["n"]),
        L=float(data.get("L", 2 * math.pi)),
        dt=float(data["dt"]),
        m=int(data["m"]),
    )


def build_problem(config: dict, seed: int = 0):
    """ProblemSpec from a config mapping; returns ``(spec, exact_or_None)``.

    ``initial``: ``zero``, ``bandlimited`` or an exact-solution name (its value
    at ``t = 0``).  ``forcing``: ``zero`` or ``manufactured`` (from the exact
    solution named by ``initial``).
    """
    system = config["system"]
    tensor = tensor_from_dict(config["tensor"])
    grid = grid_from_dict(config["grid"])
    x = grid.coords()
    initial = config.get("initial", "zero")
    exact = None
    if initial == "zero":
        u0 = np.zeros((grid.dim,) + grid.space_shape)
    elif initial == "bandlimited":
        u0 = bandlimited(seed, grid.dim, amplitude=float(config.get("amplitude", 1.0))).u(x, 0.0)
    elif initial in EXACT_SOLUTIONS:
        factory = EXACT_SOLUTIONS[initial]
        exact = factory(grid.dim) if initial != "pulsating" else factory(float(config.get("amplitude", 1.0)))
        u0 = exact.u(x, 0.0)
    else:
        raise ValueError(f"unknown initial-condition selector {initial!r}")

    forcing_sel = config.get("forcing", "zero")
    if forcing_sel == "zero":
        forcing = None
    elif forcing_sel == "manufactured":
        if exact is None:
            raise ValueError("manufactured forcing needs an exact-solution initial selector")
        forcing = manufactured_forcing(
            exact.u, system, tensor, grid, u_exact_t=exact.u_t, refine=int(config.get("refine", 1))
        )
    else:
        raise ValueError(f"unknown forcing selector {forcing_sel!r}")
    spec = ProblemSpec(
        system,
        tensor,
        grid,
        np.asarray(u0, dtype=float),
        forcing,
        tol=float(config.get("tol", 1e-9)),
        max_iter=int(config.get("max_iter", 200)),
    )
    return spec, exact
