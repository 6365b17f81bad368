"""Acceptance suite: one test per criterion, each printing a single verdict line."""

import math
import time
from fractions import Fraction

import numpy as np
import pytest

from conftest import PROTOTYPE_PARAMS
from oracles import legendre_sup
from orliczlab.auditor import audit_caccioppoli_AL, audit_caccioppoli_sAL, audit_korn, uniformity_sweep
from orliczlab.calibration import fit_upper
from orliczlab.fields import (
    Grid,
    divergence,
    hessian_symgrad_ratio,
    shift_diff,
    steklov,
    sym_gradient,
    time_diff,
    to_exact,
    translate,
)
from orliczlab.nfunction import (
    conjugate,
    estimate_growth_constants,
    eval_phi,
    is_phi_second_almost_increasing,
    make_prototype,
    power_function,
    shift,
    shift_order_ratios,
    shift_scaling_ratios,
)
from orliczlab.problems import bandlimited, build_problem, heat_al, heat_sal, rigid_rotation
from orliczlab.solver import ProblemSpec, as_matrices, from_matrices, operator_G, rms_norm, l2_norm, solve
from orliczlab.tensors import GrowthTensor, apply_V, quadruple_equivalence, random_sym, shift_change_ratios

CENTER = (math.pi, math.pi)


@pytest.fixture
def verdict(capsys):
    """Print ``criterion N: PASS|FAIL ...`` past output capture, then assert."""
    start = time.perf_counter()

    def emit(number, passed, detail):
        elapsed = time.perf_counter() - start
        with capsys.disabled():
            print(f"\ncriterion {number}: {'PASS' if passed else 'FAIL'} ({elapsed:.1f} s) {detail}")
        return elapsed

    return emit


def closed(kind, p, mu):
    return GrowthTensor(make_prototype(kind, p, mu), f"closed-{kind}")


# --- 1 -----------------------------------------------------------------------


def test_criterion_1_quadratic_exactness(verdict):
    phi = power_function(2.0)
    t = np.geomspace(1e-3, 1e3, 100)
    conj_err = float(np.max(np.abs(conjugate(phi, t) - t * t / 2)))
    shift_err = max(float(np.max(np.abs(shift(phi, a).phi(t) - t * t / 2) / (t * t / 2))) for a in (0.1, 1.0, 10.0))
    gc = estimate_growth_constants(phi)
    exact = gc.G == 1.0 and gc.delta2 == 4.0 and gc.q1 == 2.0 and gc.q2 == 2.0
    ok = conj_err <= 1e-8 and shift_err <= 1e-12 and exact
    elapsed = verdict(
        1, ok, f"conj err {conj_err:.2e}, shift err {shift_err:.2e}, G={gc.G!r} D2={gc.delta2!r} q=({gc.q1!r}, {gc.q2!r})"
    )
    assert ok and elapsed < 1.0


# --- 2 -----------------------------------------------------------------------


def test_criterion_2_conjugate_oracle(verdict):
    t = np.geomspace(1e-2, 1e2, 100)
    worst_closed = worst_oracle = 0.0
    for p in (1.5, 3.0):
        q = p / (p - 1)
        phi = power_function(p)
        got = conjugate(phi, t)
        worst_closed = max(worst_closed, float(np.max(np.abs(got / (t**q / q) - 1))))
        ref = np.array([legendre_sup(lambda s: s**p / p, ti, 2 * ti ** (q - 1) + 1, n=4001) for ti in t])
        worst_oracle = max(worst_oracle, float(np.max(np.abs(got / ref - 1))))
    ok = worst_closed <= 1e-5 and worst_oracle <= 1e-5
    elapsed = verdict(2, ok, f"max rel err vs t^p'/p' {worst_closed:.2e}, vs Legendre oracle {worst_oracle:.2e}")
    assert ok and elapsed < 5.0


# --- 3 -----------------------------------------------------------------------


def test_criterion_3_equivalence_constants(verdict):
    failures = []
    worst = 0.0
    for k, params in enumerate(PROTOTYPE_PARAMS):
        tensor = closed(*params)
        for d in (2, 3):
            res = quadruple_equivalence(tensor.phi, tensor, seed=1000 + k, n=10_000, d=d)
            worst = max(worst, max(f.worst / f.K for f in res.fits.values()))
            if not res.passed:
                failures.append((params, d, res.violations))
    ok = not failures
    elapsed = verdict(3, ok, f"{2 * len(PROTOTYPE_PARAMS)} runs, worst validation/K {worst:.3f}, failures {failures}")
    assert ok and elapsed < 60.0


# --- 4 -----------------------------------------------------------------------


def test_criterion_4_shifted_laws(verdict):
    failures = []
    ordered = 0
    for k, params in enumerate(PROTOTYPE_PARAMS):
        phi = make_prototype(*params)
        rng = np.random.default_rng(2000 + k)
        norms = lambda: np.exp(rng.uniform(-4, 4, 1000))  # noqa: E731
        S, T, C = (random_sym(rng, 1000, 2, norms()) for _ in range(3))
        if not fit_upper(shift_change_ratios(phi, S, T, C)).passed:
            failures.append((params, "shift change"))
        s, lam = np.exp(rng.uniform(-6, 6, 1000)), rng.uniform(1e-3, 1.0, 1000)
        if not fit_upper(shift_scaling_ratios(phi, s, lam)).passed:
            failures.append((params, "scaling"))
        if is_phi_second_almost_increasing(phi):
            ordered += 1
            a = np.exp(rng.uniform(-6, 6, 1000))
            b = a * np.exp(rng.uniform(0, 6, 1000))
            if not fit_upper(shift_order_ratios(phi, a, b, np.exp(rng.uniform(-6, 6, 1000)))).passed:
                failures.append((params, "ordering"))
    ok = not failures
    elapsed = verdict(4, ok, f"{len(PROTOTYPE_PARAMS)} prototypes, ordering on {ordered}, failures {failures}")
    assert ok and elapsed < 30.0


# --- 5 -----------------------------------------------------------------------


def test_criterion_5_steklov_identities(verdict):
    prototypes = [make_prototype("A1", 1.5, 0.1), make_prototype("A2", 3.0, 0.0), make_prototype("A3", 2.0, 1.0)]
    jensen_bad = 0
    for phi in prototypes:
        for seed in range(100):
            rng = np.random.default_rng(seed)
            v = rng.standard_normal((12, 2, 6, 6)) * np.exp(rng.uniform(-2, 2))
            h = int(rng.integers(1, 8))
            mag = lambda a: np.sqrt(np.sum(a * a, axis=1))  # noqa: E731
            if not np.sum(eval_phi(phi, mag(steklov(v, h)))) <= np.sum(eval_phi(phi, mag(v))):
                jensen_bad += 1
    # forward difference of the moving mean equals Delta_h v / h: dyadic floats, then exact rationals
    dyadic_ok = True
    for h in (1, 2, 4, 8):
        v = np.random.default_rng(h).integers(-4096, 4096, size=(20, 2, 4, 4)).astype(float)
        n_valid = 20 - h
        dyadic_ok &= bool(np.array_equal(time_diff(steklov(v, h), 1)[: n_valid - 1], time_diff(v, h)[: n_valid - 1] / h))
    exact_ok = True
    for h in (3, 5):
        v = to_exact(np.random.default_rng(h).standard_normal((10, 2, 3)))
        n_valid = 10 - h
        exact_ok &= bool(np.all(time_diff(steklov(v, h), 1)[: n_valid - 1] == time_diff(v, h)[: n_valid - 1] / h))
    ok = jensen_bad == 0 and dyadic_ok and exact_ok
    verdict(5, ok, f"Jensen violations {jensen_bad}/300, difference identity dyadic {dyadic_ok}, rational {exact_ok}")
    assert ok


# --- 6 -----------------------------------------------------------------------

HEAT = closed("A2", 2.0, 1.0)


def _heat_error(system, exact, n, dt, t_final):
    grid = Grid(2, n, dt=dt, m=int(round(t_final / dt)))
    x = grid.coords()
    rep = solve(ProblemSpec(system, HEAT, grid, exact.u(x, 0.0), tol=1e-12))
    diff = rep.trajectory.values[-1] - exact.u(x, grid.m * dt)
    return rms_norm(diff, grid), l2_norm(diff, grid)


@pytest.mark.parametrize("system,factory", [("sAL", heat_sal), ("AL", heat_al)], ids=["sAL", "AL"])
def test_criterion_6_solver_verification(verdict, system, factory):
    exact = factory()
    err, abs_err = _heat_error(system, exact, 64, 1e-3, 0.5)
    # time order at fine hx, space order at fine dt
    e_dt = [_heat_error(system, exact, 256, dt, 0.5)[0] for dt in (0.02, 0.01)]
    e_hx = [_heat_error(system, exact, n, 1e-4, 0.5)[0] for n in (32, 64)]
    order_t = math.log2(e_dt[0] / e_dt[1])
    order_x = math.log2(e_hx[0] / e_hx[1])
    ok = err <= 5e-3 and order_t >= 0.9 and order_x >= 1.8
    elapsed = verdict(
        6,
        ok,
        f"[{system}] RMS L2 error {err:.2e} (unnormalized {abs_err:.2e}), order dt {order_t:.2f}, order hx {order_x:.2f}",
    )
    assert ok and elapsed < 120.0


# --- 7 -----------------------------------------------------------------------


def _manufactured(system, p, mu, n):
    cfg = {
        "system": system,
        "tensor": {"kind": "A2", "p": p, "mu": mu},
        "grid": {"n": n, "dt": 0.01, "m": 250},
        "initial": "pulsating",
        "forcing": "manufactured",
    }
    spec, _ = build_problem(cfg)
    return spec, solve(spec)


def test_criterion_7_caccioppoli_boundedness(verdict):
    rows = []
    slab = {"t1": 0.5, "t2": 1.5, "R0": 1.5}
    for p in (2.0, 3.0):
        for mu in (1.0, 0.1):
            ratios = {}
            for n in (32, 64):
                for system in ("sAL", "AL"):
                    spec, res = _manufactured(system, p, mu, n)
                    if system == "sAL":
                        reps = audit_caccioppoli_sAL(
                            res.trajectory, spec.forcing, spec.phi, spec.tensor, 0.5, 1.0, center=CENTER, t0=1.25
                        )
                    else:
                        reps = audit_caccioppoli_AL(
                            res.trajectory, spec.forcing, spec.phi, spec.tensor, 0.5, 1.0, CENTER, 1.25, slab
                        )
                    for eid, rep in reps.items():
                        if eid in ("4", "5", "8"):
                            ratios.setdefault(eid, []).append(rep.ratio)
            for eid, (coarse, fine) in ratios.items():
                change = max(coarse, fine) / min(coarse, fine)
                rows.append((p, mu, eid, coarse, fine, change))
    ok = all(math.isfinite(c) and math.isfinite(f) and ch <= 2.0 for *_, c, f, ch in rows)
    worst = max(rows, key=lambda r: r[-1])
    elapsed = verdict(
        7, ok, f"{len(rows)} (p, mu, estimate) ratio pairs, worst change x{worst[-1]:.3f} at p={worst[0]} mu={worst[1]} est {worst[2]}"
    )
    assert ok and elapsed < 600.0


# --- 8 -----------------------------------------------------------------------


def test_criterion_8_uniformity_in_mu(verdict):
    template = {
        "system": "sAL",
        "tensor": {"kind": "A2", "p": 3.0, "mu": 1.0},
        "grid": {"n": 32, "dt": 0.01, "m": 250},
        "initial": "pulsating",
        "forcing": "manufactured",
    }
    # one delta0 for the whole family: phi''(1) lies in [2, 2.2] for every mu, so the
    # unit-constant right side carries no mu-dependent factor besides C(G)
    rows = uniformity_sweep(template, [1.0, 0.1, 0.01], 0.5, 1.0, estimate="4", center=CENTER, t0=1.25, delta0=1.0)
    ratios = [row["ratio"] for row in rows]
    Gs = [row["G"] for row in rows]
    spread_ratio = max(ratios) / min(ratios)
    spread_G = max(Gs) / min(Gs) - 1
    # for reference: the per-member default delta0 makes 1/phi''(delta0) grow like mu^(-1/2)
    default = [row["ratio"] for row in uniformity_sweep(template, [1.0, 0.1, 0.01], 0.5, 1.0, center=CENTER, t0=1.25)]
    ok = spread_ratio <= 3.0 and spread_G <= 0.10
    detail = ", ".join(f"mu={row['mu']:g}: ratio {row['ratio']:.4f} G {row['G']:.4f}" for row in rows)
    elapsed = verdict(
        8,
        ok,
        f"ratio spread x{spread_ratio:.3f} at delta0=1, G spread {spread_G:.1%}; {detail}; "
        f"default-delta0 spread x{max(default) / min(default):.3f} (reference only)",
    )
    assert ok and elapsed < 600.0


# --- 9 -----------------------------------------------------------------------


def test_criterion_9_korn(verdict):
    prototypes = [make_prototype("A1", 1.5, 0.1), make_prototype("A2", 3.0, 0.1), make_prototype("A3", 3.0, 0.1)]
    max_ratio = {}
    finite = True
    for n in (32, 64):
        grid = Grid(2, n)
        x = grid.coords()
        fields = [bandlimited(seed).u(x) for seed in range(100)]
        for phi in prototypes:
            ratios = [audit_korn(u, grid, phi, 1.0, CENTER).ratio for u in fields]
            finite &= all(math.isfinite(q) for q in ratios)
            max_ratio.setdefault(phi.label, []).append(max(ratios))
    stable = all(abs(fine / coarse - 1) <= 0.20 for coarse, fine in max_ratio.values())
    grid = Grid(2, 64)
    rot = rigid_rotation(np.array([[0.0, 1.0], [-1.0, 0.0]]), CENTER).u(grid.coords())
    rr = audit_korn(rot, grid, prototypes[1], 1.0, CENTER)
    rigid_ok = rr.lhs > 0 and rr.sym_term <= 1e-12 * rr.lhs and rr.osc_term > 0 and math.isfinite(rr.ratio)
    ok = finite and stable and rigid_ok
    summary = "; ".join(f"{k}: {v[0]:.3f} -> {v[1]:.3f}" for k, v in max_ratio.items())
    elapsed = verdict(
        9, ok, f"max ratios {summary}; rigid rotation lhs {rr.lhs:.3e}, sym {rr.sym_term:.1e}, osc {rr.osc_term:.3e}"
    )
    assert ok and elapsed < 60.0


# --- 10 ----------------------------------------------------------------------


def _exact_identities():
    grid = Grid(2, 8)
    hx = Fraction(grid.hx)
    x = grid.coords()
    ok = True
    for seed in range(3):
        phi = make_prototype(*PROTOTYPE_PARAMS[7 * seed])
        u = bandlimited(seed).u(x)
        # telescoping of lattice shifts on V(Du)
        V = to_exact(from_matrices(apply_V(phi, as_matrices(sym_gradient(u, grid.hx, 2), 2)), 2))
        lam, l = [1, -2], [3, 1]
        lhs = shift_diff(translate(V, lam, 2), [a - b for a, b in zip(l, lam)], 2)
        ok &= bool(np.all(lhs == shift_diff(V, l, 2) - shift_diff(V, lam, 2)))
        # summation by parts for lattice differences
        f, w = to_exact(u[0]), to_exact(u[1])
        ok &= np.sum(shift_diff(f, [2, -1], 2) * w) == np.sum(f * shift_diff(w, [-2, 1], 2))
        # adjointness of the discrete operator: sum (-div A(Gu)) . w == sum A(Gu) : Gw
        tensor = closed(*PROTOTYPE_PARAMS[7 * seed])
        wv = to_exact(bandlimited(seed + 10).u(x))
        for system in ("sAL", "AL"):
            sigma = to_exact(from_matrices(tensor(as_matrices(operator_G(system, u, grid.hx, 2), 2)), 2))
            ok &= np.sum(-divergence(sigma, hx, 2) * wv) == np.sum(sigma * operator_G(system, wv, hx, 2))
    return bool(ok)


def test_criterion_10_discrete_identities(verdict):
    identities = _exact_identities()
    # pointwise |grad^2 u|^2 <= 3 |grad Du|^2 on random fields and on the quadratic field (-x1 x2/2, x1^2/2)
    grid = Grid(2, 32)
    x = grid.coords()
    fields = [bandlimited(seed).u(x) for seed in range(100)]
    fields.append(np.stack([-x[0] * x[1] / 2, x[0] ** 2 / 2]))
    worst = 0.0
    violating = 0
    for u in fields:
        ratio = hessian_symgrad_ratio(u, grid.hx, 2)
        if np.isinf(ratio).any():
            violating += 1
            worst = math.inf
            continue
        worst = max(worst, float(ratio.max()))
        violating += int(ratio.max() > 3.0)
    pointwise = violating == 0
    ok = identities and pointwise
    verdict(
        10,
        ok,
        f"exact identities {identities}; constant-3 pointwise bound held on {len(fields) - violating}/{len(fields)} "
        f"fields, max |grad^2 u|^2/|grad Du|^2 = {worst:.4f} (sharp constant is 4)",
    )
    assert identities, "telescoping, summation by parts or adjointness is not exact"
    assert pointwise, f"|grad^2 u|^2 <= 3 |grad Du|^2 fails on {violating} of {len(fields)} fields (max ratio {worst:.4f})"
