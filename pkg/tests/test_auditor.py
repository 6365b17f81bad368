import csv
import io
import json
import math

import numpy as np
import pytest

from orliczlab.auditor import (
    FamilyNotUniformError,
    audit_caccioppoli_AL,
    audit_caccioppoli_sAL,
    audit_korn,
    caccioppoli_rhs,
    default_delta0,
    reports_to_csv,
    reports_to_json,
    uniformity_sweep,
)
from orliczlab.fields import Grid, SpaceTimeField, gradient
from orliczlab.nfunction import make_prototype, power_function
from orliczlab.problems import bandlimited, build_problem, pulsating, rigid_rotation
from orliczlab.solver import ProblemSpec, solve
from orliczlab.tensors import GrowthTensor

CENTER = (math.pi, math.pi)
GRID = Grid(2, 32, dt=0.02, m=100)


def closed(kind, p, mu):
    return GrowthTensor(make_prototype(kind, p, mu), f"closed-{kind}")


@pytest.fixture(scope="module")
def sal_run():
    tensor = closed("A1", 3.0, 0.1)
    rep = solve(ProblemSpec("sAL", tensor, GRID, pulsating().u(GRID.coords(), 0.0), tol=1e-9))
    return rep.trajectory, tensor


@pytest.fixture(scope="module")
def al_run():
    tensor = closed("A2", 3.0, 0.1)
    rep = solve(ProblemSpec("AL", tensor, GRID, pulsating().u(GRID.coords(), 0.0), tol=1e-9))
    return rep.trajectory, tensor


def zeros():
    return SpaceTimeField(GRID, np.zeros((GRID.m + 1, 2) + GRID.space_shape))


# --- unit-constant right side ------------------------------------------------


def test_caccioppoli_rhs_weights():
    weights, total = caccioppoli_rhs({"a": 2.0, "b": 1.0}, 0.5, 4.0, 3.0)
    assert weights == {"coefficient": 1.25 / 0.25, "forcing_weight": 0.25}
    assert total == 5.0 * 3.0 + 0.25 * 3.0


def test_default_delta0():
    assert default_delta0(make_prototype("A1", 3.0, 0.0)) == 1e-6
    assert default_delta0(power_function(2.0)) == 1e-6


# --- sAL ---------------------------------------------------------------------


def test_zero_solution_gives_zero_lhs():
    phi = make_prototype("A1", 3.0, 0.1)
    reps = audit_caccioppoli_sAL(zeros(), None, phi, None, 0.5, 1.0, center=CENTER, t0=1.0)
    assert set(reps) == {"4", "5", "6", "7"}
    for rep in reps.values():
        assert rep.lhs == 0.0 and rep.ratio == 0.0
    assert reps["4"].rhs > 0 and reps["6"].rhs == 0.0


def test_sal_reports_structure(sal_run):
    traj, tensor = sal_run
    reps = audit_caccioppoli_sAL(traj, None, tensor.phi, tensor, 0.5, 1.0, center=CENTER, t0=1.0)
    assert set(reps["4"].rhs_terms) == {"phi_grad", "phi_delta0", "forcing"}
    assert set(reps["5"].rhs_terms) == {"phi_sym", "phi_osc", "phi_delta0", "forcing"}
    assert set(reps["6"].lhs_terms) == {"sup_gradient", "v_gradient", "hessian"}
    for rep in reps.values():
        assert 0 < rep.ratio < math.inf
        assert rep.lhs == pytest.approx(sum(rep.lhs_terms.values()), rel=1e-15)
    # Korn: the full gradient dominates the symmetric part on the same cylinder
    assert reps["4"].rhs_terms["phi_grad"] >= reps["5"].rhs_terms["phi_sym"]


def test_sal_only_four_and_five_without_curvature_at_zero():
    tensor = closed("A1", 3.0, 0.0)
    traj = SpaceTimeField(GRID, np.broadcast_to(pulsating().u(GRID.coords(), 0.0), (GRID.m + 1, 2) + GRID.space_shape))
    reps = audit_caccioppoli_sAL(traj, None, tensor.phi, tensor, 0.5, 1.0, center=CENTER, t0=1.0)
    assert set(reps) == {"4", "5"}


def test_delta0_zero_matches_hessian_estimate_bitwise(sal_run):
    traj, tensor = sal_run
    reps = audit_caccioppoli_sAL(traj, None, tensor.phi, tensor, 0.5, 1.0, delta0=0.0, center=CENTER, t0=1.0)
    assert reps["4"].rhs == reps["6"].rhs
    assert reps["5"].rhs == reps["7"].rhs
    assert reps["4"].rhs_terms["phi_delta0"] == 0.0


def test_radius_gap_scaling(sal_run):
    traj, tensor = sal_run
    a = audit_caccioppoli_sAL(traj, None, tensor.phi, tensor, 0.5, 1.0, center=CENTER, t0=1.0)["4"]
    b = audit_caccioppoli_sAL(traj, None, tensor.phi, tensor, 0.75, 1.0, center=CENTER, t0=1.0)["4"]
    assert b.weights["coefficient"] / a.weights["coefficient"] == pytest.approx(4.0, rel=1e-14)
    assert a.rhs_terms == b.rhs_terms


def test_forcing_term(sal_run):
    traj, tensor = sal_run
    fgrad = np.ones((GRID.m + 1, 2, 2) + GRID.space_shape)
    rep = audit_caccioppoli_sAL(traj, fgrad, tensor.phi, tensor, 0.5, 1.0, center=CENTER, t0=1.0)["4"]
    plain = audit_caccioppoli_sAL(traj, None, tensor.phi, tensor, 0.5, 1.0, center=CENTER, t0=1.0)["4"]
    # |grad f|^2 = 4 integrated over Q_R, roughly 4 * pi R^2 * 2 R^2
    assert rep.rhs_terms["forcing"] == pytest.approx(4 * math.pi * 2, rel=0.1)
    assert rep.rhs == pytest.approx(plain.rhs + 0.25 * rep.rhs_terms["forcing"], rel=1e-14)
    with pytest.raises(ValueError, match="forcing gradient has shape"):
        audit_caccioppoli_sAL(traj, fgrad[:, 0], tensor.phi, tensor, 0.5, 1.0, center=CENTER, t0=1.0)


def test_quadratic_terms_match_continuous_values():
    # time-independent u = (sin x2, 0): |grad u|^2 = cos^2 x2, phi = t^2/2
    g = Grid(2, 128, dt=0.02, m=100)
    u = np.stack([np.sin(g.coords()[1]), np.zeros(g.space_shape)])
    traj = SpaceTimeField(g, np.broadcast_to(u, (g.m + 1,) + u.shape))
    rep = audit_caccioppoli_sAL(traj, None, power_function(2.0), None, 0.5, 1.0, center=CENTER, t0=1.0)["4"]
    # int_{B_1(pi, pi)} cos^2 x2 / 2 dx = pi/4 + pi J_1(2)/4 (J_1(2) = 0.5767248077568734), times |I| = 2
    expect = 2 * (math.pi / 4 + math.pi * 0.5767248077568734 / 4)
    assert rep.rhs_terms["phi_grad"] == pytest.approx(expect, rel=0.03)


@pytest.mark.parametrize("bad", [-1.0, float("nan")])
def test_invalid_delta0(sal_run, bad):
    traj, tensor = sal_run
    with pytest.raises(ValueError, match="invalid δ₀"):
        audit_caccioppoli_sAL(traj, None, tensor.phi, tensor, 0.5, 1.0, delta0=bad, center=CENTER, t0=1.0)


def test_cylinder_errors(sal_run):
    traj, tensor = sal_run
    with pytest.raises(ValueError, match="outside domain"):
        audit_caccioppoli_sAL(traj, None, tensor.phi, tensor, 0.5, 1.0, center=(0.8, 3.0), t0=1.0)
    with pytest.raises(ValueError, match="outside domain"):
        audit_caccioppoli_sAL(traj, None, tensor.phi, tensor, 0.5, 1.0, center=CENTER, t0=0.5)
    with pytest.raises(ValueError, match="0 < r < R"):
        audit_caccioppoli_sAL(traj, None, tensor.phi, tensor, 1.0, 0.5, center=CENTER, t0=1.0)


# --- AL ----------------------------------------------------------------------


def test_al_reports(al_run):
    traj, tensor = al_run
    slab = {"t1": 0.5, "t2": 1.5, "R0": 1.5}
    reps = audit_caccioppoli_AL(traj, None, tensor.phi, tensor, 0.5, 1.0, center=CENTER, t0=1.0, slab=slab)
    r8, r9 = reps["8"], reps["9"]
    assert r8.weights == {"coefficient": 4.0, "forcing_weight": 0.5}
    assert r8.rhs == pytest.approx(4.0 * (r8.rhs_terms["phi_grad"] + r8.rhs_terms["grad_sq"]), rel=1e-15)
    assert 0 < r8.ratio < math.inf and 0 < r9.ratio < math.inf
    assert r9.slab == {"t1": 0.5, "t2": 1.5, "R0": 1.5}
    assert r9.weights["coefficient"] == pytest.approx(4.0)
    # the initial slice energy on B_R0 dominates the sup over B_R for a decaying solution
    assert r9.lhs_terms["sup_gradient"] <= r9.rhs_terms["initial_gradient"]


def test_al_zero_solution():
    phi = make_prototype("A2", 3.0, 0.1)
    reps = audit_caccioppoli_AL(zeros(), None, phi, None, 0.5, 1.0, center=CENTER, t0=1.0)
    assert reps["8"].lhs == 0.0 and reps["8"].rhs == 0.0 and reps["8"].ratio == 0.0


def test_slab_errors(al_run):
    traj, tensor = al_run
    for slab in ({"t1": 0.5, "t2": 1.5, "R0": 0.9}, {"t1": 1.5, "t2": 0.5, "R0": 1.5}, {"t1": 0.5, "t2": 1.5, "R0": 3.2}):
        with pytest.raises(ValueError):
            audit_caccioppoli_AL(traj, None, tensor.phi, tensor, 0.5, 1.0, center=CENTER, t0=1.0, slab=slab)


# --- Korn --------------------------------------------------------------------


def test_korn_gradient_field_has_equal_sides():
    g = Grid(2, 32)
    x = g.coords()
    psi = np.sin(x[0]) * np.cos(2 * x[1])
    u = gradient(psi, g.hx, 2)
    rep = audit_korn(u, g, make_prototype("A2", 3.0, 0.1), 1.0)
    # the discrete gradient of a discrete gradient is symmetric
    assert rep.lhs == pytest.approx(rep.sym_term, rel=1e-14)
    assert rep.ratio < 1


def test_korn_rigid_rotation():
    g = Grid(2, 32)
    W = np.array([[0.0, 1.0], [-1.0, 0.0]])
    u = rigid_rotation(W, CENTER).u(g.coords())
    rep = audit_korn(u, g, make_prototype("A1", 3.0, 0.1), 1.0)
    assert rep.sym_term < 1e-20
    assert 0 < rep.ratio < math.inf


def test_korn_random_fields_bounded():
    g = Grid(2, 32)
    phi = make_prototype("A3", 3.0, 0.1)
    ratios = [audit_korn(bandlimited(s).u(g.coords()), g, phi, 1.0).ratio for s in range(10)]
    assert all(0 < q < 10 for q in ratios)


def test_korn_input_errors():
    g = Grid(2, 32)
    phi = make_prototype("A1", 3.0, 0.1)
    with pytest.raises(ValueError, match="shape"):
        audit_korn(np.zeros((2, 16, 16)), g, phi, 1.0)
    with pytest.raises(ValueError, match="outside domain"):
        audit_korn(np.zeros((2, 32, 32)), g, phi, 3.0)


# --- uniformity sweep --------------------------------------------------------

TEMPLATE = {
    "system": "sAL",
    "tensor": {"kind": "A2", "p": 3.0, "mu": 1.0},
    "grid": {"n": 16, "dt": 0.05, "m": 40},
    "initial": "pulsating",
}


def test_sweep_single_mu_equals_direct_audit():
    rows = uniformity_sweep(TEMPLATE, [0.1], 0.5, 1.0, center=CENTER, t0=1.0)
    spec, _ = build_problem(dict(TEMPLATE, tensor={"kind": "A2", "p": 3.0, "mu": 0.1}))
    traj = solve(spec).trajectory
    direct = audit_caccioppoli_sAL(traj, None, spec.phi, spec.tensor, 0.5, 1.0, center=CENTER, t0=1.0)["4"]
    assert rows[0]["ratio"] == direct.ratio
    assert rows[0]["G"] == pytest.approx(2.0, rel=1e-6)


def test_sweep_shared_delta0():
    rows = uniformity_sweep(TEMPLATE, [0.1], 0.5, 1.0, center=CENTER, t0=1.0, delta0=1.0)
    spec, _ = build_problem(dict(TEMPLATE, tensor={"kind": "A2", "p": 3.0, "mu": 0.1}))
    traj = solve(spec).trajectory
    direct = audit_caccioppoli_sAL(traj, None, spec.phi, spec.tensor, 0.5, 1.0, 1.0, center=CENTER, t0=1.0)["4"]
    assert rows[0]["ratio"] == direct.ratio and rows[0]["report"].delta0 == 1.0
    with pytest.raises(ValueError, match="sAL estimates only"):
        uniformity_sweep(dict(TEMPLATE, system="AL"), [1.0], 0.5, 1.0, estimate="8", delta0=1.0)


def test_sweep_rejects_non_uniform_family():
    template = dict(TEMPLATE, tensor={"kind": "A3", "p": 3.0, "mu": 1.0})
    with pytest.raises(FamilyNotUniformError, match="family not G-uniform") as err:
        uniformity_sweep(template, [0.01, 1.0], 0.5, 1.0, g_tol=0.01, center=CENTER, t0=1.0)
    assert len(err.value.rows) == 2


def test_sweep_argument_errors():
    with pytest.raises(ValueError):
        uniformity_sweep(TEMPLATE, [], 0.5, 1.0)
    with pytest.raises(ValueError, match="mu > 0"):
        uniformity_sweep(TEMPLATE, [0.0, 1.0], 0.5, 1.0)
    with pytest.raises(ValueError, match="not available"):
        uniformity_sweep(TEMPLATE, [1.0], 0.5, 1.0, estimate="8", center=CENTER, t0=1.0)


# --- export ------------------------------------------------------------------


def test_report_exports(al_run):
    traj, tensor = al_run
    reps = audit_caccioppoli_AL(
        traj, None, tensor.phi, tensor, 0.5, 1.0, center=CENTER, t0=1.0, slab={"t1": 0.5, "t2": 1.5, "R0": 1.5}
    )
    rows = list(csv.DictReader(io.StringIO(reports_to_csv(list(reps.values()), "abc"))))
    assert [row["estimate"] for row in rows] == ["8", "9"]
    assert rows[0]["run_id"] == "abc" and float(rows[0]["ratio"]) == reps["8"].ratio
    assert rows[1]["R0"] == "1.5" and rows[0]["R0"] == ""
    data = json.loads(reports_to_json(list(reps.values()), "abc"))
    assert data["run_id"] == "abc" and data["reports"][1]["slab"]["R0"] == 1.5
