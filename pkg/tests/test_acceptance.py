"""Acceptance suite: one test and one printed PASS/FAIL line per criterion.

The PASS/FAIL lines are emitted with output capture suspended so they
reach the terminal even under pytest's default capture mode.
"""

import time
from pathlib import Path

import numpy as np
import pytest

from impulseopt import diagnostics
from impulseopt.bcs import Variant, build_bvp, dof_balance, solve_variant
from impulseopt.dynamics import (
    CartesianState,
    Costate,
    GravityModel,
    angular_momentum,
    costate_derivative,
    hamiltonian,
    propagate,
    specific_energy,
)
from impulseopt.mpbvp import SegmentedBVP, algebraic_solution, solve
from impulseopt.scenarios import (
    ConstraintSet,
    Scenario,
    load_initial_data,
    load_scenario_file,
)

SCENARIO_DIR = Path(__file__).resolve().parents[1] / "scenarios"


_CAPSYS = None


@pytest.fixture(autouse=True)
def _capture_bypass(capsys):
    global _CAPSYS
    _CAPSYS = capsys
    yield
    _CAPSYS = None


def _line(num: int, ok: bool, detail: str) -> None:
    msg = f"CRITERION {num:2d}: {'PASS' if ok else 'FAIL'} - {detail}"
    if _CAPSYS is not None:
        with _CAPSYS.disabled():
            print(msg, flush=True)
    else:
        print(msg, flush=True)


def _check(failures, ok, what):
    if not ok:
        failures.append(what)


# --- shared heavyweight solves (computed once) -----------------------------

@pytest.fixture(scope="module")
def crit1(one_impulse_free_data_I):
    return one_impulse_free_data_I


@pytest.fixture(scope="module")
def ex9():
    scenario, guesses = load_scenario_file(
        SCENARIO_DIR / "multi-constraint-data-II.json")
    start = time.perf_counter()
    sol, pmap = solve_variant(Variant.MULTI_CONSTRAINT, scenario, guesses,
                              tol=1e-9)
    elapsed = time.perf_counter() - start
    return sol, pmap, scenario, elapsed


def test_criterion_1_one_impulse_free(crit1):
    scenario = load_initial_data("I")
    start = time.perf_counter()
    sol, pmap = solve_variant(Variant.ONE_IMPULSE_FREE, scenario,
                              {"th": 700.0}, tol=1e-9)
    elapsed = time.perf_counter() - start
    report = diagnostics.verify(sol, pmap, scenario)
    lam = float(np.atleast_1d(pmap.get(sol.params, "lam"))[0])
    failures = []
    _check(failures, abs(report.cost - 774.9142) / 774.9142 <= 1e-4,
           f"cost {report.cost:.4f}")
    expected_dv1 = np.array([-376.7263, 338.2633, -586.6407])
    _check(failures, np.abs(report.dv1 - expected_dv1).max() <= 0.1,
           f"dv1 {report.dv1}")
    _check(failures, abs(report.instants["th"] - 697.5637) <= 0.01,
           f"th {report.instants['th']:.4f}")
    _check(failures, abs(report.instants["t1"]) <= 1e-6,
           f"t1 {report.instants['t1']:.3e}")
    _check(failures, abs(lam - 0.8594) <= 1e-3, f"lambda {lam:.4f}")
    _check(failures, elapsed <= 60.0, f"runtime {elapsed:.1f}s")
    _line(1, not failures,
          f"cost {report.cost:.4f}, th {report.instants['th']:.4f}, "
          f"lambda {lam:.4f}, {elapsed:.1f}s"
          + (f"; failed: {failures}" if failures else ""))
    assert not failures


TABLE_T1 = [0, 5, 10, 20, 30, 40, 50, 60, 70, 80, 90, 100, 200, 600]
TABLE_EXPECTED = {
    0: (697.5637, 774.9142),
    50: (697.7249, 821.9186),
    100: (697.9291, 878.2470),
    200: (698.4787, 1029.5),
    600: (710.2164, 4736.8),
}


@pytest.fixture(scope="module")
def fixed_instant_sweep():
    scenario = load_initial_data("I")
    start = time.perf_counter()
    rows = diagnostics.sweep_fixed_impulse(scenario, TABLE_T1,
                                           guess={"th": 700.0})
    return rows, time.perf_counter() - start


def test_criterion_2_fixed_instant_table(fixed_instant_sweep):
    rows, elapsed = fixed_instant_sweep
    failures = []
    _check(failures, all(r["converged"] for r in rows),
           f"non-converged rows {[r['t1'] for r in rows if not r['converged']]}")
    for row in rows:
        expect = TABLE_EXPECTED.get(int(row["t1"]))
        if expect is None or not row["converged"]:
            continue
        th_ref, cost_ref = expect
        _check(failures, abs(row["th"] - th_ref) <= 0.01,
               f"t1={row['t1']}: th {row['th']:.4f} vs {th_ref}")
        _check(failures, abs(row["cost"] - cost_ref) / cost_ref <= 1e-4,
               f"t1={row['t1']}: cost {row['cost']:.4f} vs {cost_ref}")
    _check(failures, elapsed <= 600.0, f"runtime {elapsed:.1f}s")
    _line(2, not failures,
          f"{len(rows)} rows in {elapsed:.1f}s"
          + (f"; failed: {failures}" if failures else ""))
    assert not failures


def test_criterion_3_cost_monotone_in_impulse_instant():
    scenario = load_initial_data("I")
    grid = np.arange(0.0, 0.851, 0.05)
    rows = diagnostics.sweep_fixed_impulse(scenario, grid, scaled=True,
                                           guess={"th": 700.0})
    failures = []
    _check(failures, all(r["converged"] for r in rows),
           f"non-converged rows {[r['t1'] for r in rows if not r['converged']]}")
    _check(failures, diagnostics.sweep_is_monotone(rows) is True,
           "cost not strictly increasing")
    costs = [r["cost"] for r in rows if r["converged"]]
    _line(3, not failures,
          f"{len(rows)} scaled rows, cost {costs[0]:.4f} -> {costs[-1]:.4f}"
          + (f"; failed: {failures}" if failures else ""))
    assert not failures


def test_criterion_4_two_impulse_degeneration(crit1):
    sol1, pmap1, _ = crit1
    dv1_one = pmap1.get(sol1.params, "dv1")
    scenario, guesses = load_scenario_file(
        SCENARIO_DIR / "two-impulse-nonnegative-instants-data-I.json")
    sol, pmap = solve_variant(Variant.TWO_IMPULSE_CONSTRAINED, scenario,
                              guesses, tol=1e-9)
    report = diagnostics.verify(sol, pmap, scenario)
    total = report.dv1 + report.dv2
    failures = []
    _check(failures, abs(report.instants["t1"]) <= 1e-6,
           f"t1 {report.instants['t1']:.3e}")
    _check(failures, abs(report.instants["t2"]) <= 1e-6,
           f"t2 {report.instants['t2']:.3e}")
    _check(failures, abs(report.cost - 774.9142) / 774.9142 <= 1e-4,
           f"cost {report.cost:.4f}")
    _check(failures, np.abs(total - dv1_one).max() <= 0.1,
           f"dv1+dv2 {total} vs one-impulse {dv1_one}")
    # Second branch: first impulse pinned at launch, second instant free.
    # The second impulse vanishes, so the same degeneration occurs (the
    # leftover instant is then indeterminate and carries no assertion).
    free_scenario = load_initial_data("I")
    sol_f, pmap_f = solve_variant(
        Variant.TWO_IMPULSE_FIRST_AT_T0, free_scenario,
        {"t2": 50.0, "th": 700.0, "dv1": [-200.0, 180.0, -300.0],
         "dv2": [-150.0, 140.0, -240.0]}, tol=1e-9)
    report_f = diagnostics.verify(sol_f, pmap_f, free_scenario)
    total_f = report_f.dv1 + report_f.dv2
    _check(failures, abs(report_f.cost - 774.9142) / 774.9142 <= 1e-4,
           f"launch-pinned cost {report_f.cost:.4f}")
    _check(failures, np.abs(total_f - dv1_one).max() <= 0.1,
           f"launch-pinned dv1+dv2 {total_f} vs one-impulse {dv1_one}")
    _line(4, not failures,
          f"cost {report.cost:.4f}, t2 {report.instants['t2']:.2e}"
          + (f"; failed: {failures}" if failures else ""))
    assert not failures


def test_criterion_5_constrained_two_impulse_data_III():
    scenario, guesses = load_scenario_file(
        SCENARIO_DIR / "two-impulse-windows-data-III.json")
    sol, pmap = solve_variant(Variant.TWO_IMPULSE_CONSTRAINED, scenario,
                              guesses, tol=1e-9)
    report = diagnostics.verify(sol, pmap, scenario)
    failures = []
    _check(failures, abs(report.cost - 2882.4177) / 2882.4177 <= 1e-4,
           f"cost {report.cost:.4f}")
    _check(failures, abs(report.instants["t1"] - 20.0) <= 0.01,
           f"t1 {report.instants['t1']:.4f}")
    _check(failures, abs(report.instants["t2"] - 70.0) <= 0.01,
           f"t2 {report.instants['t2']:.4f}")
    _check(failures, abs(report.instants["th"] - 398.2766) <= 0.01,
           f"th {report.instants['th']:.4f}")
    active = set(report.active_constraints)
    _check(failures, any("alpha" in a for a in active),
           f"t1 window not active: {active}")
    _check(failures, any("gamma" in a for a in active),
           f"t2 spacing not active: {active}")
    _line(5, not failures,
          f"cost {report.cost:.4f}, t1 {report.instants['t1']:.2f}, "
          f"t2 {report.instants['t2']:.2f}, th {report.instants['th']:.4f}"
          + (f"; failed: {failures}" if failures else ""))
    assert not failures


@pytest.fixture(scope="module")
def ex2_solution():
    scenario, guesses = load_scenario_file(
        SCENARIO_DIR / "two-impulse-windows-data-I.json")
    sol, pmap = solve_variant(Variant.TWO_IMPULSE_CONSTRAINED, scenario,
                              guesses, tol=1e-9)
    return sol, pmap, scenario


def test_criterion_6_impulse_box_face_active(ex2_solution):
    sol, pmap, scenario = ex2_solution
    report = diagnostics.verify(sol, pmap, scenario)
    failures = []
    _check(failures, abs(report.cost - 800.1978) / 800.1978 <= 1e-4,
           f"cost {report.cost:.4f}")
    _check(failures, abs(report.dv1[2] - (-500.0)) <= 1e-3,
           f"dv1_z {report.dv1[2]:.4f}")
    g_scaled = abs(report.dv1[2] - scenario.constraints.dv1_box[2, 0]) / 1e3
    _check(failures, g_scaled <= 1e-6, f"face gap {g_scaled:.3e}")
    _line(6, not failures,
          f"cost {report.cost:.4f}, dv1_z {report.dv1[2]:.4f} "
          f"(face gap {g_scaled:.1e})"
          + (f"; failed: {failures}" if failures else ""))
    assert not failures


def test_criterion_7_terminal_position_cost_ordering():
    scenario, guesses = load_scenario_file(
        SCENARIO_DIR / "one-impulse-terminal-position-data-II.json")
    start = time.perf_counter()
    sol, pmap = solve_variant(Variant.ONE_IMPULSE_TERMINAL_POSITION,
                              scenario, guesses, tol=1e-9)
    elapsed = time.perf_counter() - start
    report = diagnostics.verify(sol, pmap, scenario)
    free_scenario = load_initial_data("II")
    sol1, pmap1 = solve_variant(Variant.ONE_IMPULSE_FREE, free_scenario,
                                {"th": 700.0}, tol=1e-9)
    cost_free = diagnostics.cost(sol1, pmap1)
    failures = []
    _check(failures, abs(report.cost - 800.4847) / 800.4847 <= 1e-4,
           f"cost {report.cost:.4f}")
    _check(failures, abs(report.instants["t1"] - 53.50987) <= 0.01,
           f"t1 {report.instants['t1']:.5f}")
    _check(failures, abs(report.instants["th"] - 682.4639) <= 0.01,
           f"th {report.instants['th']:.4f}")
    _check(failures, abs(report.instants["tf"] - 948.9139) <= 0.01,
           f"tf {report.instants['tf']:.4f}")
    _check(failures, abs(cost_free - 749.3707) / 749.3707 <= 1e-4,
           f"free-interception cost {cost_free:.4f}")
    _check(failures, report.cost > cost_free,
           f"terminal-position cost {report.cost:.4f} not above "
           f"free cost {cost_free:.4f}")
    _check(failures, elapsed <= 60.0, f"runtime {elapsed:.1f}s")
    _line(7, not failures,
          f"constrained {report.cost:.4f} > free {cost_free:.4f}, "
          f"t1 {report.instants['t1']:.5f}"
          + (f"; failed: {failures}" if failures else ""))
    assert not failures


def test_criterion_8_multi_constraint(ex9):
    sol, pmap, scenario, elapsed = ex9
    report = diagnostics.verify(sol, pmap, scenario)
    failures = []
    _check(failures, abs(report.cost - 805.3242) / 805.3242 <= 1e-3,
           f"cost {report.cost:.4f}")
    expected_dv1 = np.array([-100.0, 100.0, -100.0])
    _check(failures, np.abs(report.dv1 - expected_dv1).max() <= 0.01,
           f"dv1 {report.dv1}")
    _check(failures,
           np.abs(report.terminal_deviation - 500.0).max() <= 0.01,
           f"terminal deviation {report.terminal_deviation}")
    for key, ref in (("t1", 20.75471), ("t2", 61.75471),
                     ("th", 682.4994), ("tf", 949.1821)):
        _check(failures, abs(report.instants[key] - ref) <= 0.05,
               f"{key} {report.instants[key]:.5f} vs {ref}")
    unknowns, rows = dof_balance(Variant.MULTI_CONSTRAINT, scenario)
    _check(failures, unknowns == rows == 116,
           f"residual dimension {rows} != 116")
    _check(failures, elapsed <= 600.0, f"runtime {elapsed:.1f}s")
    _line(8, not failures,
          f"cost {report.cost:.4f}, dv1 at box faces, deviation "
          f"({report.terminal_deviation[0]:.4f}, "
          f"{report.terminal_deviation[1]:.4f}, "
          f"{report.terminal_deviation[2]:.4f}) m, "
          f"{rows} conditions, {elapsed:.1f}s"
          + (f"; failed: {failures}" if failures else ""))
    assert not failures


def _order_slope():
    def rhs(seg, s, y, p):
        return np.vstack([y[1], -y[0]])

    def bc(ya, yb, p):
        return np.array([ya[0][0], yb[0][0] - np.sin(1.0)])

    errors = []
    sizes = np.array([5, 9, 17, 33])
    for m in sizes:
        mesh = [np.linspace(0.0, 1.0, m)]
        guess = [np.vstack([mesh[0], np.ones(m)])]
        bvp = SegmentedBVP(dims=(2,), rhs=rhs, bc=bc, mesh=mesh, guess=guess,
                           params=np.array([]))
        sol = algebraic_solution(bvp, tol=1.0)
        s = np.linspace(0.0, 1.0, 257)
        errors.append(np.abs(sol.interpolate(0, s)[0] - np.sin(s)).max())
    h = 1.0 / (sizes - 1)
    return float(np.polyfit(np.log(h), np.log(errors), 1)[0])


def test_criterion_9_property_suite(crit1, ex2_solution, ex9, rng):
    sol, pmap, scenario = crit1
    failures = []

    # Costate rates match the negative finite-difference Hamiltonian
    # gradient at 100 random exoatmospheric points.
    g = GravityModel()
    worst = 0.0
    for _ in range(100):
        r = rng.normal(size=3)
        r *= 1.1 * g.Re / np.linalg.norm(r)
        st = CartesianState(r=r, v=rng.normal(scale=3e3, size=3))
        co = Costate(p_r=rng.normal(scale=1e-3, size=3),
                     p_v=rng.normal(size=3))
        d = costate_derivative(st, co, g)
        hr = 1e-5 * np.linalg.norm(st.r)
        grad_r = np.empty(3)
        for j in range(3):
            e = np.zeros(3)
            e[j] = hr
            grad_r[j] = (hamiltonian(CartesianState(st.r + e, st.v), co, g)
                         - hamiltonian(CartesianState(st.r - e, st.v), co, g)
                         ) / (2 * hr)
        # H is linear in v, so its v-gradient is p_r exactly.
        worst = max(worst,
                    np.abs(d.p_r + grad_r).max() / max(np.abs(grad_r).max(), 1e-30),
                    np.abs(d.p_v + co.p_r).max() / max(np.abs(co.p_r).max(), 1e-30))
    _check(failures, worst < 1e-6, f"costate-vs-FD gradient {worst:.2e}")

    # Hamiltonian constancy per segment on a converged solution.
    h_spread = 0.0
    for vals in diagnostics.hamiltonian_history(sol, pmap, scenario):
        h_spread = max(h_spread,
                       (vals.max() - vals.min()) / max(abs(vals).max(), 1e-30))
    _check(failures, h_spread <= 1e-6, f"Hamiltonian spread {h_spread:.2e}")

    # Oracle conservation over a long arc.
    s0 = scenario.interceptor0
    s1 = propagate(s0, 1500.0, g, tol=1e-13)
    de = abs(specific_energy(s1, g) - specific_energy(s0, g)) \
        / abs(specific_energy(s0, g))
    dh = np.linalg.norm(angular_momentum(s1) - angular_momentum(s0)) \
        / np.linalg.norm(angular_momentum(s0))
    _check(failures, de < 1e-8 and dh < 1e-8,
           f"oracle drift energy {de:.2e} momentum {dh:.2e}")

    # Unit primer magnitude at the impulse of an unconstrained-impulse run.
    report = diagnostics.verify(sol, pmap, scenario)
    _check(failures,
           all(abs(m - 1.0) <= 1e-6 for m in report.lawden["primer_at_impulses"]),
           f"primer at impulses {report.lawden['primer_at_impulses']}")

    # Complementarity products at convergence (box-constrained runs).
    for label, (s2, p2, sc2) in (("impulse-box", ex2_solution),
                                 ("multi-constraint", ex9[:3])):
        rep2 = diagnostics.verify(s2, p2, sc2)
        worst_c = max((abs(v) for v in rep2.complementarity.values()),
                      default=0.0)
        _check(failures, worst_c <= 1e-8,
               f"{label} complementarity {worst_c:.2e}")

    # Fourth-order convergence of the collocation scheme.
    slope = _order_slope()
    _check(failures, abs(slope - 4.0) < 0.3, f"order slope {slope:.2f}")

    # Rotation invariance of the optimal cost.
    angle = 0.7
    c, s_ = np.cos(angle), np.sin(angle)
    R = np.array([[c, -s_, 0.0], [s_, c, 0.0], [0.0, 0.0, 1.0]])
    rot = Scenario(
        gravity=scenario.gravity,
        interceptor0=CartesianState(R @ scenario.interceptor0.r,
                                    R @ scenario.interceptor0.v),
        target0=CartesianState(R @ scenario.target0.r,
                               R @ scenario.target0.v),
        label="rotated")
    sol_r, pmap_r = solve_variant(Variant.ONE_IMPULSE_FREE, rot,
                                  {"th": 700.0}, tol=1e-9)
    cost_r = diagnostics.cost(sol_r, pmap_r)
    cost_0 = diagnostics.cost(sol, pmap)
    rot_err = abs(cost_r - cost_0) / cost_0
    _check(failures, rot_err <= 1e-6, f"rotation invariance {rot_err:.2e}")

    _line(9, not failures,
          f"gradient {worst:.1e}, H spread {h_spread:.1e}, "
          f"order slope {slope:.2f}, rotation {rot_err:.1e}"
          + (f"; failed: {failures}" if failures else ""))
    assert not failures


def test_criterion_10_degrees_of_freedom_balance():
    failures = []
    counts = {}
    for variant in Variant:
        unknowns, rows = dof_balance(variant)
        counts[variant.value] = (unknowns, rows)
        _check(failures, unknowns == rows,
               f"{variant.value}: {unknowns} unknowns vs {rows} conditions")
    _line(10, not failures,
          ", ".join(f"{k}={u}" for k, (u, _) in counts.items())
          + (f"; failed: {failures}" if failures else ""))
    assert not failures
