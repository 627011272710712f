import numpy as np
import pytest

from impulseopt.bcs import (
    Variant,
    build_bvp,
    dof_balance,
    parameter_map,
    residuals,
    slackness_hamiltonian,
    slackness_values,
    static_slack_rows,
)
from impulseopt.scenarios import ConstraintSet, load_initial_data


ALL_VARIANTS = list(Variant)


@pytest.mark.parametrize("variant", ALL_VARIANTS, ids=lambda v: v.value)
def test_dof_balance_square(variant):
    unknowns, rows = dof_balance(variant)
    assert unknowns == rows


def test_multi_constraint_residual_dimension():
    unknowns, rows = dof_balance(Variant.MULTI_CONSTRAINT)
    assert unknowns == rows == 116


def test_variant_names_round_trip():
    for v in ALL_VARIANTS:
        assert Variant.from_name(v.value) is v
    with pytest.raises(KeyError):
        Variant.from_name("NoSuchVariant")


def test_parameter_map_instants_and_breakpoints():
    scenario = load_initial_data("I")
    pmap = parameter_map(Variant.ONE_IMPULSE_FREE, scenario)
    p = np.zeros(pmap.n)
    p[pmap.slices["tau1"]] = 0.25
    p[pmap.slices["th"]] = 400.0
    inst = pmap.instants(p)
    assert inst["t1"] == pytest.approx(100.0)
    assert inst["th"] == pytest.approx(400.0)
    assert np.allclose(pmap.breakpoints(p), [0.0, 100.0, 400.0])


def test_residuals_dimension_checks():
    scenario = load_initial_data("I")
    pmap = parameter_map(Variant.ONE_IMPULSE_FREE, scenario)
    ya = [np.ones(d) for d in pmap.dims]
    yb = [np.ones(d) for d in pmap.dims]
    with pytest.raises(ValueError):
        residuals(Variant.ONE_IMPULSE_FREE, ya, yb, np.ones(pmap.n + 1),
                  scenario)
    with pytest.raises(ValueError):
        residuals(Variant.ONE_IMPULSE_FREE, [v[:-1] for v in ya], yb,
                  np.ones(pmap.n), scenario)


def test_residuals_vanish_at_converged_solution(one_impulse_free_data_I):
    sol, pmap, scenario = one_impulse_free_data_I
    ya = [y[:, 0] for y in sol.y]
    yb = [y[:, -1] for y in sol.y]
    r = residuals(Variant.ONE_IMPULSE_FREE, ya, yb, sol.params, scenario)
    assert r.size == sum(pmap.dims) + pmap.n
    assert np.abs(r).max() < 1e-8


def test_build_bvp_guess_respects_instants():
    scenario = load_initial_data("I")
    bvp, pmap = build_bvp(Variant.ONE_IMPULSE_FREE, scenario,
                          {"t1": 50.0, "th": 500.0})
    assert pmap.instants(bvp.params)["t1"] == pytest.approx(50.0)
    assert pmap.instants(bvp.params)["th"] == pytest.approx(500.0)
    bvp.validate()


def test_build_bvp_validates_missing_constraints():
    scenario = load_initial_data("I")  # has r_f but no boxes
    with pytest.raises(ValueError):
        build_bvp(Variant.TWO_IMPULSE_CONSTRAINED, scenario)
    with pytest.raises(ValueError):
        build_bvp(Variant.MULTI_CONSTRAINT, scenario)
    no_rf = load_initial_data("III")
    with pytest.raises(ValueError):
        build_bvp(Variant.TERMINAL_POSITION, no_rf)


def test_fixed_t1_variant_requires_value():
    scenario = load_initial_data("I")
    with pytest.raises(ValueError):
        build_bvp(Variant.ONE_IMPULSE_FIXED_T1, scenario)


def test_static_slack_rows_is_complementarity_product():
    assert static_slack_rows(2.0, 3.0) == 6.0
    assert static_slack_rows(0.0, -5.0) == 0.0


def test_slackness_values_solve_decay_ode():
    """eps(t) = a e^{-wt} + b e^{-w(T-t)} satisfies eps'' = k eps."""
    k = np.array([1.0, 4.0, 0.25])
    ab = np.array([0.7, -0.3, 1.1, 0.2, 0.5, -0.9])
    span = 3.0
    t = np.linspace(0.0, span, 7)
    eps, p_eps = slackness_values(ab, k, span, t)
    assert eps.shape == (3, 7) and p_eps.shape == (3, 7)
    # Finite-difference second derivative against k * eps.
    h = 1e-4
    e_p, _ = slackness_values(ab, k, span, t + h)
    e_m, _ = slackness_values(ab, k, span, t - h)
    second = (e_p - 2 * eps + e_m) / h ** 2
    assert np.allclose(second, k[:, None] * eps, rtol=1e-5, atol=1e-8)
    # p_eps = -2 eps'.
    first = (e_p - e_m) / (2 * h)
    assert np.allclose(p_eps, -2.0 * first, rtol=1e-5, atol=1e-8)


def test_slackness_hamiltonian_is_conserved_share():
    k = np.array([1.0, 2.0, 3.0])
    ab = np.array([0.4, 0.1, -0.2, 0.6, -0.5, 0.3])
    span = 2.0
    h_share = slackness_hamiltonian(ab, k, span)
    for t in (0.0, 0.7, 2.0):
        eps, p_eps = slackness_values(ab, k, span, np.array([t]))
        direct = float(np.sum(-0.25 * p_eps[:, 0] ** 2 + k * eps[:, 0] ** 2))
        assert direct == pytest.approx(h_share, abs=1e-12 + 1e-9 * abs(h_share))


def test_slackness_layers_vanish_on_long_segments():
    """On spans of hundreds of seconds the two edge layers decouple."""
    k = np.ones(3)
    ab = np.array([1.0, 1.0, 1.0, 0.5, 0.5, 0.5])
    span = 600.0
    eps, p_eps = slackness_values(ab, k, span, np.array([0.0, 300.0, span]))
    assert np.allclose(eps[:, 0], 1.0)          # start layer amplitude
    assert np.allclose(eps[:, 1], 0.0)          # interior exactly zero
    assert np.allclose(eps[:, 2], 0.5)          # end layer amplitude
    assert abs(slackness_hamiltonian(ab, k, span)) < 1e-200


def test_two_impulse_time_constraint_layout():
    cons = ConstraintSet(alpha=20.0, beta=40.0, gamma=50.0,
                         dv1_box=np.array([[-1.0, 1.0]] * 3),
                         dv2_box=np.array([[-1.0, 1.0]] * 3))
    scenario = load_initial_data("I", cons)
    pmap = parameter_map(Variant.TWO_IMPULSE_CONSTRAINED, scenario)
    assert pmap.lam_names == ("alpha", "beta", "gamma")
    assert pmap.slices["mu"].stop - pmap.slices["mu"].start == 12
    unknowns, rows = dof_balance(Variant.TWO_IMPULSE_CONSTRAINED, scenario)
    assert unknowns == rows
