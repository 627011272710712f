import numpy as np
import pytest

from impulseopt.mpbvp import (
    MeshLimitError,
    SegmentedBVP,
    Solution,
    SolverError,
    SolverOptions,
    algebraic_solution,
    collocation_residual,
    jacobian,
    jacobian_structure,
    solve,
)


def _sin_bvp(n_points=11):
    """y'' = -y on [0, 1], y(0) = 0, y(1) = sin(1); exact solution sin."""

    def rhs(seg, s, y, p):
        return np.vstack([y[1], -y[0]])

    def bc(ya, yb, p):
        return np.array([ya[0][0], yb[0][0] - np.sin(1.0)])

    mesh = [np.linspace(0.0, 1.0, n_points)]
    guess = [np.vstack([mesh[0], np.ones(n_points)])]
    return SegmentedBVP(dims=(2,), rhs=rhs, bc=bc, mesh=mesh, guess=guess,
                        params=np.array([]))


def test_sin_bvp_matches_exact_solution():
    sol = solve(_sin_bvp(), tol=1e-10)
    s = np.linspace(0.0, 1.0, 101)
    y = sol.interpolate(0, s)
    assert np.abs(y[0] - np.sin(s)).max() < 1e-9
    assert np.abs(y[1] - np.cos(s)).max() < 1e-8
    assert sol.max_residual <= 1e-10


def test_parameter_recovery():
    """y' = p y, y(0) = 1, y(1) = e^2 determines p = 2."""

    def rhs(seg, s, y, p):
        return p[0] * y

    def bc(ya, yb, p):
        return np.array([ya[0][0] - 1.0, yb[0][0] - np.exp(2.0)])

    mesh = [np.linspace(0.0, 1.0, 11)]
    guess = [np.exp(mesh[0])[None, :]]
    bvp = SegmentedBVP(dims=(1,), rhs=rhs, bc=bc, mesh=mesh, guess=guess,
                       params=np.array([1.0]))
    sol = solve(bvp, tol=1e-10)
    assert sol.params[0] == pytest.approx(2.0, rel=1e-9)


def test_multisegment_with_interface_condition():
    """Two segments of y' = 1 glued with a jump of 3 at the interface."""

    def rhs(seg, s, y, p):
        return np.ones_like(y)

    def bc(ya, yb, p):
        return np.array([ya[0][0] - 0.0,
                         ya[1][0] - (yb[0][0] + 3.0)])

    mesh = [np.linspace(0.0, 0.5, 6), np.linspace(0.5, 1.0, 6)]
    guess = [np.zeros((1, 6)), np.zeros((1, 6))]
    bvp = SegmentedBVP(dims=(1, 1), rhs=rhs, bc=bc, mesh=mesh, guess=guess,
                       params=np.array([]))
    sol = solve(bvp, tol=1e-10)
    assert sol.interpolate(0, [0.5])[0, 0] == pytest.approx(0.5)
    assert sol.interpolate(1, [0.5])[0, 0] == pytest.approx(3.5)
    assert sol.interpolate(1, [1.0])[0, 0] == pytest.approx(4.0)


def test_cubic_solution_is_exact_on_coarse_mesh():
    """Simpson collocation reproduces polynomial solutions of degree <= 3."""

    def rhs(seg, s, y, p):
        return (3.0 * s ** 2 - 2.0 * s)[None, :]

    def bc(ya, yb, p):
        return np.array([ya[0][0] - 1.0])

    mesh = [np.linspace(0.0, 1.0, 3)]
    guess = [np.ones((1, 3))]
    bvp = SegmentedBVP(dims=(1,), rhs=rhs, bc=bc, mesh=mesh, guess=guess,
                       params=np.array([]))
    sol = solve(bvp, tol=1e-9)
    s = np.linspace(0.0, 1.0, 41)
    exact = s ** 3 - s ** 2 + 1.0
    assert np.abs(sol.interpolate(0, s)[0] - exact).max() < 1e-12
    assert sol.mesh_refinements == 0


def order_errors(sizes):
    errors = []
    for m in sizes:
        sol = algebraic_solution(_sin_bvp(m), tol=1.0)
        s = np.linspace(0.0, 1.0, 257)
        errors.append(np.abs(sol.interpolate(0, s)[0] - np.sin(s)).max())
    return np.asarray(errors)


def test_collocation_order_four():
    sizes = np.array([5, 9, 17, 33])
    errors = order_errors(sizes)
    h = 1.0 / (sizes - 1)
    slope = np.polyfit(np.log(h), np.log(errors), 1)[0]
    assert abs(slope - 4.0) < 0.3


def test_refinement_activates_on_steep_layer():
    """y' = -10 (y - cos 10s) picks up mesh points beyond the initial 7."""

    def rhs(seg, s, y, p):
        return -10.0 * (y - np.cos(10.0 * s))

    def bc(ya, yb, p):
        return np.array([ya[0][0] - 1.0])

    mesh = [np.linspace(0.0, 1.0, 7)]
    guess = [np.ones((1, 7))]
    bvp = SegmentedBVP(dims=(1,), rhs=rhs, bc=bc, mesh=mesh, guess=guess,
                       params=np.array([]))
    sol = solve(bvp, tol=1e-8)
    assert sol.mesh_refinements >= 1
    assert sol.mesh[0].size > 7
    assert sol.max_residual <= 1e-8
    # Segment endpoints never move under refinement.
    assert sol.mesh[0][0] == 0.0 and sol.mesh[0][-1] == 1.0


def test_mesh_limit_error():
    def rhs(seg, s, y, p):
        return -500.0 * (y - np.cos(500.0 * s))

    def bc(ya, yb, p):
        return np.array([ya[0][0] - 1.0])

    mesh = [np.linspace(0.0, 1.0, 5)]
    bvp = SegmentedBVP(dims=(1,), rhs=rhs, bc=bc, mesh=mesh,
                       guess=[np.ones((1, 5))], params=np.array([]))
    with pytest.raises(SolverError):
        solve(bvp, tol=1e-13, options=SolverOptions(max_nodes=12))


def test_validate_rejects_wrong_bc_dimension():
    def rhs(seg, s, y, p):
        return y

    def bc(ya, yb, p):
        return np.array([ya[0][0]])  # needs 2 rows for dims=(2,)

    mesh = [np.linspace(0.0, 1.0, 5)]
    bvp = SegmentedBVP(dims=(2,), rhs=rhs, bc=bc, mesh=mesh,
                       guess=[np.ones((2, 5))], params=np.array([]))
    with pytest.raises(ValueError):
        bvp.validate()


def test_validate_rejects_non_monotone_mesh():
    def rhs(seg, s, y, p):
        return y

    def bc(ya, yb, p):
        return np.array([ya[0][0]])

    mesh = [np.array([0.0, 0.5, 0.4, 1.0])]
    bvp = SegmentedBVP(dims=(1,), rhs=rhs, bc=bc, mesh=mesh,
                       guess=[np.ones((1, 4))], params=np.array([]))
    with pytest.raises(ValueError):
        bvp.validate()


def test_jacobian_structure_covers_fd_jacobian():
    bvp = _sin_bvp(5)
    bvp.validate()
    J = jacobian(bvp)
    S = jacobian_structure(bvp)
    nz = np.abs(J) > 1e-12
    assert S.shape == J.shape
    # Every numerical nonzero is flagged in the sparsity pattern.
    assert np.all(S[nz])


def test_determinism():
    a = solve(_sin_bvp(), tol=1e-10)
    b = solve(_sin_bvp(), tol=1e-10)
    assert all(np.array_equal(x, y) for x, y in zip(a.y, b.y))
    assert np.array_equal(a.params, b.params)
    assert a.max_residual == b.max_residual


def test_solution_interpolant_is_c1_at_mesh_points():
    sol = solve(_sin_bvp(9), tol=1e-10)
    x = sol.mesh[0]
    for xi in x[1:-1]:
        left = sol.interpolate_derivative(0, [xi - 1e-12])
        right = sol.interpolate_derivative(0, [xi + 1e-12])
        assert np.allclose(left, right, atol=1e-6)


def test_collocation_residual_decays_with_mesh():
    coarse = algebraic_solution(_sin_bvp(5), tol=1.0)
    fine = algebraic_solution(_sin_bvp(33), tol=1.0)
    rc = max(e.max() for e in collocation_residual(coarse, _sin_bvp(5)))
    rf = max(e.max() for e in collocation_residual(fine, _sin_bvp(33)))
    assert rf < rc / 100.0


def test_rejects_nonpositive_tolerance():
    with pytest.raises(ValueError):
        solve(_sin_bvp(), tol=0.0)
