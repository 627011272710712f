"""Multipoint boundary value solver with unknown parameters.

Collocation with the 3-stage Lobatto IIIA scheme (order 4) on each
segment, damped Newton iteration on the global nonlinear system, and
residual-controlled mesh refinement.  Segments are fixed subintervals of
the normalized independent variable; the right-hand side of each segment
is expected to carry its own time-scale factor, so unknown physical
instants enter only through the parameter vector.

The collocation condition on a subinterval [s_i, s_{i+1}] of width h is
the Simpson (Lobatto IIIA) relation

    y_{i+1} - y_i - h/6 * (f_i + 4 f_mid + f_{i+1}) = 0,
    y_mid = (y_i + y_{i+1})/2 + h/8 * (f_i - f_{i+1}),

whose solution interpolant is the C^1 piecewise cubic Hermite polynomial
built from mesh values and slopes.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np
import scipy.linalg

_SQRT_EPS = np.sqrt(np.finfo(float).eps)


class SolverError(Exception):
    """Raised when the collocation solver cannot produce a solution."""


class NewtonError(SolverError):
    """Newton iteration failed (singular system or damping floor hit)."""


class MeshLimitError(SolverError):
    """Mesh refinement exceeded the point limit."""


@dataclass
class SegmentedBVP:
    """Segmented ODE system with unknown parameters and boundary residuals.

    rhs(seg, s, y, p) evaluates the segment's right-hand side, vectorized:
    ``y`` has shape (dim_seg, m) and ``s`` shape (m,).  bc(ya, yb, p) maps
    the segment-edge values (lists of left/right edge vectors) and the
    parameter vector to the boundary residual vector.  The boundary
    residual dimension must equal sum(dims) + len(params) for a square
    Newton system.
    """

    dims: tuple[int, ...]
    rhs: Callable[[int, np.ndarray, np.ndarray, np.ndarray], np.ndarray]
    bc: Callable[[list[np.ndarray], list[np.ndarray], np.ndarray], np.ndarray]
    mesh: list[np.ndarray]
    guess: list[np.ndarray]
    params: np.ndarray
    y_scales: list[np.ndarray] | None = None
    bc_scales: np.ndarray | None = None
    param_typicals: np.ndarray | None = None

    @property
    def n_segments(self) -> int:
        return len(self.dims)

    def validate(self) -> None:
        if len(self.mesh) != self.n_segments or len(self.guess) != self.n_segments:
            raise ValueError("mesh/guess segment count mismatch")
        for k, (m, g, d) in enumerate(zip(self.mesh, self.guess, self.dims)):
            if g.shape != (d, m.size):
                raise ValueError(f"segment {k}: guess shape {g.shape} != ({d}, {m.size})")
            if np.any(np.diff(m) <= 0):
                raise ValueError(f"segment {k}: mesh not strictly increasing")
        nbc = len(self.bc([g[:, 0] for g in self.guess],
                          [g[:, -1] for g in self.guess], self.params))
        expect = sum(self.dims) + self.params.size
        if nbc != expect:
            raise ValueError(f"boundary residual dimension {nbc} != {expect}")


@dataclass
class SolverOptions:
    max_newton: int = 50
    max_refinements: int = 12
    max_nodes: int = 600          # per segment
    max_system: int = 12000       # total unknowns (dense-factorization budget)
    damping_floor: float = 1e-8
    armijo: float = 1e-4
    newton_tol: float | None = None   # default: min(1e-11, tol * 1e-2)


@dataclass
class Solution:
    """Converged mesh, mesh values, slopes, parameters, and diagnostics."""

    mesh: list[np.ndarray]
    y: list[np.ndarray]
    f: list[np.ndarray]
    params: np.ndarray
    max_residual: float
    newton_iterations: int
    mesh_refinements: int

    @property
    def n_segments(self) -> int:
        return len(self.mesh)

    def interpolate(self, seg: int, s) -> np.ndarray:
        """Evaluate the C^1 collocation interpolant on one segment.

        Returns an array of shape (dim, len(s)).
        """
        s = np.atleast_1d(np.asarray(s, dtype=float))
        x, y, f = self.mesh[seg], self.y[seg], self.f[seg]
        i = np.clip(np.searchsorted(x, s, side="right") - 1, 0, x.size - 2)
        h = x[i + 1] - x[i]
        u = (s - x[i]) / h
        h00 = (1 + 2 * u) * (1 - u) ** 2
        h10 = u * (1 - u) ** 2
        h01 = u ** 2 * (3 - 2 * u)
        h11 = u ** 2 * (u - 1)
        return y[:, i] * h00 + h * f[:, i] * h10 + y[:, i + 1] * h01 + h * f[:, i + 1] * h11

    def interpolate_derivative(self, seg: int, s) -> np.ndarray:
        """Derivative of the interpolant with respect to the normalized variable."""
        s = np.atleast_1d(np.asarray(s, dtype=float))
        x, y, f = self.mesh[seg], self.y[seg], self.f[seg]
        i = np.clip(np.searchsorted(x, s, side="right") - 1, 0, x.size - 2)
        h = x[i + 1] - x[i]
        u = (s - x[i]) / h
        d00 = 6 * u * (u - 1) / h
        d10 = (1 - u) * (1 - 3 * u)
        d01 = -6 * u * (u - 1) / h
        d11 = u * (3 * u - 2)
        return y[:, i] * d00 + f[:, i] * d10 + y[:, i + 1] * d01 + f[:, i + 1] * d11


class _Layout:
    """Index bookkeeping for the packed unknown vector and residual vector.

    Unknowns: per segment, mesh values flattened point-by-point, then the
    parameter vector.  Residuals: per segment, collocation rows flattened
    subinterval-by-subinterval, then the boundary rows.
    """

    def __init__(self, bvp: SegmentedBVP):
        self.dims = bvp.dims
        self.npts = [m.size for m in bvp.mesh]
        self.n_params = bvp.params.size
        self.seg_offsets = np.cumsum([0] + [d * n for d, n in zip(self.dims, self.npts)])
        self.n_state = int(self.seg_offsets[-1])
        self.n = self.n_state + self.n_params
        self.row_offsets = np.cumsum([0] + [d * (n - 1) for d, n in zip(self.dims, self.npts)])
        self.n_coll = int(self.row_offsets[-1])
        self.n_bc = sum(self.dims) + self.n_params
        self.n_rows = self.n_coll + self.n_bc

    def unpack(self, z: np.ndarray) -> tuple[list[np.ndarray], np.ndarray]:
        ys = []
        for k, (d, n) in enumerate(zip(self.dims, self.npts)):
            a = self.seg_offsets[k]
            ys.append(z[a:a + d * n].reshape(d, n, order="F"))
        return ys, z[self.n_state:]

    def pack(self, ys: Sequence[np.ndarray], params: np.ndarray) -> np.ndarray:
        parts = [y.reshape(-1, order="F") for y in ys] + [np.asarray(params, dtype=float)]
        return np.concatenate(parts)

    def col_index(self, seg: int, point: int, comp: int) -> int:
        return int(self.seg_offsets[seg]) + point * self.dims[seg] + comp

    def coll_rows_for_point(self, seg: int, point: int) -> np.ndarray:
        """Collocation row indices affected by the value at one mesh point."""
        d = self.dims[seg]
        subs = [i for i in (point - 1, point) if 0 <= i < self.npts[seg] - 1]
        rows = []
        for i in subs:
            a = int(self.row_offsets[seg]) + i * d
            rows.extend(range(a, a + d))
        return np.asarray(rows, dtype=int)

    @property
    def bc_rows(self) -> np.ndarray:
        return np.arange(self.n_coll, self.n_rows)


def _segment_residual(bvp, seg, x, y, params):
    """Collocation residual columns and mesh slopes for one segment."""
    f = bvp.rhs(seg, x, y, params)
    h = x[1:] - x[:-1]
    yl, yr = y[:, :-1], y[:, 1:]
    fl, fr = f[:, :-1], f[:, 1:]
    ymid = 0.5 * (yl + yr) + (h / 8.0) * (fl - fr)
    fmid = bvp.rhs(seg, 0.5 * (x[:-1] + x[1:]), ymid, params)
    res = yr - yl - (h / 6.0) * (fl + 4.0 * fmid + fr)
    return res, f


def _full_residual(bvp: SegmentedBVP, lay: _Layout, z: np.ndarray) -> np.ndarray:
    ys, params = lay.unpack(z)
    parts = []
    for k in range(bvp.n_segments):
        res, _ = _segment_residual(bvp, k, bvp.mesh[k], ys[k], params)
        parts.append(res.reshape(-1, order="F"))
    parts.append(np.asarray(bvp.bc([y[:, 0] for y in ys], [y[:, -1] for y in ys], params),
                            dtype=float))
    return np.concatenate(parts)


def _row_scales(bvp: SegmentedBVP, lay: _Layout) -> np.ndarray:
    parts = []
    for k in range(bvp.n_segments):
        ysc = bvp.y_scales[k] if bvp.y_scales is not None else np.ones(bvp.dims[k])
        parts.append(np.tile(ysc, lay.npts[k] - 1))
    bsc = bvp.bc_scales if bvp.bc_scales is not None else np.ones(lay.n_bc)
    parts.append(np.asarray(bsc, dtype=float))
    scales = np.concatenate(parts)
    if scales.size != lay.n_rows:
        raise ValueError("row scale dimension mismatch")
    return scales


def _column_typicals(bvp: SegmentedBVP, lay: _Layout) -> np.ndarray:
    typ = np.ones(lay.n)
    for k in range(bvp.n_segments):
        ysc = bvp.y_scales[k] if bvp.y_scales is not None else np.ones(bvp.dims[k])
        a = lay.seg_offsets[k]
        typ[a:a + bvp.dims[k] * lay.npts[k]] = np.tile(ysc, lay.npts[k])
    if bvp.param_typicals is not None:
        typ[lay.n_state:] = bvp.param_typicals
    return typ


def _fd_column_groups(lay: _Layout) -> list[list[tuple[int, np.ndarray]]]:
    """Column groups with pairwise-disjoint residual-row support.

    Interior mesh points of one component touch only the two adjacent
    collocation subintervals, so points of equal parity can share a
    forward-difference evaluation.  Edge points also touch the boundary
    rows and are perturbed individually, as are parameters (which touch
    every row).
    """
    groups = []
    for comp in range(max(lay.dims)):
        for parity in (0, 1):
            cols = []
            for seg, d in enumerate(lay.dims):
                if comp >= d:
                    continue
                for pt in range(1, lay.npts[seg] - 1):
                    if pt % 2 == parity:
                        cols.append((lay.col_index(seg, pt, comp),
                                     lay.coll_rows_for_point(seg, pt)))
            if cols:
                groups.append(cols)
    all_rows = np.arange(lay.n_rows)
    for seg, d in enumerate(lay.dims):
        for pt in (0, lay.npts[seg] - 1):
            for comp in range(d):
                rows = np.concatenate([lay.coll_rows_for_point(seg, pt), lay.bc_rows])
                groups.append([(lay.col_index(seg, pt, comp), rows)])
    for j in range(lay.n_params):
        groups.append([(lay.n_state + j, all_rows)])
    return groups


def _fd_jacobian(bvp: SegmentedBVP, lay: _Layout, z: np.ndarray,
                 f0: np.ndarray | None = None) -> np.ndarray:
    """Forward-difference Jacobian of the full collocation + BC system.

    Block-banded per segment with dense border columns for the parameters
    and dense border rows for the boundary conditions; entries outside
    that pattern are identically zero.
    """
    if f0 is None:
        f0 = _full_residual(bvp, lay, z)
    typ = _column_typicals(bvp, lay)
    J = np.zeros((lay.n_rows, lay.n))
    for group in _fd_column_groups(lay):
        dz = np.zeros(lay.n)
        for col, _rows in group:
            dz[col] = _SQRT_EPS * max(abs(z[col]), typ[col])
        f1 = _full_residual(bvp, lay, z + dz)
        diff = f1 - f0
        if not np.all(np.isfinite(diff)):
            bad = np.flatnonzero(~np.isfinite(diff))[0]
            raise SolverError(f"non-finite Jacobian entry in residual row {bad}")
        for col, rows in group:
            J[rows, col] = diff[rows] / dz[col]
    return J


def jacobian(bvp: SegmentedBVP, iterate: np.ndarray | None = None) -> np.ndarray:
    """Global Jacobian at an iterate (defaults to the packed guess)."""
    lay = _Layout(bvp)
    if iterate is None:
        iterate = lay.pack(bvp.guess, bvp.params)
    if iterate.size != lay.n:
        raise ValueError(f"iterate dimension {iterate.size} != {lay.n}")
    return _fd_jacobian(bvp, lay, iterate)


def jacobian_structure(bvp: SegmentedBVP) -> np.ndarray:
    """Boolean mask of entries allowed by the band/border sparsity pattern."""
    lay = _Layout(bvp)
    mask = np.zeros((lay.n_rows, lay.n), dtype=bool)
    mask[:, lay.n_state:] = True
    mask[lay.bc_rows, :] = True
    for seg, d in enumerate(lay.dims):
        for pt in range(lay.npts[seg]):
            rows = lay.coll_rows_for_point(seg, pt)
            a = lay.col_index(seg, pt, 0)
            mask[np.ix_(rows, np.arange(a, a + d))] = True
    return mask


def _lstsq_step(J, F, scales, typ):
    """Minimum-norm truncated least-squares step.

    Used when the LU step is unusable: at a degenerate solution (an
    impulse collapsing to zero magnitude) the true Jacobian acquires a
    null space, and the minimum-norm step simply does not move along it.
    Rows and columns are brought to comparable size first — unlike the
    LU solve, a least-squares solve is not scaling-invariant.
    """
    Js = (J / scales[:, None]) * typ[None, :]
    step, _, _, _ = scipy.linalg.lstsq(Js, F / scales, cond=1e-9)
    return step * typ


def _line_search(bvp, lay, scales, z, F, step, opts):
    """Backtracking Armijo search; returns (z_new, F_new, lam) or None."""
    g0 = np.linalg.norm(F / scales)
    lam = 1.0
    while lam >= opts.damping_floor:
        z_new = z - lam * step
        F_new = _full_residual(bvp, lay, z_new)
        if np.all(np.isfinite(F_new)) and \
                np.linalg.norm(F_new / scales) <= (1.0 - opts.armijo * lam) * g0:
            return z_new, F_new, lam
        lam *= 0.5
    return None


def _newton(bvp, lay, z0, tol, opts):
    """Damped Newton iteration; returns (z, scaled_residual, iterations)."""
    scales = _row_scales(bvp, lay)
    typ = _column_typicals(bvp, lay)
    z = z0.copy()
    F = _full_residual(bvp, lay, z)
    if not np.all(np.isfinite(F)):
        raise SolverError("non-finite residual at initial iterate")
    rnorm = np.linalg.norm(F / scales, np.inf)
    for it in range(opts.max_newton):
        if rnorm <= tol:
            return z, rnorm, it
        J = _fd_jacobian(bvp, lay, z, F)
        step = None
        try:
            step = scipy.linalg.lu_solve(scipy.linalg.lu_factor(J), F)
        except scipy.linalg.LinAlgError:
            pass
        accepted = None
        if step is not None and np.all(np.isfinite(step)):
            accepted = _line_search(bvp, lay, scales, z, F, step, opts)
        if accepted is None or accepted[2] < 1e-3:
            # The LU step failed, or crawls: near a degenerate solution
            # manifold the LU step points along a near-null direction.
            # The truncated least-squares step removes that direction.
            other = _line_search(bvp, lay, scales, z, F,
                                 _lstsq_step(J, F, scales, typ), opts)
            if other is not None and (
                    accepted is None
                    or np.linalg.norm(other[1] / scales)
                    < np.linalg.norm(accepted[1] / scales)):
                accepted = other
        if accepted is None:
            # Stagnation at the roundoff floor is acceptance, not failure.
            if rnorm <= max(tol * 1e3, 1e-9):
                return z, rnorm, it + 1
            err = NewtonError(
                f"damping floor hit at scaled residual {rnorm:.3e}")
            err.iterate, err.rnorm = z, rnorm
            raise err
        z, F = accepted[0], accepted[1]
        rnorm = np.linalg.norm(F / scales, np.inf)
    # Same stagnation acceptance as the damping-floor branch: the mesh
    # refinement loop judges accuracy by the defect estimate, so an
    # algebraic residual at the roundoff floor is good enough.
    if rnorm <= max(tol * 1e3, 1e-9):
        return z, rnorm, opts.max_newton
    err = NewtonError(f"no convergence in {opts.max_newton} iterations "
                      f"(scaled residual {rnorm:.3e})")
    err.iterate, err.rnorm = z, rnorm
    raise err


def _solution_from_iterate(bvp, lay, z, max_res, iters, refinements):
    ys, params = lay.unpack(z)
    fs = [bvp.rhs(k, bvp.mesh[k], ys[k], params) for k in range(bvp.n_segments)]
    return Solution(mesh=[m.copy() for m in bvp.mesh], y=ys, f=fs, params=params,
                    max_residual=max_res, newton_iterations=iters,
                    mesh_refinements=refinements)


_SAMPLE_FRACTIONS = np.array([0.25, 0.75])


def collocation_residual(sol: Solution, bvp: SegmentedBVP) -> list[np.ndarray]:
    """Scaled defect estimate per subinterval of every segment.

    The defect S'(s) - f(s, S(s)) of the collocation cubic is sampled at
    non-collocation points; the estimate h * max|defect| / scale tracks
    the local solution error and decays at fourth order.
    """
    out = []
    for k in range(sol.n_segments):
        x = sol.mesh[k]
        h = x[1:] - x[:-1]
        ysc = bvp.y_scales[k] if bvp.y_scales is not None else np.ones(bvp.dims[k])
        est = np.zeros(h.size)
        for frac in _SAMPLE_FRACTIONS:
            s = x[:-1] + frac * h
            S = sol.interpolate(k, s)
            dS = sol.interpolate_derivative(k, s)
            defect = np.abs(dS - bvp.rhs(k, s, S, sol.params)) / ysc[:, None]
            est = np.maximum(est, defect.max(axis=0))
        out.append(h * est)
    return out


def refine_mesh(sol: Solution, estimates: list[np.ndarray], tol: float,
                max_nodes: int = 600) -> list[np.ndarray]:
    """Split offending subintervals; segment boundaries never move.

    One interior point is inserted for an overshoot below one refinement
    order (16x), two beyond that.  Subintervals already below tolerance
    are kept as they are.
    """
    new_mesh = []
    for x, est in zip(sol.mesh, estimates):
        pts = [x[0]]
        for i in range(est.size):
            if est[i] > tol:
                n_ins = 1 if est[i] <= 16.0 * tol else 2
                for j in range(1, n_ins + 1):
                    pts.append(x[i] + (x[i + 1] - x[i]) * j / (n_ins + 1))
            pts.append(x[i + 1])
        if len(pts) > max_nodes:
            raise MeshLimitError(f"mesh grew past {max_nodes} points per segment")
        new_mesh.append(np.asarray(pts))
    return new_mesh


def algebraic_solution(bvp: SegmentedBVP, tol: float = 1e-9,
                       options: SolverOptions | None = None) -> Solution:
    """Converge the collocation equations on the build mesh only.

    No refinement happens: the defect estimate is recorded in
    ``max_residual`` but not enforced.  This is the staging pass used
    when the mesh itself depends on unknown parameters (boundary-layer
    grading around unknown segment durations): converge once on the
    provisional mesh, rebuild the mesh around the converged parameters,
    then run the full tolerance-enforcing solve.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    opts = options or SolverOptions()
    bvp.validate()
    lay = _Layout(bvp)
    newton_tol = opts.newton_tol if opts.newton_tol is not None else min(1e-11, 0.01 * tol)
    z = lay.pack(bvp.guess, bvp.params)
    z, rnorm, iters = _newton(bvp, lay, z, newton_tol, opts)
    sol = _solution_from_iterate(bvp, lay, z, rnorm, iters, 0)
    estimates = collocation_residual(sol, bvp)
    sol.max_residual = max(rnorm, max(float(e.max()) for e in estimates))
    return sol


def solve(bvp: SegmentedBVP, tol: float = 1e-9,
          options: SolverOptions | None = None) -> Solution:
    """Solve the segmented BVP to a collocation residual tolerance.

    Newton converges the algebraic system on each mesh; the defect
    estimate then drives refinement until every subinterval is below
    ``tol``.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    opts = options or SolverOptions()
    bvp.validate()
    # Refinement rebinds mesh/guess; keep the caller's object untouched.
    bvp = replace(bvp, mesh=[m.copy() for m in bvp.mesh],
                  guess=[g.copy() for g in bvp.guess],
                  params=np.asarray(bvp.params, dtype=float).copy())
    lay = _Layout(bvp)
    newton_tol = opts.newton_tol if opts.newton_tol is not None else min(1e-11, 0.01 * tol)
    z = lay.pack(bvp.guess, bvp.params)
    total_iters = 0
    for refinement in range(opts.max_refinements + 1):
        if lay.n > opts.max_system:
            raise MeshLimitError(
                f"system grew to {lay.n} unknowns (budget {opts.max_system})")
        try:
            z, rnorm, iters = _newton(bvp, lay, z, newton_tol, opts)
        except NewtonError as exc:
            # Expose the best iterate so callers can salvage it, e.g. to
            # re-classify an inequality active set near a degenerate root.
            it = getattr(exc, "iterate", None)
            if it is not None:
                exc.partial = _solution_from_iterate(
                    bvp, lay, it, getattr(exc, "rnorm", np.inf),
                    total_iters, refinement)
            raise
        total_iters += iters
        sol = _solution_from_iterate(bvp, lay, z, rnorm, total_iters, refinement)
        estimates = collocation_residual(sol, bvp)
        worst = max(float(e.max()) for e in estimates)
        sol.max_residual = max(worst, rnorm)
        if worst <= tol:
            return sol
        if refinement == opts.max_refinements:
            raise SolverError(f"residual {worst:.3e} > tol {tol:.1e} "
                              f"after {refinement} refinements")
        new_mesh = refine_mesh(sol, estimates, tol, opts.max_nodes)
        new_guess = [sol.interpolate(k, new_mesh[k]) for k in range(bvp.n_segments)]
        bvp.mesh, bvp.guess = new_mesh, new_guess
        lay = _Layout(bvp)
        z = lay.pack(new_guess, sol.params)
    raise AssertionError("unreachable")
