"""Two-body state and costate dynamics, Hamiltonians, and a propagation oracle.

All quantities are SI (meters, seconds) in an earth-centered inertial
frame.  The costate pair (p_r, p_v) is the adjoint of (r, v); -p_v is
Lawden's primer vector.  The slackness-variable augmentation converts
terminal-position box constraints into equalities and is active on the
last two trajectory segments only.

The adaptive Runge-Kutta propagator here serves exclusively as an
independent oracle for guesses, trajectory export, and verification; it
is never evaluated inside a collocation residual.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp


class IntegrationError(Exception):
    """Adaptive propagation failed (step-size underflow or similar)."""


@dataclass(frozen=True)
class GravityModel:
    """Inverse-square gravity field of the earth."""

    mu: float = 3.986e14        # m^3/s^2
    Re: float = 6378145.0       # m

    def __post_init__(self):
        if self.mu <= 0 or self.Re <= 0:
            raise ValueError("mu and Re must be positive")


@dataclass(frozen=True)
class CartesianState:
    """Position/velocity pair of one vehicle in the ECI frame."""

    r: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "r", np.asarray(self.r, dtype=float))
        object.__setattr__(self, "v", np.asarray(self.v, dtype=float))
        if self.r.shape != (3,) or self.v.shape != (3,):
            raise ValueError("r and v must be 3-vectors")
        if not (np.all(np.isfinite(self.r)) and np.all(np.isfinite(self.v))):
            raise ValueError("non-finite state component")

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.r, self.v])


@dataclass(frozen=True)
class Costate:
    """Adjoint pair (p_r, p_v); -p_v is the primer vector."""

    p_r: np.ndarray
    p_v: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "p_r", np.asarray(self.p_r, dtype=float))
        object.__setattr__(self, "p_v", np.asarray(self.p_v, dtype=float))
        if self.p_r.shape != (3,) or self.p_v.shape != (3,):
            raise ValueError("p_r and p_v must be 3-vectors")
        if not (np.all(np.isfinite(self.p_r)) and np.all(np.isfinite(self.p_v))):
            raise ValueError("non-finite costate component")

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.p_r, self.p_v])


@dataclass(frozen=True)
class SlacknessState:
    """Per-axis dynamic slackness variable, its costate, and weights."""

    eps: np.ndarray
    p_eps: np.ndarray
    k3: np.ndarray = field(default_factory=lambda: np.ones(3))
    k4: np.ndarray = field(default_factory=lambda: np.ones(3))

    def __post_init__(self):
        for name in ("eps", "p_eps", "k3", "k4"):
            vec = np.asarray(getattr(self, name), dtype=float)
            object.__setattr__(self, name, vec)
            if vec.shape != (3,):
                raise ValueError(f"{name} must be a 3-vector")


def _check_radius(r: np.ndarray) -> float:
    rn = float(np.linalg.norm(r))
    if rn <= 0.0:
        raise ValueError("gravity is singular at zero radius")
    return rn


def two_body_derivative(s: CartesianState, g: GravityModel) -> CartesianState:
    """State derivative (v, -mu r / |r|^3)."""
    rn = _check_radius(s.r)
    return CartesianState(r=s.v, v=-g.mu * s.r / rn ** 3)


def costate_derivative(s: CartesianState, c: Costate, g: GravityModel) -> Costate:
    """Adjoint derivative: the negative gradient of the Hamiltonian.

    p_r' = -(mu/r^3) (3 r r^T / r^2 - I) p_v,  p_v' = -p_r.
    """
    return Costate(p_r=-gravity_gradient(s.r, g) @ c.p_v, p_v=-c.p_r)


def gravity_gradient(r: np.ndarray, g: GravityModel) -> np.ndarray:
    """Dense 3x3 matrix (mu/r^3)(3 r r^T / r^2 - I)."""
    rn = _check_radius(r)
    return g.mu / rn ** 3 * (3.0 * np.outer(r, r) / rn ** 2 - np.eye(3))


def hamiltonian(s: CartesianState, c: Costate, g: GravityModel) -> float:
    """H = p_r . v - p_v . (mu/r^3) r; constant along joint trajectories."""
    rn = _check_radius(s.r)
    return float(c.p_r @ s.v - c.p_v @ (g.mu / rn ** 3 * s.r))


def slackness_rates(segment: int, sl: SlacknessState) -> tuple[np.ndarray, np.ndarray]:
    """Per-axis rates of the dynamic slackness variable and its costate.

    Segments 1-2 carry zero dynamics; segments 3-4 use the optimal
    control w = -0.5 p_eps with weight k3 or k4 respectively.
    """
    if segment in (1, 2):
        return np.zeros(3), np.zeros(3)
    if segment == 3:
        return -0.5 * sl.p_eps, -2.0 * sl.k3 * sl.eps
    if segment == 4:
        return -0.5 * sl.p_eps, -2.0 * sl.k4 * sl.eps
    raise ValueError(f"segment must be 1..4, got {segment}")


def augmented_derivative(segment: int, s: CartesianState, c: Costate,
                         sl: SlacknessState, g: GravityModel):
    """Full derivative of (state, costate, slackness) on one segment."""
    ds = two_body_derivative(s, g)
    dc = costate_derivative(s, c, g)
    deps, dp_eps = slackness_rates(segment, sl)
    return ds, dc, SlacknessState(eps=deps, p_eps=dp_eps, k3=sl.k3, k4=sl.k4)


def hamiltonian_augmented(segment: int, s: CartesianState, c: Costate,
                          sl: SlacknessState, g: GravityModel) -> float:
    """Hamiltonian of the slackness-augmented system.

    Equal to the plain Hamiltonian on segments 1-2; on segments 3-4 it
    gains -0.25 p_eps^2 + k eps^2 summed over axes.
    """
    H = hamiltonian(s, c, g)
    if segment in (1, 2):
        return H
    if segment == 3:
        k = sl.k3
    elif segment == 4:
        k = sl.k4
    else:
        raise ValueError(f"segment must be 1..4, got {segment}")
    return H + float(np.sum(-0.25 * sl.p_eps ** 2 + k * sl.eps ** 2))


def _two_body_rhs(g: GravityModel):
    mu = g.mu

    def rhs(t, y):
        r = y[:3]
        rn = np.linalg.norm(r)
        return np.concatenate([y[3:], -mu * r / rn ** 3])

    return rhs


def propagate(s0: CartesianState, duration: float, g: GravityModel,
              tol: float = 1e-12) -> CartesianState:
    """Propagate a two-body state with an adaptive embedded RK 5(4) pair.

    Oracle-quality accuracy: relative tolerance ``tol`` with per-component
    absolute tolerances scaled to the initial state magnitudes.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if duration == 0.0:
        return s0
    sol = _propagate_dense(s0, duration, g, tol)
    y = sol.sol(duration)
    return CartesianState(r=y[:3], v=y[3:])


def _propagate_dense(s0: CartesianState, duration: float, g: GravityModel, tol: float):
    scale = max(np.linalg.norm(s0.r), g.Re)
    atol = tol * np.concatenate([np.full(3, scale), np.full(3, scale * 1e-3)])
    sol = solve_ivp(_two_body_rhs(g), (0.0, duration), s0.as_vector(),
                    method="RK45", rtol=max(tol, 1e-13), atol=atol,
                    dense_output=True)
    if not sol.success:
        raise IntegrationError(sol.message)
    return sol


def propagate_sampled(s0: CartesianState, times: np.ndarray, g: GravityModel,
                      tol: float = 1e-12) -> np.ndarray:
    """Dense-output samples (6, len(times)) of a two-body trajectory."""
    times = np.asarray(times, dtype=float)
    t_end = float(times.max(initial=0.0))
    if t_end == 0.0:
        return np.tile(s0.as_vector()[:, None], (1, times.size))
    sol = _propagate_dense(s0, t_end, g, tol)
    return sol.sol(times)


def specific_energy(s: CartesianState, g: GravityModel) -> float:
    """v^2/2 - mu/|r| (J/kg)."""
    return 0.5 * float(s.v @ s.v) - g.mu / _check_radius(s.r)


def angular_momentum(s: CartesianState) -> np.ndarray:
    return np.cross(s.r, s.v)
