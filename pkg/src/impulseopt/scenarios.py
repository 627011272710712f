"""Initial data, constraint sets, and orbital-element scenario generation.

Three canonical interceptor/target data sets (ballistic-missile conics
sampled at the first ascending crossing of the atmosphere boundary) are
shipped verbatim; an orbital-element path regenerates comparable states.
Scenario files are JSON documents consumed by the batch front-end.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import brentq

from impulseopt.dynamics import (
    CartesianState,
    GravityModel,
    IntegrationError,
    _propagate_dense,
    angular_momentum,
    specific_energy,
)

ATMOSPHERE_HEIGHT = 120e3  # m; vehicles operate above this shell


@dataclass(frozen=True)
class ConstraintSet:
    """Time windows, impulse boxes, terminal-position box, slackness weights.

    Time bounds (seconds, each optional): alpha <= t1 <= beta,
    t2 - t1 >= gamma, th - t2 >= eta, t2 >= t2_min.  Impulse boxes are
    per-axis [min, max] arrays of shape (3, 2) in m/s.  The terminal box
    is r_min <= r_M(tf) - r_f <= r_max per axis (meters).
    """

    alpha: float | None = None
    beta: float | None = None
    gamma: float | None = None
    eta: float | None = None
    t2_min: float | None = None
    dv1_box: np.ndarray | None = None
    dv2_box: np.ndarray | None = None
    r_min: np.ndarray | None = None
    r_max: np.ndarray | None = None
    k3: np.ndarray = field(default_factory=lambda: np.ones(3))
    k4: np.ndarray = field(default_factory=lambda: np.ones(3))

    def __post_init__(self):
        for name in ("dv1_box", "dv2_box"):
            box = getattr(self, name)
            if box is not None:
                box = np.asarray(box, dtype=float)
                object.__setattr__(self, name, box)
                if box.shape != (3, 2):
                    raise ValueError(f"{name} must have shape (3, 2)")
                if np.any(box[:, 0] > box[:, 1]):
                    raise ValueError(f"{name}: min > max on some axis")
        for name in ("r_min", "r_max", "k3", "k4"):
            vec = getattr(self, name)
            if vec is not None:
                object.__setattr__(self, name, np.asarray(vec, dtype=float))
        if self.r_min is not None and self.r_max is not None:
            if np.any(self.r_min > self.r_max):
                raise ValueError("terminal box: r_min > r_max on some axis")
        if self.alpha is not None and self.beta is not None and self.alpha > self.beta:
            raise ValueError("alpha > beta")
        for name in ("gamma", "eta"):
            val = getattr(self, name)
            if val is not None and val < 0:
                raise ValueError(f"{name} must be nonnegative")

    @property
    def time_constraint_names(self) -> tuple[str, ...]:
        """Active static time constraints, in multiplier order."""
        return tuple(n for n in ("alpha", "beta", "gamma", "eta", "t2_min")
                     if getattr(self, n) is not None)

    @property
    def has_terminal_box(self) -> bool:
        return self.r_min is not None and self.r_max is not None


@dataclass(frozen=True)
class Scenario:
    """Gravity model, initial vehicle states, reference terminal position."""

    gravity: GravityModel
    interceptor0: CartesianState
    target0: CartesianState
    r_f: np.ndarray | None = None
    constraints: ConstraintSet | None = None
    label: str = ""

    def __post_init__(self):
        if self.r_f is not None:
            object.__setattr__(self, "r_f", np.asarray(self.r_f, dtype=float))
        floor = self.gravity.Re + ATMOSPHERE_HEIGHT
        for name in ("interceptor0", "target0"):
            st = getattr(self, name)
            if np.linalg.norm(st.r) < floor - 1.0:
                raise ValueError(f"{name} starts below the atmosphere boundary")


_REFERENCE_POSITION = 1e6 * np.array([-4.4528, -4.4166, 1.7258])

_INITIAL_DATA = {
    "I": {
        "target_r": 1e6 * np.array([-5.842891129580837, -1.241946037180446, 2.562926625347858]),
        "target_v": 1e3 * np.array([-0.065508668182581, -7.322759468283627, -2.081144241020925]),
        "interceptor_r": 1e6 * np.array([-1.392985266715916, -5.682521353135304, -2.831729949288823]),
        "interceptor_v": 1e3 * np.array([-4.511678481085538, -2.680368719222989, 4.446250319272038]),
        "r_f": _REFERENCE_POSITION,
    },
    "II": {
        "target_r": 1e6 * np.array([-5.842481237484495, -1.389922138771051, 2.520004658256203]),
        "target_v": 1e3 * np.array([0.105801179312784, -7.284177899593129, -2.155661625234000]),
        "interceptor_r": 1e6 * np.array([-1.422033750436706, -5.699632649250217, -2.802976040834825]),
        "interceptor_v": 1e3 * np.array([-4.498532928342012, -2.627216111719469, 4.472563498532185]),
        "r_f": _REFERENCE_POSITION,
    },
    "III": {
        "target_r": 1e6 * np.array([-5.394452557207117, -3.192217335202957, 1.775712509707950]),
        "target_v": 1e3 * np.array([1.767918629073472, -6.417485911429783, -2.736527923779045]),
        "interceptor_r": 1e6 * np.array([-3.580084601432768, -5.106010405266481, -1.868869802369432]),
        "interceptor_v": 1e3 * np.array([-4.211400455599469, -0.835510934866194, 4.134603376902692]),
        "r_f": None,
    },
}


def load_initial_data(data_id: str, constraints: ConstraintSet | None = None) -> Scenario:
    """Canonical scenario for data set "I", "II", or "III"."""
    if data_id not in _INITIAL_DATA:
        raise KeyError(f"unknown initial data id {data_id!r} (expected I, II, or III)")
    block = _INITIAL_DATA[data_id]
    return Scenario(
        gravity=GravityModel(),
        interceptor0=CartesianState(block["interceptor_r"].copy(), block["interceptor_v"].copy()),
        target0=CartesianState(block["target_r"].copy(), block["target_v"].copy()),
        r_f=None if block["r_f"] is None else block["r_f"].copy(),
        constraints=constraints,
        label=f"data-{data_id}",
    )


@dataclass(frozen=True)
class OrbitElements:
    """Altitude-based element set (H, i, Omega, e, omega, theta).

    H is interpreted as the apogee altitude: a (1 + e) = Re + H.  With a
    perigee reading the shipped data sets would start below their own
    perigee, which is geometrically impossible for these ballistic
    conics.
    """

    H: float
    i: float
    Omega: float
    e: float
    omega: float
    theta: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.e < 1.0:
            raise ValueError("eccentricity must lie in [0, 1)")

    def semi_major_axis(self, g: GravityModel) -> float:
        return (g.Re + self.H) / (1.0 + self.e)


def elements_to_state(el: OrbitElements, g: GravityModel) -> CartesianState:
    """ECI state from orbital elements via the perifocal frame.

    Perifocal position/velocity rotated through the 3-1-3 sequence
    (Omega, i, omega).
    """
    a = el.semi_major_axis(g)
    p = a * (1.0 - el.e ** 2)
    radius = p / (1.0 + el.e * np.cos(el.theta))
    if radius <= 0:
        raise ValueError("nonpositive orbit radius at given anomaly")
    h = np.sqrt(g.mu * p)
    r_pf = radius * np.array([np.cos(el.theta), np.sin(el.theta), 0.0])
    v_pf = g.mu / h * np.array([-np.sin(el.theta), el.e + np.cos(el.theta), 0.0])
    rot = _rot3(-el.Omega) @ _rot1(-el.i) @ _rot3(-el.omega)
    return CartesianState(rot @ r_pf, rot @ v_pf)


def state_to_elements(s: CartesianState, g: GravityModel) -> OrbitElements:
    """Recover (H, i, Omega, e, omega, theta) from an ECI state."""
    r, v = s.r, s.v
    rn = np.linalg.norm(r)
    h_vec = np.cross(r, v)
    hn = np.linalg.norm(h_vec)
    n_vec = np.cross([0.0, 0.0, 1.0], h_vec)
    nn = np.linalg.norm(n_vec)
    e_vec = np.cross(v, h_vec) / g.mu - r / rn
    e = np.linalg.norm(e_vec)
    energy = specific_energy(s, g)
    a = -g.mu / (2.0 * energy)
    inc = np.arccos(np.clip(h_vec[2] / hn, -1.0, 1.0))
    Omega = np.arctan2(n_vec[1], n_vec[0]) % (2.0 * np.pi)
    omega = np.arccos(np.clip(n_vec @ e_vec / (nn * e), -1.0, 1.0))
    if e_vec[2] < 0:
        omega = 2.0 * np.pi - omega
    theta = np.arccos(np.clip(e_vec @ r / (e * rn), -1.0, 1.0))
    if r @ v < 0:
        theta = 2.0 * np.pi - theta
    H = a * (1.0 + e) - g.Re
    return OrbitElements(H=H, i=inc, Omega=Omega, e=e, omega=omega, theta=theta)


def _rot1(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, s], [0.0, -s, c]])


def _rot3(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, s, 0.0], [-s, c, 0.0], [0.0, 0.0, 1.0]])


def atmosphere_exit_state(el: OrbitElements, g: GravityModel,
                          tol: float = 1e-12) -> CartesianState:
    """State at the first ascending crossing of |r| = Re + 120 km.

    The conic is propagated from the given anomaly for one orbital
    period; the crossing time is located by bisection on |r(t)| using the
    propagation oracle.
    """
    threshold = g.Re + ATMOSPHERE_HEIGHT
    s0 = elements_to_state(el, g)
    a = el.semi_major_axis(g)
    period = 2.0 * np.pi * np.sqrt(a ** 3 / g.mu)
    dense = _propagate_dense(s0, period, g, tol)

    def radius_excess(t):
        y = dense.sol(t)
        return np.linalg.norm(y[:3]) - threshold

    ts = np.linspace(0.0, period, 2000)
    vals = np.array([radius_excess(t) for t in ts])
    for j in range(ts.size - 1):
        if vals[j] < 0.0 <= vals[j + 1]:
            t_cross = brentq(radius_excess, ts[j], ts[j + 1], xtol=1e-9)
            y = dense.sol(t_cross)
            return CartesianState(y[:3], y[3:])
    raise IntegrationError("no ascending crossing of the atmosphere boundary "
                           "within one period")


# --- scenario file format -------------------------------------------------

def _vec(obj, name):
    arr = np.asarray(obj, dtype=float)
    if arr.shape != (3,):
        raise ValueError(f"{name} must be a 3-array")
    return arr


def scenario_from_dict(doc: dict) -> Scenario:
    """Build a Scenario from a parsed scenario document."""
    gravity = GravityModel(mu=float(doc.get("mu", 3.986e14)),
                           Re=float(doc.get("re", 6378145.0)))
    try:
        interceptor0 = CartesianState(_vec(doc["interceptor0"]["r"], "interceptor0.r"),
                                      _vec(doc["interceptor0"]["v"], "interceptor0.v"))
        target0 = CartesianState(_vec(doc["target0"]["r"], "target0.r"),
                                 _vec(doc["target0"]["v"], "target0.v"))
    except KeyError as exc:
        raise ValueError(f"scenario file missing key: {exc}") from exc
    r_f = _vec(doc["r_f"], "r_f") if doc.get("r_f") is not None else None
    constraints = None
    if doc.get("constraints"):
        c = doc["constraints"]
        box = lambda key: None if c.get(key) is None else np.column_stack(
            [_vec(c[key]["min"], key), _vec(c[key]["max"], key)])
        constraints = ConstraintSet(
            alpha=c.get("alpha"), beta=c.get("beta"),
            gamma=c.get("gamma"), eta=c.get("eta"), t2_min=c.get("t2_min"),
            dv1_box=box("dv1_box"), dv2_box=box("dv2_box"),
            r_min=None if c.get("r_min") is None else _vec(c["r_min"], "r_min"),
            r_max=None if c.get("r_max") is None else _vec(c["r_max"], "r_max"),
            k3=_vec(c.get("k3", [1, 1, 1]), "k3"),
            k4=_vec(c.get("k4", [1, 1, 1]), "k4"),
        )
    return Scenario(gravity=gravity, interceptor0=interceptor0, target0=target0,
                    r_f=r_f, constraints=constraints, label=str(doc.get("label", "")))


def load_scenario_file(path) -> tuple[Scenario, dict]:
    """Read a scenario JSON file; returns (scenario, guesses dict)."""
    text = Path(path).read_text()
    doc = json.loads(text)
    if not isinstance(doc, dict):
        raise ValueError("scenario document must be a JSON object")
    return scenario_from_dict(doc), doc.get("guesses", {})


def scenario_to_dict(sc: Scenario, guesses: dict | None = None) -> dict:
    doc = {
        "label": sc.label,
        "mu": sc.gravity.mu,
        "re": sc.gravity.Re,
        "interceptor0": {"r": sc.interceptor0.r.tolist(), "v": sc.interceptor0.v.tolist()},
        "target0": {"r": sc.target0.r.tolist(), "v": sc.target0.v.tolist()},
        "r_f": None if sc.r_f is None else sc.r_f.tolist(),
    }
    if sc.constraints is not None:
        c = sc.constraints
        doc["constraints"] = {
            "alpha": c.alpha, "beta": c.beta, "gamma": c.gamma, "eta": c.eta,
            "t2_min": c.t2_min,
            "dv1_box": None if c.dv1_box is None else
                {"min": c.dv1_box[:, 0].tolist(), "max": c.dv1_box[:, 1].tolist()},
            "dv2_box": None if c.dv2_box is None else
                {"min": c.dv2_box[:, 0].tolist(), "max": c.dv2_box[:, 1].tolist()},
            "r_min": None if c.r_min is None else c.r_min.tolist(),
            "r_max": None if c.r_max is None else c.r_max.tolist(),
            "k3": c.k3.tolist(), "k4": c.k4.tolist(),
        }
    if guesses:
        doc["guesses"] = guesses
    return doc
