"""Problem-variant assembly: dynamics, parameters, and boundary residuals.

Each interception variant becomes a segmented BVP whose per-segment state
stacks interceptor position/velocity, its costates, and the target
position/velocity (the target is carried as known dynamics, never given
costates).  The terminal-box variant augments the last two segments
with a per-axis slackness variable and its costate; their dynamics
(eps'' = k eps) are linear, autonomous, and decoupled from the
trajectory, so they are carried exactly as two decay amplitudes per
axis per segment instead of stiff mesh state — over segments hundreds
of seconds long the solution is a pair of boundary layers that no
fixed-order mesh could resolve at tolerance, while the closed form is
exact down to the graceful underflow of e^(-w T).

Unknown instants are parameters: interior instants as fractions of the
final instant, the final instant in seconds.  Inequality constraints
contribute constant multipliers (lambda for time windows, mu for
per-axis impulse boxes, eta for the terminal-position box) plus their
complementarity rows.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from impulseopt.dynamics import CartesianState, propagate_sampled
from impulseopt.mpbvp import (SegmentedBVP, Solution, SolverError,
                              SolverOptions, solve)
from impulseopt.scenarios import ConstraintSet, Scenario

# Impulse magnitudes below this floor use a guarded unit vector so that
# degeneration to fewer impulses survives the Newton iteration.
DEGENERATE_IMPULSE_FLOOR = 1e-12

# Component slices of the per-segment state vector.
_R = slice(0, 3)       # interceptor position (m)
_V = slice(3, 6)       # interceptor velocity (m/s)
_PR = slice(6, 9)      # position costate
_PV = slice(9, 12)     # velocity costate (negative primer vector)
_TR = slice(12, 15)    # target position (m)
_TV = slice(15, 18)    # target velocity (m/s)

_POS = 1e6
_VEL = 1e3
_PRS = 1e-3
_PVS = 1.0
_TRANS = 10.0
_LAMROW = 1e2
_MUROW = 1e3
_SLACK = 30.0
_BOXROW = 1e3

_STATE_SCALE_18 = np.array([_POS] * 3 + [_VEL] * 3 + [_PRS] * 3 + [_PVS] * 3
                           + [_POS] * 3 + [_VEL] * 3)


class Variant(Enum):
    """Supported interception problem variants."""

    ONE_IMPULSE_FIXED_T1 = "OneImpulseFixedT1"
    ONE_IMPULSE_FREE = "OneImpulseFree"
    TWO_IMPULSE_FIRST_AT_T0 = "TwoImpulseFirstAtT0"
    TWO_IMPULSE_CONSTRAINED = "TwoImpulseConstrained"
    TERMINAL_POSITION = "TerminalPosition"
    MULTI_CONSTRAINT = "MultiConstraint"
    ONE_IMPULSE_TERMINAL_POSITION = "OneImpulseTerminalPosition"

    @classmethod
    def from_name(cls, name: str) -> "Variant":
        for v in cls:
            if v.value == name or v.name == name:
                return v
        raise KeyError(f"unknown variant {name!r}; expected one of "
                       f"{[v.value for v in cls]}")


# Transversality-row contributions and constraint values of the static
# time-window multipliers.  Each entry maps a constraint name to the
# instants whose stationarity rows it enters, with signs following the
# derivative of the constraint with respect to that instant.
_LAM_TERMS = {
    "alpha": (("t1", -1.0),),
    "beta": (("t1", 1.0),),
    "gamma": (("t1", 1.0), ("t2", -1.0)),
    "eta": (("t2", 1.0), ("th", -1.0)),
    "t2_min": (("t2", -1.0),),
}


def _lam_g(name: str, inst: dict, cons: ConstraintSet) -> float:
    if name == "alpha":
        return (cons.alpha or 0.0) - inst["t1"]
    if name == "beta":
        return inst["t1"] - cons.beta
    if name == "gamma":
        return cons.gamma - (inst["t2"] - inst["t1"])
    if name == "eta":
        return cons.eta - (inst["th"] - inst["t2"])
    if name == "t2_min":
        return cons.t2_min - inst["t2"]
    raise KeyError(name)


def static_slack_rows(lam: float, g: float) -> float:
    """Complementarity residual lambda * g of one static inequality."""
    return lam * g


def _unit(dv: np.ndarray) -> np.ndarray:
    """Guarded unit vector; survives degeneration to a vanishing impulse."""
    return dv / max(float(np.linalg.norm(dv)), DEGENERATE_IMPULSE_FLOOR)


def slackness_values(ab: np.ndarray, k_weights: np.ndarray, span: float,
                     t_rel: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Exact slackness solution on one segment from its decay amplitudes.

    The per-axis slackness pair obeys eps'' = k eps on a segment of
    duration ``span``; the general solution is parametrized stably by
    the amplitudes a (decaying away from the segment start) and b
    (decaying away from the segment end):

        eps(t) = a e^(-w t) + b e^(-w (span - t)),   w = sqrt(k),

    with ``ab`` stacking (a_x, a_y, a_z, b_x, b_y, b_z).  On segments
    hundreds of seconds long the cross factor e^(-w span) underflows to
    zero, which is the exact boundary-layer limit.  Returns (eps,
    p_eps) sampled at ``t_rel``, each of shape (3, len(t_rel));
    p_eps = -2 eps'.
    """
    ab = np.asarray(ab, dtype=float)
    a, b = ab[:3, None], ab[3:, None]
    w = np.sqrt(np.asarray(k_weights, dtype=float))[:, None]
    t = np.atleast_1d(np.asarray(t_rel, dtype=float))[None, :]
    e_front = np.exp(-w * t)
    e_back = np.exp(-w * (max(span, 0.0) - t))
    eps = a * e_front + b * e_back
    p_eps = 2.0 * w * (a * e_front - b * e_back)
    return eps, p_eps


def _slackness_edges(ab: np.ndarray, k_weights: np.ndarray, span: float
                     ) -> tuple[np.ndarray, ...]:
    """(eps, p_eps) of the exact slackness solution at both segment edges."""
    eps, p_eps = slackness_values(ab, k_weights, span, np.array([0.0, span]))
    return eps[:, 0], p_eps[:, 0], eps[:, 1], p_eps[:, 1]


def slackness_hamiltonian(ab: np.ndarray, k_weights: np.ndarray,
                          span: float) -> float:
    """Conserved slackness contribution -p_eps^2/4 + k eps^2 (summed).

    The slackness subsystem is autonomous, so its Hamiltonian share is
    constant along the segment; in the decay-amplitude parametrization
    it collapses to 4 k a b e^(-w span) per axis.
    """
    ab = np.asarray(ab, dtype=float)
    k = np.asarray(k_weights, dtype=float)
    q = np.exp(-np.sqrt(k) * max(span, 0.0))
    return float(np.sum(4.0 * k * ab[:3] * ab[3:] * q))


@dataclass
class ParameterMap:
    """Layout of the unknown-parameter vector for one variant instance."""

    variant: Variant
    slices: dict[str, slice]
    n_segments: int
    dims: tuple[int, ...]
    final_key: str                      # "th" or "tf"
    impulses: tuple[tuple[int | None, str], ...]   # (interface index, dv key)
    hit_interface: int | None           # None: interception at the final edge
    trans_instants: tuple[str, ...]     # instants with stationarity rows
    lam_names: tuple[str, ...] = ()
    has_boxes: bool = False
    has_terminal_box: bool = False
    fixed_t1: float | None = None
    fixed_t1_scaled: bool = False
    bc_labels: list[str] = field(default_factory=list)
    # When set, inequality rows switch from product complementarity to
    # the active-set subproblem form: {"lam": bool per window, "mu":
    # bool per box face}, True meaning the constraint is pinned.
    active_set: dict | None = None

    @property
    def n(self) -> int:
        return max(s.stop for s in self.slices.values())

    def get(self, p: np.ndarray, key: str):
        sl = self.slices[key]
        chunk = p[sl]
        return float(chunk[0]) if sl.stop - sl.start == 1 else chunk

    def instants(self, p: np.ndarray) -> dict[str, float]:
        """Physical impulse/impact/terminal instants implied by parameters."""
        v = self.variant
        final = self.get(p, self.final_key)
        out = {self.final_key: final}
        if v is Variant.ONE_IMPULSE_FIXED_T1:
            t1 = self.fixed_t1 * final if self.fixed_t1_scaled else self.fixed_t1
            out["t1"] = t1
            out["th"] = final
        elif v is Variant.ONE_IMPULSE_FREE:
            out["t1"] = self.get(p, "tau1") * final
            out["th"] = final
        elif v is Variant.TWO_IMPULSE_FIRST_AT_T0:
            out["t1"] = 0.0
            out["t2"] = self.get(p, "tau2") * final
            out["th"] = final
        elif v is Variant.TWO_IMPULSE_CONSTRAINED:
            out["t1"] = self.get(p, "tau1") * final
            out["t2"] = self.get(p, "tau2") * final
            out["th"] = final
        elif v is Variant.ONE_IMPULSE_TERMINAL_POSITION:
            out["t1"] = self.get(p, "tau1") * final
            out["th"] = self.get(p, "tau2") * final
        else:  # TERMINAL_POSITION, MULTI_CONSTRAINT
            out["t1"] = self.get(p, "tau1") * final
            out["t2"] = self.get(p, "tau2") * final
            out["th"] = self.get(p, "tau3") * final
        return out

    def breakpoints(self, p: np.ndarray) -> np.ndarray:
        inst = self.instants(p)
        keys = {
            Variant.ONE_IMPULSE_FIXED_T1: ("t1", "th"),
            Variant.ONE_IMPULSE_FREE: ("t1", "th"),
            Variant.TWO_IMPULSE_FIRST_AT_T0: ("t2", "th"),
            Variant.TWO_IMPULSE_CONSTRAINED: ("t1", "t2", "th"),
            Variant.ONE_IMPULSE_TERMINAL_POSITION: ("t1", "th", "tf"),
            Variant.TERMINAL_POSITION: ("t1", "t2", "th", "tf"),
            Variant.MULTI_CONSTRAINT: ("t1", "t2", "th", "tf"),
        }[self.variant]
        return np.array([0.0] + [inst[k] for k in keys])

    def scale_factors(self, p: np.ndarray) -> np.ndarray:
        """Per-segment multiplier of the normalized-time dynamics."""
        return self.n_segments * np.diff(self.breakpoints(p))


def parameter_map(variant: Variant, scenario: Scenario, *,
                  fixed_t1: float | None = None,
                  fixed_t1_scaled: bool = False) -> ParameterMap:
    """Parameter layout and structural description for one variant."""
    cons = scenario.constraints or ConstraintSet()
    v = variant
    fields: list[tuple[str, int]] = []
    lam_names: tuple[str, ...] = ()
    has_boxes = False
    has_terminal_box = False

    if v is Variant.ONE_IMPULSE_FIXED_T1:
        if fixed_t1 is None:
            raise ValueError("OneImpulseFixedT1 requires fixed_t1")
        fields = [("th", 1), ("dv1", 3)]
        dims, final_key = (18, 18), "th"
        impulses, hit, trans = ((0, "dv1"),), None, ("th",)
    elif v is Variant.ONE_IMPULSE_FREE:
        # Single window bound t1 >= alpha (alpha defaults to 0: the
        # impulse instant may not precede launch).
        lam_names = ("alpha",)
        fields = [("tau1", 1), ("th", 1), ("dv1", 3), ("lam", 1)]
        dims, final_key = (18, 18), "th"
        impulses, hit, trans = ((0, "dv1"),), None, ("t1", "th")
    elif v is Variant.TWO_IMPULSE_FIRST_AT_T0:
        fields = [("tau2", 1), ("th", 1), ("dv1", 3), ("dv2", 3)]
        dims, final_key = (18, 18), "th"
        impulses, hit, trans = ((None, "dv1"), (0, "dv2")), None, ("t2", "th")
    elif v is Variant.TWO_IMPULSE_CONSTRAINED:
        if cons.dv1_box is None or cons.dv2_box is None:
            raise ValueError("TwoImpulseConstrained requires both impulse boxes")
        lam_names = cons.time_constraint_names
        has_boxes = True
        fields = [("tau1", 1), ("tau2", 1), ("th", 1), ("dv1", 3), ("dv2", 3),
                  ("lam", max(len(lam_names), 1)), ("mu", 12)]
        if not lam_names:
            raise ValueError("TwoImpulseConstrained requires >= 1 time constraint")
        fields[5] = ("lam", len(lam_names))
        dims, final_key = (18, 18, 18), "th"
        impulses, hit, trans = ((0, "dv1"), (1, "dv2")), None, ("t1", "t2", "th")
    elif v is Variant.ONE_IMPULSE_TERMINAL_POSITION:
        if scenario.r_f is None:
            raise ValueError("terminal-position variants require scenario.r_f")
        fields = [("tau1", 1), ("tau2", 1), ("tf", 1), ("dv1", 3)]
        dims, final_key = (18, 18, 18), "tf"
        impulses, hit, trans = ((0, "dv1"),), 1, ("t1", "th", "tf")
    elif v is Variant.TERMINAL_POSITION:
        if scenario.r_f is None:
            raise ValueError("terminal-position variants require scenario.r_f")
        fields = [("tau1", 1), ("tau2", 1), ("tau3", 1), ("tf", 1),
                  ("dv1", 3), ("dv2", 3)]
        dims, final_key = (18, 18, 18, 18), "tf"
        impulses, hit, trans = ((0, "dv1"), (1, "dv2")), 2, ("t1", "t2", "th", "tf")
    elif v is Variant.MULTI_CONSTRAINT:
        if scenario.r_f is None:
            raise ValueError("MultiConstraint requires scenario.r_f")
        if cons.dv1_box is None or cons.dv2_box is None:
            raise ValueError("MultiConstraint requires both impulse boxes")
        if not cons.has_terminal_box:
            raise ValueError("MultiConstraint requires the terminal position box")
        for name in ("alpha", "beta", "gamma", "eta"):
            if getattr(cons, name) is None:
                raise ValueError(f"MultiConstraint requires time constant {name!r}")
        if np.any(cons.k3 <= 0.0) or np.any(cons.k4 <= 0.0):
            raise ValueError("MultiConstraint requires positive slackness "
                             "weights k3 and k4")
        lam_names = ("alpha", "beta", "gamma", "eta")
        has_boxes = has_terminal_box = True
        fields = [("tau1", 1), ("tau2", 1), ("tau3", 1), ("tf", 1),
                  ("dv1", 3), ("dv2", 3), ("lam", 4), ("mu", 12), ("eta_box", 6),
                  ("slack_pre", 6), ("slack_post", 6)]
        dims, final_key = (18, 18, 18, 18), "tf"
        impulses, hit, trans = ((0, "dv1"), (1, "dv2")), 2, ("t1", "t2", "th", "tf")
    else:  # pragma: no cover
        raise KeyError(v)

    slices, start = {}, 0
    for name, width in fields:
        slices[name] = slice(start, start + width)
        start += width
    return ParameterMap(variant=v, slices=slices, n_segments=len(dims),
                        dims=dims, final_key=final_key, impulses=impulses,
                        hit_interface=hit, trans_instants=trans,
                        lam_names=lam_names, has_boxes=has_boxes,
                        has_terminal_box=has_terminal_box,
                        fixed_t1=fixed_t1, fixed_t1_scaled=fixed_t1_scaled)


def _make_rhs(pmap: ParameterMap, scenario: Scenario):
    mu = scenario.gravity.mu

    def rhs(seg: int, s: np.ndarray, y: np.ndarray, p: np.ndarray) -> np.ndarray:
        c = pmap.scale_factors(p)[seg]
        out = np.empty_like(y)
        rM, vM = y[_R], y[_V]
        pv = y[_PV]
        rT, vT = y[_TR], y[_TV]
        rMn = np.sqrt(np.einsum("ij,ij->j", rM, rM))
        rTn = np.sqrt(np.einsum("ij,ij->j", rT, rT))
        out[_R] = vM
        out[_V] = -mu * rM / rMn ** 3
        # p_r' = -(mu/r^3)(3 r r^T/r^2 - I) p_v
        rdotpv = np.einsum("ij,ij->j", rM, pv)
        out[_PR] = -mu / rMn ** 3 * (3.0 * rM * rdotpv / rMn ** 2 - pv)
        out[_PV] = -y[_PR]
        out[_TR] = vT
        out[_TV] = -mu * rT / rTn ** 3
        out *= c
        return out

    return rhs


def _assemble_rows(pmap: ParameterMap, scenario: Scenario,
                   ya: list[np.ndarray], yb: list[np.ndarray],
                   p: np.ndarray) -> list[tuple[str, np.ndarray, float]]:
    """All boundary residual rows as (label, values, scale) triples."""
    cons = scenario.constraints or ConstraintSet()
    inst = pmap.instants(p)
    rows: list[tuple[str, np.ndarray, float]] = []

    def add(label, values, scale):
        rows.append((label, np.atleast_1d(np.asarray(values, dtype=float)), scale))

    impulse_at_t0 = any(i is None for i, _ in pmap.impulses)
    dv0 = pmap.get(p, "dv1") if impulse_at_t0 else 0.0
    add("initial interceptor position", ya[0][_R] - scenario.interceptor0.r, _POS)
    add("initial interceptor velocity",
        ya[0][_V] - scenario.interceptor0.v - dv0, _VEL)
    add("initial target position", ya[0][_TR] - scenario.target0.r, _POS)
    add("initial target velocity", ya[0][_TV] - scenario.target0.v, _VEL)

    impulse_ifaces = {i: key for i, key in pmap.impulses if i is not None}
    for i in range(pmap.n_segments - 1):
        add(f"interceptor position continuity, interface {i}",
            yb[i][_R] - ya[i + 1][_R], _POS)
        if i in impulse_ifaces:
            dv = pmap.get(p, impulse_ifaces[i])
            add(f"velocity impulse link, interface {i}",
                ya[i + 1][_V] - yb[i][_V] - dv, _VEL)
        else:
            add(f"interceptor velocity continuity, interface {i}",
                yb[i][_V] - ya[i + 1][_V], _VEL)
        add(f"target position continuity, interface {i}",
            yb[i][_TR] - ya[i + 1][_TR], _POS)
        add(f"target velocity continuity, interface {i}",
            yb[i][_TV] - ya[i + 1][_TV], _VEL)

    hit = yb[pmap.hit_interface] if pmap.hit_interface is not None else yb[-1]
    add("interception", hit[_R] - hit[_TR], _POS)
    if pmap.variant in (Variant.ONE_IMPULSE_TERMINAL_POSITION,
                        Variant.TERMINAL_POSITION):
        add("fixed terminal position", yb[-1][_R] - scenario.r_f, _POS)

    # Costate interface rows: position costate continuous at impulses
    # (it jumps at the interception interface), velocity costate
    # continuous everywhere, and zero at the final instant.
    for i in range(pmap.n_segments - 1):
        if i != pmap.hit_interface:
            add(f"position costate continuity, interface {i}",
                yb[i][_PR] - ya[i + 1][_PR], _PRS)
    for i in range(pmap.n_segments - 1):
        add(f"velocity costate continuity, interface {i}",
            yb[i][_PV] - ya[i + 1][_PV], _PVS)
    add("terminal velocity costate", yb[-1][_PV], _PVS)

    # Impulse stationarity: p_v + dv/|dv| = 0, offset by box multipliers.
    # Written in the |dv|-scaled form |dv| * (p_v + mu terms) + dv = 0,
    # which is equivalent for a nonzero impulse yet stays smooth when an
    # impulse degenerates to zero magnitude.
    for j, (iface, key) in enumerate(pmap.impulses):
        pv_at = ya[0][_PV] if iface is None else yb[iface][_PV]
        dv = pmap.get(p, key)
        adj = pv_at
        if pmap.has_boxes:
            mu_all = pmap.get(p, "mu")
            adj = adj + mu_all[6 * j:6 * j + 3] - mu_all[6 * j + 3:6 * j + 6]
        add(f"impulse direction optimality, {key}",
            float(np.linalg.norm(dv)) * adj + dv, _VEL)

    lam = np.atleast_1d(pmap.get(p, "lam")) if pmap.lam_names else np.zeros(0)

    if pmap.has_terminal_box:
        span_pre = inst["th"] - inst["t2"]
        span_post = inst["tf"] - inst["th"]

    # Stationarity with respect to each free instant.
    base: dict[str, float] = {}
    for name in pmap.trans_instants:
        if name == "t1":
            base["t1"] = -float(yb[0][_PR] @ pmap.get(p, "dv1"))
        elif name == "t2":
            iface = dict((k, i) for i, k in pmap.impulses)["dv2"]
            base["t2"] = -float(yb[iface][_PR] @ pmap.get(p, "dv2"))
        elif name == "th":
            if pmap.hit_interface is None:
                base["th"] = float(yb[-1][_PR] @ (hit[_V] - hit[_TV]))
            else:
                i = pmap.hit_interface
                dpr = yb[i][_PR] - ya[i + 1][_PR]
                base["th"] = float(dpr @ (hit[_V] - hit[_TV]))
                if pmap.has_terminal_box:
                    base["th"] += slackness_hamiltonian(
                        pmap.get(p, "slack_pre"), cons.k3, span_pre)
        elif name == "tf":
            base["tf"] = float(yb[-1][_PR] @ yb[-1][_V])
            if pmap.has_terminal_box:
                base["tf"] += slackness_hamiltonian(
                    pmap.get(p, "slack_post"), cons.k4, span_post)
    for j, cname in enumerate(pmap.lam_names):
        for iname, sign in _LAM_TERMS[cname]:
            if iname in base:
                base[iname] += sign * lam[j]
    for name in pmap.trans_instants:
        add(f"stationarity in {name}", base[name], _TRANS)

    act = pmap.active_set
    for j, cname in enumerate(pmap.lam_names):
        if act is None:
            add(f"time-window complementarity, {cname}",
                static_slack_rows(lam[j], _lam_g(cname, inst, cons)), _LAMROW)
        elif act["lam"][j]:
            add(f"time-window pinned, {cname}",
                _lam_g(cname, inst, cons), _TRANS)
        else:
            add(f"time-window multiplier released, {cname}", lam[j], 1.0)

    if pmap.has_boxes:
        mu_all = pmap.get(p, "mu")
        for j, (_, key) in enumerate(pmap.impulses):
            dv = pmap.get(p, key)
            box = cons.dv1_box if key == "dv1" else cons.dv2_box
            mu_up = mu_all[6 * j:6 * j + 3]
            mu_lo = mu_all[6 * j + 3:6 * j + 6]
            if act is None:
                add(f"impulse box complementarity, {key} upper",
                    mu_up * (dv - box[:, 1]), _MUROW)
                add(f"impulse box complementarity, {key} lower",
                    mu_lo * (box[:, 0] - dv), _MUROW)
            else:
                up_pin = act["mu"][6 * j:6 * j + 3]
                lo_pin = act["mu"][6 * j + 3:6 * j + 6]
                add(f"impulse box activity, {key} upper",
                    np.where(up_pin, (dv - box[:, 1]) / _VEL, mu_up), 1.0)
                add(f"impulse box activity, {key} lower",
                    np.where(lo_pin, (box[:, 0] - dv) / _VEL, mu_lo), 1.0)

    if pmap.has_terminal_box:
        eta = pmap.get(p, "eta_box")
        eta_up, eta_lo = eta[0::2], eta[1::2]
        eps_2a, pe_2a, eps_2b, pe_2b = _slackness_edges(
            pmap.get(p, "slack_pre"), cons.k3, span_pre)
        eps_3a, pe_3a, eps_3b, pe_3b = _slackness_edges(
            pmap.get(p, "slack_post"), cons.k4, span_post)
        add("slackness continuity at interception", eps_3a - eps_2b, _SLACK)
        add("slackness costate jump at interception",
            -pe_2b + pe_3a + 2.0 * eta_lo * eps_2b, _SLACK)
        add("terminal slackness costate",
            -pe_3b + 2.0 * eta_up * eps_3b, _SLACK)
        add("pre-interception slackness costate", pe_2a, _SLACK)
        dev = yb[-1][_R] - scenario.r_f
        add("terminal box upper equality",
            dev - cons.r_max + eps_3b ** 2, _BOXROW)
        add("terminal box lower equality",
            -dev + cons.r_min + eps_2b ** 2, _BOXROW)
        add("terminal position costate closure",
            (eta_up - eta_lo) - yb[-1][_PR], _PRS)

    return rows


def residuals(variant: Variant, ya: list[np.ndarray], yb: list[np.ndarray],
              p: np.ndarray, scenario: Scenario, *,
              fixed_t1: float | None = None,
              fixed_t1_scaled: bool = False) -> np.ndarray:
    """Boundary residual vector of one variant at given segment edges."""
    pmap = parameter_map(variant, scenario, fixed_t1=fixed_t1,
                         fixed_t1_scaled=fixed_t1_scaled)
    if p.size != pmap.n:
        raise ValueError(f"parameter dimension {p.size} != {pmap.n}")
    for k, d in enumerate(pmap.dims):
        if ya[k].size != d or yb[k].size != d:
            raise ValueError(f"segment {k} edge dimension != {d}")
    rows = _assemble_rows(pmap, scenario, ya, yb, p)
    return np.concatenate([vals for _, vals, _ in rows])


def dof_balance(variant: Variant, scenario: Scenario | None = None
                ) -> tuple[int, int]:
    """(unknown count, residual count) of the square Newton system."""
    if scenario is None:
        scenario = _generic_scenario(variant)
    fixed = 0.0 if variant is Variant.ONE_IMPULSE_FIXED_T1 else None
    pmap = parameter_map(variant, scenario, fixed_t1=fixed)
    ya = [np.ones(d) for d in pmap.dims]
    yb = [np.ones(d) for d in pmap.dims]
    p = np.linspace(0.1, 1.0, pmap.n)
    rows = _assemble_rows(pmap, scenario, ya, yb, p)
    n_rows = sum(v.size for _, v, _ in rows)
    # The boundary system is square when its rows match the segments'
    # boundary freedoms plus the parameter count.
    return sum(pmap.dims) + pmap.n, n_rows


def _generic_scenario(variant: Variant) -> Scenario:
    """Structurally complete placeholder scenario for layout audits."""
    from impulseopt.dynamics import GravityModel
    g = GravityModel()
    r0 = np.array([g.Re + 200e3, 0.0, 0.0])
    v0 = np.array([0.0, 7.8e3, 0.0])
    box = np.column_stack([np.full(3, -500.0), np.full(3, 500.0)])
    cons = ConstraintSet(alpha=0.0, beta=100.0, gamma=10.0, eta=0.0,
                         dv1_box=box, dv2_box=box,
                         r_min=np.full(3, -500.0), r_max=np.full(3, 500.0))
    return Scenario(gravity=g, interceptor0=CartesianState(r0, v0),
                    target0=CartesianState(-r0, -v0), r_f=r0,
                    constraints=cons, label="layout-audit")


_DEFAULT_GUESS = {
    "tau1": 0.05, "tau2": 0.10, "tau3": 0.15, "th": 700.0, "tf": 950.0,
    "dv1": (-300.0, 300.0, -300.0), "dv2": (-100.0, 100.0, -100.0),
    "lam": 1.0, "mu": 1.0, "eta": 1.0,
    "p_r": (5.0e-4, -4.5e-4, 8.0e-4), "p_v": (0.49, -0.44, 0.76),
    "eps": 1.0, "eps_f": 0.1,
}


def _initial_params(pmap: ParameterMap, guess: dict) -> np.ndarray:
    g = dict(_DEFAULT_GUESS)
    g.update(guess or {})
    final = float(g[pmap.final_key])
    # Physical instants override the scaled defaults when provided.
    for tau_key, t_key in (("tau1", "t1"), ("tau2", "t2"), ("tau3", "t3")):
        if t_key in g:
            g[tau_key] = float(g[t_key]) / final
    if pmap.variant is Variant.ONE_IMPULSE_TERMINAL_POSITION and "th" in guess:
        g["tau2"] = float(guess["th"]) / final
    if pmap.variant in (Variant.TERMINAL_POSITION, Variant.MULTI_CONSTRAINT) \
            and "th" in guess:
        g["tau3"] = float(guess["th"]) / final
    # Slackness decay amplitudes: scalar eps/eps_f guesses map to the
    # expected layer structure (no layer at the start of the first
    # slackness segment, where the costate vanishes).
    g.setdefault("slack_pre", np.concatenate(
        [np.zeros(3), np.full(3, float(g["eps"]))]))
    g.setdefault("slack_post", np.concatenate(
        [np.full(3, float(g["eps"])), np.full(3, float(g["eps_f"]))]))
    p = np.zeros(pmap.n)
    for name, sl in pmap.slices.items():
        width = sl.stop - sl.start
        if name == pmap.final_key:
            val = final
        elif name == "eta_box":
            val = g["eta"]
        else:
            val = g[name]
        p[sl] = np.broadcast_to(np.asarray(val, dtype=float), (width,))
    return p


def _initial_profile(pmap: ParameterMap, scenario: Scenario,
                     params: np.ndarray, mesh: list[np.ndarray],
                     guess: dict, oracle_tol: float) -> list[np.ndarray]:
    """Mesh-value guess: ballistic arcs with guessed impulses and
    constant costates."""
    g = dict(_DEFAULT_GUESS)
    g.update(guess or {})
    bp = pmap.breakpoints(params)
    n = pmap.n_segments
    t_abs = [bp[k] + (mesh[k] * n - k) * (bp[k + 1] - bp[k]) for k in range(n)]

    impulse_ifaces = {i: key for i, key in pmap.impulses if i is not None}
    cur = scenario.interceptor0
    if any(i is None for i, _ in pmap.impulses):
        cur = CartesianState(cur.r, cur.v + np.asarray(g["dv1"], dtype=float))
    target = scenario.target0
    profiles = []
    for k in range(n):
        rel = t_abs[k] - bp[k]
        rel[-1] = max(rel[-1], 0.0)
        m = propagate_sampled(cur, rel, scenario.gravity, oracle_tol)
        t = propagate_sampled(target, t_abs[k], scenario.gravity, oracle_tol)
        y = np.empty((pmap.dims[k], mesh[k].size))
        y[_R], y[_V] = m[:3], m[3:]
        y[_PR] = np.asarray(g["p_r"], dtype=float)[:, None]
        y[_PV] = np.asarray(g["p_v"], dtype=float)[:, None]
        y[_TR], y[_TV] = t[:3], t[3:]
        profiles.append(y)
        end = CartesianState(m[:3, -1], m[3:, -1])
        if k in impulse_ifaces:
            dv = np.asarray(g[impulse_ifaces[k]], dtype=float)
            end = CartesianState(end.r, end.v + dv)
        cur = end
    return profiles


def _param_typicals(pmap: ParameterMap) -> np.ndarray:
    typ = np.ones(pmap.n)
    for name, sl in pmap.slices.items():
        if name.startswith("tau"):
            typ[sl] = 0.1
        elif name in ("th", "tf"):
            typ[sl] = 100.0
        elif name.startswith("dv"):
            typ[sl] = 100.0
        elif name.startswith("slack"):
            typ[sl] = 10.0
        else:
            typ[sl] = 1.0
    return typ


def build_bvp(variant: Variant, scenario: Scenario, guess: dict | None = None,
              *, fixed_t1: float | None = None, fixed_t1_scaled: bool = False,
              mesh_points: int = 11, oracle_tol: float = 1e-12,
              profile=None, active_set: dict | None = None
              ) -> tuple[SegmentedBVP, ParameterMap]:
    """Assemble the segmented BVP of one variant with an initial guess.

    ``guess`` may hold scaled instants (tau1..tau3), physical instants
    (t1, t2, th, tf), impulse vectors dv1/dv2, constant costate guesses
    p_r/p_v, multipliers lam/mu/eta, and slackness values eps/p_eps.

    ``profile`` may hold a prior converged Solution of the same variant
    (typically from a continuation stage on a nearby scenario); its
    interpolant then replaces the built-in constant-costate profile
    guess, while parameter guesses still come from ``guess``.

    ``active_set`` switches the inequality rows to the active-set
    subproblem form (see ``ParameterMap.active_set``); the default
    product-complementarity form is the faithful one, the subproblem
    form is what ``solve_variant`` iterates on internally.
    """
    if isinstance(variant, str):
        variant = Variant.from_name(variant)
    pmap = parameter_map(variant, scenario, fixed_t1=fixed_t1,
                         fixed_t1_scaled=fixed_t1_scaled)
    pmap.active_set = active_set
    params = _initial_params(pmap, guess or {})
    n = pmap.n_segments
    mesh = [np.linspace(k / n, (k + 1) / n, mesh_points) for k in range(n)]
    if profile is not None:
        if profile.n_segments != n:
            raise ValueError("profile segment count does not match variant")
        profiles = [profile.interpolate(k, mesh[k]) for k in range(n)]
    else:
        profiles = _initial_profile(pmap, scenario, params, mesh, guess or {},
                                    oracle_tol)

    def bc(ya, yb, p):
        rows = _assemble_rows(pmap, scenario, ya, yb, p)
        return np.concatenate([vals for _, vals, _ in rows])

    sample = _assemble_rows(pmap, scenario, [y[:, 0] for y in profiles],
                            [y[:, -1] for y in profiles], params)
    pmap.bc_labels = [label for label, vals, _ in sample
                      for _ in range(vals.size)]
    bc_scales = np.concatenate([np.full(vals.size, sc) for _, vals, sc in sample])
    y_scales = [_STATE_SCALE_18.copy() for _ in pmap.dims]
    bvp = SegmentedBVP(dims=pmap.dims, rhs=_make_rhs(pmap, scenario), bc=bc,
                       mesh=mesh, guess=profiles, params=params,
                       y_scales=y_scales, bc_scales=bc_scales,
                       param_typicals=_param_typicals(pmap))
    bvp.validate()
    return bvp, pmap


def _guess_from_params(pmap: ParameterMap, params: np.ndarray) -> dict:
    """Guess dict that reproduces a converged parameter vector."""
    g = {}
    for name, sl in pmap.slices.items():
        vals = params[sl]
        if name == "eta_box":
            g["eta"] = vals.copy()
        elif sl.stop - sl.start == 1:
            g[name] = float(vals[0])
        else:
            g[name] = vals.copy()
    return g


_SIGN_TOL = 1e-8       # multiplier more negative than this is wrong-signed
_PRIMAL_TOL = 1e-6     # constraint violation beyond this triggers pinning


def _classify_active_set(pmap: ParameterMap, scenario: Scenario,
                         params: np.ndarray, current: dict | None
                         ) -> tuple[dict, bool]:
    """Next active set implied by multiplier signs and feasibility.

    A pinned constraint whose multiplier converged negative is
    released; a released constraint whose primal value is violated is
    pinned (the opposite face of the same box axis is released).
    Returns (active_set, clean) where ``clean`` means nothing changed
    and the root is a sign-correct, feasible KKT point.
    """
    cons = scenario.constraints or ConstraintSet()
    inst = pmap.instants(params)
    n_lam = len(pmap.lam_names)
    n_mu = 12 if pmap.has_boxes else 0
    # From a product-form root every wrong-signed multiplier is released
    # at once (the whole set is untrusted); between subproblem rounds
    # only the single most-negative one is, the standard anti-cycling
    # rule.
    release_all = current is None
    if current is None:
        # Product-form root: read activity off the converged values.
        current = {"lam": np.zeros(n_lam, dtype=bool),
                   "mu": np.zeros(n_mu, dtype=bool)}
        for j, cname in enumerate(pmap.lam_names):
            current["lam"][j] = abs(_lam_g(cname, inst, cons)) <= _PRIMAL_TOL
        if pmap.has_boxes:
            for j, (_, key) in enumerate(pmap.impulses):
                dv = pmap.get(params, key)
                box = cons.dv1_box if key == "dv1" else cons.dv2_box
                current["mu"][6 * j:6 * j + 3] = \
                    np.abs(dv - box[:, 1]) <= _PRIMAL_TOL
                current["mu"][6 * j + 3:6 * j + 6] = \
                    np.abs(dv - box[:, 0]) <= _PRIMAL_TOL
    nxt = {"lam": current["lam"].copy(), "mu": current["mu"].copy()}
    clean = True
    # Releases are deferred: releasing only the single most-negative
    # multiplier per round is the standard anti-cycling rule.
    release_candidates: list[tuple[float, str, int]] = []

    lam = np.atleast_1d(pmap.get(params, "lam")) if n_lam else np.zeros(0)
    for j, cname in enumerate(pmap.lam_names):
        if nxt["lam"][j]:
            if lam[j] < -_SIGN_TOL:
                release_candidates.append((float(lam[j]), "lam", j))
        elif _lam_g(cname, inst, cons) > _PRIMAL_TOL:
            nxt["lam"][j] = True
            clean = False

    if pmap.has_boxes:
        mu_all = pmap.get(params, "mu")
        for j, (_, key) in enumerate(pmap.impulses):
            dv = pmap.get(params, key)
            box = cons.dv1_box if key == "dv1" else cons.dv2_box
            for i in range(3):
                up, lo = 6 * j + i, 6 * j + 3 + i
                for face, other, viol in (
                        (up, lo, dv[i] - box[i, 1]),
                        (lo, up, box[i, 0] - dv[i])):
                    if nxt["mu"][face]:
                        if mu_all[face] < -_SIGN_TOL:
                            release_candidates.append(
                                (float(mu_all[face]), "mu", face))
                    elif viol > _PRIMAL_TOL:
                        nxt["mu"][face] = True
                        nxt["mu"][other] = False
                        clean = False

    if release_candidates:
        clean = False
        if release_all:
            for _, kind, idx in release_candidates:
                nxt[kind][idx] = False
        else:
            _, kind, idx = min(release_candidates)
            nxt[kind][idx] = False
    return nxt, clean


def solve_variant(variant: Variant | str, scenario: Scenario,
                  guess: dict | None = None, *, tol: float = 1e-9,
                  fixed_t1: float | None = None, fixed_t1_scaled: bool = False,
                  mesh_points: int = 11,
                  options: SolverOptions | None = None,
                  active_set_rounds: int = 8) -> tuple[Solution, ParameterMap]:
    """Build and solve one variant, iterating the inequality active set.

    The multiplier unknowns are unconstrained in sign and coupled only
    through product-complementarity rows, so Newton may converge to a
    spurious root (a wrong-signed multiplier on an active face, or a
    violated constraint with a zero multiplier).  When that happens the
    problem is re-solved in active-set subproblem form — each product
    row replaced by the primal equality (pinned) or the bare multiplier
    (released), which removes the product degeneracy — updating the set
    from multiplier signs and feasibility until it settles, and finishes
    with a product-form solve warm-started at the clean root.
    """
    if isinstance(variant, str):
        variant = Variant.from_name(variant)
    kw = dict(fixed_t1=fixed_t1, fixed_t1_scaled=fixed_t1_scaled,
              mesh_points=mesh_points)
    bvp, pmap = build_bvp(variant, scenario, guess, **kw)
    has_sets = bool(pmap.lam_names or pmap.has_boxes)
    converged = True
    try:
        sol = solve(bvp, tol=tol, options=options)
    except SolverError as exc:
        # The product rows go rank-deficient when an iterate sits on a
        # constraint face with a vanishing multiplier.  Salvage the best
        # iterate (or fall back to the guess primals), read an active
        # set off it, and continue with subproblems, which replace the
        # degenerate product rows with well-posed equalities.
        if not has_sets:
            raise
        sol = getattr(exc, "partial", None)
        converged = False
    if converged:
        if not has_sets:
            return sol, pmap
        act, clean = _classify_active_set(pmap, scenario, sol.params, None)
        if clean:
            return sol, pmap
    else:
        probe = sol.params if sol is not None else bvp.params
        act, _ = _classify_active_set(pmap, scenario, probe, None)
    seen = []
    for _ in range(active_set_rounds):
        seen.append((act["lam"].tobytes(), act["mu"].tobytes()))
        staged = (_guess_from_params(pmap, sol.params)
                  if sol is not None else guess)
        bvp, pmap = build_bvp(variant, scenario, staged, profile=sol,
                              active_set=act, **kw)
        try:
            sol = solve(bvp, tol=tol, options=options)
        except SolverError as exc:
            sol = getattr(exc, "partial", None)
            if sol is None:
                raise
            act, _ = _classify_active_set(pmap, scenario, sol.params, None)
            continue
        act, clean = _classify_active_set(pmap, scenario, sol.params, act)
        if clean or (act["lam"].tobytes(), act["mu"].tobytes()) in seen:
            break
    # Final polish on the faithful product-complementarity rows.  A
    # clean subproblem root already satisfies them exactly, so if the
    # polish stalls on their degeneracy the subproblem solution stands.
    staged = _guess_from_params(pmap, sol.params)
    bvp, pmap = build_bvp(variant, scenario, staged, profile=sol, **kw)
    try:
        sol = solve(bvp, tol=tol, options=options)
    except SolverError:
        # Keep the subproblem root only if it is itself converged; a
        # salvaged partial iterate must not masquerade as a solution.
        if sol.max_residual > 1e3 * tol:
            raise
    return sol, pmap
