"""Affine time changes mapping unknown instants onto a fixed normalized mesh.

Unknown physical instants (impulse times, impact time, terminal time)
become ordinary parameters once each phase [t_k, t_{k+1}] is mapped onto
the fixed normalized subinterval [k/n, (k+1)/n].  The dynamics on the
normalized variable pick up one multiplier per segment equal to
n * (physical duration of that segment).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class TimeMap:
    """Ordered physical instants t0 <= t_1 <= ... <= t_n defining n segments.

    ``instants`` holds the interior and terminal instants (seconds), so
    n_segments = len(instants).  Zero-length segments are permitted; the
    corresponding scaled-dynamics multiplier is zero (degeneration to
    fewer impulses is a valid outcome, not an error).
    """

    t0: float
    instants: tuple[float, ...]

    def __post_init__(self):
        times = (self.t0,) + tuple(self.instants)
        for a, b in zip(times, times[1:]):
            if b - a < 0:
                raise ValueError(f"negative segment duration: {a} -> {b}")

    @property
    def n_segments(self) -> int:
        return len(self.instants)

    @property
    def breakpoints(self) -> np.ndarray:
        """Physical instants at the normalized breakpoints k/n."""
        return np.asarray((self.t0,) + tuple(self.instants))

    @property
    def scaled(self) -> np.ndarray:
        """Instants scaled by the final span: tau_i = (t_i - t0)/(t_n - t0)."""
        span = self.instants[-1] - self.t0
        if span <= 0:
            raise ValueError("total span must be positive to scale instants")
        return (self.breakpoints[1:] - self.t0) / span


def scale_factors(tmap: TimeMap) -> np.ndarray:
    """Per-segment multiplier n * duration_j for the scaled dynamics."""
    bp = tmap.breakpoints
    return tmap.n_segments * np.diff(bp)


def physical_time(s, tmap: TimeMap):
    """Map normalized s in [0, 1] to physical seconds (piecewise affine).

    Breakpoints k/n map exactly to the k-th instant.
    """
    s_arr = np.atleast_1d(np.asarray(s, dtype=float))
    if np.any(s_arr < 0.0) or np.any(s_arr > 1.0):
        raise ValueError("normalized time must lie in [0, 1]")
    n = tmap.n_segments
    bp = tmap.breakpoints
    seg = np.minimum((s_arr * n).astype(int), n - 1)
    local = s_arr * n - seg
    t = bp[seg] + local * (bp[seg + 1] - bp[seg])
    return t if np.ndim(s) else float(t[0])
