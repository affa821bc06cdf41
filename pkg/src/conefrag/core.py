"""Shared geometry, parameters, path containers and RNG plumbing.

Everything downstream works with a correlated planar Brownian motion whose
coordinate pair has per-unit-time variance ``a_sq = 2/sin(theta)`` and
covariance ``-cos(theta) * a_sq``.  The shear matrix maps the closed quadrant
onto the cone of apex angle ``theta`` and turns the correlated pair into a
standard planar Brownian motion.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ConeParams",
    "SamplePath",
    "StepFunction",
    "RngStream",
    "make_cone_params",
    "shear_apply",
    "norm1",
    "THETA_STAR",
]

# The special angle at which the whole closed-form layer applies.
THETA_STAR = 2.0 * np.pi / 3.0


@dataclass(frozen=True)
class ConeParams:
    """Angle-derived constants shared by all modules.

    theta is restricted to (pi/2, pi); alpha = pi/theta lies in (1, 2).
    """

    theta: float
    alpha: float
    gamma: float
    a_sq: float
    shear: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.shear.setflags(write=False)


def make_cone_params(theta: float) -> ConeParams:
    """Build ConeParams; raises ValueError outside (pi/2, pi)."""
    theta = float(theta)
    if not (np.pi / 2 < theta < np.pi):
        raise ValueError(f"theta must lie in (pi/2, pi), got {theta!r}")
    alpha = np.pi / theta
    gamma = np.sqrt(4.0 * theta / np.pi)
    a = np.sqrt(2.0 / np.sin(theta))
    shear = (1.0 / a) * np.array(
        [[1.0 / np.sin(theta), 1.0 / np.tan(theta)], [0.0, 1.0]]
    )
    return ConeParams(theta=theta, alpha=alpha, gamma=gamma, a_sq=a * a, shear=shear)


def shear_apply(params: ConeParams, p: np.ndarray) -> np.ndarray:
    """Apply the quadrant-to-cone shear to a point or an (n, 2) array."""
    p = np.asarray(p, dtype=float)
    return p @ params.shear.T


def norm1(p: np.ndarray) -> np.ndarray | float:
    """1-norm |x| + |y| of a point or of each row of an (n, 2) array."""
    p = np.asarray(p, dtype=float)
    return np.abs(p).sum(axis=-1)


@dataclass
class SamplePath:
    """A discretized trajectory on the uniform grid t_k = k * dt.

    ``values`` has shape (n+1,) for scalar paths or (n+1, 2) for planar ones.
    """

    dt: float
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.values.shape[0] < 1:
            raise ValueError("path must contain at least one point")

    @property
    def n_steps(self) -> int:
        return self.values.shape[0] - 1

    @property
    def duration(self) -> float:
        return self.n_steps * self.dt

    @property
    def origin_value(self) -> np.ndarray:
        return self.values[0]

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.values.shape[0])

    def is_planar(self) -> bool:
        return self.values.ndim == 2


class StepFunction:
    """Right-continuous piecewise-constant function of (local) time.

    ``breakpoints`` is strictly increasing; ``values`` may be scalar per
    breakpoint or a 2-vector per breakpoint.  The function takes the value
    ``values[j]`` on ``[breakpoints[j], breakpoints[j+1])``.
    """

    def __init__(self, breakpoints, values, truncated=None):
        self.breakpoints = np.asarray(breakpoints, dtype=float)
        self.values = np.asarray(values, dtype=float)
        if self.breakpoints.ndim != 1:
            raise ValueError("breakpoints must be one-dimensional")
        if self.breakpoints.size != self.values.shape[0]:
            raise ValueError("breakpoints and values must have equal length")
        if self.breakpoints.size == 0:
            raise ValueError("a step function needs at least one breakpoint")
        if np.any(np.diff(self.breakpoints) <= 0):
            raise ValueError("breakpoints must be strictly increasing")
        # Mask of grid points that fell beyond the available data, if any.
        self.truncated = (
            np.zeros(self.breakpoints.size, dtype=bool)
            if truncated is None
            else np.asarray(truncated, dtype=bool)
        )

    def __len__(self) -> int:
        return self.breakpoints.size

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.breakpoints, t, side="right") - 1
        idx = np.clip(idx, 0, self.breakpoints.size - 1)
        return self.values[idx]

    def jumps(self):
        """Return (breakpoints[1:], increments between consecutive values)."""
        return self.breakpoints[1:], np.diff(self.values, axis=0)

    @property
    def terminal(self):
        return self.values[-1]


def _mix64(a: int, b: int) -> int:
    """splitmix64-style combine of two 64-bit words into one."""
    x = (a * 0x9E3779B97F4A7C15 + b) & 0xFFFFFFFFFFFFFFFF
    x ^= x >> 30
    x = (x * 0xBF58476D1CE4E5B9) & 0xFFFFFFFFFFFFFFFF
    x ^= x >> 27
    x = (x * 0x94D049BB133111EB) & 0xFFFFFFFFFFFFFFFF
    return x ^ (x >> 31)


class RngStream:
    """Deterministic random stream keyed by (seed, stream_id).

    Equal keys reproduce identical sequences bit-for-bit; distinct stream ids
    give statistically independent streams.  ``child(k)`` derives a new
    independent stream, so worker fan-out never shares generator state.
    """

    def __init__(self, seed: int, stream_id: int = 0):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.stream_id = int(stream_id) & 0xFFFFFFFFFFFFFFFF
        self.gen = np.random.default_rng(
            np.random.SeedSequence(entropy=self.seed, spawn_key=(self.stream_id,))
        )

    def child(self, k: int) -> "RngStream":
        return RngStream(self.seed, _mix64(self.stream_id + 1, k))

    def __repr__(self):
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id})"
