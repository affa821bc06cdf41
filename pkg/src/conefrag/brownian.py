"""Correlated planar Brownian motion with the cone covariance structure."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import ConeParams, RngStream, SamplePath

__all__ = ["BmConfig", "increment_covariance", "simulate_bm", "simulate_bm_coords"]


@dataclass(frozen=True)
class BmConfig:
    params: ConeParams
    start: tuple
    dt: float
    n_steps: int

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.n_steps < 1:
            raise ValueError("n_steps must be at least 1")


def increment_covariance(params: ConeParams, dt: float) -> np.ndarray:
    """Per-step covariance matrix of the coordinate pair over a step dt."""
    if dt < 0:
        raise ValueError("dt must be nonnegative")
    c = params.a_sq * dt
    return np.array([[c, -np.cos(params.theta) * c], [-np.cos(params.theta) * c, c]])


def simulate_bm_coords(
    params: ConeParams, dt: float, n_steps: int, rng: RngStream, start=(0.0, 0.0)
):
    """Simulate the pair and return the two coordinate arrays separately.

    Uses the explicit lower-triangular factor of the step covariance, so the
    finite-dimensional marginals are exact.  Returning separate contiguous
    arrays avoids a transpose copy in the hot harvesting loop.
    """
    a = np.sqrt(params.a_sq)
    sq = np.sqrt(dt)
    # chol([[1, -cos t], [-cos t, 1]]) = [[1, 0], [-cos t, sin t]]
    g1 = rng.gen.standard_normal(n_steps)
    g2 = rng.gen.standard_normal(n_steps)
    x = np.empty(n_steps + 1)
    y = np.empty(n_steps + 1)
    x[0], y[0] = start
    np.cumsum(a * sq * g1, out=x[1:])
    np.cumsum(a * sq * (-np.cos(params.theta) * g1 + np.sin(params.theta) * g2), out=y[1:])
    if start[0] != 0.0:
        x[1:] += start[0]
    if start[1] != 0.0:
        y[1:] += start[1]
    return x, y


def simulate_bm(cfg: BmConfig, rng: RngStream) -> SamplePath:
    """Simulate the correlated pair from cfg.start as a planar SamplePath."""
    x, y = simulate_bm_coords(cfg.params, cfg.dt, cfg.n_steps, rng, start=cfg.start)
    return SamplePath(dt=cfg.dt, values=np.column_stack([x, y]))
