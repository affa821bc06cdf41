"""Cone-time detection, approximate local times and excursion extraction.

Backward cone times are simultaneous running minima of both coordinates;
forward cone-free times are the complement of the "pinched" set.  Production
local time is the excursion-counting estimate (count completed excursions of
duration above a threshold and rescale by the tail exponent); the direct
Monte Carlo transcription of the limit measure is kept as a cross-check.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import gamma as gamma_fn

from ._fast import backward_cone_flags, conefree_flags
from .core import ConeParams, RngStream, SamplePath, StepFunction

__all__ = [
    "ConeTimeSet",
    "LocalTime",
    "ExcursionRecord",
    "CalibrationError",
    "detect_backward_cone_times",
    "detect_forward_conefree_times",
    "local_time_by_counting",
    "local_time_epsilon",
    "inverse_local_time",
    "extract_excursions",
    "subordinate",
    "calibrate_normalization",
    "excursion_intervals",
]

BACKWARD = "backward"
FORWARD_FREE = "forward_free"


class CalibrationError(RuntimeError):
    pass


@dataclass
class ConeTimeSet:
    indices: np.ndarray
    kind: str
    n_points: int

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=np.int64)


@dataclass
class LocalTime:
    """Nondecreasing approximate local time aligned with the path grid."""

    values: np.ndarray
    normalization: float
    eta: float
    kind: str

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)

    @property
    def total(self) -> float:
        return float(self.values[-1])


@dataclass
class ExcursionRecord:
    """A cone excursion: a quadrant path from its start point to the apex."""

    path: SamplePath
    start_point: np.ndarray
    duration: float
    source_interval: tuple
    kind: str


def detect_backward_cone_times(path: SamplePath) -> ConeTimeSet:
    """Grid indices where both coordinates attain a strict running minimum."""
    v = path.values
    if v.shape[0] < 2:
        raise ValueError("path needs at least 2 points")
    flags = backward_cone_flags(np.ascontiguousarray(v[:, 0]), np.ascontiguousarray(v[:, 1]))
    return ConeTimeSet(np.flatnonzero(flags), BACKWARD, v.shape[0])


def detect_forward_conefree_times(path: SamplePath) -> ConeTimeSet:
    """Grid indices not contained in any pinched stretch."""
    v = path.values
    if v.shape[0] < 2:
        raise ValueError("path needs at least 2 points")
    flags = conefree_flags(np.ascontiguousarray(v[:, 0]), np.ascontiguousarray(v[:, 1]))
    return ConeTimeSet(np.flatnonzero(flags), FORWARD_FREE, v.shape[0])


def excursion_intervals(indices: np.ndarray) -> tuple:
    """(left, right) grid-index pairs of the gaps between flagged indices."""
    gaps = np.diff(indices)
    j = np.flatnonzero(gaps >= 2)
    return indices[j], indices[j + 1]


def counting_power(alpha: float, kind: str) -> float:
    # Excursion durations have tail exponent alpha/2 on the forward side and
    # 1 - alpha/2 on the backward side, so these powers make the rescaled
    # count an (un-normalized) local time.
    return alpha / 2 if kind == FORWARD_FREE else 1 - alpha / 2


def local_time_by_counting(
    path: SamplePath,
    cone_set: ConeTimeSet,
    eta: float,
    params: ConeParams,
    normalization: float = 1.0,
) -> LocalTime:
    """Running count of completed excursions with duration > eta, rescaled."""
    if eta <= path.dt:
        raise ValueError("eta must exceed the grid step dt")
    left, right = excursion_intervals(cone_set.indices)
    dur = (right - left) * path.dt
    counted = right[dur > eta]
    n = path.values.shape[0]
    values = np.zeros(n)
    if counted.size:
        jump = normalization * eta ** counting_power(params.alpha, cone_set.kind)
        np.add.at(values, counted, jump)
        np.cumsum(values, out=values)
    return LocalTime(values=values, normalization=normalization, eta=eta, kind=cone_set.kind)


def local_time_epsilon(
    path: SamplePath,
    params: ConeParams,
    epsilon: float,
    mc_points: int,
    rng: RngStream,
    chunk: int = 2000,
) -> LocalTime:
    """Monte Carlo transcription of the limit-measure local time.

    Samples candidate points w uniformly in a bounding box of the path and
    accumulates eps^{-alpha} times the measure of those w whose quadrant
    contains the path until it enters the sheared epsilon-ball around w.
    Used only as a cross-check of the counting estimate.
    """
    if mc_points <= 0:
        raise ValueError("mc_points must be positive")
    v = path.values
    n = v.shape[0]
    shear_inv = np.linalg.inv(params.shear)
    pad = epsilon * np.linalg.norm(shear_inv, 2)
    lo = v.min(axis=0) - pad
    hi = v.max(axis=0) + pad
    area = np.prod(hi - lo)
    sheared = v @ params.shear.T

    hits = np.zeros(n, dtype=np.int64)
    eps2 = epsilon * epsilon
    for c0 in range(0, mc_points, chunk):
        m = min(chunk, mc_points - c0)
        w = lo + rng.gen.random((m, 2)) * (hi - lo)
        sw = w @ params.shear.T
        # first index where the path leaves the open quadrant based at w
        inside = (v[None, :, 0] > w[:, None, 0]) & (v[None, :, 1] > w[:, None, 1])
        viol = np.where(inside.all(axis=1), n, np.argmin(inside, axis=1))
        # first index where the path enters the sheared epsilon-ball around w
        d2 = ((sheared[None, :, :] - sw[:, None, :]) ** 2).sum(axis=2)
        hit_any = (d2 < eps2).any(axis=1)
        hit = np.where(hit_any, np.argmax(d2 < eps2, axis=1), n)
        ok = hit_any & (hit < viol)
        np.add.at(hits, hit[ok], 1)
    values = 0.5 * epsilon ** (-params.alpha) * area * np.cumsum(hits) / mc_points
    return LocalTime(values=values, normalization=1.0, eta=epsilon, kind=BACKWARD)


def inverse_local_time(lt: LocalTime, dt: float) -> StepFunction:
    """Right-continuous generalized inverse, in real-time units."""
    vals = lt.values
    if np.any(np.diff(vals) < 0):
        raise ValueError("local time must be nondecreasing")
    jump_k = np.flatnonzero(np.diff(vals) > 0) + 1
    if jump_k.size == 0:
        return StepFunction([0.0], [len(vals) * dt], truncated=[True])
    levels_before = vals[jump_k - 1]
    bp = np.concatenate([levels_before, [vals[-1]]])
    tv = np.concatenate([jump_k * dt, [(len(vals) - 1) * dt]])
    trunc = np.zeros(bp.size, dtype=bool)
    trunc[-1] = True
    if vals[0] > 0:
        # local time already accrued at time zero: inverse is 0 below it
        bp = np.concatenate([[0.0], bp])
        tv = np.concatenate([[0.0], tv])
        trunc = np.concatenate([[False], trunc])
    return StepFunction(bp, tv, truncated=trunc)


def extract_excursions(path: SamplePath, cone_set: ConeTimeSet) -> list:
    """Cut the path into cone excursions ending at the apex.

    Backward kind keeps the original time direction relative to the later
    cone time; forward kind reverses time so the excursion also ends at 0.
    """
    v = path.values
    left, right = excursion_intervals(cone_set.indices)
    out = []
    for l, r in zip(left, right):
        if cone_set.kind == BACKWARD:
            seg = v[l : r + 1] - v[r]
        else:
            seg = v[r : l - 1 if l > 0 else None : -1] - v[l]
        rec = ExcursionRecord(
            path=SamplePath(dt=path.dt, values=seg),
            start_point=seg[0].copy(),
            duration=(r - l) * path.dt,
            source_interval=(int(l), int(r)),
            kind=cone_set.kind,
        )
        out.append(rec)
    return out


def subordinate(path: SamplePath, lt: LocalTime, grid) -> StepFunction:
    """Evaluate the path at inverse local times over the requested grid."""
    grid = np.asarray(grid, dtype=float)
    vals = lt.values
    k = np.searchsorted(vals, grid, side="right")
    truncated = k >= vals.size
    k = np.clip(k, 0, vals.size - 1)
    return StepFunction(grid, path.values[k], truncated=truncated)


# Exactly-normalized targets at the special angle: the forward subordinated
# components are spectrally positive stable with unit Levy density, and the
# backward jump intensity carries the constant 3^{1/8}/8.
BACKWARD_JUMP_CONST = 3.0 ** 0.125 / 8.0


def _forward_target(alpha: float, q: float) -> float:
    return gamma_fn(-alpha) * q**alpha


def calibrate_normalization(
    samples: list,
    kind: str,
    params: ConeParams,
    q: float = 1.0,
    min_events: int = 200,
) -> float:
    """Constant rescaling raw counting local time onto the paper-normalized one.

    Forward: match the component Laplace exponent of the subordinated pair to
    the unit-density stable target.  Backward (special angle only): match the
    1-norm jump intensity tail to its closed-form constant.
    """
    if not samples:
        raise CalibrationError("no subordinated samples supplied")
    if kind == FORWARD_FREE:
        logs = []
        weights = []
        for sf in samples:
            db = np.diff(sf.breakpoints)
            if db.size == 0 or not np.allclose(db, db[0]):
                raise CalibrationError("forward calibration expects uniform grids")
            inc = np.diff(sf.values, axis=0)[~sf.truncated[1:]]
            if inc.size == 0:
                continue
            mean_exp = np.exp(-q * inc).mean()
            logs.append(np.log(mean_exp) / db[0])
            weights.append(inc.size)
        total = int(np.sum(weights)) if weights else 0
        if total < min_events:
            raise CalibrationError(
                f"insufficient increments for forward calibration: {total} < {min_events}"
            )
        psi_hat = float(np.average(logs, weights=weights))
        return psi_hat / _forward_target(params.alpha, q)
    if kind == BACKWARD:
        if abs(params.alpha - 1.5) > 1e-9:
            raise CalibrationError("backward calibration is only available at alpha=3/2")
        norms = []
        span = 0.0
        for sf in samples:
            ok = ~sf.truncated
            jump = np.diff(sf.values[ok], axis=0)
            m = -jump.sum(axis=1)
            norms.append(m[m > 0])
            span += sf.breakpoints[ok][-1] - sf.breakpoints[ok][0]
        m = np.concatenate(norms) if norms else np.array([])
        if m.size < min_events:
            raise CalibrationError(
                f"insufficient jumps for backward calibration: {m.size} < {min_events}"
            )
        grid = np.quantile(m, np.linspace(0.2, 0.8, 7))
        rate_raw = np.array([(m > g).sum() / span for g in grid])
        target = 2.0 * BACKWARD_JUMP_CONST * grid**-0.5
        return float(np.exp(np.mean(np.log(rate_raw / target))))
    raise ValueError(f"unknown kind {kind!r}")
