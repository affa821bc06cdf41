"""Harvesting cone excursions, branch extraction and the two-motion
first-passage construction.

An excursion from a boundary point is obtained by harvesting forward cone
excursions from long runs, filtering on the start point and rescaling
diffusively onto the exact target; the conditional law given the start norm
is scale-exact, so the acceptance window only affects yield.

A branch targeted at an interior time t is built from the reversed pre-t
path: its cone-free local time gives the left endpoints, and the right
endpoints are the first simultaneous running infima after t falling below
the whole retained stretch.  Reading the nested intervals against remaining
local time turns the displacement norms into the fragment trajectory.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._fast import backward_cone_flags, conefree_flags
from .brownian import simulate_bm_coords
from .core import ConeParams, RngStream, SamplePath, StepFunction, make_cone_params, norm1, THETA_STAR
from .conetime import (
    BACKWARD,
    FORWARD_FREE,
    ConeTimeSet,
    ExcursionRecord,
    counting_power,
    excursion_intervals,
)

__all__ = [
    "BranchProcess",
    "SProcessPath",
    "HarvestError",
    "harvest_pz",
    "harvest_backward",
    "sample_duration_biased",
    "extract_branch",
    "locally_largest_time",
    "build_s_process",
    "bismut_sample",
]


class HarvestError(RuntimeError):
    pass


_STAR = make_cone_params(THETA_STAR)


# ---------------------------------------------------------------------------
# harvesting


def _forward_records_from_run(x, y, dt, axis, lo, hi, minor_tol):
    """Accepted (start, slice) pairs from one run's cone-free structure."""
    flags = conefree_flags(x, y)
    idx = np.flatnonzero(flags)
    left, right = excursion_intervals(idx)
    if left.size == 0:
        return []
    zx = x[right] - x[left]
    zy = y[right] - y[left]
    major = zx if axis == 0 else zy
    minor = zy if axis == 0 else zx
    keep = (major >= lo) & (major <= hi) & (np.abs(minor) <= minor_tol)
    return list(zip(left[keep], right[keep], major[keep]))


def harvest_pz(
    params: ConeParams,
    z,
    window: float,
    bm_budget: int,
    rng: RngStream,
    dt: float = 2.5e-4,
    run_steps: int = 2_000_000,
    minor_tol: float | None = None,
    max_records: int | None = None,
    counters: dict | None = None,
) -> list:
    """Forward cone excursions from the exact boundary point z.

    Runs of fresh planar motion are scanned for forward excursions whose
    start lies on the same axis as z within the relative window; each
    accepted path is rescaled (space by the ratio, time by its square) onto
    z exactly.  The boundary-transverse start coordinate is grid noise of
    size sqrt(dt) and is snapped to the axis.
    """
    z = np.asarray(z, dtype=float)
    if not ((z[0] == 0.0) ^ (z[1] == 0.0)):
        raise ValueError("z must sit on one coordinate axis away from 0")
    if not (0 < window < 0.5):
        raise ValueError("window must lie in (0, 0.5)")
    axis = 0 if z[0] > 0 else 1
    target = z[axis]
    lo, hi = target * (1 - window), target * (1 + window)
    if minor_tol is None:
        minor_tol = 5.0 * np.sqrt(dt)
    records = []
    spent = 0
    runs = 0
    while spent < bm_budget:
        n = int(min(run_steps, bm_budget - spent))
        if n < 1000:
            break
        x, yv = simulate_bm_coords(params, dt, n, rng.child(runs))
        runs += 1
        spent += n
        for l, r, major in _forward_records_from_run(x, yv, dt, axis, lo, hi, minor_tol):
            f = target / major
            seg = np.column_stack([x[r : l - 1 if l > 0 else None : -1], yv[r : l - 1 if l > 0 else None : -1]])
            seg = (seg - seg[-1]) * f
            seg[0, 1 - axis] = 0.0
            rec = ExcursionRecord(
                path=SamplePath(dt=dt * f * f, values=seg),
                start_point=seg[0].copy(),
                duration=(r - l) * dt * f * f,
                source_interval=(int(l), int(r)),
                kind=FORWARD_FREE,
            )
            records.append(rec)
            if max_records is not None and len(records) >= max_records:
                break
        if max_records is not None and len(records) >= max_records:
            break
    if counters is not None:
        counters.update(dict(steps=spent, runs=runs, accepted=len(records)))
    if not records:
        raise HarvestError(f"no excursions accepted after {spent} steps in {runs} runs")
    return records


def harvest_backward(
    params: ConeParams,
    band: tuple,
    bm_budget: int,
    rng: RngStream,
    dt: float = 1e-3,
    run_steps: int = 100_000,
    counters: dict | None = None,
) -> list:
    """Backward cone excursions whose start 1-norm lies in the given band.

    Backward cone times deplete quickly along a single run, so the budget is
    spread over many short runs.
    """
    lo, hi = band
    records = []
    spent = 0
    runs = 0
    while spent < bm_budget:
        n = int(min(run_steps, bm_budget - spent))
        if n < 1000:
            break
        x, yv = simulate_bm_coords(params, dt, n, rng.child(runs))
        runs += 1
        spent += n
        flags = backward_cone_flags(x, yv)
        idx = np.flatnonzero(flags)
        left, right = excursion_intervals(idx)
        if left.size == 0:
            continue
        zx = x[left] - x[right]
        zy = yv[left] - yv[right]
        znorm = zx + zy
        keep = (znorm >= lo) & (znorm <= hi)
        for l, r in zip(left[keep], right[keep]):
            seg = np.column_stack([x[l : r + 1] - x[r], yv[l : r + 1] - yv[r]])
            records.append(
                ExcursionRecord(
                    path=SamplePath(dt=dt, values=seg),
                    start_point=seg[0].copy(),
                    duration=(r - l) * dt,
                    source_interval=(int(l), int(r)),
                    kind=BACKWARD,
                )
            )
    if counters is not None:
        counters.update(dict(steps=spent, runs=runs, accepted=len(records)))
    if not records:
        raise HarvestError(f"no backward excursions in band {band} after {spent} steps")
    return records


def sample_duration_biased(records: list, rng: RngStream) -> tuple:
    """Pick a record with probability proportional to duration, and a
    uniform time inside it."""
    if not records:
        raise ValueError("no records to sample from")
    durs = np.array([r.duration for r in records])
    i = int(rng.gen.choice(durs.size, p=durs / durs.sum()))
    T = float(rng.gen.random() * durs[i])
    return records[i], T


# ---------------------------------------------------------------------------
# branch extraction


@dataclass
class BranchProcess:
    """The nested-interval system around a target time, read against
    remaining local time."""

    target_time: float
    varsigma: float
    b_levels: np.ndarray  # increasing local-time levels on the reversed path
    a_levels: np.ndarray  # corresponding fragment times, increasing
    intervals: np.ndarray  # (len, 2) real-time interval endpoints per a-level
    Z: StepFunction  # fragment 1-norm vs fragment time (terminal 0)
    Zvec: StepFunction  # fragment displacement vector vs fragment time


def _reversed_local_time(e_vals, dt, t_idx, eta, normalization, alpha):
    """Counting local time of the reversed pre-t path, per reversed index."""
    rx = np.ascontiguousarray(e_vals[t_idx::-1, 0])
    ry = np.ascontiguousarray(e_vals[t_idx::-1, 1])
    flags = conefree_flags(rx - rx[0], ry - ry[0])
    idx = np.flatnonzero(flags)
    left, right = excursion_intervals(idx)
    dur = (right - left) * dt
    counted = right[dur > eta]
    lt = np.zeros(t_idx + 1)
    if counted.size:
        jump = normalization * eta ** counting_power(alpha, FORWARD_FREE)
        np.add.at(lt, counted, jump)
        np.cumsum(lt, out=lt)
    return lt


def _running_inf_after(e_vals, t_idx):
    """Indices u > t that are simultaneous running infima of the post-t path,
    with the prefix minima of the stretch (t, u] just before each of them."""
    seg = e_vals[t_idx:]
    flags = backward_cone_flags(
        np.ascontiguousarray(seg[:, 0]), np.ascontiguousarray(seg[:, 1])
    )
    flags[0] = False  # t itself does not count
    inf_idx = np.flatnonzero(flags) + t_idx
    return inf_idx


def _suffix_min(e_vals, t_idx):
    """M[g] = componentwise min of the path over [g, t]."""
    m = np.minimum.accumulate(e_vals[t_idx::-1], axis=0)[::-1]
    return m


def extract_branch(
    e: ExcursionRecord,
    t: float,
    lt_grid=None,
    normalization: float = 1.0,
    eta: float | None = None,
    params: ConeParams = _STAR,
) -> BranchProcess:
    """Build the branch process targeted at interior time t of the excursion.

    For each retained local-time level b the interval is (g, d): g lags t by
    the inverse local time of the reversed path, and d is the first
    simultaneous running infimum after t that falls below everything on
    [g, t].  Values are read against a = varsigma - b, so the fragment
    starts from the full displacement and dies at 0.
    """
    v = e.path.values
    dt = e.path.dt
    n = v.shape[0] - 1
    t_idx = int(round(t / dt))
    if not (1 <= t_idx <= n - 1):
        raise ValueError("target time must be strictly inside the excursion grid")
    if eta is None:
        eta = 8.0 * dt
    lt = _reversed_local_time(v, dt, t_idx, eta, normalization, params.alpha)
    varsigma = float(lt[-1])

    if lt_grid is None:
        levels = np.unique(lt)
        b_levels = levels[levels > 0]
        b_levels = np.concatenate([b_levels, [varsigma]]) if b_levels.size == 0 else b_levels
    else:
        b_levels = np.asarray(lt_grid, dtype=float)
    if b_levels.size == 0 or b_levels[-1] < varsigma:
        b_levels = np.unique(np.concatenate([b_levels, [varsigma]]))

    # left endpoints: g = t - tau(b), capped at the excursion start
    tau_idx = np.searchsorted(lt, b_levels, side="right")
    tau_idx = np.minimum(tau_idx, t_idx)
    g_idx = t_idx - tau_idx

    # right endpoints: the simultaneous running infima after t are ordered
    # componentwise, so the first one below M[g] is a pair of searchsorteds
    inf_idx = _running_inf_after(v, t_idx)
    M = _suffix_min(v, t_idx)
    if inf_idx.size:
        ix = -v[inf_idx, 0]
        iy = -v[inf_idx, 1]
        dx = np.searchsorted(ix, -M[g_idx, 0], side="left")
        dy = np.searchsorted(iy, -M[g_idx, 1], side="left")
        pos = np.maximum(dx, dy)
        d_idx = np.where(pos < inf_idx.size, inf_idx[np.minimum(pos, inf_idx.size - 1)], n)
    else:
        d_idx = np.full(g_idx.shape, n)
    # the apex always closes the interval system
    d_idx = np.minimum(d_idx, n)

    order = np.argsort(-b_levels)  # increasing a
    a_levels = varsigma - b_levels[order]
    g_o, d_o = g_idx[order], d_idx[order]
    zvec = v[g_o] - v[d_o]
    zn = np.abs(zvec).sum(axis=1)

    # fragment time grid: append the killing time
    a_bp = np.concatenate([a_levels, [varsigma]])
    keep = np.concatenate([np.diff(a_bp) > 0, [True]])
    zvals = np.concatenate([zn, [0.0]])[keep]
    zvecs = np.vstack([zvec, [0.0, 0.0]])[keep]
    a_bp = a_bp[keep]
    if a_bp[0] > 0:
        a_bp = np.concatenate([[0.0], a_bp])
        zvals = np.concatenate([[zn[0] if zn.size else 0.0], zvals])
        zvecs = np.vstack([zvec[0] if zvec.size else [0.0, 0.0], zvecs])
    intervals = dt * np.column_stack([g_o, d_o])
    return BranchProcess(
        target_time=t_idx * dt,
        varsigma=varsigma,
        b_levels=b_levels[order][::-1],
        a_levels=a_levels,
        intervals=intervals,
        Z=StepFunction(a_bp, zvals),
        Zvec=StepFunction(a_bp, zvecs),
    )


def _interval_at(e, t_idx, a, normalization, eta, params=_STAR):
    """(g_idx, d_idx, varsigma) of the interval around t at fragment time a."""
    v = e.path.values
    dt = e.path.dt
    n = v.shape[0] - 1
    lt = _reversed_local_time(v, dt, t_idx, eta, normalization, params.alpha)
    varsigma = float(lt[-1])
    b = varsigma - a
    if b < 0:
        return None
    tau = min(int(np.searchsorted(lt, b, side="right")), t_idx)
    g = t_idx - tau
    inf_idx = _running_inf_after(v, t_idx)
    M = np.minimum.accumulate(v[t_idx::-1], axis=0)[::-1]
    if inf_idx.size:
        dx = np.searchsorted(-v[inf_idx, 0], -M[g, 0], side="left")
        dy = np.searchsorted(-v[inf_idx, 1], -M[g, 1], side="left")
        pos = max(dx, dy)
        d = int(inf_idx[pos]) if pos < inf_idx.size else n
    else:
        d = n
    return g, min(d, n), varsigma


def locally_largest_time(
    e: ExcursionRecord,
    normalization: float = 1.0,
    eta: float | None = None,
    params: ConeParams = _STAR,
    max_iter: int = 200,
) -> float:
    """Grid time whose branch keeps more than half the norm at every split.

    Follows a candidate target's branch until the first recorded level where
    the retained fraction drops to half or less, then moves the target into
    the complementary piece carrying the larger norm and continues; each
    correction strictly advances the violation level.
    """
    v = e.path.values
    dt = e.path.dt
    n = v.shape[0] - 1
    if eta is None:
        eta = 8.0 * dt
    t_idx = n // 2
    for _ in range(max_iter):
        br = extract_branch(e, t_idx * dt, normalization=normalization, eta=eta, params=params)
        g = np.round(br.intervals[:, 0] / dt).astype(np.int64)
        d = np.round(br.intervals[:, 1] / dt).astype(np.int64)
        z = br.Z.values[: g.size] if br.Z.values.size >= g.size else br.Z.values
        bad = None
        for k in range(1, g.size):
            if z[k] <= 0.5 * z[k - 1]:
                bad = k
                break
        if bad is None:
            return t_idx * dt
        a_bad = br.a_levels[bad]
        cands = []
        left_piece = (g[bad - 1], g[bad])
        right_piece = (d[bad], d[bad - 1])
        for lo, hi in (left_piece, right_piece):
            if hi - lo >= 2:
                mid = int((lo + hi) // 2)
                mid = min(max(mid, 1), n - 1)
                got = _interval_at(e, mid, a_bad, normalization, eta, params)
                if got is None:
                    continue
                gg, dd, _ = got
                val = float(np.abs(v[gg] - v[dd]).sum())
                cands.append((val, mid))
        if not cands:
            return t_idx * dt
        best_val, best_mid = max(cands)
        if best_val <= z[bad]:
            # the probed pieces are no larger: current branch already largest
            return t_idx * dt
        t_idx = best_mid
    return t_idx * dt


# ---------------------------------------------------------------------------
# the two-motion construction


@dataclass
class SProcessPath:
    L: float
    U: float
    a_grid: np.ndarray
    Y: StepFunction
    S: StepFunction
    frak_s: StepFunction
    truncated: bool


def _forward_subordinated(x, y, dt, eta, normalization, alpha):
    """(attained local-time levels, subordinated values at those levels)."""
    flags = conefree_flags(x, y)
    idx = np.flatnonzero(flags)
    left, right = excursion_intervals(idx)
    dur = (right - left) * dt
    counted = right[dur > eta]
    jump = normalization * eta ** counting_power(alpha, FORWARD_FREE)
    levels = jump * np.arange(1, counted.size + 1)
    return levels, counted


def build_s_process(
    L: float,
    horizon: float,
    dt: float,
    normalization: float,
    rng: RngStream,
    a_grid=None,
    eta: float | None = None,
    params: ConeParams = _STAR,
    max_doublings: int = 5,
    backward_normalization: float = 1.0,
) -> SProcessPath:
    """Sample the norm process of the first-passage coupling of two motions.

    One motion starts at L * (U, 1-U) and is re-parametrized by forward
    cone-free local time; the other starts at the origin and contributes its
    simultaneous running minima.  At each local time the construction reads
    the first minimum dominated by the running infima of the first motion.
    """
    if L < 0:
        raise ValueError("L must be nonnegative")
    if eta is None:
        eta = 5.0 * dt
    if a_grid is None:
        a_grid = np.linspace(0.0, 1.0, 51)[1:]
    a_grid = np.asarray(a_grid, dtype=float)
    a_max = a_grid[-1]
    u = float(rng.gen.random())
    start = (L * u, L * (1.0 - u))

    # grow the re-parametrized motion until its local time passes a_max
    n0 = int(round(horizon / dt))
    xp, yp = simulate_bm_coords(params, dt, n0, rng.child(1), start=start)
    truncated = False
    for k in range(max_doublings + 1):
        levels, counted = _forward_subordinated(xp, yp, dt, eta, normalization, params.alpha)
        if levels.size and levels[-1] >= a_max:
            break
        if k == max_doublings:
            truncated = True
            break
        x2, y2 = simulate_bm_coords(
            params, dt, xp.size - 1, rng.child(100 + k), start=(xp[-1], yp[-1])
        )
        xp = np.concatenate([xp, x2[1:]])
        yp = np.concatenate([yp, y2[1:]])

    if levels.size == 0:
        raise HarvestError("no local time accrued; increase horizon or budget")
    # subordinated values with the start prepended, so running infima see the
    # value at local time zero
    sub = np.vstack([np.array(start), np.column_stack([xp[counted], yp[counted]])])
    vmin = np.minimum.accumulate(sub, axis=0)
    gi = np.searchsorted(levels, a_grid, side="right")  # index into sub (shifted by 1)
    ok = gi <= levels.size
    gi = np.minimum(gi, levels.size)
    xi_prime = sub[gi]
    v_grid = vmin[gi]

    # grow the second motion until its minima dominate the deepest target
    need = vmin[-1]
    nb = int(round(horizon / dt))
    xb, yb = simulate_bm_coords(params, dt, nb, rng.child(2))
    for k in range(max_doublings + 1):
        flags = backward_cone_flags(xb, yb)
        cidx = np.flatnonzero(flags)
        cx, cy = xb[cidx], yb[cidx]
        if cx.size and cx[-1] <= need[0] and cy[-1] <= need[1]:
            break
        if k == max_doublings:
            truncated = True
            break
        x2, y2 = simulate_bm_coords(
            params, dt, xb.size - 1, rng.child(200 + k), start=(xb[-1], yb[-1])
        )
        xb = np.concatenate([xb, x2[1:]])
        yb = np.concatenate([yb, y2[1:]])

    # first simultaneous minimum below the running infima, per grid time
    jx = np.searchsorted(-cx, -v_grid[:, 0], side="left")
    jy = np.searchsorted(-cy, -v_grid[:, 1], side="left")
    j = np.maximum(jx, jy)
    dominated = j < cx.size
    j = np.minimum(j, cx.size - 1)
    yvec = xi_prime - np.column_stack([cx[j], cy[j]])
    svals = yvec.sum(axis=1)

    # backward counting local time at the chosen minima, for the time change
    eta_b = eta
    bleft, bright = excursion_intervals(cidx)
    bcount = np.zeros(cidx.size)
    long_b = np.flatnonzero((bright - bleft) * dt > eta_b)
    if long_b.size:
        np.add.at(bcount, long_b + 1, 1.0)
        np.cumsum(bcount, out=bcount)
    quantum_b = backward_normalization * eta_b ** counting_power(params.alpha, BACKWARD)
    s_lt = quantum_b * bcount[j]

    # prepend the exact start
    a_bp = np.concatenate([[0.0], a_grid])
    yv = np.vstack([np.array(start), yvec])
    sv = np.concatenate([[L], svals])
    fs = np.concatenate([[0.0], s_lt])
    trunc_mask = np.concatenate([[False], ~ok | ~dominated])
    return SProcessPath(
        L=L,
        U=u,
        a_grid=a_grid,
        Y=StepFunction(a_bp, yv, truncated=trunc_mask),
        S=StepFunction(a_bp, sv, truncated=trunc_mask),
        frak_s=StepFunction(a_bp, fs, truncated=trunc_mask),
        truncated=bool(truncated or (~ok).any() or (~dominated).any()),
    )


def bismut_sample(
    a: float,
    horizon: float,
    dt: float,
    normalization: float,
    rng: RngStream,
    eta: float | None = None,
    params: ConeParams = _STAR,
    max_doublings: int = 5,
):
    """(past, future) paths of the tagged-time description at local time a.

    The past runs until its cone-free local time reaches a; the future is an
    independent motion stopped at its first simultaneous running infimum
    lying below the whole past.
    """
    if a <= 0:
        raise ValueError("a must be positive")
    if eta is None:
        eta = 5.0 * dt
    n0 = int(round(horizon / dt))
    xp, yp = simulate_bm_coords(params, dt, n0, rng.child(1))
    stop = None
    for k in range(max_doublings + 1):
        levels, counted = _forward_subordinated(xp, yp, dt, eta, normalization, params.alpha)
        pos = np.searchsorted(levels, a, side="right")
        if pos < levels.size:
            stop = counted[pos]
            break
        if k == max_doublings:
            raise HarvestError("past horizon exhausted before reaching local time a")
        x2, y2 = simulate_bm_coords(
            params, dt, xp.size - 1, rng.child(100 + k), start=(xp[-1], yp[-1])
        )
        xp = np.concatenate([xp, x2[1:]])
        yp = np.concatenate([yp, y2[1:]])
    past = SamplePath(dt=dt, values=np.column_stack([xp[: stop + 1], yp[: stop + 1]]))

    m = past.values.min(axis=0)
    xb, yb = simulate_bm_coords(params, dt, n0, rng.child(2))
    for k in range(max_doublings + 1):
        flags = backward_cone_flags(xb, yb)
        cidx = np.flatnonzero(flags)
        sel = (xb[cidx] <= m[0]) & (yb[cidx] <= m[1])
        if sel.any():
            stop_f = cidx[np.argmax(sel)]
            future = SamplePath(dt=dt, values=np.column_stack([xb[: stop_f + 1], yb[: stop_f + 1]]))
            return past, future
        if k == max_doublings:
            raise HarvestError("future horizon exhausted before the stopping rule fired")
        x2, y2 = simulate_bm_coords(
            params, dt, xb.size - 1, rng.child(200 + k), start=(xb[-1], yb[-1])
        )
        xb = np.concatenate([xb, x2[1:]])
        yb = np.concatenate([yb, y2[1:]])
