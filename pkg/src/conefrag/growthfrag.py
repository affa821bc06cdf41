"""Cell systems on the Ulam tree driven by the locally largest evolution,
snapshots, the quadratic genealogical functional, and the excursion-side
counterparts.

Cells are simulated in driving-process time and pruned by generation and
minimum mass.  Pruning losses are tracked in squared-mass units: each dropped
subtree contributes its initial mass squared in expectation, and the
below-cutoff jumps never spawned are accounted through the quadratic flux of
the small-jump region times the observed exponential functional.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import RngStream, SamplePath, norm1
from .conetime import ExcursionRecord
from .excursionlab import extract_branch, locally_largest_time
from .lamperti import LevyConfig, lamperti_clock, simulate_levy, xi_star_config

__all__ = [
    "UlamLabel",
    "Cell",
    "CellSystem",
    "BudgetError",
    "grow_cell_system",
    "gf_snapshot",
    "martingale_M",
    "extract_gf_from_excursion",
    "excursion_cell_system",
]

SQRT3 = np.sqrt(3.0)


class BudgetError(RuntimeError):
    pass


@dataclass(frozen=True)
class UlamLabel:
    """A node of the Ulam tree: the path from the root as integer indices."""

    path: tuple = ()

    @property
    def generation(self) -> int:
        return len(self.path)

    def child(self, k: int) -> "UlamLabel":
        return UlamLabel(self.path + (k,))

    def __repr__(self):
        return "<root>" if not self.path else ".".join(str(i) for i in self.path)


@dataclass
class Cell:
    label: UlamLabel
    birth_time: float
    initial_mass: float
    lifetime: float
    dropped_sq: float  # mass^2 of observed children below the cutoff
    subdelta_sq: float  # estimated mass^2 flux of never-spawned tiny jumps
    trajectory: tuple | None = None  # (real times, sizes), kept on demand


@dataclass
class CellSystem:
    cells: dict
    max_generation: int
    min_mass: float
    start_mass: float

    def generation(self, n: int):
        return [c for c in self.cells.values() if c.label.generation == n]


_CFG_CACHE: dict = {}


def _star_cfg(delta: float) -> LevyConfig:
    if delta not in _CFG_CACHE:
        cfg = xi_star_config(delta=delta)
        drift_eff, var = cfg.sim_coefficients()
        # quadratic flux of the sub-cutoff jump region, for loss accounting
        qflux = cfg._integrate_density(lambda y: np.expm1(y) ** 2, (-delta, 0.0))
        _CFG_CACHE[delta] = (cfg, drift_eff, qflux)
    return _CFG_CACHE[delta]


def _estimate_cell_count(x: float, n_gen: int, m: float) -> float:
    """Coarse expectation of the number of simulated cells before pruning."""
    if n_gen == 0:
        return 1.0
    ratio = max(x / m, 1.0)
    kappa = 0.1875  # -1 / exponent value at 3/2, rounded up a touch
    n1 = (4.0 / 3.0) * ratio**1.5 * kappa
    branch = (4.0 / 3.0) * kappa * 1.5 * max(np.log(ratio / 2.0), 0.1)
    total, level = 1.0, n1
    for _ in range(n_gen):
        total += level
        level *= branch
    return total


def _simulate_cell(
    x: float,
    min_mass: float,
    dt: float,
    rng: RngStream,
    cfg: LevyConfig,
    qflux: float,
    store_path: bool,
    max_levy_time: float = 60.0,
):
    """One cell from mass x: (children (time, mass) list, lifetime, losses)."""
    # children can only reach min_mass while exp(xi) >= 2*min_mass/x
    xi_stop = np.log(2.0 * min_mass / x) if min_mass > 0 else -12.0
    chunk = min(max(1.0, abs(xi_stop) / 4.0), max_levy_time)
    xi0 = 0.0
    clock0 = 0.0
    int_e2 = 0.0
    children = []
    dropped_sq = 0.0
    t_used = 0.0
    traj = [] if store_path else None
    while t_used < max_levy_time:
        piece = simulate_levy(cfg, chunk, dt, rng.child(int(t_used / dt) + 1), return_jumps=True)
        vals = piece.path.values + xi0
        e15 = np.exp(1.5 * vals)
        seg_clock = lamperti_clock(vals, dt, 1.5)
        int_e2 += np.trapezoid(np.exp(2.0 * vals), dx=dt)
        if piece.jump_steps.size:
            order = np.argsort(piece.jump_steps, kind="stable")
            steps = piece.jump_steps[order]
            sizes = piece.jump_sizes[order]
            pre = vals[steps]  # grid-left value approximates the pre-jump state
            masses = x * np.exp(pre) * (-np.expm1(sizes))
            births = x**1.5 * (clock0 + seg_clock[steps])
            big = masses >= min_mass
            dropped_sq += float((masses[~big] ** 2).sum())
            children.extend(zip(births[big], masses[big]))
        if store_path:
            traj.append((x**1.5 * (clock0 + seg_clock), x * np.exp(vals)))
        xi0 = vals[-1]
        clock0 += seg_clock[-1]
        t_used += chunk
        if xi0 < xi_stop:
            break
    # remaining real lifetime once below the threshold is bounded by the
    # frozen-clock extrapolation; absorbed cells have negligible remainder
    lifetime = x**1.5 * (clock0 + np.exp(1.5 * xi0) * 0.2)
    subdelta_sq = x * x * int_e2 * qflux
    if store_path and traj:
        times = np.concatenate([t for t, _ in traj])
        sizes = np.concatenate([s for _, s in traj])
        return children, lifetime, dropped_sq, subdelta_sq, (times, sizes)
    return children, lifetime, dropped_sq, subdelta_sq, None


def grow_cell_system(
    start_mass: float,
    max_generation: int,
    min_mass: float,
    horizon: float,
    rng: RngStream,
    dt: float = 2e-3,
    delta: float = 1e-3,
    budget: int = 200_000,
    store_paths: bool = False,
) -> CellSystem:
    """Simulate the branching cell system down to the pruning thresholds."""
    if start_mass <= 0 or min_mass <= 0:
        raise ValueError("masses must be positive")
    if max_generation < 0:
        raise ValueError("max_generation must be nonnegative")
    est = _estimate_cell_count(start_mass, max_generation, min_mass)
    if est > budget:
        raise BudgetError(
            f"estimated cell count {est:.0f} exceeds budget {budget}; "
            "raise min_mass or lower max_generation"
        )
    cfg, _, qflux = _star_cfg(delta)
    cells = {}
    queue = [(UlamLabel(), 0.0, float(start_mass))]
    k = 0
    while queue:
        label, birth, mass = queue.pop()
        k += 1
        if k > budget:
            raise BudgetError(f"cell budget {budget} exhausted during simulation")
        kids, lifetime, drop_sq, sub_sq, traj = _simulate_cell(
            mass, min_mass, dt, rng.child(k), cfg, qflux, store_paths and mass > 0
        )
        cells[label] = Cell(
            label=label,
            birth_time=birth,
            initial_mass=mass,
            lifetime=lifetime,
            dropped_sq=drop_sq,
            subdelta_sq=sub_sq,
            trajectory=traj,
        )
        if label.generation < max_generation:
            # rank children by descending initial mass for labeling
            for i, (bt, cm) in enumerate(
                sorted(kids, key=lambda km: -km[1]), start=1
            ):
                queue.append((label.child(i), birth + bt, cm))
        else:
            cells[label].dropped_sq += float(sum(cm * cm for _, cm in kids))
    return CellSystem(
        cells=cells,
        max_generation=max_generation,
        min_mass=min_mass,
        start_mass=start_mass,
    )


def gf_snapshot(system: CellSystem, a: float) -> list:
    """Sizes of the cells alive at time a (current size where stored,
    initial mass as a fallback for path-free systems)."""
    if a < 0:
        raise ValueError("time must be nonnegative")
    out = []
    for c in system.cells.values():
        if c.birth_time <= a < c.birth_time + c.lifetime:
            if c.trajectory is not None:
                t, s = c.trajectory
                i = np.searchsorted(t, a - c.birth_time, side="right") - 1
                out.append(float(s[max(i, 0)]))
            else:
                out.append(c.initial_mass)
    return out


def martingale_M(system: CellSystem, n: int, with_loss: bool = False):
    """(1/sqrt 3) * sum of squared initial masses over generation n."""
    if n > system.max_generation:
        raise ValueError("generation beyond the simulated truncation")
    val = sum(c.initial_mass**2 for c in system.generation(n)) / SQRT3
    if not with_loss:
        return val
    loss = (
        sum(
            c.dropped_sq + c.subdelta_sq
            for c in system.cells.values()
            if c.label.generation < n
        )
        / SQRT3
    )
    return val, loss


# ---------------------------------------------------------------------------
# excursion-side counterparts


def extract_gf_from_excursion(
    e: ExcursionRecord,
    target_times,
    lt_grid,
    normalization: float = 1.0,
    eta: float | None = None,
) -> list:
    """Fragment multiset at each requested level, deduplicated by interval."""
    lt_grid = np.asarray(lt_grid, dtype=float)
    branches = [
        extract_branch(e, t, normalization=normalization, eta=eta) for t in target_times
    ]
    out = []
    for a in lt_grid:
        seen = {}
        for br in branches:
            if br.varsigma <= a:
                continue
            k = int(np.searchsorted(br.a_levels, a, side="right")) - 1
            if k < 0:
                k = 0
            key = (round(br.intervals[k, 0], 12), round(br.intervals[k, 1], 12))
            seen[key] = float(br.Z.values[k])
        out.append(sorted(seen.values(), reverse=True))
    return out


def excursion_cell_system(
    e: ExcursionRecord,
    max_generation: int,
    min_mass: float,
    normalization: float = 1.0,
    eta: float | None = None,
    max_cells: int = 3000,
) -> dict:
    """Generation -> list of initial fragment masses, following at each cell
    the locally largest branch and spawning children at its negative jumps."""
    gens = {0: [float(norm1(e.start_point))]}
    queue = [(0, e)]
    count = 0
    while queue:
        gen, rec = queue.pop()
        count += 1
        if count > max_cells:
            break
        if gen >= max_generation:
            continue
        n = rec.path.values.shape[0] - 1
        if n < 8:
            continue
        try:
            ts = locally_largest_time(rec, normalization=normalization, eta=eta)
            br = extract_branch(rec, ts, normalization=normalization, eta=eta)
        except ValueError:
            continue
        g = np.round(br.intervals[:, 0] / rec.path.dt).astype(np.int64)
        d = np.round(br.intervals[:, 1] / rec.path.dt).astype(np.int64)
        z = br.Z.values
        v = rec.path.values
        for k in range(1, g.size):
            drop = z[k - 1] - z[k]
            if drop < min_mass:
                continue
            # the excised piece carrying the lost norm becomes the child
            pieces = []
            if g[k] - g[k - 1] >= 2:
                pieces.append((int(g[k - 1]), int(g[k])))
            if d[k - 1] - d[k] >= 2:
                pieces.append((int(d[k]), int(d[k - 1])))
            best = None
            for lo, hi in pieces:
                disp = float(np.abs(v[lo] - v[hi]).sum())
                if best is None or abs(disp - drop) < abs(best[0] - drop):
                    best = (disp, lo, hi)
            if best is None:
                continue
            _, lo, hi = best
            seg = v[lo : hi + 1] - v[hi]
            child = ExcursionRecord(
                path=SamplePath(dt=rec.path.dt, values=seg),
                start_point=seg[0].copy(),
                duration=(hi - lo) * rec.path.dt,
                source_interval=(lo, hi),
                kind=rec.kind,
            )
            gens.setdefault(gen + 1, []).append(float(drop))
            queue.append((gen + 1, child))
    return gens
