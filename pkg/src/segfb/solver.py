"""Minimizers of the penalized trace-coupling energy and of the hard-segregated energy.

The penalized functional on the upper half box is

    J_beta(u) = sum_i (1/2) int |grad u_i|^2 + beta sum_{i<j} int_{z=0} u_i^2 u_j^2,

discretized with trapezoidal layer weights in z (in-plane edges at z = 0 and
z = z_top count half).  Relaxation is red-black Gauss-Seidel: nodes of one
parity class share no edge, so updating a whole color to its exact local
minimizer is an exact block minimization and the recorded energy can never
increase.  At a trace node the local energy in s = u_i(P) is
(A/2) s^2 - B s + beta w s^2 * sum_{j!=i} u_j(P)^2 with the neighbors frozen,
so the first-order condition is linear in s and solved in closed form.

The hard-segregated minimizer alternates (a) harmonic relaxation of every
component off its current trace zero set with (b) re-projection of the trace
supports, keeping at each trace node the component with the largest
unconstrained one-node replacement value (ties to the lowest index), which is
the exact local constrained minimizer.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import PreconditionError
from .grid import SUPPORT_THRESHOLD, Configuration, ExtensionGrid, ScalarField, interpolate


@dataclass
class SolveConfig:
    tolerance: float = 1e-10          # relative energy decrease per sweep
    max_sweeps: int = 50000           # total sweep budget for the run
    beta_schedule: tuple = ()         # ascending warm-start stages for penalized solves
    projection_rule: str = "max"      # trace support projection (only rule implemented)
    inner_block: int = 50             # sweeps between segregated support projections

    def __post_init__(self):
        bs = tuple(self.beta_schedule)
        if any(b <= 0 for b in bs) or list(bs) != sorted(bs):
            raise PreconditionError("beta_schedule must be positive and ascending")
        if self.projection_rule != "max":
            raise PreconditionError("unknown projection rule")
        self.beta_schedule = bs


@dataclass
class BoundaryData:
    """Per-component full-shape arrays; entries at Dirichlet nodes are the data,
    interior entries seed the iteration."""

    grid: ExtensionGrid
    arrays: list

    def __post_init__(self):
        for a in self.arrays:
            if a.shape != self.grid.shape:
                raise PreconditionError("boundary array shape mismatch")

    @property
    def k(self) -> int:
        return len(self.arrays)


def boundary_from_fields(fields) -> BoundaryData:
    return BoundaryData(fields[0].grid, [f.values.copy() for f in fields])


@dataclass
class SolveResult:
    configuration: Configuration
    energy: float
    defect: float
    sweeps: int
    converged: bool
    energy_history: list = field(default_factory=list)
    defect_history: list = field(default_factory=list)
    support_cycle: bool = False

    def summary_json(self) -> str:
        return json.dumps(
            {
                "energy": self.energy,
                "segregation_defect": self.defect,
                "sweeps": self.sweeps,
                "converged": self.converged,
                "support_cycle": self.support_cycle,
                "components": self.configuration.k,
            },
            sort_keys=True,
        )


# ---------------------------------------------------------------------------
# discrete energy


def dirichlet_energy_upper(grid: ExtensionGrid, vals: np.ndarray) -> float:
    """int_{z>0} |grad u|^2 by edge sums with trapezoidal z-layer weights."""
    h = grid.h
    n = grid.n
    nz = grid.shape[n]
    wz = np.ones(nz)
    wz[0] = 0.5
    wz[-1] = 0.5
    total = 0.0
    for a in range(n):
        d = np.diff(vals, axis=a)
        total += float(np.sum(d * d * wz.reshape((1,) * n + (-1,))))
    d = np.diff(vals, axis=n)
    total += float(np.sum(d * d))
    return total * h ** (n - 1)


def _trace_weights(grid: ExtensionGrid) -> np.ndarray:
    w = np.ones(grid.shape[:-1])
    for a in range(grid.n):
        sl = [slice(None)] * grid.n
        sl[a] = 0
        w[tuple(sl)] *= 0.5
        sl[a] = -1
        w[tuple(sl)] *= 0.5
    return w


def trace_coupling(grid: ExtensionGrid, arrays) -> float:
    """sum_{i<j} int_{z=0} u_i^2 u_j^2 (the segregation defect)."""
    w = _trace_weights(grid)
    total = 0.0
    k = len(arrays)
    for i in range(k):
        ti = arrays[i][..., 0] ** 2
        for j in range(i + 1, k):
            total += float(np.sum(w * ti * arrays[j][..., 0] ** 2))
    return total * grid.h**grid.n


def penalized_energy(grid: ExtensionGrid, arrays, beta: float) -> float:
    return 0.5 * sum(dirichlet_energy_upper(grid, a) for a in arrays) + beta * trace_coupling(
        grid, arrays
    )


def segregated_energy(grid: ExtensionGrid, arrays) -> float:
    """sum_i int_{full box} |grad u_i|^2 (even reflection doubles the half)."""
    return 2.0 * sum(dirichlet_energy_upper(grid, a) for a in arrays)


# ---------------------------------------------------------------------------
# sweep machinery


def _neighbor_sum(grid: ExtensionGrid, u: np.ndarray) -> np.ndarray:
    """Sum of stencil neighbors with even reflection at z=0.

    Entries on x-faces and the top layer wrap garbage; those nodes are
    Dirichlet and never updated."""
    n = grid.n
    out = np.zeros_like(u)
    for a in range(n):
        out += np.roll(u, 1, axis=a) + np.roll(u, -1, axis=a)
    up = np.empty_like(u)
    up[..., :-1] = u[..., 1:]
    up[..., -1] = u[..., -2]
    down = np.empty_like(u)
    down[..., 1:] = u[..., :-1]
    down[..., 0] = u[..., 1]  # ghost below the trace = mirror above
    out += up + down
    return out


def _parity_masks(grid: ExtensionGrid):
    idx = np.indices(grid.shape).sum(axis=0)
    even = (idx % 2) == 0
    return even, ~even


class _Relaxer:
    def __init__(self, grid: ExtensionGrid, k: int):
        self.grid = grid
        self.k = k
        self.even, self.odd = _parity_masks(grid)
        self.free = ~grid.boundary_mask()
        self.denom0 = 2.0 * (grid.n + 1)

    def sweep_penalized(self, arrays, beta: float) -> None:
        g = self.grid
        for color in (self.even, self.odd):
            for i in range(self.k):
                ns = _neighbor_sum(g, arrays[i])
                cand = ns / self.denom0
                if beta > 0 and self.k > 1:
                    coup = np.zeros(g.shape[:-1])
                    for j in range(self.k):
                        if j != i:
                            coup += arrays[j][..., 0] ** 2
                    cand_tr = ns[..., 0] / (self.denom0 + 4.0 * beta * g.h * coup)
                    cand[..., 0] = cand_tr
                np.maximum(cand, 0.0, out=cand)
                m = color & self.free
                arrays[i][m] = cand[m]

    def sweep_harmonic(self, arrays, supports) -> None:
        """Relax all components with trace supports held fixed."""
        g = self.grid
        for color in (self.even, self.odd):
            for i in range(self.k):
                ns = _neighbor_sum(g, arrays[i])
                cand = ns / self.denom0
                np.maximum(cand, 0.0, out=cand)
                m = color & self.free
                if supports is not None:
                    allowed = np.ones(g.shape, dtype=bool)
                    allowed[..., 0] = supports[i]
                    m = m & allowed
                arrays[i][m] = cand[m]

    def project_supports(self, arrays, interior_trace: np.ndarray):
        """Keep the componentwise-largest replacement value at each interior
        trace node, zero the rest; returns the new support masks.

        Runs per parity color (trace nodes of one color share no edge), so
        each pass is an exact local constrained minimization and the energy
        cannot increase."""
        g = self.grid
        winner = np.zeros(g.shape[:-1], dtype=int)
        for color in (self.even, self.odd):
            cands = []
            for i in range(self.k):
                ns = _neighbor_sum(g, arrays[i])
                cands.append(np.maximum(ns[..., 0] / self.denom0, 0.0))
            stack = np.stack(cands)  # (k, trace shape)
            win = np.argmax(stack, axis=0)  # ties -> lowest index
            m = interior_trace & color[..., 0]
            winner[m] = win[m]
            for i in range(self.k):
                newvals = np.where(win == i, cands[i], 0.0)
                arrays[i][..., 0] = np.where(m, newvals, arrays[i][..., 0])
        supports = []
        for i in range(self.k):
            supp = np.where(
                interior_trace, winner == i, arrays[i][..., 0] > SUPPORT_THRESHOLD
            )
            supports.append(supp)
        return supports


def _interior_trace_mask(grid: ExtensionGrid) -> np.ndarray:
    m = np.ones(grid.shape[:-1], dtype=bool)
    for a in range(grid.n):
        sl = [slice(None)] * grid.n
        sl[a] = 0
        m[tuple(sl)] = False
        sl[a] = -1
        m[tuple(sl)] = False
    return m


def _init_arrays(boundary: BoundaryData, init: Configuration | None):
    if init is None:
        return [a.copy() for a in boundary.arrays]
    grid = boundary.grid
    pts = grid.points()
    arrays = []
    for i, f in enumerate(init.fields):
        vals = interpolate(f, pts).reshape(grid.shape)
        a = boundary.arrays[i].copy()
        free = ~grid.boundary_mask()
        a[free] = vals[free]
        arrays.append(np.maximum(a, 0.0))
    return arrays


# ---------------------------------------------------------------------------
# public solves


def solve_penalized(boundary: BoundaryData, beta: float, cfg: SolveConfig | None = None,
                    init: Configuration | None = None) -> SolveResult:
    """Minimize J_beta with fixed boundary data.

    If cfg.beta_schedule is set, stages below beta are swept first with warm
    starts.  Non-convergence (sweep budget exhausted while the energy still
    moves) is returned as a flagged result, not an error.
    """
    cfg = cfg or SolveConfig()
    if beta < 0:
        raise PreconditionError("beta must be nonnegative")
    grid = boundary.grid
    _validate_boundary(boundary)
    arrays = _init_arrays(boundary, init)
    relax = _Relaxer(grid, boundary.k)
    stages = [b for b in cfg.beta_schedule if b < beta] + [beta]
    history = []
    defects = []
    sweeps = 0
    converged = True
    for stage in stages:
        energy = penalized_energy(grid, arrays, stage)
        history.append(energy)
        stage_done = False
        while not stage_done:
            if sweeps >= cfg.max_sweeps:
                converged = False
                break
            relax.sweep_penalized(arrays, stage)
            sweeps += 1
            new_energy = penalized_energy(grid, arrays, stage)
            history.append(new_energy)
            if energy - new_energy <= cfg.tolerance * max(abs(new_energy), 1.0):
                stage_done = True
            energy = new_energy
        defects.append(trace_coupling(grid, arrays))
        if not converged:
            break
    fields = [ScalarField(grid, a) for a in arrays]
    config = Configuration(fields, mode="penalized", beta=beta,
                           boundary=[a.copy() for a in boundary.arrays])
    return SolveResult(
        configuration=config,
        energy=history[-1],
        defect=defects[-1],
        sweeps=sweeps,
        converged=converged,
        energy_history=history,
        defect_history=defects,
    )


def solve_segregated(boundary: BoundaryData, cfg: SolveConfig | None = None,
                     init: Configuration | None = None) -> SolveResult:
    """Minimize the segregated energy: harmonic relaxation alternated with
    trace support re-projection until supports are stable and the energy
    decrease falls below tolerance."""
    cfg = cfg or SolveConfig()
    grid = boundary.grid
    _validate_boundary(boundary, segregated=True)
    arrays = _init_arrays(boundary, init)
    relax = _Relaxer(grid, boundary.k)
    interior_trace = _interior_trace_mask(grid)

    supports = relax.project_supports(arrays, interior_trace)
    energy = segregated_energy(grid, arrays)
    history = [energy]
    sweeps = 0
    converged = True
    cycle = False
    frozen = False
    seen = {}
    recent = []
    prev_fp = None
    while True:
        # (a) relax with supports fixed
        block_done = False
        while not block_done:
            if sweeps >= cfg.max_sweeps:
                converged = False
                break
            for _ in range(min(cfg.inner_block, cfg.max_sweeps - sweeps)):
                relax.sweep_harmonic(arrays, supports)
                sweeps += 1
                new_energy = segregated_energy(grid, arrays)
                history.append(new_energy)
                if energy - new_energy <= cfg.tolerance * max(abs(new_energy), 1.0):
                    block_done = True
                    energy = new_energy
                    break
                energy = new_energy
            else:
                block_done = sweeps >= cfg.max_sweeps
        if not converged:
            break
        if frozen:
            break
        # (b) re-project supports
        supports = relax.project_supports(arrays, interior_trace)
        new_energy = segregated_energy(grid, arrays)
        history.append(new_energy)
        stable = (energy - new_energy) <= cfg.tolerance * max(abs(new_energy), 1.0)
        energy = new_energy
        fp = tuple(np.packbits(s).tobytes() for s in supports)
        if fp == prev_fp and stable:
            break
        outer = len(recent)
        if fp in seen and seen[fp] != outer - 1:
            # support oscillation: freeze the lexicographically smallest
            # support in the cycle and do one final relaxation pass
            cycle = True
            cycle_fps = [f for f, _ in recent[seen[fp]:]] + [fp]
            best = min(cycle_fps)
            for f, s in recent[seen[fp]:]:
                if f == best:
                    supports = s
                    break
            for i in range(boundary.k):
                arrays[i][..., 0] = np.where(
                    interior_trace & ~supports[i], 0.0, arrays[i][..., 0]
                )
            frozen = True
        seen[fp] = outer
        recent.append((fp, [s.copy() for s in supports]))
        if len(recent) > 16:
            recent.pop(0)
            seen = {f: i for i, (f, _) in enumerate(recent)}
        prev_fp = fp

    fields = [ScalarField(grid, a) for a in arrays]
    config = Configuration(fields, mode="segregated",
                           boundary=[a.copy() for a in boundary.arrays])
    return SolveResult(
        configuration=config,
        energy=energy,
        defect=trace_coupling(grid, arrays),
        sweeps=sweeps,
        converged=converged,
        energy_history=history,
        support_cycle=cycle,
    )


def _validate_boundary(boundary: BoundaryData, segregated: bool = False) -> None:
    bmask = boundary.grid.boundary_mask()
    for a in boundary.arrays:
        if np.any(a[bmask] < -1e-12):
            raise PreconditionError("boundary data must be nonnegative")
    if segregated and boundary.k > 1:
        tr = [a[..., 0] for a in boundary.arrays]
        edge = ~_interior_trace_mask(boundary.grid)
        pos = np.stack([t > SUPPORT_THRESHOLD for t in tr])
        if np.any(pos[:, edge].sum(axis=0) > 1):
            raise PreconditionError("trace boundary data must be segregated")


# ---------------------------------------------------------------------------
# residuals


def residual_report(result: SolveResult, exclusion: float | None = None) -> list:
    """Per-component sup of |Delta_h u_i| off the nodal set.

    Nodes within `exclusion` (default 2h) of the extracted free boundary are
    skipped, as are zero-plate trace nodes and Dirichlet nodes.
    """
    from scipy.spatial import cKDTree

    from .grid import laplacian_array

    config = result.configuration
    grid = config.grid
    if exclusion is None:
        exclusion = 2 * grid.h
    pts = grid.points().reshape(grid.shape + (grid.n + 1,))
    fb_pts = _nodal_boundary_points(config)
    sups = []
    for i, f in enumerate(config.fields):
        lap = laplacian_array(f)
        valid = np.isfinite(lap)
        plate = np.zeros(grid.shape, dtype=bool)
        plate[..., 0] = config.trace_values(i) <= SUPPORT_THRESHOLD
        valid &= ~plate
        if fb_pts is not None and len(fb_pts):
            tree = cKDTree(fb_pts)
            flat = pts[valid]
            d, _ = tree.query(flat, k=1)
            ok = d >= exclusion - 1e-12
            vals = np.abs(lap[valid][ok])
        else:
            vals = np.abs(lap[valid])
        sups.append(float(np.max(vals)) if vals.size else 0.0)
    return sups


def _nodal_boundary_points(config: Configuration):
    """Free-boundary proxy in full coordinates (z = 0)."""
    if config.k == 2:
        from .flatness import extract_free_boundary

        try:
            ips = extract_free_boundary(config)
        except PreconditionError:
            return None
        if len(ips.points) == 0:
            return None
        return np.concatenate([ips.points, np.zeros((len(ips.points), 1))], axis=1)
    # generic fallback: trace nodes where a support meets the joint zero set
    grid = config.grid
    tr_pts = grid.points().reshape(grid.shape + (grid.n + 1,))[..., 0, :]
    zero = np.ones(grid.shape[:-1], dtype=bool)
    for i in range(config.k):
        zero &= config.trace_values(i) <= SUPPORT_THRESHOLD
    if not np.any(zero):
        return None
    edge = np.zeros_like(zero)
    for a in range(grid.n):
        rolled = np.roll(zero, 1, axis=a) | np.roll(zero, -1, axis=a)
        edge |= zero & ~rolled
        edge |= ~zero & rolled
    return tr_pts[edge]
