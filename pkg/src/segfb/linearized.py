"""Variational solver for the degenerate transmission problem of the linearization.

The pair (g_1, g_2) minimizes the weighted energy

    J(g_1, g_2) = int ( U_n^2 |grad g_1|^2 + Ubar_n^2 |grad g_2|^2 )

subject to g_1 = g_2 on L = {x_n = 0, z = 0} and Dirichlet data on the box
boundary.  The weights U_n^2 = cos^2(theta/2)/(4r), Ubar_n^2 = sin^2(theta/2)/(4r)
vanish on P^- resp. P^+ and blow up like 1/(4r) at L; edges are weighted at
their midpoints with a cap of 1/h on the L-parallel edges, which keeps the
(integrable) singularity consistent.  Treating each L-node as one shared
unknown whose Gauss-Seidel update mixes both weights enforces the natural
transmission condition, i.e. the coefficients of the r-expansion of the two
components at L sum to zero.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import PreconditionError
from .grid import ExtensionGrid, ScalarField


@dataclass
class LinearizedConfig:
    tolerance: float = 1e-10
    max_sweeps: int = 50000
    weight_cap_scale: float = 1.0  # cap = scale / h


@dataclass
class LinearizedPair:
    g1: ScalarField
    g2: ScalarField
    boundary: dict
    sweeps: int = 0
    converged: bool = True
    energy: float = 0.0

    @property
    def grid(self) -> ExtensionGrid:
        return self.g1.grid


@dataclass
class ExpansionCoefficients:
    a0: float
    a_prime: np.ndarray
    b1: float
    b2: float
    residual: float
    center: np.ndarray

    @property
    def transmission_defect(self) -> float:
        return abs(self.b1 + self.b2)

    def to_json(self) -> str:
        return json.dumps(
            {
                "x0": [float(v) for v in self.center],
                "a0": self.a0,
                "a_prime": [float(v) for v in self.a_prime],
                "b1": self.b1,
                "b2": self.b2,
                "transmission_defect": self.transmission_defect,
                "residual": self.residual,
            },
            sort_keys=True,
        )


def profile_slope_sq(xn, z, orientation: int) -> np.ndarray:
    """U_n^2 (orientation +1) or Ubar_n^2 (-1) at (x_n, z): cos^2/sin^2 of the
    half-angle over 4r.  Infinite at r = 0 (callers cap)."""
    t = orientation * np.asarray(xn, dtype=float)
    z = np.asarray(z, dtype=float)
    r = np.hypot(t, z)
    theta = np.arctan2(np.abs(z), t)
    with np.errstate(divide="ignore", invalid="ignore"):
        w = np.cos(0.5 * theta) ** 2 / (4.0 * r)
    return np.where(r == 0.0, np.inf, w)


def _edge_coefficients(grid: ExtensionGrid, orientation: int, cap: float):
    """Per-axis arrays of edge weights m_e * min(W(midpoint), cap).

    m_e doubles every stored edge except those lying in the trace plane,
    which the even reflection counts once."""
    n = grid.n
    coeffs = []
    for a in range(n + 1):
        axes = [grid.axis_coords(i) for i in range(n + 1)]
        axes[a] = 0.5 * (axes[a][1:] + axes[a][:-1])
        mesh = np.meshgrid(*axes, indexing="ij", sparse=True)
        w = profile_slope_sq(mesh[n - 1], mesh[n], orientation)
        w = np.minimum(np.broadcast_to(w, tuple(len(ax) for ax in axes)).copy(), cap)
        m = np.full(w.shape, 2.0)
        if a < n:  # in-plane edges at z = 0 are their own mirror
            m[..., 0] = 1.0
        coeffs.append(m * w)
    return coeffs


class _WeightedRelaxer:
    def __init__(self, grid: ExtensionGrid, cfg: LinearizedConfig):
        self.grid = grid
        cap = cfg.weight_cap_scale / grid.h
        self.c1 = _edge_coefficients(grid, +1, cap)
        self.c2 = _edge_coefficients(grid, -1, cap)
        idx = np.indices(grid.shape).sum(axis=0)
        self.colors = [(idx % 2) == 0, (idx % 2) == 1]
        self.free = ~grid.boundary_mask()
        L = grid.trace_L()
        self.L_mask = np.zeros(grid.shape, dtype=bool)
        self.L_mask[..., 0] = L
        self.num1 = np.empty(grid.shape)
        self.den1 = np.empty(grid.shape)

    def _accumulate(self, u: np.ndarray, coeffs):
        """Weighted neighbor sums and weight totals for one component."""
        g = self.grid
        num = np.zeros(g.shape)
        den = np.zeros(g.shape)
        for a in range(g.n + 1):
            c = coeffs[a]
            sl_lo = [slice(None)] * (g.n + 1)
            sl_hi = [slice(None)] * (g.n + 1)
            sl_lo[a] = slice(0, -1)
            sl_hi[a] = slice(1, None)
            num[tuple(sl_lo)] += c * u[tuple(sl_hi)]
            den[tuple(sl_lo)] += c
            num[tuple(sl_hi)] += c * u[tuple(sl_lo)]
            den[tuple(sl_hi)] += c
        return num, den

    def sweep(self, g1: np.ndarray, g2: np.ndarray) -> None:
        for color in self.colors:
            n1, d1 = self._accumulate(g1, self.c1)
            n2, d2 = self._accumulate(g2, self.c2)
            upd = color & self.free
            m = upd & ~self.L_mask
            safe1 = m & (d1 > 0)
            g1[safe1] = n1[safe1] / d1[safe1]
            safe2 = m & (d2 > 0)
            g2[safe2] = n2[safe2] / d2[safe2]
            mL = upd & self.L_mask
            tot = d1[mL] + d2[mL]
            shared = (n1[mL] + n2[mL]) / tot
            g1[mL] = shared
            g2[mL] = shared

    def energy(self, g1: np.ndarray, g2: np.ndarray) -> float:
        g = self.grid
        total = 0.0
        for a in range(g.n + 1):
            d1 = np.diff(g1, axis=a)
            d2 = np.diff(g2, axis=a)
            total += float(np.sum(self.c1[a] * d1 * d1) + np.sum(self.c2[a] * d2 * d2))
        return total * g.h ** (g.n - 1)


def solve_linearized(grid: ExtensionGrid, boundary, cfg: LinearizedConfig | None = None) -> LinearizedPair:
    """Minimize the weighted energy with Dirichlet data (h1, h2), h1 = h2 on L.

    `boundary` is a pair of callables on points (m, n+1) or of full-shape
    arrays.  Non-convergence is flagged on the result.
    """
    cfg = cfg or LinearizedConfig()
    h1, h2 = _boundary_arrays(grid, boundary)
    L = grid.trace_L()
    bmask = grid.boundary_mask()
    edgeL = np.zeros(grid.shape, dtype=bool)
    edgeL[..., 0] = L
    conflict = bmask & edgeL
    if np.any(np.abs(h1[conflict] - h2[conflict]) > 1e-9):
        raise PreconditionError("boundary data must agree on L")
    relax = _WeightedRelaxer(grid, cfg)
    # seed with the boundary mean so constant data is an immediate fixed point
    mean = 0.5 * (np.mean(h1[bmask]) + np.mean(h2[bmask]))
    g1 = np.full(grid.shape, mean)
    g2 = np.full(grid.shape, mean)
    g1[bmask] = h1[bmask]
    g2[bmask] = h2[bmask]
    shared = 0.5 * (g1 + g2)
    g1[edgeL & ~bmask] = shared[edgeL & ~bmask]
    g2[edgeL & ~bmask] = shared[edgeL & ~bmask]
    energy = relax.energy(g1, g2)
    sweeps = 0
    converged = True
    while True:
        if sweeps >= cfg.max_sweeps:
            converged = False
            break
        relax.sweep(g1, g2)
        sweeps += 1
        new_energy = relax.energy(g1, g2)
        if energy - new_energy <= cfg.tolerance * max(abs(new_energy), 1.0):
            energy = new_energy
            break
        energy = new_energy
    return LinearizedPair(
        g1=ScalarField(grid, g1),
        g2=ScalarField(grid, g2),
        boundary={"h1": h1, "h2": h2},
        sweeps=sweeps,
        converged=converged,
        energy=energy,
    )


def _boundary_arrays(grid: ExtensionGrid, boundary):
    out = []
    for h in boundary:
        if callable(h):
            out.append(np.asarray(h(grid.points()), dtype=float).reshape(grid.shape))
        else:
            arr = np.asarray(h, dtype=float)
            if arr.shape != grid.shape:
                raise PreconditionError("boundary array shape mismatch")
            out.append(arr.copy())
    return out


# ---------------------------------------------------------------------------
# the explicit minimizer pair and boundary expansions


def explicit_minimizer(X: np.ndarray, n: int = 2):
    """(v1, v2) = (-|x'|^2/(n-1) +- 2(x_n+1) r) with r = sqrt(x_n^2 + z^2).

    Both satisfy the weighted-harmonic equations off their plates and carry
    the boundary expansion coefficients (b1, b2) = (2, -2) at every L-point.
    """
    if n < 2:
        raise PreconditionError("explicit minimizer needs n >= 2")
    X = np.asarray(X, dtype=float)
    xp2 = np.sum(X[..., : n - 1] ** 2, axis=-1)
    r = np.hypot(X[..., n - 1], X[..., n])
    base = -xp2 / (n - 1)
    swing = 2.0 * (X[..., n - 1] + 1.0) * r
    return base + swing, base - swing


def explicit_minimizer_pair(grid: ExtensionGrid) -> LinearizedPair:
    pts = grid.points()
    v1, v2 = explicit_minimizer(pts, grid.n)
    return LinearizedPair(
        g1=ScalarField(grid, v1.reshape(grid.shape)),
        g2=ScalarField(grid, v2.reshape(grid.shape)),
        boundary={"h1": v1.reshape(grid.shape), "h2": v2.reshape(grid.shape)},
    )


def expansion_at(pair: LinearizedPair, X0, tube_radius: float = 0.1,
                 margin: float = 0.2) -> ExpansionCoefficients:
    """Least-squares fit of g_i over the tube {|x'-x0'| <= tube_radius,
    r <= tube_radius} against a0 + a'.(x'-x0') + b_i r (shared a0, a').

    Plate nodes of each component are excluded (the fields are not
    constrained there); trace-layer nodes get weight 1/2.
    """
    grid = pair.grid
    n = grid.n
    X0 = np.asarray(X0, dtype=float)
    x0p = X0[: n - 1]
    if abs(X0[n - 1] if len(X0) >= n else 0.0) > 1e-12:
        raise PreconditionError("X0 must lie on L")
    for a in range(n - 1):
        if x0p[a] - margin < grid.lo[a] or x0p[a] + margin > grid.hi[a]:
            raise PreconditionError("X0 too close to the box boundary")
    pts = grid.points()
    dxp = pts[:, : n - 1] - x0p
    r = np.hypot(pts[:, n - 1], pts[:, n])
    in_tube = (np.max(np.abs(dxp), axis=1) <= tube_radius + 1e-12) if n > 1 else np.ones(len(pts), bool)
    in_tube &= r <= tube_radius + 1e-12
    z = pts[:, n]
    xn = pts[:, n - 1]
    on_plate1 = (z == 0.0) & (xn < -1e-12)
    on_plate2 = (z == 0.0) & (xn > 1e-12)
    w_node = np.where(z == 0.0, 0.5, 1.0)
    rows = []
    rhs = []
    wts = []
    for comp, (field, plate) in enumerate([(pair.g1, on_plate1), (pair.g2, on_plate2)]):
        sel = in_tube & ~plate
        if not np.any(sel):
            raise PreconditionError("no sample nodes in the tube")
        m = int(np.sum(sel))
        block = np.zeros((m, 1 + (n - 1) + 2))
        block[:, 0] = 1.0
        block[:, 1:n] = dxp[sel]
        block[:, n + comp] = r[sel]
        rows.append(block)
        rhs.append(field.values.ravel()[sel])
        wts.append(w_node[sel])
    A = np.concatenate(rows, axis=0)
    y = np.concatenate(rhs)
    w = np.sqrt(np.concatenate(wts))
    coef, *_ = np.linalg.lstsq(A * w[:, None], y * w, rcond=None)
    fit = A @ coef
    resid = float(np.max(np.abs(fit - y)))
    return ExpansionCoefficients(
        a0=float(coef[0]),
        a_prime=coef[1:n].copy(),
        b1=float(coef[n]),
        b2=float(coef[n + 1]),
        residual=resid,
        center=X0[: n - 1].copy() if n > 1 else np.zeros(0),
    )


def weighted_harmonic_residual(pair: LinearizedPair, distance: float | None = None) -> dict:
    """Sup of |Delta_h(U_n g1)| off P^- and |Delta_h(Ubar_n g2)| off P^+.

    Residuals are evaluated at nodes at least `distance` (default 2h) from the
    respective plate, where the products are bounded and smooth.
    """
    from .grid import laplacian_array

    grid = pair.grid
    n = grid.n
    if distance is None:
        distance = 2 * grid.h
    pts = grid.points()
    xn = pts[:, n - 1]
    z = np.abs(pts[:, n])
    # distance to P- = {x_n <= 0, z = 0}: |z| where x_n <= 0, else hypot(x_n, z)
    d_minus = np.where(xn <= 0, z, np.hypot(xn, z)).reshape(grid.shape)
    d_plus = np.where(xn >= 0, z, np.hypot(xn, z)).reshape(grid.shape)
    sups = {}
    for name, field, orient, dist in (
        ("g1", pair.g1, +1, d_minus),
        ("g2", pair.g2, -1, d_plus),
    ):
        slope = np.sqrt(profile_slope_sq(pts[:, n - 1], pts[:, n], orient))
        prod = ScalarField(grid, np.nan_to_num(slope.reshape(grid.shape), posinf=0.0)
                           * field.values)
        lap = laplacian_array(prod)
        sel = np.isfinite(lap) & (dist >= distance - 1e-12)
        sups[name] = float(np.max(np.abs(lap[sel]))) if np.any(sel) else 0.0
    return sups
