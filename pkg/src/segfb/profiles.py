"""Closed-form half-plane profiles, radial comparison subsolutions, domain variations.

The model profile is, in polar coordinates t = r cos(theta), z = r sin(theta),
theta in [-pi, pi],

    U(t, z) = sqrt(r) * cos(theta / 2),

extended to R^{n+1} through t = x_n.  It is harmonic off the half-line
{t <= 0, z = 0}, vanishes exactly there, and satisfies U_t = U / (2r) and
|grad U|^2 = 1 / (4r).  The reflected profile is Ubar(t, z) = U(-t, z).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NoRootError, PreconditionError, SingularEvaluationError
from .grid import ExtensionGrid, ScalarField, interpolate

R_MIN_DEFAULT = 10.0


@dataclass(frozen=True)
class HalfPlaneProfile:
    """Orientation +1 selects U (vanishing on t <= 0), -1 selects Ubar."""

    orientation: int = 1

    def __post_init__(self):
        if self.orientation not in (-1, 1):
            raise PreconditionError("orientation must be +1 or -1")


U = HalfPlaneProfile(+1)
UBAR = HalfPlaneProfile(-1)


def eval_profile(profile: HalfPlaneProfile, t, z):
    """Profile value at (t, z); accepts scalars or arrays."""
    tt = profile.orientation * np.asarray(t, dtype=float)
    zz = np.asarray(z, dtype=float)
    r = np.hypot(tt, zz)
    theta = np.arctan2(zz, tt)
    val = np.sqrt(r) * np.cos(0.5 * theta)
    # atan2(-0.0, t<0) = -pi gives cos(-pi/2) = 0 as well; clip fp dust
    return np.maximum(val, 0.0) if np.ndim(val) else max(float(val), 0.0)


def grad_profile(profile: HalfPlaneProfile, t, z):
    """(d/dt, d/dz) of the profile; singular at the edge r = 0.

    On the open slit the z -> 0+ branch is returned.  Satisfies
    U_t = U/(2r) and U_t^2 + U_z^2 = 1/(4r) identically.
    """
    tt = profile.orientation * np.asarray(t, dtype=float)
    zz = np.asarray(z, dtype=float)
    r = np.hypot(tt, zz)
    if np.any(r == 0.0):
        raise SingularEvaluationError("profile gradient is singular at r = 0")
    theta = np.arctan2(np.abs(zz), tt)
    f = 0.5 / np.sqrt(r)
    dt = f * np.cos(0.5 * theta) * profile.orientation
    dz = f * np.sin(0.5 * theta) * np.where(np.signbit(zz), -1.0, 1.0)
    if np.ndim(t) == 0 and np.ndim(z) == 0:
        return float(dt), float(dz)
    return dt, dz


def profile_on_points(profile: HalfPlaneProfile, X: np.ndarray, nu=None, shift: float = 0.0):
    """Evaluate the profile of t = x . nu - shift at points X (..., n+1).

    nu defaults to e_n; it is a unit vector in the trace hyperplane.
    """
    X = np.asarray(X, dtype=float)
    n = X.shape[-1] - 1
    if nu is None:
        t = X[..., n - 1]
    else:
        nu = np.asarray(nu, dtype=float)
        t = np.tensordot(X[..., :n], nu, axes=([-1], [0]))
    return eval_profile(profile, t - shift, X[..., n])


# ---------------------------------------------------------------------------
# radial comparison subsolutions


@dataclass(frozen=True)
class SubsolutionParams:
    """Spherical-front subsolution family: R is the front radius, beta the
    vertical translation rate.  Expansions are asymptotic in 1/R, so R >= r_min."""

    R: float
    beta: float = 0.0
    r_min: float = R_MIN_DEFAULT

    def __post_init__(self):
        if self.R <= 0 or self.beta < 0:
            raise PreconditionError("require R > 0 and beta >= 0")

    def require_large(self):
        if self.R < self.r_min:
            raise PreconditionError(f"R = {self.R} below R_min = {self.r_min}")


def eval_subsolution(params: SubsolutionParams, component: int, X: np.ndarray):
    """Value of v_i^R at points X (..., n+1), i in {1, 2}.

    v_1^R(X) = (1 + beta/R) U(R - rho, z) ((n-1)(R - rho)/R + 1) with
    rho = |(x', x_n - R)|; component 2 uses Ubar.
    """
    params.require_large()
    if component not in (1, 2):
        raise PreconditionError("component must be 1 or 2")
    X = np.asarray(X, dtype=float)
    n = X.shape[-1] - 1
    R, beta = params.R, params.beta
    rho = np.sqrt(np.sum(X[..., : n - 1] ** 2, axis=-1) + (X[..., n - 1] - R) ** 2)
    t = R - rho
    z = X[..., n]
    prof = U if component == 1 else UBAR
    base = eval_profile(prof, t, z)
    return (1.0 + beta / R) * base * ((n - 1) * t / R + 1.0)


def gamma_R(params: SubsolutionParams, X: np.ndarray, component: int = 1, n: int | None = None):
    """First-order displacement gamma_R (component 1) or its sign-flipped
    mirror (component 2), with r = sqrt(x_n^2 + z^2)."""
    X = np.asarray(X, dtype=float)
    if n is None:
        n = X.shape[-1] - 1
    R, beta = params.R, params.beta
    xp2 = np.sum(X[..., : n - 1] ** 2, axis=-1)
    xn = X[..., n - 1]
    r = np.hypot(xn, X[..., n])
    sgn = 1.0 if component == 1 else -1.0
    return -xp2 / (2 * R) + sgn * (2 * (n - 1) * xn * r / R + 2 * beta * r / R)


# ---------------------------------------------------------------------------
# epsilon-domain variations


@dataclass
class DomainVariationField:
    """Per-node horizontal displacement values w solving U(X) = g(X - eps*w*e_n).

    Multi-valued nodes store their min/max envelope; `defined` marks nodes
    where the variation exists (off P- for orientation +1, off P+ for -1,
    margin eps from the x_n box faces)."""

    grid: ExtensionGrid
    epsilon: float
    orientation: int
    w_min: np.ndarray
    w_max: np.ndarray
    defined: np.ndarray
    multi: np.ndarray

    def single_valued(self) -> bool:
        return not bool(np.any(self.multi & self.defined))


def _as_evaluator(g):
    if isinstance(g, ScalarField):
        return (lambda pts: interpolate(g, pts)), g.grid
    if callable(g):
        return g, None
    raise PreconditionError("g must be a ScalarField or a callable on points")


def variation_values(g, X: np.ndarray, epsilon: float, profile: HalfPlaneProfile,
                     scan_cells: int = 64, tol: float = 1e-10):
    """Root-solve the variation at arbitrary points X (m, n+1).

    Returns (w_min, w_max, found, multi).  All roots w in [-1, 1] of
    profile(X) = g(X - eps*w*e_n) are located by scanning sign changes on a
    uniform partition followed by bisection; derivative-free because g is only
    1/2-Hoelder near its free boundary.
    """
    geval, _ = _as_evaluator(g)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    m = X.shape[0]
    n = X.shape[-1] - 1
    target = profile_on_points(profile, X)
    ws = np.linspace(-1.0, 1.0, scan_cells + 1)
    # F(w) = g(X - eps*w*e_n) - profile(X); sample the whole scan grid
    fvals = np.empty((m, scan_cells + 1))
    for j, w in enumerate(ws):
        P = X.copy()
        P[:, n - 1] -= epsilon * w
        fvals[:, j] = geval(P) - target
    sign = np.sign(fvals)
    w_min = np.full(m, np.nan)
    w_max = np.full(m, np.nan)
    count = np.zeros(m, dtype=int)
    # exact zeros on scan nodes count as roots
    zero_hits = np.abs(fvals) <= 1e-14
    for i in range(m):
        hit = np.where(zero_hits[i])[0]
        if hit.size:
            w_min[i] = ws[hit[0]]
            w_max[i] = ws[hit[-1]]
            count[i] = hit.size
    bracket = (sign[:, :-1] * sign[:, 1:]) < 0
    rows, cols = np.nonzero(bracket)
    if rows.size:
        a = np.full(rows.size, 0.0)
        b = np.full(rows.size, 0.0)
        a[:] = ws[cols]
        b[:] = ws[cols + 1]
        fa = fvals[rows, cols]
        n_iter = int(np.ceil(np.log2((ws[1] - ws[0]) / tol)))
        for _ in range(n_iter):
            mid = 0.5 * (a + b)
            P = X[rows].copy()
            P[:, n - 1] -= epsilon * mid
            fm = geval(P) - target[rows]
            left = (np.sign(fm) * np.sign(fa)) > 0
            a = np.where(left, mid, a)
            fa = np.where(left, fm, fa)
            b = np.where(left, b, mid)
        root = 0.5 * (a + b)
        for idx in range(rows.size):
            i = rows[idx]
            w = root[idx]
            if count[i] == 0:
                w_min[i] = w_max[i] = w
            else:
                w_min[i] = min(w_min[i], w)
                w_max[i] = max(w_max[i], w)
            count[i] += 1
    found = count > 0
    multi = count > 1
    return w_min, w_max, found, multi


def domain_variation(g, epsilon: float, orientation: int = 1,
                     scan_cells: int = 64, tol: float = 1e-10,
                     chunk: int = 65536) -> DomainVariationField:
    """Construct the epsilon-domain variation field of g on its grid.

    Requires (caller-verified via measure_flatness) that g sits in the
    translate sandwich of width epsilon; a node with no root in [-1, 1]
    raises NoRootError.  Multi-valued nodes are kept and flagged.
    """
    if epsilon <= 0:
        raise PreconditionError("epsilon must be positive")
    geval, grid = _as_evaluator(g)
    if grid is None:
        raise PreconditionError("domain_variation needs a gridded field; "
                                "use variation_values for callables")
    profile = U if orientation == 1 else UBAR
    n = grid.n
    pts = grid.points()
    xn = pts[:, n - 1]
    z = pts[:, n]
    if orientation == 1:
        off_plate = ~((xn <= 1e-12) & (z == 0.0))
    else:
        off_plate = ~((xn >= -1e-12) & (z == 0.0))
    margin = (xn - epsilon >= grid.lo[n - 1] - 1e-12) & (xn + epsilon <= grid.hi[n - 1] + 1e-12)
    sel = off_plate & margin
    w_min = np.full(len(pts), np.nan)
    w_max = np.full(len(pts), np.nan)
    multi = np.zeros(len(pts), dtype=bool)
    idx = np.nonzero(sel)[0]
    for start in range(0, idx.size, chunk):
        part = idx[start : start + chunk]
        wmn, wmx, found, mlt = variation_values(
            g, pts[part], epsilon, profile, scan_cells=scan_cells, tol=tol
        )
        if not np.all(found):
            bad = int(np.sum(~found))
            raise NoRootError(
                f"no variation root at {bad} node(s); flatness precondition fails"
            )
        w_min[part] = wmn
        w_max[part] = wmx
        multi[part] = mlt
    shape = grid.shape
    return DomainVariationField(
        grid=grid,
        epsilon=epsilon,
        orientation=orientation,
        w_min=w_min.reshape(shape),
        w_max=w_max.reshape(shape),
        defined=sel.reshape(shape),
        multi=multi.reshape(shape),
    )


# ---------------------------------------------------------------------------
# subsolution expansion check: |v~_i^R - gamma_R| = O(R^{-2})


def check_subsolution_expansion(params: SubsolutionParams, grid: ExtensionGrid,
                                component: int = 1, ball: float = 0.8) -> dict:
    """Sup over sampled nodes of |v~_i^R - gamma_R| and its R^2 scaling.

    The displacement v~ is the unit-epsilon domain variation of the analytic
    subsolution (so values are total displacements, directly comparable to
    gamma_R).  Nodes are grid nodes in the ball |X| <= ball off the relevant
    plate."""
    params.require_large()
    n = grid.n
    profile = U if component == 1 else UBAR
    orientation = 1 if component == 1 else -1
    pts = grid.points()
    xn = pts[:, n - 1]
    z = pts[:, n]
    keep = np.linalg.norm(pts, axis=1) <= ball
    if orientation == 1:
        keep &= ~((xn <= 1e-12) & (z == 0.0))
    else:
        keep &= ~((xn >= -1e-12) & (z == 0.0))
    pts = pts[keep]
    geval = lambda P: eval_subsolution(params, component, P)
    w_min, w_max, found, _ = variation_values(geval, pts, 1.0, profile)
    if not np.all(found):
        raise NoRootError("subsolution variation root missing; R too small?")
    gam = gamma_R(params, pts, component=component, n=n)
    dev = np.maximum(np.abs(w_min - gam), np.abs(w_max - gam))
    sup = float(np.max(dev))
    return {
        "R": params.R,
        "beta": params.beta,
        "component": component,
        "sup_deviation": sup,
        "sup_deviation_times_R2": sup * params.R**2,
        "nodes": int(len(pts)),
    }


def subsolution_expansion_sweep(R_values, beta: float, grid: ExtensionGrid,
                                component: int = 1) -> dict:
    """Deviation sups across an R sweep plus the log-log decay slope."""
    sups = []
    for R in R_values:
        rep = check_subsolution_expansion(SubsolutionParams(R=R, beta=beta), grid, component)
        sups.append(rep["sup_deviation"])
    R_arr = np.asarray(R_values, dtype=float)
    s_arr = np.asarray(sups)
    slope = float(np.polyfit(np.log(R_arr), np.log(s_arr), 1)[0])
    ratios = [sups[i] / sups[i + 1] for i in range(len(sups) - 1)]
    bounded = all(r >= (R_values[i + 1] / R_values[i]) ** 2 / 4.0 for i, r in enumerate(ratios))
    return {
        "R_values": list(map(float, R_values)),
        "sup_deviations": sups,
        "sups_times_R2": [s * R**2 for s, R in zip(sups, R_arr)],
        "slope": slope,
        "bounded": bounded,
    }


# ---------------------------------------------------------------------------
# grid sampling helpers for configurations built from the analytic family


def half_plane_pair_fields(grid: ExtensionGrid, a1: float = 1.0, a2: float = 1.0,
                           nu=None, shift: float = 0.0, curve=None):
    """Sample (a1*U, a2*Ubar) of t = x . nu - shift - curve(x') on the grid.

    curve, when given, is a callable on the x'-block (m, n-1) adding a
    graph-shaped bend to the interface; nu defaults to e_n."""
    pts = grid.points()
    n = grid.n
    if nu is None:
        nu = np.zeros(n)
        nu[n - 1] = 1.0
    nu = np.asarray(nu, dtype=float)
    nu = nu / np.linalg.norm(nu)
    t = pts[:, :n] @ nu - shift
    if curve is not None:
        t = t - np.asarray(curve(pts[:, : n - 1]), dtype=float)
    z = pts[:, n]
    f1 = ScalarField(grid, (a1 * eval_profile(U, t, z)).reshape(grid.shape))
    f2 = ScalarField(grid, (a2 * eval_profile(UBAR, t, z)).reshape(grid.shape))
    return f1, f2


def subsolution_pair_fields(grid: ExtensionGrid, params: SubsolutionParams):
    pts = grid.points()
    f1 = ScalarField(grid, eval_subsolution(params, 1, pts).reshape(grid.shape))
    f2 = ScalarField(grid, eval_subsolution(params, 2, pts).reshape(grid.shape))
    return f1, f2
