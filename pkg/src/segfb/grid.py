"""Tensor grids on z-symmetric extension boxes, discrete calculus and quadrature.

Geometry convention: a point is X = (x_1, ..., x_n, z).  Storage covers the
upper half z in [0, Z] only; all fields are even in z, so the layer z = -h is
the mirror of z = +h.  The trace hyperplane {z = 0} coincides with the first
z-layer, and the half-hyperplanes

    P+ = {x_n >= 0, z = 0},   P- = {x_n <= 0, z = 0},   L = {x_n = 0, z = 0}

are node sets of the trace layer (the grid validates that x_n = 0 is a
lattice coordinate).
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import PreconditionError

SUPPORT_THRESHOLD = 1e-8  # numerical zero for trace supports


@dataclass(frozen=True)
class ExtensionGrid:
    """Uniform tensor grid over [lo_1,hi_1] x ... x [lo_n,hi_n] x [0, z_top]."""

    n: int
    lo: tuple
    hi: tuple
    z_top: float
    h: float

    def __post_init__(self):
        if self.n < 1:
            raise PreconditionError("trace dimension n must be >= 1")
        if self.h <= 0:
            raise PreconditionError("grid spacing h must be positive")
        for a in range(self.n):
            if not _is_lattice(self.hi[a] - self.lo[a], self.h):
                raise PreconditionError(f"axis {a} extent is not a multiple of h")
        if not _is_lattice(self.z_top, self.h):
            raise PreconditionError("z_top is not a multiple of h")
        # L must lie on grid nodes
        if not _is_lattice(-self.lo[self.n - 1], self.h) or not (
            self.lo[self.n - 1] <= 0.0 <= self.hi[self.n - 1]
        ):
            raise PreconditionError("x_n = 0 must be a grid coordinate (L on nodes)")

    @property
    def shape(self) -> tuple:
        counts = [int(round((self.hi[a] - self.lo[a]) / self.h)) + 1 for a in range(self.n)]
        counts.append(int(round(self.z_top / self.h)) + 1)
        return tuple(counts)

    def axis_coords(self, axis: int) -> np.ndarray:
        if axis < self.n:
            return self.lo[axis] + self.h * np.arange(self.shape[axis])
        return self.h * np.arange(self.shape[self.n])

    def node_coords(self) -> list:
        """Sparse meshgrid of node coordinates, one broadcastable array per axis."""
        axes = [self.axis_coords(a) for a in range(self.n + 1)]
        return list(np.meshgrid(*axes, indexing="ij", sparse=True))

    def points(self) -> np.ndarray:
        """Dense (prod(shape), n+1) array of node coordinates."""
        mesh = np.meshgrid(*[self.axis_coords(a) for a in range(self.n + 1)], indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    # node-index predicates on the trace layer (arrays over shape[:-1])
    def trace_p_plus(self) -> np.ndarray:
        xn = self.axis_coords(self.n - 1)
        mask = np.zeros(self.shape[:-1], dtype=bool)
        sl = [slice(None)] * self.n
        mask[tuple(sl)] = (xn >= -1e-12).reshape((1,) * (self.n - 1) + (-1,))
        return mask

    def trace_p_minus(self) -> np.ndarray:
        xn = self.axis_coords(self.n - 1)
        mask = np.zeros(self.shape[:-1], dtype=bool)
        sl = [slice(None)] * self.n
        mask[tuple(sl)] = (xn <= 1e-12).reshape((1,) * (self.n - 1) + (-1,))
        return mask

    def trace_L(self) -> np.ndarray:
        return self.trace_p_plus() & self.trace_p_minus()

    def boundary_mask(self) -> np.ndarray:
        """Dirichlet nodes: box faces in x and the top face z = z_top (not z = 0)."""
        mask = np.zeros(self.shape, dtype=bool)
        for a in range(self.n):
            sl = [slice(None)] * (self.n + 1)
            sl[a] = 0
            mask[tuple(sl)] = True
            sl[a] = -1
            mask[tuple(sl)] = True
        sl = [slice(None)] * (self.n + 1)
        sl[self.n] = -1
        mask[tuple(sl)] = True
        return mask

    def contains(self, pts: np.ndarray, margin: float = 0.0) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        ok = np.ones(pts.shape[:-1], dtype=bool)
        for a in range(self.n):
            ok &= (pts[..., a] >= self.lo[a] + margin) & (pts[..., a] <= self.hi[a] - margin)
        ok &= np.abs(pts[..., self.n]) <= self.z_top - margin
        return ok


def _is_lattice(x: float, h: float) -> bool:
    return abs(x / h - round(x / h)) < 1e-9


def desk_grid(n: int = 2, extent: float = 1.0, z_top: float = 1.0, h: float = 1 / 64) -> ExtensionGrid:
    """The default desk-scale box [-extent, extent]^n x [0, z_top]."""
    return ExtensionGrid(n=n, lo=(-extent,) * n, hi=(extent,) * n, z_top=z_top, h=h)


@dataclass
class ScalarField:
    """One real value per stored node, implicitly even in z."""

    grid: ExtensionGrid
    values: np.ndarray
    even: bool = True

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.shape:
            raise PreconditionError("field shape does not match grid")
        if not np.all(np.isfinite(self.values)):
            raise PreconditionError("field contains non-finite values")

    def copy(self) -> "ScalarField":
        return ScalarField(self.grid, self.values.copy(), self.even)


def sample_field(grid: ExtensionGrid, fn) -> ScalarField:
    """Sample a callable fn(points (m, n+1)) -> (m,) onto the grid nodes."""
    vals = np.asarray(fn(grid.points()), dtype=float).reshape(grid.shape)
    return ScalarField(grid, vals)


@dataclass
class Configuration:
    """A k-tuple of fields with boundary data and segregation metadata."""

    fields: list
    mode: str = "analytic"  # "penalized" | "segregated" | "analytic"
    beta: float | None = None
    boundary: list | None = None  # per-component full-shape arrays, used on boundary nodes

    def __post_init__(self):
        if not self.fields:
            raise PreconditionError("configuration needs at least one component")
        g = self.fields[0].grid
        for f in self.fields:
            if f.grid.shape != g.shape:
                raise PreconditionError("all components must share one grid")

    @property
    def grid(self) -> ExtensionGrid:
        return self.fields[0].grid

    @property
    def k(self) -> int:
        return len(self.fields)

    def trace_values(self, i: int) -> np.ndarray:
        return self.fields[i].values[..., 0]

    def check_segregated(self, threshold: float = SUPPORT_THRESHOLD) -> bool:
        """Nodewise segregation: at most one component above threshold per trace node."""
        pos = np.stack([self.trace_values(i) > threshold for i in range(self.k)])
        return bool(np.all(pos.sum(axis=0) <= 1))


# ---------------------------------------------------------------------------
# discrete calculus


def discrete_laplacian(f: ScalarField, node: tuple) -> float:
    """Second-order (2n+3)-point Laplacian at one node index; even reflection at z=0."""
    g = f.grid
    shape = g.shape
    node = tuple(int(i) for i in node)
    for a in range(g.n):
        if node[a] <= 0 or node[a] >= shape[a] - 1:
            raise PreconditionError("node is not interior to the stored half-grid")
    iz = node[g.n]
    if iz < 0 or iz >= shape[g.n] - 1:
        raise PreconditionError("node is not interior to the stored half-grid")
    u = f.values
    total = -2.0 * (g.n + 1) * u[node]
    for a in range(g.n):
        lo = list(node)
        hi = list(node)
        lo[a] -= 1
        hi[a] += 1
        total += u[tuple(lo)] + u[tuple(hi)]
    up = list(node)
    up[g.n] += 1
    dn = list(node)
    dn[g.n] = iz - 1 if iz > 0 else 1  # ghost below the trace = mirrored node above
    total += u[tuple(up)] + u[tuple(dn)]
    return total / g.h**2


def laplacian_array(f: ScalarField) -> np.ndarray:
    """Vectorized discrete Laplacian on all nodes interior in x and with z < z_top.

    Entries at x-boundary nodes and the top layer are NaN.
    """
    g = f.grid
    u = f.values
    out = np.full(g.shape, np.nan)
    inner = tuple(slice(1, -1) for _ in range(g.n)) + (slice(0, -1),)
    acc = -2.0 * (g.n + 1) * u[inner]
    for a in range(g.n):
        sl_lo = list(inner)
        sl_hi = list(inner)
        sl_lo[a] = slice(0, -2)
        sl_hi[a] = slice(2, None)
        acc = acc + u[tuple(sl_lo)] + u[tuple(sl_hi)]
    up = list(inner)
    up[g.n] = slice(1, None)
    acc = acc + u[tuple(up)]
    # below-neighbor: mirrored at z=0
    dn = u[tuple(slice(1, -1) for _ in range(g.n)) + (slice(None),)]
    below = np.concatenate([dn[..., 1:2], dn[..., 0:-2]], axis=-1)
    acc = acc + below
    out[inner] = acc / g.h**2
    return out


def gradient_arrays(f: ScalarField) -> list:
    """Centered-difference gradient per axis (n+1 arrays).

    At z = 0 the z-derivative is one-sided, (u(h) - u(0))/h: off the nodal set
    evenness makes the true derivative 0 and the one-sided quotient is O(h),
    while on the zero plate it recovers the one-sided slope that carries the
    slit energy.  x-derivatives fall back to one-sided at the box faces.
    """
    g = f.grid
    u = f.values
    h = g.h
    grads = []
    for a in range(g.n + 1):
        d = np.empty_like(u)
        sl_c = [slice(None)] * (g.n + 1)
        sl_p = [slice(None)] * (g.n + 1)
        sl_m = [slice(None)] * (g.n + 1)
        sl_c[a] = slice(1, -1)
        sl_p[a] = slice(2, None)
        sl_m[a] = slice(0, -2)
        d[tuple(sl_c)] = (u[tuple(sl_p)] - u[tuple(sl_m)]) / (2 * h)
        sl_c[a] = 0
        sl_p[a] = 1
        sl_m[a] = 0
        d[tuple(sl_c)] = (u[tuple(sl_p)] - u[tuple(sl_m)]) / h
        sl_c[a] = -1
        sl_p[a] = -1
        sl_m[a] = -2
        d[tuple(sl_c)] = (u[tuple(sl_p)] - u[tuple(sl_m)]) / h
        grads.append(d)
    return grads


# ---------------------------------------------------------------------------
# interpolation


def interpolate(f: ScalarField, X: np.ndarray) -> np.ndarray:
    """Multilinear interpolation at points X (..., n+1); z < 0 via evenness."""
    return interpolate_array(f.grid, f.values, X)


def interpolate_array(grid: ExtensionGrid, values: np.ndarray, X: np.ndarray) -> np.ndarray:
    pts = np.atleast_2d(np.asarray(X, dtype=float))
    scalar = np.asarray(X).ndim == 1
    q = pts.copy()
    q[:, grid.n] = np.abs(q[:, grid.n])
    if not np.all(grid.contains(q)):
        raise PreconditionError("interpolation point outside the box")
    nd = grid.n + 1
    idx = np.empty((pts.shape[0], nd), dtype=np.int64)
    frac = np.empty((pts.shape[0], nd))
    for a in range(nd):
        lo = grid.lo[a] if a < grid.n else 0.0
        t = (q[:, a] - lo) / grid.h
        i = np.floor(t + 1e-12).astype(np.int64)
        i = np.clip(i, 0, grid.shape[a] - 2)
        idx[:, a] = i
        frac[:, a] = np.clip(t - i, 0.0, 1.0)
    out = np.zeros(pts.shape[0])
    for corner in np.ndindex(*(2,) * nd):
        w = np.ones(pts.shape[0])
        ii = []
        for a in range(nd):
            if corner[a]:
                w = w * frac[:, a]
                ii.append(idx[:, a] + 1)
            else:
                w = w * (1.0 - frac[:, a])
                ii.append(idx[:, a])
        out += w * values[tuple(ii)]
    return out[0] if scalar else out.reshape(np.asarray(X).shape[:-1])


# ---------------------------------------------------------------------------
# quadrature on balls and spheres (centers on the trace, fields even in z)


def ball_in_box(grid: ExtensionGrid, center, r: float) -> bool:
    c = np.asarray(center, dtype=float)
    for a in range(grid.n):
        if c[a] - r < grid.lo[a] - 1e-12 or c[a] + r > grid.hi[a] + 1e-12:
            return False
    return r <= grid.z_top + 1e-12


def quad_ball(grid: ExtensionGrid, f, center, r: float, subsamples: int = 2) -> float:
    """Integral of f over the full ball B_r((center,0)) by the cell midpoint rule.

    Partial boundary cells get a volume fraction from 2^{n+1}-point subsampling
    (8 points for n=2).  The z<0 half is accounted for by evenness: only cells
    with z > 0 are visited and the result is doubled.
    """
    c = np.asarray(center, dtype=float)
    if c.shape[-1] == grid.n + 1:
        if abs(c[grid.n]) > 1e-12:
            raise PreconditionError("ball center must lie on the trace")
        c = c[: grid.n]
    if not ball_in_box(grid, c, r):
        raise PreconditionError("ball exceeds the box")
    h = grid.h
    nd = grid.n + 1
    ranges = []
    for a in range(grid.n):
        i0 = max(0, int(np.floor((c[a] - r - grid.lo[a]) / h)))
        i1 = min(grid.shape[a] - 2, int(np.ceil((c[a] + r - grid.lo[a]) / h)))
        ranges.append(np.arange(i0, i1 + 1))
    i1z = min(grid.shape[grid.n] - 2, int(np.ceil(r / h)))
    ranges.append(np.arange(0, i1z + 1))
    mesh = np.meshgrid(*ranges, indexing="ij")
    cells = np.stack([m.ravel() for m in mesh], axis=-1).astype(float)
    centers = np.empty_like(cells)
    for a in range(nd):
        lo = grid.lo[a] if a < grid.n else 0.0
        centers[:, a] = lo + (cells[:, a] + 0.5) * h
    cfull = np.concatenate([c, [0.0]])
    d = np.linalg.norm(centers - cfull, axis=1)
    half_diag = 0.5 * h * np.sqrt(nd)
    inside = d <= r - half_diag
    boundary = (~inside) & (d <= r + half_diag)
    frac = np.zeros(len(cells))
    frac[inside] = 1.0
    if np.any(boundary):
        # subcell corners at offsets (k + 1/2)/s - 1/2 for k < s
        offs = (np.arange(subsamples) + 0.5) / subsamples - 0.5
        sub = np.stack([m.ravel() for m in np.meshgrid(*([offs] * nd), indexing="ij")], axis=-1)
        bc = centers[boundary]
        pts = bc[:, None, :] + sub[None, :, :] * h
        dist = np.linalg.norm(pts - cfull, axis=2)
        frac[boundary] = np.mean(dist <= r, axis=1)
    keep = frac > 0
    vals = np.asarray(f(centers[keep]), dtype=float)
    return 2.0 * h**nd * float(np.sum(vals * frac[keep]))


def _fibonacci_sphere(n_points: int) -> np.ndarray:
    """Deterministic, nearly uniform point set on the unit 2-sphere."""
    i = np.arange(n_points)
    phi = np.pi * (3.0 - np.sqrt(5.0)) * i
    zc = 1.0 - 2.0 * (i + 0.5) / n_points
    rho = np.sqrt(np.maximum(0.0, 1.0 - zc * zc))
    return np.stack([rho * np.cos(phi), rho * np.sin(phi), zc], axis=-1)


def quad_sphere(grid: ExtensionGrid, f, center, r: float, n_ang: int = 2048) -> float:
    """Integral of f over the sphere of radius r about (center, 0).

    Uses uniform angular sampling (a Fibonacci lattice for n=2, midpoint angles
    for n=1); sample points are folded to z >= 0 before evaluation, which is
    the quadrature form of doubling the upper hemisphere under evenness.  Only
    even-in-z integrands are meaningful here.
    """
    c = np.asarray(center, dtype=float)
    if c.shape[-1] == grid.n + 1:
        if abs(c[grid.n]) > 1e-12:
            raise PreconditionError("sphere center must lie on the trace")
        c = c[: grid.n]
    if not ball_in_box(grid, c, r):
        raise PreconditionError("sphere exceeds the box")
    if grid.n == 1:
        theta = (np.arange(n_ang) + 0.5) * 2 * np.pi / n_ang
        pts = np.stack([c[0] + r * np.cos(theta), np.abs(r * np.sin(theta))], axis=-1)
        w = 2 * np.pi * r / n_ang
    elif grid.n == 2:
        dirs = _fibonacci_sphere(n_ang)
        pts = np.concatenate([c, [0.0]]) + r * dirs
        pts[:, 2] = np.abs(pts[:, 2])
        w = 4 * np.pi * r**2 / n_ang
    else:
        raise PreconditionError("sphere quadrature implemented for n in {1, 2}")
    vals = np.asarray(f(pts), dtype=float)
    return w * float(np.sum(vals))


# ---------------------------------------------------------------------------
# field serialization (.sfld): JSON header line + little-endian float64 payload


def save_field(path, f: ScalarField) -> None:
    header = {
        "n": f.grid.n,
        "lo": list(f.grid.lo),
        "hi": list(f.grid.hi),
        "z_top": f.grid.z_top,
        "h": f.grid.h,
        "dims": list(f.grid.shape),
        "even": f.even,
    }
    payload = f.values.astype("<f8").tobytes(order="C")
    with open(path, "wb") as fh:
        head = json.dumps(header, sort_keys=True).encode("utf-8")
        fh.write(struct.pack("<I", len(head)))
        fh.write(head)
        fh.write(payload)


def load_field(path) -> ScalarField:
    with open(path, "rb") as fh:
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        grid = ExtensionGrid(
            n=header["n"],
            lo=tuple(header["lo"]),
            hi=tuple(header["hi"]),
            z_top=header["z_top"],
            h=header["h"],
        )
        count = int(np.prod(header["dims"]))
        vals = np.frombuffer(fh.read(count * 8), dtype="<f8").reshape(header["dims"])
    return ScalarField(grid, vals.copy(), even=header.get("even", True))
