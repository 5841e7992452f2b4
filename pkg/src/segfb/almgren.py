"""Localized energy E, height H, the frequency N = E/H, and their identities.

For a configuration u = (u_1, ..., u_k) and a trace center x_0,

    E(r) = r^{1-n} * integral over B_r((x_0,0)) of sum_i |grad u_i|^2,
    H(r) = r^{-n}  * integral over the sphere of radius r of sum_i u_i^2.

For elements of the variational class the frequency r -> N(r) is nondecreasing,
d/dr log H = 2N/r, and the Pohozaev balance

    (1-n) int_{B_r} sum |grad u_i|^2 + r int_{dB_r} sum |grad u_i|^2
        = 2 r int_{dB_r} sum |d_nu u_i|^2

holds for a.e. radius.  Everything here is read-only analysis of sampled
fields; gradients are centered differences with the even-reflection one-sided
rule on the trace layer.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import PreconditionError
from .grid import (
    Configuration,
    ball_in_box,
    gradient_arrays,
    interpolate_array,
    quad_ball,
    quad_sphere,
)

H_FLOOR = 1e-14


@dataclass
class FrequencyReport:
    center: np.ndarray
    radii: np.ndarray
    E: np.ndarray
    H: np.ndarray
    N: np.ndarray
    N_zero_plus: float
    monotonicity_defect: float

    def to_csv(self, path) -> None:
        """One row per radius: center coords, r, E, H, N (header mandatory)."""
        n = len(self.center)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"x{i+1}" for i in range(n)] + ["r", "E", "H", "N"])
            for j in range(len(self.radii)):
                w.writerow(
                    [_fmt(c) for c in self.center]
                    + [_fmt(self.radii[j]), _fmt(self.E[j]), _fmt(self.H[j]), _fmt(self.N[j])]
                )


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _check_radius(grid, center, r):
    if r < 4 * grid.h - 1e-12:
        raise PreconditionError(f"radius {r} below 4h = {4 * grid.h}")
    if not ball_in_box(grid, center, r):
        raise PreconditionError("ball is not inside the box")


def _gradsq_array(u: Configuration) -> np.ndarray:
    total = np.zeros(u.grid.shape)
    for f in u.fields:
        for d in gradient_arrays(f):
            total += d * d
    return total


def energy_E(u: Configuration, x0, r: float, n_ang: int = 2048) -> float:
    """E(x0, r) = r^{1-n} * quad_ball of the summed squared gradients."""
    grid = u.grid
    x0 = np.asarray(x0, dtype=float)[: grid.n]
    _check_radius(grid, x0, r)
    gsq = _gradsq_array(u)
    val = quad_ball(grid, lambda P: interpolate_array(grid, gsq, P), x0, r)
    return float(r ** (1 - grid.n) * val)


def height_H(u: Configuration, x0, r: float, n_ang: int = 2048) -> float:
    """H(x0, r) = r^{-n} * quad_sphere of sum_i u_i^2 (components interpolated,
    then squared, which respects the trace kink better than squaring first)."""
    grid = u.grid
    x0 = np.asarray(x0, dtype=float)[: grid.n]
    _check_radius(grid, x0, r)

    def integrand(P):
        tot = np.zeros(P.shape[0])
        for f in u.fields:
            v = interpolate_array(grid, f.values, P)
            tot += v * v
        return tot

    val = quad_sphere(grid, integrand, x0, r, n_ang=n_ang)
    return float(r ** (-grid.n) * val)


def frequency_N(u: Configuration, x0, radii, n_ang: int = 2048) -> FrequencyReport:
    """N(r) = E(r)/H(r) per radius; N(x,0+) by linear extrapolation in r from
    the three smallest radii."""
    radii = np.sort(np.asarray(radii, dtype=float))
    if radii.size < 1:
        raise PreconditionError("need at least one radius")
    E = np.array([energy_E(u, x0, r, n_ang) for r in radii])
    H = np.array([height_H(u, x0, r, n_ang) for r in radii])
    if np.any(H < H_FLOOR):
        raise PreconditionError("H below floor: center is a sphere-wide zero of u")
    N = E / H
    if radii.size >= 3:
        coef = np.polyfit(radii[:3], N[:3], 1)
        n0 = float(np.polyval(coef, 0.0))
    else:
        n0 = float(N[0])
    defect = float(np.max(np.maximum(0.0, N[:-1] - N[1:]))) if radii.size > 1 else 0.0
    return FrequencyReport(
        center=np.asarray(x0, dtype=float)[: u.grid.n],
        radii=radii,
        E=E,
        H=H,
        N=N,
        N_zero_plus=n0,
        monotonicity_defect=defect,
    )


def check_logderivative(report: FrequencyReport) -> float:
    """Max relative defect of d/dr log H against 2N/r over interior radii."""
    r = report.radii
    if r.size < 3:
        raise PreconditionError("need at least three radii")
    dlogH = np.gradient(np.log(report.H), r)
    rhs = 2.0 * report.N / r
    lhs = dlogH[1:-1]
    rhs = rhs[1:-1]
    defects = []
    for a, b in zip(lhs, rhs):
        if abs(a) < 1e-12 and abs(b) < 1e-12:
            defects.append(0.0)
        else:
            defects.append(abs(a - b) / max(abs(b), 1e-14))
    return float(np.max(defects))


def pohozaev_residual(u: Configuration, x0, r: float, n_ang: int = 2048) -> dict:
    """Normalized defect of the spherical Pohozaev balance at radius r.

    Returns {"residual", "degenerate", "lhs_terms"}; for a constant
    configuration the 0/0 is guarded and reported as residual 0, degenerate."""
    grid = u.grid
    x0 = np.asarray(x0, dtype=float)[: grid.n]
    _check_radius(grid, x0, r)
    gsq = _gradsq_array(u)
    grads = [gradient_arrays(f) for f in u.fields]
    ball_term = quad_ball(grid, lambda P: interpolate_array(grid, gsq, P), x0, r)
    sphere_gsq = quad_sphere(grid, lambda P: interpolate_array(grid, gsq, P), x0, r, n_ang)

    center_full = np.concatenate([x0, [0.0]])

    def normsq(P):
        nu = (P - center_full) / r
        tot = np.zeros(P.shape[0])
        for comps in grads:
            dn = np.zeros(P.shape[0])
            for a in range(grid.n + 1):
                dn += nu[:, a] * interpolate_array(grid, comps[a], P)
            tot += dn * dn
        return tot

    sphere_normal = quad_sphere(grid, normsq, x0, r, n_ang)
    lhs = (1 - grid.n) * ball_term + r * sphere_gsq - 2 * r * sphere_normal
    scale = r * sphere_gsq
    if scale < 1e-13:
        return {"residual": 0.0, "degenerate": True,
                "terms": (ball_term, sphere_gsq, sphere_normal)}
    return {"residual": float(abs(lhs) / scale), "degenerate": False,
            "terms": (ball_term, sphere_gsq, sphere_normal)}


def doubling_check(u: Configuration, x0, r1: float, r2: float,
                   n_samples: int = 5, n_ang: int = 2048) -> dict:
    """H(r2) against H(r1) (r2/r1)^{2 max N}, the sharp discrete consequence of
    the log-derivative identity; the exponent samples N over [r1, r2]."""
    if not (0 < r1 < r2):
        raise PreconditionError("need 0 < r1 < r2")
    radii = np.linspace(r1, r2, n_samples)
    rep = frequency_N(u, x0, radii, n_ang=n_ang)
    n_max = float(np.max(rep.N))
    lhs = rep.H[-1]
    rhs = rep.H[0] * (r2 / r1) ** (2 * n_max)
    return {
        "lhs": float(lhs),
        "rhs": float(rhs),
        "exponent": 2 * n_max,
        "satisfied": bool(lhs <= rhs * (1 + 1e-6)),
        "ratio": float(lhs / rep.H[0]),
    }
