"""Capillary quermassintegrals, the Minkowski identity and Alexandrov-Fenchel gaps.

With ``c = cos(theta)`` and ``s = sin(theta)``:

    V_0     = |enclosed region|
    V_1     = (|Sigma| - c |wetted region|) / (n + 1)
    V_{k+1} = (int H_k dA - c s^k / n * int_{dSigma} H_{k-1}^{dSigma} ds) / (n + 1)

so that every cap satisfies ``V_m = |B_theta| r^{n+1-m}``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .caps import ball_cap_volume
from .geometry import (
    AXISYM,
    CurvatureData,
    HalfSphereGrid,
    RadialField,
    check_theta,
    sphere_area,
    surface_curvature,
    wall_value,
)


class StarShapeError(ValueError):
    pass


def enclosed_volume(curv: CurvatureData, grid: HalfSphereGrid | None = None) -> float:
    """Divergence theorem with the position field; the wetted face has <x, nu> = 0."""
    grid = grid or curv.grid
    if np.any(curv.u <= 0):
        raise StarShapeError(f"support function nonpositive (min {curv.u.min():.3e})")
    return grid.integrate(curv.u * curv.area_density) / (grid.n + 1)


def surface_area(curv: CurvatureData) -> float:
    return curv.grid.integrate(curv.area_density)


def boundary_radius(field: RadialField, theta: float) -> np.ndarray:
    """R = rho(pi/2) (a scalar for axisym, one value per azimuth for sphere2d)."""
    R = np.exp(wall_value(field, theta))
    if np.any(R <= 0) or not np.all(np.isfinite(R)):
        raise ValueError("nonpositive boundary radius")
    return R


def _polar_derivatives(R: np.ndarray):
    m = R.size
    wave = np.fft.rfftfreq(m, d=1.0 / m)
    Rh = np.fft.rfft(R)
    d1 = np.fft.irfft(1j * wave * Rh, n=m)
    d2 = np.fft.irfft(-(wave**2) * Rh, n=m)
    return d1, d2


def wetted_area(field: RadialField, theta: float) -> float:
    grid = field.grid
    R = boundary_radius(field, theta)
    if grid.backend == AXISYM:
        return float(sphere_area(grid.n - 1) / grid.n * R**grid.n)
    return float(0.5 * np.sum(R**2) * grid.delta_alpha)


def boundary_integrals(field: RadialField, theta: float) -> np.ndarray:
    """int_{dSigma} H_{j}^{dSigma} ds for j = 0..n-1 (normalized by C(n-1, j))."""
    grid = field.grid
    n = grid.n
    R = boundary_radius(field, theta)
    if grid.backend == AXISYM:
        return np.array([sphere_area(n - 1) * R ** (n - 1 - j) for j in range(n)], dtype=float)
    Ra, Raa = _polar_derivatives(R)
    speed = np.sqrt(R**2 + Ra**2)
    kappa = (R**2 + 2 * Ra**2 - R * Raa) / speed**3
    da = grid.delta_alpha
    return np.array([np.sum(speed) * da, np.sum(kappa * speed) * da])


@dataclass
class QuermassReport:
    t: float
    n: int
    theta: float
    V: np.ndarray
    area: float
    wetted: float
    boundary_terms: np.ndarray
    total_H: np.ndarray  # int H_j dA, j = 0..n
    ball_cap: float
    minkowski_residual: dict = field(default_factory=dict)
    af_gap: dict = field(default_factory=dict)

    @property
    def boundary_length(self) -> float:
        return float(self.boundary_terms[0])


def _quermass_from_parts(n, theta, volume, area, wetted, totals, bterms):
    c, s = np.cos(theta), np.sin(theta)
    V = np.empty(n + 2)
    V[0] = volume
    V[1] = (area - c * wetted) / (n + 1)
    for k in range(1, n + 1):
        V[k + 1] = (totals[k] - c * s**k / n * bterms[k - 1]) / (n + 1)
    return V


def quermass_all(curv: CurvatureData, field: RadialField, theta: float) -> np.ndarray:
    theta = check_theta(theta)
    grid = field.grid
    totals = np.array([grid.integrate(curv.H[..., j] * curv.area_density) for j in range(grid.n + 1)])
    return _quermass_from_parts(
        grid.n,
        theta,
        enclosed_volume(curv, grid),
        totals[0],
        wetted_area(field, theta),
        totals,
        boundary_integrals(field, theta),
    )


def quermass(curv: CurvatureData, field: RadialField, theta: float, m: int) -> float:
    n = field.grid.n
    if not 0 <= m <= n + 1:
        raise IndexError(f"quermass index {m} outside 0..{n + 1}")
    return float(quermass_all(curv, field, theta)[m])


def minkowski_residual(curv: CurvatureData, field: RadialField, theta: float, k: int) -> float:
    """Relative defect of int H_{k-1} (1 + c <nu,e>) dA = int H_k u dA."""
    n = field.grid.n
    if not 1 <= k <= n:
        raise IndexError(f"need 1 <= k <= n, got {k}")
    grid = field.grid
    c = np.cos(check_theta(theta))
    lhs = grid.integrate(curv.H[..., k - 1] * (1 - c * curv.tilt) * curv.area_density)
    rhs = grid.integrate(curv.H[..., k] * curv.u * curv.area_density)
    if rhs == 0:
        raise ZeroDivisionError("vanishing Minkowski denominator")
    return (lhs - rhs) / rhs


def af_gap(report: QuermassReport, k: int, l: int) -> float:
    """V_k/|B| - (V_l/|B|)^((n+1-k)/(n+1-l)); nonnegative on convex capillary surfaces."""
    n = report.n
    if not 0 <= l < k <= n:
        raise IndexError(f"need 0 <= l < k <= n, got l={l}, k={k}")
    B = report.ball_cap
    if report.V[l] <= 0:
        raise ValueError(f"V_{l} must be positive")
    return float(report.V[k] / B - (report.V[l] / B) ** ((n + 1 - k) / (n + 1 - l)))


def minkowski_inequality_gap(report: QuermassReport) -> float:
    """int H dA - n (n+1)^(1/n) |B|^(1/n) (|Sigma| - c|wetted|)^((n-1)/n) - c s |dSigma|, H = n H_1."""
    n = report.n
    c, s = np.cos(report.theta), np.sin(report.theta)
    total_mean = n * report.total_H[1]
    base = max(report.area - c * report.wetted, 0.0)
    return float(
        total_mean
        - n * (n + 1) ** (1 / n) * report.ball_cap ** (1 / n) * base ** ((n - 1) / n)
        - c * s * report.boundary_length
    )


def quermass_report(field: RadialField, theta: float, t: float = 0.0, af_pairs=(), minkowski_ks=None, curv=None):
    theta = check_theta(theta)
    grid = field.grid
    n = grid.n
    if curv is None:
        curv = surface_curvature(field, theta)
    totals = np.array([grid.integrate(curv.H[..., j] * curv.area_density) for j in range(n + 1)])
    wetted = wetted_area(field, theta)
    bterms = boundary_integrals(field, theta)
    V = _quermass_from_parts(n, theta, enclosed_volume(curv, grid), totals[0], wetted, totals, bterms)
    report = QuermassReport(
        t=float(t),
        n=n,
        theta=theta,
        V=V,
        area=float(totals[0]),
        wetted=wetted,
        boundary_terms=bterms,
        total_H=totals,
        ball_cap=ball_cap_volume(n, theta),
    )
    ks = range(1, n + 1) if minkowski_ks is None else minkowski_ks
    for k in ks:
        report.minkowski_residual[k] = minkowski_residual(curv, field, theta, k)
    for k, l in af_pairs:
        report.af_gap[(k, l)] = af_gap(report, k, l)
    return report

