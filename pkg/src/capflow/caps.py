"""Spherical caps C_{r,theta}: the stationary solutions and AF equality cases."""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from math import gamma, pi

import numpy as np
from scipy.integrate import quad

from .geometry import AXISYM, HalfSphereGrid, RadialField, cap_radial, check_theta


@dataclass(frozen=True)
class SphericalCap:
    """Part of the sphere of radius r centred at -r cos(theta) e_{n+1} above the wall."""

    r: float
    theta: float

    def __post_init__(self):
        if not self.r > 0:
            raise ValueError(f"cap radius must be positive, got {self.r}")
        object.__setattr__(self, "theta", check_theta(self.theta))

    def radial(self, beta):
        return cap_radial(self.r, self.theta, beta)

    @property
    def boundary_radius(self) -> float:
        return self.r * np.sin(self.theta)


def ball_volume(m: int) -> float:
    return pi ** (m / 2) / gamma(m / 2 + 1)


@lru_cache(maxsize=None)
def ball_cap_volume(n: int, theta: float) -> float:
    """|B_theta^{n+1}|: the part of the unit (n+1)-ball above height cos(theta), by slices."""
    if n < 2:
        raise ValueError("n must be >= 2")
    theta = check_theta(theta)
    slice_area = ball_volume(n)
    val, _ = quad(lambda z: slice_area * (1 - z * z) ** (n / 2), np.cos(theta), 1.0, epsabs=1e-15, epsrel=1e-13, limit=200)
    if n == 2:
        c = np.cos(theta)
        closed = pi * (1 - c) ** 2 * (2 + c) / 3
        if abs(val - closed) > 1e-12 * closed:
            raise ArithmeticError("cap volume quadrature disagrees with closed form")
    return val


def cap_quermass(cap: SphericalCap, n: int, m: int) -> float:
    """V_{m,theta} of the cap: |B_theta| r^{n+1-m}.

    For m = n + 1 the same expression gives the r-independent value |B_theta|.
    Only its constancy in r is checked; its absolute normalization is a convention.
    """
    if not 0 <= m <= n + 1:
        raise IndexError(f"quermass index {m} outside 0..{n + 1}")
    return ball_cap_volume(n, cap.theta) * cap.r ** (n + 1 - m)


def predicted_limit_radius(V_k: float, k: int, n: int, theta: float) -> float:
    """Radius of the cap with the same V_k; the flow preserves V_k, so this is where it ends up."""
    if not V_k > 0:
        raise ValueError(f"V_k must be positive, got {V_k}")
    if not 1 <= k <= n:
        raise IndexError(f"need 1 <= k <= n, got k={k}")
    return (V_k / ball_cap_volume(n, theta)) ** (1.0 / (n + 1 - k))


def fit_cap(field: RadialField, theta: float):
    """Weighted least-squares cap radius and the sup-norm distance to that cap.

    rho_cap is linear in r, so the minimiser is a ratio of two quadratures.
    """
    theta = check_theta(theta)
    grid = field.grid
    rho = field.rho
    if np.all(rho <= 0):
        raise ValueError("degenerate radial field")
    q = np.broadcast_to(cap_radial(1.0, theta, grid.beta_nodes), rho.shape)
    r_fit = float(np.sum(grid.weights * rho * q) / np.sum(grid.weights * q * q))
    sup_error = float(np.max(np.abs(rho - r_fit * q)))
    return r_fit, sup_error


def cap_field(grid: HalfSphereGrid, r: float, theta: float) -> RadialField:
    cap = SphericalCap(r, theta)
    rho = np.broadcast_to(cap.radial(grid.beta_nodes), grid.shape)
    return RadialField.from_rho(grid, rho)


def perturbation(grid: HalfSphereGrid, modes, seed: int = 0) -> np.ndarray:
    """Seeded smooth perturbation of phi that is regular at the pole.

    Each mode is ``(frequency, amplitude)``.  On the axisym backend frequency m
    gives ``cos(2 m beta)`` with a seeded sign.  On sphere2d, frequency j >= 1
    gives ``sin(beta)^j cos(j alpha + psi)`` with a seeded phase psi, and j = 0
    the axisymmetric ``cos(2 beta)`` with a seeded sign.  Every mode has zero
    beta-derivative at the equator (the hemisphere wall).
    """
    rng = np.random.default_rng(seed)
    beta = grid.beta_nodes
    out = np.zeros(grid.shape)
    for freq, amp in modes:
        freq = int(freq)
        if freq < 0:
            raise ValueError("mode frequency must be nonnegative")
        if grid.backend == AXISYM:
            sign = rng.choice([-1.0, 1.0])
            out += sign * amp * np.cos(2 * freq * beta)
        elif freq == 0:
            sign = rng.choice([-1.0, 1.0])
            out += sign * amp * np.cos(2 * beta) * np.ones(grid.shape)
        else:
            psi = rng.uniform(0, 2 * pi)
            out += amp * np.sin(beta) ** freq * np.cos(freq * grid.alpha[None, :] + psi)
    return out


def perturbed_cap_field(grid: HalfSphereGrid, r: float, theta: float, modes, seed: int = 0) -> RadialField:
    base = cap_field(grid, r, theta)
    return RadialField(grid, base.phi + perturbation(grid, modes, seed))
