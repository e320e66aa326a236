"""Half-sphere grids and the radial-graph curvature pipeline.

A star-shaped capillary hypersurface is written as ``{exp(phi(z)) z : z in S^n_+}``
with ``z = (beta, xi)``, ``beta`` the angle from the upward axis ``e_{n+1}``.
Nodes are cell-centred in ``beta`` so neither the pole nor the wall ``beta = pi/2``
carries a node; both are handled by one layer of ghost values.

Two backends share this module:

``axisym``
    fields depend on ``beta`` only; any ``n >= 2``.
``sphere2d``
    ``n = 2`` with a periodic azimuth ``alpha``.

Derivatives are reported in the orthonormal frame ``(e_beta, e_alpha / sin beta)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from math import gamma, pi

import numpy as np

from .symfun import normalized_all

AXISYM = "axisym"
SPHERE2D = "sphere2d"


def sphere_area(m: int) -> float:
    """|S^m|, the area of the unit m-sphere."""
    return 2 * pi ** ((m + 1) / 2) / gamma((m + 1) / 2)


@dataclass(frozen=True, eq=False)
class HalfSphereGrid:
    n: int
    backend: str
    n_beta: int
    n_alpha: int
    delta_beta: float
    delta_alpha: float
    beta: np.ndarray = field(repr=False)
    alpha: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)

    @property
    def shape(self) -> tuple:
        return (self.n_beta,) if self.backend == AXISYM else (self.n_beta, self.n_alpha)

    @property
    def beta_nodes(self) -> np.ndarray:
        """beta broadcast to the field shape."""
        return self.beta if self.backend == AXISYM else self.beta[:, None]

    def spec(self) -> dict:
        return {"n": self.n, "backend": self.backend, "n_beta": self.n_beta, "n_alpha": self.n_alpha}

    def integrate(self, values) -> float:
        """Quadrature against d sigma on S^n_+ with a fixed summation order."""
        return float(np.sum(self.weights * values))


def _midpoint_weights(m: int, h: float) -> np.ndarray:
    """Midpoint rule on cell centres plus the Euler-Maclaurin end correction.

    The h^2 (f'(b) - f'(a)) / 24 term uses three-point one-sided derivatives,
    which lifts the rule from second to fourth order.
    """
    w = np.full(m, h)
    w[:3] += h / 24 * np.array([2.0, -3.0, 1.0])
    w[-3:] += h / 24 * np.array([1.0, -3.0, 2.0])
    return w


def build_grid(n: int, backend: str = AXISYM, n_beta: int = 400, n_alpha: int = 0) -> HalfSphereGrid:
    if n < 2:
        raise ValueError(f"dimension n must be >= 2, got {n}")
    if n_beta < 16:
        raise ValueError(f"n_beta must be >= 16, got {n_beta}")
    dbeta = (pi / 2) / n_beta
    beta = (np.arange(n_beta) + 0.5) * dbeta
    wbeta = _midpoint_weights(n_beta, dbeta)
    if backend == AXISYM:
        # times the measure of the S^{n-1} orbit
        weights = sphere_area(n - 1) * np.sin(beta) ** (n - 1) * wbeta
        alpha = np.zeros(0)
        dalpha = 0.0
        n_alpha = 0
    elif backend == SPHERE2D:
        if n != 2:
            raise ValueError("sphere2d backend requires n = 2")
        if n_alpha < 8 or n_alpha % 2:
            raise ValueError(f"n_alpha must be even and >= 8, got {n_alpha}")
        dalpha = 2 * pi / n_alpha
        alpha = np.arange(n_alpha) * dalpha
        weights = np.repeat((np.sin(beta) * wbeta * dalpha)[:, None], n_alpha, axis=1)
    else:
        raise ValueError(f"unknown backend {backend!r}")
    for arr in (beta, alpha, weights):
        arr.setflags(write=False)
    return HalfSphereGrid(n, backend, n_beta, n_alpha, dbeta, dalpha, beta, alpha, weights)


@dataclass(eq=False)
class RadialField:
    grid: HalfSphereGrid
    phi: np.ndarray

    def __post_init__(self):
        self.phi = np.array(self.phi, dtype=float)
        if self.phi.shape != self.grid.shape:
            raise ValueError(f"phi has shape {self.phi.shape}, grid expects {self.grid.shape}")
        if not np.all(np.isfinite(self.phi)):
            raise ValueError("radial field contains non-finite values")

    @property
    def rho(self) -> np.ndarray:
        return np.exp(self.phi)

    def copy(self) -> "RadialField":
        return RadialField(self.grid, self.phi.copy())

    @classmethod
    def from_rho(cls, grid: HalfSphereGrid, rho) -> "RadialField":
        rho = np.asarray(rho, dtype=float)
        if np.any(rho <= 0):
            raise ValueError("radial function must be positive")
        return cls(grid, np.log(rho))


def check_theta(theta: float) -> float:
    theta = float(theta)
    if not 0 < theta <= pi / 2 + 1e-15:
        raise ValueError(f"contact angle {theta} outside (0, pi/2] is unsupported")
    return min(theta, pi / 2)


def oblique_slope(theta: float, s) -> np.ndarray:
    """Positive root p of p = cos(theta) sqrt(1 + p^2 + s^2)."""
    return np.cos(theta) * np.sqrt(1 + np.asarray(s) ** 2) / np.sin(theta)


def boundary_tangential_slope(phi: np.ndarray, grid: HalfSphereGrid) -> np.ndarray:
    """Orthonormal azimuthal derivative at beta = pi/2, extrapolated from the last three rows."""
    if grid.backend == AXISYM:
        return np.zeros(())
    da = grid.delta_alpha
    rows = phi[-3:]
    d = (np.roll(rows, -1, axis=1) - np.roll(rows, 1, axis=1)) / (2 * da)
    d /= np.sin(grid.beta[-3:])[:, None]
    return (15 * d[2] - 10 * d[1] + 3 * d[0]) / 8


def apply_capillary_bc(field: RadialField, theta: float) -> np.ndarray:
    """Ghost values past the wall beta = pi/2 enforcing the oblique capillary condition.

    The wall slope is the positive root ``cot(theta) sqrt(1 + s^2)``.  The ghost
    is the value at ``pi/2 + dbeta/2`` of the cubic matching that slope and the
    last three interior rows, which keeps the second difference at the last row
    second-order accurate (a plain ``phi[-1] + dbeta * slope`` fill is only
    first order there).
    """
    theta = check_theta(theta)
    grid = field.grid
    phi = field.phi
    s = boundary_tangential_slope(phi, grid)
    slope = oblique_slope(theta, s)
    return (21 * phi[-1] + 3 * phi[-2] - phi[-3] + 24 * grid.delta_beta * slope) / 23


def wall_slope(field: RadialField, theta: float) -> np.ndarray:
    """Centred difference of phi across the wall after the ghost fill."""
    return (apply_capillary_bc(field, theta) - field.phi[-1]) / field.grid.delta_beta


def wall_value(field: RadialField, theta: float) -> np.ndarray:
    """phi at beta = pi/2 from the same cubic that defines the wall ghost."""
    theta = check_theta(theta)
    phi = field.phi
    slope = oblique_slope(theta, boundary_tangential_slope(phi, field.grid))
    return (225 * phi[-1] - 50 * phi[-2] + 9 * phi[-3]) / 184 + 15 * field.grid.delta_beta * slope / 46


def apply_pole_bc(field: RadialField) -> np.ndarray:
    """Ghost values at beta = -dbeta/2 from regularity through the pole."""
    phi = field.phi
    if field.grid.backend == AXISYM:
        return np.array(phi[0])
    return np.roll(phi[0], -field.grid.n_alpha // 2)


def padded(field: RadialField, theta: float) -> np.ndarray:
    """phi with both ghost layers attached along the beta axis."""
    pole = apply_pole_bc(field)
    wall = apply_capillary_bc(field, theta)
    if field.grid.backend == AXISYM:
        return np.concatenate([[pole], field.phi, [wall]])
    return np.vstack([pole[None, :], field.phi, wall[None, :]])


@dataclass(eq=False)
class SurfaceJet:
    """Second-order jet of phi in the orthonormal frame.

    ``grad`` has shape ``(..., n)`` and ``hess`` ``(..., n, n)``.  In the axisym
    backend the azimuthal block of the Hessian is ``cot(beta) phi'`` times the
    identity.
    """

    grid: HalfSphereGrid
    phi: np.ndarray
    grad: np.ndarray
    hess: np.ndarray

    @property
    def v(self) -> np.ndarray:
        return np.sqrt(1 + np.sum(self.grad**2, axis=-1))

    @property
    def dphi_beta(self) -> np.ndarray:
        return self.grad[..., 0]


def jet(field: RadialField, theta: float) -> SurfaceJet:
    grid = field.grid
    n = grid.n
    P = padded(field, theta)
    h = grid.delta_beta
    beta = grid.beta_nodes
    cot = np.cos(beta) / np.sin(beta)
    if grid.backend == AXISYM:
        pb = (P[2:] - P[:-2]) / (2 * h)
        pbb = (P[2:] - 2 * P[1:-1] + P[:-2]) / h**2
        grad = np.zeros(grid.shape + (n,))
        grad[:, 0] = pb
        hess = np.zeros(grid.shape + (n, n))
        hess[:, 0, 0] = pbb
        for a in range(1, n):
            hess[:, a, a] = cot * pb
        return SurfaceJet(grid, field.phi.copy(), grad, hess)

    da = grid.delta_alpha
    sin = np.sin(beta)

    def ashift(a, s):
        return np.roll(a, -s, axis=1)

    C = P[1:-1]
    pb = (P[2:] - P[:-2]) / (2 * h)
    pbb = (P[2:] - 2 * C + P[:-2]) / h**2
    pa = (ashift(C, 1) - ashift(C, -1)) / (2 * da)
    paa = (ashift(C, 1) - 2 * C + ashift(C, -1)) / da**2
    pba = (ashift(P[2:], 1) - ashift(P[2:], -1) - ashift(P[:-2], 1) + ashift(P[:-2], -1)) / (4 * h * da)
    grad = np.stack([pb, pa / sin], axis=-1)
    hess = np.empty(grid.shape + (2, 2))
    hess[..., 0, 0] = pbb
    hess[..., 0, 1] = hess[..., 1, 0] = (pba - cot * pa) / sin
    hess[..., 1, 1] = paa / sin**2 + cot * pb
    return SurfaceJet(grid, field.phi.copy(), grad, hess)


def pencil_eig(A: np.ndarray, B: np.ndarray):
    """Eigenpairs of the symmetric pencil A w = lam B w, B positive definite; batched, ascending."""
    L = np.linalg.cholesky(B)
    Linv = np.linalg.inv(L)
    C = Linv @ A @ np.swapaxes(Linv, -1, -2)
    C = 0.5 * (C + np.swapaxes(C, -1, -2))
    lam, Y = np.linalg.eigh(C)
    W = np.swapaxes(Linv, -1, -2) @ Y
    return lam, W


def fundamental_forms(j: SurfaceJet):
    """(g, h) in the orthonormal frame of the round metric."""
    n = j.grid.n
    eye = np.broadcast_to(np.eye(n), j.hess.shape)
    ppT = j.grad[..., :, None] * j.grad[..., None, :]
    r = np.exp(j.phi)[..., None, None]
    v = j.v[..., None, None]
    g = r**2 * (eye + ppT)
    h = (r / v) * (eye + ppT - j.hess)
    return g, h


@dataclass(eq=False)
class CurvatureData:
    jet: SurfaceJet
    kappa: np.ndarray  # (..., n) ascending
    H: np.ndarray  # (..., n + 1)
    u: np.ndarray
    tilt: np.ndarray  # <nu, e_{n+1}>
    area_density: np.ndarray  # dA / d sigma

    @property
    def grid(self) -> HalfSphereGrid:
        return self.jet.grid

    def F(self, k: int) -> np.ndarray:
        return self.H[..., k] / self.H[..., k - 1]


def axisym_principal_curvatures(j: SurfaceJet):
    """(kappa_beta, kappa_alpha) in closed form; kappa_alpha has multiplicity n - 1."""
    v = j.v
    ev = np.exp(j.phi) * v
    k_beta = (1 - j.hess[..., 0, 0] / v**2) / ev
    k_alpha = (1 - j.hess[..., 1, 1]) / ev
    return k_beta, k_alpha


def curvature(j: SurfaceJet, method: str = "auto") -> CurvatureData:
    grid = j.grid
    n = grid.n
    if method == "auto":
        method = "closed" if grid.backend == AXISYM else "pencil"
    if method == "closed":
        if grid.backend != AXISYM:
            raise ValueError("closed-form curvatures need the axisym backend")
        kb, ka = axisym_principal_curvatures(j)
        kappa = np.sort(np.column_stack([kb] + [ka] * (n - 1)), axis=-1)
    elif method == "pencil":
        g, h = fundamental_forms(j)
        kappa, _ = pencil_eig(h, g)
    else:
        raise ValueError(f"unknown method {method!r}")
    if not np.all(np.isfinite(kappa)):
        raise FloatingPointError("non-finite principal curvature")
    v = j.v
    r = np.exp(j.phi)
    beta = grid.beta_nodes
    tilt = (np.cos(beta) + np.sin(beta) * j.grad[..., 0]) / v
    return CurvatureData(
        jet=j,
        kappa=kappa,
        H=normalized_all(kappa),
        u=r / v,
        tilt=tilt,
        area_density=r**n * v,
    )


def surface_curvature(field: RadialField, theta: float, method: str = "auto") -> CurvatureData:
    return curvature(jet(field, theta), method)


def cap_radial(r: float, theta: float, beta):
    """Distance from the origin to C_{r,theta} along the ray at polar angle beta."""
    c = np.cos(theta)
    beta = np.asarray(beta, dtype=float)
    return r * (np.sqrt(1 - c**2 * np.sin(beta) ** 2) - c * np.cos(beta))


def restrict_axisym(field2d: RadialField, tol: float = 1e-12) -> RadialField:
    grid = field2d.grid
    if grid.backend != SPHERE2D:
        raise ValueError("restrict_axisym expects a sphere2d field")
    spread = np.max(np.ptp(field2d.phi, axis=1))
    if spread > tol:
        raise ValueError(f"field varies in azimuth by {spread:.3e} > {tol:.1e}")
    g1 = build_grid(grid.n, AXISYM, grid.n_beta)
    return RadialField(g1, field2d.phi.mean(axis=1))
