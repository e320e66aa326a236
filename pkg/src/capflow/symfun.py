"""Elementary symmetric functions of principal curvatures.

Everything here accepts either a single curvature vector of shape ``(n,)`` or a
stack of them with shape ``(..., n)``; the last axis always indexes the
principal curvatures.

The quotient index is called ``k`` throughout: ``F = H_k / H_{k-1}``.  When the
same machinery is used for quermassintegral comparisons the lower index is
called ``l``.
"""
from __future__ import annotations

from dataclasses import dataclass
from math import comb

import numpy as np


class DomainError(ValueError):
    """A curvature vector left the cone required by the operation."""

    def __init__(self, message: str, kappa=None):
        super().__init__(message)
        self.kappa = None if kappa is None else np.array(kappa, dtype=float)


def _as_kappa(kappa) -> np.ndarray:
    if isinstance(kappa, CurvatureVector):
        return kappa.kappa
    arr = np.asarray(kappa, dtype=float)
    if arr.ndim == 0:
        raise ValueError("kappa must have at least one entry")
    return arr


@dataclass(frozen=True)
class CurvatureVector:
    kappa: np.ndarray

    def __post_init__(self):
        arr = np.array(self.kappa, dtype=float).reshape(-1)
        if arr.size < 2:
            raise ValueError("need n >= 2 principal curvatures")
        if not np.all(np.isfinite(arr)):
            raise ValueError("principal curvatures must be finite")
        arr.setflags(write=False)
        object.__setattr__(self, "kappa", arr)

    @property
    def n(self) -> int:
        return self.kappa.size

    @property
    def in_positive_cone(self) -> bool:
        return in_positive_cone(self.kappa)

    def in_garding_cone(self, k: int) -> bool:
        return in_garding_cone(self.kappa, k)


def sigma_all(kappa) -> np.ndarray:
    """All of sigma_0..sigma_n, stacked along a new last axis.

    Coefficients of prod_i (1 + t kappa_i), built one factor at a time.
    """
    kap = _as_kappa(kappa)
    n = kap.shape[-1]
    out = np.zeros(kap.shape[:-1] + (n + 1,))
    out[..., 0] = 1.0
    for i in range(n):
        ki = kap[..., i : i + 1]
        # update from the top so each coefficient uses the previous row
        out[..., 1 : i + 2] = out[..., 1 : i + 2] + ki * out[..., 0 : i + 1]
    return out


def sigma(kappa, j: int):
    kap = _as_kappa(kappa)
    n = kap.shape[-1]
    if not 0 <= j <= n:
        raise IndexError(f"sigma index {j} outside 0..{n}")
    return sigma_all(kap)[..., j]


def normalized_all(kappa) -> np.ndarray:
    """H_0..H_n with H_j = sigma_j / C(n, j)."""
    kap = _as_kappa(kappa)
    n = kap.shape[-1]
    binoms = np.array([comb(n, j) for j in range(n + 1)], dtype=float)
    return sigma_all(kap) / binoms


def normalized_H(kappa, j: int):
    kap = _as_kappa(kappa)
    n = kap.shape[-1]
    if not 0 <= j <= n:
        raise IndexError(f"H index {j} outside 0..{n}")
    return normalized_all(kap)[..., j]


def in_positive_cone(kappa) -> bool:
    return bool(np.all(_as_kappa(kappa) > 0))


def in_garding_cone(kappa, k: int) -> bool:
    s = sigma_all(kappa)
    return bool(np.all(s[..., 1 : k + 1] > 0))


def sigma_all_removed(kappa) -> np.ndarray:
    """sigma_j(kappa | i): shape ``(..., n, n)``, entry ``[..., i, j]`` for j < n."""
    kap = _as_kappa(kappa)
    n = kap.shape[-1]
    out = np.empty(kap.shape[:-1] + (n, n))
    for i in range(n):
        rest = np.delete(kap, i, axis=-1)
        out[..., i, :] = sigma_all(rest)
    return out


@dataclass(frozen=True)
class QuotientFunction:
    """F = H_k / H_{k-1} on R^n."""

    k: int
    n: int

    def __post_init__(self):
        if self.n < 1 or not 1 <= self.k <= self.n:
            raise ValueError(f"need 1 <= k <= n, got k={self.k}, n={self.n}")

    @property
    def _scale(self) -> float:
        return comb(self.n, self.k - 1) / comb(self.n, self.k)

    def _check(self, kap: np.ndarray, positive: bool) -> np.ndarray:
        if kap.shape[-1] != self.n:
            raise ValueError(f"expected {self.n} curvatures, got {kap.shape[-1]}")
        if positive:
            bad = ~np.all(kap > 0, axis=-1)
        else:
            bad = ~(sigma_all(kap)[..., self.k - 1] > 0)
        if np.any(bad):
            idx = np.argwhere(np.atleast_1d(bad))[0]
            where = kap if kap.ndim == 1 else kap[tuple(idx)]
            what = "outside Gamma_+" if positive else f"has H_{self.k - 1} <= 0"
            raise DomainError(f"curvature vector {where} {what}", where)
        return kap

    def value(self, kappa):
        kap = self._check(_as_kappa(kappa), positive=False)
        H = normalized_all(kap)
        return H[..., self.k] / H[..., self.k - 1]

    __call__ = value

    def gradient(self, kappa) -> np.ndarray:
        """df/dkappa_i by the quotient rule, with d sigma_j / d kappa_i = sigma_{j-1}(kappa | i)."""
        kap = self._check(_as_kappa(kappa), positive=True)
        k = self.k
        s = sigma_all(kap)
        rem = sigma_all_removed(kap)
        ds_k = rem[..., k - 1]
        ds_km1 = rem[..., k - 2] if k >= 2 else np.zeros_like(ds_k)
        sk = s[..., k, None]
        skm1 = s[..., k - 1, None]
        return self._scale * (ds_k * skm1 - sk * ds_km1) / skm1**2

    def hessian_fd(self, kappa, step: float = 1e-4) -> np.ndarray:
        """Second derivatives by central differences of the analytic gradient."""
        kap = _as_kappa(kappa)
        n = self.n
        out = np.empty(kap.shape[:-1] + (n, n))
        for j in range(n):
            e = np.zeros(n)
            e[j] = step
            out[..., :, j] = (self.gradient(kap + e) - self.gradient(kap - e)) / (2 * step)
        return 0.5 * (out + np.swapaxes(out, -1, -2))

    def key_inequality_terms(self, kappa):
        """(F^2, sum_i fdot^i kappa_i^2, (n-k+1) F^2) with the middle term checked twice.

        The middle term equals [(n-k+1) H_k^2 - (n-k) H_{k-1} H_{k+1}] / H_{k-1}^2.
        """
        kap = self._check(_as_kappa(kappa), positive=True)
        n, k = self.n, self.k
        F = self.value(kap)
        middle = np.sum(self.gradient(kap) * kap**2, axis=-1)
        H = normalized_all(kap)
        Hkp1 = H[..., k + 1] if k < n else 0.0
        closed = ((n - k + 1) * H[..., k] ** 2 - (n - k) * H[..., k - 1] * Hkp1) / H[..., k - 1] ** 2
        if not np.allclose(middle, closed, rtol=1e-10, atol=0.0):
            raise ArithmeticError("quotient-rule and closed-form middle terms disagree")
        return F**2, middle, (n - k + 1) * F**2

    def inverse_concavity_residual(self, kappa, y, step: float = 1e-4):
        """sum fddot y y + 2 sum (fdot/kappa) y^2 - 2 (sum fdot y)^2 / F; nonnegative on Gamma_+."""
        kap = self._check(_as_kappa(kappa), positive=True)
        y = np.asarray(y, dtype=float)
        grad = self.gradient(kap)
        hess = self.hessian_fd(kap, step)
        F = self.value(kap)
        quad = np.einsum("...i,...ij,...j->...", y, hess, y)
        return quad + 2 * np.sum(grad / kap * y**2, axis=-1) - 2 * np.sum(grad * y, axis=-1) ** 2 / F


def F_value(q: QuotientFunction, kappa):
    return q.value(kappa)


def F_gradient(q: QuotientFunction, kappa):
    return q.gradient(kappa)


def key_inequality_terms(q: QuotientFunction, kappa):
    return q.key_inequality_terms(kappa)


def inverse_concavity_residual(q: QuotientFunction, kappa, y, step: float = 1e-4):
    return q.inverse_concavity_residual(kappa, y, step)


def newton_maclaurin_gap(kappa, k: int, l: int):
    """H_l H_{k-1} - H_{l-1} H_k, nonnegative on Gamma_k^+ and zero only on umbilic vectors."""
    kap = _as_kappa(kappa)
    n = kap.shape[-1]
    if not 1 <= l < k <= n:
        raise IndexError(f"need 1 <= l < k <= n, got l={l}, k={k}, n={n}")
    s = sigma_all(kap)
    if not np.all(s[..., 1 : k + 1] > 0):
        raise DomainError(f"curvature vector outside Gamma_{k}^+", kap)
    H = normalized_all(kap)
    return H[..., l] * H[..., k - 1] - H[..., l - 1] * H[..., k]
