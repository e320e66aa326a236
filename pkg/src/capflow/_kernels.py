"""Compiled right-hand sides for the scalar flows.

These mirror ``geometry.jet`` / ``geometry.curvature`` node by node (same
stencils, same ghost fills) but avoid the per-step array overhead.  Each
kernel writes the tendency minus ``bal`` into ``out`` and returns ``(bad, dmax)``: ``bad``
is the flat index of the first node outside the admissible cone (``-1`` if
none) and ``dmax`` bounds the linearised diffusion coefficient.

Speed modes: ``k >= 1`` is the capillary inverse curvature flow with
``F = H_k / H_{k-1}``; ``k = 0`` is mean curvature flow ``-H``.
"""
import math

import numpy as np
from numba import njit


@njit(cache=True, error_model="numpy")
def _sigmas_axisym(kb, ka, n, binom_nm1, out):
    # kappa = (kb, ka, ..., ka) with ka repeated n - 1 times
    out[0] = 1.0
    pw = 1.0  # ka^(j-1)
    for j in range(1, n + 1):
        s = kb * binom_nm1[j - 1] * pw
        pw *= ka
        if j <= n - 1:
            s += binom_nm1[j] * pw
        out[j] = s


@njit(cache=True, error_model="numpy")
def _speed_terms(sig, n, k, binom_n, e, v, tilt, cos_t):
    """(speed, diffusion bound, admissible) for one node given sigma_0..sigma_n."""
    if k == 0:
        if sig[1] != sig[1]:
            return 0.0, 0.0, False
        return -sig[1], n / (e * e * v), True
    for j in range(1, k + 1):
        if not sig[j] > 0.0:
            return 0.0, 0.0, False
    Hk = sig[k] / binom_n[k]
    Hkm1 = sig[k - 1] / binom_n[k - 1]
    F = Hk / Hkm1
    w = 1.0 - cos_t * tilt
    speed = w / F - e / v
    skm2 = sig[k - 2] if k >= 2 else 0.0
    sum_fdot = (binom_n[k - 1] / binom_n[k]) * (
        (n - k + 1) * sig[k - 1] ** 2 - (n - k + 2) * sig[k] * skm2
    ) / sig[k - 1] ** 2
    return speed, w * sum_fdot / (F * F * e * e * v), True


@njit(cache=True, error_model="numpy")
def axisym_rhs(phi, sinb, cosb, h, n, k, cos_t, sin_t, binom_n, binom_nm1, bal, sig, out):
    N = phi.shape[0]
    slope = cos_t / sin_t
    wall = (21.0 * phi[N - 1] + 3.0 * phi[N - 2] - phi[N - 3] + 24.0 * h * slope) / 23.0
    inv2h = 0.5 / h
    invh2 = 1.0 / (h * h)
    dmax = 0.0
    bad = -1
    for i in range(N):
        left = phi[0] if i == 0 else phi[i - 1]
        right = wall if i == N - 1 else phi[i + 1]
        p = (right - left) * inv2h
        q = (right - 2.0 * phi[i] + left) * invh2
        v2 = 1.0 + p * p
        v = math.sqrt(v2)
        e = math.exp(phi[i])
        sb = sinb[i]
        cb = cosb[i]
        inv_ev = 1.0 / (e * v)
        kb = (1.0 - q / v2) * inv_ev
        ka = (1.0 - cb / sb * p) * inv_ev
        _sigmas_axisym(kb, ka, n, binom_nm1, sig)
        tilt = (cb + sb * p) / v
        speed, d, ok = _speed_terms(sig, n, k, binom_n, e, v, tilt, cos_t)
        if not ok:
            if bad < 0:
                bad = i
            out[i] = np.nan
            continue
        out[i] = v / e * speed - bal[i]
        if d > dmax:
            dmax = d
    return bad, dmax


@njit(cache=True, error_model="numpy")
def sphere2d_rhs(phi, sinb, cosb, h, da, k, cos_t, sin_t, bal, out):
    N, M = phi.shape
    half = M // 2
    # wall ghosts: three-row extrapolated tangential slope, cubic fill
    wall = np.empty(M)
    for j in range(M):
        jp = (j + 1) % M
        jm = (j - 1) % M
        d1 = (phi[N - 1, jp] - phi[N - 1, jm]) / (2.0 * da) / sinb[N - 1]
        d2 = (phi[N - 2, jp] - phi[N - 2, jm]) / (2.0 * da) / sinb[N - 2]
        d3 = (phi[N - 3, jp] - phi[N - 3, jm]) / (2.0 * da) / sinb[N - 3]
        s = (15.0 * d1 - 10.0 * d2 + 3.0 * d3) / 8.0
        slope = cos_t * math.sqrt(1.0 + s * s) / sin_t
        wall[j] = (21.0 * phi[N - 1, j] + 3.0 * phi[N - 2, j] - phi[N - 3, j] + 24.0 * h * slope) / 23.0
    binom_n = np.array([1.0, 2.0, 1.0])
    sig = np.empty(3)
    dmax = 0.0
    bad = -1
    for i in range(N):
        sb = sinb[i]
        cb = cosb[i]
        cot = cb / sb
        for j in range(M):
            jp = (j + 1) % M
            jm = (j - 1) % M
            c = phi[i, j]
            if i == 0:
                # across the pole: phi(-beta, alpha) = phi(beta, alpha + pi)
                dn = phi[0, (j + half) % M]
                dnp = phi[0, (jp + half) % M]
                dnm = phi[0, (jm + half) % M]
            else:
                dn = phi[i - 1, j]
                dnp = phi[i - 1, jp]
                dnm = phi[i - 1, jm]
            if i == N - 1:
                up = wall[j]
                upp = wall[jp]
                upm = wall[jm]
            else:
                up = phi[i + 1, j]
                upp = phi[i + 1, jp]
                upm = phi[i + 1, jm]
            pb = (up - dn) / (2.0 * h)
            pbb = (up - 2.0 * c + dn) / (h * h)
            pa = (phi[i, jp] - phi[i, jm]) / (2.0 * da)
            paa = (phi[i, jp] - 2.0 * c + phi[i, jm]) / (da * da)
            pba = (upp - upm - dnp + dnm) / (4.0 * h * da)
            g0 = pb
            g1 = pa / sb
            h00 = pbb
            h01 = (pba - cot * pa) / sb
            h11 = paa / (sb * sb) + cot * pb
            v2 = 1.0 + g0 * g0 + g1 * g1
            v = math.sqrt(v2)
            e = math.exp(c)
            # pencil A w = lam B w with B = I + g g^T, A = B - Hess
            a00 = 1.0 + g0 * g0 - h00
            a01 = g0 * g1 - h01
            a11 = 1.0 + g1 * g1 - h11
            trA = a00 + a11
            gAg = g0 * g0 * a00 + 2.0 * g0 * g1 * a01 + g1 * g1 * a11
            scale = 1.0 / (e * v)
            sig[0] = 1.0
            sig[1] = (trA - gAg / v2) * scale
            sig[2] = (a00 * a11 - a01 * a01) / v2 * scale * scale
            tilt = (cb + sb * pb) / v
            speed, d, ok = _speed_terms(sig, 2, k, binom_n, e, v, tilt, cos_t)
            if not ok:
                if bad < 0:
                    bad = i * M + j
                out[i, j] = np.nan
                continue
            out[i, j] = v / e * speed - bal[i, j]
            if d > dmax:
                dmax = d
    return bad, dmax


@njit(cache=True, error_model="numpy")
def _finite(a):
    for x in a.flat:
        if not math.isfinite(x):
            return False
    return True


@njit(cache=True, error_model="numpy")
def _maxabs(a):
    m = 0.0
    for x in a.flat:
        ax = abs(x)
        if ax > m:
            m = ax
    return m


@njit(cache=True, error_model="numpy")
def axisym_advance(
    phi, sinb, cosb, h, n, k, cos_t, sin_t, binom_n, binom_nm1, bal,
    t, t_max, cfl, warm_left, steady_tol, window, count, nsteps, max_halvings,
):
    """Up to ``nsteps`` midpoint steps in place.

    Returns ``(status, steps, t, dt_last, count, max_rhs, bad)`` with status
    0 = ran all steps, 1 = steady window met, 2 = reached t_max,
    3 = cone violation at entry, 4 = every halving rejected.
    """
    N = phi.shape[0]
    sig = np.empty(n + 1)
    r1 = np.empty(N)
    r2 = np.empty(N)
    r3 = np.empty(N)
    mid = np.empty(N)
    new = np.empty(N)
    h2 = h * h
    bad, D = axisym_rhs(phi, sinb, cosb, h, n, k, cos_t, sin_t, binom_n, binom_nm1, bal, sig, r1)
    m = _maxabs(r1)
    if bad >= 0 or not math.isfinite(m):
        return 3, 0, t, 0.0, count, m, bad
    dt_last = 0.0
    for s in range(nsteps):
        if count >= window:
            return 1, s, t, dt_last, count, m, -1
        if t >= t_max:
            return 2, s, t, dt_last, count, m, -1
        dt = cfl * h2 / D
        if warm_left > s:
            dt *= 0.1
        clipped = False
        if t + dt >= t_max:
            dt = t_max - t
            clipped = True
        ok = False
        D3 = 0.0
        for attempt in range(max_halvings + 1):
            for i in range(N):
                mid[i] = phi[i] + 0.5 * dt * r1[i]
            b2, _ = axisym_rhs(mid, sinb, cosb, h, n, k, cos_t, sin_t, binom_n, binom_nm1, bal, sig, r2)
            if b2 < 0 and _finite(r2):
                for i in range(N):
                    new[i] = phi[i] + dt * r2[i]
                b3, D3 = axisym_rhs(new, sinb, cosb, h, n, k, cos_t, sin_t, binom_n, binom_nm1, bal, sig, r3)
                if b3 < 0 and _finite(r3):
                    ok = True
                    break
                bad = b3
            else:
                bad = b2
            dt *= 0.5
            clipped = False
        if not ok:
            return 4, s, t, dt_last, count, m, bad
        for i in range(N):
            phi[i] = new[i]
            r1[i] = r3[i]
        D = D3
        t = t_max if clipped else t + dt
        dt_last = dt
        m = _maxabs(r1)
        count = count + 1 if m < steady_tol else 0
    return 0, nsteps, t, dt_last, count, m, -1
