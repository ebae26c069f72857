"""Compiled RK4 kernels for the quasi-periodic jet.

Two integrators share the same right-hand side:

* ``integrate_exact`` evaluates every trigonometric and hyperbolic term with
  libm calls, one particle at a time.
* ``integrate_fast`` carries ``cos(k1 x)``, ``sin(k1 x)`` and ``exp(2 y / L)``
  as extra state and advances them with short Taylor series of the (small)
  stage displacements, so the inner loop is pure arithmetic and vectorises.
  The auxiliary state is re-synchronised from ``(x, y)`` every ``resync``
  steps.  It requires ``k2 == 2 k1`` and, when the A3 term uses ``k3``,
  ``k3 == 3 k1``; both hold for wavenumbers derived from a single radius.

Parameter tuple layout (``par``)::

    (U0, L, A1, A2, A3, c3, k1, k2, ka3, w1, w3)

where ``ka3`` is the wavenumber of the A3 term and ``(w1, w3)`` selects it as
``k1`` (1, 0) or ``3 k1`` (0, 1) for the fast kernel.

The time table ``tab`` has shape ``(2 n + 1, 4)`` and holds
``cos(s1 t), sin(s1 t), cos(s2 t), sin(s2 t)`` at ``t0 + j h / 2``.
"""
from __future__ import annotations

import math

import numpy as np
from numba import njit, prange

_JIT = dict(cache=True, error_model="numpy", boundscheck=False)


@njit(inline="always", **_JIT)
def _expm(u):
    # exp(u) for |u| <~ 0.6, truncation error below 1e-16 relative
    return 1.0 + u * (1.0 + u * (1.0 / 2 + u * (1.0 / 6 + u * (1.0 / 24 + u * (
        1.0 / 120 + u * (1.0 / 720 + u * (1.0 / 5040 + u * (1.0 / 40320 + u * (
            1.0 / 362880 + u * (1.0 / 3628800 + u * (1.0 / 39916800 + u * (
                1.0 / 479001600 + u * (1.0 / 6227020800 + u * (1.0 / 87178291200))))))))))))))


@njit(inline="always", **_JIT)
def _rotate(c, s, d):
    d2 = d * d
    cd = 1.0 - d2 * (1.0 / 2 - d2 * (1.0 / 24 - d2 * (1.0 / 720 - d2 * (
        1.0 / 40320 - d2 * (1.0 / 3628800 - d2 * (1.0 / 479001600))))))
    sd = d * (1.0 - d2 * (1.0 / 6 - d2 * (1.0 / 120 - d2 * (1.0 / 5040 - d2 * (
        1.0 / 362880 - d2 * (1.0 / 39916800 - d2 * (1.0 / 6227020800)))))))
    return c * cd - s * sd, s * cd + c * sd


@njit(inline="always", **_JIT)
def _rhs_cse(c, s, e, U0, L, A1, A2, A3, c3, k1, k2, ka3, w1, w3, C1, S1, C2, S2):
    ip = 1.0 / (e + 1.0)
    th = (e - 1.0) * ip
    se2 = 4.0 * e * ip * ip
    cc = 2.0 * c * c - 1.0
    ss = 2.0 * s * c
    ca3 = w1 * c + w3 * c * (4.0 * c * c - 3.0)
    sa3 = w1 * s + w3 * s * (3.0 - 4.0 * s * s)
    g = A3 * ca3 + A2 * (cc * C2 + ss * S2) + A1 * (c * C1 + s * S1)
    gx = -(A3 * ka3 * sa3 + A2 * k2 * (ss * C2 - cc * S2) + A1 * k1 * (s * C1 - c * S1))
    return -c3 + U0 * se2 + 2.0 * U0 * g * se2 * th, U0 * L * se2 * gx


@njit(**_JIT)
def _increments(dx, dy, cs, sn, ex, h, par, r0, r1, r2):
    U0, L, A1, A2, A3, c3, k1, k2, ka3, w1, w3 = par
    a0, b0, c0, d0 = r0
    a1, b1, c1, d1 = r1
    a2, b2, c2, d2 = r2
    q = 2.0 / L
    hh = 0.5 * h
    for i in range(dx.shape[0]):
        c = cs[i]
        s = sn[i]
        e = ex[i]
        u1, v1 = _rhs_cse(c, s, e, U0, L, A1, A2, A3, c3, k1, k2, ka3, w1, w3, a0, b0, c0, d0)
        ca, sa = _rotate(c, s, k1 * hh * u1)
        u2, v2 = _rhs_cse(ca, sa, e * _expm(q * hh * v1), U0, L, A1, A2, A3, c3, k1, k2, ka3, w1, w3,
                          a1, b1, c1, d1)
        ca, sa = _rotate(c, s, k1 * hh * u2)
        u3, v3 = _rhs_cse(ca, sa, e * _expm(q * hh * v2), U0, L, A1, A2, A3, c3, k1, k2, ka3, w1, w3,
                          a1, b1, c1, d1)
        ca, sa = _rotate(c, s, k1 * h * u3)
        u4, v4 = _rhs_cse(ca, sa, e * _expm(q * h * v3), U0, L, A1, A2, A3, c3, k1, k2, ka3, w1, w3,
                          a2, b2, c2, d2)
        dx[i] = h / 6.0 * (u1 + 2.0 * u2 + 2.0 * u3 + u4)
        dy[i] = h / 6.0 * (v1 + 2.0 * v2 + 2.0 * v3 + v4)


@njit(**_JIT)
def _advance(x, y, cs, sn, ex, dx, dy, k1, q):
    for i in range(x.shape[0]):
        ddx = dx[i]
        ddy = dy[i]
        c, s = _rotate(cs[i], sn[i], k1 * ddx)
        x[i] += ddx
        y[i] += ddy
        cs[i] = c
        sn[i] = s
        ex[i] *= _expm(q * ddy)


@njit(**_JIT)
def _resync(x, y, cs, sn, ex, k1, q):
    for i in range(x.shape[0]):
        cs[i] = math.cos(k1 * x[i])
        sn[i] = math.sin(k1 * x[i])
        ex[i] = math.exp(q * y[i])


@njit(**_JIT)
def _fast_chunk(x, y, tab, h, nsteps, par, resync):
    n = x.shape[0]
    k1 = par[6]
    q = 2.0 / par[1]
    cs = np.empty(n)
    sn = np.empty(n)
    ex = np.empty(n)
    dx = np.empty(n)
    dy = np.empty(n)
    _resync(x, y, cs, sn, ex, k1, q)
    for k in range(nsteps):
        r0 = (tab[2 * k, 0], tab[2 * k, 1], tab[2 * k, 2], tab[2 * k, 3])
        r1 = (tab[2 * k + 1, 0], tab[2 * k + 1, 1], tab[2 * k + 1, 2], tab[2 * k + 1, 3])
        r2 = (tab[2 * k + 2, 0], tab[2 * k + 2, 1], tab[2 * k + 2, 2], tab[2 * k + 2, 3])
        _increments(dx, dy, cs, sn, ex, h, par, r0, r1, r2)
        _advance(x, y, cs, sn, ex, dx, dy, k1, q)
        if (k + 1) % resync == 0:
            _resync(x, y, cs, sn, ex, k1, q)


@njit(parallel=True, **_JIT)
def integrate_fast(x, y, tab, h, nsteps, par, chunk, resync):
    """Advance ``(x, y)`` in place by ``nsteps`` RK4 steps (fast kernel)."""
    n = x.shape[0]
    nchunks = (n + chunk - 1) // chunk
    for b in prange(nchunks):
        lo = b * chunk
        hi = min(n, lo + chunk)
        _fast_chunk(x[lo:hi], y[lo:hi], tab, h, nsteps, par, resync)


@njit(inline="always", **_JIT)
def _rhs_exact(x, y, U0, L, A1, A2, A3, c3, k1, k2, ka3, C1, S1, C2, S2):
    th = math.tanh(y / L)
    se2 = 1.0 - th * th
    ck1 = math.cos(k1 * x)
    sk1 = math.sin(k1 * x)
    ck2 = math.cos(k2 * x)
    sk2 = math.sin(k2 * x)
    ca3 = math.cos(ka3 * x)
    sa3 = math.sin(ka3 * x)
    g = A3 * ca3 + A2 * (ck2 * C2 + sk2 * S2) + A1 * (ck1 * C1 + sk1 * S1)
    gx = -(A3 * ka3 * sa3 + A2 * k2 * (sk2 * C2 - ck2 * S2) + A1 * k1 * (sk1 * C1 - ck1 * S1))
    return -c3 + U0 * se2 + 2.0 * U0 * g * se2 * th, U0 * L * se2 * gx


@njit(parallel=True, **_JIT)
def integrate_exact(x, y, tab, h, nsteps, par):
    """Advance ``(x, y)`` in place by ``nsteps`` RK4 steps with libm calls."""
    U0, L, A1, A2, A3, c3, k1, k2, ka3, w1, w3 = par
    for i in prange(x.shape[0]):
        px = x[i]
        py = y[i]
        for k in range(nsteps):
            j = 2 * k
            u1, v1 = _rhs_exact(px, py, U0, L, A1, A2, A3, c3, k1, k2, ka3,
                                tab[j, 0], tab[j, 1], tab[j, 2], tab[j, 3])
            u2, v2 = _rhs_exact(px + 0.5 * h * u1, py + 0.5 * h * v1, U0, L, A1, A2, A3, c3, k1, k2, ka3,
                                tab[j + 1, 0], tab[j + 1, 1], tab[j + 1, 2], tab[j + 1, 3])
            u3, v3 = _rhs_exact(px + 0.5 * h * u2, py + 0.5 * h * v2, U0, L, A1, A2, A3, c3, k1, k2, ka3,
                                tab[j + 1, 0], tab[j + 1, 1], tab[j + 1, 2], tab[j + 1, 3])
            u4, v4 = _rhs_exact(px + h * u3, py + h * v3, U0, L, A1, A2, A3, c3, k1, k2, ka3,
                                tab[j + 2, 0], tab[j + 2, 1], tab[j + 2, 2], tab[j + 2, 3])
            px += h / 6.0 * (u1 + 2.0 * u2 + 2.0 * u3 + u4)
            py += h / 6.0 * (v1 + 2.0 * v2 + 2.0 * v3 + v4)
        x[i] = px
        y[i] = py
