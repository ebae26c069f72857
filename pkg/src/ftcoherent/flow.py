"""Time-dependent planar flows, their RK4 flow maps and frame changes.

The built-in flow is the quasi-periodically forced stratospheric jet with
stream function

    Psi(x, y, t) = c3 y - U0 L tanh(y/L)
                   + U0 L sech^2(y/L) [A3 cos(ka3 x) + A2 cos(k2 x - s2 t)
                                       + A1 cos(k1 x - s1 t)]

and velocity ``(-dPsi/dy, dPsi/dx)``.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from typing import Callable

import numpy as np

from . import _rk4

GOLDEN = (1.0 + math.sqrt(5.0)) / 2.0


class IntegrationError(RuntimeError):
    """A trajectory left the finite floating point range."""

    def __init__(self, index: int, point, message: str | None = None):
        self.index = int(index)
        self.point = tuple(float(v) for v in np.ravel(point))
        super().__init__(message or f"non-finite state for trajectory {self.index} started at {self.point}")


@dataclass(frozen=True)
class FlowSpec:
    """Parameters of the jet, the integration window and the RK4 step.

    ``s1`` and ``s2`` are derived from ``(k2, c2, c3)``; pass them only to
    restore a serialized spec, in which case they are checked.
    """

    U0: float = 5.41
    A1: float = 0.075
    A2: float = 0.4
    A3: float = 0.2
    L: float = 1.770
    c2: float = 0.205 * 5.41
    c3: float = 0.7 * 5.41
    re: float = 6.371
    k1: float = 2.0 / 6.371
    k2: float = 4.0 / 6.371
    k3: float = 6.0 / 6.371
    t0: float = 10.0
    t1: float = 20.0
    h: float = 0.01
    periodic_x: bool = True
    x_period: float = math.pi * 6.371
    a3_wavenumber: str = "k1"
    s1: float | None = field(default=None)
    s2: float | None = field(default=None)

    def __post_init__(self):
        s2 = self.k2 * (self.c2 - self.c3)
        s1 = s2 * GOLDEN
        for name, value in (("s1", s1), ("s2", s2)):
            stored = getattr(self, name)
            if stored is None:
                object.__setattr__(self, name, value)
            elif abs(stored - value) > 1e-12:
                raise ValueError(f"{name}={stored!r} inconsistent with k2, c2, c3 (expected {value!r})")
        if not self.h > 0:
            raise ValueError("step h must be positive")
        if not self.t1 > self.t0:
            raise ValueError("t1 must exceed t0")
        if self.a3_wavenumber not in ("k1", "k3"):
            raise ValueError("a3_wavenumber must be 'k1' or 'k3'")
        if self.periodic_x and not self.x_period > 0:
            raise ValueError("x_period must be positive")

    @classmethod
    def from_radius(cls, re: float = 6.371, U0: float = 5.41, c2_ratio: float = 0.205,
                    c3_ratio: float = 0.7, **kw) -> "FlowSpec":
        """Jet with wavenumbers 2/re, 4/re, 6/re and period pi*re."""
        return cls(U0=U0, c2=c2_ratio * U0, c3=c3_ratio * U0, re=re, k1=2.0 / re, k2=4.0 / re,
                   k3=6.0 / re, x_period=math.pi * re, **kw)

    @property
    def ka3(self) -> float:
        return self.k1 if self.a3_wavenumber == "k1" else self.k3

    def as_dict(self) -> dict:
        return asdict(self)

    def with_(self, **changes) -> "FlowSpec":
        changes.setdefault("s1", None)
        changes.setdefault("s2", None)
        return replace(self, **changes)


def streamfunction(spec: FlowSpec, points, t):
    x, y = _split(points)
    th = np.tanh(y / spec.L)
    se2 = 1.0 - th * th
    g = (spec.A3 * np.cos(spec.ka3 * x) + spec.A2 * np.cos(spec.k2 * x - spec.s2 * t)
         + spec.A1 * np.cos(spec.k1 * x - spec.s1 * t))
    return spec.c3 * y - spec.U0 * spec.L * th + spec.U0 * spec.L * se2 * g


def velocity(spec: FlowSpec, points, t):
    """Closed-form ``(-dPsi/dy, dPsi/dx)`` at ``points`` (shape (2,) or (n, 2))."""
    pts = np.asarray(points, dtype=float)
    x, y = _split(pts)
    th = np.tanh(y / spec.L)
    se2 = 1.0 - th * th
    a1 = spec.k1 * x - spec.s1 * t
    a2 = spec.k2 * x - spec.s2 * t
    a3 = spec.ka3 * x
    g = spec.A3 * np.cos(a3) + spec.A2 * np.cos(a2) + spec.A1 * np.cos(a1)
    gx = -(spec.A3 * spec.ka3 * np.sin(a3) + spec.A2 * spec.k2 * np.sin(a2)
           + spec.A1 * spec.k1 * np.sin(a1))
    vx = -spec.c3 + spec.U0 * se2 + 2.0 * spec.U0 * g * se2 * th
    vy = spec.U0 * spec.L * se2 * gx
    return np.stack([vx, vy], axis=-1)


def _split(points):
    pts = np.asarray(points, dtype=float)
    return pts[..., 0], pts[..., 1]


def _params(spec: FlowSpec):
    w1, w3 = (1.0, 0.0) if spec.a3_wavenumber == "k1" else (0.0, 1.0)
    return (float(spec.U0), float(spec.L), float(spec.A1), float(spec.A2), float(spec.A3),
            float(spec.c3), float(spec.k1), float(spec.k2), float(spec.ka3), w1, w3)


def _time_table(spec: FlowSpec, t_start: float, h: float, nsteps: int) -> np.ndarray:
    t = t_start + 0.5 * h * np.arange(2 * nsteps + 1)
    return np.ascontiguousarray(np.stack(
        [np.cos(spec.s1 * t), np.sin(spec.s1 * t), np.cos(spec.s2 * t), np.sin(spec.s2 * t)], axis=1))


def _fast_ok(spec: FlowSpec, h: float) -> bool:
    if h > 0.05:
        return False
    if abs(spec.k2 - 2.0 * spec.k1) > 1e-14 * abs(spec.k1):
        return False
    return spec.a3_wavenumber == "k1" or abs(spec.k3 - 3.0 * spec.k1) <= 1e-14 * abs(spec.k1)


def step_count(spec: FlowSpec, t_start: float, t_end: float) -> tuple[int, float]:
    """Number of fixed RK4 steps covering the interval and the step actually used."""
    span = t_end - t_start
    n = max(1, int(math.ceil(span / spec.h - 1e-9)))
    return n, span / n


def wrap_x(spec: FlowSpec, x):
    if not spec.periodic_x:
        return x
    out = np.mod(x, spec.x_period)
    return np.where(out >= spec.x_period, out - spec.x_period, out)


def flow_map(spec: FlowSpec, points, t_start: float | None = None, t_end: float | None = None,
             *, kernel: str = "auto", chunk: int = 4096) -> np.ndarray:
    """Fixed-step RK4 image of ``points`` from ``t_start`` to ``t_end``.

    Defaults to the spec's ``[t0, t1]``.  ``x`` is reduced modulo the period
    when the flow is periodic; ``y`` is left alone.  Raises
    :class:`IntegrationError` naming the first trajectory that overflowed.
    """
    t_start = spec.t0 if t_start is None else float(t_start)
    t_end = spec.t1 if t_end is None else float(t_end)
    if t_end < t_start:
        raise ValueError("t_end must not precede t_start")
    pts = np.array(points, dtype=float)
    single = pts.ndim == 1
    pts = pts.reshape(-1, 2)
    x = np.ascontiguousarray(pts[:, 0])
    y = np.ascontiguousarray(pts[:, 1])
    if t_end > t_start and x.size:
        nsteps, h = step_count(spec, t_start, t_end)
        tab = _time_table(spec, t_start, h, nsteps)
        if kernel == "auto":
            kernel = "fast" if _fast_ok(spec, h) else "exact"
        if kernel == "fast":
            if not _fast_ok(spec, h):
                raise ValueError("fast kernel needs k2 = 2 k1 (and k3 = 3 k1) and h <= 0.05")
            _rk4.integrate_fast(x, y, tab, h, nsteps, _params(spec), chunk, 32)
        elif kernel == "exact":
            _rk4.integrate_exact(x, y, tab, h, nsteps, _params(spec))
        else:
            raise ValueError(f"unknown kernel {kernel!r}")
        bad = ~(np.isfinite(x) & np.isfinite(y))
        if bad.any():
            i = int(np.argmax(bad))
            raise IntegrationError(i, pts[i])
    out = np.stack([wrap_x(spec, x), y], axis=1)
    return out[0] if single else out


@dataclass(frozen=True)
class FrameTransform:
    """Proper orthogonal rotation plus translation at the two end times."""

    theta0: float = 0.0
    theta1: float = 0.0
    b0: tuple[float, float] = (0.0, 0.0)
    b1: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        object.__setattr__(self, "b0", tuple(float(v) for v in self.b0))
        object.__setattr__(self, "b1", tuple(float(v) for v in self.b1))
        for which in ("t0", "t1"):
            q = self.rotation(which)
            if np.abs(q.T @ q - np.eye(2)).max() > 1e-12 or abs(np.linalg.det(q) - 1.0) > 1e-12:
                raise ValueError("rotation is not proper orthogonal")

    def rotation(self, which: str) -> np.ndarray:
        th = self._pick(which, self.theta0, self.theta1)
        c, s = math.cos(th), math.sin(th)
        return np.array([[c, -s], [s, c]])

    def translation(self, which: str) -> np.ndarray:
        return np.asarray(self._pick(which, self.b0, self.b1), dtype=float)

    @property
    def is_identity(self) -> bool:
        return self.theta0 == 0 and self.theta1 == 0 and not any(self.b0) and not any(self.b1)

    @staticmethod
    def _pick(which, a, b):
        if which == "t0":
            return a
        if which == "t1":
            return b
        raise ValueError("which must be 't0' or 't1'")


def transform_point(ft: FrameTransform, points, which: str) -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    th = ft.theta0 if which == "t0" else ft.theta1
    if th == 0:
        return pts + ft.translation(which)
    return pts @ ft.rotation(which).T + ft.translation(which)


def inverse_transform_point(ft: FrameTransform, points, which: str) -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    th = ft.theta0 if which == "t0" else ft.theta1
    if th == 0:
        return pts - ft.translation(which)
    return (pts - ft.translation(which)) @ ft.rotation(which)


def transformed_flow(spec: FlowSpec, ft: FrameTransform) -> Callable[..., np.ndarray]:
    """Flow map of the transformed system, Phi_t1 o T o Phi_t0^-1."""
    if ft.is_identity:
        return lambda points, **kw: flow_map(spec, points, **kw)

    def mapped(points, **kw):
        return transform_point(ft, flow_map(spec, inverse_transform_point(ft, points, "t0"), **kw), "t1")

    return mapped
