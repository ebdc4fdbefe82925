"""Second-order forward-mode dual numbers over 2D point batches.

Carries value, gradient and Hessian through arithmetic and the elementary
functions, so manufactured solutions yield their gradient and Laplacian to
machine precision without hand-derived formulas.  All payloads are numpy
arrays over a batch of evaluation points.
"""

from __future__ import annotations

import numpy as np

__all__ = ["Dual2", "seed_xy", "sin", "cos", "exp", "sqrt"]


class Dual2:
    """Value with first and second derivatives w.r.t. (x, y)."""

    __slots__ = ("v", "gx", "gy", "hxx", "hxy", "hyy")

    def __init__(self, v, gx=0.0, gy=0.0, hxx=0.0, hxy=0.0, hyy=0.0):
        self.v = np.asarray(v, dtype=float)
        z = np.zeros_like(self.v)
        self.gx = z + gx
        self.gy = z + gy
        self.hxx = z + hxx
        self.hxy = z + hxy
        self.hyy = z + hyy

    # -- helpers -----------------------------------------------------------

    @property
    def grad(self):
        """Gradient stacked as shape (n, 2)."""
        return np.stack([self.gx, self.gy], axis=-1)

    @property
    def laplacian(self):
        return self.hxx + self.hyy

    @staticmethod
    def _lift(other, like):
        if isinstance(other, Dual2):
            return other
        return Dual2(np.broadcast_to(np.asarray(other, dtype=float), like.v.shape))

    # -- arithmetic ---------------------------------------------------------

    def __add__(self, other):
        o = self._lift(other, self)
        return Dual2(
            self.v + o.v, self.gx + o.gx, self.gy + o.gy,
            self.hxx + o.hxx, self.hxy + o.hxy, self.hyy + o.hyy,
        )

    __radd__ = __add__

    def __neg__(self):
        return Dual2(-self.v, -self.gx, -self.gy, -self.hxx, -self.hxy, -self.hyy)

    def __sub__(self, other):
        return self + (-self._lift(other, self))

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        o = self._lift(other, self)
        return Dual2(
            self.v * o.v,
            self.gx * o.v + self.v * o.gx,
            self.gy * o.v + self.v * o.gy,
            self.hxx * o.v + 2.0 * self.gx * o.gx + self.v * o.hxx,
            self.hxy * o.v + self.gx * o.gy + self.gy * o.gx + self.v * o.hxy,
            self.hyy * o.v + 2.0 * self.gy * o.gy + self.v * o.hyy,
        )

    __rmul__ = __mul__

    def __truediv__(self, other):
        return self * _chain(self._lift(other, self), *_d_reciprocal(self._lift(other, self).v))

    def __rtruediv__(self, other):
        return self._lift(other, self) * _chain(self, *_d_reciprocal(self.v))

    def __pow__(self, n):
        if not isinstance(n, int) or n < 0:
            raise TypeError("only non-negative integer powers are supported")
        out = Dual2(np.ones_like(self.v))
        base = self
        m = n
        while m:
            if m & 1:
                out = out * base
            base = base * base
            m >>= 1
        return out


def _chain(a: Dual2, f, fp, fpp) -> Dual2:
    """Apply a scalar function with value f, derivative fp, second fpp."""
    return Dual2(
        f,
        fp * a.gx,
        fp * a.gy,
        fpp * a.gx * a.gx + fp * a.hxx,
        fpp * a.gx * a.gy + fp * a.hxy,
        fpp * a.gy * a.gy + fp * a.hyy,
    )


def _d_reciprocal(v):
    inv = 1.0 / v
    return inv, -inv * inv, 2.0 * inv * inv * inv


def sin(a):
    if not isinstance(a, Dual2):
        return np.sin(a)
    s, c = np.sin(a.v), np.cos(a.v)
    return _chain(a, s, c, -s)


def cos(a):
    if not isinstance(a, Dual2):
        return np.cos(a)
    s, c = np.sin(a.v), np.cos(a.v)
    return _chain(a, c, -s, -c)


def exp(a):
    if not isinstance(a, Dual2):
        return np.exp(a)
    e = np.exp(a.v)
    return _chain(a, e, e, e)


def sqrt(a):
    if not isinstance(a, Dual2):
        return np.sqrt(a)
    r = np.sqrt(a.v)
    return _chain(a, r, 0.5 / r, -0.25 / (r * a.v))


def seed_xy(points):
    """Seed dual coordinates (x, y) from a point batch of shape (n, 2)."""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    x = Dual2(pts[:, 0], gx=1.0)
    y = Dual2(pts[:, 1], gy=1.0)
    return x, y
