"""Hot evaluation kernels with a numba fast path and a pure-numpy fallback.

Everything downstream (FE assembly, error norms, ghost penalties) funnels
through two primitives: 1D Lagrange basis tables at a batch of reference
coordinates, and their 2D tensor-product combination.  Both are provided in
a numba ``@njit`` variant and a vectorised numpy variant that execute the
same floating-point operation sequence, so results are bitwise identical.

The backend is chosen at import time: numba when importable, unless the
environment variable ``NNFEM_DISABLE_NUMBA`` is set to ``1``/``true``/``yes``.
``set_backend`` switches at runtime (used by the benchmark and tests).
"""

from __future__ import annotations

import os

import numpy as np

__all__ = ["lagrange_tables", "tensor_tables", "set_backend", "active_backend"]


# ---------------------------------------------------------------------------
# pure-numpy reference implementations
# ---------------------------------------------------------------------------

def _lagrange_tables_np(xi, k):
    """Equispaced Lagrange basis values and derivatives on [0, 1].

    Returns ``(val, der)``, each of shape ``(len(xi), k + 1)``.
    """
    n = xi.shape[0]
    val = np.ones((n, k + 1))
    der = np.zeros((n, k + 1))
    inv_k = 1.0 / k
    for a in range(k + 1):
        xa = a * inv_k
        for b in range(k + 1):
            if b == a:
                continue
            xb = b * inv_k
            val[:, a] *= (xi - xb) / (xa - xb)
        for c in range(k + 1):
            if c == a:
                continue
            xc = c * inv_k
            term = np.full(n, 1.0 / (xa - xc))
            for b in range(k + 1):
                if b == a or b == c:
                    continue
                xb = b * inv_k
                term *= (xi - xb) / (xa - xb)
            der[:, a] += term
    return val, der


def _tensor_tables_np(vx, dx, vy, dy, inv_hx, inv_hy):
    """Tensor-product values and physical gradients from 1D tables.

    Column ordering is y-major: local basis ``(a, b)`` sits at column
    ``b * (kx + 1) + a``, matching the cell-local node ordering.
    """
    n, nx = vx.shape
    ny = vy.shape[1]
    m = nx * ny
    val = np.empty((n, m))
    gx = np.empty((n, m))
    gy = np.empty((n, m))
    for b in range(ny):
        for a in range(nx):
            j = b * nx + a
            val[:, j] = vx[:, a] * vy[:, b]
            gx[:, j] = (dx[:, a] * inv_hx) * vy[:, b]
            gy[:, j] = vx[:, a] * (dy[:, b] * inv_hy)
    return val, gx, gy


# ---------------------------------------------------------------------------
# numba fast path
# ---------------------------------------------------------------------------

_DISABLED = os.environ.get("NNFEM_DISABLE_NUMBA", "").strip().lower() in (
    "1", "true", "yes",
)

_lagrange_tables_nb = None
_tensor_tables_nb = None

if not _DISABLED:
    try:
        from numba import njit

        @njit(cache=True)
        def _lagrange_tables_nb(xi, k):  # noqa: F811 - jitted twin
            n = xi.shape[0]
            val = np.ones((n, k + 1))
            der = np.zeros((n, k + 1))
            inv_k = 1.0 / k
            for p in range(n):
                x = xi[p]
                for a in range(k + 1):
                    xa = a * inv_k
                    acc = 1.0
                    for b in range(k + 1):
                        if b == a:
                            continue
                        xb = b * inv_k
                        acc *= (x - xb) / (xa - xb)
                    val[p, a] = acc
                    dacc = 0.0
                    for c in range(k + 1):
                        if c == a:
                            continue
                        xc = c * inv_k
                        term = 1.0 / (xa - xc)
                        for b in range(k + 1):
                            if b == a or b == c:
                                continue
                            xb = b * inv_k
                            term *= (x - xb) / (xa - xb)
                        dacc += term
                    der[p, a] = dacc
            return val, der

        @njit(cache=True)
        def _tensor_tables_nb(vx, dx, vy, dy, inv_hx, inv_hy):  # noqa: F811
            n, nx = vx.shape
            ny = vy.shape[1]
            m = nx * ny
            val = np.empty((n, m))
            gx = np.empty((n, m))
            gy = np.empty((n, m))
            for p in range(n):
                for b in range(ny):
                    for a in range(nx):
                        j = b * nx + a
                        val[p, j] = vx[p, a] * vy[p, b]
                        gx[p, j] = (dx[p, a] * inv_hx) * vy[p, b]
                        gy[p, j] = vx[p, a] * (dy[p, b] * inv_hy)
            return val, gx, gy

    except ImportError:  # pragma: no cover - numba is a declared dependency
        _lagrange_tables_nb = None
        _tensor_tables_nb = None


_BACKEND = "numpy" if _lagrange_tables_nb is None else "numba"


def set_backend(name):
    """Select the kernel backend, ``"numba"`` or ``"numpy"``."""
    global _BACKEND
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown kernel backend {name!r}")
    if name == "numba" and _lagrange_tables_nb is None:
        raise RuntimeError("numba backend unavailable (not importable or disabled)")
    _BACKEND = name


def active_backend():
    return _BACKEND


def lagrange_tables(xi, k):
    xi = np.ascontiguousarray(xi, dtype=np.float64)
    if _BACKEND == "numba":
        return _lagrange_tables_nb(xi, k)
    return _lagrange_tables_np(xi, k)


def tensor_tables(vx, dx, vy, dy, inv_hx, inv_hy):
    if _BACKEND == "numba":
        return _tensor_tables_nb(vx, dx, vy, dy, float(inv_hx), float(inv_hy))
    return _tensor_tables_np(vx, dx, vy, dy, float(inv_hx), float(inv_hy))
