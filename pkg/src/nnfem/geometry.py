"""Level-set geometry: cell classification, cut-cell subtriangulation and
quadrature on the implicit domain ``{phi < 0}`` and its boundary ``{phi = 0}``.

The boundary inside each cut cell is approximated by straight segments
(marching squares with per-edge bisection root finding), giving the usual
O(h^2) geometric error of level-set unfitted methods.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .mesh import BackgroundMesh

__all__ = [
    "LevelSet",
    "disk",
    "flower",
    "halfplane",
    "EXTERIOR",
    "INTERIOR",
    "CUT",
    "CutCellGeometry",
    "CutDecomposition",
    "SubcellAmbiguityError",
    "classify_cells",
    "subtriangulate_cut_cell",
    "decompose",
    "QuadratureRule",
    "cut_volume_quadrature",
    "boundary_quadrature",
    "volume_quadrature_all",
    "boundary_quadrature_all",
]

EXTERIOR, INTERIOR, CUT = 0, 1, 2

# samples per cell edge when checking for sub-edge boundary oscillation
_EDGE_SAMPLES = 8


class SubcellAmbiguityError(RuntimeError):
    """The boundary crosses a single cell edge more than once; refine the mesh."""


class LevelSet:
    """Signed implicit geometry: ``{phi < 0}`` is the domain, ``{phi = 0}``
    its boundary.  Evaluator and gradient must be pure and vectorised over
    point batches of shape (n, 2)."""

    def __init__(self, phi, grad):
        self._phi = phi
        self._grad = grad

    def __call__(self, points):
        return np.asarray(self._phi(np.asarray(points, dtype=float)))

    def gradient(self, points):
        return np.asarray(self._grad(np.asarray(points, dtype=float)))


def disk(center, radius) -> LevelSet:
    """Disk of given center and radius: ``phi = |p - c| - R``."""
    c = np.asarray(center, dtype=float)
    r = float(radius)

    def phi(p):
        return np.linalg.norm(p - c, axis=-1) - r

    def grad(p):
        d = p - c
        n = np.linalg.norm(d, axis=-1, keepdims=True)
        return d / np.where(n == 0.0, 1.0, n)

    return LevelSet(phi, grad)


def flower(center) -> LevelSet:
    """Five-petal star shape ``phi = rho - 0.12 (sin(5 theta) + 3)`` about
    ``center``, with ``(rho, theta)`` polar coordinates."""
    c = np.asarray(center, dtype=float)

    def phi(p):
        d = p - c
        rho = np.linalg.norm(d, axis=-1)
        theta = np.arctan2(d[..., 1], d[..., 0])
        return rho - 0.12 * (np.sin(5.0 * theta) + 3.0)

    def grad(p):
        d = p - c
        rho = np.linalg.norm(d, axis=-1)
        rho_safe = np.where(rho == 0.0, 1.0, rho)
        theta = np.arctan2(d[..., 1], d[..., 0])
        # d(theta)/dp = (-dy, dx) / rho^2
        coef = -0.6 * np.cos(5.0 * theta) / (rho_safe * rho_safe)
        gx = d[..., 0] / rho_safe + coef * (-d[..., 1])
        gy = d[..., 1] / rho_safe + coef * d[..., 0]
        return np.stack([gx, gy], axis=-1)

    return LevelSet(phi, grad)


def halfplane(normal, offset) -> LevelSet:
    """Half-plane ``phi = n . p - offset`` (domain on the ``n . p < offset`` side)."""
    n = np.asarray(normal, dtype=float)
    b = float(offset)

    def phi(p):
        return p @ n - b

    def grad(p):
        return np.broadcast_to(n, p.shape).copy()

    return LevelSet(phi, grad)


# ---------------------------------------------------------------------------
# classification
# ---------------------------------------------------------------------------

def classify_cells(mesh: BackgroundMesh, phi: LevelSet, n_sample: int = 4):
    """Classify every cell by the sign pattern of ``phi`` at its corners plus
    an ``n_sample x n_sample`` interior sample grid.

    Returns ``(classes, active)``: an int array over all cells with values
    EXTERIOR / INTERIOR / CUT, and the sorted ids of active (non-exterior)
    cells.  Cells where some sample hits ``phi == 0`` exactly are Cut.
    """
    if n_sample < 2:
        raise ValueError("n_sample must be >= 2")
    corners = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    g = (np.arange(n_sample) + 0.5) / n_sample
    ox, oy = np.meshgrid(g, g, indexing="xy")
    offsets = np.concatenate([corners, np.stack([ox.ravel(), oy.ravel()], axis=1)])

    origins = mesh.cell_origin(np.arange(mesh.n_cells))
    scale = np.array([mesh.hx, mesh.hy])
    pts = origins[:, None, :] + offsets[None, :, :] * scale
    vals = phi(pts.reshape(-1, 2)).reshape(mesh.n_cells, -1)

    any_neg = (vals < 0.0).any(axis=1)
    any_nonneg = (vals >= 0.0).any(axis=1)
    any_zero = (vals == 0.0).any(axis=1)
    classes = np.full(mesh.n_cells, EXTERIOR, dtype=np.int8)
    classes[any_neg & ~any_nonneg] = INTERIOR
    classes[any_neg & any_nonneg] = CUT
    classes[any_zero] = CUT
    active = np.flatnonzero(classes != EXTERIOR)
    return classes, active


# ---------------------------------------------------------------------------
# subtriangulation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CutCellGeometry:
    """Linear geometry of ``cell ∩ {phi < 0}``: a fan of sub-triangles plus
    the boundary chords with outward unit normals."""

    triangles: np.ndarray  # (m, 3, 2)
    segments: np.ndarray   # (s, 2, 2) endpoint pairs
    normals: np.ndarray    # (s, 2) unit outward normals


def _edge_crossings(phi_vals):
    """Count sign alternations in a sampled sequence, ignoring exact zeros."""
    signs = np.sign(phi_vals)
    signs = signs[signs != 0]
    if signs.size < 2:
        return 0
    return int(np.count_nonzero(signs[1:] != signs[:-1]))


def _bisect_root(phi, a, b, tol, max_iter=100):
    """Root of phi on segment a->b with phi(a) <= 0 < phi(b), to |phi| <= tol."""
    fa = float(phi(a[None])[0])
    if abs(fa) <= tol:
        return a
    lo, hi = a, b
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        fm = float(phi(mid[None])[0])
        if abs(fm) <= tol:
            return mid
        if fm <= 0.0:
            lo = mid
        else:
            hi = mid
        if np.all(mid == lo) or np.all(mid == hi):
            if abs(fm) <= tol:
                return mid
    raise RuntimeError(
        f"level-set root finding did not converge to |phi| <= {tol:g} "
        f"in {max_iter} iterations"
    )


def subtriangulate_cut_cell(
    mesh: BackgroundMesh, cell: int, phi: LevelSet, tol_root: float = 1e-10
) -> CutCellGeometry:
    """Marching squares on one cell: fan-triangulate ``cell ∩ {phi < 0}`` and
    extract the zero-crossing chords with outward normals.

    Raises :class:`SubcellAmbiguityError` when the boundary crosses a single
    cell edge more than once at the sampling resolution (the caller must
    refine the mesh).
    """
    corners = mesh.cell_vertices(cell)
    h = mesh.h
    tol = tol_root * h
    fc = phi(corners)
    inside = fc <= 0.0

    empty2 = np.zeros((0, 2, 2))
    empty_n = np.zeros((0, 2))

    # multi-crossing guard, sampled along each edge
    ts = np.linspace(0.0, 1.0, _EDGE_SAMPLES + 1)
    for e in range(4):
        a, b = corners[e], corners[(e + 1) % 4]
        vals = phi(a[None, :] + ts[:, None] * (b - a)[None, :])
        if _edge_crossings(vals) > 1:
            raise SubcellAmbiguityError(
                f"subcell ambiguity: boundary crosses an edge of cell {cell} "
                "more than once; refine the mesh"
            )

    # walk the cell boundary counterclockwise collecting inside corners and
    # edge crossings; crossings are 'exit' (inside -> outside) or 'entry'
    walk_pts, walk_kind = [], []
    for e in range(4):
        a, b = corners[e], corners[(e + 1) % 4]
        if inside[e]:
            walk_pts.append(a)
            walk_kind.append("corner")
        if inside[e] != inside[(e + 1) % 4]:
            if inside[e]:
                p = _bisect_root(phi, a, b, tol)
                walk_kind.append("exit")
            else:
                p = _bisect_root(phi, b, a, tol)
                walk_kind.append("entry")
            walk_pts.append(p)

    n_cross = sum(kd != "corner" for kd in walk_kind)

    if n_cross == 0:
        if inside.all():
            tris = np.array([
                [corners[0], corners[1], corners[2]],
                [corners[0], corners[2], corners[3]],
            ])
            return CutCellGeometry(tris, empty2, empty_n)
        # boundary feature below edge resolution: integrates as empty
        return CutCellGeometry(np.zeros((0, 3, 2)), empty2, empty_n)

    if n_cross == 2:
        polygons = [(walk_pts, walk_kind)]
    elif n_cross == 4:
        center = corners.mean(axis=0)
        if float(phi(center[None])[0]) < 0.0:
            # the two inside corners connect through the cell center
            polygons = [(walk_pts, walk_kind)]
        else:
            # two disjoint pieces: split the walk at each entry crossing
            start = walk_kind.index("entry")
            pts = walk_pts[start:] + walk_pts[:start]
            kinds = walk_kind[start:] + walk_kind[:start]
            polygons = []
            cur_p, cur_k = [], []
            for p, kd in zip(pts, kinds):
                if kd == "entry" and cur_p:
                    polygons.append((cur_p, cur_k))
                    cur_p, cur_k = [], []
                cur_p.append(p)
                cur_k.append(kd)
            polygons.append((cur_p, cur_k))
    else:
        raise SubcellAmbiguityError(
            f"subcell ambiguity: {n_cross} boundary crossings in cell {cell}"
        )

    area_tol = 1e-13 * mesh.hx * mesh.hy
    tris, segs, norms = [], [], []
    for pts, kinds in polygons:
        # drop coincident consecutive vertices (crossing landing on a corner),
        # preferring to keep the crossing so chord pairing survives
        dedup_p, dedup_k = [], []
        for p, kd in zip(pts, kinds):
            if dedup_p and np.linalg.norm(p - dedup_p[-1]) < 1e-12 * h:
                if dedup_k[-1] == "corner":
                    dedup_p[-1], dedup_k[-1] = p, kd
                continue
            dedup_p.append(p)
            dedup_k.append(kd)
        if len(dedup_p) > 1 and np.linalg.norm(dedup_p[0] - dedup_p[-1]) < 1e-12 * h:
            if dedup_k[0] == "corner":
                dedup_p[0], dedup_k[0] = dedup_p[-1], dedup_k[-1]
            dedup_p.pop()
            dedup_k.pop()
        m = len(dedup_p)
        if m >= 3:
            anchor = dedup_p[0]
            for i in range(1, m - 1):
                a, b = dedup_p[i], dedup_p[i + 1]
                area2 = (a[0] - anchor[0]) * (b[1] - anchor[1]) - (
                    a[1] - anchor[1]
                ) * (b[0] - anchor[0])
                if area2 > 2.0 * area_tol:
                    tris.append([anchor, a, b])
        for i in range(m):
            j = (i + 1) % m
            if dedup_k[i] == "exit" and dedup_k[j] == "entry":
                a, b = dedup_p[i], dedup_p[j]
                d = b - a
                length = np.linalg.norm(d)
                if length < 1e-12 * h:
                    continue
                segs.append([a, b])
                # outward normal of a CCW polygon edge: rotate d by -90 deg
                norms.append(np.array([d[1], -d[0]]) / length)

    tris = np.array(tris) if tris else np.zeros((0, 3, 2))
    segs = np.array(segs) if segs else empty2
    norms = np.array(norms) if norms else empty_n
    return CutCellGeometry(tris, segs, norms)


@dataclass(frozen=True)
class CutDecomposition:
    """Per-cell classification plus the cut-cell geometry, immutable."""

    mesh: BackgroundMesh
    phi: LevelSet = field(repr=False)
    classes: np.ndarray = field(repr=False)
    active_cells: np.ndarray
    cut_geometry: dict = field(repr=False)

    @property
    def interior_cells(self):
        return np.flatnonzero(self.classes == INTERIOR)

    @property
    def cut_cells(self):
        return np.flatnonzero(self.classes == CUT)

    def is_active(self, cells):
        return self.classes[np.asarray(cells)] != EXTERIOR


def decompose(
    mesh: BackgroundMesh,
    phi: LevelSet,
    n_sample: int = 4,
    tol_root: float = 1e-10,
) -> CutDecomposition:
    """Classify all cells and subtriangulate the cut ones."""
    classes, active = classify_cells(mesh, phi, n_sample)
    geom = {}
    for cell in np.flatnonzero(classes == CUT):
        geom[int(cell)] = subtriangulate_cut_cell(mesh, int(cell), phi, tol_root)
    return CutDecomposition(mesh, phi, classes, active, geom)


# ---------------------------------------------------------------------------
# quadrature
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class QuadratureRule:
    """Physical quadrature points and weights; boundary rules carry the
    outward unit normal per point."""

    points: np.ndarray
    weights: np.ndarray
    normals: np.ndarray | None = None


@lru_cache(maxsize=None)
def _gauss01(n):
    """Gauss-Legendre nodes/weights on [0, 1]."""
    t, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (t + 1.0), 0.5 * w


@lru_cache(maxsize=None)
def _tensor_ref_rule(degree):
    """Tensor Gauss rule on the reference square, exact to ``degree``."""
    n = (degree + 2) // 2
    x, w = _gauss01(n)
    px, py = np.meshgrid(x, x, indexing="xy")
    ww = np.outer(w, w).ravel()
    return np.stack([px.ravel(), py.ravel()], axis=1), ww


@lru_cache(maxsize=None)
def _triangle_ref_rule(degree):
    """Positive-weight rule on the unit reference triangle, exact for total
    degree ``degree`` (Duffy transform with the Jacobian absorbed)."""
    nu = (degree + 3) // 2
    nv = (degree + 2) // 2
    u, wu = _gauss01(nu)
    v, wv = _gauss01(nv)
    uu, vv = np.meshgrid(u, v, indexing="xy")
    xi = uu * (1.0 - vv)
    eta = uu * vv
    ww = (np.outer(wv, wu) * uu).ravel()
    return np.stack([xi.ravel(), eta.ravel()], axis=1), ww


def _triangle_points(tris, degree):
    """Map the reference triangle rule onto a batch of triangles (m, 3, 2)."""
    ref, w = _triangle_ref_rule(degree)
    v0 = tris[:, 0]
    e1 = tris[:, 1] - v0
    e2 = tris[:, 2] - v0
    pts = (
        v0[:, None, :]
        + ref[None, :, 0, None] * e1[:, None, :]
        + ref[None, :, 1, None] * e2[:, None, :]
    )
    det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    ww = det[:, None] * w[None, :]
    return pts.reshape(-1, 2), ww.ravel()


def cut_volume_quadrature(decomp: CutDecomposition, cell: int, degree: int) -> QuadratureRule:
    """Quadrature over ``cell ∩ Ω``: a tensor Gauss rule on interior cells,
    mapped simplex rules on the sub-triangles of cut cells."""
    if degree < 1:
        raise ValueError("quadrature degree must be >= 1")
    cls = decomp.classes[cell]
    if cls == EXTERIOR:
        raise ValueError(f"cell {cell} is not active")
    mesh = decomp.mesh
    if cls == INTERIOR:
        ref, w = _tensor_ref_rule(degree)
        origin = mesh.cell_origin(cell)
        pts = origin + ref * np.array([mesh.hx, mesh.hy])
        return QuadratureRule(pts, w * (mesh.hx * mesh.hy))
    geom = decomp.cut_geometry[int(cell)]
    if len(geom.triangles) == 0:
        return QuadratureRule(np.zeros((0, 2)), np.zeros(0))
    pts, w = _triangle_points(geom.triangles, degree)
    return QuadratureRule(pts, w)


def boundary_quadrature(decomp: CutDecomposition, cell: int, degree: int) -> QuadratureRule:
    """Gauss rule on each boundary chord of a cut cell, weights scaled by
    chord length; every point carries its chord's outward unit normal."""
    if decomp.classes[cell] != CUT:
        raise ValueError(f"cell {cell} is not a cut cell")
    geom = decomp.cut_geometry[int(cell)]
    if len(geom.segments) == 0:
        raise ValueError(f"cut cell {cell} has no boundary segments")
    n1d = (degree + 2) // 2
    t, w = _gauss01(n1d)
    a = geom.segments[:, 0]
    d = geom.segments[:, 1] - a
    lengths = np.linalg.norm(d, axis=1)
    pts = a[:, None, :] + t[None, :, None] * d[:, None, :]
    ww = lengths[:, None] * w[None, :]
    normals = np.repeat(geom.normals, n1d, axis=0)
    return QuadratureRule(pts.reshape(-1, 2), ww.ravel(), normals)


def volume_quadrature_all(decomp: CutDecomposition, degree: int):
    """Concatenated volume quadrature over all active cells, ordered by cell
    id.  Returns ``(points, weights, cells)``."""
    mesh = decomp.mesh
    active = decomp.active_cells
    classes = decomp.classes
    ref, wref = _tensor_ref_rule(degree)
    npi = len(wref)

    sizes = np.empty(len(active), dtype=np.int64)
    cut_rules = {}
    for pos, cell in enumerate(active):
        if classes[cell] == INTERIOR:
            sizes[pos] = npi
        else:
            geom = decomp.cut_geometry[int(cell)]
            if len(geom.triangles) == 0:
                cut_rules[pos] = (np.zeros((0, 2)), np.zeros(0))
                sizes[pos] = 0
            else:
                pts, w = _triangle_points(geom.triangles, degree)
                cut_rules[pos] = (pts, w)
                sizes[pos] = len(w)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    total = offsets[-1]

    points = np.empty((total, 2))
    weights = np.empty(total)
    cells = np.empty(total, dtype=np.int64)

    interior_pos = np.flatnonzero(classes[active] == INTERIOR)
    if interior_pos.size:
        rows = offsets[interior_pos][:, None] + np.arange(npi)[None, :]
        origins = mesh.cell_origin(active[interior_pos])
        pts = origins[:, None, :] + ref[None, :, :] * np.array([mesh.hx, mesh.hy])
        points[rows.ravel()] = pts.reshape(-1, 2)
        weights[rows.ravel()] = np.tile(wref * (mesh.hx * mesh.hy), interior_pos.size)
        cells[rows.ravel()] = np.repeat(active[interior_pos], npi)
    for pos, (pts, w) in cut_rules.items():
        sl = slice(offsets[pos], offsets[pos + 1])
        points[sl] = pts
        weights[sl] = w
        cells[sl] = active[pos]
    return points, weights, cells


def boundary_quadrature_all(decomp: CutDecomposition, degree: int):
    """Concatenated boundary quadrature over all cut cells with segments,
    ordered by cell id.  Returns ``(points, weights, normals, cells)``."""
    pts_list, w_list, n_list, c_list = [], [], [], []
    for cell in decomp.cut_cells:
        geom = decomp.cut_geometry[int(cell)]
        if len(geom.segments) == 0:
            continue
        rule = boundary_quadrature(decomp, int(cell), degree)
        pts_list.append(rule.points)
        w_list.append(rule.weights)
        n_list.append(rule.normals)
        c_list.append(np.full(len(rule.weights), cell, dtype=np.int64))
    if not pts_list:
        return (np.zeros((0, 2)), np.zeros(0), np.zeros((0, 2)),
                np.zeros(0, dtype=np.int64))
    return (
        np.concatenate(pts_list),
        np.concatenate(w_list),
        np.concatenate(n_list),
        np.concatenate(c_list),
    )
