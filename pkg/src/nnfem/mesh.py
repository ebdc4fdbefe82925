"""Uniform Cartesian background meshes with refinement and skeleton queries.

Cells are indexed lexicographically with x running fastest: the cell in
column ``i`` and row ``j`` has id ``j * nx + i``.  All iteration orders in
the library derive from this indexing, which keeps assembly reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "BoundingBox",
    "BackgroundMesh",
    "build_mesh",
    "refine_uniform",
    "skeleton_faces_near_boundary",
]


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box ``[lo, hi]`` with ``hi > lo`` componentwise."""

    lo: tuple[float, float]
    hi: tuple[float, float]

    def __post_init__(self):
        lo = (float(self.lo[0]), float(self.lo[1]))
        hi = (float(self.hi[0]), float(self.hi[1]))
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        if not (hi[0] > lo[0] and hi[1] > lo[1]):
            raise ValueError(f"degenerate box: lo={lo}, hi={hi}")

    @property
    def extent(self):
        return (self.hi[0] - self.lo[0], self.hi[1] - self.lo[1])

    @property
    def area(self):
        ex, ey = self.extent
        return ex * ey


@dataclass(frozen=True)
class BackgroundMesh:
    """Uniform grid of ``nx * ny`` axis-aligned quadrilateral cells.

    Immutable after construction; safe to share across workers.  ``parent``
    and ``factor`` are set on meshes produced by :func:`refine_uniform` and
    give the child -> parent cell map by floor division of cell indices.
    """

    box: BoundingBox
    nx: int
    ny: int
    parent: "BackgroundMesh | None" = field(default=None, repr=False)
    factor: int = 1

    def __post_init__(self):
        if self.nx < 1 or self.ny < 1:
            raise ValueError(f"cell counts must be positive, got {self.nx}x{self.ny}")

    # -- geometry ----------------------------------------------------------

    @property
    def hx(self):
        return self.box.extent[0] / self.nx

    @property
    def hy(self):
        return self.box.extent[1] / self.ny

    @property
    def h(self):
        """Characteristic mesh size: the larger axis spacing."""
        return max(self.hx, self.hy)

    @property
    def n_cells(self):
        return self.nx * self.ny

    @property
    def n_vertices(self):
        return (self.nx + 1) * (self.ny + 1)

    @property
    def xs(self):
        return self.box.lo[0] + self.hx * np.arange(self.nx + 1)

    @property
    def ys(self):
        return self.box.lo[1] + self.hy * np.arange(self.ny + 1)

    def cell_index(self, cells):
        """Split cell ids into (column, row) index pairs."""
        cells = np.asarray(cells)
        return cells % self.nx, cells // self.nx

    def cell_id(self, i, j):
        return np.asarray(j) * self.nx + np.asarray(i)

    def cell_origin(self, cells):
        """Lower-left corner coordinates of the given cells, shape (n, 2)."""
        i, j = self.cell_index(cells)
        return np.stack(
            [self.box.lo[0] + i * self.hx, self.box.lo[1] + j * self.hy], axis=-1
        )

    def cell_vertices(self, cell):
        """Corner coordinates of one cell, counterclockwise from lower-left."""
        x0, y0 = self.cell_origin(int(cell))
        x1, y1 = x0 + self.hx, y0 + self.hy
        return np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]])

    def locate(self, points):
        """Cell ids containing the given physical points.

        Points on interior cell boundaries go to the upper/right cell;
        points on the box's upper boundary are clamped into the last cell.
        """
        pts = np.asarray(points, dtype=float)
        i = np.clip(
            np.floor((pts[..., 0] - self.box.lo[0]) / self.hx).astype(np.int64),
            0,
            self.nx - 1,
        )
        j = np.clip(
            np.floor((pts[..., 1] - self.box.lo[1]) / self.hy).astype(np.int64),
            0,
            self.ny - 1,
        )
        return j * self.nx + i

    def parent_cells(self, cells):
        """Map child cell ids to parent cell ids (requires a refined mesh)."""
        if self.parent is None:
            raise ValueError("mesh has no parent")
        i, j = self.cell_index(cells)
        return self.parent.cell_id(i // self.factor, j // self.factor)

    # -- skeleton ----------------------------------------------------------

    def interior_facets(self):
        """All interior facets as arrays ``(cells (n, 2), axis (n,))``.

        Facet normals point along +axis, i.e. from the lower to the higher
        cell id.  Vertical facets (normal +x, axis 0) come first, ordered
        lexicographically, then horizontal ones (normal +y, axis 1).  Box
        boundary facets are excluded.
        """
        nx, ny = self.nx, self.ny
        # vertical facets: between (i, j) and (i+1, j)
        iv, jv = np.meshgrid(np.arange(nx - 1), np.arange(ny), indexing="xy")
        left = (jv * nx + iv).ravel()
        vert = np.stack([left, left + 1], axis=1)
        # horizontal facets: between (i, j) and (i, j+1)
        ih, jh = np.meshgrid(np.arange(nx), np.arange(ny - 1), indexing="xy")
        low = (jh * nx + ih).ravel()
        horiz = np.stack([low, low + nx], axis=1)
        cells = np.concatenate([vert, horiz], axis=0)
        axis = np.concatenate(
            [np.zeros(len(vert), dtype=np.int64), np.ones(len(horiz), dtype=np.int64)]
        )
        return cells, axis

    def facet_midlength(self, axis):
        """Length of a facet with the given normal axis."""
        return self.hy if axis == 0 else self.hx


def build_mesh(box: BoundingBox, nx: int, ny: int) -> BackgroundMesh:
    """Build a uniform ``nx x ny`` Cartesian mesh tiling ``box`` exactly."""
    if nx < 1 or ny < 1:
        raise ValueError(f"cell counts must be positive, got nx={nx}, ny={ny}")
    return BackgroundMesh(box=box, nx=int(nx), ny=int(ny))


def refine_uniform(mesh: BackgroundMesh, factor: int) -> BackgroundMesh:
    """Subdivide every cell ``factor`` times per axis over the same box."""
    factor = int(factor)
    if factor < 1:
        raise ValueError(f"refinement factor must be >= 1, got {factor}")
    return BackgroundMesh(
        box=mesh.box,
        nx=mesh.nx * factor,
        ny=mesh.ny * factor,
        parent=mesh,
        factor=factor,
    )


def skeleton_faces_near_boundary(mesh: BackgroundMesh, cut_cells):
    """Interior facets adjacent to at least one cell in ``cut_cells``.

    Returns ``(cells (n, 2), axis (n,))`` in the deterministic facet order
    of :meth:`BackgroundMesh.interior_facets`; the facet normal points from
    the lower to the higher cell id (+axis direction).
    """
    cells, axis = mesh.interior_facets()
    mask = np.zeros(mesh.n_cells, dtype=bool)
    cut = np.asarray(sorted(cut_cells), dtype=np.int64)
    if cut.size:
        if cut.min() < 0 or cut.max() >= mesh.n_cells:
            raise ValueError("cut_cells contains ids outside the mesh")
        mask[cut] = True
    keep = mask[cells[:, 0]] | mask[cells[:, 1]]
    return cells[keep], axis[keep]
