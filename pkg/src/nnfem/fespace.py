"""Scalar Lagrange spaces on active cells of a background mesh.

The trial space is a plain order-k space on the coarse active cells; the
test space is an order-1 space on a uniformly refined mesh cut against the
geometry (coarse activity is then derived from the children).  Nodes use
the tensor-product equispaced layout; all dofs are free (Dirichlet data is
imposed weakly).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import _kernels
from .geometry import CUT, INTERIOR, CutDecomposition, LevelSet, decompose
from .mesh import BackgroundMesh, refine_uniform

__all__ = [
    "FeSpace",
    "AggregationMap",
    "build_trial_space",
    "build_linearized_test_space",
    "aggregate",
    "interpolation_nodes",
    "evaluate_fe_function",
]


@dataclass(frozen=True)
class FeSpace:
    """Conforming order-``k`` Lagrange space over the active cells.

    ``nodes[i]`` is the coordinate of global dof ``i``; dofs are numbered in
    lexicographic lattice order (x fastest), which makes every downstream
    iteration reproducible.  ``cell_nodes[r]`` lists the ``(k+1)**2`` global
    dofs of the r-th active cell, local index ``b * (k+1) + a`` for the node
    at lattice offset ``(a, b)`` inside the cell.
    """

    mesh: BackgroundMesh
    k: int
    active_cells: np.ndarray
    nodes: np.ndarray = field(repr=False)
    cell_nodes: np.ndarray = field(repr=False)
    active_pos: np.ndarray = field(repr=False)  # cell id -> row in cell_nodes

    @property
    def n_dofs(self):
        return len(self.nodes)

    # -- evaluation ---------------------------------------------------------

    def locate_active(self, points):
        """Cells containing the points; raises if any cell is not active."""
        cells = self.mesh.locate(points)
        if np.any(self.active_pos[cells] < 0):
            bad = np.asarray(points)[self.active_pos[cells] < 0][0]
            raise ValueError(f"point {bad} lies outside the active cells")
        return cells

    def basis_matrices(self, points, cells=None):
        """Sparse evaluation operators at physical points.

        Returns CSR matrices ``(E, Gx, Gy)`` of shape (n_points, n_dofs) with
        basis values and physical gradient components, so that ``E @ coeffs``
        evaluates the FE function.  ``cells`` overrides point location (used
        for facet traces where points sit on cell boundaries).
        """
        pts = np.ascontiguousarray(points, dtype=float).reshape(-1, 2)
        if cells is None:
            cells = self.locate_active(pts)
        else:
            cells = np.asarray(cells, dtype=np.int64)
        mesh, k = self.mesh, self.k
        origin = mesh.cell_origin(cells)
        locx = (pts[:, 0] - origin[:, 0]) / mesh.hx
        locy = (pts[:, 1] - origin[:, 1]) / mesh.hy
        vx, dx = _kernels.lagrange_tables(locx, k)
        vy, dy = _kernels.lagrange_tables(locy, k)
        val, gx, gy = _kernels.tensor_tables(vx, dx, vy, dy, 1.0 / mesh.hx, 1.0 / mesh.hy)

        m = (k + 1) * (k + 1)
        rows = np.repeat(np.arange(len(pts), dtype=np.int64), m)
        cols = self.cell_nodes[self.active_pos[cells]].ravel()
        shape = (len(pts), self.n_dofs)
        E = sp.csr_matrix((val.ravel(), (rows, cols)), shape=shape)
        Gx = sp.csr_matrix((gx.ravel(), (rows, cols)), shape=shape)
        Gy = sp.csr_matrix((gy.ravel(), (rows, cols)), shape=shape)
        return E, Gx, Gy

    def evaluate(self, coeffs, points):
        """Values and gradients of the FE function at physical points."""
        coeffs = np.asarray(coeffs, dtype=float)
        if coeffs.shape != (self.n_dofs,):
            raise ValueError(
                f"coefficient vector has length {coeffs.shape}, expected {self.n_dofs}"
            )
        E, Gx, Gy = self.basis_matrices(points)
        vals = E @ coeffs
        grads = np.stack([Gx @ coeffs, Gy @ coeffs], axis=-1)
        return vals, grads

    def interpolate(self, fn):
        """Nodal interpolation: evaluate ``fn`` at every free node."""
        return np.asarray(fn(self.nodes), dtype=float)


def _build_space(mesh: BackgroundMesh, active_cells, k: int) -> FeSpace:
    active = np.asarray(sorted(int(c) for c in np.asarray(active_cells).ravel()))
    if active.size == 0:
        raise ValueError("empty active cell set")
    if k < 1:
        raise ValueError(f"polynomial order must be >= 1, got {k}")
    lnx = k * mesh.nx + 1
    i, j = mesh.cell_index(active)
    a = np.arange(k + 1)
    # lattice ids of each cell's (k+1)^2 nodes, local order b*(k+1)+a
    ii = k * i[:, None, None] + a[None, None, :]
    jj = k * j[:, None, None] + a[None, :, None]
    lattice = (jj * lnx + ii).reshape(len(active), -1)

    used = np.unique(lattice)
    lookup = np.full(lnx * (k * mesh.ny + 1), -1, dtype=np.int64)
    lookup[used] = np.arange(len(used))
    cell_nodes = lookup[lattice]

    ux = used % lnx
    uy = used // lnx
    nodes = np.stack(
        [
            mesh.box.lo[0] + ux * (mesh.hx / k),
            mesh.box.lo[1] + uy * (mesh.hy / k),
        ],
        axis=1,
    )
    active_pos = np.full(mesh.n_cells, -1, dtype=np.int64)
    active_pos[active] = np.arange(len(active))
    return FeSpace(mesh, k, active, nodes, cell_nodes, active_pos)


def build_trial_space(mesh: BackgroundMesh, active, k: int) -> FeSpace:
    """Order-``k`` space on the active cells, all dofs free.

    ``active`` is a cell-id array or a :class:`CutDecomposition`; with the
    linearised test-space pipeline, pass the coarse active set derived from
    the refined children (see :func:`build_linearized_test_space`).
    """
    if isinstance(active, CutDecomposition):
        active = active.active_cells
    return _build_space(mesh, active, k)


def build_linearized_test_space(
    coarse: BackgroundMesh,
    phi: LevelSet,
    k: int,
    factor_rule: str = "pow2",
    n_sample: int = 4,
    tol_root: float = 1e-10,
):
    """Order-1 test space on the refined-and-cut mesh.

    The coarse mesh is refined by ``2**(k-1)`` (rule ``"pow2"``) or ``k``
    (rule ``"iso"``), the *refined* cells are classified against ``phi``,
    and the test space is built on the refined active cells.  A coarse cell
    is then declared active iff it has at least one active child; that set
    is the one to hand to :func:`build_trial_space`.

    Returns ``(test_space, refined_decomposition, coarse_active_cells)``.
    """
    if factor_rule == "pow2":
        factor = 2 ** (k - 1)
    elif factor_rule == "iso":
        factor = k
    else:
        raise ValueError(f"unknown factor rule {factor_rule!r}")
    refined = refine_uniform(coarse, factor)
    dec = decompose(refined, phi, n_sample=n_sample, tol_root=tol_root)
    test = _build_space(refined, dec.active_cells, 1)
    coarse_active = np.unique(refined.parent_cells(dec.active_cells))
    return test, dec, coarse_active


def interpolation_nodes(space: FeSpace):
    """Free-dof coordinates in dof order: row ``i`` belongs to dof ``i``.

    Coordinates of the exterior parts of cut cells lie outside the domain;
    that is expected, the network is defined on the whole plane.
    """
    return space.nodes


def evaluate_fe_function(space: FeSpace, coeffs, points):
    """Evaluate an FE function (values and gradients) at physical points."""
    return space.evaluate(coeffs, points)


# ---------------------------------------------------------------------------
# aggregation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AggregationMap:
    """Constraints tying the cut-only dofs to interior root cells.

    ``free_dofs`` are the dofs touching at least one interior cell; every
    other (ill-posed) dof is a linear combination of its root cell's dofs
    with coefficients from the root's Lagrange basis extended as polynomials.
    ``extension`` maps free-dof vectors to full vectors.
    """

    space: FeSpace = field(repr=False)
    cell_root: np.ndarray = field(repr=False)  # per cell id, -1 if inactive
    free_dofs: np.ndarray
    constrained_dofs: np.ndarray
    constraint_cols: np.ndarray = field(repr=False)  # (m, nloc) global dofs
    constraint_coefs: np.ndarray = field(repr=False)  # (m, nloc)

    @property
    def n_free(self):
        return len(self.free_dofs)

    @property
    def extension(self) -> sp.csr_matrix:
        """Sparse (n_dofs, n_free) map from free coefficients to all dofs."""
        space = self.space
        free_index = np.full(space.n_dofs, -1, dtype=np.int64)
        free_index[self.free_dofs] = np.arange(self.n_free)
        rows = [self.free_dofs]
        cols = [np.arange(self.n_free)]
        vals = [np.ones(self.n_free)]
        if len(self.constrained_dofs):
            m, nloc = self.constraint_cols.shape
            rows.append(np.repeat(self.constrained_dofs, nloc))
            cols.append(free_index[self.constraint_cols.ravel()])
            vals.append(self.constraint_coefs.ravel())
        return sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(space.n_dofs, self.n_free),
        )


def aggregate(space: FeSpace, decomp: CutDecomposition) -> AggregationMap:
    """Aggregate ill-posed cut cells into interior root cells.

    Roots are assigned by a level-synchronous BFS from all interior cells
    across facets between active cells; ties go to the lowest root id.
    """
    if space.mesh is not decomp.mesh and (
        space.mesh.nx != decomp.mesh.nx or space.mesh.ny != decomp.mesh.ny
    ):
        raise ValueError("space and decomposition live on different meshes")
    mesh = space.mesh
    classes = decomp.classes
    interior = np.flatnonzero(classes == INTERIOR)
    if interior.size == 0:
        raise ValueError("aggregation requires at least one interior cell")

    facets, _ = mesh.interior_facets()
    both_active = (classes[facets[:, 0]] != 0) & (classes[facets[:, 1]] != 0)
    facets = facets[both_active]
    adj = [[] for _ in range(mesh.n_cells)]
    for a, b in facets:
        adj[a].append(b)
        adj[b].append(a)

    root = np.full(mesh.n_cells, -1, dtype=np.int64)
    root[interior] = interior
    frontier = list(interior)
    while frontier:
        claims = {}
        for c in frontier:
            rc = root[c]
            for nb in adj[c]:
                if root[nb] < 0:
                    prev = claims.get(nb)
                    if prev is None or rc < prev:
                        claims[nb] = rc
        for cell in sorted(claims):
            root[cell] = claims[cell]
        frontier = sorted(claims)
    cut = np.flatnonzero(classes == CUT)
    if np.any(root[cut] < 0):
        orphan = cut[root[cut] < 0][0]
        raise ValueError(f"isolated cut island: cell {orphan} unreachable from interior")

    # dofs touching an interior cell stay free; the rest are constrained to
    # the root of the lowest-id cut cell containing them
    has_interior = np.zeros(space.n_dofs, dtype=bool)
    int_rows = space.active_pos[interior]
    has_interior[space.cell_nodes[int_rows].ravel()] = True
    owner = np.full(space.n_dofs, np.iinfo(np.int64).max, dtype=np.int64)
    for cell in cut:
        np.minimum.at(owner, space.cell_nodes[space.active_pos[cell]], cell)

    free = np.flatnonzero(has_interior)
    constrained = np.flatnonzero(~has_interior)
    if len(constrained) == 0:
        return AggregationMap(
            space, root, free, constrained,
            np.zeros((0, (space.k + 1) ** 2), dtype=np.int64),
            np.zeros((0, (space.k + 1) ** 2)),
        )

    root_cells = root[owner[constrained]]
    cols = space.cell_nodes[space.active_pos[root_cells]]
    origin = mesh.cell_origin(root_cells)
    locx = (space.nodes[constrained, 0] - origin[:, 0]) / mesh.hx
    locy = (space.nodes[constrained, 1] - origin[:, 1]) / mesh.hy
    vx, dx = _kernels.lagrange_tables(locx, space.k)
    vy, dy = _kernels.lagrange_tables(locy, space.k)
    coefs, _, _ = _kernels.tensor_tables(vx, dx, vy, dy, 1.0, 1.0)
    return AggregationMap(space, root, free, constrained, cols, coefs)
