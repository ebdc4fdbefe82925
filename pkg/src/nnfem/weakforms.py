"""Weak-form assembly on cut meshes: Nitsche residuals and Jacobians for the
Poisson and semilinear problems, ghost-penalty and Gram operators for the
test space, error norms, and manufactured solutions.

Volume and boundary integrals run over the quadrature of the *refined*
decomposition; trial functions are evaluated on their coarse parent cells.
Source and boundary data are generated from the manufactured solution by
dual-number differentiation, never hand-derived.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import dual
from .fespace import AggregationMap, FeSpace
from .geometry import (
    CutDecomposition,
    boundary_quadrature_all,
    volume_quadrature_all,
)
from .linalg import CholeskyFactor, NotSPDError, cholesky
from .mesh import skeleton_faces_near_boundary

__all__ = [
    "ManufacturedSolution",
    "manufactured",
    "MANUFACTURED_CATALOG",
    "ProblemDef",
    "NitscheParams",
    "ResidualAssembler",
    "assemble_residual",
    "assemble_jacobian",
    "assemble_ghost_penalty",
    "GramOperator",
    "assemble_gram",
    "apply_riesz",
    "error_norms",
    "ErrorMeter",
    "fe_field",
]


# ---------------------------------------------------------------------------
# manufactured solutions
# ---------------------------------------------------------------------------

class ManufacturedSolution:
    """Smooth closed-form field with exact derivatives via dual numbers."""

    def __init__(self, expr):
        self._expr = expr

    def at(self, points) -> dual.Dual2:
        x, y = dual.seed_xy(points)
        return self._expr(x, y)

    def value(self, points):
        return self.at(points).v

    def grad(self, points):
        return self.at(points).grad

    def laplacian(self, points):
        return self.at(points).laplacian

    def value_and_grad(self, points):
        d = self.at(points)
        return d.v, d.grad


MANUFACTURED_CATALOG = {
    # oscillatory smooth field
    "smooth2d": lambda x, y: dual.sin(3.2 * x * (x - y)) * dual.cos(x + 4.3 * y)
    + dual.sin(4.6 * (x + 2.0 * y)) * dual.cos(2.6 * (y - 2.0 * x)),
    # smooth field with a sharp Gaussian bump at the center
    "sharp2d": lambda x, y: dual.sin(3.2 * x * (x - y))
    * (5.0 * dual.exp(-100.0 * ((x - 0.5) ** 2 + (y - 0.5) ** 2)) + 1.0),
    # rational-trigonometric field used with the semilinear problem
    "nonlinear2d": lambda x, y: dual.cos(np.pi * (3.0 * x + y))
    / (1.0 + (x + 2.0 * y) ** 2),
    # product-of-sines state for the inverse problem
    "invstate2d": lambda x, y: dual.sin(np.pi * x) * dual.sin(np.pi * y),
    # bump reaction coefficient recovered in the inverse problem
    "invcoef2d": lambda x, y: 1.0
    + 9.0 * dual.exp(-5.0 * ((x - 0.5) ** 2 + (2.0 * y - 1.0) ** 2)),
}


def manufactured(name: str) -> ManufacturedSolution:
    try:
        return ManufacturedSolution(MANUFACTURED_CATALOG[name])
    except KeyError:
        raise KeyError(
            f"unknown manufactured solution {name!r}; "
            f"available: {sorted(MANUFACTURED_CATALOG)}"
        ) from None


# ---------------------------------------------------------------------------
# problem definition
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ProblemDef:
    """Strong-form data.  ``poisson``: -Δu = f.  ``nonlinear``:
    -Δu + (β·∇)u + σ e^(-u²) = f, with σ a constant or a field callable.
    Dirichlet data g = u* on the whole boundary; f is derived from u*."""

    kind: str
    solution: ManufacturedSolution
    beta: tuple[float, float] | None = None
    sigma: float | object | None = None

    def __post_init__(self):
        if self.kind not in ("poisson", "nonlinear"):
            raise ValueError(f"unknown problem kind {self.kind!r}")
        if self.kind == "nonlinear":
            if self.beta is None or self.sigma is None:
                raise ValueError("nonlinear problem requires beta and sigma")

    def sigma_values(self, points):
        if callable(self.sigma):
            return np.asarray(self.sigma(points), dtype=float)
        return np.full(len(points), float(self.sigma))

    def source(self, points):
        d = self.solution.at(points)
        f = -d.laplacian
        if self.kind == "nonlinear":
            bx, by = self.beta
            f = f + bx * d.gx + by * d.gy
            f = f + self.sigma_values(points) * np.exp(-d.v * d.v)
        return f

    def dirichlet(self, points):
        return self.solution.value(points)


@dataclass(frozen=True)
class NitscheParams:
    """Boundary penalty γ and the mesh length used in γ/h."""

    gamma: float
    h: float

    def __post_init__(self):
        if not self.gamma > 0.0:
            raise ValueError(f"Nitsche coefficient must be positive, got {self.gamma}")


# ---------------------------------------------------------------------------
# residual assembly
# ---------------------------------------------------------------------------

class ResidualAssembler:
    """Caches quadrature and basis-evaluation operators for one problem
    setup, then provides residual/Jacobian evaluations that cost a few
    sparse matvecs each.

    The residual is  r_i = a(u_h, φ_i) - ℓ(φ_i)  with the symmetric Nitsche
    boundary terms; rows are test dofs, columns trial dofs.
    """

    def __init__(
        self,
        problem: ProblemDef,
        trial: FeSpace,
        test: FeSpace,
        decomp: CutDecomposition,
        nitsche: NitscheParams,
        degree: int | None = None,
        sigma_space: FeSpace | None = None,
    ):
        if decomp.mesh is not test.mesh:
            raise ValueError("test space and decomposition must share the mesh")
        self.problem = problem
        self.trial = trial
        self.test = test
        self.decomp = decomp
        self.nitsche = nitsche
        self.degree = degree if degree is not None else 2 * trial.k + 1
        self.sigma_space = sigma_space

        # volume quadrature on the refined active cells
        P, W, cells = volume_quadrature_all(decomp, self.degree)
        self._w = W
        Et, Gxt, Gyt = test.basis_matrices(P, cells=cells)
        tr_cells = self._trial_cells(P, cells)
        Eu, Gxu, Gyu = trial.basis_matrices(P, cells=tr_cells)
        self._E_test = Et
        self._E_trial = Eu

        Wd = sp.diags(W)
        A = Gxt.T @ (Wd @ Gxu) + Gyt.T @ (Wd @ Gyu)
        if problem.kind == "nonlinear":
            bx, by = problem.beta
            A = A + Et.T @ (Wd @ (bx * Gxu + by * Gyu))
            if sigma_space is None:
                self._sigma_q = problem.sigma_values(P)
                self._E_sigma = None
            else:
                sg_cells = self._cells_on(sigma_space, P, cells)
                self._E_sigma, _, _ = sigma_space.basis_matrices(P, cells=sg_cells)
                self._sigma_q = None

        b = Et.T @ (W * problem.source(P))

        # boundary quadrature on the cut-cell chords
        BP, BW, BN, bcells = boundary_quadrature_all(decomp, self.degree)
        self._n_bnd = len(BW)
        if self._n_bnd:
            Ebt, Gbxt, Gbyt = test.basis_matrices(BP, cells=bcells)
            btr = self._trial_cells(BP, bcells)
            Ebu, Gbxu, Gbyu = trial.basis_matrices(BP, cells=btr)
            Nx = sp.diags(BN[:, 0])
            Ny = sp.diags(BN[:, 1])
            Gnt = Nx @ Gbxt + Ny @ Gbyt
            Gnu = Nx @ Gbxu + Ny @ Gbyu
            Wb = sp.diags(BW)
            goh = nitsche.gamma / nitsche.h
            A = A + goh * (Ebt.T @ (Wb @ Ebu)) - Ebt.T @ (Wb @ Gnu) - Gnt.T @ (Wb @ Ebu)
            g = problem.dirichlet(BP)
            b = b + Ebt.T @ (BW * (goh * g)) - Gnt.T @ (BW * g)

        self.matrix = A.tocsr()
        self.rhs = b

    # -- helpers -------------------------------------------------------------

    def _trial_cells(self, points, refined_cells):
        return self._cells_on(self.trial, points, refined_cells)

    def _cells_on(self, space, points, refined_cells):
        rmesh = self.decomp.mesh
        if space.mesh is rmesh:
            return refined_cells
        if rmesh.parent is space.mesh:
            return rmesh.parent_cells(refined_cells)
        return space.locate_active(points)

    def _check_u(self, u):
        u = np.asarray(u, dtype=float)
        if u.shape != (self.trial.n_dofs,):
            raise ValueError(
                f"trial vector has shape {u.shape}, expected ({self.trial.n_dofs},)"
            )
        return u

    def _reaction_scale(self, sigma_coeffs):
        if self.sigma_space is not None:
            if sigma_coeffs is None:
                raise ValueError("this assembler expects sigma coefficients")
            return self._E_sigma @ np.asarray(sigma_coeffs, dtype=float)
        return self._sigma_q

    # -- evaluations ----------------------------------------------------------

    def residual(self, u, sigma_coeffs=None):
        u = self._check_u(u)
        r = self.matrix @ u - self.rhs
        if self.problem.kind == "nonlinear":
            uq = self._E_trial @ u
            sq = self._reaction_scale(sigma_coeffs)
            r = r + self._E_test.T @ (self._w * sq * np.exp(-uq * uq))
        return r

    def jacobian(self, u, sigma_coeffs=None) -> sp.csr_matrix:
        """∂r/∂u as a sparse matrix (independent of u for Poisson)."""
        u = self._check_u(u)
        if self.problem.kind == "poisson":
            return self.matrix
        uq = self._E_trial @ u
        sq = self._reaction_scale(sigma_coeffs)
        d = self._w * sq * (-2.0 * uq) * np.exp(-uq * uq)
        return (self.matrix + self._E_test.T @ (sp.diags(d) @ self._E_trial)).tocsr()

    def jacobian_t_vec(self, u, y, sigma_coeffs=None):
        """(∂r/∂u)^T y without forming the nonlinear Jacobian."""
        u = self._check_u(u)
        out = self.matrix.T @ y
        if self.problem.kind == "nonlinear":
            uq = self._E_trial @ u
            sq = self._reaction_scale(sigma_coeffs)
            d = self._w * sq * (-2.0 * uq) * np.exp(-uq * uq)
            out = out + self._E_trial.T @ (d * (self._E_test @ y))
        return out

    def jacobian_sigma_t_vec(self, u, y):
        """(∂r/∂σ-coefficients)^T y for the interpolated reaction field."""
        if self.sigma_space is None:
            raise ValueError("assembler was built without a sigma space")
        u = self._check_u(u)
        uq = self._E_trial @ u
        return self._E_sigma.T @ (self._w * np.exp(-uq * uq) * (self._E_test @ y))


def assemble_residual(problem, trial, test, decomp, nitsche, u, degree=None):
    """One-shot residual assembly (prefer :class:`ResidualAssembler` for reuse)."""
    return ResidualAssembler(problem, trial, test, decomp, nitsche, degree).residual(u)


def assemble_jacobian(problem, trial, test, decomp, nitsche, u, degree=None):
    """One-shot Jacobian assembly (prefer :class:`ResidualAssembler` for reuse)."""
    return ResidualAssembler(problem, trial, test, decomp, nitsche, degree).jacobian(u)


# ---------------------------------------------------------------------------
# ghost penalty and Gram operator
# ---------------------------------------------------------------------------

def assemble_ghost_penalty(test: FeSpace, facets, gamma_g: float, h: float) -> sp.csr_matrix:
    """First-order ghost penalty  j(u, v) = Σ_F γ_g h (⟦∂u/∂n⟧, ⟦∂v/∂n⟧)_F
    over the given interior facets of the test mesh."""
    cells, axis = facets
    if len(cells) == 0:
        return sp.csr_matrix((test.n_dofs, test.n_dofs))
    if np.any(test.active_pos[np.asarray(cells).ravel()] < 0):
        raise ValueError("ghost penalty facet not shared by two active cells")
    mesh = test.mesh
    rows_D = []
    w_all = []
    t2, w2 = np.polynomial.legendre.leggauss(2)
    t2 = 0.5 * (t2 + 1.0)
    w2 = 0.5 * w2
    for ax in (0, 1):
        sel = axis == ax
        if not np.any(sel):
            continue
        lo_cells = cells[sel, 0]
        hi_cells = cells[sel, 1]
        lo_origin = mesh.cell_origin(hi_cells)  # shared edge = hi cell's lower edge
        if ax == 0:
            starts = lo_origin
            direction = np.array([0.0, mesh.hy])
            length = mesh.hy
        else:
            starts = lo_origin
            direction = np.array([mesh.hx, 0.0])
            length = mesh.hx
        pts = (starts[:, None, :] + t2[None, :, None] * direction[None, None, :]).reshape(-1, 2)
        rep_lo = np.repeat(lo_cells, 2)
        rep_hi = np.repeat(hi_cells, 2)
        _, Gx_lo, Gy_lo = test.basis_matrices(pts, cells=rep_lo)
        _, Gx_hi, Gy_hi = test.basis_matrices(pts, cells=rep_hi)
        D = (Gx_lo - Gx_hi) if ax == 0 else (Gy_lo - Gy_hi)
        rows_D.append(D)
        w_all.append(np.tile(w2 * length, len(lo_cells)))
    D = sp.vstack(rows_D).tocsr()
    w = gamma_g * h * np.concatenate(w_all)
    return (D.T @ (sp.diags(w) @ D)).tocsr()


@dataclass
class GramOperator:
    """Test-space H¹ Gram matrix with its reusable Cholesky factor.

    With the standard test space the ghost penalty is added to keep the
    matrix SPD on small cuts; with the aggregated space the matrix is
    reduced onto the free dofs by the constraint extension ``C``.
    """

    matrix: sp.csr_matrix
    factor: CholeskyFactor
    stabilization: str
    extension: sp.csr_matrix | None = None

    def apply_riesz(self, r):
        """Return ``(z, dual_norm)`` with z the Riesz representative of r.

        For the aggregated space z is prolongated back to all test dofs, so
        ``r @ z == dual_norm**2`` in either case.
        """
        r = np.asarray(r, dtype=float)
        if self.extension is not None:
            rr = self.extension.T @ r
            zf = self.factor.solve(rr)
            z = self.extension @ zf
            sq = float(rr @ zf)
        else:
            z = self.factor.solve(r)
            sq = float(r @ z)
        return z, np.sqrt(max(sq, 0.0))


def assemble_gram(
    test: FeSpace,
    decomp: CutDecomposition,
    stabilization,
    degree: int = 4,
) -> GramOperator:
    """H¹ Gram operator of the test space over the cut domain.

    ``stabilization`` is ``("ghost", gamma_g)`` or ``("aggregated", agg_map)``
    with an :class:`~nnfem.fespace.AggregationMap`.
    """
    P, W, cells = volume_quadrature_all(decomp, degree)
    E, Gx, Gy = test.basis_matrices(P, cells=cells)
    Wd = sp.diags(W)
    M = (E.T @ (Wd @ E) + Gx.T @ (Wd @ Gx) + Gy.T @ (Wd @ Gy)).tocsr()

    kind = stabilization[0]
    if kind == "ghost":
        gamma_g = float(stabilization[1])
        cut = decomp.cut_cells
        fc, fax = skeleton_faces_near_boundary(test.mesh, cut)
        both_active = decomp.is_active(fc[:, 0]) & decomp.is_active(fc[:, 1])
        J = assemble_ghost_penalty(
            test, (fc[both_active], fax[both_active]), gamma_g, test.mesh.h
        )
        B = (M + J).tocsr()
        C = None
        tag = f"ghost({gamma_g})"
    elif kind == "aggregated":
        agg: AggregationMap = stabilization[1]
        C = agg.extension
        B = (C.T @ (M @ C)).tocsr()
        tag = "aggregated"
    else:
        raise ValueError(f"unknown stabilization {kind!r}")

    try:
        factor = cholesky(B)
    except NotSPDError as err:
        raise NotSPDError(f"Gram not SPD ({tag}): {err}") from err
    return GramOperator(B, factor, tag, C)


def apply_riesz(gram: GramOperator, r):
    """Riesz representative and discrete dual norm of a residual vector."""
    return gram.apply_riesz(r)


# ---------------------------------------------------------------------------
# error norms
# ---------------------------------------------------------------------------

def fe_field(space: FeSpace, coeffs):
    """Wrap FE coefficients as a ``points -> (values, grads)`` callable."""
    coeffs = np.asarray(coeffs, dtype=float)

    def eval_fn(points):
        return space.evaluate(coeffs, points)

    return eval_fn


def error_norms(u_field, exact: ManufacturedSolution, decomp, degree: int):
    """L² and H¹ errors of ``u_field`` against the exact solution over Ω.

    ``u_field(points) -> (values, grads)``; the integral runs on the cut
    quadrature of ``decomp`` at the given degree.
    """
    P, W, _ = volume_quadrature_all(decomp, degree)
    v_ex, g_ex = exact.value_and_grad(P)
    v, g = u_field(P)
    dv = v - v_ex
    dg = g - g_ex
    l2_sq = float(W @ (dv * dv))
    h1_sq = l2_sq + float(W @ (dg[:, 0] ** 2 + dg[:, 1] ** 2))
    return np.sqrt(max(l2_sq, 0.0)), np.sqrt(max(h1_sq, 0.0))


class ErrorMeter:
    """Error quadrature cached for repeated use during training.

    Precomputes the cut quadrature, the exact values/gradients and, when an
    FE space is given, that space's evaluation operators, so per-checkpoint
    error norms cost a few matvecs.
    """

    def __init__(self, exact: ManufacturedSolution, decomp: CutDecomposition,
                 degree: int, fe_space: FeSpace | None = None):
        P, W, cells = volume_quadrature_all(decomp, degree)
        self.points = P
        self.weights = W
        self.v_ex, self.g_ex = exact.value_and_grad(P)
        self.norm_l2 = np.sqrt(float(W @ (self.v_ex**2)))
        self.norm_h1 = np.sqrt(
            float(W @ (self.v_ex**2 + self.g_ex[:, 0] ** 2 + self.g_ex[:, 1] ** 2))
        )
        self._fe_ops = None
        if fe_space is not None:
            if fe_space.mesh is decomp.mesh:
                fe_cells = cells
            elif decomp.mesh.parent is fe_space.mesh:
                fe_cells = decomp.mesh.parent_cells(cells)
            else:
                fe_cells = fe_space.locate_active(P)
            self._fe_ops = fe_space.basis_matrices(P, cells=fe_cells)

    def _norms(self, v, g):
        dv = v - self.v_ex
        dgx = g[:, 0] - self.g_ex[:, 0]
        dgy = g[:, 1] - self.g_ex[:, 1]
        l2_sq = float(self.weights @ (dv * dv))
        h1_sq = l2_sq + float(self.weights @ (dgx * dgx + dgy * dgy))
        return np.sqrt(max(l2_sq, 0.0)), np.sqrt(max(h1_sq, 0.0))

    def fe_errors(self, coeffs):
        if self._fe_ops is None:
            raise ValueError("meter was built without an FE space")
        E, Gx, Gy = self._fe_ops
        v = E @ coeffs
        g = np.stack([Gx @ coeffs, Gy @ coeffs], axis=-1)
        return self._norms(v, g)

    def field_errors(self, u_field):
        v, g = u_field(self.points)
        return self._norms(v, g)
