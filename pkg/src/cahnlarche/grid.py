"""Structured Q1 finite elements on the unit square.

Provides the mesh, quadrature, assembly primitives (scalar mass/stiffness,
vector elasticity, scalar-vector coupling, load vectors), symmetric Dirichlet
elimination and sparse direct solves. All elements are axis-aligned squares of
side h = 1/n, with bilinear shape functions on the reference square [0,1]^2
and counterclockwise node ordering.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

# Voigt convention: strain (e11, e22, 2*e12), stress (s11, s22, s12).
# The identity tensor maps to (1, 1, 0).
I_VOIGT = np.array([1.0, 1.0, 0.0])


class SingularSystemError(Exception):
    """Linear solve failed or did not reach the requested residual."""

    def __init__(self, message, achieved_residual=None):
        super().__init__(message)
        self.achieved_residual = achieved_residual


@dataclass(frozen=True)
class QuadratureRule:
    """Quadrature on the reference square [0,1]^2."""

    points: np.ndarray   # (nq, 2)
    weights: np.ndarray  # (nq,)


def gauss_rule(order=2):
    """Tensor-product Gauss rule on [0,1]^2. order=2 is exact for Q1 x Q1."""
    x, w = np.polynomial.legendre.leggauss(order)
    x = 0.5 * (x + 1.0)
    w = 0.5 * w
    pts = np.array([(a, b) for b in x for a in x])
    wts = np.array([wa * wb for wb in w for wa in w])
    return QuadratureRule(points=pts, weights=wts)


def shape_values(pts):
    """Q1 shape functions at reference points, counterclockwise order."""
    x, y = pts[:, 0], pts[:, 1]
    return np.stack(
        [(1 - x) * (1 - y), x * (1 - y), x * y, (1 - x) * y], axis=1
    )


def shape_gradients(pts):
    """Reference gradients of the Q1 shape functions, shape (nq, 4, 2)."""
    x, y = pts[:, 0], pts[:, 1]
    dx = np.stack([-(1 - y), (1 - y), y, -y], axis=1)
    dy = np.stack([-(1 - x), -x, x, (1 - x)], axis=1)
    return np.stack([dx, dy], axis=2)


@dataclass(frozen=True)
class Mesh:
    """Structured quadrilateral mesh of the unit square."""

    n_per_side: int
    h: float
    nodes: np.ndarray       # (node_count, 2) coordinates
    elements: np.ndarray    # (n^2, 4) connectivity, counterclockwise
    boundary_nodes: np.ndarray
    quadrature: QuadratureRule
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def node_count(self):
        return self.nodes.shape[0]

    @property
    def element_count(self):
        return self.elements.shape[0]

    # Precomputed assembly data -------------------------------------------

    @property
    def shape_vals(self):
        if "N" not in self._cache:
            self._cache["N"] = shape_values(self.quadrature.points)
        return self._cache["N"]

    @property
    def phys_grads(self):
        """Physical shape gradients (nq, 4, 2); constant across elements."""
        if "dN" not in self._cache:
            self._cache["dN"] = shape_gradients(self.quadrature.points) / self.h
        return self._cache["dN"]

    @property
    def qp_weights(self):
        """Physical quadrature weights per point (area-scaled)."""
        return self.quadrature.weights * self.h**2

    @property
    def scatter_indices(self):
        """(rows, cols) index arrays for scalar 4x4 element scatter."""
        if "scatter" not in self._cache:
            e = self.elements
            rows = np.repeat(e, 4, axis=1).ravel()
            cols = np.tile(e, (1, 4)).ravel()
            self._cache["scatter"] = (rows, cols)
        return self._cache["scatter"]

    @property
    def u_dofs(self):
        """(n_elem, 8) interleaved displacement dofs per element."""
        if "udofs" not in self._cache:
            e = self.elements
            ud = np.empty((e.shape[0], 8), dtype=int)
            ud[:, 0::2] = 2 * e
            ud[:, 1::2] = 2 * e + 1
            self._cache["udofs"] = ud
        return self._cache["udofs"]

    @property
    def b_matrices(self):
        """Strain-displacement matrices, (nq, 3, 8), engineering shear."""
        if "B" not in self._cache:
            dN = self.phys_grads
            nq = dN.shape[0]
            B = np.zeros((nq, 3, 8))
            B[:, 0, 0::2] = dN[:, :, 0]
            B[:, 1, 1::2] = dN[:, :, 1]
            B[:, 2, 0::2] = dN[:, :, 1]
            B[:, 2, 1::2] = dN[:, :, 0]
            self._cache["B"] = B
        return self._cache["B"]


@dataclass(frozen=True)
class DofMap:
    """Block layout (phi, mu, u) of the coupled system."""

    node_count: int
    constrained_dofs: np.ndarray  # global indices within the full system

    @property
    def n_total(self):
        return 4 * self.node_count

    @property
    def phi_slice(self):
        return slice(0, self.node_count)

    @property
    def mu_slice(self):
        return slice(self.node_count, 2 * self.node_count)

    @property
    def u_slice(self):
        return slice(2 * self.node_count, 4 * self.node_count)


def build_mesh(n_per_side, quadrature_order=2):
    """Build a structured n x n quadrilateral mesh of the unit square."""
    if n_per_side < 2:
        raise ValueError(f"n_per_side must be >= 2, got {n_per_side}")
    n = int(n_per_side)
    h = 1.0 / n
    coords_1d = np.arange(n + 1) * h
    X, Y = np.meshgrid(coords_1d, coords_1d)
    nodes = np.column_stack([X.ravel(), Y.ravel()])

    def idx(i, j):
        return j * (n + 1) + i

    ii, jj = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    ii, jj = ii.ravel(), jj.ravel()
    elements = np.column_stack(
        [idx(ii, jj), idx(ii + 1, jj), idx(ii + 1, jj + 1), idx(ii, jj + 1)]
    )

    I, J = np.meshgrid(np.arange(n + 1), np.arange(n + 1), indexing="ij")
    on_bnd = (I == 0) | (I == n) | (J == 0) | (J == n)
    boundary = np.sort(idx(I[on_bnd], J[on_bnd]))

    return Mesh(
        n_per_side=n,
        h=h,
        nodes=nodes,
        elements=elements,
        boundary_nodes=boundary,
        quadrature=gauss_rule(quadrature_order),
    )


def build_dofmap(mesh):
    """Dof layout with homogeneous Dirichlet constraints on all u dofs."""
    nn = mesh.node_count
    b = mesh.boundary_nodes
    constrained = np.sort(
        np.concatenate([2 * nn + 2 * b, 2 * nn + 2 * b + 1])
    )
    return DofMap(node_count=nn, constrained_dofs=constrained)


# ---------------------------------------------------------------------------
# Field evaluation at quadrature points
# ---------------------------------------------------------------------------

def scalar_at_qp(mesh, nodal):
    """Nodal scalar field evaluated at quadrature points, (n_elem, nq)."""
    return nodal[mesh.elements] @ mesh.shape_vals.T


def gradient_at_qp(mesh, nodal):
    """Gradient of nodal scalar field at quadrature points, (n_elem, nq, 2)."""
    return np.einsum("ei,qid->eqd", nodal[mesh.elements], mesh.phys_grads)


def strain_at_qp(mesh, u):
    """Voigt strain of an interleaved displacement vector, (n_elem, nq, 3)."""
    ue = u[mesh.u_dofs]
    return np.einsum("qca,ea->eqc", mesh.b_matrices, ue)


# ---------------------------------------------------------------------------
# Assembly
# ---------------------------------------------------------------------------

def _scatter_scalar(mesh, elem_mats):
    rows, cols = mesh.scatter_indices
    A = sp.coo_matrix(
        (elem_mats.reshape(-1), (rows, cols)),
        shape=(mesh.node_count, mesh.node_count),
    )
    A = A.tocsr()
    A.eliminate_zeros()
    return A


def assemble_mass(mesh, coefficient=1.0):
    """Scalar mass matrix int c * p_i p_j dx. Symmetric positive definite."""
    N = mesh.shape_vals
    elem = coefficient * np.einsum("q,qi,qj->ij", mesh.qp_weights, N, N)
    mats = np.broadcast_to(elem, (mesh.element_count, 4, 4))
    return _scatter_scalar(mesh, mats)


def assemble_weighted_mass(mesh, weight_qp):
    """Mass matrix with per-quadrature-point weights, shape (n_elem, nq)."""
    N = mesh.shape_vals
    mats = np.einsum("q,eq,qi,qj->eij", mesh.qp_weights, weight_qp, N, N)
    return _scatter_scalar(mesh, mats)


def assemble_stiffness(mesh, coefficient=1.0):
    """Scalar stiffness int c * grad p_i . grad p_j dx. SPSD, kernel=constants."""
    dN = mesh.phys_grads
    elem = coefficient * np.einsum("q,qid,qjd->ij", mesh.qp_weights, dN, dN)
    mats = np.broadcast_to(elem, (mesh.element_count, 4, 4))
    return _scatter_scalar(mesh, mats)


def _check_voigt_field(C):
    if not np.allclose(C, np.swapaxes(C, -1, -2), atol=1e-12):
        raise ValueError("Voigt stiffness field is not symmetric")
    # Sylvester criterion on the 3x3 blocks (cheap, vectorized).
    d1 = C[..., 0, 0]
    d2 = C[..., 0, 0] * C[..., 1, 1] - C[..., 0, 1] * C[..., 1, 0]
    d3 = np.linalg.det(C)
    if np.any(d1 <= 0) or np.any(d2 <= 0) or np.any(d3 <= 0):
        raise ValueError("Voigt stiffness field is not positive definite")


def assemble_vector_elasticity(mesh, voigt_field, check=True):
    """Elasticity stiffness int (C eps(u)) : eps(v) dx on interleaved u dofs.

    voigt_field is a (3,3) constant or a per-quadrature (n_elem, nq, 3, 3)
    array of Voigt stiffness tensors.
    """
    C = np.asarray(voigt_field, dtype=float)
    if check:
        _check_voigt_field(C)
    B = mesh.b_matrices
    w = mesh.qp_weights
    if C.ndim == 2:
        elem = np.einsum("q,qca,cd,qdb->ab", w, B, C, B)
        mats = np.broadcast_to(elem, (mesh.element_count, 8, 8))
    else:
        mats = np.einsum("q,qca,eqcd,qdb->eab", w, B, C, B)
    ud = mesh.u_dofs
    rows = np.repeat(ud, 8, axis=1).ravel()
    cols = np.tile(ud, (1, 8)).ravel()
    nn = 2 * mesh.node_count
    A = sp.coo_matrix((mats.reshape(-1), (rows, cols)), shape=(nn, nn)).tocsr()
    A.eliminate_zeros()
    return A


def assemble_coupling(mesh, voigt_vec_qp):
    """Coupling matrix G[i, a] = int p_i * (v . B_a) dx.

    voigt_vec_qp is a per-quadrature Voigt row vector, shape (n_elem, nq, 3)
    or constant (3,). Maps u dofs (columns) to scalar test functions (rows).
    """
    v = np.asarray(voigt_vec_qp, dtype=float)
    N = mesh.shape_vals
    B = mesh.b_matrices
    w = mesh.qp_weights
    if v.ndim == 1:
        elem = np.einsum("q,qi,c,qca->ia", w, N, v, B)
        mats = np.broadcast_to(elem, (mesh.element_count, 4, 8))
    else:
        mats = np.einsum("q,qi,eqc,qca->eia", w, N, v, B)
    rows = np.repeat(mesh.elements, 8, axis=1).ravel()
    cols = np.tile(mesh.u_dofs, (1, 4)).ravel()
    G = sp.coo_matrix(
        (mats.reshape(-1), (rows, cols)),
        shape=(mesh.node_count, 2 * mesh.node_count),
    ).tocsr()
    G.eliminate_zeros()
    return G


def assemble_scalar_load(mesh, values_qp):
    """Load vector int f p_i dx from per-quadrature scalar values."""
    mats = np.einsum("q,eq,qi->ei", mesh.qp_weights, values_qp, mesh.shape_vals)
    out = np.zeros(mesh.node_count)
    np.add.at(out, mesh.elements.ravel(), mats.ravel())
    return out


def assemble_vector_load(mesh, values_qp):
    """Load vector int f . v dx from per-quadrature (n_elem, nq, 2) values."""
    N = mesh.shape_vals
    mats = np.zeros((mesh.element_count, 8))
    mats[:, 0::2] = np.einsum("q,eq,qi->ei", mesh.qp_weights, values_qp[:, :, 0], N)
    mats[:, 1::2] = np.einsum("q,eq,qi->ei", mesh.qp_weights, values_qp[:, :, 1], N)
    out = np.zeros(2 * mesh.node_count)
    np.add.at(out, mesh.u_dofs.ravel(), mats.ravel())
    return out


# ---------------------------------------------------------------------------
# Constraints and solves
# ---------------------------------------------------------------------------

def eliminate_dirichlet(matrix, rhs, dofs, values=None):
    """Symmetric elimination of Dirichlet dofs.

    Zeroes constrained rows and columns, puts 1 on the diagonal, and corrects
    the right-hand side so the solution takes the prescribed values exactly.
    Returns (A, b) as new objects.
    """
    A = matrix.tocsr(copy=True)
    b = np.asarray(rhs, dtype=float).copy()
    dofs = np.asarray(dofs, dtype=int)
    if values is None:
        values = np.zeros(len(dofs))
    else:
        values = np.asarray(values, dtype=float)

    x_bc = np.zeros(A.shape[0])
    x_bc[dofs] = values
    b -= A @ x_bc
    b[dofs] = values

    mask = np.zeros(A.shape[0], dtype=bool)
    mask[dofs] = True
    keep = sp.diags((~mask).astype(float))
    A = keep @ A @ keep + sp.diags(mask.astype(float))
    A = A.tocsr()
    A.eliminate_zeros()
    return A, b


def apply_dirichlet(matrix, rhs, dofmap, values=None):
    """Constrain the u-block Dirichlet dofs of a full coupled system."""
    lo, hi = dofmap.u_slice.start, dofmap.u_slice.stop
    c = dofmap.constrained_dofs
    if np.any(c < lo) or np.any(c >= hi):
        raise ValueError("constrained dof outside the displacement block")
    return eliminate_dirichlet(matrix, rhs, c, values)


def solve_linear(matrix, rhs, tol=1e-10):
    """Sparse direct solve with an algebraic residual check."""
    A = matrix.tocsc()
    b = np.asarray(rhs, dtype=float)
    try:
        lu = spla.splu(A)
    except RuntimeError as exc:
        raise SingularSystemError(f"factorization failed: {exc}") from exc
    x = lu.solve(b)
    if not np.all(np.isfinite(x)):
        raise SingularSystemError("solve produced non-finite values")
    bnorm = np.linalg.norm(b)
    if bnorm > 0:
        res = np.linalg.norm(A @ x - b) / bnorm
        if res > tol:
            raise SingularSystemError(
                f"relative residual {res:.3e} exceeds {tol:.1e}",
                achieved_residual=res,
            )
    return x


def write_coo(matrix, path):
    """Export a sparse matrix as (row, col, value) text for debugging."""
    coo = matrix.tocoo()
    with open(path, "w") as f:
        f.write(f"# {coo.shape[0]} {coo.shape[1]} {coo.nnz}\n")
        for r, c, v in zip(coo.row, coo.col, coo.data):
            f.write(f"{r} {c} {v:.17g}\n")
