"""Local radial-basis-function stencils and the assembled derivative operator.

Each interior grid node gets a small influence domain (its index window
on the grid, n_i nodes for interior rows, one-sidedly truncated near the
ends). A dense n_i x n_i interpolation system per node yields the row of
first-derivative weights; rows are stacked into a sparse banded operator.
Under the homogeneous Dirichlet rule the columns belonging to boundary
nodes are dropped, so the operator maps interior values to interior
values.
"""

import csv
import math
import os
import tempfile

import numpy as np
import scipy.sparse

from .errors import ConditioningError

COND_LIMIT = 1e12
KERNEL_KINDS = ("gaussian", "multiquadric", "inverse-multiquadric")


class Kernel:
    """Radial kernel phi(r) with shape constant c.

    gaussian:              phi(r) = exp(-c^2 r^2)
    multiquadric:          phi(r) = sqrt(r^2 + c^2)
    inverse-multiquadric:  phi(r) = 1/sqrt(r^2 + c^2)

    ``d1`` is the derivative of x -> phi(|x - x_k|) with respect to the
    evaluation point, as a function of the signed offset x - x_k.
    """

    def __init__(self, kind, shape):
        if kind not in KERNEL_KINDS:
            raise ValueError(f"unknown kernel kind {kind!r}")
        if shape <= 0:
            raise ValueError("shape parameter must be positive")
        self.kind = kind
        self.shape = float(shape)

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        c = self.shape
        if self.kind == "gaussian":
            return np.exp(-(c * c) * r * r)
        if self.kind == "multiquadric":
            return np.sqrt(r * r + c * c)
        return 1.0 / np.sqrt(r * r + c * c)

    def d1(self, dx):
        dx = np.asarray(dx, dtype=float)
        c = self.shape
        if self.kind == "gaussian":
            return -2.0 * c * c * dx * np.exp(-(c * c) * dx * dx)
        if self.kind == "multiquadric":
            return dx / np.sqrt(dx * dx + c * c)
        return -dx * (dx * dx + c * c) ** -1.5

    def __repr__(self):
        return f"Kernel({self.kind!r}, shape={self.shape})"


class InfluenceDomain:
    """Index window of stencil members around a center node.

    ``member_indices`` are global grid indices in ascending coordinate
    order; ``center_rank`` is the 1-based position of the center within
    them. On a uniform grid the window equals the n_i nearest neighbors
    (ties resolved toward the smaller index); near the ends it truncates
    one-sidedly instead of extending to farther nodes, which is what
    gives the first and last rows their shorter stencils.
    """

    def __init__(self, center_index, member_indices):
        self.center_index = int(center_index)
        self.member_indices = list(member_indices)
        self.center_rank = self.member_indices.index(self.center_index) + 1

    @classmethod
    def window(cls, center_index, n_nodes, n_i):
        half = (n_i - 1) // 2
        lo = max(0, center_index - half)
        hi = min(n_nodes - 1, center_index + half)
        return cls(center_index, range(lo, hi + 1))

    def __len__(self):
        return len(self.member_indices)


def _solve_pivoted_extended(a, b):
    """Gaussian elimination with partial pivoting in extended precision.

    The local systems are tiny but can be badly conditioned when the
    kernel is nearly flat over the stencil; the extra mantissa bits keep
    the stencil identities (zero row sums, antisymmetry) near roundoff.
    """
    a = a.astype(np.longdouble).copy()
    b = b.astype(np.longdouble).copy()
    n = a.shape[0]
    for k in range(n):
        p = k + int(np.argmax(np.abs(a[k:, k])))
        if a[p, k] == 0:
            raise ZeroDivisionError("singular matrix")
        if p != k:
            a[[k, p]] = a[[p, k]]
            b[[k, p]] = b[[p, k]]
        for i in range(k + 1, n):
            m = a[i, k] / a[k, k]
            a[i, k + 1:] -= m * a[k, k + 1:]
            b[i] -= m * b[k]
    x = np.zeros(n, dtype=np.longdouble)
    for i in range(n - 1, -1, -1):
        x[i] = (b[i] - a[i, i + 1:] @ x[i + 1:]) / a[i, i]
    return x.astype(float)


def local_weights(kernel, domain, coords, order=1):
    """First-derivative stencil weights for one influence domain.

    Solves the local Gram system (partial-pivoting elimination) and
    applies the analytic derivative row. Raises ConditioningError if
    the Gram 1-norm condition estimate exceeds 1e12, or if the
    resulting weights fail a crude derivative-consistency check (they
    should reproduce d/dx on linear data); the latter catches shape
    parameters for which the Gram is numerically benign but the stencil
    is degenerate.
    """
    if order != 1:
        raise ValueError("only first-derivative stencils are supported")
    coords = np.asarray(coords, dtype=float)
    xs = coords[domain.member_indices]
    center = coords[domain.center_index]
    offsets = xs - center
    # grids built from irrational endpoints carry last-bit jitter that a
    # nearly flat kernel amplifies; snap roundoff-symmetric stencils so the
    # symmetric-row identities (zero row sum, antisymmetry) hold exactly
    flipped = -offsets[::-1]
    scale = max(np.abs(xs).max(), abs(center), 1.0)
    if np.abs(offsets - flipped).max() <= 64.0 * np.finfo(float).eps * scale:
        offsets = 0.5 * (offsets + flipped)
    gram = kernel(np.abs(offsets[:, None] - offsets[None, :]))
    cond = np.linalg.cond(gram, 1)
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise ConditioningError(domain.center_index,
                                f"Gram condition estimate {cond:.2e} exceeds {COND_LIMIT:.0e}")
    rhs = kernel.d1(-offsets)
    try:
        weights = _solve_pivoted_extended(gram, rhs)
    except ZeroDivisionError as exc:
        raise ConditioningError(domain.center_index, f"singular Gram matrix: {exc}") from exc
    # d/dx of f(x) = x at the center should come out close to 1
    reproduced = float(weights @ offsets)
    if not np.isfinite(reproduced) or abs(reproduced - 1.0) > 0.5:
        raise ConditioningError(
            domain.center_index,
            f"degenerate stencil: derivative of linear data evaluates to {reproduced:.3e}")
    return weights


class DiffOperator:
    """Sparse first-derivative operator on the interior nodes of a grid.

    ``matrix`` is (n_interior x n_interior); columns for the two boundary
    nodes are dropped (their values are zero under homogeneous
    Dirichlet data). ``nodes`` holds the interior coordinates.
    """

    def __init__(self, order, nodes, matrix, boundary_rule, kernel, stencil_size):
        self.order = order
        self.nodes = nodes
        self.matrix = matrix
        self.boundary_rule = boundary_rule
        self.kernel = kernel
        self.stencil_size = stencil_size

    @property
    def n(self):
        return self.nodes.size

    def apply(self, values):
        values = np.asarray(values)
        if values.shape[0] != self.n:
            raise ValueError(f"dimension mismatch: operator is {self.n}, got {values.shape[0]}")
        return self.matrix @ values

    def toarray(self):
        return self.matrix.toarray()

    def export_csv(self, path):
        """Write nonzeros as rows (row, col, weight)."""
        coo = self.matrix.tocoo()
        fd, tmp = tempfile.mkstemp(dir=os.path.dirname(os.path.abspath(path)) or ".")
        try:
            with os.fdopen(fd, "w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(["row", "col", "weight"])
                for r, c, w in zip(coo.row, coo.col, coo.data):
                    writer.writerow([r, c, repr(w)])
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise


def assemble(kernel, grid, n_i=5, order=1, boundary="homogeneous-dirichlet"):
    """Build the banded derivative operator from per-node stencils.

    ``grid`` is the full strictly-increasing grid including the two
    boundary nodes; the operator acts on the interior nodes. Stencil
    rows are computed on the influence-domain windows (which include
    boundary nodes where the window reaches them) and the boundary
    columns are then deleted.
    """
    if boundary != "homogeneous-dirichlet":
        raise ValueError(f"unsupported boundary rule {boundary!r}")
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size < 3:
        raise ValueError("grid must hold at least one interior node")
    if np.any(np.diff(grid) <= 0):
        raise ValueError("grid must be strictly increasing")
    if n_i % 2 == 0 or n_i < 3 or n_i > grid.size:
        raise ValueError("stencil size must be odd and within the grid size")
    n_total = grid.size
    interior = np.arange(1, n_total - 1)
    rows, cols, vals = [], [], []
    for i in interior:
        dom = InfluenceDomain.window(i, n_total, n_i)
        weights = local_weights(kernel, dom, grid, order)
        for j, w in zip(dom.member_indices, weights):
            if 0 < j < n_total - 1:  # drop boundary columns
                rows.append(i - 1)
                cols.append(j - 1)
                vals.append(w)
    matrix = scipy.sparse.csr_matrix(
        (vals, (rows, cols)), shape=(interior.size, interior.size))
    return DiffOperator(order, grid[interior], matrix, boundary, kernel, n_i)
