"""Full-grid box-scheme marching for the one-stage splitting and partitioned schemes.

The single-cell midpoint relations are composed over the grid the
standard way: stage values live on cell midpoints, the per-time-step
edge values live on the cell interfaces at the temporal stage level,
adjacent cells share interface values, and homogeneous Dirichlet data
(u = 0, and rho = 0 for KdV, p = q = 0 for NLS) closes the two ends.
The state marched between time levels holds the midcell values the
temporal relations act on; interface values are internal to each step.

The per-step system is linear apart from pointwise nonlinearities; its
constant part is banded and factored once, and the nonlinear terms are
lagged until the cell-equation residual drops below the solver
tolerance.
"""

import numpy as np
import scipy.linalg
import scipy.sparse
import scipy.sparse.linalg
from scipy.linalg import lapack

from ..errors import BlowUpError, DivergenceError
from ..systems import KdVSystem, NLSSystem, WaveSystem


def _check_factor(info, what):
    if info != 0:
        raise RuntimeError(f"banded factorization of the {what} system failed (info={info})")


def wave_box_matrix(n_cells, dx, dt):
    """Constant interface system of the wave box scheme, as a sparse matrix.

    Unknown layout: x[0] = w_0; x[2i-1] = u_i and x[2i] = w_i for the
    interior interfaces i = 1..I-1; x[2I-1] = w_I (u is pinned to zero
    at both ends). Row 2i is the chain relation of cell i, row 2i+1 its
    midpoint cell relation with the nonlinear terms moved to the rhs.
    """
    n_cells = int(n_cells)

    def iu(i):
        return 2 * i - 1

    def iw(i):
        if i == 0:
            return 0
        if i == n_cells:
            return 2 * n_cells - 1
        return 2 * i

    rows, cols, vals = [], [], []

    def add(r, c, v):
        rows.append(r)
        cols.append(c)
        vals.append(v)

    gamma = dt * dt / (4.0 * dx)
    for i in range(n_cells):
        r_chain, r_cell = 2 * i, 2 * i + 1
        if i + 1 < n_cells:
            add(r_chain, iu(i + 1), 1.0)
        if i > 0:
            add(r_chain, iu(i), -1.0)
        add(r_chain, iw(i), -0.5 * dx)
        add(r_chain, iw(i + 1), -0.5 * dx)
        if i > 0:
            add(r_cell, iu(i), 0.5)
        if i + 1 < n_cells:
            add(r_cell, iu(i + 1), 0.5)
        add(r_cell, iw(i + 1), -gamma)
        add(r_cell, iw(i), gamma)
    size = 2 * n_cells
    return scipy.sparse.csr_matrix((vals, (rows, cols)), shape=(size, size))


class WaveBoxStepper:
    """Wave splitting/partitioned box scheme on cell midpoints.

    ``scheme='splitting'`` runs the deterministic box sub-step and then
    the exact noise map v <- v + g(u) dW; ``scheme='prk'`` carries the
    noise inside the stage equations and weights it with the one-stage
    noise tableau.
    """

    def __init__(self, system, domain, n_cells, dt, policy, scheme="splitting"):
        if not isinstance(system, WaveSystem):
            raise TypeError("WaveBoxStepper needs a wave system")
        if scheme not in ("splitting", "prk"):
            raise ValueError(f"unknown scheme {scheme!r}")
        if dt == 0:
            raise ValueError("dt must be nonzero")
        self.system = system
        self.scheme = scheme
        self.dt = float(dt)
        self.policy = policy
        x_left, x_right = domain
        self.n_cells = int(n_cells)
        self.dx = (x_right - x_left) / self.n_cells
        self.midcells = x_left + (np.arange(self.n_cells) + 0.5) * self.dx
        self._build_matrix()

    # unknown layout: x[0] = w_0; x[2i-1] = u_i, x[2i] = w_i (i = 1..I-1); x[2I-1] = w_I
    def _iu(self, i):
        return 2 * i - 1

    def _iw(self, i):
        if i == 0:
            return 0
        if i == self.n_cells:
            return 2 * self.n_cells - 1
        return 2 * i

    def _build_matrix(self):
        matrix = wave_box_matrix(self.n_cells, self.dx, self.dt)
        coo = matrix.tocoo()
        self.kl = self.ku = 2
        self.size = matrix.shape[0]
        ab = np.zeros((2 * self.kl + self.ku + 1, self.size))
        ab[self.kl + self.ku + coo.row - coo.col, coo.col] = coo.data
        self._lu, self._ipiv, info = lapack.dgbtrf(ab, self.kl, self.ku)
        _check_factor(info, "wave box")

    def _solve(self, rhs):
        x, info = lapack.dgbtrs(self._lu, self.kl, self.ku, rhs, self._ipiv)
        if info != 0:
            raise RuntimeError(f"banded solve failed (info={info})")
        return x

    def _edges_from_solution(self, x):
        n_cells = self.n_cells
        u_edge = np.zeros(n_cells + 1)
        u_edge[1:n_cells] = x[1:-1:2]
        w_edge = np.empty(n_cells + 1)
        w_edge[0] = x[0]
        w_edge[1:n_cells] = x[2:-1:2]
        w_edge[n_cells] = x[-1]
        return u_edge, w_edge

    def _solve_stage(self, u, v, dW_stage):
        """Iterate the lagged nonlinearity to the policy tolerance.

        Returns the interface arrays and converged midpoint stage U.
        dW_stage is the noise weighted into the stage equation (prk) or
        None (splitting).
        """
        f = self.system.f
        g = self.system.g
        pol = self.policy
        dt = self.dt
        base = u + 0.5 * dt * v
        stage_u = base.copy()
        rhs = np.zeros(self.size)
        residual = np.inf
        for _ in range(pol.max_iter):
            cell_rhs = base - (dt * dt / 4.0) * f(stage_u)
            if dW_stage is not None:
                cell_rhs = cell_rhs + (dt / 4.0) * dW_stage * g(stage_u)
            rhs[1::2] = cell_rhs
            x = self._solve(rhs)
            if not np.all(np.isfinite(x)):
                raise BlowUpError("non-finite state in box-scheme solve")
            u_edge, w_edge = self._edges_from_solution(x)
            new_stage = 0.5 * (u_edge[:-1] + u_edge[1:])
            new_rhs = base - (dt * dt / 4.0) * f(new_stage)
            if dW_stage is not None:
                new_rhs = new_rhs + (dt / 4.0) * dW_stage * g(new_stage)
            residual = float(np.abs(new_rhs - cell_rhs).max())
            stage_u = pol.damping * new_stage + (1.0 - pol.damping) * stage_u
            if residual <= pol.tol:
                return u_edge, w_edge, stage_u
        raise DivergenceError(residual, pol.max_iter)

    def step(self, state, dW):
        dW = np.asarray(dW, dtype=float)
        u, v = state["u"], state["v"]
        f, g, dt = self.system.f, self.system.g, self.dt
        if self.scheme == "splitting":
            u_edge, w_edge, stage_u = self._solve_stage(u, v, None)
            slope = np.diff(w_edge) / self.dx
            kick = slope - f(stage_u)
            u1 = 2.0 * stage_u - u
            v1 = v + dt * kick + g(u1) * dW
        else:
            u_edge, w_edge, stage_u = self._solve_stage(u, v, dW)
            slope = np.diff(w_edge) / self.dx
            u1 = 2.0 * stage_u - u
            v1 = v + dt * (slope - f(stage_u)) + dW * g(stage_u)
        # interface values of the step just taken, for inspection/cross-checks
        stage_v = v + 0.5 * dt * (slope - f(stage_u))
        if self.scheme == "prk":
            stage_v = stage_v + 0.5 * dW * g(stage_u)
        self.last_internals = {"u_edge": u_edge, "w_edge": w_edge,
                               "stage_u": stage_u, "stage_v": stage_v, "slope": slope}
        from . import GridState
        return GridState(self.system, state.grid, {"u": u1, "v": v1}, state.time + dt)

    def deterministic_kick(self, state):
        """(v_det_next - v)/dt of the noise-free sub-step from this state."""
        u, v = state["u"], state["v"]
        _, w_edge, stage_u = self._solve_stage(u, v, None)
        return np.diff(w_edge) / self.dx - self.system.f(stage_u)

    def energy(self, state, kick=None):
        """Discrete energy of the deterministic sub-flow.

        Evaluates dx * [ |v|^2/2 - (u - dt/2 v) . khat / 2 ] with khat
        the deterministic velocity kick; the gradient term is the
        scheme-consistent form of int w^2/2 + potential. For drift
        nonlinearities with quadratic antiderivative this quantity is a
        step invariant of the noise-free scheme.
        """
        u, v = state["u"], state["v"]
        if kick is None:
            kick = self.deterministic_kick(state)
        y_minus = u - 0.5 * self.dt * v
        return self.dx * (0.5 * float(v @ v) - 0.5 * float(y_minus @ kick))


class _SparseBoxStepper:
    """Shared machinery for the four-field box schemes (NLS, KdV).

    Unknowns are the interface values of the four components at the
    temporal stage level, with the Dirichlet-pinned components removed;
    subclasses provide the constant matrix and the lagged nonlinearity.
    """

    def __init__(self, system, domain, n_cells, dt, policy):
        if dt == 0:
            raise ValueError("dt must be nonzero")
        self.system = system
        self.dt = float(dt)
        self.policy = policy
        x_left, x_right = domain
        self.n_cells = int(n_cells)
        self.dx = (x_right - x_left) / self.n_cells
        self.midcells = x_left + (np.arange(self.n_cells) + 0.5) * self.dx
        matrix = self._build_matrix()
        self._lu = scipy.sparse.linalg.splu(matrix.tocsc())

    # index helpers for interleaved interface unknowns: two pinned
    # components (a, b) and two free ones (c, d) per interface node
    def _idx(self, which, j):
        # which in {a, b}: interior only (j = 1..I-1); {c, d}: all j = 0..I
        n_cells = self.n_cells
        if which in ("a", "b"):
            base = 4 * (j - 1) + 2
            return base + (0 if which == "a" else 1)
        base = 0 if j == 0 else (4 * (j - 1) + 4 if j < n_cells else 4 * n_cells - 2)
        # layout: [c0 d0 | a1 b1 c1 d1 | ... | a_{I-1} b_{I-1} c_{I-1} d_{I-1} | cI dI]
        return base + (0 if which == "c" else 1)

    def _avg(self, arr):
        return 0.5 * (arr[:-1] + arr[1:])

    def _expand(self, x):
        """Interface arrays (a, b, c, d) with pinned entries restored to zero."""
        n_cells = self.n_cells
        a = np.zeros(n_cells + 1)
        b = np.zeros(n_cells + 1)
        c = np.empty(n_cells + 1)
        d = np.empty(n_cells + 1)
        for j in range(n_cells + 1):
            if 0 < j < n_cells:
                a[j] = x[self._idx("a", j)]
                b[j] = x[self._idx("b", j)]
            c[j] = x[self._idx("c", j)]
            d[j] = x[self._idx("d", j)]
        return a, b, c, d

    def _iterate(self, rhs_fixed, lagged_rhs, initial_guess):
        pol = self.policy
        values = initial_guess
        residual = np.inf
        for _ in range(pol.max_iter):
            extra = lagged_rhs(values)
            x = self._lu.solve(rhs_fixed + extra)
            if not np.all(np.isfinite(x)):
                raise BlowUpError("non-finite state in box-scheme solve")
            values = self._stage_values(x)
            residual = float(np.abs(lagged_rhs(values) - extra).max())
            if residual <= pol.tol:
                return x, values
        raise DivergenceError(residual, pol.max_iter)


class NLSBoxStepper(_SparseBoxStepper):
    """Splitting box scheme for the Schroedinger system; marches (p, q) midcell values."""

    def __init__(self, system, domain, n_cells, dt, policy, scheme="splitting"):
        if not isinstance(system, NLSSystem):
            raise TypeError("NLSBoxStepper needs the nls system")
        if scheme != "splitting":
            raise ValueError("full-grid marching for nls exists only for the splitting scheme")
        super().__init__(system, domain, n_cells, dt, policy)

    # a=p, b=q (pinned), c=v, d=w
    def _build_matrix(self):
        n_cells, dx, dt = self.n_cells, self.dx, self.dt
        size = 4 * n_cells
        rows, cols, vals = [], [], []

        def add(r, c, v):
            rows.append(r)
            cols.append(c)
            vals.append(v)

        for i in range(n_cells):
            r = 4 * i
            for j, sign in ((i, -1.0), (i + 1, 1.0)):
                if 0 < j < n_cells:
                    add(r, self._idx("a", j), sign)        # chain-p
                    add(r + 1, self._idx("b", j), sign)    # chain-q
                    add(r + 2, self._idx("b", j), 0.5)     # temporal-Q: avg q
                    add(r + 3, self._idx("a", j), 0.5)     # temporal-P: avg p
                add(r, self._idx("c", j), -0.5 * dx)       # chain-p: -(dx/2) v
                add(r + 1, self._idx("d", j), -0.5 * dx)   # chain-q: -(dx/2) w
                add(r + 2, self._idx("c", j), -sign * dt / (2.0 * dx))   # -(dt/2) dv/dx
                add(r + 3, self._idx("d", j), sign * dt / (2.0 * dx))    # +(dt/2) dw/dx
        return scipy.sparse.csr_matrix((vals, (rows, cols)), shape=(size, size))

    def _stage_values(self, x):
        p_e, q_e, _, _ = self._expand(x)
        return np.stack([self._avg(p_e), self._avg(q_e)])

    def step(self, state, dW):
        dW = np.asarray(dW, dtype=float)
        p, q = state["p"], state["q"]
        dt = self.dt
        rhs_fixed = np.zeros(4 * self.n_cells)
        rhs_fixed[2::4] = q
        rhs_fixed[3::4] = p

        def lagged(stage):
            ps, qs = stage
            amp = ps * ps + qs * qs
            extra = np.zeros(4 * self.n_cells)
            extra[2::4] = 0.5 * dt * amp * ps
            extra[3::4] = -0.5 * dt * amp * qs
            return extra

        x, stage = self._iterate(rhs_fixed, lagged, np.stack([p, q]))
        p_bar = 2.0 * stage[0] - p
        q_bar = 2.0 * stage[1] - q
        q1 = q_bar - p_bar * dW
        p1 = p_bar + q1 * dW
        from . import GridState
        return GridState(self.system, state.grid, {"p": p1, "q": q1}, state.time + dt)


class KdVBoxStepper(_SparseBoxStepper):
    """Splitting box scheme for the KdV system; marches (u, rho) midcell values.

    Both u and rho are pinned to zero at the two ends (rho is the
    antiderivative potential; pinning it fixes its gauge).
    """

    def __init__(self, system, domain, n_cells, dt, policy, scheme="splitting"):
        if not isinstance(system, KdVSystem):
            raise TypeError("KdVBoxStepper needs the kdv system")
        if scheme != "splitting":
            raise ValueError("full-grid marching for kdv exists only for the splitting scheme")
        super().__init__(system, domain, n_cells, dt, policy)

    # a=u, b=rho (pinned), c=v, d=w
    def _build_matrix(self):
        n_cells, dx, dt = self.n_cells, self.dx, self.dt
        beta = self.system.beta
        size = 4 * n_cells
        rows, cols, vals = [], [], []

        def add(r, c, v):
            rows.append(r)
            cols.append(c)
            vals.append(v)

        for i in range(n_cells):
            r = 4 * i
            for j, sign in ((i, -1.0), (i + 1, 1.0)):
                if 0 < j < n_cells:
                    add(r, self._idx("a", j), sign)         # chain-u
                    add(r + 1, self._idx("b", j), sign)     # chain-rho
                    add(r + 1, self._idx("a", j), -0.5 * dx)  # -(dx/2) u in chain-rho
                    add(r + 2, self._idx("a", j), 0.5)      # temporal-U: avg u
                    add(r + 3, self._idx("b", j), 0.5)      # temporal-P: avg rho
                add(r, self._idx("d", j), -0.5 * dx)        # chain-u: -(dx/2) w
                add(r + 2, self._idx("c", j), sign * dt / dx)          # + dt dv/dx
                add(r + 3, self._idx("d", j), sign * beta * dt / dx)   # + beta dt dw/dx
                add(r + 3, self._idx("c", j), -0.5 * dt)    # - dt avg v
        return scipy.sparse.csr_matrix((vals, (rows, cols)), shape=(size, size))

    def _stage_values(self, x):
        u_e, _, _, _ = self._expand(x)
        return self._avg(u_e)[None, :]

    def step(self, state, dW):
        dW = np.asarray(dW, dtype=float)
        u, rho = state["u"], state["rho"]
        dt = self.dt
        rhs_fixed = np.zeros(4 * self.n_cells)
        rhs_fixed[2::4] = u
        rhs_fixed[3::4] = rho

        def lagged(stage):
            extra = np.zeros(4 * self.n_cells)
            extra[3::4] = -0.5 * dt * stage[0] ** 2
            return extra

        x, stage = self._iterate(rhs_fixed, lagged, u[None, :])
        _, rho_e, _, _ = self._expand(x)
        stage_rho = self._avg(rho_e)
        u_bar = 2.0 * stage[0] - u
        rho_bar = 2.0 * stage_rho - rho
        u1 = u_bar + 2.0 * self.system.lam * dW
        from . import GridState
        return GridState(self.system, state.grid, {"u": u1, "rho": rho_bar},
                         state.time + dt)


def make_box_stepper(system, grid, dx, dt, policy, scheme="splitting"):
    """Stepper for a state living on the midcells of a uniform grid."""
    grid = np.asarray(grid, dtype=float)
    n_cells = grid.size
    x_left = grid[0] - 0.5 * dx
    x_right = grid[-1] + 0.5 * dx
    domain = (x_left, x_right)
    if isinstance(system, WaveSystem):
        return WaveBoxStepper(system, domain, n_cells, dt, policy, scheme)
    if isinstance(system, NLSSystem):
        return NLSBoxStepper(system, domain, n_cells, dt, policy, scheme)
    if isinstance(system, KdVSystem):
        return KdVBoxStepper(system, domain, n_cells, dt, policy, scheme)
    raise TypeError(f"no box stepper for {system!r}")
