"""Collocation-midpoint stepping on the full node grid.

One step solves, for the stacked interior-node state Z (4 components x N
nodes, flattened component-major),

    M (Z1 - Z0) + dt K D Zbar = dt grad S1(Zbar) + dW * grad S2(Zbar),

with Zbar = (Z0 + Z1)/2 and D acting nodewise. The linear part (kron
products of M, K with the derivative operator plus the constant part of
the Hessian of S1 at zero) is factored once; the nonlinear remainder is
lagged. Components whose equation row is identically zero (the wave
placeholder) are carried unchanged.

Tangent propagation solves the exact linearization about the converged
midpoint, with the analytic Hessians in place of the gradients, so
propagated tangent pairs satisfy the discrete variational equation to
solver precision.
"""

import numpy as np
import scipy.optimize
import scipy.sparse
import scipy.sparse.linalg

from ..errors import BlowUpError, DivergenceError


def _block_diag_hessian(H):
    """Sparse (4N x 4N) block-diagonal matrix from per-node (N,4,4) blocks."""
    n = H.shape[0]
    node = np.arange(n)
    rows = np.repeat(np.arange(4), 4)[None, :] * n + node[:, None]
    cols = np.tile(np.arange(4), 4)[None, :] * n + node[:, None]
    return scipy.sparse.csr_matrix(
        (H.reshape(n, 16).ravel(), (rows.ravel(), cols.ravel())), shape=(4 * n, 4 * n))


class LRBFMidpointStepper:
    def __init__(self, system, D, dt, policy):
        self.system = system
        self.D = D
        self.dt = float(dt)
        self.policy = policy
        if self.dt == 0:
            raise ValueError("dt must be nonzero")
        n = D.n
        self.n = n
        eye = scipy.sparse.identity(n, format="csr")
        m_big = scipy.sparse.kron(system.M, eye, format="csr")
        k_big = scipy.sparse.kron(system.K, D.matrix, format="csr")
        a1_big = scipy.sparse.kron(system.linear_part(), eye, format="csr")
        half = 0.5 * self.dt
        lhs = (m_big + half * k_big - half * a1_big).tolil()
        rhs = (m_big - half * k_big + half * a1_big).tolil()
        # rows with no equation at all (wave placeholder p): carry the value over
        row_weight = np.abs(lhs).sum(axis=1).A1 + np.abs(rhs).sum(axis=1).A1
        self.carried_rows = np.flatnonzero(row_weight == 0)
        for r in self.carried_rows:
            lhs[r, r] = 1.0
            rhs[r, r] = 1.0
        self.lhs = lhs.tocsr()
        self.rhs = rhs.tocsr()
        self.lu = scipy.sparse.linalg.splu(self.lhs.tocsc())
        self.a1 = system.linear_part()

    # -- state packing ------------------------------------------------

    def pack(self, state):
        return state.stack(self.system.component_names).ravel()

    def unpack(self, flat, time):
        from . import GridState
        z = flat.reshape(4, self.n)
        comps = {name: z[c].copy() for c, name in enumerate(self.system.component_names)}
        return GridState(self.system, self.D.nodes, comps, time)

    # -- residual of the full coupled system (increment form) ----------

    def _nonlinear_rhs(self, zbar, dW):
        n1 = self.system.grad_S1(zbar) - self.a1 @ zbar
        s2 = self.system.grad_S2(zbar)
        return self.dt * n1 + dW[None, :] * s2

    def residual(self, z0, z1, dW):
        zbar = 0.5 * (z0 + z1).reshape(4, self.n)
        extra = self._nonlinear_rhs(zbar, dW).ravel()
        f = self.lhs @ z1 - self.rhs @ z0 - extra
        f[self.carried_rows] = 0.0
        return float(np.abs(f).max())

    # -- stepping ------------------------------------------------------

    def step(self, state, dW):
        dW = np.asarray(dW, dtype=float)
        if dW.shape != (self.n,):
            raise ValueError(f"noise increment must have shape ({self.n},)")
        z0 = self.pack(state)
        rhs_const = self.rhs @ z0
        if self.policy.method == "newton-krylov":
            z1 = self._solve_newton_krylov(z0, rhs_const, dW)
        else:
            z1 = self._solve_fixed_point(z0, rhs_const, dW)
        return self.unpack(z1, state.time + self.dt)

    def _assemble_rhs(self, z0, z1, rhs_const, dW):
        zbar = 0.5 * (z0 + z1).reshape(4, self.n)
        rhs = rhs_const + self._nonlinear_rhs(zbar, dW).ravel()
        rhs[self.carried_rows] = z0[self.carried_rows]
        return rhs

    def _solve_fixed_point(self, z0, rhs_const, dW):
        pol = self.policy
        z1 = z0.copy()
        residual = np.inf
        for _ in range(pol.max_iter):
            candidate = self.lu.solve(self._assemble_rhs(z0, z1, rhs_const, dW))
            if not np.all(np.isfinite(candidate)):
                raise BlowUpError("non-finite state during collocation-midpoint solve")
            z1 = pol.damping * candidate + (1.0 - pol.damping) * z1
            rhs = self._assemble_rhs(z0, z1, rhs_const, dW)
            residual = float(np.abs(self.lhs @ z1 - rhs).max())
            if residual <= pol.tol:
                return z1
        raise DivergenceError(residual, pol.max_iter)

    def _solve_newton_krylov(self, z0, rhs_const, dW):
        pol = self.policy

        def func(z1):
            return self.lhs @ z1 - self._assemble_rhs(z0, z1, rhs_const, dW)

        precond = scipy.sparse.linalg.LinearOperator(
            self.lhs.shape, matvec=self.lu.solve)
        try:
            z1 = scipy.optimize.newton_krylov(
                func, z0.copy(), f_tol=pol.tol, maxiter=pol.max_iter,
                inner_M=precond)
        except scipy.optimize.NoConvergence as exc:
            z1 = np.asarray(exc.args[0])
            raise DivergenceError(float(np.abs(func(z1)).max()), pol.max_iter)
        if not np.all(np.isfinite(z1)):
            raise BlowUpError("non-finite state during collocation-midpoint solve")
        return z1

    # -- tangent propagation --------------------------------------------

    def step_with_tangents(self, state, tangents, dW):
        """Advance the state and the linearized states alongside it.

        ``tangents`` is a sequence of component dicts shaped like the
        state. Returns (new_state, new_tangents).
        """
        dW = np.asarray(dW, dtype=float)
        z0 = self.pack(state)
        new_state = self.step(state, dW)
        z1 = self.pack(new_state)
        zbar = 0.5 * (z0 + z1).reshape(4, self.n)
        h1 = self.system.hess_S1(zbar)
        h2 = self.system.hess_S2(zbar)
        blocks = self.dt * h1 + dW[:, None, None] * h2
        bhat = _block_diag_hessian(blocks)
        eye = scipy.sparse.identity(self.n, format="csr")
        m_big = scipy.sparse.kron(self.system.M, eye, format="csr")
        k_big = scipy.sparse.kron(self.system.K, self.D.matrix, format="csr")
        half = 0.5 * self.dt
        lhs = (m_big + half * k_big - 0.5 * bhat).tolil()
        rhs = (m_big - half * k_big + 0.5 * bhat).tolil()
        row_weight = np.abs(lhs).sum(axis=1).A1 + np.abs(rhs).sum(axis=1).A1
        carried = np.flatnonzero(row_weight == 0)
        for r in carried:
            lhs[r, r] = 1.0
            rhs[r, r] = 1.0
        lu = scipy.sparse.linalg.splu(lhs.tocsr().tocsc())
        names = self.system.component_names
        out = []
        for tan in tangents:
            flat = np.stack([tan[n] for n in names]).ravel()
            adv = lu.solve(rhs.tocsr() @ flat)
            z = adv.reshape(4, self.n)
            out.append({name: z[c].copy() for c, name in enumerate(names)})
        return new_state, out


class ExplicitEulerWaveStepper:
    """Forward-Euler-in-time control scheme with the same spatial operator.

    Not structure preserving; exists so conservation checks have a
    negative control with an exact tangent map.
    """

    def __init__(self, system, D, dt, policy=None):
        self.system = system
        self.D = D
        self.dt = float(dt)
        self.n = D.n

    def step(self, state, dW):
        f, g = self.system.f, self.system.g
        u, p, v, w = (state["u"], state["p"], state["v"], state["w"])
        dt = self.dt
        u1 = u + dt * v
        v1 = v + dt * (self.D.apply(w) - f(u)) + g(u) * dW
        w1 = self.D.apply(u1)
        from . import GridState
        return GridState(self.system, state.grid,
                         {"u": u1, "p": p.copy(), "v": v1, "w": w1},
                         state.time + dt)

    def step_with_tangents(self, state, tangents, dW):
        f, g = self.system.f, self.system.g
        u = state["u"]
        dt = self.dt
        new_state = self.step(state, dW)
        out = []
        for tan in tangents:
            du, dp, dv, dw = tan["u"], tan["p"], tan["v"], tan["w"]
            du1 = du + dt * dv
            dv1 = dv + dt * (self.D.apply(dw) - f.df(u) * du) + g.df(u) * du * dW
            dw1 = self.D.apply(du1)
            out.append({"u": du1, "p": dp.copy(), "v": dv1, "w": dw1})
        return new_state, out
