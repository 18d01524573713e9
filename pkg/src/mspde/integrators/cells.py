"""Single space-time cell solvers at generic stage counts.

A cell takes left-edge values (at the r temporal stage levels), bottom-edge
values (at the s spatial stage positions) and the noise increments at the
spatial stages, and solves the coupled stage equations of the splitting or
partitioned scheme, returning stage arrays plus the right/top edge values.
These exist for conservation-law verification, so alongside the nonlinear
solve each cell exposes its exact linearization: given tangent edge data,
``tangent`` returns tangent stages and edges satisfying the linearized cell
equations to solver precision.

Stage arrays are (s, r): first index = spatial stage, second = temporal
stage. The temporal stage sums follow the written convention
sum_n a~[n, m] X[i, n], i.e. the temporal coefficient matrices enter
transposed relative to the spatial ones.
"""

import numpy as np

from ..errors import BlowUpError, DivergenceError
from ..systems import KdVSystem, NLSSystem, WaveSystem


class CellSolution:
    """Solved stage values plus in/out edge data of one cell."""

    def __init__(self, scheme, system, tableaux, stages, edges_in, edges_out, dx, dt, dW):
        self.scheme = scheme
        self.system = system
        self.tableaux = tableaux
        self.stages = stages
        self.edges_in = edges_in
        self.edges_out = edges_out
        self.dx = dx
        self.dt = dt
        self.dW = dW


class _CellProblem:
    """Newton solve of the stacked stage equations with analytic Jacobian."""

    block_names = ()

    def __init__(self, system, tableaux, edges, dx, dt, dW, policy):
        self.system = system
        self.tableaux = tableaux
        self.edges = edges
        self.dx = float(dx)
        self.dt = float(dt)
        self.dW = np.asarray(dW, dtype=float)
        self.policy = policy
        self.s = self._spatial_stages()
        self.r = self._temporal_stages()
        if self.dW.shape != (self.s,):
            raise ValueError(f"noise increments must have shape ({self.s},)")
        for name, vec, length in self._edge_spec():
            if np.shape(vec) != (length,):
                raise ValueError(f"edge {name!r} must have shape ({length},)")

    # helpers ---------------------------------------------------------

    def _kron_spatial(self, A):
        return np.kron(A, np.eye(self.r))

    def _kron_temporal(self, B):
        return np.kron(np.eye(self.s), B.T)

    def _row_noise(self):
        return np.repeat(self.dW, self.r)

    def pack(self, blocks):
        return np.concatenate([blocks[name].ravel() for name in self.block_names])

    def unpack(self, flat):
        sr = self.s * self.r
        return {name: flat[k * sr:(k + 1) * sr].reshape(self.s, self.r)
                for k, name in enumerate(self.block_names)}

    def solve(self):
        pol = self.policy
        x = self.pack(self.initial_guess())
        residual = np.inf
        for _ in range(pol.max_iter):
            blocks = self.unpack(x)
            f = self.pack(self.residual(blocks))
            residual = float(np.abs(f).max())
            if residual <= pol.tol:
                stages = {k: v.copy() for k, v in blocks.items()}
                return CellSolution(self.scheme_name, self.system, self.tableaux,
                                    stages, dict(self.edges), self.outputs(blocks),
                                    self.dx, self.dt, self.dW)
            step = np.linalg.solve(self.jacobian(blocks), f)
            if not np.all(np.isfinite(step)):
                raise BlowUpError("non-finite Newton step in cell solve")
            x = x - pol.damping * step
        raise DivergenceError(residual, pol.max_iter)

    def tangent(self, solution, edge_tangents):
        """Tangent stages and edges for given tangent edge data."""
        blocks = solution.stages
        rhs = self.pack(self.edge_tangent_rhs(edge_tangents))
        xi = np.linalg.solve(self.jacobian(blocks), rhs)
        tan_blocks = self.unpack(xi)
        return tan_blocks, self.output_tangents(blocks, tan_blocks, edge_tangents)


# ---------------------------------------------------------------------------
# wave


class WaveSplittingCell(_CellProblem):
    """Deterministic stage system of the split wave scheme plus the noise map."""

    scheme_name = "splitting"
    block_names = ("U", "V", "W", "G")

    def _spatial_stages(self):
        return self.tableaux["spatial"].s

    def _temporal_stages(self):
        return self.tableaux["temporal"].s

    def _edge_spec(self):
        return [("u0m", self.edges["u0m"], self.r), ("w0m", self.edges["w0m"], self.r),
                ("ui0", self.edges["ui0"], self.s), ("vi0", self.edges["vi0"], self.s)]

    def initial_guess(self):
        e = self.edges
        ones_r = np.ones(self.r)
        return {"U": np.outer(e["ui0"], ones_r), "V": np.outer(e["vi0"], ones_r),
                "W": np.tile(e["w0m"], (self.s, 1)), "G": np.zeros((self.s, self.r))}

    def residual(self, blocks):
        e, f = self.edges, self.system.f
        A, At = self.tableaux["spatial"].A, self.tableaux["temporal"].A
        U, V, W, G = blocks["U"], blocks["V"], blocks["W"], blocks["G"]
        return {
            "U": U - e["u0m"][None, :] - self.dx * A @ W,
            "V": W - e["w0m"][None, :] - self.dx * A @ G,
            "W": U - e["ui0"][:, None] - self.dt * V @ At,
            "G": V - e["vi0"][:, None] - self.dt * (G - f(U)) @ At,
        }

    def jacobian(self, blocks):
        s, r = self.s, self.r
        sr = s * r
        eye = np.eye(sr)
        zero = np.zeros((sr, sr))
        A = self._kron_spatial(self.tableaux["spatial"].A)
        At = self._kron_temporal(self.tableaux["temporal"].A)
        fp = np.diag(self.system.f.df(blocks["U"]).ravel())
        return np.block([
            [eye, zero, -self.dx * A, zero],
            [zero, zero, eye, -self.dx * A],
            [eye, -self.dt * At, zero, zero],
            [self.dt * At @ fp, eye, zero, -self.dt * At],
        ])

    def edge_tangent_rhs(self, et):
        s, r = self.s, self.r
        return {
            "U": np.tile(et["u0m"], (s, 1)),
            "V": np.tile(et["w0m"], (s, 1)),
            "W": np.repeat(et["ui0"], r).reshape(s, r),
            "G": np.repeat(et["vi0"], r).reshape(s, r),
        }

    def outputs(self, blocks):
        e = self.edges
        f, g = self.system.f, self.system.g
        b = self.tableaux["spatial"].b
        bt = self.tableaux["temporal"].b
        U, V, W, G = blocks["U"], blocks["V"], blocks["W"], blocks["G"]
        ubar1 = e["ui0"] + self.dt * (V @ bt)
        vbar1 = e["vi0"] + self.dt * ((G - f(U)) @ bt)
        return {
            "u1m": e["u0m"] + self.dx * (b @ W),
            "w1m": e["w0m"] + self.dx * (b @ G),
            "ui1": ubar1,
            "vi1": vbar1 + g(ubar1) * self.dW,
        }

    def output_tangents(self, blocks, tb, et):
        e = self.edges
        f, g = self.system.f, self.system.g
        b = self.tableaux["spatial"].b
        bt = self.tableaux["temporal"].b
        U = blocks["U"]
        ubar1 = e["ui0"] + self.dt * (blocks["V"] @ bt)
        d_ubar1 = et["ui0"] + self.dt * (tb["V"] @ bt)
        d_vbar1 = et["vi0"] + self.dt * ((tb["G"] - f.df(U) * tb["U"]) @ bt)
        return {
            "u1m": et["u0m"] + self.dx * (b @ tb["W"]),
            "w1m": et["w0m"] + self.dx * (b @ tb["G"]),
            "ui1": d_ubar1,
            "vi1": d_vbar1 + g.df(ubar1) * d_ubar1 * self.dW,
        }


class WavePRKCell(_CellProblem):
    """Stage system of the partitioned wave scheme (noise inside the stages)."""

    scheme_name = "prk"
    block_names = ("U", "V", "W", "G")

    def _spatial_stages(self):
        return self.tableaux["spatial-1"].s

    def _temporal_stages(self):
        return self.tableaux["temporal-1"].s

    def _edge_spec(self):
        return [("u0m", self.edges["u0m"], self.r), ("w0m", self.edges["w0m"], self.r),
                ("ui0", self.edges["ui0"], self.s), ("vi0", self.edges["vi0"], self.s)]

    def initial_guess(self):
        e = self.edges
        ones_r = np.ones(self.r)
        return {"U": np.outer(e["ui0"], ones_r), "V": np.outer(e["vi0"], ones_r),
                "W": np.tile(e["w0m"], (self.s, 1)), "G": np.zeros((self.s, self.r))}

    def residual(self, blocks):
        e, f, g = self.edges, self.system.f, self.system.g
        At1, At2 = self.tableaux["temporal-1"].A, self.tableaux["temporal-2"].A
        Abar = self.tableaux["temporal-noise"].A
        A1, A2 = self.tableaux["spatial-1"].A, self.tableaux["spatial-2"].A
        U, V, W, G = blocks["U"], blocks["V"], blocks["W"], blocks["G"]
        return {
            "U": U - e["ui0"][:, None] - self.dt * V @ At1,
            "V": (V - e["vi0"][:, None] - self.dt * (G - f(U)) @ At2
                  - self.dW[:, None] * (g(U) @ Abar)),
            "W": U - e["u0m"][None, :] - self.dx * A1 @ W,
            "G": W - e["w0m"][None, :] - self.dx * A2 @ G,
        }

    def jacobian(self, blocks):
        sr = self.s * self.r
        eye = np.eye(sr)
        zero = np.zeros((sr, sr))
        At1 = self._kron_temporal(self.tableaux["temporal-1"].A)
        At2 = self._kron_temporal(self.tableaux["temporal-2"].A)
        Abar = self._kron_temporal(self.tableaux["temporal-noise"].A)
        A1 = self._kron_spatial(self.tableaux["spatial-1"].A)
        A2 = self._kron_spatial(self.tableaux["spatial-2"].A)
        U = blocks["U"]
        fp = np.diag(self.system.f.df(U).ravel())
        gp = np.diag(self.system.g.df(U).ravel())
        noise_rows = np.diag(self._row_noise())
        dV_dU = self.dt * At2 @ fp - noise_rows @ Abar @ gp
        return np.block([
            [eye, -self.dt * At1, zero, zero],
            [dV_dU, eye, zero, -self.dt * At2],
            [eye, zero, -self.dx * A1, zero],
            [zero, zero, eye, -self.dx * A2],
        ])

    def edge_tangent_rhs(self, et):
        s, r = self.s, self.r
        return {
            "U": np.repeat(et["ui0"], r).reshape(s, r),
            "V": np.repeat(et["vi0"], r).reshape(s, r),
            "W": np.tile(et["u0m"], (s, 1)),
            "G": np.tile(et["w0m"], (s, 1)),
        }

    def outputs(self, blocks):
        e, f, g = self.edges, self.system.f, self.system.g
        bt1, bt2 = self.tableaux["temporal-1"].b, self.tableaux["temporal-2"].b
        bbar = self.tableaux["temporal-noise"].b
        b1, b2 = self.tableaux["spatial-1"].b, self.tableaux["spatial-2"].b
        U, V, W, G = blocks["U"], blocks["V"], blocks["W"], blocks["G"]
        return {
            "ui1": e["ui0"] + self.dt * (V @ bt1),
            "vi1": (e["vi0"] + self.dt * ((G - f(U)) @ bt2) + self.dW * (g(U) @ bbar)),
            "u1m": e["u0m"] + self.dx * (b1 @ W),
            "w1m": e["w0m"] + self.dx * (b2 @ G),
        }

    def output_tangents(self, blocks, tb, et):
        f, g = self.system.f, self.system.g
        bt1, bt2 = self.tableaux["temporal-1"].b, self.tableaux["temporal-2"].b
        bbar = self.tableaux["temporal-noise"].b
        b1, b2 = self.tableaux["spatial-1"].b, self.tableaux["spatial-2"].b
        U = blocks["U"]
        return {
            "ui1": et["ui0"] + self.dt * (tb["V"] @ bt1),
            "vi1": (et["vi0"] + self.dt * ((tb["G"] - f.df(U) * tb["U"]) @ bt2)
                    + self.dW * ((g.df(U) * tb["U"]) @ bbar)),
            "u1m": et["u0m"] + self.dx * (b1 @ tb["W"]),
            "w1m": et["w0m"] + self.dx * (b2 @ tb["G"]),
        }


# ---------------------------------------------------------------------------
# nls


def _cubic(P, Q):
    amp = P * P + Q * Q
    return amp * P, amp * Q


class NLSSplittingCell(_CellProblem):
    scheme_name = "splitting"
    block_names = ("P", "Q", "V", "W", "GV", "GW")

    def _spatial_stages(self):
        return self.tableaux["spatial"].s

    def _temporal_stages(self):
        return self.tableaux["temporal"].s

    def _edge_spec(self):
        r, s = self.r, self.s
        e = self.edges
        return [("p0m", e["p0m"], r), ("q0m", e["q0m"], r), ("v0m", e["v0m"], r),
                ("w0m", e["w0m"], r), ("pi0", e["pi0"], s), ("qi0", e["qi0"], s)]

    def initial_guess(self):
        e = self.edges
        ones_r = np.ones(self.r)
        zeros = np.zeros((self.s, self.r))
        return {"P": np.outer(e["pi0"], ones_r), "Q": np.outer(e["qi0"], ones_r),
                "V": np.tile(e["v0m"], (self.s, 1)), "W": np.tile(e["w0m"], (self.s, 1)),
                "GV": zeros.copy(), "GW": zeros.copy()}

    def residual(self, blocks):
        e = self.edges
        A, At = self.tableaux["spatial"].A, self.tableaux["temporal"].A
        P, Q, V, W = blocks["P"], blocks["Q"], blocks["V"], blocks["W"]
        GV, GW = blocks["GV"], blocks["GW"]
        cubP, cubQ = _cubic(P, Q)
        return {
            "P": P - e["p0m"][None, :] - self.dx * A @ V,
            "Q": Q - e["q0m"][None, :] - self.dx * A @ W,
            "V": W - e["w0m"][None, :] - self.dx * A @ GW,
            "W": V - e["v0m"][None, :] - self.dx * A @ GV,
            "GV": Q - e["qi0"][:, None] - self.dt * (GV + cubP) @ At,
            "GW": P - e["pi0"][:, None] + self.dt * (GW + cubQ) @ At,
        }

    def jacobian(self, blocks):
        sr = self.s * self.r
        eye = np.eye(sr)
        zero = np.zeros((sr, sr))
        A = self._kron_spatial(self.tableaux["spatial"].A)
        At = self._kron_temporal(self.tableaux["temporal"].A)
        P, Q = blocks["P"], blocks["Q"]
        dPP = np.diag((3.0 * P * P + Q * Q).ravel())
        dPQ = np.diag((2.0 * P * Q).ravel())
        dQQ = np.diag((P * P + 3.0 * Q * Q).ravel())
        # block column order: P Q V W GV GW
        return np.block([
            [eye, zero, -self.dx * A, zero, zero, zero],
            [zero, eye, zero, -self.dx * A, zero, zero],
            [zero, zero, zero, eye, zero, -self.dx * A],
            [zero, zero, eye, zero, -self.dx * A, zero],
            [-self.dt * At @ dPP, eye - self.dt * At @ dPQ, zero, zero, -self.dt * At, zero],
            [eye + self.dt * At @ dPQ, self.dt * At @ dQQ, zero, zero, zero, self.dt * At],
        ])

    def edge_tangent_rhs(self, et):
        s, r = self.s, self.r
        return {
            "P": np.tile(et["p0m"], (s, 1)),
            "Q": np.tile(et["q0m"], (s, 1)),
            "V": np.tile(et["w0m"], (s, 1)),
            "W": np.tile(et["v0m"], (s, 1)),
            "GV": np.repeat(et["qi0"], r).reshape(s, r),
            "GW": np.repeat(et["pi0"], r).reshape(s, r),
        }

    def outputs(self, blocks):
        e = self.edges
        b = self.tableaux["spatial"].b
        bt = self.tableaux["temporal"].b
        P, Q, V, W = blocks["P"], blocks["Q"], blocks["V"], blocks["W"]
        GV, GW = blocks["GV"], blocks["GW"]
        cubP, cubQ = _cubic(P, Q)
        qbar1 = e["qi0"] + self.dt * ((GV + cubP) @ bt)
        pbar1 = e["pi0"] - self.dt * ((GW + cubQ) @ bt)
        qi1 = qbar1 - pbar1 * self.dW
        pi1 = pbar1 + qi1 * self.dW
        return {
            "p1m": e["p0m"] + self.dx * (b @ V),
            "q1m": e["q0m"] + self.dx * (b @ W),
            "v1m": e["v0m"] + self.dx * (b @ GV),
            "w1m": e["w0m"] + self.dx * (b @ GW),
            "qi1": qi1,
            "pi1": pi1,
        }

    def output_tangents(self, blocks, tb, et):
        b = self.tableaux["spatial"].b
        bt = self.tableaux["temporal"].b
        P, Q = blocks["P"], blocks["Q"]
        d_cubP = (3.0 * P * P + Q * Q) * tb["P"] + 2.0 * P * Q * tb["Q"]
        d_cubQ = 2.0 * P * Q * tb["P"] + (P * P + 3.0 * Q * Q) * tb["Q"]
        d_qbar1 = et["qi0"] + self.dt * ((tb["GV"] + d_cubP) @ bt)
        d_pbar1 = et["pi0"] - self.dt * ((tb["GW"] + d_cubQ) @ bt)
        d_qi1 = d_qbar1 - d_pbar1 * self.dW
        d_pi1 = d_pbar1 + d_qi1 * self.dW
        return {
            "p1m": et["p0m"] + self.dx * (b @ tb["V"]),
            "q1m": et["q0m"] + self.dx * (b @ tb["W"]),
            "v1m": et["v0m"] + self.dx * (b @ tb["GV"]),
            "w1m": et["w0m"] + self.dx * (b @ tb["GW"]),
            "qi1": d_qi1,
            "pi1": d_pi1,
        }


class NLSPRKCell(_CellProblem):
    scheme_name = "prk"
    block_names = ("P", "Q", "V", "W", "GV", "GW")

    def _spatial_stages(self):
        return self.tableaux["spatial-1"].s

    def _temporal_stages(self):
        return self.tableaux["temporal-1"].s

    def _edge_spec(self):
        r, s = self.r, self.s
        e = self.edges
        return [("p0m", e["p0m"], r), ("q0m", e["q0m"], r), ("v0m", e["v0m"], r),
                ("w0m", e["w0m"], r), ("pi0", e["pi0"], s), ("qi0", e["qi0"], s)]

    def initial_guess(self):
        e = self.edges
        ones_r = np.ones(self.r)
        zeros = np.zeros((self.s, self.r))
        return {"P": np.outer(e["pi0"], ones_r), "Q": np.outer(e["qi0"], ones_r),
                "V": np.tile(e["v0m"], (self.s, 1)), "W": np.tile(e["w0m"], (self.s, 1)),
                "GV": zeros.copy(), "GW": zeros.copy()}

    def residual(self, blocks):
        e = self.edges
        At1, At2 = self.tableaux["temporal-1"].A, self.tableaux["temporal-2"].A
        Ab1, Ab2 = self.tableaux["temporal-noise-1"].A, self.tableaux["temporal-noise-2"].A
        A1, A2 = self.tableaux["spatial-1"].A, self.tableaux["spatial-2"].A
        A3, A4 = self.tableaux["spatial-3"].A, self.tableaux["spatial-4"].A
        P, Q, V, W = blocks["P"], blocks["Q"], blocks["V"], blocks["W"]
        GV, GW = blocks["GV"], blocks["GW"]
        cubP, cubQ = _cubic(P, Q)
        return {
            "P": (Q - e["qi0"][:, None] - self.dt * (GV + cubP) @ At1
                  + self.dW[:, None] * (P @ Ab1)),
            "Q": (P - e["pi0"][:, None] + self.dt * (GW + cubQ) @ At2
                  - self.dW[:, None] * (Q @ Ab2)),
            "V": V - e["v0m"][None, :] - self.dx * A1 @ GV,
            "W": W - e["w0m"][None, :] - self.dx * A2 @ GW,
            "GV": P - e["p0m"][None, :] - self.dx * A3 @ V,
            "GW": Q - e["q0m"][None, :] - self.dx * A4 @ W,
        }

    def jacobian(self, blocks):
        sr = self.s * self.r
        eye = np.eye(sr)
        zero = np.zeros((sr, sr))
        At1 = self._kron_temporal(self.tableaux["temporal-1"].A)
        At2 = self._kron_temporal(self.tableaux["temporal-2"].A)
        Ab1 = self._kron_temporal(self.tableaux["temporal-noise-1"].A)
        Ab2 = self._kron_temporal(self.tableaux["temporal-noise-2"].A)
        A1 = self._kron_spatial(self.tableaux["spatial-1"].A)
        A2 = self._kron_spatial(self.tableaux["spatial-2"].A)
        A3 = self._kron_spatial(self.tableaux["spatial-3"].A)
        A4 = self._kron_spatial(self.tableaux["spatial-4"].A)
        P, Q = blocks["P"], blocks["Q"]
        dPP = np.diag((3.0 * P * P + Q * Q).ravel())
        dPQ = np.diag((2.0 * P * Q).ravel())
        dQQ = np.diag((P * P + 3.0 * Q * Q).ravel())
        noise = np.diag(self._row_noise())
        # block column order: P Q V W GV GW
        return np.block([
            [-self.dt * At1 @ dPP + noise @ Ab1, eye - self.dt * At1 @ dPQ,
             zero, zero, -self.dt * At1, zero],
            [eye + self.dt * At2 @ dPQ, self.dt * At2 @ dQQ - noise @ Ab2,
             zero, zero, zero, self.dt * At2],
            [zero, zero, eye, zero, -self.dx * A1, zero],
            [zero, zero, zero, eye, zero, -self.dx * A2],
            [eye, zero, -self.dx * A3, zero, zero, zero],
            [zero, eye, zero, -self.dx * A4, zero, zero],
        ])

    def edge_tangent_rhs(self, et):
        s, r = self.s, self.r
        return {
            "P": np.repeat(et["qi0"], r).reshape(s, r),
            "Q": np.repeat(et["pi0"], r).reshape(s, r),
            "V": np.tile(et["v0m"], (s, 1)),
            "W": np.tile(et["w0m"], (s, 1)),
            "GV": np.tile(et["p0m"], (s, 1)),
            "GW": np.tile(et["q0m"], (s, 1)),
        }

    def outputs(self, blocks):
        e = self.edges
        bt1, bt2 = self.tableaux["temporal-1"].b, self.tableaux["temporal-2"].b
        bb1, bb2 = self.tableaux["temporal-noise-1"].b, self.tableaux["temporal-noise-2"].b
        b1, b2 = self.tableaux["spatial-1"].b, self.tableaux["spatial-2"].b
        b3, b4 = self.tableaux["spatial-3"].b, self.tableaux["spatial-4"].b
        P, Q, V, W = blocks["P"], blocks["Q"], blocks["V"], blocks["W"]
        GV, GW = blocks["GV"], blocks["GW"]
        cubP, cubQ = _cubic(P, Q)
        return {
            "qi1": e["qi0"] + self.dt * ((GV + cubP) @ bt1) - self.dW * (P @ bb1),
            "pi1": e["pi0"] - self.dt * ((GW + cubQ) @ bt2) + self.dW * (Q @ bb2),
            "v1m": e["v0m"] + self.dx * (b1 @ GV),
            "w1m": e["w0m"] + self.dx * (b2 @ GW),
            "p1m": e["p0m"] + self.dx * (b3 @ V),
            "q1m": e["q0m"] + self.dx * (b4 @ W),
        }

    def output_tangents(self, blocks, tb, et):
        bt1, bt2 = self.tableaux["temporal-1"].b, self.tableaux["temporal-2"].b
        bb1, bb2 = self.tableaux["temporal-noise-1"].b, self.tableaux["temporal-noise-2"].b
        b1, b2 = self.tableaux["spatial-1"].b, self.tableaux["spatial-2"].b
        b3, b4 = self.tableaux["spatial-3"].b, self.tableaux["spatial-4"].b
        P, Q = blocks["P"], blocks["Q"]
        d_cubP = (3.0 * P * P + Q * Q) * tb["P"] + 2.0 * P * Q * tb["Q"]
        d_cubQ = 2.0 * P * Q * tb["P"] + (P * P + 3.0 * Q * Q) * tb["Q"]
        return {
            "qi1": (et["qi0"] + self.dt * ((tb["GV"] + d_cubP) @ bt1)
                    - self.dW * (tb["P"] @ bb1)),
            "pi1": (et["pi0"] - self.dt * ((tb["GW"] + d_cubQ) @ bt2)
                    + self.dW * (tb["Q"] @ bb2)),
            "v1m": et["v0m"] + self.dx * (b1 @ tb["GV"]),
            "w1m": et["w0m"] + self.dx * (b2 @ tb["GW"]),
            "p1m": et["p0m"] + self.dx * (b3 @ tb["V"]),
            "q1m": et["q0m"] + self.dx * (b4 @ tb["W"]),
        }


# ---------------------------------------------------------------------------
# kdv


class KdVSplittingCell(_CellProblem):
    scheme_name = "splitting"
    block_names = ("U", "PP", "V", "W", "GV", "GW")

    def _spatial_stages(self):
        return self.tableaux["spatial"].s

    def _temporal_stages(self):
        return self.tableaux["temporal"].s

    def _edge_spec(self):
        r, s = self.r, self.s
        e = self.edges
        return [("u0m", e["u0m"], r), ("rho0m", e["rho0m"], r), ("v0m", e["v0m"], r),
                ("w0m", e["w0m"], r), ("ui0", e["ui0"], s), ("rhoi0", e["rhoi0"], s)]

    def initial_guess(self):
        e = self.edges
        ones_r = np.ones(self.r)
        zeros = np.zeros((self.s, self.r))
        return {"U": np.outer(e["ui0"], ones_r), "PP": np.outer(e["rhoi0"], ones_r),
                "V": np.tile(e["v0m"], (self.s, 1)), "W": np.tile(e["w0m"], (self.s, 1)),
                "GV": zeros.copy(), "GW": zeros.copy()}

    def residual(self, blocks):
        e = self.edges
        A, At = self.tableaux["spatial"].A, self.tableaux["temporal"].A
        beta = self.system.beta
        U, PP, V, W = blocks["U"], blocks["PP"], blocks["V"], blocks["W"]
        GV, GW = blocks["GV"], blocks["GW"]
        return {
            "U": V - e["v0m"][None, :] - self.dx * A @ GV,
            "PP": W - e["w0m"][None, :] - self.dx * A @ GW,
            "V": U - e["u0m"][None, :] - self.dx * A @ W,
            "W": PP - e["rho0m"][None, :] - self.dx * A @ U,
            "GV": U - e["ui0"][:, None] + 2.0 * self.dt * GV @ At,
            "GW": (PP - e["rhoi0"][:, None]
                   + self.dt * (2.0 * beta * GW - 2.0 * V + U * U) @ At),
        }

    def jacobian(self, blocks):
        sr = self.s * self.r
        eye = np.eye(sr)
        zero = np.zeros((sr, sr))
        A = self._kron_spatial(self.tableaux["spatial"].A)
        At = self._kron_temporal(self.tableaux["temporal"].A)
        beta = self.system.beta
        dU = np.diag(2.0 * blocks["U"].ravel())
        # block column order: U PP V W GV GW
        return np.block([
            [zero, zero, eye, zero, -self.dx * A, zero],
            [zero, zero, zero, eye, zero, -self.dx * A],
            [eye, zero, zero, -self.dx * A, zero, zero],
            [-self.dx * A, eye, zero, zero, zero, zero],
            [eye, zero, zero, zero, 2.0 * self.dt * At, zero],
            [self.dt * At @ dU, eye, -2.0 * self.dt * At, zero, zero,
             2.0 * beta * self.dt * At],
        ])

    def edge_tangent_rhs(self, et):
        s, r = self.s, self.r
        return {
            "U": np.tile(et["v0m"], (s, 1)),
            "PP": np.tile(et["w0m"], (s, 1)),
            "V": np.tile(et["u0m"], (s, 1)),
            "W": np.tile(et["rho0m"], (s, 1)),
            "GV": np.repeat(et["ui0"], r).reshape(s, r),
            "GW": np.repeat(et["rhoi0"], r).reshape(s, r),
        }

    def outputs(self, blocks):
        e = self.edges
        b = self.tableaux["spatial"].b
        bt = self.tableaux["temporal"].b
        beta, lam = self.system.beta, self.system.lam
        U, PP, V, W = blocks["U"], blocks["PP"], blocks["V"], blocks["W"]
        GV, GW = blocks["GV"], blocks["GW"]
        ubar1 = e["ui0"] - 2.0 * self.dt * (GV @ bt)
        rhobar1 = e["rhoi0"] - self.dt * ((2.0 * beta * GW - 2.0 * V + U * U) @ bt)
        return {
            "v1m": e["v0m"] + self.dx * (b @ GV),
            "w1m": e["w0m"] + self.dx * (b @ GW),
            "u1m": e["u0m"] + self.dx * (b @ W),
            "rho1m": e["rho0m"] + self.dx * (b @ U),
            "ui1": ubar1 + 2.0 * lam * self.dW,
            "rhoi1": rhobar1,
        }

    def output_tangents(self, blocks, tb, et):
        b = self.tableaux["spatial"].b
        bt = self.tableaux["temporal"].b
        beta = self.system.beta
        U = blocks["U"]
        d_ubar1 = et["ui0"] - 2.0 * self.dt * (tb["GV"] @ bt)
        d_rhobar1 = et["rhoi0"] - self.dt * (
            (2.0 * beta * tb["GW"] - 2.0 * tb["V"] + 2.0 * U * tb["U"]) @ bt)
        return {
            "v1m": et["v0m"] + self.dx * (b @ tb["GV"]),
            "w1m": et["w0m"] + self.dx * (b @ tb["GW"]),
            "u1m": et["u0m"] + self.dx * (b @ tb["W"]),
            "rho1m": et["rho0m"] + self.dx * (b @ tb["U"]),
            "ui1": d_ubar1,
            "rhoi1": d_rhobar1,
        }


class KdVPRKCell(_CellProblem):
    scheme_name = "prk"
    block_names = ("U", "PP", "V", "W", "GV", "GW")

    def _spatial_stages(self):
        return self.tableaux["spatial-1"].s

    def _temporal_stages(self):
        return self.tableaux["temporal-1"].s

    def _edge_spec(self):
        r, s = self.r, self.s
        e = self.edges
        return [("u0m", e["u0m"], r), ("rho0m", e["rho0m"], r), ("v0m", e["v0m"], r),
                ("w0m", e["w0m"], r), ("ui0", e["ui0"], s), ("rhoi0", e["rhoi0"], s)]

    def initial_guess(self):
        e = self.edges
        ones_r = np.ones(self.r)
        zeros = np.zeros((self.s, self.r))
        return {"U": np.outer(e["ui0"], ones_r), "PP": np.outer(e["rhoi0"], ones_r),
                "V": np.tile(e["v0m"], (self.s, 1)), "W": np.tile(e["w0m"], (self.s, 1)),
                "GV": zeros.copy(), "GW": zeros.copy()}

    def residual(self, blocks):
        e = self.edges
        At1, At2 = self.tableaux["temporal-1"].A, self.tableaux["temporal-2"].A
        Abar = self.tableaux["temporal-noise"].A
        A1, A2 = self.tableaux["spatial-1"].A, self.tableaux["spatial-2"].A
        A3, A4 = self.tableaux["spatial-3"].A, self.tableaux["spatial-4"].A
        beta, lam = self.system.beta, self.system.lam
        U, PP, V, W = blocks["U"], blocks["PP"], blocks["V"], blocks["W"]
        GV, GW = blocks["GV"], blocks["GW"]
        noise = 2.0 * lam * self.dW[:, None] * Abar.sum(axis=0)[None, :]
        return {
            "U": U - e["ui0"][:, None] + 2.0 * self.dt * GV @ At1 - noise,
            "PP": (PP - e["rhoi0"][:, None]
                   + self.dt * (2.0 * beta * GW - 2.0 * V + U * U) @ At2),
            "V": U - e["u0m"][None, :] - self.dx * A1 @ W,
            "W": PP - e["rho0m"][None, :] - self.dx * A2 @ U,
            "GV": V - e["v0m"][None, :] - self.dx * A3 @ GV,
            "GW": W - e["w0m"][None, :] - self.dx * A4 @ GW,
        }

    def jacobian(self, blocks):
        sr = self.s * self.r
        eye = np.eye(sr)
        zero = np.zeros((sr, sr))
        At1 = self._kron_temporal(self.tableaux["temporal-1"].A)
        At2 = self._kron_temporal(self.tableaux["temporal-2"].A)
        A1 = self._kron_spatial(self.tableaux["spatial-1"].A)
        A2 = self._kron_spatial(self.tableaux["spatial-2"].A)
        A3 = self._kron_spatial(self.tableaux["spatial-3"].A)
        A4 = self._kron_spatial(self.tableaux["spatial-4"].A)
        beta = self.system.beta
        dU = np.diag(2.0 * blocks["U"].ravel())
        # block column order: U PP V W GV GW
        return np.block([
            [eye, zero, zero, zero, 2.0 * self.dt * At1, zero],
            [self.dt * At2 @ dU, eye, -2.0 * self.dt * At2, zero, zero,
             2.0 * beta * self.dt * At2],
            [eye, zero, zero, -self.dx * A1, zero, zero],
            [-self.dx * A2, eye, zero, zero, zero, zero],
            [zero, zero, eye, zero, -self.dx * A3, zero],
            [zero, zero, zero, eye, zero, -self.dx * A4],
        ])

    def edge_tangent_rhs(self, et):
        s, r = self.s, self.r
        return {
            "U": np.repeat(et["ui0"], r).reshape(s, r),
            "PP": np.repeat(et["rhoi0"], r).reshape(s, r),
            "V": np.tile(et["u0m"], (s, 1)),
            "W": np.tile(et["rho0m"], (s, 1)),
            "GV": np.tile(et["v0m"], (s, 1)),
            "GW": np.tile(et["w0m"], (s, 1)),
        }

    def outputs(self, blocks):
        e = self.edges
        bt1, bt2 = self.tableaux["temporal-1"].b, self.tableaux["temporal-2"].b
        bbar = self.tableaux["temporal-noise"].b
        b1, b2 = self.tableaux["spatial-1"].b, self.tableaux["spatial-2"].b
        b3, b4 = self.tableaux["spatial-3"].b, self.tableaux["spatial-4"].b
        beta, lam = self.system.beta, self.system.lam
        U, PP, V, W = blocks["U"], blocks["PP"], blocks["V"], blocks["W"]
        GV, GW = blocks["GV"], blocks["GW"]
        return {
            "ui1": e["ui0"] - 2.0 * self.dt * (GV @ bt1) + 2.0 * lam * self.dW * bbar.sum(),
            "rhoi1": e["rhoi0"] - self.dt * ((2.0 * beta * GW - 2.0 * V + U * U) @ bt2),
            "u1m": e["u0m"] + self.dx * (b1 @ W),
            "rho1m": e["rho0m"] + self.dx * (b2 @ U),
            "v1m": e["v0m"] + self.dx * (b3 @ GV),
            "w1m": e["w0m"] + self.dx * (b4 @ GW),
        }

    def output_tangents(self, blocks, tb, et):
        bt1, bt2 = self.tableaux["temporal-1"].b, self.tableaux["temporal-2"].b
        b1, b2 = self.tableaux["spatial-1"].b, self.tableaux["spatial-2"].b
        b3, b4 = self.tableaux["spatial-3"].b, self.tableaux["spatial-4"].b
        beta = self.system.beta
        U = blocks["U"]
        return {
            "ui1": et["ui0"] - 2.0 * self.dt * (tb["GV"] @ bt1),
            "rhoi1": et["rhoi0"] - self.dt * (
                (2.0 * beta * tb["GW"] - 2.0 * tb["V"] + 2.0 * U * tb["U"]) @ bt2),
            "u1m": et["u0m"] + self.dx * (b1 @ tb["W"]),
            "rho1m": et["rho0m"] + self.dx * (b2 @ tb["U"]),
            "v1m": et["v0m"] + self.dx * (b3 @ tb["GV"]),
            "w1m": et["w0m"] + self.dx * (b4 @ tb["GW"]),
        }


_CELL_TYPES = {
    ("splitting", WaveSystem): WaveSplittingCell,
    ("prk", WaveSystem): WavePRKCell,
    ("splitting", NLSSystem): NLSSplittingCell,
    ("prk", NLSSystem): NLSPRKCell,
    ("splitting", KdVSystem): KdVSplittingCell,
    ("prk", KdVSystem): KdVPRKCell,
}


def make_cell(system, scheme, tableaux, edges, dx, dt, dW, policy):
    for (scheme_name, cls_sys), cell_cls in _CELL_TYPES.items():
        if scheme == scheme_name and isinstance(system, cls_sys):
            return cell_cls(system, tableaux, edges, dx, dt, dW, policy)
    raise ValueError(f"no cell solver for scheme {scheme!r} and {system!r}")


def solve_cell(system, scheme, tableaux, edges, dx, dt, dW, policy=None):
    """Solve one space-time cell; see the module docstring for conventions."""
    from . import SolverPolicy
    problem = make_cell(system, scheme, tableaux, edges, dx, dt, dW,
                        policy or SolverPolicy())
    solution = problem.solve()
    solution._problem = problem
    return solution


def cell_tangent(solution, edge_tangents):
    """Tangent stages and output edges of a solved cell for given edge tangents."""
    return solution._problem.tangent(solution, edge_tangents)
