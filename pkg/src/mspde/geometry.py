"""Runtime verification of the discrete conservation laws.

The discrete two-forms are evaluated on explicit tangent pairs: for
1-forms da, db the evaluation of da ^ db on (xi, eta) is
xi_a eta_b - eta_a xi_b, and for the vector forms

    omega(xi, eta) = xi^T M eta - eta^T M xi         (times 1/2 under the
                                                      half normalization)
    kappa(xi, eta) = xi^T K eta - eta^T K xi

with the mixed two-point version pairing a center node with a stencil
member. Tangents are propagated by the exact linearization of each
scheme (see the steppers and cell solvers), so the residuals below
vanish to solver precision for the structure-preserving schemes and
stay O(dt) for the explicit-Euler control.
"""

import numpy as np

from .integrators.cells import cell_tangent

NORMALIZATIONS = ("half", "plain")


class TangentEnsemble:
    """A base state plus two linearized states propagated alongside it."""

    def __init__(self, base, xi, eta):
        self.base = base
        self.xi = xi
        self.eta = eta

    def advance(self, stepper, dW):
        new_base, (new_xi, new_eta) = stepper.step_with_tangents(
            self.base, (self.xi, self.eta), dW)
        return TangentEnsemble(new_base, new_xi, new_eta)


class FormResidual:
    """Conservation-law residual split into its temporal and spatial parts.

    ``value`` is the max over evaluation sites of temporal + spatial;
    ``check_consistency`` recomputes that sum from the stored parts.
    """

    def __init__(self, scheme, temporal, spatial):
        self.scheme = scheme
        self.temporal = np.atleast_1d(np.asarray(temporal, dtype=float))
        self.spatial = np.atleast_1d(np.asarray(spatial, dtype=float))
        self.value = float(np.abs(self.temporal + self.spatial).max())

    def check_consistency(self):
        recomputed = float(np.abs(self.temporal + self.spatial).max())
        return abs(recomputed - self.value) <= 1e-15

    def __repr__(self):
        return f"FormResidual({self.scheme}: {self.value:.3e})"


def propagate_tangents(stepper, state, xi, eta, dW):
    """One step of the base state with two tangents; returns the new triple."""
    return TangentEnsemble(state, xi, eta).advance(stepper, dW)


def _pair_form(mat, xi, eta):
    """Per-node xi^T mat eta - eta^T mat xi for stacked (4, N) tangents."""
    return np.einsum("ci,cd,di->i", xi, mat, eta) - np.einsum("ci,cd,di->i", eta, mat, xi)


def _stack(tan, names):
    return np.stack([tan[n] for n in names])


def mscl_residual_lrbf(system, D, ensemble_old, ensemble_new, dt, normalization="half"):
    """Residual of the collocation scheme's conservation law over one step.

    Evaluates, per interior node, [omega^{n+1} - omega^n]/dt plus the
    stencil-weighted flux of kappa on the midpoint tangents, and returns
    the max across nodes. Under the ``half`` normalization (omega
    carries the 1/2, kappa does not) the identity is exact for the
    midpoint scheme; ``plain`` drops the 1/2 from omega, which breaks
    the balance and is kept only for comparison.
    """
    if normalization not in NORMALIZATIONS:
        raise ValueError(f"unknown normalization {normalization!r}")
    names = system.component_names
    xi0, eta0 = _stack(ensemble_old.xi, names), _stack(ensemble_old.eta, names)
    xi1, eta1 = _stack(ensemble_new.xi, names), _stack(ensemble_new.eta, names)
    scale = 0.5 if normalization == "half" else 1.0
    omega0 = scale * _pair_form(system.M, xi0, eta0)
    omega1 = scale * _pair_form(system.M, xi1, eta1)
    temporal = (omega1 - omega0) / dt
    xim = 0.5 * (xi0 + xi1)
    etam = 0.5 * (eta0 + eta1)
    k_eta = np.stack([D.apply(v) for v in etam])
    k_xi = np.stack([D.apply(v) for v in xim])
    spatial = (np.einsum("ci,cd,di->i", xim, system.K, k_eta)
               - np.einsum("ci,cd,di->i", etam, system.K, k_xi))
    return FormResidual("lrbf-midpoint", temporal, spatial)


def _edge_wedge(xi, eta, a, b):
    return xi[a] * eta[b] - eta[a] * xi[b]


_CELL_FORMS = {
    # scheme label -> (temporal weight role, flux weight role, formula id)
    ("splitting", "wave"): ("spatial", "temporal", "wave"),
    ("prk", "wave"): ("spatial-2", "temporal-2", "wave"),
    ("splitting", "nls"): ("spatial", "temporal", "nls"),
    ("prk", "nls"): ("spatial-1", "temporal-1", "nls"),
    ("splitting", "kdv"): ("spatial", "temporal", "kdv"),
    ("prk", "kdv"): ("spatial-2", "temporal-2", "kdv"),
}


def mscl_residual_cell(solution, xi_edges, eta_edges):
    """Residual of the cell scheme's weighted conservation law.

    ``xi_edges`` / ``eta_edges`` are tangent edge data (same keys as the
    cell's ``edges_in``); the cell's stored linearization propagates
    them to the outgoing edges, and the scheme's weighted two-form
    balance is evaluated on the pair.
    """
    _, xi_out = cell_tangent(solution, xi_edges)
    _, eta_out = cell_tangent(solution, eta_edges)
    sys_name = type(solution.system).__name__[:3].lower()
    sys_name = {"wav": "wave", "nls": "nls", "kdv": "kdv"}[sys_name]
    b_role, bt_role, formula = _CELL_FORMS[(solution.scheme, sys_name)]
    b = solution.tableaux[b_role].b
    bt = solution.tableaux[bt_role].b
    dt, dx = solution.dt, solution.dx
    xi_in, eta_in = xi_edges, eta_edges
    xi1, eta1 = xi_out, eta_out

    def w_in(a, b_):
        return _edge_wedge(xi_in, eta_in, a, b_)

    def w_out(a, b_):
        return _edge_wedge(xi1, eta1, a, b_)

    if formula == "wave":
        temporal = (b / dt) * (w_out("ui1", "vi1") - w_in("ui0", "vi0"))
        spatial = -(bt / dx) * (w_out("u1m", "w1m") - w_in("u0m", "w0m"))
    elif formula == "nls":
        temporal = (b / dt) * (w_out("qi1", "pi1") - w_in("qi0", "pi0"))
        spatial = (bt / dx) * (w_out("p1m", "v1m") - w_in("p0m", "v0m")
                               + w_out("q1m", "w1m") - w_in("q0m", "w0m"))
    else:
        beta = solution.system.beta
        temporal = (b / dt) * (w_out("rhoi1", "ui1") - w_in("rhoi0", "ui0"))
        spatial = (2.0 * bt / dx) * (
            w_out("rho1m", "v1m") - w_in("rho0m", "v0m")
            + beta * (w_out("w1m", "u1m") - w_in("w0m", "u0m")))
    return FormResidual(f"{solution.scheme}-{sys_name}-cell",
                        float(temporal.sum()), float(spatial.sum()))


def energy_trace(ensemble):
    """Monte Carlo average of per-path discrete-energy series.

    ``ensemble`` is a sequence of equally long 1-D arrays (one per
    path); returns their pointwise mean.
    """
    series = [np.asarray(s, dtype=float) for s in ensemble]
    if not series:
        raise ValueError("empty ensemble")
    length = series[0].size
    if any(s.size != length for s in series):
        raise ValueError("energy series must share one length")
    return np.mean(series, axis=0)
