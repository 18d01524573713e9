"""Hot time-marching loops with a compiled core and a pure fallback.

The Monte Carlo experiments spend almost all their time in per-step
banded solves plus pointwise nonlinearities for the wave system. Those
marches live here in two interchangeable implementations: a Cython
extension (``_march``) and a numpy/LAPACK version (``pure``). The
extension is chosen at import when available; set MSPDE_BACKEND=pure to
force the fallback. Setup (operator assembly, banded factorization)
always happens in Python; the backends only run the stepping loop.
"""

import os

import numpy as np
import scipy.sparse
from scipy.linalg import lapack

from ..errors import BlowUpError, DivergenceError
from ..systems import NONLINEARITY_IDS

from . import pure as _pure

_impl = _pure
BACKEND = "pure"
if os.environ.get("MSPDE_BACKEND", "") != "pure":
    try:
        from . import _march as _compiled

        _impl = _compiled
        BACKEND = "compiled"
    except ImportError:
        pass

STATUS_OK = 0
STATUS_DIVERGED = 1
STATUS_BLOWUP = 2


def band_from_sparse(matrix):
    """LAPACK general-band storage (with factorization fill rows) of a sparse matrix."""
    coo = matrix.tocoo()
    n = coo.shape[0]
    kl = int(max(0, (coo.row - coo.col).max()))
    ku = int(max(0, (coo.col - coo.row).max()))
    ab = np.zeros((2 * kl + ku + 1, n))
    ab[kl + ku + coo.row - coo.col, coo.col] = coo.data
    return ab, kl, ku


def factor_banded(matrix):
    ab, kl, ku = band_from_sparse(matrix)
    lu, ipiv, info = lapack.dgbtrf(ab, kl, ku)
    if info != 0:
        raise RuntimeError(f"banded factorization failed (info={info})")
    return np.asfortranarray(lu), np.ascontiguousarray(ipiv, dtype=np.int32), kl, ku


def _csr_parts(matrix):
    csr = matrix.tocsr()
    return (np.ascontiguousarray(csr.indptr, dtype=np.int32),
            np.ascontiguousarray(csr.indices, dtype=np.int32),
            np.ascontiguousarray(csr.data, dtype=float))


def _raise_status(status, residual, max_iter):
    if status == STATUS_BLOWUP:
        raise BlowUpError("non-finite state during march")
    if status == STATUS_DIVERGED:
        raise DivergenceError(residual, max_iter)


class WaveLRBFMarch:
    """Prefactored collocation-midpoint march of the wave system.

    Marches (u, v, w) on interior nodes through all the increments in a
    noise table; equivalent to repeated LRBFMidpointStepper steps but
    with the midpoint unknown reduced to a single banded solve per
    sweep.
    """

    def __init__(self, D, dt, f_name, g_name, policy):
        self.dt = float(dt)
        self.policy = policy
        self.f_id = NONLINEARITY_IDS[f_name]
        self.g_id = NONLINEARITY_IDS[g_name]
        d2 = (D.matrix @ D.matrix).tocsr()
        system_matrix = scipy.sparse.identity(D.n, format="csr") - (dt * dt / 4.0) * d2
        self.lu, self.ipiv, self.kl, self.ku = factor_banded(system_matrix)
        self.d2 = _csr_parts(d2)
        self.d = _csr_parts(D.matrix)

    def run(self, u, v, w, dW_table):
        u = np.ascontiguousarray(u, dtype=float).copy()
        v = np.ascontiguousarray(v, dtype=float).copy()
        w = np.ascontiguousarray(w, dtype=float).copy()
        dW_table = np.ascontiguousarray(dW_table, dtype=float)
        pol = self.policy
        status, residual = _impl.wave_lrbf_march(
            u, v, w, dW_table, self.dt, self.f_id, self.g_id,
            pol.tol, pol.max_iter, pol.damping,
            self.lu, self.ipiv, self.kl, self.ku,
            *self.d2, *self.d)
        _raise_status(status, residual, pol.max_iter)
        return u, v, w


class WaveBoxMarch:
    """Prefactored box-scheme march of the wave system (splitting or prk).

    Marches midcell (u, v); when an ``energies`` array is passed it is
    filled with the discrete energy at every visited time level (the
    deterministic-kick form, one entry per step plus none for the final
    level; callers append the last point with ``final_energy``).
    """

    def __init__(self, n_cells, dx, dt, f_name, g_name, policy, scheme):
        from ..integrators.box import wave_box_matrix

        self.dx, self.dt = float(dx), float(dt)
        self.policy = policy
        self.scheme_flag = {"splitting": 0, "prk": 1}[scheme]
        self.f_id = NONLINEARITY_IDS[f_name]
        self.g_id = NONLINEARITY_IDS[g_name]
        self.lu, self.ipiv, self.kl, self.ku = factor_banded(wave_box_matrix(n_cells, dx, dt))
        self.n_cells = n_cells

    def run(self, u, v, dW_table, energies=None):
        u = np.ascontiguousarray(u, dtype=float).copy()
        v = np.ascontiguousarray(v, dtype=float).copy()
        dW_table = np.ascontiguousarray(dW_table, dtype=float)
        if energies is None:
            energies = np.empty(0)
        pol = self.policy
        status, residual = _impl.wave_box_march(
            u, v, dW_table, self.dt, self.dx, self.f_id, self.g_id,
            pol.tol, pol.max_iter, pol.damping,
            self.lu, self.ipiv, self.kl, self.ku, self.scheme_flag, energies)
        _raise_status(status, residual, pol.max_iter)
        return u, v

    def final_energy(self, u, v):
        status, residual, energy = _impl.wave_box_energy(
            np.ascontiguousarray(u, dtype=float), np.ascontiguousarray(v, dtype=float),
            self.dt, self.dx, self.f_id, self.g_id,
            self.policy.tol, self.policy.max_iter, self.policy.damping,
            self.lu, self.ipiv, self.kl, self.ku)
        _raise_status(status, residual, self.policy.max_iter)
        return energy
