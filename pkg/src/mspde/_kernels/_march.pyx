# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled march loops; argument-for-argument twin of ``pure.py``.

Each step does prefactored banded solves (LAPACK dgbtrs) plus pointwise
nonlinearities, entirely in C. Convergence criteria and state updates
match the pure implementation so the two backends agree to roundoff.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport fabs, isfinite, sin
from scipy.linalg.cython_lapack cimport dgbtrs

cnp.import_array()

STATUS_OK = 0
STATUS_DIVERGED = 1
STATUS_BLOWUP = 2

cdef int C_OK = 0
cdef int C_DIVERGED = 1
cdef int C_BLOWUP = 2


cdef inline double _nonlin(int fid, double u) noexcept nogil:
    if fid == 0:
        return 0.0
    if fid == 1:
        return 1.0
    if fid == 2:
        return u
    if fid == 3:
        return u * u * u
    return sin(u)


cdef inline void _csr_matvec(const int[::1] indptr, const int[::1] indices,
                             const double[::1] data, const double[::1] x,
                             double[::1] y) noexcept nogil:
    cdef Py_ssize_t i, k
    cdef double acc
    for i in range(indptr.shape[0] - 1):
        acc = 0.0
        for k in range(indptr[i], indptr[i + 1]):
            acc += data[k] * x[indices[k]]
        y[i] = acc


cdef inline int _banded_solve(const double[::1, :] lu, const int[::1] ipiv,
                              int kl, int ku, double[::1] b) noexcept nogil:
    cdef int n = <int>b.shape[0]
    cdef int nrhs = 1
    cdef int ldab = 2 * kl + ku + 1
    cdef int info = 0
    dgbtrs("N", &n, &kl, &ku, &nrhs, <double*>&lu[0, 0], &ldab,
           <int*>&ipiv[0], &b[0], &n, &info)
    return info


def wave_lrbf_march(double[::1] u, double[::1] v, double[::1] w,
                    double[:, ::1] dW_table, double dt, int f_id, int g_id,
                    double tol, int max_iter, double damping,
                    double[::1, :] lu, int[::1] ipiv, int kl, int ku,
                    int[::1] d2_indptr, int[::1] d2_indices, double[::1] d2_data,
                    int[::1] d_indptr, int[::1] d_indices, double[::1] d_data):
    cdef Py_ssize_t n = u.shape[0]
    cdef Py_ssize_t n_steps = dW_table.shape[0]
    cdef Py_ssize_t i, it, step
    cdef double residual = 0.0, r, quarter_dt = 0.25 * dt
    cdef double dt2_4 = 0.25 * dt * dt
    cdef bint converged, finite
    base_arr = np.empty(n)
    ubar_arr = np.empty(n)
    rhs_arr = np.empty(n)
    d2u_arr = np.empty(n)
    du_arr = np.empty(n)
    cdef double[::1] base = base_arr, ubar = ubar_arr, rhs = rhs_arr
    cdef double[::1] d2u = d2u_arr, du = du_arr
    cdef double fu, gu, dWi

    for step in range(n_steps):
        for i in range(n):
            base[i] = u[i] + 0.5 * dt * v[i]
            ubar[i] = base[i]
        converged = False
        for it in range(max_iter):
            for i in range(n):
                dWi = dW_table[step, i]
                rhs[i] = (base[i] - dt2_4 * _nonlin(f_id, ubar[i])
                          + quarter_dt * _nonlin(g_id, ubar[i]) * dWi)
            if _banded_solve(lu, ipiv, kl, ku, rhs) != 0:
                return STATUS_BLOWUP, np.inf
            finite = True
            for i in range(n):
                if not isfinite(rhs[i]):
                    finite = False
                    break
                ubar[i] = damping * rhs[i] + (1.0 - damping) * ubar[i]
            if not finite:
                return STATUS_BLOWUP, np.inf
            _csr_matvec(d2_indptr, d2_indices, d2_data, ubar, d2u)
            residual = 0.0
            for i in range(n):
                dWi = dW_table[step, i]
                r = 2.0 * (ubar[i] - base[i]
                           - dt2_4 * (d2u[i] - _nonlin(f_id, ubar[i]))
                           - quarter_dt * _nonlin(g_id, ubar[i]) * dWi)
                if fabs(r) > residual:
                    residual = fabs(r)
            if residual <= tol:
                converged = True
                break
        if not converged:
            return STATUS_DIVERGED, residual
        _csr_matvec(d_indptr, d_indices, d_data, ubar, du)
        for i in range(n):
            dWi = dW_table[step, i]
            fu = _nonlin(f_id, ubar[i])
            gu = _nonlin(g_id, ubar[i])
            u[i] = 2.0 * ubar[i] - u[i]
            v[i] = v[i] + dt * (d2u[i] - fu) + gu * dWi
            w[i] = 2.0 * du[i] - w[i]
    return STATUS_OK, 0.0


cdef int _box_stage(const double[::1] u, const double[::1] v, const double[::1] dW,
                    double dt, int f_id, int g_id, double tol, int max_iter,
                    double damping, const double[::1, :] lu, const int[::1] ipiv,
                    int kl, int ku, bint prk_noise,
                    double[::1] stage, double[::1] u_edge, double[::1] w_edge,
                    double[::1] cell_rhs, double[::1] rhs, double* residual_out) noexcept nogil:
    cdef Py_ssize_t n_cells = u.shape[0]
    cdef Py_ssize_t i, it
    cdef double dt2_4 = 0.25 * dt * dt, quarter_dt = 0.25 * dt
    cdef double residual, value
    cdef bint have_prev = False
    for i in range(n_cells):
        stage[i] = u[i] + 0.5 * dt * v[i]
    residual_out[0] = 1e308
    for it in range(max_iter):
        residual = 0.0
        for i in range(n_cells):
            value = u[i] + 0.5 * dt * v[i] - dt2_4 * _nonlin(f_id, stage[i])
            if prk_noise:
                value += quarter_dt * dW[i] * _nonlin(g_id, stage[i])
            if have_prev:
                if fabs(value - cell_rhs[i]) > residual:
                    residual = fabs(value - cell_rhs[i])
            cell_rhs[i] = value
        if have_prev:
            residual_out[0] = residual
            if residual <= tol:
                return C_OK
        have_prev = True
        for i in range(n_cells):
            rhs[2 * i] = 0.0
            rhs[2 * i + 1] = cell_rhs[i]
        if _banded_solve(lu, ipiv, kl, ku, rhs) != 0:
            return C_BLOWUP
        for i in range(2 * n_cells):
            if not isfinite(rhs[i]):
                return C_BLOWUP
        u_edge[0] = 0.0
        u_edge[n_cells] = 0.0
        w_edge[0] = rhs[0]
        w_edge[n_cells] = rhs[2 * n_cells - 1]
        for i in range(1, n_cells):
            u_edge[i] = rhs[2 * i - 1]
            w_edge[i] = rhs[2 * i]
        for i in range(n_cells):
            stage[i] = (damping * 0.5 * (u_edge[i] + u_edge[i + 1])
                        + (1.0 - damping) * stage[i])
    return C_DIVERGED


def wave_box_march(double[::1] u, double[::1] v, double[:, ::1] dW_table,
                   double dt, double dx, int f_id, int g_id,
                   double tol, int max_iter, double damping,
                   double[::1, :] lu, int[::1] ipiv, int kl, int ku,
                   int scheme_flag, double[::1] energies):
    cdef Py_ssize_t n_cells = u.shape[0]
    cdef Py_ssize_t n_steps = dW_table.shape[0]
    cdef Py_ssize_t i, step
    cdef bint record = energies.shape[0] > 0
    cdef int status
    cdef double residual = 0.0, kick, u_next, acc, y_minus
    stage_arr = np.empty(n_cells)
    ue_arr = np.empty(n_cells + 1)
    we_arr = np.empty(n_cells + 1)
    crhs_arr = np.empty(n_cells)
    rhs_arr = np.empty(2 * n_cells)
    kick_arr = np.empty(n_cells)
    cdef double[::1] stage = stage_arr, u_edge = ue_arr, w_edge = we_arr
    cdef double[::1] cell_rhs = crhs_arr, rhs = rhs_arr, kicks = kick_arr

    for step in range(n_steps):
        status = _box_stage(u, v, dW_table[step], dt, f_id, g_id, tol, max_iter,
                            damping, lu, ipiv, kl, ku, scheme_flag == 1,
                            stage, u_edge, w_edge, cell_rhs, rhs, &residual)
        if status != STATUS_OK:
            return status, residual
        for i in range(n_cells):
            kicks[i] = (w_edge[i + 1] - w_edge[i]) / dx - _nonlin(f_id, stage[i])
        if record:
            acc = 0.0
            for i in range(n_cells):
                y_minus = u[i] - 0.5 * dt * v[i]
                acc += 0.5 * v[i] * v[i] - 0.5 * y_minus * kicks[i]
            energies[step] = dx * acc
        for i in range(n_cells):
            u_next = 2.0 * stage[i] - u[i]
            if scheme_flag == 0:
                v[i] = v[i] + dt * kicks[i] + _nonlin(g_id, u_next) * dW_table[step, i]
            else:
                v[i] = v[i] + dt * kicks[i] + dW_table[step, i] * _nonlin(g_id, stage[i])
            u[i] = u_next
    return STATUS_OK, 0.0


def wave_box_energy(double[::1] u, double[::1] v, double dt, double dx,
                    int f_id, int g_id, double tol, int max_iter, double damping,
                    double[::1, :] lu, int[::1] ipiv, int kl, int ku):
    cdef Py_ssize_t n_cells = u.shape[0]
    cdef Py_ssize_t i
    cdef int status
    cdef double residual = 0.0, acc, kick, y_minus
    zeros = np.zeros(n_cells)
    stage_arr = np.empty(n_cells)
    ue_arr = np.empty(n_cells + 1)
    we_arr = np.empty(n_cells + 1)
    crhs_arr = np.empty(n_cells)
    rhs_arr = np.empty(2 * n_cells)
    cdef double[::1] stage = stage_arr, u_edge = ue_arr, w_edge = we_arr
    cdef double[::1] cell_rhs = crhs_arr, rhs = rhs_arr, zw = zeros
    status = _box_stage(u, v, zw, dt, f_id, g_id, tol, max_iter, damping,
                        lu, ipiv, kl, ku, False,
                        stage, u_edge, w_edge, cell_rhs, rhs, &residual)
    if status != STATUS_OK:
        return status, residual, 0.0
    acc = 0.0
    for i in range(n_cells):
        kick = (w_edge[i + 1] - w_edge[i]) / dx - _nonlin(f_id, stage[i])
        y_minus = u[i] - 0.5 * dt * v[i]
        acc += 0.5 * v[i] * v[i] - 0.5 * y_minus * kick
    return STATUS_OK, 0.0, dx * acc
