# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled GRU backward scan.

Same contract as the numpy fallback's gru_backward. Per step: one fused C
loop for the gate adjoints (see _gates.c) and two BLAS GEMMs for the
recurrent weight gradient and the carried hidden-state gradient.
"""

import numpy as np

from scipy.linalg.cython_blas cimport dgemm

cdef extern from "_gates.h":
    void gru_gates_backward(long R, long H, const double *cache_t, const double *h_prev,
                            const double *dh_out_t, const double *carry_in,
                            double *dpre, double *dxp_t, double *carry_out,
                            double *dbh) nogil


cdef inline void _mm_nt(double* a, double* b, double* c,
                        int m, int n, int k, double beta) noexcept nogil:
    # C[m,n] = A[m,k] @ B[n,k]^T + beta*C, all row-major
    cdef char tt = b'T'
    cdef char nt = b'N'
    cdef double alpha = 1.0
    dgemm(&tt, &nt, &n, &m, &k, &alpha, b, &k, a, &k, &beta, c, &n)


cdef inline void _mm_tn(double* a, double* b, double* c,
                        int m, int n, int k, double beta) noexcept nogil:
    # C[m,n] = A[k,m]^T @ B[k,n] + beta*C, all row-major
    cdef char tt = b'T'
    cdef char nt = b'N'
    cdef double alpha = 1.0
    dgemm(&nt, &tt, &n, &m, &k, &alpha, b, &n, a, &m, &beta, c, &n)


def gru_backward(double[:, :, ::1] dh_out, double[:, :, ::1] h_all,
                 double[:, :, ::1] cache, double[:, ::1] wh):
    cdef Py_ssize_t S = dh_out.shape[0]
    cdef Py_ssize_t R = dh_out.shape[1]
    cdef Py_ssize_t H = dh_out.shape[2]
    dxp_arr = np.empty((S, R, 3 * H))
    dwh_arr = np.zeros((H, 3 * H))
    dbh_arr = np.zeros(3 * H)
    carry_arr = np.zeros((R, H))
    carry2_arr = np.empty((R, H))
    dpre_arr = np.empty((R, 3 * H))
    cdef double[:, :, ::1] dxp = dxp_arr
    cdef double[:, ::1] dwh = dwh_arr
    cdef double[::1] dbh = dbh_arr
    cdef double[:, ::1] carry = carry_arr
    cdef double[:, ::1] carry2 = carry2_arr
    cdef double[:, ::1] dpre = dpre_arr
    cdef Py_ssize_t t
    cdef int iR = <int> R, iH = <int> H, i3H = <int> (3 * H)

    with nogil:
        for t in range(S - 1, -1, -1):
            gru_gates_backward(R, H, &cache[t, 0, 0], &h_all[t, 0, 0],
                               &dh_out[t, 0, 0], &carry[0, 0],
                               &dpre[0, 0], &dxp[t, 0, 0], &carry2[0, 0], &dbh[0])
            # dwh += h_all[t]^T @ dpre ; carry = carry2 + dpre @ wh^T
            _mm_tn(&h_all[t, 0, 0], &dpre[0, 0], &dwh[0, 0], iH, i3H, iR, 1.0)
            carry[:, :] = carry2
            _mm_nt(&dpre[0, 0], &wh[0, 0], &carry[0, 0], iR, iH, i3H, 1.0)
    return dxp_arr, dwh_arr, dbh_arr, carry_arr
