# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loop for exhaustive posterior enumeration.

Fills the per-configuration log-weight array for a pairwise model over a
finite alphabet.  Configurations are enumerated in lexicographic order
(vertex 0 is the most significant digit, vertex m-1 rolls fastest).  The
running log-weight is updated incrementally when only the fastest digit
changes and recomputed from scratch on every carry, which bounds floating
point drift to a couple of incremental steps.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()


def fill_logweights(double[:, ::1] unary, int[::1] eu, int[::1] ev,
                    double[:, :, ::1] elogq, double[::1] out):
    """Write log weight(config) for all q^m configs into ``out``.

    unary : (m, q) per-vertex log potentials
    eu, ev: edge endpoints (indices into the m free vertices)
    elogq : (E, q, q) log kernel slice for each edge, indexed [e, x_u, x_v]
    out   : (q**m,) destination
    """
    cdef Py_ssize_t m = unary.shape[0]
    cdef int q = <int> unary.shape[1]
    cdef Py_ssize_t E = eu.shape[0]
    cdef Py_ssize_t total = out.shape[0]
    cdef Py_ssize_t c, i, e, nlast
    cdef int j, a
    cdef double logw

    if m == 0:
        s = 0.0
        for e in range(E):
            s += elogq[e, 0, 0]
        out[0] = s
        return

    digits_arr = np.zeros(m, dtype=np.intc)
    cdef int[::1] digits = digits_arr
    # edges touching the fastest digit, split by which endpoint it is
    last_u_arr = np.asarray([e for e in range(E) if eu[e] == m - 1], dtype=np.intp)
    last_v_arr = np.asarray([e for e in range(E) if ev[e] == m - 1 and eu[e] != m - 1],
                            dtype=np.intp)
    cdef Py_ssize_t[::1] last_u = last_u_arr
    cdef Py_ssize_t[::1] last_v = last_v_arr
    cdef Py_ssize_t n_last_u = last_u.shape[0]
    cdef Py_ssize_t n_last_v = last_v.shape[0]

    # full evaluation of the first configuration
    logw = 0.0
    for i in range(m):
        logw += unary[i, 0]
    for e in range(E):
        logw += elogq[e, 0, 0]
    out[0] = logw

    for c in range(1, total):
        a = digits[m - 1]
        if a + 1 < q:
            # fast path: only the last digit moves
            logw -= unary[m - 1, a]
            for i in range(n_last_u):
                e = last_u[i]
                logw -= elogq[e, a, digits[ev[e]]]
            for i in range(n_last_v):
                e = last_v[i]
                logw -= elogq[e, digits[eu[e]], a]
            digits[m - 1] = a + 1
            a += 1
            logw += unary[m - 1, a]
            for i in range(n_last_u):
                e = last_u[i]
                logw += elogq[e, a, digits[ev[e]]]
            for i in range(n_last_v):
                e = last_v[i]
                logw += elogq[e, digits[eu[e]], a]
        else:
            # carry: roll the odometer and recompute exactly
            j = <int> m - 1
            while digits[j] == q - 1:
                digits[j] = 0
                j -= 1
            digits[j] += 1
            logw = 0.0
            for i in range(m):
                logw += unary[i, digits[i]]
            for e in range(E):
                logw += elogq[e, digits[eu[e]], digits[ev[e]]]
        out[c] = logw
