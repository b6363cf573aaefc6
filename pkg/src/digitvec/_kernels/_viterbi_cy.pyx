# cython: boundscheck=False, wraparound=False, cdivision=True
"""Cython Viterbi kernel for left-to-right, no-skip chains.

Must stay bit-compatible with the numpy reference in ``viterbi_np``.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()

cdef double NEG_INF = -np.inf


def viterbi_path(emit, log_stay, log_adv):
    """See ``digitvec._kernels.viterbi_np.viterbi_path``."""
    cdef cnp.ndarray[cnp.float64_t, ndim=2] e = np.ascontiguousarray(emit, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] stay_p = np.ascontiguousarray(log_stay, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] adv_p = np.ascontiguousarray(log_adv, dtype=np.float64)
    cdef Py_ssize_t L = e.shape[0]
    cdef Py_ssize_t S = e.shape[1]
    cdef cnp.ndarray[cnp.int32_t, ndim=1] path = np.zeros(L, dtype=np.int32)
    if L < S:
        return path, NEG_INF

    cdef cnp.ndarray[cnp.float64_t, ndim=1] delta = np.full(S, NEG_INF)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] prev = np.empty(S)
    cdef cnp.ndarray[cnp.int8_t, ndim=2] psi = np.zeros((L, S), dtype=np.int8)
    cdef Py_ssize_t t, j, state
    cdef double stay, adv

    delta[0] = e[0, 0]
    for t in range(1, L):
        for j in range(S):
            prev[j] = delta[j]
        for j in range(S - 1, -1, -1):
            stay = prev[j] + stay_p[j]
            if j > 0:
                adv = prev[j - 1] + adv_p[j - 1]
            else:
                adv = NEG_INF
            if adv > stay:
                psi[t, j] = 1
                delta[j] = adv + e[t, j]
            else:
                psi[t, j] = 0
                delta[j] = stay + e[t, j]

    state = S - 1
    for t in range(L - 1, 0, -1):
        path[t] = <int> state
        if psi[t, state]:
            state -= 1
    path[0] = <int> state
    return path, float(delta[S - 1])
