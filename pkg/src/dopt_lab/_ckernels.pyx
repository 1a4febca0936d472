# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled batch kernels. Same contracts as ``_pykernels``."""
import numpy as np
cimport numpy as cnp

cnp.import_array()


cdef inline Py_ssize_t _pick(const double[:] cdf, double u) noexcept nogil:
    cdef Py_ssize_t i
    cdef Py_ssize_t n = cdf.shape[0]
    for i in range(n):
        if u < cdf[i]:
            return i
    return n - 1


def simulate(const double[:] p0_cdf, const double[:, :, :] pi_cdf,
             const double[:, :, :] p_cdf, const double[:, :] uniforms):
    cdef Py_ssize_t n = uniforms.shape[0]
    cdef Py_ssize_t horizon = pi_cdf.shape[0]
    states_arr = np.empty((n, horizon + 1), dtype=np.int64)
    actions_arr = np.empty((n, horizon), dtype=np.int64)
    cdef cnp.int64_t[:, :] states = states_arr
    cdef cnp.int64_t[:, :] actions = actions_arr
    cdef Py_ssize_t i, t, s, a
    with nogil:
        for i in range(n):
            s = _pick(p0_cdf, uniforms[i, 0])
            states[i, 0] = s
            for t in range(horizon):
                a = _pick(pi_cdf[t, s], uniforms[i, 1 + 2 * t])
                s = _pick(p_cdf[s, a], uniforms[i, 2 + 2 * t])
                actions[i, t] = a
                states[i, t + 1] = s
    return states_arr, actions_arr


def returns(const cnp.int64_t[:, :] states, const cnp.int64_t[:, :] actions,
            const double[:, :] reward, const double[:, :, :] ratio,
            const double[:, :, :] baseline, const double[:, :] baseline_bar):
    cdef Py_ssize_t n = actions.shape[0]
    cdef Py_ssize_t horizon = actions.shape[1]
    out_arr = np.empty(n, dtype=np.float64)
    cdef double[:] out = out_arr
    cdef Py_ssize_t i, t, s, a
    cdef double g
    with nogil:
        for i in range(n):
            g = 0.0
            for t in range(horizon - 1, -1, -1):
                s = states[i, t]
                a = actions[i, t]
                g = ratio[t, s, a] * (reward[s, a] + g - baseline[t, s, a]) + baseline_bar[t, s]
            out[i] = g
    return out_arr
