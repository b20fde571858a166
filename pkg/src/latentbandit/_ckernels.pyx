# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled scoring kernels. See ``_pykernels`` for the argument conventions."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, fabs, INFINITY

cnp.import_array()


def linear_explore(double[::1] logpost, double[:, ::1] mu, double[:, ::1] hls,
                   double[:, ::1] i2s):
    cdef Py_ssize_t G = mu.shape[0], C = mu.shape[1]
    cdef Py_ssize_t g, h, c
    cdef double r, d, t, m, acc
    out_arr = np.empty((G, C))
    cdef double[:, ::1] out = out_arr
    cdef double[::1] terms = np.empty(G)
    with nogil:
        for c in range(C):
            for g in range(G):
                if logpost[g] == -INFINITY:
                    out[g, c] = 0.0
                    continue
                r = mu[g, c]
                m = -INFINITY
                for h in range(G):
                    d = r - mu[h, c]
                    t = logpost[h] - hls[h, c] - d * d * i2s[h, c]
                    terms[h] = t
                    if t > m:
                        m = t
                acc = 0.0
                for h in range(G):
                    acc += exp(terms[h] - m)
                out[g, c] = exp(terms[g] - m) / acc
    return out_arr


def mc_explore(double[::1] logpost, double[:, ::1] mu, double[:, ::1] sigma,
               double[:, ::1] hls, double[:, ::1] i2s, double[:, :, ::1] z,
               g_idx, h_idx):
    cdef Py_ssize_t[::1] gi = np.ascontiguousarray(g_idx, dtype=np.intp)
    cdef Py_ssize_t[::1] hi = np.ascontiguousarray(h_idx, dtype=np.intp)
    cdef Py_ssize_t C = mu.shape[1], S = z.shape[2]
    cdef Py_ssize_t ng = gi.shape[0], nh = hi.shape[0]
    cdef Py_ssize_t k, j, c, s, g, h
    cdef double r, d, t, m, acc, total, own
    out_arr = np.empty((ng, C))
    cdef double[:, ::1] out = out_arr
    cdef double[::1] terms = np.empty(max(nh, 1))
    with nogil:
        for c in range(C):
            for k in range(ng):
                g = gi[k]
                if logpost[g] == -INFINITY:
                    out[k, c] = 0.0
                    continue
                total = 0.0
                for s in range(S):
                    r = mu[g, c] + sigma[g, c] * z[c, g, s]
                    m = -INFINITY
                    own = 0.0
                    for j in range(nh):
                        h = hi[j]
                        d = r - mu[h, c]
                        t = logpost[h] - hls[h, c] - d * d * i2s[h, c]
                        terms[j] = t
                        if h == g:
                            own = t
                        if t > m:
                            m = t
                    acc = 0.0
                    for j in range(nh):
                        acc += exp(terms[j] - m)
                    total += exp(own - m) / acc
                out[k, c] = total / S
    return out_arr


def future_loss_matrix(double[:, ::1] mu_rem, order, double[::1] weights):
    cdef Py_ssize_t[:, ::1] od = np.ascontiguousarray(order, dtype=np.intp)
    cdef Py_ssize_t G = mu_rem.shape[0], M = mu_rem.shape[1]
    cdef Py_ssize_t g, h, i
    cdef double acc
    out_arr = np.zeros((G, G))
    cdef double[:, ::1] out = out_arr
    with nogil:
        for g in range(G):
            for h in range(G):
                acc = 0.0
                for i in range(M):
                    acc += weights[i] * fabs(mu_rem[g, od[g, i]] - mu_rem[g, od[h, i]])
                out[g, h] = acc
    return out_arr
