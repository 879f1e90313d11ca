# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the kernels in ``_pykernels``."""
import numpy as np
cimport numpy as cnp
from libc.math cimport sin, cos, fabs, sqrt, round, M_PI

cnp.import_array()

cdef double _SINGULAR_TOL = 1e-6


cdef inline double complex _dirichlet(double delta, int M, double d) noexcept nogil:
    cdef double psi = 2.0 * M_PI * d * delta
    psi -= 2.0 * M_PI * round(psi / (2.0 * M_PI))
    cdef double half = 0.5 * psi
    cdef double s = sin(half)
    cdef double re = 0.0, im = 0.0, ratio, phase
    cdef int m
    if fabs(s) < _SINGULAR_TOL:
        for m in range(M):
            re += cos(psi * m)
            im += sin(psi * m)
        return (re / M) + 1j * (im / M)
    ratio = sin(M * half) / (M * s)
    phase = (M - 1) * half
    return ratio * cos(phase) + 1j * (ratio * sin(phase))


def dirichlet(double delta, int M, double d_over_lambda):
    return _dirichlet(delta, M, d_over_lambda)


def dirichlet_array(delta, int M, double d_over_lambda):
    cdef cnp.ndarray[cnp.float64_t, ndim=1] flat = np.ascontiguousarray(
        delta, dtype=np.float64).ravel()
    cdef Py_ssize_t n = flat.shape[0], i
    cdef cnp.ndarray[cnp.complex128_t, ndim=1] out = np.empty(n, dtype=np.complex128)
    for i in range(n):
        out[i] = _dirichlet(flat[i], M, d_over_lambda)
    return out.reshape(np.shape(delta))


def path_response(gain_re, gain_im, cos_a, cos_d, double cos_bar_a,
                  double cos_bar_d, int n_r, int n_t, double d_over_lambda):
    cdef double[:] gr = np.ascontiguousarray(gain_re, dtype=np.float64)
    cdef double[:] gi = np.ascontiguousarray(gain_im, dtype=np.float64)
    cdef double[:] ca = np.ascontiguousarray(cos_a, dtype=np.float64)
    cdef double[:] cd = np.ascontiguousarray(cos_d, dtype=np.float64)
    cdef Py_ssize_t i, n = gr.shape[0]
    cdef double complex total = 0, g_r, g_t
    for i in range(n):
        g_r = _dirichlet(ca[i] - cos_bar_a, n_r, d_over_lambda)
        g_t = _dirichlet(cd[i] - cos_bar_d, n_t, d_over_lambda)
        total += (gr[i] + 1j * gi[i]) * g_r * g_t.conjugate()
    return total


def systematic_resample(weights, double u0):
    cdef double[:] w = np.ascontiguousarray(weights, dtype=np.float64)
    cdef Py_ssize_t n = w.shape[0], i = 0, j
    cdef cnp.ndarray[cnp.intp_t, ndim=1] idx = np.empty(n, dtype=np.intp)
    cdef double c = w[0], pos
    for j in range(n):
        pos = (u0 + j) / n
        while pos >= c and i < n - 1:
            i += 1
            c += w[i]
        idx[j] = i
    return idx


def gaussian_logweights(h_re, h_im, double z_re, double z_im, double variance):
    cdef double[:] hr = np.ascontiguousarray(h_re, dtype=np.float64)
    cdef double[:] hi = np.ascontiguousarray(h_im, dtype=np.float64)
    cdef Py_ssize_t i, n = hr.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty(n, dtype=np.float64)
    cdef double dr, di, scale = 1.0 / (2.0 * variance)
    for i in range(n):
        dr = hr[i] - z_re
        di = hi[i] - z_im
        out[i] = -(dr * dr + di * di) * scale
    return out


def adam_step(param, grad, m, v, double lr, double beta1, double beta2, double eps,
              double c1, double c2, double sign):
    """Single-pass fused Adam update; returns new (param, m, v) arrays."""
    shape = np.shape(param)
    cdef double[::1] p = np.ascontiguousarray(param, dtype=np.float64).ravel()
    cdef double[::1] g = np.ascontiguousarray(grad, dtype=np.float64).ravel()
    cdef double[::1] mm = np.ascontiguousarray(m, dtype=np.float64).ravel()
    cdef double[::1] vv = np.ascontiguousarray(v, dtype=np.float64).ravel()
    cdef Py_ssize_t n = p.shape[0], i
    if g.shape[0] != n or mm.shape[0] != n or vv.shape[0] != n:
        raise ValueError("adam_step arrays must have equal sizes")
    out_p = np.empty(n, dtype=np.float64)
    out_m = np.empty(n, dtype=np.float64)
    out_v = np.empty(n, dtype=np.float64)
    cdef double[::1] op = out_p
    cdef double[::1] om = out_m
    cdef double[::1] ov = out_v
    cdef double gi, mi, vi
    cdef double step = sign * lr / c1, inv_c2 = 1.0 / c2
    cdef double b1c = 1.0 - beta1, b2c = 1.0 - beta2
    with nogil:
        for i in range(n):
            gi = g[i]
            mi = beta1 * mm[i] + b1c * gi
            vi = beta2 * vv[i] + b2c * gi * gi
            om[i] = mi
            ov[i] = vi
            op[i] = p[i] + step * mi / (sqrt(vi * inv_c2) + eps)
    return out_p.reshape(shape), out_m.reshape(shape), out_v.reshape(shape)


def polyak(target, online, double tau):
    shape = np.shape(target)
    cdef double[::1] t = np.ascontiguousarray(target, dtype=np.float64).ravel()
    cdef double[::1] o = np.ascontiguousarray(online, dtype=np.float64).ravel()
    cdef Py_ssize_t n = t.shape[0], i
    if o.shape[0] != n:
        raise ValueError("polyak arrays must have equal sizes")
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] r = out
    with nogil:
        for i in range(n):
            r[i] = tau * o[i] + (1.0 - tau) * t[i]
    return out.reshape(shape)
