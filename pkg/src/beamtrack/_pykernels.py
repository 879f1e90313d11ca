"""Pure-Python/numpy implementations of the hot numerical kernels.

This module is the reference the compiled ``_ckernels`` extension must agree
with. It is selected automatically when the extension is not built.
"""
import cmath
import math

import numpy as np

# Below this |sin(psi/2)| the closed Dirichlet form loses relative precision.
_SINGULAR_TOL = 1e-6
_TWO_PI = 2.0 * math.pi


def dirichlet(delta, M, d_over_lambda):
    """(1/M) * sum_m exp(j*2*pi*d*m*delta) for a scalar cosine difference."""
    psi = 2.0 * math.pi * d_over_lambda * delta
    # exp(j*psi*m) is 2*pi periodic in psi; reducing keeps sin(psi/2) accurate
    psi -= _TWO_PI * round(psi / _TWO_PI)
    half = 0.5 * psi
    s = math.sin(half)
    if abs(s) < _SINGULAR_TOL:
        acc = 0j
        for m in range(M):
            acc += cmath.exp(1j * psi * m)
        return acc / M
    ratio = math.sin(M * half) / (M * s)
    phase = (M - 1) * half
    return complex(ratio * math.cos(phase), ratio * math.sin(phase))


def dirichlet_array(delta, M, d_over_lambda):
    delta = np.asarray(delta, dtype=np.float64)
    psi = 2.0 * np.pi * d_over_lambda * delta
    psi = psi - _TWO_PI * np.round(psi / _TWO_PI)
    half = 0.5 * psi
    s = np.sin(half)
    out = np.empty(delta.shape, dtype=np.complex128)
    regular = np.abs(s) >= _SINGULAR_TOL
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.sin(M * half) / (M * s)
    phase = (M - 1) * half
    out[regular] = ratio[regular] * np.exp(1j * phase[regular])
    if not regular.all():
        m = np.arange(M)
        near = psi[~regular]
        out[~regular] = np.exp(1j * np.outer(near, m)).sum(axis=1) / M
    return out


def path_response(gain_re, gain_im, cos_a, cos_d, cos_bar_a, cos_bar_d,
                  n_r, n_t, d_over_lambda):
    """Sum over paths of alpha_l * g_r(l) * conj(g_t(l))."""
    total = 0j
    for i in range(len(gain_re)):
        g_r = dirichlet(cos_a[i] - cos_bar_a, n_r, d_over_lambda)
        g_t = dirichlet(cos_d[i] - cos_bar_d, n_t, d_over_lambda)
        total += complex(gain_re[i], gain_im[i]) * g_r * g_t.conjugate()
    return total


def systematic_resample(weights, u0):
    """Indices drawn by systematic resampling with offset ``u0`` in [0, 1)."""
    weights = np.asarray(weights, dtype=np.float64)
    n = weights.shape[0]
    positions = (u0 + np.arange(n)) / n
    cumulative = np.cumsum(weights)
    cumulative[-1] = 1.0
    return np.searchsorted(cumulative, positions, side="right").astype(np.intp)


def gaussian_logweights(h_re, h_im, z_re, z_im, variance):
    """Log-likelihood (up to a constant) of a complex observation per particle."""
    dr = np.asarray(h_re) - z_re
    di = np.asarray(h_im) - z_im
    return -(dr * dr + di * di) / (2.0 * variance)


def adam_step(param, grad, m, v, lr, beta1, beta2, eps, c1, c2, sign):
    """Fused Adam moment update; returns new (param, m, v) arrays."""
    m2 = beta1 * m + (1.0 - beta1) * grad
    v2 = beta2 * v + (1.0 - beta2) * grad * grad
    p2 = param + (sign * lr / c1) * m2 / (np.sqrt(v2 * (1.0 / c2)) + eps)
    return p2, m2, v2


def polyak(target, online, tau):
    return tau * online + (1.0 - tau) * target
