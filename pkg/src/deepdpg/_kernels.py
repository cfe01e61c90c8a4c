"""Fused loops for the memory-bound parts of a training step.

Each kernel does in one pass what would take numpy several temporaries.
No fastmath: results are IEEE-deterministic from run to run.
"""

import math

import numpy as np
from numba import njit


@njit(cache=True)
def adam_update(flat, g, m, v, mask, weight_decay, b1, b2, lr_t, eps_t):
    for i in range(flat.size):
        gi = g[i] + weight_decay * mask[i] * flat[i]
        mi = b1 * m[i] + (1.0 - b1) * gi
        vi = b2 * v[i] + (1.0 - b2) * (gi * gi)
        m[i] = mi
        v[i] = vi
        flat[i] -= lr_t * (mi / (math.sqrt(vi) + eps_t))


@njit(cache=True)
def blend(t, s, tau):
    keep = 1.0 - tau
    for i in range(t.size):
        t[i] = keep * t[i] + tau * s[i]


@njit(cache=True)
def batchnorm_train(h, gain, shift, eps):
    """Returns (out, xhat, inv_std, mean, biased var) using batch statistics."""
    n, d = h.shape
    mean = np.zeros(d)
    for r in range(n):
        for j in range(d):
            mean[j] += h[r, j]
    for j in range(d):
        mean[j] /= n
    var = np.zeros(d)
    for r in range(n):
        for j in range(d):
            c = h[r, j] - mean[j]
            var[j] += c * c
    inv_std = np.empty(d)
    for j in range(d):
        var[j] /= n
        inv_std[j] = 1.0 / math.sqrt(var[j] + eps)
    xhat = np.empty((n, d))
    out = np.empty((n, d))
    for r in range(n):
        for j in range(d):
            x = (h[r, j] - mean[j]) * inv_std[j]
            xhat[r, j] = x
            out[r, j] = x * gain[j] + shift[j]
    return out, xhat, inv_std, mean, var


@njit(cache=True)
def batchnorm_train_backward(g, xhat, inv_std, gain):
    """Returns (input grad, gain grad, shift grad) through batch statistics."""
    n, d = g.shape
    dgain = np.zeros(d)
    dshift = np.zeros(d)
    for r in range(n):
        for j in range(d):
            dgain[j] += g[r, j] * xhat[r, j]
            dshift[j] += g[r, j]
    # with dxhat = g * gain: sum(dxhat) = gain*dshift, sum(dxhat*xhat) = gain*dgain
    dx = np.empty((n, d))
    for r in range(n):
        for j in range(d):
            dx[r, j] = (inv_std[j] * gain[j] / n) * (n * g[r, j] - dshift[j] - xhat[r, j] * dgain[j])
    return dx, dgain, dshift
