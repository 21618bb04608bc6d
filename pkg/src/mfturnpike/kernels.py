"""Smooth pair kernels W(z) = (kappa/2)|z|^2 + gamma s^2 exp(-|z|^2 / (2 s^2)) and their derivatives.

All functions act on the last axis of ``z`` and broadcast over leading axes.
"""

import numpy as np


def _gauss(z, s):
    return np.exp(-np.sum(z * z, axis=-1) / (2.0 * s * s))


def value(z, kappa, gamma, s):
    r2 = np.sum(z * z, axis=-1)
    return 0.5 * kappa * r2 + gamma * s * s * np.exp(-r2 / (2.0 * s * s))


def grad(z, kappa, gamma, s):
    g = _gauss(z, s)
    return kappa * z - gamma * z * g[..., None]


def hess(z, kappa, gamma, s):
    d = z.shape[-1]
    g = _gauss(z, s)[..., None, None]
    eye = np.eye(d)
    zz = z[..., :, None] * z[..., None, :]
    return kappa * eye - gamma * (eye - zz / (s * s)) * g


def third(z, kappa, gamma, s):
    # d^3 W / dz_a dz_b dz_c; the quadratic part contributes nothing
    d = z.shape[-1]
    g = _gauss(z, s)[..., None, None, None]
    eye = np.eye(d)
    za = z[..., :, None, None]
    zb = z[..., None, :, None]
    zc = z[..., None, None, :]
    t = (eye[:, None, :] * zb + eye[None, :, :] * za + eye[:, :, None] * zc
         - za * zb * zc / (s * s))
    return gamma * g / (s * s) * t
