"""Closed-form E-step expectations of the augmentation variables.

The hinge and epsilon-insensitive losses augment with generalized inverse
Gaussian variables whose inverse has an inverse-Gaussian posterior; only its
mean enters the M-step.  The logistic loss augments with Polya-Gamma
variables; again only the posterior mean is needed.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

#: Floor applied to second moments before the square root.
MOMENT_FLOOR = 1e-12


@dataclass(frozen=True)
class Reweights:
    gamma: np.ndarray
    delta: np.ndarray | None = None


def _floored(second_moment):
    return np.maximum(np.asarray(second_moment, dtype=float), MOMENT_FLOOR)


def gamma_hinge(c, second_moment):
    """E[1/lambda] = 1 / (c * sqrt(E[zeta^2])), vectorized over examples."""
    out = 1.0 / (np.asarray(c, dtype=float) * np.sqrt(_floored(second_moment)))
    return out if out.ndim else float(out)


def gamma_delta_svr(c, m_minus, m_plus):
    """Inverse means for the two augmentations of the epsilon-tube loss.

    ``m_minus`` is E[(Delta - eps)^2], ``m_plus`` is E[(Delta + eps)^2].
    """
    return gamma_hinge(c, m_minus), gamma_hinge(c, m_plus)


def gamma_logistic(c, second_moment):
    """Polya-Gamma posterior mean E[lambda] for PG(c, z), z = sqrt(E[omega^2]).

    Evaluated as (c / 2z) * tanh(z / 2), which equals the exponential ratio
    form but cannot overflow; tends to c/4 as z -> 0.
    """
    c = np.asarray(c, dtype=float)
    z = np.sqrt(np.maximum(np.asarray(second_moment, dtype=float), 0.0))
    small = z < 1e-4
    zs = np.where(small, 1.0, z)
    # tanh(z/2)/(2z) = 1/4 - z^2/48 + O(z^4)
    ratio = np.where(small, 0.25 - z * z / 48.0, np.tanh(zs / 2.0) / (2.0 * zs))
    out = c * ratio
    return out if out.ndim else float(out)


def log_cosh_half(z):
    """log(cosh(z / 2)) without overflow."""
    a = np.abs(np.asarray(z, dtype=float)) / 2.0
    return a + np.log1p(np.exp(-2.0 * a)) - np.log(2.0)


def pg_tilt_from_mean(c, gamma):
    """Invert gamma = (c/2t) tanh(t/2) for the tilt t >= 0.

    Used to evaluate the logistic bound at reweights that are not the
    E-step optimum.  ``gamma`` must lie in (0, c/4].
    """
    from scipy.optimize import brentq

    gamma = np.atleast_1d(np.asarray(gamma, dtype=float))
    c = np.broadcast_to(np.asarray(c, dtype=float), gamma.shape)
    out = np.empty_like(gamma)
    for i, (ci, g) in enumerate(zip(c, gamma)):
        if g >= ci / 4.0:
            out[i] = 0.0
            continue
        hi = 1.0
        while gamma_logistic(ci, hi * hi) > g:
            hi *= 2.0
        out[i] = brentq(lambda t: gamma_logistic(ci, t * t) - g, 0.0, hi, xtol=1e-14, rtol=1e-14)
    return out
