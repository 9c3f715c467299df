"""Finite-difference fallbacks used wherever analytic derivatives are absent.

Conventions:
  * First derivatives use central differences with per-component step
    ``base_step() * max(1, |x|_inf)``.  The base step defaults to 1e-6 and
    can be overridden globally through the ``ALGEBROMECH_FD_STEP``
    environment variable.
  * Second derivatives of a scalar function are taken directly from the
    function values (3/4-point stencils) with a larger step, default
    1e-4 * max(1, |x|_inf).  Differencing an already finite-differenced
    gradient would amplify its roundoff noise by 1/h; the direct stencil
    keeps the error at O(h^2 + eps/h^2).
"""

import os

import numpy as np

from .errors import InputError

DEFAULT_STEP = 1e-6
DEFAULT_HESS_STEP = 1e-4

_ENV_VAR = "ALGEBROMECH_FD_STEP"


def base_step():
    """Global first-derivative base step, honoring ALGEBROMECH_FD_STEP."""
    raw = os.environ.get(_ENV_VAR)
    if raw is None:
        return DEFAULT_STEP
    try:
        step = float(raw)
    except ValueError:
        raise InputError(f"{_ENV_VAR} must be a positive float, got {raw!r}")
    if not step > 0:
        raise InputError(f"{_ENV_VAR} must be positive, got {step}")
    return step


def _scale(x):
    return max(1.0, float(np.max(np.abs(x)))) if x.size else 1.0


def grad(f, x, step=None):
    """Central-difference gradient of scalar f at x (1d array)."""
    x = np.asarray(x, dtype=float)
    h = (step if step is not None else base_step()) * _scale(x)
    g = np.empty(x.size)
    xp = x.copy()
    for k in range(x.size):
        xk = x[k]
        xp[k] = xk + h
        fp = f(xp)
        xp[k] = xk - h
        fm = f(xp)
        xp[k] = xk
        g[k] = (fp - fm) / (2.0 * h)
    return g


def jacobian(f, x, step=None):
    """Central-difference Jacobian of vector/array-valued f at x.

    Output shape is ``f(x).shape + x.shape``; the derivative index comes last.
    """
    x = np.asarray(x, dtype=float)
    h = (step if step is not None else base_step()) * _scale(x)
    f0 = np.asarray(f(x), dtype=float)
    jac = np.empty(f0.shape + (x.size,))
    xp = x.copy()
    for k in range(x.size):
        xk = x[k]
        xp[k] = xk + h
        fp = np.asarray(f(xp), dtype=float)
        xp[k] = xk - h
        fm = np.asarray(f(xp), dtype=float)
        xp[k] = xk
        jac[..., k] = (fp - fm) / (2.0 * h)
    return jac


def hessian(f, x, step=None):
    """Symmetric Hessian of scalar f at x, from function values only."""
    x = np.asarray(x, dtype=float)
    h = (step if step is not None else DEFAULT_HESS_STEP) * _scale(x)
    n = x.size
    out = np.empty((n, n))
    xp = x.copy()
    f0 = f(xp)
    for i in range(n):
        xi = xp[i]
        xp[i] = xi + h
        fp = f(xp)
        xp[i] = xi - h
        fm = f(xp)
        xp[i] = xi
        out[i, i] = (fp - 2.0 * f0 + fm) / (h * h)
        for j in range(i + 1, n):
            xj = xp[j]
            xp[i] = xi + h
            xp[j] = xj + h
            fpp = f(xp)
            xp[j] = xj - h
            fpm = f(xp)
            xp[i] = xi - h
            fmm = f(xp)
            xp[j] = xj + h
            fmp = f(xp)
            xp[i] = xi
            xp[j] = xj
            val = (fpp - fpm - fmp + fmm) / (4.0 * h * h)
            out[i, j] = val
            out[j, i] = val
    return out


def cross_hessian(f, x, y, step=None):
    """Mixed block d^2 f / dx dy of scalar f(x, y); shape (len(x), len(y))."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    h = step if step is not None else DEFAULT_HESS_STEP
    hx = h * _scale(x)
    hy = h * _scale(y)
    out = np.empty((x.size, y.size))
    xp = x.copy()
    yp = y.copy()
    for i in range(x.size):
        xi = xp[i]
        for j in range(y.size):
            yj = yp[j]
            xp[i] = xi + hx
            yp[j] = yj + hy
            fpp = f(xp, yp)
            yp[j] = yj - hy
            fpm = f(xp, yp)
            xp[i] = xi - hx
            fmm = f(xp, yp)
            yp[j] = yj + hy
            fmp = f(xp, yp)
            xp[i] = xi
            yp[j] = yj
            out[i, j] = (fpp - fpm - fmp + fmm) / (4.0 * hx * hy)
    return out
