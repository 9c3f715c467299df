"""Lagrangians on algebroid fibers: derivatives, Legendre data, Routhians.

A ``LagrangianModel`` wraps L(q, xi) together with its first derivatives and
optional fiber Hessians.  Missing derivatives are filled with central
finite differences of the value function; missing Hessians differentiate
the analytic gradient when one was supplied, and otherwise use direct
second-difference stencils on the value (see ``fd``).
"""

import warnings
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import fd
from .algebroid import AlgebroidModel, tangent_bundle, vertical_bundle
from .errors import InputError, RegularityError, SolveError

__all__ = [
    "LagrangianModel",
    "RouthianInput",
    "make_lagrangian",
    "legendre",
    "energy",
    "mass_matrix",
    "make_routhian",
    "check_gradient_consistency",
    "REGULARITY_THRESHOLD",
]

REGULARITY_THRESHOLD = 1e12


@dataclass(frozen=True)
class LagrangianModel:
    """L: A -> R with first derivatives and optional fiber Hessians.

    ``analytic_gradients`` records whether grad_q/grad_xi were supplied by
    the caller (True) or are finite-difference fallbacks (False); the
    Hessian fallback strategy depends on it.  Use ``make_lagrangian``
    instead of constructing this directly.
    """

    algebroid: AlgebroidModel
    eval: Callable[[np.ndarray, np.ndarray], float]
    grad_q: Callable[[np.ndarray, np.ndarray], np.ndarray]
    grad_xi: Callable[[np.ndarray, np.ndarray], np.ndarray]
    hess_xi_xi: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None
    hess_xi_q: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None
    label: str = ""
    analytic_gradients: bool = True

    def check_args(self, q, xi):
        q = self.algebroid.check_point(q)
        xi = np.asarray(xi, dtype=float)
        if xi.shape != (self.algebroid.fiber_dim,):
            raise InputError(
                f"fiber vector must have shape ({self.algebroid.fiber_dim},) for "
                f"{self.label or 'Lagrangian'}, got {xi.shape}"
            )
        return q, xi


def make_lagrangian(
    algebroid,
    value,
    grad_q=None,
    grad_xi=None,
    hess_xi_xi=None,
    hess_xi_q=None,
    label="",
):
    """Build a LagrangianModel, wiring FD fallbacks for missing derivatives."""
    analytic = grad_q is not None and grad_xi is not None
    if grad_q is None:
        grad_q = lambda q, xi: fd.grad(lambda p: value(p, xi), q)
    if grad_xi is None:
        grad_xi = lambda q, xi: fd.grad(lambda v: value(q, v), xi)
    return LagrangianModel(
        algebroid=algebroid,
        eval=value,
        grad_q=grad_q,
        grad_xi=grad_xi,
        hess_xi_xi=hess_xi_xi,
        hess_xi_q=hess_xi_q,
        label=label,
        analytic_gradients=analytic,
    )


def legendre(L, q, xi):
    """Fiber derivative p = dL/dxi at (q, xi)."""
    q, xi = L.check_args(q, xi)
    return np.asarray(L.grad_xi(q, xi), dtype=float)


def energy(L, q, xi):
    """E(q, xi) = <dL/dxi, xi> - L(q, xi)."""
    q, xi = L.check_args(q, xi)
    return float(np.dot(L.grad_xi(q, xi), xi) - L.eval(q, xi))


def fiber_hessian(L, q, xi):
    """The fiber Hessian d^2 L / dxi dxi, without the regularity gate."""
    if L.hess_xi_xi is not None:
        return np.asarray(L.hess_xi_xi(q, xi), dtype=float)
    if L.analytic_gradients:
        M = fd.jacobian(lambda v: L.grad_xi(q, v), xi)
        return 0.5 * (M + M.T)
    return fd.hessian(lambda v: L.eval(q, v), xi)


def mixed_hessian(L, q, xi):
    """The mixed block d^2 L / dxi dq, shape (m, n)."""
    if L.hess_xi_q is not None:
        return np.asarray(L.hess_xi_q(q, xi), dtype=float)
    if L.algebroid.base_dim == 0:
        return np.zeros((L.algebroid.fiber_dim, 0))
    if L.analytic_gradients:
        return fd.jacobian(lambda p: L.grad_xi(p, xi), q)
    return fd.cross_hessian(lambda v, p: L.eval(p, v), xi, q)


def mass_matrix(L, q, xi, threshold=REGULARITY_THRESHOLD):
    """Fiber Hessian plus a condition estimate; raises if degenerate.

    Returns (M, cond).  A condition estimate above ``threshold`` (or a
    non-finite one) means the Legendre transform is not invertible there
    and the dynamics are not an explicit ODE.
    """
    q, xi = L.check_args(q, xi)
    M = fiber_hessian(L, q, xi)
    cond = float(np.linalg.cond(M))
    if not np.isfinite(cond) or cond > threshold:
        raise RegularityError(
            f"{L.label or 'Lagrangian'} is irregular at q={q.tolist()}, "
            f"xi={xi.tolist()}: fiber Hessian condition estimate {cond:.3e}"
        )
    return M, cond


def check_gradient_consistency(L, samples, rtol=1e-5):
    """Max relative mismatch between stored gradients and FD of the value.

    ``samples`` is an iterable of (q, xi) pairs.  Only meaningful when the
    gradients are analytic; FD fallbacks agree with themselves trivially.
    """
    worst = 0.0
    for q, xi in samples:
        q, xi = L.check_args(q, xi)
        gq = np.asarray(L.grad_q(q, xi), dtype=float)
        gx = np.asarray(L.grad_xi(q, xi), dtype=float)
        fq = fd.grad(lambda p: L.eval(p, xi), q)
        fx = fd.grad(lambda v: L.eval(q, v), xi)
        scale = max(1.0, float(np.max(np.abs(gq), initial=0.0)),
                    float(np.max(np.abs(gx), initial=0.0)))
        err = max(
            float(np.max(np.abs(gq - fq), initial=0.0)),
            float(np.max(np.abs(gx - fx), initial=0.0)),
        )
        worst = max(worst, err / scale)
    if worst > rtol:
        raise InputError(
            f"gradients of {L.label or 'Lagrangian'} disagree with finite "
            f"differences of the value: relative error {worst:.3e} > {rtol:.0e}"
        )
    return worst


@dataclass(frozen=True)
class RouthianInput:
    """Data for partial Legendre reduction of a cyclic Lagrangian.

    ``full_lagrangian`` lives on tangent_bundle(n_cyclic + m) with the
    cyclic angle coordinates first; its value must not depend on them.
    ``momentum`` holds the conserved momenta conjugate to the cyclic
    velocities, and ``theta_dot_guess`` seeds the Newton solve of the
    momentum constraint.
    """

    full_lagrangian: LagrangianModel
    n_cyclic: int
    momentum: np.ndarray
    theta_dot_guess: np.ndarray

    def __post_init__(self):
        k = self.n_cyclic
        n = self.full_lagrangian.algebroid.base_dim
        if not (1 <= k <= n):
            raise InputError(f"n_cyclic must be in 1..{n}, got {k}")
        if self.full_lagrangian.algebroid.fiber_dim != n:
            raise InputError("full_lagrangian must live on a tangent bundle")
        x = np.asarray(self.momentum, dtype=float)
        g = np.asarray(self.theta_dot_guess, dtype=float)
        if x.shape != (k,) or g.shape != (k,):
            raise InputError(
                f"momentum and theta_dot_guess must have shape ({k},), "
                f"got {x.shape} and {g.shape}"
            )
        object.__setattr__(self, "momentum", x)
        object.__setattr__(self, "theta_dot_guess", g)

    @property
    def shape_dim(self):
        return self.full_lagrangian.algebroid.base_dim - self.n_cyclic


def check_cyclicity(inp, samples, tol=1e-10):
    """Verify dL/dtheta vanishes at the given (q, xi) sample points."""
    L = inp.full_lagrangian
    worst = 0.0
    for q, xi in samples:
        q, xi = L.check_args(q, xi)
        worst = max(
            worst,
            float(np.max(np.abs(np.asarray(L.grad_q(q, xi))[: inp.n_cyclic]))),
        )
    if worst > tol:
        raise InputError(
            f"Lagrangian is not cyclic in its first {inp.n_cyclic} coordinates: "
            f"|dL/dtheta| = {worst:.3e} > {tol:.0e}"
        )
    return worst


class _MomentumConstraintSolver:
    """Newton solver for x_s = dL/dthetadot_s, with a warm-started branch.

    The warm start makes the solver follow one solution branch continuously
    from ``theta_dot_guess``; it never hops branches of a non-convex
    constraint.  Not thread-safe: each trajectory integration should own
    its own Routhian (rebuild via ``make_routhian``, it is cheap).
    """

    def __init__(self, inp, tol=1e-12, max_iter=50):
        self.L = inp.full_lagrangian
        self.k = inp.n_cyclic
        self.warm = inp.theta_dot_guess.copy()
        self.tol = tol
        self.max_iter = max_iter
        self.last_iterations = 0
        self._warned_near_singular = False

    def solve(self, x, q_full, ydot):
        k = self.k
        td = self.warm.copy()
        xi = np.concatenate([td, ydot])
        for it in range(self.max_iter + 1):
            xi[:k] = td
            g = np.asarray(self.L.grad_xi(q_full, xi), dtype=float)[:k] - x
            if np.max(np.abs(g)) <= self.tol * max(1.0, np.max(np.abs(x))):
                self.last_iterations = it
                self.warm = td.copy()
                return td
            if it == self.max_iter:
                break
            J = fiber_hessian(self.L, q_full, xi)[:k, :k]
            cond = np.linalg.cond(J)
            if not np.isfinite(cond) or cond > REGULARITY_THRESHOLD:
                raise RegularityError(
                    f"momentum constraint has singular theta-dot Hessian at "
                    f"q={q_full.tolist()} (condition {cond:.3e})"
                )
            if cond > 1e8 and not self._warned_near_singular:
                self._warned_near_singular = True
                warnings.warn(
                    "momentum constraint Hessian is near-singular "
                    f"(condition {cond:.3e}); the solved branch may be "
                    "ill-determined",
                    RuntimeWarning,
                )
            td = td - np.linalg.solve(J, g)
        raise SolveError(
            f"momentum constraint Newton solve did not converge in "
            f"{self.max_iter} iterations (|residual| = {np.max(np.abs(g)):.3e})"
        )


def make_routhian(inp, newton_tol=1e-12, max_iter=50, label=""):
    """Partial Legendre transform of a cyclic Lagrangian at fixed momentum.

    Returns a Lagrangian on ``vertical_bundle(k, m)`` whose base
    coordinates are (x, y), with the conserved momenta x frozen along
    vertical paths, and whose fiber coordinates are ydot.  Each evaluation
    solves the constraint x_s = dL/dthetadot_s for the cyclic velocities
    (warm-started Newton) and returns L - x . thetadot.

    Derivatives of the result are finite differences through the
    constrained value; the defining constraint makes the value first-order
    insensitive to the solve tolerance, so the usual FD accuracy applies.
    """
    L = inp.full_lagrangian
    k = inp.n_cyclic
    m = inp.shape_dim
    if m < 1:
        raise InputError("Routhian needs at least one non-cyclic coordinate")
    solver = _MomentumConstraintSolver(inp, tol=newton_tol, max_iter=max_iter)
    vq = vertical_bundle(k, m, label=f"routh_base({L.label})" if L.label else None)

    def value(q, ydot):
        x = q[:k]
        q_full = np.concatenate([np.zeros(k), q[k:]])
        td = solver.solve(x, q_full, ydot)
        xi_full = np.concatenate([td, ydot])
        return float(L.eval(q_full, xi_full) - np.dot(x, td))

    value.solver = solver  # exposed for iteration-count introspection
    return make_lagrangian(
        vq,
        value,
        label=label or (f"routhian({L.label})" if L.label else "routhian"),
    )
