"""Lie algebroids in a single coordinate chart.

A model consists of base coordinates q in R^n (n = 0 is allowed and gives a
Lie algebra over a point), a local frame of m sections e_I of the bundle, an
anchor matrix rho(q) of shape (n, m) with entries rho^i_I = column I mapped
to the i-th base direction, and structure functions C(q) of shape
(m, m, m) storing the frame brackets [e_I, e_J] = C^K_IJ e_K.

Index convention, fixed package-wide: the structure tensor is stored
output-first as C[K, I, J].  This matches the contraction C^K_IJ xi^J that
appears on the right-hand side of the equations of motion.

Everything is presented on an open subset of R^n; there is no atlas or
transition machinery.  Models may declare a validity box (``chart_box``)
that integrators refuse to leave.

All models are immutable after construction and every operation here is a
pure function, so models can be shared freely between threads.
"""

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import fd
from .errors import ConstructionError, InputError

__all__ = [
    "AlgebroidModel",
    "StructureResiduals",
    "anchor_eval",
    "structure_eval",
    "check_structure_identities",
    "tangent_bundle",
    "lie_algebra",
    "vertical_bundle",
    "atiyah_trivial",
    "levi_civita_tensor",
]


@dataclass(frozen=True)
class AlgebroidModel:
    """A Lie algebroid over a chart of R^n with an m-dimensional fiber.

    ``anchor_jacobian`` and ``structure_jacobian`` are optional analytic
    derivatives (index order: derivative index last).  When absent, the
    structure-identity checks fall back to central finite differences.
    """

    base_dim: int
    fiber_dim: int
    anchor: Callable[[np.ndarray], np.ndarray]
    structure: Callable[[np.ndarray], np.ndarray]
    anchor_jacobian: Optional[Callable[[np.ndarray], np.ndarray]] = None
    structure_jacobian: Optional[Callable[[np.ndarray], np.ndarray]] = None
    label: str = ""
    chart_box: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        if self.base_dim < 0:
            raise InputError(f"base_dim must be >= 0, got {self.base_dim}")
        if self.fiber_dim < 1:
            raise InputError(f"fiber_dim must be >= 1, got {self.fiber_dim}")
        if self.chart_box is not None:
            box = np.asarray(self.chart_box, dtype=float)
            if box.shape != (self.base_dim, 2):
                raise InputError(
                    f"chart_box must have shape ({self.base_dim}, 2), got {box.shape}"
                )
            object.__setattr__(self, "chart_box", box)

    def check_point(self, q):
        q = np.asarray(q, dtype=float)
        if q.shape != (self.base_dim,):
            raise InputError(
                f"base point must have shape ({self.base_dim},) for "
                f"{self.label or 'algebroid'}, got {q.shape}"
            )
        return q

    def in_chart(self, q):
        if self.chart_box is None:
            return True
        return bool(
            np.all(q >= self.chart_box[:, 0]) and np.all(q <= self.chart_box[:, 1])
        )


@dataclass(frozen=True)
class StructureResiduals:
    """Max-norm residuals of the three defining identities at one point."""

    antisymmetry: float
    anchor_compat: float
    jacobi: float

    def max(self):
        return max(self.antisymmetry, self.anchor_compat, self.jacobi)


def anchor_eval(model, q):
    """Evaluate the anchor matrix rho(q), shape (n, m)."""
    q = model.check_point(q)
    rho = np.asarray(model.anchor(q), dtype=float)
    if rho.shape != (model.base_dim, model.fiber_dim):
        raise InputError(
            f"anchor of {model.label or 'algebroid'} returned shape {rho.shape}, "
            f"expected ({model.base_dim}, {model.fiber_dim})"
        )
    return rho


def structure_eval(model, q):
    """Evaluate the structure tensor C(q), shape (m, m, m), index (K, I, J)."""
    q = model.check_point(q)
    m = model.fiber_dim
    C = np.asarray(model.structure(q), dtype=float)
    if C.shape != (m, m, m):
        raise InputError(
            f"structure of {model.label or 'algebroid'} returned shape {C.shape}, "
            f"expected ({m}, {m}, {m})"
        )
    return C


def _anchor_jac(model, q, fd_step):
    if model.anchor_jacobian is not None:
        return np.asarray(model.anchor_jacobian(q), dtype=float)
    return fd.jacobian(lambda p: anchor_eval(model, p), q, step=fd_step)


def _structure_jac(model, q, fd_step):
    if model.structure_jacobian is not None:
        return np.asarray(model.structure_jacobian(q), dtype=float)
    return fd.jacobian(lambda p: structure_eval(model, p), q, step=fd_step)


def check_structure_identities(model, q, fd_step=1e-5):
    """Residuals of antisymmetry, anchor compatibility, and Jacobi at q.

    With analytic Jacobians on the model the residuals are exact
    evaluations of the identities; otherwise central differences with step
    ``fd_step * max(1, |q|_inf)`` are used, and the residuals carry an
    O(fd_step^2) truncation floor.
    """
    if fd_step <= 0:
        raise InputError(f"fd_step must be positive, got {fd_step}")
    q = model.check_point(q)
    rho = anchor_eval(model, q)
    C = structure_eval(model, q)

    antisym = float(np.max(np.abs(C + np.swapaxes(C, 1, 2))))

    if model.base_dim == 0:
        # No base directions: both derivative identities lose their rho
        # terms, anchor compatibility is vacuous, and Jacobi is algebraic.
        anchor_res = 0.0
        jac_term = np.einsum("nim,mjk->nijk", C, C)
    else:
        drho = _anchor_jac(model, q, fd_step)  # (n, m, n): d rho^i_I / d q^j
        dC = _structure_jac(model, q, fd_step)  # (m, m, m, n)
        lie = np.einsum("ja,ibj->iab", rho, drho)
        compat = lie - np.swapaxes(lie, 1, 2) - np.einsum("ik,kab->iab", rho, C)
        anchor_res = float(np.max(np.abs(compat)))
        jac_term = np.einsum("ia,nbci->nabc", rho, dC) + np.einsum(
            "nam,mbc->nabc", C, C
        )
    jacobi = (
        jac_term
        + np.transpose(jac_term, (0, 2, 3, 1))
        + np.transpose(jac_term, (0, 3, 1, 2))
    )
    return StructureResiduals(
        antisymmetry=antisym,
        anchor_compat=anchor_res,
        jacobi=float(np.max(np.abs(jacobi))),
    )


def _zero_jacobians(n, m):
    drho = np.zeros((n, m, n))
    dC = np.zeros((m, m, m, n))
    return (lambda q: drho), (lambda q: dC)


def tangent_bundle(n, label=None):
    """The tangent bundle of R^n: identity anchor, commuting frame."""
    if n < 1:
        raise InputError(f"tangent_bundle needs n >= 1, got {n}")
    rho = np.eye(n)
    C = np.zeros((n, n, n))
    drho, dC = _zero_jacobians(n, n)
    return AlgebroidModel(
        base_dim=n,
        fiber_dim=n,
        anchor=lambda q: rho,
        structure=lambda q: C,
        anchor_jacobian=drho,
        structure_jacobian=dC,
        label=label or f"tangent_bundle({n})",
    )


def _validate_algebra_tensor(c, tol=1e-12):
    c = np.asarray(c, dtype=float)
    if c.ndim != 3 or len(set(c.shape)) != 1:
        raise ConstructionError(f"algebra tensor must be cubic, got shape {c.shape}")
    antisym = float(np.max(np.abs(c + np.swapaxes(c, 1, 2)))) if c.size else 0.0
    if antisym > tol:
        raise ConstructionError(
            f"algebra tensor is not antisymmetric in its lower indices "
            f"(residual {antisym:.3e} > {tol:.0e})"
        )
    quad = np.einsum("nam,mbc->nabc", c, c)
    jacobi = (
        quad + np.transpose(quad, (0, 2, 3, 1)) + np.transpose(quad, (0, 3, 1, 2))
    )
    jac = float(np.max(np.abs(jacobi))) if c.size else 0.0
    if jac > tol:
        raise ConstructionError(
            f"algebra tensor violates the Jacobi identity "
            f"(residual {jac:.3e} > {tol:.0e})"
        )
    return c


def lie_algebra(c, label=None):
    """A Lie algebra over a point, from constant structure tensor c[K, I, J]."""
    c = _validate_algebra_tensor(c)
    m = c.shape[0]
    rho = np.zeros((0, m))
    drho, dC = _zero_jacobians(0, m)
    return AlgebroidModel(
        base_dim=0,
        fiber_dim=m,
        anchor=lambda q: rho,
        structure=lambda q: c,
        anchor_jacobian=drho,
        structure_jacobian=dC,
        label=label or f"lie_algebra(m={m})",
    )


def vertical_bundle(base_params, fiber_dim, label=None):
    """Vertical bundle of the projection R^k x R^m -> R^k.

    Base coordinates are (x^1..x^k, y^1..y^m); the frame spans the fiber
    directions d/dy^i only, so paths admissible for this model keep x
    frozen (xdot = 0) while y moves.
    """
    k, m = base_params, fiber_dim
    if k < 0 or m < 1:
        raise InputError(f"vertical_bundle needs k >= 0 and m >= 1, got ({k}, {m})")
    n = k + m
    rho = np.vstack([np.zeros((k, m)), np.eye(m)])
    C = np.zeros((m, m, m))
    drho, dC = _zero_jacobians(n, m)
    return AlgebroidModel(
        base_dim=n,
        fiber_dim=m,
        anchor=lambda q: rho,
        structure=lambda q: C,
        anchor_jacobian=drho,
        structure_jacobian=dC,
        label=label or f"vertical_bundle(k={k}, m={m})",
    )


def atiyah_trivial(
    base_dim,
    fiber_algebra,
    connection_form,
    connection_jacobian=None,
    label=None,
):
    """Split Atiyah-type algebroid of a trivial principal bundle over R^n.

    The fiber splits into n horizontal directions and d algebra directions:
    the frame is {e_i = (d/dx^i, 0)} followed by {e_A = (0, eps_A)}, where
    eps_A is a basis of the structure algebra with constant tensor
    c[A, B, C].  ``connection_form`` maps x to the (d, n) matrix of
    connection coefficients w^A_i(x).

    The bracket of the splitting assembles the structure functions from the
    connection:

        [e_i, e_j] = -R^A_ij e_A,
            R^A_ij = d_i w^A_j - d_j w^A_i + c^A_BC w^B_i w^C_j,
        [e_i, e_A] = c^B_CA w^C_i e_B,
        [e_A, e_B] = c^C_AB e_C.

    R is the curvature of the connection; the e_i brackets pick up no
    horizontal part because coordinate fields commute.  Each bracket is
    computed once per ordered pair and mirrored, so the antisymmetry of the
    output is exact.

    Without ``connection_jacobian`` the curvature term differentiates w by
    central differences; the resulting structure functions then carry FD
    noise of order eps/step, which limits how sharply downstream identity
    checks can resolve.  Supply the analytic Jacobian (index order
    dw[A, i, j] = d w^A_i / d x^j) whenever it is available.
    """
    c = _validate_algebra_tensor(fiber_algebra)
    d = c.shape[0]
    n = base_dim
    if n < 1:
        raise InputError(f"atiyah_trivial needs base_dim >= 1, got {n}")
    m = n + d
    rho = np.hstack([np.eye(n), np.zeros((n, d))])
    drho_const = np.zeros((n, m, n))

    def omega_at(x):
        w = np.asarray(connection_form(x), dtype=float)
        if w.shape != (d, n):
            raise InputError(
                f"connection form returned shape {w.shape}, expected ({d}, {n})"
            )
        return w

    def domega_at(x):
        if connection_jacobian is not None:
            dw = np.asarray(connection_jacobian(x), dtype=float)
            if dw.shape != (d, n, n):
                raise InputError(
                    f"connection jacobian returned shape {dw.shape}, "
                    f"expected ({d}, {n}, {n})"
                )
            return dw
        return fd.jacobian(omega_at, x)

    def structure(x):
        w = omega_at(x)
        dw = domega_at(x)
        C = np.zeros((m, m, m))
        # curvature block [e_i, e_j]
        for i in range(n):
            for j in range(i + 1, n):
                R = dw[:, j, i] - dw[:, i, j] + np.einsum("abc,b,c->a", c, w[:, i], w[:, j])
                C[n:, i, j] = -R
                C[n:, j, i] = R
        # mixed block [e_i, e_A]: components c^B_CA w^C_i
        for i in range(n):
            for A in range(d):
                val = c[:, :, A] @ w[:, i]
                C[n:, i, n + A] = val
                C[n:, n + A, i] = -val
        # algebra block [e_A, e_B]
        C[n:, n:, n:] = c
        return C

    return AlgebroidModel(
        base_dim=n,
        fiber_dim=m,
        anchor=lambda q: rho,
        structure=structure,
        anchor_jacobian=lambda q: drho_const,
        structure_jacobian=None,
        label=label or f"atiyah_trivial(n={n}, d={d})",
    )


def levi_civita_tensor():
    """The so(3) structure tensor: C[K, I, J] = eps_IJK."""
    eps = np.zeros((3, 3, 3))
    for i, j, k in ((0, 1, 2), (1, 2, 0), (2, 0, 1)):
        eps[k, i, j] = 1.0
        eps[k, j, i] = -1.0
    return eps
