"""Algebroid morphisms and numerical verification of reduction.

A morphism carries a base map phi with Jacobian and a fiberwise linear map
Phi(q).  A necessary coordinate condition for being a morphism is that the
anchors intertwine,

    rho'(phi(q)) Phi(q) = Dphi(q) rho(q),

which ``check_morphism`` evaluates at sample points.  Full bracket
compatibility has no finite pointwise test in this chart-level setting, so
solution-mapping is certified behaviorally: ``reduce_compare`` integrates
the same motion upstairs and downstairs and measures how far the pushed
trajectory drifts from the reduced one.  A morphism that passes the anchor
check but fails the behavioral comparison should be treated as
bracket-compatibility suspect.

``hp_reduce_compare`` does the same for the implicit formulation, pushing
momenta through the inverse transpose of Phi(q) (this needs fiberwise
invertibility).  ``routh_compare`` verifies partial Legendre reduction of a
cyclic system against its Routhian's vertical flow.
"""

import warnings
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import fd
from .algebroid import AlgebroidModel, anchor_eval
from .dynamics import (
    State,
    PontryaginState,
    Trajectory,
    diagnostics,
    hp_integrate,
    integrate,
)
from .errors import InputError, MorphismError
from .lagrangian import RouthianInput, legendre, make_routhian

__all__ = [
    "AlgebroidMorphism",
    "MorphismResiduals",
    "ComparisonReport",
    "RouthComparisonReport",
    "check_morphism",
    "check_invariance",
    "push_trajectory",
    "reduce_compare",
    "hp_reduce_compare",
    "routh_compare",
]

INVARIANCE_WARN_TOL = 1e-8
FIBER_CONDITION_LIMIT = 1e12


@dataclass(frozen=True)
class AlgebroidMorphism:
    """A bundle map between chart models: base map phi plus fiber map Phi(q).

    ``fiberwise_invertible`` declares that Phi(q) is square and invertible
    on the relevant chart region; this is required for pushing momenta in
    the implicit formulation.
    """

    source: AlgebroidModel
    target: AlgebroidModel
    base_map: Callable[[np.ndarray], np.ndarray]
    fiber_map: Callable[[np.ndarray], np.ndarray]
    base_jacobian: Optional[Callable[[np.ndarray], np.ndarray]] = None
    fiberwise_invertible: bool = False
    label: str = ""

    def __post_init__(self):
        if self.fiberwise_invertible and (
            self.source.fiber_dim != self.target.fiber_dim
        ):
            raise InputError(
                "fiberwise invertibility needs equal fiber dimensions, got "
                f"{self.source.fiber_dim} and {self.target.fiber_dim}"
            )

    def phi(self, q):
        q = self.source.check_point(q)
        out = np.asarray(self.base_map(q), dtype=float)
        if out.shape != (self.target.base_dim,):
            raise MorphismError(
                f"base map returned shape {out.shape}, expected "
                f"({self.target.base_dim},)"
            )
        return out

    def dphi(self, q):
        q = self.source.check_point(q)
        if self.base_jacobian is not None:
            J = np.asarray(self.base_jacobian(q), dtype=float)
        else:
            J = fd.jacobian(self.phi, q)
        if J.shape != (self.target.base_dim, self.source.base_dim):
            raise MorphismError(
                f"base Jacobian has shape {J.shape}, expected "
                f"({self.target.base_dim}, {self.source.base_dim})"
            )
        return J

    def fiber(self, q):
        q = self.source.check_point(q)
        P = np.asarray(self.fiber_map(q), dtype=float)
        if P.shape != (self.target.fiber_dim, self.source.fiber_dim):
            raise MorphismError(
                f"fiber map returned shape {P.shape}, expected "
                f"({self.target.fiber_dim}, {self.source.fiber_dim})"
            )
        return P

    def push_state(self, s: State) -> State:
        return State(t=s.t, q=self.phi(s.q), xi=self.fiber(s.q) @ s.xi)

    def push_momentum(self, q, p):
        if not self.fiberwise_invertible:
            raise MorphismError(
                f"{self.label or 'morphism'} is not flagged fiberwise "
                "invertible; cannot push momenta"
            )
        P = self.fiber(q)
        try:
            return np.linalg.solve(P.T, p)
        except np.linalg.LinAlgError:
            raise MorphismError(
                f"fiber map of {self.label or 'morphism'} is singular at "
                f"q={np.asarray(q).tolist()}"
            )


@dataclass(frozen=True)
class MorphismResiduals:
    anchor_compat: float
    fiber_condition_max: Optional[float] = None

    @property
    def ok(self):
        good = self.anchor_compat <= 1e-10
        if self.fiber_condition_max is not None:
            good = good and self.fiber_condition_max < FIBER_CONDITION_LIMIT
        return good


def check_morphism(mor, samples):
    """Anchor-intertwining residual (and fiber conditioning) over samples.

    This is a necessary condition only; see the module docstring for how
    bracket compatibility is certified.
    """
    worst = 0.0
    cond_max = None
    for q in samples:
        q = mor.source.check_point(q)
        P = mor.fiber(q)
        res = anchor_eval(mor.target, mor.phi(q)) @ P - mor.dphi(q) @ anchor_eval(
            mor.source, q
        )
        worst = max(worst, float(np.max(np.abs(res), initial=0.0)))
        if mor.fiberwise_invertible:
            c = float(np.linalg.cond(P))
            cond_max = c if cond_max is None else max(cond_max, c)
    return MorphismResiduals(anchor_compat=worst, fiber_condition_max=cond_max)


def check_invariance(L, ell, mor, samples):
    """max |L(q, xi) - ell(phi(q), Phi(q) xi)| over (q, xi) samples."""
    worst = 0.0
    for q, xi in samples:
        q, xi = L.check_args(q, xi)
        worst = max(
            worst,
            abs(L.eval(q, xi) - ell.eval(mor.phi(q), mor.fiber(q) @ xi)),
        )
    return worst


def push_trajectory(mor, traj):
    """Node-wise image (phi(q), Phi(q) xi) of a trajectory; times kept."""
    N = traj.n_nodes
    qs = np.empty((N, mor.target.base_dim))
    xis = np.empty((N, mor.target.fiber_dim))
    vs = ps = None
    if traj.ps is not None:
        vs = np.empty_like(xis)
        ps = np.empty_like(xis)
    for k in range(N):
        q = traj.qs[k]
        qs[k] = mor.phi(q)
        P = mor.fiber(q)
        xis[k] = P @ traj.xis[k]
        if ps is not None:
            vs[k] = P @ traj.vs[k]
            ps[k] = mor.push_momentum(q, traj.ps[k])
    meta = dict(traj.meta)
    meta["pushed_through"] = mor.label or "morphism"
    return Trajectory(
        times=traj.times.copy(),
        qs=qs,
        xis=xis,
        vs=vs,
        ps=ps,
        constraint_residuals=None,
        meta=meta,
    )


@dataclass(frozen=True)
class ComparisonReport:
    """Outcome of integrating upstairs and downstairs and comparing."""

    max_deviation: float
    deviations: np.ndarray
    invariance_discrepancy: float
    invariance_suspect: bool
    source_diagnostics: object
    target_diagnostics: object

    def within(self, tolerance):
        return self.max_deviation <= tolerance


def _invariance_samples(mor, q0, xi0, n_samples=20, spread=0.5, seed=20240901):
    rng = np.random.default_rng(seed)
    samples = []
    for _ in range(n_samples):
        q = q0 + spread * rng.uniform(-1.0, 1.0, size=q0.shape)
        if mor.source.chart_box is not None:
            q = np.clip(
                q, mor.source.chart_box[:, 0], mor.source.chart_box[:, 1]
            )
        xi = xi0 + spread * rng.uniform(-1.0, 1.0, size=xi0.shape)
        samples.append((q, xi))
    return samples


def _deviation_series(pushed, reduced, with_momenta):
    parts = [pushed.qs - reduced.qs, pushed.xis - reduced.xis]
    if with_momenta:
        parts.append(pushed.ps - reduced.ps)
    stacked = np.hstack(parts)
    return np.sqrt(np.sum(stacked * stacked, axis=1))


def _warn_invariance(L, ell, mor, q0, xi0):
    disc = check_invariance(L, ell, mor, _invariance_samples(mor, q0, xi0))
    suspect = disc > INVARIANCE_WARN_TOL
    if suspect:
        warnings.warn(
            f"Lagrangian does not factor through {mor.label or 'morphism'}: "
            f"sampled discrepancy {disc:.3e}; the comparison below is not "
            "expected to close",
            RuntimeWarning,
        )
    return disc, suspect


def reduce_compare(A, L, A_red, ell, mor, s0, t_final, dt, method="rk4",
                   invariants=None, reduced_invariants=None):
    """Integrate upstairs from s0 and downstairs from its image; compare.

    The deviation at each node is the Euclidean norm, in target
    coordinates, between the pushed upstairs state and the downstairs
    state.  For an invariant Lagrangian and a genuine morphism this is
    pure discretization error and shrinks at the integrator's order.
    """
    if mor.source is not A and mor.source != A:
        raise InputError("morphism source does not match the full model")
    if mor.target is not A_red and mor.target != A_red:
        raise InputError("morphism target does not match the reduced model")
    q0, xi0 = s0.validate(A)
    disc, suspect = _warn_invariance(L, ell, mor, q0, xi0)
    full = integrate(A, L, s0, t_final, dt, method=method)
    reduced = integrate(
        A_red,
        ell,
        State(t=s0.t, q=mor.phi(q0), xi=mor.fiber(q0) @ xi0),
        t_final,
        dt,
        method=method,
    )
    pushed = push_trajectory(mor, full)
    devs = _deviation_series(pushed, reduced, with_momenta=False)
    return ComparisonReport(
        max_deviation=float(np.max(devs)),
        deviations=devs,
        invariance_discrepancy=disc,
        invariance_suspect=suspect,
        source_diagnostics=diagnostics(A, L, full, invariants),
        target_diagnostics=diagnostics(A_red, ell, reduced, reduced_invariants),
    )


def hp_reduce_compare(A, L, A_red, ell, mor, s0, t_final, dt, method="rk4"):
    """Implicit-formulation analogue of ``reduce_compare``.

    Velocities push through Phi(q) and momenta through its inverse
    transpose, so the morphism must be fiberwise invertible.  Deviations
    measure (q, v, p) jointly on the target.
    """
    if not mor.fiberwise_invertible:
        raise MorphismError(
            "implicit-formulation reduction needs a fiberwise invertible "
            "morphism"
        )
    q0, v0, p0 = s0.validate(A)
    disc, suspect = _warn_invariance(L, ell, mor, q0, v0)
    full = hp_integrate(A, L, s0, t_final, dt, method=method)
    s0_red = PontryaginState(
        t=s0.t,
        q=mor.phi(q0),
        v=mor.fiber(q0) @ v0,
        p=mor.push_momentum(q0, p0),
    )
    reduced = hp_integrate(A_red, ell, s0_red, t_final, dt, method=method)
    pushed = push_trajectory(mor, full)
    devs = _deviation_series(pushed, reduced, with_momenta=True)
    return ComparisonReport(
        max_deviation=float(np.max(devs)),
        deviations=devs,
        invariance_discrepancy=disc,
        invariance_suspect=suspect,
        source_diagnostics=diagnostics(A, L, full),
        target_diagnostics=diagnostics(A_red, ell, reduced),
    )


@dataclass(frozen=True)
class RouthComparisonReport:
    y_deviation_max: float
    momentum_drift_max: float
    full_diagnostics: object
    routhian_diagnostics: object
    full_trajectory: Trajectory
    routhian_trajectory: Trajectory

    def within(self, tolerance):
        return self.y_deviation_max <= tolerance


def routh_compare(L_full, n_cyclic, momentum, s0_full, t_final, dt,
                  method="rk4", momentum_tol=1e-10):
    """Full cyclic flow versus the vertical flow of its Routhian.

    Requires the initial cyclic momenta dL/dthetadot(s0) to equal
    ``momentum`` (to 1e-10): the comparison is only meaningful on the
    matching momentum level set.  Reports the max deviation of the shape
    coordinates (y, ydot) and the drift of the conserved momenta along the
    full flow.
    """
    A_full = L_full.algebroid
    k = n_cyclic
    q0, xi0 = s0_full.validate(A_full)
    x = np.asarray(momentum, dtype=float)
    if x.shape != (k,):
        raise InputError(f"momentum must have shape ({k},), got {x.shape}")
    p0 = legendre(L_full, q0, xi0)[:k]
    if np.max(np.abs(p0 - x)) > 1e-10:
        raise InputError(
            f"initial state has cyclic momentum {p0.tolist()}, which does not "
            f"match the requested level {x.tolist()}"
        )

    full = integrate(A_full, L_full, s0_full, t_final, dt, method=method)

    inp = RouthianInput(
        full_lagrangian=L_full,
        n_cyclic=k,
        momentum=x,
        theta_dot_guess=xi0[:k],
    )
    R = make_routhian(inp)
    s0_vertical = State(
        t=s0_full.t,
        q=np.concatenate([x, q0[k:]]),
        xi=xi0[k:],
    )
    vertical = integrate(R.algebroid, R, s0_vertical, t_final, dt, method=method)

    y_dev = np.hstack(
        [full.qs[:, k:] - vertical.qs[:, k:], full.xis[:, k:] - vertical.xis]
    )
    y_deviation = float(np.max(np.sqrt(np.sum(y_dev * y_dev, axis=1))))

    drift = 0.0
    for j in range(full.n_nodes):
        pj = legendre(L_full, full.qs[j], full.xis[j])[:k]
        drift = max(drift, float(np.max(np.abs(pj - x))))

    return RouthComparisonReport(
        y_deviation_max=y_deviation,
        momentum_drift_max=drift,
        full_diagnostics=diagnostics(A_full, L_full, full),
        routhian_diagnostics=diagnostics(R.algebroid, R, vertical),
        full_trajectory=full,
        routhian_trajectory=vertical,
    )
