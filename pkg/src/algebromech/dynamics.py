"""Equations of motion on a Lie algebroid and fixed-step time integration.

Admissible kinematic states are pairs (q, xi) with the compatibility
condition qdot^i = rho^i_I xi^I.  The explicit equations of motion solved
here are

    M(q, xi) xidot = F(q, xi) - H(q, xi) qdot,
    F_I = rho^i_I dL/dq^i - C^K_IJ xi^J dL/dxi^K,

with M the fiber Hessian and H the mixed Hessian of L.  On a tangent
bundle (identity anchor, commuting frame) this is the ordinary
Euler-Lagrange system; on a Lie algebra it is the Euler-Poincare system;
on a vertical bundle it freezes the projected base coordinates.

The implicit (Hamilton-Pontryagin) form evolves (q, p) with the fiber
velocity v recovered from the algebraic constraint p = dL/dv by Newton;
see ``hp_rhs``.

Integration uses a fixed step: classical RK4 or the implicit midpoint
rule.  No adaptivity, so identical inputs give identical outputs.
"""

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .algebroid import AlgebroidModel, anchor_eval, structure_eval
from .errors import ChartExitError, InputError, RegularityError, SolveError
from .lagrangian import (
    LagrangianModel,
    energy,
    fiber_hessian,
    legendre,
    mass_matrix,
    mixed_hessian,
)

__all__ = [
    "State",
    "PontryaginState",
    "Trajectory",
    "VariationField",
    "DiagnosticsReport",
    "elp_rhs",
    "integrate",
    "elp_residual",
    "apath_residual_nodes",
    "admissible_variation",
    "action_stationarity",
    "hp_rhs",
    "hp_integrate",
    "diagnostics",
]

NEWTON_TOL = 1e-12
NEWTON_MAX_ITER = 50
CONSTRAINT_TOL = 1e-10
ENDPOINT_TOL = 1e-14


def _finite_vector(x, name, dim):
    x = np.asarray(x, dtype=float)
    if x.shape != (dim,):
        raise InputError(f"{name} must have shape ({dim},), got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise InputError(f"{name} has non-finite entries: {x.tolist()}")
    return x


@dataclass(frozen=True)
class State:
    """A kinematic sample (t, q, xi)."""

    t: float
    q: np.ndarray
    xi: np.ndarray

    def validate(self, model: AlgebroidModel):
        q = _finite_vector(self.q, "q", model.base_dim)
        xi = _finite_vector(self.xi, "xi", model.fiber_dim)
        return q, xi


@dataclass(frozen=True)
class PontryaginState:
    """A sample (t, q, v, p) of the implicit formulation."""

    t: float
    q: np.ndarray
    v: np.ndarray
    p: np.ndarray

    def validate(self, model: AlgebroidModel):
        q = _finite_vector(self.q, "q", model.base_dim)
        v = _finite_vector(self.v, "v", model.fiber_dim)
        p = _finite_vector(self.p, "p", model.fiber_dim)
        return q, v, p


@dataclass
class Trajectory:
    """States on a uniform time grid.

    ``qs`` and ``xis`` have one row per node.  Implicit-formulation runs
    additionally carry ``vs`` (equal to xis by construction), ``ps``, and
    the per-node constraint residual |p - dL/dv|_inf.
    """

    times: np.ndarray
    qs: np.ndarray
    xis: np.ndarray
    vs: Optional[np.ndarray] = None
    ps: Optional[np.ndarray] = None
    constraint_residuals: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        if self.times.ndim != 1 or self.times.size < 2:
            raise InputError("trajectory needs at least two nodes")
        steps = np.diff(self.times)
        if not np.all(steps > 0):
            raise InputError("trajectory times must be strictly increasing")
        dt = steps[0]
        if np.max(np.abs(steps - dt)) > 1e-9 * max(1.0, abs(dt)):
            raise InputError("trajectory grid must be uniform")

    @property
    def dt(self):
        return float(self.times[1] - self.times[0])

    @property
    def n_nodes(self):
        return self.times.size

    def state(self, k):
        return State(t=float(self.times[k]), q=self.qs[k], xi=self.xis[k])


@dataclass(frozen=True)
class VariationField:
    """An endpoint-vanishing fiber path b(t) generating a variation."""

    b: Callable[[float], np.ndarray]

    def sample(self, times, fiber_dim):
        vals = np.empty((times.size, fiber_dim))
        for k, t in enumerate(times):
            vals[k] = _finite_vector(self.b(float(t)), "variation field b", fiber_dim)
        for end in (0, -1):
            if np.max(np.abs(vals[end]), initial=0.0) > ENDPOINT_TOL:
                raise InputError(
                    f"variation field must vanish at t={times[end]:g}, "
                    f"got |b| = {np.max(np.abs(vals[end])):.3e}"
                )
        return vals


def _make_elp_rhs(A, L):
    """Bind model callables into a flat-state rhs(t, y) with y = [q; xi]."""
    n, m = A.base_dim, A.fiber_dim
    anchor = A.anchor
    structure = A.structure
    grad_q = L.grad_q
    grad_xi = L.grad_xi

    def rhs(t, y):
        q = y[:n]
        xi = y[n:]
        rho = anchor(q)
        qdot = rho @ xi
        gq = grad_q(q, xi)
        gxi = grad_xi(q, xi)
        C = structure(q)
        # F_I = rho^i_I gq_i - C^K_IJ xi^J gxi_K
        force = rho.T @ gq - gxi @ (C @ xi)
        M = fiber_hessian(L, q, xi)
        if n:
            force = force - mixed_hessian(L, q, xi) @ qdot
        try:
            xidot = np.linalg.solve(M, force)
        except np.linalg.LinAlgError:
            raise RegularityError(
                f"singular fiber Hessian at q={q.tolist()}, xi={xi.tolist()}"
            )
        return np.concatenate([qdot, xidot])

    return rhs


def elp_rhs(A, L, s):
    """Right-hand side (qdot, xidot) of the explicit equations at state s.

    Raises RegularityError when the fiber Hessian is (near-)singular; the
    variational principle gives no explicit dynamics there.
    """
    q, xi = s.validate(A)
    mass_matrix(L, q, xi)  # regularity gate with condition estimate
    y = np.concatenate([q, xi])
    out = _make_elp_rhs(A, L)(s.t, y)
    n = A.base_dim
    return out[:n], out[n:]


def _newton_solve(fun, x0, jac=None, tol=NEWTON_TOL, max_iter=NEWTON_MAX_ITER,
                  context=""):
    from . import fd

    x = np.asarray(x0, dtype=float).copy()
    for it in range(max_iter + 1):
        g = fun(x)
        if np.max(np.abs(g), initial=0.0) <= tol:
            return x
        if it == max_iter:
            break
        J = jac(x) if jac is not None else fd.jacobian(fun, x)
        try:
            x = x - np.linalg.solve(J, g)
        except np.linalg.LinAlgError:
            raise SolveError(f"singular Newton matrix{context}")
    raise SolveError(
        f"Newton iteration did not converge{context} "
        f"(|residual| = {np.max(np.abs(g)):.3e} after {max_iter} iterations)"
    )


def _grid(t0, t_final, dt):
    if dt <= 0:
        raise InputError(f"dt must be positive, got {dt}")
    if t_final <= t0:
        raise InputError(f"t_final must exceed t0 = {t0}, got {t_final}")
    nsteps = int(round((t_final - t0) / dt))
    if nsteps < 1 or abs(t0 + nsteps * dt - t_final) > 1e-9 * max(1.0, abs(t_final)):
        raise InputError(
            f"(t_final - t0) = {t_final - t0} is not an integer multiple of dt = {dt}"
        )
    return nsteps


def _advance(rhs, t0, y0, dt, nsteps, method, on_node=None):
    """Fixed-step time loop shared by both formulations."""
    y = np.asarray(y0, dtype=float).copy()
    out = np.empty((nsteps + 1, y.size))
    out[0] = y
    half = 0.5 * dt
    sixth = dt / 6.0
    t = t0
    if on_node is not None:
        on_node(0, t, y)
    try:
        for k in range(1, nsteps + 1):
            if method == "rk4":
                k1 = rhs(t, y)
                k2 = rhs(t + half, y + half * k1)
                k3 = rhs(t + half, y + half * k2)
                k4 = rhs(t + dt, y + dt * k3)
                y = y + sixth * (k1 + 2.0 * (k2 + k3) + k4)
            elif method == "implicit_midpoint":
                tm = t + half

                def residual(y_next):
                    return y_next - y - dt * rhs(tm, 0.5 * (y + y_next))

                y = _newton_solve(
                    residual, y + dt * rhs(t, y), context=f" at t={t:.6g}"
                )
            else:
                raise InputError(f"unknown method {method!r}")
            t = t0 + k * dt
            out[k] = y
            if on_node is not None:
                on_node(k, t, y)
    except RegularityError as exc:
        raise RegularityError(f"{exc} (while stepping from t={t:.6g})") from exc
    return out


def integrate(A, L, s0, t_final, dt, method="rk4"):
    """Integrate the explicit equations from s0 on a uniform grid.

    ``method`` is "rk4" (classical 4-stage) or "implicit_midpoint"
    (one-step Newton solve per step, tolerance 1e-12).  If the algebroid
    declares a chart box, leaving it raises ChartExitError with the exit
    time.
    """
    q0, xi0 = s0.validate(A)
    mass_matrix(L, q0, xi0)  # fail fast on an irregular start
    nsteps = _grid(s0.t, t_final, dt)
    rhs = _make_elp_rhs(A, L)
    n = A.base_dim

    check_chart = A.chart_box is not None

    def on_node(k, t, y):
        if check_chart and not A.in_chart(y[:n]):
            raise ChartExitError(
                f"trajectory left the chart box of {A.label or 'model'} "
                f"at t={t:.6g}",
                t=t,
                q=y[:n].copy(),
            )

    ys = _advance(
        rhs, s0.t, np.concatenate([q0, xi0]), dt, nsteps, method, on_node=on_node
    )
    times = s0.t + dt * np.arange(nsteps + 1)
    return Trajectory(
        times=times,
        qs=ys[:, :n],
        xis=ys[:, n:],
        meta={"system": L.label or A.label, "integrator": method, "dt": float(dt),
              "formulation": "elp"},
    )


def _central_dt(values, dt):
    """Second-order d/dt on a uniform grid; one-sided at the endpoints."""
    out = np.empty_like(values)
    out[1:-1] = (values[2:] - values[:-2]) / (2.0 * dt)
    out[0] = (-3.0 * values[0] + 4.0 * values[1] - values[2]) / (2.0 * dt)
    out[-1] = (3.0 * values[-1] - 4.0 * values[-2] + values[-3]) / (2.0 * dt)
    return out


def elp_residual(A, L, traj):
    """Pointwise defect of the equations of motion along a trajectory.

    Returns (times, eq_res, apath_res) at the interior nodes: eq_res[k]
    is the m-vector rho^T dL/dq - C-contraction - d/dt(dL/dxi), with the
    time derivative taken by second-order central differences, and
    apath_res[k] is the n-vector qdot_fd - rho xi.
    """
    if traj.n_nodes < 3:
        raise InputError("residual evaluation needs at least 3 nodes")
    dt = traj.dt
    N = traj.n_nodes
    m, n = A.fiber_dim, A.base_dim
    gxi = np.empty((N, m))
    force = np.empty((N, m))
    rhoxi = np.empty((N, n))
    for k in range(N):
        q = traj.qs[k]
        xi = traj.xis[k]
        rho = anchor_eval(A, q)
        C = structure_eval(A, q)
        g = L.grad_xi(q, xi)
        gxi[k] = g
        force[k] = rho.T @ L.grad_q(q, xi) - g @ (C @ xi)
        rhoxi[k] = rho @ xi
    dgxi = (gxi[2:] - gxi[:-2]) / (2.0 * dt)
    qdot = (traj.qs[2:] - traj.qs[:-2]) / (2.0 * dt)
    eq_res = force[1:-1] - dgxi
    apath_res = qdot - rhoxi[1:-1]
    return traj.times[1:-1], eq_res, apath_res


def apath_residual_nodes(A, traj):
    """Per-node scalar |qdot_fd - rho xi|_inf, one-sided at the endpoints."""
    qdot = _central_dt(traj.qs, traj.dt)
    res = np.empty(traj.n_nodes)
    for k in range(traj.n_nodes):
        rho = anchor_eval(A, traj.qs[k])
        diff = qdot[k] - rho @ traj.xis[k]
        res[k] = np.max(np.abs(diff), initial=0.0)
    return res


def admissible_variation(A, traj, variation):
    """Sampled variation (dq, dxi) generated by an endpoint-vanishing b.

    dq(t) = rho(q(t)) b(t) and dxi^K = bdot^K - C^K_IJ xi^J b^I, with bdot
    from second-order differences on the trajectory grid.
    """
    b = variation.sample(traj.times, A.fiber_dim)
    bdot = _central_dt(b, traj.dt)
    N = traj.n_nodes
    dq = np.empty((N, A.base_dim))
    dxi = np.empty((N, A.fiber_dim))
    for k in range(N):
        q = traj.qs[k]
        rho = anchor_eval(A, q)
        C = structure_eval(A, q)
        dq[k] = rho @ b[k]
        # -C^K_IJ xi^J b^I  contracted as  -(C @ xi) acting on b
        dxi[k] = bdot[k] - (C @ traj.xis[k]) @ b[k]
    return dq, dxi


def action_stationarity(A, L, traj, variation):
    """First variation of the action along an admissible variation.

    Trapezoid quadrature of <dL/dq, dq> + <dL/dxi, dxi> over the grid;
    vanishes to O(dt^2) on solution trajectories.
    """
    dq, dxi = admissible_variation(A, traj, variation)
    integrand = np.empty(traj.n_nodes)
    for k in range(traj.n_nodes):
        q = traj.qs[k]
        xi = traj.xis[k]
        integrand[k] = np.dot(L.grad_q(q, xi), dq[k]) + np.dot(
            L.grad_xi(q, xi), dxi[k]
        )
    return float(np.trapezoid(integrand, dx=traj.dt))


def _make_hp_rhs(A, L, v_warm):
    """Half-explicit rhs over y = [q; p]: recover v, then advance (q, p).

    The momentum constraint p = dL/dv(q, v) is solved by Newton from the
    warm start kept in ``v_warm`` (a length-m array owned by the caller:
    one per integration run).
    """
    n, m = A.base_dim, A.fiber_dim
    anchor = A.anchor
    structure = A.structure
    grad_q = L.grad_q
    grad_xi = L.grad_xi

    def recover_v(q, p):
        v = v_warm.copy()
        for it in range(NEWTON_MAX_ITER + 1):
            g = grad_xi(q, v) - p
            if np.max(np.abs(g)) <= NEWTON_TOL * max(1.0, np.max(np.abs(p))):
                v_warm[:] = v
                return v
            if it == NEWTON_MAX_ITER:
                break
            M = fiber_hessian(L, q, v)
            cond = np.linalg.cond(M)
            if not np.isfinite(cond) or cond > 1e12:
                raise RegularityError(
                    f"cannot invert the fiber derivative at q={q.tolist()}: "
                    f"condition estimate {cond:.3e}"
                )
            v = v - np.linalg.solve(M, g)
        raise SolveError(
            f"velocity recovery Newton did not converge at q={q.tolist()} "
            f"(|residual| = {np.max(np.abs(g)):.3e})"
        )

    def rhs(t, y):
        q = y[:n]
        p = y[n:]
        v = recover_v(q, p)
        rho = anchor(q)
        qdot = rho @ v
        C = structure(q)
        pdot = rho.T @ grad_q(q, v) - p @ (C @ v)
        return np.concatenate([qdot, pdot])

    rhs.recover_v = recover_v
    return rhs


def hp_rhs(A, L, s):
    """Right-hand side (qdot, pdot) of the implicit equations at state s.

    Recovers the fiber velocity from p = dL/dv by Newton (warm-started at
    s.v), then applies qdot = rho v and pdot_I = rho^i_I dL/dq^i -
    C^K_IJ v^J p_K.  The returned triple is (qdot, pdot, v).
    """
    q, v0, p = s.validate(A)
    rhs = _make_hp_rhs(A, L, v0.copy())
    out = rhs(s.t, np.concatenate([q, p]))
    n = A.base_dim
    v = rhs.recover_v(q, p)
    return out[:n], out[n:], v


def hp_integrate(A, L, s0, t_final, dt, method="rk4"):
    """Integrate the implicit formulation; v is recovered at every node."""
    q0, v0, p0 = s0.validate(A)
    nsteps = _grid(s0.t, t_final, dt)
    v_warm = v0.copy()
    rhs = _make_hp_rhs(A, L, v_warm)
    n, m = A.base_dim, A.fiber_dim
    vs = np.empty((nsteps + 1, m))
    cres = np.empty(nsteps + 1)
    check_chart = A.chart_box is not None

    def on_node(k, t, y):
        q = y[:n]
        p = y[n:]
        if check_chart and not A.in_chart(q):
            raise ChartExitError(
                f"trajectory left the chart box of {A.label or 'model'} "
                f"at t={t:.6g}",
                t=t,
                q=q.copy(),
            )
        v = rhs.recover_v(q, p)
        vs[k] = v
        cres[k] = np.max(np.abs(legendre(L, q, v) - p), initial=0.0)

    ys = _advance(
        rhs, s0.t, np.concatenate([q0, p0]), dt, nsteps, method, on_node=on_node
    )
    times = s0.t + dt * np.arange(nsteps + 1)
    return Trajectory(
        times=times,
        qs=ys[:, :n],
        xis=vs.copy(),
        vs=vs,
        ps=ys[:, n:],
        constraint_residuals=cres,
        meta={"system": L.label or A.label, "integrator": method, "dt": float(dt),
              "formulation": "hp"},
    )


@dataclass(frozen=True)
class DiagnosticsReport:
    """Per-run conservation and consistency summary.

    Drifts are relative to the initial value when it is meaningfully
    nonzero (|f0| > 1e-8) and absolute otherwise.
    """

    energy_drift_max: float
    energy_drift_mean: float
    apath_residual_max: float
    eq_residual_max: float
    invariant_drifts: dict
    constraint_residual_max: Optional[float] = None


def _drift(series):
    f0 = series[0]
    dev = np.abs(series - f0)
    scale = abs(f0) if abs(f0) > 1e-8 else 1.0
    return float(np.max(dev) / scale), float(np.mean(dev) / scale)


def diagnostics(A, L, traj, invariants=None):
    """Drift/residual report for a trajectory.

    ``invariants`` maps names to callables f(q, xi) whose drift along the
    run is reported alongside the energy.
    """
    N = traj.n_nodes
    energies = np.array([energy(L, traj.qs[k], traj.xis[k]) for k in range(N)])
    e_max, e_mean = _drift(energies)
    apath = float(np.max(apath_residual_nodes(A, traj)))
    if N >= 3:
        _, eq_res, _ = elp_residual(A, L, traj)
        eq_max = float(np.max(np.abs(eq_res), initial=0.0))
    else:
        eq_max = float("nan")
    drifts = {}
    for name, fn in (invariants or {}).items():
        series = np.array([fn(traj.qs[k], traj.xis[k]) for k in range(N)])
        drifts[name] = _drift(series)[0]
    cmax = None
    if traj.constraint_residuals is not None:
        cmax = float(np.max(traj.constraint_residuals))
    return DiagnosticsReport(
        energy_drift_max=e_max,
        energy_drift_mean=e_mean,
        apath_residual_max=apath,
        eq_residual_max=eq_max,
        invariant_drifts=drifts,
        constraint_residual_max=cmax,
    )
