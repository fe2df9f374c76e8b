"""Nonlinear solvers for a single time step.

Two strategies solve the coupled optimality system:

* ``newton_monolithic`` - exact Newton on the full (phi, mu, u) system.
* ``alternating_minimization`` - outer loop alternating a Newton solve of
  the phase-field block (displacement frozen) with a linear elasticity
  solve, optionally wrapped in Anderson acceleration.

Termination combines residual and increment criteria: the iteration stops
once at least one residual criterion (absolute or relative) and at least
one increment criterion hold simultaneously. Failure to converge is a
reported outcome, not an exception.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import grid, schemes
from .acceleration import AndersonWindow
from .schemes import DivergedIterateError, State

_POTENTIAL_MEAN_TOL = 1e-5


@dataclass(frozen=True)
class StoppingRule:
    """Mixed residual/increment termination test.

    Each family (residual, increment) offers an absolute and a relative
    criterion; the iteration terminates when both families are satisfied,
    each through at least one of its two criteria. Comparisons are
    inclusive.
    """

    abs_residual: float = 1e-6
    rel_residual: float = 1e-6
    abs_increment: float = 1e-6
    rel_increment: float = 1e-6

    def residual_ok(self, res, res0):
        if res <= self.abs_residual:
            return True
        return res0 > 0 and res / res0 <= self.rel_residual

    def increment_ok(self, inc, inc_first):
        if sum(inc) <= self.abs_increment:
            return True
        rel = 0.0
        for a, b in zip(inc, inc_first):
            if b > 0:
                rel += a / b
            elif a > 0:
                return False
        return rel <= self.rel_increment

    def satisfied(self, res, res0, inc, inc_first):
        return self.residual_ok(res, res0) and self.increment_ok(inc, inc_first)


@dataclass
class SolveReport:
    """Outcome of one nonlinear solve.

    ``iterations`` counts executed loop passes. ``effective_iterations``
    counts only the passes that moved the iterate by more than the
    increment tolerance; the terminal pass of a converged solve merely
    confirms that the iterate stopped changing and is excluded, matching
    the usual reporting of iteration counts.
    """

    converged: bool
    iterations: int
    residual_norms: list = field(default_factory=list)
    increment_norms: list = field(default_factory=list)  # (phi, mu, u) triples
    potential_history: list = field(default_factory=list)
    reason: str = ""
    increment_floor: float = 1e-6

    @property
    def effective_iterations(self):
        moved = sum(1 for inc in self.increment_norms if sum(inc) > self.increment_floor)
        return max(moved, 1) if self.increment_norms else self.iterations


def _l2_norms(mesh, dphi, dmu, du=None):
    M = schemes._mesh_mass(mesh)
    n_phi = np.sqrt(max(float(dphi @ (M @ dphi)), 0.0))
    n_mu = np.sqrt(max(float(dmu @ (M @ dmu)), 0.0))
    if du is None or du.size == 0:
        return (n_phi, n_mu)
    ux, uy = du[0::2], du[1::2]
    n_u = np.sqrt(max(float(ux @ (M @ ux)) + float(uy @ (M @ uy)), 0.0))
    return (n_phi, n_mu, n_u)


def _apply_homogeneous_bc(state, ctx):
    c = ctx.dofmap.constrained_dofs
    state.u[c - 2 * ctx.mesh.node_count] = 0.0


# ---------------------------------------------------------------------------
# Monolithic Newton
# ---------------------------------------------------------------------------

def newton_monolithic(ctx, initial, stopping=None, max_iter=50):
    """Exact Newton iteration on the coupled residual.

    Returns the final state and a SolveReport; the state carries the last
    iterate even when the iteration did not converge.
    """
    stopping = stopping or StoppingRule()
    mesh = ctx.mesh
    state = initial.copy()
    _apply_homogeneous_bc(state, ctx)
    report = SolveReport(converged=False, iterations=0, increment_floor=stopping.abs_increment)

    try:
        r = schemes.residual(state, ctx)
    except DivergedIterateError as exc:
        report.reason = str(exc)
        return state, report
    res0 = float(np.linalg.norm(r))
    report.residual_norms.append(res0)
    inc_first = None

    for it in range(1, max_iter + 1):
        J = schemes.jacobian(state, ctx)
        try:
            dx = grid.solve_linear(J, -r)
        except grid.SingularSystemError as exc:
            report.reason = f"linear solve failed: {exc}"
            report.iterations = it
            return state, report
        x = state.pack() + dx
        state = State.unpack(x, mesh)
        nn = mesh.node_count
        inc = _l2_norms(mesh, dx[:nn], dx[nn : 2 * nn], dx[2 * nn :])
        if inc_first is None:
            inc_first = inc
        report.increment_norms.append(inc)
        try:
            r = schemes.residual(state, ctx)
        except DivergedIterateError as exc:
            report.reason = str(exc)
            report.iterations = it
            return state, report
        res = float(np.linalg.norm(r))
        report.residual_norms.append(res)
        if not np.isfinite(res):
            report.reason = "non-finite residual"
            report.iterations = it
            return state, report
        if stopping.satisfied(res, res0, inc, inc_first):
            report.converged = True
            report.iterations = it
            return state, report

    report.iterations = max_iter
    report.reason = "maximum Newton iterations reached"
    return state, report


# ---------------------------------------------------------------------------
# Block solves for alternating minimization
# ---------------------------------------------------------------------------

_ch_residual = schemes.ch_residual
_ch_jacobian = schemes.ch_jacobian


def _chord_solver(ctx):
    """Once-per-step factorization of the phase-field Jacobian at phi^{n-1}.

    The converged solution is unchanged (the residual test is exact); only
    the inner linearization is frozen, saving one factorization per inner
    iteration.
    """
    import scipy.sparse.linalg as spla

    if "ch_chord_lu" not in ctx._cache:
        probe = ctx.prev.copy()
        J = _ch_jacobian(probe, ctx)
        ctx._cache["ch_chord_lu"] = spla.splu(J.tocsc())
    return ctx._cache["ch_chord_lu"]


def newton_ch_block(ctx, state, stopping=None, max_iter=50, chord=False):
    """Newton solve of the phase-field block at fixed displacement.

    With ``chord`` the Jacobian is frozen at the previous time level and
    factorized once per step; otherwise it is exact at every iterate.
    Updates phi and mu of ``state`` in place and returns (state, report).
    """
    stopping = stopping or StoppingRule()
    mesh = ctx.mesh
    nn = mesh.node_count
    report = SolveReport(converged=False, iterations=0, increment_floor=stopping.abs_increment)

    try:
        r = _ch_residual(state, ctx)
    except DivergedIterateError as exc:
        report.reason = str(exc)
        return state, report
    res0 = float(np.linalg.norm(r))
    report.residual_norms.append(res0)
    inc_first = None

    for it in range(1, max_iter + 1):
        try:
            if chord:
                dx = _chord_solver(ctx).solve(-r)
                if not np.all(np.isfinite(dx)):
                    raise grid.SingularSystemError("chord solve non-finite")
            else:
                dx = grid.solve_linear(_ch_jacobian(state, ctx), -r)
        except grid.SingularSystemError as exc:
            report.reason = f"linear solve failed: {exc}"
            report.iterations = it
            return state, report
        state.phi += dx[:nn]
        state.mu += dx[nn:]
        inc = _l2_norms(mesh, dx[:nn], dx[nn:])
        if inc_first is None:
            inc_first = inc
        report.increment_norms.append(inc)
        try:
            r = _ch_residual(state, ctx)
        except DivergedIterateError as exc:
            report.reason = str(exc)
            report.iterations = it
            return state, report
        res = float(np.linalg.norm(r))
        report.residual_norms.append(res)
        if stopping.satisfied(res, res0, inc, inc_first):
            report.converged = True
            report.iterations = it
            return state, report

    report.iterations = max_iter
    report.reason = "maximum Newton iterations reached in phase-field block"
    return state, report


def solve_elasticity_block(ctx, state):
    """Linear elasticity solve at the current phase field.

    The stiffness uses C(phi^{n-1}) for the homogeneous and semi-implicit
    schemes (cached factorization data on the context) and C(phi) at the
    current iterate for the implicit scheme (reassembled every call).
    Updates state.u in place.
    """
    import scipy.sparse.linalg as spla

    mesh = ctx.mesh
    law = ctx.params.elastic
    c_local = ctx.dofmap.constrained_dofs - 2 * mesh.node_count
    if ctx.scheme_kind == "implicit":
        phi_qp = grid.scalar_at_qp(mesh, state.phi)
        C = law.tensor(phi_qp)
        A = grid.assemble_vector_elasticity(mesh, C, check=False)
        vec = law.xi * np.einsum("c,eqcd->eqd", grid.I_VOIGT, C)
        G = grid.assemble_coupling(mesh, vec)
        rhs = ctx.f_load + G.T @ state.phi
        A_bc, rhs_bc = grid.eliminate_dirichlet(A, rhs, c_local)
        state.u = grid.solve_linear(A_bc.tocsc(), rhs_bc)
        return state

    # homogeneous / semi-implicit: the stiffness is fixed for the whole
    # step (for the whole run when C is constant), so cache the factorization
    G = ctx.coupling_prev
    cache = mesh._cache if not law.heterogeneous else ctx._cache
    key = ("elast_lu", law.xi) if not law.heterogeneous else "elast_lu"
    if key not in cache:
        A_bc, _ = grid.eliminate_dirichlet(
            ctx.elastic_matrix_prev, np.zeros(2 * mesh.node_count), c_local
        )
        cache[key] = spla.splu(A_bc.tocsc())
    rhs = ctx.f_load + G.T @ state.phi
    rhs[c_local] = 0.0
    u = cache[key].solve(rhs)
    if not np.all(np.isfinite(u)):
        raise grid.SingularSystemError("elasticity solve produced non-finite values")
    state.u = u
    return state


# ---------------------------------------------------------------------------
# Alternating minimization
# ---------------------------------------------------------------------------

def alternating_minimization(
    ctx,
    initial,
    stopping=None,
    max_outer=200,
    anderson_depth=0,
    inner_stopping=None,
    inner_max_iter=50,
    chord=False,
    track_potential=False,
):
    """Outer alternating loop with optional Anderson mixing.

    Each outer iteration solves the phase-field block by Newton at frozen
    displacement, then the elasticity block at the new phase field. The
    concatenated iterate may then be mixed by Anderson acceleration of the
    given depth (0 = plain iteration). Termination uses the full coupled
    residual.
    """
    stopping = stopping or StoppingRule()
    inner_stopping = inner_stopping or StoppingRule()
    mesh = ctx.mesh
    nn = mesh.node_count
    state = initial.copy()
    _apply_homogeneous_bc(state, ctx)
    window = AndersonWindow(anderson_depth)
    report = SolveReport(converged=False, iterations=0, increment_floor=stopping.abs_increment)

    def record_potential(st):
        if track_potential and ctx.scheme_kind != "implicit":
            try:
                report.potential_history.append(
                    schemes.step_potential(st, ctx, mean_tol=_POTENTIAL_MEAN_TOL)
                )
            except ValueError:
                report.potential_history.append(np.nan)

    try:
        r = schemes.residual(state, ctx)
    except DivergedIterateError as exc:
        report.reason = str(exc)
        return state, report
    res0 = float(np.linalg.norm(r))
    report.residual_norms.append(res0)
    record_potential(state)
    inc_first = None

    for it in range(1, max_outer + 1):
        x_old = state.pack()
        state, inner = newton_ch_block(
            ctx, state, stopping=inner_stopping, max_iter=inner_max_iter, chord=chord
        )
        if not inner.converged:
            report.reason = f"phase-field block failed: {inner.reason}"
            report.iterations = it
            return state, report
        try:
            state = solve_elasticity_block(ctx, state)
        except grid.SingularSystemError as exc:
            report.reason = f"elasticity solve failed: {exc}"
            report.iterations = it
            return state, report

        gx = state.pack()
        x_new = window.update(x_old, gx)
        state = State.unpack(x_new, mesh)
        dx = x_new - x_old
        inc = _l2_norms(mesh, dx[:nn], dx[nn : 2 * nn], dx[2 * nn :])
        if inc_first is None:
            inc_first = inc
        report.increment_norms.append(inc)
        record_potential(state)

        try:
            r = schemes.residual(state, ctx)
        except DivergedIterateError as exc:
            report.reason = str(exc)
            report.iterations = it
            return state, report
        res = float(np.linalg.norm(r))
        report.residual_norms.append(res)
        if not np.isfinite(res):
            report.reason = "non-finite residual"
            report.iterations = it
            return state, report
        if stopping.satisfied(res, res0, inc, inc_first):
            report.converged = True
            report.iterations = it
            return state, report

    report.iterations = max_outer
    report.reason = "maximum outer iterations reached"
    return state, report


def solve_step(ctx, initial, strategy="alternating", **kwargs):
    """Dispatch a single time-step solve by strategy name."""
    if strategy == "monolithic":
        kwargs.pop("anderson_depth", None)
        kwargs.pop("track_potential", None)
        kwargs.pop("inner_stopping", None)
        kwargs.pop("inner_max_iter", None)
        kwargs.pop("chord", None)
        max_outer = kwargs.pop("max_outer", None)
        if max_outer is not None:
            kwargs.setdefault("max_iter", max_outer)
        return newton_monolithic(ctx, initial, **kwargs)
    if strategy == "alternating":
        return alternating_minimization(ctx, initial, **kwargs)
    raise ValueError(f"unknown strategy {strategy!r}")
