"""Pseudo-arclength continuation in the harvest amplitude, extended systems
for degenerate states, and the curves those states sweep when the growth
rate or a projection coordinate varies.

Conventions shared by everything in this module:

- The continuation state is the pair (u, c) at fixed growth rate a, and
  distances between states use the product norm ||du||_L2 + |dc|.
- Working iterates are long double while corrections come from float64
  factorizations, the same convention as newton_solve. A float64 vector of
  moderate amplitude cannot represent a steady state below a ~1e-10 sup-norm
  defect at this stencil scale, so the reported residuals are those of the
  long-double iterate and the stored fields are float64 roundings.
- Kernel vectors w are normalized so their square integral matches that of
  the first Laplacian eigenfunction for index-0 kinds and the second for
  index-1 kinds, and their sign follows the corresponding eigenfunction
  convention.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.sparse import csc_matrix
from scipy.sparse.linalg import splu

from .grid import (
    DiscreteField,
    PI_LONGDOUBLE,
    inner_product,
    renormalize_l2,
)
from .model import critical_cap, eval_nonlinearity
from .solver import (
    NEWTON_TOL,
    NonConvergence,
    Problem,
    SingularJacobian,
    SolutionPoint,
    _checked_factor,
    finalize_point,
    newton_solve,
    residual_sup_extended,
)

MIN_ARCLENGTH_STEP = 1e-8
STEP_GROWTH = 1.3


class StepUnderflow(RuntimeError):
    """The arclength step was halved below the minimum without the corrector
    converging. Carries the branch traced so far; its last point is the last
    good one."""

    def __init__(self, msg: str, partial: "Branch"):
        super().__init__(msg)
        self.partial = partial


class WrongKind(RuntimeError):
    """Refinement converged, but onto a different kind of degenerate point
    than the caller asked for. The refined point rides along so callers able
    to handle the other kind can still use it."""

    def __init__(self, expected: str, point: "DegeneratePoint"):
        super().__init__(
            f"expected a {expected} point, refined onto {point.kind} "
            f"at (a={point.a:.6g}, c={point.c:.6g})"
        )
        self.expected = expected
        self.point = point


@dataclass(frozen=True)
class BranchEvent:
    """Something that happened while tracing: kind is one of 'fold',
    'degeneracy', 'index-change' or 'endpoint'. point_index is the position
    in Branch.points of the last point before (or at) the event."""

    kind: str
    point_index: int
    degenerate_point: "DegeneratePoint | None" = None


@dataclass(frozen=True)
class Branch:
    """An ordered run of solution points along one continuation trace.

    t_proj[i] is the chart coordinate of points[i]: the L2 projection of u
    onto the first ('phi') or second ('psi') Laplacian eigenfunction, divided
    by that eigenfunction's square integral. arclengths are cumulative
    product-norm distances along the trace.
    """

    points: tuple[SolutionPoint, ...]
    arclengths: tuple[float, ...]
    chart: str
    t_proj: tuple[float, ...]
    events: tuple[BranchEvent, ...] = ()
    tag: str = ""

    def __post_init__(self):
        if self.chart not in ("phi", "psi"):
            raise ValueError(f"unknown chart {self.chart!r}")
        if not (
            len(self.points) == len(self.arclengths) == len(self.t_proj)
        ):
            raise ValueError("points, arclengths and t_proj must align")

    def c_values(self) -> np.ndarray:
        return np.array([p.c for p in self.points])

    def a_values(self) -> np.ndarray:
        return np.array([p.a for p in self.points])

    def t_values(self) -> np.ndarray:
        return np.array(self.t_proj)

    def morse_indices(self) -> np.ndarray:
        return np.array([p.morse_index for p in self.points])

    def fold_points(self) -> tuple["DegeneratePoint", ...]:
        return tuple(
            e.degenerate_point
            for e in self.events
            if e.kind == "fold" and e.degenerate_point is not None
        )

    def with_tag(self, tag: str) -> "Branch":
        return replace(self, tag=tag)


@dataclass(frozen=True)
class DegeneratePoint:
    """A state whose linearization has a one-dimensional kernel, with the
    kernel vector attached.

    kind 'fold-index0' means the first eigenvalue vanished (the turn between
    a stable state and an index-1 state); 'degenerate-index1' means the
    second did. residual_sup is the converged extended-precision sup norm
    over the state equation and the kernel equation.
    """

    a: float
    c: float
    u: DiscreteField
    w: DiscreteField
    morse_index_at_point: int
    kind: str
    residual_sup: float


@dataclass(frozen=True)
class DegenerateCurve:
    """Degenerate points swept by one scalar parameter (growth rate for fold
    sweeps, chart coordinate for the index-1 family). slope_check holds, for
    each interior point of a fold sweep, the relative mismatch between the
    secant slope dc/da and the identity int(u w)/int(h w)."""

    points: tuple[DegeneratePoint, ...]
    parameter: tuple[float, ...]
    kind: str
    slope_check: tuple[float, ...] = ()

    def __post_init__(self):
        if len(self.points) != len(self.parameter):
            raise ValueError("points and parameter must align")

    def a_values(self) -> np.ndarray:
        return np.array([p.a for p in self.points])

    def c_values(self) -> np.ndarray:
        return np.array([p.c for p in self.points])


@dataclass(frozen=True)
class DegenerateSegment:
    """The exact line of degenerate index-1 states at the second eigenvalue.

    With a at the second eigenvalue and c = 0, every multiple t*psi with t in
    [-M/beta, M] (beta the magnitude of the negative extreme of psi) keeps
    the ramp inactive and solves the steady equation exactly; the whole line
    is degenerate because psi itself spans the kernel. verified_residual is
    the worst extended-precision residual found when the construction checked
    this on a sample of t values.
    """

    a: float
    t_min: float
    t_max: float
    psi: DiscreteField
    verified_residual: float

    def state_at(self, t: float) -> DiscreteField:
        if not self.t_min <= t <= self.t_max:
            raise ValueError(f"t={t} outside [{self.t_min}, {self.t_max}]")
        return DiscreteField(self.psi.domain, t * self.psi.values)


def _chart_pair(problem: Problem, chart: str):
    phi, psi = problem.modes()
    if chart == "phi":
        return phi
    if chart == "psi":
        return psi
    raise ValueError(f"unknown chart {chart!r}; expected 'phi' or 'psi'")


def _linearized_apply(problem: Problem, u: np.ndarray, w: np.ndarray, a) -> np.ndarray:
    """(Delta_h + a - f'(u)) w in the dtype of the inputs, with the Laplacian
    as nested first differences so neighbor cancellation stays exact."""
    w = np.asarray(w)
    one = w.dtype.type
    z = np.zeros(1, dtype=w.dtype)
    lap = np.diff(np.concatenate((z, w, z)), n=2) / one(problem.domain.spacing) ** 2
    fp = eval_nonlinearity(problem.nonlinearity, u)[1]
    return lap + (one(a) - fp.astype(w.dtype)) * w


def _bordered_matrix(J, harvest: np.ndarray, row_u: np.ndarray, row_c: float):
    n = J.diag.size
    idx = np.arange(n)
    rows = np.concatenate((idx, idx[1:], idx[:-1], idx, np.full(n, n), [n]))
    cols = np.concatenate((idx, idx[:-1], idx[1:], np.full(n, n), idx, [n]))
    data = np.concatenate((J.diag, J.off, J.off, -harvest, row_u, [row_c]))
    return csc_matrix((data, (rows, cols)), shape=(n + 1, n + 1))


def _constrained_solve(
    problem: Problem,
    a: float,
    u0: np.ndarray,
    c0: float,
    row_u: np.ndarray,
    row_c: float,
    offset: float,
    *,
    tol: float = NEWTON_TOL,
    max_iter: int = 8,
):
    """Newton on the state equation coupled with one affine constraint
    N(u, c) = row_u . u + row_c c + offset = 0, c free.

    The border keeps the system regular where the plain Jacobian is singular,
    provided the kernel is not annihilated by the constraint row. Returns the
    long-double iterate (u, c), the converged residual sup norm and the
    number of iterations used.
    """
    ld = np.longdouble
    dom = problem.domain
    n = dom.n_interior
    u = np.asarray(u0, dtype=ld)
    c = ld(c0)
    row_ld = np.asarray(row_u, dtype=ld)
    rF = np.inf
    for it in range(max_iter):
        F = problem.residual_values(u, a, c)
        N = row_ld @ u + ld(row_c) * c + ld(offset)
        rF = float(np.max(np.abs(F)))
        if rF < tol and abs(float(N)) < tol:
            return u, c, rF, it
        if not np.isfinite(rF) or rF > 1e8:
            break
        J = problem.jacobian_operator(u.astype(float), a)
        A = _bordered_matrix(J, problem.harvest.values, np.asarray(row_u, float), row_c)
        rhs = np.concatenate((np.asarray(-F, dtype=float), [-float(N)]))
        try:
            delta = splu(A).solve(rhs)
        except RuntimeError as exc:
            raise NonConvergence(
                f"bordered factorization failed: {exc}", u.astype(float), rF
            )
        if not np.all(np.isfinite(delta)):
            break
        u = u + delta[:n].astype(ld)
        c = c + ld(delta[n])
    raise NonConvergence(
        "bordered Newton did not converge", u.astype(float), rF
    )


def solve_at_projection(
    problem: Problem,
    a: float,
    e,
    t_target: float,
    u0: np.ndarray,
    c0: float,
    *,
    tol: float = NEWTON_TOL,
    max_iter: int = 12,
    k_eigs: int = 3,
) -> SolutionPoint:
    """Steady state with c free, pinned by the chart constraint
    <u, e>/<e, e> = t_target.

    Regular across folds whose kernel has a nonzero e-component, which makes
    it the right probe close to degenerate points where fixed-c Newton
    becomes singular.
    """
    dom = problem.domain
    e_vals = e.values if isinstance(e, DiscreteField) else np.asarray(e, dtype=float)
    e_sq = dom.inner(e_vals, e_vals)
    if e_sq == 0.0:
        raise ValueError("chart field is identically zero")
    row_u = dom.spacing * e_vals / e_sq
    u, c, rF, _ = _constrained_solve(
        problem, a, u0, c0, row_u, 0.0, -float(t_target), tol=tol, max_iter=max_iter
    )
    return finalize_point(problem, u.astype(float), a, float(c), rF, k_eigs=k_eigs)


def continue_branch(
    problem: Problem,
    start: SolutionPoint,
    direction: int,
    c_limits,
    *,
    chart: str = "phi",
    step0: float = 0.02,
    max_step: float = 0.2,
    min_step: float = MIN_ARCLENGTH_STEP,
    tol: float = NEWTON_TOL,
    max_corrector: int = 8,
    stop_at_events: bool = True,
    max_points: int = 4000,
    k_eigs: int = 3,
) -> Branch:
    """Trace the solution family through start by pseudo-arclength steps.

    The predictor extrapolates along the secant tangent (for the first step,
    along the c-derivative of the state), the corrector is a bordered Newton
    solve with the arclength constraint, and the step halves on corrector
    failure and grows by 1.3 after easy accepts, capped at max_step. direction
    is the initial sign of dc.

    Tracing stops at the c window boundary (solved at the boundary value
    exactly, event 'endpoint'), or at the first eigenvalue sign change, where
    the bracketing pair is collapsed by refine_fold and recorded as a 'fold'
    event; set stop_at_events=False to record events and keep going. Morse
    index changes along the returned branch happen only across recorded
    events. Raises StepUnderflow, carrying the partial branch, if the step
    drops below min_step.
    """
    if direction not in (-1, 1):
        raise ValueError("direction must be +1 or -1")
    if start.degenerate:
        raise ValueError("continuation must start from a nondegenerate point")
    if start.state.problem is not problem:
        raise ValueError("start point belongs to a different problem")
    c_lo, c_hi = sorted(map(float, c_limits))
    if not c_lo <= start.c <= c_hi:
        raise ValueError("start lies outside the c window")

    dom = problem.domain
    sp = dom.spacing
    pair = _chart_pair(problem, chart)
    e_vals = pair.eigenfunction.values
    e_sq = dom.inner(e_vals, e_vals)
    a = start.a

    points = [start]
    svals = [0.0]
    tvals = [dom.inner(e_vals, start.u.values) / e_sq]
    events: list[BranchEvent] = []

    fac = _checked_factor(problem, problem.jacobian_operator(start.u.values, a))
    u_c = fac.solve(problem.harvest.values)
    scale = dom.l2_norm(u_c) + 1.0
    Tu = direction * u_c / scale
    Tc = direction / scale

    def partial() -> Branch:
        return Branch(tuple(points), tuple(svals), chart, tuple(tvals), tuple(events))

    ds = float(step0)
    while len(points) < max_points:
        base = points[-1]
        ub = base.u.values
        cb = base.c

        c_pred = cb + ds * Tc
        if not c_lo <= c_pred <= c_hi:
            target = c_hi if c_pred > c_hi else c_lo
            frac = (target - cb) / (ds * Tc)
            init = DiscreteField(dom, ub + frac * ds * Tu)
            try:
                end_pt = newton_solve(problem, init, a, target, tol=tol, k_eigs=k_eigs)
            except (NonConvergence, SingularJacobian):
                ds *= 0.5
                if ds < min_step:
                    raise StepUnderflow(
                        f"step underflow at the c={target} boundary", partial()
                    )
                continue
            dist = dom.l2_norm(end_pt.u.values - ub) + abs(end_pt.c - cb)
            points.append(end_pt)
            svals.append(svals[-1] + dist)
            tvals.append(dom.inner(e_vals, end_pt.u.values) / e_sq)
            events.append(BranchEvent("endpoint", len(points) - 1))
            break

        row_u = sp * Tu
        offset = -(row_u @ ub + Tc * cb) - ds
        try:
            u_ld, c_ld, rF, iters = _constrained_solve(
                problem,
                a,
                ub + ds * Tu,
                c_pred,
                row_u,
                Tc,
                offset,
                tol=tol,
                max_iter=max_corrector,
            )
        except NonConvergence:
            ds *= 0.5
            if ds < min_step:
                raise StepUnderflow(
                    f"step underflow near c={cb:.6g} after {len(points)} points",
                    partial(),
                )
            continue

        u64 = u_ld.astype(float)
        c64 = float(c_ld)
        dist = dom.l2_norm(u64 - ub) + abs(c64 - cb)
        if dist < 1e-13:
            ds *= 0.5
            if ds < min_step:
                raise StepUnderflow(
                    f"corrector collapsed onto the current point at c={cb:.6g}",
                    partial(),
                )
            continue

        new = finalize_point(problem, u64, a, c64, rF, k_eigs=k_eigs)
        points.append(new)
        svals.append(svals[-1] + dist)
        tvals.append(dom.inner(e_vals, u64) / e_sq)
        Tu = (u64 - ub) / dist
        Tc = (c64 - cb) / dist

        event = _detect_event(problem, points[-2], new, k_eigs)
        if event is not None:
            kind, dp = event
            events.append(BranchEvent(kind, len(points) - 2, dp))
            if stop_at_events:
                break
        if iters <= 4:
            ds = min(ds * STEP_GROWTH, max_step)

    return partial()


def _detect_event(problem, prev, new, k_eigs):
    if new.degenerate:
        return ("degeneracy", None)
    mu_p = np.asarray(prev.spectrum.eigenvalues)
    mu_n = np.asarray(new.spectrum.eigenvalues)
    for j in range(min(mu_p.size, mu_n.size)):
        if mu_p[j] * mu_n[j] < 0:
            try:
                dp = refine_fold(problem, prev, new, k_eigs=k_eigs)
            except NonConvergence:
                return ("index-change", None)
            return ("fold", dp)
    if new.morse_index != prev.morse_index:
        return ("index-change", None)
    return None


def _fold_system_newton(problem, a, u0, c0, w0, S, tol, max_iter):
    """Newton on {F(u, c) = 0, J(u) w = 0, <w, w> = S} at fixed a.

    Long-double iterate, float64 sparse LU for the corrections. Returns the
    iterate and the converged residual sup norm.
    """
    ld = np.longdouble
    dom = problem.domain
    n = dom.n_interior
    sp = ld(dom.spacing)
    u = np.asarray(u0, dtype=ld)
    c = ld(c0)
    w = np.asarray(w0, dtype=ld)
    harvest = problem.harvest.values
    idx = np.arange(n)
    res = np.inf
    for _ in range(max_iter):
        F = problem.residual_values(u, a, c)
        G = _linearized_apply(problem, u, w, a)
        Nw = sp * (w @ w) - ld(S)
        res = max(
            float(np.max(np.abs(F))),
            float(np.max(np.abs(G))),
            abs(float(Nw)),
        )
        if res < tol:
            return u, c, w, res
        if not np.isfinite(res) or res > 1e8:
            break
        u64 = u.astype(float)
        w64 = w.astype(float)
        J = problem.jacobian_operator(u64, a)
        fpp = eval_nonlinearity(problem.nonlinearity, u64)[2]
        # unknown layout: u -> 0..n-1, c -> n, w -> n+1..2n
        rows = np.concatenate(
            (
                idx, idx[1:], idx[:-1], idx,            # F rows
                idx + n, idx[1:] + n, idx[:-1] + n,     # G rows, w block
                idx + n,                                # G rows, u block
                np.full(n, 2 * n),                      # norm row
            )
        )
        cols = np.concatenate(
            (
                idx, idx[:-1], idx[1:], np.full(n, n),
                idx + n + 1, idx[:-1] + n + 1, idx[1:] + n + 1,
                idx,
                idx + n + 1,
            )
        )
        data = np.concatenate(
            (
                J.diag, J.off, J.off, -harvest,
                J.diag, J.off, J.off,
                -fpp * w64,
                2.0 * float(sp) * w64,
            )
        )
        A = csc_matrix((data, (rows, cols)), shape=(2 * n + 1, 2 * n + 1))
        rhs = np.concatenate(
            (
                np.asarray(-F, dtype=float),
                np.asarray(-G, dtype=float),
                [-float(Nw)],
            )
        )
        try:
            delta = splu(A).solve(rhs)
        except RuntimeError as exc:
            raise NonConvergence(
                f"extended-system factorization failed: {exc}",
                u.astype(float),
                res,
            )
        if not np.all(np.isfinite(delta)):
            break
        u = u + delta[:n].astype(ld)
        c = c + ld(delta[n])
        w = w + delta[n + 1 :].astype(ld)
    raise NonConvergence(
        "extended fold system did not converge", u.astype(float), res
    )


def _package_degenerate(problem, a, u_ld, c_ld, w_ld, expected_kind, tol, k_eigs):
    """Classify a converged extended-system iterate, fix the kernel vector's
    normalization and sign by kind, and re-verify the residual invariants."""
    ld = np.longdouble
    dom = problem.domain
    sp = ld(dom.spacing)
    phi, psi = problem.modes()

    point = finalize_point(
        problem, u_ld.astype(float), a, float(c_ld), 0.0, k_eigs=k_eigs
    )
    if not point.degenerate:
        raise NonConvergence(
            "extended system converged onto a nondegenerate state",
            u_ld.astype(float),
            0.0,
        )
    mu = np.abs(np.asarray(point.spectrum.eigenvalues))
    j = int(np.argmin(mu))
    if j == 0:
        kind = "fold-index0"
        target = inner_product(phi.eigenfunction, phi.eigenfunction)
    elif j == 1:
        kind = "degenerate-index1"
        target = inner_product(psi.eigenfunction, psi.eigenfunction)
    else:
        kind = f"degenerate-index{j}"
        target = inner_product(phi.eigenfunction, phi.eigenfunction)

    w = w_ld * np.sqrt(ld(target) / (sp * (w_ld @ w_ld)))
    if kind == "fold-index0":
        if w[np.argmax(np.abs(w))] < 0:
            w = -w
    else:
        ref = psi.eigenfunction.values if j == 1 else phi.eigenfunction.values
        if float(np.dot(ref, w.astype(float))) < 0:
            w = -w

    F = problem.residual_values(u_ld, a, c_ld)
    G = _linearized_apply(problem, u_ld, w, a)
    res = max(float(np.max(np.abs(F))), float(np.max(np.abs(G))))
    if not res < tol:
        raise NonConvergence(
            f"degenerate point failed re-verification ({res:.3e})",
            u_ld.astype(float),
            res,
        )
    dp = DegeneratePoint(
        float(a),
        float(c_ld),
        DiscreteField(dom, u_ld.astype(float)),
        DiscreteField(dom, w.astype(float)),
        point.morse_index,
        kind,
        res,
    )
    if expected_kind is not None and kind != expected_kind:
        raise WrongKind(expected_kind, dp)
    return dp


def refine_fold(
    problem: Problem,
    low: SolutionPoint,
    high: SolutionPoint,
    *,
    expected_kind: str | None = None,
    tol: float = NEWTON_TOL,
    max_iter: int = 16,
    k_eigs: int = 3,
) -> DegeneratePoint:
    """Collapse a bracketing pair onto the degenerate point between them.

    The endpoints must share a growth rate and straddle a sign change of some
    linearization eigenvalue. Solves {F = 0, J w = 0, <w, w> fixed} for
    (u, c, w), seeded at the eigenvalue-weighted interpolation of the bracket
    with w from the endpoint closer to the crossing. The returned kind
    reflects which eigenvalue actually vanished; pass expected_kind to get a
    WrongKind error (carrying the point) when a different one does.
    """
    if low.a != high.a:
        raise ValueError("bracket endpoints have different growth rates")
    a = low.a
    mu_l = np.asarray(low.spectrum.eigenvalues)
    mu_h = np.asarray(high.spectrum.eigenvalues)
    flips = [
        j for j in range(min(mu_l.size, mu_h.size)) if mu_l[j] * mu_h[j] < 0
    ]
    if not flips:
        raise ValueError("bracket does not straddle an eigenvalue sign change")
    j = flips[0]
    wl, wh = abs(mu_l[j]), abs(mu_h[j])
    frac = wl / (wl + wh) if wl + wh > 0 else 0.5
    u0 = (1.0 - frac) * low.u.values + frac * high.u.values
    c0 = (1.0 - frac) * low.c + frac * high.c
    donor = low if wl <= wh else high
    w0 = donor.spectrum.eigenfunctions[j].values

    dom = problem.domain
    phi = problem.modes()[0]
    S = inner_product(phi.eigenfunction, phi.eigenfunction)
    w0 = w0 * np.sqrt(S / dom.inner(w0, w0))
    u_ld, c_ld, w_ld, _ = _fold_system_newton(problem, a, u0, c0, w0, S, tol, max_iter)
    return _package_degenerate(problem, a, u_ld, c_ld, w_ld, expected_kind, tol, k_eigs)


def fold_normal_form_checks(
    problem: Problem,
    dp: DegeneratePoint,
    *,
    offset: float = 0.02,
    k_eigs: int = 3,
) -> dict:
    """Finite-difference cross-check of the quadratic normal form at a
    degenerate point.

    Probes the family at chart offsets +-offset around the point, with the
    chart pinned by the kernel vector itself (so du/dt = w at the point), and
    returns FD and closed-form values for the eigenvalue slope and the c
    curvature:

        mu'(t*) = int f''(u) w^3 / int w^2
        c''(t*) = -int f''(u) w^3 / int h w

    The vanishing eigenvalue is the first for fold-index0 points and the
    second for index-1 points.
    """
    dom = problem.domain
    w = dp.w.values
    wsq = dom.inner(w, w)
    t_star = dom.inner(dp.u.values, w) / wsq
    j = 0 if dp.kind == "fold-index0" else 1
    plus = solve_at_projection(
        problem, dp.a, dp.w, t_star + offset, dp.u.values + offset * w, dp.c,
        k_eigs=k_eigs,
    )
    minus = solve_at_projection(
        problem, dp.a, dp.w, t_star - offset, dp.u.values - offset * w, dp.c,
        k_eigs=k_eigs,
    )
    mu_p = float(plus.spectrum.eigenvalues[j])
    mu_m = float(minus.spectrum.eigenvalues[j])
    fpp = eval_nonlinearity(problem.nonlinearity, dp.u.values)[2]
    cubic = dom.inner(fpp * w * w, w)
    return {
        "mu_slope_fd": (mu_p - mu_m) / (2.0 * offset),
        "mu_slope_formula": cubic / wsq,
        "c_curvature_fd": (plus.c - 2.0 * dp.c + minus.c) / offset**2,
        "c_curvature_formula": -cubic / dom.inner(problem.harvest.values, w),
        "offset": offset,
    }


def trace_fold_curve(
    problem: Problem,
    seed: DegeneratePoint,
    a_range,
    *,
    step0: float = 0.5,
    min_step: float = 1e-4,
    max_step: float = 2.0,
    tol: float = NEWTON_TOL,
    k_eigs: int = 3,
) -> DegenerateCurve:
    """Sweep a degenerate point across a window of growth rates.

    Natural-parameter marching: at each new a the extended fold system is
    re-solved from a secant predictor in a; steps halve on failure and grow
    by 1.3, and both window edges are hit exactly. Each interior point gets
    the identity check dc/da = int(u w)/int(h w) against the secant slope,
    recorded in slope_check as relative mismatches.
    """
    a_lo, a_hi = map(float, a_range)
    if not a_lo < a_hi:
        raise ValueError("empty growth-rate window")
    lam1 = problem.modes()[0].eigenvalue
    if a_lo <= lam1:
        raise ValueError("window must lie above the first eigenvalue")
    if not a_lo <= seed.a <= a_hi:
        raise ValueError("seed growth rate outside the window")
    dom = problem.domain
    S = dom.inner(seed.w.values, seed.w.values)

    def walk(a_stop: float) -> list[DegeneratePoint]:
        out: list[DegeneratePoint] = []
        prev = seed
        prev2 = None
        step = float(step0)
        a_cur = seed.a
        while abs(a_stop - a_cur) > 1e-12:
            da = np.sign(a_stop - a_cur) * min(step, abs(a_stop - a_cur))
            a_new = a_cur + da
            if prev2 is not None and prev.a != prev2.a:
                r = (a_new - prev.a) / (prev.a - prev2.a)
                u0 = prev.u.values + r * (prev.u.values - prev2.u.values)
                c0 = prev.c + r * (prev.c - prev2.c)
                w0 = prev.w.values + r * (prev.w.values - prev2.w.values)
            else:
                u0, c0, w0 = prev.u.values, prev.c, prev.w.values
            try:
                u_ld, c_ld, w_ld, _ = _fold_system_newton(
                    problem, a_new, u0, c0, w0, S, tol, 16
                )
                dp = _package_degenerate(
                    problem, a_new, u_ld, c_ld, w_ld, seed.kind, tol, k_eigs
                )
            except (NonConvergence, WrongKind):
                step *= 0.5
                if step < min_step:
                    raise NonConvergence(
                        f"fold sweep stalled near a={a_new:.6g}",
                        prev.u.values,
                        np.nan,
                    )
                continue
            out.append(dp)
            prev2, prev = prev, dp
            a_cur = a_new
            step = min(step * STEP_GROWTH, max_step)
        return out

    up = walk(a_hi)
    down = walk(a_lo)
    pts = list(reversed(down)) + [seed] + up
    params = tuple(p.a for p in pts)

    # Identity check dc/da = int(u w)/int(h w) at every point, against a
    # centered secant from two nearby extended solves. The probe spacing is
    # kept small so the secant resolves the curve even where it bends hard.
    checks = []
    probe = max(min_step, 1e-2 * min(np.diff(params).min(), 1.0)) if len(pts) > 1 else min_step
    for p in pts:
        w = p.w.values
        formula = dom.inner(p.u.values, w) / dom.inner(problem.harvest.values, w)
        try:
            sides = []
            for sign in (-1.0, 1.0):
                u_ld, c_ld, w_ld, _ = _fold_system_newton(
                    problem, p.a + sign * probe, p.u.values, p.c, w, S, tol, 16
                )
                sides.append(float(c_ld))
            secant = (sides[1] - sides[0]) / (2.0 * probe)
        except NonConvergence:
            continue
        checks.append(abs(secant - formula) / max(abs(formula), 1e-12))
    return DegenerateCurve(tuple(pts), params, seed.kind, tuple(checks))


def _sigma_system_newton(problem, t, a0, y0, c0, z0, psi_v, S2, tol, max_iter):
    """Newton for the index-1 degenerate family in the chart coordinate t:
    unknowns (a, y, c, zeta) with u = t psi + y, <y, psi> = 0, J zeta = 0 and
    <zeta, zeta> = S2, all at fixed t."""
    ld = np.longdouble
    dom = problem.domain
    n = dom.n_interior
    sp = ld(dom.spacing)
    aa = ld(a0)
    y = np.asarray(y0, dtype=ld)
    cc = ld(c0)
    z = np.asarray(z0, dtype=ld)
    psi_ld = np.asarray(psi_v, dtype=ld)
    harvest = problem.harvest.values
    idx = np.arange(n)
    res = np.inf
    for _ in range(max_iter):
        u = ld(t) * psi_ld + y
        F = problem.residual_values(u, aa, cc)
        G = _linearized_apply(problem, u, z, aa)
        N1 = sp * (y @ psi_ld)
        N2 = sp * (z @ z) - ld(S2)
        res = max(
            float(np.max(np.abs(F))),
            float(np.max(np.abs(G))),
            abs(float(N1)),
            abs(float(N2)),
        )
        if res < tol:
            return aa, y, cc, z, res
        if not np.isfinite(res) or res > 1e8:
            break
        u64 = u.astype(float)
        z64 = z.astype(float)
        J = problem.jacobian_operator(u64, aa.astype(float))
        fpp = eval_nonlinearity(problem.nonlinearity, u64)[2]
        # unknown layout: a -> 0, y -> 1..n, c -> n+1, zeta -> n+2..2n+1
        rows = np.concatenate(
            (
                idx, idx, idx[1:], idx[:-1], idx,          # F rows
                idx + n, idx + n, idx + n,                 # G rows: a, y columns
                idx[1:] + n, idx[:-1] + n,                 # G rows: zeta off-diagonals
                np.full(n, 2 * n),                         # <y, psi> row
                np.full(n, 2 * n + 1),                     # norm row
            )
        )
        cols = np.concatenate(
            (
                np.zeros(n, dtype=int), idx + 1, idx[:-1] + 1, idx[1:] + 1,
                np.full(n, n + 1),
                np.zeros(n, dtype=int), idx + 1, idx + n + 2,
                idx[:-1] + n + 2, idx[1:] + n + 2,
                idx + 1,
                idx + n + 2,
            )
        )
        data = np.concatenate(
            (
                u64, J.diag, J.off, J.off, -harvest,
                z64, -fpp * z64, J.diag,
                J.off, J.off,
                float(sp) * psi_v,
                2.0 * float(sp) * z64,
            )
        )
        A = csc_matrix((data, (rows, cols)), shape=(2 * n + 2, 2 * n + 2))
        rhs = np.concatenate(
            (
                np.asarray(-F, dtype=float),
                np.asarray(-G, dtype=float),
                [-float(N1), -float(N2)],
            )
        )
        try:
            delta = splu(A).solve(rhs)
        except RuntimeError as exc:
            raise NonConvergence(
                f"degenerate-family factorization failed: {exc}",
                u64,
                res,
            )
        if not np.all(np.isfinite(delta)):
            break
        aa = aa + ld(delta[0])
        y = y + delta[1 : n + 1].astype(ld)
        cc = cc + ld(delta[n + 1])
        z = z + delta[n + 2 :].astype(ld)
    raise NonConvergence(
        "degenerate-family system did not converge",
        (ld(t) * psi_ld + y).astype(float),
        res,
    )


def trace_index1_degenerate_curve(
    problem: Problem,
    t_range=None,
    *,
    sigma: float = 1.0,
    dt0: float = 0.05,
    min_dt: float = 1e-5,
    max_dt: float = 0.1,
    tol: float = NEWTON_TOL,
    k_eigs: int = 3,
) -> DegenerateCurve:
    """The index-1 degenerate family parametrized by the second-eigenfunction
    projection t, swept across and beyond the exact segment.

    Inside [-M/beta, M] the family is the exact line (a at the second
    eigenvalue, u = t psi, c = 0, kernel psi) and each sample is solved
    directly from that seed. Outside, the extended system (unknowns a, y, c,
    zeta with u = t psi + y and y orthogonal to psi) is marched outward with
    adaptive steps. When t_range is omitted it extends sigma beyond the
    segment on both sides; an explicit range must cover the segment.
    """
    dom = problem.domain
    M = problem.nonlinearity.M
    phi, psi = problem.modes()
    psi_v = psi.eigenfunction.values
    beta = -float(np.min(psi_v))
    if beta <= 0:
        raise ValueError("second eigenfunction has no negative part")
    seg_lo, seg_hi = -M / beta, M
    if t_range is None:
        t_range = (seg_lo - sigma, seg_hi + sigma)
    t_lo, t_hi = map(float, t_range)
    if t_lo > seg_lo or t_hi < seg_hi:
        raise ValueError("t window must cover the degenerate segment")
    S2 = dom.inner(psi_v, psi_v)
    lam2 = psi.eigenvalue
    n = dom.n_interior

    def solve_at(t, a0, y0, c0, z0):
        aa, y, cc, z, _ = _sigma_system_newton(
            problem, t, a0, y0, c0, z0, psi_v, S2, tol, 16
        )
        u_ld = np.longdouble(t) * psi_v.astype(np.longdouble) + y
        dp = _package_degenerate(
            problem, float(aa), u_ld, cc, z, "degenerate-index1", tol, k_eigs
        )
        return dp, (float(aa), y.astype(float), float(cc), z.astype(float))

    inside_ts = np.linspace(seg_lo, seg_hi, max(2, int(round((seg_hi - seg_lo) / dt0)) + 1))
    if seg_hi == seg_lo:
        inside_ts = np.array([seg_lo])
    inside = []
    for t in inside_ts:
        dp, _ = solve_at(float(t), lam2, np.zeros(n), 0.0, psi_v)
        inside.append((float(t), dp))

    def march(t_start, t_stop):
        out = []
        carry = (lam2, np.zeros(n), 0.0, psi_v)
        prev_carry = None
        prev_t = t_start
        prev2_t = None
        step = float(dt0)
        t_cur = t_start
        while abs(t_stop - t_cur) > 1e-12:
            dt = np.sign(t_stop - t_cur) * min(step, abs(t_stop - t_cur))
            t_new = t_cur + dt
            if prev_carry is not None and prev_t != prev2_t:
                r = (t_new - prev_t) / (prev_t - prev2_t)
                a0 = carry[0] + r * (carry[0] - prev_carry[0])
                y0 = carry[1] + r * (carry[1] - prev_carry[1])
                c0 = carry[2] + r * (carry[2] - prev_carry[2])
                z0 = carry[3] + r * (carry[3] - prev_carry[3])
            else:
                a0, y0, c0, z0 = carry
            try:
                dp, new_carry = solve_at(float(t_new), a0, y0, c0, z0)
            except (NonConvergence, WrongKind):
                step *= 0.5
                if step < min_dt:
                    raise NonConvergence(
                        f"degenerate family stalled near t={t_new:.6g}",
                        np.zeros(n),
                        np.nan,
                    )
                continue
            out.append((float(t_new), dp))
            prev_carry, carry = carry, new_carry
            prev2_t, prev_t = prev_t, t_new
            t_cur = t_new
            step = min(step * STEP_GROWTH, max_dt)
        return out

    upper = march(seg_hi, t_hi) if t_hi > seg_hi else []
    lower = march(seg_lo, t_lo) if t_lo < seg_lo else []
    samples = list(reversed(lower)) + inside + upper
    samples.sort(key=lambda pair: pair[0])
    ts = tuple(t for t, _ in samples)
    pts = tuple(dp for _, dp in samples)
    return DegenerateCurve(pts, ts, "degenerate-index1")


def delta_window(problem: Problem, curve: DegenerateCurve) -> float:
    """Growth-rate elevation of a traced index-1 degenerate family above the
    second eigenvalue, measured at its two ends and taking the smaller.

    This is the numerically certified half-width of the window above the
    second eigenvalue in which the four-solution structure is anchored.
    Raises if the curve fails to bend upward on both sides.
    """
    lam2 = problem.modes()[1].eigenvalue
    delta = min(curve.points[0].a, curve.points[-1].a) - lam2
    if delta <= 0:
        raise ValueError(
            f"curve does not rise above the second eigenvalue (delta={delta:.3e})"
        )
    return float(delta)


def _czero_seed(problem, a, e_vals, eps, tol, k_eigs, positive):
    """First point of a zero-harvest family at growth rate a: try the offset
    start (M + eps) e, then a geometric amplitude scan (the Newton basin of
    the eigenfunction start can collapse onto zero when M = 0)."""
    dom = problem.domain
    M = problem.nonlinearity.M
    K = critical_cap(problem.nonlinearity, a)
    amplitudes = [M + eps] + list(np.geomspace(0.05, 2.0 * max(K, 1.0), 10))
    for s in amplitudes:
        try:
            pt = newton_solve(
                problem, DiscreteField(dom, s * e_vals), a, 0.0, tol=tol, k_eigs=k_eigs
            )
        except (NonConvergence, SingularJacobian):
            continue
        if dom.l2_norm(pt.u.values) < 1e-6 or pt.degenerate:
            continue
        if dom.inner(pt.u.values, e_vals) <= 0:
            continue
        if positive and float(np.min(pt.u.values)) < -1e-8:
            continue
        return pt
    raise NonConvergence(
        f"no nonzero zero-harvest state found at a={a:.6g}", np.zeros(dom.n_interior), np.nan
    )


def continue_czero_branch(
    problem: Problem,
    which: str,
    a_range,
    *,
    step0: float = 0.25,
    min_step: float = 1e-6,
    max_step: float = 1.0,
    eps_seed: float = 0.05,
    tol: float = NEWTON_TOL,
    k_eigs: int = 3,
) -> Branch:
    """Zero-harvest solution family swept in the growth rate.

    which='dagger' follows the positive family above the first eigenvalue in
    the phi chart; which='ddagger' follows the sign-changing family above the
    second in the psi chart (the side with positive chart coordinate). The
    window must start strictly above the relevant eigenvalue. Points carry
    c = 0 and their own growth rates; arclengths accumulate
    ||du||_L2 + |da|.
    """
    phi, psi = problem.modes()
    if which == "dagger":
        pair, chart, positive = phi, "phi", True
    elif which == "ddagger":
        pair, chart, positive = psi, "psi", False
    else:
        raise ValueError(f"unknown family {which!r}; expected 'dagger' or 'ddagger'")
    lam = pair.eigenvalue
    e_vals = pair.eigenfunction.values
    a_lo, a_hi = map(float, a_range)
    if not a_lo < a_hi:
        raise ValueError("empty growth-rate window")
    if a_lo <= lam + 1e-6:
        raise ValueError("window must start strictly above the bifurcation eigenvalue")

    dom = problem.domain
    e_sq = dom.inner(e_vals, e_vals)
    seed = _czero_seed(problem, a_lo, e_vals, eps_seed, tol, k_eigs, positive)

    points = [seed]
    svals = [0.0]
    tvals = [dom.inner(e_vals, seed.u.values) / e_sq]
    events: list[BranchEvent] = []

    def partial() -> Branch:
        return Branch(tuple(points), tuple(svals), chart, tuple(tvals), tuple(events))

    step = float(step0)
    a_cur = a_lo
    prev_u = None
    prev_a = None
    while abs(a_hi - a_cur) > 1e-12:
        da = min(step, a_hi - a_cur)
        a_new = a_cur + da
        base = points[-1]
        if prev_u is not None and a_cur != prev_a:
            r = (a_new - a_cur) / (a_cur - prev_a)
            u0 = base.u.values + r * (base.u.values - prev_u)
        else:
            u0 = base.u.values
        try:
            pt = newton_solve(
                problem, DiscreteField(dom, u0), a_new, 0.0, tol=tol, k_eigs=k_eigs
            )
        except (NonConvergence, SingularJacobian):
            step *= 0.5
            if step < min_step:
                raise StepUnderflow(
                    f"zero-harvest sweep stalled near a={a_new:.6g}", partial()
                )
            continue
        if dom.l2_norm(pt.u.values) < 1e-6:
            # fell onto the zero state; treat like a failed step
            step *= 0.5
            if step < min_step:
                raise StepUnderflow(
                    f"zero-harvest sweep collapsed onto zero near a={a_new:.6g}",
                    partial(),
                )
            continue
        dist = dom.l2_norm(pt.u.values - base.u.values) + abs(a_new - a_cur)
        prev_u, prev_a = base.u.values, a_cur
        points.append(pt)
        svals.append(svals[-1] + dist)
        tvals.append(dom.inner(e_vals, pt.u.values) / e_sq)
        a_cur = a_new
        if pt.degenerate:
            events.append(BranchEvent("degeneracy", len(points) - 1))
            break
        step = min(step * STEP_GROWTH, max_step)
    else:
        events.append(BranchEvent("endpoint", len(points) - 1))
    return partial()


def branch_derivative_at_zero(problem: Problem, a: float, chart: str = "phi"):
    """Slope and direction of the small-amplitude harvested branch through
    the zero state.

    Returns (dc_dt, v): the chart-coordinate slope

        dc/dt = (int e^2 / int h e) (a - lambda_e)

    with e the max-normalized chart eigenfunction, and the first-order
    response field v solving (Delta + a) v = h, assembled as the exact
    eigencomponent int(h e_hat)/(a - lambda_e) plus the shifted-Laplacian
    solve on the deflated remainder (e_hat the unit-L2 eigenfunction). In the
    linear regime the steady state is c v to leading order. Raises ValueError
    within 1e-6 of the chart eigenvalue.
    """
    pair = _chart_pair(problem, chart)
    lam = pair.eigenvalue
    if abs(a - lam) < 1e-6:
        raise ValueError(
            f"growth rate {a:.8g} too close to the chart eigenvalue {lam:.8g}"
        )
    e_f = pair.eigenfunction
    e_sq = inner_product(e_f, e_f)
    he = inner_product(problem.harvest, e_f)
    if abs(he) < 1e-12:
        raise ValueError("harvest has no component on the chart mode")
    dc_dt = e_sq / he * (a - lam)

    ehat = renormalize_l2(e_f)
    h_coeff = inner_product(problem.harvest, ehat)
    rhs = problem.harvest.values - h_coeff * ehat.values
    v = h_coeff / (a - lam) * ehat.values + problem.laplacian.shifted(a).factor().solve(rhs)
    return float(dc_dt), DiscreteField(problem.domain, v)


def build_degenerate_segment(
    problem: Problem,
    *,
    n_check: int = 9,
    tol: float = 1e-12,
) -> DegenerateSegment:
    """Construct and verify the analytic degenerate segment at the second
    eigenvalue.

    The states t*psi for t in [-M/beta, M] keep the ramp inactive, so with
    the exact long-double sine samples of psi and the closed-form discrete
    eigenvalue they satisfy the steady equation to rounding. Verification
    evaluates the extended-precision residual on a sample of t values and
    requires the worst case below tol; the returned segment stores the
    float64 eigenfunction for downstream use.
    """
    ld = np.longdouble
    dom = problem.domain
    nl = problem.nonlinearity
    psi_pair = problem.modes()[1]
    psi64 = psi_pair.eigenfunction
    beta = -float(np.min(psi64.values))
    if beta <= 0:
        raise ValueError("second eigenfunction has no negative part")
    t_lo, t_hi = -nl.M / beta, nl.M

    n = dom.n_interior
    L = ld(dom.length)
    h = L / ld(n + 1)
    x = np.arange(1, n + 1, dtype=ld) * h
    raw = -np.sin(2 * PI_LONGDOUBLE * x / L)
    if float(np.dot(raw.astype(float), psi64.values)) < 0:
        raw = -raw
    psi_ld = raw / np.max(np.abs(raw))
    lam2_ld = (ld(4) / h**2) * np.sin(PI_LONGDOUBLE * h / L) ** 2

    ts = np.linspace(t_lo, t_hi, n_check) if t_hi > t_lo else np.array([t_lo])
    worst = 0.0
    for t in ts:
        r = residual_sup_extended(problem, ld(t) * psi_ld, lam2_ld, ld(0))
        worst = max(worst, float(r))
    if not worst < tol:
        raise ValueError(
            f"segment states fail extended-precision verification "
            f"({worst:.3e} >= {tol:.3e})"
        )
    return DegenerateSegment(
        float(psi_pair.eigenvalue), float(t_lo), float(t_hi), psi64, worst
    )
