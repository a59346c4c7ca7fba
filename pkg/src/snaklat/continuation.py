"""Pseudo-arclength continuation, fold refinement, branch switching, isolas.

Branches are continued with a secant predictor (the first tangent comes from
a small natural-parameter step) and a Newton corrector constrained to the
hyperplane orthogonal to the tangent.  The step length adapts: it halves on
corrector failure and grows after quick convergence.  Folds are flagged by a
sign change of the tangent's parameter component and refined by Newton on
the augmented system {F = 0, J phi = 0, <c, phi> = 1}.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp

from . import lattice, solver, spectral
from .lattice import Field


class CorrectorStalled(Exception):
    pass


class RefinementFailed(Exception):
    pass


class MissedEvent(Exception):
    pass


class NoConvergence(solver.NoConvergence):
    pass


START = "start"
END = "end"
FOLD = "fold"
BRANCH_POINT = "branch_point"


@dataclass
class StepConfig:
    h_init: float = 1e-3
    h_min: float = 1e-7
    h_max: float = 0.05
    max_points: int = 2000
    grow: float = 1.3
    fast_iters: int = 3
    slow_iters: int = 7
    corrector_tol: float = 1e-10
    max_corrector_iters: int = 10
    predictor: str = "secant"  # "tangent" available behind this flag
    detect_closure: bool = False
    closure_align: float = 0.99
    closure_min_points: int = 12
    stop_after_folds: int | None = None
    points_after_fold: int = 6
    max_norm: float | None = None
    stop_condition: object | None = None  # callable BranchPoint -> bool
    # corrector acceptance: reject points that strayed from the predictor or
    # reversed direction (both signal a jump onto a different branch)
    max_predictor_distance: float = 0.5   # relative to h
    min_tangent_align: float = -0.2
    # (p_lo, p_hi, h_cap) triples: inside these parameter bands the step is
    # capped, resolving fold structures whose scale is known in advance
    refine_bands: tuple = ()


@dataclass
class BranchPoint:
    u: Field
    mu: float
    d: float
    norm: float = 0.0
    unstable_count: int | None = None
    tangent: np.ndarray | None = None

    def parameter_value(self, parameter):
        return self.mu if parameter == "mu" else self.d


@dataclass
class FoldPoint:
    u: Field
    mu: float
    d: float
    phi: Field
    refined: bool = True
    parameter: str = "mu"


@dataclass
class Branch:
    points: list = field(default_factory=list)
    events: list = field(default_factory=list)  # (index, kind)
    closed: bool = False
    parameter: str = "mu"

    def fold_indices(self):
        return [i for i, kind in self.events if kind == FOLD]


def state_norm(u):
    """l2 norm of the unfolded full-square field (the diagram ordinate)."""
    if u.grid.kind == lattice.WEDGE:
        w = lattice.orbit_weights(u.grid)
        return float(np.sqrt(np.sum(w * u.values**2)))
    return float(np.linalg.norm(u.values))


def _parameter_column(values, grid, nonlinearity, mu, d, parameter):
    if parameter == "mu":
        return nonlinearity.f_mu(values, mu) + np.zeros(grid.size)
    return lattice.laplacian_matrix(grid) @ values


def _make_point(values, grid, mu, d, tangent=None):
    u = Field(grid, values.copy())
    return BranchPoint(u=u, mu=mu, d=d, norm=state_norm(u), tangent=tangent)


def _corrector(values, p, tangent, predicted, grid, nonlinearity, parameter,
               fixed, cfg):
    """Newton with the pseudo-arclength constraint <x - predicted, tangent> = 0."""
    vals = values.copy()
    mu, d = (p, fixed) if parameter == "mu" else (fixed, p)
    for it in range(cfg.max_corrector_iters):
        res = solver.residual_values(vals, grid, nonlinearity, mu, d)
        rnorm = np.max(np.abs(res))
        cons = tangent[:-1] @ (vals - predicted[:-1]) + tangent[-1] * (
            p - predicted[-1])
        if rnorm <= cfg.corrector_tol and abs(cons) <= 1e-12 * max(1.0, abs(p)):
            return vals, p, it
        jac = solver.jacobian_matrix(vals, grid, nonlinearity, mu, d)
        fp = _parameter_column(vals, grid, nonlinearity, mu, d, parameter)
        try:
            du, dp = solver.bordered_solve(jac, fp, tangent[:-1],
                                           tangent[-1], -res, [-cons])
        except solver.SingularBorderedSystem as exc:
            raise NoConvergence(str(exc)) from exc
        vals = vals + du
        p = p + dp[0]
        mu, d = (p, fixed) if parameter == "mu" else (fixed, p)
        if not np.all(np.isfinite(vals)):
            raise NoConvergence("corrector produced non-finite state")
    res = solver.residual_values(vals, grid, nonlinearity, mu, d)
    if np.max(np.abs(res)) <= cfg.corrector_tol:
        return vals, p, cfg.max_corrector_iters
    raise NoConvergence("corrector did not reach tolerance")


def _tangent_solve(values, p, grid, nonlinearity, parameter, fixed, prev_tangent):
    """Tangent of the solution curve, oriented along the previous tangent."""
    mu, d = (p, fixed) if parameter == "mu" else (fixed, p)
    jac = solver.jacobian_matrix(values, grid, nonlinearity, mu, d)
    fp = _parameter_column(values, grid, nonlinearity, mu, d, parameter)
    du, dp = solver.bordered_solve(jac, fp, prev_tangent[:-1],
                                   prev_tangent[-1],
                                   np.zeros(grid.size), [1.0])
    t = np.concatenate([du, dp])
    return t / np.linalg.norm(t)


def continue_branch(u0, nonlinearity, mu, d, parameter="mu",
                    config=None, direction=1.0, p_bounds=None):
    """Trace a solution branch in mu (fixed d) or d (fixed mu).

    ``u0`` must satisfy the residual tolerance at (mu, d); ``direction``
    selects the initial parameter orientation.  Returns a :class:`Branch`
    whose points all satisfy the corrector tolerance; a corrector stall ends
    the branch with an End event rather than raising.
    """
    cfg = config or StepConfig()
    grid = u0.grid
    p0 = mu if parameter == "mu" else d
    fixed = d if parameter == "mu" else mu
    if p_bounds is None:
        p_bounds = (-np.inf, np.inf)

    vals0 = np.asarray(u0.values, dtype=float)
    res0 = solver.residual_values(vals0, grid, nonlinearity, mu, d)
    if np.max(np.abs(res0)) > cfg.corrector_tol:
        start_field, _ = solver.newton_solve(u0, nonlinearity, mu, d,
                                             tol=cfg.corrector_tol)
        vals0 = start_field.values

    # first tangent from a small natural-parameter step
    dp = direction * max(cfg.h_init, 10 * cfg.h_min)
    nat = None
    for _ in range(12):
        p_try = p0 + dp
        mu_t, d_t = (p_try, fixed) if parameter == "mu" else (fixed, p_try)
        try:
            nat, _ = solver.newton_solve(Field(grid, vals0), nonlinearity,
                                         mu_t, d_t, tol=cfg.corrector_tol)
            break
        except solver.SolverError:
            dp *= 0.5
    if nat is None:
        raise CorrectorStalled("could not take the initial natural step")
    t = np.concatenate([nat.values - vals0, [dp]])
    t /= np.linalg.norm(t)

    branch = Branch(parameter=parameter)
    branch.events.append((0, START))
    branch.points.append(_make_point(vals0, grid, mu, d, tangent=t))

    vals, p = vals0, p0
    h = cfg.h_init
    folds_seen = 0
    last_fold_index = None
    x0 = np.concatenate([vals0, [p0]])
    t0 = t.copy()

    while len(branch.points) < cfg.max_points:
        h_eff = h
        for lo, hi, cap in cfg.refine_bands:
            if lo <= p <= hi or lo <= p + h * t[-1] <= hi:
                h_eff = min(h_eff, cap)
        predicted = np.concatenate([vals + h_eff * t[:-1],
                                    [p + h_eff * t[-1]]])
        try:
            new_vals, new_p, iters = _corrector(
                predicted[:-1], predicted[-1], t, predicted, grid,
                nonlinearity, parameter, fixed, cfg)
        except (NoConvergence, solver.SolverError):
            h = 0.5 * h_eff
            if h < cfg.h_min:
                branch.events.append((len(branch.points) - 1, END))
                return branch
            continue

        x_new = np.concatenate([new_vals, [new_p]])
        x_old = np.concatenate([vals, [p]])
        secant = x_new - x_old
        step_len = np.linalg.norm(secant)
        if step_len < cfg.h_min:
            branch.events.append((len(branch.points) - 1, END))
            return branch
        strayed = (np.linalg.norm(x_new - predicted)
                   > cfg.max_predictor_distance * h_eff + 10 * cfg.h_min)
        reversed_ = (secant / step_len) @ t < cfg.min_tangent_align
        if strayed or reversed_:
            h = 0.5 * h_eff
            if h < cfg.h_min:
                branch.events.append((len(branch.points) - 1, END))
                return branch
            continue
        if cfg.predictor == "tangent":
            t_new = _tangent_solve(new_vals, new_p, grid, nonlinearity,
                                   parameter, fixed, t)
        else:
            t_new = secant / step_len

        mu_new, d_new = (new_p, fixed) if parameter == "mu" else (fixed, new_p)
        point = _make_point(new_vals, grid, mu_new, d_new, tangent=t_new)
        branch.points.append(point)
        idx = len(branch.points) - 1

        if t[-1] * t_new[-1] < 0:
            branch.events.append((idx, FOLD))
            folds_seen += 1
            last_fold_index = idx

        if iters <= cfg.fast_iters:
            h = min(h * cfg.grow, cfg.h_max)
        elif iters >= cfg.slow_iters:
            h = max(0.5 * h_eff, cfg.h_min)

        vals, p, t = new_vals, new_p, t_new

        if cfg.detect_closure and idx >= cfg.closure_min_points:
            if (np.linalg.norm(x_new - x0) <= 2 * max(h, step_len)
                    and t_new @ t0 > cfg.closure_align):
                branch.closed = True
                first = branch.points[0]
                branch.points.append(_make_point(first.u.values, grid,
                                                 first.mu, first.d,
                                                 tangent=t0.copy()))
                branch.events.append((len(branch.points) - 1, END))
                return branch

        if not (p_bounds[0] <= new_p <= p_bounds[1]):
            branch.events.append((idx, END))
            return branch
        if cfg.max_norm is not None and point.norm > cfg.max_norm:
            branch.events.append((idx, END))
            return branch
        if (cfg.stop_after_folds is not None
                and folds_seen >= cfg.stop_after_folds
                and idx - last_fold_index >= cfg.points_after_fold):
            branch.events.append((idx, END))
            return branch
        if cfg.stop_condition is not None and cfg.stop_condition(point):
            branch.events.append((idx, END))
            return branch

    branch.events.append((len(branch.points) - 1, END))
    return branch


# ---------------------------------------------------------------------------
# fold refinement


def refine_fold(point_a, point_b, nonlinearity, parameter="mu",
                tol_res=1e-10, tol_null=1e-8, max_iters=40, margin=None):
    """Newton on the augmented fold system between two bracketing points.

    Unknowns are (u, phi, p) at the other parameter fixed; the initial null
    vector comes from the branch tangent.  ``margin`` bounds how far beyond
    the bracket parameter values the refined fold may sit (the fold lies up
    to one arclength step past them).  Returns a refined :class:`FoldPoint`
    or raises :class:`RefinementFailed`.
    """
    grid = point_a.u.grid
    n = grid.size
    seed = point_b if abs(point_b.tangent[-1]) < abs(point_a.tangent[-1]) \
        else point_a
    vals = seed.u.values.copy()
    p = seed.parameter_value(parameter)
    fixed = seed.d if parameter == "mu" else seed.mu
    phi = seed.tangent[:-1].copy()
    nphi = np.linalg.norm(phi)
    if nphi < 1e-12:
        raise RefinementFailed("degenerate tangent at fold candidate")
    phi /= nphi
    c = phi.copy()

    lap = lattice.laplacian_matrix(grid)
    if margin is None:
        step_len = np.linalg.norm(point_b.u.values - point_a.u.values) + abs(
            point_b.parameter_value(parameter)
            - point_a.parameter_value(parameter))
        margin = 2.0 * step_len + 1e-8
    p_lo = min(point_a.parameter_value(parameter),
               point_b.parameter_value(parameter)) - margin
    p_hi = max(point_a.parameter_value(parameter),
               point_b.parameter_value(parameter)) + margin

    def augmented_residual(vals_, phi_, p_):
        mu_, d_ = (p_, fixed) if parameter == "mu" else (fixed, p_)
        res_ = solver.residual_values(vals_, grid, nonlinearity, mu_, d_)
        jac_ = solver.jacobian_matrix(vals_, grid, nonlinearity, mu_, d_)
        return res_, jac_, np.concatenate([res_, jac_ @ phi_,
                                           [c @ phi_ - 1.0]])

    res, jac, full = augmented_residual(vals, phi, p)
    fnorm = np.max(np.abs(full))
    for _ in range(max_iters):
        mu, d = (p, fixed) if parameter == "mu" else (fixed, p)
        jphi = jac @ phi
        if (np.max(np.abs(res)) <= tol_res
                and np.max(np.abs(jphi)) <= tol_null * np.linalg.norm(phi)):
            phi /= np.linalg.norm(phi)
            return FoldPoint(u=Field(grid, vals), mu=mu, d=d,
                             phi=Field(grid, phi), parameter=parameter)
        fp = _parameter_column(vals, grid, nonlinearity, mu, d, parameter)
        if parameter == "mu":
            dJphi_dp = nonlinearity.f_umu(vals, mu) * phi
        else:
            dJphi_dp = lap @ phi
        dJphi_du = sp.diags(nonlinearity.f_uu(vals, mu) * phi)
        zero = sp.csr_matrix((n, n))
        top = sp.hstack([jac, zero, sp.csr_matrix(fp).T])
        mid = sp.hstack([dJphi_du, jac, sp.csr_matrix(dJphi_dp).T])
        bot = sp.hstack([sp.csr_matrix((1, n)), sp.csr_matrix(c),
                         sp.csr_matrix((1, 1))])
        big = sp.vstack([top, mid, bot]).tocsc()
        rhs = -np.concatenate([res, jphi, [c @ phi - 1.0]])
        try:
            lu = sp.linalg.splu(big)
            step = lu.solve(rhs)
        except RuntimeError as exc:
            raise RefinementFailed(f"augmented solve failed: {exc}") from exc
        if not np.all(np.isfinite(step)):
            raise RefinementFailed("augmented solve produced non-finite step")
        # backtracking keeps the ill-conditioned degenerate folds in check
        damp = 1.0
        for _ in range(7):
            v_try = vals + damp * step[:n]
            phi_try = phi + damp * step[n:2 * n]
            p_try = p + damp * step[-1]
            res_t, jac_t, full_t = augmented_residual(v_try, phi_try, p_try)
            tnorm = np.max(np.abs(full_t))
            if np.isfinite(tnorm) and tnorm < fnorm:
                break
            damp *= 0.5
        else:
            raise RefinementFailed("fold refinement stalled")
        vals, phi, p = v_try, phi_try, p_try
        res, jac, fnorm = res_t, jac_t, tnorm
        if not (p_lo <= p <= p_hi):
            raise RefinementFailed(f"fold refinement left the bracket: p={p}")
    raise RefinementFailed("fold refinement did not converge")


def detect_and_refine_folds(branch, nonlinearity, refine=True):
    """Refine every fold event on a branch; failures are flagged, not fatal."""
    if len(branch.points) < 3:
        raise ValueError("need at least 3 branch points to refine folds")
    out = []
    for idx in branch.fold_indices():
        a = branch.points[max(idx - 1, 0)]
        b = branch.points[idx]
        if not refine:
            out.append(FoldPoint(u=b.u.copy(), mu=b.mu, d=b.d,
                                 phi=Field(b.u.grid, b.tangent[:-1] /
                                           np.linalg.norm(b.tangent[:-1])),
                                 refined=False, parameter=branch.parameter))
            continue
        # the fold sits within a couple of arclength steps of the bracket;
        # adaptive stepping can make the final step tiny, so measure the
        # local step scale over a wider stencil
        lo = max(idx - 3, 0)
        hi = min(idx + 2, len(branch.points))
        margin = 1e-8
        for j in range(lo, hi - 1):
            pa, pb = branch.points[j], branch.points[j + 1]
            margin = max(margin, 2.0 * (
                np.linalg.norm(pb.u.values - pa.u.values)
                + abs(pb.parameter_value(branch.parameter)
                      - pa.parameter_value(branch.parameter))))
        try:
            out.append(refine_fold(a, b, nonlinearity,
                                   parameter=branch.parameter, margin=margin))
        except RefinementFailed:
            out.append(FoldPoint(u=b.u.copy(), mu=b.mu, d=b.d,
                                 phi=Field(b.u.grid, b.tangent[:-1] /
                                           np.linalg.norm(b.tangent[:-1])),
                                 refined=False, parameter=branch.parameter))
    return out


# ---------------------------------------------------------------------------
# branch switching and isolas


def asymmetry(values, grid, symmetry):
    """Distance of a full-square field from its group average."""
    return float(np.linalg.norm(values - lattice.symmetrize(values, grid,
                                                            symmetry)))


def switch_branch(fold, psi, nonlinearity, eps=None, max_retries=4,
                  tol=1e-10, mu_offsets=(0.0,)):
    """Step off a fold along a critical direction, dropping all symmetry.

    ``psi`` is a near-null eigenvector on the full square (unit norm).  The
    corrected point solves {F(u, mu) = 0, <psi, u - u_fold> = eps} with mu
    free, which parametrizes the bifurcating branch by its asymmetric
    amplitude.  On failure eps is halved up to ``max_retries`` times; when
    the crossing mode is degenerate exactly at the fold (two-dimensional
    representation planes), starting from a slightly offset mu regularizes
    the pinned system, so ``mu_offsets`` are tried in order.
    """
    u_sym = lattice.unfold(fold.u) if fold.u.grid.kind == lattice.WEDGE \
        else fold.u
    grid = lattice.full_square(u_sym.grid.half_width, None,
                               window=fold.u.grid.symmetry
                               if fold.u.grid.kind == lattice.WEDGE
                               else u_sym.grid.symmetry)
    base = u_sym.values
    psi_v = np.asarray(psi.values, dtype=float)
    psi_v = psi_v / np.linalg.norm(psi_v)
    if eps is None:
        eps = 1e-2 * max(1.0, float(np.max(np.abs(base))))
    if eps == 0.0:
        return BranchPoint(u=Field(grid, base.copy()), mu=fold.mu, d=fold.d,
                           norm=state_norm(Field(grid, base)))

    for attempt in range(max_retries + 1):
        for mu_off in mu_offsets:
            vals = base + eps * psi_v
            mu = fold.mu + mu_off
            ok = False
            for _ in range(40):
                res = solver.residual_values(vals, grid, nonlinearity, mu,
                                             fold.d)
                cons = psi_v @ (vals - base) - eps
                if np.max(np.abs(res)) <= tol and abs(cons) <= 1e-12:
                    ok = True
                    break
                jac = solver.jacobian_matrix(vals, grid, nonlinearity, mu,
                                             fold.d)
                fp = _parameter_column(vals, grid, nonlinearity, mu, fold.d,
                                       "mu")
                try:
                    du, dmu = solver.bordered_solve(jac, fp, psi_v, 0.0,
                                                    -res, [-cons])
                except solver.SingularBorderedSystem:
                    break
                vals = vals + du
                mu = mu + dmu[0]
                if not np.all(np.isfinite(vals)):
                    break
            if ok:
                u = Field(grid, vals)
                return BranchPoint(u=u, mu=mu, d=fold.d, norm=state_norm(u))
        eps *= 0.5
    raise NoConvergence("branch switching failed for all retried amplitudes")


def trace_isola(seed, nonlinearity, parameter="mu", config=None,
                direction=1.0, p_bounds=None):
    """Continue from a seed with closure detection active."""
    cfg = replace(config or StepConfig(), detect_closure=True)
    return continue_branch(seed.u, nonlinearity, seed.mu, seed.d,
                           parameter=parameter, config=cfg,
                           direction=direction, p_bounds=p_bounds)


# ---------------------------------------------------------------------------
# stability tagging and I/O


def tag_stability(branch, nonlinearity, zero_tol=1e-8, check_events=True,
                  event_window=5):
    """Attach unstable counts to every point; changes require a fold event.

    The crossing eigenvalues pass the origin staggered around each fold, so
    count changes are allowed within ``event_window`` points of an event;
    elsewhere a change raises :class:`MissedEvent`.
    """
    near_event = set()
    for i, kind in branch.events:
        if kind == START:
            continue
        near_event.update(range(i - event_window, i + event_window + 1))
    prev = None
    for i, pt in enumerate(branch.points):
        if pt.u.grid.kind == lattice.WEDGE:
            rep = spectral.unstable_count(pt.u, nonlinearity, pt.mu, pt.d,
                                          zero_tol=zero_tol,
                                          want_vectors=False)
            pt.unstable_count = rep.n_unstable
        else:
            jac = solver.jacobian(pt.u, nonlinearity, pt.mu, pt.d).tocsr()
            pt.unstable_count = spectral.eigencount_above(jac, zero_tol)
        if (check_events and prev is not None and pt.unstable_count != prev
                and i not in near_event):
            raise MissedEvent(
                f"unstable count changed {prev} -> {pt.unstable_count} at "
                f"point {i} without an event"
            )
        prev = pt.unstable_count
    return branch


def save_branch_csv(branch, path):
    events = {}
    for i, kind in branch.events:
        events.setdefault(i, []).append(kind)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["index", "mu", "d", "norm", "n_unstable", "event"])
        for i, pt in enumerate(branch.points):
            writer.writerow([
                i, repr(pt.mu), repr(pt.d), repr(pt.norm),
                "" if pt.unstable_count is None else pt.unstable_count,
                "+".join(events.get(i, [])),
            ])


def save_event_profiles(branch, directory, stem="profile"):
    """Profile snapshots at event indices, keyed by branch index."""
    os.makedirs(directory, exist_ok=True)
    written = []
    for i, _ in branch.events:
        path = os.path.join(directory, f"{stem}_{i:05d}.json")
        lattice.save_profile(branch.points[i].u, path)
        written.append(path)
    return written
