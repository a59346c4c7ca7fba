"""Orchestrated continuation workflows: fold hunts, snakes, asymmetric fans.

These wrap the low-level continuation with the problem knowledge needed to
run them reliably: starting states come from the decoupled limit, step
bands are sized from the predicted fold scales, and fold searches retry
with finer resolution when a narrow fold is stepped over.
"""

from __future__ import annotations

import numpy as np

from . import asymptotics, continuation, lattice, model, solver, spectral
from .continuation import StepConfig
from .lattice import OFFSITE
from .model import PatternId, UBAR, VBAR, anti_continuum_pattern


def prepared_state(nonlinearity, pattern, mu, d, n_d):
    """Decoupled-limit pattern continued to coupling d at fixed mu."""
    u0 = anti_continuum_pattern(pattern, mu, nonlinearity, n_d=n_d)
    if d == 0.0:
        return u0
    return solver.continue_in_coupling(u0, nonlinearity, mu, d)


def descend_mu(u, nonlinearity, mu_from, mu_to, d, steps=12, tol=1e-10):
    """Natural continuation in mu along a geometric ladder toward mu_to."""
    mus = mu_to + (mu_from - mu_to) * np.geomspace(1.0, 1e-3, steps)
    out = u
    for mu in list(mus[1:]) + [mu_to]:
        out, _ = solver.newton_solve(out, nonlinearity, mu, d, tol=tol)
    return out


def _upper_fold_cap(scale):
    """Step cap near the upper-endpoint folds.

    Cell equations away from the critical one degenerate simultaneously at
    these folds, with solution sheets separated by O(scale^(3/4)) in state
    space; the step must stay below that to avoid jumping sheets.
    """
    return min(np.sqrt(scale) / 3.0, scale**0.75 / 3.0)


def _lower_ending(nonlinearity, N, M):
    corner = (M == N and N <= 2) or (N == 1)
    if nonlinearity.endpoint_lo == model.PITCHFORK:
        return (asymptotics.PITCHFORK_CORNER if corner
                else asymptotics.PITCHFORK_INTERIOR)
    return (asymptotics.TRANS0_CORNER if corner
            else asymptotics.TRANS0_INTERIOR)


def find_left_fold(nonlinearity, N, M, d, symmetry=OFFSITE, n_d=10,
                   mu_start=0.5, max_retries=3, return_branch=False):
    """Fold where the u-bar(N, M) state terminates toward the lower endpoint.

    Starts from the continued pattern at ``mu_start`` and walks down in mu
    with the step capped near the predicted fold scale; the cap shrinks and
    the run is repeated if the fold was stepped over.
    """
    ending = _lower_ending(nonlinearity, N, M)
    scale = asymptotics.predict_fold_mu_gauged(nonlinearity, ending, d)
    pattern = PatternId(N, M, UBAR, symmetry)
    u = prepared_state(nonlinearity, pattern, mu_start, d, n_d)
    cap = scale / 5.0
    for _ in range(max_retries + 1):
        cfg = StepConfig(stop_after_folds=1, max_points=3000,
                         refine_bands=((-1.0, 4.0 * scale, cap),))
        branch = continuation.continue_branch(
            u, nonlinearity, mu_start, d, parameter="mu", config=cfg,
            direction=-1.0, p_bounds=(-0.5 * scale, mu_start + 0.2))
        folds = continuation.detect_and_refine_folds(branch, nonlinearity)
        if folds and folds[0].refined:
            return (folds[0], branch) if return_branch else folds[0]
        cap /= 4.0
    raise continuation.RefinementFailed(
        f"no refined left fold for (N, M)=({N}, {M}) at d={d}"
    )


def find_right_fold(nonlinearity, N, M, d, symmetry=OFFSITE, n_d=10,
                    mu_start=None, max_retries=3, return_branch=False):
    """Fold where the u-bar(N, M) state terminates toward the upper endpoint.

    At moderate coupling the pattern only exists over a shrinking mu range,
    so the default preparation point tracks the predicted fold location.
    """
    if nonlinearity.endpoint_hi == model.FOLD:
        ending = (asymptotics.FOLD_M1 if M == 1 and N >= 3
                  else asymptotics.FOLD_M_NEAR_N)
    else:
        ending = (asymptotics.TRANS1_M1 if M == 1 and N >= 3
                  else asymptotics.TRANS1_M_NEAR_N)
    scale = 1.0 - asymptotics.predict_fold_mu_gauged(nonlinearity, ending, d)
    pattern = PatternId(N, M, UBAR, symmetry)
    if mu_start is not None:
        candidates = [mu_start]
    elif scale < 0.05:
        candidates = [min(0.7, max(0.2, 1.0 - 1.6 * scale))]
    else:
        # moderate coupling: the decoupled pattern is continuable to the
        # largest couplings from the middle of the window
        candidates = [0.7, 0.75, 0.65, 0.6, 0.8, 0.55]
    u = None
    for mu_try in candidates:
        try:
            u = prepared_state(nonlinearity, pattern, mu_try, d, n_d)
            mu_start = mu_try
            break
        except solver.SolverError:
            continue
    if u is None:
        raise solver.NoConvergence(
            f"could not prepare u-bar({N},{M}) at d={d} from any mu"
        )
    cap = _upper_fold_cap(scale)
    for _ in range(max_retries + 1):
        cfg = StepConfig(stop_after_folds=1, max_points=3000,
                         refine_bands=((1.0 - 6.0 * scale, 2.0, cap),))
        branch = continuation.continue_branch(
            u, nonlinearity, mu_start, d, parameter="mu", config=cfg,
            direction=+1.0, p_bounds=(mu_start - 0.2, 1.0 + scale))
        folds = continuation.detect_and_refine_folds(branch, nonlinearity)
        if folds and folds[0].refined:
            return (folds[0], branch) if return_branch else folds[0]
        cap /= 4.0
    raise continuation.RefinementFailed(
        f"no refined right fold for (N, M)=({N}, {M}) at d={d}"
    )


def snake_branch(nonlinearity, d, symmetry=OFFSITE, n_d=20, mu_start=0.5,
                 max_folds=19, max_points=20000, h_init=None, h_max=None,
                 h_mu_low=None, h_mu_high=None):
    """Trace the primary snaking branch upward through ``max_folds`` folds.

    Starts on the v-bar(1,1) segment and follows the branch as cells are
    added; step bands around both window endpoints resolve the fold pairs.
    """
    lo_scale = asymptotics.predict_fold_mu_gauged(
        nonlinearity, _lower_ending(nonlinearity, 3, 1), d)
    hi_scale = 1.0 - asymptotics.predict_fold_mu_gauged(
        nonlinearity,
        asymptotics.FOLD_M_NEAR_N if nonlinearity.endpoint_hi == model.FOLD
        else asymptotics.TRANS1_M_NEAR_N, d)
    bands = (
        (-1.0, 3.0 * lo_scale, h_mu_low or lo_scale / 5.0),
        (1.0 - 5.0 * hi_scale, 2.0, h_mu_high or _upper_fold_cap(hi_scale)),
    )
    # ascending traversal: v-bar(1,1) runs to the right fold first, then the
    # branch alternates left/right folds while cells switch on
    u = prepared_state(nonlinearity, PatternId(1, 1, VBAR, symmetry),
                       mu_start, d, n_d)
    cfg = StepConfig(stop_after_folds=max_folds, max_points=max_points,
                     refine_bands=bands)
    if h_init is not None:
        cfg.h_init = float(h_init)
    if h_max is not None:
        cfg.h_max = float(h_max)
    return continuation.continue_branch(
        u, nonlinearity, mu_start, d, parameter="mu", config=cfg,
        direction=+1.0, p_bounds=(-2.0 * lo_scale, 1.0 + hi_scale))


def expected_fold_sequence(max_folds):
    """(kind, critical cell, crossing count) for each fold up the off-site snake.

    The branch alternates right folds (the u_- cell of v-bar(N, M) collides
    with u_+) and left folds (the next cell switches on); the crossing count
    is the D4 orbit size of the critical cell.
    """
    out = []
    n, m = 1, 1
    while len(out) < max_folds:
        cell = (n, m)
        out.append(("right", cell, lattice.orbit_size(cell, OFFSITE)))
        if len(out) >= max_folds:
            break
        nxt = (n, m + 1) if m < n else (n + 1, 1)
        out.append(("left", nxt, lattice.orbit_size(nxt, OFFSITE)))
        n, m = nxt
    return out[:max_folds]


def corner_receded_state(nonlinearity, N, mu, d, n_d, symmetry=OFFSITE):
    """u-bar(N, 1) with the (N-1, N-1) corner receded to the middle root.

    These corner-modified states form the isolas that collide with the
    primary branch at the rightmost folds as the coupling grows.
    """
    u = anti_continuum_pattern(PatternId(N, 1, UBAR, symmetry), mu,
                               nonlinearity, n_d=n_d)
    u.values[u.grid.index(N - 1, N - 1)] = nonlinearity.u_minus(mu)
    if d == 0.0:
        return u
    return solver.continue_in_coupling(u, nonlinearity, mu, d)


def trace_pattern_isola(nonlinearity, N, d, n_d=16, symmetry=OFFSITE,
                        mu_start=0.7, max_points=8000, cap_scale=0.5):
    """Trace the corner-receded family with closure detection.

    Returns a closed branch (isola) when one exists at this coupling; after
    the switchback collision the same seed family merges with the primary
    branch and the trace comes back open.
    """
    u = corner_receded_state(nonlinearity, N, mu_start, d, n_d,
                             symmetry=symmetry)
    hi = 2.0 * d
    cap = cap_scale * min(np.sqrt(hi) / 3.0, hi**0.75 / 3.0)
    cfg = StepConfig(max_points=max_points, detect_closure=True, h_max=0.03,
                     refine_bands=((0.45, 2.0, cap),))
    return continuation.continue_branch(
        u, nonlinearity, mu_start, d, parameter="mu", config=cfg,
        direction=+1.0, p_bounds=(0.1, 1.2))


# ---------------------------------------------------------------------------
# asymmetric branches


def critical_eigenvectors(fold, nonlinearity, k=10):
    """Near-zero eigenpairs of the full-square Jacobian at a refined fold."""
    _, jac = spectral.full_square_jacobian(fold.u, nonlinearity, fold.mu,
                                           fold.d)
    vals, vecs = spectral._eigenpairs_near_zero(jac, k)
    grid = lattice.full_square(fold.u.grid.half_width, fold.u.grid.symmetry)
    return vals, [lattice.Field(grid, v) for v in vecs]


def switch_directions(fold, nonlinearity, symmetry, n_critical=8):
    """Symmetry-adapted directions spanning the critical eigenspace at a fold.

    Returns a list of (label, Field) pairs: one direction per non-trivial
    one-dimensional representation present, and mirror-fixed vectors in each
    of the two planes of the two-dimensional representation.
    """
    vals, vecs = critical_eigenvectors(fold, nonlinearity,
                                       k=n_critical + 4)
    grid = vecs[0].grid
    crit_vals = vals[:n_critical]
    basis = np.column_stack([v.values for v in vecs[:n_critical]])

    directions = []
    for tag in ("sign1", "sign2", "sign3"):
        proj = np.column_stack([
            spectral.isotypic_projection(basis[:, j], grid, symmetry, tag)
            for j in range(basis.shape[1])])
        norms = np.linalg.norm(proj, axis=0)
        j = int(np.argmax(norms))
        if norms[j] > 1e-6:
            directions.append((tag, lattice.Field(grid,
                                                  proj[:, j] / norms[j])))

    # two-dimensional component: split into the two eigenvalue planes and
    # pick mirror-fixed vectors in each
    proj_e = np.column_stack([
        spectral.isotypic_projection(basis[:, j], grid, symmetry, "two_dim")
        for j in range(basis.shape[1])])
    keep = [j for j in range(proj_e.shape[1])
            if np.linalg.norm(proj_e[:, j]) > 1e-6]
    if keep:
        cols = proj_e[:, keep]
        lams = crit_vals[keep]
        # order the eigenvalues; two nearly-degenerate pairs
        order = np.argsort(lams)
        pairs = [order[:2], order[2:4]] if len(order) >= 4 else [order]
        perms = lattice.action_permutations(grid, symmetry)
        mirrors = {"md": perms[6], "mh": perms[5]}
        for pi, pair in enumerate(pairs):
            plane = np.column_stack([cols[:, i] for i in pair if i < cols.shape[1]])
            if plane.shape[1] == 0:
                continue
            qp, _ = np.linalg.qr(plane)
            for mname, perm in mirrors.items():
                # fixed vector of the mirror within the plane
                mp = qp[perm, :]
                a = qp.T @ mp  # 2x2 representation of the mirror
                w, v = np.linalg.eigh((a + a.T) / 2)
                idx = int(np.argmax(w))
                if w[idx] > 0.5:
                    vec = qp @ v[:, idx]
                    vec /= np.linalg.norm(vec)
                    directions.append((f"two_dim_p{pi}_{mname}",
                                       lattice.Field(grid, vec)))
    return directions


def asymmetric_fan(fold, nonlinearity, symmetry, eps=None, config=None,
                   reconnect_drop=1e-3, min_asymmetry=1e-3):
    """All asymmetric branches bifurcating at a fold (Fig.-7-type study).

    Each symmetry-adapted critical direction is stepped off with the
    amplitude-pinned corrector and continued until the state regains the
    full symmetry.  Reconnection with the primary branch is a
    symmetry-restoring pitchfork, so it is detected as a collapse of the
    asymmetry measure: the stop fires when the asymmetry has fallen by
    ``reconnect_drop`` relative to its running peak (after first exceeding
    ``min_asymmetry``).  Returns a list of (label, seed, branch,
    reconnect_point) with reconnect_point None when no collapse was seen.
    """
    directions = switch_directions(fold, nonlinearity, symmetry)
    fold_scale = max(abs(1.0 - fold.mu), 1e-4)
    results = []
    for label, psi in directions:
        try:
            seed = continuation.switch_branch(
                fold, psi, nonlinearity, eps=eps,
                mu_offsets=(0.0, -0.25 * fold_scale, 0.25 * fold_scale))
        except solver.NoConvergence:
            results.append((label, None, None, None))
            continue
        state = {"peak": 0.0, "armed": False}

        def stop(pt, state=state):
            a = continuation.asymmetry(pt.u.values, pt.u.grid, symmetry)
            state["peak"] = max(state["peak"], a)
            if state["peak"] > min_asymmetry * max(1.0, pt.norm):
                state["armed"] = True
            return state["armed"] and a < reconnect_drop * state["peak"]

        base = config or StepConfig(max_points=1500)
        cfg = StepConfig(**{**base.__dict__, "stop_condition": stop})
        direction = 1.0 if seed.mu >= fold.mu else -1.0
        branch = continuation.continue_branch(
            seed.u, nonlinearity, seed.mu, seed.d, parameter="mu",
            config=cfg, direction=direction,
            p_bounds=(-0.05, 1.5))
        last = branch.points[-1]
        a_last = continuation.asymmetry(last.u.values, last.u.grid, symmetry)
        reconnect = last if (state["armed"]
                             and a_last < reconnect_drop * state["peak"]) \
            else None
        results.append((label, seed, branch, reconnect))
    return results
