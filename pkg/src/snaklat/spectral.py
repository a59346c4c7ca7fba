"""Stability analysis on the unfolded full-square Neumann domain.

Unstable-eigenvalue counts come from the inertia of the symmetric Jacobian,
computed with a banded LDL^T factorization (no eigensolve needed); dense
eigendecompositions are kept as a cross-validation oracle for small grids.
Near-zero eigenpairs are extracted by shift-invert iteration and classified
into D4 isotypic components by character-weighted group averaging.

Isotypic tags: ``trivial`` is the symmetric component; ``sign1`` flips under
every reflection but is rotation-invariant; ``sign2``/``sign3`` flip under
rotation by 90 degrees and differ by which mirror family (axis vs diagonal)
they preserve; ``two_dim`` is the unique two-dimensional representation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import lattice, solver
from .lattice import Field


class FactorizationFailure(Exception):
    pass


class AmbiguousCrossing(Exception):
    pass


ISOTYPIC_TAGS = ("trivial", "sign1", "sign2", "sign3", "two_dim")

# characters on (e, r90, r180, r270, mv, mh, md, ma)
_CHARACTERS = {
    "trivial": (1, 1, 1, 1, 1, 1, 1, 1),
    "sign1": (1, 1, 1, 1, -1, -1, -1, -1),
    "sign2": (1, -1, 1, -1, 1, 1, -1, -1),
    "sign3": (1, -1, 1, -1, -1, -1, 1, 1),
    "two_dim": (2, 0, -2, 0, 0, 0, 0, 0),
}

_DIMS = {"trivial": 1, "sign1": 1, "sign2": 1, "sign3": 1, "two_dim": 2}


# ---------------------------------------------------------------------------
# inertia via banded LDL^T


def _lower_banded(matrix):
    coo = matrix.tocoo()
    n = matrix.shape[0]
    mask = coo.row >= coo.col
    r, c, v = coo.row[mask], coo.col[mask], coo.data[mask]
    bw = int((r - c).max()) if r.size else 0
    ab = np.zeros((bw + 1, n))
    ab[r - c, c] = v
    return ab, bw


def banded_ldl_inertia(matrix, pivot_tol=None):
    """Counts (n_pos, n_neg) of pivot signs of a symmetric banded matrix.

    LDL^T without pivoting; by Sylvester's law the pivot signs give the
    eigenvalue sign counts.  Raises :class:`FactorizationFailure` on a pivot
    smaller than ``pivot_tol`` (default 1e-14 times the matrix scale).
    """
    ab, bw = _lower_banded(matrix.tocsr())
    n = matrix.shape[0]
    scale = float(np.max(np.abs(ab))) if ab.size else 1.0
    if pivot_tol is None:
        pivot_tol = 1e-14 * max(scale, 1.0)
    ab = ab.copy()
    n_pos = n_neg = 0
    for k in range(n):
        d = ab[0, k]
        if abs(d) <= pivot_tol:
            raise FactorizationFailure(f"pivot breakdown at column {k}: {d:.3e}")
        if d > 0:
            n_pos += 1
        else:
            n_neg += 1
        w = min(bw, n - 1 - k)
        if w == 0:
            continue
        col = ab[1:w + 1, k] / d
        for j in range(1, w + 1):
            ab[: w - j + 1, k + j] -= (d * col[j - 1]) * col[j - 1: w]
    return n_pos, n_neg


def dense_ldl_inertia(matrix):
    """Inertia from LAPACK's pivoted LDL^T (Bunch-Kaufman); oracle path."""
    a = matrix.toarray() if sp.issparse(matrix) else np.asarray(matrix)
    _, d, _ = scipy.linalg.ldl(a)
    n = a.shape[0]
    n_pos = n_neg = n_zero = 0
    k = 0
    while k < n:
        if k + 1 < n and abs(d[k + 1, k]) > 0:
            ev = np.linalg.eigvalsh(d[k: k + 2, k: k + 2])
            for lam in ev:
                if lam > 0:
                    n_pos += 1
                elif lam < 0:
                    n_neg += 1
                else:
                    n_zero += 1
            k += 2
        else:
            lam = d[k, k]
            if lam > 0:
                n_pos += 1
            elif lam < 0:
                n_neg += 1
            else:
                n_zero += 1
            k += 1
    return n_pos, n_neg, n_zero


def eigencount_above(matrix, threshold, retries=4):
    """Number of eigenvalues of a symmetric matrix strictly above threshold."""
    n = matrix.shape[0]
    shift = threshold
    for attempt in range(retries):
        try:
            n_pos, _ = banded_ldl_inertia(matrix - shift * sp.eye(n))
            return n_pos
        except FactorizationFailure:
            # nudge the shift off an eigenvalue and retry
            shift = threshold + (attempt + 1) * 1e-12 * max(1.0, abs(threshold))
    n_pos, _, _ = dense_ldl_inertia(
        (matrix - shift * sp.eye(n)).toarray() if sp.issparse(matrix) else
        matrix - shift * np.eye(n)
    )
    return n_pos


# ---------------------------------------------------------------------------
# spectrum reports


@dataclass
class SpectrumReport:
    n_unstable: int
    n_zero: int
    near_zero: list = field(default_factory=list)  # (eigenvalue, Field) pairs
    grid: lattice.GridSpec | None = None
    tau: float = 0.0

    def to_json_dict(self, symmetry=None):
        near = []
        for lam, vec in self.near_zero:
            entry = {"lambda": float(lam)}
            if symmetry is not None:
                tag, _ = isotypic_classify(vec, symmetry)
                entry["tag"] = tag
            near.append(entry)
        return {"n_unstable": self.n_unstable, "n_zero": self.n_zero,
                "near_zero": near}


def full_square_jacobian(u_wedge, nonlinearity, mu, d):
    """Unfold a wedge state and assemble the symmetric full-square Jacobian."""
    u_full = lattice.unfold(u_wedge)
    jac = solver.jacobian(u_full, nonlinearity, mu, d)
    return u_full, jac.tocsr()


def unstable_count(u_wedge, nonlinearity, mu, d, zero_tol=1e-8,
                   want_vectors=True):
    """Inertia-based stability report on the unfolded Neumann square.

    ``n_unstable`` counts eigenvalues above +tau and ``n_zero`` those within
    (-tau, tau), with tau = zero_tol * max(1, d * max|f_u|).  When near-zero
    eigenvalues are present (and ``want_vectors``), the corresponding
    eigenpairs are extracted by shift-invert iteration.
    """
    u_full, jac = full_square_jacobian(u_wedge, nonlinearity, mu, d)
    tau = zero_tol * max(1.0, abs(d) * float(np.max(np.abs(
        nonlinearity.f_u(u_full.values, mu)))))
    n = jac.shape[0]
    n_above = eigencount_above(jac, tau)
    n_below = n - eigencount_above(jac, -tau)
    n_zero = n - n_above - n_below
    report = SpectrumReport(n_unstable=n_above, n_zero=n_zero,
                            grid=u_full.grid, tau=tau)
    if n_zero > 0 and want_vectors:
        k = min(n_zero + 2, n - 1)
        for lam, vec in zip(*_eigenpairs_near_zero(jac, k)):
            if abs(lam) < tau:
                report.near_zero.append((lam, Field(u_full.grid, vec)))
    return report


def _eigenpairs_near_zero(jac, k):
    n = jac.shape[0]
    if n <= 900:
        vals, vecs = np.linalg.eigh(jac.toarray())
    else:
        try:
            vals, vecs = spla.eigsh(jac.tocsc(), k=k, sigma=0.0)
        except RuntimeError:
            vals, vecs = spla.eigsh(jac.tocsc(), k=k, sigma=1e-10)
    order = np.argsort(np.abs(vals))[:k]
    return vals[order], [vecs[:, i] for i in order]


def dense_spectrum(u_wedge, nonlinearity, mu, d):
    """All eigenvalues of the full-square Jacobian (dense oracle)."""
    _, jac = full_square_jacobian(u_wedge, nonlinearity, mu, d)
    return np.linalg.eigvalsh(jac.toarray())


def smallest_eigenpairs_wedge(jac_wedge, weights, k=1):
    """Eigenpairs of the wedge Jacobian nearest zero, via its symmetric form.

    Returns (eigenvalues, vectors) with vectors in wedge (action) coordinates.
    """
    sym = lattice.symmetric_form(jac_wedge, weights)
    n = sym.shape[0]
    if n <= 600 or k >= n - 1:
        vals, vecs = np.linalg.eigh(sym.toarray())
    else:
        try:
            vals, vecs = spla.eigsh(sym, k=k, sigma=0.0)
        except RuntimeError:
            vals, vecs = spla.eigsh(sym, k=k, sigma=1e-10)
    order = np.argsort(np.abs(vals))[:k]
    scale = 1.0 / np.sqrt(weights)
    return vals[order], [scale * vecs[:, i] for i in order]


# ---------------------------------------------------------------------------
# crossings at folds


def crossing_count_at_fold(branch, fold_index, nonlinearity, window=None,
                           zero_tol=1e-8, fold_point=None):
    """Number of eigenvalues crossing zero at a fold along a branch.

    The count is the difference of inertia-based unstable counts at bracket
    points on either side of the fold.  The crossing eigenvalues pass the
    origin staggered around the fold, so the counts are cross-validated at
    nested bracket distances (``window`` and twice that): a disagreement
    means the window sits inside the crossing region, or an event hides in
    it, and raises :class:`AmbiguousCrossing`.  Pass the refined
    ``fold_point`` for a sharp fold-parameter estimate.
    """
    pts = branch.points
    if fold_point is not None:
        p_fold = getattr(fold_point, branch.parameter)
    else:
        lo = max(fold_index - 2, 0)
        hi = min(fold_index + 2, len(pts))
        local = [getattr(pt, branch.parameter) for pt in pts[lo:hi]]
        inward = getattr(pts[max(fold_index - 3, 0)], branch.parameter)
        # the branch folds back: the extremal local value estimates the fold
        p_fold = max(local) if inward < np.median(local) else min(local)
    if window is None:
        window = 0.0
    other_events = {i for i, kind in getattr(branch, "events", [])
                    if i != fold_index and kind == "fold"}

    def bracket(start, direction, w):
        i = start
        while True:
            if abs(getattr(pts[i], branch.parameter) - p_fold) >= w:
                return i
            j = i + direction
            if not (0 <= j < len(pts)) or j in other_events:
                return i
            i = j

    cache = {}

    def count_at(i):
        if i not in cache:
            pt = pts[i]
            rep = unstable_count(pt.u, nonlinearity, pt.mu, pt.d,
                                 zero_tol=zero_tol, want_vectors=False)
            if rep.n_zero:
                raise AmbiguousCrossing(
                    f"near-zero eigenvalue at bracket point {i}"
                )
            cache[i] = rep.n_unstable
        return cache[i]

    # pts[fold_index - 1] may sit on either side of the extremum (the secant
    # tangent lags by a point), so the before side starts at fold_index - 2
    sides = []
    for start, direction in ((max(fold_index - 2, 0), -1), (fold_index, +1)):
        n1 = count_at(bracket(start, direction, window))
        n2 = count_at(bracket(start, direction, 2 * window))
        if n1 != n2:
            raise AmbiguousCrossing(
                f"unstable count not settled within the window: {n1} vs {n2}"
            )
        sides.append(n1)
    return abs(sides[1] - sides[0])


# ---------------------------------------------------------------------------
# D4 isotypic decomposition


def vbar_unstable_reference(N, M, symmetry):
    """Reference unstable counts for the v-bar(N, M) family, both indexings.

    The decoupled-limit count equals the D4 orbit size of the middle-root
    cell (N, M): 4 on the diagonal (M = N), 8 otherwise for off-site
    patterns.  The source theorem instead attributes the count four to
    M = N-1; both are reported so the discrepancy stays visible.
    """
    return {
        "orbit_size": lattice.orbit_size((N, M), symmetry),
        "theorem_m_indexing": 4 if M == N - 1 else 8,
    }


def isotypic_projection(values, grid, symmetry, tag):
    perms = lattice.action_permutations(grid, symmetry)
    chars = _CHARACTERS[tag]
    acc = np.zeros_like(values, dtype=float)
    for chi, p in zip(chars, perms):
        if chi:
            acc += chi * values[p]
    return (_DIMS[tag] / 8.0) * acc


def isotypic_projections(v, symmetry):
    """All five character projections of a full-square field."""
    grid = v.grid
    if grid.kind != lattice.FULL:
        raise ValueError("isotypic decomposition expects a full-square field")
    return {tag: Field(grid, isotypic_projection(v.values, grid, symmetry, tag))
            for tag in ISOTYPIC_TAGS}


def isotypic_classify(v, symmetry):
    """Dominant isotypic tag of a field plus all projection norms."""
    projs = isotypic_projections(v, symmetry)
    norms = {tag: float(np.linalg.norm(p.values)) for tag, p in projs.items()}
    tag = max(norms, key=norms.get)
    return tag, norms
