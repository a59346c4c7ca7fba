"""Steady-state residual F(u, mu, d) = d*Lap(u) + f(u, mu) and linear algebra.

The Jacobian d*L + diag(f_u) inherits the Laplacian's closure: on full
squares it is symmetric; on the wedge it is self-adjoint only in the
orbit-weighted inner product.  Newton solves and bordered solves use a
direct sparse LU factorization throughout, which is comfortable at the
problem sizes here (<= ~10^4 unknowns).
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import lattice
from .lattice import Field


class SolverError(Exception):
    pass


class SingularJacobian(SolverError):
    pass


class NoConvergence(SolverError):
    pass


class SingularBorderedSystem(SolverError):
    pass


def residual_values(values, grid, nonlinearity, mu, d):
    lap = lattice.laplacian_matrix(grid)
    return d * (lap @ values) + nonlinearity.f(values, mu)


def residual(u, nonlinearity, mu, d):
    """F(u, mu, d) = d*Lap(u) + f(u, mu), elementwise."""
    return Field(u.grid, residual_values(u.values, u.grid, nonlinearity, mu, d))


def jacobian(u, nonlinearity, mu, d):
    """Sparse matrix J with J v = d*Lap(v) + f_u(u, mu) v."""
    return jacobian_matrix(u.values, u.grid, nonlinearity, mu, d)


def jacobian_matrix(values, grid, nonlinearity, mu, d):
    lap = lattice.laplacian_matrix(grid)
    diag = sp.diags(nonlinearity.f_u(values, mu))
    return (d * lap + diag).tocsc()


def _lu(matrix, err=SingularJacobian):
    try:
        lu = spla.splu(matrix.tocsc())
    except RuntimeError as exc:
        raise err(str(exc)) from exc
    return lu


def _lu_solve(lu, rhs, err=SingularJacobian):
    x = lu.solve(rhs)
    if not np.all(np.isfinite(x)):
        raise err("linear solve produced non-finite values")
    return x


def newton_solve(u0, nonlinearity, mu, d, tol=1e-10, max_iter=50, verbose=False):
    """Damped Newton iteration for F(u, mu, d) = 0.

    Steps are halved (up to 8 times) until the residual sup-norm decreases;
    a step that cannot achieve a decrease raises :class:`NoConvergence`.
    Returns ``(u, iterations)``.
    """
    grid = u0.grid
    vals = np.asarray(u0.values, dtype=float).copy()
    res = residual_values(vals, grid, nonlinearity, mu, d)
    rnorm = np.max(np.abs(res))
    for it in range(max_iter):
        if rnorm <= tol:
            return Field(grid, vals), it
        jac = jacobian_matrix(vals, grid, nonlinearity, mu, d)
        lu = _lu(jac)
        step = _lu_solve(lu, -res)
        damp = 1.0
        for _ in range(9):
            trial = vals + damp * step
            trial_res = residual_values(trial, grid, nonlinearity, mu, d)
            trial_norm = np.max(np.abs(trial_res))
            if np.isfinite(trial_norm) and trial_norm < rnorm:
                break
            damp *= 0.5
        else:
            raise NoConvergence(
                f"residual stalled at {rnorm:.3e} after {it} iterations"
            )
        vals, res, rnorm = trial, trial_res, trial_norm
        if verbose:
            print(f"  newton iter {it + 1}: |F|_inf = {rnorm:.3e} (damp {damp})")
    if rnorm <= tol:
        return Field(grid, vals), max_iter
    raise NoConvergence(f"no convergence in {max_iter} iterations, |F|={rnorm:.3e}")


def bordered_solve(J, B, C, D, rhs_top, rhs_bottom):
    """Solve the bordered system [[J, B], [C^T, D]] [x, y] = [rhs_top, rhs_bottom].

    B and C have shape (n, k); D is (k, k).  One-dimensional borders may be
    passed as flat arrays.  The augmented matrix is factored as a whole,
    which stays robust when J itself is (nearly) singular.
    """
    n = J.shape[0]
    B = np.atleast_2d(np.asarray(B, dtype=float))
    C = np.atleast_2d(np.asarray(C, dtype=float))
    if B.shape[0] != n:
        B = B.T
    if C.shape[0] != n:
        C = C.T
    k = B.shape[1]
    D = np.asarray(D, dtype=float).reshape(k, k)
    rhs = np.concatenate([np.asarray(rhs_top, dtype=float).ravel(),
                          np.asarray(rhs_bottom, dtype=float).ravel()])
    if rhs.shape[0] != n + k:
        raise ValueError("right-hand side does not match the bordered dimensions")
    M = sp.bmat([[J, sp.csc_matrix(B)], [sp.csc_matrix(C.T), sp.csc_matrix(D)]],
                format="csc")
    lu = _lu(M, err=SingularBorderedSystem)
    sol = _lu_solve(lu, rhs, err=SingularBorderedSystem)
    return sol[:n], sol[n:]


def continue_in_coupling(u0, nonlinearity, mu, d_target, tol=1e-10,
                         d_start=0.0, max_halvings=20):
    """Natural continuation in d from a decoupled-limit state.

    Newton-corrects along a geometric ladder of coupling values until the
    target is reached; the ladder is refined adaptively when a solve fails.
    """
    u = u0.copy()
    d_cur = d_start
    step = d_target - d_start
    halvings = 0
    while d_cur != d_target:
        d_try = d_cur + step
        if (step > 0 and d_try > d_target) or (step < 0 and d_try < d_target):
            d_try = d_target
        try:
            u_new, _ = newton_solve(u, nonlinearity, mu, d_try, tol=tol)
        except SolverError:
            halvings += 1
            step *= 0.5
            if halvings > max_halvings:
                raise NoConvergence(
                    f"coupling continuation stalled at d={d_cur:.3e}"
                )
            continue
        u, d_cur = u_new, d_try
    return u
