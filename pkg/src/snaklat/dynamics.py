"""Time integration of the lattice flow for nonlinear-stability checks."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
import scipy.integrate
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import lattice
from .lattice import Field


class StepUnderflow(Exception):
    pass


@dataclass
class Trajectory:
    times: np.ndarray
    states: list          # sampled Fields
    deviation: np.ndarray  # sup-norm distance from the reference state

    def final_state(self):
        return self.states[-1]


def integrate(u0, nonlinearity, mu, d, t_end, n_samples=81, rtol=1e-8,
              atol=1e-10, reference=None):
    """Integrate du/dt = d*Lap(u) + f(u, mu) with an adaptive RK45 pair.

    ``reference`` (default: the initial state) defines the deviation track.
    """
    if t_end <= 0:
        raise ValueError("t_end must be positive")
    grid = u0.grid
    lap = lattice.laplacian_matrix(grid)

    def rhs(_t, y):
        return d * (lap @ y) + nonlinearity.f(y, mu)

    t_eval = np.linspace(0.0, t_end, n_samples)
    sol = scipy.integrate.solve_ivp(rhs, (0.0, t_end), u0.values,
                                    method="RK45", rtol=rtol, atol=atol,
                                    t_eval=t_eval)
    if not sol.success:
        raise StepUnderflow(sol.message)
    ref = (reference.values if reference is not None else u0.values)
    states = [Field(grid, sol.y[:, i].copy()) for i in range(sol.y.shape[1])]
    deviation = np.max(np.abs(sol.y - ref[:, None]), axis=0)
    return Trajectory(times=sol.t, states=states, deviation=deviation)


def integrate_implicit(u0, nonlinearity, mu, d, t_end, dt=0.05,
                       newton_tol=1e-10, reference=None):
    """Backward-Euler fallback for stiff (large-coupling) experiments."""
    grid = u0.grid
    vals = u0.values.copy()
    ref = (reference.values if reference is not None else u0.values)
    times = [0.0]
    states = [Field(grid, vals.copy())]
    deviation = [float(np.max(np.abs(vals - ref)))]
    t = 0.0
    lap = lattice.laplacian_matrix(grid)
    n = grid.size
    while t < t_end - 1e-12:
        h = min(dt, t_end - t)
        prev = vals.copy()
        # Newton for vals - prev - h*(d*Lap(vals) + f(vals)) = 0
        for _ in range(50):
            res = vals - prev - h * (d * (lap @ vals)
                                     + nonlinearity.f(vals, mu))
            if np.max(np.abs(res)) <= newton_tol:
                break
            jac = sp.eye(n) - h * (d * lap
                                   + sp.diags(nonlinearity.f_u(vals, mu)))
            vals = vals - spla.spsolve(jac.tocsc(), res)
        else:
            raise StepUnderflow("implicit step did not converge")
        t += h
        times.append(t)
        states.append(Field(grid, vals.copy()))
        deviation.append(float(np.max(np.abs(vals - ref))))
    return Trajectory(times=np.array(times), states=states,
                      deviation=np.array(deviation))


def growth_rate(trajectory, window=None):
    """Exponential rate fitted to log(deviation) over a time window."""
    t = trajectory.times
    dev = trajectory.deviation
    mask = dev > 0
    if window is not None:
        mask &= (t >= window[0]) & (t <= window[1])
    if int(mask.sum()) < 3:
        raise ValueError("not enough points with positive deviation")
    coeffs = np.polyfit(t[mask], np.log(dev[mask]), 1)
    return float(coeffs[0])


def export_csv(trajectory, path):
    """Write rows (t, deviation)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "deviation"])
        for t, dev in zip(trajectory.times, trajectory.deviation):
            writer.writerow([repr(float(t)), repr(float(dev))])
