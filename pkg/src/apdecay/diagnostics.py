"""Trajectory functionals and experiment reports: decay, contraction, monotone statistics, entropy residuals."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from .ap_analysis import APSignal, FrequencySet
from .solver import Field, Solver, SolverConfig, Trajectory, init_field

VIOLATION_TOL = 1e-12
DEFAULT_DECAY_THRESHOLD = 0.1
PERSIST_MIN_ORDER = 0.5
ENTROPY_C = 1.0


def grid_n1(a: Field, b: Field) -> float:
    """Mean absolute difference of two fields on a common grid."""
    if a.grid != b.grid:
        raise ValueError(f"grid mismatch: {a.grid} vs {b.grid}")
    return float(np.mean(np.abs(a.values - b.values)))


def _initial_field(initial: Union[APSignal, Field], config: SolverConfig) -> Field:
    return init_field(initial, config.grid) if isinstance(initial, APSignal) else initial


# ---------------------------------------------------------------------------
# decay

@dataclass
class DecayReport:
    times: list[float]
    distance: list[float]
    monotone_violations: int
    worst_violation: float
    final_ratio: float
    refinement_trend: list[tuple[int, float]]
    verdict: str
    threshold: float
    persist_order: float | None = None

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict,
            "final_ratio": self.final_ratio,
            "threshold": self.threshold,
            "monotone_violations": self.monotone_violations,
            "worst_violation": self.worst_violation,
            "refinement_trend": [{"cells": n, "final_ratio": r} for n, r in self.refinement_trend],
            "persist_order": self.persist_order,
        }

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("time,distance\n")
            for t, d in zip(self.times, self.distance):
                fh.write(f"{t!r},{d!r}\n")


def _persist_order(cells: Sequence[int], ratios: Sequence[float]) -> float | None:
    """Fitted p in ``-log r ~ C dx^p``; large p means the decay vanishes under refinement."""
    r = np.asarray(ratios, dtype=float)
    if r.size < 2 or np.any(r <= 0):
        return None
    if np.any(r >= 1):
        return math.inf
    y = np.log(-np.log(r))
    x = np.log(1.0 / np.asarray(cells, dtype=float))
    return float(np.polyfit(x, y, 1)[0])


def decay_experiment(config: SolverConfig, initial: APSignal, refinement: Sequence[int] | None = None,
                     threshold: float = DEFAULT_DECAY_THRESHOLD,
                     violation_tol: float = VIOLATION_TOL) -> DecayReport:
    """Track ``D(t) = mean |u(t) - mean(u0)|`` on each grid of the refinement schedule.

    Verdicts, in order: ``vacuous`` if ``D(0) = 0``; ``persists`` if the
    final ratio increases strictly under refinement and ``-log(ratio)``
    shrinks at least like ``dx^0.5`` (the decay is numerical viscosity);
    ``decays`` if the finest run has ``D`` non-increasing and final ratio
    below ``threshold``; otherwise ``inconclusive``.
    """
    cells = sorted(int(n) for n in (refinement or [config.grid.cells[0]]))
    trend: list[tuple[int, float]] = []
    traj = None
    for n in cells:
        cfg = config.replace(grid=config.grid.refined(n))
        traj = Solver(cfg).run(_initial_field(initial, cfg))
        D = traj.array("l1_to_mean")
        d0 = D[0]
        scale = max(1.0, traj.series["maxabs"][0])
        if d0 <= 1e-14 * scale:
            return DecayReport(list(traj.times), D.tolist(), 0, 0.0, math.nan,
                               [(n, math.nan)], "vacuous", threshold)
        trend.append((n, float(D[-1] / d0)))

    D = traj.array("l1_to_mean")
    inc = np.diff(D)
    violations = int(np.sum(inc > violation_tol))
    worst = float(max(inc.max(initial=0.0), 0.0))
    ratios = [r for _, r in trend]
    order = _persist_order(cells, ratios) if len(cells) > 1 else None
    increasing = len(ratios) > 1 and all(b > a for a, b in zip(ratios, ratios[1:]))
    if increasing and order is not None and order >= PERSIST_MIN_ORDER:
        verdict = "persists"
    elif violations == 0 and ratios[-1] < threshold:
        verdict = "decays"
    else:
        verdict = "inconclusive"
    return DecayReport(list(traj.times), D.tolist(), violations, worst, ratios[-1], trend,
                       verdict, threshold, order)


# ---------------------------------------------------------------------------
# contraction

@dataclass
class ContractionReport:
    times: list[float]
    distance: list[float]
    max_step_increase: float
    tolerance: float
    verdict: str

    def to_dict(self) -> dict:
        return {"verdict": self.verdict, "max_step_increase": self.max_step_increase,
                "tolerance": self.tolerance, "initial_distance": self.distance[0],
                "final_distance": self.distance[-1]}

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("time,distance\n")
            for t, d in zip(self.times, self.distance):
                fh.write(f"{t!r},{d!r}\n")


def contraction_experiment(config: SolverConfig, initial_a: Union[APSignal, Field],
                           initial_b: Union[APSignal, Field],
                           tolerance: float | None = None) -> ContractionReport:
    """Run two initial data with a shared time step and track their grid N1 distance.

    Tolerance per step: ``1e-12`` for diagonal diffusion (monotone scheme),
    else ``max dx`` since the cross-difference term is not monotone.
    """
    solver_a, solver_b = Solver(config), Solver(config)
    a, b = _initial_field(initial_a, config), _initial_field(initial_b, config)
    if tolerance is None:
        tolerance = VIOLATION_TOL if config.model.is_diagonal else max(config.grid.dx)
    times, dist = [0.0], [grid_n1(a, b)]
    t, T = 0.0, config.end_time
    while t < T:
        dt = min(solver_a.stable_dt(a), solver_b.stable_dt(b))
        last = t + dt >= T * (1 - 1e-14)
        if last:
            dt = T - t
        a, b = solver_a.step(a, dt), solver_b.step(b, dt)
        t = T if last else t + dt
        times.append(t)
        dist.append(grid_n1(a, b))
    inc = float(max(np.diff(dist).max(initial=0.0), 0.0))
    verdict = "pass" if inc <= tolerance else "fail"
    return ContractionReport(times, dist, inc, float(tolerance), verdict)


# ---------------------------------------------------------------------------
# monotone statistics

@dataclass
class MonotoneStats:
    l2_max_increase: float
    maxabs_excess: float | None
    mean_drift: float
    tolerance: float
    passed: bool

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def monotone_stats(traj: Trajectory, tol: float = VIOLATION_TOL) -> MonotoneStats:
    """Worst per-snapshot L2 increase, max-abs excess over the initial max-abs, relative mean drift.

    The max-abs check is skipped (``None``) when the scheme does not
    guarantee a maximum principle.  Mean drift is measured relative to
    ``max(|mean(u0)|, max|u0|)``.
    """
    if len(traj.times) < 2:
        raise ValueError("need at least two snapshots")
    l2 = traj.array("l2")
    mx = traj.array("maxabs")
    mean = traj.array("mean")
    l2_inc = float(max(np.diff(l2).max(), 0.0))
    excess = float(max((mx - mx[0]).max(), 0.0)) if traj.max_principle_guaranteed else None
    scale = max(abs(mean[0]), mx[0])
    drift = float(np.max(np.abs(mean - mean[0])) / scale) if scale > 0 else 0.0
    ok = l2_inc <= tol and drift <= tol and (excess is None or excess <= tol)
    return MonotoneStats(l2_inc, excess, drift, tol, ok)


# ---------------------------------------------------------------------------
# entropy residual

def space_test_function(grid) -> np.ndarray:
    """Product of raised cosines ``(1 - cos(2 pi x_i / L_i)) / 2`` at cell centres."""
    psi = np.ones(grid.shape)
    for i, L in enumerate(grid.lengths):
        c = 0.5 * (1 - np.cos(2 * np.pi * grid.centers(i) / L))
        shape = [1] * grid.dims
        shape[i] = grid.cells[i]
        psi = psi * c.reshape(shape)
    return psi


def time_test_function(t, T: float):
    """Quadratic bump ``4 s (1 - s)`` with ``s = t / T``."""
    s = np.asarray(t, dtype=float) / T
    return 4 * s * (1 - s)


@dataclass
class EntropyReport:
    k_values: list[float]
    residuals: list[float]
    crandall_majda_residuals: list[float]
    max_positive: float
    max_positive_crandall_majda: float
    dx: float
    constant: float
    passed: bool

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _entropy_operator(solver: Solver, u: np.ndarray, k: float, psi: np.ndarray,
                      crandall_majda: bool) -> float:
    """``sum_c psi_c [D q(u; k) - D2 r(u; k)]_c`` for one snapshot (cell volume not applied)."""
    m = solver.model
    grid = solver.grid
    eps = solver.config.viscosity
    s = np.sign(u - k)
    total = 0.0
    for i, dx in enumerate(grid.dx):
        F = solver.fluxes[i]
        up = np.roll(u, -1, axis=i)
        if crandall_majda:
            q = F(np.maximum(u, k), np.maximum(up, k)) - F(np.minimum(u, k), np.minimum(up, k))
        else:
            q = 0.5 * (s + np.roll(s, -1, axis=i)) * (F(u, up) - float(m.flux[i](k)))
        # summation by parts: sum psi (q_{c+1/2} - q_{c-1/2}) = -sum q_{c+1/2} (psi_{c+1} - psi_c)
        total -= float(np.sum(q * (np.roll(psi, -1, axis=i) - psi))) / dx
        r = s * (m.diffusion[i][i](u) - float(m.diffusion[i][i](k))) + eps * np.abs(u - k)
        lap_psi = (np.roll(psi, -1, axis=i) - 2 * psi + np.roll(psi, 1, axis=i)) / dx**2
        total -= float(np.sum(r * lap_psi))
    if grid.dims == 2:
        dx, dy = grid.dx
        r = s * (m.diffusion[0][1](u) - float(m.diffusion[0][1](k)))
        cross = np.roll(np.roll(psi, -1, 0), -1, 1) - np.roll(np.roll(psi, -1, 0), 1, 1) \
            - np.roll(np.roll(psi, 1, 0), -1, 1) + np.roll(np.roll(psi, 1, 0), 1, 1)
        total -= float(np.sum(r * 2 * cross / (4 * dx * dy)))
    return total


def entropy_residual(traj: Trajectory, k_values: Sequence[float] | None = None,
                     constant: float = ENTROPY_C) -> EntropyReport:
    """Discrete Kruzhkov residual tested against ``theta(t) psi(x)``, normalised by ``T |Omega|``.

    For each level k the residual is ``sum_n theta(t_{n+1/2}) sum_c psi_c
    [eta^{n+1} - eta^n + dt_n (D q - D2 r)(u^n)]_c dV`` with ``eta = |u - k|``,
    ``q`` the interface entropy flux and ``r = sgn(u - k)(A(u) - A(k))``.
    Two interface fluxes are reported: the consistent one
    ``(s_c + s_{c+1})/2 (F - f(k))`` (gated at ``constant * dx``) and the
    Crandall-Majda one, for which a monotone scheme with stride 1 gives a
    non-positive residual.
    """
    if len(traj.fields) < 2:
        raise ValueError("entropy residual needs at least two stored snapshots")
    steps = np.diff(traj.steps)
    if steps.size > 1 and np.any(steps[:-1] != steps[0]):
        raise ValueError("snapshots must be stored at a uniform stride")
    solver = Solver(traj.config)
    grid = traj.grid
    M = traj.config.model.M
    ks = list(np.linspace(-M, M, 9) if k_values is None else k_values)
    T = traj.times[-1]
    psi = space_test_function(grid)
    dvol = float(np.prod(grid.dx))
    norm = T * float(np.prod(grid.lengths))
    times = np.asarray(traj.times)
    theta = time_test_function(0.5 * (times[1:] + times[:-1]), T)
    res, res_cm = [], []
    for k in ks:
        vals = []
        for cm in (False, True):
            acc = 0.0
            for n in range(len(times) - 1):
                u0, u1 = traj.fields[n], traj.fields[n + 1]
                dt = times[n + 1] - times[n]
                deta = float(np.sum(psi * (np.abs(u1 - k) - np.abs(u0 - k))))
                acc += theta[n] * (deta + dt * _entropy_operator(solver, u0, k, psi, cm))
            vals.append(acc * dvol / norm)
        res.append(vals[0])
        res_cm.append(vals[1])
    pos = max(max(res), 0.0)
    pos_cm = max(max(res_cm), 0.0)
    dx = max(grid.dx)
    return EntropyReport([float(k) for k in ks], res, res_cm, pos, pos_cm, dx, constant,
                         pos <= constant * dx)


# ---------------------------------------------------------------------------
# spectra of grid fields

def field_spectrum(fld: Field, tol: float = 0.0) -> APSignal:
    """Discrete Fourier coefficients of the cell averages as a trigonometric polynomial on the super-cell."""
    coef = np.fft.fftn(fld.values) / fld.grid.n_cells
    L = fld.grid.lengths
    wavenumbers = [np.fft.fftfreq(n, 1.0 / n) for n in fld.grid.cells]
    idx = np.argwhere(np.abs(coef) > tol)
    terms = [(tuple(wavenumbers[a][j] / L[a] for a, j in enumerate(ix)), coef[tuple(ix)]) for ix in idx]
    return APSignal(terms, dims=fld.grid.dims)


def head_modes(sig: APSignal, count: int) -> FrequencySet:
    """The ``count`` frequencies with largest ``|a|`` (ties broken by frequency order)."""
    items = sorted(sig.items(), key=lambda fa: (-abs(fa[1]), fa[0]))
    return FrequencySet([f for f, _ in items[:count]], dims=sig.dims)


def field_tail_mass(fld: Field, head: FrequencySet) -> float:
    """``sum |c_k|^2`` of the field's discrete coefficients outside ``head``."""
    coef = np.fft.fftn(fld.values) / fld.grid.n_cells
    mask = np.ones(coef.shape, dtype=bool)
    L = fld.grid.lengths
    for f in head:
        ix = tuple(int(round(fi * Li)) % n for fi, Li, n in zip(f, L, fld.grid.cells))
        mask[ix] = False
    return float(np.sum(np.abs(coef[mask]) ** 2))
