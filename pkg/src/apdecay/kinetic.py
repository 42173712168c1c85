"""Kinetic-side utilities: the chi function, its moments, the energy dissipation budget, multiplier probes."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import trapezoid

from .model import ModelSpec
from .solver import Trajectory

DEFAULT_XI_NODES = 1024
STEP_FLOOR = -1e-12
BUDGET_TOL = 1e-12


def chi(xi, u):
    """1 on ``0 < xi < u``, -1 on ``u < xi < 0``, 0 elsewhere."""
    xi = np.asarray(xi, dtype=float)
    u = np.asarray(u, dtype=float)
    out = np.where((xi > 0) & (xi < u), 1, 0) - np.where((xi < 0) & (xi > u), 1, 0)
    return out.item() if out.ndim == 0 else out


def _chi_nodal(xi, u):
    """Trapezoid-consistent chi on a grid of xi: mean of the one-sided limits at interior
    jumps, the inward limit at the two end nodes."""
    right = np.where((xi >= 0) & (xi < u), 1, 0) - np.where((xi < 0) & (xi >= u), 1, 0)
    left = np.where((xi > 0) & (xi <= u), 1, 0) - np.where((xi <= 0) & (xi > u), 1, 0)
    out = 0.5 * (right + left)
    out[..., 0] = right[..., 0]
    out[..., -1] = left[..., -1]
    return out


def xi_grid(M: float, K: int = DEFAULT_XI_NODES) -> np.ndarray:
    return np.linspace(-M, M, int(K))


def chi_moment_check(values, K: int = DEFAULT_XI_NODES, M: float | None = None) -> dict:
    """Trapezoid checks of ``int chi = u`` and ``int xi chi = u^2/2`` for every cell value.

    The xi grid is uniform on ``[-M, M]`` (``M`` defaults to ``max|u|``, or 1
    for a zero field).  Nodes sitting on a jump of chi take the mean of the
    one-sided limits.  Returns the two max residuals and the bound ``2M/K``.
    """
    u = np.ravel(np.asarray(getattr(values, "values", values), dtype=float))
    if K < 64:
        raise ValueError(f"need K >= 64 xi nodes, got {K}")
    if M is None:
        M = float(np.max(np.abs(u), initial=0.0)) or 1.0
    if np.any(np.abs(u) > M):
        raise ValueError(f"states exceed the xi range [-{M}, {M}]")
    xi = xi_grid(M, K)
    c = _chi_nodal(xi[None, :], u[:, None])
    r0 = float(np.max(np.abs(trapezoid(c, xi, axis=1) - u), initial=0.0))
    r1 = float(np.max(np.abs(trapezoid(xi * c, xi, axis=1) - 0.5 * u**2), initial=0.0))
    bound = 2 * M / K
    return {"zeroth": r0, "first": r1, "bound": bound, "passed": r0 <= bound and r1 <= bound}


@dataclass
class KineticDiagnostics:
    xi_grid: np.ndarray
    moment_residuals: list[dict]
    dissipation_per_step: np.ndarray
    cumulative_budget: float
    recomputed_budget: float | None
    bound: float
    passed: bool
    checks: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "xi_nodes": int(self.xi_grid.size),
            "cumulative_budget": self.cumulative_budget,
            "recomputed_budget": self.recomputed_budget,
            "bound": self.bound,
            "min_step_dissipation": float(np.min(self.dissipation_per_step, initial=0.0)),
            "max_moment_residual": max((max(r["zeroth"], r["first"]) for r in self.moment_residuals),
                                       default=None),
            "checks": self.checks,
            "passed": self.passed,
        }


def dissipation_budget(traj: Trajectory, K: int = DEFAULT_XI_NODES,
                       moment_snapshots: int = 8) -> KineticDiagnostics:
    """Energy dissipation ``(I(t_n) - I(t_{n+1}))/2`` per snapshot interval and its total.

    ``I`` is the grid mean of ``u^2``.  When snapshots are stored, the total is
    recomputed from them and the chi moments are checked on up to
    ``moment_snapshots`` evenly spaced snapshots (first and last included).
    """
    M = traj.config.model.M
    I = traj.array("l2")
    per_step = 0.5 * (I[:-1] - I[1:])
    budget = 0.5 * (I[0] - I[-1])
    recomputed = None
    moments = []
    if traj.fields:
        e0 = float(np.mean(traj.fields[0] ** 2))
        e1 = float(np.mean(traj.fields[-1] ** 2))
        recomputed = 0.5 * (e0 - e1)
        picks = np.unique(np.linspace(0, len(traj.fields) - 1, max(2, moment_snapshots)).round().astype(int))
        moments = [chi_moment_check(traj.fields[i], K, M) for i in picks]
    bound = 0.5 * M**2
    checks = {
        "steps_nonnegative": bool(np.all(per_step >= STEP_FLOOR)),
        "sum_matches": bool(abs(per_step.sum() - budget) <= BUDGET_TOL),
        "within_bound": bool(budget <= bound),
        "recomputed_matches": None if recomputed is None else bool(abs(recomputed - budget) <= BUDGET_TOL),
        "moments": None if not moments else all(m["passed"] for m in moments),
    }
    passed = all(v for v in checks.values() if v is not None)
    return KineticDiagnostics(xi_grid(M, K), moments, per_step, float(budget), recomputed, bound,
                              passed, checks)


def multiplier(spec: ModelSpec, tau: float, kappa, ell: float, xi) -> np.ndarray:
    """``m(xi) = 1 / (sqrt(ell) + i (tau + a(xi).kappa) + kappa^T A'(xi) kappa)``."""
    if ell <= 0:
        raise ValueError("ell must be positive")
    kappa = np.atleast_1d(np.asarray(kappa, dtype=float))
    xi = np.asarray(xi, dtype=float)
    conv = tau + spec.speed_values(xi) @ kappa
    diff = np.einsum("i,...ij,j->...", kappa, spec.diffusivity_values(xi), kappa)
    return 1.0 / (np.sqrt(ell) + 1j * conv + diff)


def multiplier_probe(spec: ModelSpec, tau: float, kappa, ell: float,
                     K: int = DEFAULT_XI_NODES) -> tuple[float, float]:
    """``(sup |m|, int |m|^2 dxi)`` on a uniform K-node grid of ``[-M, M]`` (trapezoid rule)."""
    xi = xi_grid(spec.M, K)
    m = np.abs(multiplier(spec, tau, kappa, ell, xi))
    return float(m.max()), float(trapezoid(m**2, xi))


def multiplier_sweep(spec: ModelSpec, tau, kappa, ell: float, K: int = DEFAULT_XI_NODES) -> np.ndarray:
    """Rows ``(tau, kappa_1..kappa_d, ell, sup_m, int_m2)`` for a batch of directions."""
    tau = np.atleast_1d(np.asarray(tau, dtype=float))
    kappa = np.asarray(kappa, dtype=float).reshape(tau.size, spec.dims)
    rows = [[t, *k, ell, *multiplier_probe(spec, t, k, ell, K)] for t, k in zip(tau, kappa)]
    return np.array(rows, dtype=float).reshape(len(rows), spec.dims + 4)


def write_sweep_csv(path, rows: np.ndarray, dims: int) -> None:
    header = ["tau"] + [f"kappa_{i + 1}" for i in range(dims)] + ["ell", "sup_m", "int_m2"]
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for r in rows:
            fh.write(",".join(repr(float(v)) for v in r) + "\n")


def time_truncation(B: float, t):
    """Trapezoidal cutoff: 1 on ``|t| <= B``, linear down to 0 at ``|t| = 2B``."""
    if B <= 0:
        raise ValueError("B must be positive")
    a = np.abs(np.asarray(t, dtype=float))
    out = np.clip((2 * B - a) / B, 0.0, 1.0)
    return float(out) if out.ndim == 0 else out
