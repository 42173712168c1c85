"""First-order monotone finite-volume solver on a periodic super-cell (d = 1, 2).

Update per step::

    u_c <- u_c - dt sum_i (F_i(u_c, u_c+e_i) - F_i(u_c-e_i, u_c)) / dx_i
               + dt sum_ij D2_ij[A_ij(u)]_c + eps dt Lap_h u_c

with the Engquist-Osher flux F_i and centred second / cross differences.
Every term is a difference of periodic shifts, so the cell sum is conserved
up to roundoff.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Union

import numpy as np
from numpy.polynomial import Polynomial

from .ap_analysis import APSignal
from .model import ModelSpec

COMMENSURATE_TOL = 1e-9
BOUND_TOL = 1e-12
ROOT_TRIM = 1e-13


@dataclass(frozen=True)
class GridSpec:
    lengths: tuple[float, ...]
    cells: tuple[int, ...]

    def __post_init__(self):
        lengths = tuple(float(v) for v in np.atleast_1d(self.lengths))
        cells = tuple(int(v) for v in np.atleast_1d(self.cells))
        if len(cells) == 1 and len(lengths) > 1:
            cells = cells * len(lengths)
        if len(lengths) == 1 and len(cells) > 1:
            lengths = lengths * len(cells)
        if len(lengths) != len(cells) or len(cells) not in (1, 2):
            raise ValueError(f"grid must be 1D or 2D with matching lengths/cells, got {lengths}, {cells}")
        if any(n < 4 for n in cells):
            raise ValueError(f"need at least 4 cells per axis, got {cells}")
        if any(not (L > 0 and math.isfinite(L)) for L in lengths):
            raise ValueError(f"lengths must be positive, got {lengths}")
        object.__setattr__(self, "lengths", lengths)
        object.__setattr__(self, "cells", cells)

    @property
    def dims(self) -> int:
        return len(self.cells)

    @property
    def dx(self) -> tuple[float, ...]:
        return tuple(L / n for L, n in zip(self.lengths, self.cells))

    @property
    def shape(self) -> tuple[int, ...]:
        return self.cells

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.cells))

    def centers(self, axis: int = 0) -> np.ndarray:
        return (np.arange(self.cells[axis]) + 0.5) * self.dx[axis]

    def mesh(self) -> list[np.ndarray]:
        return np.meshgrid(*[self.centers(i) for i in range(self.dims)], indexing="ij")

    def refined(self, n: int) -> "GridSpec":
        return GridSpec(self.lengths, (int(n),) * self.dims)

    def to_dict(self) -> dict:
        return {"lengths": list(self.lengths), "cells": list(self.cells)}


@dataclass
class Field:
    grid: GridSpec
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.size != self.grid.n_cells:
            raise ValueError(f"expected {self.grid.n_cells} values, got {v.size}")
        v = v.reshape(self.grid.shape)
        if not np.all(np.isfinite(v)):
            raise ValueError("field values must be finite")
        self.values = v

    def mean(self) -> float:
        return float(np.mean(self.values))

    def shifted(self, cells: int, axis: int = 0) -> "Field":
        return Field(self.grid, np.roll(self.values, cells, axis=axis))

    @classmethod
    def constant(cls, grid: GridSpec, value: float) -> "Field":
        return cls(grid, np.full(grid.shape, float(value)))


@dataclass
class SolverConfig:
    model: ModelSpec
    grid: GridSpec
    end_time: float
    cfl_convective: float = 0.4
    cfl_diffusive: float = 0.25
    viscosity: float = 0.0
    diagnostic_stride: int = 1
    store_fields: bool = False

    def __post_init__(self):
        if self.model.dims != self.grid.dims:
            raise ValueError(f"model is {self.model.dims}D but grid is {self.grid.dims}D")
        if not (0 < self.cfl_convective <= 1):
            raise ValueError(f"cfl_convective must lie in (0, 1], got {self.cfl_convective}")
        if not (0 < self.cfl_diffusive <= 0.5):
            raise ValueError(f"cfl_diffusive must lie in (0, 0.5], got {self.cfl_diffusive}")
        if not (self.end_time >= 0 and math.isfinite(self.end_time)):
            raise ValueError(f"end_time must be finite and >= 0, got {self.end_time}")
        if not self.viscosity >= 0:
            raise ValueError(f"viscosity must be >= 0, got {self.viscosity}")
        if int(self.diagnostic_stride) < 1:
            raise ValueError("diagnostic_stride must be >= 1")
        self.diagnostic_stride = int(self.diagnostic_stride)

    def replace(self, **kw) -> "SolverConfig":
        data = dict(model=self.model, grid=self.grid, end_time=self.end_time,
                    cfl_convective=self.cfl_convective, cfl_diffusive=self.cfl_diffusive,
                    viscosity=self.viscosity, diagnostic_stride=self.diagnostic_stride,
                    store_fields=self.store_fields)
        data.update(kw)
        return SolverConfig(**data)

    def to_dict(self) -> dict:
        return {
            "model": self.model.to_dict(),
            "grid": self.grid.to_dict(),
            "end_time": self.end_time,
            "cfl_convective": self.cfl_convective,
            "cfl_diffusive": self.cfl_diffusive,
            "viscosity": self.viscosity,
            "diagnostic_stride": self.diagnostic_stride,
            "store_fields": self.store_fields,
        }


# ---------------------------------------------------------------------------
# initial data

def init_field(sig: APSignal, grid: GridSpec) -> Field:
    """Exact cell averages of a real trigonometric polynomial commensurate with the grid."""
    if sig.dims != grid.dims:
        raise ValueError(f"signal is {sig.dims}D but grid is {grid.dims}D")
    if not sig.is_real():
        raise ValueError("initial signal must be real-valued (conjugate-symmetric amplitudes)")
    L = np.asarray(grid.lengths)
    N = np.asarray(grid.cells)
    values = np.zeros(grid.shape, dtype=complex)
    for freq, amp in sig.items():
        kf = np.asarray(freq) * L
        k = np.round(kf)
        if np.any(np.abs(kf - k) > COMMENSURATE_TOL * np.maximum(1.0, np.abs(kf))):
            raise ValueError(f"frequency {freq} is not commensurate with lengths {tuple(L)}; "
                             "apply commensurate_project first")
        term = np.array(amp, dtype=complex)
        for ax in range(grid.dims):
            ki, n = int(k[ax]), int(N[ax])
            j = np.arange(n)
            # phase reduced mod n keeps the exponent exact for large wavenumbers
            phase = 2 * np.pi * ((ki * j) % n) / n
            theta = 2 * np.pi * ki / n
            if ki % n == 0:
                avg = np.full(n, 1.0 + 0j) if ki == 0 else np.zeros(n, dtype=complex)
            else:
                avg = np.exp(1j * phase) * np.expm1(1j * theta) / (1j * theta)
            shape = [1] * grid.dims
            shape[ax] = n
            term = term * avg.reshape(shape)
        values = values + term
    return Field(grid, values.real)


# ---------------------------------------------------------------------------
# Engquist-Osher flux

class EngquistOsherFlux:
    """Splitting ``f = f(0) + f_plus + f_minus`` with ``f_plus' = max(f', 0)``, ``f_minus' = min(f', 0)``.

    ``f'`` has one sign on each interval between consecutive real roots, so
    ``f_plus(u) = sum_k s_k [f(clip(u, I_k)) - f(clip(0, I_k))]`` over the
    increasing intervals ``I_k`` (likewise for ``f_minus``).  Roots outside
    ``[0, u]`` contribute exactly zero.
    """

    def __init__(self, f: Polynomial):
        self.f = Polynomial(f.coef.astype(float))
        fp = self.f.deriv()
        self.f0 = float(self.f(0.0))
        self.is_zero = not np.any(fp.coef)
        roots = np.zeros(0)
        # tiny leading coefficients wreck the companion matrix; the roots they add lie near |u| ~ ROOT_TRIM^(-1/n)
        fp_roots = fp.trim(tol=ROOT_TRIM * np.max(np.abs(fp.coef))) if not self.is_zero else fp
        if fp_roots.degree() >= 1 and not self.is_zero:
            r = fp_roots.roots()
            r = r[np.isfinite(r) & (np.abs(r.imag) <= 1e-12 * (1 + np.abs(r.real)))].real
            roots = np.unique(r)
        self.breaks = roots
        self._lo = np.concatenate([[-np.inf], roots])
        self._hi = np.concatenate([roots, [np.inf]])
        if roots.size == 0:
            probes = np.array([0.0])
        else:
            probes = np.concatenate([[roots[0] - (1.0 + abs(roots[0]))],
                                     0.5 * (roots[:-1] + roots[1:]),
                                     [roots[-1] + (1.0 + abs(roots[-1]))]])
        with np.errstate(over="ignore", invalid="ignore"):
            slope = np.zeros_like(probes) if self.is_zero else fp(probes)
        self._pos = slope > 0
        self._neg = slope < 0
        self._origin = np.clip(0.0, self._lo, self._hi)

    def _part(self, u: np.ndarray, mask: np.ndarray) -> np.ndarray:
        out = np.zeros(u.shape)
        # a far-away root clips u and 0 to the same point; skip it so f is never evaluated there
        with np.errstate(over="ignore", invalid="ignore"):
            for lo, hi, z in zip(self._lo[mask], self._hi[mask], self._origin[mask]):
                cu = np.clip(u, lo, hi)
                out += np.where(cu == z, 0.0, self.f(cu) - self.f(z))
        return out

    def split(self, u):
        u = np.asarray(u, dtype=float)
        return self._part(u, self._pos), self._part(u, self._neg)

    def __call__(self, a, b):
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        return self.f0 + self._part(a, self._pos) + self._part(b, self._neg)


def numerical_flux(model: ModelSpec, u_left: float, u_right: float, axis: int = 0) -> float:
    """Engquist-Osher flux ``F_axis(u_left, u_right)``."""
    M = model.M
    for name, v in (("u_left", u_left), ("u_right", u_right)):
        if abs(v) > M * (1 + BOUND_TOL):
            raise ValueError(f"{name} = {v} exceeds the state bound M = {M}")
    return float(EngquistOsherFlux(model.flux[axis])(u_left, u_right))


# ---------------------------------------------------------------------------
# time stepping

def _cross_difference(v: np.ndarray) -> np.ndarray:
    pp = np.roll(np.roll(v, -1, 0), -1, 1)
    pm = np.roll(np.roll(v, -1, 0), 1, 1)
    mp = np.roll(np.roll(v, 1, 0), -1, 1)
    mm = np.roll(np.roll(v, 1, 0), 1, 1)
    return (pp - pm) - (mp - mm)


def _second_difference(v: np.ndarray, axis: int) -> np.ndarray:
    return (np.roll(v, -1, axis) - v) - (v - np.roll(v, 1, axis))


class Solver:
    """Explicit monotone scheme bound to one :class:`SolverConfig`."""

    def __init__(self, config: SolverConfig):
        self.config = config
        self.model = config.model
        self.grid = config.grid
        self.fluxes = [EngquistOsherFlux(f) for f in self.model.flux]
        d = self.grid.dims
        self._diag = [bool(np.any(self.model.diffusion[i][i].deriv().coef)) for i in range(d)]
        self._off = d == 2 and bool(np.any(self.model.diffusion[0][1].deriv().coef))
        self.steps_taken = 0

    # Delta t bound; the maxima are taken over [-M, M], so it is the same for every field
    def stable_dt(self, field: Field | None = None) -> float:
        cfg = self.config
        m = self.model
        d = self.grid.dims
        dts = []
        for i, dx in enumerate(self.grid.dx):
            if m.max_speeds[i] > 0:
                dts.append(cfg.cfl_convective * dx / m.max_speeds[i])
            denom = 2 * d * m.max_diffusivity + cfg.viscosity * 2 * d
            if denom > 0:
                dts.append(cfg.cfl_diffusive * dx**2 / denom)
        return min(dts) if dts else cfg.end_time

    def monotonicity_coefficient(self, dt: float | None = None) -> float:
        """Largest total off-centre weight of the diagonal scheme; <= 1 means monotone."""
        dt = self.stable_dt() if dt is None else dt
        m = self.model
        eps = self.config.viscosity
        total = 0.0
        for i, dx in enumerate(self.grid.dx):
            total += dt * m.max_speeds[i] / dx
            total += 2 * dt * (m.max_diagonal_diffusivity[i] + eps) / dx**2
        return total

    @property
    def max_principle_guaranteed(self) -> bool:
        return self.model.is_diagonal and self.monotonicity_coefficient() <= 1.0

    def rhs(self, u: np.ndarray) -> np.ndarray:
        """Spatial operator L(u) such that one step is ``u + dt L(u)``."""
        m = self.model
        out = np.zeros_like(u)
        for i, (dx, F) in enumerate(zip(self.grid.dx, self.fluxes)):
            if not F.is_zero:
                fp, _ = F.split(u)
                _, fm = F.split(np.roll(u, -1, axis=i))
                face = fp + fm                       # F_{c+1/2} - f(0)
                out -= (face - np.roll(face, 1, axis=i)) / dx
            if self._diag[i]:
                out += _second_difference(m.diffusion[i][i](u), i) / dx**2
            if self.config.viscosity > 0:
                out += self.config.viscosity * _second_difference(u, i) / dx**2
        if self._off:
            dx, dy = self.grid.dx
            out += 2 * _cross_difference(m.diffusion[0][1](u)) / (4 * dx * dy)
        return out

    def step(self, field: Field, dt: float) -> Field:
        limit = self.stable_dt(field)
        if dt > limit * (1 + 1e-12):
            raise ValueError(f"dt = {dt} exceeds the stable bound {limit}")
        u = field.values
        new = u + dt * self.rhs(u)
        self.steps_taken += 1
        if not np.all(np.isfinite(new)):
            raise FloatingPointError(f"non-finite value produced at step {self.steps_taken}")
        return Field(field.grid, new)

    def run(self, initial: Union[APSignal, Field]) -> "Trajectory":
        cfg = self.config
        field0 = init_field(initial, self.grid) if isinstance(initial, APSignal) else initial
        if field0.grid != self.grid:
            raise ValueError("initial field lives on a different grid")
        umax = float(np.max(np.abs(field0.values)))
        if umax > self.model.M * (1 + BOUND_TOL):
            raise ValueError(f"max |u0| = {umax} exceeds the model state bound M = {self.model.M}")
        traj = Trajectory(config=cfg, mean0=field0.mean(),
                          max_principle_guaranteed=self.max_principle_guaranteed)
        traj._record(0.0, 0, field0.values, cfg.store_fields)
        t, n, field = 0.0, 0, field0
        T = cfg.end_time
        while t < T:
            dt = self.stable_dt(field)
            last = t + dt >= T * (1 - 1e-14)
            if last:
                dt = T - t
            field = self.step(field, dt)
            n += 1
            t = T if last else t + dt
            if last or n % cfg.diagnostic_stride == 0:
                traj._record(t, n, field.values, cfg.store_fields)
        traj.final = field
        return traj


def stable_dt(model: ModelSpec, field: Field | None, grid: GridSpec, config: SolverConfig) -> float:
    if config.model is not model or config.grid != grid:
        config = config.replace(model=model, grid=grid)
    return Solver(config).stable_dt(field)


def step(config: SolverConfig, field: Field, dt: float) -> Field:
    return Solver(config).step(field, dt)


def run(config: SolverConfig, initial: Union[APSignal, Field]) -> "Trajectory":
    return Solver(config).run(initial)


# ---------------------------------------------------------------------------
# trajectory

SERIES = ("mean", "l1_to_mean", "l2", "maxabs", "dissipation_step")


@dataclass
class Trajectory:
    """Snapshot times and diagnostic series of one run.

    ``l2`` holds the energy ``I = mean(u^2)``; ``dissipation_step`` is
    ``(I_prev - I) / 2`` between consecutive snapshots; ``l1_to_mean`` is
    ``mean |u - mean(u0)|``.
    """

    config: SolverConfig
    mean0: float
    max_principle_guaranteed: bool = True
    times: list[float] = field(default_factory=list)
    steps: list[int] = field(default_factory=list)
    series: dict[str, list[float]] = field(default_factory=lambda: {k: [] for k in SERIES})
    fields: list[np.ndarray] = field(default_factory=list)
    final: Field | None = None

    def _record(self, t, n, u, store):
        s = self.series
        energy = float(np.mean(u * u))
        s["dissipation_step"].append(0.0 if not s["l2"] else 0.5 * (s["l2"][-1] - energy))
        s["mean"].append(float(np.mean(u)))
        s["l1_to_mean"].append(float(np.mean(np.abs(u - self.mean0))))
        s["l2"].append(energy)
        s["maxabs"].append(float(np.max(np.abs(u))))
        self.times.append(float(t))
        self.steps.append(int(n))
        if store:
            self.fields.append(u.copy())

    def array(self, name: str) -> np.ndarray:
        return np.asarray(self.series[name])

    @property
    def grid(self) -> GridSpec:
        return self.config.grid

    def snapshot(self, i: int) -> Field:
        return Field(self.grid, self.fields[i])

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("time," + ",".join(SERIES) + "\n")
            for i, t in enumerate(self.times):
                fh.write(",".join(repr(v) for v in [t] + [self.series[k][i] for k in SERIES]) + "\n")

    def write_fields(self, bin_path, json_path) -> None:
        """Snapshots as little-endian float64, row-major, plus a JSON sidecar."""
        if not self.fields:
            raise ValueError("trajectory has no stored fields (set store_fields=True)")
        data = np.stack(self.fields).astype("<f8")
        with open(bin_path, "wb") as fh:
            fh.write(data.tobytes(order="C"))
        meta = {
            "grid": self.grid.to_dict(),
            "times": list(self.times),
            "steps": list(self.steps),
            "shape": [len(self.fields)] + list(self.grid.shape),
            "dtype": "<f8",
            "order": "C",
            "file": str(bin_path).rsplit("/", 1)[-1],
        }
        with open(json_path, "w") as fh:
            json.dump(meta, fh, indent=2)


def read_fields(bin_path, json_path) -> tuple[dict, np.ndarray]:
    with open(json_path) as fh:
        meta = json.load(fh)
    data = np.fromfile(bin_path, dtype=meta["dtype"]).reshape(meta["shape"])
    return meta, data
