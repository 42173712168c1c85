"""Polynomial constitutive model: flux f, diffusion primitive A, square-root factors sigma.

The non-degeneracy functional

    omega_delta(ell) = sup_{|tau| + |kappa| = delta}
        int_{|xi| <= M} ell / (ell + |tau + a(xi).kappa|^2 + (kappa^T A'(xi) kappa)^2) dxi

is evaluated by composite Gauss-Legendre quadrature in xi and sampling of the
sphere ``|tau| + |kappa|_2 = delta`` followed by one local refinement.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np
from numpy.polynomial import Polynomial
from scipy import optimize
from scipy.stats import qmc

SYMMETRY_TOL = 1e-12
FACTOR_TOL = 1e-8
PSD_TOL = -1e-10
N_VALIDATION_SAMPLES = 1024
GL_PANEL_ORDER = 16
DEFAULT_XI_QUADRATURE = 2048
DEFAULT_ZERO_EPS = 1e-6


class ModelError(ValueError):
    """Raised when a ModelSpec violates one of its invariants."""


def _poly(coef) -> Polynomial:
    if isinstance(coef, Polynomial):
        return Polynomial(coef.coef.astype(float))
    arr = np.atleast_1d(np.asarray(coef, dtype=float))
    if arr.ndim != 1 or arr.size == 0 or not np.all(np.isfinite(arr)):
        raise ModelError(f"malformed polynomial coefficients {coef!r}")
    return Polynomial(arr)


def _is_zero(p: Polynomial) -> bool:
    return not np.any(p.coef)


def _coef_diff(p: Polynomial, q: Polynomial) -> float:
    n = max(p.coef.size, q.coef.size)
    a = np.pad(p.coef, (0, n - p.coef.size))
    b = np.pad(q.coef, (0, n - q.coef.size))
    return float(np.max(np.abs(a - b)))


@dataclass(frozen=True, eq=False)
class ModelSpec:
    """Constitutive data of ``u_t + div f(u) = sum_ij d_ij A_ij(u)``.

    Polynomial coefficients are ascending in degree.  ``sigma`` must satisfy
    ``A'(u) = sigma(u) sigma(u)^T`` on ``[-M, M]``; call :func:`validate` to check.
    """

    dims: int
    flux: tuple
    diffusion: tuple
    sigma: tuple
    state_bound: float
    name: str = "model"

    def __post_init__(self):
        d = int(self.dims)
        if d < 1:
            raise ModelError("dims must be positive")
        object.__setattr__(self, "dims", d)
        flux = tuple(_poly(c) for c in self.flux)
        if len(flux) != d:
            raise ModelError(f"flux needs {d} components, got {len(flux)}")
        object.__setattr__(self, "flux", flux)
        for attr in ("diffusion", "sigma"):
            rows = getattr(self, attr)
            if len(rows) != d or any(len(r) != d for r in rows):
                raise ModelError(f"{attr} must be a {d}x{d} array of polynomials")
            object.__setattr__(self, attr, tuple(tuple(_poly(c) for c in r) for r in rows))
        M = float(self.state_bound)
        if not (M > 0 and math.isfinite(M)):
            raise ModelError(f"state bound M must be positive and finite, got {self.state_bound}")
        object.__setattr__(self, "state_bound", M)

    @property
    def M(self) -> float:
        return self.state_bound

    # derived polynomials
    @cached_property
    def speeds(self) -> tuple[Polynomial, ...]:
        """a_i = f_i'."""
        return tuple(f.deriv() for f in self.flux)

    @cached_property
    def diffusivity(self) -> tuple[tuple[Polynomial, ...], ...]:
        """a_ij = A_ij'."""
        return tuple(tuple(A.deriv() for A in row) for row in self.diffusion)

    @cached_property
    def betas(self) -> tuple[tuple[Polynomial, ...], ...]:
        """beta_ik = int_0^u sigma_ik."""
        return tuple(tuple(s.integ(lbnd=0) for s in row) for row in self.sigma)

    @property
    def is_diagonal(self) -> bool:
        return all(_is_zero(self.diffusion[i][j])
                   for i in range(self.dims) for j in range(self.dims) if i != j)

    @property
    def has_diffusion(self) -> bool:
        return any(not _is_zero(self.diffusivity[i][j])
                   for i in range(self.dims) for j in range(self.dims))

    def speed_values(self, u) -> np.ndarray:
        """``a(u)`` with shape ``u.shape + (d,)``."""
        u = np.asarray(u, dtype=float)
        return np.stack([a(u) for a in self.speeds], axis=-1)

    def diffusivity_values(self, u) -> np.ndarray:
        """``A'(u)`` with shape ``u.shape + (d, d)``."""
        u = np.asarray(u, dtype=float)
        d = self.dims
        out = np.empty(u.shape + (d, d))
        for i in range(d):
            for j in range(d):
                out[..., i, j] = self.diffusivity[i][j](u)
        return out

    def sample_points(self, n: int = N_VALIDATION_SAMPLES) -> np.ndarray:
        return np.linspace(-self.M, self.M, n)

    @cached_property
    def max_speeds(self) -> tuple[float, ...]:
        """max over [-M, M] of |a_i|, using samples plus interior critical points."""
        out = []
        for a in self.speeds:
            u = np.concatenate([self.sample_points(), _real_roots_in(a.deriv(), self.M)])
            out.append(float(np.max(np.abs(a(u)))))
        return tuple(out)

    @cached_property
    def max_diffusivity(self) -> float:
        """max over sampled u in [-M, M] of the spectral radius of A'(u)."""
        if not self.has_diffusion:
            return 0.0
        u = self.sample_points()
        vals = self.diffusivity_values(u)
        ev = np.linalg.eigvalsh(0.5 * (vals + np.swapaxes(vals, -1, -2)))
        return float(np.max(np.abs(ev)))

    @cached_property
    def max_diagonal_diffusivity(self) -> tuple[float, ...]:
        u = self.sample_points()
        return tuple(float(np.max(self.diffusivity[i][i](u), initial=0.0)) for i in range(self.dims))

    # serialization
    def to_dict(self) -> dict:
        return {
            "dims": self.dims,
            "flux": [f.coef.tolist() for f in self.flux],
            "A": [[A.coef.tolist() for A in row] for row in self.diffusion],
            "sigma": [[s.coef.tolist() for s in row] for row in self.sigma],
            "M": self.M,
            "name": self.name,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ModelSpec":
        unknown = set(data) - {"dims", "flux", "A", "sigma", "M", "name"}
        if unknown:
            raise ModelError(f"unknown model keys: {sorted(unknown)}")
        d = int(data["dims"])
        zero = [[[0.0]] * d for _ in range(d)]
        return cls(dims=d, flux=data["flux"], diffusion=data.get("A", zero),
                   sigma=data.get("sigma", zero), state_bound=data["M"],
                   name=data.get("name", "model"))

    @classmethod
    def load(cls, path) -> "ModelSpec":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def with_state_bound(self, M: float) -> "ModelSpec":
        return ModelSpec(self.dims, self.flux, self.diffusion, self.sigma, M, self.name)

    def reflected(self) -> "ModelSpec":
        """Model for ``x -> -x``: flux changes sign, diffusion is unchanged."""
        return ModelSpec(self.dims, tuple(-f for f in self.flux), self.diffusion, self.sigma,
                         self.M, self.name + "-reflected")


def _real_roots_in(p: Polynomial, M: float) -> np.ndarray:
    if p.degree() < 1 or _is_zero(p):
        return np.zeros(0)
    r = p.roots()
    r = r[np.abs(r.imag) <= 1e-12 * (1 + np.abs(r.real))].real
    return r[np.abs(r) <= M]


def validate(spec: ModelSpec, n_samples: int = N_VALIDATION_SAMPLES) -> ModelSpec:
    """Check symmetry of A, the factorization A' = sigma sigma^T and PSD-ness on [-M, M]."""
    d = spec.dims
    for i in range(d):
        for j in range(i + 1, d):
            diff = _coef_diff(spec.diffusion[i][j], spec.diffusion[j][i])
            if diff > SYMMETRY_TOL:
                raise ModelError(f"A is not symmetric: A[{i}][{j}] != A[{j}][{i}] "
                                 f"(max coefficient difference {diff:.3g})")
    u = spec.sample_points(n_samples)
    Ap = spec.diffusivity_values(u)
    S = np.empty(u.shape + (d, d))
    for i in range(d):
        for k in range(d):
            S[:, i, k] = spec.sigma[i][k](u)
    resid = np.abs(Ap - S @ np.swapaxes(S, -1, -2))
    worst = np.unravel_index(np.argmax(resid), resid.shape)
    if resid[worst] > FACTOR_TOL:
        n, i, j = worst
        raise ModelError(f"A' != sigma sigma^T at (i={i}, j={j}, u={u[n]:.6g}): "
                         f"residual {resid[worst]:.3g}")
    ev = np.linalg.eigvalsh(Ap)
    n, k = np.unravel_index(np.argmin(ev), ev.shape)
    if ev[n, k] < PSD_TOL:
        bad = int(np.argmin(np.diag(Ap[n]))) if d > 1 else 0
        raise ModelError(f"A'(u) is not positive semidefinite at (i={bad}, j={bad}, u={u[n]:.6g}): "
                         f"eigenvalue {ev[n, k]:.3g}")
    # warm the caches of derived polynomials
    spec.speeds, spec.diffusivity, spec.betas
    return spec


def sqrt_factors_from_diagonal(diffusion) -> tuple:
    """Square-root factors for a diagonal A whose derivatives are monomials ``c u^(2m)``, ``c >= 0``."""
    A = [[_poly(c) for c in row] for row in diffusion]
    d = len(A)
    sigma = [[Polynomial([0.0]) for _ in range(d)] for _ in range(d)]
    for i in range(d):
        for j in range(d):
            if i != j and not _is_zero(A[i][j]):
                raise ModelError("sqrt_factors_from_diagonal needs a diagonal A")
        a = A[i][i].deriv()
        nz = np.flatnonzero(a.coef)
        if nz.size == 0:
            continue
        if nz.size > 1 or nz[0] % 2 or a.coef[nz[0]] < 0:
            raise ModelError(f"A'[{i}][{i}] is not of the form c u^(2m) with c >= 0")
        m = nz[0] // 2
        coef = np.zeros(m + 1)
        coef[m] = math.sqrt(a.coef[nz[0]])
        sigma[i][i] = Polynomial(coef)
    return tuple(tuple(r) for r in sigma)


def beta(spec: ModelSpec, i: int, k: int, u) -> float | np.ndarray:
    """beta_ik(u) = int_0^u sigma_ik(v) dv."""
    uu = np.asarray(u, dtype=float)
    if np.any(np.abs(uu) > spec.M):
        raise ValueError(f"|u| exceeds the state bound M = {spec.M}")
    val = spec.betas[i][k](uu)
    return float(val) if np.ndim(val) == 0 else val


# ---------------------------------------------------------------------------
# gallery

def burgers(M: float = 1.0) -> ModelSpec:
    return ModelSpec(1, [[0, 0, 0.5]], [[[0]]], [[[0]]], M, "burgers1d")


def linear_advection(c: float = 1.0, M: float = 1.0) -> ModelSpec:
    return ModelSpec(1, [[0, c]], [[[0]]], [[[0]]], M, "linear_advection1d")


def zero_model(M: float = 1.0) -> ModelSpec:
    return ModelSpec(1, [[0]], [[[0]]], [[[0]]], M, "zero1d")


def degenerate_diffusion(M: float = 1.0) -> ModelSpec:
    """f = 0, A(u) = u^3 / 3, sigma(u) = u."""
    return ModelSpec(1, [[0]], [[[0, 0, 0, 1 / 3]]], [[[0, 1]]], M, "degenerate_diffusion1d")


def anisotropic_2d(M: float = 1.0) -> ModelSpec:
    """f = (u^2/2, 0), A = diag(0, u^3/3): Burgers along x, degenerate diffusion along y."""
    return ModelSpec(2, [[0, 0, 0.5], [0]],
                     [[[0], [0]], [[0], [0, 0, 0, 1 / 3]]],
                     [[[0], [0]], [[0], [0, 1]]], M, "anisotropic2d")


def gallery(M: float = 1.0) -> dict[str, ModelSpec]:
    models = [burgers(M), linear_advection(1.0, M), degenerate_diffusion(M), anisotropic_2d(M)]
    return {m.name: m for m in models}


# ---------------------------------------------------------------------------
# non-degeneracy functional

def _xi_rule(M: float, n_nodes: int) -> tuple[np.ndarray, np.ndarray]:
    panels = max(1, -(-int(n_nodes) // GL_PANEL_ORDER))
    x, w = np.polynomial.legendre.leggauss(GL_PANEL_ORDER)
    edges = np.linspace(-M, M, panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[:-1] + edges[1:])
    nodes = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    weights = (half[:, None] * w[None, :]).ravel()
    return nodes, weights


def _symbols(spec: ModelSpec, tau, kappa, xi):
    """Convective symbol tau + a(xi).kappa and diffusive symbol kappa^T A'(xi) kappa.

    ``tau``: (n,), ``kappa``: (n, d), ``xi``: (m,) -> two (n, m) arrays.
    """
    a = spec.speed_values(xi)                                # (m, d)
    conv = tau[:, None] + kappa @ a.T
    if spec.has_diffusion:
        Ap = spec.diffusivity_values(xi)                     # (m, d, d)
        diff = np.einsum("ni,mij,nj->nm", kappa, Ap, kappa)
    else:
        diff = np.zeros_like(conv)
    return conv, diff


def omega_integrals(spec: ModelSpec, tau, kappa, ell: float,
                    xi_quadrature: int = DEFAULT_XI_QUADRATURE) -> np.ndarray:
    """Inner integral of the non-degeneracy functional at each direction ``(tau_n, kappa_n)``."""
    tau = np.atleast_1d(np.asarray(tau, dtype=float))
    kappa = np.asarray(kappa, dtype=float).reshape(tau.size, spec.dims)
    xi, w = _xi_rule(spec.M, xi_quadrature)
    out = np.empty(tau.size)
    chunk = max(1, (1 << 21) // xi.size)
    for s in range(0, tau.size, chunk):
        conv, diff = _symbols(spec, tau[s:s + chunk], kappa[s:s + chunk], xi)
        out[s:s + chunk] = (ell / (ell + conv**2 + diff**2)) @ w
    return out


def omega_integral(spec: ModelSpec, tau: float, kappa, ell: float,
                   xi_quadrature: int = DEFAULT_XI_QUADRATURE) -> float:
    return float(omega_integrals(spec, [tau], [np.atleast_1d(kappa)], ell, xi_quadrature)[0])


def _sphere_point(params: np.ndarray, dims: int, delta: float):
    """Map parameters to ``|tau| + |kappa|_2 = delta``.

    d = 1: one periodic parameter s in [0, 1) walks the diamond perimeter.
    d = 2: (t, theta) with tau = delta t, |kappa| = delta (1 - |t|).
    """
    params = np.atleast_2d(params)
    if dims == 1:
        s = np.mod(params[:, 0], 1.0) * 4.0
        q = np.floor(s)
        r = s - q
        tau = np.select([q == 0, q == 1, q == 2], [1 - r, -r, r - 1], r)
        kap = np.select([q == 0, q == 1, q == 2], [r, 1 - r, -r], r - 1)
        return delta * tau, delta * kap[:, None]
    t = np.clip(params[:, 0], -1.0, 1.0)
    theta = params[:, 1]
    rad = delta * (1 - np.abs(t))
    kappa = np.stack([rad * np.cos(theta), rad * np.sin(theta)], axis=1)
    return delta * t, kappa


def default_sphere_samples(dims: int) -> int:
    return 720 if dims == 1 else 4096


def sphere_parameters(dims: int, n: int, seed: int = 0) -> np.ndarray:
    """Deterministic sample parameters for the delta-sphere (uniform for d = 1, scrambled Sobol for d = 2)."""
    if dims == 1:
        return (np.arange(n) / n)[:, None]
    if dims != 2:
        raise NotImplementedError("sphere sampling implemented for d <= 2")
    with warnings.catch_warnings():
        # non-power-of-two counts only lose the balance guarantee
        warnings.simplefilter("ignore", UserWarning)
        pts = qmc.Sobol(d=2, scramble=True, seed=seed).random(n)
    return np.column_stack([2 * pts[:, 0] - 1, 2 * np.pi * pts[:, 1]])


def sphere_directions(dims: int, delta: float, n: int | None = None, seed: int = 0):
    """``(tau, kappa)`` sample points on the delta-sphere."""
    n = n or default_sphere_samples(dims)
    return _sphere_point(sphere_parameters(dims, n, seed), dims, delta)


def omega_delta(spec: ModelSpec, delta: float, ell: float, sphere_samples: int | None = None,
                xi_quadrature: int = DEFAULT_XI_QUADRATURE, refine: bool = True,
                seed: int = 0) -> tuple[float, tuple[float, tuple[float, ...]]]:
    """Sampled sup of the non-degeneracy integral over the delta-sphere.

    Returns ``(value, (tau, kappa))``.  Ties in the sampled maximum go to the
    lowest index.  With ``refine`` a bounded local search around the best
    sample can only raise the value.
    """
    if delta <= 0 or ell <= 0:
        raise ValueError("delta and ell must be positive")
    d = spec.dims
    n = sphere_samples or default_sphere_samples(d)
    params = sphere_parameters(d, n, seed)
    tau, kappa = _sphere_point(params, d, delta)
    vals = omega_integrals(spec, tau, kappa, ell, xi_quadrature)
    best = int(np.argmax(vals))
    value = float(vals[best])
    arg = (float(tau[best]), tuple(float(k) for k in kappa[best]))

    if refine:
        def neg(p):
            t, k = _sphere_point(np.asarray(p, dtype=float)[None, :], d, delta)
            return -float(omega_integrals(spec, t, k, ell, xi_quadrature)[0])

        p0 = params[best]
        if d == 1:
            h = 1.0 / n
            res = optimize.minimize_scalar(lambda s: neg([s]), bounds=(p0[0] - h, p0[0] + h),
                                           method="bounded", options={"xatol": 1e-10})
            cand, cval = np.array([res.x]), -res.fun
        else:
            h = np.array([2.0, 2 * np.pi]) / math.sqrt(n)
            simplex = np.array([p0, p0 + [h[0], 0], p0 + [0, h[1]]])
            res = optimize.minimize(neg, p0, method="Nelder-Mead",
                                    options={"initial_simplex": simplex, "xatol": 1e-9,
                                             "fatol": 1e-13, "maxiter": 400})
            cand, cval = res.x, -res.fun
        if cval > value:
            t, k = _sphere_point(cand[None, :], d, delta)
            value = float(cval)
            arg = (float(t[0]), tuple(float(v) for v in k[0]))
    return value, arg


@dataclass
class DegeneracyReport:
    model: str
    delta: float
    ell_schedule: list[float]
    omega_values: list[float]
    argsup: list[tuple[float, tuple[float, ...]]]
    verdict: str
    threshold_low: float
    threshold_high: float
    state_bound: float
    measure_condition_samples: list[dict] = field(default_factory=list)
    zero_eps: float = DEFAULT_ZERO_EPS

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "delta": self.delta,
            "M": self.state_bound,
            "ell_schedule": list(self.ell_schedule),
            "omega_values": list(self.omega_values),
            "argsup": [{"tau": t, "kappa": list(k)} for t, k in self.argsup],
            "verdict": self.verdict,
            "threshold_low": self.threshold_low,
            "threshold_high": self.threshold_high,
            "zero_eps": self.zero_eps,
            "measure_condition_samples": self.measure_condition_samples,
        }

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("ell,omega\n")
            for ell, om in zip(self.ell_schedule, self.omega_values):
                fh.write(f"{ell!r},{om!r}\n")


def zero_set_measure(spec: ModelSpec, tau, kappa, zero_eps: float = DEFAULT_ZERO_EPS,
                     n_nodes: int = 20001) -> np.ndarray:
    """Midpoint estimate of the xi-measure of ``{|tau + a.kappa| < eps and kappa^T A' kappa < eps}``."""
    tau = np.atleast_1d(np.asarray(tau, dtype=float))
    kappa = np.asarray(kappa, dtype=float).reshape(tau.size, spec.dims)
    h = 2 * spec.M / n_nodes
    xi = -spec.M + (np.arange(n_nodes) + 0.5) * h
    conv, diff = _symbols(spec, tau, kappa, xi)
    mask = (np.abs(conv) < zero_eps) & (diff < zero_eps)
    return mask.sum(axis=1) * h


def nondegeneracy_verdict(spec: ModelSpec, delta: float = 0.5,
                          ell_schedule: Sequence[float] = (1e-1, 1e-2, 1e-3, 1e-4),
                          threshold_low: float | None = None, threshold_high: float | None = None,
                          sphere_samples: int | None = None,
                          xi_quadrature: int = DEFAULT_XI_QUADRATURE,
                          zero_eps: float = DEFAULT_ZERO_EPS, measure_samples: int = 64,
                          seed: int = 0) -> DegeneracyReport:
    """Classify the model from omega_delta along a decreasing ell schedule.

    nondegenerate: non-increasing along the schedule and the last value is
    below ``threshold_low`` (default ``0.3 * 2M``).  degenerate: last value
    above ``threshold_high`` (default ``0.5 * 2M``) with less than 1% relative
    change over the last two entries.  Anything else is inconclusive.
    """
    ells = [float(e) for e in ell_schedule]
    if len(ells) < 3 or any(b >= a for a, b in zip(ells, ells[1:])) or ells[-1] <= 0:
        raise ValueError("ell_schedule must be strictly decreasing, positive, with >= 3 entries")
    two_m = 2 * spec.M
    lo = 0.3 * two_m if threshold_low is None else float(threshold_low)
    hi = 0.5 * two_m if threshold_high is None else float(threshold_high)
    values, args = [], []
    for ell in ells:
        v, a = omega_delta(spec, delta, ell, sphere_samples, xi_quadrature, seed=seed)
        values.append(v)
        args.append(a)

    non_increasing = all(b <= a * (1 + 1e-12) for a, b in zip(values, values[1:]))
    flat = abs(values[-1] - values[-2]) < 0.01 * max(abs(values[-2]), 1e-300)
    if non_increasing and values[-1] < lo:
        verdict = "nondegenerate"
    elif values[-1] > hi and flat:
        verdict = "degenerate"
    else:
        verdict = "inconclusive"

    # the measure condition on unit directions tau^2 + |kappa|^2 = 1
    t, k = sphere_directions(spec.dims, 1.0, measure_samples, seed)
    t = np.concatenate([t, [a[0] for a in args]])
    k = np.concatenate([k, np.array([a[1] for a in args])])
    norm = np.sqrt(t**2 + np.sum(k**2, axis=1))
    t, k = t / norm, k / norm[:, None]
    meas = zero_set_measure(spec, t, k, zero_eps)
    samples = [{"tau": float(a), "kappa": [float(v) for v in b], "measure": float(m)}
               for a, b, m in zip(t, k, meas)]
    return DegeneracyReport(model=spec.name, delta=float(delta), ell_schedule=ells,
                            omega_values=values, argsup=args, verdict=verdict,
                            threshold_low=lo, threshold_high=hi, state_bound=spec.M,
                            measure_condition_samples=samples, zero_eps=zero_eps)
