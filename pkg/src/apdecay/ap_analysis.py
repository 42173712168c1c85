"""Almost-periodic signals as finite trigonometric polynomials.

A signal is a finite sum ``sum_k a_k exp(2 pi i lambda_k . x)`` with frequencies
in cycles per unit length.  Frequencies are identified after rounding to a
fixed resolution (default 1e-12), so keys are stored as integer lattice
vectors and comparisons are exact.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Iterable, Mapping, Sequence

import numpy as np

DEFAULT_RESOLUTION = 1e-12
DEFAULT_SAMPLES_PER_UNIT = 64
DEFAULT_CLOSURE_CAP = 10**6

_EVAL_CHUNK = 1 << 16


def _as_freq(freq, dims: int | None = None) -> tuple[float, ...]:
    arr = np.atleast_1d(np.asarray(freq, dtype=float))
    if arr.ndim != 1:
        raise ValueError(f"frequency must be a scalar or a flat vector, got shape {arr.shape}")
    if dims is not None and arr.size != dims:
        raise ValueError(f"frequency {tuple(arr)} has dimension {arr.size}, expected {dims}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"non-finite frequency {tuple(arr)}")
    return tuple(float(v) for v in arr)


def _to_key(freq: Sequence[float], resolution: float) -> tuple[int, ...]:
    return tuple(int(round(f / resolution)) for f in freq)


def _from_key(key: Sequence[int], resolution: float) -> tuple[float, ...]:
    # + 0.0 folds -0.0 into 0.0
    return tuple(k * resolution + 0.0 for k in key)


class FrequencySet:
    """Finite set of frequency vectors, deduplicated under canonical rounding."""

    __slots__ = ("_dims", "_resolution", "_keys")

    def __init__(self, members: Iterable = (), dims: int | None = None,
                 resolution: float = DEFAULT_RESOLUTION):
        keys = set()
        for m in members:
            freq = _as_freq(m, dims)
            if dims is None:
                dims = len(freq)
            keys.add(_to_key(freq, resolution))
        if dims is None:
            raise ValueError("dims is required for an empty FrequencySet")
        if dims < 1:
            raise ValueError("dims must be a positive integer")
        self._dims = int(dims)
        self._resolution = float(resolution)
        self._keys = frozenset(keys)

    @classmethod
    def _from_keys(cls, keys, dims, resolution):
        obj = cls.__new__(cls)
        obj._dims = dims
        obj._resolution = resolution
        obj._keys = frozenset(keys)
        return obj

    @property
    def dims(self) -> int:
        return self._dims

    @property
    def resolution(self) -> float:
        return self._resolution

    @property
    def keys(self) -> frozenset:
        return self._keys

    @property
    def members(self) -> np.ndarray:
        """Members as an ``(n, dims)`` array in sorted (lexicographic) order."""
        keys = sorted(self._keys)
        if not keys:
            return np.zeros((0, self._dims))
        return np.array([_from_key(k, self._resolution) for k in keys])

    def key_of(self, freq) -> tuple[int, ...]:
        return _to_key(_as_freq(freq, self._dims), self._resolution)

    def __contains__(self, freq) -> bool:
        return self.key_of(freq) in self._keys

    def __len__(self) -> int:
        return len(self._keys)

    def __iter__(self):
        for k in sorted(self._keys):
            yield _from_key(k, self._resolution)

    def __eq__(self, other) -> bool:
        if not isinstance(other, FrequencySet):
            return NotImplemented
        return self._dims == other._dims and self._keys == other._rekeyed(self._resolution)

    def __hash__(self):
        return hash((self._dims, self._keys))

    def __repr__(self) -> str:
        return f"FrequencySet(dims={self._dims}, members={[m for m in self]})"

    def _rekeyed(self, resolution: float) -> frozenset:
        if resolution == self._resolution:
            return self._keys
        return frozenset(_to_key(_from_key(k, self._resolution), resolution) for k in self._keys)

    def union(self, other: "FrequencySet") -> "FrequencySet":
        _check_dims(self._dims, other.dims)
        return FrequencySet._from_keys(self._keys | other._rekeyed(self._resolution),
                                       self._dims, self._resolution)

    def issubset(self, other: "FrequencySet") -> bool:
        _check_dims(self._dims, other.dims)
        return self._keys <= other._rekeyed(self._resolution)

    def to_dict(self) -> dict:
        return {"dims": self._dims, "members": [list(m) for m in self]}

    @classmethod
    def from_dict(cls, data: Mapping, resolution: float = DEFAULT_RESOLUTION) -> "FrequencySet":
        return cls(data["members"], dims=int(data["dims"]), resolution=resolution)


def _check_dims(a: int, b: int) -> None:
    if a != b:
        raise ValueError(f"dimension mismatch: {a} vs {b}")


class APSignal:
    """Finite trigonometric polynomial on R^d.

    Parameters
    ----------
    terms : mapping or iterable of (frequency, amplitude) pairs
        Frequencies are scalars (d = 1) or length-d sequences.  Terms whose
        frequencies coincide after rounding are summed; zero amplitudes are
        dropped.
    dims : int, optional
        Space dimension; inferred from the first term if omitted.
    resolution : float
        Rounding resolution used to identify frequencies.
    require_real : bool
        If set, raise ``ValueError`` unless the amplitude at ``-lambda`` is
        the conjugate of the amplitude at ``lambda`` for every term.
    """

    __slots__ = ("_dims", "_resolution", "_terms")

    def __init__(self, terms: Mapping | Iterable = (), dims: int | None = None,
                 resolution: float = DEFAULT_RESOLUTION, require_real: bool = False,
                 real_tol: float = 1e-12):
        items = terms.items() if isinstance(terms, Mapping) else terms
        acc: dict[tuple[int, ...], complex] = {}
        for freq, amp in items:
            f = _as_freq(freq, dims)
            if dims is None:
                dims = len(f)
            key = _to_key(f, resolution)
            acc[key] = acc.get(key, 0j) + complex(amp)
        if dims is None:
            raise ValueError("dims is required for an empty APSignal")
        if dims < 1:
            raise ValueError("dims must be a positive integer")
        self._dims = int(dims)
        self._resolution = float(resolution)
        self._terms = MappingProxyType({k: a for k, a in acc.items() if a != 0})
        if require_real and not self.is_real(real_tol):
            raise ValueError("signal is not real-valued: amplitudes are not conjugate-symmetric")

    @classmethod
    def _from_keys(cls, terms: Mapping, dims: int, resolution: float) -> "APSignal":
        obj = cls.__new__(cls)
        obj._dims = dims
        obj._resolution = resolution
        obj._terms = MappingProxyType({k: complex(a) for k, a in terms.items() if a != 0})
        return obj

    # -- constructors --------------------------------------------------

    @classmethod
    def zero(cls, dims: int = 1) -> "APSignal":
        return cls((), dims=dims)

    @classmethod
    def constant(cls, value: complex, dims: int = 1) -> "APSignal":
        return cls([((0.0,) * dims, value)], dims=dims)

    @classmethod
    def exponential(cls, freq, amplitude: complex = 1.0) -> "APSignal":
        f = _as_freq(freq)
        return cls([(f, amplitude)], dims=len(f))

    @classmethod
    def sine(cls, freq, amplitude: float = 1.0) -> "APSignal":
        """``amplitude * sin(2 pi freq . x)``."""
        f = _as_freq(freq)
        neg = tuple(-v for v in f)
        return cls([(f, amplitude / 2j), (neg, -amplitude / 2j)], dims=len(f))

    @classmethod
    def cosine(cls, freq, amplitude: float = 1.0) -> "APSignal":
        f = _as_freq(freq)
        neg = tuple(-v for v in f)
        return cls([(f, amplitude / 2), (neg, amplitude / 2)], dims=len(f))

    # -- accessors ----------------------------------------------------

    @property
    def dims(self) -> int:
        return self._dims

    @property
    def resolution(self) -> float:
        return self._resolution

    @property
    def terms(self) -> Mapping[tuple[int, ...], complex]:
        """Read-only view keyed by integer lattice keys."""
        return self._terms

    def items(self):
        """Yield ``(frequency_tuple, amplitude)`` in sorted key order."""
        for k in sorted(self._terms):
            yield _from_key(k, self._resolution), self._terms[k]

    @property
    def frequencies(self) -> np.ndarray:
        keys = sorted(self._terms)
        if not keys:
            return np.zeros((0, self._dims))
        return np.array([_from_key(k, self._resolution) for k in keys])

    @property
    def amplitudes(self) -> np.ndarray:
        return np.array([self._terms[k] for k in sorted(self._terms)], dtype=complex)

    def __len__(self) -> int:
        return len(self._terms)

    def __repr__(self) -> str:
        body = ", ".join(f"{f}: {a}" for f, a in self.items())
        return f"APSignal(dims={self._dims}, {{{body}}})"

    def __eq__(self, other) -> bool:
        if not isinstance(other, APSignal):
            return NotImplemented
        return (self._dims == other._dims and self._resolution == other._resolution
                and dict(self._terms) == dict(other._terms))

    def __hash__(self):
        return hash((self._dims, frozenset(self._terms.items())))

    def amplitude_at_key(self, key: tuple[int, ...]) -> complex:
        return self._terms.get(key, 0j)

    def is_real(self, tol: float = 1e-12) -> bool:
        for k, a in self._terms.items():
            b = self._terms.get(tuple(-v for v in k), 0j)
            if abs(a - b.conjugate()) > tol * max(1.0, abs(a)):
                return False
        return True

    # -- algebra ------------------------------------------------------

    def _combine(self, other: "APSignal", sign: float) -> "APSignal":
        _check_dims(self._dims, other._dims)
        if other._resolution != self._resolution:
            other = APSignal(list(other.items()), dims=other._dims, resolution=self._resolution)
        acc = dict(self._terms)
        for k, a in other._terms.items():
            acc[k] = acc.get(k, 0j) + sign * a
        return APSignal._from_keys(acc, self._dims, self._resolution)

    def __add__(self, other):
        if isinstance(other, APSignal):
            return self._combine(other, 1.0)
        return self._combine(APSignal.constant(other, self._dims), 1.0)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, APSignal):
            return self._combine(other, -1.0)
        return self._combine(APSignal.constant(other, self._dims), -1.0)

    def __neg__(self):
        return self * -1.0

    def __mul__(self, scalar):
        if isinstance(scalar, APSignal):
            return NotImplemented
        c = complex(scalar)
        return APSignal._from_keys({k: c * a for k, a in self._terms.items()},
                                   self._dims, self._resolution)

    __rmul__ = __mul__

    def shift(self, tau) -> "APSignal":
        """Return ``x -> self(x + tau)``."""
        t = np.asarray(_as_freq(tau, self._dims))
        out = {}
        for f, a in self.items():
            phase = float(np.dot(f, t))
            phase -= round(phase)
            out[_to_key(f, self._resolution)] = a * np.exp(2j * np.pi * phase)
        return APSignal._from_keys(out, self._dims, self._resolution)

    # -- evaluation ---------------------------------------------------

    def __call__(self, x) -> np.ndarray:
        """Evaluate at points ``x`` of shape ``(..., dims)`` (or ``(...)`` when d = 1)."""
        x = np.asarray(x, dtype=float)
        if self._dims == 1 and (x.ndim == 0 or x.shape[-1] != 1):
            x = x[..., None]
        if x.shape[-1] != self._dims:
            raise ValueError(f"points have dimension {x.shape[-1]}, expected {self._dims}")
        shape = x.shape[:-1]
        pts = x.reshape(-1, self._dims)
        out = np.zeros(pts.shape[0], dtype=complex)
        if self._terms:
            freqs = self.frequencies
            amps = self.amplitudes
            for s in range(0, pts.shape[0], _EVAL_CHUNK):
                phase = pts[s:s + _EVAL_CHUNK] @ freqs.T
                out[s:s + _EVAL_CHUNK] = np.exp(2j * np.pi * phase) @ amps
        return out.reshape(shape)

    def real(self, x) -> np.ndarray:
        return self(x).real

    # -- serialization ------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "dims": self._dims,
            "terms": [{"freq": list(f), "re": a.real, "im": a.imag} for f, a in self.items()],
        }

    @classmethod
    def from_dict(cls, data: Mapping, resolution: float = DEFAULT_RESOLUTION,
                  require_real: bool = False) -> "APSignal":
        dims = int(data["dims"])
        terms = [(t["freq"], complex(t.get("re", 0.0), t.get("im", 0.0))) for t in data["terms"]]
        return cls(terms, dims=dims, resolution=resolution, require_real=require_real)

    def to_json(self, path=None, **kw) -> str:
        text = json.dumps(self.to_dict(), **kw)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    @classmethod
    def load(cls, path, **kw) -> "APSignal":
        with open(path) as fh:
            return cls.from_dict(json.load(fh), **kw)


@dataclass(frozen=True)
class SeminormEstimate:
    value: float
    method: str
    box_sizes: tuple[float, ...] = ()
    residual: float = 0.0
    estimates: tuple[float, ...] = field(default=(), compare=False)


# ---------------------------------------------------------------------------
# operations

def mean_value(sig: APSignal) -> complex:
    return sig.amplitude_at_key((0,) * sig.dims)


def fourier_coefficient(sig: APSignal, freq) -> complex:
    f = _as_freq(freq, sig.dims)
    return sig.amplitude_at_key(_to_key(f, sig.resolution))


def spectrum(sig: APSignal) -> FrequencySet:
    return FrequencySet._from_keys(sig.terms.keys(), sig.dims, sig.resolution)


def group_closure(base: FrequencySet, order: int, cap: int = DEFAULT_CLOSURE_CAP) -> FrequencySet:
    """Integer combinations ``sum n_j lambda_j`` with ``sum |n_j| <= order``.

    Built level by level: level ``k+1`` is level ``k`` plus/minus one
    generator.  Raises ``ValueError`` as soon as the set would exceed ``cap``.
    """
    if int(order) != order or order < 1:
        raise ValueError(f"order must be a positive integer, got {order}")
    zero = (0,) * base.dims
    gens = sorted(base.keys)
    steps = [g for g in gens] + [tuple(-v for v in g) for g in gens]
    members = {zero}
    frontier = {zero}
    for _ in range(int(order)):
        new = set()
        for m in frontier:
            for s in steps:
                cand = tuple(a + b for a, b in zip(m, s))
                if cand not in members and cand not in new:
                    new.add(cand)
                    if len(members) + len(new) > cap:
                        raise ValueError(
                            f"group closure exceeds cap of {cap} members at order <= {order}")
        if not new:
            break
        members |= new
        frontier = new
    return FrequencySet._from_keys(members, base.dims, base.resolution)


def _box_nodes(R: float, samples_per_unit: int) -> np.ndarray:
    n = max(1, int(math.ceil(R * samples_per_unit)))
    return -R / 2 + (np.arange(n) + 0.5) * (R / n)


def box_average(sig: APSignal, R: float, p: float = 1, samples_per_unit: int = DEFAULT_SAMPLES_PER_UNIT) -> float:
    """``(R^-d int_{I_R} |sig|^p dx)^(1/p)`` by the midpoint rule on the cube ``[-R/2, R/2]^d``."""
    if R <= 0:
        raise ValueError("box size must be positive")
    nodes = _box_nodes(R, samples_per_unit)
    n = nodes.size
    d = sig.dims
    if len(sig) == 0:
        return 0.0
    freqs = sig.frequencies
    amps = sig.amplitudes
    # per-axis exponentials; the sum over the leading axis is done in fixed-size row blocks
    axis_exp = [np.exp(2j * np.pi * np.outer(freqs[:, i], nodes)) for i in range(d)]
    total = 0.0
    if d == 1:
        vals = amps @ axis_exp[0]
        total = float(np.sum(np.abs(vals) ** p))
    else:
        rest = axis_exp[1]
        for i in range(2, d):
            rest = (rest[:, :, None] * axis_exp[i][:, None, :]).reshape(len(amps), -1)
        block = max(1, _EVAL_CHUNK // max(1, rest.shape[1]))
        for s in range(0, n, block):
            lead = axis_exp[0][:, s:s + block] * amps[:, None]
            vals = lead.T @ rest
            total += float(np.sum(np.abs(vals) ** p))
    return (total / n**d) ** (1.0 / p)


def besicovitch_seminorm(sig: APSignal, p: int, boxes: Sequence[float] = (10.0, 100.0),
                         samples_per_unit: int = DEFAULT_SAMPLES_PER_UNIT) -> SeminormEstimate:
    """N_p seminorm: exact Parseval sum for ``p = 2``, box averages for ``p = 1``."""
    if p not in (1, 2):
        raise ValueError(f"p must be 1 or 2, got {p}")
    if p == 2:
        value = math.sqrt(sum(abs(a) ** 2 for a in sig.terms.values()))
        return SeminormEstimate(value=value, method="parseval-exact", residual=0.0)
    boxes = tuple(float(b) for b in boxes)
    if not boxes:
        raise ValueError("boxes must be nonempty")
    if any(b <= 0 for b in boxes) or any(b2 <= b1 for b1, b2 in zip(boxes, boxes[1:])):
        raise ValueError(f"boxes must be positive and strictly increasing, got {boxes}")
    estimates = tuple(box_average(sig, R, 1, samples_per_unit) for R in boxes)
    residual = abs(estimates[-1] - estimates[-2]) if len(estimates) > 1 else float("nan")
    return SeminormEstimate(value=estimates[-1], method="box-average", box_sizes=boxes,
                            residual=residual, estimates=estimates)


def commensurate_project(sig: APSignal, lengths) -> tuple[APSignal, float]:
    """Snap each frequency component to the lattice ``Z / L_i``.

    Returns the projected signal (colliding amplitudes summed) and the
    largest per-axis frequency displacement.
    """
    L = np.broadcast_to(np.asarray(lengths, dtype=float), (sig.dims,))
    if np.any(L <= 0):
        raise ValueError(f"super-cell lengths must be positive, got {tuple(L)}")
    acc: dict[tuple[int, ...], complex] = {}
    err = 0.0
    for f, a in sig.items():
        f = np.asarray(f)
        k = np.round(f * L)
        proj = k / L
        err = max(err, float(np.max(np.abs(f - proj))))
        key = _to_key(proj, sig.resolution)
        acc[key] = acc.get(key, 0j) + a
    return APSignal._from_keys(acc, sig.dims, sig.resolution), err


def spectral_truncate(sig: APSignal, keep: FrequencySet, weights: Mapping | None = None) -> APSignal:
    """Keep only terms whose frequency lies in ``keep``, optionally damped by ``weights``.

    ``weights`` maps frequencies (scalars or tuples) to factors in [0, 1];
    frequencies of ``keep`` missing from it get weight 1.
    """
    _check_dims(sig.dims, keep.dims)
    keys = keep._rekeyed(sig.resolution)
    wmap: dict[tuple[int, ...], float] = {}
    for f, w in (weights or {}).items():
        w = float(w)
        if not 0.0 <= w <= 1.0:
            raise ValueError(f"weight {w} at frequency {f} is outside [0, 1]")
        wmap[_to_key(_as_freq(f, sig.dims), sig.resolution)] = w
    out = {k: a * wmap.get(k, 1.0) for k, a in sig.terms.items() if k in keys}
    return APSignal._from_keys(out, sig.dims, sig.resolution)


def spectral_tail_mass(sig: APSignal, F: FrequencySet) -> float:
    """Sum of ``|a_lambda|^2`` over the spectrum outside ``F``."""
    _check_dims(sig.dims, F.dims)
    keys = F._rekeyed(sig.resolution)
    return float(sum(abs(a) ** 2 for k, a in sig.terms.items() if k not in keys))


def _shift_grid(search_box: float, step: float, dims: int) -> np.ndarray:
    m = int(math.floor(search_box / 2 / step + 1e-12))
    ticks = np.arange(-m, m + 1) * step
    return np.array(list(itertools.product(ticks, repeat=dims)), dtype=float)


def stepanoff_distances(sig: APSignal, shifts, window: float = 10.0,
                        samples_per_unit: int = 32) -> np.ndarray:
    """Estimate ``sup_x int_{I_1(x)} |f(y + tau) - f(y)| dy`` for each shift.

    The difference ``f(. + tau) - f`` is again a trigonometric polynomial with
    amplitudes ``a (exp(2 pi i lambda tau) - 1)``.  Unit-cube integrals use
    the midpoint rule with ``samples_per_unit`` nodes per axis; their centres
    ``x`` run over ``[0, window]^d`` with the same spacing, so every window
    sum is a difference of a cumulative (summed-area) table.
    """
    shifts = np.atleast_2d(np.asarray(shifts, dtype=float))
    if sig.dims == 1 and shifts.shape[0] == 1 and shifts.shape[1] != 1:
        shifts = shifts.T
    if shifts.shape[1] != sig.dims:
        raise ValueError(f"shifts must have dimension {sig.dims}")
    d = sig.dims
    if d > 2:
        raise NotImplementedError("Stepanoff distances are implemented for d <= 2")
    q = int(samples_per_unit)
    nw = int(round(window * q))
    h = 1.0 / q
    if len(sig) == 0:
        return np.zeros(len(shifts))
    freqs = sig.frequencies
    amps = sig.amplitudes
    # nodes covering [-1/2, window + 1/2]
    y = -0.5 + (np.arange(nw + q) + 0.5) * h
    axis_exp = [np.exp(2j * np.pi * np.outer(freqs[:, i], y)) for i in range(d)]
    phase = shifts @ freqs.T
    phase -= np.round(phase)
    coeff = (np.exp(2j * np.pi * phase) - 1.0) * amps[None, :]
    out = np.empty(len(shifts))
    for s, c in enumerate(coeff):
        if d == 1:
            vals = np.abs(c @ axis_exp[0])
        else:
            vals = np.abs((axis_exp[0].T * c[None, :]) @ axis_exp[1])
        table = vals * h**d
        for ax in range(d):
            table = np.cumsum(table, axis=ax)
            pad = [(0, 0)] * d
            pad[ax] = (1, 0)
            table = np.pad(table, pad)
        # box sum over [j, j + q) along every axis by inclusion-exclusion
        box = np.zeros((nw + 1,) * d)
        for corner in itertools.product((0, 1), repeat=d):
            sl = tuple(slice(q, q + nw + 1) if c_ else slice(0, nw + 1) for c_ in corner)
            sign = (-1) ** (d - sum(corner))
            box += sign * table[sl]
        out[s] = float(box.max())
    return out


def epsilon_almost_periods(sig: APSignal, eps: float, search_box: float, step: float,
                           window: float = 10.0, samples_per_unit: int = 32) -> list[tuple[float, ...]]:
    """Grid shifts in ``step * Z^d`` within ``I_{search_box}`` that are eps-periods in the Stepanoff sense."""
    if step <= 0 or search_box <= 0:
        raise ValueError("step and search_box must be positive")
    if eps <= 0:
        raise ValueError("eps must be positive")
    shifts = _shift_grid(search_box, step, sig.dims)
    dist = stepanoff_distances(sig, shifts, window=window, samples_per_unit=samples_per_unit)
    return [tuple(float(v) for v in t) for t, dd in zip(shifts, dist) if dd <= eps]
