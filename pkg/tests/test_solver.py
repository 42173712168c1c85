import json

import numpy as np
import pytest
from hypothesis import given, strategies as st
from numpy.polynomial import Polynomial
from scipy.integrate import quad

from apdecay import model as models
from apdecay.ap_analysis import APSignal, mean_value
from apdecay.solver import (
    EngquistOsherFlux,
    Field,
    GridSpec,
    Solver,
    SolverConfig,
    init_field,
    numerical_flux,
    read_fields,
    run,
    stable_dt,
    step,
)
from cases import gallery_config, gallery_signal
from oracles import hopf_lax_burgers

GALLERY = list(models.gallery().values())
DIAGONAL = [m for m in GALLERY if m.is_diagonal]

polys = st.lists(st.floats(-2, 2, allow_nan=False), min_size=1, max_size=5).map(Polynomial)
states = st.floats(-1, 1, allow_nan=False)


def line_grid(n=256, L=1.0):
    return GridSpec((L,), (n,))


# ---------------------------------------------------------------------------
# grid and field types

class TestTypes:
    def test_grid_derived_sizes(self):
        g = GridSpec((2.0, 1.0), (8, 4))
        assert g.dx == (0.25, 0.25) and g.n_cells == 32 and g.dims == 2

    @pytest.mark.parametrize("lengths,cells", [((1.0,), (3,)), ((0.0,), (8,)), ((1, 1, 1), (8, 8, 8))])
    def test_grid_invariants(self, lengths, cells):
        with pytest.raises(ValueError):
            GridSpec(lengths, cells)

    def test_field_size_and_finiteness(self):
        g = line_grid(8)
        with pytest.raises(ValueError):
            Field(g, np.zeros(7))
        with pytest.raises(ValueError):
            Field(g, np.r_[np.zeros(7), np.nan])

    def test_config_ranges(self):
        g, m = line_grid(8), models.burgers()
        for bad in ({"cfl_convective": 0.0}, {"cfl_convective": 1.5}, {"cfl_diffusive": 0.6},
                    {"viscosity": -1.0}, {"end_time": -1.0}, {"diagnostic_stride": 0}):
            kw = {"end_time": 1.0, **bad}
            with pytest.raises(ValueError):
                SolverConfig(m, g, **kw)
        with pytest.raises(ValueError):
            SolverConfig(models.anisotropic_2d(), g, 1.0)


# ---------------------------------------------------------------------------
# initial data

class TestInitField:
    def test_constant(self):
        f = init_field(APSignal.constant(0.7), line_grid(16))
        np.testing.assert_array_equal(f.values, 0.7)

    @pytest.mark.parametrize("n", [4, 7, 64, 1000])
    def test_sine_has_zero_mean(self, n):
        assert abs(init_field(APSignal.sine(1.0), line_grid(n)).mean()) < 1e-13

    def test_four_cells_against_quadrature(self):
        f = init_field(APSignal.sine(1.0), line_grid(4))
        cells = np.linspace(0, 1, 5)
        oracle = [quad(lambda x: np.sin(2 * np.pi * x), a, b)[0] * 4 for a, b in zip(cells, cells[1:])]
        np.testing.assert_allclose(f.values, oracle, atol=1e-14)
        np.testing.assert_allclose(f.values, [2 / np.pi, 2 / np.pi, -2 / np.pi, -2 / np.pi], atol=1e-14)

    def test_2d_cell_averages_against_quadrature(self):
        sig = APSignal.cosine((1.0, 2.0), 0.8) + 0.1
        g = GridSpec((1.0, 1.0), (4, 4))
        f = init_field(sig, g)
        for i, j in [(0, 0), (1, 3), (3, 2)]:
            inner = lambda y, x: sig.real(np.array([x, y]))
            from scipy.integrate import dblquad
            val = dblquad(inner, i / 4, (i + 1) / 4, j / 4, (j + 1) / 4, epsabs=1e-13)[0] * 16
            assert f.values[i, j] == pytest.approx(val, abs=1e-12)

    @given(st.integers(1, 40), st.integers(8, 300), st.floats(0.5, 20))
    def test_mean_matches_signal(self, k, n, L):
        sig = APSignal.cosine(k / L, 0.3) + APSignal.sine(2 * k / L, 0.2) + 0.25
        f = init_field(sig, line_grid(n, L))
        assert f.mean() == pytest.approx(mean_value(sig).real, abs=1e-13)

    def test_incommensurate_points_to_projection(self):
        with pytest.raises(ValueError, match="commensurate_project"):
            init_field(APSignal.sine(np.sqrt(2)), line_grid(16))

    def test_non_real_rejected(self):
        with pytest.raises(ValueError, match="real"):
            init_field(APSignal.exponential(1.0), line_grid(16))


# ---------------------------------------------------------------------------
# numerical flux

def eo_oracle(f, a, b):
    """``(f(a) + f(b))/2 - (1/2) int_a^b |f'|`` by adaptive quadrature."""
    fp = f.deriv()
    lo, hi = min(a, b), max(a, b)
    hint = fp.trim(tol=1e-13 * np.max(np.abs(fp.coef)))   # kinks only guide the quadrature
    kinks = [r.real for r in hint.roots() if abs(r.imag) < 1e-9 and lo < r.real < hi] if hint.degree() else []
    val = quad(lambda s: abs(fp(s)), lo, hi, points=kinks or None, limit=200, epsabs=1e-13)[0]
    return 0.5 * (f(a) + f(b)) - 0.5 * np.sign(b - a) * val


class TestFlux:
    def test_burgers_examples(self):
        m = models.burgers()
        assert numerical_flux(m, -1.0, 1.0) == 0.0
        assert numerical_flux(m, 1.0, -1.0) == 1.0

    def test_out_of_bound(self):
        with pytest.raises(ValueError):
            numerical_flux(models.burgers(), 1.5, 0.0)

    @given(polys, states)
    def test_consistency(self, f, u):
        F = EngquistOsherFlux(f)
        assert F(u, u) == pytest.approx(f(u), abs=1e-12)

    @given(polys, states, states)
    def test_matches_integral_form(self, f, a, b):
        assert EngquistOsherFlux(f)(a, b) == pytest.approx(eo_oracle(f, a, b), abs=1e-9)

    @given(polys, states, states, st.floats(0, 0.5))
    def test_monotone_in_each_argument(self, f, a, b, h):
        F = EngquistOsherFlux(f)
        assert F(a + h, b) >= F(a, b) - 1e-12
        assert F(a, b + h) <= F(a, b) + 1e-12

    @given(polys, states, states)
    def test_reflection(self, f, a, b):
        # the flux of -f with swapped arguments is the negated flux of f
        assert EngquistOsherFlux(-f)(b, a) == pytest.approx(-EngquistOsherFlux(f)(a, b), abs=1e-12)


# ---------------------------------------------------------------------------
# time step

class TestStableDt:
    def test_no_dynamics_uses_end_time(self):
        cfg = SolverConfig(models.zero_model(), line_grid(10), 3.5)
        assert stable_dt(cfg.model, None, cfg.grid, cfg) == 3.5

    def test_pure_diffusion(self):
        m = models.degenerate_diffusion()
        cfg = SolverConfig(m, line_grid(10), 1.0)
        assert stable_dt(m, None, cfg.grid, cfg) == pytest.approx(1.25e-3, rel=1e-12)

    def test_burgers(self):
        m = models.burgers()
        cfg = SolverConfig(m, line_grid(10), 1.0)
        assert stable_dt(m, None, cfg.grid, cfg) == pytest.approx(0.04, rel=1e-12)

    def test_viscosity_enters_diffusive_bound(self):
        m = models.zero_model()
        cfg = SolverConfig(m, line_grid(10), 1.0, viscosity=0.1)
        assert stable_dt(m, None, cfg.grid, cfg) == pytest.approx(0.25 * 0.01 / 0.2)


# ---------------------------------------------------------------------------
# single steps

class TestStep:
    @pytest.mark.parametrize("spec", GALLERY, ids=lambda m: m.name)
    def test_constant_unchanged(self, spec):
        cfg = gallery_config(spec)
        f = Field.constant(cfg.grid, 0.3)
        out = step(cfg, f, Solver(cfg).stable_dt())
        np.testing.assert_array_equal(out.values, f.values)

    @pytest.mark.parametrize("spec", GALLERY, ids=lambda m: m.name)
    @given(seed=st.integers(0, 2**32 - 1))
    def test_cell_sum_preserved(self, spec, seed):
        cfg = gallery_config(spec)
        rng = np.random.default_rng(seed)
        f = Field(cfg.grid, rng.uniform(-1, 1, cfg.grid.shape))
        out = step(cfg, f, Solver(cfg).stable_dt())
        assert abs(out.values.sum() - f.values.sum()) <= 1e-12 * np.abs(f.values).sum()

    def test_dt_too_large(self):
        cfg = gallery_config(models.burgers())
        with pytest.raises(ValueError, match="stable"):
            step(cfg, Field.constant(cfg.grid, 0.0), 1.0)

    def test_non_finite_aborts_with_step_index(self, monkeypatch):
        cfg = gallery_config(models.burgers())
        solver = Solver(cfg)
        monkeypatch.setattr(solver, "rhs", lambda u: np.full_like(u, np.inf))
        with pytest.raises(FloatingPointError, match="step 1"):
            solver.step(Field.constant(cfg.grid, 0.0), solver.stable_dt())

    def test_burgers_riemann_shock_speed(self):
        g = line_grid(256)
        x = g.centers()
        u0 = Field(g, np.where(x < 0.5, 1.0, 0.0))
        u = run(SolverConfig(models.burgers(), g, 0.25), u0).final.values
        # Rankine-Hugoniot: s = (f(1) - f(0)) / (1 - 0) = 1/2, starting from x = 0.5
        exact = 0.5 + 0.5 * 0.25
        right = x > 0.3
        shock = x[right][np.argmin(np.abs(u[right] - 0.5))]
        assert abs(shock - exact) <= 2 * g.dx[0]

    def test_burgers_rarefaction_against_hopf_lax(self):
        g = line_grid(512)
        sig = APSignal.sine(1.0, 0.5)
        u = run(SolverConfig(models.burgers(), g, 0.5), sig).final.values
        exact = hopf_lax_burgers(lambda y: 0.5 * np.sin(2 * np.pi * y), g.centers(), 0.5)
        assert np.mean(np.abs(u - exact)) < 5e-3


# ---------------------------------------------------------------------------
# runs

class TestRun:
    def test_zero_end_time(self):
        cfg = SolverConfig(models.burgers(), line_grid(16), 0.0)
        tr = run(cfg, APSignal.sine(1.0, 0.5))
        assert tr.times == [0.0] and tr.steps == [0]

    @pytest.mark.parametrize("spec", GALLERY, ids=lambda m: m.name)
    def test_constant_data(self, spec):
        cfg = gallery_config(spec, end_time=0.002, diagnostic_stride=5)
        tr = run(cfg, APSignal.constant(0.4, spec.dims))
        for key in ("mean", "l2", "maxabs"):
            np.testing.assert_array_equal(tr.array(key), tr.array(key)[0])
        assert np.all(tr.array("l1_to_mean") <= 1e-15)  # mean of a constant array rounds

    def test_times_and_final_clip(self):
        cfg = SolverConfig(models.burgers(), line_grid(64), 0.3, diagnostic_stride=7)
        tr = run(cfg, APSignal.sine(1.0, 0.5))
        t = np.asarray(tr.times)
        assert t[0] == 0.0 and t[-1] == 0.3
        assert np.all(np.diff(t) > 0)
        assert all(s % 7 == 0 for s in tr.steps[:-1])

    def test_state_bound_enforced(self):
        cfg = SolverConfig(models.burgers(0.5), line_grid(16), 0.1)
        with pytest.raises(ValueError, match="state bound"):
            run(cfg, APSignal.sine(1.0, 0.8))

    def test_burgers_sine_decay_against_hopf_lax(self):
        # D(T)/D(0) at T = 2 from the exact entropy solution; a finer run must agree too
        u0 = lambda y: 0.5 * np.sin(2 * np.pi * y)
        xs = (np.arange(4096) + 0.5) / 4096
        ref = np.mean(np.abs(hopf_lax_burgers(u0, xs, 2.0))) / np.mean(np.abs(u0(xs)))
        ratios = {}
        for n in (512, 2048):
            tr = run(SolverConfig(models.burgers(), line_grid(n), 2.0, diagnostic_stride=10 ** 6),
                     APSignal.sine(1.0, 0.5))
            d = tr.array("l1_to_mean")
            ratios[n] = d[-1] / d[0]
        assert ref == pytest.approx(0.338, abs=2e-3)
        assert ratios[2048] == pytest.approx(ref, abs=3e-3)
        assert ratios[512] == pytest.approx(ratios[2048], abs=5e-3)


# ---------------------------------------------------------------------------
# invariants over the gallery

@pytest.fixture(scope="module")
def gallery_runs():
    out = {}
    for spec in GALLERY:
        cfg = gallery_config(spec)
        out[spec.name] = run(cfg, gallery_signal(spec.dims))
    return out


class TestInvariants:
    @pytest.mark.parametrize("name", [m.name for m in GALLERY])
    def test_conservation(self, gallery_runs, name):
        tr = gallery_runs[name]
        mean = tr.array("mean")
        scale = max(abs(mean[0]), tr.series["maxabs"][0])
        assert np.max(np.abs(mean - mean[0])) <= 1e-12 * scale

    @pytest.mark.parametrize("name", [m.name for m in DIAGONAL])
    def test_max_principle(self, gallery_runs, name):
        tr = gallery_runs[name]
        assert tr.max_principle_guaranteed
        assert np.max(tr.array("maxabs")) <= tr.array("maxabs")[0] + 1e-12

    @pytest.mark.parametrize("name", [m.name for m in GALLERY])
    def test_l2_nonincreasing(self, gallery_runs, name):
        assert np.all(np.diff(gallery_runs[name].array("l2")) <= 1e-12)

    @pytest.mark.parametrize("spec", DIAGONAL, ids=lambda m: m.name)
    def test_min_and_max_preserved_pointwise(self, spec):
        cfg = gallery_config(spec, end_time=0.005, store_fields=True)
        tr = run(cfg, gallery_signal(spec.dims))
        lo, hi = tr.fields[0].min(), tr.fields[0].max()
        for u in tr.fields:
            assert u.min() >= lo - 1e-12 and u.max() <= hi + 1e-12

    @pytest.mark.parametrize("spec", DIAGONAL, ids=lambda m: m.name)
    def test_l1_contraction(self, spec):
        cfg = gallery_config(spec, end_time=0.005)
        s = Solver(cfg)
        rng = np.random.default_rng(7)
        a = Field(cfg.grid, rng.uniform(-1, 1, cfg.grid.shape))
        b = Field(cfg.grid, np.clip(a.values + rng.normal(0, 0.3, cfg.grid.shape), -1, 1))
        dt = s.stable_dt()
        prev = np.abs(a.values - b.values).sum()
        for _ in range(30):
            a, b = s.step(a, dt), s.step(b, dt)
            cur = np.abs(a.values - b.values).sum()
            assert cur <= prev + 1e-12
            prev = cur

    @pytest.mark.parametrize("spec", GALLERY, ids=lambda m: m.name)
    def test_translation_equivariance(self, spec):
        cfg = gallery_config(spec, end_time=0.003)
        f0 = init_field(gallery_signal(spec.dims), cfg.grid)
        a = run(cfg, f0.shifted(1)).final.values
        b = run(cfg, f0).final.shifted(1).values
        np.testing.assert_array_equal(a, b)

    def test_mirror_symmetry(self):
        g = line_grid(128)
        rng = np.random.default_rng(3)
        f = Field(g, rng.uniform(-1, 1, 128))
        mirrored = Field(g, f.values[::-1].copy())
        m = models.burgers()
        a = run(SolverConfig(m, g, 0.2), f).final.values
        b = run(SolverConfig(m.reflected(), g, 0.2), mirrored).final.values
        np.testing.assert_allclose(a, b[::-1], atol=1e-13)

    def test_vanishing_viscosity_convergence(self):
        g = line_grid(256)
        finals = [run(SolverConfig(models.burgers(), g, 0.5, viscosity=eps), APSignal.sine(1.0, 0.5)).final
                  for eps in (1e-2, 1e-3, 1e-4)]
        d1 = np.mean(np.abs(finals[0].values - finals[1].values))
        d2 = np.mean(np.abs(finals[1].values - finals[2].values))
        assert d2 < d1

    def test_off_diagonal_flag(self):
        # A' = [[1, 1], [1, 1]] / 2 with sigma = [[r, 0], [r, 0]], r = 1/sqrt(2)
        r = 0.5 ** 0.5
        spec = models.ModelSpec(2, [[0], [0]], [[[0, 0.5], [0, 0.5]], [[0, 0.5], [0, 0.5]]],
                                [[[r], [0]], [[r], [0]]], 1.0)
        models.validate(spec)
        cfg = SolverConfig(spec, GridSpec((1.0, 1.0), (16, 16)), 0.01)
        tr = run(cfg, APSignal.cosine((1.0, 1.0), 0.5))
        assert not tr.max_principle_guaranteed
        assert abs(tr.array("mean")[-1] - tr.array("mean")[0]) < 1e-14


# ---------------------------------------------------------------------------
# export

class TestExport:
    def test_csv(self, tmp_path):
        tr = run(SolverConfig(models.burgers(), line_grid(32), 0.1), APSignal.sine(1.0, 0.5))
        tr.to_csv(tmp_path / "s.csv")
        lines = (tmp_path / "s.csv").read_text().splitlines()
        assert lines[0] == "time,mean,l1_to_mean,l2,maxabs,dissipation_step"
        assert len(lines) == len(tr.times) + 1
        data = np.loadtxt(tmp_path / "s.csv", delimiter=",", skiprows=1)
        np.testing.assert_array_equal(data[:, 0], tr.times)

    def test_fields_binary_roundtrip(self, tmp_path):
        g = GridSpec((1.0, 2.0), (8, 6))
        cfg = SolverConfig(models.anisotropic_2d(), g, 0.01, store_fields=True, diagnostic_stride=50)
        tr = run(cfg, APSignal.cosine((1.0, 0.5), 0.5))
        tr.write_fields(tmp_path / "f.bin", tmp_path / "f.json")
        raw = (tmp_path / "f.bin").read_bytes()
        assert len(raw) == 8 * len(tr.fields) * 48
        first = np.frombuffer(raw[:8 * 48], dtype="<f8").reshape(8, 6)
        np.testing.assert_array_equal(first, tr.fields[0])
        meta, data = read_fields(tmp_path / "f.bin", tmp_path / "f.json")
        assert meta["grid"] == {"lengths": [1.0, 2.0], "cells": [8, 6]}
        assert meta["times"] == tr.times
        np.testing.assert_array_equal(data, np.stack(tr.fields))
        json.loads((tmp_path / "f.json").read_text())

    def test_fields_require_storage(self, tmp_path):
        tr = run(SolverConfig(models.burgers(), line_grid(8), 0.1), APSignal.sine(1.0, 0.5))
        with pytest.raises(ValueError):
            tr.write_fields(tmp_path / "f.bin", tmp_path / "f.json")

    def test_bit_deterministic(self):
        cfg = gallery_config(models.anisotropic_2d(), end_time=0.002)
        a = run(cfg, gallery_signal(2))
        b = run(cfg, gallery_signal(2))
        assert a.series == b.series
        np.testing.assert_array_equal(a.final.values, b.final.values)
