"""Integrator exactness, conservation scalings and the Picard iteration."""

import numpy as np
import pytest

from mdlab.clifford import build_gamma_rep
from mdlab.evolve import (
    coulombize, gaussian_packet_data, initial_state, picard_outer,
    rescale_fields, run, solve_a0, step,
)
from mdlab.grid import Field, Grid, random_band_limited, zeros
from mdlab.multipliers import divergence, gradient, leray
from mdlab.nonlinearity import apply_pi, current, maxwell_source_vec


@pytest.fixture(scope="module")
def rep2():
    return build_gamma_rep(2)


def small_state(rep, eps=1e-2, n=16, seed=7):
    g = Grid(d=rep.d, n=n)
    psi, ax, axd = gaussian_packet_data(rep, g, eps, seed=seed)
    return initial_state(rep, psi, ax, axd)


class TestCoulombize:
    def test_already_coulomb_unchanged(self, rng):
        g = Grid(d=3, n=16)
        ax = leray(random_band_limited(g, rng, ncomp=3, real=True))
        axd = leray(random_band_limited(g, rng, ncomp=3, real=True))
        (fx, fxd), chi = coulombize(ax, axd)
        assert chi.l2() <= 1e-13 * max(ax.l2(), 1e-300)
        assert (fx - ax.to_spec()).l2() <= 1e-12 * ax.l2()
        assert (fxd - axd.to_spec()).l2() <= 1e-12 * axd.l2()

    def test_pure_gradient_killed(self, rng):
        g = Grid(d=3, n=16)
        ax = gradient(random_band_limited(g, rng, real=True))
        axd = gradient(random_band_limited(g, rng, real=True))
        (fx, fxd), _ = coulombize(ax, axd)
        assert fx.l2() <= 1e-12 * ax.l2()
        assert fxd.l2() <= 1e-12 * axd.l2()

    def test_random_input_divergence_free(self, rng):
        g = Grid(d=2, n=32)
        ax = random_band_limited(g, rng, ncomp=2, real=True)
        axd = random_band_limited(g, rng, ncomp=2, real=True)
        (fx, _), _ = coulombize(ax, axd)
        assert divergence(fx).l2() <= 1e-12 * fx.l2()


class TestStep:
    def test_zero_data_stays_zero(self, rep2):
        g = Grid(d=2, n=16)
        st = initial_state(rep2, zeros(g, ncomp=rep2.N),
                           zeros(g, ncomp=2), zeros(g, ncomp=2))
        st = step(st, 0.05)
        assert st.charge() == 0.0
        assert st.ax.l2() == 0.0

    def test_linear_flow_matches_closed_form(self, rep2, rng):
        g = Grid(d=2, n=16)
        psi = random_band_limited(g, rng, ncomp=rep2.N, band=(1, 4))
        st = initial_state(rep2, psi, zeros(g, ncomp=2), zeros(g, ncomp=2))
        dt, nsteps = 0.05, 20
        cur = st
        for _ in range(nsteps):
            cur = step(cur, dt, linear=True)
        t = dt * nsteps
        xin = g.xi_norm_grid()
        exact = None
        for s in (+1, -1):
            piece = apply_pi(rep2, psi, s)
            piece = piece.with_data(np.exp(1j * s * t * xin) * piece.data)
            exact = piece if exact is None else exact + piece
        err = (cur.psi() - exact).l2()
        assert err <= 1e-12 * exact.l2()

    def test_free_potential_exact(self, rep2, rng):
        g = Grid(d=2, n=16)
        ax = leray(random_band_limited(g, rng, ncomp=2, real=True, band=(1, 3)))
        axd = leray(random_band_limited(g, rng, ncomp=2, real=True, band=(1, 3)))
        st = initial_state(rep2, zeros(g, ncomp=rep2.N), ax, axd)
        report, final = run(st, T=1.0, dt=0.05)
        assert report.column("charge").max() == 0.0
        assert report.column("coulomb_residual").max() <= 1e-12
        # closed form per mode
        xin = g.xi_norm_grid()
        t = 1.0
        nz = xin > 0
        safe = np.where(nz, xin, 1.0)
        expect = (np.cos(xin * t) * ax.to_spec().data
                  + np.where(nz, np.sin(xin * t) / safe, t) * axd.to_spec().data)
        err = Field(g, final.ax.data - expect, "spec", 2).l2()
        assert err <= 1e-12 * max(ax.l2(), axd.l2())

    def test_richardson_self_convergence_order(self, rep2):
        st0 = small_state(rep2, eps=5e-2)
        T = 0.4
        finals = {}
        for nsteps in (8, 16, 32, 128):
            cur = st0
            dt = T / nsteps
            for _ in range(nsteps):
                cur = step(cur, dt)
            finals[nsteps] = cur.psi()
        ref = finals[128]
        e1 = (finals[8] - ref).l2()
        e2 = (finals[16] - ref).l2()
        e3 = (finals[32] - ref).l2()
        assert 3.0 <= e1 / e2 <= 5.5
        assert 3.0 <= e2 / e3 <= 6.5  # last point feels the reference error


class TestRun:
    def test_charge_drift_second_order(self, rep2):
        st0 = small_state(rep2, eps=1e-2)
        drifts = {}
        for nsteps in (16, 32):
            report, _ = run(st0, T=0.4, dt=0.4 / nsteps)
            drifts[nsteps] = report.summary()["charge_drift"]
        ratio = drifts[16] / drifts[32]
        assert 3.0 <= ratio <= 5.0

    def test_coulomb_and_gauge_residuals(self, rep2):
        st0 = small_state(rep2, eps=1e-2)
        report, _ = run(st0, T=0.2, dt=0.02)
        assert report.column("coulomb_residual").max() <= 1e-10
        assert report.column("gauge_residual").max() <= 1e-10

    def test_current_conservation_bounded_by_residual(self, rep2):
        # the four-divergence of the current tracks the Dirac residual
        st0 = small_state(rep2, eps=5e-2)
        dt = 0.02
        states = [st0]
        for _ in range(2):
            states.append(step(states[-1], dt))
        prev, cur, nxt = states
        j0 = [current(cur.rep, s.psi(), 0) for s in states]
        djdt = (j0[2].to_spec() - j0[0].to_spec()) * (1.0 / (2 * dt))
        jx = [current(cur.rep, cur.psi(), j).to_spec() for j in (1, 2)]
        g = cur.grid
        div = Field(g, sum(1j * g.xi_grid(j) * jx[j].data for j in range(2)),
                    "spec", 0)
        total = (djdt + div).l2()
        report, _ = run(st0, T=3 * dt, dt=dt)
        resid = report.column("dirac_residual").max()
        K = total / max(resid, 1e-300)
        assert np.isfinite(K) and K < 100.0

    def test_csv_and_summary(self, rep2, tmp_path):
        st0 = small_state(rep2, eps=1e-2)
        report, _ = run(st0, T=0.1, dt=0.02)
        report.to_csv(tmp_path / "run.csv")
        report.to_json(tmp_path / "run.json")
        text = (tmp_path / "run.csv").read_text()
        assert text.splitlines()[0].startswith("t,charge,")
        assert (tmp_path / "run.json").exists()


class TestScalingSymmetry:
    def test_rescaled_run_matches(self, rep2):
        st0 = small_state(rep2, eps=3e-2)
        T, nsteps = 0.4, 16
        cur = st0
        for _ in range(nsteps):
            cur = step(cur, T / nsteps)
        lam = 2.0
        g = st0.grid
        psi0 = st0.pair.combine(rep2)
        psi_s, ax_s, axd_s = rescale_fields(psi0, st0.ax, st0.ax_dot, lam)
        st_scaled = initial_state(rep2, psi_s, ax_s, axd_s)
        cur_s = st_scaled
        for _ in range(nsteps):
            cur_s = step(cur_s, lam * T / nsteps)
        expect_psi, expect_ax, _ = rescale_fields(
            cur.psi(), cur.ax, cur.ax_dot, lam)
        err_psi = (cur_s.psi() - expect_psi).l2() / expect_psi.l2()
        err_ax = (cur_s.ax - expect_ax).l2() / max(expect_ax.l2(), 1e-300)
        assert err_psi <= 1e-6
        assert err_ax <= 1e-6
        del g


class TestPicard:
    def test_zero_data_all_zero(self, rep2):
        g = Grid(d=2, n=16)
        dists, traj = picard_outer(rep2, zeros(g, ncomp=rep2.N),
                                   zeros(g, ncomp=2), zeros(g, ncomp=2),
                                   T=0.2, dt=0.05, n_iters=3)
        assert all(d == 0.0 for d in dists)
        assert all(p.l2() == 0.0 for p in traj)

    def test_contraction_small_data(self, rep2):
        g = Grid(d=2, n=16)
        psi, ax, axd = gaussian_packet_data(rep2, g, eps=1e-2)
        dists, _ = picard_outer(rep2, psi, ax, axd, T=0.25, dt=0.05, n_iters=3)
        assert dists[0] > 0
        assert dists[1] / dists[0] < 1.0
        assert dists[2] / dists[1] < 1.0
