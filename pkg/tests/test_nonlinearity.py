"""Algebraic identities of the bilinear nonlinearity decomposition."""

import numpy as np
import pytest

from mdlab.clifford import build_gamma_rep, pi_matrix
from mdlab.grid import Field, Grid, plane_wave, random_band_limited, zeros
from mdlab.multipliers import (
    dealiased_product, divergence, gradient, inv_laplacian, leray, lp_project,
)
from mdlab.nonlinearity import (
    GaugePotential, HalfWavePair, apply_alpha, apply_pi, build_A0, build_Ax,
    component, cov_dirac_rhs_direct, cov_dirac_rhs_split, current, dirac_E,
    dirac_R, dirac_S, maxwell_E, maxwell_R_vec, maxwell_S_vec,
    maxwell_dtE, maxwell_source_vec, para_lowhigh, remainder, spinor_inner,
    wave_residual,
)

D, N_GRID = 3, 16


@pytest.fixture(scope="module")
def rep():
    return build_gamma_rep(D)


@pytest.fixture
def grid():
    return Grid(d=D, n=N_GRID)


def random_spinor(grid, rng, ncomp):
    return random_band_limited(grid, rng, ncomp=ncomp, band=(1.0, 4.0))


def random_coulomb(grid, rng):
    return leray(random_band_limited(grid, rng, ncomp=grid.d, real=True,
                                     band=(1.0, 4.0)))


class TestCurrent:
    def test_time_component_is_density(self, rep, grid, rng):
        psi = random_spinor(grid, rng, rep.N)
        j0 = current(rep, psi, 0)
        vals = j0.to_phys().data
        assert np.max(np.abs(vals.imag)) <= 1e-12 * np.max(np.abs(vals))
        assert np.min(vals.real) >= -1e-12 * np.max(vals.real)

    def test_zero_field(self, rep, grid):
        psi = zeros(grid, ncomp=rep.N)
        for mu in range(D + 1):
            assert current(rep, psi, mu).l2() == 0.0

    def test_plane_wave_eigenvector(self, rep, grid, rng):
        # v an eigenvector of alpha^1: J^1 = lambda |v|^2 constant
        evals, evecs = np.linalg.eigh(rep.alpha[1])
        v = evecs[:, -1]
        lam = evals[-1]
        psi = plane_wave(grid, [2, 0, 0], ncomp=rep.N, comp_vector=v)
        j1 = current(rep, psi, 1).to_phys()
        expected = lam * np.linalg.norm(v) ** 2
        assert np.max(np.abs(j1.data.real - expected)) < 1e-12

    def test_currents_real_for_equal_args(self, rep, grid, rng):
        psi = random_spinor(grid, rng, rep.N)
        for mu in range(D + 1):
            assert current(rep, psi, mu).is_real(1e-12)


class TestMaxwellSources:
    def test_elliptic_source_sign(self, rep, grid, rng):
        psi = random_spinor(grid, rng, rep.N)
        ne = maxwell_E(rep, psi, psi).to_phys()
        assert np.max(ne.data.real) <= 1e-12 * np.max(np.abs(ne.data))

    def test_wave_sources_divergence_free(self, rep, grid, rng):
        psi = random_spinor(grid, rng, rep.N)
        phi = random_spinor(grid, rng, rep.N)
        for vec in (maxwell_R_vec(rep, psi, phi),
                    maxwell_S_vec(rep, psi, phi, +1),
                    maxwell_S_vec(rep, psi, phi, -1)):
            assert divergence(vec).l2() <= 1e-12 * vec.l2()
            assert (leray(vec) - vec.to_spec()).l2() <= 1e-12 * vec.l2()

    def test_scalar_spinorial_decomposition(self, rep, grid, rng):
        # sum_s( -s N^R(psi, Pi_s psi) + N^S_s(psi, Pi_s psi) )
        #   = P <psi, alpha_x psi>
        psi = random_spinor(grid, rng, rep.N)
        total = None
        for s in (+1, -1):
            proj = apply_pi(rep, psi, s).to_phys()
            term = (-float(s)) * maxwell_R_vec(rep, psi, proj) \
                + maxwell_S_vec(rep, psi, proj, s)
            total = term if total is None else total + term
        direct = maxwell_source_vec(rep, psi, psi)
        assert (total - direct).l2() <= 1e-10 * direct.l2()

    def test_dtE_is_divergence_form(self, rep, grid, rng):
        psi = random_spinor(grid, rng, rep.N)
        phi = random_spinor(grid, rng, rep.N)
        out = maxwell_dtE(rep, psi, phi)
        # oracle: spectral divergence of the componentwise inner products
        comps = [spinor_inner(psi, apply_alpha(rep, phi.to_phys(), j)).to_phys().data
                 for j in range(1, D + 1)]
        vec = Field(grid, np.stack(comps), "phys", D)
        assert (out - divergence(vec)).l2() <= 1e-12 * max(out.l2(), 1e-300)


class TestDiracNonlinearities:
    def test_constant_potential_identity(self, rep, grid, rng):
        phi = random_spinor(grid, rng, rep.N)
        a0 = zeros(grid).to_phys()
        a0.data[...] = 1.0
        out = dirac_E(rep, a0, phi)
        assert (out.to_spec() - phi.to_spec()).l2() <= 1e-12 * phi.l2()

    def test_gradient_potential_annihilated(self, rep, grid, rng):
        phi = random_spinor(grid, rng, rep.N)
        ax = gradient(random_band_limited(grid, rng, real=True))
        out = dirac_R(rep, ax, phi)
        assert out.l2() <= 1e-12 * max(phi.l2(), 1e-300)

    def test_resynthesis(self, rep, grid, rng):
        # -s' ND^R(Ax, psi) + ND^S_{s'}(Ax, psi) = A_j alpha^j Pi_{s'} psi
        ax = random_coulomb(grid, rng)
        axp = ax.to_phys()
        for sp in (+1, -1):
            psi = random_spinor(grid, rng, rep.N)
            left = (-float(sp)) * dirac_R(rep, ax, psi).to_spec() \
                + dirac_S(rep, ax, psi, sp).to_spec()
            proj = apply_pi(rep, psi, sp).to_phys()
            right = None
            for j in range(1, D + 1):
                term = dealiased_product(component(axp, j),
                                         apply_alpha(rep, proj, j)).to_spec()
                right = term if right is None else right + term
            assert (left - right).l2() <= 1e-10 * right.l2()

    def test_full_synthesis_both_forms(self, rep, grid, rng):
        ax = random_coulomb(grid, rng)
        a0 = random_band_limited(grid, rng, real=True, band=(1.0, 3.0))
        pot = GaugePotential.make(a0, ax)
        pair = HalfWavePair(plus=random_spinor(grid, rng, rep.N),
                            minus=random_spinor(grid, rng, rep.N))
        direct = cov_dirac_rhs_direct(rep, pot, pair)
        split = cov_dirac_rhs_split(rep, pot, pair)
        for s in (+1, -1):
            scale = max(direct[s].l2(), 1e-300)
            assert (direct[s] - split[s]).l2() <= 1e-10 * scale


class TestParadifferential:
    def test_split_reassembles(self, rep, grid, rng):
        ax = random_coulomb(grid, rng)
        a0 = random_band_limited(grid, rng, real=True)
        phi = random_spinor(grid, rng, rep.N)
        cases = [("E", a0, dirac_E(rep, a0, phi)),
                 ("R", ax, dirac_R(rep, ax, phi)),
                 ("S+", ax, dirac_S(rep, ax, phi, +1)),
                 ("S-", ax, dirac_S(rep, ax, phi, -1))]
        for kind, a, full in cases:
            lo = para_lowhigh(rep, kind, a, phi)
            hi = remainder(rep, kind, a, phi)
            err = (lo + hi - full.to_spec()).l2()
            assert err <= 1e-12 * max(full.l2(), 1e-300), kind

    def test_sharp_low_high_split(self):
        # phi exactly in shell 3, potential fully below the split: the
        # remainder vanishes and pi equals the full product
        rep2 = build_gamma_rep(2)
        g = Grid(d=2, n=32)
        a0 = plane_wave(g, [1, 0])           # |xi| = 1 <= 2^{k-offset-1}
        phi = plane_wave(g, [8, 0], ncomp=rep2.N,
                         comp_vector=np.ones(rep2.N))  # |xi| = 8 = 2^3
        full = dirac_E(rep2, a0, phi)
        lo = para_lowhigh(rep2, "E", a0, phi, offset=2)
        hi = remainder(rep2, "E", a0, phi, offset=2)
        assert hi.l2() <= 1e-13 * full.l2()
        assert (lo - full.to_spec()).l2() <= 1e-12 * full.l2()

    def test_same_shell_goes_to_remainder(self):
        rep2 = build_gamma_rep(2)
        g = Grid(d=2, n=32)
        a0 = plane_wave(g, [8, 0])           # same shell as phi
        phi = plane_wave(g, [0, 8], ncomp=rep2.N,
                         comp_vector=np.ones(rep2.N))
        lo = para_lowhigh(rep2, "E", a0, phi, offset=2)
        hi = remainder(rep2, "E", a0, phi, offset=2)
        full = dirac_E(rep2, a0, phi)
        assert lo.l2() <= 1e-13 * full.l2()
        assert (hi - full.to_spec()).l2() <= 1e-12 * full.l2()


class TestPotentialBuilders:
    def test_zero_sources(self, rep, grid):
        psi = zeros(grid, ncomp=rep.N)
        a0, mean = build_A0(rep, psi, psi)
        assert a0.l2() == 0.0 and mean == 0.0

    def test_elliptic_solve_exact(self, rep, grid, rng):
        psi = random_spinor(grid, rng, rep.N)
        phi = random_spinor(grid, rng, rep.N)
        a0, mean = build_A0(rep, psi, phi, neutralize=True)
        lap = a0.with_data(-grid.xi_norm_grid() ** 2 * a0.data)
        src = maxwell_E(rep, psi, phi).to_spec()
        data = src.data.copy()
        data[(0,) * D] = 0.0
        src = src.with_data(data)
        assert (lap - src).l2() <= 1e-12 * src.l2()

    def test_charge_obstruction_raises(self, rep, grid, rng):
        psi = random_spinor(grid, rng, rep.N)
        with pytest.raises(ValueError):
            build_A0(rep, psi, psi)  # -|psi|^2 has nonzero mean

    def test_duhamel_second_order(self, rep, rng):
        # Richardson: halving dt reduces the wave-equation residual ~4x
        g = Grid(d=2, n=16)
        rep2 = build_gamma_rep(2)
        T = 1.0
        residuals = {}
        for nt in (32, 64):
            dt = T / nt
            t = np.arange(nt + 1) * dt
            base = random_band_limited(g, rng, ncomp=rep2.N, band=(1.0, 3.0))
            series = [base * np.exp(-0.3 * tm) for tm in t]
            pairs = build_Ax(rep2, series, series, g, dt)
            srcs = [maxwell_source_vec(rep2, p, p) for p in series]
            residuals[nt] = wave_residual([a for a, _ in pairs], srcs, g, dt)
        ratio = residuals[32] / residuals[64]
        assert 2.5 <= ratio <= 6.0

    def test_duhamel_zero_data(self, rep, grid):
        psi = zeros(grid, ncomp=rep.N)
        pairs = build_Ax(rep, [psi, psi, psi], [psi, psi, psi], grid, 0.1)
        assert all(a.l2() == 0.0 and adot.l2() == 0.0 for a, adot in pairs)


class TestGaugePotentialInvariant:
    def test_constraint_enforced(self, grid, rng):
        good = random_coulomb(grid, rng)
        a0 = random_band_limited(grid, rng, real=True)
        pot = GaugePotential.make(a0, good)
        assert pot.coulomb_tol <= 1e-10
        bad = gradient(random_band_limited(grid, rng, real=True))
        with pytest.raises(ValueError):
            GaugePotential.make(a0, bad)
