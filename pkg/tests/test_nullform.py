"""Resonance identities, cone geometry, Knapp coherence, null-form gains."""

import numpy as np
import pytest

from mdlab.clifford import build_gamma_rep
from mdlab.nullform import (
    NullFormSpec, angle_gain_scan, bilinear_apply, box_packet, cap_packet,
    cone_angle_check, dichotomy_census, knapp_report, knapp_wave, make_triple,
    product_l2l2, resonance_H, resonance_identity_defects, spinorial_symbol,
    transversal_scan, wedge_symbol,
)


class TestResonance:
    def test_equal_signs_lower_bound(self, rng):
        for _ in range(200):
            xi1, xi2 = rng.standard_normal((2, 3)) * 4
            tr = make_triple(xi1, xi2, (+1, +1, +1))
            h = resonance_H(tr)
            assert abs(h) >= max(tr.norms()) - 1e-12

    def test_rearrangements_exact(self, rng):
        worst = 0.0
        for _ in range(1000):
            xi1, xi2 = rng.standard_normal((2, 4)) * 3
            tr = make_triple(xi1, xi2, (-1, +1, +1))
            d1, d2 = resonance_identity_defects(tr)
            worst = max(worst, d1, d2)
        assert worst < 1e-12

    def test_collinear_same_direction_vanishes(self):
        xi1 = np.array([2.0, 0.0, 0.0])
        tr = make_triple(xi1, 1.5 * xi1, (-1, +1, +1))
        assert abs(resonance_H(tr)) < 1e-12

    def test_scale_invariance_of_angle_reports(self, rng):
        xi1, xi2 = rng.standard_normal((2, 3))
        tr1 = make_triple(xi1, xi2, (-1, +1, +1))
        tr2 = make_triple(7.0 * xi1, 7.0 * xi2, (-1, +1, +1))
        d1 = resonance_identity_defects(tr1)
        d2 = resonance_identity_defects(tr2)
        assert abs(d1[0] - d2[0]) < 1e-12 and abs(d1[1] - d2[1]) < 1e-12


class TestConeGeometry:
    def test_angle_bound_ratio_finite(self):
        # resonant (-,+,+): output eats both inputs, low modulation pins the
        # angle between the aligned legs
        out = cone_angle_check(d=3, ks=(5, 4, 4), js=(-2, -2, -2),
                               signs=(-1, +1, +1), n_samples=2 ** 15)
        assert not out["vacuous"]
        assert out["admissible"] > 20
        assert out["max_ratio"] is not None and out["max_ratio"] < 10.0

    def test_opposite_pair_tight_modulation_angle(self):
        # tightening the modulations shrinks the admissible leg angle
        # like 2^{(j_max - k_min)/2}
        loose = cone_angle_check(d=3, ks=(5, 4, 4), js=(-2, -2, -2),
                                 signs=(-1, +1, +1), n_samples=2 ** 15)
        tight = cone_angle_check(d=3, ks=(5, 4, 4), js=(-4, -4, -4),
                                 signs=(-1, +1, +1), n_samples=2 ** 17)
        assert not loose["vacuous"] and not tight["vacuous"]
        assert tight["max_angle_legs"] < loose["max_angle_legs"]
        assert tight["max_ratio"] < 10.0

    def test_infeasible_reports_vacuous(self):
        # same-sign triple with all modulations far below k_max is empty
        out = cone_angle_check(d=3, ks=(4, 4, 4), js=(-10, -10, -10),
                               signs=(+1, +1, +1), n_samples=2 ** 12)
        assert out["vacuous"] and out["admissible"] == 0

    def test_degenerate_scales_trivial(self):
        out = cone_angle_check(d=2, ks=(3, 2, 2), js=(1, 1, 1),
                               signs=(-1, +1, +1), n_samples=2 ** 13)
        if not out["vacuous"]:
            assert out["max_ratio"] < 60.0  # angle <= pi, bound of order one

    def test_dichotomy_no_middle_band(self):
        for signs in ((-1, +1, +1), (-1, +1, -1)):
            out = dichotomy_census(d=3, ks=(1, 6, 6), signs=signs,
                                   jmax=None, n_samples=2 ** 14)
            assert out["admissible"] > 50
            assert out["offenders"] == 0, signs


class TestKnapp:
    def test_single_mode_is_constant(self):
        w = knapp_wave(d=2, k=3, kp=0, lp=0)
        # shrink to one mode manually
        from mdlab.nullform import KnappWave

        w1 = KnappWave(d=2, k=3, kp=0, lp=0,
                       modes=w.modes[:1], norms=w.norms[:1])
        pts = np.array([[0.0, 0.0], [0.3, -0.2], [1.0, 2.0]])
        for t in (0.0, 0.7, 5.0):
            assert np.max(np.abs(w1.eval(t, pts) - 1.0)) < 1e-12

    def test_coherent_on_slab_then_disperses(self):
        w = knapp_wave(d=4, k=4, kp=2, lp=-1)
        rep = knapp_report(w, per_axis=5, n_times=5)
        assert rep["slab_min"] >= 0.5
        assert rep["late_max"] < 0.5 * rep["peak0"]

    def test_unresolvable_box_rejected(self):
        with pytest.raises(ValueError):
            knapp_wave(d=2, k=2, kp=4, lp=0)


class TestAngleGain:
    def test_model_symbol_band(self, rng):
        spec = NullFormSpec(name="wedge", symbol=wedge_symbol)
        assert spec.sample_bound_defect(rng, d=2) <= 1.05
        rows = angle_gain_scan(wedge_symbol, [0.4, 0.2, 0.1, 0.05], rng, d=2)
        ratios = [r["ratio"] for r in rows]
        assert all(0.3 <= q <= 3.0 for q in ratios)
        rs = [r["R"] for r in rows]
        assert rs[-1] < rs[0]  # decays toward small angle

    def test_constant_symbol_fails_decay(self, rng):
        rows = angle_gain_scan(lambda xi, eta: 1.0, [0.4, 0.2, 0.1, 0.05], rng, d=2)
        rs = [r["R"] for r in rows]
        # no gain: R stays of order one instead of tracking theta
        assert rs[-1] > 0.5 * rs[0]
        assert rows[-1]["ratio"] > 3.0

    def test_spinorial_symbol_linear_decay(self, rng):
        rep = build_gamma_rep(3)
        v1 = rng.standard_normal(rep.N) + 1j * rng.standard_normal(rep.N)
        v2 = rng.standard_normal(rep.N) + 1j * rng.standard_normal(rep.N)
        v1 /= np.linalg.norm(v1)
        v2 /= np.linalg.norm(v2)
        sym = spinorial_symbol(rep, v1, v2)
        rows = angle_gain_scan(sym, [0.4, 0.2, 0.1, 0.05], rng, d=3, k=6)
        ratios = [r["ratio"] for r in rows]
        assert max(ratios) / max(min(ratios), 1e-12) < 4.0
        assert rows[-1]["R"] < rows[0]["R"]


class TestTransversal:
    def test_single_mode_normalization(self, rng):
        f = box_packet(rng, 4, k=5, kp=0, lp=0, direction=[1, 0, 0, 0])
        # collapse to a single mode: product of two single modes is a single
        # space-time mode whose L2L2 norm over [0,T] is sqrt(T)
        from mdlab.nullform import SparseModes

        one = SparseModes(d=4, vectors=f.vectors[:1], coefs=np.ones(1, complex))
        val = product_l2l2(one, one, T=4.0)
        assert abs(val - 2.0) < 1e-12  # sqrt(T) = 2

    def test_scaling_in_angle(self, rng):
        # long Knapp ribbons (l' = -4) keep the whole sweep inside the
        # angle-gain regime 2^{l'} <= 2^{l~}
        rows = transversal_scan(rng, d=4, k1=9, k2=9, kp=7, lp=-4,
                                ell_tildes=[-1, -2, -3], flat=True)
        normalized = [r["lhs"] * 2.0 ** r["ell_tilde"] for r in rows]
        assert max(normalized) / min(normalized) < 2.0

    def test_scaling_in_box_size(self, rng):
        rows = []
        for kp, lp in ((2, 0), (3, 0)):
            rows += transversal_scan(rng, d=4, k1=7, k2=7, kp=kp, lp=lp,
                                     ell_tildes=[-1], nt=129)
        # LHS normalized by 2^{3/2 (k'+l')} is box-size stable within 2x
        ratios = [r["lhs"] / 2.0 ** (1.5 * (r["k_prime"] + r["l_prime"]))
                  for r in rows]
        assert max(ratios) / min(ratios) < 2.0
