"""Bilinear nonlinearity decomposition of the Maxwell-Dirac system.

Maxwell sources built from spinor bilinears (the elliptic source, its formal
time derivative, and the Leray-projected scalar/spinorial wave sources),
Dirac nonlinearities, the low-high paradifferential split with remainders,
and the potential-building operators (elliptic solve for the temporal
component, per-mode Duhamel integration for the spatial components).

Inner products follow <psi1, psi2> = psi2^dagger psi1; all bilinear products
are evaluated pointwise in physical space with 3/2 zero-padding dealiasing,
while Riesz/Leray/projector factors act spectrally.
"""

from dataclasses import dataclass

import numpy as np

from .clifford import apply_projector_spectral
from .grid import Field, zeros
from .multipliers import (
    dealiased_product, divergence, inv_laplacian, leray, lp_below, lp_project,
    lp_at_or_above, riesz, shell_range,
)

# low-high split constants (shell offsets), exposed as module knobs
PARA_SPLIT_OFFSET = 10   # coefficient below k - 10 counts as "low"
PARA_HW_OFFSET = 5       # offset in the paradifferential half-wave operator


@dataclass(frozen=True)
class GaugePotential:
    """Coulomb potential (A0, Ax) with the recorded constraint residual."""

    a0: Field
    ax: Field
    coulomb_tol: float

    @classmethod
    def make(cls, a0, ax, tol=1e-10):
        div = divergence(ax)
        rel = div.linf() / max(ax.linf(), 1e-300)
        if rel > tol:
            raise ValueError(f"Coulomb constraint violated: |div Ax| = {rel:.2e}")
        return cls(a0=a0, ax=ax, coulomb_tol=rel)


@dataclass(frozen=True)
class HalfWavePair:
    """(psi_+, psi_-) with the convention psi = Pi_+ psi_+ + Pi_- psi_-.

    The components need not lie in the ranges of the projectors.
    """

    plus: Field
    minus: Field

    def combine(self, rep):
        return apply_pi(rep, self.plus, +1) + apply_pi(rep, self.minus, -1)


def apply_pi(rep, psi, s):
    """Pi_s(D) as a Fourier multiplier on a spinor field."""
    c = psi.to_spec()
    g = c.grid
    out = apply_projector_spectral(
        rep, c.data, [g.xi_grid(j) for j in range(g.d)], g.xi_norm_grid(), s)
    return c.with_data(out)


def apply_alpha(rep, psi, mu):
    # constant matrix: acts componentwise in either representation
    return psi.with_data(np.einsum("ab,b...->a...", rep.alpha[mu], psi.data))


def spinor_inner(psi1, psi2):
    """Pointwise <psi1, psi2> = psi2^dagger psi1, dealiased."""
    p2 = psi2.to_phys()
    prod = dealiased_product(psi1, p2.with_data(np.conj(p2.data)))
    return Field(prod.grid, np.sum(prod.data, axis=0), "phys", 0, prod.spacetime)


def current(rep, psi, mu):
    """J^mu = <psi, alpha^mu psi>: real scalar field, J^0 = |psi|^2 >= 0."""
    out = spinor_inner(psi, apply_alpha(rep, psi.to_phys(), mu))
    if out.l2() > 0 and not out.is_real(1e-11):
        raise AssertionError("current acquired an imaginary part")
    return out


# -- Maxwell sources --------------------------------------------------------

def maxwell_E(rep, phi1, phi2):
    """N^E(phi1, phi2) = -<phi1, phi2> (elliptic source for A0)."""
    return -1.0 * spinor_inner(phi1, phi2)


def maxwell_dtE(rep, phi1, phi2):
    """Formal time derivative source: d^l <phi1, alpha_l phi2>.

    Agrees with d_t N^E only on covariant-Dirac solutions.
    """
    g = phi1.grid
    acc = None
    for j in range(1, g.d + 1):
        term = spinor_inner(phi1, apply_alpha(rep, phi2.to_phys(), j)).to_spec()
        term = term.with_data(1j * g.xi_grid(j - 1) * term.data)
        acc = term if acc is None else acc + term
    return acc


def maxwell_R_vec(rep, phi1, phi2):
    """Scalar part of the Maxwell wave source: P <phi1, R_x phi2>."""
    g = phi1.grid
    comps = [spinor_inner(phi1, riesz(phi2, j).to_phys()).to_phys().data
             for j in range(1, g.d + 1)]
    vec = Field(g, np.stack(comps), "phys", g.d, phi1.spacetime)
    return leray(vec)


def maxwell_S_vec(rep, phi1, phi2, s):
    """Spinorial part: P <phi1, Pi_{-s} alpha_x phi2>."""
    g = phi1.grid
    comps = []
    for j in range(1, g.d + 1):
        factor = apply_pi(rep, apply_alpha(rep, phi2.to_phys(), j), -s)
        comps.append(spinor_inner(phi1, factor.to_phys()).to_phys().data)
    vec = Field(g, np.stack(comps), "phys", g.d, phi1.spacetime)
    return leray(vec)


def maxwell_R(rep, phi1, phi2, j):
    return component(maxwell_R_vec(rep, phi1, phi2), j)


def maxwell_S(rep, phi1, phi2, j, s):
    return component(maxwell_S_vec(rep, phi1, phi2, s), j)


def component(vec, j):
    return Field(vec.grid, vec.data[j - 1], vec.rep, 0, vec.spacetime)


def maxwell_source_vec(rep, phi1, phi2):
    """P_j <phi1, alpha_x phi2>: the full wave source before splitting."""
    g = phi1.grid
    comps = [spinor_inner(phi1, apply_alpha(rep, phi2.to_phys(), j)).to_phys().data
             for j in range(1, g.d + 1)]
    vec = Field(g, np.stack(comps), "phys", g.d, phi1.spacetime)
    return leray(vec)


# -- Dirac nonlinearities ----------------------------------------------------

def dirac_E(rep, a0, phi):
    """ND^E(A0, phi) = A0 phi."""
    return dealiased_product(a0, phi)


def dirac_R(rep, ax, phi):
    """ND^R(Ax, phi) = (P_j Ax)(R^j phi); Leray applied defensively."""
    g = phi.grid
    pax = leray(ax).to_phys()
    acc = None
    for j in range(1, g.d + 1):
        term = dealiased_product(component(pax, j), riesz(phi, j).to_phys())
        acc = term if acc is None else acc + term
    return acc


def dirac_S(rep, ax, phi, s):
    """ND^S_s(Ax, phi) = A_j Pi_{-s}(alpha^j phi)."""
    g = phi.grid
    axp = ax.to_phys()
    acc = None
    for j in range(1, g.d + 1):
        factor = apply_pi(rep, apply_alpha(rep, phi.to_phys(), j), -s).to_phys()
        term = dealiased_product(component(axp, j), factor)
        acc = term if acc is None else acc + term
    return acc


_KINDS = {"E": dirac_E, "R": dirac_R}


def _dirac_kind(kind):
    if kind in _KINDS:
        return _KINDS[kind], None
    if kind.startswith("S"):
        s = +1 if kind.endswith("+") else -1
        return dirac_S, s
    raise ValueError(f"unknown nonlinearity kind {kind!r}")


def para_lowhigh(rep, kind, a, phi, offset=None):
    """pi[A] phi = sum_k N(P_{<k-offset} A, P_k phi)."""
    offset = PARA_SPLIT_OFFSET if offset is None else offset
    fn, s = _dirac_kind(kind)
    acc = None
    for k in shell_range(phi.grid):
        pk = lp_project(phi, k)
        if pk.l2() == 0.0:
            continue
        low = lp_below(a, k - offset)
        term = fn(rep, low, pk) if s is None else fn(rep, low, pk, s)
        acc = term.to_spec() if acc is None else acc + term.to_spec()
    return acc if acc is not None else zeros(phi.grid, phi.ncomp, phi.spacetime)


def remainder(rep, kind, a, phi, offset=None):
    """R(A, phi) = sum_k N(P_{>=k-offset} A, P_k phi)."""
    offset = PARA_SPLIT_OFFSET if offset is None else offset
    fn, s = _dirac_kind(kind)
    acc = None
    for k in shell_range(phi.grid):
        pk = lp_project(phi, k)
        if pk.l2() == 0.0:
            continue
        high = lp_at_or_above(a, k - offset)
        term = fn(rep, high, pk) if s is None else fn(rep, high, pk, s)
        acc = term.to_spec() if acc is None else acc + term.to_spec()
    return acc if acc is not None else zeros(phi.grid, phi.ncomp, phi.spacetime)


def cov_dirac_rhs_direct(rep, pot, pair):
    """Pi_s(alpha^mu A_mu psi) for psi = Pi_+ psi_+ + Pi_- psi_-, both signs."""
    psi = pair.combine(rep).to_phys()
    acc = dealiased_product(pot.a0, psi).to_spec()
    axp = pot.ax.to_phys()
    for j in range(1, psi.grid.d + 1):
        acc = acc + dealiased_product(
            component(axp, j), apply_alpha(rep, psi, j)).to_spec()
    return {s: apply_pi(rep, acc, s) for s in (+1, -1)}


def cov_dirac_rhs_split(rep, pot, pair):
    """Same right-hand side assembled from the decomposed nonlinearities.

    Pi_s sum_{s'} [ ND^E(A0, Pi_s' psi_s') - s' ND^R(Ax, psi_s')
                    + ND^S_{s'}(Ax, psi_s') ].
    """
    out = {}
    pieces = {}
    for sp, psi_sp in ((+1, pair.plus), (-1, pair.minus)):
        term = dirac_E(rep, pot.a0, apply_pi(rep, psi_sp, sp).to_phys()).to_spec()
        term = term - float(sp) * dirac_R(rep, pot.ax, psi_sp).to_spec()
        term = term + dirac_S(rep, pot.ax, psi_sp, sp).to_spec()
        pieces[sp] = term
    total = pieces[+1] + pieces[-1]
    for s in (+1, -1):
        out[s] = apply_pi(rep, total, s)
    return out


# -- potential builders ------------------------------------------------------

def build_A0(rep, psi, phi, neutralize=False):
    """A0 = Delta^{-1} N^E(psi, phi).

    On the torus the elliptic equation is solvable only for mean-zero
    sources; ``neutralize`` subtracts the spatial mean (recorded charge
    obstruction) and is how the experiments run.
    """
    src = maxwell_E(rep, psi, phi).to_spec()
    mean = complex(src.zero_mode())
    if neutralize:
        idx = (0,) * src.grid.d
        data = src.data.copy()
        data[idx] = 0.0
        src = src.with_data(data)
    else:
        scale = max(np.max(np.abs(src.data)), 1e-300)
        if abs(mean) > 1e-12 * scale:
            raise ValueError(
                "elliptic source has nonzero total charge "
                f"({mean:.3e}); neutralize explicitly to proceed")
    return inv_laplacian(src), mean


def wave_oscillator_step(a, adot, src, omega, dt):
    """Exact step of a'' + omega^2 a = -src with the source frozen over dt."""
    c = np.cos(omega * dt)
    s_ = np.sin(omega * dt)
    nz = omega > 0
    safe = np.where(nz, omega, 1.0)
    sin_over = np.where(nz, s_ / safe, dt)
    one_minus_cos = np.where(nz, (1 - c) / safe ** 2, dt ** 2 / 2)
    a_new = c * a + sin_over * adot - one_minus_cos * src
    adot_new = -safe * np.where(nz, s_, 0.0) * a + c * adot - sin_over * src
    return a_new, adot_new


def build_Ax(rep, psi_series, phi_series, grid, dt):
    """Duhamel solution of Box A_j = P_j <psi, alpha_x phi> with zero data.

    ``psi_series``/``phi_series`` are spinor snapshots on a uniform time
    grid; integration is per Fourier mode with the exact oscillator kernel
    and midpoint-frozen sources (second-order accurate).  Returns the list of
    (A, dA/dt) spectral pairs at the sample times.
    """
    omega = grid.xi_norm_grid()
    shape = (grid.d,) + grid.spatial_shape()
    a = np.zeros(shape, dtype=complex)
    adot = np.zeros(shape, dtype=complex)
    out = [(Field(grid, a.copy(), "spec", grid.d),
            Field(grid, adot.copy(), "spec", grid.d))]
    sources = [maxwell_source_vec(rep, p, q).to_spec().data
               for p, q in zip(psi_series, phi_series)]
    for m in range(len(psi_series) - 1):
        mid = 0.5 * (sources[m] + sources[m + 1])
        a, adot = wave_oscillator_step(a, adot, mid, omega, dt)
        out.append((Field(grid, a.copy(), "spec", grid.d),
                    Field(grid, adot.copy(), "spec", grid.d)))
    return out


def wave_residual(a_series, src_series, grid, dt):
    """Centered-difference check of Box A = src on interior sample times."""
    errs = []
    for m in range(1, len(a_series) - 1):
        a_prev = a_series[m - 1].to_spec().data
        a_mid = a_series[m].to_spec().data
        a_next = a_series[m + 1].to_spec().data
        dtt = (a_next - 2 * a_mid + a_prev) / dt ** 2
        box = -dtt - grid.xi_norm_grid() ** 2 * a_mid
        errs.append(Field(grid, box - src_series[m].to_spec().data,
                          "spec", grid.d).l2())
    return max(errs)
