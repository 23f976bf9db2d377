"""Time integration of the half-wave Maxwell-Dirac system and Picard iteration.

The stepper is a second-order integrating-factor midpoint scheme: the
half-wave components ride the exact propagator exp(i s dt |D|) with the
nonlinearity sampled at a predicted midpoint state, the spatial potential is
advanced per Fourier mode by the exact inhomogeneous-oscillator kernel with
the midpoint source, and the temporal potential is re-solved elliptically at
every stage.  The Coulomb constraint is preserved to machine precision
because the wave source is Leray-projected before it enters.

The outer Picard iteration rebuilds the potential from the previous spinor
trajectory and re-solves the (linear) covariant Dirac equation by the same
integrator, iterated to a per-step fixed point.
"""

import csv
import json
import time as _time
from dataclasses import dataclass, field as dc_field

import numpy as np

from .grid import Field, zeros
from .multipliers import (
    divergence, gradient, inv_laplacian, leray, lp_project, shell_range,
)
from .nonlinearity import (
    GaugePotential, HalfWavePair, apply_pi, cov_dirac_rhs_direct,
    maxwell_E, maxwell_source_vec, wave_oscillator_step,
)


def coulombize(ax, ax_dot):
    """Gauge-fix a potential pair to Coulomb gauge: A -> A - d(chi).

    chi solves Delta chi = div A (the divergence is automatically mean-zero
    on the torus).  Returns the fixed pair and chi.
    """
    chi = inv_laplacian(divergence(ax))
    chi_dot = inv_laplacian(divergence(ax_dot))
    fixed = ax.to_spec() - gradient(chi)
    fixed_dot = ax_dot.to_spec() - gradient(chi_dot)
    return (fixed, fixed_dot), chi


@dataclass
class MDState:
    t: float
    rep: object
    pair: HalfWavePair
    ax: Field
    ax_dot: Field
    free_ax: Field
    free_ax_dot: Field
    a0_mean: float = 0.0       # recorded charge obstruction of the A0 solve

    @property
    def grid(self):
        return self.pair.plus.grid

    def psi(self):
        return self.pair.combine(self.rep)

    def charge(self):
        return self.psi().l2() ** 2

    def coulomb_residual(self):
        return divergence(self.ax).linf() / max(self.ax.linf(), 1e-300)


def initial_state(rep, psi0, ax0, ax_dot0, enforce_coulomb=True):
    """Split the spinor into half waves and gauge-fix the potential."""
    if enforce_coulomb:
        (ax0, ax_dot0), _ = coulombize(ax0, ax_dot0)
    pair = HalfWavePair(plus=apply_pi(rep, psi0, +1),
                        minus=apply_pi(rep, psi0, -1))
    return MDState(t=0.0, rep=rep, pair=pair,
                   ax=ax0.to_spec(), ax_dot=ax_dot0.to_spec(),
                   free_ax=ax0.to_spec().copy(), free_ax_dot=ax_dot0.to_spec().copy())


def solve_a0(rep, psi):
    """Elliptic stage: Delta A0 = -<psi,psi>, charge-neutralized."""
    src = maxwell_E(rep, psi, psi).to_spec()
    mean = complex(src.zero_mode())
    data = src.data.copy()
    data[(0,) * src.grid.d] = 0.0
    return inv_laplacian(src.with_data(data)), mean.real


def _halfwave_phase(grid, s, dt):
    return np.exp(1j * s * dt * grid.xi_norm_grid())


def _nonlinearity(rep, state_pair, ax, a0):
    """G_s = -i Pi_s(alpha^mu A_mu psi) for both signs."""
    pot = GaugePotential(a0=a0, ax=ax, coulomb_tol=0.0)
    rhs = cov_dirac_rhs_direct(rep, pot, state_pair)
    return {s: rhs[s] * (-1j) for s in (+1, -1)}


def step(state, dt, linear=False):
    """One integrating-factor midpoint step of the full system.

    ``linear`` switches the couplings off: the half waves ride the exact
    propagator and the potential evolves as a free wave.
    """
    rep, g = state.rep, state.grid
    omega = g.xi_norm_grid()

    if linear:
        zero_g = {s: zeros(g, ncomp=rep.N) for s in (+1, -1)}
        psi_t = state.pair.combine(rep)
        g_t, src_t = zero_g, 0.0
        a0_t = zeros(g)
    else:
        psi_t = state.pair.combine(rep)
        a0_t, _ = solve_a0(rep, psi_t)
        g_t = _nonlinearity(rep, state.pair, state.ax, a0_t)
        src_t = maxwell_source_vec(rep, psi_t, psi_t).to_spec().data

    # midpoint predictor for the spinor and the potential
    half = {s: _halfwave_phase(g, s, dt / 2) for s in (+1, -1)}
    pair_mid = HalfWavePair(
        plus=(state.pair.plus.to_spec() + (dt / 2) * g_t[+1]).with_data(
            half[+1] * (state.pair.plus.to_spec() + (dt / 2) * g_t[+1]).data),
        minus=(state.pair.minus.to_spec() + (dt / 2) * g_t[-1]).with_data(
            half[-1] * (state.pair.minus.to_spec() + (dt / 2) * g_t[-1]).data))
    a_mid, adot_mid = wave_oscillator_step(
        state.ax.data, state.ax_dot.data, src_t, omega, dt / 2)
    ax_mid = state.ax.with_data(a_mid)

    if linear:
        g_mid, src_mid, mean_mid = g_t, 0.0, 0.0
    else:
        psi_mid = pair_mid.combine(rep)
        a0_mid, mean_mid = solve_a0(rep, psi_mid)
        g_mid = _nonlinearity(rep, pair_mid, ax_mid, a0_mid)
        src_mid = maxwell_source_vec(rep, psi_mid, psi_mid).to_spec().data

    full = {s: _halfwave_phase(g, s, dt) for s in (+1, -1)}
    new_plus = state.pair.plus.to_spec().with_data(
        full[+1] * state.pair.plus.to_spec().data
        + dt * half[+1] * g_mid[+1].data)
    new_minus = state.pair.minus.to_spec().with_data(
        full[-1] * state.pair.minus.to_spec().data
        + dt * half[-1] * g_mid[-1].data)

    a_new, adot_new = wave_oscillator_step(
        state.ax.data, state.ax_dot.data, src_mid, omega, dt)
    fa_new, fadot_new = wave_oscillator_step(
        state.free_ax.data, state.free_ax_dot.data, 0.0, omega, dt)

    if not (np.all(np.isfinite(new_plus.data)) and np.all(np.isfinite(a_new))):
        raise RuntimeError(f"non-finite state at t = {state.t + dt:.6g}; "
                           "reduce dt or the data size")
    return MDState(t=state.t + dt, rep=rep,
                   pair=HalfWavePair(plus=new_plus, minus=new_minus),
                   ax=state.ax.with_data(a_new),
                   ax_dot=state.ax_dot.with_data(adot_new),
                   free_ax=state.free_ax.with_data(fa_new),
                   free_ax_dot=state.free_ax_dot.with_data(fadot_new),
                   a0_mean=mean_mid)


@dataclass
class RunReport:
    """Per-report-step time series plus run metadata."""

    meta: dict
    rows: list = dc_field(default_factory=list)

    COLUMNS = ("t", "charge", "coulomb_residual", "dirac_residual",
               "gauge_residual", "dt", "wall_clock")

    def add_row(self, **kw):
        self.rows.append(kw)

    def column(self, name):
        return np.array([r[name] for r in self.rows])

    def to_csv(self, path, drop_wall_clock=False):
        shells = sorted({k for r in self.rows for k in r
                         if isinstance(k, str) and k.startswith("shell_")})
        cols = [c for c in self.COLUMNS
                if not (drop_wall_clock and c == "wall_clock")] + shells
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(cols)
            for r in self.rows:
                w.writerow([repr(r.get(c, "")) for c in cols])

    def summary(self):
        q = self.column("charge")
        return {
            "meta": self.meta,
            "charge_drift": float(np.max(np.abs(q - q[0])) / max(q[0], 1e-300)),
            "max_coulomb_residual": float(np.max(self.column("coulomb_residual"))),
            "max_gauge_residual": float(np.max(self.column("gauge_residual"))),
            "steps": len(self.rows),
        }

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.summary(), fh, indent=1, sort_keys=True)


def _gauge_residual(state, a0):
    """|Delta A0 + <psi,psi> - mean| relative to the source size."""
    g = state.grid
    lap = a0.with_data(-g.xi_norm_grid() ** 2 * a0.data)
    src = maxwell_E(state.rep, state.psi(), state.psi()).to_spec()
    data = src.data.copy()
    data[(0,) * g.d] = 0.0
    src0 = src.with_data(data)
    return (lap - src0).l2() / max(src0.l2(), 1e-300)


def _dirac_residual(prev, cur, nxt, dt):
    """Centered-difference residual of (i d_t + s|D|) psi_s = Pi_s N."""
    rep, g = cur.rep, cur.grid
    a0, _ = solve_a0(rep, cur.psi())
    rhs = cov_dirac_rhs_direct(
        rep, GaugePotential(a0=a0, ax=cur.ax, coulomb_tol=0.0), cur.pair)
    total = 0.0
    for s, get in ((+1, lambda st: st.pair.plus), (-1, lambda st: st.pair.minus)):
        ddt = (get(nxt).to_spec() - get(prev).to_spec()) * (1.0 / (2 * dt))
        mid = get(cur).to_spec()
        res = (1j * ddt.data + s * g.xi_norm_grid() * mid.data - rhs[s].data)
        total += Field(g, res, "spec", rep.N).l2() ** 2
    return float(np.sqrt(total))


def run(state, T, dt, report_every=1, charge_tol=None, coulomb_tol=None,
        linear=False):
    """Integrate on [t0, t0+T] and collect a RunReport."""
    nsteps = int(round(T / dt))
    meta = {"d": state.grid.d, "n": state.grid.n, "L": state.grid.L,
            "dt": dt, "T": T, "scheme": "integrating-factor midpoint",
            "contraction_norm": "sup_t spatial L2 of half-wave components"}
    report = RunReport(meta=meta)
    t0 = _time.perf_counter()
    window = [state]
    q0 = state.charge()

    def record(st, dirac_res):
        a0, _ = solve_a0(st.rep, st.psi())
        row = {
            "t": st.t, "charge": st.charge(),
            "coulomb_residual": st.coulomb_residual(),
            "dirac_residual": dirac_res,
            "gauge_residual": _gauge_residual(st, a0),
            "dt": dt, "wall_clock": _time.perf_counter() - t0,
        }
        psi = st.psi()
        for k in shell_range(st.grid):
            row[f"shell_{k}"] = lp_project(psi, k).l2()
        report.add_row(**row)
        if charge_tol is not None and q0 > 0:
            if abs(st.charge() - q0) / q0 > charge_tol:
                raise RuntimeError(f"charge drift exceeded {charge_tol}")
        if coulomb_tol is not None and st.coulomb_residual() > coulomb_tol:
            raise RuntimeError(f"Coulomb residual exceeded {coulomb_tol}")

    record(state, 0.0)
    for m in range(nsteps):
        window.append(step(window[-1], dt, linear=linear))
        if len(window) == 3:
            if (m + 1) % report_every == 0 or m == nsteps - 1:
                record(window[1], _dirac_residual(*window, dt))
            window.pop(0)
    record(window[-1], report.rows[-1]["dirac_residual"] if report.rows else 0.0)
    return report, window[-1]


# -- data families ------------------------------------------------------------

def gaussian_packet_data(rep, grid, eps, carrier=None, width_frac=0.15, seed=7):
    """Small modulated Gaussian spinor packet plus a smooth Coulomb potential.

    The spinor is normalized to ||psi(0)||_L2 = eps; the potential pair is
    divergence-free, real, supported at low frequencies, with amplitude eps.
    """
    rng = np.random.default_rng(seed)
    g = grid
    if carrier is None:
        carrier = [2] + [0] * (g.d - 1)
    x0 = g.L / 2
    w = width_frac * g.L
    prof = np.zeros(g.spatial_shape(), dtype=complex)
    mesh = np.meshgrid(*[g.x_axis()] * g.d, indexing="ij")
    r2 = sum((m - x0) ** 2 for m in mesh)
    phase = sum(k * m * (2 * np.pi / g.L) for k, m in zip(carrier, mesh))
    prof = np.exp(-r2 / (2 * w ** 2)) * np.exp(1j * phase)
    vec = rng.standard_normal(rep.N) + 1j * rng.standard_normal(rep.N)
    vec /= np.linalg.norm(vec)
    data = np.stack([v * prof for v in vec])
    psi = Field(g, data, "phys", rep.N).to_spec()
    # clean zero mode and Nyquist rows so spectral calculus stays exact
    cdata = psi.data.copy()
    cdata[(slice(None),) + (0,) * g.d] = 0.0
    for j in range(g.d):
        idx = [slice(None)] * (g.d + 1)
        idx[j + 1] = g.n // 2
        cdata[tuple(idx)] = 0.0
    psi = psi.with_data(cdata)
    psi = psi * (eps / psi.l2())

    from .grid import random_band_limited

    ax = leray(random_band_limited(g, rng, ncomp=g.d, real=True, band=(0.9, 2.1)))
    ax_dot = leray(random_band_limited(g, rng, ncomp=g.d, real=True, band=(0.9, 2.1)))
    ax = ax * (eps / max(ax.l2(), 1e-300))
    ax_dot = ax_dot * (eps / max(ax_dot.l2(), 1e-300))
    return psi, ax, ax_dot


def rescale_fields(psi, ax, ax_dot, lam):
    """Apply the scaling symmetry on a grid rescaled in tandem.

    (A, psi)(t, x) -> (lam^-1 A, lam^-3/2 psi)(t/lam, x/lam) maps the torus
    of period L to one of period lam*L with identical sample indices.
    """
    from .grid import Grid

    g = psi.grid
    g2 = Grid(d=g.d, n=g.n, L=lam * g.L, nt=g.nt, T=lam * g.T if g.nt else 0.0)
    return (Field(g2, psi.data * lam ** -1.5, psi.rep, psi.ncomp),
            Field(g2, ax.data * lam ** -1.0, ax.rep, ax.ncomp),
            Field(g2, ax_dot.data * lam ** -2.0, ax_dot.rep, ax_dot.ncomp))


# -- linear covariant Dirac solve and the Picard iteration -------------------

def _interp_mid(series, m):
    return 0.5 * (series[m] + series[m + 1])


def solve_covariant_dirac(rep, psi0, a0_series, ax_series, dt,
                          fp_tol=1e-10, max_fp=60):
    """March the linear half-wave system with a frozen potential series.

    Implicit midpoint in the interaction picture, fixed-point iterated each
    step.  ``a0_series``/``ax_series`` are spectral snapshots on the step
    grid.  Returns the trajectory of spinor fields (combined psi).
    """
    g = psi0.grid
    pair = HalfWavePair(plus=apply_pi(rep, psi0, +1),
                        minus=apply_pi(rep, psi0, -1))
    half = {s: _halfwave_phase(g, s, dt / 2) for s in (+1, -1)}
    traj = [pair]
    nsteps = len(ax_series) - 1
    for m in range(nsteps):
        a0_mid = _interp_mid(a0_series, m)
        ax_mid = _interp_mid(ax_series, m)
        cur = traj[-1]
        # predictor: free flight
        guess = HalfWavePair(
            plus=cur.plus.to_spec().with_data(half[+1] ** 2 * cur.plus.to_spec().data),
            minus=cur.minus.to_spec().with_data(half[-1] ** 2 * cur.minus.to_spec().data))
        scale = max(cur.plus.l2() + cur.minus.l2(), 1e-300)
        for it in range(max_fp):
            mid = HalfWavePair(
                plus=cur.plus.to_spec().with_data(
                    0.5 * (half[+1] * cur.plus.to_spec().data
                           + np.conj(half[+1]) * guess.plus.data)),
                minus=cur.minus.to_spec().with_data(
                    0.5 * (half[-1] * cur.minus.to_spec().data
                           + np.conj(half[-1]) * guess.minus.data)))
            gmid = _nonlinearity(rep, mid, ax_mid, a0_mid)
            new = HalfWavePair(
                plus=cur.plus.to_spec().with_data(
                    half[+1] ** 2 * cur.plus.to_spec().data
                    + dt * half[+1] * gmid[+1].data),
                minus=cur.minus.to_spec().with_data(
                    half[-1] ** 2 * cur.minus.to_spec().data
                    + dt * half[-1] * gmid[-1].data))
            delta = (new.plus - guess.plus).l2() + (new.minus - guess.minus).l2()
            guess = new
            if delta <= fp_tol * scale:
                break
        else:
            raise RuntimeError(f"inner fixed point stalled (residual {delta:.2e})")
        traj.append(guess)
    return traj


def _free_wave_series(ax0, ax_dot0, grid, dt, nsteps):
    omega = grid.xi_norm_grid()
    a, adot = ax0.to_spec().data.copy(), ax_dot0.to_spec().data.copy()
    out = [Field(grid, a.copy(), "spec", grid.d)]
    for _ in range(nsteps):
        a, adot = wave_oscillator_step(a, adot, 0.0, omega, dt)
        out.append(Field(grid, a.copy(), "spec", grid.d))
    return out


def picard_outer(rep, psi0, ax0, ax_dot0, T, dt, n_iters, fp_tol=1e-10):
    """Picard iterates: A^{n+1} from psi^n, then a linear covariant solve.

    Returns the distances d_n = sup_t max_s ||Pi_s(psi^{n+1} - psi^n)||_L2
    together with the final trajectory.
    """
    from .nonlinearity import build_Ax

    g = psi0.grid
    nsteps = int(round(T / dt))
    (ax0, ax_dot0), _ = coulombize(ax0, ax_dot0)
    free_series = _free_wave_series(ax0, ax_dot0, g, dt, nsteps)
    zero = zeros(g, ncomp=rep.N)
    prev_traj = [zero for _ in range(nsteps + 1)]
    dists = []
    for _ in range(n_iters):
        # potential built from the previous iterate
        a0_series = [solve_a0(rep, p)[0] for p in prev_traj]
        if any(p.l2() > 0 for p in prev_traj):
            duhamel = build_Ax(rep, prev_traj, prev_traj, g, dt)
            ax_series = [f + a for f, (a, _) in zip(free_series, duhamel)]
        else:
            ax_series = free_series
        pair_traj = solve_covariant_dirac(rep, psi0, a0_series, ax_series,
                                          dt, fp_tol=fp_tol)
        new_traj = [pr.combine(rep) for pr in pair_traj]
        dist = 0.0
        for new, old in zip(new_traj, prev_traj):
            for s in (+1, -1):
                dist = max(dist, (apply_pi(rep, new, s)
                                  - apply_pi(rep, old, s)).l2())
        dists.append(dist)
        prev_traj = new_traj
    return dists, prev_traj
