"""Frequency-localization operators and elementary Fourier multipliers.

The dyadic bump chi is built from the standard exp(-1/x) mollifier as a
telescoping difference chi(r) = phi(r) - phi(2r) of a cumulative cutoff phi
(phi = 1 on (0,1], phi = 0 on [2,inf)), which enforces the partition of
unity sum_k chi(r/2^k) = 1 for r > 0 by construction.  chi(1) = 1 exactly
and supp chi = [1/2, 2], inside the dyadic annulus [2^-2, 2^2].

Angular caps are normalized smooth bumps around maximally separated
directions (greedy farthest-point packing on a fine deterministic sphere
mesh), so the caps sum to exactly 1 away from the origin.
"""

from dataclasses import dataclass

import numpy as np

from .grid import Field, zeros


# -- smooth cutoffs ---------------------------------------------------------

def _smooth_step(u):
    """C^inf step: 0 for u <= 0, 1 for u >= 1."""
    u = np.asarray(u, dtype=float)
    lo = u <= 0
    hi = u >= 1
    mid = ~(lo | hi)
    out = np.zeros_like(u)
    out[hi] = 1.0
    um = u[mid]
    a = np.exp(-1.0 / um)
    b = np.exp(-1.0 / (1.0 - um))
    out[mid] = a / (a + b)
    return out if out.shape else float(out)


def cum_cutoff(r):
    """phi: 1 for r <= 1, 0 for r >= 2, smooth transition in between."""
    return _smooth_step(2.0 - np.asarray(r, dtype=float))


def bump_chi(r):
    """Dyadic annulus bump chi(r) = phi(r) - phi(2r); chi(1) = 1."""
    r = np.asarray(r, dtype=float)
    return cum_cutoff(r) - cum_cutoff(2.0 * r)


@dataclass(frozen=True)
class MultiplierSpec:
    """A Fourier multiplier with its support descriptor."""

    descriptor: str
    symbol: object  # callable on the grid's frequency arrays

    def apply(self, f):
        c = f.to_spec()
        return c.with_data(self.symbol(c.grid) * c.data)


# -- Littlewood-Paley -------------------------------------------------------

def lp_project(f, k):
    """P_k: smooth restriction to the dyadic shell |xi| ~ 2^k."""
    spec = MultiplierSpec(f"P_{k}", lambda g: bump_chi(g.xi_norm_grid() / 2.0 ** k))
    return spec.apply(f)


def lp_below(f, k):
    """P_{<k}: cumulative low-frequency cutoff; passes the zero mode."""
    spec = MultiplierSpec(
        f"P_<{k}", lambda g: cum_cutoff(g.xi_norm_grid() / 2.0 ** (k - 1)))
    return spec.apply(f)


def lp_at_or_above(f, k):
    """P_{>=k} = I - P_{<k} (annihilates the zero mode)."""
    c = f.to_spec()
    return c - lp_below(c, k)


def shell_range(grid):
    """Shells whose bump meets the represented nonzero frequencies."""
    ximin = 2 * np.pi / grid.L
    ximax = grid.xi_norm_grid().max()
    kmin = int(np.floor(np.log2(ximin))) - 1
    kmax = int(np.ceil(np.log2(ximax))) + 1
    return range(kmin, kmax + 1)


# -- modulation -------------------------------------------------------------

def _modulation_distance(grid, s):
    tau = grid.tau_grid()
    xin = grid.xi_norm_grid()
    if s is None:
        return np.abs(np.abs(tau) - xin)
    return np.abs(s * tau - xin)


def modulation_project(f, j, s=None, mode="at"):
    """Q_j / Q^s_j (mode='at') or Q_{<j} / Q^s_{<j} (mode='below').

    Distance to the characteristic cone is ||tau| - |xi|| for the two-sided
    operator and |s tau - |xi|| for the signed ones; the field must live on a
    space-time block (periodic-in-time DFT).
    """
    if not f.spacetime:
        raise ValueError("modulation projections act on space-time fields")
    c = f.to_spec()
    u = _modulation_distance(c.grid, s)
    if mode == "at":
        sym = bump_chi(u / 2.0 ** j)
    elif mode == "below":
        sym = cum_cutoff(u / 2.0 ** (j - 1))
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return c.with_data(sym * c.data)


# -- angular caps -----------------------------------------------------------

def _sphere_mesh(d, fineness, seed):
    if d == 1:
        return np.array([[1.0], [-1.0]])
    if d == 2:
        a = np.linspace(0, 2 * np.pi, fineness, endpoint=False)
        return np.stack([np.cos(a), np.sin(a)], axis=1)
    if d == 3:
        # Fibonacci lattice
        i = np.arange(fineness)
        z = 1 - (2 * i + 1) / fineness
        phi = np.pi * (1 + 5 ** 0.5) * i
        r = np.sqrt(np.maximum(0.0, 1 - z * z))
        return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)
    rng = np.random.default_rng(seed)
    pts = rng.standard_normal((fineness, d))
    return pts / np.linalg.norm(pts, axis=1, keepdims=True)


@dataclass(frozen=True)
class CapSet:
    """Maximally 2^ell-separated directions with smooth normalized bumps."""

    d: int
    ell: int
    centers: np.ndarray

    @property
    def ncaps(self):
        return len(self.centers)


def make_caps(d, ell, seed=0, fineness=None):
    """Greedy farthest-point packing of the sphere at separation 2^ell."""
    if ell > 0:
        raise ValueError("cap scale ell must be <= 0")
    if ell == 0:
        return CapSet(d=d, ell=0, centers=np.zeros((1, d)))
    if fineness is None:
        fineness = {1: 2, 2: 4096, 3: 8192, 4: 16384}[d]
    sep = 2.0 ** ell
    mesh = _sphere_mesh(d, fineness, seed)
    centers = [mesh[0]]
    # geodesic distances to the chosen set, updated incrementally
    dist = np.arccos(np.clip(mesh @ mesh[0], -1, 1))
    while True:
        i = int(np.argmax(dist))
        if dist[i] < sep:
            break
        centers.append(mesh[i])
        dist = np.minimum(dist, np.arccos(np.clip(mesh @ mesh[i], -1, 1)))
    return CapSet(d=d, ell=ell, centers=np.array(centers))


def cap_symbols(grid, caps):
    """Normalized cap multipliers on the grid; they sum to 1 off the origin."""
    if caps.ell == 0:
        one = np.ones(grid.spatial_shape())
        one[(0,) * grid.d] = 0.0
        return [one]
    xin = grid.xi_norm_grid()
    nz = xin > 0
    safe = np.where(nz, xin, 1.0)
    nu = [np.where(nz, grid.xi_grid(j) / safe, 0.0) for j in range(grid.d)]
    width = 0.6 * 2.0 ** caps.ell
    bumps = []
    for w in caps.centers:
        cosang = sum(nu[j] * w[j] for j in range(grid.d))
        ang = np.arccos(np.clip(cosang, -1, 1))
        bumps.append(cum_cutoff(ang / width))
    total = np.sum(bumps, axis=0)
    if np.any(nz & (total <= 0)):
        raise RuntimeError("cap packing left uncovered directions")
    safe_total = np.where(total > 0, total, 1.0)
    return [np.where(nz, b / safe_total, 0.0) for b in bumps]


def angular_project(f, grid_symbols, i):
    """P^omega_ell for cap i, given precomputed cap symbols."""
    c = f.to_spec()
    return c.with_data(grid_symbols[i] * c.data)


# -- boxes ------------------------------------------------------------------

def _radial_piece(x):
    """Unit-width smooth partition of the line: sum_m rho(x - m) = 1."""
    return _smooth_step(x + 1) - _smooth_step(x)


@dataclass(frozen=True)
class BoxFamily:
    """Smooth rectangular localizations C_{k'}(l') covering the shell at k.

    Boxes have radial extent 2^k' and transverse extent 2^(k'+l') (caps at
    angular scale k'+l'-k).  With k' = k and l' = l the family degenerates to
    a single radial piece and reproduces P_k P^omega_l exactly.
    """

    grid: object
    k: int
    kp: int
    lp: int
    caps: CapSet
    cap_syms: tuple
    radial_indices: tuple

    def boxes(self):
        return [(m, i) for m in self.radial_indices
                for i in range(len(self.cap_syms))]

    def box_symbol(self, box):
        m, i = box
        sym = np.array(self.cap_syms[i])
        if m is not None:
            r = self.grid.xi_norm_grid() / 2.0 ** self.kp
            sym = sym * _radial_piece(r - m)
        return sym


def box_family(grid, k, kp, lp, seed=0):
    ell_ang = min(0, kp + lp - k)
    caps = make_caps(grid.d, ell_ang, seed=seed)
    syms = tuple(cap_symbols(grid, caps))
    if kp >= k:
        radial = (None,)          # single piece: the shell bump itself
    else:
        lo = int(np.floor(2.0 ** (k - 1 - kp)))
        hi = int(np.ceil(2.0 ** (k + 1 - kp))) + 1
        radial = tuple(range(lo - 1, hi + 1))
    return BoxFamily(grid=grid, k=k, kp=kp, lp=lp, caps=caps,
                     cap_syms=syms, radial_indices=radial)


def box_project(f, family, box):
    """P_C f = box symbol applied to P_k f (convention P_k P^omega = P_C)."""
    c = lp_project(f, family.k)
    return c.with_data(family.box_symbol(box) * c.data)


# -- Riesz / Leray / inverse operators --------------------------------------

def _inv_xi_norm(grid):
    xin = grid.xi_norm_grid()
    nz = xin > 0
    return np.where(nz, 1.0 / np.where(nz, xin, 1.0), 0.0)


def riesz(f, mu):
    """R_mu = D_mu/|D|: symbol xi_mu/|xi| (tau/|xi| for mu = 0)."""
    c = f.to_spec()
    g = c.grid
    if mu == 0:
        if not f.spacetime:
            raise ValueError("R_0 needs a space-time field")
        num = g.tau_grid()
    else:
        num = g.xi_grid(mu - 1)
    return c.with_data(num * _inv_xi_norm(g) * c.data)


def riesz0_upper(f):
    """Raised-index time Riesz operator R^0 = -D_t/|D| (symbol -tau/|xi|)."""
    return -riesz(f, 0)


def leray(J):
    """Projection onto divergence-free vector fields; passes the zero mode."""
    if J.ncomp != J.grid.d:
        raise ValueError("leray expects a spatial vector field")
    c = J.to_spec()
    g = c.grid
    inv = _inv_xi_norm(g)
    div = sum(g.xi_grid(l) * c.data[l] for l in range(g.d))
    out = np.stack([c.data[j] - g.xi_grid(j) * inv ** 2 * div
                    for j in range(g.d)])
    return c.with_data(out)


def divergence(J):
    c = J.to_spec()
    g = c.grid
    out = sum(1j * g.xi_grid(l) * c.data[l] for l in range(g.d))
    return Field(g, out, "spec", 0, J.spacetime)


def gradient(f):
    c = f.to_spec()
    g = c.grid
    out = np.stack([1j * g.xi_grid(j) * c.data for j in range(g.d)])
    return Field(g, out, "spec", g.d, f.spacetime)


def inv_laplacian(f):
    """Delta^{-1} (symbol -1/|xi|^2); requires a mean-zero source."""
    f.require_mean_zero("inv_laplacian")
    c = f.to_spec()
    return c.with_data(-_inv_xi_norm(c.grid) ** 2 * c.data)


def abs_D(f):
    c = f.to_spec()
    return c.with_data(c.grid.xi_norm_grid() * c.data)


def abs_D_inv(f):
    f.require_mean_zero("abs_D_inv")
    c = f.to_spec()
    return c.with_data(_inv_xi_norm(c.grid) * c.data)


# -- frequency envelopes ----------------------------------------------------

@dataclass(frozen=True)
class FrequencyEnvelope:
    """Slowly varying dyadic majorant of per-shell norms."""

    c: dict                   # shell index -> positive value
    delta: float
    C_c: float = 1.0

    def admissibility_defect(self):
        """max over pairs of |c_k/c_k'| / (C_c 2^(delta |k-k'|)) (<= 1 ok)."""
        ks = sorted(self.c)
        worst = 0.0
        for k in ks:
            for kp in ks:
                bound = self.C_c * 2.0 ** (self.delta * abs(k - kp))
                worst = max(worst, self.c[k] / self.c[kp] / bound)
        return worst

    def product(self, other):
        ks = set(self.c) & set(other.c)
        return FrequencyEnvelope(
            c={k: self.c[k] * other.c[k] for k in ks},
            delta=self.delta + other.delta,
            C_c=self.C_c * other.C_c)


def shell_norms(f, norm="l2"):
    out = {}
    for k in shell_range(f.grid):
        pk = lp_project(f, k)
        out[k] = pk.l2() if norm == "l2" else pk.linf()
    return out


def envelope_from_field(f, delta, norm="l2"):
    """c_k = sum_k' 2^(-delta |k-k'|) ||P_k' f||; admissible with C_c = 1."""
    if delta <= 0:
        raise ValueError("delta must be positive")
    norms = shell_norms(f, norm)
    ks = sorted(norms)
    c = {k: sum(2.0 ** (-delta * abs(k - kp)) * norms[kp] for kp in ks)
         for k in ks}
    return FrequencyEnvelope(c=c, delta=delta, C_c=1.0)


# -- dealiased products -----------------------------------------------------

def _pad_axis(c, axis, m):
    n = c.shape[axis]
    out_shape = list(c.shape)
    out_shape[axis] = m
    out = np.zeros(out_shape, dtype=c.dtype)
    half = n // 2
    idx_lo = [slice(None)] * c.ndim
    idx_lo[axis] = slice(0, half)
    idx_hi_src = [slice(None)] * c.ndim
    idx_hi_src[axis] = slice(n - half, n)
    idx_hi_dst = [slice(None)] * c.ndim
    idx_hi_dst[axis] = slice(m - half, m)
    out[tuple(idx_lo)] = c[tuple(idx_lo)]
    out[tuple(idx_hi_dst)] = c[tuple(idx_hi_src)]
    return out


def _truncate_axis(c, axis, n):
    # drop the unpaired -n/2 Nyquist row so conjugate symmetry survives
    m = c.shape[axis]
    out_shape = list(c.shape)
    out_shape[axis] = n
    out = np.zeros(out_shape, dtype=c.dtype)
    half = n // 2
    idx_lo = [slice(None)] * c.ndim
    idx_lo[axis] = slice(0, half)
    idx_hi_src = [slice(None)] * c.ndim
    idx_hi_src[axis] = slice(m - (half - 1), m)
    idx_hi_dst = [slice(None)] * c.ndim
    idx_hi_dst[axis] = slice(n - (half - 1), n)
    out[tuple(idx_lo)] = c[tuple(idx_lo)]
    out[tuple(idx_hi_dst)] = c[tuple(idx_hi_src)]
    return out


def _spatial_axes(f):
    return tuple(range(-f.grid.d, 0))


def pad_phys(f, factor=1.5):
    """Physical samples on the 3/2 zero-padded spatial lattice.

    Time (for space-time blocks) stays on its own samples: bilinear terms are
    pointwise in t, so only the spatial convolution needs dealiasing.
    """
    v = f.to_phys().data
    axes = _spatial_axes(f)
    nd = f.grid.d
    c = np.fft.fftn(v, axes=axes) / f.grid.n ** nd
    m = int(np.ceil(f.grid.n * factor / 2)) * 2
    for ax in axes:
        c = _pad_axis(c, ax, m)
    return np.fft.ifftn(c, axes=axes) * float(m) ** nd, m


def dealiased_product(f, g):
    """Pointwise product with 3/2 zero padding (exact for quadratics)."""
    if f.grid != g.grid:
        raise ValueError("fields live on different grids")
    if f.ncomp and g.ncomp and f.ncomp != g.ncomp:
        raise ValueError("component mismatch")
    vf, m = pad_phys(f)
    vg, _ = pad_phys(g)
    prod = vf * vg
    axes = _spatial_axes(f)
    nd = f.grid.d
    c = np.fft.fftn(prod, axes=axes) / float(m) ** nd
    for ax in axes:
        c = _truncate_axis(c, ax, f.grid.n)
    vals = np.fft.ifftn(c, axes=axes) * f.grid.n ** nd
    return Field(f.grid, vals, "phys", max(f.ncomp, g.ncomp), f.spacetime)


# -- time windowing ---------------------------------------------------------

def tukey_time(grid, alpha=0.25):
    """Tukey window over the time axis, broadcastable over a block."""
    from scipy.signal.windows import tukey

    if not grid.nt:
        raise ValueError("grid has no time axis")
    w = tukey(grid.nt, alpha=alpha)
    return w.reshape((grid.nt,) + (1,) * grid.d)
