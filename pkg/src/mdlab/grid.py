"""Periodic space(-time) lattice, discrete Fourier frame and field container.

A ``Grid`` is a d-dimensional torus of period ``L`` with ``n`` points per
axis, optionally extended by a periodic time axis (``nt`` points over a
window ``T``).  Spectral data are stored as coefficients of the
trigonometric interpolant, i.e. ``f(x) = sum_xi c_xi exp(i xi.x)`` with
``c = fftn(f)/Ntot``; the dual lattice is ``(2 pi/L) Z^d`` truncated at the
Nyquist frequency.

Fields carry their component count (0 = scalar), representation flag and
optional time axis.  Axis layout: ``(ncomp?, nt?, n, ..., n)``.
"""

import json
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class Grid:
    d: int
    n: int
    L: float = 2 * np.pi
    nt: int = 0          # 0 = purely spatial grid
    T: float = 0.0

    def __post_init__(self):
        if self.n & (self.n - 1):
            raise ValueError("points per axis must be a power of two")
        if self.nt and self.T <= 0:
            raise ValueError("time axis requires a positive window T")

    # -- dual lattice -------------------------------------------------------

    @cached_property
    def _ints(self):
        return np.fft.fftfreq(self.n, d=1.0 / self.n).astype(int)

    @cached_property
    def _tints(self):
        return np.fft.fftfreq(self.nt, d=1.0 / self.nt).astype(int)

    def xi_axis(self):
        """Frequencies along one spatial axis."""
        return (2 * np.pi / self.L) * self._ints

    def xi_grid(self, j):
        """xi_j broadcastable over the spatial block (axis j of d)."""
        shape = [1] * self.d
        shape[j] = self.n
        return self.xi_axis().reshape(shape)

    @cached_property
    def _xi_norm(self):
        out = np.zeros((self.n,) * self.d)
        for j in range(self.d):
            out = out + self.xi_grid(j) ** 2
        return np.sqrt(out)

    def xi_norm_grid(self):
        """|xi| over the spatial block (broadcasts over leading axes)."""
        return self._xi_norm

    def tau_grid(self):
        """tau broadcastable over (nt, n, ..., n)."""
        if not self.nt:
            raise ValueError("grid has no time axis")
        shape = (self.nt,) + (1,) * self.d
        return ((2 * np.pi / self.T) * self._tints).reshape(shape)

    # -- geometry -----------------------------------------------------------

    @property
    def spacetime_capable(self):
        return bool(self.nt)

    @property
    def dx(self):
        return self.L / self.n

    @property
    def dt(self):
        return self.T / self.nt if self.nt else 0.0

    def x_axis(self):
        return np.arange(self.n) * self.dx

    def t_axis(self):
        return np.arange(self.nt) * self.dt

    def nyquist(self):
        return np.pi * self.n / self.L

    def spatial_shape(self):
        return (self.n,) * self.d

    def mode_tuple(self, ivec):
        """Array index of the integer frequency vector ivec."""
        return tuple(int(i) % self.n for i in ivec)


class Field:
    """Complex field on a grid: scalar, spinor or vector valued.

    ``ncomp = 0`` marks a scalar (no component axis); otherwise the leading
    axis holds the components.  ``rep`` is ``'phys'`` or ``'spec'``.
    """

    __slots__ = ("grid", "data", "rep", "ncomp", "spacetime")

    def __init__(self, grid, data, rep="phys", ncomp=0, spacetime=False):
        expected = ((ncomp,) if ncomp else ()) + ((grid.nt,) if spacetime else ()) \
            + grid.spatial_shape()
        data = np.asarray(data, dtype=complex)
        if data.shape != expected:
            raise ValueError(f"data shape {data.shape} != expected {expected}")
        self.grid = grid
        self.data = data
        self.rep = rep
        self.ncomp = ncomp
        self.spacetime = spacetime

    # -- transforms ---------------------------------------------------------

    def _axes(self):
        nax = self.grid.d + (1 if self.spacetime else 0)
        return tuple(range(-nax, 0))

    def _ntot(self):
        return self.grid.n ** self.grid.d * (self.grid.nt if self.spacetime else 1)

    def to_spec(self):
        if self.rep == "spec":
            return self
        c = np.fft.fftn(self.data, axes=self._axes()) / self._ntot()
        return self.with_data(c, rep_="spec")

    def to_phys(self):
        if self.rep == "phys":
            return self
        v = np.fft.ifftn(self.data, axes=self._axes()) * self._ntot()
        return self.with_data(v, rep_="phys")

    def with_data(self, data, rep_=None):
        return Field(self.grid, data, rep_ or self.rep, self.ncomp, self.spacetime)

    def copy(self):
        return self.with_data(self.data.copy())

    # -- algebra ------------------------------------------------------------

    def _check_compat(self, other):
        if (self.grid, self.rep, self.ncomp, self.spacetime) != \
                (other.grid, other.rep, other.ncomp, other.spacetime):
            raise ValueError("incompatible fields")

    def __add__(self, other):
        self._check_compat(other)
        return self.with_data(self.data + other.data)

    def __sub__(self, other):
        self._check_compat(other)
        return self.with_data(self.data - other.data)

    def __mul__(self, scalar):
        return self.with_data(self.data * scalar)

    __rmul__ = __mul__

    def __neg__(self):
        return self.with_data(-self.data)

    # -- norms and checks ---------------------------------------------------

    def _cell_volume(self):
        vol = self.grid.L ** self.grid.d * (self.grid.T if self.spacetime else 1.0)
        return vol / self._ntot()

    def l2(self):
        """Discrete L2 norm (Parseval-consistent in either representation)."""
        if self.rep == "spec":
            vol = self.grid.L ** self.grid.d * (self.grid.T if self.spacetime else 1.0)
            return float(np.sqrt(vol * np.sum(np.abs(self.data) ** 2)))
        return float(np.sqrt(self._cell_volume() * np.sum(np.abs(self.data) ** 2)))

    def linf(self):
        v = self.to_phys().data
        if self.ncomp:
            v = np.sqrt(np.sum(np.abs(v) ** 2, axis=0))
        return float(np.max(np.abs(v)))

    def zero_mode(self):
        """Spatial zero-mode coefficients (per component / time slice)."""
        c = self.to_spec().data
        idx = (Ellipsis,) + (0,) * self.grid.d
        return c[idx]

    def require_mean_zero(self, who, tol=1e-12):
        scale = max(np.max(np.abs(self.to_spec().data)), 1e-300)
        if np.max(np.abs(self.zero_mode())) > tol * scale:
            raise ValueError(f"{who}: field must be mean-zero in space")

    def is_real(self, tol=1e-10):
        v = self.to_phys().data
        scale = max(np.max(np.abs(v)), 1e-300)
        return float(np.max(np.abs(v.imag))) <= tol * scale


# -- constructors -----------------------------------------------------------

def zeros(grid, ncomp=0, spacetime=False, rep="spec"):
    shape = ((ncomp,) if ncomp else ()) + ((grid.nt,) if spacetime else ()) \
        + grid.spatial_shape()
    return Field(grid, np.zeros(shape, dtype=complex), rep, ncomp, spacetime)


def plane_wave(grid, ivec, ncomp=0, comp_vector=None, spacetime=False, tau_int=0):
    """Unit plane wave exp(i(xi.x + tau t)) at integer lattice frequencies."""
    f = zeros(grid, ncomp, spacetime)
    idx = ()
    if spacetime:
        idx = (int(tau_int) % grid.nt,)
    idx = idx + grid.mode_tuple(ivec)
    if ncomp:
        vec = np.asarray(comp_vector, dtype=complex)
        for c in range(ncomp):
            f.data[(c,) + idx] = vec[c]
    else:
        f.data[idx] = 1.0
    return f


def random_band_limited(grid, rng, ncomp=0, spacetime=False, band=None,
                        mean_zero=True, real=False):
    """Random field with Fourier support away from the Nyquist rows.

    ``band = (lo, hi)`` restricts to lo <= |xi| <= hi.  ``real`` symmetrizes
    the coefficients (c(-xi) = conj(c(xi))).
    """
    shape = ((ncomp,) if ncomp else ()) + ((grid.nt,) if spacetime else ()) \
        + grid.spatial_shape()
    c = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    keep = np.ones(grid.spatial_shape(), dtype=bool)
    for j in range(grid.d):
        ints = np.abs(grid.xi_grid(j)) / (2 * np.pi / grid.L)
        keep &= ints <= grid.n // 2 - 1
    if band is not None:
        lo, hi = band
        keep &= (grid.xi_norm_grid() >= lo) & (grid.xi_norm_grid() <= hi)
    if mean_zero:
        keep[(0,) * grid.d] = False
    c = np.where(keep, c, 0.0)
    if spacetime:
        tkeep = np.abs(grid._tints) <= grid.nt // 2 - 1
        c = np.where(tkeep.reshape((grid.nt,) + (1,) * grid.d), c, 0.0)
    f = Field(grid, c, "spec", ncomp, spacetime)
    if real:
        v = f.to_phys().data.real
        f = Field(grid, v, "phys", ncomp, spacetime).to_spec()
    return f


# -- serialization ----------------------------------------------------------

def save_field(field, path):
    """Raw little-endian complex array plus a JSON sidecar header."""
    path = Path(path)
    arr = np.ascontiguousarray(field.data.astype("<c16"))
    arr.tofile(path.with_suffix(".bin"))
    header = {
        "d": field.grid.d, "n": field.grid.n, "L": field.grid.L,
        "nt": field.grid.nt, "T": field.grid.T,
        "representation": field.rep, "components": field.ncomp,
        "spacetime": field.spacetime, "dtype": "complex128",
    }
    path.with_suffix(".json").write_text(json.dumps(header, indent=1))


def load_field(path):
    path = Path(path)
    header = json.loads(path.with_suffix(".json").read_text())
    g = Grid(d=header["d"], n=header["n"], L=header["L"],
             nt=header["nt"], T=header["T"])
    shape = ((header["components"],) if header["components"] else ()) \
        + ((g.nt,) if header["spacetime"] else ()) + g.spatial_shape()
    data = np.fromfile(path.with_suffix(".bin"), dtype="<c16").reshape(shape)
    return Field(g, data, header["representation"], header["components"],
                 header["spacetime"])
