"""Gamma/alpha matrices and half-wave projectors.

Conventions: Minkowski metric diag(-1, +1, ..., +1), anti-commutation
relations (gamma^mu gamma^nu + gamma^nu gamma^mu)/2 = -eta^{mu nu} I, and
conjugation (gamma^mu)^dagger = gamma^0 gamma^mu gamma^0.  The matrices are
built from tensor products of Pauli matrices, so every entry is exactly one
of 0, +-1, +-i and all algebraic identities hold with machine-exact equality.

The half-wave projector Pi(xi) = (I - alpha^j xi_j/|xi|)/2 diagonalizes the
spatial Dirac operator; Pi_s(xi) := Pi(s xi).
"""

from dataclasses import dataclass

import numpy as np

SIGMA1 = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA2 = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA3 = np.array([[1, 0], [0, -1]], dtype=complex)


def _anticommuting_involutions(m):
    """The 2m+1 pairwise anticommuting hermitian involutions on C^(2^m).

    Level m=1 is the Pauli triple; each level tensors sigma1 onto the
    previous list and appends sigma2 x I and sigma3 x I.
    """
    mats = [SIGMA1, SIGMA2, SIGMA3]
    dim = 2
    for _ in range(m - 1):
        eye = np.eye(dim, dtype=complex)
        mats = [np.kron(SIGMA1, e) for e in mats]
        mats.append(np.kron(SIGMA2, eye))
        mats.append(np.kron(SIGMA3, eye))
        dim *= 2
    return mats


@dataclass(frozen=True)
class GammaRep:
    """Concrete d-dependent representation of the gamma/alpha matrices."""

    d: int
    N: int
    gamma: tuple       # gamma^0 .. gamma^d
    alpha: tuple       # alpha^mu = gamma^0 gamma^mu; alpha^0 = I

    def table_str(self, mu):
        """Exact text table of gamma^mu (entries are 0, +-1, +-i)."""
        def fmt(z):
            table = {0j: "0", 1 + 0j: "1", -1 + 0j: "-1", 1j: "i", -1j: "-i"}
            return table[complex(np.round(z.real), np.round(z.imag))]

        rows = [" ".join(f"{fmt(z):>2s}" for z in row) for row in self.gamma[mu]]
        return "\n".join(rows)


def build_gamma_rep(d):
    """Build the standard representation in spatial dimension d (1..4).

    The spinor rank is N = 2^floor((d+1)/2).  alpha^1..alpha^d are the first
    d involutions of the recursive Pauli construction and gamma^0 is the last
    (diagonal) one; gamma^j = gamma^0 alpha^j.
    """
    if not (1 <= d <= 4):
        raise ValueError(f"unsupported spatial dimension d={d}; need 1 <= d <= 4")
    m = (d + 1) // 2
    invs = _anticommuting_involutions(m)
    g0 = invs[-1]
    alphas = [np.eye(2**m, dtype=complex)] + invs[:d]
    gammas = [g0] + [g0 @ a for a in invs[:d]]
    return GammaRep(d=d, N=2**m,
                    gamma=tuple(g.copy() for g in gammas),
                    alpha=tuple(a.copy() for a in alphas))


def pi_matrix(rep, xi, s=+1):
    """Symbol matrix Pi_s(xi) = (I - s alpha^j xi_j/|xi|)/2."""
    xi = np.asarray(xi, dtype=float)
    r = np.linalg.norm(xi)
    if r == 0.0:
        raise ValueError("projector symbol undefined at xi = 0")
    out = np.eye(rep.N, dtype=complex)
    for j in range(rep.d):
        out -= s * (xi[j] / r) * rep.alpha[j + 1]
    return out / 2


@dataclass(frozen=True)
class Projector:
    matrix: np.ndarray
    direction: np.ndarray
    sign: int


def pi_projector(rep, xi, s=+1):
    """Half-wave projector Pi_s(xi) with its unit direction recorded."""
    xi = np.asarray(xi, dtype=float)
    r = np.linalg.norm(xi)
    if r == 0.0:
        raise ValueError("projector symbol undefined at xi = 0")
    return Projector(matrix=pi_matrix(rep, xi, s), direction=xi / r, sign=int(s))


def operator_norm(mat):
    """Largest singular value."""
    return float(np.linalg.svd(np.asarray(mat), compute_uv=False)[0])


def commutation_defect(rep, xi, j, s=+1):
    """alpha^j Pi_s(xi) + s (xi^j/|xi|) I - Pi_{-s}(xi) alpha^j.

    Contract: exactly the zero matrix for every nonzero xi, 1 <= j <= d and
    sign s.
    """
    if not (1 <= j <= rep.d):
        raise ValueError(f"spatial index j={j} out of range 1..{rep.d}")
    xi = np.asarray(xi, dtype=float)
    r = np.linalg.norm(xi)
    if r == 0.0:
        raise ValueError("projector symbol undefined at xi = 0")
    aj = rep.alpha[j]
    return (aj @ pi_matrix(rep, xi, s)
            + s * (xi[j - 1] / r) * np.eye(rep.N)
            - pi_matrix(rep, xi, -s) @ aj)


def spinor_null_ratio(rep, xi, eta):
    """Operator norm of Pi(xi) Pi(-eta) divided by the angle between xi, eta.

    The product norm vanishes linearly in the angle; the ratio is the
    per-sample estimate of the constant in front.
    """
    xi = np.asarray(xi, dtype=float)
    eta = np.asarray(eta, dtype=float)
    theta = angle_between(xi, eta)
    if theta == 0.0:
        raise ValueError("angle is zero; use the exact Pi(xi)Pi(-xi) = 0 check")
    prod = pi_matrix(rep, xi, +1) @ pi_matrix(rep, -eta, +1)
    return operator_norm(prod) / theta


def angle_between(u, v):
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    c = np.dot(u, v) / (np.linalg.norm(u) * np.linalg.norm(v))
    return float(np.arccos(np.clip(c, -1.0, 1.0)))


# ---------------------------------------------------------------------------
# Field-level operators (spectral application of Pi_s(D) and the split
# identities on grid fields).  Imported lazily to keep the matrix algebra
# above dependency-free.

def apply_projector_spectral(rep, spec, xi_list, xi_norm, s=+1):
    """Apply Pi_s(D) to spectral spinor data with component axis first.

    The zero mode (where xi_norm == 0) is annihilated: the |D|-calculus
    excludes it, and Dirac fields are required to be mean-zero.
    """
    nz = xi_norm > 0
    safe = np.where(nz, xi_norm, 1.0)
    out = spec / 2
    for j in range(rep.d):
        ratio = np.where(nz, xi_list[j] / safe, 0.0)
        aj_spec = np.einsum("ab,b...->a...", rep.alpha[j + 1], spec)
        out = out - (s / 2) * ratio * aj_spec
    return np.where(nz, out, 0.0)


def halfwave_split_defect(rep, psi):
    """Discrete L2 norm of alpha^mu d_mu psi + i[(i d_t + |D|) Pi_+ + (i d_t - |D|) Pi_-] psi.

    psi is a space-time spinor Field, mean-zero in space; all derivatives are
    spectral.  The two expressions are the same operator, so the defect is
    zero to machine precision.
    """
    from .grid import Field  # local import; grid depends on nothing here

    if not isinstance(psi, Field) or not psi.spacetime or psi.ncomp != rep.N:
        raise ValueError("expected a space-time spinor field matching the representation")
    psi.require_mean_zero("halfwave_split_defect")
    g = psi.grid
    c = psi.to_spec().data
    tau = g.tau_grid()           # broadcast over (nt, *spatial)
    xin = g.xi_norm_grid()
    # alpha^mu d_mu: d_t + alpha^j d_j, symbols i*tau and i*xi_j
    lhs = 1j * tau * c
    for j in range(rep.d):
        lhs = lhs + 1j * g.xi_grid(j) * np.einsum("ab,b...->a...", rep.alpha[j + 1], c)
    # i[(i d_t + s|D|) Pi_s] summed over signs; i d_t has symbol -tau
    rhs = np.zeros_like(c)
    for s in (+1, -1):
        proj = apply_projector_spectral(rep, c, [g.xi_grid(j) for j in range(rep.d)], xin, s)
        rhs = rhs + 1j * ((-tau + s * xin) * proj)
    defect = psi.with_data(lhs + rhs, rep_="spec")
    return defect.l2()


def alpha0_identity_defect(rep, psi, s=+1):
    """Defect of alpha^0 = -s R^0 + s (i d_t + s|D|)/|D| on a space-time spinor.

    R^0 is the raised-index time Riesz operator with symbol -tau/|xi| (the
    metric flips the sign of the lower-index symbol tau/|xi|).  Exact on
    band-limited mean-zero fields.
    """
    from .grid import Field

    if not isinstance(psi, Field) or not psi.spacetime:
        raise ValueError("expected a space-time field")
    psi.require_mean_zero("alpha0_identity_defect")
    g = psi.grid
    c = psi.to_spec().data
    tau = g.tau_grid()
    xin = g.xi_norm_grid()
    nz = xin > 0
    inv = np.where(nz, 1.0 / np.where(nz, xin, 1.0), 0.0)
    riesz0_up = -tau * inv
    rhs = (-s * riesz0_up + s * (-tau + s * xin) * inv) * c
    rhs = np.where(nz, rhs, 0.0)
    lhs = np.where(nz, c, 0.0)
    defect = psi.with_data(lhs - rhs, rep_="spec")
    return defect.l2()


if __name__ == "__main__":
    for d in (2, 3, 4):
        rep = build_gamma_rep(d)
        print(f"d = {d}, N = {rep.N}")
        for mu in range(d + 1):
            print(f"gamma^{mu}:")
            print(rep.table_str(mu))
        print()
