"""Jacobi theta and Weierstrass zeta / wp functions.

The theta function is the odd one on the rectangular torus C/<1, i tau>::

    theta(z; tau) = sum_k exp(-pi (k+1/2)^2 tau + 2 pi i (k+1/2)(z-1/2))

which equals theta_1(pi z | q) with nome q = exp(-pi tau).

Weierstrass zeta and wp are evaluated on a Gauss-reduced basis through the
logarithmic derivative of theta_1 (a rapidly convergent Lambert series), after
translating z into the centred fundamental cell.
"""
from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, PoleError

TAU_MIN = 0.05
POLE_TOL = 1e-12


def _finite(z: complex) -> bool:
    return math.isfinite(z.real) and math.isfinite(z.imag)


def jacobi_theta(z, tau: float, shift=None):
    """Odd Jacobi theta function on C/<1, i*tau>; accepts scalars or arrays.

    With ``shift = (m, n)`` (integers or integer arrays) the value at
    z + m + n*i*tau is returned, evaluated through quasi-periodicity so that
    small offsets z from a lattice point keep full relative accuracy.
    """
    tau = float(tau)
    if not math.isfinite(tau) or tau < TAU_MIN:
        raise DomainError(f"tau must be finite and >= {TAU_MIN}, got {tau}")
    za = np.asarray(z, dtype=complex)
    if not np.all(np.isfinite(za)):
        raise DomainError("theta argument must be finite")
    # reduce to the centred cell: theta(z0 + m + n i tau)
    #   = (-1)^(m+n) exp(pi tau n^2 - 2 pi i n z0) theta(z0)
    n_sh = np.round(za.imag / tau)
    z1 = za - 1j * tau * n_sh
    m_sh = np.round(z1.real)
    z0 = z1 - m_sh
    if shift is not None:
        m_sh = m_sh + np.asarray(shift[0])
        n_sh = n_sh + np.asarray(shift[1])
    factor = np.where((m_sh + n_sh) % 2, -1.0, 1.0) * np.exp(
        math.pi * tau * n_sh**2 - 2j * math.pi * n_sh * z0)
    K = int(math.ceil(0.5 + math.sqrt(40.0 / (math.pi * tau)))) + 2
    # paired +-(m + 1/2) terms: 2 sum (-1)^m q^((m+1/2)^2) sin((2m+1) pi z),
    # which keeps full relative accuracy near the zero at z = 0
    m = np.arange(K)
    coef = 2.0 * (-1.0) ** m * np.exp(-math.pi * tau * (m + 0.5) ** 2)
    terms = coef * np.sin(np.multiply.outer(z0, (2 * m + 1) * math.pi))
    if za.ndim == 0 and np.ndim(factor) == 0:
        t = terms.ravel()
        return complex(factor) * complex(math.fsum(t.real), math.fsum(t.imag))
    return factor * terms.sum(axis=-1)


def _gauss_reduce(w1: complex, w2: complex) -> tuple[complex, complex, np.ndarray]:
    """Lagrange-Gauss reduction. Returns (v1, v2, M) with [v1, v2] = M @ [w1, w2]
    and v2/v1 in the standard fundamental domain (upper half plane kept)."""
    M = np.eye(2, dtype=int)
    v1, v2 = w1, w2
    for _ in range(200):
        if abs(v2) < abs(v1):
            v1, v2 = -v2, v1  # keeps orientation
            M = np.array([[0, -1], [1, 0]]) @ M
        mu = round((v2 / v1).real)
        if mu == 0:
            break
        v2 = v2 - mu * v1
        M = np.array([[1, 0], [-mu, 1]]) @ M
    return v1, v2, M


@dataclass(frozen=True)
class ComplexLattice:
    """Lattice <t1, t2> in C with Im(t2/t1) > 0 (generators swapped if not)."""

    t1: complex
    t2: complex
    _red: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        t1, t2 = complex(self.t1), complex(self.t2)
        if not (_finite(t1) and _finite(t2)):
            raise DomainError("lattice generators must be finite")
        ratio = t2 / t1 if t1 != 0 else complex("nan")
        if t1 == 0 or t2 == 0 or not _finite(ratio) or abs(ratio.imag) < 1e-14 * abs(ratio):
            raise DomainError("lattice generators must be nonzero and independent")
        if ratio.imag < 0:
            t1, t2 = t2, t1
        object.__setattr__(self, "t1", t1)
        object.__setattr__(self, "t2", t2)
        object.__setattr__(self, "_red", _ReducedLattice.build(t1, t2))

    def coords(self, z: complex) -> tuple[float, float]:
        """Real coordinates (a, b) with z = a*t1 + b*t2."""
        m = np.array([[self.t1.real, self.t2.real], [self.t1.imag, self.t2.imag]])
        a, b = np.linalg.solve(m, [z.real, z.imag])
        return float(a), float(b)

    def contains(self, z: complex, tol: float = 1e-9) -> bool:
        a, b = self.coords(z)
        return abs(a - round(a)) < tol and abs(b - round(b)) < tol

    def scaled(self, lam: complex) -> "ComplexLattice":
        return ComplexLattice(self.t1 * lam, self.t2 * lam)


@dataclass(frozen=True)
class _ReducedLattice:
    w1: complex
    w2: complex
    q2: complex  # q^2 with q = exp(i pi tau), tau = w2/w1
    lam: np.ndarray  # Lambert coefficients q^{2n}/(1-q^{2n})
    eta_w1: complex  # zeta(z+w1) - zeta(z)
    eta_w2: complex

    @classmethod
    def build(cls, t1: complex, t2: complex) -> "_ReducedLattice":
        w1, w2, _ = _gauss_reduce(t1, t2)
        tau = w2 / w1
        q2 = cmath.exp(2j * math.pi * tau)
        nmax = max(4, int(math.ceil(40.0 / (math.pi * tau.imag))) + 2)
        p = q2 ** np.arange(1, nmax + 1)
        lam = p / (1.0 - p)
        # E2(tau) = 1 - 24 sum n q^{2n} / (1 - q^{2n})
        s = complex(np.sum(np.arange(1, nmax + 1) * lam))
        eta_w1 = (math.pi**2 / (3.0 * w1)) * (1.0 - 24.0 * s)
        eta_w2 = eta_w1 * tau - 2j * math.pi / w1
        return cls(w1, w2, q2, lam, eta_w1, eta_w2)

    def reduce(self, z: complex) -> tuple[complex, int, int]:
        m = np.array([[self.w1.real, self.w2.real], [self.w1.imag, self.w2.imag]])
        a, b = np.linalg.solve(m, [z.real, z.imag])
        ma, mb = int(round(a)), int(round(b))
        return z - ma * self.w1 - mb * self.w2, ma, mb

    def log_theta_prime(self, v: complex) -> complex:
        """theta_1'(v)/theta_1(v) = cot v + 4 sum lam_n sin(2 n v)."""
        n = np.arange(1, len(self.lam) + 1)
        return cmath.cos(v) / cmath.sin(v) + 4.0 * complex(np.sum(self.lam * np.sin(2 * n * v)))

    def d_log_theta_prime(self, v: complex) -> complex:
        n = np.arange(1, len(self.lam) + 1)
        s = cmath.sin(v)
        return -1.0 / (s * s) + 8.0 * complex(np.sum(n * self.lam * np.cos(2 * n * v)))


def _checked(z, lat: ComplexLattice) -> tuple[complex, complex, int, int]:
    z = complex(z)
    if not _finite(z):
        raise DomainError("argument must be finite")
    red = lat._red
    z0, ma, mb = red.reduce(z)
    if abs(z0) < POLE_TOL * max(1.0, abs(red.w1)):
        raise PoleError(f"{z} is a lattice point")
    return z, z0, ma, mb


def weierstrass_zeta(z: complex, lat: ComplexLattice) -> complex:
    """Weierstrass zeta function of the lattice ``lat``."""
    _, z0, ma, mb = _checked(z, lat)
    red = lat._red
    v = math.pi * z0 / red.w1
    val = red.eta_w1 / red.w1 * z0 + math.pi / red.w1 * red.log_theta_prime(v)
    return val + ma * red.eta_w1 + mb * red.eta_w2


def weierstrass_p(z: complex, lat: ComplexLattice) -> complex:
    """Weierstrass wp function, -d zeta/dz."""
    _, z0, _, _ = _checked(z, lat)
    red = lat._red
    v = math.pi * z0 / red.w1
    return -red.eta_w1 / red.w1 - (math.pi / red.w1) ** 2 * red.d_log_theta_prime(v)


def eta_half_periods(lat: ComplexLattice) -> tuple[complex, complex]:
    """(eta1, eta2) = (2 zeta(t1/2), 2 zeta(t2/2))."""
    return 2.0 * weierstrass_zeta(lat.t1 / 2, lat), 2.0 * weierstrass_zeta(lat.t2 / 2, lat)


def eta_of(w: complex, lat: ComplexLattice) -> complex:
    """Quasi-period zeta(z + w) - zeta(z) for a lattice vector ``w``."""
    a, b = lat.coords(w)
    ia, ib = round(a), round(b)
    if abs(a - ia) > 1e-9 or abs(b - ib) > 1e-9:
        raise DomainError(f"{w} is not a lattice vector")
    e1, e2 = eta_half_periods(lat)
    return ia * e1 + ib * e2
