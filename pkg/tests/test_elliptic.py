import cmath
import math

import mpmath as mp
import numpy as np
import pytest

from twintpms.elliptic import ComplexLattice, eta_half_periods, eta_of, jacobi_theta, weierstrass_p, weierstrass_zeta
from twintpms.errors import DomainError, PoleError

A6 = cmath.exp(1j * math.pi / 3)
mp.mp.dps = 30


def theta_oracle(z, tau):
    """Direct summation of the defining series, 60 terms each side."""
    z, tau = mp.mpc(z), mp.mpf(tau)
    s = mp.mpc(0)
    for k in range(-60, 60):
        s += mp.exp(-mp.pi * (k + mp.mpf(1) / 2) ** 2 * tau + 2j * mp.pi * (k + mp.mpf(1) / 2) * (z - mp.mpf(1) / 2))
    return complex(s)


def zeta_oracle(z, t1, t2):
    """zeta from mpmath's theta_1 with nome exp(i pi t2/t1):
    zeta(z) = eta z / w + (pi / 2w) th1'(v)/th1(v), v = pi z / 2w, w = t1/2,
    eta = -(pi^2 / 12 w) th1'''(0)/th1'(0)."""
    w = mp.mpc(t1) / 2
    q = mp.exp(1j * mp.pi * mp.mpc(t2) / mp.mpc(t1))
    eta = -(mp.pi**2 / (12 * w)) * mp.jtheta(1, 0, q, 3) / mp.jtheta(1, 0, q, 1)
    v = mp.pi * mp.mpc(z) / (2 * w)
    return complex(eta * mp.mpc(z) / w + mp.pi / (2 * w) * mp.jtheta(1, v, q, 1) / mp.jtheta(1, v, q))


def wp_lattice_sum(z, t1, t2, R=300):
    """Brute-force lattice sum for wp over |m|, |n| <= R (tail ~ 1/R^2)."""
    m, n = np.meshgrid(np.arange(-R, R + 1), np.arange(-R, R + 1), indexing="ij")
    w = (m * t1 + n * t2).ravel()
    w = w[w != 0]
    return 1 / z**2 + np.sum(1 / (z - w) ** 2 - 1 / w**2)


class TestTheta:
    def test_zero_at_origin(self):
        for tau in np.linspace(0.2, 5, 9):
            assert abs(jacobi_theta(0, tau)) < 1e-15

    def test_example_zero(self):
        assert abs(jacobi_theta(0, 1.5)) < 1e-15

    def test_half_period_sign(self):
        z = 0.3 + 0.2j
        assert abs(jacobi_theta(z + 1, 1.5) + jacobi_theta(z, 1.5)) < 1e-12

    def test_reference_value(self):
        z = 0.3 + 0.2j
        ref = theta_oracle(z, 1.5)
        assert abs(jacobi_theta(z, 1.5) - ref) < 1e-13 * abs(ref)

    def test_equals_mpmath_jtheta(self):
        for z, tau in [(0.11 + 0.4j, 0.7), (-0.3 + 1.1j, 2.5)]:
            ref = complex(mp.jtheta(1, mp.pi * z, mp.exp(-mp.pi * tau)))
            assert abs(jacobi_theta(z, tau) - ref) < 1e-12 * max(1, abs(ref))

    def test_random_half_period(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            tau = rng.uniform(0.3, 4)
            z = rng.uniform(-0.5, 0.5) + 1j * rng.uniform(-tau / 2, tau / 2)
            assert abs(jacobi_theta(z + 1, tau) + jacobi_theta(z, tau)) < 1e-12 * max(1, abs(jacobi_theta(z, tau)))

    def test_quasi_period_against_series(self):
        # theta(z + i tau) compared with direct summation at the shifted point
        rng = np.random.default_rng(2)
        for _ in range(5):
            tau = rng.uniform(0.5, 2.0)
            z = complex(rng.uniform(-0.4, 0.4), rng.uniform(-0.3, 0.3))
            got = jacobi_theta(z + 1j * tau, tau)
            ref = theta_oracle(z + 1j * tau, tau)
            assert abs(got - ref) < 1e-10 * abs(ref)

    def test_shift_argument(self):
        z, tau = 0.17 + 0.05j, 1.3
        assert abs(jacobi_theta(z, tau, shift=(1, 1)) - theta_oracle(z + 1 + 1j * tau, tau)) < 1e-10 * abs(theta_oracle(z + 1 + 1j * tau, tau))

    def test_small_tau_rejected(self):
        with pytest.raises(DomainError):
            jacobi_theta(0.1, 0.01)
        with pytest.raises(DomainError):
            jacobi_theta(complex("nan"), 1.0)

    def test_vectorized(self):
        zs = np.array([0.1, 0.2 + 0.1j, -0.3j])
        vals = jacobi_theta(zs, 1.2)
        assert np.allclose(vals, [jacobi_theta(z, 1.2) for z in zs], rtol=1e-14, atol=1e-16)


class TestLattice:
    def test_orientation_fixed(self):
        lat = ComplexLattice(1j, 1)
        assert (lat.t2 / lat.t1).imag > 0

    def test_dependent_rejected(self):
        with pytest.raises(DomainError):
            ComplexLattice(1, 2)
        with pytest.raises(DomainError):
            ComplexLattice(0, 1j)


class TestZeta:
    def test_odd(self):
        lat = ComplexLattice(1, A6)
        z = 0.31 + 0.17j
        assert abs(weierstrass_zeta(-z, lat) + weierstrass_zeta(z, lat)) < 1e-13

    def test_hexagonal_identities(self):
        lat = ComplexLattice(1, A6)
        z = lambda w: weierstrass_zeta(w, lat)
        assert abs(z(0.5) + z(A6 / 2) - z((1 + A6) / 2)) < 1e-12
        assert abs(-2 * z((1 + A6) / 3) + 4 / 3 * z(0.5) + 4 / 3 * z(A6 / 2)) < 1e-12

    @pytest.mark.parametrize("t1,t2", [(1, 1j), (1, A6), (1.3 + 0.2j, 0.4 + 1.7j)])
    def test_against_mpmath_theta(self, t1, t2):
        lat = ComplexLattice(t1, t2)
        for z in (0.21 + 0.13j, -0.4 + 0.35j, 1.7 - 2.2j):
            ref = zeta_oracle(z, lat.t1, lat.t2)
            assert abs(weierstrass_zeta(z, lat) - ref) < 1e-11 * max(1, abs(ref))

    def test_quasi_periodicity(self):
        rng = np.random.default_rng(3)
        lat = ComplexLattice(1.1, 0.3 + 0.9j)
        e1, e2 = eta_half_periods(lat)
        for _ in range(100):
            z = complex(rng.uniform(-2, 2), rng.uniform(-2, 2))
            assert abs(weierstrass_zeta(z + lat.t1, lat) - weierstrass_zeta(z, lat) - e1) < 1e-10
            assert abs(weierstrass_zeta(z + lat.t2, lat) - weierstrass_zeta(z, lat) - e2) < 1e-10

    def test_eta_of(self):
        lat = ComplexLattice(1, 1j)
        e1, e2 = eta_half_periods(lat)
        assert abs(eta_of(2 - 3j, lat) - (2 * e1 - 3 * e2)) < 1e-12
        with pytest.raises(DomainError):
            eta_of(0.5, lat)

    def test_pole(self):
        lat = ComplexLattice(1, 1j)
        with pytest.raises(PoleError):
            weierstrass_zeta(1 + 1j, lat)

    @pytest.mark.parametrize("t1,t2", [(1, 1j), (1, A6)])
    def test_legendre(self, t1, t2):
        lat = ComplexLattice(t1, t2)
        e1, e2 = eta_half_periods(lat)
        assert abs(e1 * lat.t2 - e2 * lat.t1 - 2j * math.pi) < 1e-10

    def test_quasi_period_example(self):
        lat = ComplexLattice(1, 1j)
        e1, _ = eta_half_periods(lat)
        z = 0.1 + 0.1j
        assert abs(weierstrass_zeta(z + 1, lat) - weierstrass_zeta(z, lat) - e1) < 1e-12


class TestWp:
    def test_even_and_periodic(self):
        lat = ComplexLattice(1, 1j)
        z = 0.2 + 0.1j
        assert abs(weierstrass_p(-z, lat) - weierstrass_p(z, lat)) < 1e-12
        assert abs(weierstrass_p(z + 1, lat) - weierstrass_p(z, lat)) < 1e-11

    def test_reference_lattice_sum(self):
        lat = ComplexLattice(1, 1j)
        ref = wp_lattice_sum(0.25, 1, 1j)
        assert abs(weierstrass_p(0.25, lat) - ref) < 1e-4 * abs(ref)

    def test_minus_zeta_derivative(self):
        lat = ComplexLattice(1, A6)
        for z in (0.3 + 0.1j, -0.2 + 0.4j):
            h = 1e-5
            fd = -(weierstrass_zeta(z + h, lat) - weierstrass_zeta(z - h, lat)) / (2 * h)
            assert abs(weierstrass_p(z, lat) - fd) < 1e-6 * abs(fd)
