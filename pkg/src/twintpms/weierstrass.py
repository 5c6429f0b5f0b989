"""Weierstrass representations of rPD surfaces and their polysynthetic twins.

Sphere form (parameter t)::

    S_t(w) = Re int^w (1 - z^2, i(1 + z^2), 2z) R_t(z) dz,
    R_t(z) = [z (z^3 - t^3)(z^3 + t^-3)]^(-1/2)

Torus form and twins (parameter tau, stacking number delta)::

    X(w) = Re int^w (1/2 (1/G - G), i/2 (1/G + G), 1) dz

with G a product of theta quotients raised to +-2/3. The 2/3 powers are
continued along paths starting at an anchor point (z = 0 for twins, on the
imaginary axis where |G| = 1); each factor uses the principal logarithm at
the anchor, with argument -pi read as +pi.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np
from scipy import integrate, optimize, special

from .elliptic import jacobi_theta
from .errors import ContractError, DomainError, QuadratureError, SingularityError
from .quadrature import integrate_path

SQRT3 = math.sqrt(3.0)
BRANCH_TOL = 1e-10


@dataclass(frozen=True)
class RpdParam:
    """rPD parameter in sphere form (t) with optional torus-form tau."""

    t: float
    tau: float | None = None

    def __post_init__(self):
        if not self.t > 0:
            raise DomainError("t must be positive")
        if self.tau is not None and not self.tau > 0:
            raise DomainError("tau must be positive")

    def conjugate(self) -> "RpdParam":
        return RpdParam(1.0 / self.t, None if self.tau is None else 1.0 / self.tau)


# ---------------------------------------------------------------------------
# sphere form


def rt_branch_points(t: float) -> np.ndarray:
    w = np.exp(2j * np.pi * np.arange(3) / 3)
    return np.concatenate([[0.0], t * w, -w / t])


def _radicand(z, t):
    return z * (z**3 - t**3) * (z**3 + t**-3)


def rt_weight(z: complex, t: float, sheet: int = 1) -> complex:
    """One branch of R_t(z); ``sheet`` = +1 or -1 picks the sign of the
    principal square root."""
    if sheet not in (1, -1):
        raise ValueError("sheet must be +1 or -1")
    z = complex(z)
    if np.min(np.abs(rt_branch_points(t) - z)) < BRANCH_TOL:
        raise SingularityError(f"{z} is a branch point of R_t")
    return sheet / np.sqrt(complex(_radicand(z, t)))


def _continue_sqrt(vals: np.ndarray, start: complex) -> np.ndarray:
    """Square roots of ``vals`` continued along the sequence, first one
    closest to ``start``."""
    s = np.sqrt(vals.astype(complex))
    prev = start
    out = np.empty_like(s)
    for i, v in enumerate(s):
        if abs(v - prev) > abs(v + prev):
            v = -v
        out[i] = v
        prev = v
    return out


def _segment_distance(a: complex, b: complex, p: np.ndarray) -> np.ndarray:
    d = b - a
    if d == 0:
        return np.abs(p - a)
    u = np.clip(((p - a) * np.conj(d)).real / abs(d) ** 2, 0.0, 1.0)
    return np.abs(a + u * d - p)


def rpd_integrate(path: Sequence[complex], t: float, sheet: int = 1, tol: float = 1e-10) -> np.ndarray:
    """Real displacement Re int (1-z^2, i(1+z^2), 2z) R_t dz along a polyline.

    Path vertices may sit on branch points (integrable endpoint singularity);
    interior segment points may not.
    """
    pts = [complex(p) for p in path]
    if len(pts) < 2:
        return np.zeros(3)
    bp = rt_branch_points(t)
    sing = []
    for j, p in enumerate(pts):
        on = np.min(np.abs(bp - p)) < BRANCH_TOL
        if on and 0 < j < len(pts) - 1:
            raise SingularityError("path passes through a branch point")
        sing.append(2 if on else 1)
    for a, b in zip(pts[:-1], pts[1:]):
        d = _segment_distance(a, b, bp)
        inner = (np.abs(bp - a) > BRANCH_TOL) & (np.abs(bp - b) > BRANCH_TOL)
        if np.any(d[inner] < BRANCH_TOL):
            raise SingularityError("path passes through a branch point")

    # reference value for the starting sheet: a regular point near the start
    probe = pts[0] + 1e-3 * (pts[1] - pts[0]) if sing[0] > 1 else pts[0]
    start = sheet / np.sqrt(complex(_radicand(probe, t)))
    start = 1.0 / start  # continuation is done on sqrt(radicand)

    # factor index of the branch point sitting on each path vertex (or -1)
    on_bp = [int(np.argmin(np.abs(bp - p))) if s > 1 else -1 for p, s in zip(pts, sing)]

    def f(nodes):
        z = nodes.z
        diffs = z[None, :] - bp[:, None]
        for j, ib in enumerate(on_bp):
            if ib >= 0:
                sel = nodes.vertex == j
                diffs[ib, sel] = nodes.offset[sel] + (pts[j] - bp[ib])
        r = _continue_sqrt(np.prod(diffs, axis=0), start)
        R = 1.0 / r
        return np.vstack([(1 - z**2) * R, 1j * (1 + z**2) * R, 2 * z * R])

    return integrate_path(f, pts, sing, tol=tol).real


# real-axis integrals used for the catenoid unit. On (0, t) the radicand is
# negative (edge line of the bounding triangle); on (t, inf) it is positive
# (curve in a vertical mirror plane from an edge midpoint to a vertex).

_QOPTS = dict(epsabs=1e-14, epsrel=1e-13, limit=400)


def _quad(f, a, b):
    val, err = integrate.quad(f, a, b, **_QOPTS)
    if not math.isfinite(val):
        raise QuadratureError("non-finite quadrature result")
    return val


def _half_edge(t: float) -> float:
    f = lambda x: (1 + x * x) / math.sqrt(-_radicand(x, t))
    m = 0.5 * t
    a = _quad(lambda s: f(s * s) * 2 * s, 0.0, math.sqrt(m))
    b = _quad(lambda s: f(t - s * s) * 2 * s, 0.0, math.sqrt(t - m))
    return a + b


def _midpoint_to_vertex(t: float) -> tuple[float, float]:
    """(vertical rise, horizontal run) from edge midpoint z=t to vertex z=inf."""
    def part(g):
        f = lambda x: g(x) / math.sqrt(_radicand(x, t))
        a = _quad(lambda s: f(t + s * s) * 2 * s, 0.0, math.sqrt(t))
        # x = 2t / u maps (2t, inf) onto (0, 1)
        b = _quad(lambda u: f(2 * t / u) * 2 * t / (u * u), 0.0, 1.0)
        return a + b
    rise = part(lambda x: 2 * x)
    run = part(lambda x: 1 - x * x)
    return rise, run


def catenoid_inradius(t: float) -> float:
    """Inradius of the bounding triangles in representation units."""
    return _half_edge(t) / SQRT3


def catenoid_height(t: float) -> float:
    """Height of the catenoid unit over the inradius of its bounding triangles."""
    if not t > 0:
        raise DomainError("t must be positive")
    rise, _ = _midpoint_to_vertex(t)
    return rise / catenoid_inradius(t)


def _angular_integral(rho: float, t: float) -> float:
    """int_0^pi du / sqrt((a - b cos u)(c + d cos u)) as a complete elliptic
    integral (four real roots -c/d <= -1 < 1 <= a/b)."""
    r3 = rho**3
    b = 2 * r3 * t**3
    d = 2 * r3 / t**3
    if b == 0:
        return math.pi / math.sqrt((t**6) * (t**-6))
    a_b = (rho**6 + t**6) / b
    c_d = (rho**6 + t**-6) / d
    span = (a_b + 1.0) * (1.0 + c_d)
    m1 = ((r3 - t**3) ** 2 / b) * ((r3 - t**-3) ** 2 / d) / span
    return 2.0 * special.ellipkm1(m1) / math.sqrt(span * b * d)


def catenoid_area(t: float) -> float:
    """Area of one sixth of the catenoid unit in representation units."""
    f = lambda s: (1 + math.exp(2 * s)) ** 2 * _angular_integral(math.exp(s), t) * math.exp(s) / 3.0
    ls = sorted({math.log(t), -math.log(t)})
    lo, hi = ls[0] - 40.0, ls[-1] + 40.0
    # integrand decays like exp(-|s|) on both sides; tails beyond are < 1e-17
    edges = [lo] + ls + [hi]
    return sum(_quad(f, a, b) for a, b in zip(edges[:-1], edges[1:]) if b > a)


def catenoid_area_ratio(t: float) -> float:
    """Catenoid-unit area relative to the total area of its two triangles."""
    if not t > 0:
        raise DomainError("t must be positive")
    r = catenoid_inradius(t)
    return catenoid_area(t) / (SQRT3 * r * r)


@dataclass(frozen=True)
class CurveExtrema:
    t0: float
    h_max: float
    t_area_max: float
    area_max: float
    t1: float


def find_extrema(tol: float = 1e-10) -> CurveExtrema:
    """Maximisers of h and A, and the crossing A(t1) = 1."""
    rh = optimize.minimize_scalar(lambda t: -catenoid_height(t), bracket=(0.4, 0.5, 0.6),
                                  tol=tol)
    ra = optimize.minimize_scalar(lambda t: -catenoid_area_ratio(t), bracket=(0.4, 0.5, 0.6),
                                  tol=tol)
    t1 = optimize.brentq(lambda t: catenoid_area_ratio(t) - 1.0, 0.6, 1.2, xtol=1e-13)
    return CurveExtrema(float(rh.x), float(-rh.fun), float(ra.x), float(-ra.fun), float(t1))


# ---------------------------------------------------------------------------
# torus form and twins



class _GaussData:
    """Shared machinery: G = prod_k (theta((z - a_k)/s) / theta((z - b_k)/s))^e_k
    on the torus C / <s, i tau>, with theta taken on <1, i tau/s>."""

    tau: float

    @property
    def scale(self) -> float:
        raise NotImplementedError

    def factors(self) -> list[tuple[complex, complex, float]]:
        raise NotImplementedError

    @property
    def linear(self) -> complex:
        """Coefficient a of an extra factor exp(a z) in G."""
        return 0j

    @property
    def log_modulus(self) -> float:
        """log of the Lopez-Ros modulus |rho|^(2/3)."""
        return 0.0

    def centers(self) -> list[complex]:
        out = []
        for a, b, _ in self.factors():
            out += [a, b]
        return out

    def singular_points(self, reach: int = 1) -> np.ndarray:
        base = np.array(self.centers())
        shifts = [m * self.scale + 1j * n * self.tau for m in range(-reach, reach + 1)
                  for n in range(-reach, reach + 1)]
        return (base[:, None] + np.array(shifts)[None, :]).ravel()

    def locate(self, z: complex) -> tuple[complex, int, int] | None:
        """(center, m, n) with z = center + m*scale + n*i*tau, if z is singular."""
        for c in self.centers():
            w = (z - c)
            n = round(w.imag / self.tau)
            m = round((w.real) / self.scale)
            if abs(w - m * self.scale - 1j * n * self.tau) < BRANCH_TOL:
                return c, m, n
        return None


def _quotients(base: np.ndarray, off: np.ndarray, m: np.ndarray, n: np.ndarray, spec):
    """Theta quotients (rows per factor) at z = base + m*s + n*i*tau + off."""
    s = spec.scale
    ts = spec.tau / s
    rows, expo = [], []
    for a, b, e in spec.factors():
        num = jacobi_theta((base - a) / s + off / s, ts, shift=(m, n))
        den = jacobi_theta((base - b) / s + off / s, ts, shift=(m, n))
        rows.append(np.atleast_1d(num / den))
        expo.append(e)
    return np.array(rows), np.array(expo)


@dataclass(frozen=True)
class TwinSpec(_GaussData):
    """Gauss-map data (tau, delta, p_1..p_delta, rho) of a twin surface."""

    tau: float
    delta: int
    p: tuple
    rho: float = 1.0

    @property
    def anchor(self) -> complex:
        return 0j

    @property
    def scale(self) -> float:
        return float(self.delta)

    def __post_init__(self):
        object.__setattr__(self, "p", tuple(float(x) for x in self.p))
        if not self.tau > 0:
            raise DomainError("tau must be positive")
        if self.delta < 1 or len(self.p) != self.delta:
            raise DomainError("need delta >= 1 values p_k")
        if self.rho != 1.0:
            raise DomainError("the Lopez-Ros factor is fixed to 1")
        half = self.delta / 2.0
        ps = self.p
        if not (0 < ps[0] and all(a < b for a, b in zip(ps, ps[1:])) and ps[-1] < half):
            raise DomainError("need 0 < p_1 < ... < p_delta < delta/2")
        for k in range(self.delta):
            if abs(ps[k] + ps[self.delta - 1 - k] - half) > 1e-9:
                raise DomainError("need p_k + p_{delta+1-k} = delta/2")

    @classmethod
    def symmetric(cls, tau: float, delta: int, free: Sequence[float]) -> "TwinSpec":
        """Build p from its first floor(delta/2) entries (middle one for odd
        delta is delta/4)."""
        free = [float(x) for x in free]
        if len(free) != delta // 2:
            raise DomainError("need floor(delta/2) free values")
        half = delta / 2.0
        mid = [half / 2.0] if delta % 2 else []
        p = free + mid + [half - x for x in reversed(free)]
        return cls(tau, delta, tuple(p))

    @property
    def free(self) -> tuple:
        return self.p[: self.delta // 2]

    def factors(self):
        s = 0.5j * self.tau
        out = []
        for k, pk in enumerate(self.p, start=1):
            if k % 2:
                out.append((complex(pk), complex(-pk), 2.0 / 3.0))
            else:
                out.append((pk + s, -pk + s, -2.0 / 3.0))
        return out

    def zeros(self) -> list[complex]:
        """Zeros of G in the fundamental stripe (flat points with one normal)."""
        return [a if e > 0 else b for a, b, e in self.factors()]

    def poles(self) -> list[complex]:
        return [b if e > 0 else a for a, b, e in self.factors()]


@dataclass(frozen=True)
class TorusRpd(_GaussData):
    """The rPD surface S_tau in torus form, with
    G_tau = r exp(2 pi i (z - z_a) / 3) (theta(z) / theta(z - 1/2 - i tau/2))^(2/3)
    (z_a the anchor, r > 0 the Lopez-Ros modulus)."""

    tau: float

    def __post_init__(self):
        if not self.tau > 0:
            raise DomainError("tau must be positive")

    @property
    def anchor(self) -> complex:
        return 0.5j * self.tau

    @property
    def scale(self) -> float:
        return 1.0

    def factors(self):
        return [(0j, 0.5 + 0.5j * self.tau, 2.0 / 3.0)]

    @property
    def linear(self) -> complex:
        # zero and pole differ by a non-real half period; exp(2 pi i z / 3)
        # makes G^3 elliptic and restores the real-axis mirror symmetry
        return 2j * math.pi / 3.0

    @cached_property
    def log_modulus(self) -> float:
        # |rho| chosen so that the half-turn z -> c - z (c the pole) swaps the
        # two bounding triangles: |G(z) G(c - z)| = 1
        chain = np.concatenate([[self.anchor], _lead_in(self.anchor, 0.5), [0.5]])
        zero = np.zeros(len(chain))
        g = _gauss_chain(self, chain, zero.astype(complex), zero, zero, scaled=False)
        return -0.5 * math.log(abs(g[0] * g[-1]))


def _anchor_angle(q: complex) -> float:
    ang = float(np.angle(q))
    return math.pi if ang <= -math.pi + 1e-9 else ang


def _lead_in(a: complex, b: complex, n: int = 512) -> np.ndarray:
    return a + np.linspace(0.0, 1.0, n)[1:-1] * (b - a)


def _gauss_chain(spec, base, off, m, n, scaled: bool = True) -> np.ndarray:
    """G along an ordered chain whose first entry is the anchor."""
    q, e = _quotients(base, off, m, n, spec)
    ang = np.angle(q)
    ang[:, 0] = [_anchor_angle(v) for v in q[:, 0]]
    ang = np.unwrap(ang, axis=1)
    logg = (e[:, None] * (np.log(np.abs(q)) + 1j * ang)).sum(axis=0)
    if spec.linear:
        z = base + off + m * spec.scale + 1j * n * spec.tau
        logg = logg + spec.linear * (z - spec.anchor)
    if scaled:
        logg = logg + spec.log_modulus
    return np.exp(logg)


def _check_clear(points: Sequence[complex], spec, allow_ends=True):
    sp = spec.singular_points()
    for j, (a, b) in enumerate(zip(points[:-1], points[1:])):
        d = _segment_distance(a, b, sp)
        ok = np.ones_like(d, bool)
        if allow_ends:
            if j == 0:
                ok &= np.abs(sp - a) > BRANCH_TOL
            if j == len(points) - 2:
                ok &= np.abs(sp - b) > BRANCH_TOL
        if np.any(d[ok] < BRANCH_TOL):
            raise SingularityError("path meets a zero or pole of the Gauss map")


def gauss_map_twin(z: complex, spec) -> complex:
    """G(z), continued along the segment from the anchor."""
    z = complex(z)
    if np.min(np.abs(spec.singular_points() - z)) < BRANCH_TOL:
        raise SingularityError(f"{z} is a zero or pole of G")
    _check_clear([spec.anchor, z], spec, allow_ends=False)
    chain = np.concatenate([[spec.anchor], _lead_in(spec.anchor, z), [z]])
    zeros = np.zeros(len(chain))
    return complex(_gauss_chain(spec, chain, zeros.astype(complex), zeros, zeros)[-1])


def twin_integrate(path: Sequence[complex], spec, tol: float = 1e-11) -> np.ndarray:
    """Re int (1/2(1/G - G), i/2(1/G + G), 1) dz along ``path``.

    The branch of G is continued from the anchor along the straight lead-in
    to ``path[0]`` and then along the path. Path ends may sit on zeros or
    poles of G (integrable (z-q)^(-2/3) singularities).
    """
    pts = [complex(p) for p in path]
    if len(pts) < 2:
        return np.zeros(3)
    _check_clear([spec.anchor, pts[0]], spec, allow_ends=True)
    _check_clear(pts, spec, allow_ends=True)
    sing, bases, ms, ns = [], [], [], []
    for j, p in enumerate(pts):
        hit = spec.locate(p)
        if hit is not None and 0 < j < len(pts) - 1:
            raise SingularityError("path passes through a zero or pole of G")
        sing.append(3 if hit else 1)
        c, m, n = hit if hit else (p, 0, 0)
        bases.append(c)
        ms.append(m)
        ns.append(n)
    bases, ms, ns = np.array(bases), np.array(ms), np.array(ns)
    lead = np.concatenate([[spec.anchor], _lead_in(spec.anchor, pts[0])]) if pts[0] != spec.anchor \
        else np.array([spec.anchor])
    nl = len(lead)

    def f(nodes):
        v = nodes.vertex
        base = np.concatenate([lead, bases[v]])
        off = np.concatenate([np.zeros(nl, complex), nodes.offset])
        m = np.concatenate([np.zeros(nl), ms[v]])
        n = np.concatenate([np.zeros(nl), ns[v]])
        G = _gauss_chain(spec, base, off, m, n)[nl:]
        return np.vstack([0.5 * (1 / G - G), 0.5j * (1 / G + G), np.ones_like(G)])

    return integrate_path(f, pts, sing, tol=tol).real



def torus_height(tau: float) -> float:
    """Catenoid-unit height over inradius for the torus form S_tau."""
    spec = TorusRpd(tau)
    # the imaginary axis from 0 to i tau is a full triangle edge (vertex to vertex)
    edge = twin_integrate([0j, 1j * tau], spec, tol=1e-12)
    L = math.hypot(edge[0], edge[1])
    return 0.5 / (L / (2.0 * SQRT3))


def torus_tau_at_max(tol: float = 1e-10) -> float:
    """Maximiser of the torus-form height (the image of t_0)."""
    r = optimize.minimize_scalar(lambda x: -torus_height(x), bracket=(0.4, 0.45, 0.6), tol=tol)
    return float(r.x)


def tau_from_t(t: float) -> float:
    """Torus parameter with the same normalized height, on the matching branch."""
    if not t > 0:
        raise DomainError("t must be positive")
    target = catenoid_height(t)
    t0 = find_extrema().t0
    tau0 = torus_tau_at_max()
    if abs(t - t0) < 1e-9:
        return tau0
    lo, hi = (0.06, tau0) if t < t0 else (tau0, 40.0)
    f = lambda x: torus_height(x) - target
    if f(lo) * f(hi) > 0:
        raise DomainError(f"t={t} lies outside the bridged range")
    return float(optimize.brentq(f, lo, hi, xtol=1e-13))


def t_from_tau(tau: float) -> float:
    """Sphere parameter with the same normalized height, on the matching branch."""
    if not tau > 0:
        raise DomainError("tau must be positive")
    target = torus_height(tau)
    ext = find_extrema()
    tau0 = torus_tau_at_max()
    if abs(tau - tau0) < 1e-9:
        return ext.t0
    lo, hi = (1e-6, ext.t0) if tau < tau0 else (ext.t0, 1e4)
    f = lambda x: catenoid_height(x) - target
    if f(lo) * f(hi) > 0:
        raise DomainError(f"tau={tau} lies outside the bridged range")
    return float(optimize.brentq(f, lo, hi, xtol=1e-13))


# ---------------------------------------------------------------------------
# period problem


class NoSolution:
    """Returned by :func:`solve_period` when the root search finds nothing."""

    def __init__(self, reason: str = ""):
        self.reason = reason

    def __repr__(self):
        return f"NoSolution({self.reason!r})"

    def __bool__(self):
        return False


def flat_point_preimages(spec: TwinSpec) -> list[complex]:
    """Flat points in the stripe 0 < Re z < delta/2, ordered by height."""
    s = 0.5j * spec.tau
    return [complex(pk) if k % 2 else pk + s for k, pk in enumerate(spec.p, 1)]


def flat_point_images(spec: TwinSpec, tol: float = 1e-11) -> np.ndarray:
    """Horizontal images (as complex numbers) of the flat points, base point 0.

    Each flat point is reached by 0 -> i tau/4 -> p_k + i tau/4 -> flat point,
    which stays away from the real axis and the line Im z = tau/2.
    """
    q4 = 0.25j * spec.tau
    out = []
    for q in flat_point_preimages(spec):
        v = twin_integrate([0j, q4, q.real + q4, q], spec, tol=tol)
        out.append(complex(v[0], v[1]))
    return np.array(out)


def period_residual(spec: TwinSpec, tol: float = 1e-11) -> np.ndarray:
    """Failure of the flat-point images to be vertices of one equilateral
    triangle whose sides lie in the vertical symmetry planes.

    With P_k the images and D_k = P_{k+1} - P_k, the sides point along
    theta_A + j pi/3, theta_A the direction of the symmetry plane through 0
    and P_1. Entries, for k = 1..ceil((delta-1)/2) (the other half follows from
    p_k + p_{delta+1-k} = delta/2):

    * sin 3(arg D_k - theta_A)   (D_k parallel to a side), then
    * |D_k| / |D_1| - 1 for k >= 2 (all sides equal).

    For delta = 1 the vector is empty; for delta = 2, 3 it has one entry.
    The entries are invariant under the sixth-root-of-unity branch choice of G.
    """
    delta = spec.delta
    m = math.ceil((delta - 1) / 2)
    if m == 0:
        return np.zeros(0)
    P = flat_point_images(spec, tol=tol)
    theta = np.angle(P[0])
    D = np.diff(P)[:m]
    ang = np.sin(3.0 * (np.angle(D) - theta))
    lens = np.abs(D[1:]) / abs(D[0]) - 1.0
    return np.concatenate([ang, lens])


def _solve_1d(tau: float, delta: int, tol: float):
    half = delta / 2.0
    # the free value p_1 lives in (0, delta/4); the residual is positive as
    # p_1 -> 0 and the sought root is the first sign change
    upper = half / 2.0
    f = lambda x: float(period_residual(TwinSpec.symmetric(tau, delta, [x]))[0])
    grid = np.linspace(0.005 * upper, upper * (1 - 2e-3), 40)
    prev_x, prev_v = grid[0], f(grid[0])
    bracket = None
    for x in grid[1:]:
        v = f(x)
        if prev_v > 0 >= v:
            bracket = (prev_x, x)
            break
        prev_x, prev_v = x, v
    if bracket is None:
        return NoSolution(f"no sign change of the residual on (0, {upper})")
    a, b = bracket
    # damped Newton inside the bracket, bisection when a step leaves it
    x = 0.5 * (a + b)
    fa = f(a)
    for _ in range(200):
        fx = f(x)
        if abs(fx) < tol:
            break
        if (fx > 0) == (fa > 0):
            a, fa = x, fx
        else:
            b = x
        h = 1e-7
        d = (f(x + h) - f(x - h)) / (2 * h)
        step = fx / d if d != 0 else np.inf
        nx = x - step if abs(step) < 0.5 * (b - a) else x - 0.5 * step
        if not (a < nx < b) or not np.isfinite(nx):
            nx = 0.5 * (a + b)
        if abs(nx - x) < 1e-15:
            break
        x = nx
    else:
        x = optimize.brentq(f, a, b, xtol=1e-15)
    return TwinSpec.symmetric(tau, delta, [x]).p


def _solve_nd(tau: float, delta: int, tol: float):
    free0 = [(2 * k - 1) / 4.0 for k in range(1, delta // 2 + 1)]
    half = delta / 2.0

    def f(x):
        try:
            return period_residual(TwinSpec.symmetric(tau, delta, list(x)))
        except DomainError:
            return np.full(2 * math.ceil((delta - 1) / 2) - 1, 10.0)

    lo = np.full(len(free0), 1e-3)
    hi = np.full(len(free0), half / 2.0 - 1e-3)
    r = optimize.least_squares(f, free0, bounds=(lo, hi), xtol=1e-15, ftol=1e-15, gtol=1e-15,
                               max_nfev=200)
    if np.max(np.abs(r.fun)) > tol:
        return NoSolution(f"least-squares residual {np.max(np.abs(r.fun)):.3g}")
    try:
        return TwinSpec.symmetric(tau, delta, list(r.x)).p
    except DomainError as e:
        return NoSolution(str(e))


def solve_period(tau: float, delta: int, tol: float = 1e-9):
    """Symmetric solution p of the period problem, or :class:`NoSolution`."""
    if not tau > 0 or delta < 1:
        raise DomainError("need tau > 0 and delta >= 1")
    if delta == 1:
        return (0.25,)
    if delta in (2, 3):
        return _solve_1d(tau, delta, tol)
    return _solve_nd(tau, delta, tol)


def find_tau_star(delta: int = 3) -> float:
    """tau at which the root p_1 of the delta = 3 problem reaches 3/4.

    For fixed eps the root lies below 3/4 - eps exactly when the residual at
    3/4 - eps is negative; bisection on tau gives tau(eps) = tau_* + O(eps^2),
    and two values of eps are combined by Richardson extrapolation.
    """
    if delta != 3:
        raise DomainError("the coalescence value is defined for delta = 3")

    def at(eps):
        f = lambda tau: float(period_residual(TwinSpec.symmetric(tau, 3, [0.75 - eps]))[0])
        lo, hi = 2.0, 4.0
        flo = f(lo)
        while hi - lo > 1e-11:
            mid = 0.5 * (lo + hi)
            fm = f(mid)
            if (fm > 0) == (flo > 0):
                lo, flo = mid, fm
            else:
                hi = mid
        return 0.5 * (lo + hi)

    a, b = at(1e-3), at(5e-4)
    return (4.0 * b - a) / 3.0


# ---------------------------------------------------------------------------
# curve export


def write_curves_t(path, ts: Sequence[float]) -> None:
    """CSV with columns t, h, A."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "h", "A"])
        for t in ts:
            w.writerow([repr(float(t)), repr(catenoid_height(t)), repr(catenoid_area_ratio(t))])


def write_curves_tau(path, taus: Sequence[float]) -> None:
    """CSV with columns tau, h."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["tau", "h"])
        for tau in taus:
            w.writerow([repr(float(tau)), repr(torus_height(tau))])
