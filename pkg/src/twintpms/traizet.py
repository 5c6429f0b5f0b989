"""Traizet configurations: neck positions between horizontal layers, the
force on each neck, balance and non-degeneracy.

Layers are indexed cyclically mod N. Layer N is layer 0 translated by the
horizontal part t3 of the third period, so neighbours across the seam are
compared after shifting by +-t3.
"""
from __future__ import annotations

import cmath
import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .elliptic import ComplexLattice, weierstrass_zeta
from .errors import ContractError, DomainError

A6 = cmath.exp(1j * math.pi / 3)  # a = exp(i pi/3)


@dataclass(frozen=True)
class TraizetConfig:
    """Neck positions p[k][i] (layer k, neck i) with periods t1, t2 and the
    horizontal part t3 of the third period."""

    positions: tuple
    t1: complex
    t2: complex
    t3: complex = 0j
    lattice: ComplexLattice = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        pos = tuple(tuple(complex(p) for p in layer) for layer in self.positions)
        if not pos or any(len(layer) == 0 for layer in pos):
            raise DomainError("every layer needs at least one neck")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "t1", complex(self.t1))
        object.__setattr__(self, "t2", complex(self.t2))
        object.__setattr__(self, "t3", complex(self.t3))
        object.__setattr__(self, "lattice", ComplexLattice(self.t1, self.t2))

    @property
    def n_layers(self) -> int:
        return len(self.positions)

    @property
    def neck_counts(self) -> list[int]:
        return [len(layer) for layer in self.positions]

    def coords(self, z: complex) -> tuple[float, float]:
        """(x, y) with z = x t1 + y t2 for the periods as given."""
        m = np.array([[self.t1.real, self.t2.real], [self.t1.imag, self.t2.imag]])
        x, y = np.linalg.solve(m, [z.real, z.imag])
        return float(x), float(y)

    def layer(self, k: int) -> tuple[list[complex], complex]:
        """Positions of layer k (any integer) and the seam shift applied."""
        n = self.n_layers
        wraps = math.floor(k / n)
        shift = wraps * self.t3
        return [p + shift for p in self.positions[k % n]], shift

    def center(self, k: int) -> complex:
        ps, _ = self.layer(k)
        return sum(ps) / len(ps)

    def with_positions(self, positions) -> "TraizetConfig":
        return TraizetConfig(positions, self.t1, self.t2, self.t3)

    def flat(self) -> list[complex]:
        return [p for layer in self.positions for p in layer]

    def unflat(self, values: Sequence[complex]) -> tuple:
        out, j = [], 0
        for m in self.neck_counts:
            out.append(tuple(values[j:j + m]))
            j += m
        return tuple(out)

    # JSON documents mirror the fields; complex numbers as [re, im]
    def to_json(self) -> dict:
        c = lambda z: [z.real, z.imag]
        return {
            "n_layers": self.n_layers,
            "neck_counts": self.neck_counts,
            "positions": [[c(p) for p in layer] for layer in self.positions],
            "t1": c(self.t1),
            "t2": c(self.t2),
            "t3": c(self.t3),
        }

    @classmethod
    def from_json(cls, doc: dict) -> "TraizetConfig":
        z = lambda v: complex(v[0], v[1])
        pos = [[z(p) for p in layer] for layer in doc["positions"]]
        if "n_layers" in doc and doc["n_layers"] != len(pos):
            raise DomainError("n_layers does not match positions")
        if "neck_counts" in doc and list(doc["neck_counts"]) != [len(l) for l in pos]:
            raise DomainError("neck_counts does not match positions")
        return cls(pos, z(doc["t1"]), z(doc["t2"]), z(doc.get("t3", [0.0, 0.0])))


def write_config(path, cfg: TraizetConfig) -> None:
    with open(path, "w") as fh:
        json.dump(cfg.to_json(), fh, indent=2)


def read_config(path) -> TraizetConfig:
    with open(path) as fh:
        return TraizetConfig.from_json(json.load(fh))


@dataclass(frozen=True)
class ForceReport:
    forces: tuple
    max_norm: float
    balanced: bool
    tol: float = 1e-10

    def table(self) -> str:
        lines = [f"{'k':>3} {'i':>3} {'Re F':>22} {'Im F':>22} {'|F|':>12}"]
        for k, layer in enumerate(self.forces):
            for i, f in enumerate(layer):
                lines.append(f"{k:>3} {i + 1:>3} {f.real:>22.15g} {f.imag:>22.15g} {abs(f):>12.3e}")
        lines.append(f"max |F| = {self.max_norm:.3e}  balanced = {self.balanced} (tol {self.tol:g})")
        return "\n".join(lines)


def _zeta(z: complex, cfg: TraizetConfig) -> complex:
    return weierstrass_zeta(z, cfg.lattice)


def _etas(cfg: TraizetConfig) -> tuple[complex, complex]:
    return 2.0 * _zeta(cfg.t1 / 2, cfg), 2.0 * _zeta(cfg.t2 / 2, cfg)


def force(cfg: TraizetConfig, k: int, i: int) -> complex:
    """Force on neck i (0-based) between layers k and k+1."""
    n = cfg.n_layers
    k = k % n
    layer = cfg.positions[k]
    if not 0 <= i < len(layer):
        raise IndexError("neck index out of range")
    mk = len(layer)
    p = layer[i]
    total = 0j
    for j, q in enumerate(layer):
        if j != i:
            total += 2.0 / mk**2 * _zeta(p - q, cfg)
    for kk in (k - 1, k + 1):
        qs, _ = cfg.layer(kk)
        for q in qs:
            total -= _zeta(p - q, cfg) / (mk * len(qs))
    x = [cfg.coords(cfg.center(kk)) for kk in (k - 1, k, k + 1)]
    e1, e2 = _etas(cfg)
    total += ((2 * x[1][0] - x[0][0] - x[2][0]) * e1 + (2 * x[1][1] - x[0][1] - x[2][1]) * e2) / mk
    return total


def all_forces(cfg: TraizetConfig, tol: float = 1e-10) -> ForceReport:
    forces = tuple(tuple(force(cfg, k, i) for i in range(m)) for k, m in enumerate(cfg.neck_counts))
    mx = max(abs(f) for layer in forces for f in layer)
    return ForceReport(forces, float(mx), bool(mx < tol), tol)


def force_vector(cfg: TraizetConfig) -> np.ndarray:
    """Real vector (Re F, Im F) over all necks in layer order."""
    f = [force(cfg, k, i) for k, m in enumerate(cfg.neck_counts) for i in range(m)]
    return np.array([c for z in f for c in (z.real, z.imag)])


def force_jacobian(cfg: TraizetConfig, step: float | None = None) -> np.ndarray:
    """Central-difference Jacobian of positions -> forces (real coordinates)."""
    h = step if step is not None else 1e-6 * max(abs(cfg.t1), abs(cfg.t2))
    base = cfg.flat()
    cols = []
    for j in range(len(base)):
        for d in (1.0, 1j):
            up = list(base)
            dn = list(base)
            up[j] += d * h
            dn[j] -= d * h
            fu = force_vector(cfg.with_positions(cfg.unflat(up)))
            fd = force_vector(cfg.with_positions(cfg.unflat(dn)))
            cols.append((fu - fd) / (2 * h))
    return np.array(cols).T


def nondegeneracy_corank(cfg: TraizetConfig, rel_tol: float = 1e-6, balance_tol: float = 1e-10) -> int:
    """Real corank of d(forces)/d(positions); 2 means non-degenerate."""
    if not all_forces(cfg, balance_tol).balanced:
        raise ContractError("configuration is not balanced")
    s = np.linalg.svd(force_jacobian(cfg), compute_uv=False)
    return int(np.sum(s < rel_tol * s[0]))


# ---------------------------------------------------------------------------
# presets


def preset_rpd() -> TraizetConfig:
    w = (1 + A6) / 3
    return TraizetConfig([[0j], [w]], 1.0, A6, 2 * w)


def preset_h() -> TraizetConfig:
    return TraizetConfig([[0j], [(1 + A6) / 3]], 1.0, A6, 0j)


def preset_mg(t1: complex, t2: complex) -> TraizetConfig:
    """N=2, one neck per layer at 0 and t1/2, third period (t1+t2)/2."""
    t1, t2 = complex(t1), complex(t2)
    return TraizetConfig([[0j], [t1 / 2]], t1, t2, (t1 + t2) / 2)


def _screw_period(letters: list[int]) -> tuple[int, int]:
    """Smallest n >= 2 with s_{k+n} = s_k + c (mod 3) for the periodic sequence."""
    L = len(letters)
    for n in range(2, L + 1):
        c = (letters[n % L] - letters[0]) % 3
        if all((letters[(k + n) % L] - letters[k]) % 3 == c for k in range(L)):
            return n, c
    return L, 0


def sequence_config(word: str, t3_turns: int = 0) -> TraizetConfig:
    """Configuration of a periodic stacking sequence over {0, 1, 2}.

    Letter j puts the neck at j(1+a)/3, with T1=1, T2=a. The word is reduced
    to its smallest screw period n >= 2 (the sequence repeats after n layers
    up to adding c mod 3), giving N=n and t3 = (c/3 + t3_turns)(1+a). A
    single layer would make the position-to-force map trivially constant.
    """
    if not word or any(ch not in "012" for ch in word):
        raise DomainError("word must be a nonempty string over 0, 1, 2")
    s = [int(ch) for ch in word]
    if len(s) > 1 and any(s[k] == s[(k + 1) % len(s)] for k in range(len(s))):
        raise DomainError("adjacent letters (cyclically) must differ")
    if len(s) == 1:
        raise DomainError("a single letter stacks necks on top of each other")
    n, c = _screw_period(s)
    w = (1 + A6) / 3
    pos = [[s[k] * w] for k in range(n)]
    return TraizetConfig(pos, 1.0, A6, (c + 3 * t3_turns) * w)


B_OD = math.sqrt(8.0 / 9.0)


def od_config(x: float) -> TraizetConfig:
    """N=4 configuration with twin boundaries through the necks."""
    b = B_OD
    pos = [[0j], [0.5 + 0j], [x + 0.5 + 0.5j * b], [x + 0.5j * b]]
    return TraizetConfig(pos, 1.0, 1j * b, 0j)


def solve_od_roots(resolution: float = 1e-3, tol: float = 1e-10) -> list[float]:
    """Roots x in [0, 1) of F_{0,1}(x) = 0 for :func:`od_config`.

    F_{0,1} is real for real x. Sign scan on a grid of spacing
    ``resolution``, grid points where F vanishes to ``tol`` count as roots,
    sign changes are refined by bisection.
    """
    f = lambda x: force(od_config(x), 0, 0)
    xs = np.arange(0.0, 1.0, resolution)
    vals = [f(x) for x in xs]
    if max(abs(v.imag) for v in vals) > 1e-8 * max(1.0, max(abs(v) for v in vals)):
        raise ContractError("F_{0,1} is expected to be real")
    vals = [v.real for v in vals]
    roots: list[float] = []
    for j, x in enumerate(xs):
        if abs(vals[j]) < tol:
            roots.append(float(x))
            continue
        x2 = xs[j] + resolution
        v2 = vals[j + 1] if j + 1 < len(xs) else vals[0]
        if abs(v2) < tol:
            continue
        if vals[j] * v2 < 0:
            a, b, fa = x, x2, vals[j]
            while b - a > tol:
                m = 0.5 * (a + b)
                fm = f(m).real
                if (fm > 0) == (fa > 0):
                    a, fa = m, fm
                else:
                    b = m
            r = 0.5 * (a + b)
            roots.append(float(r % 1.0))
    out: list[float] = []
    for r in sorted(roots):
        if not out or abs(r - out[-1]) > 10 * tol:
            out.append(r)
    return out
