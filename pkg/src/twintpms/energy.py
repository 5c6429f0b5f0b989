"""Discrete area and Willmore energies and a constrained minimizer.

Willmore energy: E = sum_v A_v H_v^2 with H_v = (K_v . d_v) / (2 A_v), K_v
the area gradient at v (cotangent mean-curvature vector), A_v the
barycentric area and d_v the unit motion direction of v: the area-weighted
vertex normal projected onto the directions the vertex may move in (its
plane, or the line where two planes meet). Only the normal part of K_v is
used, as in the usual star-based mean curvature; the tangential part of K_v
measures triangle shape, not bending. On a free boundary d_v lies in the
plane, so a surface meeting its plane at a right angle costs nothing there.
Vertices that cannot move are left out.

The minimizer moves each free vertex along d_v only, so plane constraints
hold to rounding error throughout; the tangential placement of vertices is
left to :func:`vertex_average`.
"""
from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field

import jax
import jax.numpy as jnp
import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .errors import DomainError
from .mesh import TriangleMesh, refine

jax.config.update("jax_enable_x64", True)

DEGENERATE_AREA = 1e-14
LM_FLOOR = 1e-9  # smallest relative damping; keeps near-null modes (rigid slides) out of the step


# ---------------------------------------------------------------------------
# area (plain numpy)


def _corner_grads(c: np.ndarray):
    """Face areas and per-corner area gradients for corners c (F, 3, 3)."""
    n = np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0])
    nn = np.linalg.norm(n, axis=1)
    ok = nn > 2 * DEGENERATE_AREA
    nhat = np.zeros_like(n)
    nhat[ok] = n[ok] / nn[ok, None]
    g = np.stack([0.5 * np.cross(nhat, c[:, (i + 2) % 3] - c[:, (i + 1) % 3]) for i in range(3)], axis=1)
    return 0.5 * nn, g, ~ok


def area(mesh: TriangleMesh) -> float:
    return float(mesh.face_areas().sum())


def area_gradient(mesh: TriangleMesh, return_flag: bool = False):
    """Per-vertex gradient of the total area (zero contribution from
    degenerate faces; ``return_flag`` also returns whether any occurred)."""
    a, g, bad = _corner_grads(mesh.corners())
    out = np.zeros_like(mesh.vertices)
    np.add.at(out, mesh.faces.ravel(), g.reshape(-1, 3))
    return (out, bool(bad.any())) if return_flag else out


# ---------------------------------------------------------------------------
# Willmore (JAX)


def _jax_corner_grads(c):
    n = jnp.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0])
    nn2 = jnp.sum(n * n, axis=1)
    ok = nn2 > (2 * DEGENERATE_AREA) ** 2
    nn = jnp.sqrt(jnp.where(ok, nn2, 1.0))
    nhat = jnp.where(ok[:, None], n / nn[:, None], 0.0)
    g = jnp.stack([0.5 * jnp.cross(nhat, c[:, (i + 2) % 3] - c[:, (i + 1) % 3]) for i in range(3)], axis=1)
    return jnp.where(ok, 0.5 * nn, 0.0), g


def _geometry(x, faces, offs, n):
    """Curvature vectors K, barycentric areas, area-weighted vertex normals
    and face areas."""
    c = x[faces] + offs
    a, g = _jax_corner_grads(c)
    fn = jnp.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0])
    K = jnp.zeros((n, 3)).at[faces.ravel()].add(g.reshape(-1, 3))
    Av = jnp.zeros(n).at[faces.ravel()].add(jnp.repeat(a / 3.0, 3))
    N = jnp.zeros((n, 3)).at[faces.ravel()].add(jnp.repeat(fn, 3, axis=0))
    return K, Av, N, a


def _directions(N, act, B, dim):
    """Unit motion direction per active vertex: the vertex normal projected
    onto the allowed subspace, or the line direction when only one is left."""
    nb = jnp.einsum("vij,vj->vi", B, jnp.einsum("vji,vj->vi", B, N[act]))
    nn = jnp.sqrt(jnp.maximum(jnp.sum(nb * nb, axis=1), 1e-300))
    return jnp.where((dim == 1)[:, None], B[:, :, 0], nb / nn[:, None])


def _residuals(K, Av, act, dirs, scaled: bool):
    kd = jnp.sum(K[act] * dirs, axis=1)
    if not scaled:
        return kd
    A = Av[act]
    safe = jnp.where(A > 0, A, 1.0)
    return jnp.where(A > 0, kd / (2.0 * jnp.sqrt(safe)), 0.0)


def _active_bases(mesh: TriangleMesh):
    bases = mesh.motion_bases()
    act = np.array([v for v, B in enumerate(bases) if B.shape[1]], np.int64)
    Bp = np.zeros((len(act), 3, 3))
    dim = np.zeros(len(act), np.int64)
    for i, v in enumerate(act):
        d = bases[v].shape[1]
        Bp[i, :, :d] = bases[v]
        dim[i] = d
    return act, Bp, dim


class _Problem:
    """Jitted energies and the normal-motion linearization for one topology.

    Each movable vertex v gets one unknown s_v: x_v + s_v d_v with the motion
    direction d_v from :func:`_directions` frozen at the current iterate. The
    residual r_v is the component of K_v along the direction recomputed at
    the moved point, divided by 2 sqrt(A_v) for Willmore, so sum r_v^2 is
    exactly the Willmore energy there and J^T r its gradient in s.
    """

    def __init__(self, mesh: TriangleMesh):
        self.mesh = mesh
        n = mesh.n_vertices
        self.faces = mesh.faces.copy()
        act, Bp, dim = _active_bases(mesh)
        self.active = act
        self.n = len(act)
        faces = jnp.asarray(self.faces)
        offs = jnp.asarray(mesh.corner_offsets())
        jact, jB, jdim = jnp.asarray(act), jnp.asarray(Bp), jnp.asarray(dim)

        def geo(x):
            return _geometry(x, faces, offs, n)

        def dirs(x):
            return _directions(geo(x)[2], jact, jB, jdim)

        def willmore_fn(x):
            K, Av, N, _ = geo(x)
            r = _residuals(K, Av, jact, _directions(N, jact, jB, jdim), True)
            return jnp.sum(r * r)

        def area_fn(x):
            return jnp.sum(geo(x)[3])

        def moved(s, x, d):
            return x.at[jact].add(s[:, None] * d)

        def shrink(x0, x1):
            # smallest ratio (new normal . old normal) / |old normal|^2 over faces
            c0 = x0[faces] + offs
            c1 = x1[faces] + offs
            n0 = jnp.cross(c0[:, 1] - c0[:, 0], c0[:, 2] - c0[:, 0])
            n1 = jnp.cross(c1[:, 1] - c1[:, 0], c1[:, 2] - c1[:, 0])
            return jnp.min(jnp.sum(n0 * n1, axis=1) / jnp.maximum(jnp.sum(n0 * n0, axis=1), 1e-300))

        def resid(s, x, d, scaled):
            # true residuals at the moved point (normals recomputed there)
            K, Av, N, _ = geo(moved(s, x, d))
            return _residuals(K, Av, jact, _directions(N, jact, jB, jdim), scaled)

        self.dirs = jax.jit(dirs)
        self.moved = jax.jit(moved)
        self.shrink = jax.jit(shrink)
        self.willmore = jax.jit(willmore_fn)
        self.willmore_grad = jax.jit(jax.grad(willmore_fn))
        self.area = jax.jit(area_fn)
        self.resid = jax.jit(resid, static_argnums=3)
        self._jvps = jax.jit(
            jax.vmap(lambda t, x, d, sc: jax.jvp(lambda s: resid(s, x, d, sc), (jnp.zeros(t.shape[0]),), (t,))[1], in_axes=(0, None, None, None)),
            static_argnums=3,
        )
        self._pattern = None

    def energy(self, x, kind: str) -> float:
        f = self.willmore if kind == "willmore" else self.area
        return float(f(jnp.asarray(x)))

    # -- sparse Jacobian by distance-2 colouring --------------------------
    def _build_pattern(self):
        n = self.mesh.n_vertices
        star = [set() for _ in range(n)]
        for tri in self.faces:
            for a in tri:
                star[a].update(int(b) for b in tri)
        slot = -np.ones(n, np.int64)
        slot[self.active] = np.arange(self.n)
        colour = -np.ones(n, np.int64)
        for u in sorted(self.active, key=lambda u: -len(star[u])):
            banned = {int(colour[x]) for w in star[u] for x in star[w] if colour[x] >= 0}
            c = 0
            while c in banned:
                c += 1
            colour[u] = c
        nc = int(colour.max()) + 1 if self.n else 0
        tangents = np.zeros((nc, self.n))
        tangents[colour[self.active], np.arange(self.n)] = 1.0
        rows, cols, srcs = [], [], []
        for row, w in enumerate(self.active):
            for u in star[w]:
                if slot[u] >= 0:
                    rows.append(row)
                    cols.append(slot[u])
                    srcs.append(colour[u])
        self._pattern = (jnp.asarray(tangents), np.array(rows), np.array(cols), np.array(srcs))

    def jacobian(self, x, d, scaled: bool) -> sp.csr_matrix:
        if self._pattern is None:
            self._build_pattern()
        T, rows, cols, srcs = self._pattern
        D = np.asarray(self._jvps(T, jnp.asarray(x), d, scaled))
        return sp.csr_matrix((D[srcs, rows], (rows, cols)), shape=(self.n, self.n))


_CACHE: dict = {}


def _problem(mesh: TriangleMesh) -> _Problem:
    """Compiled problem for the mesh topology and constraint layout (the
    positions are arguments, so moving vertices reuses the compilation)."""
    act, Bp, dim = _active_bases(mesh)
    key = (
        mesh.faces.tobytes(),
        mesh.corner_offsets().round(12).tobytes(),
        act.tobytes(),
        Bp.round(12).tobytes(),
    )
    key = hash(key)
    if key not in _CACHE:
        if len(_CACHE) >= 8:
            _CACHE.pop(next(iter(_CACHE)))
        _CACHE[key] = _Problem(mesh)
    return _CACHE[key]


def willmore(mesh: TriangleMesh) -> float:
    if mesh.n_faces == 0:
        return 0.0
    return _problem(mesh).energy(mesh.vertices, "willmore")


def willmore_gradient(mesh: TriangleMesh) -> np.ndarray:
    """dE/dx per vertex (3-vectors). The constraint projections are held
    fixed; vertices that cannot move get zero rows."""
    g = np.array(_problem(mesh).willmore_grad(jnp.asarray(mesh.vertices)))
    g[mesh.fixed_mask()] = 0.0
    return g


# ---------------------------------------------------------------------------
# minimizer


@dataclass
class EvolveSettings:
    energy: str = "willmore"  # "area" | "willmore"
    abs_energy_tol: float = 1e-10
    rel_decrease_tol: float = 1e-6
    max_iters: int = 200
    refine_schedule: list = field(default_factory=list)  # (iteration, "refine")
    max_halvings: int = 60
    armijo: float = 1e-4
    quasi_newton: bool = True
    grad_tol: float = 1e-9  # area mode: stop when the normal gradient is this small
    window: int = 50
    time_limit: float | None = None  # seconds; exceeding it is reported as a stall
    min_face_ratio: float = 0.2  # reject steps that flip a face or shrink it below this fraction

    def __post_init__(self):
        if self.energy not in ("area", "willmore"):
            raise DomainError("energy must be 'area' or 'willmore'")
        if min(self.abs_energy_tol, self.rel_decrease_tol, self.grad_tol) <= 0 or self.max_iters < 1:
            raise DomainError("tolerances must be positive and max_iters >= 1")
        if not 0 <= self.min_face_ratio < 1:
            raise DomainError("min_face_ratio must lie in [0, 1)")

    @property
    def method(self) -> str:
        return "newton" if self.quasi_newton else "gradient"


@dataclass
class EnergyTrace:
    energy: list = field(default_factory=list)
    grad_norm: list = field(default_factory=list)
    step: list = field(default_factory=list)
    status: str = "running"  # converged | stalled | max_iters
    reason: str = ""
    degenerate: bool = False

    level: list = field(default_factory=list)  # index of the monotone segment
    _current: int = 0

    def level_up(self) -> None:
        self._current += 1

    def extend(self, other: "EnergyTrace") -> None:
        """Append another trace; each of its levels becomes a new level here."""
        if not other.energy:
            return
        base = self._current + 1 if self.energy else 0
        for e, g, st, lv in zip(other.energy, other.grad_norm, other.step, other.level):
            self._current = base + lv
            self.record(e, g, st)
        self.status, self.reason = other.status, other.reason
        self.degenerate = self.degenerate or other.degenerate

    def record(self, e: float, g: float, s: float) -> None:
        if not (math.isfinite(e) and math.isfinite(g) and math.isfinite(s)):
            raise FloatingPointError("non-finite value in energy trace")
        self.energy.append(float(e))
        self.grad_norm.append(float(g))
        self.step.append(float(s))
        self.level.append(self._current)

    @property
    def final_energy(self) -> float:
        return self.energy[-1] if self.energy else float("nan")

    def is_monotone(self) -> bool:
        """Non-increasing within each refinement level."""
        return all(b <= a for a, b, la, lb in zip(self.energy, self.energy[1:], self.level, self.level[1:]) if la == lb)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iter", "energy", "grad_norm", "step", "level"])
            for i, row in enumerate(zip(self.energy, self.grad_norm, self.step)):
                w.writerow([i, *("%.17g" % x for x in row), self.level[i]])

    @classmethod
    def from_csv(cls, path) -> "EnergyTrace":
        tr = cls()
        with open(path) as fh:
            for row in csv.DictReader(fh):
                tr._current = int(row.get("level", 0))
                tr.record(float(row["energy"]), float(row["grad_norm"]), float(row["step"]))
        return tr


def minimize(mesh: TriangleMesh, settings: EvolveSettings | None = None) -> tuple[TriangleMesh, EnergyTrace]:
    """Constrained descent of area or Willmore energy by normal motion.

    With ``quasi_newton`` (default) each iteration linearizes the normal
    residuals (Willmore: r_v = K_v . d_v / 2 sqrt(A_v); area: K_v . d_v) and
    takes a Levenberg-Marquardt step; otherwise it takes a steepest-descent
    step along the normals. A step is accepted only if the energy drops, so
    the trace is monotone within each refinement level.
    """
    s = settings or EvolveSettings()
    trace = EnergyTrace()
    schedule = sorted(it for it, action in s.refine_schedule if action == "refine" and it < s.max_iters)
    it = 0
    t_start = time.monotonic()
    while True:
        stop = schedule[0] if schedule else s.max_iters
        mesh, used, status = _run(mesh, s, trace, max(stop - it, 0), t_start)
        it += used
        # refine at the scheduled iteration, or earlier once the level converged
        if schedule and status != "stalled":
            it = max(it, schedule.pop(0))
            mesh = refine(mesh)
            trace.level_up()
            continue
        trace.status = status
        return mesh, trace


def _run(mesh, s: EvolveSettings, trace: EnergyTrace, budget: int, t_start: float):
    p = _problem(mesh)
    x = jnp.asarray(mesh.vertices)
    scaled = s.energy == "willmore"
    e = p.energy(x, s.energy)
    d = p.dirs(x)
    r = np.asarray(p.resid(jnp.zeros(p.n), x, d, scaled))
    gnorm = float(np.linalg.norm(r))
    trace.record(e, gnorm, 0.0)
    if p.n == 0:
        return mesh, 0, "converged"
    start = len(trace.energy) - 1
    lam, t = 1e-3, 1.0
    status = "max_iters"
    used = 0
    for used in range(1, budget + 1):
        if _converged(s, e, gnorm):
            status, used = "converged", used - 1
            break
        if s.time_limit is not None and time.monotonic() - t_start > s.time_limit:
            trace.reason = "time limit reached"
            status, used = "stalled", used - 1
            break
        if s.method == "newton":
            x_new, e_new, lam, ok = _lm_step(p, x, d, r, e, lam, s, scaled)
        else:
            x_new, e_new, t, ok = _descent_step(p, x, d, r, e, t, s, scaled)
        if not ok:
            trace.reason = "no energy decrease after %d step reductions" % s.max_halvings
            status, used = "stalled", used - 1
            break
        step = float(jnp.max(jnp.linalg.norm(x_new - x, axis=1)))
        x, e = x_new, e_new
        d = p.dirs(x)
        r = np.asarray(p.resid(jnp.zeros(p.n), x, d, scaled))
        gnorm = float(np.linalg.norm(r))
        trace.record(e, gnorm, step)
        k = len(trace.energy) - 1
        if k - start >= s.window and not _converged(s, e, gnorm):
            old = trace.energy[k - s.window]
            if old - e <= s.rel_decrease_tol * abs(old):
                trace.reason = "relative decrease below %g over %d iterations" % (s.rel_decrease_tol, s.window)
                # a flat area trace means the area has settled
                status = "converged" if s.energy == "area" else "stalled"
                break
    else:
        if _converged(s, e, gnorm):
            status = "converged"
    out = mesh.copy()
    out.vertices = np.array(x)
    out.project_constraints()
    areas = out.face_areas()
    if areas.size and areas.min() < DEGENERATE_AREA:
        trace.degenerate = True
    return out, used, status


def _converged(s: EvolveSettings, e: float, gnorm: float) -> bool:
    if s.energy == "willmore":
        return e < s.abs_energy_tol
    return gnorm < s.grad_tol


def _lm_step(p: _Problem, x, d, r, e, lam, s: EvolveSettings, scaled: bool):
    J = p.jacobian(x, d, scaled)
    JtJ = (J.T @ J).tocsc()
    g = J.T @ r
    mu0 = max(float(JtJ.diagonal().mean()), 1e-300)
    eye = sp.identity(p.n, format="csc")
    for _ in range(s.max_halvings):
        try:
            step = splu((JtJ + (lam * mu0) * eye).tocsc(), permc_spec="COLAMD").solve(-g)
        except RuntimeError:
            lam *= 10.0
            continue
        x_new = p.moved(jnp.asarray(step), x, d)
        if float(p.shrink(x, x_new)) < s.min_face_ratio:
            lam *= 4.0
            continue
        e_new = p.energy(x_new, s.energy)
        if math.isfinite(e_new) and e_new < e:
            return x_new, e_new, max(lam / 3.0, LM_FLOOR), True
        lam *= 4.0
    return x, e, lam, False


def _descent_step(p: _Problem, x, d, r, e, t, s: EvolveSettings, scaled: bool):
    """Backtracking step along minus the normal gradient."""
    if scaled:
        g = np.asarray(p.willmore_grad(x))[p.active]
        gs = np.sum(g * np.asarray(d), axis=1)
    else:
        gs = r
    t = min(2.0 * t, 1e6)
    slope = -float(gs @ gs)
    for _ in range(s.max_halvings):
        x_new = p.moved(jnp.asarray(-t * gs), x, d)
        if float(p.shrink(x, x_new)) < s.min_face_ratio:
            t *= 0.5
            continue
        e_new = p.energy(x_new, s.energy)
        if math.isfinite(e_new) and e_new <= e + s.armijo * t * slope and e_new < e:
            return x_new, e_new, t, True
        t *= 0.5
    return x, e, t, False


def vertex_average(mesh: TriangleMesh, passes: int = 1, weight: float = 1.0) -> TriangleMesh:
    """Tangential mesh regularization: move each movable vertex toward the
    area-weighted centroid of its faces, keeping only the part of the move
    that is tangent to the surface and allowed by its constraints."""
    out = mesh.copy()
    bases = out.motion_bases()
    P = np.stack([B @ B.T for B in bases]) if out.n_vertices else np.zeros((0, 3, 3))
    for _ in range(passes):
        c = out.corners()
        a = 0.5 * np.linalg.norm(np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0]), axis=1)
        fn = np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0])
        num = np.zeros_like(out.vertices)
        den = np.zeros(out.n_vertices)
        nrm = np.zeros_like(out.vertices)
        for j in range(3):
            # face centroid seen from corner j's own frame
            rel = c.mean(axis=1) - c[:, j]
            np.add.at(num, out.faces[:, j], a[:, None] * rel)
            np.add.at(den, out.faces[:, j], a)
            np.add.at(nrm, out.faces[:, j], fn)
        delta = num / np.maximum(den, 1e-300)[:, None]
        nn = np.linalg.norm(nrm, axis=1)
        nhat = nrm / np.maximum(nn, 1e-300)[:, None]
        delta -= np.sum(delta * nhat, axis=1)[:, None] * nhat
        delta = np.einsum("vij,vj->vi", P, delta)
        out.vertices = out.vertices + weight * delta
    out.project_constraints()
    return out
