"""End-to-end reconstructions: rPD twins, G twins, the G to D stretch
family, tetragonal neck probes, flat-point heights and mesh deviation.

Every evolution follows the same loop: at each refinement level, alternate
a Willmore minimization with a light tangential smoothing until the energy
drops below the threshold or the cycle budget runs out. Energies are scale
free, so one threshold serves all models.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from . import mesh as M
from .energy import EnergyTrace, EvolveSettings, minimize, vertex_average, willmore
from .errors import ContractError, DomainError
from .manifest import RunManifest
from .mesh import PlaneConstraint, SymmetryOp, TriangleMesh

THRESHOLD = 1e-8  # Willmore energy below which a run counts as converged
CYCLE_ITERS = 30  # minimizer iterations per cycle
PLATEAU = 0.01  # final-level cycles improving less than this fraction signal a stall


@dataclass
class TwinRunResult:
    mesh: TriangleMesh
    final_energy: float
    p_estimates: list
    status: str  # converged | stalled | degenerate
    trace: EnergyTrace = field(default_factory=EnergyTrace)
    planes: list = field(default_factory=list)  # reflection planes (twin boundaries first)
    symmetries: list = field(default_factory=list)  # motions mapping the result to itself
    params: dict = field(default_factory=dict)
    elapsed: float = 0.0

    def __post_init__(self):
        self.p_estimates = sorted(float(p) for p in self.p_estimates)
        if self.status not in ("converged", "stalled", "degenerate"):
            raise DomainError("unknown status %r" % self.status)
        if self.status == "converged" and not self.final_energy < self.params.get("threshold", THRESHOLD):
            raise ContractError("converged run above the energy threshold")


@dataclass
class DeviationField:
    """Signed distance of each mesh vertex to a reference surface."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, float)

    @property
    def max_abs(self) -> float:
        return float(np.max(np.abs(self.values))) if self.values.size else 0.0

    def binned(self, coord: np.ndarray, n_bins: int = 5, stat: str = "max") -> tuple[np.ndarray, np.ndarray]:
        """Statistic of |deviation| over equal-width bins of ``coord``
        (e.g. distance to the nearest twin boundary). Returns (edges, values)."""
        coord = np.asarray(coord, float)
        edges = np.linspace(coord.min(), coord.max() + 1e-12, n_bins + 1)
        f = np.max if stat == "max" else np.mean
        a = np.abs(self.values)
        vals = np.array([f(a[(coord >= lo) & (coord < hi)]) if np.any((coord >= lo) & (coord < hi)) else np.nan for lo, hi in zip(edges[:-1], edges[1:])])
        return edges, vals


# ---------------------------------------------------------------------------
# evolution loop


def _settings(energy: str, threshold: float, time_left):
    return EvolveSettings(energy=energy, max_iters=CYCLE_ITERS, abs_energy_tol=threshold * 1e-4, time_limit=time_left)


def evolve(mesh: TriangleMesh, levels: int = 0, cycles: int = 6, threshold: float = THRESHOLD,
           trace: EnergyTrace | None = None, time_limit: float | None = None, smooth_first: bool = False):
    """Willmore evolution with ``levels`` refinements after the first pass.

    Each level runs up to ``cycles`` rounds of [minimize; vertex_average].
    Levels before the last move on once converged or out of cycles; the last
    level also stops when a cycle improves the best energy by less than
    ``PLATEAU``. Minimization aims for ``1e-4 * threshold`` so the reported
    energy sits well below the threshold. Returns (mesh, trace, status).
    """
    trace = trace if trace is not None else EnergyTrace()
    t0 = time.monotonic()
    status = "stalled"
    for lev in range(levels + 1):
        if lev:
            mesh = M.refine(mesh)
        last = lev == levels
        best = math.inf
        for cyc in range(cycles):
            if smooth_first:
                mesh = vertex_average(mesh, 3)
            left = None if time_limit is None else max(time_limit - (time.monotonic() - t0), 1e-3)
            mesh, tr = minimize(mesh, _settings("willmore", threshold, left))
            trace.extend(tr)
            e = tr.final_energy
            if e < threshold * 1e-4 or (tr.status == "converged"):
                status = "converged"
                break
            if time_limit is not None and time.monotonic() - t0 > time_limit:
                trace.reason = "time limit reached"
                return mesh, trace, ("converged" if e < threshold else "stalled")
            if last and best < math.inf and e > (1 - PLATEAU) * best:
                status = "stalled"
                trace.reason = "energy plateau at %.3e" % e
                break
            best = min(best, e)
            status = "stalled"
            if not smooth_first:
                mesh = vertex_average(mesh, 2)
    e = trace.final_energy
    if e < threshold:
        status = "converged"
    if trace.degenerate and status != "converged":
        status = "degenerate"
    trace.status = status
    return mesh, trace, status


def area_relax(mesh: TriangleMesh, cycles: int = 10, trace: EnergyTrace | None = None) -> TriangleMesh:
    """Area descent in rounds of [vertex_average; minimize(area)]."""
    for _ in range(cycles):
        mesh = vertex_average(mesh, 3)
        mesh, tr = minimize(mesh, EvolveSettings(energy="area", max_iters=20, grad_tol=1e-10))
        if trace is not None:
            trace.extend(tr)
    return mesh


# ---------------------------------------------------------------------------
# rPD twins


def catenoid_unit(t: float, refinements: int, cycles: int = 10) -> TriangleMesh:
    """Area-minimized catenoid unit after ``refinements`` refinements."""
    m = M.build_catenoid_unit_boundary(t)
    for _ in range(refinements):
        m = area_relax(M.refine(m), cycles)
    return m


def _unit_height(unit: TriangleMesh) -> float:
    return float(unit.vertices[:, 2].max() - unit.vertices[:, 2].min())


def rpd_slab(t: float, delta: int, refinements: int, unit: TriangleMesh | None = None):
    """Unsliced slab of delta+1 catenoid units and its centre height."""
    unit = unit if unit is not None else catenoid_unit(t, refinements)
    h = _unit_height(unit)
    a, b = M.catenoid_unit_rotations(h)
    slab = M.generate_slab(unit, a, b, delta)
    zc = 0.5 * (slab.vertices[:, 2].min() + slab.vertices[:, 2].max())
    return slab, zc, h


def _central_half_turn(zc: float, h: float, delta: int) -> SymmetryOp:
    """The half-turn swapping the two ends of the slab: the conjugate of a
    or b whose (horizontal) axis sits at the centre height."""
    a, b = M.catenoid_unit_rotations(h)
    for g in M.slab_transforms(a, b, delta):
        for r in (a, b):
            op = g @ r @ _inverse(g)
            if abs(op.linear[2, 2] + 1) < 1e-9 and abs(op.translation[2] / 2 - zc) < 1e-9 * max(1.0, h):
                return op
    raise ContractError("no central half-turn found")


def _inverse(op: SymmetryOp) -> SymmetryOp:
    L = op.linear.T
    return SymmetryOp(L, -L @ op.translation)


def rpd_twin(t: float, delta: int, refinements: int = 4, coarse: int = 1, cycles: int = 6,
             threshold: float = THRESHOLD, time_limit: float | None = None) -> TwinRunResult:
    """rPD twin: prepare the catenoid unit, generate a slab of delta+1
    units, slice it at lattice distance delta, evolve by Willmore energy.

    The unit is area-minimized at ``coarse`` refinements; the sliced slab is
    then evolved level by level up to ``refinements``.
    """
    if not isinstance(delta, (int, np.integer)) or delta < 1 or delta % 2 == 0:
        raise DomainError("delta must be an odd integer >= 1")
    if refinements < coarse or coarse < 0:
        raise DomainError("need 0 <= coarse <= refinements")
    t0 = time.monotonic()
    unit = catenoid_unit(t, coarse)
    slab, zc, h = rpd_slab(t, delta, coarse, unit)
    lo = PlaneConstraint((0, 0, 1), zc - delta * h / 2, "slicing")
    hi = PlaneConstraint((0, 0, 1), zc + delta * h / 2, "slicing")
    s = M.slice(slab, lo, 1)
    s = M.slice(s, hi, -1)
    sym = _central_half_turn(zc, h, delta)
    s, trace, status = evolve(s, refinements - coarse, cycles, threshold, time_limit=time_limit)
    res = TwinRunResult(
        s,
        trace.final_energy,
        _flat_heights(s, lo, hi, delta),
        status,
        trace,
        [lo, hi, *M.PRISM_PLANES],
        [sym],
        dict(kind="rpd", t=t, delta=int(delta), refinements=refinements, coarse=coarse, threshold=threshold, h=h),
        time.monotonic() - t0,
    )
    return res


def _flat_heights(mesh: TriangleMesh, lo: PlaneConstraint, hi: PlaneConstraint, delta: int) -> list:
    if "flat" not in mesh.marks or not mesh.marks["flat"].any():
        raise ContractError("mesh has no marked flat points")
    z = mesh.vertices[mesh.marks["flat"], 2]
    p = (z - lo.offset) / (hi.offset - lo.offset) * (delta / 2.0)
    return sorted(float(x) for x in p)


def normalized_flat_heights(result: TwinRunResult, delta: int | None = None) -> list:
    """Flat-point heights mapped so the twin boundaries sit at 0 and delta/2."""
    delta = result.params.get("delta") if delta is None else delta
    if delta is None or len(result.planes) < 2:
        raise ContractError("result carries no twin boundaries")
    return _flat_heights(result.mesh, result.planes[0], result.planes[1], int(delta))


def symmetry_defect(mesh: TriangleMesh, op: SymmetryOp) -> float:
    """Largest distance from op(vertex) to the nearest vertex (modulo the
    cell when the mesh is periodic on an axis-aligned cell)."""
    pb = _periodic_box(mesh) if mesh.cell is not None else None
    if pb is not None:
        box, wrap = pb
        d, _ = cKDTree(wrap(mesh.vertices), boxsize=box).query(wrap(op.apply(mesh.vertices)))
        return float(d.max()) if d.size else 0.0
    X = M.unwrapped(mesh).vertices if mesh.cell is not None else mesh.vertices
    d, _ = cKDTree(X).query(op.apply(X))
    return float(d.max()) if d.size else 0.0


def reflection_defect(mesh: TriangleMesh, plane: PlaneConstraint, tol: float = 1e-9) -> float:
    """Vertices lying on ``plane`` must be fixed by the mirror through it;
    returns the largest displacement (zero for an exact plane contact)."""
    on = np.abs(plane.distance(mesh.vertices)) < max(tol, 1e-6)
    if not on.any():
        return 0.0
    X = mesh.vertices[on]
    return float(np.max(np.linalg.norm(SymmetryOp.reflection(plane).apply(X) - X, axis=1)))


# ---------------------------------------------------------------------------
# G, D and the stretch family

_ORTHO_SUPERCELL = np.array([[0, 0, 1], [0, -1, 0], [3, 1, 0]])
# images of the cubic axes in the monoclinic model frame (columns), for cubic side 2
_CUBIC_AXES = 2.0 * np.array([[0, 1, 0], [1 / M.SQRT2, 0, 1 / M.SQRT2], [1 / M.SQRT2, 0, -1 / M.SQRT2]]).T
G_211 = 2.0 / math.sqrt(6.0)  # (211) spacing of the model, the unit of the G-twin lattice distance


def g_surface(refinements: int = 3, c: float = 1.0, triclinic: bool = False, cycles: int = 4,
              threshold: float = THRESHOLD, time_limit: float | None = None):
    """Evolve the cubic-polyhedral start (monoclinic cell, or the triclinic
    two-plane cell) to a periodic surface. c = 1 gives G, c = sqrt 2 gives D.
    Returns (mesh, trace, status)."""
    m = M.build_triclinic_polyhedral(c) if triclinic else M.build_monoclinic_polyhedral_g(c)
    return evolve(m, refinements, cycles, threshold, time_limit=time_limit, smooth_first=True)


def orthorhombic_g(mesh: TriangleMesh):
    """Re-wrap a monoclinic-cell G on a cell whose third vector is normal to
    a (211) plane, rotated so that this normal is e_z. Returns the mesh and
    the cubic basis (rows) in the new frame."""
    s = M.supercell(mesh, _ORTHO_SUPERCELL)
    u = s.cell
    ex = u[0] / np.linalg.norm(u[0])
    ez = u[2] / np.linalg.norm(u[2])
    R = np.array([ex, np.cross(ez, ex), ez])
    s = M.change_frame(s, SymmetryOp(R, np.zeros(3)))
    return s, _CUBIC_AXES.T @ R.T


def g_slab_planes(zr: float, basis: np.ndarray, delta: int):
    """Twin boundaries at lattice distance delta around height zr/2. The
    planes sit on the half-integer (211) layers of the model frame, where
    the flat points meet the plane nearly at right angles."""
    r0 = int(round(zr / G_211 - delta))  # planes counted in half spacings
    r0 += 1 - r0 % 2
    lo = M.miller_plane(basis, 2, 1, 1, r0 / 2)
    hi = M.miller_plane(basis, 2, 1, 1, r0 / 2 + delta)
    return lo, hi


def g_twin(delta: int, refinements: int = 3, coarse: int = 2, cycles: int = 6,
           threshold: float = THRESHOLD, time_limit: float | None = None) -> TwinRunResult:
    """G twin across (211) at lattice distance delta (units of the (211)
    spacing): evolve G at ``coarse`` refinements, re-wrap, slice, evolve on."""
    if not isinstance(delta, (int, np.integer)) or delta < 1:
        raise DomainError("delta must be a positive integer")
    t0 = time.monotonic()
    g, _, _ = g_surface(coarse, threshold=threshold)
    s, basis = orthorhombic_g(g)
    n = math.ceil(delta / 6) + 1
    s = M.replicate_periodic(s, 3, n)
    lo, hi = g_slab_planes(s.cell[2, 2], basis, delta)
    tw = M.slice(M.slice(s, lo, 1), hi, -1)
    zc = 0.5 * (lo.offset + hi.offset)
    syms = [op for op, d in slab_symmetries(tw, zc) if d < 1e-9]
    tw, trace, status = evolve(tw, refinements - coarse, cycles, threshold, time_limit=time_limit)
    return TwinRunResult(
        tw, trace.final_energy, [], status, trace, [lo, hi], syms,
        dict(kind="g", delta=int(delta), refinements=refinements, coarse=coarse, threshold=threshold,
             basis=basis.tolist(), replicas=n),
        time.monotonic() - t0,
    )


def g_reference(result: TwinRunResult, cycles: int = 4):
    """Untwinned G in the twin's frame at the twin's refinement level."""
    p = result.params
    g, _, _ = g_surface(p["coarse"])
    s, _ = orthorhombic_g(g)
    s = M.replicate_periodic(s, 3, p["replicas"])
    s, _, _ = evolve(s, p["refinements"] - p["coarse"], cycles, smooth_first=True) if p["refinements"] > p["coarse"] else (s, None, None)
    return s


def _periodic_box(mesh: TriangleMesh):
    """(box, wrap) for a cKDTree with wrap-around on an axis-aligned cell;
    non-periodic axes get a box far larger than the mesh. None otherwise."""
    if mesh.cell is None or not np.allclose(mesh.cell, np.diag(np.diag(mesh.cell)), atol=1e-9):
        return None
    per = np.array(mesh.periodic)
    lo = mesh.vertices.min(0)
    span = np.ptp(mesh.vertices, axis=0) + 1.0
    box = np.where(per, np.diag(mesh.cell), 8 * span)

    def wrap(Y):
        Y = np.where(per, Y, Y - lo + 2 * span)
        Y = Y - np.floor(Y / box) * box
        return np.where(Y >= box, 0.0, Y)

    return box, wrap


def slab_symmetries(mesh: TriangleMesh, zc: float):
    """For every diagonal sign matrix L other than the identity, the motion
    x -> L x + t preserving the height zc that best maps the vertex set to
    itself, with its defect. Needs an axis-aligned cell periodic in x, y."""
    pb = _periodic_box(mesh)
    if pb is None:
        raise ContractError("slab_symmetries needs an axis-aligned cell")
    box, wrap = pb
    X = mesh.vertices
    tree = cKDTree(wrap(X), boxsize=box)
    rng = np.random.default_rng(0)
    sample = X[rng.choice(len(X), min(200, len(X)), replace=False)]
    x0 = X[0]
    out = []
    for signs in np.ndindex(2, 2, 2):
        L = np.diag([1.0 - 2 * s for s in signs])
        if signs == (0, 0, 0):
            continue
        z_img = zc + L[2, 2] * (x0[2] - zc)
        cand = np.flatnonzero(np.abs(X[:, 2] - z_img) < 1e-7)
        best, bop = math.inf, None
        for j in cand:
            t = X[j] - L @ x0
            t[2] = zc - L[2, 2] * zc
            op = SymmetryOp(L, t)
            d = tree.query(wrap(op.apply(sample)))[0].max()
            if d < best:
                best, bop = d, op
        if bop is not None:
            best = float(tree.query(wrap(bop.apply(X)))[0].max())
        out.append((bop, best))
    return out


def od_symmetry(result: TwinRunResult, tol: float = 1e-5) -> dict:
    """Symmetry of a G twin: which slab motions survive the evolution, and
    the point group they generate together with the twin mirror (z -> -z).
    The twinned structure is orthorhombic when that group is mmm."""
    zc = 0.5 * (result.planes[0].offset + result.planes[1].offset)
    found = slab_symmetries(result.mesh, zc)
    kept = [op for op, d in found if d < tol]
    group = {tuple(int(v) for v in np.diag(op.linear)) for op in kept} | {(1, 1, -1), (1, 1, 1)}
    while True:
        new = {tuple(a * b for a, b in zip(p, q)) for p in group for q in group} - group
        if not new:
            break
        group |= new
    return {
        "defects": {tuple(int(v) for v in np.diag(op.linear)): d for op, d in found if op is not None},
        "kept": kept,
        "point_group_order": len(group),
        "orthorhombic": len(group) == 8,
    }


@dataclass
class StretchMember:
    c: float
    mesh: TriangleMesh
    final_energy: float
    status: str
    line_residual: float  # straight-line diagnostic: 0 for D
    area_ratio: float  # area / volume^(2/3) of the cell


def collinearity_residual(mesh: TriangleMesh) -> float:
    """Largest distance from the marked grid lines to their best-fit
    straight lines, relative to line length."""
    if not mesh.lines:
        raise ContractError("mesh carries no grid lines")
    worst = 0.0
    for ids, sh in mesh.lines:
        P = mesh.vertices[ids] + (sh @ mesh.cell if mesh.cell is not None else 0.0)
        c = P.mean(0)
        _, _, vt = np.linalg.svd(P - c)
        r = P - c - np.outer((P - c) @ vt[0], vt[0])
        length = np.ptp((P - c) @ vt[0])
        worst = max(worst, float(np.linalg.norm(r, axis=1).max() / length))
    return worst


def stretch_family(c_values, refinements: int = 3, cycles: int = 4, threshold: float = THRESHOLD) -> list:
    """Triclinic two-plane starts stretched by c, from G (c = 1) to D
    (c = sqrt 2). D contains the grid lines as straight lines."""
    out = []
    for c in c_values:
        m, tr, status = g_surface(refinements, float(c), triclinic=True, cycles=cycles, threshold=threshold)
        vol = abs(np.linalg.det(m.cell))
        out.append(StretchMember(float(c), m, tr.final_energy, status, collinearity_residual(m),
                                 float(m.face_areas().sum() / vol ** (2 / 3))))
    return out


# ---------------------------------------------------------------------------
# deviation


def _closest_on_triangles(p, a, b, c):
    """Closest points on triangles (a, b, c) to points p, row by row
    (Voronoi-region test of Ericson, Real-Time Collision Detection)."""
    ab, ac = b - a, c - a
    dot = lambda u, v: np.einsum("ij,ij->i", u, v)
    ap, bp, cp = p - a, p - b, p - c
    d1, d2 = dot(ab, ap), dot(ac, ap)
    d3, d4 = dot(ab, bp), dot(ac, bp)
    d5, d6 = dot(ab, cp), dot(ac, cp)
    va, vb, vc = d3 * d6 - d5 * d4, d5 * d2 - d1 * d6, d1 * d4 - d3 * d2
    den = va + vb + vc
    den = np.where(den == 0, 1e-300, den)
    out = a + ab * (vb / den)[:, None] + ac * (vc / den)[:, None]
    with np.errstate(divide="ignore", invalid="ignore"):
        regions = [
            ((vc <= 0) & (d1 >= 0) & (d3 <= 0), lambda: a + ab * (d1 / (d1 - d3))[:, None]),
            ((vb <= 0) & (d2 >= 0) & (d6 <= 0), lambda: a + ac * (d2 / (d2 - d6))[:, None]),
            ((va <= 0) & (d4 - d3 >= 0) & (d5 - d6 >= 0), lambda: b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6)))[:, None]),
            ((d1 <= 0) & (d2 <= 0), lambda: a),
            ((d3 >= 0) & (d4 <= d3), lambda: b),
            ((d6 >= 0) & (d5 <= d6), lambda: c),
        ]
        for mask, val in regions:
            if mask.any():
                out[mask] = val()[mask]
    return out


def _expanded(reference: TriangleMesh) -> TriangleMesh:
    """Non-periodic reference with a ring of neighbouring cells along each
    periodic direction."""
    if reference.cell is None:
        return reference
    u = M.unwrapped(reference)
    shifts = [np.arange(-1, 2) if p else np.zeros(1, int) for p in reference.periodic]
    copies = [M.change_frame(u, SymmetryOp(np.eye(3), np.array([i, j, k]) @ reference.cell))
              for i in shifts[0] for j in shifts[1] for k in shifts[2]]
    return M.merge(copies)


def deviation(mesh: TriangleMesh, reference: TriangleMesh, k: int = 12) -> DeviationField:
    """Signed distance from each vertex of ``mesh`` to the surface
    ``reference``. The sign follows the normal of the nearest reference face,
    so it flips with the reference's orientation; magnitudes do not."""
    if reference.n_faces == 0:
        raise ContractError("empty reference mesh")
    ref = _expanded(reference)
    tri = ref.vertices[ref.faces]
    X = mesh.vertices
    _, idx = cKDTree(tri.mean(1)).query(X, k=min(k, len(tri)))
    idx = idx.reshape(len(X), -1)
    best = np.full(len(X), np.inf)
    sign = np.ones(len(X))
    normals = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    for j in range(idx.shape[1]):
        f = idx[:, j]
        q = _closest_on_triangles(X, tri[f, 0], tri[f, 1], tri[f, 2])
        d = np.linalg.norm(X - q, axis=1)
        better = d < best
        best[better] = d[better]
        sign[better] = np.where(np.einsum("ij,ij->i", X - q, normals[f])[better] < 0, -1.0, 1.0)
    return DeviationField(sign * best)


def boundary_distance(mesh: TriangleMesh, planes) -> np.ndarray:
    """Distance of each vertex to the nearest of ``planes``."""
    return np.min([np.abs(p.distance(mesh.vertices)) for p in planes], axis=0)


def twin_deviation(result: TwinRunResult, reference: TriangleMesh | None = None, n_bins: int = 5):
    """Deviation of a twin from its untwinned surface, with per-bin maxima of
    |deviation| by distance to the twin boundaries (nearest bin first)."""
    if reference is None:
        if result.params.get("kind") == "g":
            reference = g_reference(result)
        elif result.params.get("kind") == "rpd":
            p = result.params
            reference, _, _ = rpd_slab(p["t"], p["delta"] + 4, p["refinements"])
        else:
            raise ContractError("no reference surface for this result")
    dev = deviation(result.mesh, reference)
    _, bins = dev.binned(boundary_distance(result.mesh, result.planes[:2]), n_bins, "max")
    return dev, bins


# ---------------------------------------------------------------------------
# tetragonal necks

TD_RADIUS = {"small": 0.05, "large": 0.45}  # initial neck radius / a
D_RATIO = 1.0  # h/a of the D surface in the neck model below


def _periodic_from_triangles(tris: np.ndarray, cell: np.ndarray, decimals: int = 8) -> TriangleMesh:
    """Weld a triangle soup into a mesh periodic on ``cell``: corners are
    reduced into the cell and merged by rounded fractional coordinates."""
    inv = np.linalg.inv(cell)
    frac = tris.reshape(-1, 3) @ inv
    s = np.floor(frac + 1e-9)
    r = frac - s
    keys = np.round(r, decimals) % 1.0
    _, first, ids = np.unique(np.round(keys, decimals), axis=0, return_index=True, return_inverse=True)
    verts = r[first] @ cell
    faces = ids.reshape(-1, 3)
    shifts = s.astype(np.int64).reshape(-1, 3, 3)
    m = TriangleMesh(verts, faces, None, [], {}, cell, (True, True, True), shifts)
    return M.orient_consistently(m)


def build_td_necks(h_over_a: float, radius: float, n_theta: int = 16) -> TriangleMesh:
    """Horizontal planes z = k h with holes on the unit square lattice
    (a = 1), joined by straight tubes of the given radius: between planes
    0 and 1 at (i, j) with i + j even, between 1 and 2 at i + j odd. Cell
    (1, 1, 0), (1, -1, 0), (0, 0, 2h); two necks per cell."""
    h = float(h_over_a)
    if not (math.isfinite(h) and h > 0):
        raise DomainError("h_over_a must be positive")
    if not 0 < radius < 0.5:
        raise DomainError("neck radius must lie in (0, a/2)")
    if n_theta % 8:
        raise DomainError("n_theta must be a multiple of 8")
    th = np.arange(n_theta) * 2 * math.pi / n_theta
    dirs = np.stack([np.cos(th), np.sin(th)], 1)
    r_sq = 0.5 / np.max(np.abs(dirs), axis=1)
    dth = 2 * math.pi / n_theta
    n_r = max(2, math.ceil(math.log(0.5 / radius) / dth))
    n_z = max(2, min(32, math.ceil(h / (radius * dth))))

    def grid_faces(P):  # P: (rows, n_theta, 3), closed in theta
        a, b = P[:-1], P[1:]
        a1, b1 = np.roll(a, -1, 1), np.roll(b, -1, 1)
        return np.concatenate([np.stack([a, a1, b1], 2).reshape(-1, 3, 3), np.stack([a, b1, b], 2).reshape(-1, 3, 3)])

    def annulus(cx, cy, z):
        s = np.linspace(0, 1, n_r + 1)[:, None]
        rr = radius * (r_sq / radius)[None, :] ** s
        xy = np.array([cx, cy]) + rr[..., None] * dirs[None]
        return grid_faces(np.concatenate([xy, np.full(rr.shape + (1,), z)], 2))

    def tube(cx, cy, z0):
        zz = z0 + np.linspace(0, h, n_z + 1)
        xy = np.array([cx, cy]) + radius * dirs
        P = np.concatenate([np.broadcast_to(xy, (n_z + 1,) + xy.shape), np.broadcast_to(zz[:, None, None], (n_z + 1, n_theta, 1))], 2)
        return grid_faces(P)

    tris = np.concatenate([
        annulus(0, 0, 0), annulus(1, 0, 0), annulus(0, 0, h), annulus(1, 0, h),
        tube(0, 0, 0), tube(1, 0, h),
    ])
    cell = np.array([[1.0, 1.0, 0.0], [1.0, -1.0, 0.0], [0.0, 0.0, 2 * h]])
    return _periodic_from_triangles(tris, cell)


def extended_td(h_over_a: float, branch: str = "large", refinements: int = 1, cycles: int = 6,
                threshold: float = THRESHOLD, time_limit: float | None = None) -> TwinRunResult:
    """Evolve the tetragonal neck model from small (0.05 a) or large
    (0.45 a) necks. Reports converged, stalled or degenerate (a collapsing
    neck or triangle)."""
    if branch not in TD_RADIUS:
        raise DomainError("branch must be 'small' or 'large'")
    t0 = time.monotonic()
    m = build_td_necks(h_over_a, TD_RADIUS[branch])
    m, trace, status = evolve(m, refinements, cycles, threshold, time_limit=time_limit, smooth_first=True)
    areas = m.face_areas()
    if status != "converged" and areas.min() < 1e-6 * np.median(areas):
        status = "degenerate"
    vol = abs(np.linalg.det(m.cell))
    return TwinRunResult(
        m, trace.final_energy, [], status, trace, [], [],
        dict(kind="td", h_over_a=float(h_over_a), branch=branch, refinements=refinements, threshold=threshold,
             area_ratio=float(areas.sum() / vol ** (2 / 3))),
        time.monotonic() - t0,
    )


# ---------------------------------------------------------------------------
# results bundles


def write_bundle(result: TwinRunResult, outdir, command: str, parameters: dict,
                 dev: DeviationField | None = None, extra: dict | None = None) -> RunManifest:
    """Mesh files (OFF, OBJ, PLY with a "deviation" channel when given), the
    energy trace as CSV and a manifest, all under ``outdir``."""
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {k: out / n for k, n in (("off", "mesh.off"), ("obj", "mesh.obj"), ("ply", "mesh.ply"), ("trace", "trace.csv"), ("manifest", "manifest.json"))}
    M.write_off(paths["off"], result.mesh)
    M.write_obj(paths["obj"], result.mesh)
    M.write_ply(paths["ply"], result.mesh, {"deviation": dev.values} if dev is not None else None)
    result.trace.to_csv(paths["trace"])
    headline = dict(final_energy=result.final_energy, p_estimates=result.p_estimates, status=result.status,
                    faces=result.mesh.n_faces, **(extra or {}))
    if dev is not None:
        headline["max_abs_deviation"] = dev.max_abs
    man = RunManifest(
        command, parameters, {"threshold": result.params.get("threshold", THRESHOLD)},
        outputs=[str(p) for p in paths.values()], status=result.status, headline=headline, elapsed=result.elapsed,
    )
    man.write(paths["manifest"])
    return man
