"""Triangle meshes with plane constraints, symmetry copies, slicing and
periodic (torus-model) cells.

A periodic mesh stores one copy of each vertex in the cell and, per face
corner, an integer lattice shift: corner j of face f sits at
``vertices[faces[f, j]] + shifts[f, j] @ cell``.
"""
from __future__ import annotations

import copy as _copy
import math
from collections import defaultdict, deque
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .errors import ContractError, DomainError

WELD_TOL = 1e-9
PLANE_TOL = 1e-12
KINDS = ("fixed", "free", "slicing")


@dataclass(frozen=True)
class PlaneConstraint:
    """Plane {x : normal . x = offset}."""

    normal: tuple
    offset: float
    kind: str = "free"

    def __post_init__(self):
        n = np.asarray(self.normal, float)
        norm = float(np.linalg.norm(n))
        if not np.isfinite(norm) or norm < 1e-14:
            raise DomainError("degenerate plane normal")
        if self.kind not in KINDS:
            raise DomainError(f"unknown constraint kind {self.kind!r}")
        object.__setattr__(self, "normal", tuple(float(c) for c in n / norm))
        object.__setattr__(self, "offset", float(self.offset) / norm)

    @property
    def n(self) -> np.ndarray:
        return np.array(self.normal)

    def distance(self, x) -> np.ndarray:
        return np.asarray(x, float) @ self.n - self.offset

    def project(self, x) -> np.ndarray:
        x = np.asarray(x, float)
        return x - np.multiply.outer(self.distance(x), self.n)

    def transformed(self, op: "SymmetryOp") -> "PlaneConstraint":
        n = op.linear @ self.n
        return PlaneConstraint(tuple(n), self.offset + float(n @ op.translation), self.kind)

    def shifted(self, d: float) -> "PlaneConstraint":
        return PlaneConstraint(self.normal, self.offset + d, self.kind)

    def same_plane(self, other: "PlaneConstraint", tol: float = 1e-9) -> bool:
        a, b = self.n, other.n
        if np.linalg.norm(a - b) < tol:
            return abs(self.offset - other.offset) < tol
        if np.linalg.norm(a + b) < tol:
            return abs(self.offset + other.offset) < tol
        return False


@dataclass(frozen=True)
class SymmetryOp:
    """Euclidean motion x -> linear @ x + translation."""

    linear: np.ndarray
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        L = np.asarray(self.linear, float).reshape(3, 3)
        T = np.asarray(self.translation, float).reshape(3)
        if np.max(np.abs(L @ L.T - np.eye(3))) > 1e-12:
            raise DomainError("linear part is not orthogonal")
        object.__setattr__(self, "linear", L)
        object.__setattr__(self, "translation", T)

    def apply(self, x) -> np.ndarray:
        return np.asarray(x, float) @ self.linear.T + self.translation

    def __matmul__(self, other: "SymmetryOp") -> "SymmetryOp":
        """Composition: (self @ other)(x) = self(other(x))."""
        return SymmetryOp(self.linear @ other.linear, self.linear @ other.translation + self.translation)

    def is_involution(self, tol: float = 1e-10) -> bool:
        sq = self @ self
        return bool(np.max(np.abs(sq.linear - np.eye(3))) < tol and np.max(np.abs(sq.translation)) < tol)

    @classmethod
    def identity(cls) -> "SymmetryOp":
        return cls(np.eye(3))

    @classmethod
    def rotation(cls, p, q, angle: float = math.pi) -> "SymmetryOp":
        """Rotation by ``angle`` about the line through points p and q."""
        p, q = np.asarray(p, float), np.asarray(q, float)
        u = (q - p) / np.linalg.norm(q - p)
        K = np.array([[0, -u[2], u[1]], [u[2], 0, -u[0]], [-u[1], u[0], 0]])
        R = np.eye(3) + math.sin(angle) * K + (1 - math.cos(angle)) * (K @ K)
        if abs(angle - math.pi) < 1e-15:
            R = 2 * np.outer(u, u) - np.eye(3)  # exact half-turn
        return cls(R, p - R @ p)

    @classmethod
    def reflection(cls, plane: PlaneConstraint) -> "SymmetryOp":
        n = plane.n
        return cls(np.eye(3) - 2 * np.outer(n, n), 2 * plane.offset * n)


@dataclass(frozen=True)
class MillerPlane:
    """Lattice plane {alpha a + beta b + gamma c : h alpha + k beta + l gamma = r}."""

    h: int
    k: int
    l: int
    r: float
    basis: tuple

    def __post_init__(self):
        idx = (int(self.h), int(self.k), int(self.l))
        if idx == (0, 0, 0):
            raise DomainError("zero Miller index triple")
        if math.gcd(math.gcd(abs(idx[0]), abs(idx[1])), abs(idx[2])) != 1:
            raise DomainError("Miller indices must be coprime")
        B = np.asarray(self.basis, float).reshape(3, 3)
        if abs(np.linalg.det(B)) < 1e-14:
            raise DomainError("degenerate basis")
        object.__setattr__(self, "basis", tuple(map(tuple, B)))

    @property
    def offset(self) -> float:
        return float(self.r - math.floor(self.r))

    @property
    def spacing(self) -> float:
        """Euclidean distance between the planes r and r+1."""
        return 1.0 / float(np.linalg.norm(self._dual()))

    def _dual(self) -> np.ndarray:
        # plane: (h,k,l) . B^{-T} x = r, rows of B are the basis vectors
        B = np.array(self.basis)
        return np.linalg.solve(B, np.array([self.h, self.k, self.l], float))

    def constraint(self, kind: str = "slicing") -> PlaneConstraint:
        g = self._dual()
        return PlaneConstraint(tuple(g), self.r, kind)


def miller_plane(basis, h: int, k: int, l: int, r: float, kind: str = "slicing") -> PlaneConstraint:
    return MillerPlane(h, k, l, r, tuple(map(tuple, np.asarray(basis, float)))).constraint(kind)


# ---------------------------------------------------------------------------
# mesh


@dataclass
class TriangleMesh:
    vertices: np.ndarray
    faces: np.ndarray
    constraints: list = None  # per vertex: frozenset of plane ids
    planes: list = field(default_factory=list)
    marks: dict = field(default_factory=dict)  # name -> bool array over vertices
    cell: np.ndarray | None = None  # rows are wrap vectors
    periodic: tuple = (False, False, False)
    shifts: np.ndarray | None = None  # (F, 3, 3) integer lattice shifts per corner
    lines: list = field(default_factory=list)  # polylines: (vertex ids, shifts)

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, float).reshape(-1, 3)
        self.faces = np.asarray(self.faces, np.int64).reshape(-1, 3)
        n = len(self.vertices)
        if self.constraints is None:
            self.constraints = [frozenset() for _ in range(n)]
        self.constraints = [frozenset(c) for c in self.constraints]
        self.marks = {k: np.asarray(v, bool).copy() for k, v in self.marks.items()}
        if self.cell is not None:
            self.cell = np.asarray(self.cell, float).reshape(3, 3)
            if self.shifts is None:
                self.shifts = np.zeros((len(self.faces), 3, 3), np.int64)
            self.shifts = np.asarray(self.shifts, np.int64).reshape(-1, 3, 3)
        else:
            self.periodic = (False, False, False)
            self.shifts = None
        self.periodic = tuple(bool(p) for p in self.periodic)

    # -- basic queries -----------------------------------------------------
    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    @property
    def is_periodic(self) -> bool:
        return self.cell is not None and any(self.periodic)

    def copy(self) -> "TriangleMesh":
        return _copy.deepcopy(self)

    def mark(self, name: str) -> np.ndarray:
        return self.marks.get(name, np.zeros(self.n_vertices, bool))

    def corner_offsets(self) -> np.ndarray:
        """Cartesian offsets (F, 3, 3) added to the corner vertices."""
        if self.shifts is None:
            return np.zeros((self.n_faces, 3, 3))
        return self.shifts @ self.cell

    def corners(self) -> np.ndarray:
        return self.vertices[self.faces] + self.corner_offsets()

    def face_areas(self) -> np.ndarray:
        c = self.corners()
        return 0.5 * np.linalg.norm(np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0]), axis=1)

    def edge_table(self) -> dict:
        """Undirected edges keyed by (u, v, d) with u <= v and d the lattice
        shift of v relative to u; value is the list of (face, slot) uses."""
        table = defaultdict(list)
        sh = self.shifts
        for f, tri in enumerate(self.faces):
            for j in range(3):
                a, b = int(tri[j]), int(tri[(j + 1) % 3])
                d = (0, 0, 0) if sh is None else tuple(sh[f, (j + 1) % 3] - sh[f, j])
                table[_edge_key(a, b, d)].append((f, j))
        return table

    def edge_lengths(self) -> np.ndarray:
        c = self.corners()
        return np.linalg.norm(c - np.roll(c, -1, axis=1), axis=2).ravel()

    def boundary_edges(self) -> list:
        return [k for k, uses in self.edge_table().items() if len(uses) == 1]

    def boundary_vertices(self) -> np.ndarray:
        mask = np.zeros(self.n_vertices, bool)
        for u, v, _ in self.boundary_edges():
            mask[u] = mask[v] = True
        return mask

    def is_edge_manifold(self) -> bool:
        return all(len(uses) <= 2 for uses in self.edge_table().values())

    def is_closed(self) -> bool:
        return all(len(uses) == 2 for uses in self.edge_table().values())

    def is_oriented(self) -> bool:
        """Each edge shared by two faces is traversed once in each direction."""
        for uses in self.edge_table().values():
            if len(uses) == 2:
                (f, i), (g, j) = uses
                if _same_direction(self, f, i, g, j):
                    return False
        return True

    def euler_characteristic(self) -> int:
        return self.n_vertices - len(self.edge_table()) + self.n_faces

    def vertex_neighbors(self) -> list:
        nb = [set() for _ in range(self.n_vertices)]
        for tri in self.faces:
            for a in tri:
                nb[a].update(int(b) for b in tri if b != a)
        return nb

    # -- constraints -------------------------------------------------------
    def add_plane(self, plane: PlaneConstraint) -> int:
        for i, p in enumerate(self.planes):
            if p.kind == plane.kind and p.same_plane(plane):
                return i
        self.planes.append(plane)
        return len(self.planes) - 1

    def fixed_mask(self) -> np.ndarray:
        """Vertices that never move: fixed-boundary planes, or an
        unconstrained vertex on the mesh boundary."""
        fixed = np.array([any(self.planes[i].kind == "fixed" for i in c) for c in self.constraints], bool)
        bnd = self.boundary_vertices()
        free_bnd = np.array([len(c) == 0 for c in self.constraints], bool) & bnd
        return fixed | free_bnd | self.mark("pinned")

    def constraint_normals(self, v: int) -> np.ndarray:
        ids = sorted(self.constraints[v])
        return np.array([self.planes[i].n for i in ids]).reshape(-1, 3)

    def motion_bases(self) -> list:
        """Per vertex, an orthonormal basis (3, d) of the allowed motions."""
        fixed = self.fixed_mask()
        return [np.zeros((3, 0)) if fixed[v] else _motion_basis(self.constraint_normals(v)) for v in range(self.n_vertices)]

    def project_constraints(self) -> None:
        """Move each vertex to the nearest point satisfying its planes."""
        for v, ids in enumerate(self.constraints):
            if ids:
                self.vertices[v] = _project_affine(self.vertices[v], [self.planes[i] for i in sorted(ids)])

    def constraint_violation(self) -> float:
        worst = 0.0
        for v, ids in enumerate(self.constraints):
            for i in ids:
                worst = max(worst, abs(float(self.planes[i].distance(self.vertices[v]))))
        return worst

    def validate(self) -> None:
        if self.n_faces and (self.faces.min() < 0 or self.faces.max() >= self.n_vertices):
            raise ContractError("face references a missing vertex")
        if len(self.constraints) != self.n_vertices:
            raise ContractError("constraint list length mismatch")
        for k, m in self.marks.items():
            if len(m) != self.n_vertices:
                raise ContractError(f"mark {k!r} length mismatch")
        if self.shifts is not None and self.shifts.shape != (self.n_faces, 3, 3):
            raise ContractError("shift array shape mismatch")


def _edge_key(a: int, b: int, d) -> tuple:
    d = tuple(int(x) for x in d)
    if a < b or (a == b and d >= (0, 0, 0)):
        return (a, b, d)
    return (b, a, tuple(-x for x in d))


def _motion_basis(normals: np.ndarray) -> np.ndarray:
    if len(normals) == 0:
        return np.eye(3)
    u, s, vt = np.linalg.svd(normals)
    rank = int(np.sum(s > 1e-9))
    return vt[rank:].T.copy()


def _project_affine(x: np.ndarray, planes: Sequence[PlaneConstraint]) -> np.ndarray:
    N = np.array([p.n for p in planes])
    r = np.array([p.offset for p in planes]) - N @ x
    # least-norm correction; iterate once more to polish rounding
    for _ in range(2):
        x = x + np.linalg.lstsq(N, r, rcond=1e-10)[0]
        r = np.array([p.offset for p in planes]) - N @ x
    return x


# ---------------------------------------------------------------------------
# orientation, merging, welding


def orient_consistently(mesh: TriangleMesh) -> TriangleMesh:
    """Flip faces so that shared edges are traversed in opposite directions
    (breadth-first over each connected component, seeded by its first face)."""
    table = mesh.edge_table()
    adj = defaultdict(list)
    for uses in table.values():
        if len(uses) == 2:
            (f, i), (g, j) = uses
            adj[f].append((g, i, j))
            adj[g].append((f, j, i))
    flip = np.zeros(mesh.n_faces, bool)
    seen = np.zeros(mesh.n_faces, bool)
    for seed in range(mesh.n_faces):
        if seen[seed]:
            continue
        seen[seed] = True
        queue = deque([seed])
        while queue:
            f = queue.popleft()
            for g, i, j in adj[f]:
                # edge (f, slot i) and (g, slot j) are the same undirected edge
                same = _same_direction(mesh, f, i, g, j)
                want = flip[f] if not same else not flip[f]
                if not seen[g]:
                    seen[g] = True
                    flip[g] = want
                    queue.append(g)
                elif flip[g] != want:
                    raise ContractError("surface is not orientable")
    out = mesh.copy()
    out.faces[flip] = out.faces[flip][:, ::-1]
    if out.shifts is not None:
        out.shifts[flip] = out.shifts[flip][:, ::-1]
    return out


def _same_direction(mesh, f, i, g, j) -> bool:
    a0, a1 = mesh.faces[f, i], mesh.faces[f, (i + 1) % 3]
    b0, b1 = mesh.faces[g, j], mesh.faces[g, (j + 1) % 3]
    if a0 != a1:
        return bool(a0 == b0 and a1 == b1)
    sh = mesh.shifts
    da = sh[f, (i + 1) % 3] - sh[f, i]
    db = sh[g, (j + 1) % 3] - sh[g, j]
    return bool(np.all(da == db))


def transform(mesh: TriangleMesh, op: SymmetryOp) -> TriangleMesh:
    """Image of a non-periodic mesh under a motion (constraints follow)."""
    if mesh.is_periodic:
        raise ContractError("transform expects a non-periodic mesh")
    out = mesh.copy()
    out.vertices = op.apply(mesh.vertices)
    out.planes = [p.transformed(op) for p in mesh.planes]
    # orientation-reversing motions flip the faces to keep normals mapped
    if np.linalg.det(op.linear) < 0:
        out.faces = out.faces[:, ::-1].copy()
    return out


def merge(meshes: Sequence[TriangleMesh]) -> TriangleMesh:
    """Disjoint union of non-periodic meshes, sharing the plane registry."""
    verts, faces, cons, planes = [], [], [], []
    mark_names = sorted({k for m in meshes for k in m.marks})
    marks = {k: [] for k in mark_names}
    lines = []
    tmp = TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), int))
    base = 0
    for m in meshes:
        if m.is_periodic:
            raise ContractError("merge expects non-periodic meshes")
        idmap = {i: tmp.add_plane(p) for i, p in enumerate(m.planes)}
        verts.append(m.vertices)
        faces.append(m.faces + base)
        cons.extend(frozenset(idmap[i] for i in c) for c in m.constraints)
        for k in mark_names:
            marks[k].append(m.mark(k))
        for ids, sh in m.lines:
            lines.append((np.asarray(ids) + base, sh))
        base += m.n_vertices
    return TriangleMesh(
        np.concatenate(verts),
        np.concatenate(faces),
        cons,
        tmp.planes,
        {k: np.concatenate(v) for k, v in marks.items()},
        lines=lines,
    )


def weld(mesh: TriangleMesh, tol: float = WELD_TOL) -> TriangleMesh:
    """Merge vertices closer than ``tol``: constraint sets and marks are
    united, degenerate faces are dropped."""
    tree = cKDTree(mesh.vertices)
    pairs = tree.query_pairs(tol, output_type="ndarray")
    parent = np.arange(mesh.n_vertices)

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for a, b in pairs:
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)
    roots = np.array([find(i) for i in range(mesh.n_vertices)])
    uniq, new_index = np.unique(roots, return_inverse=True)
    cons = [set() for _ in uniq]
    for i, c in enumerate(mesh.constraints):
        cons[new_index[i]].update(c)
    marks = {}
    for k, m in mesh.marks.items():
        nm = np.zeros(len(uniq), bool)
        np.logical_or.at(nm, new_index, m)
        marks[k] = nm
    faces = new_index[mesh.faces]
    keep = (faces[:, 0] != faces[:, 1]) & (faces[:, 1] != faces[:, 2]) & (faces[:, 0] != faces[:, 2])
    lines = [(new_index[np.asarray(ids)], sh) for ids, sh in mesh.lines]
    out = TriangleMesh(
        mesh.vertices[uniq],
        faces[keep],
        cons,
        list(mesh.planes),
        marks,
        mesh.cell,
        mesh.periodic,
        None if mesh.shifts is None else mesh.shifts[keep],
        lines,
    )
    return out


def remove_unused(mesh: TriangleMesh) -> TriangleMesh:
    used = np.zeros(mesh.n_vertices, bool)
    used[mesh.faces.ravel()] = True
    if used.all():
        return mesh
    new = -np.ones(mesh.n_vertices, np.int64)
    new[used] = np.arange(int(used.sum()))
    out = mesh.copy()
    out.vertices = mesh.vertices[used]
    out.faces = new[mesh.faces]
    out.constraints = [c for c, u in zip(mesh.constraints, used) if u]
    out.marks = {k: m[used] for k, m in mesh.marks.items()}
    lines = []
    for ids, sh in mesh.lines:
        ids = np.asarray(ids)
        ok = used[ids]
        if ok.sum() >= 2:
            lines.append((new[ids[ok]], None if sh is None else np.asarray(sh)[ok]))
    out.lines = lines
    return out


# ---------------------------------------------------------------------------
# refinement


def _shifts_or_zero(mesh: TriangleMesh) -> np.ndarray:
    if mesh.shifts is None:
        return np.zeros((mesh.n_faces, 3, 3), np.int64)
    return mesh.shifts


def _frame_shift(a: int, sa, b: int, sb):
    """Shift, in the caller's frame, of a vertex created on edge (a, b) and
    stored in the frame of the canonical first endpoint."""
    d = tuple(int(x) for x in np.asarray(sb) - np.asarray(sa))
    return np.asarray(sa) if _edge_key(a, b, d) == (a, b, d) else np.asarray(sb)


class _EdgeVertices:
    """Creates one new vertex per undirected edge, shared by both faces."""

    def __init__(self, mesh: TriangleMesh, cell: np.ndarray):
        self.mesh = mesh
        self.cell = cell
        self.index: dict = {}
        self.pos: list = []
        self.cons: list = []

    def get(self, a, sa, b, sb, where: float, extra: frozenset = frozenset()) -> tuple[int, np.ndarray]:
        d = tuple(int(x) for x in np.asarray(sb) - np.asarray(sa))
        key = _edge_key(a, b, d)
        if key not in self.index:
            u, v, dd = key
            if (u, v, dd) != (a, b, d):
                where = 1.0 - where
            xu = self.mesh.vertices[u]
            xv = self.mesh.vertices[v] + np.asarray(dd) @ self.cell
            x = xu + where * (xv - xu)
            cons = (self.mesh.constraints[u] & self.mesh.constraints[v]) | extra
            if cons:
                x = _project_affine(x, [self.mesh.planes[i] for i in sorted(cons)])
            self.index[key] = self.mesh.n_vertices + len(self.pos)
            self.pos.append(x)
            self.cons.append(cons)
        return self.index[key], _frame_shift(a, sa, b, sb)


def refine(mesh: TriangleMesh) -> TriangleMesh:
    """Split every triangle into four through its edge midpoints."""
    cell = mesh.cell if mesh.cell is not None else np.zeros((3, 3))
    sh = _shifts_or_zero(mesh)
    ev = _EdgeVertices(mesh, cell)
    faces, shifts = [], []
    for f, tri in enumerate(mesh.faces):
        c = [int(v) for v in tri]
        s = sh[f]
        m = [ev.get(c[j], s[j], c[(j + 1) % 3], s[(j + 1) % 3], 0.5) for j in range(3)]
        (m01, t01), (m12, t12), (m20, t20) = m
        faces += [(c[0], m01, m20), (c[1], m12, m01), (c[2], m20, m12), (m01, m12, m20)]
        shifts += [(s[0], t01, t20), (s[1], t12, t01), (s[2], t20, t12), (t01, t12, t20)]
    lines = []
    for ids, lsh in mesh.lines:
        lsh = np.zeros((len(ids), 3), np.int64) if lsh is None else np.asarray(lsh)
        nid, nsh = [int(ids[0])], [lsh[0]]
        for i in range(len(ids) - 1):
            mv, ms = ev.get(int(ids[i]), lsh[i], int(ids[i + 1]), lsh[i + 1], 0.5)
            nid += [mv, int(ids[i + 1])]
            nsh += [ms, lsh[i + 1]]
        lines.append((np.array(nid), np.array(nsh)))
    n_new = len(ev.pos)
    out = mesh.copy()
    out.vertices = np.vstack([mesh.vertices, np.array(ev.pos).reshape(-1, 3)])
    out.faces = np.array(faces, np.int64)
    out.constraints = list(mesh.constraints) + ev.cons
    out.marks = {k: np.concatenate([m, np.zeros(n_new, bool)]) for k, m in mesh.marks.items()}
    out.shifts = np.array(shifts, np.int64) if mesh.cell is not None else None
    out.lines = lines
    return out


# ---------------------------------------------------------------------------
# slicing


def unwrap_axis(mesh: TriangleMesh, axis: int) -> TriangleMesh:
    """Drop periodicity along one wrap vector (0-based axis): every vertex
    copy used by a face becomes a vertex of its own."""
    if mesh.cell is None or not mesh.periodic[axis]:
        return mesh
    sh = mesh.shifts
    keys = {}
    for f in range(mesh.n_faces):
        for j in range(3):
            keys.setdefault((int(mesh.faces[f, j]), int(sh[f, j, axis])), len(keys))
    order = sorted(keys, key=keys.get)
    src = np.array([v for v, _ in order], np.int64)
    k = np.array([s for _, s in order], np.int64)
    out = mesh.copy()
    out.vertices = mesh.vertices[src] + np.outer(k, mesh.cell[axis])
    out.constraints = [mesh.constraints[v] for v in src]
    out.marks = {n: m[src] for n, m in mesh.marks.items()}
    out.faces = np.array([[keys[(int(mesh.faces[f, j]), int(sh[f, j, axis]))] for j in range(3)] for f in range(mesh.n_faces)], np.int64)
    out.shifts = sh.copy()
    out.shifts[:, :, axis] = 0
    per = list(mesh.periodic)
    per[axis] = False
    out.periodic = tuple(per)
    lines = []
    for ids, lsh in mesh.lines:
        lsh = np.zeros((len(ids), 3), np.int64) if lsh is None else np.asarray(lsh).copy()
        new = [keys.get((int(v), int(s[axis])), -1) for v, s in zip(ids, lsh)]
        if min(new) >= 0:
            lsh[:, axis] = 0
            lines.append((np.array(new), lsh))
    out.lines = lines
    # the constraint planes are unchanged: plane ids refer to absolute planes
    return out


def slice(mesh: TriangleMesh, plane: PlaneConstraint, keep: int = 1, snap: float = 0.25) -> TriangleMesh:
    """Remove the part of the mesh on one side of ``plane``.

    ``keep=+1`` keeps {normal . x >= offset}. Vertices closer to the plane
    than ``snap`` times the median edge length are moved onto it (avoids
    slivers); cut edges get a new vertex on the plane. Every vertex left on
    the plane is tagged with it as a slicing constraint. Wrap vectors that
    cross the plane are unwrapped first, in-plane ones are kept.
    """
    if keep not in (1, -1):
        raise DomainError("keep must be +1 or -1")
    plane = PlaneConstraint(plane.normal, plane.offset, "slicing")
    m = mesh
    if m.cell is not None:
        for ax in range(3):
            if m.periodic[ax] and abs(float(plane.n @ m.cell[ax])) > 1e-12:
                m = unwrap_axis(m, ax)
    m = m.copy()
    pid = m.add_plane(plane)
    fixed = m.fixed_mask()
    s = keep * plane.distance(m.vertices)
    h = float(np.median(m.edge_lengths())) if m.n_faces else 0.0
    near = (np.abs(s) < snap * h) & ~fixed
    for v in np.flatnonzero(near):
        cons = m.constraints[v] | {pid}
        m.vertices[v] = _project_affine(m.vertices[v], [m.planes[i] for i in sorted(cons)])
        s[v] = 0.0
    cell = m.cell if m.cell is not None else np.zeros((3, 3))
    sh = _shifts_or_zero(m)
    ev = _EdgeVertices(m, cell)
    faces, shifts = [], []
    for f, tri in enumerate(m.faces):
        sv = s[tri]
        if np.all(sv == 0):
            continue  # lies in the plane: not part of either side
        if np.all(sv >= 0):
            faces.append(tuple(int(v) for v in tri))
            shifts.append(tuple(sh[f]))
            continue
        if np.all(sv <= 0):
            continue
        poly = []
        for j in range(3):
            a, b = int(tri[j]), int(tri[(j + 1) % 3])
            if s[a] >= 0:
                poly.append((a, sh[f, j]))
            if s[a] * s[b] < 0:
                w = s[a] / (s[a] - s[b])
                poly.append(ev.get(a, sh[f, j], b, sh[f, (j + 1) % 3], w, frozenset({pid})))
        if len(poly) == 4:
            # split along the shorter diagonal so the cut commutes with isometries
            pos = [(m.vertices[v] if v < m.n_vertices else ev.pos[v - m.n_vertices]) + np.asarray(sv_) @ cell for v, sv_ in poly]
            if np.linalg.norm(pos[1] - pos[3]) < np.linalg.norm(pos[0] - pos[2]) - 1e-12:
                poly = poly[1:] + poly[:1]
        for j in range(1, len(poly) - 1):
            faces.append((poly[0][0], poly[j][0], poly[j + 1][0]))
            shifts.append((poly[0][1], poly[j][1], poly[j + 1][1]))
    n_new = len(ev.pos)
    out = m
    out.vertices = np.vstack([m.vertices, np.array(ev.pos).reshape(-1, 3)])
    out.constraints = list(m.constraints) + ev.cons
    out.marks = {k: np.concatenate([v, np.zeros(n_new, bool)]) for k, v in m.marks.items()}
    out.faces = np.array(faces, np.int64).reshape(-1, 3)
    out.shifts = np.array(shifts, np.int64).reshape(-1, 3, 3) if m.cell is not None else None
    # vertices on the plane that are kept become boundary vertices on it
    on = np.concatenate([s == 0.0, np.ones(n_new, bool)])
    out.constraints = [c | {pid} if o else c for c, o in zip(out.constraints, on)]
    out = remove_unused(out)
    out.lines = [(ids, lsh) for ids, lsh in out.lines if np.all(keep * plane.distance(out.vertices[ids]) >= -1e-9)]
    return out


# ---------------------------------------------------------------------------
# periodic cells


def replicate_periodic(mesh: TriangleMesh, axis: int, n: int) -> TriangleMesh:
    """Repeat a periodic mesh n times along wrap vector ``axis`` (1, 2 or 3)."""
    if mesh.cell is None or not mesh.is_periodic:
        raise ContractError("replicate_periodic needs a periodic mesh")
    if axis not in (1, 2, 3) or n < 1:
        raise DomainError("axis must be 1, 2 or 3 and n >= 1")
    B = np.eye(3, dtype=np.int64)
    B[axis - 1, axis - 1] = n
    return supercell(mesh, B)


def supercell(mesh: TriangleMesh, B) -> TriangleMesh:
    """Re-wrap a periodic mesh on the sublattice with basis rows B @ cell
    (B an integer matrix with nonzero determinant)."""
    B = np.asarray(B, np.int64).reshape(3, 3)
    det = int(round(np.linalg.det(B)))
    if det == 0:
        raise DomainError("singular supercell matrix")
    Binv = np.linalg.inv(B.astype(float))
    corners = np.array([[i, j, k] for i in (0, 1) for j in (0, 1) for k in (0, 1)]) @ B
    lo, hi = corners.min(axis=0), corners.max(axis=0)
    reps = []
    for n in np.ndindex(*(hi - lo + 1)):
        n = np.array(n) + lo
        f = n @ Binv
        if np.all(f > -1e-9) and np.all(f < 1 - 1e-9):
            reps.append(tuple(int(x) for x in n))
    if len(reps) != abs(det):
        raise ContractError("coset enumeration failed")
    rep_index = {r: i for i, r in enumerate(reps)}
    nv = mesh.n_vertices

    def reduce(v, n):
        m = np.floor(np.asarray(n) @ Binv + 1e-9).astype(np.int64)
        r = tuple(int(x) for x in np.asarray(n) - m @ B)
        return rep_index[r] * nv + v, m

    sh = mesh.shifts
    faces, shifts = [], []
    for r in reps:
        r = np.array(r)
        for f, tri in enumerate(mesh.faces):
            fv, fs = zip(*(reduce(int(tri[j]), r + sh[f, j]) for j in range(3)))
            faces.append(fv)
            shifts.append(fs)
    lines = []
    for ids, lsh in mesh.lines:
        lsh = np.zeros((len(ids), 3), np.int64) if lsh is None else np.asarray(lsh)
        for r in reps:
            red = [reduce(int(v), np.array(r) + s) for v, s in zip(ids, lsh)]
            lines.append((np.array([a for a, _ in red]), np.array([b for _, b in red])))
    out = mesh.copy()
    out.vertices = np.concatenate([mesh.vertices + np.array(r) @ mesh.cell for r in reps])
    out.constraints = list(mesh.constraints) * len(reps)
    out.marks = {k: np.tile(m, len(reps)) for k, m in mesh.marks.items()}
    out.faces = np.array(faces, np.int64)
    out.shifts = np.array(shifts, np.int64)
    out.cell = B @ mesh.cell
    out.periodic = (True, True, True)
    out.lines = lines
    return out


def change_frame(mesh: TriangleMesh, op: SymmetryOp) -> TriangleMesh:
    """Apply a motion to a mesh, periodic or not (cell vectors rotate)."""
    out = mesh.copy()
    out.vertices = op.apply(mesh.vertices)
    out.planes = [p.transformed(op) for p in mesh.planes]
    if mesh.cell is not None:
        out.cell = mesh.cell @ op.linear.T
    if np.linalg.det(op.linear) < 0:
        out.faces = out.faces[:, ::-1].copy()
        if out.shifts is not None:
            out.shifts = out.shifts[:, ::-1].copy()
    return out


def unwrapped(mesh: TriangleMesh) -> TriangleMesh:
    """Non-periodic copy: every used (vertex, shift) pair is its own vertex."""
    out = mesh
    for ax in range(3):
        out = unwrap_axis(out, ax)
    out = out.copy()
    out.cell, out.shifts, out.periodic = None, None, (False, False, False)
    return out


# ---------------------------------------------------------------------------
# builders

SQRT2 = math.sqrt(2.0)
SQRT3 = math.sqrt(3.0)

# vertical faces of the prism over the triangle (1,0), (-1,0), (0,sqrt 3)
PRISM_PLANES = (
    PlaneConstraint((SQRT3, 1.0, 0.0), SQRT3, "free"),  # y + sqrt3 x = sqrt3
    PlaneConstraint((-SQRT3, 1.0, 0.0), SQRT3, "free"),  # y - sqrt3 x = sqrt3
    PlaneConstraint((0.0, 1.0, 0.0), 0.0, "free"),  # y = 0
)


def _t0() -> float:
    from .weierstrass import find_extrema

    global _T0
    if _T0 is None:
        _T0 = find_extrema().t0
    return _T0


_T0 = None


def catenoid_unit_corners(h: float) -> dict:
    return {
        "A": np.array([1.0, 0.0, 0.0]),
        "B": np.array([-0.5, SQRT3 / 2, 0.0]),
        "C": np.array([-1.0, 0.0, h]),
        "D": np.array([0.5, SQRT3 / 2, h]),
    }


def catenoid_unit_rotations(h: float) -> tuple[SymmetryOp, SymmetryOp]:
    """Half-turns a (about AB) and b (about CD)."""
    c = catenoid_unit_corners(h)
    return SymmetryOp.rotation(c["A"], c["B"]), SymmetryOp.rotation(c["C"], c["D"])


def build_catenoid_unit_boundary(t: float) -> TriangleMesh:
    """Coarse strip between the segments AB (bottom) and CD (top), with the
    sides free on the planes y + sqrt3 x = sqrt3 (through A, D) and
    y - sqrt3 x = sqrt3 (through B, C). A and C carry the mark "flat"."""
    from .weierstrass import catenoid_height

    t = float(t)
    if not math.isfinite(t) or t <= _t0():
        raise DomainError(f"area descent needs t > t_0 = {_t0():.6f}")
    h = catenoid_height(t)
    c = catenoid_unit_corners(h)
    A, B, C, D = c["A"], c["B"], c["C"], c["D"]
    # 3x3 grid: rows bottom (A..B), middle, top (D..C)
    rows = [[A, (A + B) / 2, B], [(A + D) / 2, (A + B + C + D) / 4, (B + C) / 2], [D, (D + C) / 2, C]]
    verts = np.array([p for row in rows for p in row])
    idx = lambda r, k: 3 * r + k
    faces = []
    for r in range(2):
        for k in range(2):
            a, b, cc, d = idx(r, k), idx(r, k + 1), idx(r + 1, k + 1), idx(r + 1, k)
            faces += [(a, b, cc), (a, cc, d)]
    ab_dir = B - A
    cd_dir = D - C
    planes = [
        PlaneConstraint((0, 0, 1), 0.0, "fixed"),
        PlaneConstraint((-ab_dir[1], ab_dir[0], 0), float(np.cross([0, 0, 1], ab_dir) @ A), "fixed"),
        PlaneConstraint((0, 0, 1), h, "fixed"),
        PlaneConstraint((-cd_dir[1], cd_dir[0], 0), float(np.cross([0, 0, 1], cd_dir) @ C), "fixed"),
        PRISM_PLANES[0],
        PRISM_PLANES[1],
    ]
    AB, CD, P1, P2 = {0, 1}, {2, 3}, {4}, {5}
    cons = [AB | P1, AB, AB | P2, P1, set(), P2, CD | P1, CD, CD | P2]
    flat = np.zeros(9, bool)
    flat[[idx(0, 0), idx(2, 2)]] = True
    m = TriangleMesh(verts, faces, cons, planes, {"flat": flat})
    if m.constraint_violation() > 1e-12:
        raise ContractError("corner vertices off their planes")
    return m


def slab_word(delta: int) -> str:
    """"ba" repeated k times for delta = 4k-1, followed by "b" for delta = 4k+1."""
    if delta < 1 or delta % 2 == 0:
        raise DomainError("delta must be an odd positive integer")
    k, r = divmod(delta + 1, 4)
    return "ba" * k if r == 0 else "ba" * k + "b"


def slab_transforms(a: SymmetryOp, b: SymmetryOp, delta: int) -> list[SymmetryOp]:
    """Start from the identity; each letter L adds L o g for every g so far."""
    if not (a.is_involution() and b.is_involution()):
        raise DomainError("slab generators must be involutions")
    ops = [SymmetryOp.identity()]
    for letter in slab_word(delta):
        g = a if letter == "a" else b
        for op in list(ops):
            new = g @ op
            if not any(_same_op(new, o) for o in ops):
                ops.append(new)
    return ops


def _same_op(p: SymmetryOp, q: SymmetryOp, tol: float = 1e-9) -> bool:
    return bool(np.max(np.abs(p.linear - q.linear)) < tol and np.max(np.abs(p.translation - q.translation)) < tol)


def generate_slab(mesh: TriangleMesh, a: SymmetryOp, b: SymmetryOp, delta: int) -> TriangleMesh:
    """delta+1 copies of a unit under the words in a, b, welded into one
    mesh. Fixed-boundary tags are dropped where a segment became interior."""
    copies = [transform(mesh, op) for op in slab_transforms(a, b, delta)]
    out = weld(merge(copies))
    # a vertex stays fixed only while it ends a boundary edge that still
    # lies on a fixed segment (both ends share a fixed plane)
    fixed_ids = {i for i, p in enumerate(out.planes) if p.kind == "fixed"}
    keep = np.zeros(out.n_vertices, bool)
    for u, v, _ in out.boundary_edges():
        if out.constraints[u] & out.constraints[v] & fixed_ids:
            keep[u] = keep[v] = True
    out.constraints = [c if keep[v] else c - fixed_ids for v, c in enumerate(out.constraints)]
    return orient_consistently(out)


def _cubic_polyhedral(c: float, n_planes: int, third: np.ndarray, third_grid: tuple) -> TriangleMesh:
    """Horizontal planes z = j/sqrt2 on the rhombic lattice (+-sqrt2, c, 0),
    each cut into four rhombi, joined by rhombic tubes that step through
    R00, R10, R11, R01. Grid point (i, k, j) sits at (i a1 + k a2)/2 + j/sqrt2 e_z."""
    if not (math.isfinite(c) and c > 0):
        raise DomainError("c must be positive")
    a1 = np.array([SQRT2, c, 0.0])
    a2 = np.array([-SQRT2, c, 0.0])
    cell = np.array([a1, a2, third])
    pgrid = np.array([[2, 0, 0], [0, 2, 0], list(third_grid)], np.int64)
    pinv = np.linalg.inv(pgrid.astype(float))
    embed = lambda g: (g[0] * a1 + g[1] * a2) / 2 + np.array([0, 0, g[2] / SQRT2])

    canon = {}
    verts = []

    def vertex(g):
        g = np.asarray(g, np.int64)
        s = np.floor(g @ pinv + 1e-9).astype(np.int64)
        r = tuple(int(x) for x in g - s @ pgrid)
        if r not in canon:
            canon[r] = len(verts)
            verts.append(embed(r))
        return canon[r], s

    seq = [(0, 0), (1, 0), (1, 1), (0, 1)]
    quads = []
    rh = lambda i, k, j: [(i, k, j), (i + 1, k, j), (i + 1, k + 1, j), (i, k + 1, j)]
    kept_by_plane = {}
    for j in range(n_planes):
        skip = {seq[j % 4], seq[(j - 1) % 4]}
        kept = [(i, k) for i in (0, 1) for k in (0, 1) if (i, k) not in skip]
        kept_by_plane[j] = kept
        quads += [rh(i, k, j) for i, k in kept]
        i, k = seq[j % 4]
        ring = rh(i, k, j)
        for q in range(4):
            p0, p1 = ring[q], ring[(q + 1) % 4]
            quads.append([p0, p1, (p1[0], p1[1], j + 1), (p0[0], p0[1], j + 1)])
    # corner vertices first so their ids are stable
    for q in quads:
        for g in q:
            vertex(g)
    faces, shifts, cons = [], [], []
    n_corner = len(verts)
    for q in quads:
        ids, sh = zip(*(vertex(g) for g in q))
        s0 = sh[0]
        ctr = np.mean([embed(g) for g in q], axis=0) - s0 @ cell
        cid = len(verts)
        verts.append(ctr)
        for t in range(4):
            faces.append((ids[t], ids[(t + 1) % 4], cid))
            shifts.append((sh[t], sh[(t + 1) % 4], s0))
    # grid lines through the edges shared by the two kept rhombi of a plane
    lines = []
    for j, kept in kept_by_plane.items():
        (i1, k1), (i2, k2) = kept
        if i1 == i2:  # stacked in k: shared edges run along a1 at k = max
            kk = max(k1, k2)
            for k0 in (kk, kk + 1):
                pts = [(i, k0, j) for i in range(3)]
                lines.append(pts)
        else:
            ii = max(i1, i2)
            for i0 in (ii, ii + 1):
                pts = [(i0, k, j) for k in range(3)]
                lines.append(pts)
    line_data = []
    for pts in lines:
        ids, sh = zip(*(vertex(g) for g in pts))
        line_data.append((np.array(ids), np.array(sh)))
    nv = len(verts)
    m = TriangleMesh(
        np.array(verts),
        np.array(faces),
        [frozenset()] * nv,
        [],
        {"lattice": np.arange(nv) < n_corner},
        cell,
        (True, True, True),
        np.array(shifts),
        line_data,
    )
    return orient_consistently(m)


def build_monoclinic_polyhedral_g(c: float = 1.0) -> TriangleMesh:
    """Cubic-polyhedral start for G (c = 1) through D (c = sqrt 2): four
    planes in the cell (+-sqrt2, c, 0), (0, 0, 2 sqrt2)."""
    return _cubic_polyhedral(c, 4, np.array([0.0, 0.0, 2 * SQRT2]), (0, 0, 4))


def build_triclinic_polyhedral(c: float = 1.0) -> TriangleMesh:
    """Two-plane version in the cell (+-sqrt2, c, 0), (0, c, sqrt2)."""
    return _cubic_polyhedral(c, 2, np.array([0.0, c, SQRT2]), (1, 1, 2))


# ---------------------------------------------------------------------------
# I/O (17 significant digits)

_FMT = "%.17g"


def _export_arrays(mesh: TriangleMesh, scalars: dict | None = None):
    if mesh.cell is None:
        return mesh.vertices, mesh.faces, scalars or {}
    flat = unwrapped(mesh)
    # unwrapped vertices are ordered by first use; recover their source index
    src = _unwrap_sources(mesh)
    sc = {k: np.asarray(v)[src] for k, v in (scalars or {}).items()}
    return flat.vertices, flat.faces, sc


def _unwrap_sources(mesh: TriangleMesh) -> np.ndarray:
    m = mesh.copy()
    m.marks = {"_src": np.zeros(mesh.n_vertices, bool)}
    tag = np.arange(mesh.n_vertices, dtype=float)
    m.vertices = np.column_stack([tag, np.zeros((mesh.n_vertices, 2))])
    m.cell = np.zeros((3, 3))
    for ax in range(3):
        m = unwrap_axis(m, ax)
    return m.vertices[:, 0].round().astype(np.int64)


def write_off(path, mesh: TriangleMesh) -> None:
    v, f, _ = _export_arrays(mesh)
    with open(path, "w") as fh:
        fh.write(f"OFF\n{len(v)} {len(f)} 0\n")
        for p in v:
            fh.write(" ".join(_FMT % x for x in p) + "\n")
        for t in f:
            fh.write("3 %d %d %d\n" % tuple(t))


def read_off(path) -> TriangleMesh:
    with open(path) as fh:
        tokens = [ln.split("#")[0].split() for ln in fh]
    tokens = [t for t in tokens if t]
    head = tokens[0]
    if head[0] != "OFF":
        raise DomainError("not an OFF file")
    counts = head[1:] if len(head) > 1 else tokens[1]
    start = 1 if len(head) > 1 else 2
    nv, nf = int(counts[0]), int(counts[1])
    verts = np.array([[float(x) for x in t[:3]] for t in tokens[start:start + nv]])
    faces = []
    for t in tokens[start + nv:start + nv + nf]:
        k = int(t[0])
        poly = [int(x) for x in t[1:1 + k]]
        faces += [(poly[0], poly[j], poly[j + 1]) for j in range(1, k - 1)]
    return TriangleMesh(verts.reshape(-1, 3), np.array(faces, np.int64).reshape(-1, 3))


def write_obj(path, mesh: TriangleMesh) -> None:
    v, f, _ = _export_arrays(mesh)
    with open(path, "w") as fh:
        for p in v:
            fh.write("v " + " ".join(_FMT % x for x in p) + "\n")
        for t in f:
            fh.write("f %d %d %d\n" % tuple(t + 1))


def write_ply(path, mesh: TriangleMesh, scalars: dict | None = None) -> None:
    """ASCII PLY; ``scalars`` maps channel names (e.g. "deviation") to
    per-vertex values."""
    v, f, sc = _export_arrays(mesh, scalars)
    names = list(sc)
    with open(path, "w") as fh:
        fh.write("ply\nformat ascii 1.0\n")
        fh.write(f"element vertex {len(v)}\n")
        fh.write("property double x\nproperty double y\nproperty double z\n")
        for n in names:
            fh.write(f"property double {n}\n")
        fh.write(f"element face {len(f)}\nproperty list uchar int vertex_indices\nend_header\n")
        cols = [v] + [np.asarray(sc[n], float).reshape(-1, 1) for n in names]
        for row in np.hstack(cols):
            fh.write(" ".join(_FMT % x for x in row) + "\n")
        for t in f:
            fh.write("3 %d %d %d\n" % tuple(t))


def read_ply_scalars(path) -> tuple[np.ndarray, dict]:
    """Vertex positions and scalar channels from an ASCII PLY written by
    :func:`write_ply`."""
    with open(path) as fh:
        lines = fh.read().splitlines()
    props, nv, i = [], 0, 0
    while lines[i] != "end_header":
        parts = lines[i].split()
        if parts[:2] == ["element", "vertex"]:
            nv = int(parts[2])
        elif parts[0] == "property" and parts[1] != "list" and len(props) < 64:
            props.append(parts[2])
        i += 1
    data = np.array([[float(x) for x in ln.split()] for ln in lines[i + 1:i + 1 + nv]])
    return data[:, :3], {n: data[:, 3 + j] for j, n in enumerate(props[3:])}
