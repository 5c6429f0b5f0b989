"""Path quadrature for holomorphic 1-forms along polylines.

Composite Gauss-Legendre panels with panel doubling until two successive
estimates agree. Nodes are produced in path order so that callers can track
multivalued integrands (branch continuation) along the path. Endpoint
singularities of type (z - z0)^(-k/n) are absorbed by the substitution
u = 1 - (1 - v)^n.
"""
from __future__ import annotations

from typing import Callable, NamedTuple, Sequence

import numpy as np

from .errors import QuadratureError

_GL_X, _GL_W = np.polynomial.legendre.leggauss(20)


def _nodes(panels: int, power_start: int, power_end: int):
    """Parameter nodes u in (0, 1) in increasing order, their complements
    1 - u (kept separately for accuracy near the end), and weights du."""
    edges = np.linspace(0.0, 1.0, panels + 1)
    lo, hi = edges[:-1, None], edges[1:, None]
    v = (lo + (_GL_X[None, :] + 1.0) * 0.5 * (hi - lo)).ravel()
    w = (_GL_W[None, :] * 0.5 * (hi - lo)).ravel()
    # endpoint substitutions on each half of the parameter interval
    a, b = max(power_start, 1), max(power_end, 1)
    left = v < 0.5
    u = np.empty_like(v)
    uc = np.empty_like(v)
    du = np.empty_like(v)
    s = v[left] / 0.5
    u[left] = 0.5 * s**a
    uc[left] = 1.0 - u[left]
    du[left] = w[left] * a * s ** (a - 1)
    s = (1.0 - v[~left]) / 0.5
    uc[~left] = 0.5 * s**b
    u[~left] = 1.0 - uc[~left]
    du[~left] = w[~left] * b * s ** (b - 1)
    return u, uc, du, left


class PathNodes(NamedTuple):
    """Quadrature nodes in path order: z = points[vertex] + offset."""

    z: np.ndarray
    vertex: np.ndarray
    offset: np.ndarray


def segment_nodes(a: complex, b: complex, panels: int, singular_start: int = 1, singular_end: int = 1):
    u, uc, du, left = _nodes(panels, singular_start, singular_end)
    z = np.where(left, a + (b - a) * u, b - (b - a) * uc)
    return z, (b - a) * du


def _segment_split(a, b, panels, sa, sb):
    u, uc, du, left = _nodes(panels, sa, sb)
    off = np.where(left, (b - a) * u, -(b - a) * uc)
    return off, left, (b - a) * du


def integrate_path(
    integrand: Callable[[PathNodes], np.ndarray],
    points: Sequence[complex],
    singular: Sequence[int] | None = None,
    tol: float = 1e-11,
    panels: int = 4,
    max_panels: int = 4096,
) -> np.ndarray:
    """Integrate ``integrand(nodes) -> (m, n_nodes)`` along a polyline.

    ``singular[j]`` is the substitution power n at vertex j (1 = regular).
    Returns the m-vector of complex integrals.
    """
    pts = [complex(p) for p in points]
    if len(pts) < 2:
        z0 = np.array([pts[0] if pts else 0j])
        k = np.asarray(integrand(PathNodes(z0, np.zeros(1, int), np.zeros(1, complex)))).shape[0]
        return np.zeros(k, complex)
    sing = list(singular) if singular is not None else [1] * len(pts)

    def estimate(np_: int):
        offs, verts, ws = [], [], []
        for j in range(len(pts) - 1):
            off, left, w = _segment_split(pts[j], pts[j + 1], np_, sing[j], sing[j + 1])
            offs.append(off)
            verts.append(np.where(left, j, j + 1))
            ws.append(w)
        off = np.concatenate(offs)
        vert = np.concatenate(verts)
        w = np.concatenate(ws)
        z = np.asarray(pts)[vert] + off
        vals = np.atleast_2d(integrand(PathNodes(z, vert, off)))
        return vals @ w

    prev = estimate(panels)
    while panels < max_panels:
        panels *= 2
        cur = estimate(panels)
        if np.max(np.abs(cur - prev)) <= tol * max(1.0, float(np.max(np.abs(cur)))):
            return cur
        prev = cur
    raise QuadratureError(f"path quadrature did not converge to {tol}")
