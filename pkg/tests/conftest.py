"""Shared fixtures: small meshes, cached pipeline runs and the acceptance
report printed at the end of the session."""
from __future__ import annotations

import math

import numpy as np
import pytest

from twintpms import mesh as M
from twintpms import pipelines as P

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def report(capsys):
    """Record one pass/fail line per criterion, echoed live and again in
    the terminal summary."""

    def emit(n: int, ok: bool, detail: str) -> None:
        line = f"CRITERION {n:>2}: {'PASS' if ok else 'FAIL'} | {detail}"
        ACCEPTANCE_LINES.append(line)
        with capsys.disabled():
            print("\n" + line, flush=True)

    return emit


# ---------------------------------------------------------------------------
# meshes built independently of the package's builders


def icosahedron() -> M.TriangleMesh:
    g = (1 + math.sqrt(5)) / 2
    v = np.array([[-1, g, 0], [1, g, 0], [-1, -g, 0], [1, -g, 0], [0, -1, g], [0, 1, g],
                  [0, -1, -g], [0, 1, -g], [g, 0, -1], [g, 0, 1], [-g, 0, -1], [-g, 0, 1]], float)
    f = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11), (1, 5, 9), (5, 11, 4), (11, 10, 2),
         (10, 7, 6), (7, 1, 8), (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9), (4, 9, 5),
         (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    return M.TriangleMesh(v / np.linalg.norm(v, axis=1)[:, None], f)


def icosphere(levels: int) -> M.TriangleMesh:
    m = icosahedron()
    for _ in range(levels):
        m = M.refine(m)
        m.vertices /= np.linalg.norm(m.vertices, axis=1)[:, None]
    return m


def grid(n: int = 4, size: float = 1.0) -> M.TriangleMesh:
    """Flat n x n square grid in the plane z = 0, split along one diagonal."""
    xs = np.linspace(0, size, n + 1)
    X, Y = np.meshgrid(xs, xs, indexing="ij")
    v = np.column_stack([X.ravel(), Y.ravel(), np.zeros(X.size)])
    idx = lambda i, j: i * (n + 1) + j
    f = []
    for i in range(n):
        for j in range(n):
            f += [(idx(i, j), idx(i + 1, j), idx(i + 1, j + 1)), (idx(i, j), idx(i + 1, j + 1), idx(i, j + 1))]
    return M.TriangleMesh(v, f)


# ---------------------------------------------------------------------------
# pipeline runs shared by several test modules (computed on first use)

_RUNS: dict = {}

RUN_RECIPES = {
    "d3": lambda: P.rpd_twin(math.sqrt(0.5), 3, 4),
    "d3r5": lambda: P.rpd_twin(math.sqrt(0.5), 3, 5),
    "d5": lambda: P.rpd_twin(math.sqrt(0.5), 5, 4),
    "d11": lambda: P.rpd_twin(math.sqrt(0.5), 11, 4),
    "p3": lambda: P.rpd_twin(math.sqrt(2.0), 3, 4),
    "p5": lambda: P.rpd_twin(math.sqrt(2.0), 5, 4),
    "h1": lambda: P.rpd_twin(math.sqrt(0.5), 1, 3),
    "g": lambda: P.g_surface(3),
    "stretch_d": lambda: P.stretch_family([math.sqrt(2.0)], 3)[0],
    "g1": lambda: P.g_twin(1, 3),
    "g5": lambda: P.g_twin(5, 3),
}


def run(name: str):
    """Result of a named pipeline run, computed once per session."""
    if name not in _RUNS:
        import time

        t0 = time.monotonic()
        out = RUN_RECIPES[name]()
        _RUNS[name] = (out, time.monotonic() - t0)
    return _RUNS[name][0]


def run_time(name: str) -> float:
    run(name)
    return _RUNS[name][1]


@pytest.fixture(scope="session")
def runs():
    return run
