import json
import math

import numpy as np
import pytest

from twintpms import mesh as M
from twintpms import pipelines as P
from twintpms import weierstrass as W
from twintpms.errors import ContractError, DomainError

from conftest import grid, run

STATUSES = {"converged", "stalled", "degenerate"}


class TestDeviation:
    def test_self_zero(self):
        g = grid(4)
        assert P.deviation(g, g).max_abs < 1e-15

    @pytest.mark.parametrize("d", [0.1, -0.25])
    def test_shifted_plane(self, d):
        g = grid(6)
        moved = g.copy()
        moved.vertices[:, 2] += d
        dev = P.deviation(moved, g)
        assert np.max(np.abs(np.abs(dev.values) - abs(d))) < 1e-14
        assert np.all(np.sign(dev.values) == np.sign(dev.values[0]))

    def test_swap_roles_magnitude(self):
        a = grid(5)
        b = grid(3)
        b.vertices[:, 2] += 0.3
        ab, ba = P.deviation(a, b), P.deviation(b, a)
        assert abs(ab.max_abs - ba.max_abs) < 1e-14

    def test_orientation_flips_sign(self):
        g = grid(4)
        moved = g.copy()
        moved.vertices[:, 2] += 0.2
        flipped = g.copy()
        flipped.faces = flipped.faces[:, ::-1]
        assert np.allclose(P.deviation(moved, g).values, -P.deviation(moved, flipped).values, atol=1e-15)

    def test_empty_reference(self):
        empty = M.TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), int))
        with pytest.raises(ContractError):
            P.deviation(grid(2), empty)

    def test_binned(self):
        dev = P.DeviationField([3.0, -1.0, 2.0, 0.5])
        edges, vals = dev.binned(np.array([0.0, 0.1, 0.6, 0.9]), 2)
        assert len(edges) == 3 and np.allclose(vals, [3.0, 2.0])


class TestResultContracts:
    def test_converged_needs_threshold(self):
        with pytest.raises(ContractError):
            P.TwinRunResult(grid(2), 1.0, [], "converged")
        with pytest.raises(DomainError):
            P.TwinRunResult(grid(2), 1.0, [], "exploded")

    def test_bad_delta(self):
        with pytest.raises(DomainError):
            P.rpd_twin(math.sqrt(0.5), 4)
        with pytest.raises(DomainError):
            P.g_twin(0)

    def test_td_neck_model(self):
        m = P.build_td_necks(1.0, P.TD_RADIUS["large"])
        assert m.is_closed() and m.is_oriented()
        assert m.euler_characteristic() == -4
        with pytest.raises(DomainError):
            P.extended_td(1.0, "medium")

    def test_td_smoke(self):
        r = P.extended_td(1.0, "large", refinements=0, cycles=1)
        assert r.status in STATUSES
        assert math.isfinite(r.params["area_ratio"]) and r.params["branch"] == "large"


class TestRpd:
    def test_d3_heights(self):
        r = run("d3")
        assert r.status == "converged"
        p = r.p_estimates
        assert len(p) == 3
        assert np.allclose(p, [0.25064, 0.75, 1.24936], atol=2e-3)
        assert p == P.normalized_flat_heights(r)

    @pytest.mark.parametrize("name", ["d3", "d5", "p3"])
    def test_pairing(self, name):
        r = run(name)
        d = r.params["delta"]
        p = r.p_estimates
        for k in range(d):
            assert abs(p[k] + p[d - 1 - k] - d / 2) < 1e-3

    def test_h_single_flat_point(self):
        r = run("h1")
        assert r.status == "converged"
        assert len(r.p_estimates) == 1 and abs(r.p_estimates[0] - 0.25) < 1e-3

    def test_matched_tau_d(self):
        r = run("d3r5")
        exact = W.solve_period(W.tau_from_t(math.sqrt(0.5)), 3)
        assert abs(r.p_estimates[0] - exact[0]) < 1e-4

    @pytest.mark.parametrize("name", ["d3", "d5", "h1"])
    def test_declared_symmetries(self, name):
        r = run(name)
        for op in r.symmetries:
            assert P.symmetry_defect(r.mesh, op) < 1e-6
        for plane in r.planes:
            assert P.reflection_defect(r.mesh, plane) < 1e-6

    def test_invariants(self):
        r = run("d3")
        assert r.mesh.is_edge_manifold() and r.mesh.is_oriented()
        assert r.mesh.constraint_violation() < 1e-12
        assert r.trace.is_monotone()

    def test_d5_deviation_decays(self):
        # largest next to the twin boundary, small toward mid-slab
        dev, bins = P.twin_deviation(run("d5"))
        assert np.argmax(bins) == 0
        assert bins[-1] < 0.25 * bins[0]


class TestG:
    def test_g_converges(self):
        g, tr, status = run("g")
        assert status == "converged" and tr.final_energy < 1e-8
        assert g.is_closed() and g.is_oriented()

    def test_stretch_to_d(self):
        s = run("stretch_d")
        assert s.status == "converged" and s.line_residual < 1e-3

    def test_g1_symmetries(self):
        r = run("g1")
        assert r.symmetries
        for op in r.symmetries:
            assert P.symmetry_defect(r.mesh, op) < 1e-6
        od = P.od_symmetry(r)
        assert od["orthorhombic"] and od["point_group_order"] == 8

    def test_g5_deviation(self):
        r = run("g5")
        assert r.status == "converged"
        _, bins = P.twin_deviation(r)
        assert np.all(np.diff(bins) < 0)


def test_write_bundle(tmp_path):
    r = run("h1")
    dev = P.DeviationField(np.linspace(0, 1, r.mesh.n_vertices))
    man = P.write_bundle(r, tmp_path, "twin", {"kind": "h"}, dev)
    names = {p.name for p in tmp_path.iterdir()}
    assert names == {"mesh.off", "mesh.obj", "mesh.ply", "trace.csv", "manifest.json"}
    doc = json.loads((tmp_path / "manifest.json").read_text())
    assert doc["command"] == "twin" and doc["status"] == man.status
    _, sc = M.read_ply_scalars(tmp_path / "mesh.ply")
    assert np.array_equal(sc["deviation"], dev.values)
