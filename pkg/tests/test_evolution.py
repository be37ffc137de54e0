import numpy as np
import pytest

from helpers import uniaxial_problem
from stagfrac.constitutive import BoundaryDatum, Model, TimeGrid
from stagfrac.energetics import Problem, assemble_energy, assemble_gradients, slopes
from stagfrac.evolution import (StaggeredError, StaggerOptions, arc_nodes, evolve, initial_state, parametrize,
                                staggered_step)
from stagfrac.mesh import build_rect_mesh


def homogeneous(n=4):
    return uniaxial_problem(n, n, eta=0.01)


def closed_form(times, z0=1.0):
    z, out = z0, []
    for t in times:
        z = min(z, 1.0 / (1.0 + 1.5 * t * t))
        out.append(z)
    return np.array(out)


def flat_problem(n=3):
    mesh = build_rect_mesh(n, n, 1.0, 1.0, {"left": "xy"})
    datum = BoundaryDatum.from_breakpoints([[1.0, 0.0], [0.0, 0.0]], [0.0, 0.0], [[0.0, 0.0], [1.0, 0.0]])
    return Problem(mesh, Model.create(1.0, 2.0, 0.01), datum)


def banded_problem():
    """Small strip with a weakened column; every node moves both fields."""
    mesh = build_rect_mesh(8, 4, 4.0, 2.0, {"left": "xy", "right": "xy"})
    datum = BoundaryDatum.from_breakpoints([[0.25, 0.0], [0.0, 0.0]], [0.0, 0.0], [[0.0, 0.0], [1.0, 1.2]])
    pr = Problem(mesh, Model.create(1.0, 2.0, 0.01), datum)
    z0 = np.ones(mesh.node_count)
    z0[(np.abs(mesh.nodes[:, 0] - 2.0) < 1e-12) & (mesh.nodes[:, 1] <= 1.0 + 1e-12)] = 0.05
    return pr, z0


class TestArcNodes:
    def test_hand_example(self):
        s = arc_nodes(0.25, [0.1, 0.02], [0.3, 0.05])
        assert s == pytest.approx([0.0, 0.25, 0.35, 0.65, 0.67, 0.72], abs=1e-15)

    def test_offset(self):
        assert arc_nodes(0.5, [], [], s0=2.0) == [2.0, 2.5]


class TestInitialState:
    def test_intact_unloaded(self):
        pr = homogeneous(3)
        n = pr.mesh.node_count
        state, rec = initial_state(pr, np.ones(n))
        assert not np.any(state.u)
        np.testing.assert_array_equal(state.z, 1.0)
        assert rec.slope_u == 0.0
        assert rec.slope_z <= 1e-14  # stiffness row sums vanish up to roundoff

    def test_constant_damage_is_kept(self):
        pr = homogeneous(3)
        n = pr.mesh.node_count
        state, _ = initial_state(pr, np.full(n, 0.4))
        np.testing.assert_allclose(state.z, 0.4, atol=1e-14)

    def test_arbitrary_field_kkt(self, rng):
        pr = homogeneous(3)
        z0 = rng.uniform(0.2, 1.0, pr.mesh.node_count)
        state, rec = initial_state(pr, z0)
        assert not np.any(state.u)
        assert np.all(state.z <= z0)
        _, g_z = assemble_gradients(pr, 0.0, state.u, state.z)
        # the obstacle binds wherever z0 was kept, and there the gradient pushes upward
        kept = state.z == z0
        assert np.all(g_z[kept] <= 1e-8)
        assert rec.slope_z <= 1e-8

    def test_initial_energy_is_dissipation(self, rng):
        pr = homogeneous(3)
        state, _ = initial_state(pr, rng.uniform(0.2, 1.0, pr.mesh.node_count))
        eb = assemble_energy(pr, 0.0, state.u, state.z)
        assert eb.elastic == 0.0
        assert eb.total == eb.dissipation

    def test_size_mismatch(self):
        with pytest.raises(ValueError):
            initial_state(homogeneous(2), np.ones(3))


class TestStaggeredStep:
    def test_flat_ramp_is_fixed_point(self):
        pr = flat_problem()
        n = pr.mesh.node_count
        rec = staggered_step(pr, 1, 0.5, np.zeros(2 * n), np.ones(n))
        assert rec.iterations == 1
        assert rec.chords_u == [0.0] and rec.chords_z == [0.0]

    @pytest.mark.parametrize("t", [0.25, 0.5, 1.0])
    def test_homogeneous_two_sweeps(self, t):
        pr = homogeneous()
        n = pr.mesh.node_count
        rec = staggered_step(pr, 1, t, np.zeros(2 * n), np.ones(n))
        assert rec.iterations == 2
        assert pr.h1_norm(rec.u) <= 1e-12
        np.testing.assert_allclose(rec.z, 1.0 / (1.0 + 1.5 * t * t), atol=1e-12)

    def test_energy_chain(self):
        pr, z0 = banded_problem()
        n = pr.mesh.node_count
        rec = staggered_step(pr, 1, 0.75, np.zeros(2 * n), z0)
        assert rec.iterations > 2
        e = np.array(rec.energies)
        assert np.all(np.diff(e) <= 1e-12 * abs(e[0]))
        for a, b in zip(rec.z_iterates, rec.z_iterates[1:]):
            assert np.all(b <= a)
        F = rec.energy
        assert rec.slope_u <= 1e-6 * (1 + abs(F)) and rec.slope_z <= 1e-6 * (1 + abs(F))

    def test_budget_exhausted(self):
        pr = homogeneous(2)
        n = pr.mesh.node_count
        with pytest.raises(StaggeredError) as info:
            staggered_step(pr, 3, 0.5, np.zeros(2 * n), np.ones(n), StaggerOptions(max_inner=1))
        assert info.value.node == 3
        assert info.value.record.iterations == 1

    def test_out_of_range_phase_field(self):
        pr = homogeneous(2)
        n = pr.mesh.node_count
        with pytest.raises(ValueError):
            staggered_step(pr, 1, 0.5, np.zeros(2 * n), np.full(n, 1.1))


class TestEvolve:
    def test_flat_single_step(self):
        pr = flat_problem()
        n = pr.mesh.node_count
        evo = evolve(pr, TimeGrid(1.0, 1), np.ones(n))
        assert len(evo.records) == 1
        np.testing.assert_array_equal(evo.final.z, 1.0)
        assert not np.any(evo.final.u)

    @pytest.mark.parametrize("k", [4, 8])
    def test_homogeneous_closed_form(self, k):
        pr = homogeneous()
        grid = TimeGrid(1.0, k)
        evo = evolve(pr, grid, np.ones(pr.mesh.node_count))
        expected = closed_form(grid.nodes[1:])
        for rec, zc in zip(evo.records, expected):
            assert pr.h1_norm(rec.u) <= 1e-8
            assert np.max(np.abs(rec.z - zc)) <= 1e-6

    def test_irreversibility_and_bounds(self):
        pr, z0 = banded_problem()
        evo = evolve(pr, TimeGrid(1.0, 4), z0)
        prev = evo.initial.z
        for rec in evo.records:
            assert np.all(rec.z <= prev + 1e-12)
            for z in rec.z_iterates:
                assert z.min() >= -1e-12 and z.max() <= 1 + 1e-12
            prev = rec.z

    def test_streaming_callback(self):
        pr = homogeneous(2)
        seen = []
        evolve(pr, TimeGrid(1.0, 3), np.ones(pr.mesh.node_count), on_record=lambda r: seen.append(r.i))
        assert seen == [1, 2, 3]

    def test_ramp_must_cover_horizon(self):
        pr = homogeneous(2)
        with pytest.raises(ValueError):
            evolve(pr, TimeGrid(2.0, 2), np.ones(pr.mesh.node_count))

    def test_error_carries_node(self):
        pr = homogeneous(2)
        with pytest.raises(StaggeredError) as info:
            evolve(pr, TimeGrid(1.0, 4), np.ones(pr.mesh.node_count), StaggerOptions(max_inner=1))
        assert info.value.node == 1


class TestParametrize:
    def test_flat_ramp_time_only(self):
        pr = flat_problem()
        evo = evolve(pr, TimeGrid(1.0, 4), np.ones(pr.mesh.node_count))
        traj = parametrize(pr, evo)
        assert [s.kind for s in traj.segments] == ["time"] * 4
        assert traj.total_length == pytest.approx(1.0, abs=1e-15)

    def test_node_recursion_matches_segments(self):
        pr, z0 = banded_problem()
        evo = evolve(pr, TimeGrid(1.0, 2), z0)
        traj = parametrize(pr, evo)
        s = 0.0
        for rec in evo.records:
            nodes = arc_nodes(evo.grid.tau, rec.chords_u, rec.chords_z, s)
            s = nodes[-1]
        assert traj.total_length == pytest.approx(s, rel=1e-14)
        assert np.all(np.diff(traj.s_values()) > 0)

    def test_one_field_per_segment(self):
        pr, z0 = banded_problem()
        evo = evolve(pr, TimeGrid(1.0, 2), z0)
        for seg in parametrize(pr, evo).segments:
            moved = {"time": seg.start.t != seg.end.t, "u": not np.array_equal(seg.start.u, seg.end.u),
                     "z": not np.array_equal(seg.start.z, seg.end.z)}
            assert [k for k, v in moved.items() if v] == [seg.kind]
            assert seg.speed <= 1 + 1e-12
            if seg.kind == "time":
                assert seg.length == pytest.approx(evo.grid.tau, rel=1e-14)

    def test_homogeneous_flow_mode_has_no_u_segments(self):
        pr = homogeneous(2)
        evo = evolve(pr, TimeGrid(1.0, 4), np.ones(pr.mesh.node_count))
        traj = parametrize(pr, evo, "flow", (0.2, 0.01))
        kinds = [s.kind for s in traj.segments]
        assert "u" not in kinds
        assert kinds == ["time", "z"] * 4

    def test_energy_norm_mode_requires_quadratic(self):
        pr = uniaxial_problem(2, 2, eta=0.01, h="quartic")
        evo = evolve(pr, TimeGrid(1.0, 2), np.ones(pr.mesh.node_count))
        with pytest.raises(ValueError):
            parametrize(pr, evo, "energy-norm-chord")
        parametrize(pr, evo, "chord")

    def test_unknown_mode(self):
        pr = flat_problem(2)
        evo = evolve(pr, TimeGrid(1.0, 1), np.ones(pr.mesh.node_count))
        with pytest.raises(ValueError):
            parametrize(pr, evo, "spline")

    def test_total_length_bounded_under_refinement(self):
        pr = homogeneous()
        S = []
        for k in (4, 8, 16):
            evo = evolve(pr, TimeGrid(1.0, k), np.ones(pr.mesh.node_count))
            S.append(parametrize(pr, evo).total_length)
        assert S[1] <= 2 * S[0] and S[2] <= 2 * S[1]
        assert max(S) / min(S) - 1 <= 0.5
