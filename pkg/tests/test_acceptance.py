"""Acceptance gate: twelve property criteria at their stated tolerances.

Each test records its measured value; the session summary prints one
PASS/FAIL line per criterion (``pytest tests/test_acceptance.py``).
"""

from importlib import resources

import numpy as np
import pytest

from helpers import random_problem, random_state, record_criterion
from stagfrac.config import parse_config
from stagfrac.constitutive import BoundaryDatum, DegradationSpec, MaterialParams, Model, TimeGrid
from stagfrac.diagnostics import ledger, norm_comparison
from stagfrac.energetics import Problem, assemble_gradients, slopes, stress, total_energy
from stagfrac.evolution import evolve, parametrize
from stagfrac.mesh import build_rect_mesh
from stagfrac.pipeline import run
from stagfrac.subsolvers import SolveOptions, flow_u, flow_z, qp_active_set_oracle, solve_u, solve_z

BENCH = resources.files("stagfrac") / "benchmarks"


def load(name):
    with resources.as_file(BENCH / f"{name}.toml") as p:
        return parse_config(p)


def relative_gap(a, b):
    return abs(a - b) / max(abs(a), abs(b), 1e-300)


@pytest.fixture(scope="module")
def benchmarks(tmp_path_factory):
    """Chord-mode pipeline runs of both benchmarks, shared across criteria."""
    out = {}
    for name in ("homogeneous", "notched_strip"):
        cfg = load(name)
        out[name] = (cfg, run(cfg, tmp_path_factory.mktemp(name)))
    return out


class TestAcceptance:
    def test_01_gradient_consistency(self):
        rng = np.random.default_rng(1)
        worst = 0.0
        h = 1e-6
        for family in ("quadratic", "quartic"):
            pr = random_problem(rng, 8, 8, h=family)
            free = pr.mesh.free_dofs
            for _ in range(5):
                st = random_state(rng, pr)
                g_u, g_z = assemble_gradients(pr, st.t, st.u, st.z)
                for _ in range(20):
                    du = pr.expand(rng.normal(size=pr.n_free))
                    dz = rng.normal(size=pr.mesh.node_count)
                    fd_u = (total_energy(pr, st.t, st.u + h * du, st.z)
                            - total_energy(pr, st.t, st.u - h * du, st.z)) / (2 * h)
                    fd_z = (total_energy(pr, st.t, st.u, st.z + h * dz)
                            - total_energy(pr, st.t, st.u, st.z - h * dz)) / (2 * h)
                    worst = max(worst, relative_gap(fd_u, g_u @ du[free]), relative_gap(fd_z, g_z @ dz))
        assert record_criterion(1, "gradient consistency", worst <= 1e-6, f"max rel. error {worst:.2e} (<= 1e-6)")

    def test_02_constitutive_inequalities(self):
        rng = np.random.default_rng(2)
        n = 10_000
        worst_mono = worst_lip = np.inf
        for family in ("quadratic", "quartic"):
            p = MaterialParams(1.0, 2.0, 0.01)
            deg = DegradationSpec(family, p.eta)
            c0 = min(2 * p.mu * p.eta, p.kappa * min(p.eta, 1.0))
            C0 = 2 * max(p.mu, p.kappa) * max(float(deg.h(1.0)), 1.0)
            z = rng.uniform(0.0, 1.0, n)
            e1, e2 = rng.normal(size=(n, 3)), rng.normal(size=(n, 3))
            hz = np.asarray(deg.h(z), dtype=float)
            ds = stress(e1, hz, p.mu, p.kappa) - stress(e2, hz, p.mu, p.kappa)
            de = e1 - e2
            w = np.array([1.0, 1.0, 2.0])
            pair = (ds * de) @ w
            de2 = (de * de) @ w
            ds2 = (ds * ds) @ w
            # margins as ratios: >= 1 means the inequality holds
            worst_mono = min(worst_mono, float(np.min(pair / (c0 * de2))))
            worst_lip = min(worst_lip, float(np.min(C0 * np.sqrt(de2) / np.sqrt(ds2))))
        ok = worst_mono >= 1 - 1e-12 and worst_lip >= 1 - 1e-12
        assert record_criterion(2, "constitutive inequalities", ok,
                                f"min monotonicity ratio {worst_mono:.4f}, min Lipschitz ratio {worst_lip:.4f} (>= 1)")

    def test_03_oracle_equivalence(self):
        rng = np.random.default_rng(3)
        mesh = build_rect_mesh(2, 1, 1.0, 1.0, {"left": "xy"})
        assert mesh.node_count == 6
        worst = 0.0
        for _ in range(50):
            datum = BoundaryDatum.from_breakpoints(rng.normal(size=(2, 2)), rng.normal(size=2) * 0.1,
                                                   [[0.0, 0.0], [1.0, 1.0]])
            pr = Problem(mesh, Model.create(1.0, 2.0, 0.01), datum)
            u = pr.expand(rng.normal(size=pr.n_free))
            upper = rng.uniform(0.0, 1.0, 6)
            z = solve_z(pr, 1.0, u, upper, upper).z
            worst = max(worst, float(np.max(np.abs(z - qp_active_set_oracle(pr, 1.0, u, upper)))))
        assert record_criterion(3, "oracle equivalence", worst <= 1e-9, f"max nodal gap {worst:.2e} (<= 1e-9)")

    def test_04_equilibrium_at_nodes(self, benchmarks):
        worst = 0.0
        for cfg, res in benchmarks.values():
            pr = res.problem
            evo = res.evolution
            for rec in [evo.initial_record] + evo.records:
                sl = slopes(pr, rec.t, rec.u, rec.z)
                F = total_energy(pr, rec.t, rec.u, rec.z)
                worst = max(worst, sl.slope_u / (1 + abs(F)), sl.slope_z_unilateral / (1 + abs(F)))
        assert record_criterion(4, "equilibrium at nodes", worst <= 1e-6,
                                f"max slope/(1+|F|) {worst:.2e} (<= 1e-6)")

    def test_05_irreversibility_and_bounds(self, benchmarks):
        increase = 0.0
        lo, hi = np.inf, -np.inf
        for cfg, res in benchmarks.values():
            evo = res.evolution
            prev = evo.initial.z
            lo, hi = min(lo, prev.min()), max(hi, prev.max())
            for rec in evo.records:
                increase = max(increase, float(np.max(rec.z - prev)))
                for z in rec.z_iterates:
                    lo, hi = min(lo, z.min()), max(hi, z.max())
                prev = rec.z
        ok = increase <= 1e-12 and lo >= -1e-12 and hi <= 1 + 1e-12
        assert record_criterion(5, "irreversibility and bounds", ok,
                                f"max increase {increase:.2e} (<= 1e-12), range [{lo:.3g}, {hi:.3g}]")

    def test_06_homogeneous_closed_form(self, benchmarks):
        cfg, res = benchmarks["homogeneous"]
        assert (cfg.k, cfg.T, cfg.material.eta) == (4, 1.0, 0.01)
        pr = res.problem
        z_ref = 1.0
        u_err = z_err = 0.0
        for rec in res.evolution.records:
            z_ref = min(z_ref, 1.0 / (1.0 + 1.5 * rec.t ** 2))
            u_err = max(u_err, pr.h1_norm(rec.u))
            z_err = max(z_err, float(np.max(np.abs(rec.z - z_ref))))
        ok = u_err <= 1e-8 and z_err <= 1e-6
        assert record_criterion(6, "homogeneous closed form", ok,
                                f"u H1 {u_err:.2e} (<= 1e-8), z sup {z_err:.2e} (<= 1e-6)")

    def test_07_comparison_principle(self):
        rng = np.random.default_rng(7)
        deficit = -np.inf
        for _ in range(20):
            pr = random_problem(rng, 4, 4)
            st = random_state(rng, pr)
            z0 = np.clip(st.z + 0.3, 0.0, 1.0)
            zbar = solve_z(pr, st.t, st.u, z0, z0).z
            fl = flow_z(pr, st.t, st.u, z0, 0.05)
            deficit = max(deficit, max(float(np.max(zbar - s.field)) for s in fl.samples))
        assert record_criterion(7, "comparison principle", deficit <= 1e-10,
                                f"max deficit below minimizer {deficit:.2e} (<= 1e-10)")

    def test_08_flow_decay(self):
        rng = np.random.default_rng(8)
        increase = -np.inf
        gap = 0.0
        for _ in range(5):
            pr = random_problem(rng, 4, 4)
            st = random_state(rng, pr, z_low=0.5)
            ubar = solve_u(pr, st.t, st.z, st.u, SolveOptions(tol_slope=1e-12)).u
            fl = flow_u(pr, st.t, st.z, np.zeros_like(st.u), 1.0, SolveOptions(flow_tol=1e-10))
            dist = [pr.h1_norm(s.field - ubar) for s in fl.samples]
            increase = max(increase, max(b - a for a, b in zip(dist, dist[1:])))
            gap = max(gap, pr.h1_norm(fl.terminal_field - ubar))
        ok = increase < 0 and gap <= 1e-6
        assert record_criterion(8, "flow decay", ok,
                                f"max step change of distance {increase:.2e} (< 0), terminal gap {gap:.2e} (<= 1e-6)")

    def test_09_energy_dissipation_ledger(self, benchmarks):
        chord_margin = -np.inf
        ratios = {}
        for name, (cfg, res) in benchmarks.items():
            pr, evo = res.problem, res.evolution
            F0 = total_energy(pr, evo.initial.t, evo.initial.u, evo.initial.z)
            chord_margin = max(chord_margin, max(r.residual for r in res.ledger) / (1e-8 * (1 + abs(F0))))
            dl_u, dl_z = cfg.flow_dl
            res_full = ledger(pr, parametrize(pr, evo, "flow", (dl_u, dl_z)))[-1].residual
            res_half = ledger(pr, parametrize(pr, evo, "flow", (dl_u / 2, dl_z / 2)))[-1].residual
            ratios[name] = abs(res_full / res_half)
        ok = chord_margin <= 1 and min(ratios.values()) >= 1.5
        detail = f"chord residual/bound {chord_margin:.2e} (<= 1), flow halving ratios " + \
            ", ".join(f"{k} {v:.3f}" for k, v in ratios.items()) + " (>= 1.5)"
        assert record_criterion(9, "energy-dissipation ledger", ok, detail)

    def test_10_speed_and_length(self, benchmarks):
        max_speed = 0.0
        for cfg, res in benchmarks.values():
            max_speed = max(max_speed, max(s.speed for s in res.trajectory.segments))
        pr = benchmarks["homogeneous"][1].problem
        lengths = []
        for k in (4, 8, 16):
            evo = evolve(pr, TimeGrid(1.0, k), np.ones(pr.mesh.node_count))
            lengths.append(parametrize(pr, evo).total_length)
        variation = (max(lengths) - min(lengths)) / min(lengths)
        ok = max_speed <= 1 + 1e-12 and variation <= 0.5
        assert record_criterion(10, "speed and length structure", ok,
                                f"max speed {max_speed:.15f} (<= 1 + 1e-12), S_k {', '.join('%.4f' % s for s in lengths)}"
                                f" variation {variation:.1%} (<= 50%)")

    def test_11_energy_norm_ratios(self, benchmarks):
        cfg, res = benchmarks["notched_strip"]
        assert (cfg.mesh.nx, cfg.mesh.ny) == (16, 16)
        nc = norm_comparison(res.problem, res.evolution)
        r = nc.ratios
        emitted = any(title == "energy-norm comparison" for title, _ in res.report_sections)
        ok = bool(np.all(np.isfinite(r)) and np.all(r > 0) and nc.spread <= 1e3 and emitted)
        assert record_criterion(11, "energy-norm increment ratios", ok,
                                f"{r.size} ratios in [{nc.min_ratio:.3g}, {nc.max_ratio:.3g}], "
                                f"spread {nc.spread:.3g} (<= 1e3), report section {'present' if emitted else 'missing'}")

    def test_12_determinism(self, tmp_path):
        cfg = load("notched_strip")
        a, b = tmp_path / "a", tmp_path / "b"
        run(cfg, a)
        run(cfg, b)
        same = (a / "trajectory.csv").read_bytes() == (b / "trajectory.csv").read_bytes()
        assert record_criterion(12, "determinism", same, f"trajectory.csv byte-identical: {same}")
