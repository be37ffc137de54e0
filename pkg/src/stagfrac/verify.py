"""
Self-contained property suites behind ``stagfrac verify <suite>``.

Each suite builds its own small problems, prints one line per check with the
measured value and returns the list of outcomes.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass
from typing import Callable, Dict, List

import numpy as np

from .constitutive import BoundaryDatum, Model, TimeGrid
from .diagnostics import ledger, norm_comparison
from .energetics import (Problem, State, assemble_gradients, energy_norms, power, slopes,
                         total_energy)
from .evolution import evolve, parametrize
from .mesh import build_rect_mesh
from .subsolvers import SolveOptions, flow_u, flow_z, qp_active_set_oracle, solve_u, solve_z

ALL_SIDES = {"left": "xy", "right": "xy", "bottom": "xy", "top": "xy"}


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    value: float
    bound: float
    relation: str = "<="

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name}: {self.value:.3e} ({self.relation} {self.bound:.3g})"


def _check(name: str, value: float, bound: float) -> Check:
    return Check(name, bool(value <= bound), float(value), bound)


def _check_at_least(name: str, value: float, bound: float) -> Check:
    return Check(name, bool(value >= bound), float(value), bound, ">=")


def random_problem(rng: np.random.Generator, nx: int = 8, ny: int = 8, h: str = "quadratic") -> Problem:
    mesh = build_rect_mesh(nx, ny, 1.0, 1.0, {"left": "xy", "right": "x"})
    A = rng.normal(size=(2, 2))
    datum = BoundaryDatum.from_breakpoints(A, rng.normal(size=2) * 0.1, [[0.0, 0.0], [0.5, 0.7], [1.0, 1.0]])
    return Problem(mesh, Model.create(1.0, 2.0, 0.01, h=h), datum)


def random_state(rng: np.random.Generator, problem: Problem, z_low: float = 0.0) -> State:
    u = problem.expand(0.2 * rng.normal(size=problem.n_free))
    z = rng.uniform(z_low, 1.0, problem.mesh.node_count)
    return State(float(rng.uniform(0.05, 0.95)), u, z)


def relative_gap(a: float, b: float) -> float:
    return abs(a - b) / max(abs(a), abs(b), 1e-12)


def gradcheck(rng: np.random.Generator, states: int = 3, directions: int = 5) -> List[Check]:
    problem = random_problem(rng)
    free = problem.mesh.free_dofs
    worst_u = worst_z = worst_p = 0.0
    h = 1e-6
    for _ in range(states):
        st = random_state(rng, problem)
        g_u, g_z = assemble_gradients(problem, st.t, st.u, st.z)
        for _ in range(directions):
            du = problem.expand(rng.normal(size=problem.n_free))
            dz = rng.normal(size=problem.mesh.node_count)
            fd_u = (total_energy(problem, st.t, st.u + h * du, st.z)
                    - total_energy(problem, st.t, st.u - h * du, st.z)) / (2 * h)
            fd_z = (total_energy(problem, st.t, st.u, st.z + h * dz)
                    - total_energy(problem, st.t, st.u, st.z - h * dz)) / (2 * h)
            worst_u = max(worst_u, relative_gap(fd_u, float(g_u @ du[free])))
            worst_z = max(worst_z, relative_gap(fd_z, float(g_z @ dz)))
        fd_t = (total_energy(problem, st.t + h, st.u, st.z) - total_energy(problem, st.t - h, st.u, st.z)) / (2 * h)
        worst_p = max(worst_p, relative_gap(fd_t, power(problem, st.t, st.u, st.z)))
    return [_check("dF/du vs central difference", worst_u, 1e-6),
            _check("dF/dz vs central difference", worst_z, 1e-6),
            _check("power vs dF/dt central difference", worst_p, 1e-6)]


def oracle(rng: np.random.Generator, instances: int = 20) -> List[Check]:
    mesh = build_rect_mesh(2, 1, 1.0, 1.0, {"left": "xy"})
    worst = 0.0
    for _ in range(instances):
        datum = BoundaryDatum.from_breakpoints(rng.normal(size=(2, 2)), [0.0, 0.0], [[0.0, 0.0], [1.0, 1.0]])
        problem = Problem(mesh, Model.create(1.0, 2.0, 0.01), datum)
        u = problem.expand(rng.normal(size=problem.n_free))
        upper = rng.uniform(0.0, 1.0, mesh.node_count)
        z = solve_z(problem, 1.0, u, upper, upper).z
        worst = max(worst, float(np.max(np.abs(z - qp_active_set_oracle(problem, 1.0, u, upper)))))
    return [_check("solve_z vs active-set enumeration, max nodal gap", worst, 1e-9)]


def flows(rng: np.random.Generator, instances: int = 3) -> List[Check]:
    below = 0.0
    monotone = 0.0
    terminal = 0.0
    decay = 0.0
    u_gap = 0.0
    for _ in range(instances):
        problem = random_problem(rng, 4, 4)
        st = random_state(rng, problem, z_low=0.5)
        z0 = np.clip(st.z + 0.3, 0.0, 1.0)
        zbar = solve_z(problem, st.t, st.u, z0, z0).z
        fz = flow_z(problem, st.t, st.u, z0, 0.05)
        for a, b in zip(fz.samples, fz.samples[1:]):
            monotone = max(monotone, float(np.max(b.field - a.field)))
        below = max(below, max(float(np.max(zbar - s.field)) for s in fz.samples))
        terminal = max(terminal, float(np.max(np.abs(fz.terminal_field - zbar))))

        ubar = solve_u(problem, st.t, st.z, st.u, SolveOptions(tol_slope=1e-12)).u
        fu = flow_u(problem, st.t, st.z, np.zeros_like(st.u), 1.0, SolveOptions(flow_tol=1e-10))
        dist = [problem.h1_norm(s.field - ubar) for s in fu.samples]
        decay = max(decay, max(b - a for a, b in zip(dist, dist[1:])))
        u_gap = max(u_gap, problem.h1_norm(fu.terminal_field - ubar))
    return [_check("z-flow samples above the constrained minimizer (max deficit)", below, 1e-10),
            _check("z-flow samples nodewise non-increasing (max increase)", monotone, 0.0),
            _check("z-flow terminal vs constrained minimizer", terminal, 1e-6),
            _check("u-flow distance to minimizer non-increasing (max increase)", decay, 0.0),
            _check("u-flow terminal vs direct minimizer (H1)", u_gap, 1e-6)]


def homogeneous_problem(n: int = 2) -> Problem:
    mesh = build_rect_mesh(n, n, 1.0, 1.0, ALL_SIDES)
    datum = BoundaryDatum.from_breakpoints([[1.0, 0.0], [0.0, 0.0]], [0.0, 0.0], [[0.0, 0.0], [1.0, 1.0]])
    return Problem(mesh, Model.create(1.0, 2.0, 0.01), datum)


def ledger_suite(rng: np.random.Generator) -> List[Check]:
    problem = homogeneous_problem()
    evo = evolve(problem, TimeGrid(1.0, 4), np.ones(problem.mesh.node_count))
    chord = ledger(problem, parametrize(problem, evo, "chord"))
    F0 = total_energy(problem, 0.0, evo.initial.u, evo.initial.z)
    worst = max(r.residual for r in chord)
    res = [abs(ledger(problem, parametrize(problem, evo, "flow", (0.2, dl)))[-1].residual) for dl in (0.02, 0.01)]
    return [_check("chord ledger residual (one-sided)", worst, 1e-8 * (1 + abs(F0))),
            _check_at_least("flow ledger residual ratio under dl halving", res[0] / res[1], 1.5)]


def norms(rng: np.random.Generator) -> List[Check]:
    problem = homogeneous_problem()
    evo = evolve(problem, TimeGrid(1.0, 4), np.ones(problem.mesh.node_count))
    nc = norm_comparison(problem, evo)
    bad = float(np.sum(~np.isfinite(nc.ratios) | (nc.ratios <= 0)))
    st = random_state(rng, problem)
    dz = rng.normal(size=problem.mesh.node_count)
    _, nzu = energy_norms(problem, st, np.zeros_like(st.u), dz)
    lumped_h1 = float(np.sqrt(dz @ (problem.ips.stiffness_z @ dz) + np.sum(problem.ips.lumped_mass * dz * dz)))
    return [_check("non-finite or non-positive increment ratios", bad, 0.0),
            _check("ratio spread max/min", nc.spread, 1e3),
            _check("lumped H1 norm exceeds energy norm of z (deficit)", lumped_h1 - nzu, 1e-12)]


SUITES: Dict[str, Callable[[np.random.Generator], List[Check]]] = {
    "gradcheck": gradcheck,
    "oracle": oracle,
    "flows": flows,
    "ledger": ledger_suite,
    "norms": norms,
}


def run_suite(name: str, seed: int = 0, stream=None) -> int:
    stream = stream if stream is not None else sys.stdout
    if name not in SUITES:
        raise ValueError(f"unknown suite {name!r}; expected one of {sorted(SUITES)}")
    checks = SUITES[name](np.random.default_rng(seed))
    for c in checks:
        print(c.line(), file=stream)
    return 0 if all(c.passed for c in checks) else 1
