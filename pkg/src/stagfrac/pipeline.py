"""Run orchestration: evolution, parametrization, diagnostics and output files."""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

import numpy as np

from .config import Config
from .diagnostics import LedgerRow, ledger, norm_comparison, stationarity
from .energetics import Problem, State, assemble_energy, power, psi_parts, slopes
from .evolution import Evolution, ParametrizedTrajectory, StaggeredError, evolve, parametrize
from .io import TrajectoryRow, fmt, write_report, write_trajectory_csv, write_vtk

EXIT_OK = 0
EXIT_SOLVER = 2
EXIT_INVARIANT = 3

EQUILIBRIUM_TOL = 1e-6
IRREVERSIBILITY_TOL = 1e-12
LEDGER_TOL = 1e-8


@dataclass
class RunResult:
    status: int
    problem: Problem
    evolution: Optional[Evolution] = None
    trajectory: Optional[ParametrizedTrajectory] = None
    ledger: List[LedgerRow] = field(default_factory=list)
    violations: List[str] = field(default_factory=list)
    report_sections: list = field(default_factory=list)


def homogeneous_prediction(config: Config, problem: Problem) -> Optional[np.ndarray]:
    """Closed-form phase field at every time node for a fully clamped, uniformly strained body.

    Applies when every side is clamped in both components, the initial phase
    field is a constant and the model is quadratic/at2-type.  The strain is
    then uniform, ``u`` stays zero and ``z_i = min(z0, min_{j<=i} 1/(1 + Psi+(t_j)))``.
    """
    sides = {s for s, _ in problem.mesh.dirichlet_spec}
    comps = {(s, c) for s, c in problem.mesh.dirichlet_spec}
    if sides != {"left", "right", "bottom", "top"} or len(comps) != 8:
        return None
    if not problem.model.quadratic or config.initial.band is not None or config.initial.file:
        return None
    sym = 0.5 * (config.A + config.A.T)
    eps_G = np.array([[sym[0, 0], sym[1, 1], sym[0, 1]]])
    z = config.initial.value
    out = []
    grid = config.grid()
    for i in range(1, grid.k + 1):
        rho = problem.datum.rho(grid.t(i))
        psi_p, _ = psi_parts(rho * eps_G, problem.params.mu, problem.params.kappa)
        z = min(z, 1.0 / (1.0 + float(psi_p[0])))
        out.append(z)
    return np.array(out)


def _state_row(problem: Problem, state: State, s: float, kind: str, i: int, j: int,
               arc_inc: float, residual: float) -> TrajectoryRow:
    eb = assemble_energy(problem, state.t, state.u, state.z)
    sl = slopes(problem, state.t, state.u, state.z)
    return TrajectoryRow(s, kind, i, j, state.t, eb.total, eb.elastic, eb.dissipation,
                         sl.slope_u, sl.slope_z_unilateral, arc_inc,
                         power(problem, state.t, state.u, state.z), residual)


def trajectory_rows(problem: Problem, traj: ParametrizedTrajectory, rows: List[LedgerRow]) -> List[TrajectoryRow]:
    out = [_state_row(problem, traj.initial, 0.0, "time", 0, -1, 0.0, 0.0)]
    for seg, row in zip(traj.segments, rows):
        out.append(_state_row(problem, seg.end, seg.s_end, seg.kind, seg.i, seg.j, seg.length, row.residual))
    return out


def check_invariants(problem: Problem, evo: Evolution) -> List[str]:
    bad = []
    prev = evo.initial.z
    for rec in [evo.initial_record] + evo.records:
        F = rec.energy
        bound = EQUILIBRIUM_TOL * (1.0 + abs(F))
        if rec.slope_u > bound or rec.slope_z > bound:
            bad.append(f"equilibrium violated at node {rec.i}: slope_u {rec.slope_u:.3e}, "
                       f"slope_z {rec.slope_z:.3e}, bound {bound:.3e}")
        for z in rec.z_iterates:
            if z.min() < -IRREVERSIBILITY_TOL or z.max() > 1 + IRREVERSIBILITY_TOL:
                bad.append(f"phase field out of [0, 1] at node {rec.i}")
                break
        if rec.i > 0 and np.any(rec.z > prev + IRREVERSIBILITY_TOL):
            bad.append(f"irreversibility violated at node {rec.i}: max increase {np.max(rec.z - prev):.3e}")
        prev = rec.z
    return bad


def run(config: Config, output_dir: Optional[Path] = None, mode: Optional[str] = None,
        stderr=None) -> RunResult:
    """Execute one configured evolution and write ``trajectory.csv``, ``state_####.vtk`` and ``report.txt``."""
    stderr = stderr if stderr is not None else sys.stderr
    out = Path(output_dir if output_dir is not None else config.base_dir / config.output.directory)
    out.mkdir(parents=True, exist_ok=True)
    mode = mode or config.mode
    problem = config.problem()
    mesh = problem.mesh
    z0 = config.initial_field(mesh)
    stride = config.output.vtk_stride
    result = RunResult(EXIT_OK, problem)

    def dump(index: int, u, z):
        if stride and index % stride == 0:
            write_vtk(out / f"state_{index:04d}.vtk", mesh, u, z, f"stagfrac state {index}")

    try:
        evo = evolve(problem, config.grid(), z0, config.stagger_options(),
                     on_record=lambda rec: dump(rec.i, rec.u, rec.z))
    except StaggeredError as exc:
        print(f"solver failure at time node {exc.node}: {exc}", file=stderr)
        lines = [f"solver failure at time node {exc.node}", str(exc)]
        if exc.record is not None and exc.record.chords_u:
            lines.append(f"last chords: u {fmt(exc.record.chords_u[-1])}, z {fmt(exc.record.chords_z[-1])}")
        write_report(out / "report.txt", [("failure", lines)])
        result.status = EXIT_SOLVER
        return result
    dump(0, evo.initial.u, evo.initial.z)
    result.evolution = evo

    traj = parametrize(problem, evo, mode, config.flow_dl)
    rows = ledger(problem, traj)
    result.trajectory, result.ledger = traj, rows
    if config.output.csv:
        write_trajectory_csv(out / "trajectory.csv", trajectory_rows(problem, traj, rows))

    result.violations = check_invariants(problem, evo)
    F0 = assemble_energy(problem, evo.initial.t, evo.initial.u, evo.initial.z).total
    worst = max((r.residual for r in rows), default=0.0)
    if mode != "flow" and worst > LEDGER_TOL * (1.0 + abs(F0)):
        result.violations.append(f"energy inequality violated: residual {worst:.3e}")

    sections = _report_sections(config, problem, evo, traj, rows, F0, mode)
    sections.append(("invariants", result.violations or ["all invariants hold"]))
    result.report_sections = sections
    write_report(out / "report.txt", sections)
    if result.violations:
        for v in result.violations:
            print(v, file=stderr)
        result.status = EXIT_INVARIANT
    return result


def _report_sections(config, problem, evo, traj, rows, F0, mode):
    secs = []
    eq = []
    for rec in [evo.initial_record] + evo.records:
        eq.append(f"node {rec.i} t={fmt(rec.t)} sweeps={rec.iterations} F={fmt(rec.energy)} "
                  f"slope_u={rec.slope_u:.3e} slope_z={rec.slope_z:.3e}")
    secs.append(("equilibrium", eq))

    irr = []
    prev = evo.initial.z
    for rec in evo.records:
        irr.append(f"node {rec.i} max(z_i - z_(i-1))={np.max(rec.z - prev):.3e} "
                   f"min z={fmt(rec.z.min())} max z={fmt(rec.z.max())}")
        prev = rec.z
    secs.append(("irreversibility", irr))

    final = evo.final.z
    fz = [f"min={fmt(final.min())} max={fmt(final.max())} mean={fmt(final.mean())}"]
    pred = homogeneous_prediction(config, problem)
    if pred is not None:
        fz.append(f"closed-form uniform value={fmt(pred[-1])} max deviation={np.max(np.abs(final - pred[-1])):.3e}")
    secs.append(("final phase field", fz))

    lg = [f"mode={mode} F0={fmt(F0)} rows={len(rows)}"]
    if rows:
        res = np.array([r.residual for r in rows])
        lg.append(f"final residual={fmt(res[-1])} max residual={fmt(res.max())} min residual={fmt(res.min())}")
    secs.append(("ledger", lg))

    secs.append(("arc length", [f"S_k={fmt(traj.total_length)} segments={len(traj.segments)} "
                                f"tau={fmt(traj.tau)} max speed={max((s.speed for s in traj.segments), default=0.0):.17g}"]))

    st = stationarity(traj, {rec.i: rec.iterations for rec in evo.records})
    alt = [f"phase-field active length={fmt(st.active_length)} beta(S_k)={fmt(st.beta_total)}"]
    for ev in st.events:
        alt.append(f"node {ev.node}: {' '.join(ev.kinds)} alternates={ev.alternates} "
                   f"jumps={' '.join('%.3e' % j for j in ev.jumps)}")
    secs.append(("alternation", alt))

    if problem.model.quadratic and evo.records:
        nc = norm_comparison(problem, evo)
        secs.append(("energy-norm comparison",
                     [f"min ratio={fmt(nc.min_ratio)} max ratio={fmt(nc.max_ratio)} spread={fmt(nc.spread)}"]))
    return secs
