"""
Time-incremental staggered evolution and its arc-length parametrization.

At each time node the displacement and phase field are minimized in turn,
the phase field always below its previous iterate, until successive iterates
stop moving.  The resulting discrete path is then laid out on an arc
coordinate ``s`` in which the time step, every displacement update and every
phase-field update occupy their own segments.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .constitutive import TimeGrid
from .energetics import Problem, State, energy_norms, slopes, total_energy
from .subsolvers import FlowTrajectory, SolveOptions, flow_u, flow_z, solve_u, solve_z

SEGMENT_KINDS = ("time", "u", "z")
MODES = ("chord", "flow", "energy-norm-chord")
# chords at or below this are treated as "nothing moved" and their segments dropped
ZERO_LENGTH = 1e-13


@dataclass(frozen=True)
class StaggerOptions:
    tol_stag: float = 1e-8
    max_inner: int = 100
    solve: SolveOptions = field(default_factory=SolveOptions)

    def __post_init__(self):
        if not self.tol_stag > 0:
            raise ValueError(f"tol_stag must be positive, got {self.tol_stag}")
        if self.max_inner < 1:
            raise ValueError(f"max_inner must be >= 1, got {self.max_inner}")


@dataclass(eq=False)
class StaggeredRecord:
    """Inner alternate-minimization history at one time node.

    ``u_iterates[j]`` and ``z_iterates[j]`` are the iterates entering sweep
    ``j``; sweep ``j`` produces ``u_iterates[j + 1]`` at phase field
    ``z_iterates[j]`` and then ``z_iterates[j + 1]``.  ``energies`` lists
    ``F`` after every half step, starting from the incoming pair.
    """

    i: int
    t: float
    u_iterates: List[np.ndarray] = field(default_factory=list)
    z_iterates: List[np.ndarray] = field(default_factory=list)
    chords_u: List[float] = field(default_factory=list)
    chords_z: List[float] = field(default_factory=list)
    energies: List[float] = field(default_factory=list)
    slope_u: float = float("nan")
    slope_z: float = float("nan")
    converged: bool = False

    @property
    def iterations(self) -> int:
        return len(self.chords_u)

    @property
    def u(self) -> np.ndarray:
        return self.u_iterates[-1]

    @property
    def z(self) -> np.ndarray:
        return self.z_iterates[-1]

    @property
    def energy(self) -> float:
        return self.energies[-1]

    def state(self) -> State:
        return State(self.t, self.u, self.z)


class StaggeredError(RuntimeError):
    """Inner loop failed at a time node; carries the partial record."""

    def __init__(self, message: str, node: int, record: Optional[StaggeredRecord] = None):
        super().__init__(f"time node {node}: {message}")
        self.node = node
        self.record = record


def staggered_step(problem: Problem, i: int, t: float, u_prev: np.ndarray, z_prev: np.ndarray,
                   opts: StaggerOptions = StaggerOptions()) -> StaggeredRecord:
    """Alternate ``solve_u`` / ``solve_z`` at time ``t`` starting from the previous node's pair."""
    z_prev = np.asarray(z_prev, dtype=float)
    if np.any(z_prev < -1e-12) or np.any(z_prev > 1 + 1e-12):
        raise ValueError("incoming phase field must lie in [0, 1]")
    rec = StaggeredRecord(i, t)
    u, z = np.array(u_prev, dtype=float), z_prev.copy()
    rec.u_iterates.append(u)
    rec.z_iterates.append(z)
    rec.energies.append(total_energy(problem, t, u, z))
    try:
        for _ in range(opts.max_inner):
            u_new = solve_u(problem, t, z, u, opts.solve).u
            rec.energies.append(total_energy(problem, t, u_new, z))
            z_new = solve_z(problem, t, u_new, z, z, opts.solve).z
            rec.energies.append(total_energy(problem, t, u_new, z_new))
            du = problem.h1_norm(u_new - u)
            dz = problem.l2_norm(z_new - z)
            rec.u_iterates.append(u_new)
            rec.z_iterates.append(z_new)
            rec.chords_u.append(du)
            rec.chords_z.append(dz)
            u, z = u_new, z_new
            if du <= opts.tol_stag and dz <= opts.tol_stag:
                rec.converged = True
                break
    except RuntimeError as exc:
        raise StaggeredError(str(exc), i, rec) from exc
    rep = slopes(problem, t, u, z)
    rec.slope_u, rec.slope_z = rep.slope_u, rep.slope_z_unilateral
    if not rec.converged:
        raise StaggeredError(f"inner loop not converged after {opts.max_inner} sweeps", i, rec)
    return rec


def initial_state(problem: Problem, z0: np.ndarray,
                  opts: StaggerOptions = StaggerOptions()) -> Tuple[State, StaggeredRecord]:
    """Equilibrate the initial pair at the start time, keeping ``z <= z0``."""
    z0 = np.asarray(z0, dtype=float)
    if z0.shape != (problem.mesh.node_count,):
        raise ValueError("initial phase field does not match the mesh")
    t0 = problem.datum.t_start
    rec = staggered_step(problem, 0, t0, np.zeros(2 * problem.mesh.node_count), z0, opts)
    return rec.state(), rec


@dataclass(eq=False)
class Evolution:
    initial: State
    initial_record: StaggeredRecord
    records: List[StaggeredRecord]
    grid: TimeGrid

    @property
    def final(self) -> State:
        return self.records[-1].state() if self.records else self.initial


def evolve(problem: Problem, grid: TimeGrid, z0: np.ndarray,
           opts: StaggerOptions = StaggerOptions(), on_record=None) -> Evolution:
    """Run the staggered scheme over every node of ``grid``.

    ``on_record`` is called with each completed record (used for streaming output).
    """
    if problem.datum.t_start != 0.0 or problem.datum.t_end < grid.T * (1 - 1e-12):
        raise ValueError("ramp breakpoints must cover [0, T]")
    state, rec0 = initial_state(problem, z0, opts)
    records: List[StaggeredRecord] = []
    u, z = state.u, state.z
    for i in range(1, grid.k + 1):
        rec = staggered_step(problem, i, grid.t(i), u, z, opts)
        records.append(rec)
        if on_record is not None:
            on_record(rec)
        u, z = rec.u, rec.z
    return Evolution(state, rec0, records, grid)


@dataclass(eq=False)
class Segment:
    """One piece of the parametrized path; exactly one of ``t``, ``u``, ``z`` varies.

    The arc increment is stored rather than recovered as ``s_end - s_start``,
    which loses digits for short segments far along the path.
    """

    kind: str
    i: int
    j: int
    s_start: float
    increment: float
    start: State
    end: State
    chord: float
    flow: Optional[FlowTrajectory] = None
    metric_increment: float = 0.0

    @property
    def s_end(self) -> float:
        return self.s_start + self.increment

    @property
    def length(self) -> float:
        return self.increment

    @property
    def speed(self) -> float:
        """``t' + ||u'|| + ||z'||`` of the linear interpolant, in the geometry that defined the length."""
        return self.metric_increment / self.increment


@dataclass(eq=False)
class ParametrizedTrajectory:
    mode: str
    initial: State
    segments: List[Segment]
    node_table: List[Tuple[str, int, int, float]]
    tau: float

    @property
    def total_length(self) -> float:
        return self.segments[-1].s_end if self.segments else 0.0

    def s_values(self) -> np.ndarray:
        return np.array([0.0] + [seg.s_end for seg in self.segments])


def arc_nodes(tau: float, chords_u: Sequence[float], chords_z: Sequence[float], s0: float = 0.0) -> List[float]:
    """Node recursion for one time node: ``s_{i,0} = s_{i,-1} + tau`` then alternating chord sums."""
    s = [s0, s0 + tau]
    for lu, lz in zip(chords_u, chords_z):
        s.append(s[-1] + lu)
        s.append(s[-1] + lz)
    return s


def parametrize(problem: Problem, evolution: Evolution, mode: str = "chord",
                flow_dl: Tuple[float, float] = (0.2, 0.005),
                flow_opts: SolveOptions = SolveOptions()) -> ParametrizedTrajectory:
    """Lay the staggered path out on an arc coordinate.

    Parameters
    ----------
    mode
        ``chord``: H1 / lumped-L2 distances of successive iterates.
        ``flow``: arc lengths of the implicit Euler gradient flows joining them.
        ``energy-norm-chord``: state-dependent energy norms of the same chords.
    flow_dl
        Pseudo-time steps ``(dl_u, dl_z)`` of the u- and z-flows in flow mode.
    """
    if mode not in MODES:
        raise ValueError(f"unknown parametrization mode {mode!r}; expected one of {MODES}")
    if mode == "energy-norm-chord" and not problem.model.quadratic:
        raise ValueError("energy-norm-chord mode requires the quadratic degradation family")
    grid = evolution.grid
    segments: List[Segment] = []
    table: List[Tuple[str, int, int, float]] = [("i-1", 1, -1, 0.0)]
    s = 0.0
    prev = evolution.initial
    for rec in evolution.records:
        t_prev = prev.t
        frozen_end = State(rec.t, prev.u, prev.z)
        segments.append(Segment("time", rec.i, -1, s, rec.t - t_prev, prev, frozen_end,
                                rec.t - t_prev, metric_increment=rec.t - t_prev))
        s += rec.t - t_prev
        table.append(("i,0", rec.i, 0, s))
        for j in range(rec.iterations):
            u0, u1 = rec.u_iterates[j], rec.u_iterates[j + 1]
            z0, z1 = rec.z_iterates[j], rec.z_iterates[j + 1]
            for kind, chord, start, end in (("u", rec.chords_u[j], State(rec.t, u0, z0), State(rec.t, u1, z0)),
                                            ("z", rec.chords_z[j], State(rec.t, u1, z0), State(rec.t, u1, z1))):
                if chord > ZERO_LENGTH:
                    seg = _make_segment(problem, mode, kind, rec.i, j, s, start, end, chord, flow_dl, flow_opts)
                    segments.append(seg)
                    s = seg.s_end
                table.append(("i,j+1/2" if kind == "u" else "i,j+1", rec.i, j, s))
        prev = rec.state()
    return ParametrizedTrajectory(mode, evolution.initial, segments, table, grid.tau)


def _make_segment(problem: Problem, mode: str, kind: str, i: int, j: int, s: float,
                  start: State, end: State, chord: float, flow_dl, flow_opts) -> Segment:
    if mode == "chord":
        return Segment(kind, i, j, s, chord, start, end, chord, metric_increment=chord)
    if mode == "energy-norm-chord":
        if kind == "u":
            length = energy_norms(problem, start, end.u - start.u, np.zeros_like(start.z))[0]
        else:
            length = energy_norms(problem, start, np.zeros_like(start.u), end.z - start.z)[1]
        return Segment(kind, i, j, s, length, start, end, chord, metric_increment=length)
    if kind == "u":
        flow = flow_u(problem, start.t, start.z, start.u, flow_dl[0], flow_opts)
        flow_end = State(start.t, flow.terminal_field, start.z)
    else:
        flow = flow_z(problem, start.t, start.u, start.z, flow_dl[1], flow_opts)
        flow_end = State(start.t, start.u, flow.terminal_field)
    length = flow.arc_length
    return Segment(kind, i, j, s, length, start, flow_end, chord, flow, metric_increment=length)
