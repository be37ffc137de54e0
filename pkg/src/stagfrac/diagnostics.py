"""
Post-processing of a parametrized trajectory.

* ``ledger``: energy balance along the arc coordinate.  The predicted energy
  is the initial energy plus the work of the moving datum minus the slope
  work of every displacement and phase-field segment.
* ``stationarity``: segments on which the phase field moves, the cumulative
  length function ``beta`` and per-node alternation events.
* ``norm_comparison``: per-node arc increments in the standard and the
  state-dependent energy norms.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np

from .energetics import Problem, State, datum_stress_work, energy_norms, slopes, total_energy
from .evolution import Evolution, ParametrizedTrajectory, Segment

LEDGER_RULES = ("end", "start")


@dataclass(frozen=True)
class LedgerRow:
    s_end: float
    kind: str
    F_actual: float
    F_predicted: float
    work: float
    dissipation: float

    @property
    def residual(self) -> float:
        return self.F_actual - self.F_predicted


def power_integral(problem: Problem, state: State, t0: float, t1: float) -> float:
    """``int_t0^t1 P(t, u, z) dt`` at frozen fields by Simpson's rule on each linear piece of ``rho``."""
    cuts = np.concatenate([[t0], problem.datum.breakpoints_between(t0, t1), [t1]])
    total = 0.0
    for a, b in zip(cuts[:-1], cuts[1:]):
        mid = 0.5 * (a + b)
        rate = problem.datum.rho_dot(mid)
        w = [datum_stress_work(problem, x, state.u, state.z) for x in (a, mid, b)]
        total += rate * (b - a) / 6.0 * (w[0] + 4.0 * w[1] + w[2])
    return total


def segment_dissipation(problem: Problem, seg: Segment, rule: str = "end") -> float:
    """Slope work charged to a u- or z-segment."""
    if seg.flow is not None:
        return seg.flow.dissipation
    state = seg.end if rule == "end" else seg.start
    rep = slopes(problem, state.t, state.u, state.z)
    slope = rep.slope_u if seg.kind == "u" else rep.slope_z_unilateral
    return slope * seg.chord


def ledger(problem: Problem, traj: ParametrizedTrajectory, rule: str = "end") -> List[LedgerRow]:
    """Energy-dissipation balance rows, one per segment end.

    In flow mode the dissipation of a segment is ``sum ||dx||^2 / dl`` of its
    flow.  In the chord modes it is the slope times the standard chord, with
    the slope taken at the segment end (``rule="end"``) or start.
    """
    if rule not in LEDGER_RULES:
        raise ValueError(f"unknown ledger rule {rule!r}")
    if traj.mode == "flow" and any(seg.kind != "time" and seg.flow is None for seg in traj.segments):
        raise ValueError("flow-mode ledger needs the flow payload of every u and z segment")
    init = traj.initial
    F0 = total_energy(problem, init.t, init.u, init.z)
    predicted = F0
    rows: List[LedgerRow] = []
    for seg in traj.segments:
        work = dis = 0.0
        if seg.kind == "time":
            work = power_integral(problem, seg.start, seg.start.t, seg.end.t)
        else:
            dis = segment_dissipation(problem, seg, rule)
        predicted += work - dis
        actual = total_energy(problem, seg.end.t, seg.end.u, seg.end.z)
        rows.append(LedgerRow(seg.s_end, seg.kind, actual, predicted, work, dis))
    return rows


@dataclass(frozen=True)
class AlternationEvent:
    node: int
    kinds: Tuple[str, ...]
    jumps: Tuple[float, ...]

    @property
    def alternates(self) -> bool:
        return all(a != b for a, b in zip(self.kinds, self.kinds[1:]))


@dataclass
class StationarityReport:
    active: List[Tuple[float, float]] = field(default_factory=list)
    inactive: List[Tuple[float, float]] = field(default_factory=list)
    beta: List[Tuple[float, float]] = field(default_factory=list)
    events: List[AlternationEvent] = field(default_factory=list)

    @property
    def beta_total(self) -> float:
        return self.beta[-1][1] if self.beta else 0.0

    @property
    def active_length(self) -> float:
        return float(sum(b - a for a, b in self.active))


def stationarity(traj: ParametrizedTrajectory, iterations_by_node=None) -> StationarityReport:
    """Phase-field-active set, ``beta(s)`` table and alternation events.

    ``iterations_by_node`` maps a node index to its inner sweep count; nodes
    with more than one sweep produce an alternation event.  Without it every
    node with at least two non-time segments is reported.
    """
    rep = StationarityReport()
    beta = 0.0
    by_node = {}
    for seg in traj.segments:
        span = (seg.s_start, seg.s_end)
        if seg.kind == "z":
            rep.active.append(span)
            beta += seg.length
        else:
            rep.inactive.append(span)
        rep.beta.append((seg.s_end, beta))
        if seg.kind != "time":
            by_node.setdefault(seg.i, []).append(seg)
    for node, segs in sorted(by_node.items()):
        sweeps = iterations_by_node.get(node, 0) if iterations_by_node is not None else len(segs)
        if sweeps > 1:
            rep.events.append(AlternationEvent(node, tuple(s.kind for s in segs),
                                               tuple(s.length for s in segs)))
    return rep


@dataclass(frozen=True)
class NormComparison:
    nodes: Tuple[int, ...]
    s_increments: Tuple[float, ...]
    r_increments: Tuple[float, ...]

    @property
    def ratios(self) -> np.ndarray:
        return np.asarray(self.r_increments) / np.asarray(self.s_increments)

    @property
    def min_ratio(self) -> float:
        return float(self.ratios.min())

    @property
    def max_ratio(self) -> float:
        return float(self.ratios.max())

    @property
    def spread(self) -> float:
        return self.max_ratio / self.min_ratio


def norm_comparison(problem: Problem, evolution: Evolution) -> NormComparison:
    """Per-node increments of the chord arc coordinate in the standard and the energy norms."""
    if not problem.model.quadratic:
        raise ValueError("energy norms are defined for the quadratic degradation family only")
    nodes, s_inc, r_inc = [], [], []
    prev_t = evolution.initial.t
    for rec in evolution.records:
        tau = rec.t - prev_t
        ds = tau + sum(rec.chords_u) + sum(rec.chords_z)
        dr = tau
        for j in range(rec.iterations):
            u0, u1 = rec.u_iterates[j], rec.u_iterates[j + 1]
            z0, z1 = rec.z_iterates[j], rec.z_iterates[j + 1]
            dr += energy_norms(problem, State(rec.t, u0, z0), u1 - u0, np.zeros_like(z0))[0]
            dr += energy_norms(problem, State(rec.t, u1, z0), np.zeros_like(u0), z1 - z0)[1]
        nodes.append(rec.i)
        s_inc.append(ds)
        r_inc.append(dr)
        prev_t = rec.t
    return NormComparison(tuple(nodes), tuple(s_inc), tuple(r_inc))
