"""
Convex subproblem solvers and the proximal (minimizing-movement) flows.

``solve_u`` minimizes ``F(t, ., z)`` by a generalised Newton method on the
piecewise-quadratic energy.  ``solve_z`` minimizes ``F(t, u, .)`` under the
upper obstacle ``z <= upper`` in the lumped L2 geometry: a primal-dual active
set method for the quadratic degradation and a projected Newton method for
the quartic one.  Both accept an optional proximal term, which is what the
flows use for their implicit Euler steps.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import List, NamedTuple, Optional, Tuple

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .energetics import (Problem, gradient_u_full,
                         slope_u_from_gradient, split_strain, total_energy, unilateral_slope)
from .mesh import element_strain


class SolverError(RuntimeError):
    """Non-convergence of a subproblem; carries the last stationarity measure."""

    def __init__(self, message: str, slope: float = float("nan"), iterations: int = 0):
        super().__init__(f"{message} (last slope {slope:.3e} after {iterations} iterations)")
        self.slope = slope
        self.iterations = iterations


@dataclass(frozen=True)
class SolveOptions:
    tol_slope: float = 1e-8
    max_iter: int = 200
    backtrack: float = 0.5
    armijo: float = 1e-4
    max_flow_steps: int = 10_000
    flow_tol: Optional[float] = None
    energy_stall: float = 1e-14

    def __post_init__(self):
        if not self.tol_slope > 0:
            raise ValueError(f"tol_slope must be positive, got {self.tol_slope}")
        if self.max_iter < 1:
            raise ValueError(f"max_iter must be >= 1, got {self.max_iter}")
        if not 0 < self.backtrack < 1 or not 0 < self.armijo < 1:
            raise ValueError("line-search constants must lie in (0, 1)")

    @property
    def flow_tolerance(self) -> float:
        return self.tol_slope if self.flow_tol is None else self.flow_tol


class USolve(NamedTuple):
    u: np.ndarray
    iterations: int
    slope: float


class ZSolve(NamedTuple):
    z: np.ndarray
    iterations: int
    active_set: np.ndarray


# stationarity below this (relative) level is not resolvable in double precision
INNER_TOL_FLOOR = 1e-14


def _inner_options(opts: SolveOptions) -> SolveOptions:
    """Tolerance of the proximal step solves: two digits tighter than the flow, floored at roundoff."""
    tol = max(min(opts.tol_slope, 1e-2 * opts.flow_tolerance), INNER_TOL_FLOOR)
    return SolveOptions(tol_slope=tol, max_iter=opts.max_iter)


def _roundoff(value: float) -> float:
    return 64.0 * np.finfo(float).eps * (1.0 + abs(value))


def solve_u(problem: Problem, t: float, z: np.ndarray, u_init: np.ndarray,
            opts: SolveOptions = SolveOptions(), prox: Optional[Tuple[float, np.ndarray]] = None,
            factor_cache: Optional[dict] = None) -> USolve:
    """Minimize ``F(t, ., z) + w/2 ||. - c||_H1^2`` over fields vanishing on Dirichlet dofs.

    Parameters
    ----------
    prox
        Optional ``(w, c)`` proximal weight and centre; ``None`` for the plain problem.
    factor_cache
        Optional dict reused across calls with the same ``z`` and ``w``; tangent
        factorizations are keyed on the elementwise tension pattern.

    Returns
    -------
    USolve
        Minimizer, Newton iterations used and the final H1 slope of the
        minimized functional.
    """
    mesh = problem.mesh
    free = mesh.free_dofs
    H = problem.ips.h1_matrix
    w, centre = (0.0, None) if prox is None else (float(prox[0]), prox[1][free])
    u = np.array(u_init, dtype=float)
    u[mesh.dirichlet_dofs] = 0.0
    x = u[free]

    def objective(xf):
        val = total_energy(problem, t, problem.expand(xf), z)
        if w:
            d = xf - centre
            val += 0.5 * w * float(d @ (H @ d))
        return val

    def gradient(xf):
        g = gradient_u_full(problem, t, problem.expand(xf), z)[free]
        if w:
            g = g + w * (H @ (xf - centre))
        return g

    F = objective(x)
    slope = np.inf
    for it in range(opts.max_iter + 1):
        g = gradient(x)
        slope, _ = slope_u_from_gradient(problem, g)
        if slope <= opts.tol_slope * (1.0 + abs(F)):
            return USolve(problem.expand(x), it, slope)
        if it == opts.max_iter:
            break
        step = _newton_direction(problem, t, x, z, w, g, factor_cache)
        accepted = False
        for direction in ([step] if step is not None else []) + [-problem.ips.h1_solve(g)]:
            slope_dir = float(g @ direction)
            if not slope_dir < 0:
                continue
            alpha = 1.0
            while alpha > 1e-12:
                trial = x + alpha * direction
                F_trial = objective(trial)
                if F_trial <= F + opts.armijo * alpha * slope_dir + _roundoff(F):
                    x, F, accepted = trial, F_trial, True
                    break
                alpha *= opts.backtrack
            if accepted:
                break
        if not accepted:
            raise SolverError("displacement line search stalled", slope, it)
    raise SolverError("displacement solver did not converge", slope, opts.max_iter)


def _newton_direction(problem: Problem, t: float, x: np.ndarray, z: np.ndarray,
                      w: float, g: np.ndarray, cache: Optional[dict] = None) -> Optional[np.ndarray]:
    u = problem.expand(x)
    key = None
    if cache is not None:
        eps = problem.strains(t, u)
        key = ((eps[:, 0] + eps[:, 1]) >= 0.0).tobytes()
    try:
        lu = cache.get(key) if key is not None else None
        if lu is None:
            K = problem.tangent(t, u, z)
            if w:
                K = K + w * problem.ips.h1_matrix
            lu = splu(K.tocsc())
            if key is not None:
                if len(cache) >= 8:
                    cache.clear()
                cache[key] = lu
        d = lu.solve(-g)
    except RuntimeError:
        return None
    return d if np.all(np.isfinite(d)) else None


@dataclass(frozen=True, eq=False)
class PhaseFieldProblem:
    """The z-subproblem at frozen ``(t, u)``, optionally with a lumped proximal term."""

    q: np.ndarray
    stiffness: sp.csr_matrix
    mass: np.ndarray
    degradation: object
    dissipation: object
    w: float = 0.0
    centre: Optional[np.ndarray] = None

    @classmethod
    def build(cls, problem: Problem, t: float, u: np.ndarray, prox=None) -> "PhaseFieldProblem":
        w, c = (0.0, None) if prox is None else (float(prox[0]), np.asarray(prox[1], dtype=float))
        m = problem.model
        return cls(problem.psi_plus_weights(t, u), problem.ips.stiffness_z, problem.ips.lumped_mass,
                   m.degradation, m.dissipation, w, c)

    def value(self, z: np.ndarray) -> float:
        v = float(np.sum(self.q * self.degradation.h(z)) + 0.5 * z @ (self.stiffness @ z)
                  + np.sum(self.mass * self.dissipation.f(z)))
        if self.w:
            d = z - self.centre
            v += 0.5 * self.w * float(np.sum(self.mass * d * d))
        return v

    def gradient(self, z: np.ndarray) -> np.ndarray:
        g = self.q * self.degradation.dh(z) + self.stiffness @ z + self.mass * self.dissipation.df(z)
        if self.w:
            g = g + self.w * self.mass * (z - self.centre)
        return g

    def hessian(self, z: np.ndarray) -> sp.csr_matrix:
        diag = self.q * self.degradation.d2h(z) + self.mass * (self.dissipation.d2f(z) + self.w)
        return (self.stiffness + sp.diags(diag)).tocsr()

    def residual(self, z: np.ndarray, upper: np.ndarray) -> float:
        """Lumped-L2 norm of the natural residual ``z - min(upper, z - g/m)``."""
        r = z - np.minimum(upper, z - self.gradient(z) / self.mass)
        return float(np.sqrt(np.sum(self.mass * r * r)))


def kkt_residual(problem: Problem, t: float, u: np.ndarray, z: np.ndarray, upper: np.ndarray) -> float:
    return PhaseFieldProblem.build(problem, t, u).residual(z, upper)


def solve_z(problem: Problem, t: float, u: np.ndarray, z_upper: np.ndarray, z_init: np.ndarray,
            opts: SolveOptions = SolveOptions(), prox: Optional[Tuple[float, np.ndarray]] = None) -> ZSolve:
    """Minimize ``F(t, u, .)`` subject to ``z <= z_upper`` (plus an optional lumped proximal term)."""
    upper = np.asarray(z_upper, dtype=float)
    z0 = np.asarray(z_init, dtype=float)
    if z0.shape != upper.shape or z0.shape != (problem.mesh.node_count,):
        raise ValueError("z_init and z_upper must be nodal fields on the mesh")
    if np.any(z0 > upper):
        raise ValueError(f"z_init exceeds z_upper at {int(np.sum(z0 > upper))} nodes")
    sub = PhaseFieldProblem.build(problem, t, u, prox)
    if problem.model.quadratic:
        try:
            return _primal_dual_active_set(sub, upper, z0, opts)
        except SolverError:
            pass
    return _projected_newton(sub, upper, z0, opts)


def _converged(sub: PhaseFieldProblem, z: np.ndarray, upper: np.ndarray, opts: SolveOptions) -> bool:
    return sub.residual(z, upper) <= opts.tol_slope * (1.0 + abs(sub.value(z)))


def _primal_dual_active_set(sub: PhaseFieldProblem, upper: np.ndarray, z0: np.ndarray,
                            opts: SolveOptions) -> ZSolve:
    if _converged(sub, z0, upper, opts):
        return ZSolve(z0.copy(), 0, np.flatnonzero(z0 >= upper))
    # quadratic model: 1/2 z.A z - b.z with A = K + diag(2q + 2m + w m)
    A = sub.hessian(z0).tocsr()
    b = A @ z0 - sub.gradient(z0)
    diag = A.diagonal()
    z = z0.copy()
    lam = b - A @ z
    active = None
    for it in range(1, opts.max_iter + 1):
        new_active = lam + diag * (z - upper) > 0
        if active is not None and np.array_equal(new_active, active):
            if _converged(sub, z, upper, opts):
                return ZSolve(z, it - 1, np.flatnonzero(active))
            break
        active = new_active
        inactive = ~active
        z = np.where(active, upper, 0.0)
        if np.any(inactive):
            rhs = b[inactive] - A[inactive][:, active] @ upper[active]
            z[inactive] = splu(A[inactive][:, inactive].tocsc()).solve(rhs)
        lam = np.where(active, b - A @ z, 0.0)
    raise SolverError("active-set iteration did not settle", sub.residual(z, upper), opts.max_iter)


def _projected_newton(sub: PhaseFieldProblem, upper: np.ndarray, z0: np.ndarray,
                      opts: SolveOptions) -> ZSolve:
    """Bertsekas projected Newton for the upper-bounded convex problem."""
    z = z0.copy()
    F = sub.value(z)
    for it in range(opts.max_iter + 1):
        g = sub.gradient(z)
        res = sub.residual(z, upper)
        if res <= opts.tol_slope * (1.0 + abs(F)):
            return ZSolve(z, it, np.flatnonzero(z >= upper))
        if it == opts.max_iter:
            break
        eps = min(res / np.sqrt(np.sum(sub.mass)), 1e-3)
        binding = (z >= upper - eps) & (g < 0)
        freeset = ~binding
        Hm = sub.hessian(z)
        d = np.zeros_like(z)
        d[binding] = -g[binding] / Hm.diagonal()[binding]
        if np.any(freeset):
            d[freeset] = splu(Hm[freeset][:, freeset].tocsc()).solve(-g[freeset])
        alpha = 1.0
        while True:
            trial = np.minimum(upper, z + alpha * d)
            F_trial = sub.value(trial)
            decrease = alpha * float(g[freeset] @ d[freeset]) + float(g[binding] @ (trial - z)[binding])
            if F_trial <= F + opts.armijo * decrease + _roundoff(F):
                break
            alpha *= opts.backtrack
            if alpha < 1e-12:
                raise SolverError("phase-field line search stalled", res, it)
        z, F = trial, F_trial
    raise SolverError("phase-field solver did not converge", sub.residual(z, upper), opts.max_iter)


def qp_active_set_oracle(problem: Problem, t: float, u: np.ndarray, z_upper: np.ndarray,
                         max_dofs: int = 12) -> np.ndarray:
    """Brute-force solution of the quadratic z-subproblem by enumerating every active set.

    Assembles its own matrices with a per-triangle loop, independent of the
    vectorised assembly used by :func:`solve_z`.  Intended for tests only.
    """
    mesh = problem.mesh
    n = mesh.node_count
    if n > max_dofs:
        raise ValueError(f"oracle limited to {max_dofs} phase-field dofs, mesh has {n}")
    if problem.model.degradation.family != "quadratic":
        raise ValueError("oracle requires the quadratic degradation family")
    p = problem.params
    field = np.asarray(u, dtype=float) + problem.g(t)
    A = np.zeros((n, n))
    m = np.zeros(n)
    q = np.zeros(n)
    for e, tri in enumerate(mesh.triangles):
        x = mesh.nodes[tri]
        area = 0.5 * abs(np.linalg.det(np.array([x[1] - x[0], x[2] - x[0]])))
        # barycentric gradients from the inverse of the affine map
        T = np.vstack([np.ones(3), x.T])
        grads = np.linalg.inv(T)[:, 1:]
        A[np.ix_(tri, tri)] += area * grads @ grads.T
        s = split_strain(element_strain(mesh, field, e))
        psi_p = p.mu * s.dev.norm2() + p.kappa * s.vol_plus.norm2()
        for a in tri:
            m[a] += area / 3.0
            q[a] += area / 3.0 * psi_p
    # z^2 q + (1-z)^2 m  ->  diagonal 2q + 2m, linear term 2m
    A += np.diag(2.0 * q + 2.0 * m)
    b = 2.0 * m
    upper = np.asarray(z_upper, dtype=float)
    best = None
    for mask in itertools.product((False, True), repeat=n):
        act = np.array(mask)
        ina = ~act
        z = upper.copy()
        if np.any(ina):
            z[ina] = np.linalg.solve(A[np.ix_(ina, ina)], b[ina] - A[np.ix_(ina, act)] @ upper[act])
        lam = b - A @ z
        scale = 1e-11 * (1.0 + np.abs(b).max())
        if np.all(z[ina] <= upper[ina] + scale) and np.all(lam[act] >= -scale):
            if best is None:
                best = z
            elif np.max(np.abs(best - z)) > 1e-8:
                raise RuntimeError("multiple KKT points found; the quadratic program is not strictly convex")
    if best is None:
        raise RuntimeError("no KKT point found")
    return best


@dataclass(frozen=True, eq=False)
class FlowSample:
    l: float
    field: np.ndarray
    energy: float
    slope: float
    increment: float
    dl: float


@dataclass(eq=False)
class FlowTrajectory:
    """Implicit Euler samples of a gradient flow; the first sample is the initial datum."""

    kind: str
    samples: List[FlowSample] = field(default_factory=list)
    converged: bool = False

    @property
    def arc_length(self) -> float:
        return float(sum(s.increment for s in self.samples))

    @property
    def dissipation(self) -> float:
        """Discrete ``int ||x'||^2 dl`` as ``sum ||dx||^2 / dl``."""
        return float(sum(s.increment ** 2 / s.dl for s in self.samples[1:]))

    @property
    def terminal_field(self) -> np.ndarray:
        return self.samples[-1].field

    @property
    def pseudo_time(self) -> float:
        return self.samples[-1].l


def _run_flow(kind: str, step, measure, energy, slope, x0: np.ndarray, dl: float,
              opts: SolveOptions) -> FlowTrajectory:
    if not dl > 0:
        raise ValueError(f"pseudo-time step must be positive, got {dl}")
    traj = FlowTrajectory(kind)
    x, F, s, l = x0.copy(), energy(x0), slope(x0), 0.0
    traj.samples.append(FlowSample(0.0, x, F, s, 0.0, dl))
    tol = opts.flow_tolerance
    for _ in range(opts.max_flow_steps):
        if s <= tol * (1.0 + abs(F)):
            traj.converged = True
            return traj
        while True:
            try:
                x_new = step(x, dl)
                break
            except SolverError:
                dl *= 0.5
                if dl < 1e-14:
                    raise
        F_new = energy(x_new)
        inc = measure(x_new - x)
        l += dl
        stalled = F - F_new <= opts.energy_stall * (1.0 + abs(F))
        x, F, s = x_new, F_new, slope(x_new)
        traj.samples.append(FlowSample(l, x, F, s, inc, dl))
        if stalled:
            traj.converged = s <= tol * (1.0 + abs(F)) or inc == 0.0
            return traj
    traj.converged = s <= tol * (1.0 + abs(F))
    return traj


def flow_u(problem: Problem, t: float, z: np.ndarray, u0: np.ndarray, dl: float,
           opts: SolveOptions = SolveOptions()) -> FlowTrajectory:
    """H1 gradient flow of ``F(t, ., z)`` by implicit Euler with step ``dl``."""
    free = problem.mesh.free_dofs
    inner = _inner_options(opts)
    caches: dict = {}

    def step(u, h):
        return solve_u(problem, t, z, u, inner, prox=(1.0 / h, u), factor_cache=caches.setdefault(h, {})).u

    def slope(u):
        g = gradient_u_full(problem, t, u, z)[free]
        return slope_u_from_gradient(problem, g)[0]

    return _run_flow("u", step, problem.h1_norm, lambda u: total_energy(problem, t, u, z),
                     slope, np.asarray(u0, dtype=float), dl, opts)


def flow_z(problem: Problem, t: float, u: np.ndarray, z0: np.ndarray, dl: float,
           opts: SolveOptions = SolveOptions()) -> FlowTrajectory:
    """Unilateral lumped-L2 flow of ``F(t, u, .)``: each step is constrained below the previous iterate."""
    base = PhaseFieldProblem.build(problem, t, u)
    inner = _inner_options(opts)

    def step(z, h):
        return solve_z(problem, t, u, z, z, inner, prox=(1.0 / h, z)).z

    def slope(z):
        return unilateral_slope(base.gradient(z), base.mass)

    return _run_flow("z", step, problem.l2_norm, lambda z: total_energy(problem, t, u, z),
                     slope, np.asarray(z0, dtype=float), dl, opts)
