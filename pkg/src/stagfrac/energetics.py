"""
Constitutive algebra of the split energy and its global assembly.

Elastic density ``W(z, e) = h(z) Psi+(e) + Psi-(e)`` with
``Psi+ = mu |e_d|^2 + kappa |e_v^+|^2`` and ``Psi- = kappa |e_v^-|^2``.
The dissipation is ``1/2 int |grad z|^2 + int f(z)``.  Every z-dependent
factor is integrated with the nodal (lumped) rule.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Tuple

import numpy as np
import scipy.sparse as sp

from .constitutive import BoundaryDatum, DegradationSpec, MaterialParams, Model
from .mesh import InnerProducts, Mesh, Strain2, assemble_inner_products, element_strains


@dataclass(frozen=True)
class SplitStrain:
    vol: Strain2
    dev: Strain2
    vol_plus: Strain2
    vol_minus: Strain2


@dataclass(frozen=True)
class EnergyBreakdown:
    elastic: float
    dissipation: float

    @property
    def total(self) -> float:
        return self.elastic + self.dissipation


@dataclass(frozen=True, eq=False)
class SlopeReport:
    slope_u: float
    slope_z_unilateral: float
    maximizer_u: np.ndarray


@dataclass(frozen=True, eq=False)
class State:
    """Time, interleaved displacement (zero on Dirichlet dofs) and nodal phase field."""

    t: float
    u: np.ndarray
    z: np.ndarray


def positive_part(x):
    return np.maximum(x, 0.0)


def negative_part(x):
    """``(x)_- = max(-x, 0)``."""
    return np.maximum(-x, 0.0)


def split_strain(e: Strain2) -> SplitStrain:
    half_tr = 0.5 * e.trace
    vol = Strain2(half_tr, half_tr, 0.0)
    dev = e - vol
    p = 0.5 * float(positive_part(e.trace))
    m = 0.5 * float(negative_part(e.trace))
    return SplitStrain(vol, dev, Strain2(p, p, 0.0), Strain2(m, m, 0.0))


def density_and_stress(z: float, e: Strain2, params: MaterialParams,
                       deg: DegradationSpec) -> Tuple[float, Strain2]:
    """Pointwise ``W(z, e)`` and ``dW/de = 2h(mu e_d + kappa e_v^+) - 2 kappa e_v^-``."""
    h = float(deg.h(z))
    s = split_strain(e)
    psi_p = params.mu * s.dev.norm2() + params.kappa * s.vol_plus.norm2()
    psi_m = params.kappa * s.vol_minus.norm2()
    sigma = 2.0 * h * (params.mu * s.dev + params.kappa * s.vol_plus) - 2.0 * params.kappa * s.vol_minus
    return h * psi_p + psi_m, sigma


# vectorised kernels on (n, 3) strain arrays [e11, e22, e12]

def psi_parts(eps: np.ndarray, mu: float, kappa: float) -> Tuple[np.ndarray, np.ndarray]:
    tr = eps[:, 0] + eps[:, 1]
    d11 = eps[:, 0] - 0.5 * tr
    d22 = eps[:, 1] - 0.5 * tr
    dev2 = d11 * d11 + d22 * d22 + 2.0 * eps[:, 2] ** 2
    tp = positive_part(tr)
    tm = negative_part(tr)
    return mu * dev2 + 0.5 * kappa * tp * tp, 0.5 * kappa * tm * tm


def stress(eps: np.ndarray, hbar: np.ndarray, mu: float, kappa: float) -> np.ndarray:
    tr = eps[:, 0] + eps[:, 1]
    vol = hbar * kappa * positive_part(tr) - kappa * negative_part(tr)
    two_hmu = 2.0 * hbar * mu
    return np.column_stack([two_hmu * (eps[:, 0] - 0.5 * tr) + vol,
                            two_hmu * (eps[:, 1] - 0.5 * tr) + vol,
                            two_hmu * eps[:, 2]])


def contract(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return a[:, 0] * b[:, 0] + a[:, 1] * b[:, 1] + 2.0 * a[:, 2] * b[:, 2]


def tangent_moduli(eps: np.ndarray, hbar: np.ndarray, mu: float, kappa: float) -> np.ndarray:
    """Voigt tangent ``(n, 3, 3)`` (engineering shear); ``tr e = 0`` takes the tension branch."""
    tr = eps[:, 0] + eps[:, 1]
    k_eff = np.where(tr >= 0.0, kappa * hbar, kappa)
    hm = hbar * mu
    d = np.zeros((eps.shape[0], 3, 3))
    d[:, 0, 0] = hm + k_eff
    d[:, 1, 1] = hm + k_eff
    d[:, 0, 1] = k_eff - hm
    d[:, 1, 0] = k_eff - hm
    d[:, 2, 2] = hm
    return d


@dataclass(frozen=True, eq=False)
class Problem:
    """Mesh, material model and boundary datum with cached assembly data."""

    mesh: Mesh
    model: Model
    datum: BoundaryDatum

    @cached_property
    def ips(self) -> InnerProducts:
        return assemble_inner_products(self.mesh)

    @property
    def params(self) -> MaterialParams:
        return self.model.params

    @cached_property
    def G_nodal(self) -> np.ndarray:
        return self.datum.spatial(self.mesh)

    @cached_property
    def eps_G(self) -> np.ndarray:
        return element_strains(self.mesh, self.G_nodal)

    @cached_property
    def free_index(self) -> np.ndarray:
        idx = np.full(2 * self.mesh.node_count, -1, dtype=np.int64)
        idx[self.mesh.free_dofs] = np.arange(self.mesh.free_dofs.size)
        return idx

    @cached_property
    def _tangent_pattern(self):
        edofs = self.free_index[self.mesh.element_dofs]
        rows = np.repeat(edofs, 6, axis=1).ravel()
        cols = np.tile(edofs, (1, 6)).ravel()
        keep = (rows >= 0) & (cols >= 0)
        return rows[keep], cols[keep], keep

    @property
    def n_free(self) -> int:
        return self.mesh.free_dofs.size

    def g(self, t: float) -> np.ndarray:
        return self.datum.rho(t) * self.G_nodal

    def strains(self, t: float, u: np.ndarray) -> np.ndarray:
        """Element strains of ``u + g(t)``."""
        return element_strains(self.mesh, u) + self.datum.rho(t) * self.eps_G

    def hbar(self, z: np.ndarray) -> np.ndarray:
        """Element mean of nodal ``h(z)`` (nodal quadrature of the degradation)."""
        return self.model.degradation.h(z)[self.mesh.triangles].mean(axis=1)

    def nodal_weights(self, elem_values: np.ndarray) -> np.ndarray:
        """``sum_{e ni i} |e|/3 * v_e`` for each node ``i``."""
        w = np.repeat(self.mesh.signed_areas * elem_values / 3.0, 3)
        return np.bincount(self.mesh.triangles.ravel(), weights=w, minlength=self.mesh.node_count)

    def psi_plus_weights(self, t: float, u: np.ndarray) -> np.ndarray:
        """Nodal ``m_i * Psi+_i`` with area-weighted recovery of the element values."""
        psi_p, _ = psi_parts(self.strains(t, u), self.params.mu, self.params.kappa)
        return self.nodal_weights(psi_p)

    def assemble_vector(self, elem_stress: np.ndarray) -> np.ndarray:
        """Full-dof vector ``int sigma : e(phi)`` from elementwise stresses."""
        dx, dy = self.mesh.gradient_operators
        a = self.mesh.signed_areas
        s11, s22, s12 = (a * elem_stress[:, c] for c in range(3))
        out = np.empty(2 * self.mesh.node_count)
        out[0::2] = dx.T @ s11 + dy.T @ s12
        out[1::2] = dy.T @ s22 + dx.T @ s12
        return out

    def tangent(self, t: float, u: np.ndarray, z: np.ndarray) -> sp.csc_matrix:
        """Generalised Hessian of ``F(t, ., z)`` on free dofs."""
        eps = self.strains(t, u)
        d = tangent_moduli(eps, self.hbar(z), self.params.mu, self.params.kappa)
        b = self.mesh.strain_matrices
        ke = self.mesh.signed_areas[:, None, None] * np.einsum("eia,eij,ejb->eab", b, d, b)
        rows, cols, keep = self._tangent_pattern
        n = self.n_free
        return sp.coo_matrix((ke.ravel()[keep], (rows, cols)), shape=(n, n)).tocsc()

    def h1_norm(self, w: np.ndarray) -> float:
        """H1 norm of an interleaved field vanishing on Dirichlet dofs."""
        return self.ips.h1_norm(w[self.mesh.free_dofs])

    def l2_norm(self, z: np.ndarray) -> float:
        return self.ips.l2_norm(z)

    def expand(self, w_free: np.ndarray) -> np.ndarray:
        out = np.zeros(2 * self.mesh.node_count)
        out[self.mesh.free_dofs] = w_free
        return out

    def check_sizes(self, u: np.ndarray, z: np.ndarray) -> None:
        n = self.mesh.node_count
        if np.shape(u) != (2 * n,) or np.shape(z) != (n,):
            raise ValueError(f"field sizes {np.shape(u)}, {np.shape(z)} do not match mesh with {n} nodes")


def assemble_energy(problem: Problem, t: float, u: np.ndarray, z: np.ndarray) -> EnergyBreakdown:
    problem.check_sizes(u, z)
    p = problem.params
    psi_p, psi_m = psi_parts(problem.strains(t, u), p.mu, p.kappa)
    area = problem.mesh.signed_areas
    elastic = float(np.sum(area * (problem.hbar(z) * psi_p + psi_m)))
    ips = problem.ips
    dis = problem.model.dissipation
    dissipation = float(0.5 * z @ (ips.stiffness_z @ z) + np.sum(ips.lumped_mass * dis.f(z)))
    return EnergyBreakdown(elastic, dissipation)


def total_energy(problem: Problem, t: float, u: np.ndarray, z: np.ndarray) -> float:
    return assemble_energy(problem, t, u, z).total


def gradient_u_full(problem: Problem, t: float, u: np.ndarray, z: np.ndarray) -> np.ndarray:
    p = problem.params
    sig = stress(problem.strains(t, u), problem.hbar(z), p.mu, p.kappa)
    return problem.assemble_vector(sig)


def gradient_z(problem: Problem, t: float, u: np.ndarray, z: np.ndarray) -> np.ndarray:
    ips = problem.ips
    m = problem.model
    q = problem.psi_plus_weights(t, u)
    return q * m.degradation.dh(z) + ips.stiffness_z @ z + ips.lumped_mass * m.dissipation.df(z)


def assemble_gradients(problem: Problem, t: float, u: np.ndarray,
                       z: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """``(dF/du on free dofs, dF/dz on all nodes)``."""
    problem.check_sizes(u, z)
    g_u = gradient_u_full(problem, t, u, z)[problem.mesh.free_dofs]
    return g_u, gradient_z(problem, t, u, z)


def slope_u_from_gradient(problem: Problem, g_u: np.ndarray) -> Tuple[float, np.ndarray]:
    """H1 dual norm of ``g_u`` and the unit-norm steepest-descent direction (full field)."""
    if not np.any(g_u):
        return 0.0, np.zeros(2 * problem.mesh.node_count)
    riesz = problem.ips.h1_solve(g_u)
    val = float(g_u @ riesz)
    if not np.isfinite(val) or val < -1e-12 * float(g_u @ g_u):
        raise np.linalg.LinAlgError("H1 solve failed: inner-product matrix is not positive definite")
    slope = float(np.sqrt(max(val, 0.0)))
    if slope == 0.0:
        return 0.0, np.zeros(2 * problem.mesh.node_count)
    return slope, problem.expand(-riesz / slope)


def unilateral_slope(g_z: np.ndarray, lumped_mass: np.ndarray) -> float:
    """``max{-g.psi : psi <= 0, sum m psi^2 <= 1}`` in the lumped L2 geometry."""
    gp = positive_part(np.asarray(g_z, dtype=float))
    return float(np.sqrt(np.sum(gp * gp / lumped_mass)))


def slopes(problem: Problem, t: float, u: np.ndarray, z: np.ndarray) -> SlopeReport:
    g_u, g_z = assemble_gradients(problem, t, u, z)
    s_u, direction = slope_u_from_gradient(problem, g_u)
    return SlopeReport(s_u, unilateral_slope(g_z, problem.ips.lumped_mass), direction)


def datum_stress_work(problem: Problem, t: float, u: np.ndarray, z: np.ndarray) -> float:
    """``int sigma(z, e(u + g(t))) : e(G)``, the power per unit ``rho'``."""
    problem.check_sizes(u, z)
    p = problem.params
    sig = stress(problem.strains(t, u), problem.hbar(z), p.mu, p.kappa)
    return float(np.sum(problem.mesh.signed_areas * contract(sig, problem.eps_G)))


def power(problem: Problem, t: float, u: np.ndarray, z: np.ndarray) -> float:
    """Rate of change of the energy due to the moving datum at frozen ``(u, z)``."""
    return problem.datum.rho_dot(t) * datum_stress_work(problem, t, u, z)


def isotropic_energy_density(eps: np.ndarray, mu: float, kappa: float) -> np.ndarray:
    """``sigma(e) : e / 2`` for the unsplit isotropic law, ``mu |e_d|^2 + kappa |e_v|^2``."""
    tr = eps[:, 0] + eps[:, 1]
    d11 = eps[:, 0] - 0.5 * tr
    d22 = eps[:, 1] - 0.5 * tr
    return mu * (d11 * d11 + d22 * d22 + 2.0 * eps[:, 2] ** 2) + 0.5 * kappa * tr * tr


def energy_norms(problem: Problem, state: State, u_dir: np.ndarray,
                 z_dir: np.ndarray) -> Tuple[float, float]:
    """State-dependent energy norms ``(||u_dir||_z, ||z_dir||_u)`` of the separately quadratic model.

    ``||v||_z^2 = int (z^2 + eta) sigma(v):e(v)`` and
    ``||w||_u^2 = int |grad w|^2 + w^2 (1 + sigma(u+g):e(u+g))``.
    """
    if problem.model.degradation.family != "quadratic":
        raise ValueError("energy norms are defined for the quadratic degradation family only")
    p = problem.params
    mesh = problem.mesh
    weight = (state.z * state.z + p.eta)[mesh.triangles].mean(axis=1)
    eps_dir = element_strains(mesh, u_dir)
    nu2 = float(np.sum(mesh.signed_areas * weight * 2.0 * isotropic_energy_density(eps_dir, p.mu, p.kappa)))

    eps_state = problem.strains(state.t, state.u)
    q = problem.nodal_weights(2.0 * isotropic_energy_density(eps_state, p.mu, p.kappa))
    ips = problem.ips
    nz2 = float(z_dir @ (ips.stiffness_z @ z_dir) + np.sum((ips.lumped_mass + q) * z_dir * z_dir))
    return float(np.sqrt(max(nu2, 0.0))), float(np.sqrt(max(nz2, 0.0)))
