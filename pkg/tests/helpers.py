"""Small problem builders shared by the test modules."""

import numpy as np

from stagfrac.constitutive import BoundaryDatum, Model
from stagfrac.energetics import Problem, State
from stagfrac.mesh import build_rect_mesh

ALL_SIDES = {"left": "xy", "right": "xy", "bottom": "xy", "top": "xy"}


def uniaxial_problem(nx=1, ny=1, dirichlet=None, eta=0.0, h="quadratic"):
    """Unit square under ``g(t, x) = t (x1, 0)`` with ``mu = 1``, ``kappa = 2``.

    ``eta = 0`` lies outside the admissible class but is what the hand
    evaluated energy examples use; the algebra accepts it.
    """
    mesh = build_rect_mesh(nx, ny, 1.0, 1.0, dirichlet or ALL_SIDES)
    datum = BoundaryDatum.from_breakpoints([[1.0, 0.0], [0.0, 0.0]], [0.0, 0.0], [[0.0, 0.0], [1.0, 1.0]])
    return Problem(mesh, Model.create(1.0, 2.0, eta, h=h), datum)


def random_problem(rng, nx=8, ny=8, h="quadratic"):
    mesh = build_rect_mesh(nx, ny, 1.0, 1.0, {"left": "xy", "bottom": "y"})
    datum = BoundaryDatum.from_breakpoints(rng.normal(size=(2, 2)), 0.1 * rng.normal(size=2),
                                           [[0.0, 0.0], [0.4, 0.8], [1.0, 1.0]])
    return Problem(mesh, Model.create(1.3, 2.1, 0.02, h=h), datum)


def random_state(rng, problem, z_low=0.0):
    return State(float(rng.uniform(0.05, 0.35)), problem.expand(0.3 * rng.normal(size=problem.n_free)),
                 rng.uniform(z_low, 1.0, problem.mesh.node_count))


# acceptance outcomes, printed one line each at the end of the session
ACCEPTANCE = {}


def record_criterion(number, name, passed, detail):
    ACCEPTANCE[number] = (name, bool(passed), detail)
    return bool(passed)
