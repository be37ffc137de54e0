"""Material parameters, degradation/dissipation families, boundary datum, time grid."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np

from .mesh import Mesh

DEGRADATION_FAMILIES = ("quadratic", "quartic")
DISSIPATION_FAMILIES = ("at2", "shifted")


@dataclass(frozen=True)
class MaterialParams:
    mu: float
    kappa: float
    eta: float


@dataclass(frozen=True)
class DegradationSpec:
    """``h(z) = z**2 + eta`` (quadratic) or ``z**4 + eta`` (quartic)."""

    family: str
    eta: float

    def __post_init__(self):
        if self.family not in DEGRADATION_FAMILIES:
            raise ValueError(f"unknown degradation family {self.family!r}")

    def h(self, z):
        z = np.asarray(z, dtype=float)
        if self.family == "quadratic":
            return z * z + self.eta
        return z**4 + self.eta

    def dh(self, z):
        z = np.asarray(z, dtype=float)
        if self.family == "quadratic":
            return 2.0 * z
        return 4.0 * z**3

    def d2h(self, z):
        z = np.asarray(z, dtype=float)
        if self.family == "quadratic":
            return np.full_like(z, 2.0)
        return 12.0 * z * z


@dataclass(frozen=True)
class DissipationSpec:
    """``f(z) = (1 - z)**2 + c0``; ``c0 = 0`` for ``at2``."""

    family: str = "at2"
    c0: float = 0.0

    def __post_init__(self):
        if self.family not in DISSIPATION_FAMILIES:
            raise ValueError(f"unknown dissipation family {self.family!r}")
        if self.family == "at2" and self.c0 != 0.0:
            raise ValueError("at2 dissipation has no offset; use family 'shifted'")

    def f(self, z):
        z = np.asarray(z, dtype=float)
        return (1.0 - z) ** 2 + self.c0

    def df(self, z):
        z = np.asarray(z, dtype=float)
        return -2.0 * (1.0 - z)

    def d2f(self, z):
        return np.full_like(np.asarray(z, dtype=float), 2.0)


@dataclass(frozen=True)
class Model:
    params: MaterialParams
    degradation: DegradationSpec
    dissipation: DissipationSpec = field(default_factory=DissipationSpec)

    @classmethod
    def create(cls, mu, kappa, eta, h="quadratic", f="at2", c0=0.0) -> "Model":
        return cls(MaterialParams(mu, kappa, eta), DegradationSpec(h, eta), DissipationSpec(f, c0))

    @property
    def quadratic(self) -> bool:
        """True when the phase-field subproblem is a quadratic program."""
        return self.degradation.family == "quadratic"


def eval_h_f(deg: DegradationSpec, dis: DissipationSpec, z: float) -> Tuple[float, float, float, float]:
    """Return ``(h(z), h'(z), f(z), f'(z))``."""
    return (float(deg.h(z)), float(deg.dh(z)), float(dis.f(z)), float(dis.df(z)))


@dataclass
class ValidationReport:
    failures: List[Tuple[str, str]] = field(default_factory=list)
    checks: List[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failures

    def check(self, name: str, passed: bool, detail: str = "") -> None:
        self.checks.append(name)
        if not passed:
            self.failures.append((name, detail))

    def __str__(self) -> str:
        if self.ok:
            return f"all {len(self.checks)} checks passed"
        return "; ".join(f"{n}: {d}" if d else n for n, d in self.failures)


def validate_model(params: MaterialParams, deg: DegradationSpec, dis: DissipationSpec,
                   samples: int = 401) -> ValidationReport:
    """Check positivity and the sampled convexity/monotonicity assumptions.

    Never raises; every failing invariant is listed with an offending sample.
    """
    rep = ValidationReport()
    for name in ("mu", "kappa", "eta"):
        val = getattr(params, name)
        rep.check(f"{name} > 0", bool(np.isfinite(val) and val > 0), f"{name} = {val}")
    rep.check("h(0) = eta", deg.eta == params.eta, f"h(0) = {deg.eta}, eta = {params.eta}")

    zs = np.linspace(-2.0, 3.0, samples)
    step = zs[1] - zs[0]
    with np.errstate(all="ignore"):
        hv = deg.h(zs)
        second = hv[:-2] - 2.0 * hv[1:-1] + hv[2:]
        bad = np.flatnonzero(second < -1e-10)
        rep.check("h convex", bad.size == 0, f"second difference {second[bad[0]]:.3e} at z = {zs[bad[0] + 1]:.4g}"
                  if bad.size else "")
        nonneg = zs >= 0
        dh_pos = np.diff(hv[nonneg])
        bad = np.flatnonzero(dh_pos < -1e-12)
        rep.check("h non-decreasing on [0, inf)", bad.size == 0,
                  f"decrease at z = {zs[nonneg][bad[0]]:.4g}" if bad.size else "")
        bad = np.flatnonzero(hv < deg.eta - 1e-14)
        rep.check("h(z) >= h(0) > 0", bad.size == 0 and deg.eta > 0,
                  f"h({zs[bad[0]]:.4g}) = {hv[bad[0]]:.4g}" if bad.size else f"h(0) = {deg.eta}")
        rep.check("h finite", bool(np.all(np.isfinite(hv)) and np.all(np.isfinite(deg.dh(zs)))))

        fv = dis.f(zs)
        # strong convexity with modulus 2: f(z) - z**2 convex
        g = fv - zs * zs
        second = g[:-2] - 2.0 * g[1:-1] + g[2:]
        bad = np.flatnonzero(second < -1e-10 * max(1.0, step))
        rep.check("f strongly convex (modulus >= 2)", bad.size == 0,
                  f"at z = {zs[bad[0] + 1]:.4g}" if bad.size else "")
        f1 = float(dis.f(1.0))
        rep.check("0 <= f(1)", f1 >= 0.0, f"f(1) = {f1}")
        bad = np.flatnonzero(fv < f1 - 1e-14)
        rep.check("f(1) <= f(z)", bad.size == 0, f"f({zs[bad[0]]:.4g}) < f(1)" if bad.size else "")
    return rep


@dataclass(frozen=True)
class BoundaryDatum:
    """Separable datum ``g(t, x) = rho(t) * (A x + b)`` with piecewise-linear ``rho``."""

    A: np.ndarray
    b: np.ndarray
    ramp_t: np.ndarray
    ramp_rho: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "A", np.asarray(self.A, dtype=float).reshape(2, 2))
        object.__setattr__(self, "b", np.asarray(self.b, dtype=float).reshape(2))
        object.__setattr__(self, "ramp_t", np.asarray(self.ramp_t, dtype=float))
        object.__setattr__(self, "ramp_rho", np.asarray(self.ramp_rho, dtype=float))
        if self.ramp_t.ndim != 1 or self.ramp_t.size < 2 or self.ramp_t.shape != self.ramp_rho.shape:
            raise ValueError("ramp needs at least two (t, rho) breakpoints")
        if np.any(np.diff(self.ramp_t) <= 0):
            raise ValueError("ramp breakpoints must be strictly increasing")

    @classmethod
    def from_breakpoints(cls, A, b, breakpoints) -> "BoundaryDatum":
        bp = np.asarray(breakpoints, dtype=float)
        return cls(A, b, bp[:, 0], bp[:, 1])

    @property
    def t_start(self) -> float:
        return float(self.ramp_t[0])

    @property
    def t_end(self) -> float:
        return float(self.ramp_t[-1])

    def _check_time(self, t: float) -> None:
        span = self.t_end - self.t_start
        if not (self.t_start - 1e-12 * span <= t <= self.t_end + 1e-12 * span):
            raise ValueError(f"t = {t} outside the ramp interval [{self.t_start}, {self.t_end}]")

    def rho(self, t: float) -> float:
        self._check_time(t)
        return float(np.interp(t, self.ramp_t, self.ramp_rho))

    def rho_dot(self, t: float) -> float:
        """Right derivative of ``rho``; left derivative at the final breakpoint."""
        self._check_time(t)
        seg = int(np.searchsorted(self.ramp_t, t, side="right")) - 1
        seg = min(max(seg, 0), self.ramp_t.size - 2)
        dt = self.ramp_t[seg + 1] - self.ramp_t[seg]
        return float((self.ramp_rho[seg + 1] - self.ramp_rho[seg]) / dt)

    def breakpoints_between(self, t0: float, t1: float) -> np.ndarray:
        inside = (self.ramp_t > t0) & (self.ramp_t < t1)
        return self.ramp_t[inside]

    def spatial(self, mesh: Mesh) -> np.ndarray:
        """Interleaved nodal values of ``A x + b``."""
        vals = mesh.nodes @ self.A.T + self.b
        return vals.ravel()


def eval_boundary(datum: BoundaryDatum, mesh: Mesh, t: float) -> Tuple[np.ndarray, np.ndarray]:
    """Nodal ``g(t)`` and ``g_dot(t)`` as interleaved vectors."""
    G = datum.spatial(mesh)
    return datum.rho(t) * G, datum.rho_dot(t) * G


@dataclass(frozen=True)
class TimeGrid:
    T: float
    k: int

    def __post_init__(self):
        if not self.T > 0:
            raise ValueError(f"final time must be positive, got {self.T}")
        if int(self.k) != self.k or self.k < 1:
            raise ValueError(f"number of steps must be an integer >= 1, got {self.k}")

    @property
    def tau(self) -> float:
        return self.T / self.k

    @property
    def nodes(self) -> np.ndarray:
        return np.array([self.t(i) for i in range(self.k + 1)])

    def t(self, i: int) -> float:
        return float(i * self.tau) if i < self.k else float(self.T)
