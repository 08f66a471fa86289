"""Cross-scale checks: thin-trapezoid spectra against near-field and one-dimensional predictions.

Every comparison subtracts a threshold from the computed eigenvalues.  By
default that is the discrete transverse threshold ``Lambda_h``: the lowest
eigenvalue of the one-dimensional Dirichlet problem across the thickness,
discretized on the rows of the same mesh.  With ``h`` tied to ``eps`` the
gap ``Lambda_h - pi^2/eps^2`` is a fixed fraction of ``pi^2/eps^2`` and
grows like ``eps^-2``, so subtracting the exact threshold would bury the
``O(1)`` quantities being compared under transverse discretization error.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.linalg as la

from .eigen import solve_gevp_smallest
from .fem import apply_dirichlet, assemble_mass, assemble_stiffness, element_quadrature
from .geometry import (
    EdgeTag,
    GammaBC,
    GradingSpec,
    HalfStripGeom,
    Mesh,
    TrapezoidGeom,
    build_trapezoid_mesh,
    refine,
)
from .model1d import RobinModel, dispersion_eigenvalues
from .scattering import (
    DEFAULT_H,
    ThresholdAngles,
    constant_B,
    constant_D,
    find_threshold_angles,
    near_field_discrete_spectrum,
    refine_threshold_angle,
    scan_phase,
)

log = logging.getLogger(__name__)

PI2 = math.pi**2
DEFAULT_EPS_LIST = (0.1, 0.05, 0.025)
H_FACTOR = 1.0 / 6.0
THRESHOLD_MARGIN = 0.05
CSV_FORMAT = "%.12g"


class Regime(str, Enum):
    DISCRETE = "DiscreteSpectrum"
    GENERIC = "GenericDirichlet"
    THRESHOLD = "ThresholdNeumann"
    MODEL_K = "RobinModelK"
    MODEL_ZERO = "RobinModelZero"


class ThresholdReference(str, Enum):
    DISCRETE = "discrete"
    EXACT = "exact"


@dataclass(frozen=True)
class SolveConfig:
    """Discretization shared by trapezoid solves and their near-field counterparts.

    ``h_factor`` is the element size in units of the thickness, so the
    trapezoid mesh near the tip is the near-field mesh scaled by ``eps``.
    """

    h_factor: float = H_FACTOR
    order: int = 2
    refinements: int = 0
    grading: GradingSpec = GradingSpec()
    threshold: ThresholdReference = ThresholdReference.DISCRETE
    near_field_L: float = 8.0

    def __post_init__(self):
        if not 0 < self.h_factor <= 0.5:
            raise ValueError(f"h_factor must lie in (0, 1/2], got {self.h_factor}")
        if self.order not in (1, 2):
            raise ValueError(f"element order must be 1 or 2, got {self.order}")
        if self.refinements < 0:
            raise ValueError("refinements must be >= 0")
        object.__setattr__(self, "threshold", ThresholdReference(self.threshold))

    @property
    def thickness_h(self) -> float:
        """Element size of the equivalent near-field mesh."""
        return self.h_factor / 2**self.refinements

    def to_dict(self) -> dict:
        d = asdict(self)
        d["threshold"] = self.threshold.value
        return d


# --------------------------------------------------------------------------
# exact and discrete reference values


def exact_alpha0_spectrum(eps: float, count: int) -> list[float]:
    """Eigenvalues of the rectangle (0, 1) x (0, eps) with Neumann at x = 0: pi^2/eps^2 + (p + 1/2)^2 pi^2."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    return [PI2 / eps**2 + (p + 0.5) ** 2 * PI2 for p in range(count)]


def exact_alpha0_dirichlet_spectrum(eps: float, count: int) -> list[float]:
    """Same rectangle with Dirichlet at x = 0: pi^2/eps^2 + p^2 pi^2, p >= 1."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    return [PI2 / eps**2 + p**2 * PI2 for p in range(1, count + 1)]


def _line_matrices(order: int, h: float):
    if order == 1:
        return (np.array([[1.0, -1.0], [-1.0, 1.0]]) / h,
                np.array([[2.0, 1.0], [1.0, 2.0]]) * (h / 6.0))
    return (np.array([[7.0, -8.0, 1.0], [-8.0, 16.0, -8.0], [1.0, -8.0, 7.0]]) / (3.0 * h),
            np.array([[4.0, 2.0, -1.0], [2.0, 16.0, 2.0], [-1.0, 2.0, 4.0]]) * (h / 30.0))


def transverse_threshold(rows: np.ndarray, order: int = 2) -> float:
    """Lowest eigenvalue of -g'' on (0, 1), g(0) = g(1) = 0, on the partition ``rows``."""
    rows = np.asarray(rows, float)
    n = len(rows) - 1
    if n < 2:
        raise ValueError("need at least two cells across the thickness")
    size = order * n + 1
    K = np.zeros((size, size))
    M = np.zeros((size, size))
    for e in range(n):
        Ke, Me = _line_matrices(order, rows[e + 1] - rows[e])
        idx = np.arange(order * e, order * e + order + 1)
        K[np.ix_(idx, idx)] += Ke
        M[np.ix_(idx, idx)] += Me
    return float(la.eigh(K[1:-1, 1:-1], M[1:-1, 1:-1], eigvals_only=True, subset_by_index=(0, 0))[0])


def mesh_rows(mesh: Mesh, eps: float) -> np.ndarray:
    """Distinct vertex heights in thickness units (the structured meshes share rows across columns)."""
    return np.unique(np.round(mesh.nodes[: mesh.n_vertices, 1] / eps, 12))


# --------------------------------------------------------------------------
# trapezoid spectra


@dataclass
class TrapezoidSpectrum:
    eps: float
    alpha: float
    gamma_bc: GammaBC
    eigenvalues: np.ndarray
    threshold_exact: float
    threshold_discrete: float
    reference: ThresholdReference = ThresholdReference.DISCRETE
    n_dofs: int = 0
    mesh: Mesh | None = None
    vectors: np.ndarray | None = None

    @property
    def threshold(self) -> float:
        if self.reference is ThresholdReference.DISCRETE:
            return self.threshold_discrete
        return self.threshold_exact

    @property
    def shifted(self) -> np.ndarray:
        """Eigenvalues minus the reference threshold."""
        return self.eigenvalues - self.threshold

    @property
    def count_below(self) -> int:
        return int(np.count_nonzero(self.eigenvalues < self.threshold))


def trapezoid_mesh(eps: float, alpha: float, config: SolveConfig = SolveConfig()) -> Mesh:
    geom = TrapezoidGeom(eps, alpha)
    base_order = 1 if config.refinements else config.order
    mesh = build_trapezoid_mesh(geom, eps * config.h_factor, config.grading, order=base_order)
    for _ in range(config.refinements):
        mesh = refine(mesh)
    mesh = mesh.with_order(config.order)
    mesh.meta["geom"] = geom
    return mesh


def trapezoid_spectrum(eps: float, alpha: float, count: int, gamma_bc: GammaBC = GammaBC.NEUMANN,
                       config: SolveConfig = SolveConfig(), keep_vectors: bool = False) -> TrapezoidSpectrum:
    """Smallest eigenvalues of the Laplacian on the trapezoid with Dirichlet on the walls.

    ``gamma_bc`` selects the condition on the slanted side: Neumann (the
    symmetric family of the broken strip) or Dirichlet (the skew family).
    """
    gamma_bc = GammaBC(gamma_bc)
    mesh = trapezoid_mesh(eps, alpha, config)
    tags = {EdgeTag.DIRICHLET_WALL}
    if gamma_bc is GammaBC.DIRICHLET:
        tags.add(EdgeTag.FREE_SIDE)
    K, dm = apply_dirichlet(assemble_stiffness(mesh), mesh, tags)
    M, _ = apply_dirichlet(assemble_mass(mesh), mesh, tags)
    res = solve_gevp_smallest(K, M, count)
    lam = res.eigenvalues[:count]
    vecs = None
    if keep_vectors:
        vecs = np.column_stack([dm.expand(res.eigenvectors[:, j]) for j in range(len(lam))])
    thr_h = transverse_threshold(mesh_rows(mesh, eps), config.order) / eps**2
    return TrapezoidSpectrum(eps, alpha, gamma_bc, lam, PI2 / eps**2, thr_h, config.threshold,
                             mesh.n_dofs, mesh if keep_vectors else None, vecs)


def tip_mass_fraction(spec: TrapezoidSpectrum, index: int, radius: float) -> float:
    """Share of ``int u^2`` carried by ``x < radius`` for the ``index``-th (1-based) eigenfunction."""
    if spec.vectors is None or spec.mesh is None:
        raise ValueError("spectrum was computed without eigenvectors")
    u = spec.vectors[:, index - 1]
    xq, wq, N = element_quadrature(spec.mesh)
    uq = np.einsum("tk,qk->tq", u[spec.mesh.elements], N)
    dens = wq * uq**2
    return float(dens[xq[..., 0] < radius].sum() / dens.sum())


# --------------------------------------------------------------------------
# comparison records


@dataclass
class ComparisonRecord:
    eps: float
    index: int
    computed: float
    predicted: float
    residual: float
    tau: float | None = None
    alpha: float | None = None
    extra: dict = field(default_factory=dict)


def fit_rate(eps: Sequence[float], residuals: Sequence[float]) -> float:
    """Least-squares slope of log(residual) against log(eps)."""
    e = np.asarray(eps, float)
    r = np.abs(np.asarray(residuals, float))
    if len(e) < 2:
        raise ValueError("need at least two points to fit a rate")
    if np.any(r <= 0):
        return math.inf
    return float(np.polyfit(np.log(e), np.log(r), 1)[0])


@dataclass
class AsymptoticComparison:
    """Residuals of computed eigenvalues against a limit regime along decreasing eps.

    ``rate_floor`` is the smallest acceptable fitted exponent; for the
    discrete regime (super-algebraic decay) the check is instead that each
    halving of ``eps`` shrinks the residual by more than ``ratio_floor``.
    Records carrying a ``tau`` are grouped per ``tau`` for rates and
    monotonicity.
    """

    regime: Regime
    eps_list: list[float]
    records: list[ComparisonRecord] = field(default_factory=list)
    alpha: float | None = None
    rate_floor: float | None = 1.0
    ratio_floor: float | None = None
    flags: list[str] = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        self.regime = Regime(self.regime)
        e = [float(x) for x in self.eps_list]
        if any(x <= 0 for x in e) or any(b >= a for a, b in zip(e, e[1:])):
            raise ValueError("eps_list must hold strictly decreasing positive values")
        self.eps_list = e
        self._flag_monotonicity()

    def groups(self) -> dict:
        out: dict = {}
        for r in self.records:
            out.setdefault(r.tau, []).append(r)
        for g in out.values():
            g.sort(key=lambda r: -r.eps)
        return out

    def _flag_monotonicity(self):
        for tau, recs in self.groups().items():
            res = [abs(r.residual) for r in recs]
            ups = sum(1 for a, b in zip(res, res[1:]) if b > a)
            label = "" if tau is None else f" (tau={tau:g})"
            if ups == 1:
                self.flags.append("non-monotone step" + label)
            elif ups > 1:
                self.flags.append("residuals not decreasing" + label)

    @property
    def empty(self) -> bool:
        return not self.records

    def residuals(self, tau=None) -> np.ndarray:
        return np.array([abs(r.residual) for r in self.groups().get(tau, [])])

    def rates(self) -> dict:
        out = {}
        for tau, recs in self.groups().items():
            if len(recs) >= 2:
                out[tau] = fit_rate([r.eps for r in recs], [r.residual for r in recs])
        return out

    def ratios(self, tau=None) -> list[float]:
        res = self.residuals(tau)
        return [float(a / b) if b > 0 else math.inf for a, b in zip(res, res[1:])]

    @property
    def monotone(self) -> bool:
        """At most one non-monotone step per group."""
        return not any(f.startswith("residuals not decreasing") for f in self.flags)

    @property
    def meets_floor(self) -> bool:
        if self.empty:
            return False
        if self.ratio_floor is not None:
            return all(all(q > self.ratio_floor for q in self.ratios(t)) for t in self.groups())
        if self.rate_floor is not None:
            return all(r >= self.rate_floor for r in self.rates().values())
        return True

    def to_dict(self) -> dict:
        return {
            "regime": self.regime.value,
            "alpha": self.alpha,
            "eps_list": self.eps_list,
            "records": [
                {k: (float(v) if isinstance(v, (np.floating, float)) else v) for k, v in asdict(r).items()}
                for r in self.records
            ],
            "rates": {("none" if t is None else repr(float(t))): v for t, v in self.rates().items()},
            "rate_floor": self.rate_floor,
            "ratio_floor": self.ratio_floor,
            "monotone": self.monotone,
            "meets_floor": self.meets_floor,
            "flags": list(self.flags),
            "diagnostics": _jsonable(self.diagnostics),
        }


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    if isinstance(obj, Enum):
        return obj.value
    return obj


# --------------------------------------------------------------------------
# threshold angles and near-field data on the shared discretization


def detect_threshold_angles(max_alpha: float = 1.5, n_samples: int = 50, k_max: int = 3,
                            L: float = 8.0, h: float = DEFAULT_H, order: int = 2,
                            grading: GradingSpec = GradingSpec()) -> ThresholdAngles:
    """Scan S over [0, max_alpha] and return the threshold angles found."""
    grid = np.linspace(0.0, max_alpha, n_samples)
    scan = scan_phase(grid, L, h, order, grading)
    return find_threshold_angles(scan, k_max, L=L, h=h, order=order, grading=grading)


def consistent_threshold_angle(alpha_guess: float, config: SolveConfig = SolveConfig()) -> float:
    """Threshold angle of the near-field discretization the trapezoid solves share.

    The angle moves with the mesh by more than the width of the regime the
    threshold comparisons probe (the diving branch moves by about ``4 B /
    eps`` per radian), so the comparisons use the angle of the same
    discretization rather than a converged one.
    """
    if alpha_guess == 0:
        return 0.0
    return refine_threshold_angle(alpha_guess, config.near_field_L, config.thickness_h, config.order,
                                  config.grading, max_distance=0.05)


def near_field_count(alpha: float, config: SolveConfig = SolveConfig(), count: int = 6) -> int:
    """N_circ(alpha) from the near-field operator on the shared discretization (absolute angle)."""
    a = abs(alpha)
    if a == 0:
        return 0
    geom = HalfStripGeom(a, max(8.0, math.tan(a) + 8.0))
    return near_field_discrete_spectrum(geom, config.thickness_h, count, order=config.order,
                                        grading=config.grading).N_circ


def _threshold_list(threshold_angles) -> list[float]:
    if threshold_angles is None:
        return detect_threshold_angles().angles
    if isinstance(threshold_angles, ThresholdAngles):
        return list(threshold_angles.angles)
    angles = [float(a) for a in threshold_angles]
    if not angles or angles[0] != 0.0:
        angles = [0.0] + angles
    return angles


# --------------------------------------------------------------------------
# regimes of the fixed-angle asymptotics


def verify_thm1_discrete(alpha: float, eps_list: Sequence[float] = DEFAULT_EPS_LIST, p: int = 1,
                         config: SolveConfig = SolveConfig(), ratio_floor: float = 4.0,
                         mass_radius: float | None = 10.0) -> AsymptoticComparison:
    """Residual ``|eps^2 lambda_p - mu_p|`` of a discrete near-field eigenvalue along eps.

    The near-field eigenvalue comes from the same discretization in
    thickness units on a strip long enough for its truncation error to lie
    at rounding level.  With ``mass_radius`` the share of the eigenfunction
    within ``x < mass_radius * eps`` is recorded as well.
    """
    comp = AsymptoticComparison(Regime.DISCRETE, list(eps_list), alpha=alpha, rate_floor=None,
                                ratio_floor=ratio_floor)
    if alpha == 0:
        comp.flags.append("empty regime: no discrete spectrum at alpha = 0")
        return comp
    a = abs(alpha)
    tip = math.tan(a)
    base = near_field_discrete_spectrum(HalfStripGeom(a, tip + 8.0), config.thickness_h, max(p, 4),
                                        order=config.order, grading=config.grading)
    if base.N_circ < p:
        comp.flags.append(f"empty regime: N_circ = {base.N_circ} < p = {p}")
        comp.diagnostics["N_circ"] = base.N_circ
        return comp
    # push the truncation far enough that exp(-2 kappa L) is below rounding
    kappa = math.sqrt(PI2 - base.mu[p - 1])
    L = max(base.truncation_L, tip + 40.0 / kappa)
    nf = near_field_discrete_spectrum(HalfStripGeom(a, L), config.thickness_h, max(p, 4),
                                      order=config.order, grading=config.grading, adapt_L=False)
    mu = float(nf.mu[p - 1])
    comp.diagnostics.update(N_circ=nf.N_circ, mu=mu, near_field_L=L)
    for eps in comp.eps_list:
        keep = mass_radius is not None
        spec = trapezoid_spectrum(eps, alpha, p + 1, config=config, keep_vectors=keep)
        lam = float(spec.eigenvalues[p - 1])
        extra = {"n_dofs": spec.n_dofs}
        if keep:
            extra["tip_mass_fraction"] = tip_mass_fraction(spec, p, mass_radius * eps)
        comp.records.append(ComparisonRecord(eps, p, eps**2 * lam, mu, eps**2 * lam - mu, alpha=alpha, extra=extra))
    comp._flag_monotonicity()
    return comp


def _warn_near_threshold(alpha: float, angles: Sequence[float], comp: AsymptoticComparison):
    near = [t for t in angles if abs(abs(alpha) - t) < THRESHOLD_MARGIN]
    if near:
        msg = f"alpha={alpha:g} within {THRESHOLD_MARGIN} of threshold angle(s) {near}: regime invalid"
        log.warning(msg)
        comp.flags.append(msg)


def verify_thm1_generic(alpha: float, eps_list: Sequence[float] = DEFAULT_EPS_LIST, q: int = 1,
                        config: SolveConfig = SolveConfig(), threshold_angles=None,
                        rate_floor: float = 1.0) -> AsymptoticComparison:
    """Residual ``|lambda_{N+q} - threshold - q^2 pi^2|`` away from threshold angles."""
    comp = AsymptoticComparison(Regime.GENERIC, list(eps_list), alpha=alpha, rate_floor=rate_floor)
    angles = _threshold_list(threshold_angles)
    _warn_near_threshold(alpha, angles, comp)
    n_circ = near_field_count(alpha, config)
    comp.diagnostics["N_circ"] = n_circ
    p = n_circ + q
    for eps in comp.eps_list:
        spec = trapezoid_spectrum(eps, alpha, p + 1, config=config)
        val = float(spec.shifted[p - 1])
        comp.records.append(ComparisonRecord(eps, p, val, q**2 * PI2, val - q**2 * PI2, alpha=alpha,
                                             extra={"count_below": spec.count_below}))
        if spec.count_below != n_circ:
            comp.flags.append(f"count below threshold {spec.count_below} != N_circ {n_circ} at eps={eps:g}")
    comp._flag_monotonicity()
    return comp


def _threshold_setup(k: int, config: SolveConfig, threshold_angles) -> tuple[float, int]:
    angles = _threshold_list(threshold_angles)
    if k >= len(angles):
        raise ValueError(f"threshold angle {k} not available (found {len(angles) - 1} positive ones)")
    a_star = consistent_threshold_angle(angles[k], config)
    # the bounded wave at a threshold angle is not an eigenvalue: count just before it
    n_circ = 0 if k == 0 else near_field_count(a_star - 0.02, config)
    return a_star, n_circ


def verify_thm1_threshold(k: int, eps_list: Sequence[float] = DEFAULT_EPS_LIST, q: int = 1,
                          config: SolveConfig = SolveConfig(), threshold_angles=None,
                          rate_floor: float = 1.0) -> AsymptoticComparison:
    """Residual ``|lambda_{N+q} - threshold - (q - 1/2)^2 pi^2|`` at the threshold angle k."""
    a_star, n_circ = _threshold_setup(k, config, threshold_angles)
    comp = AsymptoticComparison(Regime.THRESHOLD, list(eps_list), alpha=a_star, rate_floor=rate_floor)
    comp.diagnostics.update(alpha_star=a_star, N_circ=n_circ, k=k)
    target = (q - 0.5) ** 2 * PI2
    p = n_circ + q
    for eps in comp.eps_list:
        spec = trapezoid_spectrum(eps, a_star, p + 1, config=config)
        val = float(spec.shifted[p - 1])
        comp.records.append(ComparisonRecord(eps, p, val, target, val - target, alpha=a_star))
    comp._flag_monotonicity()
    return comp


# --------------------------------------------------------------------------
# one-dimensional models around threshold angles


def verify_model_K(k: int, tau_list: Sequence[float], eps_list: Sequence[float] = DEFAULT_EPS_LIST,
                   q: int = 1, config: SolveConfig = SolveConfig(), threshold_angles=None,
                   B: float | None = None, rate_floor: float = 1.0) -> AsymptoticComparison:
    """Trapezoid at ``alpha_k + tau eps`` against the Robin model with ``c = 2 tau B``."""
    if k < 1:
        raise ValueError("the model with c = 2 tau B concerns positive threshold angles (k >= 1)")
    a_star, n_circ = _threshold_setup(k, config, threshold_angles)
    if B is None:
        B = constant_B(_threshold_list(threshold_angles)[k]).B
    comp = AsymptoticComparison(Regime.MODEL_K, list(eps_list), alpha=a_star, rate_floor=rate_floor)
    comp.diagnostics.update(alpha_star=a_star, N_circ=n_circ, B=B, k=k)
    p = n_circ + q
    for tau in tau_list:
        c = 2.0 * tau * B
        eta = float(dispersion_eigenvalues(RobinModel(c), q).etas[q - 1])
        for eps in comp.eps_list:
            alpha = a_star + tau * eps
            if not 0 < alpha < math.pi / 2:
                msg = f"alpha_k + tau eps = {alpha:g} leaves (0, pi/2) for tau={tau:g}, eps={eps:g}"
                log.warning(msg)
                comp.flags.append(msg)
                continue
            spec = trapezoid_spectrum(eps, alpha, p + 1, config=config)
            val = float(spec.shifted[p - 1])
            comp.records.append(ComparisonRecord(eps, p, val, eta, val - eta, tau=float(tau), alpha=alpha,
                                                 extra={"c": c}))
    comp._flag_monotonicity()
    return comp


def verify_model_zero(tau_list: Sequence[float], eps_list: Sequence[float] = DEFAULT_EPS_LIST,
                      q: int = 1, config: SolveConfig = SolveConfig(), D: float | None = None,
                      B: float | None = None, rate_floor: float = 1.0,
                      evenness_refine: bool = True) -> AsymptoticComparison:
    """Trapezoid at ``tau sqrt(eps)`` against the Robin model with ``c = 2 tau^2 D``.

    Records for ``tau`` and ``-tau`` give the evenness check: their gap is
    set against the discretization error of each side, estimated by one
    uniform refinement (``evenness_refine``).  With ``B``
    given, the fall of the first model eigenvalue is also compared with the
    model around a positive threshold angle for the same angle change
    (``tau_K eps = tau sqrt(eps)``).
    """
    if D is None:
        D = constant_D().D
    comp = AsymptoticComparison(Regime.MODEL_ZERO, list(eps_list), alpha=0.0, rate_floor=rate_floor)
    comp.diagnostics["D"] = D
    for tau in tau_list:
        c = 2.0 * tau**2 * D
        eta = float(dispersion_eigenvalues(RobinModel(c), q).etas[q - 1])
        for eps in comp.eps_list:
            alpha = tau * math.sqrt(eps)
            spec = trapezoid_spectrum(eps, alpha, q + 1, config=config)
            val = float(spec.shifted[q - 1])
            comp.records.append(ComparisonRecord(eps, q, val, eta, val - eta, tau=float(tau), alpha=alpha,
                                                 extra={"c": c}))
    even = {}
    for tau in sorted({abs(t) for t in tau_list if t != 0}):
        for eps in comp.eps_list:
            pair = [r for r in comp.records if r.eps == eps and r.tau in (tau, -tau)]
            if len(pair) != 2:
                continue
            entry = {"gap": abs(pair[0].computed - pair[1].computed)}
            if evenness_refine:
                # discretization error of each side from one uniform refinement
                finer = replace(config, refinements=config.refinements + 1)
                entry["fem_tolerance"] = max(
                    abs(float(trapezoid_spectrum(eps, r.alpha, q + 1, config=finer).shifted[q - 1]) - r.computed)
                    for r in pair)
                entry["even"] = bool(entry["gap"] <= entry["fem_tolerance"])
            even[f"tau={tau:g},eps={eps:g}"] = entry
    comp.diagnostics["evenness"] = even
    if B is not None:
        falls = {}
        for tau in tau_list:
            if tau <= 0:
                continue
            for eps in comp.eps_list:
                tau_k = tau / math.sqrt(eps)
                eta_k = dispersion_eigenvalues(RobinModel(2.0 * tau_k * B), 1).etas[0]
                eta_0 = dispersion_eigenvalues(RobinModel(2.0 * tau**2 * D), 1).etas[0]
                falls[f"tau={tau:g},eps={eps:g}"] = {"eta_K": float(eta_k), "eta_zero": float(eta_0),
                                                     "K_falls_faster": bool(eta_k < eta_0)}
        comp.diagnostics["fall_comparison"] = falls
    comp._flag_monotonicity()
    return comp


# --------------------------------------------------------------------------
# broken strip and sweeps


@dataclass(frozen=True)
class LabeledEigenvalue:
    value: float
    parity: str  # "symmetric" (Neumann on the slanted side) or "antisymmetric" (Dirichlet)
    family_index: int


def broken_strip_spectrum(eps: float, alpha: float, count: int,
                          config: SolveConfig = SolveConfig()) -> list[LabeledEigenvalue]:
    """Spectrum of the broken strip as the sorted union of its two symmetry families."""
    sym = trapezoid_spectrum(eps, alpha, count, GammaBC.NEUMANN, config)
    skew = trapezoid_spectrum(eps, alpha, count, GammaBC.DIRICHLET, config)
    out = [LabeledEigenvalue(float(v), "symmetric", i + 1) for i, v in enumerate(sym.eigenvalues)]
    out += [LabeledEigenvalue(float(v), "antisymmetric", i + 1) for i, v in enumerate(skew.eigenvalues)]
    out.sort(key=lambda e: e.value)
    return out[:count]


@dataclass
class DiveTable:
    """Eigenvalues along an angle grid, columns following branches by continuity."""

    eps: float
    alphas: np.ndarray
    values: np.ndarray  # (n_alpha, count), column j follows branch j
    by_index: np.ndarray  # (n_alpha, count), sorted eigenvalues
    threshold: np.ndarray  # reference threshold per angle
    threshold_exact: float
    mirror: np.ndarray | None = None  # eigenvalues at -alpha, sorted

    @property
    def count_below(self) -> np.ndarray:
        return np.sum(self.by_index < self.threshold[:, None], axis=1)

    def header(self) -> list[str]:
        n = self.values.shape[1]
        cols = ["alpha", "threshold_exact", "threshold", "count_below"]
        cols += [f"lambda_{j + 1}" for j in range(n)] + [f"branch_{j + 1}" for j in range(n)]
        if self.mirror is not None:
            cols += [f"lambda_{j + 1}_neg_alpha" for j in range(n)]
        return cols

    def rows(self) -> list[list]:
        out = []
        for i, a in enumerate(self.alphas):
            row = [a, self.threshold_exact, self.threshold[i], int(self.count_below[i])]
            row += list(self.by_index[i]) + list(self.values[i])
            if self.mirror is not None:
                row += list(self.mirror[i])
            out.append(row)
        return out

    def write_csv(self, path) -> None:
        write_csv(path, self.header(), self.rows())


def track_branches(values: np.ndarray) -> np.ndarray:
    """Reorder each row so column j continues the branch of column j in the previous row.

    Matching is by nearest linear extrapolation (value continuity), solved as
    an assignment problem row by row.
    """
    from scipy.optimize import linear_sum_assignment

    values = np.asarray(values, float)
    out = values.copy()
    for i in range(1, len(values)):
        pred = out[i - 1] if i == 1 else 2 * out[i - 1] - out[i - 2]
        cost = np.abs(pred[:, None] - values[i][None, :])
        _, cols = linear_sum_assignment(cost)
        out[i] = values[i][cols]
    return out


def _sweep_job(args):
    eps, alpha, count, config, mirror = args
    spec = trapezoid_spectrum(eps, alpha, count, config=config)
    neg = trapezoid_spectrum(eps, -alpha, count, config=config).eigenvalues[:count] if mirror else None
    return spec.eigenvalues[:count], spec.threshold, neg


def dive_sweep(eps: float, alpha_grid: Sequence[float], count: int = 5,
               config: SolveConfig = SolveConfig(), include_mirror: bool = False,
               workers: int = 1) -> DiveTable:
    """Smallest eigenvalues over an angle grid, with the threshold column.

    Angles are independent jobs; with ``workers > 1`` they run in separate
    processes and are collected in grid order, so the table does not depend
    on the worker count.
    """
    alphas = np.asarray(alpha_grid, float)
    jobs = [(eps, float(a), count, config, include_mirror) for a in alphas]
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_sweep_job, jobs))
    else:
        results = [_sweep_job(j) for j in jobs]
    by_index = np.array([r[0] for r in results])
    thr = np.array([r[1] for r in results])
    mirror = np.array([r[2] for r in results]) if include_mirror else None
    return DiveTable(eps, alphas, track_branches(by_index), by_index, thr, PI2 / eps**2, mirror)


# --------------------------------------------------------------------------
# output plumbing


def format_value(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return CSV_FORMAT % float(v)
    return str(v)


def write_csv(path, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([format_value(v) for v in row])


def canonical_json(obj) -> str:
    return json.dumps(_jsonable(obj), sort_keys=True, separators=(",", ":"))


def content_hash(obj) -> str:
    """Git blob hash (sha1 of ``blob <len>\\0`` + content) of the canonical JSON of ``obj``."""
    data = canonical_json(obj).encode()
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def write_json(path, obj) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")


def write_manifest(run_dir, command: str, parameters: dict, outputs: Sequence[str],
                   solver: dict | None = None, mesh: dict | None = None) -> dict:
    """Record parameters, mesh and solver settings and the input hash of a run."""
    from . import __version__

    manifest = {
        "command": command,
        "parameters": _jsonable(parameters),
        "mesh": _jsonable(mesh or {}),
        "solver": _jsonable(solver or {}),
        "outputs": sorted(outputs),
        "input_hash": content_hash({"command": command, "parameters": parameters}),
        "version": __version__,
    }
    write_json(Path(run_dir) / "manifest.json", manifest)
    return manifest
