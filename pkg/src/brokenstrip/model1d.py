"""One-dimensional Robin eigenproblems governing the dive of eigenvalues.

Both models read ``-g'' = eta g`` on (0, 1) with ``g(1) = 0`` and the Robin
condition ``g'(0) = -c g(0)``.  Near a positive threshold angle the
coefficient is ``c = 2 tau B``; near the zero angle it is ``c = 2 tau^2 D``.

Eigenvalues are computed two independent ways: by bracketed root finding on
the dispersion relations and by a P2 finite-element discretization.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
import scipy.linalg as la
from scipy.optimize import brentq

ROOT_XTOL = 1e-13
POLE_MARGIN = 1e-10


class Variant(str, Enum):
    THRESHOLD_K = "k"
    ZERO_ANGLE = "zero"


class Method(str, Enum):
    DISPERSION_ROOT = "dispersion"
    FEM1D = "fem1d"


@dataclass(frozen=True)
class RobinModel:
    """Robin coefficient ``c`` and its provenance from (tau, B) or (tau, D)."""

    robin_coeff: float
    variant: Variant = Variant.THRESHOLD_K
    tau: float | None = None
    B_or_D: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        if self.tau is not None and self.B_or_D is not None:
            expected = self.coefficient(self.variant, self.tau, self.B_or_D)
            if not math.isclose(self.robin_coeff, expected, rel_tol=1e-14, abs_tol=1e-300):
                raise ValueError(f"robin_coeff {self.robin_coeff} inconsistent with tau and constant ({expected})")

    @staticmethod
    def coefficient(variant: Variant, tau: float, constant: float) -> float:
        if constant <= 0:
            raise ValueError("B and D are positive constants")
        if Variant(variant) is Variant.THRESHOLD_K:
            return 2.0 * tau * constant
        return 2.0 * tau**2 * constant

    @classmethod
    def threshold_k(cls, tau: float, B: float) -> "RobinModel":
        return cls(cls.coefficient(Variant.THRESHOLD_K, tau, B), Variant.THRESHOLD_K, tau, B)

    @classmethod
    def zero_angle(cls, tau: float, D: float) -> "RobinModel":
        return cls(cls.coefficient(Variant.ZERO_ANGLE, tau, D), Variant.ZERO_ANGLE, tau, D)


@dataclass
class ModelSpectrum:
    etas: np.ndarray
    method: Method

    def __post_init__(self):
        self.etas = np.asarray(self.etas, float)
        self.method = Method(self.method)
        if np.any(np.diff(self.etas) <= 0):
            raise ValueError("eigenvalues must be strictly increasing")
        if np.count_nonzero(self.etas < 0) > 1:
            raise ValueError("the Robin model has at most one negative eigenvalue")


def _negative_root(c: float) -> float:
    """kappa > 0 with tanh(kappa) = kappa / c (requires c > 1); eta = -kappa^2."""
    def g(k):
        # 1 - c tanh(k)/k, continuous at 0 with value 1 - c
        return 1.0 - c * (math.tanh(k) / k if k > 0 else 1.0)

    return brentq(g, 0.0, c, xtol=ROOT_XTOL, rtol=4 * np.finfo(float).eps)


def _positive_root(c: float, q: int) -> float:
    """Root k of cos(k) - c sinc(k) in ((q-1) pi, q pi)."""
    def f(k):
        return math.cos(k) - c * (math.sin(k) / k if k > 0 else 1.0)

    lo = (q - 1) * math.pi + (POLE_MARGIN if q > 1 else 0.0)
    hi = q * math.pi - POLE_MARGIN
    flo, fhi = f(lo), f(hi)
    if flo * fhi > 0:
        raise ArithmeticError(f"no sign change on branch {q} for c={c}")
    return brentq(f, lo, hi, xtol=ROOT_XTOL, rtol=4 * np.finfo(float).eps)


def dispersion_eigenvalues(model: RobinModel, count: int) -> ModelSpectrum:
    """The ``count`` smallest eigenvalues from the dispersion relations.

    The lowest eigenvalue is negative for ``c > 1`` (``coth k = c / k``), zero
    for ``c = 1`` and positive on the first branch ``(0, pi)`` for ``c < 1``;
    every further branch ``((q-1) pi, q pi)`` carries exactly one root of
    ``cot k = c / k``.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    c = float(model.robin_coeff)
    etas = []
    if c > 1:
        etas.append(-_negative_root(c) ** 2)
    elif c == 1:
        etas.append(0.0)
    else:
        etas.append(_positive_root(c, 1) ** 2)
    q = 2
    while len(etas) < count:
        etas.append(_positive_root(c, q) ** 2)
        q += 1
    return ModelSpectrum(np.array(etas[:count]), Method.DISPERSION_ROOT)


def _p2_element_matrices(h: float):
    K = np.array([[7.0, -8.0, 1.0], [-8.0, 16.0, -8.0], [1.0, -8.0, 7.0]]) / (3.0 * h)
    M = np.array([[4.0, 2.0, -1.0], [2.0, 16.0, 2.0], [-1.0, 2.0, 4.0]]) * (h / 30.0)
    return K, M


def fem1d_matrices(c: float, n_elements: int):
    """P2 stiffness (with the rank-one Robin term) and mass on (0, 1), g(1) = 0 eliminated."""
    h = 1.0 / n_elements
    n = 2 * n_elements + 1
    Ke, Me = _p2_element_matrices(h)
    K = np.zeros((n, n))
    M = np.zeros((n, n))
    for e in range(n_elements):
        idx = np.array([2 * e, 2 * e + 1, 2 * e + 2])
        K[np.ix_(idx, idx)] += Ke
        M[np.ix_(idx, idx)] += Me
    K[0, 0] -= c
    return K[:-1, :-1], M[:-1, :-1]


def fem1d_eigenvalues(model: RobinModel, n_elements: int, count: int) -> ModelSpectrum:
    """Smallest eigenvalues of the P2 discretization (dense symmetric solve)."""
    if n_elements < 8:
        raise ValueError("n_elements must be >= 8")
    K, M = fem1d_matrices(float(model.robin_coeff), n_elements)
    count = min(count, K.shape[0])
    w = la.eigh(K, M, eigvals_only=True, subset_by_index=(0, count - 1))
    return ModelSpectrum(w, Method.FEM1D)


def fall_asymptote(model: RobinModel) -> float:
    """Leading behaviour of the lowest eigenvalue for large |tau|."""
    if model.tau is None or model.B_or_D is None:
        return -float(model.robin_coeff) ** 2
    if model.variant is Variant.THRESHOLD_K:
        return -4.0 * model.B_or_D**2 * model.tau**2
    return -4.0 * model.B_or_D**2 * model.tau**4


def limit_spectrum(variant: Variant, tau_sign: int, q: int) -> float:
    """Limit of the q-th eigenvalue as tau tends to +inf (tau_sign=+1) or -inf (-1)."""
    variant = Variant(variant)
    if q < 1:
        raise ValueError("q must be >= 1")
    if tau_sign not in (-1, 1):
        raise ValueError("tau_sign must be +1 or -1")
    if variant is Variant.THRESHOLD_K and tau_sign < 0:
        # c -> -inf: Dirichlet condition at 0
        return q**2 * math.pi**2
    # c -> +inf: the first eigenvalue goes to -inf, the others tend to Dirichlet values
    return -math.inf if q == 1 else (q - 1) ** 2 * math.pi**2
