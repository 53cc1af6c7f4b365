"""Observables and the diagnostics built on them."""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import (
    AllZeroOccupationsError,
    DegenerateInputError,
    DimMismatchError,
    ImaginaryResidueError,
    NonHermitianObservableError,
    ObservableError,
    OddChainError,
)
from .linalg import as_matrix, is_hermitian, trace_norm
from .model import NUMBER, SIGMA_Z, site_op, two_site_op

IMAG_TOL = 1e-10


class Kind(str, Enum):
    SITE_OCCUPATION = "site_occupation"
    CORRELATION_ZZ = "czz"
    EXCITED_POP = "excited_pop"
    DIPR = "dipr"
    IMBALANCE = "imbalance"
    CUSTOM = "custom"


# kinds that are nonlinear functions of the site occupations
DERIVED_KINDS = frozenset({Kind.DIPR, Kind.IMBALANCE})


@dataclass(frozen=True, eq=False)
class ObservableSpec:
    name: str
    kind: Kind
    site: int | None = None
    matrix: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        if self.kind is Kind.SITE_OCCUPATION and (self.site is None or self.site < 1):
            raise ObservableError(f"{self.name}: site occupation needs a 1-indexed site")
        if self.kind is Kind.CUSTOM:
            if self.matrix is None:
                raise ObservableError(f"{self.name}: custom observable needs a matrix")
            m = as_matrix(self.matrix)
            if not is_hermitian(m):
                raise NonHermitianObservableError(f"{self.name}: custom matrix is not Hermitian")
            object.__setattr__(self, "matrix", m)

    @property
    def derived(self) -> bool:
        return self.kind in DERIVED_KINDS

    def operator(self, n_sites: int) -> np.ndarray:
        """Full-space Hermitian operator (not defined for derived kinds)."""
        if self.kind is Kind.SITE_OCCUPATION:
            return site_op(NUMBER, self.site, n_sites)
        if self.kind is Kind.EXCITED_POP:
            if n_sites != 1:
                raise ObservableError("excited_pop is defined for single-site models; use site_occupation")
            return NUMBER.copy()
        if self.kind is Kind.CORRELATION_ZZ:
            if n_sites < 2:
                raise ObservableError("czz needs at least two sites")
            total = sum(two_site_op(SIGMA_Z, l + 1, SIGMA_Z, l, n_sites) for l in range(1, n_sites))
            return total / (n_sites - 1)
        if self.kind is Kind.CUSTOM:
            return self.matrix
        raise ObservableError(f"{self.name}: {self.kind.value} is derived from occupations, not an operator")


def site_occupation(site: int) -> ObservableSpec:
    return ObservableSpec(f"n{site}", Kind.SITE_OCCUPATION, site=site)


def occupation_specs(n_sites: int) -> list[ObservableSpec]:
    return [site_occupation(l) for l in range(1, n_sites + 1)]


def _real_checked(value: complex) -> float:
    if abs(value.imag) > IMAG_TOL * max(1.0, abs(value.real)):
        raise ImaginaryResidueError(f"expectation has imaginary part {value.imag:.3e}")
    return float(value.real)


def expectation_of(state, op) -> float:
    """``<psi|op|psi>`` for a vector or ``Tr(op rho)`` for a matrix."""
    state = np.asarray(state, dtype=np.complex128)
    op = as_matrix(op)
    if not is_hermitian(op, 1e-12 * max(1.0, float(np.max(np.abs(op), initial=0.0)))):
        raise NonHermitianObservableError("observable is not Hermitian")
    if state.ndim == 1:
        value = np.vdot(state, op @ state)
    else:
        value = np.trace(op @ state)
    return _real_checked(complex(value))


def expectation(state, spec: ObservableSpec, n_sites: int | None = None) -> float:
    state = np.asarray(state)
    if n_sites is None:
        n_sites = int(round(math.log2(state.shape[0])))
    if spec.derived:
        occ = [expectation_of(state, site_op(NUMBER, l, n_sites)) for l in range(1, n_sites + 1)]
        return dipr(occ) if spec.kind is Kind.DIPR else imbalance(occ)
    return expectation_of(state, spec.operator(n_sites))


def dipr(occupations) -> float:
    """``sum n_l^2 / (sum n_l)^2``: 1/L when spread out, 1 when on one site."""
    occ = np.asarray(occupations, dtype=float)
    total = occ.sum(axis=-1)
    if np.any(total <= 0):
        raise AllZeroOccupationsError("dIPR undefined for zero total occupation")
    value = np.sum(occ**2, axis=-1) / total**2
    return float(value) if np.ndim(value) == 0 else value


def imbalance(occupations) -> float:
    """Left-half minus right-half occupation over the total."""
    occ = np.asarray(occupations, dtype=float)
    n = occ.shape[-1]
    if n % 2:
        raise OddChainError(f"imbalance needs an even chain, got L={n}")
    total = occ.sum(axis=-1)
    if np.any(total <= 0):
        raise AllZeroOccupationsError("imbalance undefined for zero total occupation")
    value = (occ[..., : n // 2].sum(axis=-1) - occ[..., n // 2 :].sum(axis=-1)) / total
    return float(value) if np.ndim(value) == 0 else value


def trace_error(rho_est, rho_ref) -> float:
    rho_est, rho_ref = as_matrix(rho_est), as_matrix(rho_ref)
    if rho_est.shape != rho_ref.shape:
        raise DimMismatchError(f"shapes {rho_est.shape} and {rho_ref.shape} differ")
    return trace_norm(rho_est - rho_ref)


@dataclass(frozen=True)
class ScalingFit:
    exponent: float
    prefactor: float
    r_squared: float


def fit_scaling_exponent(points) -> ScalingFit:
    """Unweighted least-squares line through ``(log dt, log error)``."""
    pts = np.asarray(list(points), dtype=float)
    if pts.ndim != 2 or pts.shape[0] < 3 or pts.shape[1] != 2:
        raise DegenerateInputError("need at least three (dt, error) points")
    if np.any(pts <= 0) or not np.all(np.isfinite(pts)):
        raise DegenerateInputError("dt and error values must be positive and finite")
    x, y = np.log(pts[:, 0]), np.log(pts[:, 1])
    if np.ptp(x) == 0:
        raise DegenerateInputError("all dt values are equal")
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0 else 1.0 - float(np.sum(resid**2)) / ss_tot
    return ScalingFit(float(slope), float(math.exp(intercept)), r2)


def jackknife(samples: np.ndarray, statistic) -> tuple[np.ndarray, np.ndarray]:
    """Leave-one-out estimate and standard error of ``statistic(mean)``.

    ``samples`` has shape ``(K, ...)``; ``statistic`` maps an array of
    sample means (leading axis dropped) to the quantity of interest and
    must broadcast over an extra leading axis.
    """
    samples = np.asarray(samples, dtype=float)
    k = samples.shape[0]
    full = statistic(samples.mean(axis=0))
    if k < 2:
        return np.asarray(full), np.full(np.shape(full), np.nan)
    total = samples.sum(axis=0)
    loo_means = (total[None, ...] - samples) / (k - 1)
    loo = np.asarray(statistic(loo_means))
    loo_bar = loo.mean(axis=0)
    se = np.sqrt((k - 1) / k * np.sum((loo - loo_bar) ** 2, axis=0))
    return np.asarray(full), se
