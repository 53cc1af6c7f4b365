"""Reference solvers used as ground truth for small systems.

Vectorization is row-major (``numpy`` ``reshape``), which gives
``vec(A rho B^dag) = (A kron B^*) vec(rho)`` and orders a qubit's density
vector as ``(rho_ee, rho_eg, rho_ge, rho_gg)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import DimensionTooLargeError, EtaMismatchError, TraceDriftError
from .linalg import as_matrix, identity, propagator, spectral_norm, trace_norm
from .model import OpenSystemModel, effective_hamiltonian
from .trajectory import Scheme, SimConfig, deterministic_channel_step, prepare

MAX_LIOUVILLE_DIM = 4096  # dim^2, i.e. six qubits
MAX_ENHH_DIM = 1024
MAX_CHOI_DIM = 16
EIG_COND_LIMIT = 1e8
DEFAULT_H_INT = 1e-3


def vec(rho: np.ndarray) -> np.ndarray:
    return np.asarray(rho, dtype=np.complex128).reshape(-1)


def unvec(v: np.ndarray, dim: int) -> np.ndarray:
    return np.asarray(v).reshape(dim, dim)


def _check_liouville_dim(model: OpenSystemModel) -> None:
    if model.dim**2 > MAX_LIOUVILLE_DIM:
        raise DimensionTooLargeError(
            f"superoperator of dimension {model.dim**2} exceeds {MAX_LIOUVILLE_DIM}"
        )


def _require_lme(model: OpenSystemModel) -> None:
    if np.any(model.etas != 0.0):
        raise EtaMismatchError(f"linear master equation needs eta = 0, got {model.etas.tolist()}")


def build_liouvillian(model: OpenSystemModel) -> np.ndarray:
    """Linear part of the generator: Hamiltonian, anticommutator and ``(1 - eta)`` jump terms.

    The state-dependent ``eta <L^dag L> rho`` term is left to
    :func:`propagate_nlme`.
    """
    _check_liouville_dim(model)
    h = model.hamiltonian
    eye = identity(model.dim)
    lv = -1j * np.kron(h, eye) + 1j * np.kron(eye, h.T)
    for ch in model.channels:
        op = ch.jump_operator
        ldl = op.conj().T @ op
        lv += ch.rate * (
            (1.0 - ch.eta) * np.kron(op, op.conj())
            - 0.5 * np.kron(ldl, eye)
            - 0.5 * np.kron(eye, ldl.T)
        )
    return lv


@dataclass(frozen=True, eq=False)
class LiouvillePropagator:
    """``exp(L t)`` via eigendecomposition, or repeated squaring when ``L`` is near-defective."""

    generator: np.ndarray
    evals: np.ndarray | None
    evecs: np.ndarray | None
    evecs_inv: np.ndarray | None

    @classmethod
    def from_generator(cls, lv: np.ndarray) -> "LiouvillePropagator":
        evals, evecs = np.linalg.eig(lv)
        if np.linalg.cond(evecs) > EIG_COND_LIMIT:
            return cls(lv, None, None, None)
        return cls(lv, evals, evecs, np.linalg.inv(evecs))

    def __call__(self, t: float) -> np.ndarray:
        if self.evals is None:
            return scipy.linalg.expm(self.generator * t)
        return (self.evecs * np.exp(self.evals * t)) @ self.evecs_inv

    def apply(self, v: np.ndarray, times) -> list[np.ndarray]:
        """``exp(L t) v`` for each of ``times`` without forming the propagators."""
        if self.evals is None:
            out, t_now, cur = [], 0.0, v
            for t in times:
                cur = scipy.linalg.expm(self.generator * (float(t) - t_now)) @ cur
                t_now = float(t)
                out.append(cur)
            return out
        coeffs = self.evecs_inv @ v
        return [self.evecs @ (np.exp(self.evals * float(t)) * coeffs) for t in times]


def propagate_lme(model: OpenSystemModel, rho0, t: float) -> np.ndarray:
    _require_lme(model)
    return lme_series(model, rho0, [t])[0]


def lme_series(model: OpenSystemModel, rho0, times) -> list[np.ndarray]:
    """``rho(t)`` of the linear master equation at each of ``times``."""
    _require_lme(model)
    _check_liouville_dim(model)
    prop = LiouvillePropagator.from_generator(build_liouvillian(model))
    out = []
    for v in prop.apply(vec(rho0), times):
        rho = unvec(v, model.dim)
        out.append(0.5 * (rho + rho.conj().T))
    return out


def _nlme_rhs(model: OpenSystemModel):
    h = model.hamiltonian
    terms = []
    for ch in model.channels:
        op = ch.jump_operator
        terms.append((ch.rate, ch.eta, op, op.conj().T, op.conj().T @ op))

    def rhs(rho: np.ndarray) -> np.ndarray:
        out = -1j * (h @ rho - rho @ h)
        for rate, eta, op, opd, ldl in terms:
            if rate == 0.0:
                continue
            out += rate * (-0.5 * (ldl @ rho + rho @ ldl))
            if eta != 1.0:
                out += rate * (1.0 - eta) * (op @ rho @ opd)
            if eta != 0.0:
                out += rate * eta * np.trace(ldl @ rho).real * rho
        return out

    return rhs


def nlme_series(model: OpenSystemModel, rho0, times, h_int: float = DEFAULT_H_INT) -> list[np.ndarray]:
    """Classic fixed-step RK4 for the nonlinear equation, sampled at ``times``.

    Each interval between consecutive requested times is split into the
    fewest equal substeps no longer than ``h_int``.
    """
    _check_liouville_dim(model)
    if h_int <= 0:
        raise ValueError("h_int must be positive")
    rhs = _nlme_rhs(model)
    rho = as_matrix(rho0).copy()
    t_now = 0.0
    out = []
    for t in times:
        span = float(t) - t_now
        if span < -1e-12:
            raise ValueError("times must be non-decreasing and non-negative")
        n = max(0, math.ceil(span / h_int - 1e-9))
        if n:
            h = span / n
            for _ in range(n):
                k1 = rhs(rho)
                k2 = rhs(rho + 0.5 * h * k1)
                k3 = rhs(rho + 0.5 * h * k2)
                k4 = rhs(rho + h * k3)
                rho = rho + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
            drift = abs(np.trace(rho).real - 1.0)
            if drift > 1e-6:
                raise TraceDriftError(f"trace drifted by {drift:.3e} at t={t}")
        t_now = float(t)
        out.append(0.5 * (rho + rho.conj().T))
    return out


def propagate_nlme(model: OpenSystemModel, rho0, t: float, h_int: float = DEFAULT_H_INT) -> np.ndarray:
    return nlme_series(model, rho0, [t], h_int)[0]


def propagate_enhh(model: OpenSystemModel, psi0, t: float) -> np.ndarray:
    """Normalized ``exp(-i H_eff t) psi0``."""
    if model.dim > MAX_ENHH_DIM:
        raise DimensionTooLargeError(f"dimension {model.dim} exceeds {MAX_ENHH_DIM}")
    psi = propagator(effective_hamiltonian(model), t) @ np.asarray(psi0, dtype=np.complex128)
    return psi / np.linalg.norm(psi)


def enhh_series(model: OpenSystemModel, psi0, times) -> list[np.ndarray]:
    return [propagate_enhh(model, psi0, t) for t in times]


def choi_state(channel, dim: int) -> np.ndarray:
    """``(channel (x) id)(|Omega><Omega|)`` with ``|Omega>`` normalized, system factor first."""
    out = np.zeros((dim * dim, dim * dim), dtype=np.complex128)
    for i in range(dim):
        for j in range(dim):
            unit = np.zeros((dim, dim), dtype=np.complex128)
            unit[i, j] = 1.0
            out += np.kron(channel(unit), unit)
    return out / dim


@dataclass(frozen=True)
class ChoiCheck:
    choi_distance: float
    bound: float
    lam: float

    @property
    def holds(self) -> bool:
        return self.choi_distance <= self.bound


def error_scale(model: OpenSystemModel) -> float:
    """``||H|| + M max_mu gamma_mu ||L_mu||^2``."""
    loads = [ch.rate * spectral_norm(ch.jump_operator) ** 2 for ch in model.channels]
    return spectral_norm(model.hamiltonian) + len(loads) * max(loads, default=0.0)


def choi_error_bound_check(model: OpenSystemModel, dt: float, hamiltonian_mode="exact_exp") -> ChoiCheck:
    """Choi-state trace distance between one channel step and ``exp(L dt)``, against ``6 lam^2 dt^2``."""
    _require_lme(model)
    if model.dim > MAX_CHOI_DIM:
        raise DimensionTooLargeError(f"dimension {model.dim} exceeds {MAX_CHOI_DIM}")
    config = SimConfig(dt, dt, scheme=Scheme.DETERMINISTIC_CHANNEL, hamiltonian_mode=hamiltonian_mode)
    plan = prepare(model, config)
    exact = LiouvillePropagator.from_generator(build_liouvillian(model))(dt)
    dim = model.dim

    def stepped(rho):
        return deterministic_channel_step(rho, model, config, plan)

    def reference(rho):
        return unvec(exact @ vec(rho), dim)

    distance = trace_norm(choi_state(stepped, dim) - choi_state(reference, dim))
    lam = error_scale(model)
    return ChoiCheck(distance, 6.0 * lam**2 * dt**2, lam)
