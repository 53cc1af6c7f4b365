"""Open-system models: Hamiltonian plus an ordered list of jump channels.

Conventions used throughout the package:

* spin up ``|u> = (1, 0)^T`` is the excited state ``|e>``;
  ``sigma_plus = |u><d|`` and ``sigma_minus = |d><u|``;
* site 1 is the leftmost Kronecker factor;
* chains have open boundaries.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import InvalidEtaError, ModelBuildError, TooFewSitesError, TrotterUnavailableError
from .linalg import as_matrix, identity, is_hermitian, kron_all

SIGMA_X = np.array([[0, 1], [1, 0]], dtype=np.complex128)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=np.complex128)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=np.complex128)
SIGMA_PLUS = np.array([[0, 1], [0, 0]], dtype=np.complex128)
SIGMA_MINUS = np.array([[0, 0], [1, 0]], dtype=np.complex128)
NUMBER = SIGMA_PLUS @ SIGMA_MINUS  # |u><u|

GOLDEN_OMEGA = (math.sqrt(5.0) - 1.0) / 2.0


def site_op(op, site: int, n_sites: int) -> np.ndarray:
    """Embed a single-site operator at ``site`` (1-indexed) of an ``n_sites`` chain."""
    if not 1 <= site <= n_sites:
        raise ValueError(f"site {site} outside 1..{n_sites}")
    factors = [identity(2)] * n_sites
    factors[site - 1] = as_matrix(op)
    return kron_all(*factors)


def two_site_op(op_a, site_a: int, op_b, site_b: int, n_sites: int) -> np.ndarray:
    return site_op(op_a, site_a, n_sites) @ site_op(op_b, site_b, n_sites)


@dataclass(frozen=True, eq=False)
class DissipationChannel:
    jump_operator: np.ndarray
    rate: float
    eta: float = 0.0

    def __post_init__(self):
        op = as_matrix(self.jump_operator)
        if op.ndim != 2 or op.shape[0] != op.shape[1]:
            raise ModelBuildError(f"jump operator must be square, got {op.shape}")
        if not 0.0 <= self.eta <= 1.0:
            raise InvalidEtaError(f"eta={self.eta} outside [0, 1]")
        if self.rate < 0:
            raise ModelBuildError(f"rate={self.rate} is negative")
        object.__setattr__(self, "jump_operator", op)
        object.__setattr__(self, "rate", float(self.rate))
        object.__setattr__(self, "eta", float(self.eta))

    def with_eta(self, eta: float) -> "DissipationChannel":
        return replace(self, eta=eta)


@dataclass(frozen=True, eq=False)
class OpenSystemModel:
    """Hamiltonian, channels and (for chains) the bond decomposition of H.

    ``bond_terms[k]`` is the full-space Hermitian term of bond ``k + 1``
    and ``onsite_term`` collects single-site fields. When both are present
    they sum to ``hamiltonian``; Trotterized propagation needs them.
    """

    hamiltonian: np.ndarray
    channels: tuple[DissipationChannel, ...]
    n_sites: int
    local_dim: int = 2
    name: str = "custom"
    bond_terms: tuple[np.ndarray, ...] | None = None
    onsite_term: np.ndarray | None = None

    def __post_init__(self):
        h = as_matrix(self.hamiltonian)
        dim = self.local_dim**self.n_sites
        if h.shape != (dim, dim):
            raise ModelBuildError(
                f"hamiltonian shape {h.shape} does not match {self.n_sites} sites of dim {self.local_dim}"
            )
        if not is_hermitian(h, 1e-12 * max(1.0, float(np.max(np.abs(h), initial=0.0)))):
            raise ModelBuildError("hamiltonian is not Hermitian")
        for mu, ch in enumerate(self.channels):
            if ch.jump_operator.shape != (dim, dim):
                raise ModelBuildError(f"channel {mu} has shape {ch.jump_operator.shape}, expected {(dim, dim)}")
        object.__setattr__(self, "hamiltonian", h)
        object.__setattr__(self, "channels", tuple(self.channels))
        if self.bond_terms is not None:
            object.__setattr__(self, "bond_terms", tuple(as_matrix(b) for b in self.bond_terms))

    @property
    def dim(self) -> int:
        return self.hamiltonian.shape[0]

    @property
    def etas(self) -> np.ndarray:
        return np.array([ch.eta for ch in self.channels])

    def with_eta(self, eta: float) -> "OpenSystemModel":
        return replace(self, channels=tuple(ch.with_eta(eta) for ch in self.channels))


@dataclass(frozen=True)
class ModelParams:
    J: float = 1.0
    Delta: float = 0.0
    gamma: float = 0.0
    eta: float = 0.0
    V: float = 0.0
    omega: float = GOLDEN_OMEGA
    alpha: float = 0.0
    beta: float = 0.0
    L_sites: int = 2


SKIN_ALPHA = -math.pi / 2  # overridable per config
SKIN_BETA = math.pi / 2


def _check_chain(params: ModelParams) -> int:
    if params.L_sites < 2:
        raise TooFewSitesError(f"chain models need at least 2 sites, got {params.L_sites}")
    if not 0.0 <= params.eta <= 1.0:
        raise InvalidEtaError(f"eta={params.eta} outside [0, 1]")
    return params.L_sites


def build_atom(J: float, gamma: float, eta: float = 0.0) -> OpenSystemModel:
    """Driven two-level atom ``H = J sigma_x`` decaying through ``L = sigma_minus``."""
    if not 0.0 <= eta <= 1.0:
        raise InvalidEtaError(f"eta={eta} outside [0, 1]")
    return OpenSystemModel(
        hamiltonian=J * SIGMA_X,
        channels=(DissipationChannel(SIGMA_MINUS, gamma, eta),),
        n_sites=1,
        name="atom",
    )


def xxz_bond(l: int, n_sites: int, J: float, Delta: float) -> np.ndarray:
    return J * (
        two_site_op(SIGMA_X, l + 1, SIGMA_X, l, n_sites)
        + two_site_op(SIGMA_Y, l + 1, SIGMA_Y, l, n_sites)
        + Delta * two_site_op(SIGMA_Z, l + 1, SIGMA_Z, l, n_sites)
    )


def build_xxz(params: ModelParams) -> OpenSystemModel:
    """Open XXZ chain with local decay ``sigma_minus`` on every site (eta = 0)."""
    n = _check_chain(params)
    bonds = tuple(xxz_bond(l, n, params.J, params.Delta) for l in range(1, n))
    channels = tuple(
        DissipationChannel(site_op(SIGMA_MINUS, l, n), params.gamma, 0.0) for l in range(1, n + 1)
    )
    return OpenSystemModel(
        hamiltonian=sum(bonds),
        channels=channels,
        n_sites=n,
        name="xxz",
        bond_terms=bonds,
        onsite_term=None,
    )


def hopping_bond(l: int, n_sites: int, J: float) -> np.ndarray:
    hop = two_site_op(SIGMA_PLUS, l, SIGMA_MINUS, l + 1, n_sites)
    return J * (hop + hop.conj().T)


def bond_jump_operator(l: int, n_sites: int, alpha: float, beta: float) -> np.ndarray:
    """``1/2 (s+_l + e^{i alpha} s+_{l+1})(s-_l + e^{i beta} s-_{l+1})``."""
    raise_ = site_op(SIGMA_PLUS, l, n_sites) + np.exp(1j * alpha) * site_op(SIGMA_PLUS, l + 1, n_sites)
    lower = site_op(SIGMA_MINUS, l, n_sites) + np.exp(1j * beta) * site_op(SIGMA_MINUS, l + 1, n_sites)
    return 0.5 * raise_ @ lower


def quasiperiodic_field(params: ModelParams, n_sites: int) -> np.ndarray:
    dim = 2**n_sites
    out = np.zeros((dim, dim), dtype=np.complex128)
    for l in range(1, n_sites + 1):
        out += params.V * math.cos(2 * math.pi * params.omega * l) * site_op(SIGMA_Z, l, n_sites)
    return out


def _bond_dissipative_chain(params: ModelParams, name: str, with_field: bool) -> OpenSystemModel:
    n = _check_chain(params)
    bonds = tuple(hopping_bond(l, n, params.J) for l in range(1, n))
    onsite = quasiperiodic_field(params, n) if with_field else None
    h = sum(bonds) if onsite is None else sum(bonds) + onsite
    channels = tuple(
        DissipationChannel(bond_jump_operator(l, n, params.alpha, params.beta), params.gamma, params.eta)
        for l in range(1, n)
    )
    return OpenSystemModel(
        hamiltonian=h,
        channels=channels,
        n_sites=n,
        name=name,
        bond_terms=bonds,
        onsite_term=onsite,
    )


def build_localization(params: ModelParams) -> OpenSystemModel:
    """Hopping chain in a quasiperiodic field with bond jump operators."""
    return _bond_dissipative_chain(params, "localization", with_field=True)


def build_skin(params: ModelParams) -> OpenSystemModel:
    """Field-free hopping chain with postselected bond jumps (V is ignored)."""
    return _bond_dissipative_chain(params, "skin", with_field=False)


def effective_hamiltonian(model: OpenSystemModel) -> np.ndarray:
    """``H - (i/2) sum_mu gamma_mu L_mu^dag L_mu``."""
    h_eff = model.hamiltonian.copy()
    for ch in model.channels:
        op = ch.jump_operator
        h_eff = h_eff - 0.5j * ch.rate * (op.conj().T @ op)
    return h_eff


# initial states


def basis_state(bits: str) -> np.ndarray:
    """Product state from a string over ``{'u', 'd'}`` (or ``'1'``/``'0'``, ``'e'``/``'g'``).

    ``'u'``, ``'1'`` and ``'e'`` all mean spin up / excited.
    """
    up = {"u", "1", "e"}
    down = {"d", "0", "g"}
    index = 0
    for ch in bits:
        if ch in up:
            bit = 0
        elif ch in down:
            bit = 1
        else:
            raise ValueError(f"unknown basis symbol {ch!r} in {bits!r}")
        index = 2 * index + bit
    psi = np.zeros(2 ** len(bits), dtype=np.complex128)
    psi[index] = 1.0
    return psi


def named_state(name: str, n_sites: int) -> np.ndarray:
    name = name.strip().lower()
    if name in ("excited", "all_up", "up"):
        return basis_state("u" * n_sites)
    if name in ("ground", "all_down", "down"):
        return basis_state("d" * n_sites)
    if name == "neel":
        return basis_state("".join("ud"[l % 2] for l in range(n_sites)))
    if name.startswith("basis:"):
        bits = name.split(":", 1)[1]
        if len(bits) != n_sites:
            raise ValueError(f"basis string {bits!r} has length {len(bits)}, expected {n_sites}")
        return basis_state(bits)
    raise ValueError(f"unknown initial state {name!r}")


def default_initial_state(model: OpenSystemModel) -> str:
    return {"atom": "excited", "xxz": "all_up"}.get(model.name, "neel")


def trotter_layers(model: OpenSystemModel) -> tuple[np.ndarray, np.ndarray]:
    """Odd-bond (plus on-site) and even-bond parts of H, bonds counted from 1."""
    if model.bond_terms is None:
        raise TrotterUnavailableError(f"model {model.name!r} has no bond decomposition")
    dim = model.dim
    odd = np.zeros((dim, dim), dtype=np.complex128)
    even = np.zeros((dim, dim), dtype=np.complex128)
    for k, term in enumerate(model.bond_terms):
        if k % 2 == 0:
            odd += term
        else:
            even += term
    if model.onsite_term is not None:
        odd += model.onsite_term
    return odd, even
