"""Per-channel dilation blocks and the unitaries built from them.

For a channel ``(L, gamma, eta)`` and time step ``dt``::

    A  = sqrt(1 - gamma dt L^dag L)      (no-jump branch)
    A~ = sqrt(1 - gamma dt L L^dag)
    B  = sqrt((1 - eta) gamma dt) L      (recorded jump)
    C  = sqrt(eta gamma dt) L            (postselected away)

so that ``A^dag A + B^dag B + C^dag C = 1``. The trajectory engine applies
the blocks directly to system states; the assembled unitaries below are
for verification and inspection.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EtaMismatchError, NonSquareError, TimestepTooLargeError
from .linalg import identity, spectral_norm
from .model import DissipationChannel

# slack on gamma*dt*||L||^2 <= 1 for round-off in the norm itself
_PSD_SLACK = 1e-12


@dataclass(frozen=True, eq=False)
class DilationBlocks:
    a: np.ndarray
    a_tilde: np.ndarray
    b: np.ndarray
    c: np.ndarray
    dt: float
    eta: float
    channel_index: int = 0

    @property
    def dim(self) -> int:
        return self.a.shape[0]

    def completeness_error(self) -> float:
        """``|| A^dag A + B^dag B + C^dag C - 1 ||`` in spectral norm."""
        total = sum(x.conj().T @ x for x in (self.a, self.b, self.c))
        return spectral_norm(total - identity(self.dim))


def build_blocks(channel: DissipationChannel, dt: float, channel_index: int = 0) -> DilationBlocks:
    """Blocks from one SVD ``sqrt(gamma dt) L = U S V^dag``.

    ``A = V sqrt(1 - S^2) V^dag`` and ``A~ = U sqrt(1 - S^2) U^dag`` share
    their singular factors, so the dilation stays unitary to round-off even
    when ``gamma dt ||L||^2`` reaches 1 and separate eigendecompositions
    would disagree at the ``sqrt(eps)`` level.
    """
    op = channel.jump_operator
    strength = channel.rate * dt
    u, sv, vh = np.linalg.svd(np.sqrt(strength) * op)
    load = float(sv[0]) ** 2 if sv.size else 0.0
    if load > 1.0 + _PSD_SLACK:
        raise TimestepTooLargeError(
            f"channel {channel_index}: gamma*dt*||L||^2 = {load:.4g} > 1; reduce dt below "
            f"{dt / load:.4g}"
        )
    sv = np.minimum(sv, 1.0)
    cos = np.sqrt((1.0 - sv) * (1.0 + sv))
    a = (vh.conj().T * cos) @ vh
    a_tilde = (u * cos) @ u.conj().T
    return DilationBlocks(
        a=0.5 * (a + a.conj().T),
        a_tilde=0.5 * (a_tilde + a_tilde.conj().T),
        b=np.sqrt((1.0 - channel.eta) * strength) * op,
        c=np.sqrt(channel.eta * strength) * op,
        dt=dt,
        eta=channel.eta,
        channel_index=channel_index,
    )


def assemble_two_dilation(blocks: DilationBlocks) -> np.ndarray:
    """Two-ancilla unitary; ancilla is the leftmost factor, rows ordered 00, 01, 10, 11.

    ``U |00>|phi> = |00> C phi + |01> B phi + |10> A phi``.
    """
    a, at, b, c = blocks.a, blocks.a_tilde, blocks.b, blocks.c
    z = np.zeros_like(a)
    bd, cd = b.conj().T, c.conj().T
    return np.block(
        [
            [c, b, at, z],
            [b, -c, z, at],
            [a, z, -cd, -bd],
            [z, a, -bd, cd],
        ]
    )


def assemble_one_dilation_lme(blocks: DilationBlocks) -> np.ndarray:
    """One-ancilla unitary for eta = 0: ``U |0>|phi> = |0> B phi + |1> A phi``."""
    if blocks.eta != 0.0:
        raise EtaMismatchError(f"1-dilation LME gate needs eta = 0, got {blocks.eta}")
    return np.block([[blocks.b, blocks.a_tilde], [blocks.a, -blocks.b.conj().T]])


def assemble_one_dilation_enhh(blocks: DilationBlocks) -> np.ndarray:
    """One-ancilla unitary for eta = 1: ``U |0>|phi> = |0> C phi + |1> A phi``."""
    if blocks.eta != 1.0:
        raise EtaMismatchError(f"1-dilation ENHH gate needs eta = 1, got {blocks.eta}")
    return np.block([[blocks.c, blocks.a_tilde], [blocks.a, -blocks.c.conj().T]])


def verify_unitarity(u) -> float:
    u = np.asarray(u, dtype=np.complex128)
    if u.ndim != 2 or u.shape[0] != u.shape[1]:
        raise NonSquareError(f"expected a square matrix, got shape {u.shape}")
    return spectral_norm(u.conj().T @ u - identity(u.shape[0]))


def ancilla_block(u: np.ndarray, out_state: int, in_state: int, n_ancilla_states: int) -> np.ndarray:
    """``(<out|_a (x) 1) U (|in>_a (x) 1)`` for an ancilla-leftmost unitary."""
    d = u.shape[0] // n_ancilla_states
    return u[out_state * d : (out_state + 1) * d, in_state * d : (in_state + 1) * d]
