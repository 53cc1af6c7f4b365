"""Independent reference implementations used only by the tests.

Each oracle takes a different numerical route from the library code it
checks, so agreement is evidence rather than tautology.
"""

import math

import numpy as np
from scipy.integrate import solve_ivp


def taylor_exp(a, terms=60, squarings=6):
    """Truncated Taylor series after scaling by ``2**squarings``."""
    a = np.asarray(a, dtype=np.complex128) / 2**squarings
    out = np.eye(a.shape[0], dtype=np.complex128)
    term = out.copy()
    for k in range(1, terms):
        term = term @ a / k
        out = out + term
    for _ in range(squarings):
        out = out @ out
    return out


def svd_free_trace_norm(m):
    """Sum of square roots of the eigenvalues of ``M^dag M``."""
    evals = np.linalg.eigvalsh(m.conj().T @ m)
    return float(np.sum(np.sqrt(np.clip(evals, 0.0, None))))


def power_iteration_norm(m, iterations=5000, seed=0):
    v = np.random.default_rng(seed).normal(size=m.shape[1]).astype(np.complex128)
    gram = m.conj().T @ m
    for _ in range(iterations):
        v = gram @ v
        v /= np.linalg.norm(v)
    return math.sqrt(abs(np.vdot(v, gram @ v)))


# Spin chains built element by element over basis bit strings. Bit value 0
# is spin up, and site 1 is the most significant bit.


def _bit(state, site, n):
    return (state >> (n - site)) & 1


def _flip(state, site, n):
    return state ^ (1 << (n - site))


def xxz_hamiltonian(n, J, Delta):
    dim = 2**n
    h = np.zeros((dim, dim))
    for s in range(dim):
        for l in range(1, n):
            a, b = _bit(s, l, n), _bit(s, l + 1, n)
            h[s, s] += J * Delta * (1 if a == b else -1)
            if a != b:
                # sx sx + sy sy flips an antiparallel pair with amplitude 2
                h[_flip(_flip(s, l, n), l + 1, n), s] += 2 * J
    return h


def hopping_field_hamiltonian(n, J, V, omega):
    dim = 2**n
    h = np.zeros((dim, dim))
    for s in range(dim):
        for l in range(1, n + 1):
            h[s, s] += V * math.cos(2 * math.pi * omega * l) * (1 if _bit(s, l, n) == 0 else -1)
        for l in range(1, n):
            if _bit(s, l, n) != _bit(s, l + 1, n):
                h[_flip(_flip(s, l, n), l + 1, n), s] += J
    return h


def lowering(n, site):
    dim = 2**n
    op = np.zeros((dim, dim))
    for s in range(dim):
        if _bit(s, site, n) == 0:
            op[_flip(s, site, n), s] = 1.0
    return op


def bond_jump_expanded_ldl(n, l, alpha, beta):
    """``L^dag L`` of the bond operator written out as a sum of products.

    With ``P = s+_l + e^{ia} s+_{l+1}`` and ``Q = s-_l + e^{ib} s-_{l+1}``,
    ``L^dag L = Q^dag P^dag P Q / 4`` expanded term by term.
    """
    sm = [None] + [lowering(n, k).astype(np.complex128) for k in range(1, n + 1)]
    sp = [None] + [x.T.copy() for x in sm[1:]]
    ea, eb = np.exp(1j * alpha), np.exp(1j * beta)
    p = [(sp[l], 1.0), (sp[l + 1], ea)]
    q = [(sm[l], 1.0), (sm[l + 1], eb)]
    out = 0
    for q1, c1 in q:
        for p1, c2 in p:
            for p2, c3 in p:
                for q2, c4 in q:
                    coeff = np.conj(c1) * np.conj(c2) * c3 * c4
                    out = out + coeff * (q1.conj().T @ p1.conj().T @ p2 @ q2)
    return out / 4


def atom_excited_population(J, gamma, eta, times):
    """Atom NLME from the excited state, written for ``(P_e, Re c, Im c)``.

    ``c`` is the excited-ground coherence. Hand-derived component
    equations, integrated with an adaptive high-order method.
    """

    def rhs(_, v):
        pe, cr, ci = v
        gain = eta * gamma * pe  # nonlinear renormalization rate
        return [
            -2 * J * ci - gamma * pe + gain * pe,
            -0.5 * gamma * cr + gain * cr,
            -J * (1 - 2 * pe) - 0.5 * gamma * ci + gain * ci,
        ]

    times = np.asarray(times, dtype=float)
    sol = solve_ivp(
        rhs, (0.0, float(times.max())), [1.0, 0.0, 0.0], t_eval=times, rtol=1e-12, atol=1e-14, method="DOP853"
    )
    return sol.y[0]
