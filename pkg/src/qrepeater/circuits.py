"""Density-matrix simulation of the swap and purification circuits on two pairs.

These act on the full 16-dimensional two-pair Hilbert space and know nothing
about the closed-form coefficient rules in :mod:`qrepeater.bell_algebra`; the
test suite uses them as the independent reference for those rules.
"""
from __future__ import annotations

from functools import lru_cache
from itertools import product

import numpy as np

from .bell_algebra import BellDiagonal

_S2 = np.sqrt(2.0)
_I = np.eye(2)
_X = np.array([[0.0, 1.0], [1.0, 0.0]])
_Z = np.diag([1.0, -1.0])
_H = (_X + _Z) / _S2
_P0 = np.diag([1.0, 0.0])
_P1 = np.diag([0.0, 1.0])


def _ket(*bits: int) -> np.ndarray:
    v = np.array([1.0 + 0j])
    for b in bits:
        v = np.kron(v, np.eye(2)[b])
    return v


# Phi+, Psi-, Psi+, Phi-
BELL_KETS = (
    (_ket(0, 0) + _ket(1, 1)) / _S2,
    (_ket(0, 1) - _ket(1, 0)) / _S2,
    (_ket(0, 1) + _ket(1, 0)) / _S2,
    (_ket(0, 0) - _ket(1, 1)) / _S2,
)


def _local(n: int, ops: dict[int, np.ndarray]) -> np.ndarray:
    U = np.array([[1.0 + 0j]])
    for q in range(n):
        U = np.kron(U, ops.get(q, _I))
    return U


def _cnot(n: int, control: int, target: int) -> np.ndarray:
    dim = 2**n
    U = np.zeros((dim, dim))
    for i in range(dim):
        bits = [(i >> (n - 1 - q)) & 1 for q in range(n)]
        if bits[control]:
            bits[target] ^= 1
        j = sum(b << (n - 1 - q) for q, b in enumerate(bits))
        U[j, i] = 1.0
    return U


def _rx(theta: float) -> np.ndarray:
    return np.cos(theta / 2) * _I - 1j * np.sin(theta / 2) * _X


def bell_density(state) -> np.ndarray:
    w = np.asarray(state, dtype=float)
    return sum(w[k] * np.outer(BELL_KETS[k], BELL_KETS[k].conj()) for k in range(4))


def bell_coefficients(rho: np.ndarray) -> np.ndarray:
    """Diagonal of a two-qubit density matrix in the Bell basis."""
    return np.array([np.vdot(b, rho @ b).real for b in BELL_KETS])


def _trace_out(rho: np.ndarray, keep: tuple[int, ...], n: int) -> np.ndarray:
    t = rho.reshape([2] * (2 * n))
    drop = [q for q in range(n) if q not in keep]
    for offset, q in enumerate(sorted(drop)):
        axis = q - offset
        t = np.trace(t, axis1=axis, axis2=axis + t.ndim // 2)
    d = 2 ** len(keep)
    return t.reshape(d, d)


def _reorder(rho: np.ndarray, order: tuple[int, ...], n: int) -> np.ndarray:
    t = rho.reshape([2] * (2 * n))
    t = np.transpose(t, list(order) + [n + q for q in order])
    return t.reshape(2**n, 2**n)


# qubits: 0 = left outer, 1 = left middle, 2 = right middle, 3 = right outer
_SWAP_BELL_MEASUREMENT = _local(4, {1: _H}) @ _cnot(4, 1, 2)
_PAULIS = (_I, _X, _Z, _X @ _Z)


def _swap_branch(rho: np.ndarray, m1: int, m2: int, correction: np.ndarray) -> np.ndarray:
    proj = _local(4, {1: (_P0, _P1)[m1], 2: (_P0, _P1)[m2]})
    out = proj @ rho @ proj.conj().T
    fix = _local(4, {3: correction})
    out = fix @ out @ fix.conj().T
    return _trace_out(out, (0, 3), 4)


@lru_cache(maxsize=1)
def _swap_corrections() -> dict[tuple[int, int], np.ndarray]:
    """Outcome-dependent Pauli on the right outer qubit that maps Psi+ x Psi+ to Psi+."""
    rho_in = np.kron(bell_density([0, 0, 1, 0]), bell_density([0, 0, 1, 0]))
    rho = _SWAP_BELL_MEASUREMENT @ rho_in @ _SWAP_BELL_MEASUREMENT.conj().T
    table = {}
    for m1, m2 in product((0, 1), repeat=2):
        for pauli in _PAULIS:
            red = _swap_branch(rho, m1, m2, pauli)
            prob = np.trace(red).real
            if prob > 1e-12 and bell_coefficients(red / prob)[2] > 1 - 1e-9:
                table[(m1, m2)] = pauli
                break
    return table


def circuit_oracle_swap(left, right) -> BellDiagonal:
    """Entanglement swap by Bell measurement on the middle node plus frame correction."""
    rho_in = np.kron(bell_density(left), bell_density(right))
    rho = _SWAP_BELL_MEASUREMENT @ rho_in @ _SWAP_BELL_MEASUREMENT.conj().T
    out = np.zeros((4, 4), dtype=complex)
    for (m1, m2), pauli in _swap_corrections().items():
        out += _swap_branch(rho, m1, m2, pauli)
    return BellDiagonal.from_vec(bell_coefficients(out))


# qubits: 0 = upper node pair 1, 1 = lower node pair 1, 2 = upper node pair 2,
# 3 = lower node pair 2; pair 2 is measured
_PURIFY_CIRCUIT = (
    _cnot(4, 1, 3)
    @ _cnot(4, 0, 2)
    @ _local(4, {0: _rx(np.pi / 2), 2: _rx(np.pi / 2), 1: _rx(-np.pi / 2), 3: _rx(-np.pi / 2)})
)


def circuit_oracle_purify(pair1, pair2):
    """Bilateral-rotation, bilateral-CNOT purification with a coincidence herald.

    Returns ``(p_success, success_state, p_fail, fail_state)``; a state is
    ``None`` when its branch has zero probability.
    """
    rho_in = np.kron(bell_density(pair1), bell_density(pair2))
    rho = _PURIFY_CIRCUIT @ rho_in @ _PURIFY_CIRCUIT.conj().T
    branches = {True: np.zeros((4, 4), dtype=complex), False: np.zeros((4, 4), dtype=complex)}
    for m_up, m_low in product((0, 1), repeat=2):
        proj = _local(4, {2: (_P0, _P1)[m_up], 3: (_P0, _P1)[m_low]})
        out = proj @ rho @ proj.conj().T
        branches[m_up == m_low] += _trace_out(out, (0, 1), 4)

    result = []
    for coincide in (True, False):
        red = branches[coincide]
        prob = float(np.trace(red).real)
        coeffs = bell_coefficients(red)
        result.append(prob)
        result.append(BellDiagonal.from_vec(coeffs) if prob > 1e-15 else None)
    return tuple(result)
