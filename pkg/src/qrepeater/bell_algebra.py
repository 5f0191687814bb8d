"""Bell-diagonal states and the error channels acting on them.

A state is the probability vector (A, B, C, D) over Phi+, Psi-, Psi+, Phi-.
Psi+ (C) is the target state. Relative to Psi+ the four states are the
Pauli frames I (C), X (A), Z (B) and Y (D), so swapping composes frames by
the Klein four-group.

All channel functions accept either a :class:`BellDiagonal` or an array whose
last axis has length 4 (batches broadcast); they return the same kind.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

A, B, C, D = range(4)

# bit-and-phase partner: A<->B, C<->D
Y_PARTNER = np.array([1, 0, 3, 2])
# phase partner: A<->D, B<->C
Z_PARTNER = np.array([3, 2, 1, 0])
# bit partner: A<->C, B<->D
X_PARTNER = np.array([2, 3, 0, 1])

# characters of the Klein group in (A, B, C, D) order; frames A=X, B=Z, C=I, D=Y
_FRAME_BITS = np.array([[1, 0], [0, 1], [0, 0], [1, 1]])
_CHARACTERS = (-1.0) ** ((_FRAME_BITS @ _FRAME_BITS.T) % 2)

NORMALIZATION_TOL = 1e-9


@dataclass(frozen=True)
class BellDiagonal:
    A: float
    B: float
    C: float
    D: float

    def __post_init__(self):
        coeffs = (self.A, self.B, self.C, self.D)
        if min(coeffs) < -1e-12 or max(coeffs) > 1.0 + 1e-12:
            raise ValueError(f"Bell coefficients must lie in [0, 1], got {coeffs}")
        if abs(sum(coeffs) - 1.0) > NORMALIZATION_TOL:
            raise ValueError(f"Bell coefficients must sum to 1, got {sum(coeffs)!r}")

    @property
    def vec(self) -> np.ndarray:
        return np.array([self.A, self.B, self.C, self.D], dtype=float)

    def __array__(self, dtype=None, copy=None):
        return self.vec if dtype is None else self.vec.astype(dtype)

    @classmethod
    def from_vec(cls, vec) -> "BellDiagonal":
        v = normalize(np.asarray(vec, dtype=float))
        return cls(*(float(x) for x in v))

    @classmethod
    def perfect(cls) -> "BellDiagonal":
        return cls(0.0, 0.0, 1.0, 0.0)

    @classmethod
    def fully_mixed(cls) -> "BellDiagonal":
        return cls(0.25, 0.25, 0.25, 0.25)

    @property
    def fidelity(self) -> float:
        return self.C

    def astuple(self) -> tuple[float, float, float, float]:
        return (self.A, self.B, self.C, self.D)


def normalize(v: np.ndarray) -> np.ndarray:
    """Clamp negative coefficients to zero and rescale to unit sum along the last axis."""
    v = np.maximum(v, 0.0)
    total = v.sum(axis=-1, keepdims=True)
    return v / total


def _unwrap(state) -> tuple[np.ndarray, bool]:
    if isinstance(state, BellDiagonal):
        return state.vec, True
    return np.asarray(state, dtype=float), False


def _wrap(v: np.ndarray, as_bell: bool):
    v = normalize(v)
    if as_bell:
        return BellDiagonal(*(float(x) for x in v))
    return v


def from_initialization(eps_i: float, N: int = 1) -> BellDiagonal:
    """State of ``N`` freshly generated links after per-qubit initialization phase errors.

    Each of the ``2N`` qubits carries an independent phase error with
    probability ``eps_i``; an odd number of them turns Psi+ into Psi-.
    """
    if N < 1:
        raise ValueError(f"N must be >= 1, got {N!r}")
    r = (1.0 - 2.0 * eps_i) ** (2 * N)
    return BellDiagonal(0.0, (1.0 - r) / 2.0, (1.0 + r) / 2.0, 0.0)


def apply_depolarizing(state, eps_TQG: float, n_gates: int):
    """Two-qubit-gate errors: each gate moves the pair to each other Bell state w.p. eps/3."""
    if n_gates < 0:
        raise ValueError(f"n_gates must be >= 0, got {n_gates!r}")
    v, as_bell = _unwrap(state)
    shrink = (1.0 - 4.0 * eps_TQG / 3.0) ** n_gates
    return _wrap(0.25 + (v - 0.25) * shrink, as_bell)


def apply_swap_measurement_errors(state, eps_m: float, N: int):
    """Wrong Pauli-frame bits from the ``2(N-1)`` swap measurements.

    One swap measurement carries the bit-flip information and the other the
    phase-flip information, so each flips its frame bit independently.
    """
    if N < 1:
        raise ValueError(f"N must be >= 1, got {N!r}")
    v, as_bell = _unwrap(state)
    K = N - 1
    r = 1.0 - 2.0 * eps_m
    y = v[..., Y_PARTNER]
    out = v + (v + y - 0.5) / 2.0 * (r ** (2 * K) - 1.0) + (v - y) / 2.0 * (r**K - 1.0)
    return _wrap(out, as_bell)


def apply_dephasing(state, t_wait, T2: float):
    """Memory dephasing over a cumulative entangled-qubit time ``t_wait``.

    ``t_wait`` may be an array broadcasting against the batch shape.
    """
    t = np.asarray(t_wait, dtype=float)
    if np.any(t < 0.0):
        raise ValueError("t_wait must be non-negative")
    v, as_bell = _unwrap(state)
    decay = np.exp(-t / T2)
    if decay.ndim:
        decay = decay[..., None]
    z = v[..., Z_PARTNER]
    return _wrap((v + z) / 2.0 + (v - z) / 2.0 * decay, as_bell)


def entanglement_swap(left, right):
    """Combine the frames of two adjacent links by a deterministic swap."""
    l, lb = _unwrap(left)
    r, rb = _unwrap(right)
    return _wrap(swap_kernel(l, r), lb or rb)


def swap_kernel(l: np.ndarray, r: np.ndarray) -> np.ndarray:
    """Bilinear swap rule on raw arrays, without clamping or renormalization."""
    lA, lB, lC, lD = (l[..., i] for i in range(4))
    rA, rB, rC, rD = (r[..., i] for i in range(4))
    out = np.stack(
        [
            lA * rC + lC * rA + lB * rD + lD * rB,
            lA * rD + lD * rA + lB * rC + lC * rB,
            lA * rA + lB * rB + lC * rC + lD * rD,
            lA * rB + lB * rA + lC * rD + lD * rC,
        ],
        axis=-1,
    )
    return out


def swap_power(state, n: int):
    """Swap ``n`` independent copies of ``state`` together, via group characters."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n!r}")
    v, as_bell = _unwrap(state)
    spectrum = v @ _CHARACTERS.T
    return _wrap((spectrum**n) @ _CHARACTERS / 4.0, as_bell)


def purification_outcomes(pair1, pair2, eps_TQG: float = 0.0):
    """Unnormalized success and failure branches of one purification attempt.

    Returns ``(u_s, u_f)`` with ``u_s.sum(-1) = p_s`` and ``u_f.sum(-1) = p_f``.
    The gate-error terms shift weight between the A/D and B/C groups without
    changing the branch totals, and can go negative for near-pure inputs.
    """
    x, _ = _unwrap(pair1)
    y, _ = _unwrap(pair2)
    A1, B1, C1, D1 = (x[..., i] for i in range(4))
    A2, B2, C2, D2 = (y[..., i] for i in range(4))
    g = eps_TQG / 3.0

    ab_ab = (A1 + B1) * (A2 + B2)
    cd_cd = (C1 + D1) * (C2 + D2)
    ks = g * (cd_cd - ab_ab)
    u_s = np.stack(
        [
            A1 * A2 + B1 * B2 + ks,
            C1 * D2 + D1 * C2 - ks,
            C1 * C2 + D1 * D2 - ks,
            A1 * B2 + B1 * A2 + ks,
        ],
        axis=-1,
    )

    ab_cd = (A1 + B1) * (C2 + D2)
    cd_ab = (C1 + D1) * (A2 + B2)
    kf = g * (cd_ab - ab_cd)
    u_f = np.stack(
        [
            A1 * C2 + B1 * D2 + kf,
            D1 * A2 + C1 * B2 - kf,
            C1 * A2 + D1 * B2 - kf,
            A1 * D2 + B1 * C2 + kf,
        ],
        axis=-1,
    )
    return u_s, u_f


def heralded_branch(pair1, pair2, eps_TQG: float, eps_m: float):
    """Probability of a heralded success and the unnormalized heralded state.

    A true failure is heralded as success when exactly one of the two parity
    measurements is wrong.
    """
    u_s, u_f = purification_outcomes(pair1, pair2, eps_TQG)
    keep = (1.0 - eps_m) ** 2 + eps_m**2
    flip = 2.0 * (1.0 - eps_m) * eps_m
    u_m = keep * u_s + flip * u_f
    return u_m.sum(axis=-1), u_m


def purify(pair1, pair2, eps_TQG: float, eps_m: float):
    """Heralded purification of two pairs.

    Returns ``(p_m, state, p_s)``: the heralded-success probability, the
    post-selected state, and the true success probability.
    """
    as_bell = isinstance(pair1, BellDiagonal) or isinstance(pair2, BellDiagonal)
    u_s, _ = purification_outcomes(pair1, pair2, eps_TQG)
    p_m, u_m = heralded_branch(pair1, pair2, eps_TQG, eps_m)
    if np.any(p_m <= 0.0):
        raise ValueError("purification can never be heralded for these inputs")
    state = _wrap(u_m / np.asarray(p_m)[..., None], as_bell)
    p_s = u_s.sum(axis=-1)
    if as_bell:
        return float(p_m), state, float(p_s)
    return p_m, state, p_s


def quantum_bit_errors(state) -> tuple:
    """Bit errors in the two BB84 bases: e_X = B + D, e_Z = A + D."""
    v, as_bell = _unwrap(state)
    e_X = v[..., B] + v[..., D]
    e_Z = v[..., A] + v[..., D]
    if as_bell:
        return float(e_X), float(e_Z)
    return e_X, e_Z
