"""Scalar parameters and closed-form rate/timing formulas for the repeater chain.

Everything here is a pure function of its arguments. Units: km, s, Hz.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from typing import Sequence

import numpy as np
from scipy import stats

from .bell_algebra import BellDiagonal

INFINITE_T2 = math.inf


@dataclass(frozen=True)
class NetworkParams:
    """Physical and experimental scalars.

    Defaults are the realistic rare-earth-ion estimates (40 % fiber-independent
    efficiency, 1e-3 errors, 500 ms coherence, 25 kHz trial rate) for a
    1000 km network. ``T2 = math.inf`` switches decoherence off.
    """

    L_tot: float = 1000.0
    L_att: float = 22.0
    eta0: float = 0.4
    v: float = 2e5
    t_HEG: float = 40e-6
    t_swap: float = 210e-6
    t_pur: float = 220e-6
    T2: float = 0.5
    eps_i: float = 1e-3
    eps_TQG: float = 1e-3
    eps_m: float = 1e-3

    def __post_init__(self):
        for name in ("eta0", "eps_i", "eps_TQG", "eps_m"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {value!r}")
        for name in ("L_tot", "L_att", "v", "t_HEG", "T2"):
            value = getattr(self, name)
            if not value > 0.0:
                raise ValueError(f"{name} must be strictly positive, got {value!r}")
        for name in ("t_swap", "t_pur"):
            value = getattr(self, name)
            if not value >= 0.0:
                raise ValueError(f"{name} must be non-negative, got {value!r}")

    def with_eps(self, eps: float) -> "NetworkParams":
        """Copy with the three operational error rates tied to ``eps``."""
        return replace(self, eps_i=eps, eps_TQG=eps, eps_m=eps)

    @classmethod
    def field_names(cls) -> tuple[str, ...]:
        return tuple(f.name for f in fields(cls))


@dataclass(frozen=True)
class SessionPlan:
    """Protocol choice: ``N`` links, ``M`` trials per session, purification rounds."""

    N: int
    M: int
    P_E: int = 0
    P_L: int = 0

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 1:
            raise ValueError(f"N must be a positive integer, got {self.N!r}")
        if int(self.M) != self.M or self.M < 1:
            raise ValueError(f"M must be a positive integer, got {self.M!r}")
        if self.P_L not in (0, 1):
            raise ValueError(f"P_L must be 0 or 1, got {self.P_L!r}")
        if self.P_E not in (0, 1, 2):
            raise ValueError(f"P_E must be 0, 1 or 2, got {self.P_E!r}")
        if self.P_L == 1 and self.M < 3:
            raise ValueError("link purification needs M >= 3 trials per session")


@dataclass(frozen=True)
class RateReport:
    p_HEG: float
    p_session: float
    p_EPR: float
    t_session: float
    t_EPR: float
    R: float
    e_X: float
    e_Z: float
    r_inf: float
    R_SKR: float
    bell: BellDiagonal
    purification_success: tuple[float, ...] = field(default=())


def link_length(params: NetworkParams, plan: SessionPlan) -> float:
    return params.L_tot / plan.N


def round_trip_time(params: NetworkParams, L0: float) -> float:
    """Time for a photon to reach the mid-link station and the herald to return."""
    return L0 / params.v


def detection_efficiency(params: NetworkParams, L0: float) -> float:
    """Probability that an emitted photon is detected at the mid-link station."""
    if not L0 > 0.0:
        raise ValueError(f"link length must be positive, got {L0!r}")
    if not params.L_att > 0.0:
        raise ValueError("attenuation length must be positive")
    return params.eta0 * math.exp(-L0 / (2.0 * params.L_att))


def heg_success_probability(eta: float) -> float:
    """Success probability of one heralded-entanglement trial (one early, one late click)."""
    if not 0.0 <= eta <= 1.0:
        raise ValueError(f"eta must lie in [0, 1], got {eta!r}")
    return eta * eta / 2.0


def _check_k(M: int, k: int) -> None:
    if k < 0 or k > M:
        raise ValueError(f"success count k={k} outside [0, M={M}]")


def link_success_pmf(p_HEG: float, M: int, k: int) -> float:
    """Probability that one link succeeds exactly ``k`` times in ``M`` trials."""
    _check_k(M, k)
    if p_HEG <= 0.0 or p_HEG >= 1.0:
        return float(k == (M if p_HEG >= 1.0 else 0))
    log_c = math.lgamma(M + 1) - math.lgamma(k + 1) - math.lgamma(M - k + 1)
    return math.exp(log_c + k * math.log(p_HEG) + (M - k) * math.log1p(-p_HEG))


def link_success_at_least(p_HEG: float, M: int, k: int) -> float:
    """Probability that one link succeeds at least ``k`` times in ``M`` trials."""
    if k > M + 1 or k < 0:
        raise ValueError(f"k={k} outside [0, M+1]")
    if k == 0:
        return 1.0
    if k == M + 1:
        return 0.0
    if k == 1:
        # 1 - (1-p)^M without cancellation for tiny p
        if p_HEG >= 1.0:
            return 1.0
        return float(-math.expm1(M * math.log1p(-p_HEG)))
    return float(stats.binom.sf(k - 1, M, p_HEG))


def network_success_at_least(p_HEG: float, M: int, N: int, k: int = 1) -> float:
    """Probability that every one of ``N`` links succeeds at least ``k`` times."""
    return link_success_at_least(p_HEG, M, k) ** N


def network_success_level(p_HEG: float, M: int, N: int, k: int) -> float:
    """Probability that all links reach ``k`` successes but not all reach ``k + 1``."""
    _check_k(M, k)
    return network_success_at_least(p_HEG, M, N, k) - network_success_at_least(
        p_HEG, M, N, k + 1
    )


def session_probability(p_HEG: float, M: int, N: int) -> float:
    """Probability that a session yields at least one pair on all ``N`` links."""
    return network_success_at_least(p_HEG, M, N, 1)


def session_duration(params: NetworkParams, plan: SessionPlan, L0: float) -> float:
    t_rt = round_trip_time(params, L0)
    return (
        plan.M * params.t_HEG
        + t_rt
        + plan.P_L * (params.t_pur + t_rt)
        + params.t_swap
    )


def epr_attempt_stats(
    p_session: float,
    purification_success: Sequence[float],
    plan: SessionPlan,
    t_session: float,
    t_pur: float,
) -> tuple[float, float]:
    """Success fraction and duration of one attempt at a final end-to-end pair.

    An attempt consumes up to ``P_E + 1`` sequential sessions; round ``h`` of
    end-node purification succeeds with ``purification_success[h-1]``. The
    success fraction is the attempt success probability times the sessions a
    successful attempt uses, divided by the expected sessions per attempt.
    """
    P_E = plan.P_E
    q = [float(x) for x in purification_success]
    if len(q) != P_E:
        raise ValueError(f"expected {P_E} purification probabilities, got {len(q)}")
    t_EPR = t_session * (P_E + 1) + t_pur * P_E
    p = float(p_session)

    def prod(upto: int) -> float:
        # product of q_1..q_upto, empty product is 1
        return math.prod(q[:max(upto, 0)])

    success = (P_E + 1) * p ** (P_E + 1) * prod(P_E)
    p_sum = success
    for s in range(1, P_E + 2):
        p_sum += s * p ** (s - 1) * (1.0 - p) * prod(s - 2)
    for h in range(1, P_E + 1):
        p_sum += (h + 1) * p ** (h + 1) * (1.0 - q[h - 1]) * prod(h - 1)
    if P_E == 0:
        return p, t_EPR
    if p_sum == 0.0:
        return 0.0, t_EPR
    return success / p_sum, t_EPR


def binary_entropy(x: float) -> float:
    if x <= 0.0 or x >= 1.0:
        return 0.0
    return -x * math.log2(x) - (1.0 - x) * math.log2(1.0 - x)


def secret_fraction(e_X: float, e_Z: float) -> float:
    """Asymptotic BB84 secret fraction; negative when no key can be distilled."""
    for name, e in (("e_X", e_X), ("e_Z", e_Z)):
        if not -1e-12 <= e <= 1.0 + 1e-12:
            raise ValueError(f"{name} must lie in [0, 1], got {e!r}")
    return 1.0 - binary_entropy(e_Z) - binary_entropy(e_X)


def qubits_per_node(
    params: NetworkParams, plan: SessionPlan, L0: float
) -> tuple[int, int]:
    """Qubits needed in an inner node and in an end node.

    Inner nodes store ``1 + 2 P_L`` pairs per link plus whatever is in flight
    during one round trip, for both of their links. End nodes serve one link
    and keep ``P_E`` extra pairs from earlier sessions.
    """
    ratio = round_trip_time(params, L0) / params.t_HEG
    in_flight = math.ceil(round(ratio, 9))
    inner = 2 * (1 + 2 * plan.P_L + in_flight)
    return inner, inner // 2 + plan.P_E


def plob_bound(L_tot: float, L_att: float, repetition_rate: float) -> float:
    """Repeaterless secret-key capacity, -log2(1 - eta_ch), times the repetition rate."""
    if L_tot < 0.0:
        raise ValueError(f"L_tot must be non-negative, got {L_tot!r}")
    if L_tot == 0.0:
        return math.inf
    eta_ch = math.exp(-L_tot / L_att)
    return -math.log1p(-eta_ch) / math.log(2.0) * repetition_rate


def plob_curve(L_values: Sequence[float], L_att: float, repetition_rate: float) -> np.ndarray:
    return np.array([plob_bound(L, L_att, repetition_rate) for L in L_values])
