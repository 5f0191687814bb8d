"""One full protocol evaluation: waits, link ensembles, swap chain, end-node purification."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from . import bell_algebra as ba
from .bell_algebra import BellDiagonal
from .network_model import (
    NetworkParams,
    RateReport,
    SessionPlan,
    detection_efficiency,
    epr_attempt_stats,
    heg_success_probability,
    link_success_at_least,
    round_trip_time,
    secret_fraction,
    session_duration,
    session_probability,
)

DEFAULT_CAP = 100
KMEANS_ITERATIONS = 25


@dataclass(frozen=True)
class WaitDistribution:
    """Distribution of the number of trials ``m`` that elapse after the relevant success."""

    m: np.ndarray
    pmf: np.ndarray

    @property
    def mean(self) -> float:
        return float(np.dot(self.m, self.pmf))

    def probability(self, m: int) -> float:
        idx = np.searchsorted(self.m, m)
        if idx < len(self.m) and self.m[idx] == m:
            return float(self.pmf[idx])
        return 0.0


@dataclass
class WeightedEnsemble:
    """Probability-weighted mixture of Bell-diagonal states."""

    weights: np.ndarray
    states: np.ndarray
    cap: int = DEFAULT_CAP

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        self.states = np.atleast_2d(np.asarray(self.states, dtype=float))
        if self.weights.shape != (self.states.shape[0],):
            raise ValueError("one weight per state required")

    @classmethod
    def single(cls, state, cap: int = DEFAULT_CAP) -> "WeightedEnsemble":
        return cls(np.ones(1), np.asarray(state, dtype=float)[None, :], cap)

    def __len__(self) -> int:
        return len(self.weights)

    @property
    def total_weight(self) -> float:
        return float(self.weights.sum())

    def mean(self) -> BellDiagonal:
        return BellDiagonal.from_vec(self.weights @ self.states / self.weights.sum())

    def map(self, fn) -> "WeightedEnsemble":
        return WeightedEnsemble(self.weights.copy(), fn(self.states), self.cap)


@dataclass(frozen=True)
class LinkTiming:
    """Expected storage durations, in seconds, for the three link branches."""

    no_pur: WaitDistribution
    reserve: WaitDistribution | None
    mean_m_latest: float
    mean_m_second: float
    t_no_pur: float
    t_res: float
    t_pur_latest: float
    t_pur_second: float


@dataclass(frozen=True)
class LinkOutcome:
    p_no_pur: float
    p_pur_fail: float
    p_pur_success: float
    states: dict = field(default_factory=dict)


def _k_log1m(k, p: float):
    """k * log(1 - p), with 0 * log(0) = 0."""
    k = np.asarray(k, dtype=float)
    if p >= 1.0:
        return np.where(k == 0, 0.0, -np.inf)
    return k * math.log1p(-p)


def _normalized(log_w: np.ndarray) -> np.ndarray:
    top = np.max(log_w)
    if not np.isfinite(top):
        # every outcome impossible: conditioning event has probability zero
        out = np.zeros_like(log_w)
        out[0] = 1.0
        return out
    return np.exp(log_w - logsumexp(log_w))


def multiplicity_counts(N: int, M: int, m_max: int | None = None) -> list[int]:
    """Number of ways ``N`` links can leave ``m`` trailing failed trials in total.

    Each link contributes between 0 and ``M - 1`` trailing failures. Exact
    integers, intended for small ``N`` and ``M``.
    """
    if N < 1 or M < 1:
        raise ValueError("N and M must be positive")
    top = N * (M - 1)
    if m_max is None:
        m_max = top
    if m_max > top:
        raise ValueError(f"m={m_max} exceeds N(M-1)={top}")
    counts = [1] * M
    for n in range(2, N + 1):
        size = n * (M - 1) + 1
        prev = counts
        counts = []
        for m in range(size):
            lo = max(m - (n - 1) * (M - 1), 0)
            hi = min(M - 1, m)
            counts.append(sum(prev[m - k] for k in range(lo, hi + 1)))
    return counts[: m_max + 1]


def single_link_wait_pmf(M: int, p_HEG: float) -> WaitDistribution:
    """Trailing failures after the last success, given at least one success in ``M`` trials."""
    if not p_HEG > 0.0:
        raise ValueError("p_HEG must be positive")
    m = np.arange(M)
    return WaitDistribution(m, _normalized(_k_log1m(m, p_HEG)))


def network_wait_pmf(N: int, M: int, p_HEG: float) -> WaitDistribution:
    """Total trailing failures summed over ``N`` links, given every link succeeded.

    This is the multiplicity-weighted geometric law normalized by the session
    success probability, built by convolving the per-link laws so that the
    counts never overflow.
    """
    link = single_link_wait_pmf(M, p_HEG)
    pmf = link.pmf
    for _ in range(N - 1):
        pmf = np.convolve(pmf, link.pmf)
    pmf = np.clip(pmf, 0.0, None)
    return WaitDistribution(np.arange(N * (M - 1) + 1), pmf / pmf.sum())


def no_purification_wait_pmf(M: int, p_HEG: float) -> WaitDistribution:
    """Trailing failures after the latest pair, given one or two successes only."""
    if M < 1:
        raise ValueError("M must be positive")
    p = p_HEG
    m = np.arange(M)
    log_one = math.log(p) + _k_log1m(M - 1, p) + np.zeros(M)
    with np.errstate(divide="ignore"):
        log_two = 2 * math.log(p) + _k_log1m(M - 2, p) + np.log(np.maximum(M - m - 1, 0))
    return WaitDistribution(m, _normalized(np.logaddexp(log_one, log_two)))


def reserve_wait_pmf(M: int, p_HEG: float) -> WaitDistribution:
    """Trailing trials after the third-last success, given at least three successes."""
    if M < 3:
        raise ValueError("the reserve pair needs M >= 3")
    p = p_HEG
    m = np.arange(2, M)
    log_w = 3 * math.log(p) + _k_log1m(m - 2, p) + np.log(m * (m - 1) / 2.0)
    return WaitDistribution(m, _normalized(log_w))


def pair_joint_pmf(M: int, p_HEG: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Joint law of trailing trials after the latest (m1) and second-latest (m2) pairs.

    Conditioned on at least three successes. Returns ``(m1, m2, pmf)`` as
    flat arrays over the support ``0 <= m1 < m2 <= M - 2``. O(M^2) memory;
    use :func:`pair_wait_means` for large ``M``.
    """
    if M < 3:
        raise ValueError("purification needs M >= 3")
    p = p_HEG
    m1, m2 = np.triu_indices(M - 1, k=1)
    log_w = 2 * math.log(p) + _k_log1m(m2 - 1, p) + np.log(-np.expm1(_k_log1m(M - m2 - 1, p)))
    return m1, m2, _normalized(log_w)


def pair_wait_means(M: int, p_HEG: float) -> tuple[float, float]:
    """Expected trailing trials after the latest and second-latest pairs (>= 3 successes)."""
    if M < 3:
        raise ValueError("purification needs M >= 3")
    p = p_HEG
    m2 = np.arange(1, M - 1)
    # m1 is uniform on 0..m2-1 for fixed m2
    log_w = (
        2 * math.log(p)
        + _k_log1m(m2 - 1, p)
        + np.log(-np.expm1(_k_log1m(M - m2 - 1, p)))
        + np.log(m2)
    )
    w = _normalized(log_w)
    return float(np.dot(w, (m2 - 1) / 2.0)), float(np.dot(w, m2))


def link_timing_models(M: int, p_HEG: float, params: NetworkParams, L0: float) -> LinkTiming:
    if M < 3:
        raise ValueError("link purification timing needs M >= 3")
    t_rt = round_trip_time(params, L0)
    no_pur = no_purification_wait_pmf(M, p_HEG)
    reserve = reserve_wait_pmf(M, p_HEG)
    m_latest, m_second = pair_wait_means(M, p_HEG)
    stored = 2 * t_rt + params.t_pur + params.t_swap
    return LinkTiming(
        no_pur=no_pur,
        reserve=reserve,
        mean_m_latest=m_latest,
        mean_m_second=m_second,
        t_no_pur=2 * (no_pur.mean * params.t_HEG + stored),
        t_res=2 * (reserve.mean * params.t_HEG + stored),
        t_pur_latest=2 * (m_latest * params.t_HEG + t_rt),
        t_pur_second=2 * (m_second * params.t_HEG + t_rt),
    )


def purification_probability(M: int, p_HEG: float) -> float:
    """Probability that a successful link holds at least three pairs."""
    at_least_one = link_success_at_least(p_HEG, M, 1)
    if M < 3 or at_least_one == 0.0:
        return 0.0
    return link_success_at_least(p_HEG, M, 3) / at_least_one


def link_outcome(params: NetworkParams, plan: SessionPlan, L0: float, p_HEG: float) -> LinkOutcome:
    """Branch probabilities and Bell states of a single link after its session."""
    fresh = ba.from_initialization(params.eps_i, 1)
    t_rt = round_trip_time(params, L0)
    if plan.P_L == 0:
        mean_m = single_link_wait_pmf(plan.M, p_HEG).mean
        t_wait = 2 * (mean_m * params.t_HEG + t_rt + params.t_swap)
        state = ba.apply_dephasing(fresh, t_wait, params.T2)
        return LinkOutcome(1.0, 0.0, 0.0, {"no_pur": state})

    timing = link_timing_models(plan.M, p_HEG, params, L0)
    p_pur = purification_probability(plan.M, p_HEG)
    no_pur = ba.apply_dephasing(fresh, timing.t_no_pur, params.T2)
    reserve = ba.apply_dephasing(fresh, timing.t_res, params.T2)
    latest = ba.apply_depolarizing(
        ba.apply_dephasing(fresh, timing.t_pur_latest, params.T2), params.eps_TQG, 1
    )
    second = ba.apply_depolarizing(
        ba.apply_dephasing(fresh, timing.t_pur_second, params.T2), params.eps_TQG, 1
    )
    p_m, purified, _ = ba.purify(latest, second, params.eps_TQG, params.eps_m)
    purified = ba.apply_dephasing(
        purified, 2 * (params.t_pur + t_rt + params.t_swap), params.T2
    )
    return LinkOutcome(
        p_no_pur=1.0 - p_pur,
        p_pur_fail=p_pur * (1.0 - p_m),
        p_pur_success=p_pur * p_m,
        states={"no_pur": no_pur, "reserve": reserve, "purified": purified},
    )


def link_ensemble(
    params: NetworkParams, plan: SessionPlan, L0: float | None = None, cap: int = DEFAULT_CAP
) -> tuple[WeightedEnsemble, float]:
    """Per-link branch mixture and the probability that link purification is attempted."""
    if L0 is None:
        L0 = params.L_tot / plan.N
    p_HEG = heg_success_probability(detection_efficiency(params, L0))
    outcome = link_outcome(params, plan, L0, p_HEG)
    if plan.P_L == 0:
        return WeightedEnsemble.single(outcome.states["no_pur"].vec, cap), 0.0
    weights = np.array([outcome.p_no_pur, outcome.p_pur_fail, outcome.p_pur_success])
    states = np.array(
        [outcome.states[k].vec for k in ("no_pur", "reserve", "purified")]
    )
    return WeightedEnsemble(weights, states, cap), outcome.p_pur_fail + outcome.p_pur_success


def weighted_kmeans(
    points: np.ndarray, weights: np.ndarray, k: int, iterations: int = KMEANS_ITERATIONS
) -> tuple[np.ndarray, np.ndarray]:
    """Compress a weighted point cloud to at most ``k`` weighted centroids.

    Deterministic: farthest-point seeding from the heaviest point, then Lloyd
    iterations. Cluster weights sum to the input weight and the weighted mean
    is preserved exactly.
    """
    n = len(points)
    if n <= k:
        return points.copy(), weights.copy()
    centers = [int(np.argmax(weights))]
    d2 = ((points - points[centers[0]]) ** 2).sum(axis=1)
    for _ in range(1, k):
        nxt = int(np.argmax(d2))
        if d2[nxt] == 0.0:
            break
        centers.append(nxt)
        d2 = np.minimum(d2, ((points - points[nxt]) ** 2).sum(axis=1))
    c = points[centers].copy()
    labels = None
    for _ in range(iterations):
        dist = ((points[:, None, :] - c[None, :, :]) ** 2).sum(axis=2)
        new_labels = np.argmin(dist, axis=1)
        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels
        mass = np.bincount(labels, weights=weights, minlength=len(c))
        sums = np.zeros_like(c)
        np.add.at(sums, labels, weights[:, None] * points)
        live = mass > 0
        c = sums[live] / mass[live, None]
    dist = ((points[:, None, :] - c[None, :, :]) ** 2).sum(axis=2)
    labels = np.argmin(dist, axis=1)
    mass = np.bincount(labels, weights=weights, minlength=len(c))
    sums = np.zeros_like(c)
    np.add.at(sums, labels, weights[:, None] * points)
    live = mass > 0
    return sums[live] / mass[live, None], mass[live]


def _swap_ensembles(left: WeightedEnsemble, right: WeightedEnsemble) -> WeightedEnsemble:
    states = ba.entanglement_swap(left.states[:, None, :], right.states[None, :, :])
    weights = np.outer(left.weights, right.weights)
    return WeightedEnsemble(weights.ravel(), states.reshape(-1, 4), left.cap)


def chain_links(
    links: list[WeightedEnsemble], params: NetworkParams, plan: SessionPlan
) -> WeightedEnsemble:
    """Swap all links together, capping the branch count, then add swap gate/readout errors."""
    acc = links[0]
    for link in links[1:]:
        acc = _swap_ensembles(acc, link)
        if len(acc) > acc.cap:
            states, weights = weighted_kmeans(acc.states, acc.weights, acc.cap)
            acc = WeightedEnsemble(weights, ba.normalize(states), acc.cap)
    N = len(links)
    return acc.map(
        lambda s: ba.apply_swap_measurement_errors(
            ba.apply_depolarizing(s, params.eps_TQG, N - 1), params.eps_m, N
        )
    )


def chain_link_means(link: BellDiagonal, params: NetworkParams, N: int) -> BellDiagonal:
    """Mean end-to-end state of ``N`` identical independent links.

    Swapping is bilinear and the gate and readout channels are linear, so the
    mean of the branch product equals the chain of the branch means.
    """
    state = ba.swap_power(link, N)
    state = ba.apply_depolarizing(state, params.eps_TQG, N - 1)
    return ba.apply_swap_measurement_errors(state, params.eps_m, N)


def end_node_chain(
    session_ensemble: WeightedEnsemble,
    params: NetworkParams,
    plan: SessionPlan,
    t_session: float,
) -> tuple[BellDiagonal, list[float]]:
    """Purify ``P_E`` times against fresh session pairs at the end nodes.

    Returns the final state and the heralded success probability of each round.
    """
    session = session_ensemble.mean()
    if plan.P_E == 0:
        return session, []
    t_frame = params.L_tot / (2 * params.v)
    current = session
    wait_current = t_session + t_frame
    probs = []
    for _ in range(plan.P_E):
        older = ba.apply_depolarizing(
            ba.apply_dephasing(current, wait_current, params.T2), params.eps_TQG, 1
        )
        newer = ba.apply_depolarizing(
            ba.apply_dephasing(session, t_frame, params.T2), params.eps_TQG, 1
        )
        p_m, out, _ = ba.purify(older, newer, params.eps_TQG, params.eps_m)
        probs.append(p_m)
        current = ba.apply_dephasing(out, params.t_pur, params.T2)
        wait_current = t_session
    return current, probs


def _failed_report(p_HEG: float, p_session: float, t_session: float, plan: SessionPlan, params) -> RateReport:
    t_EPR = t_session * (plan.P_E + 1) + params.t_pur * plan.P_E
    return RateReport(
        p_HEG=p_HEG, p_session=p_session, p_EPR=0.0, t_session=t_session, t_EPR=t_EPR,
        R=0.0, e_X=0.5, e_Z=0.5, r_inf=-1.0, R_SKR=0.0, bell=BellDiagonal.fully_mixed(),
    )


def evaluate_protocol(
    params: NetworkParams,
    plan: SessionPlan,
    method: str = "mean",
    cap: int = DEFAULT_CAP,
) -> RateReport:
    """Raw rate, bit errors and secret key rate for one protocol choice.

    ``method="ensemble"`` carries the full per-branch mixture through the swap
    chain with k-means capping; ``method="mean"`` propagates only the branch
    mean, which gives the same final state because every step before the
    end-node purification is linear in each link.
    """
    if method not in ("mean", "ensemble"):
        raise ValueError(f"unknown method {method!r}")
    L0 = params.L_tot / plan.N
    p_HEG = heg_success_probability(detection_efficiency(params, L0))
    t_session = session_duration(params, plan, L0)
    p_session = session_probability(p_HEG, plan.M, plan.N) if p_HEG > 0 else 0.0
    if p_session <= 0.0:
        return _failed_report(p_HEG, p_session, t_session, plan, params)

    link, _ = link_ensemble(params, plan, L0, cap)
    if method == "ensemble":
        session = chain_links([link] * plan.N, params, plan)
    else:
        session = WeightedEnsemble.single(chain_link_means(link.mean(), params, plan.N).vec, cap)

    final, probs = end_node_chain(session, params, plan, t_session)
    e_X, e_Z = ba.quantum_bit_errors(final)
    r_inf = secret_fraction(e_X, e_Z)
    p_EPR, t_EPR = epr_attempt_stats(p_session, probs, plan, t_session, params.t_pur)
    R = p_EPR / t_EPR
    return RateReport(
        p_HEG=p_HEG,
        p_session=p_session,
        p_EPR=p_EPR,
        t_session=t_session,
        t_EPR=t_EPR,
        R=R,
        e_X=e_X,
        e_Z=e_Z,
        r_inf=r_inf,
        R_SKR=R * max(r_inf, 0.0),
        bell=final,
        purification_success=tuple(probs),
    )
