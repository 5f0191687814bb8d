"""Trial-by-trial Monte Carlo of repeater sessions, used to check the analytic pipeline.

Sessions are simulated in fixed-size blocks; block ``b`` draws from its own
Philox stream keyed by ``(seed, b)``, so results do not depend on how many
threads process the blocks. Each session samples its HEG outcomes, applies
the link purification and swap rules with the exact sampled storage times,
and the end-node purification chain then runs as a renewal process over the
ordered session stream.

Two tracking modes share that skeleton. ``probabilities`` propagates Bell
coefficients through the analytic channels. ``trajectories`` samples discrete
Pauli-frame errors instead; after a purification the pair may carry a
quasi-probability vector, since the gate-error correction terms of the
purification rule are not a positive map on pure frames.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import bell_algebra as ba
from .circuits import circuit_oracle_purify, circuit_oracle_swap  # noqa: F401  re-exported
from .network_model import (
    NetworkParams,
    RateReport,
    SessionPlan,
    detection_efficiency,
    heg_success_probability,
    round_trip_time,
    session_duration,
)

TRACK_MODES = ("probabilities", "trajectories")
_PAULI_PERMS = (ba.X_PARTNER, ba.Y_PARTNER, ba.Z_PARTNER)


@dataclass(frozen=True)
class SimConfig:
    params: NetworkParams
    plan: SessionPlan
    seed: int = 0
    n_sessions: int = 100_000
    track_mode: str = "probabilities"
    block_size: int = 8192
    threads: int = 1

    def __post_init__(self):
        if self.n_sessions < 1:
            raise ValueError("n_sessions must be >= 1")
        if self.track_mode not in TRACK_MODES:
            raise ValueError(f"track_mode must be one of {TRACK_MODES}")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")


@dataclass(frozen=True)
class Estimate:
    value: float
    se: float

    def z(self, reference: float) -> float:
        if self.se == 0.0:
            if abs(self.value - reference) <= 1e-12:
                return 0.0
            return math.copysign(math.inf, self.value - reference)
        return (self.value - reference) / self.se


@dataclass
class SimReport:
    n_sessions: int
    p_session: Estimate
    p_EPR: Estimate
    e_X: Estimate
    e_Z: Estimate
    n_final: int
    mean_link_wait: float
    wait_counts: np.ndarray = field(repr=False)
    pairs_per_attempt: int = 1

    def wait_pmf(self) -> tuple[np.ndarray, np.ndarray]:
        """Empirical pmf and per-bin standard errors of the total trailing-trial count."""
        n = self.wait_counts.sum()
        pmf = self.wait_counts / n
        return pmf, np.sqrt(pmf * (1 - pmf) / n)

    def divergence(self, report: RateReport, systematic: float = 0.02) -> dict[str, dict[str, float]]:
        """Per-quantity comparison with an analytic report.

        ``excess`` is the absolute deviation minus the relative ``systematic``
        allowance, in units of the MC standard error (<= 3 is agreement).
        For the two success probabilities the error is floored at its value
        under the analytic hypothesis, so that rare events with zero observed
        counts are not judged against a zero plug-in error.
        """
        out = {}
        for name in ("p_session", "p_EPR", "e_X", "e_Z"):
            est: Estimate = getattr(self, name)
            ref = float(getattr(report, name))
            if name in ("e_X", "e_Z") and self.n_final == 0:
                # no delivered pair to measure, nothing to compare
                out[name] = {"analytic": ref, "mc": math.nan, "se": math.nan, "z": math.nan, "excess_sigma": 0.0}
                continue
            if name in ("p_session", "p_EPR"):
                k = 1 if name == "p_session" else self.pairs_per_attempt
                q = min(max(ref / k, 0.0), 1.0)
                est = Estimate(est.value, max(est.se, math.sqrt(k * ref * (1 - q) / self.n_sessions)))
            dev = abs(est.value - ref)
            allowance = systematic * abs(ref)
            if est.se > 0:
                excess = max(dev - allowance, 0.0) / est.se
            else:
                excess = 0.0 if dev <= allowance + 1e-12 else math.inf
            out[name] = {
                "analytic": ref,
                "mc": est.value,
                "se": est.se,
                "z": est.z(ref),
                "excess_sigma": excess,
            }
        return out

    def agrees(self, report: RateReport, n_sigma: float = 3.0, systematic: float = 0.02) -> bool:
        return all(d["excess_sigma"] <= n_sigma for d in self.divergence(report, systematic).values())


def _flip(v: np.ndarray, mask: np.ndarray, perm: np.ndarray) -> np.ndarray:
    return np.where(mask[..., None], v[..., perm], v)


class _ProbabilityChannels:
    """Exact coefficient propagation of every noisy step."""

    def __init__(self, params: NetworkParams, rng: np.random.Generator):
        self.p = params
        self.rng = rng

    def fresh(self, shape) -> np.ndarray:
        return np.broadcast_to(ba.from_initialization(self.p.eps_i, 1).vec, (*shape, 4)).copy()

    def dephase(self, v, t):
        return ba.apply_dephasing(v, t, self.p.T2)

    def gate(self, v, n=1):
        return ba.apply_depolarizing(v, self.p.eps_TQG, n)

    def swap_readout(self, v, N):
        return ba.apply_swap_measurement_errors(v, self.p.eps_m, N)

    def normalize(self, v):
        return ba.normalize(v)


class _TrajectoryChannels:
    """Sampled Pauli-frame errors on otherwise exact pair vectors."""

    def __init__(self, params: NetworkParams, rng: np.random.Generator):
        self.p = params
        self.rng = rng

    def fresh(self, shape) -> np.ndarray:
        v = np.zeros((*shape, 4))
        v[..., ba.C] = 1.0
        flips = (self.rng.random((*shape, 2)) < self.p.eps_i).sum(axis=-1) % 2 == 1
        return _flip(v, flips, ba.Z_PARTNER)

    def dephase(self, v, t):
        t = np.broadcast_to(np.asarray(t, dtype=float), v.shape[:-1])
        p_flip = -np.expm1(-t / self.p.T2) / 2.0
        return _flip(v, self.rng.random(v.shape[:-1]) < p_flip, ba.Z_PARTNER)

    def _pauli_errors(self, v, rate, n):
        for _ in range(n):
            hit = self.rng.random(v.shape[:-1]) < rate
            kind = self.rng.integers(0, 3, size=v.shape[:-1])
            for k, perm in enumerate(_PAULI_PERMS):
                v = _flip(v, hit & (kind == k), perm)
        return v

    def gate(self, v, n=1):
        return self._pauli_errors(v, self.p.eps_TQG, n)

    def swap_readout(self, v, N):
        K = N - 1
        shape = v.shape[:-1]
        bit = self.rng.binomial(K, self.p.eps_m, size=shape) % 2 == 1
        phase = self.rng.binomial(K, self.p.eps_m, size=shape) % 2 == 1
        return _flip(_flip(v, bit, ba.X_PARTNER), phase, ba.Z_PARTNER)

    def normalize(self, v):
        # quasi-probabilities must survive unclamped for unbiased averages
        return v / v.sum(axis=-1, keepdims=True)


def _kth_last(succ: np.ndarray, counts: np.ndarray, k: int) -> np.ndarray:
    """Trailing trials after the k-th last success (0 where fewer than k successes)."""
    rc = np.cumsum(succ[..., ::-1], axis=-1)
    idx = np.argmax(rc >= k, axis=-1)
    return np.where(counts >= k, idx, 0)


@dataclass
class _Block:
    ok: np.ndarray  # (S,) session success
    states: np.ndarray  # (S, 4) session pair after swap errors
    newer: np.ndarray | None  # (S, 4) session pair prepared as the newer purification input
    herald_u: np.ndarray  # (S,) uniforms for end-node heralds
    older_u: np.ndarray  # (S, k) uniforms for the older-pair sampled errors (trajectories)
    wait_m: np.ndarray  # (S,) total trailing trials of the latest pairs
    link_wait: np.ndarray  # (S, N) storage time of the pair each link hands to the swap


def _simulate_block(cfg: SimConfig, block: int, size: int) -> _Block:
    params, plan = cfg.params, cfg.plan
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(cfg.seed, spawn_key=(block,))))
    channels = (_ProbabilityChannels if cfg.track_mode == "probabilities" else _TrajectoryChannels)(
        params, rng
    )
    N, M = plan.N, plan.M
    L0 = params.L_tot / N
    t_rt = round_trip_time(params, L0)
    p_HEG = heg_success_probability(detection_efficiency(params, L0))

    succ = rng.random((size, N, M)) < p_HEG
    counts = succ.sum(axis=-1)
    ok = (counts >= 1).all(axis=1)
    m1 = _kth_last(succ, counts, 1)
    wait_m = m1.sum(axis=1)

    fresh_latest = channels.fresh((size, N))
    if plan.P_L == 0:
        t_link = 2 * (m1 * params.t_HEG + t_rt + params.t_swap)
        links = channels.dephase(fresh_latest, t_link)
    else:
        m2 = _kth_last(succ, counts, 2)
        m3 = _kth_last(succ, counts, 3)
        stored = 2 * t_rt + params.t_pur + params.t_swap
        can_purify = counts >= 3
        t_latest_only = 2 * (m1 * params.t_HEG + stored)
        latest_only = channels.dephase(fresh_latest, t_latest_only)

        first = channels.gate(channels.dephase(fresh_latest, 2 * (m1 * params.t_HEG + t_rt)))
        second_fresh = channels.fresh((size, N))
        second = channels.gate(channels.dephase(second_fresh, 2 * (m2 * params.t_HEG + t_rt)))
        p_m, u_m = ba.heralded_branch(first, second, params.eps_TQG, params.eps_m)
        p_m = np.clip(p_m, 0.0, 1.0)
        herald = rng.random((size, N)) < p_m
        safe = np.where(p_m > 0, p_m, 1.0)
        purified = channels.normalize(u_m / safe[..., None]) if cfg.track_mode == "trajectories" else u_m / safe[..., None]
        t_after = 2 * (params.t_pur + t_rt + params.t_swap)
        purified = channels.dephase(purified, np.full((size, N), t_after))

        reserve_fresh = channels.fresh((size, N))
        t_res = 2 * (m3 * params.t_HEG + stored)
        reserve = channels.dephase(reserve_fresh, t_res)

        use_pur = can_purify & herald
        use_res = can_purify & ~herald
        links = np.where(use_pur[..., None], purified, np.where(use_res[..., None], reserve, latest_only))
        t_link = np.where(use_pur, t_after, np.where(use_res, t_res, t_latest_only))

    state = links[:, 0]
    for i in range(1, N):
        state = ba.swap_kernel(state, links[:, i])
    state = channels.swap_readout(channels.gate(state, N - 1), N)
    state = channels.normalize(state)

    herald_u = rng.random(size)
    newer = None
    older_u = np.zeros((size, 0))
    if plan.P_E > 0:
        t_frame = params.L_tot / (2 * params.v)
        newer = channels.gate(channels.dephase(state, np.full(size, t_frame)))
        newer = channels.normalize(newer)
        # pre-drawn per-session uniforms for the older pair's two noisy steps
        # and the post-purification dephasing, consumed only in trajectory mode
        older_u = rng.random((size, 4))
    return _Block(ok, state, newer, herald_u, older_u, wait_m, t_link)


def _older_trajectory(v, wait, params, u):
    p_flip = -math.expm1(-wait / params.T2) / 2.0
    if u[0] < p_flip:
        v = v[ba.Z_PARTNER]
    if u[1] < params.eps_TQG:
        v = v[_PAULI_PERMS[min(int(u[2] * 3), 2)]]
    return v


def _end_node_chain(cfg: SimConfig, blocks: list[_Block]):
    """Renewal scan: each attempt needs P_E + 1 good sessions and P_E heralded purifications."""
    params, plan = cfg.params, cfg.plan
    ok = np.concatenate([b.ok for b in blocks])
    states = np.concatenate([b.states for b in blocks])
    if plan.P_E == 0:
        attempts_x = ok.astype(float)
        attempts_y = np.ones(len(ok))
        return attempts_x, attempts_y, states[ok]

    newer = np.concatenate([b.newer for b in blocks])
    herald_u = np.concatenate([b.herald_u for b in blocks])
    older_u = np.concatenate([b.older_u for b in blocks])
    L0 = params.L_tot / plan.N
    t_session = session_duration(params, plan, L0)
    t_frame = params.L_tot / (2 * params.v)
    traj = cfg.track_mode == "trajectories"

    xs, ys, finals = [], [], []
    used = 0
    current = None
    wait = 0.0
    rounds = 0
    for s in range(len(ok)):
        used += 1
        if not ok[s]:
            xs.append(0.0)
            ys.append(used)
            used, rounds = 0, 0
            continue
        if rounds == 0:
            current = states[s]
            wait = t_session + t_frame
            rounds = 1
            continue
        if traj:
            older = _older_trajectory(current, wait, params, older_u[s])
        else:
            older = ba.apply_depolarizing(ba.apply_dephasing(current, wait, params.T2), params.eps_TQG, 1)
        p_m, u_m = ba.heralded_branch(older, newer[s], params.eps_TQG, params.eps_m)
        p_m = min(max(float(p_m), 0.0), 1.0)
        if herald_u[s] >= p_m:
            xs.append(0.0)
            ys.append(used)
            used, rounds = 0, 0
            continue
        out = u_m / p_m
        if traj:
            if older_u[s][3] < -math.expm1(-params.t_pur / params.T2) / 2.0:
                out = out[ba.Z_PARTNER]
        else:
            out = ba.apply_dephasing(out, params.t_pur, params.T2)
        current = out
        wait = t_session
        rounds += 1
        if rounds == plan.P_E + 1:
            xs.append(1.0)
            ys.append(used)
            finals.append(current)
            used, rounds = 0, 0
    # an attempt still open at the end of the stream is dropped
    return np.array(xs), np.array(ys, dtype=float), np.array(finals).reshape(-1, 4)


def _ratio_estimate(x: np.ndarray, y: np.ndarray, scale: float) -> Estimate:
    n = len(x)
    if n == 0 or y.sum() == 0:
        return Estimate(0.0, 0.0)
    r = x.sum() / y.sum()
    if n < 2:
        return Estimate(scale * r, 0.0)
    resid = x - r * y
    se = math.sqrt(resid.var(ddof=1) / n) / y.mean()
    return Estimate(scale * r, scale * se)


def _mean_estimate(v: np.ndarray) -> Estimate:
    if len(v) == 0:
        return Estimate(0.0, 0.0)
    se = float(v.std(ddof=1) / math.sqrt(len(v))) if len(v) > 1 else 0.0
    # trajectory quasi-probabilities can push a small-sample mean just outside [0, 1]
    return Estimate(min(max(float(v.mean()), 0.0), 1.0), se)


def simulate_sessions(cfg: SimConfig) -> SimReport:
    """Estimate session/EPR success probabilities and final bit errors by sampling."""
    n_blocks = math.ceil(cfg.n_sessions / cfg.block_size)
    sizes = [min(cfg.block_size, cfg.n_sessions - b * cfg.block_size) for b in range(n_blocks)]
    if cfg.threads > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            blocks = list(pool.map(lambda b: _simulate_block(cfg, b, sizes[b]), range(n_blocks)))
    else:
        blocks = [_simulate_block(cfg, b, sizes[b]) for b in range(n_blocks)]

    ok = np.concatenate([b.ok for b in blocks])
    p_hat = ok.mean()
    p_session = Estimate(float(p_hat), float(math.sqrt(p_hat * (1 - p_hat) / len(ok))))

    x, y, finals = _end_node_chain(cfg, blocks)
    p_EPR = _ratio_estimate(x, y, cfg.plan.P_E + 1)
    e_X, e_Z = ba.quantum_bit_errors(finals) if len(finals) else (np.zeros(0), np.zeros(0))

    wait_m = np.concatenate([b.wait_m for b in blocks])[ok]
    link_wait = np.concatenate([b.link_wait for b in blocks])[ok]
    top = cfg.plan.N * (cfg.plan.M - 1)
    return SimReport(
        n_sessions=cfg.n_sessions,
        p_session=p_session,
        p_EPR=p_EPR,
        e_X=_mean_estimate(np.asarray(e_X)),
        e_Z=_mean_estimate(np.asarray(e_Z)),
        n_final=len(finals),
        mean_link_wait=float(link_wait.mean()) if link_wait.size else 0.0,
        wait_counts=np.bincount(wait_m, minlength=top + 1),
        pairs_per_attempt=cfg.plan.P_E + 1,
    )


def params_for_p_heg(params: NetworkParams, N: int, p_HEG: float) -> NetworkParams:
    """Copy of ``params`` with ``eta0`` chosen so that each link has success probability ``p_HEG``."""
    from dataclasses import replace

    L0 = params.L_tot / N
    eta = math.sqrt(2.0 * p_HEG)
    eta0 = eta * math.exp(L0 / (2.0 * params.L_att))
    if eta0 > 1.0:
        raise ValueError(f"p_HEG={p_HEG} unreachable at L0={L0} km (needs eta0={eta0:.3f})")
    return replace(params, eta0=eta0)
