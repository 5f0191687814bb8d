import math
import pickle
from dataclasses import replace

import numpy as np
import pytest

from qrepeater.monte_carlo import (
    Estimate,
    SimConfig,
    SimReport,
    circuit_oracle_purify,
    circuit_oracle_swap,
    params_for_p_heg,
    simulate_sessions,
)
from qrepeater.network_model import NetworkParams, SessionPlan
from qrepeater.session_pipeline import evaluate_protocol

STRESS = NetworkParams(eps_i=0.01, eps_TQG=0.01, eps_m=0.01, T2=0.2)


def _params(N, p, base=STRESS):
    return params_for_p_heg(replace(base, L_tot=10.0 * N), N, p)


def test_config_validation():
    plan = SessionPlan(N=2, M=10)
    with pytest.raises(ValueError):
        SimConfig(NetworkParams(), plan, n_sessions=0)
    with pytest.raises(ValueError):
        SimConfig(NetworkParams(), plan, track_mode="photons")


def test_p_heg_helper():
    from qrepeater.network_model import detection_efficiency, heg_success_probability

    p = _params(4, 0.3)
    assert heg_success_probability(detection_efficiency(p, 10.0)) == pytest.approx(0.3, rel=1e-12)
    with pytest.raises(ValueError):
        params_for_p_heg(NetworkParams(L_tot=1000), 1, 0.3)


def test_error_free_sessions():
    ideal = NetworkParams(eps_i=0.0, eps_TQG=0.0, eps_m=0.0, T2=math.inf)
    plan = SessionPlan(N=2, M=10)
    rep = simulate_sessions(SimConfig(_params(2, 0.3, ideal), plan, seed=11, n_sessions=100_000))
    assert rep.e_X.value == 0.0 and rep.e_Z.value == 0.0
    expected = (1 - 0.7**10) ** 2
    assert expected == pytest.approx(0.944303, abs=1e-6)
    assert abs(rep.p_session.value - expected) < 3 * rep.p_session.se


def test_wait_pmf_single_link():
    plan = SessionPlan(N=1, M=2)
    # p_HEG = 1/2 needs a lossless link
    params = params_for_p_heg(replace(STRESS, L_tot=1e-15), 1, 0.5)
    rep = simulate_sessions(SimConfig(params, plan, seed=5, n_sessions=100_000))
    pmf, se = rep.wait_pmf()
    assert np.all(np.abs(pmf - [2 / 3, 1 / 3]) < 3 * se)


def test_deterministic_and_thread_independent():
    plan = SessionPlan(N=3, M=20, P_E=1, P_L=1)
    cfg = SimConfig(_params(3, 0.2), plan, seed=99, n_sessions=20_000, block_size=1024)
    a = simulate_sessions(cfg)
    b = simulate_sessions(cfg)
    c = simulate_sessions(replace(cfg, threads=4))
    assert pickle.dumps(a) == pickle.dumps(b) == pickle.dumps(c)
    d = simulate_sessions(replace(cfg, seed=100))
    assert pickle.dumps(a) != pickle.dumps(d)


@pytest.mark.parametrize("N,M,p,P_E,P_L", [
    (2, 10, 0.3, 0, 0),
    (2, 50, 0.05, 1, 1),
    (4, 10, 0.3, 2, 1),
    (3, 30, 0.2, 1, 0),
])
def test_agrees_with_analytic(N, M, p, P_E, P_L):
    params = _params(N, p)
    plan = SessionPlan(N, M, P_E, P_L)
    rep = simulate_sessions(SimConfig(params, plan, seed=3, n_sessions=50_000))
    div = rep.divergence(evaluate_protocol(params, plan))
    assert all(d["excess_sigma"] <= 3.0 for d in div.values()), div
    assert all(abs(d["z"]) < 5.0 or d["excess_sigma"] == 0.0 for d in div.values() if not math.isnan(d["z"]))


@pytest.mark.parametrize("P_E,P_L", [(0, 1), (1, 1), (2, 0)])
def test_trajectory_mode_matches_probability_mode(P_E, P_L):
    params = _params(2, 0.3)
    plan = SessionPlan(2, 30, P_E, P_L)
    a = simulate_sessions(SimConfig(params, plan, seed=1, n_sessions=60_000))
    b = simulate_sessions(SimConfig(params, plan, seed=2, n_sessions=60_000, track_mode="trajectories"))
    for name in ("p_session", "p_EPR", "e_X", "e_Z"):
        x, y = getattr(a, name), getattr(b, name)
        assert abs(x.value - y.value) <= 3 * math.hypot(x.se, y.se) + 1e-12, name


def test_estimates_in_unit_interval():
    rep = simulate_sessions(SimConfig(_params(2, 0.05), SessionPlan(2, 10, 2, 1), seed=8, n_sessions=5_000))
    for name in ("p_session", "p_EPR", "e_X", "e_Z"):
        assert 0.0 <= getattr(rep, name).value <= 1.0


def test_oracles_exposed():
    perfect = (0, 0, 1, 0)
    assert circuit_oracle_swap(perfect, perfect).astuple() == pytest.approx(perfect)
    assert circuit_oracle_swap(perfect, (0.1, 0.2, 0.6, 0.1)).astuple() == pytest.approx((0.1, 0.2, 0.6, 0.1))
    p_s, state, _, _ = circuit_oracle_purify((0, 0.1, 0.9, 0), (0, 0.1, 0.9, 0))
    assert p_s == pytest.approx(0.82) and state.C == pytest.approx(0.98780, abs=1e-5)
    assert circuit_oracle_purify(perfect, perfect)[0] == pytest.approx(1.0)


def test_zero_count_rate_keeps_a_finite_error():
    report = SimReport(
        n_sessions=100_000,
        p_session=Estimate(0.02, 4e-4),
        p_EPR=Estimate(0.0, 0.0),
        e_X=Estimate(0.0, 0.0),
        e_Z=Estimate(0.0, 0.0),
        n_final=0,
        mean_link_wait=0.0,
        wait_counts=np.zeros(1, dtype=int),
        pairs_per_attempt=3,
    )
    ref = replace(evaluate_protocol(NetworkParams(), SessionPlan(2, 10, 2, 0)), p_session=0.02, p_EPR=3e-5)
    d = report.divergence(ref)["p_EPR"]
    assert d["se"] == pytest.approx(math.sqrt(3 * 3e-5 * (1 - 1e-5) / 100_000))
    assert d["excess_sigma"] < 1.0
    assert report.divergence(replace(ref, p_EPR=0.01))["p_EPR"]["excess_sigma"] > 3.0
