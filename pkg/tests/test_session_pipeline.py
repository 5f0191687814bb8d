import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import conditional_pmf, multiplicity_enumeration, trailing_after
from qrepeater import bell_algebra as ba
from qrepeater.bell_algebra import BellDiagonal
from qrepeater.network_model import NetworkParams, SessionPlan, link_success_at_least
from qrepeater.session_pipeline import (
    WeightedEnsemble,
    chain_links,
    end_node_chain,
    evaluate_protocol,
    link_ensemble,
    link_timing_models,
    multiplicity_counts,
    network_wait_pmf,
    no_purification_wait_pmf,
    pair_joint_pmf,
    pair_wait_means,
    purification_probability,
    reserve_wait_pmf,
    single_link_wait_pmf,
    weighted_kmeans,
)

IDEAL = NetworkParams(eps_i=0.0, eps_TQG=0.0, eps_m=0.0, T2=math.inf)


def test_multiplicity_examples():
    assert multiplicity_counts(1, 5) == [1] * 5
    assert multiplicity_counts(2, 3) == [1, 2, 3, 2, 1]
    with pytest.raises(ValueError):
        multiplicity_counts(2, 3, 5)


@pytest.mark.parametrize("N", range(1, 5))
@pytest.mark.parametrize("M", range(1, 7))
def test_multiplicity_enumeration(N, M):
    assert multiplicity_counts(N, M) == multiplicity_enumeration(N, M)


@given(N=st.integers(1, 5), M=st.integers(1, 12), p=st.floats(0.01, 0.99))
def test_multiplicity_total_probability(N, M, p):
    c = multiplicity_counts(N, M)
    total = sum(ci * p**N * (1 - p) ** m for m, ci in enumerate(c))
    assert total == pytest.approx(link_success_at_least(p, M, 1) ** N, rel=1e-10)


@given(N=st.integers(1, 5), M=st.integers(1, 12), p=st.floats(0.01, 1.0))
def test_network_pmf_is_multiplicity_formula(N, M, p):
    c = np.array(multiplicity_counts(N, M), dtype=float)
    m = np.arange(len(c))
    ref = c * (1 - p) ** m
    ref /= ref.sum()
    w = network_wait_pmf(N, M, p)
    np.testing.assert_allclose(w.pmf, ref, atol=1e-12)
    assert w.m[0] == 0 and w.m[-1] == N * (M - 1)


def test_network_pmf_examples():
    w = network_wait_pmf(1, 2, 0.5)
    np.testing.assert_allclose(w.pmf, [2 / 3, 1 / 3], atol=1e-15)
    assert network_wait_pmf(1, 1, 0.3).pmf.tolist() == [1.0]
    w = network_wait_pmf(3, 6, 1.0)
    assert w.pmf[0] == 1.0 and w.pmf[1:].sum() == 0.0


@given(N=st.integers(1, 60), M=st.integers(1, 3000), p=st.floats(1e-6, 1.0))
def test_pmfs_normalized_large(N, M, p):
    assert single_link_wait_pmf(M, p).pmf.sum() == pytest.approx(1.0, abs=1e-9)
    assert no_purification_wait_pmf(M, p).pmf.sum() == pytest.approx(1.0, abs=1e-9)
    if M >= 3:
        r = reserve_wait_pmf(M, p)
        assert r.pmf.sum() == pytest.approx(1.0, abs=1e-9)
        assert r.m[0] == 2 and r.m[-1] == M - 1


@pytest.mark.parametrize("M", [3, 4, 5, 7])
@pytest.mark.parametrize("p", [0.2, 0.5, 0.8])
def test_no_pur_pmf_enumeration(M, p):
    ref = conditional_pmf(
        M, p, accept=lambda pat: 1 <= sum(pat) <= 2, value=lambda pat: trailing_after(pat, 1), support=range(M)
    )
    np.testing.assert_allclose(no_purification_wait_pmf(M, p).pmf, ref, atol=1e-12)


def test_no_pur_pmf_small_case():
    # SFF, FSF, FFS, SSF, SFS, FSS, equally likely at p = 1/2
    np.testing.assert_allclose(no_purification_wait_pmf(3, 0.5).pmf, [1 / 2, 1 / 3, 1 / 6], atol=1e-15)


@pytest.mark.parametrize("M", [3, 4, 6, 8])
@pytest.mark.parametrize("p", [0.2, 0.6])
def test_reserve_pmf_enumeration(M, p):
    ref = conditional_pmf(
        M, p, accept=lambda pat: sum(pat) >= 3, value=lambda pat: trailing_after(pat, 3), support=range(2, M)
    )
    np.testing.assert_allclose(reserve_wait_pmf(M, p).pmf, ref, atol=1e-12)
    assert reserve_wait_pmf(3, p).pmf.tolist() == [1.0]


@pytest.mark.parametrize("M", [3, 5, 8])
@pytest.mark.parametrize("p", [0.25, 0.7])
def test_pair_joint_pmf_enumeration(M, p):
    m1, m2, pmf = pair_joint_pmf(M, p)
    support = list(zip(m1.tolist(), m2.tolist()))
    ref = conditional_pmf(
        M,
        p,
        accept=lambda pat: sum(pat) >= 3,
        value=lambda pat: (trailing_after(pat, 1), trailing_after(pat, 2)),
        support=support,
    )
    np.testing.assert_allclose(pmf, ref, atol=1e-12)
    mean1, mean2 = pair_wait_means(M, p)
    assert mean1 == pytest.approx(np.dot(pmf, m1), abs=1e-12)
    assert mean2 == pytest.approx(np.dot(pmf, m2), abs=1e-12)


def test_timing_models_reject_small_M():
    with pytest.raises(ValueError):
        link_timing_models(2, 0.3, NetworkParams(), 10.0)
    params = NetworkParams()
    t = link_timing_models(5, 0.3, params, 10.0)
    floor = 2 * (2 * 10.0 / params.v + params.t_pur + params.t_swap)
    assert t.t_no_pur >= floor and t.t_res >= floor + 2 * 2 * params.t_HEG - 1e-15
    assert t.t_pur_second > t.t_pur_latest


def test_purification_probability_example():
    assert purification_probability(5, 0.3) == pytest.approx(0.16308 / 0.83193, abs=1e-4)


def test_ideal_links_are_perfect():
    for P_L in (0, 1):
        ens, _ = link_ensemble(IDEAL, SessionPlan(N=4, M=20, P_L=P_L))
        np.testing.assert_allclose(ens.states, np.tile([0, 0, 1, 0], (len(ens), 1)), atol=1e-15)
        assert ens.total_weight == pytest.approx(1.0, abs=1e-12)


def test_link_purification_lowers_phase_error():
    p = NetworkParams(eps_i=0.02, eps_TQG=1e-4, eps_m=1e-4)
    ens1, p_pur = link_ensemble(p, SessionPlan(N=40, M=500, P_L=1))
    ens0, _ = link_ensemble(p, SessionPlan(N=40, M=500, P_L=0))
    assert 0 < p_pur <= 1
    assert ens1.states[2][1] < ens0.states[0][1]


def test_chain_perfect_and_weight_conservation():
    perfect = WeightedEnsemble.single([0, 0, 1, 0])
    out = chain_links([perfect] * 5, IDEAL, SessionPlan(N=5, M=3))
    np.testing.assert_allclose(out.states, [[0, 0, 1, 0]], atol=1e-15)
    p = NetworkParams(eps_i=0.01, T2=0.3)
    link, _ = link_ensemble(p, SessionPlan(N=2, M=30, P_L=1))
    two = chain_links([link, link], p, SessionPlan(N=2, M=30, P_L=1))
    assert len(two) == 9 and two.total_weight == pytest.approx(1.0, abs=1e-9)


def test_kmeans_preserves_mass_and_mean():
    rng = np.random.default_rng(5)
    pts = rng.dirichlet(np.ones(4), 500)
    w = rng.random(500)
    w /= w.sum()
    c, m = weighted_kmeans(pts, w, 20)
    assert len(c) <= 20
    assert m.sum() == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(m @ c, w @ pts, atol=1e-12)
    c2, m2 = weighted_kmeans(pts, w, 20)
    assert np.array_equal(c, c2) and np.array_equal(m, m2)


def test_cap_convergence():
    p = NetworkParams(eps_i=0.01, eps_TQG=0.003, T2=0.2)
    plan = SessionPlan(N=4, M=40, P_L=1)
    link, _ = link_ensemble(p, plan)
    small = chain_links([replace(link, cap=10)] * 4, p, plan).mean()
    big = chain_links([replace(link, cap=10_000)] * 4, p, plan).mean()
    assert abs(ba.quantum_bit_errors(small)[0] - ba.quantum_bit_errors(big)[0]) < 1e-4


@pytest.mark.parametrize("P_E,P_L", [(0, 0), (1, 1), (2, 1), (2, 0)])
def test_mean_path_equals_ensemble_path(P_E, P_L):
    p = NetworkParams(L_tot=300, eps_i=0.005, T2=0.3)
    plan = SessionPlan(N=6, M=60, P_E=P_E, P_L=P_L)
    a = evaluate_protocol(p, plan, method="mean")
    b = evaluate_protocol(p, plan, method="ensemble")
    np.testing.assert_allclose(a.bell.vec, b.bell.vec, atol=1e-12)
    assert a.R_SKR == pytest.approx(b.R_SKR, rel=1e-10)


def test_end_node_examples():
    perfect = WeightedEnsemble.single([0, 0, 1, 0])
    final, probs = end_node_chain(perfect, IDEAL, SessionPlan(N=1, M=1), 0.01)
    assert final == BellDiagonal.perfect() and probs == []
    final, probs = end_node_chain(perfect, IDEAL, SessionPlan(N=1, M=1, P_E=1), 0.01)
    assert probs == [1.0]
    # phase-type session error: one round leaves x^2 / (x^2 + (1-x)^2), moved to Phi+
    noisy = WeightedEnsemble.single([0, 0.1, 0.9, 0])
    final, probs = end_node_chain(noisy, IDEAL, SessionPlan(N=1, M=1, P_E=1), 0.01)
    assert probs[0] == pytest.approx(0.82)
    assert final.A == pytest.approx(0.0122, abs=1e-4) and final.B == pytest.approx(0.0, abs=1e-15)


def test_evaluate_examples():
    p = replace(IDEAL, eta0=1.0)
    r = evaluate_protocol(p, SessionPlan(N=1, M=10))
    assert (r.e_X, r.e_Z) == (0.0, 0.0)
    assert r.R_SKR == pytest.approx(r.R) and r.R == pytest.approx(r.p_session / r.t_session)
    dark = evaluate_protocol(NetworkParams(eta0=0.0), SessionPlan(N=3, M=10))
    assert dark.p_session == 0.0 and dark.R == 0.0 and dark.R_SKR == 0.0


@pytest.mark.parametrize("P_E", [0, 1, 2])
@pytest.mark.parametrize("P_L", [0, 1])
def test_no_errors_gives_perfect_pairs(P_E, P_L):
    r = evaluate_protocol(IDEAL, SessionPlan(N=7, M=25, P_E=P_E, P_L=P_L))
    np.testing.assert_allclose(r.bell.vec, [0, 0, 1, 0], atol=1e-14)


def test_report_invariants():
    r = evaluate_protocol(NetworkParams(), SessionPlan(N=30, M=500, P_E=1, P_L=1))
    assert r.R == pytest.approx(r.p_EPR / r.t_EPR)
    assert r.R_SKR == pytest.approx(r.R * max(r.r_inf, 0.0))
    assert 0 <= r.e_X <= 1 and 0 <= r.e_Z <= 1


@pytest.mark.parametrize("P_E,P_L", [(0, 0), (1, 1), (2, 1)])
def test_errors_monotone_in_noise(P_E, P_L):
    plan = SessionPlan(N=20, M=200, P_E=P_E, P_L=P_L)
    errs = [sum(ba.quantum_bit_errors(evaluate_protocol(NetworkParams(T2=t), plan).bell)) for t in (0.05, 0.2, 1, 5)]
    assert all(b <= a + 1e-12 for a, b in zip(errs, errs[1:]))
    for field in ("eps_i", "eps_TQG", "eps_m"):
        errs = [
            sum(ba.quantum_bit_errors(evaluate_protocol(replace(NetworkParams(), **{field: e}), plan).bell))
            for e in (0, 1e-3, 3e-3, 1e-2)
        ]
        assert all(b >= a - 1e-12 for a, b in zip(errs, errs[1:])), field
