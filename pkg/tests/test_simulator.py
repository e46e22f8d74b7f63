import dataclasses
import json

import numpy as np
import pytest
from scipy import stats as sps

from dpmac.private import PrivateReviewProtocol, analyze_private, state_count
from dpmac.public import PublicReviewProtocol, analyze_public, best_response_public, public_state_count
from dpmac.simulator import (
    Automaton,
    DeviantSpec,
    SimConfig,
    compare_to_analytic,
    replication_rng,
    run,
    step_signals,
)
from dpmac.stats import binom_pmf

PRIV = PrivateReviewProtocol(0.04, 23, 90)
PUB = PublicReviewProtocol(0.1, 50, 125)


def test_signals_private_lone_transmitter():
    assert step_signals("TWWWW", "private") == ["S", "F", "F", "F", "F"]


def test_signals_public():
    assert step_signals("WWWWW", "public") == "0"
    assert step_signals("WTWWW", "public") == "1"
    assert step_signals("TTWWW", "public") == "e"
    assert step_signals("TTWWW", "private") == ["F"] * 5


def test_signals_reject_unknown_action():
    with pytest.raises(ValueError):
        step_signals("TX", "public")
    with pytest.raises(ValueError):
        step_signals("TW", "broadcast")


@pytest.mark.parametrize("proto, count", [(PRIV, state_count), (PUB, public_state_count),
                                          (PrivateReviewProtocol(0.01, 40, 7), state_count)])
def test_automaton_state_space_size(proto, count):
    states = Automaton(proto).states()
    assert len(states) == len(set(states)) == count(proto)


@pytest.mark.parametrize("proto", [PRIV, PUB])
def test_trajectories_stay_in_state_space(proto):
    rng = np.random.default_rng(3)
    a = Automaton(proto)
    allowed = set(a.states())
    mode = a.mode
    for _ in range(5000):
        assert a.state in allowed
        if a.state[0] == "review":
            assert a.state[2] <= a.state[1]
        sent = rng.random(5) < a.transmit_prob()
        sig = step_signals(sent, mode)
        a.observe(sig[0] if mode == "private" else sig)


def test_automaton_phase_sequence():
    a = Automaton(PrivateReviewProtocol(0.04, 3, 2))
    for _ in range(3):
        a.observe("F")
    assert a.state == ("punishment", 0) and a.last_test_failed
    a.observe("F"), a.observe("F")
    assert a.state == ("review", 0, 0)
    for sig in "SFF":
        a.observe(sig)
    assert a.state == ("cooperation", 0) and not a.last_test_failed


def test_config_validation():
    with pytest.raises(ValueError):
        SimConfig(PRIV, (DeviantSpec.constant(0, 0.7), DeviantSpec.constant(0, 0.8)))
    with pytest.raises(ValueError):
        SimConfig(PRIV, (DeviantSpec.constant(5, 0.7),))
    with pytest.raises(ValueError):
        SimConfig(PRIV, (DeviantSpec.best_response(0),))
    with pytest.raises(ValueError):
        SimConfig(PRIV, (DeviantSpec.adaptive(0, lambda j, c: 1.0),))
    with pytest.raises(ValueError):
        SimConfig(PUB, (DeviantSpec.punish_aware(0, 1.0, defect_in="reciprocation"),))
    with pytest.raises(ValueError):
        DeviantSpec.constant(0, 1.5)
    with pytest.raises(ValueError):
        SimConfig(PUB, epochs=0)


def test_config_round_trip():
    cfg = SimConfig(PUB, (DeviantSpec.punish_aware(2, 0.9, 0.5),), epochs=10, master_seed=7)
    assert SimConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg


def test_substreams_are_distinct_and_stable():
    a = replication_rng(42, 0).random(4)
    assert np.array_equal(a, replication_rng(42, 0).random(4))
    assert not np.array_equal(a, replication_rng(42, 1).random(4))
    assert not np.array_equal(a, replication_rng(43, 0).random(4))


REFERENCE_CASES = [
    SimConfig(PrivateReviewProtocol(0.04, 6, 4), epochs=40, master_seed=1, batch_size=1),
    SimConfig(PrivateReviewProtocol(0.04, 6, 4), (DeviantSpec.constant(1, 0.8),), epochs=40, master_seed=2, batch_size=1),
    SimConfig(PrivateReviewProtocol(0.04, 6, 4), (DeviantSpec.punish_aware(3, 1.0, 0.4, "reciprocation"),),
              epochs=40, master_seed=3, batch_size=1),
    SimConfig(PublicReviewProtocol(0.1, 8, 5), epochs=60, master_seed=4, batch_size=1),
    SimConfig(PublicReviewProtocol(0.1, 8, 5), (DeviantSpec.constant(0, 1.0),), epochs=60, master_seed=5, batch_size=1),
    SimConfig(PublicReviewProtocol(0.1, 8, 5), (DeviantSpec.best_response(4, 0.3),), epochs=60, master_seed=6, batch_size=1),
    SimConfig(PublicReviewProtocol(0.1, 8, 5), (DeviantSpec.adaptive(2, lambda j, c: 0.9 if c > 2 else 0.1),),
              epochs=60, master_seed=7, batch_size=1),
]


@pytest.mark.parametrize("cfg", REFERENCE_CASES)
def test_reference_engine_matches_vector_engine(cfg):
    assert run(cfg, engine="reference") == run(cfg)


def test_public_nodes_share_state():
    cfg = SimConfig(PublicReviewProtocol(0.1, 10, 6), (DeviantSpec.constant(0, 0.7),), epochs=200, master_seed=9,
                    batch_size=1)
    seen = []

    def check(slot, sent, agents):
        followers = {a.state for a in agents[1:]}
        assert len(followers) == 1
        seen.append(followers.pop())

    run(cfg, engine="reference", on_slot=check)
    assert any(s[0] == "punishment" for s in seen)


def test_private_phase_depends_only_on_own_signals():
    cfg = SimConfig(PrivateReviewProtocol(0.04, 10, 6), epochs=200, master_seed=10, batch_size=1)
    diverged = []

    def check(slot, sent, agents):
        diverged.append(len({a.phase for a in agents}) > 1)

    run(cfg, engine="reference", on_slot=check)
    assert any(diverged)


def test_same_seed_same_report():
    cfg = SimConfig(PUB, (DeviantSpec.constant(0, 1.0),), epochs=3000, master_seed=42, batch_size=700)
    assert run(cfg) == run(cfg)
    assert run(cfg) == run(dataclasses.replace(cfg, n_jobs=3))
    assert run(cfg) != run(dataclasses.replace(cfg, master_seed=43))


def test_report_ranges():
    rep = run(SimConfig(PRIV, (DeviantSpec.constant(2, 0.8),), epochs=2000, master_seed=1))
    assert all(0.0 <= p <= 1.0 for p in rep.payoff_mean)
    for rate in (rep.punishment_rate, rep.miss_detection_rate):
        assert 0.0 <= rate <= 1.0
    assert rep.false_punishment_rate is None
    assert rep.slots == 2000 * (23 + 90)
    assert len(rep.review_histograms) == 5 and sum(rep.review_histograms[0]) == 2000


def test_public_compliant_agreement():
    rep = run(SimConfig(PUB, epochs=100_000, master_seed=11))
    a = analyze_public(PUB, 1.0)
    cmp = compare_to_analytic(rep, a)
    assert cmp.passed, cmp.records


def test_public_constant_deviant_agreement():
    rep = run(SimConfig(PUB, (DeviantSpec.constant(0, 1.0),), epochs=100_000, master_seed=12))
    a = analyze_public(PUB, 1.0)
    assert a.payoff_deviator == pytest.approx(0.4096 * 50 / 175, rel=1e-12)
    cmp = compare_to_analytic(rep, a)
    assert cmp.passed, cmp.records


def test_private_marginal_counts_are_binomial():
    rep = run(SimConfig(PRIV, epochs=100_000, master_seed=13))
    L, q = 23, 0.08192
    expected = np.array([binom_pmf(k, L, q) for k in range(L + 1)]) * rep.epochs
    for hist in rep.review_histograms:
        obs = np.array(hist, dtype=float)
        keep = expected >= 5
        o = np.append(obs[keep], obs[~keep].sum())
        e = np.append(expected[keep], expected[~keep].sum())
        assert sps.chisquare(o, e).pvalue > 0.01


def test_private_comparison_gates_only_exact_quantities():
    rep = run(SimConfig(PRIV, epochs=20_000, master_seed=14))
    cmp = compare_to_analytic(rep, analyze_private(PRIV, 0.8))
    gated = {r["quantity"] for r in cmp.records if r["gated"]}
    assert gated == {f"node_fail[{i}]" for i in range(5)}
    assert cmp.passed


def test_comparison_rejects_mismatch():
    rep = run(SimConfig(PUB, (DeviantSpec.constant(0, 0.9),), epochs=100, master_seed=1))
    with pytest.raises(ValueError):
        compare_to_analytic(rep, analyze_public(PUB, 1.0))
    with pytest.raises(ValueError):
        compare_to_analytic(rep, analyze_private(PRIV, 0.9))


def test_smart_deviant_beats_compliance_in_private_protocol():
    rep = run(SimConfig(PRIV, (DeviantSpec.punish_aware(0, 1.0, 1.0, "reciprocation"),),
                        epochs=20_000, master_seed=15))
    gap = rep.payoff_mean[0] - rep.compliant_payoff
    assert gap > 5 * max(rep.payoff_se[0], rep.compliant_payoff_se)


def test_best_response_deviant_matches_dp_value():
    proto = PublicReviewProtocol(0.1, 30, 60)
    br = best_response_public(proto)
    rep = run(SimConfig(proto, (DeviantSpec.best_response(0),), epochs=60_000, master_seed=16))
    assert abs(rep.payoff_mean[0] - br.value) <= 4 * rep.payoff_se[0]
