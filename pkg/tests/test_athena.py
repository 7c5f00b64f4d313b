import random

import pytest
from hypothesis import given, settings, strategies as st

from memlearn.athena import (Athena, AthenaAction, AthenaConfig, AthenaQStore, BloomFilter, EpochStats,
                             EpochTelemetry, Selection, apply_action, athena_q, athena_update,
                             bloom_clear, bloom_insert, bloom_query, compute_reward, prefetch_degree,
                             quantize_state, select_coordination)
from memlearn.prefetch import StridePrefetcher
from memlearn.pythia import ConfigError

from reference import degree_formula, plain_sum, relative_reward

TAU = 0.12


def test_bloom_insert_query_clear():
    f = BloomFilter()
    bloom_insert(f, 1234)
    assert bloom_query(f, 1234) and f.inserted_count == 1
    bloom_clear(f)
    assert f.bits == 0 and f.inserted_count == 0
    assert not any(bloom_query(f, x) for x in range(1000))


def test_bloom_sets_two_positions():
    f = BloomFilter(4096, 2)
    f.insert(77)
    assert bin(f.bits).count("1") in (1, 2)
    assert all(f.bits >> p & 1 for p in f.positions(77))


def test_bloom_false_positive_rate():
    rng = random.Random(3)
    f = BloomFilter(4096, 2)
    ins = {rng.getrandbits(48) for _ in range(199)}
    for x in ins:
        f.insert(x)
    probes = [x for x in (rng.getrandbits(48) for _ in range(10_500)) if x not in ins][:10_000]
    fp = sum(f.query(x) for x in probes) / len(probes)
    assert fp <= 0.02


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(0, 2**64 - 1), max_size=300))
def test_bloom_no_false_negatives(xs):
    f = BloomFilter()
    for x in xs:
        f.insert(x)
    assert all(f.query(x) for x in xs)


def test_quantize_examples():
    assert quantize_state(EpochStats(), 8) == (0, 0, 0, 0)
    assert quantize_state(EpochStats(pref_issued=10, pref_useful=10), 8)[0] == 7
    assert quantize_state(EpochStats(pref_issued=100, pref_useful=49), 8)[0] == 3
    s = EpochStats(ocp_predictions=4, ocp_correct=1, bw_usage=0.6, pollution_misses=1,
                   total_demand_misses=8)
    assert quantize_state(s, 8) == (0, 2, 4, 1)


def test_athena_q_zero_and_single_cell():
    qs = AthenaQStore(8, 64, init=0.0)
    assert all(athena_q(qs, (a, b, 0, 0), act) == 0 for a in range(8) for b in range(8)
               for act in range(4))
    state = (1, 2, 3, 4)
    row = qs.state_rows(state)[5]
    qs.set_cell(5, row, 2, 3.5)
    assert athena_q(qs, state, 2) == 3.5
    assert athena_q(qs, state, 1) == 0


def test_athena_q_matches_brute_force_sum():
    rng = random.Random(8)
    qs = AthenaQStore(8, 64, init=0.0)
    for p in range(8):
        for r in range(64):
            qs.tables[p][r] = [rng.randint(-128, 127) for _ in range(4)]
    for _ in range(256):
        state = tuple(rng.randrange(8) for _ in range(4))
        rows = qs.state_rows(state)
        for a in range(4):
            assert athena_q(qs, state, a) == plain_sum(qs.tables, rows, a) / 8


def test_optimistic_init():
    qs = AthenaQStore(8, 64)
    # maximum 8-bit value (127 raw = 15.875) shared across the planes
    assert athena_q(qs, (0, 0, 0, 0), 0) == 127 / 8


class FixedQ:
    def __init__(self, q):
        self.q = q

    def q_values(self, state, now=None):
        return list(self.q)


def test_select_examples():
    cfg = AthenaConfig()
    a = select_coordination(FixedQ([0, 0, 5, 1]), (0,) * 4, None, cfg)
    assert a == AthenaAction(Selection.PREF_ONLY, 4)
    a = select_coordination(FixedQ([1, 1, 1, 1]), (0,) * 4, None, cfg)
    assert a == AthenaAction(Selection.NONE, 0)
    half = [0.0, 0.0, TAU / 2, 0.0]
    assert select_coordination(FixedQ(half), (0,) * 4, None, cfg).degree == 2
    assert select_coordination(FixedQ([0, 3, 0, 0]), (0,) * 4, None, cfg) == \
        AthenaAction(Selection.OCP_ONLY, 0)


def test_select_explores_with_epsilon():
    class R:
        def random(self):
            return 0.0

        def randrange(self, n):
            return 3
    a = select_coordination(FixedQ([9, 0, 0, 0]), (0,) * 4, R(), AthenaConfig(epsilon=0.5))
    assert a.selection is Selection.BOTH


@pytest.mark.parametrize("dq", [-1, 0, TAU / 4, TAU / 2, TAU, 2 * TAU])
def test_degree_algebra(dq):
    assert prefetch_degree(dq, TAU, 4) == degree_formula(dq, TAU, 4)


@given(st.floats(-5, 5), st.floats(-5, 5))
def test_degree_monotone(a, b):
    lo, hi = sorted((a, b))
    assert prefetch_degree(lo, TAU, 4) <= prefetch_degree(hi, TAU, 4)
    assert prefetch_degree(max(hi, TAU), TAU, 4) == 4
    assert prefetch_degree(min(lo, 0), TAU, 4) == 0


def test_action_invariant():
    with pytest.raises(ValueError):
        AthenaAction(Selection.OCP_ONLY, 2)


def _stats(**kw):
    base = dict(cycles=2400, llc_misses=100, llc_miss_latency_sum=20000, loads=600,
                mispredicted_branches=50)
    base.update(kw)
    return EpochStats(**base)


def test_reward_examples():
    e = _stats()
    assert compute_reward(e, e) == 0
    assert compute_reward(_stats(), _stats(cycles=2000)) == pytest.approx(1.6 * 400 / 2400)
    assert compute_reward(_stats(), _stats(mispredicted_branches=25)) == pytest.approx(-0.5)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(0, 5000), min_size=10, max_size=10))
def test_reward_matches_exact_reference(v):
    names = ("cycles", "llc_misses", "llc_miss_latency_sum", "loads", "mispredicted_branches")
    prev = dict(zip(names, v[:5]))
    cur = dict(zip(names, v[5:]))
    cfg = AthenaConfig(lambda_llc_m=0.3, lambda_llc_t=0.2)
    lam = {"cycle": "1.6", "llc_m": "0.3", "llc_t": "0.2", "load": "0.6", "mbr": "1.0"}
    got = compute_reward(EpochStats(**prev), EpochStats(**cur), cfg)
    assert got == pytest.approx(float(relative_reward(prev, cur, lam)), abs=1e-9)
    assert compute_reward(EpochStats(**prev), EpochStats(**prev), cfg) == 0


def test_raw_reward_mode():
    cfg = AthenaConfig(reward_mode="raw")
    assert compute_reward(_stats(), _stats(cycles=2000), cfg) == pytest.approx(1.6 * 400)


def test_update_alpha_zero():
    qs = AthenaQStore(8, 64)
    before = [[list(r) for r in p] for p in qs.tables]
    athena_update(qs, (1, 1, 1, 1), 2, 5.0, (2, 2, 2, 2), 1, 0.0, 0.6, now=0)
    qs.sync(None)
    assert qs.tables == before


def test_update_scalar_example_and_delay():
    qs = AthenaQStore(1, 64, init=0.0)
    s1, s2 = (0, 0, 0, 1), (0, 0, 0, 2)
    assert qs.state_rows(s1) != qs.state_rows(s2)
    qs.set_cell(0, qs.state_rows(s1)[0], 0, 2.0)
    qs.set_cell(0, qs.state_rows(s2)[0], 3, 5.0)
    eff = athena_update(qs, s1, 0, 1.0, s2, 3, 0.6, 0.6, now=1000, delay=50)
    assert eff == 1050
    assert athena_q(qs, s1, 0, now=1049) == 2.0
    assert athena_q(qs, s1, 0, now=1050) == pytest.approx(3.2, abs=1 / 8)


def test_update_saturates():
    qs = AthenaQStore(1, 64, init=0.0)
    s = (1, 2, 3, 4)
    for t in range(200):
        athena_update(qs, s, 1, 50.0, s, 1, 0.6, 0.6, now=t * 100, delay=0)
    assert athena_q(qs, s, 1, now=10**9) == 127 / 8
    for t in range(200):
        athena_update(qs, s, 1, -50.0, s, 1, 0.6, 0.6, now=10**5 + t * 100, delay=0)
    assert athena_q(qs, s, 1, now=10**9) == -16.0


def test_epsilon_zero_selection_is_pure():
    qs = AthenaQStore(8, 64)
    rng = random.Random(0)
    for p in range(8):
        for r in range(64):
            qs.tables[p][r] = [rng.randint(-20, 20) for _ in range(4)]
    cfg = AthenaConfig()
    for _ in range(50):
        s = tuple(rng.randrange(8) for _ in range(4))
        assert select_coordination(qs, s, None, cfg) == select_coordination(qs, s, None, cfg)


def test_apply_action_sets_degree():
    pf = StridePrefetcher(4)
    assert apply_action(AthenaAction(Selection.NONE), pf) is False and pf.degree == 0
    assert apply_action(AthenaAction(Selection.BOTH, 2), pf) is True and pf.degree == 2
    assert apply_action(AthenaAction(Selection.OCP_ONLY), pf) is True and pf.degree == 0
    assert apply_action(AthenaAction(Selection.PREF_ONLY, 4), pf) is False and pf.degree == 4


def test_telemetry_counts_and_resets():
    t = EpochTelemetry()
    for line in range(10):
        t.prefetch_issued(line)
    for line in (0, 1, 2, 500):
        t.demand(line)
    t.ocp_outcome(True, True)
    t.ocp_outcome(True, False)
    t.ocp_outcome(False, True)
    t.prefetch_evicted(900)
    t.llc_miss(900)
    t.llc_miss(901)
    t.miss_latency(100, 255)
    t.miss_latency(5000, 255)
    s = t.close(now=1000, cycles=1000, loads=4, mispredicted=1, bw_usage=0.25)
    assert (s.pref_issued, s.ocp_predictions, s.ocp_correct) == (10, 2, 1)
    assert s.pref_useful >= 3  # Bloom filters may only over-report
    assert (s.pollution_misses, s.total_demand_misses) == (1, 2)
    assert s.llc_miss_latency_sum == 255  # the second miss completes in a later epoch
    nxt = t.close(now=6000, cycles=5000, loads=0, mispredicted=0, bw_usage=0)
    assert nxt.pref_issued == 0 and nxt.llc_miss_latency_sum == 255
    assert t.accuracy_filter.bits == 0 and t.pollution_filter.bits == 0


def test_agent_first_epoch_has_no_update():
    ag = Athena()
    a = ag.end_epoch(_stats(), 2000)
    assert ag.log[0].reward == 0 and a.selection in Selection
    ag.end_epoch(_stats(cycles=2000), 4000)
    assert ag.log[1].reward == pytest.approx(1.6 * 400 / 2400)


@pytest.mark.parametrize("kw", [dict(epoch_len=0), dict(rows=48), dict(tau=0), dict(reward_mode="x"),
                                dict(bloom_bits=1000)])
def test_config_validation(kw):
    with pytest.raises(ConfigError):
        AthenaConfig(**kw).validate()
