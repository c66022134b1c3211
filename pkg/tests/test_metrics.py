import random

import numpy as np
import pytest
from sklearn.metrics import f1_score

from routesim.metrics import (
    ChoiceRecord,
    MetricsError,
    accuracy,
    behavior_vector,
    classify_transition,
    combine_group_f1,
    cosine_similarity,
    flow_mse,
    group_f1,
    mape,
    weighted_f1,
)

ROUTES_BY_GROUP = {1: ("expressway", "local1"), 2: ("expressway", "local2")}


def record(agent, group, period, predicted, truth, prev=None, own=None, alt=None):
    return ChoiceRecord(agent_id=agent, group_id=group, period=period,
                        predicted=predicted, truth=truth, prev_truth=prev,
                        prev_own_time=own, prev_alt_time=alt)


def random_trace(rng, n_agents=None, n_periods=None):
    n_agents = n_agents or rng.randint(2, 15)
    n_periods = n_periods or rng.randint(2, 40)
    n_group1 = rng.randint(1, n_agents - 1)
    trace = []
    for a in range(1, n_agents + 1):
        group = 1 if a <= n_group1 else 2
        routes = ROUTES_BY_GROUP[group]
        prev = rng.choice(routes)
        for t in range(1, n_periods + 1):
            own = rng.uniform(5, 60)
            alt = rng.uniform(5, 60) if rng.random() > 0.05 else own  # sprinkle ties
            trace.append(record(a, group, t,
                                predicted=rng.choice(routes), truth=rng.choice(routes),
                                prev=prev, own=own, alt=alt))
            prev = trace[-1].truth
    return trace


class TestAccuracy:
    def test_all_correct(self):
        trace = [record(1, 1, t, "expressway", "expressway") for t in range(1, 11)]
        assert accuracy(trace) == 1.0

    def test_half_correct(self):
        trace = [record(1, 1, t, "expressway", "expressway" if t % 2 else "local1")
                 for t in range(1, 11)]
        assert accuracy(trace) == 0.5

    def test_paper_ratio(self):
        # 786 correct out of 15 agents x 80 periods
        trace = []
        correct = 786
        for i in range(1200):
            a = i % 15 + 1
            group = 1 if a <= 9 else 2
            routes = ROUTES_BY_GROUP[group]
            truth = routes[0]
            predicted = truth if i < correct else routes[1]
            trace.append(record(a, group, i // 15 + 1, predicted, truth))
        assert accuracy(trace) == pytest.approx(0.655, abs=1e-12)

    def test_empty_rejected(self):
        with pytest.raises(MetricsError):
            accuracy([])


class TestF1:
    def test_perfect_both_groups(self):
        trace = []
        for a in range(1, 16):
            group = 1 if a <= 9 else 2
            routes = ROUTES_BY_GROUP[group]
            for t in range(1, 5):
                r = routes[t % 2]
                trace.append(record(a, group, t, r, r))
        assert weighted_f1(trace, ROUTES_BY_GROUP) == 1.0

    def test_weighting_formula(self):
        assert combine_group_f1(0.5, 1.0) == pytest.approx(0.7, abs=1e-12)

    def test_group_f1_matches_sklearn(self):
        rng = random.Random(1234)
        for _ in range(50):
            trace = random_trace(rng)
            for group in (1, 2):
                pairs = [(r.truth, r.predicted) for r in trace if r.group_id == group]
                ours = group_f1(trace, group, ROUTES_BY_GROUP[group])
                reference = f1_score([p[0] for p in pairs], [p[1] for p in pairs],
                                     labels=list(ROUTES_BY_GROUP[group]),
                                     average="macro", zero_division=0)
                assert ours == pytest.approx(reference, abs=1e-9)

    def test_weighted_f1_uses_population_weights(self):
        rng = random.Random(99)
        trace = random_trace(rng, n_agents=15)
        agents1 = {r.agent_id for r in trace if r.group_id == 1}
        agents2 = {r.agent_id for r in trace if r.group_id == 2}
        w1 = len(agents1) / (len(agents1) + len(agents2))
        expected = (w1 * group_f1(trace, 1, ROUTES_BY_GROUP[1])
                    + (1 - w1) * group_f1(trace, 2, ROUTES_BY_GROUP[2]))
        assert weighted_f1(trace, ROUTES_BY_GROUP) == pytest.approx(expected, abs=1e-12)


class TestClassifyTransition:
    def test_switch_after_loss(self):
        assert classify_transition("expressway", 30, 20, "local1") == "C-"

    def test_boundary_tie_is_win(self):
        assert classify_transition("expressway", 15, 15, "expressway") == "S-"

    def test_stay_after_loss(self):
        assert classify_transition("local1", 25, 20, "local1") == "S+"

    def test_exhaustive_and_exclusive(self):
        outcomes = set()
        for own, alt in ((30, 20), (10, 20)):
            for cur in ("expressway", "local1"):
                outcomes.add(classify_transition("expressway", own, alt, cur))
        assert outcomes == {"C-", "S+", "C+", "S-"}


class TestBehaviorVector:
    def trace_of_types(self, types):
        """Build records whose classification sequence equals `types`."""
        rows = []
        for t, kind in enumerate(types, start=2):
            own, alt = (30.0, 20.0) if kind in ("C-", "S+") else (10.0, 20.0)
            cur = "local1" if kind in ("C-", "C+") else "expressway"
            rows.append(record(1, 1, t, cur, cur, prev="expressway", own=own, alt=alt))
        return rows

    def test_naive_archetype(self):
        v = behavior_vector(self.trace_of_types(["C-", "S-", "C-", "S-"]))
        assert v.as_tuple() == (1.0, 1.0)

    def test_status_quo_archetype(self):
        v = behavior_vector(self.trace_of_types(["S+", "S-", "S+", "S-"]))
        assert v.as_tuple() == (0.0, 1.0)

    def test_crafted_counts(self):
        v = behavior_vector(self.trace_of_types(["C-", "S+", "S-", "C+", "S-"]))
        assert v.c_minus == pytest.approx(0.5)
        assert v.s_minus == pytest.approx(2 / 3)

    def test_undefined_component_flagged(self):
        v = behavior_vector(self.trace_of_types(["S-", "S-"]))
        assert v.c_minus is None
        assert v.s_minus == 1.0
        assert not v.defined
        with pytest.raises(MetricsError):
            v.as_tuple()

    def test_unclassifiable_days_skipped(self):
        rows = [record(1, 1, 1, "expressway", "expressway")]  # no prior data
        rows += self.trace_of_types(["C-", "S-"])
        v = behavior_vector(rows)
        assert v.as_tuple() == (1.0, 1.0)


class TestCosine:
    def test_parallel(self):
        assert cosine_similarity((0.5, 0.5), (1, 1)) == pytest.approx(1.0)

    def test_orthogonal(self):
        assert cosine_similarity((1, 0), (0, 1)) == pytest.approx(0.0)

    def test_known_value(self):
        assert cosine_similarity((1, 1), (1, 0)) == pytest.approx(0.70711, abs=1e-5)

    def test_zero_vector_flagged(self):
        with pytest.raises(MetricsError):
            cosine_similarity((0, 0), (1, 1))

    def test_scale_invariant_and_symmetric(self):
        rng = random.Random(5)
        for _ in range(100):
            v1 = (rng.uniform(0.01, 1), rng.uniform(0.01, 1))
            v2 = (rng.uniform(0.01, 1), rng.uniform(0.01, 1))
            alpha = rng.uniform(0.1, 10)
            assert cosine_similarity(v1, v2) == pytest.approx(cosine_similarity(v2, v1))
            scaled = (alpha * v1[0], alpha * v1[1])
            assert cosine_similarity(scaled, v2) == pytest.approx(cosine_similarity(v1, v2))


class TestFlowErrors:
    def test_mape_zero_when_equal(self):
        series = {t: (8.0, 4.0, 3.0) for t in range(1, 6)}
        assert mape(series, dict(series)) == 0.0

    def test_mape_single_period(self):
        assert mape({1: (8, 4, 3)}, {1: (10, 2, 3)}) == pytest.approx(0.4, abs=1e-12)

    def test_mape_skips_zero_truth_components(self):
        sim = {1: (8.0, 4.0, 3.0), 2: (9.0, 3.0, 3.0)}
        truth = {1: (10.0, 2.0, 0.0), 2: (10.0, 2.0, 3.0)}
        expected = (abs(8 - 10) / 10 + abs(4 - 2) / 2
                    + abs(9 - 10) / 10 + abs(3 - 2) / 2 + 0.0) / 5
        assert mape(sim, truth) == pytest.approx(expected, abs=1e-12)

    def test_mape_all_zero_rejected(self):
        with pytest.raises(MetricsError):
            mape({1: (1.0, 1.0, 1.0)}, {1: (0.0, 0.0, 0.0)})

    def test_mse_as_written(self):
        assert flow_mse({1: (8, 0, 3)}, {1: (5, 4, 3)}) == pytest.approx(5 / 3, abs=1e-12)

    def test_mse_squared_mode(self):
        assert flow_mse({1: (8, 0, 3)}, {1: (5, 4, 3)}, squared=True) == pytest.approx(25 / 3, abs=1e-12)

    def test_zero_iff_identical_and_permutation_equivariant(self):
        rng = random.Random(11)
        sim = {t: tuple(rng.uniform(0, 15) for _ in range(3)) for t in range(1, 11)}
        truth = {t: tuple(rng.uniform(0, 15) for _ in range(3)) for t in range(1, 11)}
        assert flow_mse(sim, dict(sim)) == 0.0
        perm = list(range(1, 11))
        rng.shuffle(perm)
        sim_p = {t: sim[perm[t - 1]] for t in range(1, 11)}
        truth_p = {t: truth[perm[t - 1]] for t in range(1, 11)}
        assert flow_mse(sim_p, truth_p) == pytest.approx(flow_mse(sim, truth), abs=1e-12)
        assert mape(sim_p, truth_p) == pytest.approx(mape(sim, truth), abs=1e-12)


def brute_force_bundle(trace):
    """Independent recomputation of accuracy, per-group F1, and behavior
    vectors from raw records, written naively on purpose."""
    correct = sum(1 for r in trace if r.predicted == r.truth)
    acc = correct / len(trace)

    f1s = {}
    for group in (1, 2):
        rows = [r for r in trace if r.group_id == group]
        scores = []
        for route in ROUTES_BY_GROUP[group]:
            tp = fp = fn = 0
            for r in rows:
                if r.predicted == route and r.truth == route:
                    tp += 1
                elif r.predicted == route:
                    fp += 1
                elif r.truth == route:
                    fn += 1
            p = tp / (tp + fp) if tp + fp else 0.0
            rec = tp / (tp + fn) if tp + fn else 0.0
            scores.append(0.0 if p + rec == 0 else 2 * p * rec / (p + rec))
        f1s[group] = sum(scores) / 2

    vectors = {}
    agents = sorted({r.agent_id for r in trace})
    for a in agents:
        c_minus_n = c_minus_d = s_minus_n = s_minus_d = 0
        for r in trace:
            if r.agent_id != a or r.prev_truth is None:
                continue
            lost = r.prev_own_time > r.prev_alt_time
            switched = r.predicted != r.prev_truth
            if lost:
                c_minus_d += 1
                c_minus_n += switched
            else:
                s_minus_d += 1
                s_minus_n += not switched
        vectors[a] = (c_minus_n / c_minus_d if c_minus_d else None,
                      s_minus_n / s_minus_d if s_minus_d else None)
    return acc, f1s, vectors


class TestOracleEquivalence:
    def test_random_instances_match_brute_force(self):
        rng = random.Random(2024)
        for _ in range(100):
            trace = random_trace(rng)
            acc, f1s, vectors = brute_force_bundle(trace)
            assert accuracy(trace) == pytest.approx(acc, abs=1e-9)
            for group in (1, 2):
                assert group_f1(trace, group, ROUTES_BY_GROUP[group]) == pytest.approx(
                    f1s[group], abs=1e-9)
            by_agent = {}
            for r in trace:
                by_agent.setdefault(r.agent_id, []).append(r)
            for a, rows in by_agent.items():
                v = behavior_vector(rows)
                expected = vectors[a]
                for got, want in zip((v.c_minus, v.s_minus), expected):
                    if want is None:
                        assert got is None
                    else:
                        assert got == pytest.approx(want, abs=1e-9)

    def test_cosine_matches_numpy(self):
        rng = random.Random(7)
        for _ in range(200):
            v1 = (rng.uniform(0.001, 1), rng.uniform(0.001, 1))
            v2 = (rng.uniform(0.001, 1), rng.uniform(0.001, 1))
            reference = float(np.dot(v1, v2) / (np.linalg.norm(v1) * np.linalg.norm(v2)))
            assert cosine_similarity(v1, v2) == pytest.approx(reference, abs=1e-12)
