import json

import pytest

from routesim import dsl
from routesim.calibration import (
    AgentSpec,
    CalibrationConfig,
    CalibrationError,
    CandidateResult,
    TextFeedback,
    UpdateDirection,
    apply_edit,
    calibrate_step,
    pseudo_gradient,
    select_and_smooth,
    synthesize_directions,
    window_loss,
    window_points,
)
from routesim.env import display_time
from routesim.gateway import LLMGateway, ProviderConfig
from routesim.traveler import MemoryEntry, Persona

OPTIONS = (("expressway", 5.0), ("local1", 15.0))
AGENT = AgentSpec(agent_id=1, options=OPTIONS)


def scripted_gateway(tmp_path=None):
    cache = str(tmp_path / "cache") if tmp_path else None
    return LLMGateway(ProviderConfig(backend="scripted", seed=11, cache_dir=cache))


def rule_history(rule_text, periods, time_of):
    """History of a synthetic human who follows `rule_text` over a scripted
    time schedule; times are stored at display precision."""
    rule = dsl.parse_rule(rule_text)
    entries = []
    trips = []
    prev = None
    for t in range(1, periods + 1):
        short = [(r, v) for (p, r, v) in trips if p >= max(1, t - AGENT.t_s)]
        long = [(r, v) for (p, r, v) in trips if p >= max(1, t - AGENT.t_l)]
        choice = dsl.eval_rule(rule, short, long, prev, OPTIONS)
        time = display_time(time_of(t, choice))
        entries.append(MemoryEntry(period=t, action=choice, own_time=time,
                                   group_counts=(5, 4)))
        trips.append((t, choice, time))
        prev = choice
    return entries


def sawtooth(t, choice):
    """Both routes spike above 20 on their own cadence, so a >20 switcher
    keeps moving instead of settling."""
    if choice == "expressway":
        return 24.0 if t % 3 == 0 else 15.0
    return 22.0 if t % 4 == 0 else 16.0


SWITCHY_RULE = "PREFER NONE UNLESS last(short) > 20 STAY_BIAS strong"
ALWAYS_STAY = "PREFER NONE UNLESS last(short) > 500 STAY_BIAS strong"


class TestWindowLoss:
    def test_perfect_imitation_has_zero_loss(self, tmp_path):
        entries = rule_history(SWITCHY_RULE, 20, sawtooth)
        result = window_loss(Persona(text=SWITCHY_RULE), entries, (13, 20), AGENT,
                             scripted_gateway(tmp_path))
        assert result.window_loss == 0

    def test_counts_mismatches_by_construction(self, tmp_path):
        entries = rule_history(SWITCHY_RULE, 20, sawtooth)
        # an always-expressway persona misses every local1 day in the window
        result = window_loss(Persona(text="PREFER expressway UNLESS last(short) > 500"),
                             entries, (13, 20), AGENT, scripted_gateway(tmp_path))
        local_days = sum(1 for e in entries[12:20] if e.action == "local1")
        assert local_days > 0
        assert result.window_loss == local_days

    def test_window_of_eight_has_eight_outcomes(self, tmp_path):
        entries = rule_history(SWITCHY_RULE, 20, sawtooth)
        result = window_loss(Persona(text=SWITCHY_RULE), entries, (13, 20), AGENT,
                             scripted_gateway(tmp_path))
        assert len(result.per_period_outcomes) == 8

    def test_insufficient_history_rejected(self, tmp_path):
        entries = rule_history(SWITCHY_RULE, 10, sawtooth)
        with pytest.raises(CalibrationError, match="history"):
            window_loss(Persona(text=SWITCHY_RULE), entries, (5, 12), AGENT,
                        scripted_gateway(tmp_path))


class TestPseudoGradient:
    def test_match_returns_null_without_calls(self, tmp_path):
        entries = rule_history(SWITCHY_RULE, 12, sawtooth)
        gateway = scripted_gateway(tmp_path)
        point = window_points(entries, (12, 12), AGENT)[0]
        feedback = pseudo_gradient(Persona(text=SWITCHY_RULE), point, point.truth, gateway)
        assert feedback.critique == ""
        assert gateway.calls_by_role["gradient"] == 0

    def test_mismatch_quotes_persona(self, tmp_path):
        entries = rule_history(SWITCHY_RULE, 12, sawtooth)
        gateway = scripted_gateway(tmp_path)
        point = window_points(entries, (12, 12), AGENT)[0]
        wrong = "local1" if point.truth == "expressway" else "expressway"
        feedback = pseudo_gradient(Persona(text=ALWAYS_STAY), point, wrong, gateway)
        assert ALWAYS_STAY in feedback.critique

    def test_invariant_enforced(self):
        with pytest.raises(CalibrationError):
            TextFeedback(period=1, simulated="expressway", truth="expressway",
                         critique="spurious")
        with pytest.raises(CalibrationError):
            TextFeedback(period=1, simulated="expressway", truth="local1", critique="")


class TestSynthesizeDirections:
    def make_feedbacks(self, tmp_path):
        entries = rule_history(SWITCHY_RULE, 12, sawtooth)
        gateway = scripted_gateway(tmp_path)
        persona = Persona(text=ALWAYS_STAY)
        result = window_loss(persona, entries, (5, 12), AGENT, gateway)
        points = window_points(entries, (5, 12), AGENT)
        sim = {tau: s for tau, s, _ in result.per_period_outcomes}
        return [pseudo_gradient(persona, p, sim[p.period], gateway) for p in points], gateway

    def test_exactly_j_distinct(self, tmp_path):
        feedbacks, gateway = self.make_feedbacks(tmp_path)
        assert any(f.critique for f in feedbacks)
        directions = synthesize_directions(feedbacks, 3, gateway)
        assert [d.index for d in directions] == [1, 2, 3]
        assert len({d.directive for d in directions}) == 3

    def test_degenerate_single_direction(self, tmp_path):
        feedbacks, gateway = self.make_feedbacks(tmp_path)
        directions = synthesize_directions(feedbacks, 1, gateway)
        assert len(directions) == 1

    def test_all_null_rejected(self, tmp_path):
        gateway = scripted_gateway(tmp_path)
        feedbacks = [TextFeedback(period=1, simulated="expressway",
                                  truth="expressway", critique="")]
        with pytest.raises(CalibrationError, match="null"):
            synthesize_directions(feedbacks, 3, gateway)


class TestApplyEdit:
    def test_no_op_identity(self, tmp_path):
        persona = Persona(text="PREFER expressway UNLESS mean(short) > 20", version=4)
        out = apply_edit(persona, UpdateDirection(1, "Apply NO-OP: control."),
                         scripted_gateway(tmp_path), OPTIONS)
        assert out.text == persona.text
        assert out.version == 5
        assert out.parent_version == 4

    def test_flip_default(self, tmp_path):
        persona = Persona(text="PREFER expressway UNLESS mean(short) > 20")
        out = apply_edit(persona, UpdateDirection(1, "Apply FLIP_DEFAULT: other route."),
                         scripted_gateway(tmp_path), OPTIONS)
        assert out.text == "PREFER local1 UNLESS mean(short) > 20"

    def test_empty_or_overlong_rejected(self):
        class EchoGateway:
            def __init__(self, reply):
                self.reply = reply

            def complete(self, request):
                return self.reply

        persona = Persona(text="PREFER expressway UNLESS mean(short) > 20")
        direction = UpdateDirection(1, "Apply NO-OP: control.")
        assert apply_edit(persona, direction, EchoGateway(""), OPTIONS) is None
        assert apply_edit(persona, direction, EchoGateway("x" * 4001), OPTIONS) is None


def fake_result(persona, losses):
    # outcomes with exactly `losses` mismatches over an 8-point window
    outcomes = []
    for i in range(8):
        sim = "local1" if i < losses else "expressway"
        outcomes.append((i + 1, sim, "expressway"))
    return CandidateResult(candidate=persona, window_loss=losses,
                           per_period_outcomes=tuple(outcomes))


class TestSelectAndSmooth:
    def setup_entries(self):
        return rule_history(SWITCHY_RULE, 12, sawtooth)

    def test_no_improvement_keeps_persona(self, tmp_path):
        gateway = scripted_gateway(tmp_path)
        entries = self.setup_entries()
        current = fake_result(Persona(text=ALWAYS_STAY, version=2), 2)
        candidates = [fake_result(Persona(text=SWITCHY_RULE, version=3), 2),
                      fake_result(Persona(text=SWITCHY_RULE, version=3), 5)]
        outcome = select_and_smooth(current, candidates, entries,
                                    CalibrationConfig(), AGENT, gateway, t=12)
        assert not outcome.accepted
        assert outcome.persona.text == ALWAYS_STAY
        assert outcome.persona.version == 2

    def test_argmin_gate_and_smoothing(self, tmp_path):
        gateway = scripted_gateway(tmp_path)
        entries = self.setup_entries()
        current = fake_result(Persona(text=ALWAYS_STAY, version=0), 4)
        c1 = fake_result(Persona(text="PREFER NONE UNLESS last(short) > 30 STAY_BIAS strong",
                                 version=1, parent_version=0), 3)
        c2 = fake_result(Persona(text="PREFER NONE UNLESS last(short) > 20 STAY_BIAS strong",
                                 version=1, parent_version=0), 1)
        c3 = fake_result(Persona(text="PREFER NONE UNLESS last(short) > 10 STAY_BIAS strong",
                                 version=1, parent_version=0), 2)
        outcome = select_and_smooth(current, [c1, c2, c3], entries,
                                    CalibrationConfig(), AGENT, gateway, t=12)
        assert outcome.accepted
        assert outcome.selected_index == 2
        merged = dsl.parse_rule(outcome.persona.text)
        fitted = dsl.fit_rule([(e.period, e.action, display_time(e.own_time))
                               for e in entries], OPTIONS, AGENT.t_s, AGENT.t_l)
        assert merged.threshold == (20.0 + fitted.threshold) / 2
        assert outcome.persona.version == 1
        assert outcome.merged_window_loss is not None

    def test_tie_breaks_to_lowest_index(self, tmp_path):
        gateway = scripted_gateway(tmp_path)
        entries = self.setup_entries()
        current = fake_result(Persona(text=ALWAYS_STAY, version=0), 3)
        c1 = fake_result(Persona(text="PREFER NONE UNLESS last(short) > 22 STAY_BIAS strong",
                                 version=1), 2)
        c2 = fake_result(Persona(text="PREFER NONE UNLESS last(short) > 19 STAY_BIAS strong",
                                 version=1), 2)
        outcome = select_and_smooth(current, [c1, c2], entries,
                                    CalibrationConfig(), AGENT, gateway, t=12)
        assert outcome.selected_index == 1

    def test_rejected_candidates_treated_as_infinite_loss(self, tmp_path):
        gateway = scripted_gateway(tmp_path)
        entries = self.setup_entries()
        current = fake_result(Persona(text=ALWAYS_STAY, version=0), 1)
        outcome = select_and_smooth(current, [None, None], entries,
                                    CalibrationConfig(), AGENT, gateway, t=12)
        assert not outcome.accepted

    def test_smoothing_failure_aborts_update(self):
        from routesim.gateway import TransportError

        class FlakyGateway:
            """Summarize calls fail; everything else unused."""

            def complete(self, request):
                raise TransportError("summarizer down")

        entries = self.setup_entries()
        current = fake_result(Persona(text=ALWAYS_STAY, version=0), 4)
        better = fake_result(Persona(text=SWITCHY_RULE, version=1), 1)
        outcome = select_and_smooth(current, [better], entries,
                                    CalibrationConfig(), AGENT, FlakyGateway(), t=12)
        assert not outcome.accepted
        assert outcome.smoothing_failed
        assert outcome.persona.text == ALWAYS_STAY


class TestCalibrateStep:
    def test_zero_loss_short_circuits_without_extra_calls(self, tmp_path):
        entries = rule_history(SWITCHY_RULE, 20, sawtooth)
        gateway = scripted_gateway(tmp_path)
        records = []
        persona = Persona(text=SWITCHY_RULE, version=0)
        for t in range(8, 20):
            persona = calibrate_step(AGENT, entries, persona, CalibrationConfig(),
                                     gateway, t, record_sink=records.append)
        assert persona.text == SWITCHY_RULE
        assert persona.version == 0
        assert all(r.short_circuit for r in records)
        for role in ("gradient", "integrate", "edit", "summarize", "merge"):
            assert gateway.calls_by_role[role] == 0

    def test_converges_to_switch_rule_within_five_steps(self, tmp_path):
        # a human who leaves any route after a >20-minute day, simulated from
        # an "always stay" start: the edit space search must reach zero loss
        entries = rule_history(SWITCHY_RULE, 40, sawtooth)
        gateway = scripted_gateway(tmp_path)
        persona = Persona(text=ALWAYS_STAY, version=0)
        config = CalibrationConfig(t_w=8, t_m=24)
        records = []
        accepted_steps = 0
        final_loss = None
        for t in range(8, 14):
            persona = calibrate_step(AGENT, entries, persona, config, gateway, t,
                                     record_sink=records.append)
        for record in records:
            if record.accepted:
                accepted_steps += 1
                assert min(l for l in record.candidate_losses if l is not None) \
                    < record.current_loss
        final = window_loss(persona, entries, (33, 40), AGENT, gateway)
        assert accepted_steps >= 1
        assert final.window_loss == 0

    def test_call_budget_within_structural_bound(self, tmp_path):
        entries = rule_history(SWITCHY_RULE, 20, sawtooth)
        gateway = scripted_gateway(tmp_path)  # cache on: count complete() calls per step
        persona = Persona(text=ALWAYS_STAY, version=0)
        config = CalibrationConfig(t_w=8, t_m=12, j_candidates=3)
        before = dict(gateway.calls_by_role)
        record_holder = []
        calibrate_step(AGENT, entries, persona, config, gateway, 12,
                       record_sink=record_holder.append)
        called = {role: gateway.calls_by_role[role] - before[role]
                  for role in gateway.calls_by_role}
        record = record_holder[0]
        t_w, j = config.t_w, config.j_candidates
        loss = record.current_loss
        accepted_extra = t_w if record.accepted else 0
        # step 1 + re-evals of j candidates (+ merged persona when accepted)
        assert called["decide"] <= t_w + j * t_w + accepted_extra
        assert called["gradient"] == loss
        assert called["integrate"] == 1
        assert called["edit"] == j
        assert called["summarize"] + called["merge"] == (2 if record.accepted else 0)

    def test_records_are_json_serializable(self, tmp_path):
        entries = rule_history(SWITCHY_RULE, 20, sawtooth)
        gateway = scripted_gateway(tmp_path)
        records = []
        calibrate_step(AGENT, entries, Persona(text=ALWAYS_STAY), CalibrationConfig(t_m=16),
                       gateway, 12, record_sink=records.append)
        payload = json.dumps([r.to_json() for r in records])
        assert "current_loss" in payload
