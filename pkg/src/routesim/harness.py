"""Experiment orchestration: cohort generation, calibration runs, and the two
simulation modes.

Periods act as global barriers: all decisions for a period are collected,
then the environment advances, then every model receives its feedback. Agents
are processed in sorted id order so scripted runs replay byte-identically.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .calibration import (
    AgentSpec,
    CalibrationConfig,
    calibrate_step,
    initial_persona,
)
from .env import ROUTE_IDS, Scenario, SystemState, observe, update_state
from .gateway import GatewayError, LLMGateway
from .metrics import ChoiceRecord, ChoiceTrace, FlowSeries
from .models import ArchetypeModel, NoisyModel, RuleModel
from .seeding import derive_rng
from .trace import HumanTrace, build_trace
from .traveler import Persona


class HarnessError(RuntimeError):
    """Orchestration-level failures (bad ranges, missing inputs)."""


class RunLog:
    """Append-only JSONL event log; deterministic byte-for-byte in scripted mode."""

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path is not None else None
        self.records: list[dict] = []
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.write_text("", encoding="utf-8")

    def write(self, kind: str, payload: dict) -> None:
        record = {"kind": kind, **payload}
        self.records.append(record)
        if self.path is not None:
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(record, sort_keys=True) + "\n")


def prompt_digest(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


def agent_spec(scenario: Scenario, traveler_id: int, t_s: int = 4, t_l: int = 24) -> AgentSpec:
    routes = scenario.choice_routes(traveler_id)
    options = tuple((r.route_id, r.t0) for r in routes)
    return AgentSpec(agent_id=traveler_id, options=options, t_s=t_s, t_l=t_l)


# -- synthetic cohorts ------------------------------------------------------

@dataclass(frozen=True)
class SyntheticTravelerSpec:
    traveler_id: int
    archetype: str | None = None
    rule: str | None = None
    rule2: str | None = None
    switch_period: int | None = None
    noise: float = 0.0
    initial_choice: str | None = None

    def __post_init__(self) -> None:
        if (self.archetype is None) == (self.rule is None):
            raise HarnessError(
                f"traveler {self.traveler_id}: specify exactly one of archetype or rule")


@dataclass(frozen=True)
class SyntheticCohortSpec:
    travelers: tuple[SyntheticTravelerSpec, ...]
    periods: int
    seed: int = 0
    t_s: int = 4
    t_l: int = 24

    @staticmethod
    def from_json(data: dict) -> "SyntheticCohortSpec":
        travelers = tuple(SyntheticTravelerSpec(
            traveler_id=int(t["traveler_id"]),
            archetype=t.get("archetype"),
            rule=t.get("rule"),
            rule2=t.get("rule2"),
            switch_period=t.get("switch_period"),
            noise=float(t.get("noise", 0.0)),
            initial_choice=t.get("initial_choice"),
        ) for t in data["travelers"])
        return SyntheticCohortSpec(travelers=travelers, periods=int(data["periods"]),
                                   seed=int(data.get("seed", 0)),
                                   t_s=int(data.get("t_s", 4)), t_l=int(data.get("t_l", 24)))


def build_synthetic_models(spec: SyntheticCohortSpec, scenario: Scenario) -> dict[int, object]:
    models: dict[int, object] = {}
    for traveler in spec.travelers:
        agent = agent_spec(scenario, traveler.traveler_id, spec.t_s, spec.t_l)
        if traveler.archetype is not None:
            inner = ArchetypeModel(agent, traveler.archetype,
                                   derive_rng(spec.seed, "archetype", traveler.traveler_id),
                                   initial_choice=traveler.initial_choice)
        else:
            inner = RuleModel(agent, traveler.rule, traveler.rule2,
                              traveler.switch_period, traveler.initial_choice)
        if traveler.noise > 0.0:
            inner = NoisyModel(inner, traveler.noise,
                               derive_rng(spec.seed, "noise", traveler.traveler_id))
        models[traveler.traveler_id] = inner
    return models


def generate_synthetic_cohort(spec: SyntheticCohortSpec, scenario: Scenario) -> HumanTrace:
    """Run the cohort closed-loop and package the result as a loadable trace."""
    if {t.traveler_id for t in spec.travelers} != set(scenario.traveler_ids):
        raise HarnessError("cohort travelers must exactly cover the scenario's travelers")
    models = build_synthetic_models(spec, scenario)
    choices: dict[int, dict[int, str]] = {}
    prev: SystemState | None = None
    for t in range(1, spec.periods + 1):
        decided = {a: models[a].choose(t) for a in sorted(models)}
        state = update_state(scenario, decided, prev)
        choices[t] = decided
        for a in sorted(models):
            obs = observe(scenario, state, a, decided[a])
            models[a].observe_outcome(decided[a], obs, state)
        prev = state
    return build_trace(scenario, choices)


# -- calibration runs ---------------------------------------------------------

@dataclass
class PersonaStore:
    """Full persona lineage per agent; the last entry is the live persona."""

    history: dict[int, list[Persona]] = field(default_factory=dict)

    def current(self, agent_id: int) -> Persona:
        return self.history[agent_id][-1]

    def to_json(self) -> dict:
        return {str(agent): [
            {"version": p.version, "parent_version": p.parent_version, "text": p.text}
            for p in personas]
            for agent, personas in sorted(self.history.items())}

    @staticmethod
    def from_json(data: dict) -> "PersonaStore":
        history = {int(agent): [Persona(text=p["text"], version=p["version"],
                                        parent_version=p.get("parent_version"))
                                for p in personas]
                   for agent, personas in data.items()}
        return PersonaStore(history=history)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n",
                              encoding="utf-8")

    @staticmethod
    def load(path: str | Path) -> "PersonaStore":
        return PersonaStore.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


def run_calibration(trace: HumanTrace, config: CalibrationConfig, gateway: LLMGateway,
                    train_range: tuple[int, int], log: RunLog | None = None,
                    t_s: int = 4, t_l: int = 24) -> PersonaStore:
    """Calibrate every agent over the training range.

    Steps run at t = t_w, t_w + stride, ... within the range; a provider
    failure aborts only the failing agent, the rest proceed.
    """
    start, end = train_range
    if end > trace.periods:
        raise HarnessError(f"training range ends at {end} but the trace has "
                           f"{trace.periods} periods")
    store = PersonaStore()
    entries_by_agent = {a: trace.memory_entries(a) for a in trace.scenario.traveler_ids}
    failed: set[int] = set()
    for a in trace.scenario.traveler_ids:
        agent = agent_spec(trace.scenario, a, t_s, t_l)
        store.history[a] = [initial_persona(agent, entries_by_agent[a], config, gateway)]
    first_step = max(config.t_w, start)
    for t in range(first_step, end + 1, config.stride):
        for a in trace.scenario.traveler_ids:
            if a in failed:
                continue
            agent = agent_spec(trace.scenario, a, t_s, t_l)
            current = store.current(a)
            sink = None
            if log is not None:
                sink = lambda record: log.write("calibration", record.to_json())
            try:
                updated = calibrate_step(agent, entries_by_agent[a], current,
                                         config, gateway, t, record_sink=sink)
            except GatewayError as exc:
                failed.add(a)
                if log is not None:
                    log.write("agent_failure", {"agent": a, "t": t, "error": str(exc)})
                continue
            if updated.version != current.version:
                store.history[a].append(updated)
                if log is not None:
                    log.write("persona", {"agent": a, "t": t, "version": updated.version,
                                          "parent_version": updated.parent_version})
    return store


# -- simulation ---------------------------------------------------------------

def replay_history(models: dict[int, object], trace: HumanTrace,
                   through_period: int) -> None:
    """Feed recorded history into the models' memories (teacher forcing)."""
    for t in range(1, through_period + 1):
        state = trace.state(t)
        for a in sorted(models):
            action = trace.choice(t, a)
            obs = trace.observation(t, a)
            models[a].observe_outcome(action, obs, state)


def _prior_context(trace: HumanTrace, t: int, a: int) -> tuple[str | None, float | None, float | None]:
    if t - 1 < 1:
        return (None, None, None)
    prev_state = trace.state(t - 1)
    prev_choice = trace.choice(t - 1, a)
    group = trace.scenario.group_of(a)
    alt = group.choice_set[1] if prev_choice == group.choice_set[0] else group.choice_set[0]
    return (prev_choice, prev_state.time_by_route[prev_choice], prev_state.time_by_route[alt])


def simulate_controlled(models: dict[int, object], trace: HumanTrace,
                        test_range: tuple[int, int],
                        log: RunLog | None = None) -> tuple[ChoiceTrace, FlowSeries]:
    """Teacher-forced prediction: every period each model predicts, then its
    memory is advanced with the recorded ground truth, never with its own
    output. Returns the per-cell choice records and the simulated flows."""
    start, end = test_range
    if end > trace.periods:
        raise HarnessError(f"test range ends at {end} but the trace has "
                           f"{trace.periods} periods")
    replay_history(models, trace, start - 1)
    records: ChoiceTrace = []
    flows: FlowSeries = {}
    for t in range(start, end + 1):
        volumes = {rid: 0.0 for rid in ROUTE_IDS}
        for a in sorted(models):
            predicted = models[a].choose(t)
            group = trace.scenario.group_of(a)
            if predicted not in group.choice_set:
                raise HarnessError(f"model for agent {a} predicted {predicted!r}, "
                                   f"outside {group.choice_set}")
            prev_choice, prev_own, prev_alt = _prior_context(trace, t, a)
            records.append(ChoiceRecord(
                agent_id=a, group_id=group.group_id, period=t,
                predicted=predicted, truth=trace.choice(t, a),
                prev_truth=prev_choice, prev_own_time=prev_own, prev_alt_time=prev_alt))
            volumes[predicted] += 1.0
            if log is not None:
                log.write("decision", {"agent": a, "period": t, "mode": "controlled",
                                       "predicted": predicted,
                                       "truth": trace.choice(t, a)})
        flows[t] = tuple(volumes[rid] for rid in ROUTE_IDS)
        state = trace.state(t)
        for a in sorted(models):
            models[a].observe_outcome(trace.choice(t, a), trace.observation(t, a), state)
    return records, flows


def simulate_closed_loop(models: dict[int, object], scenario: Scenario,
                         start: int, end: int, replay_trace: HumanTrace | None = None,
                         log: RunLog | None = None) -> tuple[FlowSeries, dict[int, dict[int, str]]]:
    """Full feedback loop: decisions update the environment, and models learn
    only from what they experience. Optionally seeds memories by replaying a
    recorded trace for the periods before `start`."""
    if set(models) != set(scenario.traveler_ids):
        raise HarnessError("closed-loop models must cover every traveler")
    prev: SystemState | None = None
    if replay_trace is not None:
        if start != replay_trace.periods + 1 and start - 1 > replay_trace.periods:
            raise HarnessError("replay trace does not reach the start period")
        replay_history(models, replay_trace, start - 1)
        prev = replay_trace.state(start - 1) if start > 1 else None
    elif start != 1:
        raise HarnessError("closed-loop runs without a replay trace must start at period 1")
    flows: FlowSeries = {}
    choices: dict[int, dict[int, str]] = {}
    for t in range(start, end + 1):
        decided = {a: models[a].choose(t) for a in sorted(models)}
        state = update_state(scenario, decided, prev)
        flows[t] = tuple(float(state.volume_by_route[rid]) for rid in ROUTE_IDS)
        choices[t] = decided
        for a in sorted(models):
            obs = observe(scenario, state, a, decided[a])
            models[a].observe_outcome(decided[a], obs, state)
            if log is not None:
                log.write("decision", {"agent": a, "period": t, "mode": "closed",
                                       "predicted": decided[a]})
        prev = state
    return flows, choices
