"""Online persona calibration against recorded human choices.

Each step works on a rolling window of recent periods: simulate the traveler
with the current persona under teacher forcing (memories rebuilt from the
recorded human history, never from the simulation's own outputs), turn every
mismatch into a textual critique, synthesize J candidate edit directions,
apply them, and keep the best candidate only when it strictly beats the
current persona on the same window. Accepted candidates are smoothed by
merging with a baseline persona summarized from a longer history window.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .env import display_time
from .gateway import GatewayError, LLMGateway, RoleRequest
from .prompts import render
from .traveler import (
    LONG_WINDOW,
    SHORT_WINDOW,
    DecisionContext,
    MemoryEntry,
    MemoryStore,
    Persona,
    PERSONA_MAX_CHARS,
    build_prompt,
    decide,
    render_choice_set,
    retrieve_long,
    retrieve_short,
    summarize_window,
)


class CalibrationError(RuntimeError):
    """Violated precondition or a provider reply that breaks the step contract."""


@dataclass(frozen=True)
class CalibrationConfig:
    t_w: int = 8          # rolling evaluation window
    t_m: int = 80         # smoothing window for the baseline persona
    j_candidates: int = 3
    loss: str = "zero_one"
    seed: int = 0
    stride: int = 1

    def __post_init__(self) -> None:
        if not (self.t_m > self.t_w >= 1):
            raise CalibrationError(f"need t_m > t_w >= 1, got t_w={self.t_w}, t_m={self.t_m}")
        if self.j_candidates < 1:
            raise CalibrationError("need at least one candidate direction")
        if self.loss != "zero_one":
            raise CalibrationError(f"unsupported loss {self.loss!r}")
        if self.stride < 1:
            raise CalibrationError("stride must be >= 1")


@dataclass(frozen=True)
class AgentSpec:
    """Identity plus retrieval settings for one traveler under calibration."""

    agent_id: int
    options: tuple[tuple[str, float], tuple[str, float]]
    t_s: int = SHORT_WINDOW
    t_l: int = LONG_WINDOW


@dataclass(frozen=True)
class TextFeedback:
    """Critique for one window point; empty exactly when the choice matched."""

    period: int
    simulated: str
    truth: str
    critique: str

    def __post_init__(self) -> None:
        if (self.critique == "") != (self.simulated == self.truth):
            raise CalibrationError(
                f"period {self.period}: critique must be empty iff simulated == truth")


@dataclass(frozen=True)
class UpdateDirection:
    index: int
    directive: str

    def __post_init__(self) -> None:
        if self.index < 1:
            raise CalibrationError("direction index must be >= 1")
        if not self.directive.strip():
            raise CalibrationError("direction directive must be non-empty")


@dataclass(frozen=True)
class CandidateResult:
    candidate: Persona
    window_loss: int
    per_period_outcomes: tuple[tuple[int, str, str], ...]

    def __post_init__(self) -> None:
        mismatches = sum(1 for _, sim, truth in self.per_period_outcomes if sim != truth)
        if self.window_loss != mismatches:
            raise CalibrationError("window_loss must equal the mismatch count")


@dataclass(frozen=True)
class WindowPoint:
    period: int
    short_text: str
    long_text: str
    context: DecisionContext
    truth: str


def window_points(entries: list[MemoryEntry], window: tuple[int, int],
                  agent: AgentSpec) -> list[WindowPoint]:
    """Teacher-forced prompt inputs for every period in the window.

    Memories come from the recorded human history only; period tau sees
    entries 1..tau-1 and is scored against the recorded choice at tau.
    """
    lo, hi = window
    if lo < 1 or hi < lo:
        raise CalibrationError(f"bad window [{lo}, {hi}]")
    if len(entries) < hi:
        raise CalibrationError(f"history has {len(entries)} periods, window needs {hi}")
    points = []
    for tau in range(lo, hi + 1):
        store = MemoryStore(entries=tuple(entries[:tau - 1]))
        short = retrieve_short(store, tau, agent.t_s)
        long = retrieve_long(store, tau, agent.t_l)
        context = DecisionContext(
            agent_id=agent.agent_id, period=tau, options=agent.options,
            prev_choice=entries[tau - 2].action if tau >= 2 else None)
        points.append(WindowPoint(
            period=tau,
            short_text=summarize_window(short),
            long_text=summarize_window(long, include_aggregates=True),
            context=context,
            truth=entries[tau - 1].action))
    return points


def window_loss(persona: Persona, entries: list[MemoryEntry], window: tuple[int, int],
                agent: AgentSpec, gateway: LLMGateway) -> CandidateResult:
    """Simulate the window with a persona and count 0-1 mismatches."""
    outcomes = []
    for point in window_points(entries, window, agent):
        bundle = build_prompt(persona, point.short_text, point.long_text, point.context)
        result = decide(bundle, gateway, point.context)
        outcomes.append((point.period, result.choice, point.truth))
    loss = sum(1 for _, sim, truth in outcomes if sim != truth)
    return CandidateResult(candidate=persona, window_loss=loss,
                           per_period_outcomes=tuple(outcomes))


def pseudo_gradient(persona: Persona, point: WindowPoint, simulated: str,
                    gateway: LLMGateway) -> TextFeedback:
    """Critique one window point; a correct prediction short-circuits without
    any provider call."""
    if simulated == point.truth:
        return TextFeedback(period=point.period, simulated=simulated,
                            truth=point.truth, critique="")
    variables = {
        "persona": persona.text,
        "period": str(point.period),
        "simulated": simulated,
        "truth": point.truth,
        "short_memory": point.short_text,
        "long_memory": point.long_text,
        "choice_set": render_choice_set(point.context.options),
    }
    system_text, user_text = render("gradient", variables)
    critique = gateway.complete(RoleRequest(
        role="gradient", messages=(("system", system_text), ("user", user_text)))).strip()
    if not critique:
        raise CalibrationError(
            f"provider returned an empty critique for mismatched period {point.period}")
    return TextFeedback(period=point.period, simulated=simulated,
                        truth=point.truth, critique=critique)


def synthesize_directions(feedbacks: list[TextFeedback], j: int,
                          gateway: LLMGateway) -> list[UpdateDirection]:
    """One integrator call over the non-null critiques, yielding J directions."""
    non_null = [f for f in feedbacks if f.critique]
    if not non_null:
        raise CalibrationError("all feedbacks are null; nothing to synthesize")
    critiques = "\n\n".join(f"[period {f.period}]\n{f.critique}" for f in non_null)
    system_text, user_text = render("integrate", {
        "critiques": critiques, "direction_count": str(j)})
    reply = gateway.complete(RoleRequest(
        role="integrate", messages=(("system", system_text), ("user", user_text))))
    directions = []
    for line in reply.splitlines():
        line = line.strip()
        if not line:
            continue
        number, _, rest = line.partition(".")
        if number.strip().isdigit() and rest.strip():
            directions.append(UpdateDirection(index=len(directions) + 1,
                                              directive=rest.strip()))
    if len(directions) != j:
        raise CalibrationError(f"expected {j} update directions, parsed {len(directions)}")
    return directions


def apply_edit(persona: Persona, direction: UpdateDirection, gateway: LLMGateway,
               options: tuple[tuple[str, float], tuple[str, float]]) -> Persona | None:
    """Ask the editor role for a candidate persona; None means rejected
    (empty reply or over the length cap)."""
    system_text, user_text = render("edit", {
        "persona": persona.text,
        "directive": direction.directive,
        "choice_set": render_choice_set(options),
    })
    text = gateway.complete(RoleRequest(
        role="edit", messages=(("system", system_text), ("user", user_text)))).strip()
    if not text or len(text) > PERSONA_MAX_CHARS:
        return None
    return Persona(text=text, version=persona.version + 1, parent_version=persona.version)


def render_history(entries: list[MemoryEntry], t_s: int, t_l: int) -> str:
    """Human history for the summarizer role, including the retrieval windows."""
    lines = [f"Retrieval windows: short={t_s} periods, long={t_l} periods"]
    for e in entries:
        lines.append(f"- period {e.period}: chose {e.action}, travel time "
                     f"{display_time(e.own_time):.1f} min, group split "
                     f"{e.group_counts[0]} expressway / {e.group_counts[1]} local")
    return "\n".join(lines)


def synthesize_baseline(entries: list[MemoryEntry], window: tuple[int, int],
                        agent: AgentSpec, gateway: LLMGateway) -> str:
    lo, hi = window
    subset = [e for e in entries if lo <= e.period <= hi]
    system_text, user_text = render("summarize", {
        "history": render_history(subset, agent.t_s, agent.t_l),
        "choice_set": render_choice_set(agent.options),
    })
    return gateway.complete(RoleRequest(
        role="summarize", messages=(("system", system_text), ("user", user_text)))).strip()


def merge_personas(candidate: Persona, baseline_text: str,
                   gateway: LLMGateway) -> str:
    system_text, user_text = render("merge", {
        "candidate": candidate.text, "baseline": baseline_text})
    return gateway.complete(RoleRequest(
        role="merge", messages=(("system", system_text), ("user", user_text)))).strip()


@dataclass
class SelectionOutcome:
    persona: Persona
    accepted: bool
    selected_index: int | None = None
    merged_window_loss: int | None = None
    smoothing_failed: bool = False


def select_and_smooth(current: CandidateResult, evaluated: list[CandidateResult | None],
                      entries: list[MemoryEntry], config: CalibrationConfig,
                      agent: AgentSpec, gateway: LLMGateway, t: int) -> SelectionOutcome:
    """Loss-gated update: keep the best candidate only if it strictly beats the
    current persona, then smooth it toward a long-window baseline persona.

    The merged persona is stored even if merging changes the window loss; the
    re-evaluated loss is reported for the log, not re-gated. A provider failure
    during smoothing aborts the update and keeps the current persona.
    """
    if not evaluated:
        raise CalibrationError("no candidates to select from")
    losses = [math.inf if r is None else r.window_loss for r in evaluated]
    best_index = min(range(len(losses)), key=lambda i: (losses[i], i))
    if losses[best_index] >= current.window_loss:
        return SelectionOutcome(persona=current.candidate, accepted=False)
    best = evaluated[best_index]
    assert best is not None
    try:
        baseline_text = synthesize_baseline(
            entries, (max(1, t - config.t_m + 1), t), agent, gateway)
        merged_text = merge_personas(best.candidate, baseline_text, gateway)
    except GatewayError:
        return SelectionOutcome(persona=current.candidate, accepted=False,
                                selected_index=best_index + 1, smoothing_failed=True)
    if not merged_text or len(merged_text) > PERSONA_MAX_CHARS:
        return SelectionOutcome(persona=current.candidate, accepted=False,
                                selected_index=best_index + 1, smoothing_failed=True)
    merged = Persona(text=merged_text, version=current.candidate.version + 1,
                     parent_version=current.candidate.version)
    merged_result = window_loss(merged, entries, (t - config.t_w + 1, t), agent, gateway)
    return SelectionOutcome(persona=merged, accepted=True, selected_index=best_index + 1,
                            merged_window_loss=merged_result.window_loss)


@dataclass
class CalibrationRecord:
    """One JSON-serializable line per (agent, step) for the run log."""

    agent: int
    t: int
    current_loss: int
    feedbacks: list[dict]
    directions: list[str]
    candidate_losses: list[int | None]
    accepted: bool
    selected_index: int | None
    merged_window_loss: int | None
    short_circuit: bool
    smoothing_failed: bool
    persona_version_before: int
    persona_version_after: int

    def to_json(self) -> dict:
        return {
            "agent": self.agent, "t": self.t, "current_loss": self.current_loss,
            "feedbacks": self.feedbacks, "directions": self.directions,
            "candidate_losses": self.candidate_losses, "accepted": self.accepted,
            "selected_index": self.selected_index,
            "merged_window_loss": self.merged_window_loss,
            "short_circuit": self.short_circuit,
            "smoothing_failed": self.smoothing_failed,
            "persona_version_before": self.persona_version_before,
            "persona_version_after": self.persona_version_after,
        }


def calibrate_step(agent: AgentSpec, entries: list[MemoryEntry], current: Persona,
                   config: CalibrationConfig, gateway: LLMGateway, t: int,
                   record_sink=None) -> Persona:
    """Run one full calibration step at period t and return the next persona.

    A zero-loss evaluation short-circuits: the persona is returned unchanged
    and no provider role beyond the decision simulation is invoked.
    """
    if t < config.t_w:
        raise CalibrationError(f"need at least t_w={config.t_w} periods, got t={t}")
    window = (t - config.t_w + 1, t)
    points = window_points(entries, window, agent)
    current_result = window_loss(current, entries, window, agent, gateway)

    record = CalibrationRecord(
        agent=agent.agent_id, t=t, current_loss=current_result.window_loss,
        feedbacks=[], directions=[], candidate_losses=[], accepted=False,
        selected_index=None, merged_window_loss=None, short_circuit=False,
        smoothing_failed=False, persona_version_before=current.version,
        persona_version_after=current.version)

    if current_result.window_loss == 0:
        record.short_circuit = True
        if record_sink is not None:
            record_sink(record)
        return current

    simulated_by_period = {tau: sim for tau, sim, _ in current_result.per_period_outcomes}
    feedbacks = [pseudo_gradient(current, point, simulated_by_period[point.period], gateway)
                 for point in points]
    directions = synthesize_directions(feedbacks, config.j_candidates, gateway)

    evaluated: list[CandidateResult | None] = []
    for direction in directions:
        candidate = apply_edit(current, direction, gateway, agent.options)
        if candidate is None:
            evaluated.append(None)
        else:
            evaluated.append(window_loss(candidate, entries, window, agent, gateway))

    outcome = select_and_smooth(current_result, evaluated, entries, config, agent, gateway, t)

    record.feedbacks = [{"period": f.period, "simulated": f.simulated,
                         "truth": f.truth, "critique": f.critique} for f in feedbacks]
    record.directions = [d.directive for d in directions]
    record.candidate_losses = [None if r is None else r.window_loss for r in evaluated]
    record.accepted = outcome.accepted
    record.selected_index = outcome.selected_index
    record.merged_window_loss = outcome.merged_window_loss
    record.smoothing_failed = outcome.smoothing_failed
    record.persona_version_after = outcome.persona.version
    if record_sink is not None:
        record_sink(record)
    return outcome.persona


INITIAL_SCRIPTED_RULE = "PREFER NONE UNLESS last(short) > 500"


def initial_persona(agent: AgentSpec, entries: list[MemoryEntry],
                    config: CalibrationConfig, gateway: LLMGateway) -> Persona:
    """Starting persona: summarized from the first t_w periods of history on
    the http backend; the fixed neutral rule in scripted mode."""
    if gateway.config.backend == "scripted":
        return Persona(text=INITIAL_SCRIPTED_RULE, version=0, parent_version=None)
    text = synthesize_baseline(entries, (1, config.t_w), agent, gateway)
    if not text:
        raise CalibrationError("summarizer returned an empty initial persona")
    return Persona(text=text, version=0, parent_version=None)
