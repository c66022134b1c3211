"""One simulated traveler: memory, dual-window retrieval, prompts, decisions.

A traveler keeps an append-only memory of (choice, experienced time, displayed
group counts) per period. Before each decision, two windows are retrieved: a
short one listing raw recent trips and a long one that also carries per-route
aggregates. Both are rendered into a prompt together with the persona, and the
language-model reply is parsed back into a route choice with a bounded retry
and a deterministic fallback.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field

from .env import Observation, display_time
from .gateway import LLMGateway, RoleRequest
from .prompts import NO_HISTORY_TEXT, render

SHORT_WINDOW = 4
LONG_WINDOW = 24
PERSONA_MAX_CHARS = 4000
DECIDE_RETRIES = 2

DECISION_SCHEMA = ("choice", "reason")


class TravelerError(ValueError):
    """Memory ordering violation or invalid persona/prompt input."""


@dataclass(frozen=True)
class MemoryEntry:
    period: int
    action: str
    own_time: float
    group_counts: tuple[int, int]


@dataclass(frozen=True)
class MemoryStore:
    """Append-only trip history; perceive() returns an extended copy."""

    entries: tuple[MemoryEntry, ...] = ()

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def last_period(self) -> int:
        return self.entries[-1].period if self.entries else 0


def perceive(store: MemoryStore, action: str, obs: Observation) -> MemoryStore:
    """Append one period's experience; periods must arrive strictly in order."""
    expected = store.last_period + 1
    if obs.period != expected:
        raise TravelerError(f"out-of-order period {obs.period}; expected {expected}")
    entry = MemoryEntry(period=obs.period, action=action,
                        own_time=obs.own_time, group_counts=obs.group_counts)
    return MemoryStore(entries=store.entries + (entry,))


def retrieve_short(store: MemoryStore, t: int, t_s: int = SHORT_WINDOW) -> list[MemoryEntry]:
    """Entries with period in [max(1, t - t_s), t - 1]; empty at t = 1."""
    lo = max(1, t - t_s)
    return [e for e in store.entries if lo <= e.period <= t - 1]


def retrieve_long(store: MemoryStore, t: int, t_l: int = LONG_WINDOW) -> list[MemoryEntry]:
    """Entries with period in [max(1, t - t_l), t - 1]; empty at t = 1."""
    lo = max(1, t - t_l)
    return [e for e in store.entries if lo <= e.period <= t - 1]


def summarize_window(entries: list[MemoryEntry], include_aggregates: bool = False) -> str:
    """Render a memory window as deterministic text, one line per trip.

    Times are shown at 0.1-minute precision; long-window summaries append
    per-route aggregates (trip count, mean, min, max) computed over the listed
    (rounded) times.
    """
    if not entries:
        return NO_HISTORY_TEXT
    lines = []
    for e in entries:
        lines.append(f"- period {e.period}: chose {e.action}, travel time "
                     f"{display_time(e.own_time):.1f} min, group split "
                     f"{e.group_counts[0]} expressway / {e.group_counts[1]} local")
    if include_aggregates:
        lines.append("Route aggregates over this window:")
        by_route: dict[str, list[float]] = {}
        for e in entries:
            by_route.setdefault(e.action, []).append(display_time(e.own_time))
        for route in sorted(by_route):
            times = by_route[route]
            mean = sum(times) / len(times)
            lines.append(f"- {route}: {len(times)} trips, mean time {mean:.1f} min, "
                         f"min {min(times):.1f}, max {max(times):.1f}")
    return "\n".join(lines)


@dataclass(frozen=True)
class Persona:
    """Free-form text describing how this traveler decides; the calibrated object."""

    text: str
    version: int = 0
    parent_version: int | None = None

    def __post_init__(self) -> None:
        if not self.text.strip():
            raise TravelerError("persona text must be non-empty")
        if len(self.text) > PERSONA_MAX_CHARS:
            raise TravelerError(f"persona text exceeds {PERSONA_MAX_CHARS} characters")


@dataclass(frozen=True)
class DecisionContext:
    """Everything decide() needs besides the prompt: who is choosing between what."""

    agent_id: int
    period: int
    options: tuple[tuple[str, float], tuple[str, float]]  # (route id, free-flow minutes)
    prev_choice: str | None = None

    @property
    def route_ids(self) -> tuple[str, str]:
        return tuple(route for route, _ in self.options)


@dataclass(frozen=True)
class PromptBundle:
    system_text: str
    user_text: str
    decision_schema: tuple[str, ...]
    template_id: str
    variable_map: dict[str, str] = field(hash=False)


def render_choice_set(options: tuple[tuple[str, float], tuple[str, float]]) -> str:
    return "\n".join(f"- {route} (free-flow {t0:.1f} min)" for route, t0 in options)


def build_prompt(persona: Persona, short_text: str, long_text: str,
                 context: DecisionContext, template_id: str = "decide") -> PromptBundle:
    """Assemble the decision prompt; byte-identical output for identical inputs."""
    variables = {
        "persona": persona.text,
        "short_memory": short_text,
        "long_memory": long_text,
        "choice_set": render_choice_set(context.options),
    }
    system_text, user_text = render(template_id, variables)
    return PromptBundle(system_text=system_text, user_text=user_text,
                        decision_schema=DECISION_SCHEMA, template_id=template_id,
                        variable_map=variables)


def build_baseline_prompt(short_text: str, long_text: str,
                          context: DecisionContext) -> PromptBundle:
    """Decision prompt with trip history but no persona section."""
    variables = {
        "short_memory": short_text,
        "long_memory": long_text,
        "choice_set": render_choice_set(context.options),
    }
    system_text, user_text = render("base_decide", variables)
    return PromptBundle(system_text=system_text, user_text=user_text,
                        decision_schema=DECISION_SCHEMA, template_id="base_decide",
                        variable_map=variables)


_JSON_RE = re.compile(r"\{[^{}]*\}")


def parse_choice(text: str, admissible: tuple[str, str]) -> str | None:
    """Extract a route choice from a model reply.

    Tries the JSON schema first, then falls back to scanning for exactly one
    admissible route name; returns None when neither works.
    """
    candidates = [text] + _JSON_RE.findall(text)
    for candidate in candidates:
        try:
            obj = json.loads(candidate)
        except (json.JSONDecodeError, ValueError):
            continue
        if isinstance(obj, dict) and isinstance(obj.get("choice"), str):
            choice = obj["choice"].strip().lower()
            if choice in admissible:
                return choice
    mentioned = {route for route in admissible
                 if re.search(rf"\b{re.escape(route)}\b", text, re.IGNORECASE)}
    if len(mentioned) == 1:
        return next(iter(mentioned))
    return None


@dataclass(frozen=True)
class DecisionResult:
    choice: str
    raw_reply: str
    attempts: int
    used_fallback: bool


def decide(bundle: PromptBundle, gateway: LLMGateway, context: DecisionContext,
           max_retries: int = DECIDE_RETRIES) -> DecisionResult:
    """Query the model for a route choice, retrying on unparsable replies.

    After the retry budget is spent, falls back to the previous choice (or the
    lower free-flow route when there is none). Transport failures are allowed
    to propagate; only parse failures reach the fallback.
    """
    messages = [("system", bundle.system_text), ("user", bundle.user_text)]
    reply = ""
    for attempt in range(1 + max_retries):
        request = RoleRequest(role="decide", messages=tuple(messages))
        reply = gateway.complete(request)
        choice = parse_choice(reply, context.route_ids)
        if choice is not None:
            return DecisionResult(choice=choice, raw_reply=reply,
                                  attempts=attempt + 1, used_fallback=False)
        names = ", ".join(context.route_ids)
        messages.append(("user",
                         f'Your reply could not be parsed (attempt {attempt + 1}). Answer again '
                         f'with exactly one JSON object {{"choice": "<route>", "reason": "..."}} '
                         f"where <route> is one of: {names}."))
    if context.prev_choice is not None:
        fallback = context.prev_choice
    else:
        fallback = min(context.options, key=lambda opt: opt[1])[0]
    return DecisionResult(choice=fallback, raw_reply=reply,
                          attempts=1 + max_retries, used_fallback=True)
