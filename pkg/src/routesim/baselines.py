"""Comparison decision models sharing the traveler agent's interface.

Three baselines: a memory-only prompt with no persona, a perception model that
smooths experienced times into per-route beliefs, and a bounded-rationality
model that only revises its belief after a surprising experience and otherwise
leans heavily on habit. Parameter defaults are documented choices, not claims
about the original models.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field, replace

from .gateway import LLMGateway
from .traveler import DecisionContext, DecisionResult, build_baseline_prompt, decide
from .prompts import render
from .env import display_time

DEFAULT_ALPHA = 0.2
DEFAULT_SURPRISE_THRESHOLD = 5.0
DEFAULT_HABIT_PROBABILITY = 0.9
DEFAULT_LOGIT_SCALE = 0.1  # utility units per minute


@dataclass(frozen=True)
class BaselineParams:
    alpha: float = DEFAULT_ALPHA
    surprise_threshold: float = DEFAULT_SURPRISE_THRESHOLD
    habit_probability: float = DEFAULT_HABIT_PROBABILITY
    logit_scale: float = DEFAULT_LOGIT_SCALE

    def __post_init__(self) -> None:
        if not (0.0 < self.alpha <= 1.0):
            raise ValueError(f"alpha must be in (0, 1], got {self.alpha}")
        if self.surprise_threshold <= 0:
            raise ValueError("surprise threshold must be positive")
        if not (0.0 <= self.habit_probability <= 1.0):
            raise ValueError("habit probability must be in [0, 1]")


def base_llm_decide(short_text: str, long_text: str, context: DecisionContext,
                    gateway: LLMGateway) -> DecisionResult:
    """Memory-only decision: same retrieval and parse path, no persona section."""
    bundle = build_baseline_prompt(short_text, long_text, context)
    return decide(bundle, gateway, context)


@dataclass(frozen=True)
class PerceivedTimes:
    """Smoothed per-route travel-time perception plus exploration counts."""

    perceived: dict[str, float] = field(hash=False)
    explored: dict[str, int] = field(hash=False)


def init_perceived(options: tuple[tuple[str, float], tuple[str, float]]) -> PerceivedTimes:
    return PerceivedTimes(perceived={route: t0 for route, t0 in options},
                          explored={route: 0 for route, _ in options})


def recursive_update(state: PerceivedTimes, chosen: str, experienced: float,
                     alpha: float = DEFAULT_ALPHA) -> PerceivedTimes:
    """Exponentially smooth the chosen route's perception toward the
    experienced time; other routes are untouched."""
    if not (0.0 < alpha <= 1.0):
        raise ValueError(f"alpha must be in (0, 1], got {alpha}")
    perceived = dict(state.perceived)
    explored = dict(state.explored)
    perceived[chosen] = (1.0 - alpha) * perceived[chosen] + alpha * experienced
    explored[chosen] = explored[chosen] + 1
    return PerceivedTimes(perceived=perceived, explored=explored)


def render_perceived(state: PerceivedTimes,
                     options: tuple[tuple[str, float], tuple[str, float]]) -> str:
    return "\n".join(
        f"- {route}: perceived {display_time(state.perceived[route]):.1f} min, "
        f"explored {state.explored[route]} times"
        for route, _ in options)


def build_recursive_prompt(state: PerceivedTimes, context: DecisionContext):
    from .traveler import DECISION_SCHEMA, PromptBundle

    variables = {
        "perceived": render_perceived(state, context.options),
        "choice_set": "\n".join(f"- {route} (free-flow {t0:.1f} min)"
                                for route, t0 in context.options),
    }
    system_text, user_text = render("recursive_decide", variables)
    return PromptBundle(system_text=system_text, user_text=user_text,
                        decision_schema=DECISION_SCHEMA,
                        template_id="recursive_decide", variable_map=variables)


def recursive_llm_decide(state: PerceivedTimes, context: DecisionContext,
                         gateway: LLMGateway) -> DecisionResult:
    """Decision from the perception summary (no raw history in the prompt)."""
    return decide(build_recursive_prompt(state, context), gateway, context)


@dataclass(frozen=True)
class BoundedState:
    """Believed per-route times, the surprise threshold, and the last choice."""

    believed: dict[str, float] = field(hash=False)
    threshold: float = DEFAULT_SURPRISE_THRESHOLD
    prev_choice: str | None = None

    def __post_init__(self) -> None:
        if self.threshold <= 0:
            raise ValueError("threshold must be positive")


def init_bounded(options: tuple[tuple[str, float], tuple[str, float]],
                 threshold: float = DEFAULT_SURPRISE_THRESHOLD) -> BoundedState:
    return BoundedState(believed={route: t0 for route, t0 in options}, threshold=threshold)


def logit_choice(believed: dict[str, float], options: tuple[str, ...],
                 rng: random.Random, scale: float = DEFAULT_LOGIT_SCALE) -> str:
    """Sample a route with probability proportional to exp(-scale * believed time)."""
    weights = [math.exp(-scale * believed[route]) for route in options]
    total = sum(weights)
    draw = rng.random() * total
    cumulative = 0.0
    for route, weight in zip(options, weights):
        cumulative += weight
        if draw < cumulative:
            return route
    return options[-1]


def bounded_step(state: BoundedState, experienced: float, rng: random.Random,
                 options: tuple[str, ...],
                 params: BaselineParams = BaselineParams()) -> tuple[BoundedState, str]:
    """Process one experienced travel time and pick the next route.

    Beliefs move only when the experience deviates from the believed time by
    more than the personal threshold (and then a fresh logit choice is made);
    otherwise the previous choice repeats with the habit probability.
    """
    if state.prev_choice is None:
        raise ValueError("bounded_step requires a previous choice; seed the state first")
    prev = state.prev_choice
    surprise = abs(experienced - state.believed[prev]) > state.threshold
    believed = dict(state.believed)
    if surprise:
        believed[prev] = experienced
        choice = logit_choice(believed, options, rng, params.logit_scale)
    elif rng.random() < params.habit_probability:
        choice = prev
    else:
        choice = logit_choice(believed, options, rng, params.logit_scale)
    return replace(state, believed=believed, prev_choice=choice), choice
