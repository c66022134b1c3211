"""Decision models that plug into the simulation loops.

Every model exposes the same two-method interface: `choose(t)` returns the
route for period t, and `observe_outcome(action, obs, state)` feeds back what
actually happened (in closed-loop runs the model's own action; under teacher
forcing the recorded human action). Synthetic ground-truth models (rule
followers and archetypes) live here too, since they drive cohort generation
through the identical loop.
"""

from __future__ import annotations

import random
from dataclasses import replace

from . import dsl
from .baselines import (
    BaselineParams,
    BoundedState,
    PerceivedTimes,
    bounded_step,
    build_recursive_prompt,
    init_bounded,
    init_perceived,
    logit_choice,
    recursive_update,
)
from .calibration import AgentSpec
from .env import Observation, SystemState, display_time
from .gateway import LLMGateway
from .traveler import (
    DecisionContext,
    MemoryStore,
    Persona,
    build_baseline_prompt,
    build_prompt,
    decide,
    perceive,
    retrieve_long,
    retrieve_short,
    summarize_window,
)


class BaseMemoryModel:
    """Shared plumbing: memory store, retrieval, and decision context."""

    def __init__(self, agent: AgentSpec, gateway: LLMGateway):
        self.agent = agent
        self.gateway = gateway
        self.store = MemoryStore()
        self.on_decision = None

    def _context(self, t: int) -> DecisionContext:
        prev = self.store.entries[-1].action if self.store.entries else None
        return DecisionContext(agent_id=self.agent.agent_id, period=t,
                               options=self.agent.options, prev_choice=prev)

    def _windows(self, t: int) -> tuple[str, str]:
        short = retrieve_short(self.store, t, self.agent.t_s)
        long = retrieve_long(self.store, t, self.agent.t_l)
        return (summarize_window(short),
                summarize_window(long, include_aggregates=True))

    def observe_outcome(self, action: str, obs: Observation,
                        state: SystemState | None = None) -> None:
        self.store = perceive(self.store, action, obs)


class PersonaModel(BaseMemoryModel):
    """The calibrated traveler agent: persona plus dual-window memory."""

    def __init__(self, agent: AgentSpec, gateway: LLMGateway, persona: Persona):
        super().__init__(agent, gateway)
        self.persona = persona

    def choose(self, t: int) -> str:
        short_text, long_text = self._windows(t)
        context = self._context(t)
        bundle = build_prompt(self.persona, short_text, long_text, context)
        result = decide(bundle, self.gateway, context)
        if self.on_decision is not None:
            self.on_decision(self.agent.agent_id, t, bundle, result)
        return result.choice


class BaseLlmModel(BaseMemoryModel):
    """Memory-only baseline: identical retrieval, no persona in the prompt."""

    def choose(self, t: int) -> str:
        short_text, long_text = self._windows(t)
        context = self._context(t)
        bundle = build_baseline_prompt(short_text, long_text, context)
        result = decide(bundle, self.gateway, context)
        if self.on_decision is not None:
            self.on_decision(self.agent.agent_id, t, bundle, result)
        return result.choice


class RecursiveModel:
    """Perception-smoothing baseline: beliefs, not raw history, drive choices."""

    def __init__(self, agent: AgentSpec, gateway: LLMGateway,
                 params: BaselineParams = BaselineParams()):
        self.agent = agent
        self.gateway = gateway
        self.params = params
        self.state: PerceivedTimes = init_perceived(agent.options)
        self.prev_choice: str | None = None
        self.on_decision = None

    def choose(self, t: int) -> str:
        context = DecisionContext(agent_id=self.agent.agent_id, period=t,
                                  options=self.agent.options, prev_choice=self.prev_choice)
        bundle = build_recursive_prompt(self.state, context)
        result = decide(bundle, self.gateway, context)
        if self.on_decision is not None:
            self.on_decision(self.agent.agent_id, t, bundle, result)
        return result.choice

    def observe_outcome(self, action: str, obs: Observation,
                        state: SystemState | None = None) -> None:
        self.state = recursive_update(self.state, action, obs.own_time, self.params.alpha)
        self.prev_choice = action


class BoundedModel:
    """Bounded-rationality baseline: belief revision only on surprises, habit
    otherwise; choices sampled from the model's seeded stream."""

    def __init__(self, agent: AgentSpec, rng: random.Random,
                 params: BaselineParams = BaselineParams()):
        self.agent = agent
        self.rng = rng
        self.params = params
        self.state: BoundedState = init_bounded(agent.options, params.surprise_threshold)
        self.pending: str | None = None
        self.on_decision = None

    def choose(self, t: int) -> str:
        if self.pending is None:
            option_ids = tuple(route for route, _ in self.agent.options)
            self.pending = logit_choice(self.state.believed, option_ids, self.rng,
                                        self.params.logit_scale)
        return self.pending

    def observe_outcome(self, action: str, obs: Observation,
                        state: SystemState | None = None) -> None:
        seeded = replace(self.state, prev_choice=action)
        option_ids = tuple(route for route, _ in self.agent.options)
        self.state, self.pending = bounded_step(seeded, obs.own_time, self.rng,
                                                option_ids, self.params)


class RuleModel:
    """Synthetic human following a rule, optionally swapping to a second rule
    at a given period. Statistics are computed over displayed (0.1-minute)
    times, matching what a prompt-fed simulator of this human would see."""

    def __init__(self, agent: AgentSpec, rule: str, rule2: str | None = None,
                 switch_period: int | None = None, initial_choice: str | None = None):
        self.agent = agent
        self.rule = dsl.parse_rule(rule)
        self.rule2 = dsl.parse_rule(rule2) if rule2 is not None else None
        self.switch_period = switch_period
        self.initial_choice = initial_choice
        self.trips: list[tuple[int, str, float]] = []

    def active_rule(self, t: int) -> dsl.RuleAst:
        if self.rule2 is not None and self.switch_period is not None and t >= self.switch_period:
            return self.rule2
        return self.rule

    def choose(self, t: int) -> str:
        if t == 1 and self.initial_choice is not None:
            return self.initial_choice
        short = [(route, time) for (p, route, time) in self.trips
                 if p >= max(1, t - self.agent.t_s)]
        long = [(route, time) for (p, route, time) in self.trips
                if p >= max(1, t - self.agent.t_l)]
        prev = self.trips[-1][1] if self.trips else None
        return dsl.eval_rule(self.active_rule(t), short, long, prev, self.agent.options)

    def observe_outcome(self, action: str, obs: Observation,
                        state: SystemState | None = None) -> None:
        self.trips.append((obs.period, action, display_time(obs.own_time)))


ARCHETYPES = ("naive", "strategic", "exploratory", "status_quo")


class ArchetypeModel:
    """Synthetic human at a behavior-vector corner: switch/stay decided purely
    by the prior day's win/loss against the alternative route (exact times)."""

    def __init__(self, agent: AgentSpec, archetype: str, rng: random.Random,
                 initial_choice: str | None = None):
        if archetype not in ARCHETYPES:
            raise ValueError(f"unknown archetype {archetype!r}")
        self.agent = agent
        self.archetype = archetype
        self.rng = rng
        self.initial_choice = initial_choice
        self.prev_choice: str | None = None
        self.prev_was_loss: bool | None = None

    def choose(self, t: int) -> str:
        option_ids = tuple(route for route, _ in self.agent.options)
        if self.prev_choice is None:
            return self.initial_choice or self.rng.choice(option_ids)
        other = option_ids[1] if self.prev_choice == option_ids[0] else option_ids[0]
        if self.archetype == "status_quo":
            return self.prev_choice
        if self.archetype == "exploratory":
            return other
        if self.archetype == "naive":
            return other if self.prev_was_loss else self.prev_choice
        return self.prev_choice if self.prev_was_loss else other  # strategic

    def observe_outcome(self, action: str, obs: Observation,
                        state: SystemState | None = None) -> None:
        if state is None:
            raise ValueError("archetype models need the full system state as feedback")
        option_ids = tuple(route for route, _ in self.agent.options)
        other = option_ids[1] if action == option_ids[0] else option_ids[0]
        self.prev_choice = action
        self.prev_was_loss = state.time_by_route[action] > state.time_by_route[other]


class NoisyModel:
    """Wraps a synthetic human, flipping each choice with a fixed probability."""

    def __init__(self, inner, noise: float, rng: random.Random):
        if not (0.0 <= noise < 1.0):
            raise ValueError("noise probability must be in [0, 1)")
        self.inner = inner
        self.noise = noise
        self.rng = rng

    @property
    def agent(self) -> AgentSpec:
        return self.inner.agent

    def choose(self, t: int) -> str:
        choice = self.inner.choose(t)
        option_ids = tuple(route for route, _ in self.inner.agent.options)
        if self.noise > 0.0 and self.rng.random() < self.noise:
            return option_ids[1] if choice == option_ids[0] else option_ids[0]
        return choice

    def observe_outcome(self, action: str, obs: Observation,
                        state: SystemState | None = None) -> None:
        self.inner.observe_outcome(action, obs, state)
