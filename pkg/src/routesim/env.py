"""Transportation environment: routes, OD groups, congestion, and observation.

The network is deliberately small: three routes serving two origin-destination
groups. The expressway is shared by both groups; each group additionally has
its own local arterial. Travel times respond to volume through the BPR
volume-delay function.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

EXPRESSWAY = "expressway"
LOCAL1 = "local1"
LOCAL2 = "local2"
ROUTE_IDS = (EXPRESSWAY, LOCAL1, LOCAL2)

# Time displayed to travelers (and rendered in prompts) at 0.1-minute precision.
DISPLAY_DECIMALS = 1


class EnvError(ValueError):
    """Invalid environment input (bad parameters, unknown traveler, bad choice)."""


def bpr_travel_time(t0: float, beta: float, volume: float, capacity: float) -> float:
    """Travel time under the BPR volume-delay function: t0 * (1 + beta * (v/c)^4).

    Raises EnvError on non-finite or out-of-range inputs.
    """
    for name, value in (("t0", t0), ("beta", beta), ("volume", volume), ("capacity", capacity)):
        if not math.isfinite(value):
            raise EnvError(f"bpr_travel_time: {name} must be finite, got {value!r}")
    if t0 <= 0:
        raise EnvError(f"bpr_travel_time: t0 must be positive, got {t0}")
    if capacity <= 0:
        raise EnvError(f"bpr_travel_time: capacity must be positive, got {capacity}")
    if beta < 0:
        raise EnvError(f"bpr_travel_time: beta must be nonnegative, got {beta}")
    if volume < 0:
        raise EnvError(f"bpr_travel_time: volume must be nonnegative, got {volume}")
    return t0 * (1.0 + beta * (volume / capacity) ** 4)


@dataclass(frozen=True)
class RouteSpec:
    """One route with its BPR parameters."""

    route_id: str
    t0: float
    beta: float
    capacity: float

    def __post_init__(self) -> None:
        if self.route_id not in ROUTE_IDS:
            raise EnvError(f"unknown route id {self.route_id!r}; expected one of {ROUTE_IDS}")
        if self.t0 <= 0 or self.capacity <= 0 or self.beta < 0:
            raise EnvError(f"invalid BPR parameters for {self.route_id}: "
                           f"t0={self.t0}, beta={self.beta}, capacity={self.capacity}")

    def travel_time(self, volume: float) -> float:
        return bpr_travel_time(self.t0, self.beta, volume, self.capacity)


@dataclass(frozen=True)
class ODGroup:
    """A set of travelers sharing one origin-destination pair and a two-route choice set."""

    group_id: int
    member_ids: tuple[int, ...]
    choice_set: tuple[str, str]  # (expressway, local arterial)

    def __post_init__(self) -> None:
        if self.group_id not in (1, 2):
            raise EnvError(f"group_id must be 1 or 2, got {self.group_id}")
        expected_local = LOCAL1 if self.group_id == 1 else LOCAL2
        if self.choice_set != (EXPRESSWAY, expected_local):
            raise EnvError(f"group {self.group_id} choice set must be "
                           f"({EXPRESSWAY!r}, {expected_local!r}), got {self.choice_set}")
        if len(set(self.member_ids)) != len(self.member_ids) or not self.member_ids:
            raise EnvError(f"group {self.group_id} member ids must be nonempty and unique")

    @property
    def local_route(self) -> str:
        return self.choice_set[1]


@dataclass(frozen=True)
class Scenario:
    """Routes plus OD groups; the container every environment operation consults."""

    routes: dict[str, RouteSpec]
    groups: tuple[ODGroup, ODGroup]

    def __post_init__(self) -> None:
        if set(self.routes) != set(ROUTE_IDS):
            raise EnvError(f"scenario must define exactly the routes {ROUTE_IDS}")
        g1, g2 = self.groups
        if g1.group_id != 1 or g2.group_id != 2:
            raise EnvError("groups must be ordered (group 1, group 2)")
        if set(g1.member_ids) & set(g2.member_ids):
            raise EnvError("OD group member sets must be disjoint")

    @property
    def traveler_ids(self) -> tuple[int, ...]:
        return tuple(sorted(self.groups[0].member_ids + self.groups[1].member_ids))

    @property
    def total_travelers(self) -> int:
        return len(self.groups[0].member_ids) + len(self.groups[1].member_ids)

    def group_of(self, traveler_id: int) -> ODGroup:
        for group in self.groups:
            if traveler_id in group.member_ids:
                return group
        raise EnvError(f"unknown traveler id {traveler_id}")

    def choice_routes(self, traveler_id: int) -> tuple[RouteSpec, RouteSpec]:
        group = self.group_of(traveler_id)
        return tuple(self.routes[r] for r in group.choice_set)

    def to_json(self) -> dict:
        return {
            "routes": [
                {"id": r.route_id, "t0": r.t0, "beta": r.beta, "capacity": r.capacity}
                for r in (self.routes[rid] for rid in ROUTE_IDS)
            ],
            "groups": [
                {"id": g.group_id, "members": list(g.member_ids), "choice_set": list(g.choice_set)}
                for g in self.groups
            ],
        }

    @staticmethod
    def from_json(data: dict) -> "Scenario":
        routes = {r["id"]: RouteSpec(r["id"], float(r["t0"]), float(r["beta"]), float(r["capacity"]))
                  for r in data["routes"]}
        groups = tuple(
            ODGroup(int(g["id"]), tuple(int(m) for m in g["members"]), tuple(g["choice_set"]))
            for g in data["groups"]
        )
        return Scenario(routes=routes, groups=groups)

    @staticmethod
    def load(path: str | Path) -> "Scenario":
        with open(path, "r", encoding="utf-8") as fh:
            return Scenario.from_json(json.load(fh))

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def default_scenario() -> Scenario:
    """The 15-traveler two-group scenario: 9 travelers on {expressway, local1},
    6 on {expressway, local2}."""
    routes = {
        EXPRESSWAY: RouteSpec(EXPRESSWAY, t0=5.0, beta=0.075, capacity=3.0),
        LOCAL1: RouteSpec(LOCAL1, t0=15.0, beta=0.15, capacity=5.0),
        LOCAL2: RouteSpec(LOCAL2, t0=15.0, beta=0.15, capacity=5.0),
    }
    groups = (
        ODGroup(1, tuple(range(1, 10)), (EXPRESSWAY, LOCAL1)),
        ODGroup(2, tuple(range(10, 16)), (EXPRESSWAY, LOCAL2)),
    )
    return Scenario(routes=routes, groups=groups)


@dataclass(frozen=True)
class SystemState:
    """Volumes and travel times on every route for one period."""

    period: int
    volume_by_route: dict[str, int] = field(hash=False)
    time_by_route: dict[str, float] = field(hash=False)

    def __post_init__(self) -> None:
        if self.period < 1:
            raise EnvError(f"period must be >= 1, got {self.period}")
        if any(v < 0 for v in self.volume_by_route.values()):
            raise EnvError("route volumes must be nonnegative")


@dataclass(frozen=True)
class Observation:
    """What one traveler sees after a period: their own route's time and the
    choice split inside their own OD group. The other route's travel time is
    never revealed."""

    period: int
    own_route: str
    own_time: float
    group_counts: tuple[int, int]  # (expressway count, local count) within the OD group


def update_state(scenario: Scenario, choices: dict[int, str], prev: SystemState | None) -> SystemState:
    """Advance the environment one period from the travelers' collective choices.

    Expressway volume pools choosers from both OD groups; each local arterial
    carries only its own group. `prev` supplies the period counter only.
    """
    missing = set(scenario.traveler_ids) - set(choices)
    if missing:
        raise EnvError(f"missing choices for travelers {sorted(missing)}")
    volumes = {rid: 0 for rid in ROUTE_IDS}
    for traveler_id, route_id in choices.items():
        group = scenario.group_of(traveler_id)
        if route_id not in group.choice_set:
            raise EnvError(f"traveler {traveler_id} chose {route_id!r}, outside "
                           f"choice set {group.choice_set}")
        volumes[route_id] += 1
    times = {rid: scenario.routes[rid].travel_time(volumes[rid]) for rid in ROUTE_IDS}
    period = 1 if prev is None else prev.period + 1
    return SystemState(period=period, volume_by_route=volumes, time_by_route=times)


def observe(scenario: Scenario, state: SystemState, traveler_id: int, choice: str) -> Observation:
    """Project the system state onto one traveler: own time plus the group split.

    Group counts are recovered from volumes: the local arterial is exclusive to
    the group, so the group's expressway count is its size minus local volume.
    """
    group = scenario.group_of(traveler_id)
    if choice not in group.choice_set:
        raise EnvError(f"traveler {traveler_id} cannot observe route {choice!r}")
    local_count = state.volume_by_route[group.local_route]
    expressway_count = len(group.member_ids) - local_count
    return Observation(
        period=state.period,
        own_route=choice,
        own_time=state.time_by_route[choice],
        group_counts=(expressway_count, local_count),
    )


def display_time(minutes: float) -> float:
    """Travel time as shown to travelers: rounded to 0.1 minute."""
    return round(minutes, DISPLAY_DECIMALS)
