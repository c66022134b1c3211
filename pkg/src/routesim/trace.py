"""Recorded choice traces: loading, validation, and reconstruction.

A trace is a complete (period x traveler) grid of route choices with the
travel times the travelers experienced. On load, the entire system state is
reconstructed period by period from the choices alone, and the recorded times
must agree with the reconstruction within a small tolerance; all downstream
computation uses the reconstructed (exact) times so results never depend on
the precision a CSV happened to be written with.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

from .env import EnvError, Observation, Scenario, SystemState, observe, update_state
from .traveler import MemoryEntry

TRACE_COLUMNS = ("period", "traveler_id", "od_group", "choice", "travel_time")
TIME_TOLERANCE = 0.05  # minutes


class TraceError(ValueError):
    """Schema violations, incomplete grids, or BPR-inconsistent travel times."""


@dataclass
class HumanTrace:
    """Validated choice history with per-period reconstructed system states."""

    scenario: Scenario
    choices: dict[int, dict[int, str]]      # period -> traveler -> route
    recorded_times: dict[int, dict[int, float]]  # period -> traveler -> minutes
    states: list[SystemState]               # index t-1 holds period t

    @property
    def periods(self) -> int:
        return len(self.states)

    def choice(self, period: int, traveler_id: int) -> str:
        return self.choices[period][traveler_id]

    def state(self, period: int) -> SystemState:
        return self.states[period - 1]

    def observation(self, period: int, traveler_id: int) -> Observation:
        return observe(self.scenario, self.state(period), traveler_id,
                       self.choice(period, traveler_id))

    def memory_entries(self, traveler_id: int) -> list[MemoryEntry]:
        """The traveler's full history as memory entries with exact times."""
        entries = []
        for period in range(1, self.periods + 1):
            obs = self.observation(period, traveler_id)
            entries.append(MemoryEntry(period=period, action=obs.own_route,
                                       own_time=obs.own_time,
                                       group_counts=obs.group_counts))
        return entries

    def flow_series(self, start: int, end: int) -> dict[int, tuple[float, float, float]]:
        from .env import ROUTE_IDS

        return {t: tuple(float(self.state(t).volume_by_route[r]) for r in ROUTE_IDS)
                for t in range(start, end + 1)}


def build_trace(scenario: Scenario, choices: dict[int, dict[int, str]],
                recorded_times: dict[int, dict[int, float]] | None = None) -> HumanTrace:
    """Validate a raw choice grid and reconstruct the per-period states."""
    if not choices:
        raise TraceError("trace has no periods")
    periods = sorted(choices)
    if periods != list(range(1, len(periods) + 1)):
        raise TraceError(f"periods must be contiguous from 1, got {periods[:5]}...")
    expected = set(scenario.traveler_ids)
    states: list[SystemState] = []
    prev: SystemState | None = None
    for t in periods:
        present = set(choices[t])
        if present != expected:
            missing = sorted(expected - present)
            extra = sorted(present - expected)
            raise TraceError(f"period {t}: incomplete traveler grid "
                             f"(missing {missing}, unexpected {extra})")
        try:
            state = update_state(scenario, choices[t], prev)
        except EnvError as exc:
            raise TraceError(f"period {t}: {exc}") from exc
        if recorded_times is not None:
            for traveler_id, recorded in recorded_times[t].items():
                route = choices[t][traveler_id]
                reconstructed = state.time_by_route[route]
                if abs(recorded - reconstructed) > TIME_TOLERANCE:
                    raise TraceError(
                        f"period {t}, route {route}, traveler {traveler_id}: recorded travel "
                        f"time {recorded:.4f} min disagrees with the BPR reconstruction "
                        f"{reconstructed:.4f} min (volume {state.volume_by_route[route]}); "
                        f"check the trace or the scenario parameters")
        states.append(state)
        prev = state
    times = recorded_times or {
        t: {a: states[t - 1].time_by_route[choices[t][a]] for a in choices[t]}
        for t in periods}
    return HumanTrace(scenario=scenario, choices=choices, recorded_times=times, states=states)


def load_trace(path: str | Path, scenario: Scenario) -> HumanTrace:
    """Read and validate a trace CSV with header period,traveler_id,od_group,choice,travel_time."""
    choices: dict[int, dict[int, str]] = {}
    recorded: dict[int, dict[int, float]] = {}
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or tuple(reader.fieldnames) != TRACE_COLUMNS:
            raise TraceError(f"expected header {','.join(TRACE_COLUMNS)}, "
                             f"got {reader.fieldnames}")
        for line_no, row in enumerate(reader, start=2):
            try:
                period = int(row["period"])
                traveler_id = int(row["traveler_id"])
                group_id = int(row["od_group"])
                choice = row["choice"].strip()
                travel_time = float(row["travel_time"])
            except (KeyError, ValueError) as exc:
                raise TraceError(f"line {line_no}: malformed row ({exc})") from exc
            actual_group = scenario.group_of(traveler_id).group_id
            if group_id != actual_group:
                raise TraceError(f"line {line_no}: traveler {traveler_id} labeled group "
                                 f"{group_id} but the scenario puts them in group {actual_group}")
            if period in choices and traveler_id in choices[period]:
                raise TraceError(f"line {line_no}: duplicate cell "
                                 f"(period {period}, traveler {traveler_id})")
            choices.setdefault(period, {})[traveler_id] = choice
            recorded.setdefault(period, {})[traveler_id] = travel_time
    return build_trace(scenario, choices, recorded)


def save_trace(trace: HumanTrace, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRACE_COLUMNS)
        for t in range(1, trace.periods + 1):
            for traveler_id in trace.scenario.traveler_ids:
                group = trace.scenario.group_of(traveler_id)
                writer.writerow([t, traveler_id, group.group_id,
                                 trace.choice(t, traveler_id),
                                 f"{trace.recorded_times[t][traveler_id]:.4f}"])


def share_table(trace: HumanTrace, start: int = 1, end: int | None = None) -> dict[int, dict[str, float]]:
    """Per-traveler route shares over a period block: fraction on the group's
    local arterial versus the expressway."""
    end = end if end is not None else trace.periods
    if not (1 <= start <= end <= trace.periods):
        raise TraceError(f"bad share block [{start}, {end}] for a {trace.periods}-period trace")
    table: dict[int, dict[str, float]] = {}
    n = end - start + 1
    for traveler_id in trace.scenario.traveler_ids:
        group = trace.scenario.group_of(traveler_id)
        local = sum(1 for t in range(start, end + 1)
                    if trace.choice(t, traveler_id) == group.local_route)
        table[traveler_id] = {
            "local": local / n,
            "expressway": (n - local) / n,
        }
    return table
