"""Choice-alignment and flow-error metrics.

Everything here is a pure computation over plain records so an independent
brute-force reimplementation can cross-check every value. Travel-time
feedback for behavior classification always refers to the prior period: a day
counts as following a "loss" when the previously chosen route was slower than
the alternative route on that same prior day (ties count as wins).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

FlowVector = tuple[float, float, float]
FlowSeries = dict[int, FlowVector]

TYPE_SWITCH_AFTER_LOSS = "C-"
TYPE_STAY_AFTER_LOSS = "S+"
TYPE_SWITCH_AFTER_WIN = "C+"
TYPE_STAY_AFTER_WIN = "S-"


class MetricsError(ValueError):
    """Empty traces, mismatched series, or undefined values."""


@dataclass(frozen=True)
class ChoiceRecord:
    """One (traveler, period) comparison between a simulated and a true choice.

    The prev_* fields carry the prior-period ground truth used for transition
    classification: what the traveler actually rode, how long it took, and the
    alternative route's travel time on that day. They are None when the prior
    period is unavailable (the first classified day)."""

    agent_id: int
    group_id: int
    period: int
    predicted: str
    truth: str
    prev_truth: str | None = None
    prev_own_time: float | None = None
    prev_alt_time: float | None = None


ChoiceTrace = list[ChoiceRecord]


def accuracy(trace: ChoiceTrace) -> float:
    """Fraction of (traveler, period) cells where the prediction matched."""
    if not trace:
        raise MetricsError("cannot compute accuracy of an empty trace")
    return sum(1 for r in trace if r.predicted == r.truth) / len(trace)


def _f1_for_route(pairs: list[tuple[str, str]], route: str) -> float:
    tp = sum(1 for truth, pred in pairs if truth == route and pred == route)
    fp = sum(1 for truth, pred in pairs if truth != route and pred == route)
    fn = sum(1 for truth, pred in pairs if truth == route and pred != route)
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    if precision + recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def macro_f1(pairs: list[tuple[str, str]], routes: tuple[str, str]) -> float:
    """Unweighted mean of the two per-route F1 scores (zero on 0/0 divisions)."""
    if not pairs:
        raise MetricsError("cannot compute F1 of an empty set of predictions")
    return sum(_f1_for_route(pairs, route) for route in routes) / len(routes)


def group_f1(trace: ChoiceTrace, group_id: int, routes: tuple[str, str]) -> float:
    pairs = [(r.truth, r.predicted) for r in trace if r.group_id == group_id]
    if not pairs:
        raise MetricsError(f"group {group_id} has no predictions")
    return macro_f1(pairs, routes)


def combine_group_f1(f1_group1: float, f1_group2: float, weight_group1: float = 0.6) -> float:
    """Population-weighted combination of the two per-group F1 scores."""
    return weight_group1 * f1_group1 + (1.0 - weight_group1) * f1_group2


def weighted_f1(trace: ChoiceTrace, routes_by_group: dict[int, tuple[str, str]]) -> float:
    """Per-group macro F1 combined with weights equal to the groups' population
    shares (0.6/0.4 for the canonical 9/6 split)."""
    agents_by_group: dict[int, set[int]] = {}
    for r in trace:
        agents_by_group.setdefault(r.group_id, set()).add(r.agent_id)
    if set(agents_by_group) != {1, 2}:
        raise MetricsError(f"expected groups {{1, 2}}, found {sorted(agents_by_group)}")
    n1, n2 = len(agents_by_group[1]), len(agents_by_group[2])
    weight = n1 / (n1 + n2)
    return combine_group_f1(group_f1(trace, 1, routes_by_group[1]),
                            group_f1(trace, 2, routes_by_group[2]), weight)


def classify_transition(prev_choice: str, prev_own_time: float,
                        prev_alt_mean: float, cur_choice: str) -> str:
    """Label a day by prior-period feedback sign and switch/stay.

    A loss is strictly worse than the alternative; equal times count as a win.
    """
    loss = prev_own_time > prev_alt_mean
    switch = cur_choice != prev_choice
    if loss:
        return TYPE_SWITCH_AFTER_LOSS if switch else TYPE_STAY_AFTER_LOSS
    return TYPE_SWITCH_AFTER_WIN if switch else TYPE_STAY_AFTER_WIN


@dataclass(frozen=True)
class BehaviorVector:
    """(P(switch | loss), P(stay | win)); a component is None when the trace
    contains no day of that feedback sign, and such components are flagged
    rather than silently zeroed."""

    c_minus: float | None
    s_minus: float | None

    @property
    def defined(self) -> bool:
        return self.c_minus is not None and self.s_minus is not None

    def as_tuple(self) -> tuple[float, float]:
        if not self.defined:
            raise MetricsError("behavior vector has undefined components")
        return (self.c_minus, self.s_minus)


def behavior_vector(records: ChoiceTrace, use: str = "predicted") -> BehaviorVector:
    """Summarize one traveler's adjustment tendency over classifiable days.

    `use` selects which choice sequence is classified: the simulated one or
    the recorded human one. Days without prior-period data are skipped.
    """
    if use not in ("predicted", "truth"):
        raise MetricsError(f"use must be 'predicted' or 'truth', got {use!r}")
    counts = {TYPE_SWITCH_AFTER_LOSS: 0, TYPE_STAY_AFTER_LOSS: 0,
              TYPE_SWITCH_AFTER_WIN: 0, TYPE_STAY_AFTER_WIN: 0}
    for r in records:
        if r.prev_truth is None or r.prev_own_time is None or r.prev_alt_time is None:
            continue
        cur = r.predicted if use == "predicted" else r.truth
        counts[classify_transition(r.prev_truth, r.prev_own_time, r.prev_alt_time, cur)] += 1
    loss_days = counts[TYPE_SWITCH_AFTER_LOSS] + counts[TYPE_STAY_AFTER_LOSS]
    win_days = counts[TYPE_STAY_AFTER_WIN] + counts[TYPE_SWITCH_AFTER_WIN]
    c_minus = counts[TYPE_SWITCH_AFTER_LOSS] / loss_days if loss_days else None
    s_minus = counts[TYPE_STAY_AFTER_WIN] / win_days if win_days else None
    return BehaviorVector(c_minus=c_minus, s_minus=s_minus)


def cosine_similarity(v1: tuple[float, float], v2: tuple[float, float]) -> float:
    """dot(v1, v2) / (|v1| |v2|); undefined (raises) for zero vectors."""
    norm1 = math.sqrt(sum(x * x for x in v1))
    norm2 = math.sqrt(sum(x * x for x in v2))
    if norm1 == 0.0 or norm2 == 0.0:
        raise MetricsError("cosine similarity undefined for a zero vector")
    dot = sum(a * b for a, b in zip(v1, v2))
    return dot / (norm1 * norm2)


def _check_series(sim: FlowSeries, truth: FlowSeries) -> list[int]:
    if set(sim) != set(truth):
        raise MetricsError("flow series cover different period ranges")
    if not sim:
        raise MetricsError("flow series are empty")
    return sorted(sim)


def mape(sim: FlowSeries, truth: FlowSeries) -> float:
    """Mean absolute percentage error over route-period components, as a
    fraction (0.4 means 40%). Components with zero true flow are excluded and
    the divisor shrinks accordingly."""
    periods = _check_series(sim, truth)
    total = 0.0
    terms = 0
    for t in periods:
        for s_hat, s in zip(sim[t], truth[t]):
            if s == 0:
                continue
            total += abs(s_hat - s) / s
            terms += 1
    if terms == 0:
        raise MetricsError("every true flow component is zero; MAPE undefined")
    return total / terms


def flow_mse(sim: FlowSeries, truth: FlowSeries, squared: bool = False) -> float:
    """Flow deviation penalty: mean over (3 x T) of the per-period L2 norm of
    the flow difference (as-written mode), or of the squared norm when
    `squared` is set."""
    periods = _check_series(sim, truth)
    total = 0.0
    for t in periods:
        sq = sum((a - b) ** 2 for a, b in zip(sim[t], truth[t]))
        total += sq if squared else math.sqrt(sq)
    return total / (3 * len(periods))
