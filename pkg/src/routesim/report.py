"""Comparison reports across methods: headline metrics, per-agent tables,
pairwise win rates, competition ranks, and gaps to the per-agent best.

Everything is emitted as one JSON bundle plus flat CSV tables; plotting is
left to downstream tools.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

from .env import ROUTE_IDS, Scenario
from .metrics import (
    BehaviorVector,
    ChoiceTrace,
    FlowSeries,
    accuracy,
    behavior_vector,
    cosine_similarity,
    flow_mse,
    macro_f1,
    mape,
    weighted_f1,
)


def per_agent_scores(trace: ChoiceTrace, routes_by_group: dict[int, tuple[str, str]]
                     ) -> tuple[dict[int, float], dict[int, float]]:
    """(accuracy, macro F1) per agent for one method's choice trace."""
    by_agent: dict[int, ChoiceTrace] = {}
    groups: dict[int, int] = {}
    for record in trace:
        by_agent.setdefault(record.agent_id, []).append(record)
        groups[record.agent_id] = record.group_id
    acc = {a: accuracy(records) for a, records in by_agent.items()}
    f1 = {a: macro_f1([(r.truth, r.predicted) for r in records], routes_by_group[groups[a]])
          for a, records in by_agent.items()}
    return acc, f1


def win_rate(scores_a: dict[int, float], scores_b: dict[int, float]) -> float:
    """Fraction of agents where method A strictly beats method B."""
    agents = sorted(scores_a)
    if agents != sorted(scores_b):
        raise ValueError("win rate needs the same agents on both sides")
    wins = sum(1 for a in agents if scores_a[a] > scores_b[a])
    return wins / len(agents)


def competition_ranks(scores_by_method: dict[str, float]) -> dict[str, int]:
    """Rank methods on one agent, higher scores first; ties share the best rank."""
    return {m: 1 + sum(1 for other in scores_by_method.values() if other > s)
            for m, s in scores_by_method.items()}


def rank_table(per_agent_f1: dict[str, dict[int, float]]
               ) -> tuple[dict[int, dict[str, int]], dict[str, float], dict[str, float]]:
    """Per-agent rank matrix plus each method's average rank and average gap
    to the per-agent best score."""
    methods = sorted(per_agent_f1)
    agents = sorted(next(iter(per_agent_f1.values()))) if per_agent_f1 else []
    ranks: dict[int, dict[str, int]] = {}
    gaps = {m: 0.0 for m in methods}
    rank_sums = {m: 0 for m in methods}
    for a in agents:
        scores = {m: per_agent_f1[m][a] for m in methods}
        ranks[a] = competition_ranks(scores)
        best = max(scores.values())
        for m in methods:
            gaps[m] += best - scores[m]
            rank_sums[m] += ranks[a][m]
    n = len(agents)
    avg_rank = {m: rank_sums[m] / n for m in methods} if n else {}
    avg_gap = {m: gaps[m] / n for m in methods} if n else {}
    return ranks, avg_rank, avg_gap


def _vector_json(v: BehaviorVector) -> dict:
    return {"c_minus": v.c_minus, "s_minus": v.s_minus, "defined": v.defined}


def build_report(choice_traces: dict[str, ChoiceTrace],
                 flow_series: dict[str, FlowSeries],
                 truth_flows: FlowSeries | None,
                 scenario: Scenario) -> dict:
    """Assemble the full metric bundle across methods.

    With a single method the win-rate section is omitted; behavior-vector
    components that are undefined for an agent are reported as null and
    excluded from cosine averages (and flagged).
    """
    if not choice_traces:
        raise ValueError("no methods to report on")
    routes_by_group = {g.group_id: g.choice_set for g in scenario.groups}
    methods = sorted(choice_traces)

    per_method: dict[str, dict] = {}
    per_agent_acc: dict[str, dict[int, float]] = {}
    per_agent_f1: dict[str, dict[int, float]] = {}
    human_vectors: dict[int, BehaviorVector] = {}
    for method in methods:
        trace = choice_traces[method]
        acc_by_agent, f1_by_agent = per_agent_scores(trace, routes_by_group)
        per_agent_acc[method] = acc_by_agent
        per_agent_f1[method] = f1_by_agent
        by_agent: dict[int, ChoiceTrace] = {}
        for record in trace:
            by_agent.setdefault(record.agent_id, []).append(record)
        if not human_vectors:
            human_vectors = {a: behavior_vector(records, use="truth")
                             for a, records in sorted(by_agent.items())}
        sim_vectors = {a: behavior_vector(records, use="predicted")
                       for a, records in sorted(by_agent.items())}
        cosines: dict[int, float | None] = {}
        for a, sim_v in sim_vectors.items():
            human_v = human_vectors[a]
            # undefined components and zero vectors are flagged, not scored
            if (sim_v.defined and human_v.defined
                    and sim_v.as_tuple() != (0.0, 0.0)
                    and human_v.as_tuple() != (0.0, 0.0)):
                cosines[a] = cosine_similarity(sim_v.as_tuple(), human_v.as_tuple())
            else:
                cosines[a] = None
        defined_cosines = [c for c in cosines.values() if c is not None]
        entry = {
            "accuracy": accuracy(trace),
            "weighted_f1": weighted_f1(trace, routes_by_group),
            "f1_mode": "macro_per_route",
            "per_agent_accuracy": {str(a): v for a, v in sorted(acc_by_agent.items())},
            "per_agent_f1": {str(a): v for a, v in sorted(f1_by_agent.items())},
            "behavior_vectors": {str(a): _vector_json(v) for a, v in sim_vectors.items()},
            "behavior_cosine": {str(a): c for a, c in cosines.items()},
            "behavior_cosine_average": (sum(defined_cosines) / len(defined_cosines)
                                        if defined_cosines else None),
            "behavior_cosine_undefined_agents": sorted(
                a for a, c in cosines.items() if c is None),
        }
        if truth_flows is not None and method in flow_series:
            entry["mape"] = mape(flow_series[method], truth_flows)
            entry["mape_percent"] = 100.0 * entry["mape"]
            entry["mse_as_written"] = flow_mse(flow_series[method], truth_flows)
            entry["mse_squared"] = flow_mse(flow_series[method], truth_flows, squared=True)
            entry["mse_mode"] = "as_written_default"
        per_method[method] = entry

    bundle: dict = {
        "methods": methods,
        "human_behavior_vectors": {str(a): _vector_json(v)
                                   for a, v in human_vectors.items()},
        "per_method": per_method,
    }
    if len(methods) > 1:
        bundle["win_rates"] = {
            a_name: {
                b_name: {
                    "on_accuracy": win_rate(per_agent_acc[a_name], per_agent_acc[b_name]),
                    "on_f1": win_rate(per_agent_f1[a_name], per_agent_f1[b_name]),
                }
                for b_name in methods if b_name != a_name}
            for a_name in methods}
        ranks, avg_rank, avg_gap = rank_table(per_agent_f1)
        bundle["f1_ranks"] = {str(a): r for a, r in ranks.items()}
        bundle["average_rank"] = avg_rank
        bundle["average_gap_to_best"] = avg_gap
    return bundle


def write_report(bundle: dict, flow_series: dict[str, FlowSeries],
                 truth_flows: FlowSeries | None, out_dir: str | Path) -> None:
    """Emit the JSON bundle plus CSV tables under out_dir."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.json").write_text(json.dumps(bundle, indent=2, sort_keys=True) + "\n",
                                      encoding="utf-8")

    methods = bundle["methods"]
    agents = sorted(int(a) for a in bundle["per_method"][methods[0]]["per_agent_f1"])
    with open(out / "per_agent_f1.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["agent"] + methods)
        for a in agents:
            writer.writerow([a] + [bundle["per_method"][m]["per_agent_f1"][str(a)]
                                   for m in methods])
    with open(out / "behavior_vectors.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["agent", "method", "c_minus", "s_minus", "cosine_to_human"])
        for a in agents:
            human = bundle["human_behavior_vectors"][str(a)]
            writer.writerow([a, "human", human["c_minus"], human["s_minus"], ""])
            for m in methods:
                v = bundle["per_method"][m]["behavior_vectors"][str(a)]
                cos = bundle["per_method"][m]["behavior_cosine"][str(a)]
                writer.writerow([a, m, v["c_minus"], v["s_minus"], cos])
    for method, series in sorted(flow_series.items()):
        _write_flows(out / f"flows_{method}.csv", series)
    if truth_flows is not None:
        _write_flows(out / "flows_truth.csv", truth_flows)
    if "win_rates" in bundle:
        with open(out / "win_rates.csv", "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["method", "versus", "on_accuracy", "on_f1"])
            for a_name, row in sorted(bundle["win_rates"].items()):
                for b_name, rates in sorted(row.items()):
                    writer.writerow([a_name, b_name,
                                     rates["on_accuracy"], rates["on_f1"]])


def _write_flows(path: Path, series: FlowSeries) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["period"] + list(ROUTE_IDS))
        for t in sorted(series):
            writer.writerow([t] + [series[t][i] for i in range(3)])
