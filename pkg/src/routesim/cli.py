"""Command-line interface.

Subcommands: ingest (validate a trace), synth (generate a synthetic cohort),
calibrate (train personas), simulate (controlled or closed-loop), evaluate
(score runs against the truth), report (emit tables from an evaluation).
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import replace
from pathlib import Path

from .config import RunConfig
from .env import ROUTE_IDS, Scenario, default_scenario
from .gateway import LLMGateway
from .harness import (
    PersonaStore,
    RunLog,
    prompt_digest,
    SyntheticCohortSpec,
    agent_spec,
    generate_synthetic_cohort,
    run_calibration,
    simulate_closed_loop,
    simulate_controlled,
)
from .metrics import ChoiceRecord
from .models import BaseLlmModel, BoundedModel, PersonaModel, RecursiveModel
from .report import build_report, write_report
from .seeding import derive_rng
from .trace import TraceError, load_trace, save_trace, share_table


def _parse_range(text: str) -> tuple[int, int]:
    try:
        start, end = text.split(":")
        return int(start), int(end)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected START:END, got {text!r}") from None


def _scenario_from_args(args) -> Scenario:
    if getattr(args, "scenario", None):
        return Scenario.load(args.scenario)
    return default_scenario()


def cmd_ingest(args) -> int:
    scenario = _scenario_from_args(args)
    try:
        trace = load_trace(args.csv, scenario)
    except TraceError as exc:
        print(f"INVALID: {exc}", file=sys.stderr)
        return 1
    start, end = args.shares_range if args.shares_range else (1, trace.periods)
    table = share_table(trace, start, end)
    print(f"OK: {trace.periods} periods x {len(scenario.traveler_ids)} travelers")
    print(f"route shares over periods {start}..{end}:")
    for traveler_id, shares in sorted(table.items()):
        print(f"  traveler {traveler_id}: local {100 * shares['local']:.1f}% / "
              f"expressway {100 * shares['expressway']:.1f}%")
    return 0


def cmd_synth(args) -> int:
    scenario = _scenario_from_args(args)
    data = json.loads(Path(args.spec).read_text(encoding="utf-8"))
    if args.seed is not None:
        data["seed"] = args.seed
    spec = SyntheticCohortSpec.from_json(data)
    trace = generate_synthetic_cohort(spec, scenario)
    save_trace(trace, args.out)
    print(f"wrote {trace.periods}-period synthetic trace to {args.out}")
    return 0


def _gateway(config: RunConfig, backend_override: str | None, cache_dir: str | None) -> LLMGateway:
    provider = config.provider
    if backend_override:
        provider = replace(provider, backend=backend_override)
    if cache_dir is not None:
        provider = replace(provider, cache_dir=cache_dir)
    if provider.backend == "scripted" and provider.seed is None:
        provider = replace(provider, seed=config.seed)
    return LLMGateway(provider)


def cmd_calibrate(args) -> int:
    config = RunConfig.load(args.config)
    scenario = config.scenario
    trace = load_trace(args.trace, scenario)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    gateway = _gateway(config, args.backend, str(out / "cache"))
    log = RunLog(out / "runlog.jsonl")
    log.write("config", {"config": config.to_json(), "command": "calibrate",
                         "range": list(args.range)})
    store = run_calibration(trace, config.calibration, gateway,
                            train_range=args.range, log=log,
                            t_s=config.t_s, t_l=config.t_l)
    store.save(out / "personas.json")
    config.save(out / "config_snapshot.json")
    print(f"calibrated {len(store.history)} agents over periods "
          f"{args.range[0]}..{args.range[1]}; personas in {out / 'personas.json'}")
    return 0


def _build_models(method: str, config: RunConfig, gateway: LLMGateway,
                  personas: PersonaStore | None, log: RunLog | None = None):
    scenario = config.scenario
    models = {}
    for a in scenario.traveler_ids:
        agent = agent_spec(scenario, a, config.t_s, config.t_l)
        if method == "persona":
            if personas is None:
                raise SystemExit("--personas is required for the persona method")
            models[a] = PersonaModel(agent, gateway, personas.current(a))
        elif method == "base":
            models[a] = BaseLlmModel(agent, gateway)
        elif method == "recursive":
            models[a] = RecursiveModel(agent, gateway, config.baselines)
        elif method == "bounded":
            models[a] = BoundedModel(agent, derive_rng(config.seed, "bounded", a),
                                     config.baselines)
        else:
            raise SystemExit(f"unknown method {method!r}")
        if log is not None and hasattr(models[a], "on_decision"):
            models[a].on_decision = _decision_logger(log, method)
    return models


def _decision_logger(log: RunLog, method: str):
    def record(agent_id, period, bundle, result):
        log.write("llm_decision", {
            "agent": agent_id, "period": period,
            "template_id": bundle.template_id if bundle is not None else method,
            "prompt_digest": prompt_digest(bundle.user_text) if bundle is not None else "",
            "raw_reply": result.raw_reply, "action": result.choice,
            "used_fallback": result.used_fallback,
        })
    return record


def cmd_simulate(args) -> int:
    config = RunConfig.load(args.config)
    trace = load_trace(args.trace, config.scenario)
    personas = PersonaStore.load(args.personas) if args.personas else None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    gateway = _gateway(config, args.backend, str(out / "cache"))
    log = RunLog(out / "runlog.jsonl")
    log.write("config", {"config": config.to_json(), "command": "simulate",
                         "mode": args.mode, "method": args.method,
                         "range": list(args.range)})
    models = _build_models(args.method, config, gateway, personas, log=log)
    start, end = args.range
    if args.mode == "controlled":
        records, flows = simulate_controlled(models, trace, (start, end), log=log)
        with open(out / "choices.csv", "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["agent", "group", "period", "predicted", "truth",
                             "prev_truth", "prev_own_time", "prev_alt_time"])
            for r in records:
                writer.writerow([r.agent_id, r.group_id, r.period, r.predicted, r.truth,
                                 r.prev_truth or "",
                                 "" if r.prev_own_time is None else f"{r.prev_own_time:.6f}",
                                 "" if r.prev_alt_time is None else f"{r.prev_alt_time:.6f}"])
    else:
        replay = trace if start > 1 else None
        flows, _ = simulate_closed_loop(models, config.scenario, start, end,
                                        replay_trace=replay, log=log)
    with open(out / "flows.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["period"] + list(ROUTE_IDS))
        for t in sorted(flows):
            writer.writerow([t] + [f"{v:g}" for v in flows[t]])
    (out / "meta.json").write_text(json.dumps(
        {"method": args.method, "mode": args.mode, "range": list(args.range),
         "seed": config.seed}, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(f"simulated {args.method} ({args.mode}) over periods {start}..{end} into {out}")
    return 0


def _load_run(run_dir: Path) -> tuple[str, list[ChoiceRecord], dict]:
    meta = json.loads((run_dir / "meta.json").read_text(encoding="utf-8"))
    records = []
    choices_path = run_dir / "choices.csv"
    if choices_path.exists():
        with open(choices_path, "r", encoding="utf-8", newline="") as fh:
            for row in csv.DictReader(fh):
                records.append(ChoiceRecord(
                    agent_id=int(row["agent"]), group_id=int(row["group"]),
                    period=int(row["period"]), predicted=row["predicted"],
                    truth=row["truth"],
                    prev_truth=row["prev_truth"] or None,
                    prev_own_time=float(row["prev_own_time"]) if row["prev_own_time"] else None,
                    prev_alt_time=float(row["prev_alt_time"]) if row["prev_alt_time"] else None))
    flows = {}
    with open(run_dir / "flows.csv", "r", encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            flows[int(row["period"])] = tuple(float(row[r]) for r in ROUTE_IDS)
    return meta["method"], records, flows


def cmd_evaluate(args) -> int:
    scenario = (Scenario.load(args.scenario) if args.scenario else default_scenario())
    truth = load_trace(args.truth, scenario)
    choice_traces = {}
    flow_series = {}
    eval_range = None
    for run_dir in map(Path, args.runs):
        method, records, flows = _load_run(run_dir)
        if records:
            choice_traces[method] = records
        flow_series[method] = flows
        periods = sorted(flows)
        eval_range = (periods[0], periods[-1])
    if not choice_traces:
        print("no run directory contains choices.csv; nothing to evaluate", file=sys.stderr)
        return 1
    truth_flows = truth.flow_series(*eval_range)
    bundle = build_report(choice_traces, flow_series, truth_flows, scenario)
    bundle["flows"] = {m: {str(t): list(v) for t, v in sorted(series.items())}
                       for m, series in flow_series.items()}
    bundle["flows"]["truth"] = {str(t): list(v) for t, v in sorted(truth_flows.items())}
    Path(args.out).write_text(json.dumps(bundle, indent=2, sort_keys=True) + "\n",
                              encoding="utf-8")
    print(f"evaluated {len(choice_traces)} methods over periods "
          f"{eval_range[0]}..{eval_range[1]} into {args.out}")
    return 0


def cmd_report(args) -> int:
    bundle = json.loads(Path(args.evaluation).read_text(encoding="utf-8"))
    flows = {m: {int(t): tuple(v) for t, v in series.items()}
             for m, series in bundle.get("flows", {}).items()}
    truth_flows = flows.pop("truth", None)
    write_report(bundle, flows, truth_flows, args.out)
    print(f"wrote report tables to {args.out}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="routesim",
                                     description="Day-to-day route choice simulation "
                                                 "and persona calibration")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="validate a trace CSV and print route shares")
    p.add_argument("csv")
    p.add_argument("--scenario", help="scenario JSON (defaults to the built-in 15-traveler one)")
    p.add_argument("--shares-range", type=_parse_range, default=None, metavar="START:END")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("synth", help="generate a synthetic cohort trace")
    p.add_argument("spec", help="cohort spec JSON")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--scenario")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("calibrate", help="calibrate personas against a trace")
    p.add_argument("--config", required=True)
    p.add_argument("--backend", choices=("http", "scripted"), default=None)
    p.add_argument("--trace", required=True)
    p.add_argument("--range", type=_parse_range, default=(1, 80), metavar="START:END")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("simulate", help="run controlled or closed-loop simulation")
    p.add_argument("--mode", choices=("controlled", "closed"), required=True)
    p.add_argument("--range", type=_parse_range, default=(81, 160), metavar="START:END")
    p.add_argument("--config", required=True)
    p.add_argument("--trace", required=True)
    p.add_argument("--method", choices=("persona", "base", "recursive", "bounded"),
                   default="persona")
    p.add_argument("--personas")
    p.add_argument("--backend", choices=("http", "scripted"), default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("evaluate", help="score simulation runs against the truth")
    p.add_argument("--truth", required=True)
    p.add_argument("--runs", nargs="+", required=True)
    p.add_argument("--scenario")
    p.add_argument("--out", default="evaluation.json")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", help="emit JSON + CSV tables from an evaluation")
    p.add_argument("--evaluation", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
