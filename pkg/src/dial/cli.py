"""Command line entry point: ``dial <subcommand> ...``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import random
import sys
from pathlib import Path
from typing import Optional, Sequence

from dial.agent import Agent, AgentConfig, Mode
from dial.config import Configuration, Op, Scenario
from dial.experiments import (DESK_DURATION, DESK_REPEATS, FULL_DURATION, FULL_REPEATS, RunMode,
                              collect, provenance, read_results, result_rows, shipped_models,
                              simulate, summarize, sweep, train_with_holdout, write_results)
from dial.gbdt import Hyperparams, load_model, read_samples, serialize
from dial.sim import Simulator
from dial.tuner import explain
from dial.workload import BASE_PATTERNS, StreamDriver, WorkloadSequence, parse_spec

log = logging.getLogger("dial")


def _setup_logging() -> None:
    level = os.environ.get("DIAL_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def _scenario(args) -> Scenario:
    sc = Scenario.load(args.scenario) if args.scenario else Scenario()
    if getattr(args, "clients", None) and args.clients > sc.n_clients:
        sc = Scenario.from_dict({**sc.to_dict(), "n_clients": args.clients})
    return sc


def _scale(args) -> tuple[float, int]:
    if args.paper_scale:
        return FULL_DURATION, FULL_REPEATS
    duration = args.duration if args.duration is not None else DESK_DURATION
    repeats = args.repeats if args.repeats is not None else DESK_REPEATS
    return duration, repeats


def _theta(text: str) -> Configuration:
    try:
        w, r = (int(x) for x in text.replace("x", ",").split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected WINDOW,INFLIGHT, got {text!r}") from None
    return Configuration(w, r)


def _models(path: Optional[str]) -> dict[Op, object]:
    if path is None:
        return shipped_models()
    d = Path(path)
    return {Op.READ: load_model(d / "read.json"), Op.WRITE: load_model(d / "write.json")}


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_collect(args) -> int:
    duration, repeats = _scale(args)
    sc = _scenario(args)
    patterns = args.workload.split(",") if args.workload else list(BASE_PATTERNS)
    res = collect(patterns, duration, repeats, args.seed, sc)
    out = _out(args)
    seeds = [r["seed"] for r in res.runs]
    for op in Op:
        prov = provenance(sc, seeds, kind="samples", op=op.value, patterns=patterns,
                          duration=duration, repeats=repeats)
        with open(out / f"{op.value}.jsonl", "w") as fh:
            fh.write(json.dumps({"provenance": prov}, sort_keys=True) + "\n")
            for s in res.samples[op]:
                fh.write(s.to_json() + "\n")
        print(f"{op.value}: {len(res.samples[op])} samples "
              f"({sum(s.label for s in res.samples[op])} positive)")
    print(f"discarded (zero previous throughput): {res.discarded}")
    return 0


def cmd_train(args) -> int:
    hp = Hyperparams(args.trees, args.depth, args.learning_rate, args.min_leaf, args.subsample,
                     args.seed)
    src = Path(args.samples)
    out = _out(args)
    sc = _scenario(args)
    for op in Op:
        samples = list(read_samples(src / f"{op.value}.jsonl"))
        model, report = train_with_holdout(samples, hp, split_seed=args.seed)
        doc = json.loads(serialize(model))
        doc["provenance"] = provenance(sc, [args.seed], kind="model", op=op.value,
                                       hyperparams=hp.__dict__, n_samples=len(samples),
                                       held_out_error=report.held_out["error"])
        (out / f"{op.value}.json").write_text(json.dumps(doc, sort_keys=True,
                                                         separators=(",", ":")))
        print(report.text())
    return 0


def cmd_sweep(args) -> int:
    if not args.workload:
        raise SystemExit("sweep needs --workload")
    sc = _scenario(args)
    duration, _ = _scale(args)
    spec = parse_spec(args.workload)
    res = sweep(spec, duration, args.warmup, sc, args.seed)
    prov = provenance(sc, [args.seed], kind="sweep", workload=spec.name, duration=duration,
                      warmup=args.warmup)
    out = _out(args)
    (out / f"sweep_{spec.name}.csv").write_text(res.to_csv(prov))
    theta, thr = res.best
    print(f"{spec.name}: best {theta} at {thr / 1e6:.1f} MB/s "
          f"(default {res.throughput(sc.default) / 1e6:.1f} MB/s)")
    return 0


def cmd_run(args) -> int:
    sc = _scenario(args)
    duration, repeats = _scale(args)
    mode = RunMode(args.mode)
    models = _models(args.models) if mode is RunMode.TUNED else None
    if args.sequence:
        seq = WorkloadSequence.load(args.sequence)
        phases = {c: list(seq.phases) for c in range(args.clients or 1)}
        interval = seq.switch_interval
    elif args.workload:
        names = args.workload.split(",")
        n = args.clients or len(names)
        if len(names) not in (1, n):
            raise SystemExit("--workload needs one name or one per client")
        names = names * n if len(names) == 1 else names
        phases = {c: [parse_spec(names[c], duration=duration)] for c in range(n)}
        interval = duration
    else:
        raise SystemExit("run needs --workload or --sequence")
    if max(phases) >= sc.n_clients:
        sc = Scenario.from_dict({**sc.to_dict(), "n_clients": max(phases) + 1})
    agent_cfg = AgentConfig.load(args.agent_config) if args.agent_config else AgentConfig()
    rows, seeds = [], []
    for r in range(repeats):
        seed = args.seed + r
        seeds.append(seed)
        run = simulate(phases, interval, sc, seed, mode, args.theta, models, agent_cfg)
        rows.extend(result_rows(run, mode.value, r, seed))
        if args.records and run.records:
            with open(_out(args) / f"records_{mode.value}_{r}.jsonl", "w") as fh:
                for rec in run.records:
                    fh.write(json.dumps(rec.to_dict()) + "\n")
    out = _out(args)
    prov = provenance(sc, seeds, kind="results", mode=mode.value,
                      theta=None if args.theta is None else list(args.theta.as_tuple()))
    path = out / f"results_{mode.value}.csv"
    write_results(path, rows, prov)
    for s in summarize(rows):
        print(f"{s['workload']:16s} client {s['client']} phase {s['phase']} {s['mode']:8s} "
              f"{s['mean'] / 1e6:9.1f} ± {s['std'] / 1e6:.1f} MB/s")
    print(f"wrote {path}")
    return 0


def cmd_report(args) -> int:
    rows = []
    for p in args.results:
        rows.extend(read_results(p))
    summary = summarize(rows)
    out = _out(args)
    with open(out / "report.csv", "w", newline="") as fh:
        seeds = sorted({r["seed"] for r in rows})
        fh.write("# provenance: " + json.dumps(provenance(_scenario(args), seeds, kind="report"),
                                               sort_keys=True) + "\n")
        w = csv.DictWriter(fh, ["workload", "client", "phase", "mode", "n", "mean", "std",
                                "normalized"], lineterminator="\n")
        w.writeheader()
        for s in summary:
            w.writerow({**s, "normalized": "missing" if s["normalized"] is None
                        else repr(s["normalized"])})
    print(f"{'workload':16s} {'client':>6s} {'phase':>5s} {'mode':8s} {'MB/s':>9s} {'x default':>9s}")
    for s in summary:
        norm = "missing" if s["normalized"] is None else f"{s['normalized']:.3f}"
        print(f"{s['workload']:16s} {s['client']:6d} {s['phase']:5d} {s['mode']:8s} "
              f"{s['mean'] / 1e6:9.1f} {norm:>9s}")
    return 0


def cmd_explain(args) -> int:
    if not args.workload:
        raise SystemExit("explain needs --workload")
    sc = _scenario(args)
    models = _models(args.models)
    spec = parse_spec(args.workload)
    # observe one OSC passively up to the requested time, then explain its choice
    agent_cfg = AgentConfig(mode=Mode.PASSIVE)
    steps = max(2, round(args.at / agent_cfg.probe_interval))
    sim = Simulator(sc)
    driver = StreamDriver(sim, 0, spec, random.Random(f"workload/{args.seed}/0"))
    osc = sim.osc(0, args.ost)
    agent = Agent(osc, agent_cfg)
    agent.start(0.0)
    driver.start()
    for s in range(1, steps + 1):
        t = s * agent_cfg.probe_interval
        sim.advance(t)
        agent.run_interval(t)
    snap = agent._snapshot
    text = explain(models[Op.READ] if spec.op is Op.READ else models[Op.WRITE], snap, sc.space,
                   osc.config, agent_cfg.tuner)
    out = _out(args)
    prov = provenance(sc, [args.seed], kind="explain", workload=spec.name, time=steps *
                      agent_cfg.probe_interval, osc=[0, args.ost])
    (out / "explain.csv").write_text("# provenance: " + json.dumps(prov, sort_keys=True) + "\n"
                                     + text)
    sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dial", description="Decentralized per-OSC I/O autotuning "
                                "on a simulated parallel file system client.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--scenario", help="scenario JSON file")
    common.add_argument("--workload", help="workload name, or comma list (one per client)")
    common.add_argument("--sequence", help="workload sequence JSON file")
    common.add_argument("--clients", type=int)
    common.add_argument("--repeats", type=int)
    common.add_argument("--duration", type=float, help="simulated seconds per run")
    common.add_argument("--paper-scale", action="store_true",
                        help=f"{FULL_DURATION:.0f} s runs x {FULL_REPEATS} repeats")
    common.add_argument("--out", default="out")
    sub = p.add_subparsers(dest="cmd", required=True)

    sub.add_parser("collect", parents=[common], help="random-action training data").set_defaults(
        fn=cmd_collect)

    t = sub.add_parser("train", parents=[common], help="fit read and write models")
    t.add_argument("--samples", required=True, help="directory with read.jsonl and write.jsonl")
    t.add_argument("--trees", type=int, default=300)
    t.add_argument("--depth", type=int, default=6)
    t.add_argument("--learning-rate", type=float, default=0.1)
    t.add_argument("--min-leaf", type=int, default=10)
    t.add_argument("--subsample", type=float, default=1.0)
    t.set_defaults(fn=cmd_train)

    s = sub.add_parser("sweep", parents=[common], help="throughput for every configuration")
    s.add_argument("--warmup", type=float, default=2.0)
    s.set_defaults(fn=cmd_sweep)

    r = sub.add_parser("run", parents=[common], help="default, fixed or tuned runs")
    r.add_argument("--mode", choices=[m.value for m in RunMode], default="default")
    r.add_argument("--theta", type=_theta, help="WINDOW,INFLIGHT for fixed mode")
    r.add_argument("--models",
                   help="directory with read.json and write.json (default: bundled models)")
    r.add_argument("--agent-config", help="agent config JSON")
    r.add_argument("--records", action="store_true", help="also write interval records")
    r.set_defaults(fn=cmd_run)

    rep = sub.add_parser("report", parents=[common], help="summarize results CSVs")
    rep.add_argument("results", nargs="+")
    rep.set_defaults(fn=cmd_report)

    e = sub.add_parser("explain", parents=[common], help="dump one interval's candidate set")
    e.add_argument("--models", help="directory with read.json and write.json")
    e.add_argument("--at", type=float, default=3.0, help="simulated time of the decision")
    e.add_argument("--ost", type=int, default=0)
    e.set_defaults(fn=cmd_explain)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    if args.cmd == "run" and args.mode == "fixed" and args.theta is None:
        raise SystemExit("fixed mode needs --theta")
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
