"""Command line entry point: ``cpgrid <subcommand> [options]``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import commsim, harness, model as gm, scheduler as sch, synthesis as syn, topology as topo


def _common(parser: argparse.ArgumentParser, suppress: bool) -> None:
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    parser.add_argument("--config", default=d(None), help="JSON input for the subcommand")
    parser.add_argument("--out", default=d(None), help="output directory (default: stdout)")
    parser.add_argument("--format", choices=("json", "csv"), default=d("json"))
    parser.add_argument("--seed", type=int, default=d(0))
    parser.add_argument("--tolerance", type=float, default=d(0.1))
    parser.add_argument("--beta", type=float, default=d(5000.0))
    parser.add_argument("--rho", type=float, default=d(None))
    parser.add_argument("--policy", choices=sch.POLICIES, default=d("edf"))
    parser.add_argument("--capacity", type=float, default=d(None))
    parser.add_argument("--horizon", type=float, default=d(None))
    parser.add_argument("--parallel", type=int, default=d(1))


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cpgrid", description=__doc__)
    _common(ap, suppress=False)
    sub = ap.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    _common(common, suppress=True)

    sub.add_parser("model", parents=[common], help="build a state-space model")

    p = sub.add_parser("enumerate", parents=[common], help="enumerate connection sets or masks")
    p.add_argument("--fixture", choices=("ch2_network", "ch5_network"))
    p.add_argument("--objective", choices=("reliability", "cost", "user_requirement"))
    p.add_argument("--direct", nargs=2, type=int, metavar=("NS", "NC"),
                   help="direct sensor-controller design for NS sensors and NC controllers")
    p.add_argument("--parameter", default="2121", help="connection parameter for --direct")

    p = sub.add_parser("synthesize", parents=[common], help="maximize the stability margin")
    p.add_argument("--method", choices=("conic", "first_order"), default="conic")
    p.add_argument("--norm", choices=("squared", "spectral"), default="squared")

    p = sub.add_parser("schedule", parents=[common], help="run the power-capped scheduler")
    p.add_argument("--tasks", help="task CSV (id,r,d,c,P[,region]); seeded random if omitted")
    p.add_argument("--n-tasks", type=int, default=20)

    p = sub.add_parser("simulate", parents=[common], help="broker-in-the-loop simulation")
    p.add_argument("--wire", action="store_true", help="pass messages through a socket as NDJSON")

    p = sub.add_parser("scenario", parents=[common], help="run named experiments")
    p.add_argument("ids", nargs="+", help=f"scenario ids or 'all' ({', '.join(harness.SCENARIOS)})")
    return ap


def _load_config(path):
    if path is None:
        return {}
    return json.loads(Path(path).read_text())


def _write(args, name: str, text: str) -> None:
    if args.out is None:
        sys.stdout.write(text)
        return
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / name).write_text(text)


def _model_from(doc) -> gm.StateSpaceModel:
    if doc in (None, "canonical") or (isinstance(doc, dict) and doc.get("canonical")):
        return gm.four_bus_canonical()
    if isinstance(doc, str):
        return gm.zone_model(doc)
    if "A" in doc:
        return gm.StateSpaceModel.from_json(doc)
    params = gm.GridParams.from_json(doc)
    n = doc.get("extend_to")
    if n:
        return gm.chain_extend(int(n), params)
    return gm.build_from_params(params)[1]


def cmd_model(args) -> int:
    cfg = _load_config(args.config)
    m = _model_from(cfg.get("model", cfg) if cfg else None)
    doc = m.to_json()
    doc["open_loop_spectrum"] = [[float(z.real), float(z.imag)] for z in m.open_loop_spectrum()]
    _write(args, "model.json", json.dumps(doc, indent=1) + "\n")
    return 0


def cmd_enumerate(args) -> int:
    cfg = _load_config(args.config)
    if args.direct:
        ns, nc = args.direct
        cs = topo.ConstraintSet.from_parameter(args.parameter)
        masks = topo.cbscd(ns, nc, cs)
        if args.format == "csv":
            _write(args, "masks.csv", "\n".join(mk.to_csv() for mk in masks))
        else:
            doc = {"parameter": args.parameter,
                   "cost_configurations": [list(c) for c in topo.cost_configurations(cs, ns, nc)],
                   "masks": [mk.allowed.astype(int).tolist() for mk in masks]}
            _write(args, "masks.json", json.dumps(doc) + "\n")
        return 0
    if args.fixture or not cfg:
        net, cs, _ = topo.load_fixture(args.fixture or "ch2_network")
        objective = args.objective or ("user_requirement" if cs.user_requirement else "reliability")
    else:
        net = topo.LayeredNetwork.from_json(cfg["network"])
        cs = topo.ConstraintSet.from_json(cfg.get("constraints", {}))
        objective = args.objective or cfg.get("objective", "reliability")
    paths = topo.enumerate_paths(net, cs)
    filtered = topo.bandwidth_filter(paths, cs)
    sets = topo.complete_sets(filtered, net, cs, objective)
    doc = {"paths": [list(p) for p in paths], "filtered": [list(p) for p in filtered],
           "sets": [s.to_json() for s in sets], "labels": [s.label for s in sets]}
    _write(args, "sets.json", json.dumps(doc) + "\n")
    return 0


def cmd_synthesize(args) -> int:
    cfg = _load_config(args.config)
    m = _model_from(cfg.get("model"))
    mask = topo.SparsityMask(np.array(cfg["mask"], bool)) if "mask" in cfg else None
    rho = args.rho if args.rho is not None else cfg.get("rho", 5.0)
    prob = syn.SynthesisProblem(m, mask, args.beta, rho, cfg.get("norm_mode", args.norm),
                                delay=cfg.get("delay"))
    if prob.delay is not None:
        res = syn.max_gamma_delay(prob)
    else:
        res = syn.max_gamma(prob, method=args.method)
    _write(args, "synthesis.json", json.dumps(res.to_json(), indent=1) + "\n")
    return 0


def cmd_schedule(args) -> int:
    if args.tasks:
        tasks = sch.tasks_from_csv(Path(args.tasks).read_text())
    else:
        tasks = sch.random_taskset(args.seed, n=args.n_tasks)
    horizon = int(args.horizon) if args.horizon else max([t.d for t in tasks] + [1])
    cap = args.capacity if args.capacity is not None else float("inf")
    tr = sch.run(tasks, cap, horizon, args.policy)
    if args.format == "csv":
        _write(args, "trace.csv", tr.to_csv())
    else:
        _write(args, "summary.json", json.dumps(tr.summary(), sort_keys=True) + "\n")
    return 0


def cmd_simulate(args) -> int:
    cfg = _load_config(args.config)
    m = _model_from(cfg.get("model"))
    K = np.array(cfg["K"], float)
    broker = commsim.Broker(K != 0, delay=cfg.get("delay", 0))
    x0 = cfg.get("x0")
    if x0 is None:
        x0 = np.random.default_rng(args.seed).standard_normal(m.n)
    horizon = args.horizon if args.horizon is not None else cfg.get("horizon", 0.05)
    tr = commsim.simulate_closed_loop(m, K, broker, cfg.get("dt"), horizon, x0, wire=args.wire)
    _write(args, "trajectory.csv", tr.to_csv())
    return 0


def cmd_scenario(args) -> int:
    ids = list(harness.SCENARIOS) if args.ids == ["all"] else args.ids
    settings = harness.Settings(seed=args.seed, tolerance=args.tolerance, beta=args.beta,
                                rho=args.rho)
    if args.capacity is not None:
        settings.capacity = args.capacity
    if args.horizon is not None:
        settings.horizon = int(args.horizon)
    for rep in harness.run_many(ids, settings, args.parallel):
        text = harness.emit(rep, args.format)
        _write(args, f"{rep.scenario}.{args.format}", text)
    return 0


_COMMANDS = {"model": cmd_model, "enumerate": cmd_enumerate, "synthesize": cmd_synthesize,
             "schedule": cmd_schedule, "simulate": cmd_simulate, "scenario": cmd_scenario}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (KeyError, ValueError, RuntimeError) as exc:
        print(f"cpgrid: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
