"""Command-line harness: ``ehexit {gen-trace,simulate,runtime,search,report}``.

Every artifact carries the resolved config hash and seed. Failures print a
JSON error object on stderr and exit nonzero (2 for bad input or config).
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from pathlib import Path

from . import __version__
from .config import ExperimentConfig, config_from_dict, load_config, substream
from .ehsim import FixedExitSelector, GreedyStaticSelector, SimReport, simulate
from .errors import ConfigError, EhexitError, InputError
from .experiment import TRACE_KINDS, agent_config, build_env, build_scenario, gen_trace, runtime_config
from .runtime import MODES, run_online
from .search import AgentPair, random_search_baseline, search

SELECTORS = ("static_lut", "final_exit", "final_exit_stall")


def _provenance(cfg: ExperimentConfig, command: str) -> dict:
    return {"command": command, "config_sha256": cfg.digest(), "seed": cfg.seed, "version": __version__}


def _dump(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=True) + "\n"


class _Writer:
    def __init__(self, out: Path, cfg: ExperimentConfig, command: str):
        self.out = out
        self.prov = _provenance(cfg, command)
        self.tag = f"config_sha256={self.prov['config_sha256']} seed={cfg.seed}"
        out.mkdir(parents=True, exist_ok=True)
        self.written = []

    def _put(self, name: str, text: str) -> None:
        (self.out / name).write_bytes(text.encode("utf-8"))
        self.written.append(name)

    def json(self, name: str, obj: dict) -> None:
        self._put(name, _dump({"provenance": self.prov, **obj}))

    def csv(self, name: str, text: str) -> None:
        self._put(name, f"# {self.tag}\n{text}")

    def jsonl(self, name: str, text: str) -> None:
        self._put(name, json.dumps({"provenance": self.prov}, sort_keys=True) + "\n" + text)


def _report_blob(report: SimReport) -> dict:
    d = report.to_dict()
    d.pop("records", None)
    return d


def _load(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else config_from_dict({})
    if args.seed is not None:
        cfg.seed = args.seed
    if getattr(args, "out", None):
        cfg.out = args.out
    return cfg


def _out_dir(args, cfg: ExperimentConfig) -> Path:
    return Path(args.out) if args.out else cfg.resolve(cfg.out)


def cmd_gen_trace(args) -> int:
    params = {}
    for kv in args.param or []:
        if "=" not in kv:
            raise ConfigError(f"--param expects key=value, got {kv!r}")
        k, v = kv.split("=", 1)
        try:
            params[k] = float(v)
        except ValueError:
            raise ConfigError(f"--param {k}: not a number: {v!r}") from None
    seed = 0 if args.seed is None else args.seed
    trace = gen_trace(args.kind, params, seed)
    cfg = config_from_dict({"seed": seed, "scenario": {"trace": args.kind, "trace_params": params}})
    tag = f"kind={args.kind} config_sha256={cfg.digest()} seed={seed}"
    text = trace.to_csv(tag)
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_bytes(text.encode("utf-8"))
    else:
        sys.stdout.write(text)
    return 0


def _selector(name: str):
    if name == "static_lut":
        return GreedyStaticSelector()
    if name == "final_exit":
        return FixedExitSelector(-1, stall=False)
    if name == "final_exit_stall":
        return FixedExitSelector(-1, stall=True)
    raise ConfigError(f"unknown selector {name!r}; expected one of {', '.join(SELECTORS)}")


def cmd_simulate(args) -> int:
    cfg = _load(args)
    if args.selector:
        cfg.selector = args.selector
    sc = build_scenario(cfg)
    report = simulate(sc, _selector(cfg.selector), args.mode, cfg.seed,
                      meta={"selector": cfg.selector})
    w = _Writer(_out_dir(args, cfg), cfg, "simulate")
    w.json("report.json", {"config": cfg.to_dict(), "report": _report_blob(report),
                           "profiles": [p.__dict__ for p in sc.profiles]})
    w.csv("events.csv", report.records_csv())
    return 0


def cmd_runtime(args) -> int:
    cfg = _load(args)
    if args.policy:
        cfg.runtime.policy = args.policy
    if cfg.runtime.policy not in MODES:
        raise ConfigError(f"unknown runtime policy {cfg.runtime.policy!r}")
    sc = build_scenario(cfg)
    res = run_online(sc, cfg.runtime.policy, runtime_config(cfg), cfg.seed, args.mode)
    w = _Writer(_out_dir(args, cfg), cfg, "runtime")
    w.json("report.json", {"config": cfg.to_dict(), "report": _report_blob(res.report),
                           "profiles": [p.__dict__ for p in sc.profiles]})
    w.csv("events.csv", res.report.records_csv())
    if res.tables:
        w.json("qtables.json", {"tables": res.tables})
    if res.curve:
        w.csv("learning_curve.csv", "pass,avg_accuracy_all\n" +
              "".join(f"{i},{float(v)!r}\n" for i, v in enumerate(res.curve)))
    return 0


def cmd_search(args) -> int:
    cfg = _load(args)
    if args.episodes is not None:
        cfg.search.episodes = args.episodes
    if args.random_samples is not None:
        cfg.search.random_samples = args.random_samples
    env = build_env(cfg)
    agents = AgentPair(agent_config(cfg), substream(cfg.seed, "agents"))
    res = search(env, agents, cfg.search.episodes)
    base = random_search_baseline(env, cfg.search.random_samples, cfg.seed)
    w = _Writer(_out_dir(args, cfg), cfg, "search")
    w.jsonl("history.jsonl", res.history_jsonl())
    w.jsonl("random_history.jsonl", base.history_jsonl())

    def brief(r):
        return None if r is None else r.summary()

    summary = {
        "config": cfg.to_dict(),
        "eval_mode": env.cfg.mode,
        "targets": {"flops": env.targets.flops, "bytes": env.targets.bytes},
        "uncompressed": {"flops": float(env.costs[0].sum()), "bytes": float(env.costs[1].sum())},
        "feasible": res.feasible,
        "best": brief(res.best),
        "best_infeasible": None if res.feasible else brief(res.best_infeasible),
        "random_baseline": {"samples": cfg.search.random_samples, "feasible": base.feasible,
                            "best": brief(base.best)},
    }
    if res.best is not None:
        f0 = summary["uncompressed"]["flops"]
        summary["flops_ratio_remaining"] = res.best.flops / f0
        summary["flops_reduced_by"] = 1.0 - res.best.flops / f0
        summary["bytes_ratio_remaining"] = res.best.bytes / summary["uncompressed"]["bytes"]
        w.json("best_policy.json", res.best.policy.to_dict())
    else:
        summary["message"] = "no feasible policy found"
    w.json("search.json", summary)
    return 0 if res.feasible else 3


REPORT_FIELDS = ("iepmj", "avg_accuracy_all", "avg_accuracy_processed", "mean_event_latency_s",
                 "n_processed", "n_missed")


def _read_report(path: Path) -> dict:
    p = path / "report.json" if path.is_dir() else path
    try:
        d = json.loads(p.read_text(encoding="utf-8"))
        return d["report"]
    except FileNotFoundError:
        raise InputError(f"no report at {p}") from None
    except (ValueError, KeyError) as exc:
        raise InputError(f"{p}: not a run report ({exc})") from None


def cmd_report(args) -> int:
    rows = []
    for run in args.runs:
        rep = _read_report(Path(run))
        agg = rep["aggregates"]
        row = {"run": run, "selector": rep.get("meta", {}).get("selector", rep["selector"])}
        for k in REPORT_FIELDS:
            row[k] = agg[k]
        for i, f in enumerate(agg["exit_fractions"]):
            row[f"exit{i + 1}_fraction"] = f
        row["missed_fraction"] = agg["missed_fraction"]
        rows.append(row)
    if not rows:
        raise ConfigError("report needs at least one run")
    ref = rows[0]
    for row in rows:
        for k in ("iepmj", "avg_accuracy_all", "n_processed"):
            a, b = row[k], ref[k]
            row[f"delta_{k}"] = None if a is None or b is None else a - b
    cols = list(dict.fromkeys(k for r in rows for k in r))
    buf = io.StringIO()
    wr = csv.DictWriter(buf, cols, lineterminator="\n")
    wr.writeheader()
    for r in rows:
        wr.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    text = buf.getvalue()
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_bytes(text.encode("utf-8"))
    else:
        sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ehexit", description="Multi-exit inference under harvested energy.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, mode=True):
        sp.add_argument("--config", help="TOML experiment config")
        sp.add_argument("--seed", type=int, help="override the config seed")
        sp.add_argument("--out", help="output directory")
        if mode:
            sp.add_argument("--mode", choices=("expected", "bernoulli"), default="expected")

    g = sub.add_parser("gen-trace", help="write a synthetic power trace CSV")
    g.add_argument("--kind", choices=TRACE_KINDS, default="solar_like")
    g.add_argument("--param", action="append", metavar="KEY=VALUE", help="generator parameter")
    g.add_argument("--seed", type=int)
    g.add_argument("--out", help="output CSV path (stdout if omitted)")
    g.set_defaults(func=cmd_gen_trace)

    s = sub.add_parser("simulate", help="simulate one selector on a scenario")
    common(s)
    s.add_argument("--selector", choices=SELECTORS)
    s.set_defaults(func=cmd_simulate)

    r = sub.add_parser("runtime", help="online exit selection (static LUT or Q-learning)")
    common(r)
    r.add_argument("--policy", choices=MODES)
    r.set_defaults(func=cmd_runtime)

    q = sub.add_parser("search", help="DDPG compression search plus random baseline")
    common(q, mode=False)
    q.add_argument("--episodes", type=int)
    q.add_argument("--random-samples", type=int)
    q.set_defaults(func=cmd_search)

    c = sub.add_parser("report", help="comparison CSV over run directories")
    c.add_argument("runs", nargs="+", help="run directories or report.json files")
    c.add_argument("--out", help="output CSV path (stdout if omitted)")
    c.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except EhexitError as exc:
        err = {"error": type(exc).__name__, "message": str(exc), "exit_code": exc.exit_code}
        sys.stderr.write(json.dumps(err) + "\n")
        return exc.exit_code
    except (OSError, ValueError) as exc:
        err = {"error": type(exc).__name__, "message": str(exc), "exit_code": 1}
        sys.stderr.write(json.dumps(err) + "\n")
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
