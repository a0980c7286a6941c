"""Command-line front end: one subcommand per pipeline stage plus ``campaign``.

Settings come from built-in defaults, then an optional INI file (``--config``),
then flags. The INI file has up to four sections::

    [model]      ModelParams fields, e.g. max_braking = -4.6
    [search]     max_steps, node_budget, accel_menu (comma separated)
    [sim]        SimConfig fields, e.g. dt = 0.05
    [run]        agent, catalog, seed, jobs, output_dir

The output directory defaults to ``$GRIDCOVER_OUTPUT_DIR`` or ``./gridcover-out``.
"""

from __future__ import annotations

import argparse
import configparser
import dataclasses
import json
import os
import sys
from pathlib import Path

from . import __version__
from .campaign import CampaignReport, emit_report, report_csv, run_campaign, trace_svg
from .catalog import (ScenarioCatalog, ScenarioSpec, default_catalog, parse_inline_spec,
                      parse_scenario_dsl)
from .concretize import (concretize_all, emit_scenario_file, export_scenariorunner_script,
                         offset_tag, offsets, parse_scenario_file)
from .model import GridBounds, ModelParams
from .monitor import monitor
from .search import SearchConfig, find_witness, trace_from_jsonl, trace_to_jsonl, validate_trace
from .sim import EgoAgentSpec, SimConfig, events_to_json, run, trace_from_csv, trace_to_csv

ENV_OUTPUT_DIR = "GRIDCOVER_OUTPUT_DIR"
EXIT_STAGE_ERROR = 1
EXIT_PROPERTY_FAIL = 3


class StageError(Exception):
    def __init__(self, stage: str, message: str):
        super().__init__(message)
        self.stage = stage


@dataclasses.dataclass
class Config:
    params: ModelParams = dataclasses.field(default_factory=ModelParams)
    search: SearchConfig = dataclasses.field(default_factory=SearchConfig)
    sim: SimConfig = dataclasses.field(default_factory=SimConfig)
    agent: EgoAgentSpec = dataclasses.field(default_factory=EgoAgentSpec)
    catalog: str = "default"
    output_dir: Path = Path("gridcover-out")
    seed: int = 0
    jobs: int = 1


_SEARCH_KEYS = {"max_steps": int, "node_budget": int, "rng_seed": int,
                "allow_lane_actions": lambda v: v.strip().lower() in ("1", "true", "yes", "on"),
                "accel_menu": lambda v: tuple(x.strip() for x in v.split(",") if x.strip())}


def load_config(path: str | None) -> Config:
    """Read an INI file (or nothing) into a validated :class:`Config`."""
    cfg = Config(output_dir=Path(os.environ.get(ENV_OUTPUT_DIR, "gridcover-out")))
    if not path:
        return cfg
    ini = configparser.ConfigParser()
    with open(path, encoding="utf-8") as fh:
        ini.read_file(fh)
    unknown = set(ini.sections()) - {"model", "search", "sim", "run"}
    if unknown:
        raise ValueError(f"unknown config section(s): {', '.join(sorted(unknown))}")
    if ini.has_section("model"):
        cfg.params = ModelParams.from_dict(dict(ini["model"]))
    if ini.has_section("search"):
        kw = {}
        for k, v in ini["search"].items():
            if k not in _SEARCH_KEYS:
                raise ValueError(f"unknown search setting {k!r}")
            kw[k] = _SEARCH_KEYS[k](v)
        cfg.search = SearchConfig(**kw)
    cfg.search.check(cfg.params)
    if ini.has_section("sim"):
        fields = {f.name: f.type for f in dataclasses.fields(SimConfig)}
        kw = {}
        for k, v in ini["sim"].items():
            if k not in fields:
                raise ValueError(f"unknown sim setting {k!r}")
            kw[k] = int(v) if k == "rng_seed" else float(v)
        cfg.sim = SimConfig(**kw)
        cfg.seed = cfg.sim.rng_seed
    if ini.has_section("run"):
        r = ini["run"]
        for k in r:
            if k not in ("agent", "catalog", "seed", "jobs", "output_dir"):
                raise ValueError(f"unknown run setting {k!r}")
        if "agent" in r:
            cfg.agent = EgoAgentSpec.parse(r["agent"])
        cfg.catalog = r.get("catalog", cfg.catalog)
        cfg.seed = r.getint("seed", cfg.seed)
        cfg.jobs = r.getint("jobs", cfg.jobs)
        if "output_dir" in r and ENV_OUTPUT_DIR not in os.environ:
            cfg.output_dir = Path(r["output_dir"])
    return cfg


def load_catalog(name: str) -> ScenarioCatalog:
    if name == "default":
        return default_catalog()
    return parse_scenario_dsl(Path(name).read_text(encoding="utf-8"))


def resolve_spec(text: str, catalog: str = "default") -> ScenarioSpec:
    """An inline ``a1,a2->b1,b2`` spec or the id of a spec in ``catalog``."""
    if "->" in text:
        return parse_inline_spec(text)
    for s in load_catalog(catalog):
        if s.id == text:
            return s
    raise ValueError(f"no scenario {text!r} in catalog {catalog!r}")


def _write(path: Path, text: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")
    print(path)
    return path


# --- subcommands ---------------------------------------------------------------------------

def cmd_generate(args, cfg: Config) -> int:
    specs = [resolve_spec(args.spec, cfg.catalog)] if args.spec else list(load_catalog(cfg.catalog))
    missing = []
    for spec in specs:
        trace = find_witness(spec, cfg.params, cfg.search)
        if not trace:
            missing.append(f"{spec.id} ({trace.reason})")
            continue
        ok, errs = validate_trace(trace, spec, cfg.params, cfg.search.bounds)
        if not ok:
            raise StageError("generate", f"{spec.id}: invalid witness: {'; '.join(errs)}")
        _write(cfg.output_dir / f"{spec.id}.trace.jsonl", trace_to_jsonl(trace, cfg.params, spec))
    if missing:
        raise StageError("generate", "no witness for " + ", ".join(missing))
    return 0


def cmd_concretize(args, cfg: Config) -> int:
    trace, _ = trace_from_jsonl(Path(args.trace).read_text(encoding="utf-8"))
    for s in concretize_all(trace, cfg.params, merge_drives=args.merge_drives):
        _write(cfg.output_dir / f"{s.scenario_id}.scenario.json", emit_scenario_file(s))
        if args.scripts:
            _write(cfg.output_dir / f"{s.scenario_id}_behavior.py", export_scenariorunner_script(s))
    return 0


def cmd_simulate(args, cfg: Config) -> int:
    scenario = parse_scenario_file(Path(args.scenario).read_text(encoding="utf-8"))
    ct = run(scenario, cfg.agent, cfg.sim, cfg.params)
    _write(cfg.output_dir / f"{scenario.scenario_id}.csv", trace_to_csv(ct))
    _write(cfg.output_dir / f"{scenario.scenario_id}.events.json", events_to_json(ct))
    return 0


def _sidecar(csv_path: Path) -> Path:
    return csv_path.with_name(csv_path.name[:-len(".csv")] + ".events.json") \
        if csv_path.name.endswith(".csv") else csv_path.with_suffix(".events.json")


def cmd_monitor(args, cfg: Config) -> int:
    csv_path = Path(args.trace)
    events = Path(args.events) if args.events else _sidecar(csv_path)
    ev_text = events.read_text(encoding="utf-8") if events.exists() else None
    ct = trace_from_csv(csv_path.read_text(encoding="utf-8"), ev_text)
    spec = resolve_spec(args.spec, cfg.catalog)
    sid = ct.scenario_id or csv_path.stem
    offset = next((float(o) for o in offsets() if sid.endswith("_" + offset_tag(o))), None)
    v = monitor(ct, spec, scenario_id=sid, offset=offset)
    _write(cfg.output_dir / f"{sid}.verdict.json", v.to_json() + "\n")
    print(v.to_json())
    return EXIT_PROPERTY_FAIL if args.fail_on_prop_fail and v.outcome.value == "CoverOkPropFail" else 0


def cmd_campaign(args, cfg: Config) -> int:
    catalog = load_catalog(cfg.catalog)
    done = [0]

    def progress(r):
        done[0] += 1
        if args.verbose:
            print(f"[{done[0]}/{len(catalog)}] {r['spec_id']}", file=sys.stderr)

    report = run_campaign(catalog, cfg.params, cfg.agent, cfg.search, cfg.sim, jobs=cfg.jobs,
                          keep_traces=args.svg, progress=progress)
    formats = ("json", "csv", "svg") if args.svg else ("json", "csv")
    for p in emit_report(report, cfg.output_dir, formats):
        if p.suffix != ".svg":
            print(p)
    sys.stdout.write(report_csv(report))
    bad = report.union_row.cover_ok_and_prop_fail > 0
    return EXIT_PROPERTY_FAIL if args.fail_on_prop_fail and bad else 0


def cmd_export(args, cfg: Config) -> int:
    if args.trace:
        csv_path = Path(args.trace)
        events = _sidecar(csv_path)
        ct = trace_from_csv(csv_path.read_text(encoding="utf-8"),
                            events.read_text(encoding="utf-8") if events.exists() else None)
        v = None
        if args.spec:
            v = monitor(ct, resolve_spec(args.spec, cfg.catalog), scenario_id=ct.scenario_id)
        _write(cfg.output_dir / f"{ct.scenario_id or csv_path.stem}.svg", trace_svg(ct, v))
        return 0
    if not args.report:
        raise ValueError("export needs a report or --trace")
    report = CampaignReport.from_json(Path(args.report).read_text(encoding="utf-8"))
    if "csv" in args.format:
        _write(cfg.output_dir / "coverage.csv", report_csv(report))
    if "svg" in args.format:
        # the report records everything needed to replay its runs exactly
        m = report.metadata
        rerun = run_campaign(parse_scenario_dsl("\n".join(m["catalog"])),
                             ModelParams.from_dict(m["params"]), EgoAgentSpec.parse(m["agent"]),
                             _search_from(m["search"]), SimConfig(**m["sim"]),
                             jobs=cfg.jobs, keep_traces=True)
        for p in emit_report(rerun, cfg.output_dir, ("svg",)):
            print(p)
    return 0


def _search_from(d: dict) -> SearchConfig:
    return SearchConfig(d["max_steps"], tuple(d["accel_menu"]), d["allow_lane_actions"],
                        d["node_budget"], d["rng_seed"], GridBounds(*d["bounds"]))


# --- parser --------------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI file with [model], [search], [sim], [run] sections")
    common.add_argument("--out", help=f"output directory (default ${ENV_OUTPUT_DIR} or ./gridcover-out)")
    common.add_argument("--catalog", help="'default' or a scenario DSL file")
    common.add_argument("--seed", type=int, help="base seed for the simulator")
    common.add_argument("--agent", help="'oracle' or 'faulty:<dropout>:<latency s>'")

    p = argparse.ArgumentParser(prog="gridcover", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"gridcover {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", parents=[common], help="abstract witness traces")
    g.add_argument("--spec", help="inline 'a1,a2->b1,b2' or a scenario id; default: whole catalog")
    g.set_defaults(func=cmd_generate)

    c = sub.add_parser("concretize", parents=[common], help="trace -> one scenario per offset")
    c.add_argument("trace", help="abstract trace (.trace.jsonl)")
    c.add_argument("--scripts", action="store_true", help="also write ScenarioRunner-style scripts")
    c.add_argument("--merge-drives", action="store_true", help="merge consecutive equal-speed drives")
    c.set_defaults(func=cmd_concretize)

    s = sub.add_parser("simulate", parents=[common], help="scenario -> trace CSV + events JSON")
    s.add_argument("scenario", help="scenario file (.scenario.json)")
    s.set_defaults(func=cmd_simulate)

    m = sub.add_parser("monitor", parents=[common], help="trace CSV + spec -> verdict")
    m.add_argument("trace", help="trace CSV (t,veh,x,y,lane,speed,throttle,brake)")
    m.add_argument("--spec", required=True, help="inline 'a1,a2->b1,b2' or a scenario id")
    m.add_argument("--events", help="events JSON (default: the CSV's sidecar; else recomputed)")
    m.add_argument("--fail-on-prop-fail", action="store_true",
                   help=f"exit {EXIT_PROPERTY_FAIL} on a CoverOkPropFail verdict")
    m.set_defaults(func=cmd_monitor)

    k = sub.add_parser("campaign", parents=[common], help="full pipeline over a catalog")
    k.add_argument("--jobs", type=int, help="worker processes")
    k.add_argument("--svg", action="store_true", help="also write one x-t diagram per run")
    k.add_argument("--fail-on-prop-fail", action="store_true",
                   help=f"exit {EXIT_PROPERTY_FAIL} if any run is CoverOkPropFail")
    k.add_argument("-v", "--verbose", action="store_true", help="progress on stderr")
    k.set_defaults(func=cmd_campaign)

    e = sub.add_parser("export", parents=[common], help="report -> CSV/SVG, or trace -> SVG")
    e.add_argument("report", nargs="?", help="report.json written by 'campaign'")
    e.add_argument("--format", default="csv", help="comma separated: csv, svg")
    e.add_argument("--trace", help="render a single trace CSV instead of a report")
    e.add_argument("--spec", help="with --trace: annotate phase times for this spec")
    e.add_argument("--jobs", type=int, help="worker processes when replaying runs for svg")
    e.set_defaults(func=cmd_export)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    stage = args.command
    try:
        cfg = load_config(args.config)
        if args.out:
            cfg.output_dir = Path(args.out)
        if args.catalog:
            cfg.catalog = args.catalog
        if args.seed is not None:
            cfg.seed = args.seed
        cfg.sim = dataclasses.replace(cfg.sim, rng_seed=cfg.seed)
        if args.agent:
            cfg.agent = EgoAgentSpec.parse(args.agent)
        if getattr(args, "jobs", None):
            cfg.jobs = args.jobs
        return args.func(args, cfg)
    except StageError as exc:
        return _fail(exc.stage, exc)
    except (OSError, ValueError, KeyError, SyntaxError) as exc:
        return _fail(stage, exc)


def _fail(stage: str, exc: Exception) -> int:
    err = {"error": {"stage": stage, "type": type(exc).__name__, "message": str(exc)}}
    print(json.dumps(err), file=sys.stderr)
    return EXIT_STAGE_ERROR


if __name__ == "__main__":
    sys.exit(main())
