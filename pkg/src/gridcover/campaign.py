"""End-to-end campaigns: generate, concretize at every offset, simulate, monitor,
and aggregate coverage per offset and over the per-spec union of offsets."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from . import __version__
from .catalog import ScenarioCatalog, ScenarioSpec
from .concretize import concretize, offset_tag, offsets
from .model import ModelParams
from .monitor import MonitorVerdict, Outcome, monitor
from .search import SearchConfig, find_witness, params_hash
from .sim import ConcreteTrace, EgoAgentSpec, OracleACC, ScenarioUnrunnable, SimConfig, run

UNION = "union"
COLUMNS = ("total", "coverage_ok", "property_fail", "cover_ok_and_prop_fail")


def run_seed(base_seed: int, spec_id: str, tag: str) -> int:
    """Per-run simulator seed; independent of run order and worker count."""
    digest = hashlib.sha256(f"{base_seed}|{spec_id}|{tag}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


def _tag_order(tag: str):
    tags = [offset_tag(o) for o in offsets()]
    return (tags.index(tag), tag) if tag in tags else (len(tags), tag)


@dataclass
class Counts:
    total: int = 0
    coverage_ok: int = 0
    property_fail: int = 0
    cover_ok_and_prop_fail: int = 0

    def add(self, compliance: bool, property_ok: bool) -> None:
        self.coverage_ok += compliance
        self.property_fail += not property_ok
        self.cover_ok_and_prop_fail += compliance and not property_ok

    def as_dict(self) -> dict:
        return {c: getattr(self, c) for c in COLUMNS}


@dataclass
class CampaignReport:
    rows: dict            # offset tag -> Counts
    union_row: Counts
    detail: dict          # spec_id -> {offset tag -> outcome name, or a status string}
    abstract_generation: dict  # spec_id -> bool
    verdicts: list        # MonitorVerdict per simulated run, sorted by scenario_id
    metadata: dict
    errors: dict = field(default_factory=dict)   # scenario or spec id -> message
    traces: dict = field(default_factory=dict, compare=False)  # scenario_id -> ConcreteTrace

    @property
    def abstract_coverage(self) -> float:
        n = len(self.abstract_generation)
        return sum(self.abstract_generation.values()) / n if n else 0.0

    def outcome_counts(self) -> dict:
        out = {o.value: 0 for o in Outcome}
        for v in self.verdicts:
            out[v.outcome.value] += 1
        return out

    def as_dict(self) -> dict:
        return {
            "rows": {k: c.as_dict() for k, c in self.rows.items()},
            "union_row": self.union_row.as_dict(),
            "abstract_coverage": {"found": sum(self.abstract_generation.values()),
                                  "total": len(self.abstract_generation)},
            "outcome_counts": self.outcome_counts(),
            "abstract_generation": self.abstract_generation,
            "detail": self.detail,
            "verdicts": [v.as_dict() for v in self.verdicts],
            "errors": self.errors,
            "metadata": self.metadata,
        }

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "CampaignReport":
        d = json.loads(text)
        return cls(
            # keys were sorted on the way out; restore offset order
            rows={k: Counts(**d["rows"][k]) for k in sorted(d["rows"], key=_tag_order)},
            union_row=Counts(**d["union_row"]),
            detail=d["detail"],
            abstract_generation=d["abstract_generation"],
            verdicts=[MonitorVerdict.from_dict(v) for v in d["verdicts"]],
            metadata=d["metadata"],
            errors=d.get("errors", {}),
        )


@dataclass(frozen=True)
class _Job:
    spec: ScenarioSpec
    params: ModelParams
    agent: EgoAgentSpec
    search_cfg: SearchConfig
    sim_cfg: SimConfig
    keep_traces: bool
    witness: object = None  # pre-generated AbstractTrace, skips the search


def _spec_pipeline(job: _Job) -> dict:
    spec = job.spec
    out = {"spec_id": spec.id, "found": False, "runs": {}, "errors": {}, "traces": {}}
    try:
        trace = job.witness if job.witness is not None else \
            find_witness(spec, job.params, job.search_cfg)
    except Exception as exc:  # keep the campaign going; the report names the stage
        out["errors"][spec.id] = f"generate: {type(exc).__name__}: {exc}"
        return out
    if not trace:
        out["errors"][spec.id] = f"generate: not found ({trace.reason})"
        return out
    out["found"] = True
    for off in offsets():
        tag = offset_tag(off)
        try:
            scenario = concretize(trace, off, job.params)
            cfg = SimConfig(**{**job.sim_cfg.as_dict(),
                               "rng_seed": run_seed(job.sim_cfg.rng_seed, spec.id, tag)})
            ct = run(scenario, job.agent, cfg, job.params)
        except (ScenarioUnrunnable, ValueError) as exc:
            out["errors"][f"{spec.id}_{tag}"] = f"simulate: {type(exc).__name__}: {exc}"
            continue
        out["runs"][tag] = monitor(ct, spec, scenario_id=scenario.scenario_id, offset=float(off))
        if job.keep_traces:
            out["traces"][scenario.scenario_id] = ct
    return out


def run_campaign(catalog: ScenarioCatalog, params: ModelParams = ModelParams(),
                 agent: EgoAgentSpec = OracleACC(), search_cfg: SearchConfig = SearchConfig(),
                 sim_cfg: SimConfig = SimConfig(), jobs: int = 1,
                 keep_traces: bool = False, progress=None,
                 witnesses: dict | None = None) -> CampaignReport:
    """Run every spec of ``catalog`` through the pipeline.

    A spec without a witness still counts toward each row's total. A run
    that fails to simulate is recorded in ``errors`` and counts as neither
    compliant nor failing the property. ``witnesses`` maps spec ids to traces
    generated earlier (with the same params); specs not in it are searched.
    """
    witnesses = witnesses or {}
    work = [_Job(s, params, agent, search_cfg, sim_cfg, keep_traces, witnesses.get(s.id))
            for s in catalog]
    if jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = []
            for r in pool.map(_spec_pipeline, work, chunksize=1):
                results.append(r)
                if progress:
                    progress(r)
    else:
        results = []
        for job in work:
            results.append(_spec_pipeline(job))
            if progress:
                progress(results[-1])
    results.sort(key=lambda r: r["spec_id"])

    tags = [offset_tag(o) for o in offsets()]
    rows = {t: Counts() for t in tags}
    union = Counts()
    detail, found, verdicts, errors, traces = {}, {}, [], {}, {}
    for r in results:
        sid = r["spec_id"]
        found[sid] = r["found"]
        errors.update(r["errors"])
        traces.update(r["traces"])
        detail[sid] = {}
        union.total += 1
        any_ok = any_fail = any_both = False
        for t in tags:
            rows[t].total += 1
            v = r["runs"].get(t)
            if v is None:
                detail[sid][t] = "not-generated" if not r["found"] else "error"
                continue
            verdicts.append(v)
            detail[sid][t] = v.outcome.value
            rows[t].add(v.compliance, v.property_ok)
            any_ok |= v.compliance
            any_fail |= not v.property_ok
            any_both |= v.compliance and not v.property_ok
        union.coverage_ok += any_ok
        union.property_fail += any_fail
        union.cover_ok_and_prop_fail += any_both
    verdicts.sort(key=lambda v: v.scenario_id)
    metadata = {
        "tool_version": __version__,
        "params_hash": params_hash(params),
        "params": {k: str(v) for k, v in params.as_dict().items()},
        "agent": agent.label(),
        "seed": sim_cfg.rng_seed,
        "search": search_cfg.as_dict(),
        "sim": sim_cfg.as_dict(),
        "offsets": [float(o) for o in offsets()],
        "catalog": sorted(s.to_dsl() for s in catalog),
    }
    return CampaignReport(rows, union, detail, found, verdicts, metadata, errors, traces)


# --- report files --------------------------------------------------------------------------

ROW_LABELS = {"om3_5": "offset -3.5", "o0": "offset 0", "op3_5": "offset +3.5", UNION: "set union"}


def report_csv(report: CampaignReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["variant", *COLUMNS])
    for tag, c in list(report.rows.items()) + [(UNION, report.union_row)]:
        w.writerow([ROW_LABELS.get(tag, tag), *(getattr(c, k) for k in COLUMNS)])
    return buf.getvalue()


_COLORS = {"ego": "#d62728", "car1": "#1f77b4", "car2": "#2ca02c"}


def trace_svg(trace: ConcreteTrace, verdict: MonitorVerdict | None = None,
              width: int = 640, height: int = 400) -> str:
    """x-t diagram: one polyline per vehicle, a circle per collision event,
    dashed vertical lines at the phase times."""
    pad = 40
    ts = [s.t for s in trace.samples]
    xs = [v.x for s in trace.samples for v in s.vehicles.values()]
    t0, t1 = ts[0], max(ts[-1], ts[0] + 1e-9)
    x0, x1 = min(xs), max(max(xs), min(xs) + 1e-9)

    def px(t, x):
        return (pad + (t - t0) / (t1 - t0) * (width - 2 * pad),
                height - pad - (x - x0) / (x1 - x0) * (height - 2 * pad))

    title = trace.scenario_id + (f" {verdict.outcome.value}" if verdict else "")
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}">',
           f'<title>{title}</title>',
           f'<rect width="{width}" height="{height}" fill="white"/>',
           f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>',
           f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>',
           f'<text x="{width / 2:.0f}" y="{height - 8}" text-anchor="middle" font-size="12">t [s]</text>',
           f'<text x="12" y="{height / 2:.0f}" font-size="12" transform="rotate(-90 12 {height / 2:.0f})">'
           f'x [m]</text>',
           f'<text x="{pad}" y="20" font-size="13">{title}</text>']
    for name, color in _COLORS.items():
        pts = " ".join("%.1f,%.1f" % px(s.t, s.vehicles[name].x) for s in trace.samples)
        out.append(f'<polyline class="vehicle" data-veh="{name}" fill="none" stroke="{color}" '
                   f'stroke-width="1.5" points="{pts}"/>')
    if verdict and verdict.phase_times:
        for label, t in zip(("t_A", "t_B"), verdict.phase_times):
            x, _ = px(t, x0)
            out.append(f'<line class="phase" data-t="{t}" x1="{x:.1f}" y1="{pad}" x2="{x:.1f}" '
                       f'y2="{height - pad}" stroke="gray" stroke-dasharray="4 3"/>')
            out.append(f'<text x="{x + 3:.1f}" y="{pad + 12}" font-size="11">{label}={t:g}s</text>')
    for e in trace.events:
        smp = trace.samples[min(range(len(ts)), key=lambda i: abs(ts[i] - e.t))]
        cx, cy = px(e.t, smp.vehicles[e.pair[0]].x)
        color = "black" if e.kind == "frontal_collision" else "orange"
        out.append(f'<circle class="collision" data-kind="{e.kind}" data-t="{e.t}" cx="{cx:.1f}" '
                   f'cy="{cy:.1f}" r="5" fill="none" stroke="{color}" stroke-width="2"/>')
    for i, (name, color) in enumerate(_COLORS.items()):
        out.append(f'<text x="{width - pad - 40}" y="{pad + 14 * i}" font-size="11" fill="{color}">'
                   f'{name}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def emit_report(report: CampaignReport, out_dir, formats=("json", "csv")) -> list[Path]:
    """Write the requested formats; ``svg`` needs a report run with ``keep_traces``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if "json" in formats:
        p = out / "report.json"
        p.write_text(report.to_json())
        written.append(p)
    if "csv" in formats:
        p = out / "coverage.csv"
        p.write_text(report_csv(report))
        written.append(p)
    if "svg" in formats:
        if not report.traces:
            raise ValueError("svg output needs traces; run the campaign with keep_traces=True")
        d = out / "runs"
        d.mkdir(exist_ok=True)
        by_id = {v.scenario_id: v for v in report.verdicts}
        for sid in sorted(report.traces):
            p = d / f"{sid}.svg"
            p.write_text(trace_svg(report.traces[sid], by_id.get(sid)))
            written.append(p)
    return written


def default_jobs() -> int:
    return max(1, min(8, os.cpu_count() or 1))
