"""Command-line entry points: gen, monitor, eval, demo-pitfall.

Failures print one JSON error record to stderr and exit with status 1.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import evaluation as ev
from . import fixtures
from .coda import aitchison_distance, closure, ilr, sbp_to_basis
from .errors import ConfigurationError, PreconditionError, SchemaError, SimplexDriftError
from .monitor import Monitor, MonitorConfig, Observation
from .records import (
    read_json,
    read_lineage,
    read_observations,
    read_reports,
    load_config,
    write_csv,
    write_json,
    write_jsonl,
)
from .synthgen import ScenarioSpec, generate, preset, write_trace


def cmd_gen(spec_path=None, out_dir=".", seed=None, preset_name=None) -> int:
    if (spec_path is None) == (preset_name is None):
        raise ConfigurationError("give exactly one of --config or --preset")
    raw = read_json(spec_path) if spec_path else preset(preset_name, 0 if seed is None else seed)
    spec = ScenarioSpec.from_dict(raw, seed=seed)
    write_trace(generate(spec), out_dir)
    return 0


def _events_by_t(events):
    by_t = {}
    for e in events:
        by_t.setdefault(e.at, []).append(e)
    return by_t


def run_monitor(config: MonitorConfig, observations, events=()):
    mon = Monitor(config)
    by_t = _events_by_t(events)
    stray = sorted(t for t in by_t if t not in {o.t for o in observations})
    if stray:
        raise SchemaError(f"lineage events at t={stray} have no matching observation")
    return [mon.step(o, by_t.get(o.t, ())) for o in observations]


def cmd_monitor(config_path, observations_path, lineage_path, out_path) -> int:
    config = load_config(config_path)
    observations = read_observations(observations_path)
    events = read_lineage(lineage_path) if lineage_path else []
    reports = run_monitor(config, observations, events)
    write_jsonl(out_path, (r.to_dict() for r in reports))
    return 0


def _check_timeline(reports, truth):
    n = int(truth["n_steps"])
    ts = [r.t for r in reports]
    bad = [t for t in ts if not 0 <= t < n]
    if bad:
        raise SchemaError(f"timeline mismatch: report t in [{min(bad)}, {max(bad)}] outside the truth range [0, {n})")
    if any(b <= a for a, b in zip(ts, ts[1:])):
        raise SchemaError("reports must be sorted by t")


def _first_stationary_prefix(segments):
    first = segments[0] if segments else None
    return int(first["end"]) if first and first["stationary"] else 0


def evaluate(reports, truth, cfg: ev.EvalConfig, observations=None):
    """Metrics document and baseline table rows for one trace."""
    segments = truth["segments"]
    crossings = truth["crossings"]["noiseless"]
    delay = ev.detection_delay(reports, crossings, cfg.alarm_rule, cfg.window)
    far = ev.false_alarm_rate(reports, segments, cfg.alarm_rule, cfg.window)
    metrics = {
        "n_reports": len(reports),
        "config": cfg.to_dict(),
        "detection_delay": delay.to_dict(),
        "lead_time": {
            "median": delay.median_lead,
            "min_lead": cfg.min_lead,
            "meets_min_lead": delay.median_lead is not None and delay.median_lead >= cfg.min_lead,
        },
        "false_alarm_rate": far.to_dict(),
        "attribution_fidelity": ev.attribution_fidelity(
            reports, segments, truth["balance_names"], cfg.top_k, cfg.dominance
        ),
        "trend": [],
    }
    for name, c in sorted(crossings.items(), key=lambda kv: (kv[1], kv[0])):
        tr = ev.pre_event_trend(reports, c, cfg.window, cfg.alpha, cfg.trend_method)
        metrics["trend"].append({"constraint": name, "crossing": c, **(tr.to_dict() if tr else {"evaluable": False})})

    balances = np.array([r.balances for r in reports])
    dz = np.diff(balances, axis=0)
    drifting = [s for s in segments if not s["stationary"]]
    ref_len = _first_stationary_prefix(segments)
    if drifting and ref_len:
        s0 = int(drifting[0]["start"])
        h1 = ev.h1_statistic(dz, (s0, min(int(drifting[0]["end"]), len(dz))), (0, ref_len), cfg.shock_length, cfg.quantile)
        metrics["h1"] = h1.to_dict()
    if drifting:
        h3 = ev.h3_localization(
            ev.energy_in_segments(balances, segments), cfg.top_k, cfg.energy_share, cfg.n_rotations, cfg.seed
        )
        metrics["h3"] = h3.to_dict()

    rows = []
    metrics["baselines"] = {}
    if ref_len < 2:
        metrics["baselines"] = {"skipped": "no stationary prefix to calibrate against"}
        return metrics, rows
    shares = {"group": np.array([r.composition for r in reports])}
    if observations is not None:
        shares["leaf"], _ = ev.share_matrix(observations)
    scores = {"coda": ev.coda_scores(reports)}
    for level, s in shares.items():
        for method, sc in ev.baseline_scores(s, ref_len, cfg.ewma_lambda).items():
            scores[f"{level}:{method}"] = sc
    windows = ev.stationary_windows(segments, cfg.window)
    for method, sc in scores.items():
        thr = cfg.thresholds.get(method)
        if thr is None:
            try:
                thr = ev.calibrate_threshold(ev.window_maxima(sc, windows), cfg.target_rate)
            except PreconditionError:
                metrics["baselines"][method] = {"threshold": None, "uncalibrated": True}
                rows.append([method, None, None, 0, 0, None, None, None])
                continue
        alarms = sc > thr
        d = ev.detection_delay(reports, crossings, window=cfg.window, alarms=alarms)
        f = ev.false_alarm_rate(reports, segments, window=cfg.window, alarms=alarms)
        metrics["baselines"][method] = {"threshold": thr, "false_alarm_rate": f.rate, "detection_delay": d.to_dict()}
        rows.append([method, thr, f.rate, f.windows, f.alarmed, d.median_delay, d.median_lead, d.n_missed])
    return metrics, rows


BASELINE_HEADER = ["method", "threshold", "false_alarm_rate", "windows", "alarmed", "median_delay", "median_lead", "missed"]


def cmd_eval(reports_path, truth_path, eval_config_path, out_dir, observations_path=None) -> int:
    reports = read_reports(reports_path)
    truth = read_json(truth_path)
    cfg = ev.EvalConfig.from_dict(read_json(eval_config_path) if eval_config_path else None)
    observations = read_observations(observations_path) if observations_path else None
    _check_timeline(reports, truth)
    metrics, rows = evaluate(reports, truth, cfg, observations)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "metrics.json", metrics)
    write_csv(out / "baselines.csv", BASELINE_HEADER, rows)
    return 0


def _ternary(f, r, o):
    s = f + r + o
    return 0.5 * (2 * r + o) / s, math.sqrt(3) / 2 * o / s


PITFALL_HEADER = [
    "point", "F", "R", "O", "ternary_x", "ternary_y", "balance_F_vs_R", "balance_FR_vs_O", "F_over_R",
    "euclidean_to_baseline", "aitchison_to_baseline", "margin_F_over_R", "euclidean_alarm", "violation",
    "largest_log_ratio_change",
]


def pitfall_rows():
    basis = sbp_to_basis([[1, -1, 0], [1, 1, -1]], names=["F vs R", "F,R vs O"], parts=fixtures.PARTS)
    x0 = closure(fixtures.X0, parts=fixtures.PARTS)
    log_cap = math.log(fixtures.FR_CAP)
    pairs = [("F", "R"), ("F", "O"), ("R", "O")]
    rows = []
    for label, point in (("baseline", fixtures.X0), ("A", fixtures.XC), ("B", fixtures.XB)):
        x = closure(point, parts=fixtures.PARTS)
        z = ilr(x, basis).coords
        eu = float(np.linalg.norm(x.values - x0.values))
        margin = math.log(x["F"] / x["R"]) - log_cap
        changes = {f"{a}:{b}": math.log(x[a] / x[b]) - math.log(x0[a] / x0[b]) for a, b in pairs}
        top = max(changes, key=lambda k: abs(changes[k])) if label != "baseline" else ""
        rows.append([
            label, *(float(v) for v in x.values), *_ternary(*x.values), float(z[0]), float(z[1]),
            float(x["F"] / x["R"]), eu, aitchison_distance(x, x0), margin,
            int(eu > fixtures.EUCLIDEAN_THRESHOLD), int(margin >= 0), top,
        ])
    return rows


def cmd_demo_pitfall(out_dir) -> int:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "config.json", fixtures.pitfall_config())
    config = MonitorConfig.from_dict(fixtures.pitfall_config())
    for scenario in fixtures.SCENARIOS:
        raw = fixtures.pitfall_observations(scenario)
        write_jsonl(out / f"observations_{scenario}.jsonl", raw)
        reports = run_monitor(config, [Observation.from_dict(o) for o in raw])
        write_jsonl(out / f"reports_{scenario}.jsonl", (r.to_dict() for r in reports))
    write_csv(out / "pitfall.csv", PITFALL_HEADER, pitfall_rows())
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="simplexdrift", description="Compositional drift monitoring on the simplex.")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a labelled synthetic trace")
    g.add_argument("--config", help="scenario spec (JSON)")
    g.add_argument("--preset", help="named scenario instead of --config")
    g.add_argument("--seed", type=int, help="override the scenario seed")
    g.add_argument("--out", required=True, help="output directory")

    m = sub.add_parser("monitor", help="run the monitor over an observation stream")
    m.add_argument("--config", required=True, help="monitor config (JSON)")
    m.add_argument("--in", dest="inp", required=True, help="observations (JSON lines)")
    m.add_argument("--lineage", help="lineage events (JSON lines)")
    m.add_argument("--out", required=True, help="reports (JSON lines)")

    e = sub.add_parser("eval", help="score reports against ground truth")
    e.add_argument("--in", dest="inp", required=True, help="reports (JSON lines)")
    e.add_argument("--truth", required=True, help="truth document from gen")
    e.add_argument("--eval-config", help="evaluation settings (JSON)")
    e.add_argument("--observations", help="leaf-level observations for leaf baselines")
    e.add_argument("--out", required=True, help="output directory")

    d = sub.add_parser("demo-pitfall", help="write the three-point example and its plot table")
    d.add_argument("--out", required=True, help="output directory")
    return p


def _error_record(exc) -> dict:
    if isinstance(exc, SimplexDriftError):
        rec = {"error": exc.kind, "message": str(exc)}
        if isinstance(exc, SchemaError):
            rec["message"] = super(SchemaError, exc).__str__()
            rec["line"] = exc.line
            rec["path"] = None if exc.path is None else str(exc.path)
        return rec
    if isinstance(exc, FileNotFoundError):
        return {"error": "io", "message": f"no such file: {exc.filename}"}
    if isinstance(exc, OSError):
        return {"error": "io", "message": str(exc)}
    return {"error": "internal", "message": f"{type(exc).__name__}: {exc}"}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "gen":
            return cmd_gen(args.config, args.out, args.seed, args.preset)
        if args.command == "monitor":
            return cmd_monitor(args.config, args.inp, args.lineage, args.out)
        if args.command == "eval":
            return cmd_eval(args.inp, args.truth, args.eval_config, args.out, args.observations)
        return cmd_demo_pitfall(args.out)
    except (SimplexDriftError, OSError) as exc:
        print(json.dumps(_error_record(exc), sort_keys=True), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
