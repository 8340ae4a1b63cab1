"""Operator command line: forge suites, grade submissions, run the baseline,
serve episodes, ingest archival tables, aggregate reports.

Exit codes: 0 ok, 1 task failure (graded submission failed), 2 usage or
schema error.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import documents as docs
from .baseline import greedy_solve, gls_periodogram
from .episodes import EpisodeEngine
from .grading import MatchConfig, Submission, SubmissionFormatError, evaluate
from .ingest import IngestionError, InvalidTruthError, ingest_archive, parse_archive_table
from .orbits import rv_single
from .protocol import (
    ADDR_ENV_VAR,
    ProtocolServer,
    replay_mode_from_env,
    serve_stdio,
    serve_tcp,
)
from .tasks import TIERS, GeneratorConfig, generate_task

SWEEP_THRESHOLDS = (0.72, 0.80, 0.88)


# ------------------------------------------------------------------ forge

def forge_suite(seed_base: int, counts: dict, out_dir: Path,
                config: GeneratorConfig = GeneratorConfig(),
                suite_id: str = None, max_seeds: int = None) -> dict:
    """Scan seeds upward from seed_base until every tier quota is filled."""
    out_dir = Path(out_dir)
    (out_dir / "tasks").mkdir(parents=True, exist_ok=True)
    (out_dir / "truth").mkdir(parents=True, exist_ok=True)
    seeds_by_tier = {tier: [] for tier in TIERS}
    seed = seed_base
    limit = max_seeds if max_seeds is not None else 1000 * sum(counts.values())
    while any(len(seeds_by_tier[t]) < counts[t] for t in TIERS):
        if seed - seed_base >= limit:
            raise RuntimeError("seed scan limit reached before quotas filled")
        bundle = generate_task(seed, config)
        if len(seeds_by_tier[bundle.tier]) < counts[bundle.tier]:
            seeds_by_tier[bundle.tier].append(seed)
            docs.write_doc(out_dir / "tasks" / f"{bundle.task_id}.json",
                           docs.task_to_doc(bundle))
            docs.write_doc(out_dir / "truth" / f"{bundle.task_id}.truth.json",
                           docs.truth_to_doc(bundle))
        seed += 1
    manifest = docs.manifest_to_doc(suite_id or f"suite-{seed_base}",
                                    seeds_by_tier, config)
    docs.write_doc(out_dir / "manifest.json", manifest)
    return manifest


def load_suite(suite_dir: Path):
    """Load (task, truth) file pairs into bundles, sorted by task id."""
    suite_dir = Path(suite_dir)
    bundles = []
    for task_path in sorted((suite_dir / "tasks").glob("*.json")):
        truth_path = suite_dir / "truth" / f"{task_path.stem}.truth.json"
        if not truth_path.exists():
            raise docs.SchemaError(f"no truth file for {task_path.name}")
        bundles.append(docs.bundle_from_docs(docs.read_doc(task_path),
                                             docs.read_doc(truth_path)))
    if not bundles:
        raise docs.SchemaError(f"no task files under {suite_dir}/tasks")
    return bundles


# --------------------------------------------------------------- baseline

def _solve_one(args):
    task_path, truth_path, csv_dir = args
    bundle = docs.bundle_from_docs(docs.read_doc(task_path),
                                   docs.read_doc(truth_path))
    log = []
    sub = greedy_solve(bundle.dataset, log=log)
    report = evaluate(sub, bundle)
    if csv_dir:
        _write_plot_csvs(Path(csv_dir), bundle, sub)
    return (bundle.task_id, bundle.tier, docs.submission_to_doc(sub),
            docs.result_to_doc(bundle.task_id, bundle.tier, "env_done",
                               report, 1),
            "\n".join(log), bool(report.passed))


def run_baseline(suite_dir: Path, out_dir: Path, jobs: int = 1,
                 csv_dir: Path = None) -> list:
    suite_dir, out_dir = Path(suite_dir), Path(out_dir)
    for sub in ("submissions", "results", "logs"):
        (out_dir / sub).mkdir(parents=True, exist_ok=True)
    pairs = []
    for task_path in sorted((suite_dir / "tasks").glob("*.json")):
        truth_path = suite_dir / "truth" / f"{task_path.stem}.truth.json"
        pairs.append((task_path, truth_path, csv_dir))
    if not pairs:
        raise docs.SchemaError(f"no task files under {suite_dir}/tasks")
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_solve_one, pairs))
    else:
        rows = [_solve_one(p) for p in pairs]
    for task_id, tier, sub_doc, result_doc, log_text, _ in rows:
        docs.write_doc(out_dir / "submissions" / f"{task_id}.submission.json",
                       sub_doc)
        docs.write_doc(out_dir / "results" / f"{task_id}.result.json",
                       result_doc)
        (out_dir / "logs" / f"{task_id}.log").write_text(log_text + "\n")
    return rows


def _write_plot_csvs(csv_dir: Path, bundle, sub: Submission):
    """Data series a plotting tool can consume directly."""
    csv_dir.mkdir(parents=True, exist_ok=True)
    ds = bundle.dataset
    perio = gls_periodogram(ds)
    lines = ["frequency_per_day,power"]
    lines += [f"{f:.10g},{p:.10g}" for f, p in
              zip(perio.frequencies[::10], perio.powers[::10])]
    (csv_dir / f"{bundle.task_id}.periodogram.csv").write_text(
        "\n".join(lines) + "\n")

    from .grading import forward_submission
    pred = forward_submission(sub, ds)
    resid = ds.rvs_ms - pred
    lines = ["time_days,residual_ms,sigma_ms"]
    lines += [f"{t:.10g},{r:.10g},{s:.10g}"
              for t, r, s in zip(ds.times_days, resid, ds.sigmas_ms)]
    (csv_dir / f"{bundle.task_id}.residuals.csv").write_text(
        "\n".join(lines) + "\n")

    if sub.planets:
        top = max(sub.planets,
                  key=lambda p: np.ptp(rv_single(ds.times_days, p, ds.star)))
        others = np.zeros(ds.n_obs)
        for p in sub.planets:
            if p is not top:
                others += rv_single(ds.times_days, p, ds.star)
        phase = ((ds.times_days - ds.t_ref_days) / top.P_days) % 1.0
        signal = ds.rvs_ms - pred + rv_single(ds.times_days, top, ds.star)
        order = np.argsort(phase)
        lines = ["phase,rv_ms,sigma_ms"]
        lines += [f"{phase[i]:.10g},{signal[i]:.10g},{ds.sigmas_ms[i]:.10g}"
                  for i in order]
        (csv_dir / f"{bundle.task_id}.phase_fold.csv").write_text(
            "\n".join(lines) + "\n")


# ----------------------------------------------------------------- report

@dataclass(frozen=True)
class AggregateReport:
    per_tier_pass: dict      # tier -> percent
    per_criterion: dict      # tier -> {criterion: percent}
    env_done_rate: float     # percent
    n_results: int
    sweep: dict = None       # tau -> {tier: percent}


def aggregate_report(result_paths, sweep: bool = False) -> AggregateReport:
    rows = []
    version = None
    for path in result_paths:
        doc = docs.read_doc(path)
        if version is None:
            version = doc.get("schema_version")
        elif doc.get("schema_version") != version:
            raise docs.SchemaError("mixed schema versions in result files")
        rows.append(doc)
    if not rows:
        raise docs.SchemaError("no result files")

    tiers = sorted({r["tier"] for r in rows},
                   key=lambda t: TIERS.index(t) if t in TIERS else 99)
    per_tier, per_crit = {}, {}
    for tier in tiers:
        sub = [r for r in rows if r["tier"] == tier]
        graded = [r["report"] for r in sub if r["report"] is not None]
        per_tier[tier] = 100.0 * sum(r["passed"] for r in graded) / len(sub)
        per_crit[tier] = {
            crit: 100.0 * sum(r[crit] for r in graded) / len(sub)
            for crit in ("ok_delta_bic", "ok_rms", "ok_match", "ok_count")}
        assert per_tier[tier] <= min(per_crit[tier].values()) + 1e-9
    env_done = 100.0 * sum(r["status"] == "env_done" for r in rows) / len(rows)

    sweep_table = None
    if sweep:
        sweep_table = {}
        for tau in SWEEP_THRESHOLDS:
            sweep_table[tau] = {}
            for tier in tiers:
                sub = [r for r in rows if r["tier"] == tier]
                n_pass = 0
                for r in sub:
                    rep = r["report"]
                    if rep is None or rep.get("match_score") is None:
                        continue
                    ok = (rep["ok_rms"] and rep["ok_delta_bic"]
                          and rep["ok_count"] and rep["match_score"] >= tau)
                    n_pass += ok
                sweep_table[tau][tier] = 100.0 * n_pass / len(sub)
    return AggregateReport(per_tier_pass=per_tier, per_criterion=per_crit,
                           env_done_rate=env_done, n_results=len(rows),
                           sweep=sweep_table)


def _print_aggregate(agg: AggregateReport, out=None):
    out = out or sys.stdout
    out.write(f"results: {agg.n_results}  env done: {agg.env_done_rate:.1f}%\n")
    for tier, rate in agg.per_tier_pass.items():
        crit = agg.per_criterion[tier]
        out.write(f"{tier:>7}: pass {rate:5.1f}%   "
                  + "  ".join(f"{k.replace('ok_', '')} {v:5.1f}%"
                              for k, v in crit.items()) + "\n")
    if agg.sweep:
        out.write("match-threshold sweep (pass %):\n")
        for tau, row in agg.sweep.items():
            cells = "  ".join(f"{t}={v:5.1f}" for t, v in row.items())
            out.write(f"  tau={tau:.2f}  {cells}\n")


# -------------------------------------------------------------- commands

def _cmd_forge(args) -> int:
    counts = [int(x) for x in args.counts.split(",")]
    if len(counts) != 3:
        raise ValueError("--counts wants three integers: easy,medium,hard")
    config = GeneratorConfig(multi_instrument=args.multi_instrument)
    manifest = forge_suite(args.seed_base, dict(zip(TIERS, counts)),
                           Path(args.out), config, suite_id=args.suite_id)
    print(f"forged {sum(manifest['counts'].values())} tasks into {args.out} "
          f"(config {manifest['config_hash']})")
    return 0


def _cmd_grade(args) -> int:
    bundle = docs.bundle_from_docs(docs.read_doc(args.task),
                                   docs.read_doc(args.truth))
    sub = docs.submission_from_doc(docs.read_doc(args.submission))
    try:
        report = evaluate(sub, bundle, MatchConfig(),
                          max_planets=args.max_planets)
    except SubmissionFormatError as exc:
        from .grading import CriteriaReport
        report = CriteriaReport.format_rejection(str(exc))
    doc = docs.report_to_doc(report)
    print(docs.dumps(doc))
    if args.report:
        docs.write_doc(args.report, doc)
    return 0 if report.passed else 1


def _cmd_baseline(args) -> int:
    rows = run_baseline(Path(args.suite), Path(args.out), jobs=args.jobs,
                        csv_dir=Path(args.csv_dir) if args.csv_dir else None)
    n_pass = sum(passed for *_, passed in rows)
    print(f"baseline solved {n_pass}/{len(rows)} tasks; "
          f"results in {args.out}/results")
    return 0


def _cmd_serve(args) -> int:
    bundles = load_suite(Path(args.suite))
    replay = args.replay or replay_mode_from_env()
    engine = EpisodeEngine(bundles, enforce_wall_clock=not replay)
    server = ProtocolServer(engine)
    addr = args.addr or os.environ.get(ADDR_ENV_VAR)
    if addr:
        host, _, port = addr.rpartition(":")
        tcp = serve_tcp(server, host or "127.0.0.1", int(port))
        actual = tcp.server_address
        print(f"serving {len(bundles)} tasks on {actual[0]}:{actual[1]}"
              + (" (replay mode)" if replay else ""), flush=True)
        try:
            tcp.serve_forever()
        except KeyboardInterrupt:
            pass
        finally:
            tcp.server_close()
    else:
        serve_stdio(server)
    return 0


def _cmd_report(args) -> int:
    paths = sorted(Path(args.results).glob("*.result.json"))
    agg = aggregate_report(paths, sweep=args.sweep)
    _print_aggregate(agg)
    if args.csv and agg.sweep:
        lines = ["tau," + ",".join(agg.per_tier_pass)]
        for tau, row in agg.sweep.items():
            lines.append(f"{tau:.2f}," + ",".join(f"{row[t]:.3f}"
                                                  for t in agg.per_tier_pass))
        Path(args.csv).write_text("\n".join(lines) + "\n")
    return 0


def _cmd_ingest(args) -> int:
    rows = parse_archive_table(Path(args.data).read_text())
    truth = docs.read_doc(args.truth)
    bundle = ingest_archive(rows, truth, task_id=args.task_id)
    docs.write_doc(args.out_task, docs.task_to_doc(bundle))
    docs.write_doc(args.out_truth, docs.truth_to_doc(bundle))
    print(f"ingested {bundle.dataset.n_obs} observations "
          f"({len(bundle.dataset.instruments())} instruments) as "
          f"{bundle.task_id}: tier {bundle.tier}, "
          f"difficulty {bundle.difficulty.d_total}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rvbench",
        description="radial-velocity exoplanet discovery benchmark")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("forge", help="generate a seed-deterministic suite")
    p.add_argument("--seed-base", type=int, required=True)
    p.add_argument("--counts", default="20,40,40",
                   help="easy,medium,hard quotas")
    p.add_argument("--out", required=True)
    p.add_argument("--suite-id", default=None)
    p.add_argument("--multi-instrument", action="store_true")
    p.set_defaults(func=_cmd_forge)

    p = sub.add_parser("grade", help="grade one submission against truth")
    p.add_argument("task")
    p.add_argument("truth")
    p.add_argument("submission")
    p.add_argument("--report", default=None, help="also write the report here")
    p.add_argument("--max-planets", type=int, default=8)
    p.set_defaults(func=_cmd_grade)

    p = sub.add_parser("baseline", help="run the classical solver on a suite")
    p.add_argument("--suite", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--csv-dir", default=None,
                   help="emit periodogram/residual/phase-fold CSV series")
    p.set_defaults(func=_cmd_baseline)

    p = sub.add_parser("serve", help="serve episodes over the wire protocol")
    p.add_argument("--suite", required=True)
    p.add_argument("--addr", default=None,
                   help=f"host:port for TCP mode (or ${ADDR_ENV_VAR}); "
                        "default stdio")
    p.add_argument("--replay", action="store_true",
                   help="disable wall-clock enforcement")
    p.set_defaults(func=_cmd_serve)

    p = sub.add_parser("report", help="aggregate result files")
    p.add_argument("--results", required=True)
    p.add_argument("--sweep", action="store_true",
                   help="re-score ok_match at thresholds "
                        + ",".join(map(str, SWEEP_THRESHOLDS)))
    p.add_argument("--csv", default=None, help="write the sweep curve here")
    p.set_defaults(func=_cmd_report)

    p = sub.add_parser("ingest", help="convert an archival RV table")
    p.add_argument("--data", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--task-id", default="archival")
    p.add_argument("--out-task", required=True)
    p.add_argument("--out-truth", required=True)
    p.set_defaults(func=_cmd_ingest)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    try:
        return args.func(args)
    except (docs.SchemaError, IngestionError, InvalidTruthError,
            FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
