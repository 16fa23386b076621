"""chronolint command line: scan, filter, report, and corpus subcommands.

Exit codes: 0 clean, 1 anomalies found, 2 usage or environment error.
stdout carries data only; diagnostics go to stderr.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import json
import os
import re
import subprocess
import sys
from datetime import datetime, timezone
from typing import Iterable, Sequence

from . import __version__
from .detect import (
    DEFAULT_FINGERPRINT_RULES,
    DetectorConfig,
    FingerprintRule,
    run_all_detectors,
    sanitize_message,
    scan_fingerprints,
)
from .filters import (
    date_cutoff,
    drop_flagged,
    drop_pre_epoch,
    drop_projects,
    time_window,
)
from .graph import build_history
from .ingest import (
    IngestReport,
    emit_export_stream,
    git_executable,
    parse_export_stream,
    read_repository,
)
from .model import (
    AnomalyKind,
    AnomalyRecord,
    ChronolintError,
    CommitRecord,
    ConfigError,
    FilterPolicy,
    Timestamp,
)
from .report import (
    ScanReport,
    csv_tables,
    cutoff_table,
    emit,
    emit_anomaly_stream,
    parse_anomaly_stream,
    ranked_tokens,
    summarize,
    token_frequencies,
    top_n,
)

EXIT_CLEAN = 0
EXIT_ANOMALIES = 1
EXIT_ERROR = 2


class UsageError(ChronolintError):
    pass


def parse_instant(text: str) -> Timestamp:
    """Parse an ISO-8601 date/datetime (or a raw epoch integer)."""
    try:
        return Timestamp(int(text))
    except ValueError:
        pass
    try:
        dt = datetime.fromisoformat(text)
    except ValueError as exc:
        raise UsageError(f"unparseable instant: {text!r}") from exc
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return Timestamp(int(dt.timestamp()), int(dt.utcoffset().total_seconds() // 60))


def render_instant(ts: Timestamp) -> str:
    try:
        return datetime.fromtimestamp(ts.epoch_seconds, timezone.utc).strftime(
            "%Y-%m-%dT%H:%M:%SZ"
        )
    except (OverflowError, OSError, ValueError):
        return f"epoch:{ts.epoch_seconds}"


def epoch_year(epoch: int) -> int:
    try:
        return datetime.fromtimestamp(epoch, timezone.utc).year
    except (OverflowError, OSError, ValueError):
        return 1 if epoch < 0 else 9999


def load_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        with open(path, "rb") as fh:
            obj = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(obj, dict):
        raise UsageError(f"config {path} is not a JSON object")
    return obj


def fingerprint_rules_from_config(config: dict) -> tuple[FingerprintRule, ...]:
    raw = config.get("fingerprint_rules")
    if raw is None:
        return DEFAULT_FINGERPRINT_RULES
    rules = []
    for entry in raw:
        try:
            rules.append(
                FingerprintRule(
                    name=entry["name"],
                    pattern=entry["pattern"],
                    case_insensitive=bool(entry.get("case_insensitive", False)),
                )
            )
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"bad fingerprint rule entry: {entry!r}") from exc
    for rule in rules:
        rule.compile()  # fail at load time, not scan time
    return tuple(rules)


def detector_config_from(args: argparse.Namespace, config: dict) -> DetectorConfig:
    old = args.old_threshold or config.get("old_threshold")
    reference = args.reference or config.get("reference")
    basis = args.time_basis or config.get("time_basis") or "committer"
    merge_exclusion = config.get("merge_exclusion", True)
    if args.no_merge_exclusion:
        merge_exclusion = False
    kwargs: dict = {
        "merge_exclusion": merge_exclusion,
        "time_basis": basis,
    }
    if old is not None:
        kwargs["old_threshold"] = parse_instant(str(old))
    if reference is not None:
        kwargs["future_reference"] = parse_instant(str(reference))
    return DetectorConfig(**kwargs)


def policy_from_object(obj: dict) -> FilterPolicy:
    kwargs: dict = {}
    if "min_epoch_seconds" in obj:
        kwargs["min_epoch_seconds"] = obj["min_epoch_seconds"]
    if "cutoff" in obj:
        kwargs["cutoff"] = parse_instant(str(obj["cutoff"]))
    if "cutoff_mode" in obj:
        kwargs["cutoff_mode"] = obj["cutoff_mode"]
    if "window" in obj:
        start, end = obj["window"]
        kwargs["window"] = (parse_instant(str(start)), parse_instant(str(end)))
    if "project_blacklist" in obj:
        kwargs["project_blacklist"] = frozenset(obj["project_blacklist"])
    if "drop_flagged_kinds" in obj:
        kwargs["drop_flagged_kinds"] = frozenset(
            AnomalyKind(k) for k in obj["drop_flagged_kinds"]
        )
    if "time_basis" in obj:
        kwargs["time_basis"] = obj["time_basis"]
    if "coalesce_window_seconds" in obj:
        kwargs["coalesce_window_seconds"] = obj["coalesce_window_seconds"]
    return FilterPolicy(**kwargs)


def load_records(
    args: argparse.Namespace,
) -> tuple[list[CommitRecord], IngestReport, str]:
    """Load commit records from exactly one input source."""
    if bool(args.repo) == bool(args.jsonl):
        raise UsageError("exactly one of --repo or --jsonl is required")
    if args.repo:
        project = args.project or args.repo
        records, report = read_repository(
            args.repo,
            project,
            with_files=getattr(args, "with_files", False),
            first_parent=getattr(args, "first_parent", False),
            branches=getattr(args, "branches", None),
        )
        return records, report, project
    try:
        with open(args.jsonl, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise UsageError(f"cannot read {args.jsonl}: {exc}") from exc
    project = args.project or args.jsonl
    records, report = parse_export_stream(data, project)
    return records, report, project


def group_by_project(records: Iterable[CommitRecord]) -> dict[str, list[CommitRecord]]:
    corpus: dict[str, list[CommitRecord]] = {}
    for r in records:
        corpus.setdefault(r.project, []).append(r)
    return corpus


def scan_corpus(
    corpus: dict[str, list[CommitRecord]], cfg: DetectorConfig
) -> set[AnomalyRecord]:
    anomalies: set[AnomalyRecord] = set()
    for project in sorted(corpus):
        history = build_history(corpus[project], project)
        anomalies |= run_all_detectors(history, cfg)
    return anomalies


def build_report(
    corpus: dict[str, list[CommitRecord]],
    anomalies: set[AnomalyRecord],
    cfg: DetectorConfig,
    rules: Sequence[FingerprintRule],
    top: int = 20,
) -> ScanReport:
    """Assemble the full scan report: totals, tables, fingerprints, tokens."""
    report = summarize(corpus, anomalies)
    reference = cfg.resolved_reference()
    report.meta = {
        "tool_version": __version__,
        "scan_time": render_instant(reference),
        "future_reference": render_instant(reference),
        "old_threshold": render_instant(cfg.old_threshold),
        "time_basis": cfg.time_basis,
        "merge_exclusion": cfg.merge_exclusion,
    }
    commits = {r.id: r for recs in corpus.values() for r in recs}
    report.top_projects = top_n(anomalies, key="project", n=top)
    report.top_authors = top_n(anomalies, key="author", n=top, commits=commits)
    if anomalies:
        years = sorted({epoch_year(a.observed.epoch_seconds) for a in anomalies})
        report.cutoff_table = cutoff_table(anomalies, range(years[0], years[-1] + 1))
    flagged_ids = {a.commit_id for a in anomalies}
    flagged_records = [commits[i] for i in sorted(flagged_ids) if i in commits]
    report.fingerprints = {
        name: count for name, (count, _) in scan_fingerprints(flagged_records, rules).items()
    }
    report.tokens = ranked_tokens(
        token_frequencies(sanitize_message(r.message) for r in flagged_records),
        limit=50,
    )
    return report


def write_output(data: bytes, out: str | None) -> None:
    if out is None:
        sys.stdout.buffer.write(data)
        sys.stdout.buffer.flush()
    else:
        with open(out, "wb") as fh:
            fh.write(data)


def write_report(report: ScanReport, format: str, out: str | None) -> None:
    if format == "csv" and out is not None:
        # one file per table
        os.makedirs(out, exist_ok=True)
        for name, body in csv_tables(report).items():
            with open(os.path.join(out, f"{name}.csv"), "wb") as fh:
                fh.write(body)
        return
    write_output(emit(report, format), out)


def cmd_scan(args: argparse.Namespace) -> int:
    config = load_config_file(args.config)
    cfg = detector_config_from(args, config)
    rules = fingerprint_rules_from_config(config)
    records, ingest_report, _ = load_records(args)
    for position, reason in ingest_report.rejects:
        print(f"chronolint: rejected {position}: {reason}", file=sys.stderr)
    corpus = group_by_project(records)
    anomalies = scan_corpus(corpus, cfg)
    report = build_report(corpus, anomalies, cfg, rules, top=args.top)
    write_report(report, args.format, args.out)
    if args.anomalies_out:
        commits = {r.id: r for r in records}
        with open(args.anomalies_out, "wb") as fh:
            fh.write(emit_anomaly_stream(anomalies, commits))
    return EXIT_ANOMALIES if anomalies else EXIT_CLEAN


def cmd_filter(args: argparse.Namespace) -> int:
    config = load_config_file(args.config)
    policy_obj = load_config_file(args.policy) if args.policy else config.get("policy", {})
    policy = policy_from_object(policy_obj)
    records, _, _ = load_records(args)
    corpus = group_by_project(records)

    corpus = drop_projects(corpus, policy.project_blacklist)
    kept: list[CommitRecord] = []
    dropped: list[str] = []
    blacklisted = len(records) - sum(len(v) for v in corpus.values())
    basis = policy.time_basis
    for project in sorted(corpus):
        recs = corpus[project]
        if policy.drop_flagged_kinds:
            cfg = detector_config_from(args, config)
            history = build_history(recs, project)
            anomalies = run_all_detectors(history, cfg)
            recs, gone = drop_flagged(recs, anomalies, policy.drop_flagged_kinds)
            dropped.extend(gone)
        if policy.min_epoch_seconds is not None:
            recs, gone = drop_pre_epoch(recs, policy.min_epoch_seconds, basis)
            dropped.extend(gone)
        if policy.cutoff is not None:
            recs, gone = date_cutoff(recs, policy.cutoff, policy.cutoff_mode, basis)
            dropped.extend(gone)
        if policy.window is not None:
            before = {r.id for r in recs}
            recs = time_window(recs, policy.window[0], policy.window[1], basis)
            dropped.extend(sorted(before - {r.id for r in recs}))
        kept.extend(recs)

    kept.sort(key=lambda r: (r.project, r.commit_time.epoch_seconds, r.id))
    write_output(emit_export_stream(kept), args.out)
    summary = {
        "kept": len(kept),
        "dropped": len(dropped) + blacklisted,
        "dropped_blacklisted_projects": blacklisted,
    }
    if args.out is not None:
        print(json.dumps(summary))
    else:
        print(json.dumps(summary), file=sys.stderr)
    return EXIT_CLEAN


def cmd_report(args: argparse.Namespace) -> int:
    try:
        with open(args.infile, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise UsageError(f"cannot read {args.infile}: {exc}") from exc
    try:
        anomalies, authors, messages = parse_anomaly_stream(data)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc

    report = ScanReport()
    report.meta = {"tool_version": __version__, "source": args.infile}
    counts: dict[str, int] = {}
    for a in anomalies:
        counts[a.kind.value] = counts.get(a.kind.value, 0) + 1
    report.anomalies = {
        kind.value: {
            "count": len({a.commit_id for a in anomalies if a.kind is kind}),
            "affected_projects": len({a.project for a in anomalies if a.kind is kind}),
            "corpus_percent": 0.0,
            "corpus_denominator": 0,
            "affected_percent": 0.0,
            "affected_denominator": 0,
        }
        for kind in AnomalyKind
    }
    if args.top_projects:
        report.top_projects = top_n(anomalies, key="project", n=args.top_projects)
    if args.top_authors:
        report.top_authors = top_n(
            anomalies, key="author", n=args.top_authors, authors=authors
        )
    if args.cutoff_table and anomalies:
        years = sorted({epoch_year(a.observed.epoch_seconds) for a in anomalies})
        report.cutoff_table = cutoff_table(anomalies, range(years[0], years[-1] + 1))
    if args.tokens:
        report.tokens = ranked_tokens(
            token_frequencies(sanitize_message(m) for m in messages.values()),
            limit=50,
        )
    write_report(report, args.format, args.out)
    return EXIT_CLEAN


_URL_RE = re.compile(r"^[a-z+]+://|^git@")


def _cache_path(cache_dir: str, url: str) -> str:
    safe = re.sub(r"[^0-9A-Za-z._-]+", "_", url).strip("_")
    return os.path.join(cache_dir, safe)


def _ensure_local(entry: str, cache_dir: str | None) -> str:
    """Resolve a corpus list entry to a local repository path, cloning URLs."""
    if not _URL_RE.match(entry):
        return entry
    if cache_dir is None:
        raise UsageError(f"--cache is required for remote repositories: {entry}")
    target = _cache_path(cache_dir, entry)
    if not os.path.isdir(target):
        os.makedirs(cache_dir, exist_ok=True)
        proc = subprocess.run(
            [git_executable(), "clone", "--quiet", entry, target], capture_output=True
        )
        if proc.returncode != 0:
            raise ChronolintError(
                f"clone failed: {proc.stderr.decode('utf-8', 'replace').strip()}"
            )
    proc = subprocess.run(
        [git_executable(), "-C", target, "rev-parse", "--is-shallow-repository"],
        capture_output=True,
    )
    if proc.stdout.strip() == b"true":
        # full history is required for timestamp analysis
        raise ChronolintError(f"shallow clone refused: {entry}")
    return target


def cmd_corpus(args: argparse.Namespace) -> int:
    config = load_config_file(args.config)
    cfg = detector_config_from(args, config)
    rules = fingerprint_rules_from_config(config)
    try:
        with open(args.list, "r", encoding="utf-8") as fh:
            entries = sorted({ln.strip() for ln in fh if ln.strip()})
    except OSError as exc:
        raise UsageError(f"cannot read {args.list}: {exc}") from exc
    if not entries:
        raise UsageError("corpus list is empty")

    def scan_one(entry: str) -> tuple[str, list[CommitRecord], set[AnomalyRecord]]:
        path = _ensure_local(entry, args.cache)
        records, _ = read_repository(path, entry)
        history = build_history(records, entry)
        return entry, records, run_all_detectors(history, cfg)

    corpus: dict[str, list[CommitRecord]] = {}
    anomalies: set[AnomalyRecord] = set()
    failures: dict[str, str] = {}
    with concurrent.futures.ThreadPoolExecutor(max_workers=args.jobs) as pool:
        futures = {pool.submit(scan_one, entry): entry for entry in entries}
        for future in concurrent.futures.as_completed(futures):
            entry = futures[future]
            try:
                project, records, found = future.result()
            except (ChronolintError, OSError) as exc:
                failures[entry] = str(exc)
                print(f"chronolint: {entry}: {exc}", file=sys.stderr)
                continue
            corpus[project] = records
            anomalies |= found

    if not corpus:
        print("chronolint: all repositories failed", file=sys.stderr)
        return EXIT_ERROR
    report = build_report(corpus, anomalies, cfg, rules, top=args.top)
    report.meta["failures"] = [
        {"entry": entry, "error": failures[entry]} for entry in sorted(failures)
    ]
    write_report(report, args.format, args.out)
    if args.anomalies_out:
        commits = {r.id: r for recs in corpus.values() for r in recs}
        with open(args.anomalies_out, "wb") as fh:
            fh.write(emit_anomaly_stream(anomalies, commits))
    return EXIT_ANOMALIES if anomalies else EXIT_CLEAN


def _add_input_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--repo", help="path to a git repository")
    parser.add_argument("--jsonl", help="path to a JSONL commit export")
    parser.add_argument("--project", help="project label for the input")
    parser.add_argument("--with-files", action="store_true",
                        help="collect changed-file lists (slower)")
    parser.add_argument("--first-parent", action="store_true",
                        help="walk first-parent history only")
    parser.add_argument("--branches", help="restrict the walk to matching branches")


def _add_detector_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--old-threshold", help="suspicious-old cutoff (ISO-8601)")
    parser.add_argument("--reference", help="future-date reference instant (ISO-8601); "
                                            "defaults to scan wall-clock time")
    parser.add_argument("--time-basis", choices=("author", "committer"),
                        help="which commit date detectors read (default committer)")
    parser.add_argument("--no-merge-exclusion", action="store_true",
                        help="keep merge-related commits in the linear comparison")
    parser.add_argument("--config", help="JSON config file (flags take precedence)")


def _add_output_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--format", choices=("json", "csv", "text"), default="json")
    parser.add_argument("--out", help="write report here instead of stdout "
                                      "(a directory for csv)")
    parser.add_argument("--top", type=int, default=20,
                        help="rows in the top-projects/top-authors tables")
    parser.add_argument("--anomalies-out", help="also write flagged commits as JSONL")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="chronolint",
        description="Detect, quantify, and filter temporal anomalies in git history.",
    )
    parser.add_argument("--version", action="version", version=f"chronolint {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_scan = sub.add_parser("scan", help="scan one repository or export for anomalies")
    _add_input_options(p_scan)
    _add_detector_options(p_scan)
    _add_output_options(p_scan)
    p_scan.set_defaults(func=cmd_scan)

    p_filter = sub.add_parser("filter", help="apply a mitigation policy to commit records")
    _add_input_options(p_filter)
    _add_detector_options(p_filter)
    p_filter.add_argument("--policy", help="JSON filter policy file")
    p_filter.add_argument("--out", help="write the filtered JSONL here")
    p_filter.set_defaults(func=cmd_filter)

    p_report = sub.add_parser("report", help="summarize a previously written anomaly JSONL")
    p_report.add_argument("--in", dest="infile", required=True,
                          help="anomaly JSONL produced by scan --anomalies-out")
    p_report.add_argument("--cutoff-table", action="store_true")
    p_report.add_argument("--top-projects", type=int, metavar="N")
    p_report.add_argument("--top-authors", type=int, metavar="N")
    p_report.add_argument("--tokens", action="store_true")
    p_report.add_argument("--format", choices=("json", "csv", "text"), default="json")
    p_report.add_argument("--out")
    p_report.set_defaults(func=cmd_report)

    p_corpus = sub.add_parser("corpus", help="scan many repositories and merge reports")
    p_corpus.add_argument("--list", required=True,
                          help="file of repository paths/URLs, one per line")
    p_corpus.add_argument("--jobs", type=int, default=1)
    p_corpus.add_argument("--cache", help="clone cache directory for remote URLs")
    _add_detector_options(p_corpus)
    _add_output_options(p_corpus)
    p_corpus.set_defaults(func=cmd_corpus)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"chronolint: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except ChronolintError as exc:
        print(f"chronolint: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
