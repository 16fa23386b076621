"""Aggregate anomalies into corpus-level tables and serialize reports.

Every table is sorted deterministically (count descending, then key
ascending) and serialization is byte-stable across runs and input
permutations. Both denominators are always reported for percentages:
the whole corpus and just the affected projects.
"""

from __future__ import annotations

import csv
import io
import json
import re
from dataclasses import dataclass, field
from datetime import datetime, timezone
from importlib import resources
from typing import Iterable, Mapping

from .model import AnomalyKind, AnomalyRecord, CommitRecord, Timestamp

TOKEN_RE = re.compile(r"[0-9a-z/_-]+")

_ANOMALY_FIELD_ORDER = (
    "kind",
    "commit_id",
    "project",
    "observed_epoch",
    "observed_tz",
    "reference_epoch",
    "counterpart_id",
    "delta_seconds",
    "author_name",
    "author_email",
    "message",
)


@dataclass(frozen=True)
class CutoffRow:
    year: int
    percent_removed: float  # fraction in [0, 1]


@dataclass
class ScanReport:
    """Corpus-level scan results in the canonical report layout."""

    meta: dict = field(default_factory=dict)
    totals: dict = field(default_factory=lambda: {"commits": 0, "projects": 0})
    anomalies: dict = field(default_factory=dict)
    top_projects: list[dict] = field(default_factory=list)
    top_authors: list[dict] = field(default_factory=list)
    cutoff_table: list[CutoffRow] = field(default_factory=list)
    fingerprints: dict[str, int] = field(default_factory=dict)
    tokens: list[tuple[str, int]] = field(default_factory=list)

    @property
    def total_flagged(self) -> int:
        return len(
            set().union(*(k["commit_ids"] for k in self.anomalies.values()))
            if self.anomalies
            else set()
        )


def default_stopwords() -> frozenset[str]:
    """The bundled English stop word list (overridable by callers)."""
    text = resources.files("chronolint").joinpath("data/stopwords.txt").read_text("utf-8")
    return frozenset(w.strip() for w in text.splitlines() if w.strip())


def summarize(
    corpus: Mapping[str, Iterable[CommitRecord]],
    anomalies: Iterable[AnomalyRecord],
) -> ScanReport:
    """Compute totals and per-kind counts/percentages over the corpus.

    For each kind, the corpus percentage divides by all commits and the
    affected percentage divides by the commit count of just the projects
    with at least one flag of that kind.
    """
    corpus = {p: list(recs) for p, recs in corpus.items()}
    anomalies = list(anomalies)
    total_commits = sum(len(recs) for recs in corpus.values())
    project_sizes = {p: len(recs) for p, recs in corpus.items()}

    report = ScanReport()
    report.totals = {"commits": total_commits, "projects": len(corpus)}

    for kind in AnomalyKind:
        flagged = [a for a in anomalies if a.kind is kind]
        ids = sorted({a.commit_id for a in flagged})
        projects = {a.project for a in flagged}
        affected_commits = sum(project_sizes.get(p, 0) for p in projects)
        report.anomalies[kind.value] = {
            "count": len(ids),
            "commit_ids": ids,
            "affected_projects": len(projects),
            "corpus_percent": len(ids) / total_commits if total_commits else 0.0,
            "corpus_denominator": total_commits,
            "affected_percent": len(ids) / affected_commits if affected_commits else 0.0,
            "affected_denominator": affected_commits,
        }
    return report


def _year_boundary_epoch(year: int) -> int:
    return int(datetime(year, 1, 1, tzinfo=timezone.utc).timestamp())


def cutoff_table(
    anomalies: Iterable[AnomalyRecord], years: Iterable[int]
) -> list[CutoffRow]:
    """Fraction of anomalous commits removed by dropping each year and earlier.

    A commit counts as removed for year y when its flagged-basis time is
    before Jan 1 of y+1 (UTC), i.e. it is from or before year y. Rows come
    back sorted by year descending.
    """
    observed: dict[str, int] = {}
    for a in anomalies:
        observed.setdefault(a.commit_id, a.observed.epoch_seconds)
    total = len(observed)
    rows = []
    for year in sorted(set(years), reverse=True):
        bound = _year_boundary_epoch(year + 1)
        removed = sum(1 for t in observed.values() if t < bound)
        rows.append(CutoffRow(year=year, percent_removed=removed / total if total else 0.0))
    return rows


def top_n(
    anomalies: Iterable[AnomalyRecord],
    key: str = "project",
    n: int = 20,
    commits: Mapping[str, CommitRecord] | None = None,
    authors: Mapping[str, tuple[str, str]] | None = None,
) -> list[dict]:
    """Rank projects or authors by distinct flagged commits.

    Author rows merge by email (display names alias too easily); an empty
    name renders as "(no name)". Either a commit map or an id -> (name,
    email) map must be supplied for the author key. Rows carry count,
    share of all flagged commits, and cumulative share; ties order by key
    ascending.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    ids_by_key: dict[str, set[str]] = {}
    names_by_key: dict[str, set[str]] = {}
    all_ids: set[str] = set()
    for a in anomalies:
        all_ids.add(a.commit_id)
        if key == "project":
            k = a.project
        elif key == "author":
            if commits is not None and a.commit_id in commits:
                r = commits[a.commit_id]
                name, email = r.author_name, r.author_email
            elif authors is not None and a.commit_id in authors:
                name, email = authors[a.commit_id]
            else:
                continue
            k = email
            names_by_key.setdefault(k, set()).add(name)
        else:
            raise ValueError(f"unknown ranking key: {key!r}")
        ids_by_key.setdefault(k, set()).add(a.commit_id)

    total = len(all_ids)
    ranked = sorted(ids_by_key.items(), key=lambda kv: (-len(kv[1]), kv[0]))
    rows = []
    cumulative = 0
    for k, ids in ranked[:n]:
        cumulative += len(ids)
        label = k
        if key == "author":
            names = sorted(nm for nm in names_by_key.get(k, set()) if nm)
            display = names[0] if names else "(no name)"
            label = f"{display} <{k}>"
        rows.append(
            {
                "key": label,
                "count": len(ids),
                "share": len(ids) / total if total else 0.0,
                "cumulative_share": cumulative / total if total else 0.0,
            }
        )
    return rows


def token_frequencies(
    messages: Iterable[str], stopwords: Iterable[str] | None = None
) -> dict[str, int]:
    """Count message tokens after lowercasing and stop word removal.

    Tokens split on anything outside [a-z0-9/-_] so composite markers like
    "git-svn-id" or "external/" survive whole; tokens with no alphanumeric
    character are discarded.
    """
    stop = frozenset(stopwords) if stopwords is not None else default_stopwords()
    counts: dict[str, int] = {}
    for message in messages:
        for token in TOKEN_RE.findall(message.lower()):
            if token in stop or not any(c.isalnum() for c in token):
                continue
            counts[token] = counts.get(token, 0) + 1
    return counts


def ranked_tokens(counts: Mapping[str, int], limit: int | None = None) -> list[tuple[str, int]]:
    ordered = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return ordered[:limit] if limit is not None else ordered


def _report_object(report: ScanReport) -> dict:
    return {
        "meta": dict(sorted(report.meta.items())),
        "totals": report.totals,
        "anomalies": {
            kind: {k: v for k, v in stats.items() if k != "commit_ids"}
            for kind, stats in sorted(report.anomalies.items())
        },
        "top_projects": report.top_projects,
        "top_authors": report.top_authors,
        "cutoff_table": [
            {"year": row.year, "percent_removed": row.percent_removed}
            for row in report.cutoff_table
        ],
        "fingerprints": dict(sorted(report.fingerprints.items())),
        "tokens": [{"token": t, "count": c} for t, c in report.tokens],
    }


def csv_tables(report: ScanReport) -> dict[str, bytes]:
    """Render each report table as a standalone CSV file body."""

    def render(header: list[str], rows: list[list]) -> bytes:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
        return buf.getvalue().encode("utf-8")

    tables = {
        "anomalies": render(
            ["kind", "count", "affected_projects", "corpus_percent",
             "corpus_denominator", "affected_percent", "affected_denominator"],
            [
                [kind, s["count"], s["affected_projects"],
                 f"{s['corpus_percent']:.6f}", s["corpus_denominator"],
                 f"{s['affected_percent']:.6f}", s["affected_denominator"]]
                for kind, s in sorted(report.anomalies.items())
            ],
        ),
        "top_projects": render(
            ["project", "count", "share", "cumulative_share"],
            [[r["key"], r["count"], f"{r['share']:.6f}", f"{r['cumulative_share']:.6f}"]
             for r in report.top_projects],
        ),
        "top_authors": render(
            ["author", "count", "share", "cumulative_share"],
            [[r["key"], r["count"], f"{r['share']:.6f}", f"{r['cumulative_share']:.6f}"]
             for r in report.top_authors],
        ),
        "cutoff_table": render(
            ["year", "percent_removed"],
            [[row.year, f"{row.percent_removed:.6f}"] for row in report.cutoff_table],
        ),
        "fingerprints": render(
            ["rule", "count"],
            [[name, count] for name, count in sorted(report.fingerprints.items())],
        ),
        "tokens": render(
            ["token", "count"],
            [[t, c] for t, c in report.tokens],
        ),
    }
    return tables


def emit(report: ScanReport, format: str = "json") -> bytes:
    """Serialize a report deterministically (stable keys, LF endings)."""
    if format == "json":
        text = json.dumps(_report_object(report), indent=2, ensure_ascii=True) + "\n"
        return text.encode("ascii")
    if format == "csv":
        parts = []
        for name, body in csv_tables(report).items():
            parts.append(f"# {name}\n".encode("utf-8") + body)
        return b"\n".join(parts)
    if format == "text":
        lines = []
        lines.append("chronolint scan report")
        for k, v in sorted(report.meta.items()):
            lines.append(f"  {k}: {v}")
        lines.append(
            f"commits: {report.totals['commits']}  projects: {report.totals['projects']}"
        )
        for kind, s in sorted(report.anomalies.items()):
            lines.append(
                f"{kind}: {s['count']} "
                f"({100 * s['corpus_percent']:.2f}% of corpus, "
                f"{100 * s['affected_percent']:.2f}% of {s['affected_projects']} affected project(s))"
            )
        if report.top_projects:
            lines.append("top projects:")
            lines.extend(f"  {r['count']:>6}  {r['key']}" for r in report.top_projects)
        if report.top_authors:
            lines.append("top authors:")
            lines.extend(f"  {r['count']:>6}  {r['key']}" for r in report.top_authors)
        if report.cutoff_table:
            lines.append("cutoff table (year: % of anomalies removed):")
            lines.extend(
                f"  <= {row.year}: {100 * row.percent_removed:.2f}%"
                for row in report.cutoff_table
            )
        if report.fingerprints:
            lines.append("fingerprints:")
            lines.extend(
                f"  {count:>6}  {name}"
                for name, count in sorted(report.fingerprints.items())
            )
        if report.tokens:
            lines.append("frequent tokens:")
            lines.extend(f"  {c:>6}  {t}" for t, c in report.tokens)
        return ("\n".join(lines) + "\n").encode("utf-8")
    raise ValueError(f"unknown report format: {format!r}")


def anomaly_sort_key(a: AnomalyRecord) -> tuple:
    return (
        a.project,
        a.commit_id,
        a.kind.value,
        a.counterpart_id or "",
        a.delta_seconds or 0,
    )


def anomaly_to_object(
    anomaly: AnomalyRecord, commit: CommitRecord | None = None
) -> dict:
    """Flat export object for one anomaly, enriched from the commit if given."""
    obj: dict = {
        "kind": anomaly.kind.value,
        "commit_id": anomaly.commit_id,
        "project": anomaly.project,
        "observed_epoch": anomaly.observed.epoch_seconds,
        "observed_tz": anomaly.observed.offset_text,
    }
    if anomaly.reference is not None:
        obj["reference_epoch"] = anomaly.reference.epoch_seconds
    if anomaly.counterpart_id is not None:
        obj["counterpart_id"] = anomaly.counterpart_id
    if anomaly.delta_seconds is not None:
        obj["delta_seconds"] = anomaly.delta_seconds
    if commit is not None:
        obj["author_name"] = commit.author_name
        obj["author_email"] = commit.author_email
        obj["message"] = commit.message
    return obj


def emit_anomaly_stream(
    anomalies: Iterable[AnomalyRecord],
    commits: Mapping[str, CommitRecord] | None = None,
) -> bytes:
    """Serialize anomalies as deterministic JSONL."""
    ordered = sorted(anomalies, key=anomaly_sort_key)
    lines = [
        json.dumps(
            anomaly_to_object(a, commits.get(a.commit_id) if commits else None),
            ensure_ascii=True,
            separators=(",", ":"),
        )
        for a in ordered
    ]
    return ("\n".join(lines) + "\n" if lines else "").encode("ascii")


def parse_anomaly_stream(
    data: bytes,
) -> tuple[list[AnomalyRecord], dict[str, tuple[str, str]], dict[str, str]]:
    """Parse an anomaly JSONL stream.

    Returns the anomalies plus two side maps keyed by commit id: author
    (name, email) and message, for the rows that carried enrichment.
    """
    from .ingest import parse_offset

    anomalies: list[AnomalyRecord] = []
    authors: dict[str, tuple[str, str]] = {}
    messages: dict[str, str] = {}
    for lineno, raw in enumerate(data.split(b"\n"), start=1):
        if not raw.strip():
            continue
        try:
            obj = json.loads(raw.decode("utf-8"))
            kind = AnomalyKind(obj["kind"])
            observed = Timestamp(
                obj["observed_epoch"], parse_offset(obj.get("observed_tz", "+0000"))
            )
            reference = (
                Timestamp(obj["reference_epoch"]) if "reference_epoch" in obj else None
            )
            anomaly = AnomalyRecord(
                kind=kind,
                commit_id=obj["commit_id"],
                project=obj["project"],
                observed=observed,
                reference=reference,
                counterpart_id=obj.get("counterpart_id"),
                delta_seconds=obj.get("delta_seconds"),
            )
        except (ValueError, KeyError, UnicodeDecodeError) as exc:
            raise ValueError(f"bad anomaly record at line {lineno}: {exc}") from exc
        anomalies.append(anomaly)
        if "author_email" in obj:
            authors[anomaly.commit_id] = (obj.get("author_name", ""), obj["author_email"])
        if "message" in obj:
            messages[anomaly.commit_id] = obj["message"]
    return anomalies, authors, messages
