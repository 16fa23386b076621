"""Timestamp anomaly detectors and tool-fingerprint scanning.

All inequalities are strict: equal timestamps are never anomalies. The
linear out-of-order detector replays the history's topological
linearization with a running previous-commit cursor; the parent-based
detector compares each commit against its parents directly and is the
stable ground truth (the linear variant depends on the linearization's
tie-breaking).
"""

from __future__ import annotations

import re
import time
from dataclasses import dataclass, field
from typing import Iterable

from .filters import select_time_basis
from .graph import linearize
from .model import (
    AnomalyKind,
    AnomalyRecord,
    CommitRecord,
    ConfigError,
    RepoHistory,
    Timestamp,
)

# 1990-11-19T00:00:00Z: release of CVS 1.0, the oldest plausible VCS timestamp
CVS_RELEASE_EPOCH = 658972800


@dataclass(frozen=True)
class FingerprintRule:
    """A named message pattern betraying a migration or review tool."""

    name: str
    pattern: str
    case_insensitive: bool = False

    def compile(self) -> re.Pattern[str]:
        try:
            return re.compile(self.pattern, re.IGNORECASE if self.case_insensitive else 0)
        except re.error as exc:
            raise ConfigError(f"fingerprint rule {self.name!r}: bad pattern: {exc}") from exc


DEFAULT_FINGERPRINT_RULES: tuple[FingerprintRule, ...] = (
    FingerprintRule("git-svn-id", r"git-svn-id"),
    FingerprintRule("Reviewed-by", r"Reviewed-by"),
    FingerprintRule("Change-Id", r"Change-Id"),
    FingerprintRule("rebase_source", r"rebase_source"),
    FingerprintRule("hg", r"\bhg\b", case_insensitive=True),
    FingerprintRule("MOE|push_codebase", r"MOE|push_codebase"),
)


@dataclass(frozen=True)
class DetectorConfig:
    old_threshold: Timestamp = Timestamp(CVS_RELEASE_EPOCH)
    future_reference: Timestamp | None = None  # None: wall clock at scan time
    merge_exclusion: bool = True
    time_basis: str = "committer"

    def resolved_reference(self) -> Timestamp:
        if self.future_reference is not None:
            return self.future_reference
        return Timestamp(int(time.time()))

    def __post_init__(self) -> None:
        if self.future_reference is not None and not (
            self.old_threshold < self.future_reference
        ):
            raise ConfigError("old threshold must precede the future reference")


def _basis_time(record: CommitRecord, cfg: DetectorConfig) -> Timestamp:
    return select_time_basis(record, cfg.time_basis)


def detect_old(history: RepoHistory, cfg: DetectorConfig) -> set[AnomalyRecord]:
    """Flag commits dated strictly before the suspicious-old threshold.

    Zero-epoch commits additionally get an explicit ZERO_EPOCH record.
    """
    found: set[AnomalyRecord] = set()
    for r in history.commits.values():
        t = _basis_time(r, cfg)
        if t < cfg.old_threshold:
            found.add(
                AnomalyRecord(
                    kind=AnomalyKind.SUSPICIOUS_OLD,
                    commit_id=r.id,
                    project=history.project,
                    observed=t,
                    reference=cfg.old_threshold,
                    delta_seconds=t.epoch_seconds - cfg.old_threshold.epoch_seconds,
                )
            )
        if t.epoch_seconds == 0:
            found.add(
                AnomalyRecord(
                    kind=AnomalyKind.ZERO_EPOCH,
                    commit_id=r.id,
                    project=history.project,
                    observed=t,
                )
            )
    return found


def detect_future(history: RepoHistory, cfg: DetectorConfig) -> set[AnomalyRecord]:
    """Flag commits dated strictly after the future reference instant."""
    reference = cfg.resolved_reference()
    found: set[AnomalyRecord] = set()
    for r in history.commits.values():
        t = _basis_time(r, cfg)
        if t > reference:
            found.add(
                AnomalyRecord(
                    kind=AnomalyKind.FUTURE,
                    commit_id=r.id,
                    project=history.project,
                    observed=t,
                    reference=reference,
                    delta_seconds=t.epoch_seconds - reference.epoch_seconds,
                )
            )
    return found


def is_merge_related(message: str) -> bool:
    """True iff the lowercased message contains the substring "merge"."""
    return "merge" in message.lower()


def detect_out_of_order_linear(
    history: RepoHistory, cfg: DetectorConfig
) -> set[AnomalyRecord]:
    """Flag commits dated before their predecessor in the linearization.

    With merge exclusion on, a comparison is suppressed when either side's
    message is merge-related; the previous-commit cursor still advances
    after every comparison.
    """
    found: set[AnomalyRecord] = set()
    last: CommitRecord | None = None
    for r in linearize(history):
        if last is not None:
            t, last_t = _basis_time(r, cfg), _basis_time(last, cfg)
            if t < last_t and not (
                cfg.merge_exclusion
                and (is_merge_related(r.message) or is_merge_related(last.message))
            ):
                found.add(
                    AnomalyRecord(
                        kind=AnomalyKind.OUT_OF_ORDER_LINEAR,
                        commit_id=r.id,
                        project=history.project,
                        observed=t,
                        reference=last_t,
                        counterpart_id=last.id,
                        delta_seconds=t.epoch_seconds - last_t.epoch_seconds,
                    )
                )
        last = r
    return found


def detect_out_of_order_parent(
    history: RepoHistory, basis: str = "committer"
) -> set[AnomalyRecord]:
    """Flag commits with at least one parent strictly newer than themselves.

    One record per offending (commit, parent) pair; boundary parents absent
    from the history cannot be compared and are skipped.
    """
    found: set[AnomalyRecord] = set()
    for r in history.commits.values():
        t = select_time_basis(r, basis)
        for pid in r.parents:
            parent = history.commits.get(pid)
            if parent is None:
                continue
            pt = select_time_basis(parent, basis)
            if pt > t:
                found.add(
                    AnomalyRecord(
                        kind=AnomalyKind.OUT_OF_ORDER_PARENT,
                        commit_id=r.id,
                        project=history.project,
                        observed=t,
                        reference=pt,
                        counterpart_id=pid,
                        delta_seconds=t.epoch_seconds - pt.epoch_seconds,
                    )
                )
    return found


def sanitize_message(message: str) -> str:
    """Replace undecodable byte escapes for pattern matching and reporting."""
    return message.encode("utf-8", errors="surrogateescape").decode(
        "utf-8", errors="replace"
    )


def scan_fingerprints(
    records: Iterable[CommitRecord],
    rules: Iterable[FingerprintRule] = DEFAULT_FINGERPRINT_RULES,
) -> dict[str, tuple[int, list[str]]]:
    """Count records whose message matches each rule.

    A record may match several rules. Returns rule name -> (count, sorted
    matching commit ids).
    """
    rules = list(rules)
    names = [rule.name for rule in rules]
    if len(set(names)) != len(names):
        raise ConfigError("duplicate fingerprint rule names")
    compiled = [(rule.name, rule.compile()) for rule in rules]
    hits: dict[str, set[str]] = {name: set() for name, _ in compiled}
    for r in records:
        message = sanitize_message(r.message)
        for name, pattern in compiled:
            if pattern.search(message):
                hits[name].add(r.id)
    return {name: (len(ids), sorted(ids)) for name, ids in hits.items()}


def intersect_anomalies(
    a: Iterable[AnomalyRecord], b: Iterable[AnomalyRecord]
) -> set[str]:
    """Commit ids flagged (under any kind) in both anomaly sets."""
    return {x.commit_id for x in a} & {x.commit_id for x in b}


def run_all_detectors(
    history: RepoHistory, cfg: DetectorConfig
) -> set[AnomalyRecord]:
    """Run every detector over one history and union the results."""
    return (
        detect_old(history, cfg)
        | detect_future(history, cfg)
        | detect_out_of_order_linear(history, cfg)
        | detect_out_of_order_parent(history, basis=cfg.time_basis)
    )
