"""Mitigation filters: composable, pure transforms over commit record sets.

Boundary conventions (the underlying guidelines leave them open, so they
are fixed here for reproducibility): time_window is inclusive on both
ends, date_cutoff drops strictly before/after the cutoff, and a
coalescence gap strictly greater than the window starts a new changeset.
Filters never mutate timestamps; repairing bad dates is out of scope.
"""

from __future__ import annotations

from typing import Iterable, Mapping

from .model import (
    AnomalyKind,
    AnomalyRecord,
    Changeset,
    ConsistencyError,
    CommitRecord,
    Timestamp,
)

# re-exported here because every filter reads time through normalize/select
from .ingest import normalize_time  # noqa: F401


def select_time_basis(record: CommitRecord, basis: str = "author") -> Timestamp:
    """Return the record's author or committer timestamp per policy."""
    if basis == "author":
        return record.author_time
    if basis == "committer":
        return record.commit_time
    raise ValueError(f"unknown time basis: {basis!r}")


def drop_pre_epoch(
    records: Iterable[CommitRecord],
    min_epoch_seconds: int = 1,
    basis: str = "author",
) -> tuple[list[CommitRecord], list[str]]:
    """Drop records whose chosen-basis time is below min_epoch_seconds."""
    kept, dropped = [], []
    for r in records:
        if select_time_basis(r, basis).epoch_seconds < min_epoch_seconds:
            dropped.append(r.id)
        else:
            kept.append(r)
    return kept, dropped


def date_cutoff(
    records: Iterable[CommitRecord],
    cutoff: Timestamp,
    mode: str = "before",
    basis: str = "author",
) -> tuple[list[CommitRecord], list[str]]:
    """Drop records strictly before (or strictly after) the cutoff."""
    if mode not in ("before", "after"):
        raise ValueError(f"unknown cutoff mode: {mode!r}")
    kept, dropped = [], []
    for r in records:
        t = select_time_basis(r, basis)
        out = t < cutoff if mode == "before" else t > cutoff
        if out:
            dropped.append(r.id)
        else:
            kept.append(r)
    return kept, dropped


def time_window(
    records: Iterable[CommitRecord],
    start: Timestamp,
    end: Timestamp,
    basis: str = "author",
) -> list[CommitRecord]:
    """Keep records with start <= t <= end (inclusive both ends)."""
    if start > end:
        raise ValueError("window start is after window end")
    return [r for r in records if start <= select_time_basis(r, basis) <= end]


def drop_projects(
    corpus: Mapping[str, list[CommitRecord]], blacklist: Iterable[str]
) -> dict[str, list[CommitRecord]]:
    """Remove blacklisted projects from the corpus entirely."""
    blacklist = set(blacklist)
    return {p: recs for p, recs in corpus.items() if p not in blacklist}


def drop_flagged(
    records: Iterable[CommitRecord],
    anomalies: Iterable[AnomalyRecord],
    kinds: Iterable[AnomalyKind],
) -> tuple[list[CommitRecord], list[str]]:
    """Drop exactly the records flagged with one of the given kinds."""
    records = list(records)
    kinds = set(kinds)
    known = {r.id for r in records}
    flagged: set[str] = set()
    for a in anomalies:
        if a.commit_id not in known:
            raise ConsistencyError(f"anomaly references unknown commit {a.commit_id}")
        if a.kind in kinds:
            flagged.add(a.commit_id)
    kept = [r for r in records if r.id not in flagged]
    dropped = [r.id for r in records if r.id in flagged]
    return kept, dropped


def coalesce(
    records: Iterable[CommitRecord],
    window_seconds: int = 180,
    basis: str = "author",
) -> list[Changeset]:
    """Group commits by one author within a small time window into changesets.

    Records are sorted by (author_email, basis time, id); a new changeset
    starts whenever the author changes or the gap to the previous record
    exceeds window_seconds.
    """
    if window_seconds <= 0:
        raise ValueError("coalesce window must be positive")
    ordered = sorted(
        records,
        key=lambda r: (r.author_email, select_time_basis(r, basis).epoch_seconds, r.id),
    )
    changesets: list[Changeset] = []
    group: list[CommitRecord] = []

    def flush() -> None:
        if not group:
            return
        files = frozenset().union(*(r.files for r in group if r.files is not None))
        changesets.append(
            Changeset(
                member_ids=tuple(r.id for r in group),
                author_email=group[0].author_email,
                start_time=select_time_basis(group[0], basis),
                end_time=select_time_basis(group[-1], basis),
                files=files,
            )
        )
        group.clear()

    for r in ordered:
        if group:
            prev = group[-1]
            gap = (
                select_time_basis(r, basis).epoch_seconds
                - select_time_basis(prev, basis).epoch_seconds
            )
            if r.author_email != prev.author_email or gap > window_seconds:
                flush()
        group.append(r)
    flush()
    return changesets
