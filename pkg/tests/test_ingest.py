import json
import subprocess

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chronolint.ingest import (
    emit_export_stream,
    normalize_time,
    parse_export_stream,
    parse_offset,
    read_repository,
    validate,
)
from chronolint.model import CommitRecord, GitEnvironmentError, RepositoryError
from helpers import build_repo, fake_hash, rec, ts


def jsonl(*objs) -> bytes:
    return b"".join(json.dumps(o).encode() + b"\n" for o in objs)


def minimal_obj(**over):
    obj = {
        "id": "a" * 40,
        "parents": [],
        "author_time": 0,
        "author_tz": "+0000",
        "commit_time": 0,
        "commit_tz": "+0000",
        "author_name": "A",
        "author_email": "a@example.com",
        "message": "m",
        "project": "p",
    }
    obj.update(over)
    return obj


class TestParseExportStream:
    def test_minimal_valid_record(self):
        records, report = parse_export_stream(jsonl(minimal_obj()), "p")
        assert len(records) == 1
        assert report.records_rejected == 0
        assert records[0].id == "a" * 40
        assert records[0].commit_time == ts(0)

    def test_missing_id_rejected(self):
        obj = minimal_obj()
        del obj["id"]
        records, report = parse_export_stream(jsonl(obj), "p")
        assert records == []
        assert report.records_rejected == 1
        assert report.rejects[0] == ("line 1", "missing id")

    def test_empty_stream(self):
        records, report = parse_export_stream(b"", "p")
        assert records == []
        assert report.records_parsed == report.records_rejected == 0

    def test_undecodable_record_rejected_stream_continues(self):
        data = b'{"bad": \xff\xfe}\n' + jsonl(minimal_obj())
        records, report = parse_export_stream(data, "p")
        assert len(records) == 1
        assert report.rejects[0][1] == "undecodable bytes"

    def test_bad_offset_rejected(self):
        records, report = parse_export_stream(jsonl(minimal_obj(commit_tz="+2500")), "p")
        assert records == []
        assert "offset" in report.rejects[0][1]

    def test_parsed_plus_rejected_totals(self):
        data = jsonl(minimal_obj(), {"nope": 1}, minimal_obj(id=fake_hash("b")))
        records, report = parse_export_stream(data, "p")
        assert report.records_parsed == 2
        assert report.records_rejected == 1


hashes = st.integers(min_value=0, max_value=10**6).map(fake_hash)
safe_text = st.text(max_size=30)


@st.composite
def export_records(draw):
    cid = fake_hash(("rec", draw(st.integers(0, 10**9))))
    parents = tuple(
        p for p in draw(st.lists(hashes, max_size=3, unique=True)) if p != cid
    )
    return CommitRecord(
        id=cid,
        parents=parents,
        author_time=ts(draw(st.integers(-10**10, 10**10)), draw(st.integers(-1440, 1440))),
        commit_time=ts(draw(st.integers(-10**10, 10**10)), draw(st.integers(-1440, 1440))),
        author_name=draw(safe_text),
        author_email=draw(safe_text),
        message=draw(safe_text),
        project=draw(safe_text),
        files=draw(
            st.one_of(st.none(), st.frozensets(st.text(min_size=1, max_size=8), max_size=4))
        ),
    )


def record_sets(max_size=12):
    return st.lists(export_records(), max_size=max_size, unique_by=lambda r: r.id)


class TestRoundTrip:
    @settings(max_examples=100)
    @given(record_sets())
    def test_parse_emit_identity(self, records):
        emitted = emit_export_stream(records)
        parsed, report = parse_export_stream(emitted, "unused-default")
        assert report.records_rejected == 0
        assert parsed == records
        assert emit_export_stream(parsed) == emitted

    def test_thousand_records_byte_identical(self):
        records = [
            rec(("bulk", i), commit_epoch=1_500_000_000 + i, message=f"msg {i}")
            for i in range(1000)
        ]
        emitted = emit_export_stream(records)
        parsed, _ = parse_export_stream(emitted, "p")
        assert len(parsed) == 1000
        assert emit_export_stream(parsed) == emitted


class TestOffsets:
    def test_normalize_utc(self):
        assert normalize_time(1_600_000_000, "+0000") == ts(1_600_000_000)
        assert normalize_time(1_600_000_000, "+0000").utc_offset_minutes == 0

    def test_normalize_negative(self):
        t = normalize_time(1_600_000_000, "-0530")
        assert t.epoch_seconds == 1_600_000_000
        assert t.utc_offset_minutes == -330

    def test_out_of_bound_offset(self):
        with pytest.raises(ValueError):
            parse_offset("+2500")
        with pytest.raises(ValueError):
            parse_offset("0530")
        assert parse_offset("+2400") == 1440


class TestValidate:
    def test_duplicate_id(self):
        a = rec("a")
        report = validate([a, a])
        assert ("duplicate id" in reason for _, reason in report.rejects)
        assert report.records_rejected == 1

    def test_self_parenting(self):
        a = rec("a")
        bad = CommitRecord(
            id=a.id, parents=(a.id,), author_time=a.author_time,
            commit_time=a.commit_time, author_name=a.author_name,
            author_email=a.author_email, message=a.message, project=a.project,
        )
        report = validate([bad])
        assert any(reason == "self-parenting" for _, reason in report.rejects)

    def test_boundary_parent_collected(self):
        absent = fake_hash("absent")
        b = rec("b", parents=(absent,))
        report = validate([b])
        assert report.boundary_parents == {absent}
        assert report.records_rejected == 0

    def test_malformed_hash(self):
        a = rec("a")
        bad = CommitRecord(
            id="nothex", parents=(), author_time=a.author_time,
            commit_time=a.commit_time, author_name="x", author_email="x",
            message="m", project="p",
        )
        report = validate([bad])
        assert any(reason == "malformed id" for _, reason in report.rejects)


class TestReadRepository:
    def test_single_commit(self, tmp_path):
        repo = tmp_path / "r"
        build_repo(repo, [{"key": "a", "commit_epoch": 1_600_000_000}])
        records, report = read_repository(str(repo), "proj")
        assert len(records) == 1
        assert records[0].author_time == ts(1_600_000_000)
        assert records[0].commit_time == ts(1_600_000_000)
        assert report.records_parsed == 1

    def test_merge_commit_parent_order(self, tmp_path):
        repo = tmp_path / "r"
        shas = build_repo(repo, [
            {"key": "a", "commit_epoch": 100_000},
            {"key": "b", "commit_epoch": 200_000, "parents": ["a"]},
            {"key": "c", "commit_epoch": 300_000, "parents": ["a"]},
            {"key": "m", "commit_epoch": 400_000, "parents": ["b", "c"],
             "message": "Merge branch"},
        ])
        records, _ = read_repository(str(repo), "proj")
        merge = next(r for r in records if r.id == shas["m"])
        assert merge.parents == (shas["b"], shas["c"])

    def test_offset_preserved(self, tmp_path):
        repo = tmp_path / "r"
        build_repo(repo, [{"key": "a", "commit_epoch": 1_600_000_000, "tz": "-0530"}])
        records, _ = read_repository(str(repo), "proj")
        assert records[0].commit_time.utc_offset_minutes == -330
        assert records[0].commit_time.epoch_seconds == 1_600_000_000

    def test_count_matches_rev_list(self, tmp_path):
        repo = tmp_path / "r"
        plans = [{"key": 0, "commit_epoch": 1_500_000_000}]
        for i in range(1, 500):
            plans.append({
                "key": i,
                "commit_epoch": 1_500_000_000 + i * 60,
                "parents": [i - 1],
            })
        build_repo(repo, plans)
        records, _ = read_repository(str(repo), "proj")
        out = subprocess.run(
            ["git", "-C", str(repo), "rev-list", "--all", "--count"],
            capture_output=True, check=True,
        )
        assert len(records) == int(out.stdout) == 500

    def test_with_files(self, tmp_path):
        repo = tmp_path / "r"
        build_repo(repo, [
            {"key": "a", "commit_epoch": 100_000, "files": {"src/a.py": "x"}},
            {"key": "b", "commit_epoch": 200_000, "parents": ["a"],
             "files": {"src/b.py": "y", "docs/b.md": "z"}},
        ])
        records, _ = read_repository(str(repo), "proj", with_files=True)
        by_time = sorted(records, key=lambda r: r.commit_time.epoch_seconds)
        assert by_time[0].files == frozenset({"src/a.py"})
        assert by_time[1].files == frozenset({"src/b.py", "docs/b.md"})

    def test_repeated_reads_identical(self, tmp_path):
        repo = tmp_path / "r"
        build_repo(repo, [
            {"key": "a", "commit_epoch": 100_000},
            {"key": "b", "commit_epoch": 200_000, "parents": ["a"]},
        ])
        first, _ = read_repository(str(repo), "proj")
        second, _ = read_repository(str(repo), "proj")
        assert first == second

    def test_messages_with_delimiter_bytes(self, tmp_path):
        repo = tmp_path / "r"
        build_repo(repo, [{
            "key": "a", "commit_epoch": 100_000,
            "message": "multi\nline\n\nwith trailing newline\n",
        }])
        records, _ = read_repository(str(repo), "proj")
        assert "multi\nline" in records[0].message

    def test_missing_repo_errors(self, tmp_path):
        with pytest.raises(RepositoryError):
            read_repository(str(tmp_path / "nope"), "proj")

    def test_git_override_env(self, tmp_path, monkeypatch):
        monkeypatch.setenv("CHRONOLINT_GIT", str(tmp_path / "no-such-git"))
        with pytest.raises(GitEnvironmentError):
            read_repository(str(tmp_path), "proj")
