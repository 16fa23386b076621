"""Shared test helpers: record factories, independent oracles, repo builders."""

from __future__ import annotations

import hashlib
import random
import subprocess
from datetime import datetime, timezone

from chronolint.model import CommitRecord, RepoHistory, Timestamp


def fake_hash(seed) -> str:
    return hashlib.sha1(str(seed).encode()).hexdigest()


def ts(epoch: int, offset: int = 0) -> Timestamp:
    return Timestamp(epoch_seconds=epoch, utc_offset_minutes=offset)


def rec(
    seed,
    commit_epoch: int = 1_600_000_000,
    author_epoch: int | None = None,
    parents: tuple[str, ...] = (),
    message: str = "update",
    author_name: str = "Alice Dev",
    author_email: str = "alice@example.com",
    project: str = "proj",
    files: frozenset[str] | None = None,
    offset: int = 0,
) -> CommitRecord:
    return CommitRecord(
        id=fake_hash(seed),
        parents=parents,
        author_time=ts(author_epoch if author_epoch is not None else commit_epoch, offset),
        commit_time=ts(commit_epoch, offset),
        author_name=author_name,
        author_email=author_email,
        message=message,
        project=project,
        files=files,
    )


def utc_epoch(year, month=1, day=1, hour=0, minute=0, second=0) -> int:
    return int(datetime(year, month, day, hour, minute, second, tzinfo=timezone.utc).timestamp())


# ---------------------------------------------------------------------------
# independent oracles

def is_valid_topological_order(records: list[CommitRecord], order: tuple[str, ...]) -> bool:
    """Linear scan with a visited set over every parent->child edge."""
    present = {r.id for r in records}
    if sorted(order) != sorted(present):
        return False
    position = {cid: i for i, cid in enumerate(order)}
    for r in records:
        for p in r.parents:
            if p in present and position[p] >= position[r.id]:
                return False
    return True


def brute_force_parent_pairs(records: list[CommitRecord], basis: str = "committer"):
    """All (commit, parent) pairs where the parent is strictly newer."""
    by_id = {r.id: r for r in records}

    def t(r):
        return r.commit_time.epoch_seconds if basis == "committer" else r.author_time.epoch_seconds

    pairs = set()
    for r in records:
        for p in r.parents:
            if p in by_id and t(by_id[p]) > t(r):
                pairs.add((r.id, p))
    return pairs


def replay_linear_loop(sequence: list[CommitRecord], merge_exclusion: bool = True,
                       basis: str = "committer"):
    """Straight-line replay of the running previous-commit comparison."""

    def t(r):
        return r.commit_time.epoch_seconds if basis == "committer" else r.author_time.epoch_seconds

    flagged = set()
    last = None
    for r in sequence:
        if (
            last is not None
            and t(r) < t(last)
            and not (
                merge_exclusion
                and ("merge" in last.message.lower() or "merge" in r.message.lower())
            )
        ):
            flagged.add(r.id)
        last = r
    return flagged


def pairwise_time_file_edges(records: list[CommitRecord]):
    """O(n^2) evaluation of the shared-file, strictly-earlier edge rule."""
    edges = set()
    for a in records:
        for b in records:
            if (
                a.id != b.id
                and a.commit_time.epoch_seconds < b.commit_time.epoch_seconds
                and (a.files or frozenset()) & (b.files or frozenset())
            ):
                edges.add((a.id, b.id))
    return edges


# ---------------------------------------------------------------------------
# random history generation

MESSAGES = [
    "update parser",
    "fix typo",
    "Merge branch 'dev'",
    "add tests",
    "merge upstream changes",
    "refactor io layer",
    "bump version",
    "submerged pump driver",
]


def random_records(rng: random.Random, n: int, project: str = "proj") -> list[CommitRecord]:
    """A random DAG: each node picks parents among earlier nodes; timestamps
    are random and include ties."""
    records: list[CommitRecord] = []
    for i in range(n):
        k = rng.randint(0, min(i, 3))
        parents = tuple(r.id for r in rng.sample(records, k)) if k else ()
        epoch = rng.randint(0, 50) * 1000  # coarse grid forces ties
        records.append(
            CommitRecord(
                id=fake_hash((project, i, rng.random())),
                parents=parents,
                author_time=ts(epoch),
                commit_time=ts(epoch),
                author_name=f"dev{rng.randint(0, 4)}",
                author_email=f"dev{rng.randint(0, 4)}@example.com",
                message=rng.choice(MESSAGES),
                project=project,
            )
        )
    rng.shuffle(records)
    return records


# ---------------------------------------------------------------------------
# synthetic planted corpus

PLANT_ZERO = "zero"
PLANT_OLD = "old"
PLANT_FUTURE = "future"
PLANT_SKEW = "skew"

FUTURE_YEARS = (2025, 2027, 2037)
OLD_EPOCHS = (-2044178335, 730, 7403)


def planted_corpus(rng: random.Random, repos: int = 50, commits_per_repo: int = 200):
    """Linear-history corpus with anomalies planted at known locations.

    Returns (corpus, manifest) where corpus maps project -> records and the
    manifest records, per anomaly kind, exactly the flags a correct detector
    must raise (including flags implied by a plant on its chain neighbours).
    """
    corpus: dict[str, list[CommitRecord]] = {}
    manifest = {
        "zero_epoch": set(),        # commit ids
        "suspicious_old": set(),    # commit ids
        "future": set(),            # commit ids
        "out_of_order_parent": set(),   # (commit id, parent id)
        "out_of_order_linear": set(),   # commit ids
    }
    reference_epoch = utc_epoch(2020)

    for repo_i in range(repos):
        project = f"synth/repo{repo_i:03d}"
        base = utc_epoch(2015) + repo_i * 86400
        clean = []
        t = base
        for j in range(commits_per_repo):
            t += rng.randint(100, 500)
            clean.append(t)

        # non-adjacent interior plant positions keep the implied-flag
        # bookkeeping local to each plant
        positions = rng.sample(range(2, commits_per_repo - 2), 8)
        positions.sort()
        positions = [p for i, p in enumerate(positions) if i == 0 or p - positions[i - 1] > 2]
        plans = {}
        for pos in positions:
            plans[pos] = rng.choice((PLANT_ZERO, PLANT_OLD, PLANT_FUTURE, PLANT_SKEW))

        times = list(clean)
        for pos, plant in plans.items():
            if plant == PLANT_ZERO:
                times[pos] = 0
            elif plant == PLANT_OLD:
                times[pos] = rng.choice(OLD_EPOCHS)
            elif plant == PLANT_FUTURE:
                times[pos] = utc_epoch(rng.choice(FUTURE_YEARS)) + rng.randint(0, 10**6)
            elif plant == PLANT_SKEW:
                times[pos] = times[pos + 1] + 3600

        ids = [fake_hash((project, j)) for j in range(commits_per_repo)]
        records = []
        for j in range(commits_per_repo):
            records.append(
                CommitRecord(
                    id=ids[j],
                    parents=(ids[j - 1],) if j > 0 else (),
                    author_time=ts(times[j]),
                    commit_time=ts(times[j]),
                    author_name=f"dev{j % 7}",
                    author_email=f"dev{j % 7}@synth.example",
                    message=f"change {j} in {project}",
                    project=project,
                )
            )
        corpus[project] = records

        for pos, plant in plans.items():
            cid, prev, nxt = ids[pos], ids[pos - 1], ids[pos + 1]
            if plant == PLANT_ZERO:
                manifest["zero_epoch"].add(cid)
                manifest["suspicious_old"].add(cid)
                manifest["out_of_order_parent"].add((cid, prev))
                manifest["out_of_order_linear"].add(cid)
            elif plant == PLANT_OLD:
                manifest["suspicious_old"].add(cid)
                manifest["out_of_order_parent"].add((cid, prev))
                manifest["out_of_order_linear"].add(cid)
            elif plant == PLANT_FUTURE:
                manifest["future"].add(cid)
                manifest["out_of_order_parent"].add((nxt, cid))
                manifest["out_of_order_linear"].add(nxt)
            elif plant == PLANT_SKEW:
                manifest["out_of_order_parent"].add((nxt, cid))
                manifest["out_of_order_linear"].add(nxt)
    return corpus, manifest


# ---------------------------------------------------------------------------
# real git repositories built with fast-import

def init_repo(path) -> None:
    subprocess.run(
        ["git", "init", "-q", "-b", "main", str(path)], check=True, capture_output=True
    )
    subprocess.run(
        ["git", "-C", str(path), "config", "user.email", "test@example.com"],
        check=True, capture_output=True,
    )
    subprocess.run(
        ["git", "-C", str(path), "config", "user.name", "Test"],
        check=True, capture_output=True,
    )


def build_repo(path, commits: list[dict]) -> dict[str, str]:
    """Create a git repository from commit plans via fast-import.

    Each plan: {key, parents (keys), author_epoch, commit_epoch, message,
    name, email, tz, files: {path: content}}. Every commit gets its own ref
    so --all sees the whole graph. Returns key -> real commit sha.
    """
    init_repo(path)
    lines: list[bytes] = []
    marks = {}
    for i, plan in enumerate(commits, start=1):
        marks[plan["key"]] = i
        name = plan.get("name", "Test")
        email = plan.get("email", "test@example.com")
        tz = plan.get("tz", "+0000")
        author_epoch = plan.get("author_epoch", plan["commit_epoch"])
        message = plan.get("message", "commit " + str(plan["key"])).encode()
        lines.append(f"commit refs/heads/c{i}".encode())
        lines.append(f"mark :{i}".encode())
        lines.append(f"author {name} <{email}> {author_epoch} {tz}".encode())
        lines.append(f"committer {name} <{email}> {plan['commit_epoch']} {tz}".encode())
        lines.append(f"data {len(message)}".encode())
        lines.append(message)
        parents = plan.get("parents", ())
        for j, parent_key in enumerate(parents):
            word = "from" if j == 0 else "merge"
            lines.append(f"{word} :{marks[parent_key]}".encode())
        for fpath, content in plan.get("files", {}).items():
            body = content.encode()
            lines.append(f"M 644 inline {fpath}".encode())
            lines.append(f"data {len(body)}".encode())
            lines.append(body)
        lines.append(b"")
    stream = b"\n".join(lines) + b"\n"
    marks_file = str(path) + ".marks"
    subprocess.run(
        ["git", "-C", str(path), "fast-import", "--quiet", f"--export-marks={marks_file}"],
        input=stream, check=True, capture_output=True,
    )
    mark_to_sha = {}
    with open(marks_file) as fh:
        for line in fh:
            mark, sha = line.split()
            mark_to_sha[int(mark.lstrip(":"))] = sha
    return {key: mark_to_sha[m] for key, m in marks.items()}
