import json

import pytest

from stableinf.ingest import EventTable, RetweetEvent, TimeWindow, slice_events

# tweet, author, retweeter, ts
F1_ROWS = [
    ("p1", "A", "B", 10), ("p1", "A", "C", 20), ("p1", "A", "D", 30),
    ("p2", "A", "C", 15),
    ("p3", "B", "D", 40), ("p3", "B", "C", 50),
]
F1_FOLLOWS = {("B", "A"), ("C", "A"), ("D", "A"), ("C", "B")}


def f1_events():
    return [RetweetEvent(t, a, r, s) for t, a, r, s in F1_ROWS]


def write_jsonl(path, rows):
    with open(path, "w") as fh:
        for t, a, r, s in rows:
            fh.write(json.dumps({"tweet_id": t, "author": a, "retweeter": r, "ts_ms": s}) + "\n")
    return path


@pytest.fixture
def f1_table():
    return EventTable.from_events(f1_events())


@pytest.fixture
def f1_slice(f1_table):
    return slice_events(f1_table, TimeWindow(0, 1000))


@pytest.fixture(scope="session")
def small_synth(tmp_path_factory):
    """A 400-user synthetic dataset shared by the slower tests."""
    from stableinf.synth import SynthConfig, generate

    out = tmp_path_factory.mktemp("synth")
    generate(SynthConfig(n_users=400, seed=11), out)
    return out


@pytest.fixture(scope="session")
def small_study(small_synth):
    from stableinf.ingest import load_follow_snapshots, load_retweet_events
    from stableinf.study import Study

    loaded = load_retweet_events(small_synth / "events.jsonl")
    follows = load_follow_snapshots(small_synth / "follows")
    return Study(loaded.events, follows.snapshots)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def acceptance_log():
    def record(number, passed, detail):
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'} - {detail}"
        ACCEPTANCE_LINES.append(line)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
