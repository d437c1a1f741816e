import csv
from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from semsound.cli import inspect_kg, main, run
from semsound.errors import ParseError, ValidationError
from semsound.scenario import load_scenario, parse_scenario, serialize_scenario
from semsound.sync import SyncReport

SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"

MINIMAL = """
[scenario]
[kg]
entity = solo role
entity = note_69 music-note
[device d1]
role = solo
length = 1.0
channel = rate=10
event = music note_69 0.2 0.4 1.0
"""


def test_minimal_scenario_defaults():
    cfg = parse_scenario(MINIMAL)
    assert cfg.q == 0.8 and cfg.sample_rate == 8000
    assert (cfg.frame_length, cfg.hop) == (256, 128)
    assert cfg.policy.alpha == 0.2 and cfg.policy.hop_limit == 3 and cfg.policy.role_threshold == 0.5
    assert cfg.rounds == 1
    assert cfg.devices[0].channel.erasure_prob == 0.0


def test_missing_channel_rate_names_field():
    with pytest.raises(ValidationError) as info:
        parse_scenario(MINIMAL.replace("rate=10", "delay=0.1"))
    assert "channel.rate" in str(info.value)


@pytest.mark.parametrize(
    "mutate, line",
    [
        (lambda t: t.replace("length = 1.0", "length = abc"), 8),
        (lambda t: t.replace("[kg]", "[kgg]"), 3),
        (lambda t: t.replace("role = solo", "role solo"), 7),
        (lambda t: t.replace("rate=10", "rate=10 speed=3"), 9),
        (lambda t: t.replace("event = music note_69 0.2 0.4 1.0", "event = music note_69 0.2"), 10),
    ],
)
def test_parse_errors_carry_line(mutate, line):
    with pytest.raises(ParseError) as info:
        parse_scenario(mutate(MINIMAL))
    assert info.value.line == line


@pytest.mark.parametrize(
    "mutate, needle",
    [
        (lambda t: t.replace("role = solo", "role = ghost"), "role"),
        (lambda t: t.replace("note_69 0.2", "note_70 0.2"), "note_70"),
        (lambda t: t.replace("0.2 0.4", "0.8 0.4"), "exceeds"),
        (lambda t: t + "[listener]\ntarget = ghost 1.0\n", "ghost"),
        (lambda t: t.replace("[scenario]", "[scenario]\nformat_version = 2"), "format_version"),
        (lambda t: t + "[round 3]\n", "round 3"),
        (lambda t: t.replace("[scenario]", "[scenario]\nq = 1.5"), "q"),
    ],
)
def test_validation_errors(mutate, needle):
    with pytest.raises(ValidationError) as info:
        parse_scenario(mutate(MINIMAL))
    assert needle in str(info.value)


@pytest.mark.parametrize("name", ["concert", "feedback_loop", "lossy_duet"])
def test_serialize_round_trip(name):
    cfg = load_scenario(SCENARIOS / f"{name}.scn")
    text = serialize_scenario(cfg)
    again = parse_scenario(text)
    assert again == cfg
    assert serialize_scenario(again) == text


@settings(max_examples=40, deadline=None)
@given(
    st.integers(0, 2**32),
    st.floats(0.0, 1.0),
    st.floats(0.1, 5.0),
    st.floats(1.0, 100.0),
    st.floats(0.0, 0.5),
    st.floats(0.0, 0.5),
    st.floats(0.01, 0.99),
    st.floats(0.0, 1.0),
)
def test_round_trip_random_parameters(seed, q, budget, rate, erase, corrupt, alpha, onset):
    text = MINIMAL.replace("[scenario]", f"[scenario]\nseed = {seed}\nq = {q!r}\nlatency_budget = {budget!r}")
    text = text.replace("rate=10", f"rate={rate!r} erase={erase!r} corrupt={corrupt!r}")
    text = text.replace("length = 1.0", "length = 2.0").replace("0.2 0.4", f"{onset!r} 0.4")
    text += f"[policy]\nalpha = {alpha!r}\n[listener]\ntarget = note_69 {q!r}\n"
    cfg = parse_scenario(text)
    assert parse_scenario(serialize_scenario(cfg)) == cfg


def test_run_writes_declared_outputs(tmp_path):
    cfg = parse_scenario(MINIMAL)
    out = run(cfg, tmp_path, audio=True)
    names = {p.name for p in out.files}
    assert {"report.txt", "deliveries.csv", "frames.csv", "feedback.csv", "tokens_r1_d1.csv", "listener_r1.wav"} <= names
    assert all(p.exists() for p in out.files)
    report = SyncReport.from_text((tmp_path / "report.txt").read_text())
    assert report.fidelity == 1.0 and report.deadline_misses == 0
    text = (tmp_path / "report.txt").read_text()
    for key in ("round_index=1", "edges_updated=0", "devices_served=0"):
        assert key in text
    with (tmp_path / "deliveries.csv").open() as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["frame_id", "seq", "status", "send_time_s", "arrival_time_s", "received_entity"]
    with (tmp_path / "tokens_r1_d1.csv").open() as fh:
        assert next(csv.reader(fh)) == ["seq", "entity", "kind", "onset_s", "duration_s", "salience", "status"]
    with (tmp_path / "feedback.csv").open() as fh:
        assert next(csv.reader(fh)) == ["time_s", "listener_id", "head", "relation", "tail", "verdict"]


def test_main_run_and_seed_override(tmp_path, capsys):
    scn = SCENARIOS / "lossy_duet.scn"
    assert main(["run", str(scn), "--out", str(tmp_path / "a"), "--seed", "42"]) == 0
    assert main(["run", str(scn), "--out", str(tmp_path / "b"), "--seed", "42"]) == 0
    assert main(["run", str(scn), "--out", str(tmp_path / "c"), "--seed", "43"]) == 0
    a = (tmp_path / "a" / "deliveries.csv").read_bytes()
    assert a == (tmp_path / "b" / "deliveries.csv").read_bytes()
    assert a != (tmp_path / "c" / "deliveries.csv").read_bytes()


def test_main_multiple_scenarios_with_jobs(tmp_path):
    scns = [str(SCENARIOS / "concert.scn"), str(SCENARIOS / "feedback_loop.scn")]
    assert main(["run", *scns, "--out", str(tmp_path / "p"), "--jobs", "2"]) == 0
    assert main(["run", *scns, "--out", str(tmp_path / "s")]) == 0
    for name in ("concert", "feedback_loop"):
        assert (tmp_path / "p" / name / "report.txt").read_bytes() == (tmp_path / "s" / name / "report.txt").read_bytes()


def test_main_errors_are_single_line(tmp_path, capsys):
    bad = tmp_path / "bad.scn"
    bad.write_text(MINIMAL.replace("rate=10", "delay=0"))
    assert main(["run", str(bad), "--out", str(tmp_path / "o")]) == 1
    err = capsys.readouterr().err
    assert err.count("\n") == 1 and err.startswith("error: ")
    assert main(["run", str(tmp_path / "missing.scn"), "--out", str(tmp_path / "o")]) == 1
    assert main(["inspect", str(SCENARIOS / "concert.kg"), "--from", "ghost", "--to", "piano"]) == 1


def test_inspect_examples(tmp_path, capsys):
    kg = tmp_path / "tri.kg"
    kg.write_text(
        "entity a concept\nentity b concept\nentity c concept\n"
        "triple a r b 0.9\ntriple b r c 0.5\ntriple a r c 0.4\n"
    )
    text = inspect_kg(kg, "a", "c")
    lines = text.splitlines()
    value = float(lines[0].rsplit("=", 1)[1])
    assert value == pytest.approx(0.45, abs=1e-15)
    assert lines[1] == "path: a -[r 0.9]-> b -[r 0.5]-> c"
    assert inspect_kg(kg, "b", "b").splitlines() == ["relevance b -> b = 1.0", "path: b"]
    assert inspect_kg(kg, "c", "a").splitlines() == ["relevance c -> a = 0.0", "no path"]
    assert main(["inspect", str(kg), "--from", "a", "--to", "c"]) == 0
    assert capsys.readouterr().out == text
    bad = tmp_path / "bad.kg"
    bad.write_text("entity a concept\ntriple a r a 2\n")
    assert main(["inspect", str(bad), "--from", "a", "--to", "a"]) == 1
