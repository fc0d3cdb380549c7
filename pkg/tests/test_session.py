"""Configuration, pipeline orchestration, message log, replay, CLI."""

import hashlib
import json
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from bbm92kit import cli
from bbm92kit import quantum as q
from bbm92kit.coincidence import SAME_BASIS_PAIRS, CorrelationHistogram, histograms_to_text
from bbm92kit.photonsim import build_state, read_ttag
from bbm92kit.session import (
    ConfigError,
    RunConfig,
    parse_unitary_spec,
    replay,
    report_to_json,
    run_pipeline,
    sweep,
)

FAST = dict(duration_s=0.02, tomography_shots=20_000, master_seed=77)


def fast_config(**kw):
    merged = {**FAST, **kw}
    return RunConfig(**merged)


def tree_hash(root) -> str:
    digest = hashlib.sha256()
    for p in sorted(Path(root).rglob("*")):
        if p.is_file():
            digest.update(p.relative_to(root).as_posix().encode())
            digest.update(p.read_bytes())
    return digest.hexdigest()


# ----- configuration ----------------------------------------------------


def test_config_text_roundtrip():
    cfg = fast_config(channel_bob="rot(17.5)", efficiency=(0.5,) * 8, window_mode="overall")
    back = RunConfig.from_text(cfg.to_text())
    assert back == cfg


def test_config_rejects_unknown_and_duplicate_keys():
    with pytest.raises(ConfigError, match="unknown"):
        RunConfig.from_text("source.mixing_q = 0.5\n")
    with pytest.raises(ConfigError, match="duplicate"):
        RunConfig.from_text("source.mixing_p = 0.5\nsource.mixing_p = 0.6\n")
    with pytest.raises(ConfigError, match="key = value"):
        RunConfig.from_text("just some words\n")


def test_config_validates_fields():
    with pytest.raises(ConfigError):
        RunConfig(plan_mode="psychic")
    with pytest.raises(ConfigError):
        RunConfig(window_mode="sometimes")
    with pytest.raises(ConfigError):
        RunConfig(master_seed=-3)
    with pytest.raises(ConfigError):
        RunConfig.from_text("tomography.shots = nine\n")


def test_config_state_matrix_roundtrip():
    rho = 0.8 * q.projector(q.bell_state(1)) + 0.2 * np.eye(4) / 4
    cfg = fast_config(state_matrix=rho)
    back = RunConfig.from_text(cfg.to_text())
    assert np.abs(build_state(back.source()) - rho).max() < 1e-15


def test_parse_unitary_spec():
    assert np.allclose(parse_unitary_spec("identity"), np.eye(2))
    assert np.allclose(parse_unitary_spec("rot(45)"), q.rotation(np.pi / 4), atol=1e-12)
    h1 = parse_unitary_spec("haar(7)")
    h2 = parse_unitary_spec("haar(7)")
    assert np.array_equal(h1, h2)
    q.check_unitary(h1)
    spec = "matrix(0 0 1 0 1 0 0 0)"  # swap H and V
    assert np.allclose(parse_unitary_spec(spec), np.array([[0, 1], [1, 0]]), atol=1e-15)
    with pytest.raises(ConfigError):
        parse_unitary_spec("spin(12)")
    with pytest.raises(ValueError):
        parse_unitary_spec("matrix(1 0 1 0 1 0 1 0)")  # not unitary


# ----- pipeline artifacts ------------------------------------------------


def test_run_pipeline_emits_complete_directory(tmp_path):
    out = tmp_path / "run"
    report = run_pipeline(fast_config(), out)
    for name in (
        "config.txt",
        "counts.txt",
        "plan.txt",
        "alice.ttag",
        "bob.ttag",
        "histograms.txt",
        "windows.txt",
        "report.json",
        "report.txt",
        "messages/log.txt",
        "messages/001_timestamps.u64",
        "messages/002_basis_tags.u8",
        "messages/003_discard_list.txt",
    ):
        assert (out / name).is_file(), name
    stored = json.loads((out / "report.json").read_text())
    assert stored == report
    assert report["windows"]["mode"] == "per-basis"
    assert report["sift"]["n_bits"] > 0
    assert 0.0 < report["sift"]["qber_overall"] < 0.11
    assert report["state_estimate"]["fidelity_bell"] == pytest.approx(0.94, abs=0.02)


def test_messages_carry_no_outcomes(tmp_path):
    out = tmp_path / "run"
    report = run_pipeline(fast_config(), out)
    kinds = [m["kind"] for m in report["messages"]]
    assert kinds == ["timestamps", "basis-tags", "discard-list"]
    alice = read_ttag(out / "alice.ttag", "alice")
    times = np.frombuffer((out / "messages/001_timestamps.u64").read_bytes(), dtype="<u8")
    tags = np.frombuffer((out / "messages/002_basis_tags.u8").read_bytes(), dtype="u1")
    assert np.array_equal(times, alice.times_ps)
    # Basis tags reveal the basis (channel pair), never the outcome bit.
    assert np.array_equal(tags, alice.channels >> 1)
    assert set(np.unique(tags)) <= {0, 1}
    # Log lines carry checksums that match the payloads.
    for m in report["messages"]:
        data = (out / "messages" / m["payload"]).read_bytes()
        assert hashlib.sha256(data).hexdigest() == m["sha256"]
        assert len(data) == m["bytes"]


def test_transmitter_key_recoverable_from_public_messages(tmp_path):
    """Private click record + public discard list reproduce the sifted key."""
    out = tmp_path / "run"
    run_pipeline(fast_config(), out)
    alice = read_ttag(out / "alice.ttag", "alice")
    kept = np.ones(len(alice), dtype=bool)
    for line in (out / "messages/003_discard_list.txt").read_text().splitlines():
        if line.startswith("#") or not line.strip():
            continue
        lo, hi = map(int, line.split())
        kept[lo : hi + 1] = False
    key_bits = (alice.channels[kept] & 1).astype(int)
    # Cross-check against a fresh sift of the stored streams.
    rep = replay(out)
    assert rep["sift"]["n_bits"] == int(kept.sum())
    assert rep["sift"]["n_bits"] == len(key_bits)


def test_replay_reproduces_report_bytes(tmp_path):
    out = tmp_path / "run"
    run_pipeline(fast_config(window_mode="overall"), out)
    recomputed = report_to_json(replay(out))
    assert recomputed == (out / "report.json").read_text()


def test_replay_fixed_mode(tmp_path):
    out = tmp_path / "run"
    report = run_pipeline(fast_config(window_mode="fixed"), out)
    assert report["windows"]["feasible"] is None
    assert report_to_json(replay(out)) == (out / "report.json").read_text()


def test_double_run_is_byte_identical(tmp_path):
    cfg = fast_config()
    run_pipeline(cfg, tmp_path / "one")
    run_pipeline(cfg, tmp_path / "two")
    assert tree_hash(tmp_path / "one") == tree_hash(tmp_path / "two")
    run_pipeline(replace(cfg, master_seed=78), tmp_path / "three")
    assert tree_hash(tmp_path / "one") != tree_hash(tmp_path / "three")


def test_pauli_plan_mode(tmp_path):
    report = run_pipeline(fast_config(plan_mode="pauli"), tmp_path / "run")
    assert report["plan"]["correlation_sign_z"] == -1
    assert report["plan"]["correlation_sign_x"] == 1


# ----- sweep -------------------------------------------------------------


def test_sweep_repeated_values_identical_rows(tmp_path):
    cfg = fast_config(tomography_shots=5_000, duration_s=0.01)
    sweep(cfg, "mixing_p", ["0.8", "0.92", "0.8"], tmp_path / "sw")
    lines = (tmp_path / "sw" / "sweep.tsv").read_text().splitlines()
    assert len(lines) == 4  # header + 3 points
    assert lines[1] == lines[3]
    assert lines[1] != lines[2]
    assert lines[0].split("\t")[0] == "parameter"
    # Point directories are full run dirs.
    assert (tmp_path / "sw" / "point_001" / "report.json").is_file()


def test_sweep_is_deterministic(tmp_path):
    cfg = fast_config(tomography_shots=5_000, duration_s=0.01)
    sweep(cfg, "channel-rotation", ["0", "20"], tmp_path / "a")
    sweep(cfg, "channel-rotation", ["0", "20"], tmp_path / "b")
    assert (tmp_path / "a" / "sweep.tsv").read_text() == (tmp_path / "b" / "sweep.tsv").read_text()


def test_sweep_rejects_unknown_parameter(tmp_path):
    with pytest.raises(ConfigError):
        sweep(fast_config(), "entropy", ["1"], tmp_path / "sw")


# ----- CLI ---------------------------------------------------------------


def test_cli_run_and_replay(tmp_path, capsys):
    out = tmp_path / "run"
    code = cli.main(
        ["run", "--out", str(out), "--seed", "9",
         "--set", "session.duration_s=0.02", "--set", "tomography.shots=20000"]
    )
    assert code == 0
    assert "session summary" in capsys.readouterr().out
    assert cli.main(["replay", "--dir", str(out)]) == 0
    assert "matches stored" in capsys.readouterr().out


def test_cli_stagewise_equals_pipeline(tmp_path):
    """Running the stages by hand reproduces the orchestrated artifacts."""
    cfg = fast_config()
    cfg_file = tmp_path / "link.cfg"
    cfg_file.write_text(cfg.to_text())
    run_dir = tmp_path / "auto"
    run_pipeline(cfg, run_dir)

    base = ["--config", str(cfg_file)]
    counts = tmp_path / "counts.txt"
    plan = tmp_path / "plan.txt"
    stage = tmp_path / "stage"
    hists = tmp_path / "hists.txt"
    wins = tmp_path / "windows.txt"
    assert cli.main(["tomography", *base, "--out", str(counts)]) == 0
    assert cli.main(["plan", "--counts", str(counts), "--out", str(plan)]) == 0
    assert cli.main(["simulate", *base, "--plan", str(plan), "--out", str(stage)]) == 0
    assert cli.main(
        ["correlate", *base, "--alice", str(stage / "alice.ttag"),
         "--bob", str(stage / "bob.ttag"), "--out", str(hists)]
    ) == 0
    assert cli.main(
        ["optimize", *base, "--histograms", str(hists), "--plan", str(plan),
         "--out", str(wins)]
    ) == 0

    assert counts.read_text() == (run_dir / "counts.txt").read_text()
    assert plan.read_text() == (run_dir / "plan.txt").read_text()
    assert (stage / "alice.ttag").read_bytes() == (run_dir / "alice.ttag").read_bytes()
    assert (stage / "bob.ttag").read_bytes() == (run_dir / "bob.ttag").read_bytes()
    assert hists.read_text() == (run_dir / "histograms.txt").read_text()
    assert wins.read_text() == (run_dir / "windows.txt").read_text()


def test_cli_sift_prints_summary(tmp_path, capsys):
    cfg = fast_config()
    run_dir = tmp_path / "auto"
    run_pipeline(cfg, run_dir)
    cfg_file = tmp_path / "link.cfg"
    cfg_file.write_text(cfg.to_text())
    code = cli.main(
        ["sift", "--config", str(cfg_file),
         "--alice", str(run_dir / "alice.ttag"), "--bob", str(run_dir / "bob.ttag"),
         "--plan", str(run_dir / "plan.txt"), "--windows", str(run_dir / "windows.txt"),
         "--out", str(tmp_path / "key.txt")]
    )
    assert code == 0
    out = capsys.readouterr().out
    assert "sifted" in out and "qber" in out
    key = (tmp_path / "key.txt").read_text().strip()
    assert set(key) <= {"0", "1"}
    assert len(key) > 0


def test_cli_exit_codes(tmp_path, capsys):
    # Unknown config key -> validation failure.
    bad = tmp_path / "bad.cfg"
    bad.write_text("source.wobble = 3\n")
    assert cli.main(["run", "--config", str(bad), "--out", str(tmp_path / "x")]) == 2
    # Unsatisfiable QBER target on noise-dominated histograms -> infeasible.
    noise = [
        CorrelationHistogram(ca, cb, 100, -500, 500, np.full(10, 25, dtype=np.int64))
        for ca, cb in SAME_BASIS_PAIRS
    ]
    hist_file = tmp_path / "noise.txt"
    hist_file.write_text(histograms_to_text(noise))
    run_dir = tmp_path / "auto"
    run_pipeline(fast_config(), run_dir)
    code = cli.main(
        ["optimize", "--histograms", str(hist_file),
         "--plan", str(run_dir / "plan.txt"), "--out", str(tmp_path / "w.txt"),
         "--set", "sift.qber_target=0.01"]
    )
    assert code == 3
    capsys.readouterr()


def test_cli_sweep(tmp_path, capsys):
    code = cli.main(
        ["sweep", "--param", "mixing_p", "--values", "0.85,0.95",
         "--out", str(tmp_path / "sw"), "--seed", "4",
         "--set", "session.duration_s=0.01", "--set", "tomography.shots=5000"]
    )
    assert code == 0
    assert (tmp_path / "sw" / "sweep.tsv").is_file()
    assert "2 points" in capsys.readouterr().out
