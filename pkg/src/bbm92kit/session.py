"""End-to-end session pipeline, configuration and reporting.

A run owns one output directory::

    config.txt      resolved configuration (flat key=value)
    counts.txt      tomography coincidence counts
    plan.txt        receiver measurement plan
    alice.ttag      transmitter clicks (private record)
    bob.ttag        receiver clicks (private record)
    histograms.txt  per-pair delay histograms
    windows.txt     accepted coincidence windows
    messages/       public-channel traffic (log.txt + payloads)
    report.json     machine-readable summary
    report.txt      human-readable summary

The message log models the publicly visible traffic of the protocol:
the transmitter publishes click times and basis tags (never outcome
bits), the receiver answers with the list of transmitted click indices
to discard.  Each party's key is then reconstructible from its private
outcome record plus the public messages, and every quantity in the
report can be recomputed from the emitted files alone (``replay``).

All per-stage randomness derives from ``session.master_seed`` via
labeled sub-seeds, so a config file fully determines every output
byte.
"""

from __future__ import annotations

import hashlib
import json
import math
import re
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .bases import (
    BasisPlan,
    optimal_bases,
    pauli_plan,
    plan_from_text,
    plan_to_text,
)
from .coincidence import (
    SAME_BASIS_PAIRS,
    CoincidenceWindow,
    cross_correlate,
    count_in_windows,
    find_peak,
    fixed_windows,
    forecast_windows,
    histograms_to_text,
    optimize_windows,
    sift,
    windows_from_text,
    windows_to_text,
)
from .photonsim import (
    PS_PER_SECOND,
    ChannelConfig,
    DetectorConfig,
    SourceConfig,
    TimestampStream,
    build_state,
    generate_session,
    read_ttag,
    write_ttag,
)
from .quantum import bell_state, concurrence, eigh, fidelity_pure, purity, rotation
from .seeds import derive_seed
from .tomography import counts_from_text, counts_to_text, reconstruct, simulate_counts


class ConfigError(ValueError):
    """A configuration file or value is invalid."""


_UNITARY_SPEC = re.compile(r"^(identity|rot\(([^)]*)\)|haar\(([^)]*)\)|matrix\(([^)]*)\))$")


def parse_unitary_spec(spec: str) -> np.ndarray:
    """Parse a channel unitary description.

    Accepted forms: ``identity``, ``rot(DEG)`` (polarization rotation
    by DEG degrees), ``haar(SEED)`` (seeded Haar-random unitary) and
    ``matrix(a_re a_im b_re b_im c_re c_im d_re d_im)`` (row-major).
    """
    from .quantum import check_unitary, random_unitary

    m = _UNITARY_SPEC.match(spec.strip())
    if not m:
        raise ConfigError(f"bad unitary spec {spec!r}")
    if spec.strip() == "identity":
        return np.eye(2, dtype=complex)
    if m.group(2) is not None:
        return rotation(math.radians(float(m.group(2))))
    if m.group(3) is not None:
        return random_unitary(np.random.default_rng(int(m.group(3))))
    vals = [float(t) for t in m.group(4).split()]
    if len(vals) != 8:
        raise ConfigError(f"matrix(...) needs 8 numbers, got {len(vals)}")
    u = np.array(
        [[vals[0] + 1j * vals[1], vals[2] + 1j * vals[3]],
         [vals[4] + 1j * vals[5], vals[6] + 1j * vals[7]]]
    )
    return check_unitary(u)


@dataclass(frozen=True)
class RunConfig:
    """Resolved settings for one session run.

    Defaults reproduce the calibrated desk-scale link: a 0.92-mixed
    singlet-like source at 200 kHz pair rate, 66 % detection
    efficiency, 430 kHz uncorrelated background per channel and 300 ps
    detector jitter.
    """

    mixing_p: float = 0.92
    pair_rate_hz: float = 2.0e5
    state_matrix: np.ndarray | None = None
    channel_alice: str = "identity"
    channel_bob: str = "identity"
    efficiency: float | tuple = 0.66
    dark_rate_hz: float | tuple = 4.3e5
    jitter_sigma_ps: float = 300.0
    dead_time_ps: int = 0
    tomography_shots: int = 100_000
    plan_mode: str = "optimal"
    duration_s: float = 1.0
    master_seed: int = 1
    bin_width_ps: int = 100
    delay_range_ps: int = 50_000
    window_mode: str = "per-basis"
    fixed_half_width_ps: int = 500
    qber_target: float = 0.085
    per_basis_target: float = 0.10

    def __post_init__(self) -> None:
        if self.plan_mode not in ("optimal", "pauli"):
            raise ConfigError(f"plan.mode must be 'optimal' or 'pauli', got {self.plan_mode!r}")
        if self.window_mode not in ("fixed", "overall", "per-basis"):
            raise ConfigError(
                f"sift.window_mode must be 'fixed', 'overall' or 'per-basis', "
                f"got {self.window_mode!r}"
            )
        if self.duration_s < 0:
            raise ConfigError("session.duration_s must be non-negative")
        if self.tomography_shots <= 0:
            raise ConfigError("tomography.shots must be positive")
        if self.master_seed < 0:
            raise ConfigError("session.master_seed must be non-negative")

    def source(self) -> SourceConfig:
        return SourceConfig(
            mixing_p=self.mixing_p,
            pair_rate_hz=self.pair_rate_hz,
            state_matrix=self.state_matrix,
        )

    def channel(self) -> ChannelConfig:
        return ChannelConfig(
            u_alice=parse_unitary_spec(self.channel_alice),
            u_bob=parse_unitary_spec(self.channel_bob),
        )

    def detector(self) -> DetectorConfig:
        return DetectorConfig(
            efficiency=np.asarray(self.efficiency, dtype=float),
            dark_rate_hz=np.asarray(self.dark_rate_hz, dtype=float),
            jitter_sigma_ps=self.jitter_sigma_ps,
            dead_time_ps=self.dead_time_ps,
        )

    def duration_ps(self) -> int:
        return int(round(self.duration_s * PS_PER_SECOND))

    def to_mapping(self) -> dict:
        """Flat key=value view (all values as canonical strings)."""

        def num(v) -> str:
            return repr(float(v)) if isinstance(v, float) else repr(v)

        def multi(v) -> str:
            if isinstance(v, tuple):
                return ",".join(repr(float(x)) for x in v)
            return repr(float(v))

        items = {
            "source.mixing_p": num(self.mixing_p),
            "source.pair_rate_hz": num(self.pair_rate_hz),
            "channel.alice": self.channel_alice,
            "channel.bob": self.channel_bob,
            "detector.efficiency": multi(self.efficiency),
            "detector.dark_rate_hz": multi(self.dark_rate_hz),
            "detector.jitter_sigma_ps": num(self.jitter_sigma_ps),
            "detector.dead_time_ps": repr(int(self.dead_time_ps)),
            "tomography.shots": repr(int(self.tomography_shots)),
            "plan.mode": self.plan_mode,
            "session.duration_s": num(self.duration_s),
            "session.master_seed": repr(int(self.master_seed)),
            "sift.bin_width_ps": repr(int(self.bin_width_ps)),
            "sift.delay_range_ps": repr(int(self.delay_range_ps)),
            "sift.window_mode": self.window_mode,
            "sift.fixed_half_width_ps": repr(int(self.fixed_half_width_ps)),
            "sift.qber_target": num(self.qber_target),
            "sift.per_basis_target": num(self.per_basis_target),
        }
        if self.state_matrix is not None:
            flat = np.asarray(self.state_matrix, dtype=complex).ravel()
            items["source.state_matrix"] = " ".join(
                f"{x:.17g}" for a in flat for x in (a.real, a.imag)
            )
        return items

    def to_text(self) -> str:
        lines = ["# session configuration v1"]
        lines += [f"{k} = {v}" for k, v in self.to_mapping().items()]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_mapping(cls, mapping: dict) -> "RunConfig":
        """Build a config from flat key=value pairs; unknown keys error."""

        def split_floats(s: str):
            if "," in s:
                return tuple(float(t) for t in s.split(","))
            return float(s)

        parsers = {
            "source.mixing_p": ("mixing_p", float),
            "source.pair_rate_hz": ("pair_rate_hz", float),
            "source.state_matrix": ("state_matrix", _parse_state_matrix),
            "channel.alice": ("channel_alice", str),
            "channel.bob": ("channel_bob", str),
            "detector.efficiency": ("efficiency", split_floats),
            "detector.dark_rate_hz": ("dark_rate_hz", split_floats),
            "detector.jitter_sigma_ps": ("jitter_sigma_ps", float),
            "detector.dead_time_ps": ("dead_time_ps", int),
            "tomography.shots": ("tomography_shots", int),
            "plan.mode": ("plan_mode", str),
            "session.duration_s": ("duration_s", float),
            "session.master_seed": ("master_seed", int),
            "sift.bin_width_ps": ("bin_width_ps", int),
            "sift.delay_range_ps": ("delay_range_ps", int),
            "sift.window_mode": ("window_mode", str),
            "sift.fixed_half_width_ps": ("fixed_half_width_ps", int),
            "sift.qber_target": ("qber_target", float),
            "sift.per_basis_target": ("per_basis_target", float),
        }
        kwargs = {}
        for key, value in mapping.items():
            if key not in parsers:
                raise ConfigError(f"unknown configuration key {key!r}")
            field_name, parse = parsers[key]
            try:
                kwargs[field_name] = parse(value)
            except ConfigError:
                raise
            except ValueError as exc:
                raise ConfigError(f"bad value for {key!r}: {exc}") from exc
        return cls(**kwargs)

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        mapping = {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
            key, _, value = line.partition("=")
            key = key.strip()
            if key in mapping:
                raise ConfigError(f"line {lineno}: duplicate key {key!r}")
            mapping[key] = value.strip()
        return cls.from_mapping(mapping)

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        return cls.from_text(Path(path).read_text())


def _parse_state_matrix(s: str) -> np.ndarray:
    vals = [float(t) for t in s.split()]
    if len(vals) != 32:
        raise ConfigError(f"source.state_matrix needs 32 numbers, got {len(vals)}")
    flat = np.array(vals[0::2]) + 1j * np.array(vals[1::2])
    return flat.reshape(4, 4)


def _round6(x):
    """Six-significant-digit float for reports; NaN becomes None."""
    if isinstance(x, float):
        if math.isnan(x):
            return None
        return float(f"{x:.6g}")
    return x


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _discard_ranges(n_sent: int, kept_indices: np.ndarray) -> str:
    """Inclusive index ranges of transmitted clicks to discard."""
    kept_mask = np.zeros(n_sent, dtype=bool)
    kept_mask[kept_indices] = True
    discard = np.flatnonzero(~kept_mask)
    lines = ["# discard these transmitted click indices (inclusive ranges)"]
    if discard.size:
        breaks = np.flatnonzero(np.diff(discard) > 1)
        starts = np.concatenate(([0], breaks + 1))
        ends = np.concatenate((breaks, [discard.size - 1]))
        lines += [f"{discard[s]} {discard[e]}" for s, e in zip(starts, ends)]
    return "\n".join(lines) + "\n"


def _write_messages(out_dir: Path, alice: TimestampStream, kept_alice: np.ndarray) -> list[dict]:
    """Emit the public-channel traffic and return the log entries.

    Three messages cross the public channel: the transmitter's click
    times, its per-click basis tags (0 rectilinear, 1 diagonal) and the
    receiver's discard list.  No payload carries outcome bits.
    """
    msg_dir = out_dir / "messages"
    msg_dir.mkdir(parents=True, exist_ok=True)
    payloads = [
        ("alice->bob", "timestamps", "001_timestamps.u64",
         alice.times_ps.astype("<u8").tobytes()),
        ("alice->bob", "basis-tags", "002_basis_tags.u8",
         (alice.channels >> 1).astype("u1").tobytes()),
        ("bob->alice", "discard-list", "003_discard_list.txt",
         _discard_ranges(len(alice), kept_alice).encode()),
    ]
    entries = []
    log_lines = ["# public channel log v1", "# seq direction kind payload bytes sha256"]
    for seq, (direction, kind, name, data) in enumerate(payloads, start=1):
        (msg_dir / name).write_bytes(data)
        digest = _sha256(data)
        entries.append(
            {"seq": seq, "direction": direction, "kind": kind,
             "payload": name, "bytes": len(data), "sha256": digest}
        )
        log_lines.append(f"{seq} {direction} {kind} {name} {len(data)} {digest}")
    (msg_dir / "log.txt").write_text("\n".join(log_lines) + "\n")
    return entries


def _state_estimate_block(rho_hat: np.ndarray) -> dict:
    dec = eigh(rho_hat)
    return {
        "fidelity_bell": _round6(fidelity_pure(rho_hat, bell_state(1))),
        "concurrence": _round6(concurrence(rho_hat)),
        "purity": _round6(purity(rho_hat)),
        "top_gap": _round6(dec.gap),
    }


def _plan_block(plan: BasisPlan) -> dict:
    return {
        "label_z": plan.basis_z.label,
        "label_x": plan.basis_x.label,
        "correlation_sign_z": plan.correlation_sign_z,
        "correlation_sign_x": plan.correlation_sign_x,
        "source_concurrence": _round6(plan.source_concurrence),
    }


def _build_report(
    cfg: RunConfig,
    rho_hat: np.ndarray,
    plan: BasisPlan,
    windows,
    feasible,
    forecast,
    sift_res,
    messages: list[dict],
) -> dict:
    return {
        "format": "session report v1",
        "config": cfg.to_mapping(),
        "state_estimate": _state_estimate_block(rho_hat),
        "plan": _plan_block(plan),
        "windows": {
            "mode": cfg.window_mode,
            "feasible": feasible,
            "qber_target": _round6(cfg.qber_target),
            "per_basis_target": _round6(cfg.per_basis_target),
            "per_pair": [
                {
                    "alice_channel": w.alice_channel,
                    "bob_channel": w.bob_channel,
                    "center_delay_ps": w.center_delay_ps,
                    "half_width_ps": w.half_width_ps,
                }
                for w in windows
            ],
        },
        "forecast": {
            "qber_overall": _round6(forecast.qber_overall),
            "qber_z": _round6(forecast.qber_z),
            "qber_x": _round6(forecast.qber_x),
            "key_rate_bps": _round6(forecast.key_rate_bps),
        },
        "sift": {
            "n_bits": sift_res.n_bits,
            "qber_overall": _round6(sift_res.qber_overall),
            "qber_z": _round6(sift_res.qber_z),
            "qber_x": _round6(sift_res.qber_x),
            "key_rate_bps": _round6(sift_res.key_rate_bps),
            "duration_s": _round6(sift_res.duration_s),
        },
        "messages": messages,
    }


def report_to_text(report: dict) -> str:
    """Short human-readable digest of a report dict."""

    def pct(x) -> str:
        return "n/a" if x is None else f"{100 * x:.3f}%"

    st = report["state_estimate"]
    sf = report["sift"]
    fc = report["forecast"]
    wd = report["windows"]
    widths = ",".join(str(w["half_width_ps"]) for w in wd["per_pair"])
    lines = [
        "session summary",
        f"  state estimate: fidelity {st['fidelity_bell']}, concurrence {st['concurrence']}, "
        f"purity {st['purity']}, top gap {st['top_gap']}",
        f"  plan: {report['plan']['label_z']}/{report['plan']['label_x']} "
        f"signs {report['plan']['correlation_sign_z']:+d}/{report['plan']['correlation_sign_x']:+d}",
        f"  windows [{wd['mode']}] feasible={wd['feasible']} half-widths ps: {widths}",
        f"  forecast: qber {pct(fc['qber_overall'])} (z {pct(fc['qber_z'])}, "
        f"x {pct(fc['qber_x'])}), key {fc['key_rate_bps']} bps",
        f"  sifted: {sf['n_bits']} bits, qber {pct(sf['qber_overall'])} "
        f"(z {pct(sf['qber_z'])}, x {pct(sf['qber_x'])}), key {sf['key_rate_bps']} bps "
        f"over {sf['duration_s']} s",
    ]
    return "\n".join(lines) + "\n"


def report_to_json(report: dict) -> str:
    return json.dumps(report, indent=1, sort_keys=True) + "\n"


def _analysis(cfg: RunConfig, alice: TimestampStream, bob: TimestampStream, plan: BasisPlan):
    """Correlate, choose windows, count and sift; shared by run and replay."""
    histograms = [
        cross_correlate(
            alice, bob, pair, cfg.bin_width_ps, (-cfg.delay_range_ps, cfg.delay_range_ps)
        )
        for pair in SAME_BASIS_PAIRS
    ]
    if cfg.window_mode == "fixed":
        windows = fixed_windows(histograms, cfg.fixed_half_width_ps)
        feasible = None
    else:
        opt = optimize_windows(
            histograms,
            cfg.duration_s,
            cfg.window_mode,
            plan,
            qber_target=cfg.qber_target,
            per_basis_target=cfg.per_basis_target,
        )
        windows = opt.windows
        feasible = opt.feasible
    forecast = forecast_windows(histograms, windows, cfg.duration_s, plan)
    counts_w = count_in_windows(alice, bob, windows)
    sift_res = sift(counts_w, plan)
    return histograms, windows, feasible, forecast, sift_res


def run_pipeline(cfg: RunConfig, out_dir) -> dict:
    """Execute tomography, planning, the session and sifting; write a run dir.

    Returns the report dict (also written as ``report.json``); every
    value in it can be recomputed from the emitted files by ``replay``.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(cfg.to_text())

    state = build_state(cfg.source())
    ch = cfg.channel()

    counts = simulate_counts(
        state, ch, cfg.tomography_shots, derive_seed(cfg.master_seed, "tomography")
    )
    (out / "counts.txt").write_text(counts_to_text(counts))
    rho_hat = reconstruct(counts)

    plan = optimal_bases(rho_hat) if cfg.plan_mode == "optimal" else pauli_plan()
    (out / "plan.txt").write_text(plan_to_text(plan))

    alice, bob = generate_session(
        state,
        cfg.pair_rate_hz,
        ch,
        cfg.detector(),
        plan,
        cfg.duration_s,
        derive_seed(cfg.master_seed, "session"),
    )
    write_ttag(out / "alice.ttag", alice)
    write_ttag(out / "bob.ttag", bob)

    histograms, windows, feasible, forecast, sift_res = _analysis(cfg, alice, bob, plan)
    (out / "histograms.txt").write_text(histograms_to_text(histograms))
    (out / "windows.txt").write_text(windows_to_text(windows))

    kept_alice = np.unique(sift_res.records["ia"])
    messages = _write_messages(out, alice, kept_alice)

    report = _build_report(cfg, rho_hat, plan, windows, feasible, forecast, sift_res, messages)
    (out / "report.json").write_text(report_to_json(report))
    (out / "report.txt").write_text(report_to_text(report))
    return report


def replay(run_dir) -> dict:
    """Recompute a run's report from its emitted files only.

    Reads the config, counts table, plan, time-tag streams and window
    choices back in and reproduces ``report.json`` byte for byte; no
    simulation stage is re-run.
    """
    run = Path(run_dir)
    cfg = RunConfig.from_file(run / "config.txt")
    counts = counts_from_text((run / "counts.txt").read_text())
    rho_hat = reconstruct(counts)
    plan = plan_from_text((run / "plan.txt").read_text())
    duration_ps = cfg.duration_ps()
    alice = read_ttag(run / "alice.ttag", "alice", duration_ps)
    bob = read_ttag(run / "bob.ttag", "bob", duration_ps)

    stored_windows = windows_from_text((run / "windows.txt").read_text())
    histograms = [
        cross_correlate(
            alice, bob, pair, cfg.bin_width_ps, (-cfg.delay_range_ps, cfg.delay_range_ps)
        )
        for pair in SAME_BASIS_PAIRS
    ]
    forecast = forecast_windows(histograms, stored_windows, cfg.duration_s, plan)
    if cfg.window_mode == "fixed":
        feasible = None
    else:
        # Same exact comparisons the optimizer scored with.
        feasible = forecast.qber_overall <= cfg.qber_target
        if cfg.window_mode == "per-basis":
            feasible = (
                feasible
                and forecast.qber_z <= cfg.per_basis_target
                and forecast.qber_x <= cfg.per_basis_target
            )
    counts_w = count_in_windows(alice, bob, stored_windows)
    sift_res = sift(counts_w, plan)

    kept_alice = np.unique(sift_res.records["ia"])
    messages = []
    payload_specs = [
        ("alice->bob", "timestamps", "001_timestamps.u64",
         alice.times_ps.astype("<u8").tobytes()),
        ("alice->bob", "basis-tags", "002_basis_tags.u8",
         (alice.channels >> 1).astype("u1").tobytes()),
        ("bob->alice", "discard-list", "003_discard_list.txt",
         _discard_ranges(len(alice), kept_alice).encode()),
    ]
    for seq, (direction, kind, name, data) in enumerate(payload_specs, start=1):
        messages.append(
            {"seq": seq, "direction": direction, "kind": kind,
             "payload": name, "bytes": len(data), "sha256": _sha256(data)}
        )

    return _build_report(
        cfg, rho_hat, plan, stored_windows, feasible, forecast, sift_res, messages
    )


SWEEP_PARAMETERS = ("mixing_p", "channel-rotation", "half-width", "mode")


def _apply_sweep_value(cfg: RunConfig, parameter: str, value: str) -> RunConfig:
    if parameter == "mixing_p":
        return replace(cfg, mixing_p=float(value))
    if parameter == "channel-rotation":
        return replace(cfg, channel_bob=f"rot({float(value)})")
    if parameter == "half-width":
        return replace(cfg, fixed_half_width_ps=int(value))
    if parameter == "mode":
        return replace(cfg, window_mode=value)
    raise ConfigError(f"sweep parameter must be one of {SWEEP_PARAMETERS}, got {parameter!r}")


def sweep(cfg: RunConfig, parameter: str, values, out_dir) -> list[dict]:
    """Run the pipeline once per parameter value; write a plot-ready table.

    Each point derives its master seed from the base seed and the
    value's text form, so repeating a value reproduces the identical
    row.  Points land in ``point_000`` etc. alongside ``sweep.tsv``.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    reports = []
    for idx, value in enumerate(values):
        value_str = str(value)
        point_cfg = _apply_sweep_value(cfg, parameter, value_str)
        point_cfg = replace(
            point_cfg,
            master_seed=derive_seed(cfg.master_seed, f"sweep {parameter}={value_str}"),
        )
        report = run_pipeline(point_cfg, out / f"point_{idx:03d}")
        reports.append(report)
        sf = report["sift"]
        rows.append(
            "\t".join(
                [
                    parameter,
                    value_str,
                    str(report["state_estimate"]["fidelity_bell"]),
                    str(report["state_estimate"]["concurrence"]),
                    str(sf["qber_overall"]),
                    str(sf["qber_z"]),
                    str(sf["qber_x"]),
                    str(sf["key_rate_bps"]),
                    str(report["windows"]["feasible"]),
                    str(sf["n_bits"]),
                ]
            )
        )
    header = (
        "parameter\tvalue\tfidelity_bell\tconcurrence\tqber_overall"
        "\tqber_z\tqber_x\tkey_rate_bps\tfeasible\tn_bits"
    )
    (out / "sweep.tsv").write_text("\n".join([header] + rows) + "\n")
    return reports
