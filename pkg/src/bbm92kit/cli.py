"""Command-line interface.

One subcommand per pipeline stage plus ``run``/``sweep``/``replay``
orchestration.  Exit codes: 0 success, 2 bad input or configuration,
3 window optimization found no feasible solution.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import session as sess
from .bases import optimal_bases, pauli_plan, plan_from_text, plan_to_text
from .coincidence import (
    SAME_BASIS_PAIRS,
    NoCoincidencesError,
    OverlappingWindowsError,
    cross_correlate,
    count_in_windows,
    histograms_from_text,
    histograms_to_text,
    optimize_windows,
    sift,
    windows_from_text,
    windows_to_text,
)
from .photonsim import TtagFormatError, build_state, generate_session, read_ttag, write_ttag
from .quantum import bell_state, concurrence, fidelity_pure, purity
from .seeds import derive_seed
from .session import ConfigError, RunConfig
from .tomography import counts_from_text, counts_to_text, reconstruct, simulate_counts

EXIT_OK = 0
EXIT_BAD_INPUT = 2
EXIT_INFEASIBLE = 3


def _load_config(args) -> RunConfig:
    cfg = RunConfig.from_file(args.config) if args.config else RunConfig()
    overrides = dict(cfg.to_mapping())
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, _, value = item.partition("=")
        overrides[key.strip()] = value.strip()
    if getattr(args, "set", None):
        cfg = RunConfig.from_mapping(overrides)
    if getattr(args, "seed", None) is not None:
        from dataclasses import replace

        cfg = replace(cfg, master_seed=args.seed)
    return cfg


def _read_streams(cfg: RunConfig, alice_path, bob_path):
    duration_ps = cfg.duration_ps()
    alice = read_ttag(alice_path, "alice", duration_ps)
    bob = read_ttag(bob_path, "bob", duration_ps)
    return alice, bob


def _cmd_tomography(args) -> int:
    cfg = _load_config(args)
    counts = simulate_counts(
        build_state(cfg.source()),
        cfg.channel(),
        cfg.tomography_shots,
        derive_seed(cfg.master_seed, "tomography"),
    )
    Path(args.out).write_text(counts_to_text(counts))
    print(f"wrote {counts.shots_per_setting} shots x 9 settings to {args.out}")
    return EXIT_OK


def _cmd_plan(args) -> int:
    counts = counts_from_text(Path(args.counts).read_text())
    rho_hat = reconstruct(counts)
    plan = optimal_bases(rho_hat) if args.mode == "optimal" else pauli_plan()
    Path(args.out).write_text(plan_to_text(plan))
    print(
        f"state estimate: fidelity {fidelity_pure(rho_hat, bell_state(1)):.6g}, "
        f"concurrence {concurrence(rho_hat):.6g}, purity {purity(rho_hat):.6g}"
    )
    print(
        f"plan [{args.mode}]: signs z={plan.correlation_sign_z:+d} "
        f"x={plan.correlation_sign_x:+d} -> {args.out}"
    )
    return EXIT_OK


def _cmd_simulate(args) -> int:
    cfg = _load_config(args)
    plan = plan_from_text(Path(args.plan).read_text())
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    alice, bob = generate_session(
        build_state(cfg.source()),
        cfg.pair_rate_hz,
        cfg.channel(),
        cfg.detector(),
        plan,
        cfg.duration_s,
        derive_seed(cfg.master_seed, "session"),
    )
    write_ttag(out / "alice.ttag", alice)
    write_ttag(out / "bob.ttag", bob)
    print(f"alice: {len(alice)} clicks, bob: {len(bob)} clicks -> {out}")
    return EXIT_OK


def _cmd_correlate(args) -> int:
    cfg = _load_config(args)
    alice, bob = _read_streams(cfg, args.alice, args.bob)
    histograms = [
        cross_correlate(
            alice, bob, pair, cfg.bin_width_ps, (-cfg.delay_range_ps, cfg.delay_range_ps)
        )
        for pair in SAME_BASIS_PAIRS
    ]
    Path(args.out).write_text(histograms_to_text(histograms))
    print(f"{len(histograms)} pair histograms -> {args.out}")
    return EXIT_OK


def _cmd_optimize(args) -> int:
    cfg = _load_config(args)
    histograms = histograms_from_text(Path(args.histograms).read_text())
    plan = plan_from_text(Path(args.plan).read_text())
    mode = args.mode or (cfg.window_mode if cfg.window_mode != "fixed" else "per-basis")
    result = optimize_windows(
        histograms,
        cfg.duration_s,
        mode,
        plan,
        qber_target=cfg.qber_target,
        per_basis_target=cfg.per_basis_target,
    )
    Path(args.out).write_text(windows_to_text(result.windows))
    fc = result.forecast
    print(
        f"windows [{mode}] feasible={result.feasible}: forecast qber "
        f"{100 * fc.qber_overall:.3f}% (z {100 * fc.qber_z:.3f}%, x {100 * fc.qber_x:.3f}%), "
        f"key {fc.key_rate_bps:.6g} bps -> {args.out}"
    )
    return EXIT_OK if result.feasible else EXIT_INFEASIBLE


def _cmd_sift(args) -> int:
    cfg = _load_config(args)
    alice, bob = _read_streams(cfg, args.alice, args.bob)
    plan = plan_from_text(Path(args.plan).read_text())
    windows = windows_from_text(Path(args.windows).read_text())
    result = sift(count_in_windows(alice, bob, windows), plan)
    print(
        f"sifted {result.n_bits} bits over {result.duration_s:.6g} s: "
        f"qber {100 * result.qber_overall:.3f}% "
        f"(z {100 * result.qber_z:.3f}%, x {100 * result.qber_x:.3f}%), "
        f"key {result.key_rate_bps:.6g} bps"
    )
    if args.out:
        bits = "".join(str(int(b)) for b in result.alice_bits)
        Path(args.out).write_text(bits + "\n")
        print(f"transmitter key bits -> {args.out}")
    return EXIT_OK


def _cmd_run(args) -> int:
    cfg = _load_config(args)
    report = sess.run_pipeline(cfg, args.out)
    sys.stdout.write(sess.report_to_text(report))
    if report["windows"]["feasible"] is False:
        return EXIT_INFEASIBLE
    return EXIT_OK


def _cmd_sweep(args) -> int:
    cfg = _load_config(args)
    values = [v for v in (t.strip() for t in args.values.split(",")) if v]
    if not values:
        raise ConfigError("--values produced an empty list")
    reports = sess.sweep(cfg, args.param, values, args.out)
    print(f"{len(reports)} points -> {Path(args.out) / 'sweep.tsv'}")
    for value, report in zip(values, reports):
        sf = report["sift"]
        print(
            f"  {args.param}={value}: qber {sf['qber_overall']}, "
            f"key {sf['key_rate_bps']} bps, feasible={report['windows']['feasible']}"
        )
    return EXIT_OK


def _cmd_replay(args) -> int:
    report = sess.replay(args.dir)
    text = sess.report_to_json(report)
    if args.out:
        Path(args.out).write_text(text)
        print(f"recomputed report -> {args.out}")
    stored_path = Path(args.dir) / "report.json"
    if stored_path.exists():
        stored = stored_path.read_text()
        if stored == text:
            print("replay matches stored report.json")
        else:
            print("replay DIFFERS from stored report.json", file=sys.stderr)
            return 1
    elif not args.out:
        sys.stdout.write(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bbm92",
        description="Entanglement QKD link simulator and timing analysis toolkit.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text)
        p.set_defaults(func=func)
        p.add_argument("--config", help="configuration file (key = value lines)")
        p.add_argument("--seed", type=int, help="override session.master_seed")
        p.add_argument(
            "--set", action="append", metavar="KEY=VALUE", help="override one config entry"
        )
        return p

    p = add("tomography", _cmd_tomography, "simulate joint-basis counting statistics")
    p.add_argument("--out", required=True, help="counts file to write")

    p = sub.add_parser("plan", help="reconstruct the state and derive measurement bases")
    p.set_defaults(func=_cmd_plan)
    p.add_argument("--counts", required=True, help="counts file from 'tomography'")
    p.add_argument("--out", required=True, help="plan file to write")
    p.add_argument("--mode", choices=("optimal", "pauli"), default="optimal")

    p = add("simulate", _cmd_simulate, "generate a timestamped detection session")
    p.add_argument("--plan", required=True, help="plan file from 'plan'")
    p.add_argument("--out", required=True, help="directory for alice.ttag/bob.ttag")

    p = add("correlate", _cmd_correlate, "histogram arrival-time differences per pair")
    p.add_argument("--alice", required=True)
    p.add_argument("--bob", required=True)
    p.add_argument("--out", required=True, help="histograms file to write")

    p = add("optimize", _cmd_optimize, "choose QBER-constrained coincidence windows")
    p.add_argument("--histograms", required=True, help="file from 'correlate'")
    p.add_argument("--plan", required=True)
    p.add_argument("--out", required=True, help="windows file to write")
    p.add_argument("--mode", choices=("overall", "per-basis"))

    p = add("sift", _cmd_sift, "count coincidences in windows and sift key bits")
    p.add_argument("--alice", required=True)
    p.add_argument("--bob", required=True)
    p.add_argument("--plan", required=True)
    p.add_argument("--windows", required=True)
    p.add_argument("--out", help="optional file for the transmitter's key bits")

    p = add("run", _cmd_run, "full pipeline into a run directory")
    p.add_argument("--out", required=True, help="run directory")

    p = add("sweep", _cmd_sweep, "run the pipeline across one varied parameter")
    p.add_argument("--param", required=True, choices=sess.SWEEP_PARAMETERS)
    p.add_argument("--values", required=True, help="comma-separated parameter values")
    p.add_argument("--out", required=True, help="sweep directory")

    p = sub.add_parser("replay", help="recompute a run's report from its files")
    p.set_defaults(func=_cmd_replay)
    p.add_argument("--dir", required=True, help="run directory to recompute")
    p.add_argument("--out", help="file for the recomputed report")

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, TtagFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_INPUT
    except (NoCoincidencesError, OverlappingWindowsError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_INPUT
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_INPUT


if __name__ == "__main__":
    raise SystemExit(main())
