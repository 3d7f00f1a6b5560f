"""Command line entry point: ``vetbench fidelity|stress|diff``."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from vetbench.defenses import ENGINE_KINDS, DefenseKind, PolicyCompileError
from vetbench.events import (
    DEFAULT_MAX_EVENTS,
    STRESS_SUITE_SIZES,
    SequenceError,
    gen_stress_suites,
    gen_random_suite,
    load_sequences,
)
from vetbench.harness import DEFAULT_TESTCASE_CEILING, Mode, run_campaign
from vetbench.testbed import ConfigError, load_config

MODES = {"fidelity": Mode.FIDELITY, "stress": Mode.STRESS, "diff": Mode.DIFFERENTIAL}
DEFAULT_MANIFEST = "cases.suite"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vetbench", description=__doc__)
    sub = parser.add_subparsers(dest="mode", required=True)
    for name, help_text in (
        ("fidelity", "replay hand-written testcases"),
        ("stress", "run seeded random suites, one set per defense"),
        ("diff", "run one shared suite against several defenses"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, type=Path, help="testbed config (TOML)")
        p.add_argument("--suite", type=Path, help="suite manifest or single .events file")
        p.add_argument("--count", type=int, help="testcases in one random suite")
        p.add_argument("--max-events", type=int, default=DEFAULT_MAX_EVENTS)
        p.add_argument("--seed", type=int, help="defaults to the config seed, then 0")
        p.add_argument("--defense", action="append", choices=[k.value for k in DefenseKind],
                       help="repeatable; defaults depend on the mode")
        p.add_argument("--debug", action="store_true", help="record per-event state diffs")
        p.add_argument("--budget", type=float, help="wall-clock budget in seconds")
        p.add_argument("--testcase-ceiling", type=float, default=DEFAULT_TESTCASE_CEILING)
        p.add_argument("--workers", type=int, default=1)
        p.add_argument("--fail-closed", action="store_true",
                       help="deny when the policy server is unreachable")
        p.add_argument("--out", required=True, help="report path, or - for stdout")
    return parser


def _defenses(args, config) -> list:
    if args.defense:
        return list(dict.fromkeys(DefenseKind(d) for d in args.defense))
    if args.mode == "diff" or config.defense is DefenseKind.NONE:
        return list(ENGINE_KINDS)
    return [config.defense]


def _stream_of(kind: DefenseKind) -> int:
    # fixed per defense, so adding a defense to the run never changes another's suites
    return list(DefenseKind).index(kind)


def _suites(args, config, defenses):
    seed = args.seed if args.seed is not None else (config.seed or 0)
    inputs = {"config": str(args.config), "max_events": args.max_events, "seed": seed}
    if args.suite is not None and args.count is not None:
        raise SystemExit("vetbench: --suite and --count are mutually exclusive")
    if args.count is not None and args.count < 0:
        raise SystemExit("vetbench: --count must be non-negative")

    if args.mode == "stress" and args.suite is None:
        if args.count is not None:
            inputs["count"] = args.count
            suites = {
                k.value: [gen_random_suite(config, args.count, args.max_events, seed,
                                           name=f"random-{args.count}", stream=(_stream_of(k),))]
                for k in defenses
            }
        else:
            inputs["sizes"] = list(STRESS_SUITE_SIZES)
            suites = {
                k.value: gen_stress_suites(config, seed, STRESS_SUITE_SIZES, args.max_events, (_stream_of(k),))
                for k in defenses
            }
        return suites, inputs

    if args.count is not None:
        inputs["count"] = args.count
        return [gen_random_suite(config, args.count, args.max_events, seed, name=f"random-{args.count}")], inputs

    manifest = args.suite or args.config.parent / DEFAULT_MANIFEST
    inputs["suite"] = str(manifest)
    return [load_sequences(manifest, config.device_map)], inputs


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args.config)
        defenses = _defenses(args, config)
        suites, inputs = _suites(args, config, defenses)
        inputs["defenses"] = [k.value for k in defenses]
        report = run_campaign(
            config,
            suites,
            MODES[args.mode],
            defenses=defenses,
            debug=args.debug,
            budget=args.budget,
            testcase_ceiling=args.testcase_ceiling,
            workers=args.workers,
            fail_open=not args.fail_closed,
            inputs=inputs,
        )
    except (ConfigError, SequenceError, PolicyCompileError, ValueError, OSError) as exc:
        print(f"vetbench: {exc}", file=sys.stderr)
        return 2

    text = report.to_json()
    if args.out == "-":
        sys.stdout.write(text)
    else:
        Path(args.out).write_text(text, encoding="utf-8")
    print(report.summary(), file=sys.stderr)
    if report.partial:
        print("budget expired: report is partial", file=sys.stderr)
    return 1 if report.errored else 0


if __name__ == "__main__":
    sys.exit(main())
