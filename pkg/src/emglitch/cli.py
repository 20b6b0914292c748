"""Command-line front end.

Subcommands mirror the experiment workflow: ``run`` a golden execution,
``inject`` one pulse, ``sweep`` voltage or injection time, ``cartography``
for the synthetic probe scan, ``explain`` an observed state dump through the
replacement oracle, ``calibrate`` capture thresholds from a staircase file.

Exit codes: 0 success, 1 configuration error, 2 I/O error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import asm, bus, calibrate, campaign, core, glitch, isa, oracle, programs, reports


class ConfigError(Exception):
    pass


def _load_program(name: str) -> programs.Program:
    try:
        return programs.load(name)
    except FileNotFoundError as exc:
        raise ConfigError(str(exc)) from None
    except asm.AsmError as exc:
        raise ConfigError(f"assembly failed: {exc}") from None


def _load_glitch_config(path: str | None):
    if path is None:
        return glitch.GlitchSpec(), glitch.CaptureModel()
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise IOError(f"cannot read config {path}: {exc}") from None
    try:
        return glitch.parse_glitch_config(text, base_dir=p.parent)
    except ValueError as exc:
        raise ConfigError(f"bad config {path}: {exc}") from None


def _write(out_dir: str, name: str, fmt: str, report) -> None:
    path = reports.write_report(out_dir, name, fmt, report)
    print(f"wrote {path}")


def cmd_run(args) -> int:
    program = _load_program(args.program)
    image = program.build_image()
    state = program.initial_state()
    result = core.run_to_watchpoint(state, image, program.watchpoint, args.budget)
    watched = (programs.R0_RESULT_ADDR,)
    dump = core.state_dump(result.state, image, watched)
    text = core.dump_to_json(dump) if args.format == "json" else core.dump_to_csv(dump)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        ext = "json" if args.format == "json" else "csv"
        path = out / f"{program.name}-golden.{ext}"
        path.write_text(text)
        print(f"wrote {path}")
    else:
        print(text)
    print(f"# reason={result.reason} executed={result.executed}", file=sys.stderr)
    return 0


def cmd_inject(args) -> int:
    spec, model = _load_glitch_config(args.config)
    if args.seed is not None:
        from dataclasses import replace
        spec = replace(spec, seed=args.seed)
    context = campaign.prepare_context(args.program)
    rec = glitch.inject_trial(context.program, context.golden, spec, model,
                              watched=context.watched,
                              cycle_budget=context.cycle_budget,
                              golden_dump=context.golden_dump)
    print(core.dump_to_json(rec.dump))
    for hit in rec.corrupted:
        print(f"# corrupted {hit.bus} @0x{hit.addr:08x} "
              f"0x{hit.original:08x} -> 0x{hit.faulted:08x}", file=sys.stderr)
    print(f"# reason={rec.reason}", file=sys.stderr)
    return 0


def cmd_sweep(args) -> int:
    if args.axis == "voltage":
        if args.program == "ldr-sram":
            spec = campaign.sram_immunity_campaign(
                trials_per_point=args.trials, seed=args.seed)
        else:
            spec = campaign.staircase_campaign(
                trials_per_point=args.trials, seed=args.seed,
                start=args.start if args.start is not None else 170.0,
                stop=args.stop if args.stop is not None else 190.0,
                step=args.step if args.step is not None else 2.0)
        if args.config:
            base, model = _load_glitch_config(args.config)
            from dataclasses import replace
            spec = replace(spec, base_glitch=base, capture=model,
                           program_id=args.program)
        report = campaign.run_campaign(spec)
        print(reports.histogram_table(report), end="")
        _write(args.out, f"sweep-voltage-{Path(args.program).stem}", args.format, report)
        return 0
    # time axis
    base = model = None
    if args.config:
        base, model = _load_glitch_config(args.config)
    report = campaign.sweep_injection_time(
        start_ns=args.start if args.start is not None else 0.0,
        stop_ns=args.stop if args.stop is not None else 3500.0,
        step_ns=args.step if args.step is not None else 0.2,
        seed=args.seed, program_id=args.program,
        base_glitch=base, capture=model)
    counts = {}
    for row in report.rows:
        counts[row.klass] = counts.get(row.klass, 0) + 1
    print(" ".join(f"{k}:{v}" for k, v in sorted(counts.items())))
    _write(args.out, f"sweep-time-{Path(args.program).stem}", args.format, report)
    return 0


def cmd_cartography(args) -> int:
    grid_x, _, grid_y = args.grid.partition("x")
    try:
        nx = int(grid_x)
        ny = int(grid_y or grid_x)
    except ValueError:
        raise ConfigError(f"bad grid spec {args.grid!r}") from None
    if nx != ny:
        raise ConfigError("only square grids are supported")
    step = args.extent / max(nx - 1, 1)
    report = campaign.cartography(extent_mm=args.extent, step_mm=step,
                                  seed=args.seed, program_id=args.program,
                                  field_seed=args.field_seed)
    _write(args.out, f"cartography-{Path(args.program).stem}", args.format, report)
    return 0


def cmd_explain(args) -> int:
    program = _load_program(args.program)
    try:
        golden_dump = core.load_dump(Path(args.golden).read_text())
        observed_dump = core.load_dump(Path(args.observed).read_text())
    except OSError as exc:
        raise IOError(str(exc)) from None
    except ValueError as exc:
        raise ConfigError(f"bad state dump: {exc}") from None
    target = int(args.target_addr, 0)
    compare = oracle.CompareSpec(memory=args.compare_memory, pc=args.compare_pc,
                                 cycles=args.compare_cycles)
    golden = core.state_from_dump(golden_dump)
    observed = core.state_from_dump(observed_dump)
    watched = tuple(core.watched_from_dump(golden_dump))
    pre = oracle.pre_state_at(program, target)
    search = oracle.ReplacementSearch(program, target, pre, program.watchpoint,
                                      cycle_budget=args.budget, compare=compare,
                                      watched=watched)
    explanation = search.explain(observed, core.watched_from_dump(observed_dump),
                                 width_policy=args.width)
    reason = core.WATCHPOINT_HIT if observed.pc == program.watchpoint or \
        observed.exception_number == 0 else core.BUDGET_EXCEEDED
    outcome = oracle.classify(golden, observed, explanation, reason, compare,
                              core.watched_from_dump(golden_dump),
                              core.watched_from_dump(observed_dump))
    doc = {
        "candidates": [
            {"mnemonic": isa.disasm(c),
             "encoding": f"{c.raw:0{c.width // 4}x}"}
            for c in explanation.candidates],
        "searched16": explanation.searched16,
        "searched32": explanation.searched32,
        "total_matches": explanation.total_matches,
        "truncated": explanation.truncated,
        "classification": str(outcome),
    }
    print(json.dumps(doc, indent=2))
    return 0


def cmd_calibrate(args) -> int:
    try:
        rows = calibrate.parse_staircase_file(Path(args.target).read_text())
    except OSError as exc:
        raise IOError(str(exc)) from None
    except calibrate.CalibrationError as exc:
        raise ConfigError(str(exc)) from None
    try:
        fitted = calibrate.fit_thresholds(rows, args.true_word)
    except calibrate.CalibrationError as exc:
        raise ConfigError(str(exc)) from None
    instr = glitch.drawn_thresholds(glitch.DEFAULT_INSTR_THRESHOLD_SEED)
    text = glitch.format_thresholds(fitted, instr)
    out = Path(args.out_file)
    try:
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text)
    except OSError as exc:
        raise IOError(str(exc)) from None
    print(f"wrote {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="emglitch",
        description="electromagnetic-glitch fault-injection simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", default="out")
        p.add_argument("--format", choices=("csv", "json", "plotdata"),
                       default="csv")
        p.add_argument("--config", help="glitch configuration file")

    p = sub.add_parser("run", help="fault-free execution and state dump")
    p.add_argument("program", help="built-in name or path to a .s file")
    p.add_argument("--budget", type=int, default=100000)
    p.add_argument("--out")
    p.add_argument("--format", choices=("csv", "json"), default="json")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("inject", help="single glitch trial")
    p.add_argument("program")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_inject)

    p = sub.add_parser("sweep", help="voltage or injection-time sweep")
    p.add_argument("program")
    p.add_argument("--axis", choices=("voltage", "time"), required=True)
    p.add_argument("--start", type=float)
    p.add_argument("--stop", type=float)
    p.add_argument("--step", type=float)
    p.add_argument("--trials", type=int, default=1000)
    common(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("cartography", help="synthetic probe-position scan")
    p.add_argument("program", nargs="?", default="ldr-r8")
    p.add_argument("--grid", default="16x16")
    p.add_argument("--extent", type=float, default=3.0)
    p.add_argument("--field-seed", type=int,
                   default=campaign.DEFAULT_CARTOGRAPHY_SEED)
    common(p)
    p.set_defaults(func=cmd_cartography)

    p = sub.add_parser("explain", help="replacement search for an observation")
    p.add_argument("--program", required=True)
    p.add_argument("--target-addr", required=True)
    p.add_argument("--golden", required=True, help="golden state dump (csv/json)")
    p.add_argument("--observed", required=True, help="observed state dump")
    p.add_argument("--width", choices=("16", "32", "both"), default="both")
    p.add_argument("--budget", type=int, default=4096)
    p.add_argument("--compare-memory", action="store_true")
    p.add_argument("--compare-pc", action="store_true")
    p.add_argument("--compare-cycles", action="store_true")
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("calibrate", help="fit capture thresholds to a staircase")
    p.add_argument("--target", required=True, help="voltage/value table file")
    p.add_argument("--true-word", type=lambda s: int(s, 0), default=0x12345678)
    p.add_argument("--out-file", default="out/thresholds.txt")
    p.set_defaults(func=cmd_calibrate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (IOError, OSError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
