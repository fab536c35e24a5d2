"""Command-line interface: ``ramanqot <subcommand> CONFIG [options]``.

Subcommands
-----------
solve-span
    Solve the first fibre span of the loop at the launch powers and write
    the power profiles, the on/off gain and the fibre-output spectrum.
run-link
    Run every recirculation and write the trace, the QoT report and a JSON
    summary.
report
    Write plot-ready data files: launch and fibre-output spectra and the
    SNR breakdown after selected recirculation counts.
validate-config
    Load the scenario and check that every table covers the channel plan.

Exit codes: 0 success, 1 configuration error, 2 Raman solver
non-convergence, 3 internal invariant violation.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, load_scenario, validate_scenario
from .fitting import fit_profiles, write_fits_csv
from .gn import write_nli_csv
from .link import (FibreSpan, LinkModel, LinkState, StageError, apply_stage, run_scenario,
                   snapshot_spectrum, write_snapshot_csv, write_trace_csv)
from .qot import qot_report, write_report_csv, write_summary
from .raman import (PumpSet, RamanConvergenceError, on_off_gain, solve_power_evolution,
                    write_profiles_csv)

_logger = logging.getLogger(__name__)

__all__ = ["main", "run_cli", "EXIT_OK", "EXIT_CONFIG", "EXIT_SOLVER", "EXIT_INVARIANT"]

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_INVARIANT = 0, 1, 2, 3


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ramanqot",
                                 description="Raman-amplified multi-band link QoT estimation")
    ap.add_argument("-v", "--verbose", action="count", default=0, help="more log output")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("config", type=Path, help="scenario YAML file")
        p.add_argument("-o", "--out", type=Path, default=Path("out"),
                       help="output directory (default: ./out)")

    p = sub.add_parser("solve-span", help="solve the first fibre span at launch powers")
    common(p)
    p.add_argument("--pumps", choices=("on", "off"), default="on")
    p.add_argument("--span", help="name of the fibre-span stage (default: the first one)")
    p.add_argument("--fits", action="store_true", help="also write multi-exponential fits")

    p = sub.add_parser("run-link", help="run all recirculations and write the QoT report")
    common(p)
    p.add_argument("--recirculations", type=int, help="override the scenario's count")
    p.add_argument("--nli-method", choices=("closed-form", "integral", "none"))

    p = sub.add_parser("report", help="write spectrum and SNR-breakdown data files")
    common(p)
    p.add_argument("--recirculations", type=int, nargs="+", default=None,
                   help="recirculation counts to tabulate (default: 5 and the scenario's count)")

    p = sub.add_parser("validate-config", help="check a scenario file")
    p.add_argument("config", type=Path)
    return ap


def _span_stage(scenario, name):
    spans = [s for s in scenario.loop_stages if isinstance(s, FibreSpan)]
    if name is not None:
        spans = [s for s in spans if s.name == name]
    if not spans:
        raise ConfigError("no matching fibre-span stage in the loop" if name is None
                          else f"no fibre-span stage named {name!r}")
    return spans[0]


def _solve_span(args) -> int:
    cfg = load_scenario(args.config)
    sc = cfg.scenario
    stage = _span_stage(sc, args.span)
    args.out.mkdir(parents=True, exist_ok=True)
    solver = sc.model.solver
    off = solve_power_evolution(stage.fibre, sc.plan, PumpSet(), solver)
    on = off if len(stage.pumps.active()) == 0 else solve_power_evolution(
        stage.fibre, sc.plan, stage.pumps, solver)
    chosen = on if args.pumps == "on" else off
    write_profiles_csv(args.out / f"profiles_pumps_{args.pumps}.csv", chosen)

    gain = on_off_gain(on, off) if args.pumps == "on" else np.zeros(len(sc.plan))
    with (args.out / "onoff_gain.csv").open("w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["channel", "wavelength_nm", "onoff_gain_db"])
        for k, (w, g) in enumerate(zip(sc.plan.wavelengths, gain)):
            wr.writerow([k, f"{w:.6g}", f"{g:.6g}"])

    span = FibreSpan(stage.fibre, stage.pumps if args.pumps == "on" else PumpSet(), stage.name)
    model = LinkModel(solver=solver, nli_method="none")
    state = apply_stage(LinkState.launch(sc.plan), span, sc.plan, model)
    write_snapshot_csv(args.out / "spectrum_launch.csv",
                       snapshot_spectrum(LinkState.launch(sc.plan), sc.plan))
    write_snapshot_csv(args.out / "spectrum_fibre_out.csv", snapshot_spectrum(state, sc.plan))
    if args.fits:
        fits = fit_profiles(chosen, sc.model.fit_terms)
        write_fits_csv(args.out / f"fits_pumps_{args.pumps}.csv", fits)
    k = int(np.argmax(gain))
    print(f"span {stage.name!r}: {chosen.iterations} sweeps, boundary change "
          f"{chosen.mismatch:.3e}; on/off gain peak {gain[k]:.3f} dB at "
          f"{sc.plan.wavelengths[k]:.3f} nm")
    return EXIT_OK


def _run_link(args) -> int:
    cfg = load_scenario(args.config, args.recirculations)
    sc = cfg.scenario
    if args.nli_method:
        m = sc.model
        sc = type(sc)(sc.plan, sc.loop_stages, sc.recirculations, sc.trx_snr,
                      LinkModel(m.solver, args.nli_method, m.fit_terms, m.fit_gate_db,
                                m.quadrature, m.nf_warning_db, m.reuse_rtol), sc.name)
    trace = run_scenario(sc)
    args.out.mkdir(parents=True, exist_ok=True)
    write_trace_csv(args.out / "trace.csv", trace, sc.plan)
    report = qot_report(sc.plan, trace.final, sc.trx_snr, cfg.overhead, cfg.bands,
                        sc.recirculations)
    write_report_csv(args.out / "report.csv", report)
    details = [s.nli_detail for s in trace.spans if s.nli_detail is not None]
    if details:
        write_nli_csv(args.out / "span_nli.csv", details[0])
    write_summary(args.out / "summary.json", report,
                  {"scenario": sc.name, "nli_method": sc.model.nli_method})
    k = report.worst_channel()
    print(f"{sc.recirculations} recirculations: total throughput "
          f"{report.total_throughput / 1e12:.2f} Tb/s; lowest total SNR "
          f"{report.snr_total[k]:.2f} dB at {report.wavelength[k]:.2f} nm")
    return EXIT_OK


def _report(args) -> int:
    cfg = load_scenario(args.config)
    counts = args.recirculations or sorted({min(5, cfg.scenario.recirculations),
                                            cfg.scenario.recirculations})
    if min(counts) < 1:
        raise ConfigError("recirculation counts must be >= 1")
    sc = cfg.scenario.with_recirculations(max(counts))
    trace = run_scenario(sc)
    args.out.mkdir(parents=True, exist_ok=True)

    launch = snapshot_spectrum(trace.launch, sc.plan)
    first = trace.spans[0] if trace.spans else None
    with (args.out / "spectra.csv").open("w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["wavelength_nm", "launch_dbm", "fibre_out_dbm"])
        out_dbm = (snapshot_spectrum(LinkState(first.profiles.output_power(),
                                               np.zeros(len(sc.plan)), np.zeros(len(sc.plan))),
                                     sc.plan).signal_dbm if first is not None
                   else launch.signal_dbm)
        for w, a, b in zip(launch.wavelength, launch.signal_dbm, out_dbm):
            wr.writerow([f"{w:.6g}", f"{a:.6g}", f"{b:.6g}"])
    for n in counts:
        rep = qot_report(sc.plan, trace.states[n - 1], sc.trx_snr, cfg.overhead, cfg.bands, n)
        with (args.out / f"snr_{n}.csv").open("w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["wavelength_nm", "band", "snr_trx_db", "snr_ase_db", "snr_nli_db",
                         "snr_total_db"])
            for k in range(len(rep)):
                wr.writerow([f"{rep.wavelength[k]:.6g}", rep.band[k],
                             "" if np.isnan(rep.snr_trx[k]) else f"{rep.snr_trx[k]:.6g}",
                             f"{rep.snr_ase[k]:.6g}", f"{rep.snr_nli[k]:.6g}",
                             f"{rep.snr_total[k]:.6g}"])
        print(f"{n} recirculations: {rep.total_throughput / 1e12:.2f} Tb/s")
    return EXIT_OK


def _validate(args) -> int:
    warnings = validate_scenario(args.config)
    for w in warnings:
        print(f"warning: {w}")
    print(f"{args.config}: OK")
    return EXIT_OK


_COMMANDS = {"solve-span": _solve_span, "run-link": _run_link, "report": _report,
             "validate-config": _validate}


def _root_cause(exc: BaseException) -> BaseException:
    while isinstance(exc, StageError) and exc.__cause__ is not None:
        exc = exc.__cause__
    return exc


def run_cli(argv=None) -> int:
    """Parse ``argv`` and run one subcommand; returns the process exit code."""
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        if exc.path is None:
            exc = ConfigError(exc.detail, args.config, exc.line)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (RamanConvergenceError, StageError) as exc:
        cause = _root_cause(exc)
        if isinstance(cause, RamanConvergenceError):
            print(f"error: Raman solver did not converge: {exc} "
                  f"(boundary mismatch {cause.mismatch:.3e} after {cause.iterations} sweeps)",
                  file=sys.stderr)
            return EXIT_SOLVER
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except (ValueError, ArithmeticError) as exc:
        print(f"error: internal invariant violated: {exc}", file=sys.stderr)
        return EXIT_INVARIANT


def main() -> None:  # pragma: no cover - console entry point
    sys.exit(run_cli())


if __name__ == "__main__":  # pragma: no cover
    main()
