"""Command-line front end: ``pgsim <command> --config FILE [--out DIR] [--threads N] [--seed K]``.

Exit codes: 0 success, 1 invalid input, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, load_config
from .dynamics import DissipationRates, rates_from_specs
from .effective import (calibrate_delta, gate_strength_adiabatic, gate_strength_bswap, gate_strength_iswap,
                        ode_gate_strength)
from .io import write_csv
from .metrics import gate_error_sweep, report_rows
from .spectroscopy import (CHEVRON_HALF_WIDTH, FitError, chevron_rows, chevron_scan, gate_labels, leakage_rows,
                           leakage_spectrum, locate_resonance, predicted_resonance, profile_rows, resonance_profile)

log = logging.getLogger("pgsim")

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 1, 2
COMMANDS = ("chevron", "strengths", "leakage", "fidelity", "calibrate")


class _Run:
    def __init__(self, command: str, cfg: RunConfig, out: Path, threads: int):
        self.command = command
        self.cfg = cfg
        self.out = out
        self.threads = threads

    def header(self, extra: Sequence[str] = ()) -> list:
        return [f"pgsim {__version__}", f"command = {self.command}", f"config_file = {self.cfg.source}",
                *self.cfg.lines(), *extra]

    def csv(self, name: str, columns, rows, extra: Sequence[str] = ()) -> Path:
        path = self.out / name
        write_csv(path, columns, rows, header=self.header(extra))
        log.info("wrote %s", path)
        return path


# --------------------------------------------------------------------------
# commands


def _chevron(run: _Run, gate: str, delta: float, sec: dict, stem: str) -> tuple:
    cfg = run.cfg
    device, hil = cfg.device(), cfg.hilbert()
    center = sec["center"] if sec["center"] is not None else predicted_resonance(device, hil, cfg.theta, delta, gate)
    half = sec["half_width"] if sec["half_width"] is not None else CHEVRON_HALF_WIDTH[gate]
    grid = center + np.linspace(-half, half, sec["points"]) if sec["points"] > 1 else np.array([center])
    if np.any(grid <= 0):
        raise ConfigError("chevron.half_width: scan window reaches non-positive modulation frequencies")
    t_grid = np.linspace(0.0, sec["duration"], sec["times"])
    initial, tracked = gate_labels(gate)
    template = cfg.pulse(delta, float(grid[0]), sec["duration"])
    chev = chevron_scan(device, hil, template, grid, t_grid, initial, tracked, cfg.section("dynamics")["transfer"],
                        sec["readout"], run.threads)
    extra = [f"gate = {gate}", f"delta = {delta!r}", f"initial = {initial}", f"tracked = {tracked}"]
    run.csv(f"{stem}.csv", *chevron_rows(chev), extra)
    try:
        prof = resonance_profile(chev, sec["window"])
        summary = [f"omega_res_GHz = {prof.omega_res:.12g}", f"f_min_GHz = {prof.f_min:.12g}"]
    except FitError as exc:
        prof, summary = None, [f"resonance = not found ({exc})"]
    if prof is not None:
        run.csv(f"{stem}_profile.csv", *profile_rows(prof), extra + summary)
    else:
        run.csv(f"{stem}_profile.csv", ["omega_phi_GHz", "frequency_GHz", "decay_per_ns", "amplitude", "residual"],
                [[w, "nan", "nan", "nan", "nan"] for w in grid], extra + summary)
    log.info("%s", "; ".join(summary))
    return chev, prof


def cmd_chevron(run: _Run) -> int:
    """Chevron map and fitted resonance profile."""
    sec = run.cfg.section("chevron")
    _chevron(run, sec["gate"], sec["delta"], sec, f"chevron_{sec['gate']}")
    return EXIT_OK


def cmd_strengths(run: _Run) -> int:
    """Gate strengths versus modulation amplitude."""
    cfg = run.cfg
    device, theta = cfg.device(), cfg.theta
    sec = cfg.section("strengths")
    rows = []
    for d in sec["deltas"]:
        rows.append([d, gate_strength_iswap(device, theta, d), gate_strength_bswap(device, theta, d),
                     gate_strength_adiabatic(device, theta, d),
                     ode_gate_strength(device, theta, d, "iswap", n_periods=sec["n_periods"]),
                     ode_gate_strength(device, theta, d, "bswap", n_periods=sec["n_periods"])])
    run.csv("strengths.csv", ["delta_phi0", "iswap_GHz", "bswap_GHz", "adiabatic_GHz",
                              "iswap_ode_GHz", "bswap_ode_GHz"], rows)
    if sec["numeric_deltas"]:
        numeric = []
        transfer = cfg.section("dynamics")["transfer"]
        for gate in ("iswap", "bswap"):
            for d in sec["numeric_deltas"]:
                if d == 0:
                    numeric.append([d, gate, "nan", 0.0, 0.0])
                    continue
                prof = locate_resonance(device, cfg.hilbert(), theta, d, gate, transfer, threads=run.threads)
                # the swapped population oscillates at four times the coupling
                numeric.append([d, gate, prof.omega_res, prof.f_min, prof.f_min / 4])
        run.csv("strengths_numeric.csv", ["delta_phi0", "gate", "omega_res_GHz", "f_min_GHz", "strength_GHz"],
                numeric)
    return EXIT_OK


def cmd_leakage(run: _Run) -> int:
    """Leakage lines above a population threshold."""
    cfg = run.cfg
    sec = cfg.section("leakage")
    grid = np.linspace(sec["omega_min"], sec["omega_max"], sec["points"])
    template = cfg.pulse(sec["delta"], float(grid[0]), sec["duration"])
    lines = leakage_spectrum(cfg.device(), cfg.hilbert(), template, grid, sec["initial"], sec["subspace"],
                             sec["threshold"], sec["duration"], sec["samples"], cfg.section("dynamics")["transfer"],
                             run.threads)
    run.csv("leakage.csv", *leakage_rows(lines), [f"lines = {len(lines)}"])
    return EXIT_OK


def cmd_fidelity(run: _Run) -> int:
    """Calibrated gate error versus modulation amplitude."""
    cfg = run.cfg
    sec = cfg.section("fidelity")
    device = cfg.device()
    rates = rates_from_specs(device) if sec["dissipation"] == "device" else DissipationRates.zero()
    reports = gate_error_sweep(device, cfg.hilbert(), rates, sec["gate"], sec["deltas"], cfg.theta,
                               cfg.section("pulse")["edge_time"], cfg.section("dynamics")["transfer"],
                               sec["virtual_z"], run.threads, mc_samples=sec["mc_samples"], seed=cfg.seed)
    cols, rows = report_rows(reports)
    run.csv(f"fidelity_{sec['gate']}.csv", cols, rows, [f"gate = {sec['gate']}"])
    return EXIT_OK


def cmd_calibrate(run: _Run) -> int:
    """Flux-amplitude scale from measured resonance shifts."""
    cfg = run.cfg
    sec = cfg.section("calibrate")
    result = calibrate_delta(sec["pairs"], cfg.device(), cfg.theta, sec["gate"])
    doc = {"version": __version__, "config_file": cfg.source, "gate": sec["gate"], "theta": cfg.theta,
           "pairs": sec["pairs"], **{k: float(v) for k, v in result.items()}}
    path = run.out / f"delta_scale_{sec['gate']}.json"
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    log.info("wrote %s; scale = %.6g", path, result["scale"])
    return EXIT_OK


HANDLERS = {"chevron": cmd_chevron, "strengths": cmd_strengths, "leakage": cmd_leakage, "fidelity": cmd_fidelity,
            "calibrate": cmd_calibrate}


# --------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pgsim", description="Parametric iSWAP/bSWAP gate simulator.")
    parser.add_argument("--version", action="version", version=f"pgsim {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, help=(HANDLERS[name].__doc__ or name).strip().splitlines()[0])
        p.add_argument("--config", required=True, metavar="PATH", help="TOML run configuration")
        p.add_argument("--out", default=".", metavar="DIR", help="output directory (created if missing)")
        p.add_argument("--threads", type=int, default=None, metavar="N",
                       help="worker threads (default: $PGSIM_THREADS, else available cores)")
        p.add_argument("--seed", type=int, default=None, metavar="K", help="override the config seed")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def resolve_threads(flag: Optional[int]) -> int:
    if flag is not None:
        value, source = flag, "--threads"
    elif os.environ.get("PGSIM_THREADS"):
        raw = os.environ["PGSIM_THREADS"]
        try:
            value = int(raw)
        except ValueError:
            raise ConfigError(f"PGSIM_THREADS: expected an integer, got {raw!r}") from None
        source = "PGSIM_THREADS"
    else:
        return max(len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else os.cpu_count() or 1, 1)
    if value < 1:
        raise ConfigError(f"{source}: must be >= 1, got {value}")
    return value


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        threads = resolve_threads(args.threads)
        overrides = {"seed": args.seed} if args.seed is not None else None
        cfg = load_config(args.config, overrides)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
    except (ConfigError, OSError) as exc:
        print(f"pgsim: invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    try:
        return HANDLERS[args.command](_Run(args.command, cfg, out, threads))
    except np.linalg.LinAlgError as exc:
        print(f"pgsim: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:
        print(f"pgsim: invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (RuntimeError, ArithmeticError) as exc:
        print(f"pgsim: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
