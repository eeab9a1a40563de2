"""
Command-line entry point: ``chlab <command> [--config file.yaml] [overrides]``.

Exit codes: 0 on success, 2 when a study misses its acceptance window,
1 on any error.
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import Callable, Dict, List, Optional

from . import __version__
from .artifacts import write_summary, write_table
from .config import LabConfig, emit_config, output_dir, parse_config
from .errors import ConfigError, LabError
from .experiments import (StudyPlan, density_study, holder_study, kernel_error_study,
                          localized_rate_study, malliavin_rate_study, moment_profile,
                          nondegeneracy_study, spatial_rate_study, temporal_rate_study,
                          validation_suite)
from .noise import dump, generate
from .solver import simulate

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_FAILED = 2


def setup_logging(level: str = "INFO", log_file: Optional[Path] = None):
    """
    Configure the root logger once for a command-line run.

    Args:
        level (str): Level name
        log_file (Path, optional): Extra file receiving the same records
    """
    handlers: List[logging.Handler] = [logging.StreamHandler(sys.stderr)]
    if log_file is not None:
        Path(log_file).parent.mkdir(parents=True, exist_ok=True)
        handlers.append(logging.FileHandler(log_file, encoding="utf-8"))
    logging.basicConfig(level=getattr(logging, level.upper(), logging.INFO), format=LOG_FORMAT,
                        handlers=handlers, force=True)


def embedded_config(cfg: LabConfig) -> dict:
    """The config written into summaries; the thread count does not change results and is left out."""
    data = cfg.to_dict()
    data["run"].pop("threads")
    return data


def _study_plan(cfg: LabConfig, kind: str, levels, samples: int, reference=None, **levels_of_config):
    study = cfg.study
    return StudyPlan(kind, levels, samples, cfg.solver_config(**levels_of_config), reference=reference,
                     seed=study["seed"], p=study["p"], x=cfg.problem["x"], threads=cfg.run["threads"])


def _finish(command: str, out: Path, cfg: LabConfig, columns, payload: dict) -> bool:
    write_table(out / f"{command}.csv", columns)
    write_summary(out / f"{command}.json", payload, embedded_config(cfg))
    passed = bool(payload.get("pass", True))
    slope = payload.get("slope")
    slope_text = f"slope {slope:.3f}, " if isinstance(slope, float) else ""
    print(f"{command}: {slope_text}{'pass' if passed else 'FAIL'}")
    return passed


def run_simulate(cfg: LabConfig, out: Path) -> bool:
    config = cfg.solver_config()
    seed = cfg.study["seed"]
    sheet = generate(seed, 0, config.m, config.n, config.T)
    trajectory = simulate(config, sheet)
    write_table(out / "trajectory.csv", trajectory.to_columns())
    manifest = {"command": "simulate", "seed": seed, "sample_index": 0,
                "noise_checksum": sheet.checksum(), "records": len(trajectory), "discards": 0,
                "terminal_max_norm": trajectory.terminal.max_norm}
    if cfg.run["dump_noise"]:
        dump(sheet, out / "noise.bin")
        manifest["noise_file"] = "noise.bin"
    samples = cfg.study["moment_samples"]
    if samples:
        profile = moment_profile(config, samples, seed, cfg.run["threads"])
        write_table(out / "moments.csv", profile.to_columns())
        manifest["moment_profile"] = profile.summary()
        manifest["discards"] = profile.discards
    write_summary(out / "manifest.json", manifest, embedded_config(cfg))
    print(f"simulate: {len(trajectory)} records, terminal max-norm {trajectory.terminal.max_norm:.4f}")
    return True


def run_rates_space(cfg: LabConfig, out: Path) -> bool:
    study = cfg.study
    reference = study["space_reference"]
    if study["localize_R"] is not None:
        plan = _study_plan(cfg, "localized_rate", study["space_levels"], study["samples"], reference,
                           n=reference)
        report = localized_rate_study(plan, R=study["localize_R"])
    else:
        plan = _study_plan(cfg, "spatial_rate", study["space_levels"], study["samples"], reference,
                           n=reference)
        report = spatial_rate_study(plan)
    return _finish("rates-space", out, cfg, report.to_columns(), report.summary())


def run_rates_time(cfg: LabConfig, out: Path) -> bool:
    study = cfg.study
    plan = _study_plan(cfg, "temporal_rate", study["time_levels"], study["samples"],
                       study["time_reference"], n=study["time_n"], m=study["time_reference"])
    report = temporal_rate_study(plan)
    return _finish("rates-time", out, cfg, report.to_columns(), report.summary())


def run_kernel_errors(cfg: LabConfig, out: Path) -> bool:
    kernel = cfg.kernel
    report = kernel_error_study(kernel["ns"], kernel["T"], kernel["xs"], cfg.kernel_config(),
                                threads=cfg.run["threads"])
    write_table(out / "kernel-errors-by-n.csv", report.to_wide_columns())
    return _finish("kernel-errors", out, cfg, report.to_columns(), report.summary())


def run_holder(cfg: LabConfig, out: Path) -> bool:
    study = cfg.study
    fine = dict(n=study["holder_n"], m=study["holder_m"], T=study["holder_T"])
    reports = [holder_study(_study_plan(cfg, kind, study[gaps], study["samples"], **fine))
               for kind, gaps in (("holder_time", "holder_time_gaps"),
                                  ("holder_space", "holder_space_gaps"))]
    columns = {"kind": [], "gap": [], "mean_increment": [], "stderr": []}
    for report in reports:
        columns["kind"] += [report.kind] * len(report.levels)
        columns["gap"] += report.levels
        columns["mean_increment"] += report.errors
        columns["stderr"] += report.stderrs
    payload = {"pass": all(report.passed for report in reports),
               **{report.kind: report.summary() for report in reports}}
    return _finish("holder", out, cfg, columns, payload)


def run_density(cfg: LabConfig, out: Path) -> bool:
    study = cfg.study
    plan = _study_plan(cfg, "density", study["density_levels"], study["density_samples"],
                       study["density_reference"], n=study["density_reference"], m=study["density_m"])
    report = density_study(plan)
    return _finish("density", out, cfg, report.to_columns(), report.summary())


def run_malliavin(cfg: LabConfig, out: Path) -> bool:
    study = cfg.study
    reference, m = study["malliavin_reference"], study["malliavin_m"]
    plan = _study_plan(cfg, "malliavin_rate", study["malliavin_levels"], study["malliavin_samples"],
                       reference, n=reference, m=m)
    report = malliavin_rate_study(plan)
    nondegeneracy = nondegeneracy_study(cfg.solver_config(n=reference, m=m), study["nondegeneracy_samples"],
                                        study["seed"], study["rho"], cfg.problem["x"],
                                        cfg.run["threads"])
    write_table(out / "malliavin-hnorm2.csv", nondegeneracy.to_columns())
    payload = {**report.summary(), "pass": report.passed and nondegeneracy.passed,
               "nondegeneracy": nondegeneracy.summary()}
    return _finish("malliavin", out, cfg, report.to_columns(), payload)


def run_validate(cfg: LabConfig, out: Path) -> bool:
    report = validation_suite()
    write_summary(out / "validate.json", report.summary(), embedded_config(cfg))
    failed = [check.name for check in report.checks if not check.passed]
    print(f"validate: {len(report.checks)} checks, " + (f"failed: {', '.join(failed)}" if failed else "pass"))
    return report.passed


COMMANDS: Dict[str, Callable[[LabConfig, Path], bool]] = {
    "simulate": run_simulate,
    "rates-space": run_rates_space,
    "rates-time": run_rates_time,
    "kernel-errors": run_kernel_errors,
    "holder": run_holder,
    "density": run_density,
    "malliavin": run_malliavin,
    "validate": run_validate,
}


def run(command: str, cfg: LabConfig) -> int:
    """
    Run one command and write its artifacts.

    Args:
        command (str): One of COMMANDS
        cfg (LabConfig): Effective configuration

    Returns:
        int: 0 on success, 2 if a study misses its window

    Raises:
        ValueError: If the command is unknown
        LabError: If the run fails
    """
    if command not in COMMANDS:
        raise ValueError(f"unknown command: {command}")
    out = output_dir(cfg)
    out.mkdir(parents=True, exist_ok=True)
    logger.info(f"running {command} into {out}")
    passed = COMMANDS[command](cfg, out)
    return EXIT_OK if passed else EXIT_FAILED


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="chlab",
                                     description="Stochastic Cahn-Hilliard numerical laboratory")
    parser.add_argument("command", choices=sorted(COMMANDS), help="What to run")
    parser.add_argument("--config", type=Path, help="YAML config file (defaults when omitted)")
    parser.add_argument("--seed", type=int, help="Override study.seed")
    parser.add_argument("--samples", type=int, help="Override every Monte-Carlo sample count")
    parser.add_argument("--threads", type=int, help="Override run.threads")
    parser.add_argument("--log-file", type=Path, help="Also write the log to this file")
    parser.add_argument("--print-config", action="store_true",
                        help="Print the effective config and exit")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = parse_config(args.config) if args.config else LabConfig.defaults()
        cfg = cfg.with_overrides(seed=args.seed, samples=args.samples, threads=args.threads)
    except ConfigError as e:
        print(f"chlab: config error: {e}", file=sys.stderr)
        return EXIT_ERROR
    setup_logging(cfg.run["log_level"], args.log_file)
    if args.print_config:
        print(emit_config(cfg), end="")
        return EXIT_OK
    try:
        return run(args.command, cfg)
    except (LabError, ValueError) as e:
        logger.error(f"{args.command} failed: {e}")
        print(f"chlab: {args.command} failed: {e}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
