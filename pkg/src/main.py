import json
import logging
import os
from enum import Enum
from typing import Any, Dict, List, Optional

import typer
from pydantic import ValidationError

from experiment_harness import ConfigError, ExperimentConfig, abort_rate, get_code, resolved_config_json, run_sweep
from results_processor import ResultsProcessor, ResultsWriteError

logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)

EXIT_CONFIG_ERROR = 2
EXIT_ABORT_RATE = 3

app = typer.Typer(add_completion=False, help="Monte-Carlo simulation of multi-user SR-LDPC codes.")


class Profile(str, Enum):
    desk = "desk"
    full = "full"
    paper = "paper"


class OutputFormat(str, Enum):
    csv = "csv"
    json = "json"
    parquet = "parquet"


def create_directory(directory: str) -> None:
    """
    Create directory if it doesn't exist.

    Args:
        directory (str): Path to directory to create
    """
    if directory and not os.path.exists(directory):
        os.makedirs(directory)
        logger.info(f"Created directory: {directory}")


def build_config(mode: str, config_file: Optional[str], **flags: Any) -> ExperimentConfig:
    overrides: Dict[str, Any] = {"mode": mode, **flags}
    return ExperimentConfig.from_sources(config_file, **overrides)


def run_experiment(config: ExperimentConfig) -> int:
    """
    Run the sweep, write results and return the process exit code.
    """
    summaries = run_sweep(config)
    processor = ResultsProcessor(config, get_code(config))

    if config.output_path:
        create_directory(os.path.dirname(config.output_path))
        processor.emit_results(summaries, config.output_format, config.output_path)
    else:
        typer.echo(processor.to_frame(summaries).to_csv(index=False), nl=False)

    rate = abort_rate(summaries)
    if rate > config.abort_threshold:
        logger.error(f"Decoder abort rate {rate:.4f} exceeds threshold {config.abort_threshold}")
        return EXIT_ABORT_RATE
    return 0


def _execute(mode: str, config_file: Optional[str], emit_config: bool, flags: Dict[str, Any]) -> None:
    try:
        config = build_config(mode, config_file, **flags)
    except (ConfigError, ValidationError) as e:
        logger.error(f"Invalid configuration: {str(e)}")
        raise typer.Exit(code=EXIT_CONFIG_ERROR)

    if emit_config:
        typer.echo(resolved_config_json(config))
        raise typer.Exit(code=0)

    try:
        code = run_experiment(config)
    except ConfigError as e:
        logger.error(f"Invalid configuration: {str(e)}")
        raise typer.Exit(code=EXIT_CONFIG_ERROR)
    except ResultsWriteError as e:
        logger.error(f"Error writing results: {str(e)}")
        raise typer.Exit(code=1)
    raise typer.Exit(code=code)


def _flags(
    users: Optional[int],
    ebn0_db: Optional[List[float]],
    sum_rate: Optional[List[float]],
    channel_uses: Optional[int],
    trials: Optional[int],
    seed: Optional[int],
    profile: Optional[Profile],
    out: Optional[str],
    fmt: Optional[OutputFormat],
    workers: Optional[int],
    diagnostics: Optional[str],
    noiseless: Optional[bool],
    amp_iterations: Optional[int],
    bp_iterations: Optional[int],
    target_frame_errors: Optional[int],
    progress: Optional[bool],
    **extra: Any,
) -> Dict[str, Any]:
    flags = {
        "users": users,
        "ebn0_db": ebn0_db,
        "sum_rates": sum_rate,
        "channel_uses": channel_uses,
        "trials": trials,
        "master_seed": seed,
        "profile": profile.value if profile is not None else None,
        "output_path": out,
        "output_format": fmt.value if fmt is not None else None,
        "workers": workers,
        "diagnostics_path": diagnostics,
        "noiseless": noiseless,
        "amp_iterations": amp_iterations,
        "bp_iterations": bp_iterations,
        "target_frame_errors": target_frame_errors,
        "progress": progress,
        **extra,
    }
    return {key: value for key, value in flags.items() if value is not None}


UsersOption = typer.Option(None, "--users", help="Number of users K")
Ebn0Option = typer.Option(None, "--ebn0-db", help="Eb/N0 in dB; repeat to sweep")
SumRateOption = typer.Option(None, "--sum-rate", help="Target sum rate; repeat to sweep")
ChannelUsesOption = typer.Option(None, "--channel-uses", help="Fixed number of channel uses n_K")
TrialsOption = typer.Option(None, "--trials", help="Trials per sweep point")
SeedOption = typer.Option(None, "--seed", help="Master seed")
ProfileOption = typer.Option(None, "--profile", help="Default parameter profile")
OutOption = typer.Option(None, "--out", help="Results file; stdout CSV when omitted")
FormatOption = typer.Option(None, "--format", help="Results file format")
ConfigOption = typer.Option(None, "--config", help="JSON config file, overridden by flags")
EmitConfigOption = typer.Option(False, "--emit-config", help="Print the resolved configuration and exit")
WorkersOption = typer.Option(None, "--workers", help="Parallel trial workers")
DiagnosticsOption = typer.Option(None, "--diagnostics", help="NDJSON file for per-iteration records")
NoiselessOption = typer.Option(None, "--noiseless/--noisy", help="Force sigma^2 = 0")
AmpOption = typer.Option(None, "--amp-iterations", help="AMP iterations")
BpOption = typer.Option(None, "--bp-iterations", help="BP rounds per denoiser call")
TargetOption = typer.Option(None, "--target-frame-errors", help="Stop a point after this many frame errors")
ProgressOption = typer.Option(None, "--progress/--no-progress", help="Show a progress bar")


@app.command("single-cell")
def single_cell(
    users: Optional[int] = UsersOption,
    ebn0_db: Optional[List[float]] = Ebn0Option,
    sum_rate: Optional[List[float]] = SumRateOption,
    channel_uses: Optional[int] = ChannelUsesOption,
    trials: Optional[int] = TrialsOption,
    seed: Optional[int] = SeedOption,
    profile: Optional[Profile] = ProfileOption,
    out: Optional[str] = OutOption,
    fmt: Optional[OutputFormat] = FormatOption,
    config: Optional[str] = ConfigOption,
    emit_config: bool = EmitConfigOption,
    workers: Optional[int] = WorkersOption,
    diagnostics: Optional[str] = DiagnosticsOption,
    noiseless: Optional[bool] = NoiselessOption,
    amp_iterations: Optional[int] = AmpOption,
    bp_iterations: Optional[int] = BpOption,
    target_frame_errors: Optional[int] = TargetOption,
    progress: Optional[bool] = ProgressOption,
) -> None:
    """K users superimposed on one Gaussian multiple-access channel."""
    flags = _flags(users, ebn0_db, sum_rate, channel_uses, trials, seed, profile, out, fmt, workers,
                   diagnostics, noiseless, amp_iterations, bp_iterations, target_frame_errors, progress)
    _execute("single-cell", config, emit_config, flags)


@app.command("oma-baseline")
def oma_baseline(
    users: Optional[int] = UsersOption,
    ebn0_db: Optional[List[float]] = Ebn0Option,
    sum_rate: Optional[List[float]] = SumRateOption,
    channel_uses: Optional[int] = ChannelUsesOption,
    trials: Optional[int] = TrialsOption,
    seed: Optional[int] = SeedOption,
    profile: Optional[Profile] = ProfileOption,
    out: Optional[str] = OutOption,
    fmt: Optional[OutputFormat] = FormatOption,
    config: Optional[str] = ConfigOption,
    emit_config: bool = EmitConfigOption,
    workers: Optional[int] = WorkersOption,
    diagnostics: Optional[str] = DiagnosticsOption,
    noiseless: Optional[bool] = NoiselessOption,
    amp_iterations: Optional[int] = AmpOption,
    bp_iterations: Optional[int] = BpOption,
    target_frame_errors: Optional[int] = TargetOption,
    progress: Optional[bool] = ProgressOption,
) -> None:
    """Each user decoded alone on its own share of the channel uses."""
    flags = _flags(users, ebn0_db, sum_rate, channel_uses, trials, seed, profile, out, fmt, workers,
                   diagnostics, noiseless, amp_iterations, bp_iterations, target_frame_errors, progress)
    _execute("oma-baseline", config, emit_config, flags)


@app.command("cell-free")
def cell_free(
    topology: Optional[str] = typer.Option(None, "--topology", help="Topology JSON {aps, users, edges}"),
    ebn0_db: Optional[List[float]] = Ebn0Option,
    sum_rate: Optional[List[float]] = SumRateOption,
    channel_uses: Optional[int] = ChannelUsesOption,
    trials: Optional[int] = TrialsOption,
    seed: Optional[int] = SeedOption,
    profile: Optional[Profile] = ProfileOption,
    out: Optional[str] = OutOption,
    fmt: Optional[OutputFormat] = FormatOption,
    config: Optional[str] = ConfigOption,
    emit_config: bool = EmitConfigOption,
    workers: Optional[int] = WorkersOption,
    diagnostics: Optional[str] = DiagnosticsOption,
    noiseless: Optional[bool] = NoiselessOption,
    amp_iterations: Optional[int] = AmpOption,
    bp_iterations: Optional[int] = BpOption,
    target_frame_errors: Optional[int] = TargetOption,
    progress: Optional[bool] = ProgressOption,
) -> None:
    """Users served by subsets of access points, decoded jointly across APs."""
    users = None
    if topology is not None:
        try:
            with open(topology) as f:
                users = json.load(f).get("users")
        except (OSError, json.JSONDecodeError, AttributeError) as e:
            logger.error(f"Cannot read topology {topology}: {str(e)}")
            raise typer.Exit(code=EXIT_CONFIG_ERROR)
    flags = _flags(users, ebn0_db, sum_rate, channel_uses, trials, seed, profile, out, fmt, workers,
                   diagnostics, noiseless, amp_iterations, bp_iterations, target_frame_errors, progress,
                   topology_path=topology)
    _execute("cell-free", config, emit_config, flags)


def main():
    app()


if __name__ == "__main__":
    main()
