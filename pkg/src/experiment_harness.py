"""
Monte-Carlo orchestration: configuration, seeded trials and sweeps.

Every trial draws its randomness from SeedSequence(master_seed,
spawn_key=(trial_index,)), so a trial's outcome depends only on the master
seed, the trial index and the sweep point, never on worker scheduling.
"""

import hashlib
import json
import logging
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple

import numpy as np
from joblib import Parallel, delayed
from pydantic import BaseModel, ConfigDict, Field, model_validator
from tqdm import tqdm

from amp_decoder import DecodeResult, DecoderAbort, UserCodebook, decode_cell_free, decode_single_cell
from channel_model import (
    Topology,
    TopologyError,
    cellfree_transmit,
    channel_uses_for,
    ebn0_to_sigma2,
    gmac_transmit,
)
from galois_field import make_field
from nonbinary_ldpc import LdpcCode, build_ldpc, ldpc_encode, load_code
from results_processor import ResultsProcessor, SweepSummary
from sparse_regression import (
    DEFAULT_MEMORY_BUDGET,
    bits_to_symbols,
    sample_sensing_matrix,
    sr_encode,
    to_sparse,
)

logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)

# Fields that change how a run executes or where it writes, not what it computes.
EXECUTION_FIELDS = {"workers", "output_path", "output_format", "diagnostics_path", "progress"}

PROFILES: Dict[str, Dict[str, Any]] = {
    # q=16, (64, 56) code, 224 info bits, n=280 per user gives rate 0.8
    "desk": {
        "p": 4,
        "code_length": 64,
        "checks": 8,
        "variable_degree": 3,
        "code_seed": 7,
        "ebn0_db": [2.25],
        "trials": 2000,
        "matrix_mode": "dense",
    },
    # (766, 736) code over GF(256), 5888 info bits per user
    "full": {
        "p": 8,
        "code_length": 766,
        "checks": 30,
        "variable_degree": 3,
        "code_seed": 7,
        "ebn0_db": [2.25],
        "trials": 200,
        "matrix_mode": "streamed",
    },
}
DEFAULT_SUM_RATE = 0.8
# Alternate profile names accepted on the command line and in config files.
PROFILE_ALIASES = {"paper": "full"}


class ConfigError(ValueError):
    """Raised for configurations that cannot be run."""


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    mode: Literal["single-cell", "cell-free", "oma-baseline"] = "single-cell"
    profile: Literal["desk", "full"] = "desk"

    p: int = Field(ge=1, le=8)
    modulus: Optional[int] = None
    code_length: int = Field(ge=2)
    checks: int = Field(ge=1)
    variable_degree: int = Field(ge=2)
    code_seed: int = Field(ge=0)
    code_path: Optional[str] = None

    users: int = Field(default=1, ge=1)
    channel_uses: Optional[int] = Field(default=None, ge=1)
    sum_rates: Optional[List[float]] = None
    ebn0_db: List[float]
    noiseless: bool = False

    trials: int = Field(ge=1)
    amp_iterations: int = Field(default=25, ge=1)
    bp_iterations: int = Field(default=1, ge=0)
    final_bp_iterations: int = Field(default=0, ge=0)
    early_stop: bool = True
    init: Literal["uniform", "zero"] = "uniform"
    keep_graph: bool = False

    master_seed: int = Field(default=0, ge=0)
    topology_path: Optional[str] = None
    matrix_mode: Literal["dense", "streamed"] = "dense"
    memory_budget: int = Field(default=DEFAULT_MEMORY_BUDGET, ge=1)

    workers: int = Field(default=1, ge=1)
    batch_size: int = Field(default=250, ge=1)
    target_frame_errors: Optional[int] = Field(default=None, ge=1)
    abort_threshold: float = Field(default=0.01, ge=0.0, le=1.0)

    output_path: Optional[str] = None
    output_format: Literal["csv", "json", "parquet"] = "csv"
    diagnostics_path: Optional[str] = None
    progress: bool = False

    @model_validator(mode="before")
    @classmethod
    def apply_profile(cls, data: Any) -> Any:
        if not isinstance(data, dict):
            return data
        data = {key: value for key, value in data.items() if value is not None}
        profile = data.get("profile", "desk")
        profile = data["profile"] = PROFILE_ALIASES.get(profile, profile)
        if profile not in PROFILES:
            return data
        for key, value in PROFILES[profile].items():
            data.setdefault(key, value)
        if "channel_uses" not in data and "sum_rates" not in data:
            data["sum_rates"] = [DEFAULT_SUM_RATE]
        return data

    @model_validator(mode="after")
    def check_consistency(self) -> "ExperimentConfig":
        if (self.channel_uses is None) == (self.sum_rates is None):
            raise ValueError("give exactly one of channel_uses and sum_rates")
        if self.sum_rates is not None:
            if not self.sum_rates or min(self.sum_rates) <= 0:
                raise ValueError("sum_rates must be a non-empty list of positive rates")
            if len(self.sum_rates) > 1 and len(self.ebn0_db) > 1:
                raise ValueError("sweep either sum_rates or ebn0_db, not both")
        if not self.ebn0_db:
            raise ValueError("ebn0_db must not be empty")
        if self.checks >= self.code_length:
            raise ValueError("checks must be smaller than code_length")
        if self.mode == "cell-free" and self.topology_path is None:
            raise ValueError("cell-free mode needs topology_path")
        if self.mode == "oma-baseline" and self.channel_uses is not None and self.channel_uses < self.users:
            raise ValueError("oma-baseline needs at least one channel use per user")
        return self

    @property
    def info_bits(self) -> int:
        return (self.code_length - self.checks) * self.p

    @property
    def sweep_var(self) -> str:
        if self.sum_rates is not None and len(self.sum_rates) > 1:
            return "sum_rate"
        return "ebn0_db"

    def resolved(self) -> Dict[str, Any]:
        return self.model_dump(mode="json")

    def digest(self) -> str:
        payload = {k: v for k, v in self.resolved().items() if k not in EXECUTION_FIELDS}
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()

    @classmethod
    def from_sources(cls, file_path: Optional[str] = None, **overrides: Any) -> "ExperimentConfig":
        """Profile defaults < JSON file < explicit overrides (None means unset)."""
        data: Dict[str, Any] = {}
        if file_path is not None:
            try:
                data = json.loads(Path(file_path).read_text())
            except (OSError, json.JSONDecodeError) as e:
                raise ConfigError(f"cannot read config file {file_path}: {e}") from e
        overrides = {key: value for key, value in overrides.items() if value is not None}
        # a flag naming one sweep dimension replaces the file's choice of the other
        if "channel_uses" in overrides:
            data.pop("sum_rates", None)
        if "sum_rates" in overrides:
            data.pop("channel_uses", None)
        data.update(overrides)
        return cls(**data)


@dataclass(frozen=True)
class SweepPoint:
    index: int
    sweep_var: str
    value: float
    ebn0_db: float
    sum_rate: Optional[float]
    channel_uses: int
    user_channel_uses: int
    sigma2: float


@dataclass
class TrialRecord:
    trial_index: int
    user_bit_errors: List[int]
    user_bits: List[int]
    user_frame_errors: List[bool]
    aborted: bool
    iterations: List[int]
    matrix_seeds: List[int]
    signal_energy: float
    noise_variance: float
    diagnostics: List[Dict] = field(default_factory=list)

    @property
    def bit_errors(self) -> int:
        return sum(self.user_bit_errors)

    @property
    def bits(self) -> int:
        return sum(self.user_bits)

    @property
    def frame_error(self) -> bool:
        return any(self.user_frame_errors)


def sweep_points(config: ExperimentConfig) -> List[SweepPoint]:
    B_bits = config.info_bits
    rates: List[Optional[float]] = list(config.sum_rates) if config.sum_rates is not None else [None]
    points = []
    for ebn0 in config.ebn0_db:
        for rate in rates:
            if rate is None:
                n_K = config.channel_uses
                user_n = n_K // config.users
            else:
                n_K = channel_uses_for(config.users, B_bits, rate)
                user_n = channel_uses_for(1, B_bits, rate)
            if config.mode != "oma-baseline":
                user_n = n_K
            sigma2 = 0.0 if config.noiseless else ebn0_to_sigma2(ebn0, config.code_length, B_bits)
            value = rate if config.sweep_var == "sum_rate" else ebn0
            points.append(SweepPoint(
                index=len(points),
                sweep_var=config.sweep_var,
                value=float(value),
                ebn0_db=float(ebn0),
                sum_rate=rate,
                channel_uses=int(n_K),
                user_channel_uses=int(user_n),
                sigma2=sigma2,
            ))
    return points


@lru_cache(maxsize=8)
def _cached_code(p: int, modulus: Optional[int], L: int, M: int, degree: int, seed: int, path: Optional[str]) -> LdpcCode:
    field_table = make_field(p, modulus)
    if path is not None:
        return load_code(path, field_table)
    return build_ldpc(field_table, L, M, degree, seed)


def get_code(config: ExperimentConfig) -> LdpcCode:
    code = _cached_code(config.p, config.modulus, config.code_length, config.checks,
                        config.variable_degree, config.code_seed, config.code_path)
    if (code.L, code.M) != (config.code_length, config.checks):
        raise ConfigError(f"code file has geometry ({code.L}, {code.M}), config says "
                          f"({config.code_length}, {config.checks})")
    return code


@lru_cache(maxsize=8)
def _cached_topology(path: str) -> Topology:
    return Topology.from_json(path)


def get_topology(config: ExperimentConfig) -> Topology:
    if config.mode != "cell-free":
        return Topology.single_cell(config.users)
    try:
        topology = _cached_topology(config.topology_path)
    except TopologyError as e:
        raise ConfigError(str(e)) from e
    if topology.users != config.users:
        raise ConfigError(f"topology has {topology.users} users, config has {config.users}")
    return topology


def _trial_streams(master_seed: int, trial_index: int, users: int) -> Tuple[np.random.Generator, np.random.Generator, List[int]]:
    root = np.random.SeedSequence(master_seed, spawn_key=(trial_index,))
    message_seq, noise_seq, matrix_seq = root.spawn(3)
    matrix_seeds = [int(s) for s in matrix_seq.generate_state(users)]
    return np.random.default_rng(message_seq), np.random.default_rng(noise_seq), matrix_seeds


def _decoder_options(config: ExperimentConfig) -> Dict[str, Any]:
    return {
        "amp_iterations": config.amp_iterations,
        "bp_iterations": config.bp_iterations,
        "final_bp_iterations": config.final_bp_iterations,
        "early_stop": config.early_stop,
        "init": config.init,
        "keep_graph": config.keep_graph,
    }


def run_trial(config: ExperimentConfig, trial_index: int, point: Optional[SweepPoint] = None) -> TrialRecord:
    """
    One seeded transmission: draw messages, encode, transmit, decode, count
    information-bit errors. A decoder abort counts every bit as wrong.
    """
    if point is None:
        point = sweep_points(config)[0]
    code = get_code(config)
    topology = get_topology(config)
    K = config.users
    message_rng, noise_rng, matrix_seeds = _trial_streams(config.master_seed, trial_index, K)

    info_bits = [message_rng.integers(0, 2, size=config.info_bits, dtype=np.uint8) for _ in range(K)]
    sparse = [to_sparse(ldpc_encode(code, bits_to_symbols(bits, code.field.p)), code.q) for bits in info_bits]
    codebooks = [
        UserCodebook(k, sample_sensing_matrix(matrix_seeds[k], point.user_channel_uses, code.L, code.q,
                                              config.matrix_mode, config.memory_budget), code)
        for k in range(K)
    ]
    signals = [sr_encode(cb.matrix, s) for cb, s in zip(codebooks, sparse)]

    diagnostics: List[Dict] = []
    sink = diagnostics.append if config.diagnostics_path else None
    options = _decoder_options(config)
    aborted = False
    iterations: List[int] = []
    noise_energy = 0.0
    noise_samples = 0
    try:
        if config.mode == "oma-baseline":
            results: List[DecodeResult] = []
            for k in range(K):
                y = gmac_transmit([signals[k]], point.sigma2, noise_rng)
                noise_energy += float(np.sum((y - signals[k]) ** 2))
                noise_samples += y.size
                results.append(decode_single_cell(y, [codebooks[k]], point.sigma2, sink=sink, **options))
            decoded = [r.info_bits[0] for r in results]
            iterations = [r.iterations for r in results]
        elif config.mode == "cell-free":
            ys = cellfree_transmit(topology, signals, point.sigma2, noise_rng)
            for b, y in enumerate(ys):
                clean = sum((signals[k] for k in topology.ap_users[b]), np.zeros_like(y))
                noise_energy += float(np.sum((y - clean) ** 2))
                noise_samples += y.size
            result = decode_cell_free(ys, topology, codebooks, point.sigma2, sink=sink, **options)
            decoded = result.info_bits
            iterations = [result.iterations]
        else:
            y = gmac_transmit(signals, point.sigma2, noise_rng)
            noise_energy = float(np.sum((y - sum(signals, np.zeros_like(y))) ** 2))
            noise_samples = y.size
            result = decode_single_cell(y, codebooks, point.sigma2, sink=sink, **options)
            decoded = result.info_bits
            iterations = [result.iterations]
        user_errors = [int(np.count_nonzero(d != b)) for d, b in zip(decoded, info_bits)]
    except DecoderAbort as e:
        logger.warning(f"Trial {trial_index} at point {point.index} aborted: {e}")
        aborted = True
        diagnostics.extend(e.records if config.diagnostics_path else [])
        user_errors = [config.info_bits] * K

    return TrialRecord(
        trial_index=trial_index,
        user_bit_errors=user_errors,
        user_bits=[config.info_bits] * K,
        user_frame_errors=[errors > 0 for errors in user_errors],
        aborted=aborted,
        iterations=iterations,
        matrix_seeds=matrix_seeds,
        signal_energy=float(np.mean([x @ x for x in signals])),
        noise_variance=noise_energy / noise_samples if noise_samples else 0.0,
        diagnostics=diagnostics,
    )


def _write_diagnostics(path: str, point: SweepPoint, records: List[TrialRecord], append: bool) -> None:
    with open(path, "a" if append else "w") as f:
        for record in records:
            for entry in record.diagnostics:
                line = {"point": point.index, "trial": record.trial_index, **entry}
                f.write(json.dumps(line) + "\n")


def run_point(config: ExperimentConfig, point: SweepPoint) -> List[TrialRecord]:
    """
    Trials for one sweep point, in fixed-size batches. The frame-error stop
    is checked only between batches so the outcome ignores the worker count.
    """
    records: List[TrialRecord] = []
    frame_errors = 0
    progress = tqdm(total=config.trials, desc=f"{point.sweep_var}={point.value:g}", disable=not config.progress)
    for start in range(0, config.trials, config.batch_size):
        indices = range(start, min(start + config.batch_size, config.trials))
        batch = Parallel(n_jobs=config.workers)(delayed(run_trial)(config, i, point) for i in indices)
        records.extend(batch)
        frame_errors += sum(r.frame_error for r in batch)
        progress.update(len(batch))
        if config.target_frame_errors is not None and frame_errors >= config.target_frame_errors:
            logger.info(f"Reached {frame_errors} frame errors after {len(records)} trials at point {point.index}")
            break
    progress.close()
    return records


def run_sweep(config: ExperimentConfig) -> List[SweepSummary]:
    code = get_code(config)
    get_topology(config)
    processor = ResultsProcessor(config, code)
    points = sweep_points(config)
    logger.info(
        f"Running {config.mode} sweep over {len(points)} point(s), K={config.users}, "
        f"{config.trials} trials each, digest {config.digest()[:12]}"
    )

    summaries = []
    for point in points:
        records = run_point(config, point)
        if config.diagnostics_path:
            _write_diagnostics(config.diagnostics_path, point, records, append=point.index > 0)
        summary = processor.summarize_point(point, records)
        logger.info(
            f"{point.sweep_var}={point.value:g}: n_K={point.channel_uses}, "
            f"BER={summary.ber:.3e}, FER={summary.fer:.3e}, aborted={summary.aborted_trials}"
        )
        summaries.append(summary)
    return summaries


def abort_rate(summaries: List[SweepSummary]) -> float:
    trials = sum(s.trials for s in summaries)
    return sum(s.aborted_trials for s in summaries) / trials if trials else 0.0


def resolved_config_json(config: ExperimentConfig) -> str:
    return json.dumps(config.resolved(), indent=2, sort_keys=True)
