import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.stats import norm

from channel_model import sigma2_to_ebn0, sum_capacity_bound
from experiment_validator import ExperimentValidator

if TYPE_CHECKING:
    from experiment_harness import ExperimentConfig, SweepPoint, TrialRecord
    from nonbinary_ldpc import LdpcCode

logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)

CSV_COLUMNS = ['sweep_var', 'value', 'users', 'n_k', 'trials', 'bit_errors',
               'bits_total', 'ber', 'frame_errors', 'fer']

# Single-user BER of the (766, 736) GF(256) code with n = 7350, keyed by Eb/N0 in dB
SINGLE_USER_REFERENCE_BER = {1.5: 0.16397, 1.75: 0.12211, 2.0: 0.052382, 2.25: 0.004036, 2.5: 0.0000287}


class ResultsWriteError(OSError):
    """Raised when results cannot be written to the requested path."""


@dataclass
class SweepSummary:
    sweep_var: str
    value: float
    ebn0_db: float
    sum_rate: Optional[float]
    users: int
    n_k: int
    trials: int
    bit_errors: int
    bits_total: int
    ber: float
    ber_ci_low: float
    ber_ci_high: float
    frame_errors: int
    fer: float
    aborted_trials: int
    sigma2: float
    capacity_bound: Optional[float]
    ebn0_empirical_db: Optional[float]
    mean_iterations: float
    config_digest: str
    master_seed: int
    code_seed: int
    per_user: List[Dict[str, Any]] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def wilson_interval(successes: int, total: int, confidence: float = 0.95) -> Tuple[float, float]:
    """Wilson score interval for a binomial proportion."""
    if total == 0:
        return 0.0, 1.0
    z = float(norm.ppf(0.5 + confidence / 2))
    phat = successes / total
    denom = 1 + z**2 / total
    center = (phat + z**2 / (2 * total)) / denom
    half = z * math.sqrt(phat * (1 - phat) / total + z**2 / (4 * total**2)) / denom
    return max(0.0, center - half), min(1.0, center + half)


def finite_or_none(value: float) -> Optional[float]:
    return value if math.isfinite(value) else None


class ResultsProcessor:
    def __init__(self, config: "ExperimentConfig", code: "LdpcCode"):
        self.config = config
        self.code = code
        self.validator = ExperimentValidator()

    def summarize_point(self, point: "SweepPoint", records: Sequence["TrialRecord"]) -> SweepSummary:
        """
        Reduce trial records (in trial order) into one sweep summary
        - BER/FER with Wilson intervals
        - per-user breakdown
        - capacity bound and empirical Eb/N0
        """
        config = self.config
        K = config.users
        trials = len(records)

        per_user = []
        for k in range(K):
            errors = sum(r.user_bit_errors[k] for r in records)
            bits = sum(r.user_bits[k] for r in records)
            frames = sum(bool(r.user_frame_errors[k]) for r in records)
            low, high = wilson_interval(errors, bits)
            per_user.append({
                'user': k,
                'bit_errors': errors,
                'bits_total': bits,
                'ber': errors / bits if bits else 0.0,
                'ber_ci_low': low,
                'ber_ci_high': high,
                'frame_errors': frames,
                'fer': frames / trials if trials else 0.0,
            })

        bit_errors = sum(entry['bit_errors'] for entry in per_user)
        bits_total = sum(entry['bits_total'] for entry in per_user)
        frame_errors = sum(r.frame_error for r in records)
        low, high = wilson_interval(bit_errors, bits_total)

        # Empirical Eb/N0 from realised transmit energy and noise
        energy = float(np.mean([r.signal_energy for r in records])) if records else 0.0
        noise = float(np.mean([r.noise_variance for r in records])) if records else 0.0
        empirical = sigma2_to_ebn0(noise, energy, config.info_bits)

        capacity = sum_capacity_bound(K * self.code.L, point.channel_uses, point.sigma2)
        iterations = [i for r in records for i in r.iterations]

        return SweepSummary(
            sweep_var=point.sweep_var,
            value=point.value,
            ebn0_db=point.ebn0_db,
            sum_rate=point.sum_rate,
            users=K,
            n_k=point.channel_uses,
            trials=trials,
            bit_errors=bit_errors,
            bits_total=bits_total,
            ber=bit_errors / bits_total if bits_total else 0.0,
            ber_ci_low=low,
            ber_ci_high=high,
            frame_errors=frame_errors,
            fer=frame_errors / trials if trials else 0.0,
            aborted_trials=sum(r.aborted for r in records),
            sigma2=point.sigma2,
            capacity_bound=finite_or_none(capacity),
            ebn0_empirical_db=finite_or_none(empirical),
            mean_iterations=float(np.mean(iterations)) if iterations else 0.0,
            config_digest=config.digest(),
            master_seed=config.master_seed,
            code_seed=config.code_seed,
            per_user=per_user,
        )

    def to_frame(self, summaries: Sequence[SweepSummary]) -> pd.DataFrame:
        """Flat table with the fixed CSV column order"""
        if not summaries:
            return pd.DataFrame(columns=CSV_COLUMNS)
        rows = [{col: getattr(s, col) for col in CSV_COLUMNS} for s in summaries]
        return pd.DataFrame(rows, columns=CSV_COLUMNS)

    def metadata(self) -> Dict[str, Any]:
        """Config, field and code description embedded in JSON output"""
        return {
            'config': self.config.resolved(),
            'config_digest': self.config.digest(),
            'field': self.code.field.describe(),
            'code': self.code.describe(),
            'decoder': {
                'amp_iterations': self.config.amp_iterations,
                'bp_iterations': self.config.bp_iterations,
                'final_bp_iterations': self.config.final_bp_iterations,
                'init': self.config.init,
            },
            # Eb/N0 is set per AP from one user's transmit energy
            'ebn0_convention': 'per_ap_single_user_energy' if self.config.mode == 'cell-free' else 'single_user_energy',
        }

    def emit_results(self, summaries: Sequence[SweepSummary], fmt: str, path: str) -> None:
        """
        Write summaries as CSV (fixed header), JSON (with full metadata) or Parquet.
        """
        if not summaries:
            raise ValueError("no summaries to write")

        validation = self.validator.run_all_validations([s.to_dict() for s in summaries])
        try:
            Path(path).parent.mkdir(parents=True, exist_ok=True)
            if fmt == 'csv':
                self.to_frame(summaries).to_csv(path, index=False)
            elif fmt == 'parquet':
                self.to_frame(summaries).to_parquet(path, index=False)
            elif fmt == 'json':
                doc = {
                    'metadata': self.metadata(),
                    'summaries': [s.to_dict() for s in summaries],
                    'validation': validation,
                }
                with open(path, 'w') as f:
                    json.dump(doc, f, indent=2)
            else:
                raise ValueError(f"unknown output format {fmt!r}")
        except OSError as e:
            raise ResultsWriteError(f"cannot write results to {path}: {e}") from e

        logger.info(f"Results successfully saved to {path}")


def max_sum_rate_at(summaries: Sequence[SweepSummary], target_ber: float, use_upper_bound: bool = False) -> Optional[float]:
    """
    Largest swept sum rate whose BER (or its upper 95% bound) meets the target.
    """
    passing = [
        s.sum_rate for s in summaries
        if s.sum_rate is not None and (s.ber_ci_high if use_upper_bound else s.ber) <= target_ber
    ]
    return max(passing) if passing else None
