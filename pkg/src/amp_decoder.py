"""
Joint AMP-BP decoding of superimposed SR-LDPC codewords.

Single-cell decoding follows the usual AMP recursion with one BP-denoised
state per user and a shared residual. Cell-free decoding keeps one residual
per access point and merges each user's per-AP effective observations with
inverse-variance weights before denoising.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Literal, Optional, Sequence, Tuple

import numpy as np
from scipy.special import softmax

from channel_model import Topology
from nonbinary_ldpc import BeliefState, LdpcCode, bp_denoiser_round, is_codeword
from sparse_regression import (
    GeometryError,
    SectionalVector,
    SensingMatrix,
    extract_info_bits,
    hard_decision,
)

logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)

InitMode = Literal["uniform", "zero"]
DiagnosticsSink = Callable[[Dict], None]


class DecoderAbort(RuntimeError):
    """Raised when a decoder state goes non-finite; carries the records so far."""

    def __init__(self, message: str, records: List[Dict]):
        super().__init__(message)
        self.records = records


@dataclass
class UserCodebook:
    user_id: int
    matrix: SensingMatrix
    code: LdpcCode

    def __post_init__(self):
        if (self.matrix.L, self.matrix.q) != (self.code.L, self.code.q):
            raise GeometryError(
                f"user {self.user_id}: matrix sections {self.matrix.L}x{self.matrix.q} "
                f"do not match code {self.code.L}x{self.code.q}"
            )


@dataclass
class DecoderState:
    """
    Iteration state. residuals/tau2 have one entry per AP (one in
    single-cell mode); divergences[b, k] is user k's divergence as seen by AP b.
    """
    estimates: List[SectionalVector]
    observations: List[Optional[np.ndarray]]
    residuals: List[np.ndarray]
    divergences: np.ndarray
    tau2: np.ndarray
    t: int = 0
    beliefs: List[Optional[BeliefState]] = field(default_factory=list)

    @classmethod
    def initial(cls, codebooks: Sequence[UserCodebook], n: int, aps: int, init: InitMode) -> "DecoderState":
        make = SectionalVector.uniform if init == "uniform" else SectionalVector.zeros
        users = len(codebooks)
        return cls(
            estimates=[make(cb.code.L, cb.code.q) for cb in codebooks],
            observations=[None] * users,
            residuals=[np.zeros(n) for _ in range(aps)],
            divergences=np.zeros((aps, users)),
            tau2=np.zeros(aps),
            beliefs=[None] * users,
        )


@dataclass
class DecodeResult:
    symbols: List[np.ndarray]
    info_bits: List[np.ndarray]
    estimates: List[SectionalVector]
    syndrome_ok: List[bool]
    iterations: int
    records: List[Dict]
    collapse_resets: int = 0

    @property
    def tau2_trajectory(self) -> List[List[float]]:
        return [record["tau2"] for record in self.records]


def estimate_tau2(z: np.ndarray, n: Optional[int] = None) -> float:
    n = z.size if n is None else n
    return float(z @ z) / n


def effective_observation(A: SensingMatrix, z: np.ndarray, s: SectionalVector) -> np.ndarray:
    """r = A^T z + s, flat."""
    return A.rmatvec(z) + s.flat


def section_posterior(r_section: np.ndarray, tau2: float) -> np.ndarray:
    """
    alpha(g) proportional to exp(-||r - e_g||^2 / 2 tau^2), i.e. softmax(r / tau^2).
    With tau^2 == 0 the posterior is one-hot at the argmax.
    """
    return section_posteriors(np.asarray(r_section, dtype=np.float64)[None, :], tau2)[0]


def section_posteriors(r: np.ndarray, tau2: float) -> np.ndarray:
    """Row-wise section_posterior for an L x q array."""
    if tau2 <= 0:
        out = np.zeros_like(r)
        out[np.arange(r.shape[0]), np.argmax(r, axis=1)] = 1.0
        return out
    return softmax(r / tau2, axis=1)


def bp_denoise(
    code: LdpcCode,
    r: np.ndarray,
    tau2: float,
    bp_iterations: int,
    state: Optional[BeliefState] = None,
) -> SectionalVector:
    priors = section_posteriors(np.asarray(r, dtype=np.float64).reshape(code.L, code.q), tau2)
    return SectionalVector(bp_denoiser_round(code, priors, state, bp_iterations))


def onsager_divergence(s_next: SectionalVector, tau2: float) -> float:
    """(||s||_1 - ||s||_2^2) / tau^2 with ||s||_1 = L for pmf sections."""
    if tau2 <= 0:
        return 0.0
    flat = s_next.flat
    return (s_next.L - float(flat @ flat)) / tau2


def _subtract_onsager(projected: np.ndarray, z_prev: np.ndarray, div_prev: float, n: int) -> np.ndarray:
    return projected - z_prev * (div_prev / n)


def user_contribution(
    A: SensingMatrix, s: SectionalVector, z_prev: np.ndarray, div_prev: float, n: int
) -> np.ndarray:
    """y_hat_k = A_k s_k - (1/n) z_prev div_prev."""
    return _subtract_onsager(A.matvec(s.flat), z_prev, div_prev, n)


def residual(y: np.ndarray, contributions: Sequence[np.ndarray]) -> np.ndarray:
    """z = y - sum of contributions, subtracted in the order given."""
    z = np.array(y, dtype=np.float64)
    for contribution in contributions:
        if contribution.shape != z.shape:
            raise GeometryError(f"contribution of shape {contribution.shape} does not match {z.shape}")
        z -= contribution
    return z


def combining_weights(tau2s: Sequence[float]) -> np.ndarray:
    """c_j = 1 / sum_i (tau_j^2 / tau_i^2); requires every tau^2 > 0."""
    tau2s = np.asarray(tau2s, dtype=np.float64)
    return 1.0 / (tau2s[:, None] / tau2s[None, :]).sum(axis=1)


def combine_effective_observations(
    observations: Sequence[np.ndarray], tau2s: Sequence[float]
) -> Tuple[np.ndarray, float]:
    """
    Inverse-variance combination of one user's per-AP effective observations.

    Returns the master observation and its noise variance
    1 / sum_b (1 / tau_b^2). An AP with tau^2 == 0 is taken alone.
    """
    if len(observations) == 0:
        raise ValueError("user is not connected to any access point")
    if len(observations) != len(tau2s):
        raise ValueError(f"{len(observations)} observations but {len(tau2s)} variances")
    if len(observations) == 1:
        return observations[0], float(tau2s[0])
    tau2s = np.asarray(tau2s, dtype=np.float64)
    noiseless = np.nonzero(tau2s <= 0)[0]
    if noiseless.size:
        return observations[int(noiseless[0])], 0.0
    weights = combining_weights(tau2s)
    combined = np.zeros_like(observations[0])
    for weight, observation in zip(weights, observations):
        combined += weight * observation
    return combined, float(1.0 / np.sum(1.0 / tau2s))


def _hard_decisions(codebooks: Sequence[UserCodebook], estimates: Sequence[SectionalVector]) -> Tuple[List[np.ndarray], List[bool]]:
    symbols = [hard_decision(s) for s in estimates]
    ok = [is_codeword(cb.code, v) for cb, v in zip(codebooks, symbols)]
    return symbols, ok


def _check_finite(state: DecoderState, records: List[Dict]) -> None:
    for b, z in enumerate(state.residuals):
        if not np.all(np.isfinite(z)):
            raise DecoderAbort(f"non-finite residual at AP {b}, iteration {state.t}", records)
    for k, s in enumerate(state.estimates):
        if not np.all(np.isfinite(s.data)):
            raise DecoderAbort(f"non-finite state estimate for user {k}, iteration {state.t}", records)


def _record(state: DecoderState, ok: List[bool], records: List[Dict], sink: Optional[DiagnosticsSink]) -> None:
    record = {
        "t": state.t,
        "tau2": [float(v) for v in state.tau2],
        "residual_norm": [float(np.linalg.norm(z)) for z in state.residuals],
        "syndrome_ok": [bool(v) for v in ok],
    }
    records.append(record)
    logger.debug(f"AMP iteration {record}")
    if sink is not None:
        sink(record)


def _check_residual_decay(records: List[Dict], sigma2: float) -> None:
    if sigma2 != 0 or len(records) < 4:
        return
    previous, current = records[-2]["residual_norm"], records[-1]["residual_norm"]
    if any(c > p for c, p in zip(current, previous)):
        logger.debug(f"Noiseless residual norm grew at iteration {records[-1]['t']}: {previous} -> {current}")


def _denoise_user(
    cb: UserCodebook, state: DecoderState, k: int, r: np.ndarray, tau2: float,
    bp_iterations: int, keep_graph: bool,
) -> SectionalVector:
    belief_state = None
    if keep_graph:
        if state.beliefs[k] is None:
            state.beliefs[k] = BeliefState.fresh(cb.code)
        belief_state = state.beliefs[k]
    return bp_denoise(cb.code, r, tau2, bp_iterations, belief_state)


def _finish(
    codebooks: Sequence[UserCodebook],
    state: DecoderState,
    records: List[Dict],
    final_tau2: List[float],
    final_bp_iterations: int,
    converged: bool,
) -> DecodeResult:
    if final_bp_iterations > 0 and not converged:
        for k, cb in enumerate(codebooks):
            if state.observations[k] is not None:
                state.estimates[k] = bp_denoise(cb.code, state.observations[k], final_tau2[k], final_bp_iterations)
    symbols, ok = _hard_decisions(codebooks, state.estimates)
    collapse = sum(b.collapse_resets for b in state.beliefs if b is not None)
    return DecodeResult(
        symbols=symbols,
        info_bits=[extract_info_bits(cb.code, v) for cb, v in zip(codebooks, symbols)],
        estimates=state.estimates,
        syndrome_ok=ok,
        iterations=state.t,
        records=records,
        collapse_resets=collapse,
    )


def decode_single_cell(
    y: np.ndarray,
    codebooks: Sequence[UserCodebook],
    sigma2: float,
    amp_iterations: int = 25,
    bp_iterations: int = 1,
    final_bp_iterations: int = 0,
    early_stop: bool = True,
    init: InitMode = "uniform",
    keep_graph: bool = False,
    sink: Optional[DiagnosticsSink] = None,
) -> DecodeResult:
    """
    Joint AMP-BP over one shared residual.

    Each iteration: contributions, residual, tau^2, effective observations,
    BP denoising, divergences. User contributions are summed in user order.
    """
    y = np.asarray(y, dtype=np.float64)
    n = y.size
    for cb in codebooks:
        if cb.matrix.n != n:
            raise GeometryError(f"user {cb.user_id} matrix has n={cb.matrix.n}, observation has {n}")

    state = DecoderState.initial(codebooks, n, aps=1, init=init)
    records: List[Dict] = []
    final_tau2 = [0.0] * len(codebooks)
    converged = False

    while state.t < amp_iterations:
        contributions = [
            user_contribution(cb.matrix, state.estimates[k], state.residuals[0], state.divergences[0, k], n)
            for k, cb in enumerate(codebooks)
        ]
        z = residual(y, contributions)
        tau2 = estimate_tau2(z, n)
        for k, cb in enumerate(codebooks):
            r = effective_observation(cb.matrix, z, state.estimates[k])
            state.observations[k] = r
            state.estimates[k] = _denoise_user(cb, state, k, r, tau2, bp_iterations, keep_graph)
            state.divergences[0, k] = onsager_divergence(state.estimates[k], tau2)
            final_tau2[k] = tau2
        state.residuals[0] = z
        state.tau2[0] = tau2
        state.t += 1

        _check_finite(state, records)
        _, ok = _hard_decisions(codebooks, state.estimates)
        _record(state, ok, records, sink)
        _check_residual_decay(records, sigma2)
        if early_stop and all(ok):
            converged = True
            break

    return _finish(codebooks, state, records, final_tau2, final_bp_iterations, converged)


def decode_cell_free(
    observations: Sequence[np.ndarray],
    topology: Topology,
    codebooks: Sequence[UserCodebook],
    sigma2: float,
    amp_iterations: int = 25,
    bp_iterations: int = 1,
    final_bp_iterations: int = 0,
    early_stop: bool = True,
    init: InitMode = "uniform",
    keep_graph: bool = False,
    sink: Optional[DiagnosticsSink] = None,
) -> DecodeResult:
    """
    AMP-BP with one residual per access point.

    AP b subtracts only the users in K_b, each with an Onsager term built from
    that AP's previous residual and divergence. User k combines the effective
    observations of the APs in B_k before denoising, and its divergence at AP b
    uses tau_b^2.
    """
    if len(observations) != topology.aps:
        raise ValueError(f"topology has {topology.aps} APs but {len(observations)} observations were given")
    if len(codebooks) != topology.users:
        raise ValueError(f"topology has {topology.users} users but {len(codebooks)} codebooks were given")
    ys = [np.asarray(y, dtype=np.float64) for y in observations]
    n = ys[0].size
    for cb in codebooks:
        if cb.matrix.n != n:
            raise GeometryError(f"user {cb.user_id} matrix has n={cb.matrix.n}, observations have {n}")

    state = DecoderState.initial(codebooks, n, aps=topology.aps, init=init)
    records: List[Dict] = []
    final_tau2 = [0.0] * len(codebooks)
    converged = False

    while state.t < amp_iterations:
        projected = [cb.matrix.matvec(state.estimates[k].flat) for k, cb in enumerate(codebooks)]
        residuals = []
        for b in range(topology.aps):
            contributions = [
                _subtract_onsager(projected[k], state.residuals[b], state.divergences[b, k], n)
                for k in topology.ap_users[b]
            ]
            residuals.append(residual(ys[b], contributions))
        tau2 = np.array([estimate_tau2(z, n) for z in residuals])

        for k, cb in enumerate(codebooks):
            aps = topology.user_aps[k]
            per_ap = [effective_observation(cb.matrix, residuals[b], state.estimates[k]) for b in aps]
            r, combined_tau2 = combine_effective_observations(per_ap, [tau2[b] for b in aps])
            state.observations[k] = r
            state.estimates[k] = _denoise_user(cb, state, k, r, combined_tau2, bp_iterations, keep_graph)
            for b in aps:
                state.divergences[b, k] = onsager_divergence(state.estimates[k], tau2[b])
            final_tau2[k] = combined_tau2
        state.residuals = residuals
        state.tau2 = tau2
        state.t += 1

        _check_finite(state, records)
        _, ok = _hard_decisions(codebooks, state.estimates)
        _record(state, ok, records, sink)
        _check_residual_decay(records, sigma2)
        if early_stop and all(ok):
            converged = True
            break

    return _finish(codebooks, state, records, final_tau2, final_bp_iterations, converged)
