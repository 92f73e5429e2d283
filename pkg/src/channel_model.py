"""
AWGN multiple-access and cell-free channel models, E_b/N_0 calibration and
rate/capacity bookkeeping.
"""

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from experiment_validator import ExperimentValidator

logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)


class TopologyError(ValueError):
    """Raised for inconsistent user/AP adjacency or signal sets."""


@dataclass(frozen=True)
class Topology:
    """Bipartite user/AP adjacency. ap_users[b] is K_b, user_aps[k] is B_k."""
    aps: int
    users: int
    ap_users: Tuple[Tuple[int, ...], ...]
    user_aps: Tuple[Tuple[int, ...], ...]

    @classmethod
    def from_edges(cls, aps: int, users: int, edges: Sequence[Sequence[int]]) -> "Topology":
        doc = {"aps": aps, "users": users,
               "edges": [list(edge) if isinstance(edge, (list, tuple)) else edge for edge in edges]}
        status, issues = ExperimentValidator().validate_topology(doc)
        if not status:
            raise TopologyError(f"invalid topology: {issues}")
        ap_users = tuple(tuple(sorted(k for b, k in doc["edges"] if b == ap)) for ap in range(aps))
        user_aps = tuple(tuple(sorted(b for b, k in doc["edges"] if k == user)) for user in range(users))
        return cls(aps=aps, users=users, ap_users=ap_users, user_aps=user_aps)

    @classmethod
    def single_cell(cls, users: int) -> "Topology":
        return cls.from_edges(1, users, [[0, k] for k in range(users)])

    @classmethod
    def from_dict(cls, doc: Dict) -> "Topology":
        try:
            return cls.from_edges(doc["aps"], doc["users"], doc["edges"])
        except KeyError as e:
            raise TopologyError(f"topology document is missing {e}") from e

    @classmethod
    def from_json(cls, path: Union[str, Path]) -> "Topology":
        try:
            doc = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise TopologyError(f"cannot read topology file {path}: {e}") from e
        topology = cls.from_dict(doc)
        logger.info(f"Loaded topology with {topology.aps} APs and {topology.users} users from {path}")
        return topology

    def edges(self) -> List[List[int]]:
        return [[b, k] for b in range(self.aps) for k in self.ap_users[b]]

    def to_dict(self) -> Dict:
        return {"aps": self.aps, "users": self.users, "edges": self.edges()}


@dataclass(frozen=True)
class NoiseSpec:
    """Per-sample real noise variance, optionally overridden per AP."""
    sigma2: float
    per_ap: Optional[Tuple[float, ...]] = field(default=None)

    def __post_init__(self):
        if self.sigma2 < 0 or (self.per_ap is not None and min(self.per_ap) < 0):
            raise ValueError("noise variance must be nonnegative")

    def for_ap(self, ap: int) -> float:
        if self.per_ap is None:
            return self.sigma2
        return self.per_ap[ap]


def ebn0_to_sigma2(ebn0_db: float, L: int, B_bits: int) -> float:
    """
    Noise variance for a target E_b/N_0.

    Transmit energy is L (unit-norm columns), E_b = L / B_bits, and
    N_0 = 2 sigma^2 for real AWGN.
    """
    if B_bits < 1:
        raise ValueError(f"need at least one information bit, got {B_bits}")
    return L / (2.0 * B_bits * 10.0 ** (ebn0_db / 10.0))


def sigma2_to_ebn0(sigma2: float, energy: float, B_bits: int) -> float:
    """Inverse calibration, used for the empirical E_b/N_0 of a realisation."""
    if sigma2 <= 0 or energy <= 0:
        return math.inf
    return 10.0 * math.log10(energy / (2.0 * B_bits * sigma2))


def sum_capacity_bound(L: int, n: int, sigma2: float) -> float:
    """Bits per real channel use: 0.5 log2(1 + L / (n sigma^2))."""
    if sigma2 == 0:
        return math.inf
    return 0.5 * math.log2(1.0 + L / (n * sigma2))


def sum_rate(K: int, B_bits: int, n_K: int) -> float:
    return K * B_bits / n_K


def channel_uses_for(K: int, B_bits: int, R_sum: float) -> int:
    """Smallest n_K with K * B_bits / n_K <= R_sum."""
    exact = K * B_bits / R_sum
    nearest = round(exact)
    if abs(exact - nearest) <= 1e-9 * exact:
        return int(nearest)
    return int(math.ceil(exact))


def _check_lengths(signals: Sequence[np.ndarray]) -> int:
    lengths = {len(x) for x in signals}
    if len(lengths) != 1:
        raise ValueError(f"signals have mismatched lengths {sorted(lengths)}")
    return lengths.pop()


def gmac_transmit(signals: Sequence[np.ndarray], sigma2: float, rng: np.random.Generator) -> np.ndarray:
    """y = sum_k x_k + z, users summed in index order."""
    if not signals:
        raise ValueError("need at least one signal")
    n = _check_lengths(signals)
    y = np.zeros(n)
    for x in signals:
        y += x
    return y + np.sqrt(sigma2) * rng.standard_normal(n)


def cellfree_transmit(
    topology: Topology,
    signals: Sequence[np.ndarray],
    noise: Union[float, NoiseSpec],
    rng: np.random.Generator,
) -> List[np.ndarray]:
    """One observation per AP: the users in K_b plus independent noise."""
    if len(signals) != topology.users:
        raise TopologyError(f"topology has {topology.users} users but {len(signals)} signals were given")
    _check_lengths(signals)
    if not isinstance(noise, NoiseSpec):
        noise = NoiseSpec(float(noise))
    return [
        gmac_transmit([signals[k] for k in topology.ap_users[b]], noise.for_ap(b), rng)
        for b in range(topology.aps)
    ]
