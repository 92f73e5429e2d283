"""
Sparse-regression inner code: one-hot sections, Gaussian sensing matrices,
codeword synthesis and hard-decision readout.
"""

import logging
from dataclasses import dataclass
from functools import cached_property
from typing import Dict, Iterator, Literal, Optional, Tuple

import numpy as np

from nonbinary_ldpc import LdpcCode

logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)

DEFAULT_MEMORY_BUDGET = 2 * 1024**3  # bytes per dense matrix
PMF_TOLERANCE = 1e-9

StorageMode = Literal["dense", "streamed"]


class GeometryError(ValueError):
    """Raised when vector and matrix geometries disagree."""


class MemoryBudgetError(MemoryError):
    """Raised when a dense sensing matrix would exceed the memory budget."""


def index_symbol(v: int) -> int:
    """Symbol-to-column index within a section; identity on bit patterns."""
    return int(v)


def inverse_index(i: int) -> int:
    return int(i)


@dataclass
class SectionalVector:
    """L sections of length q, stored as an L x q array."""
    data: np.ndarray

    @property
    def L(self) -> int:
        return self.data.shape[0]

    @property
    def q(self) -> int:
        return self.data.shape[1]

    @property
    def flat(self) -> np.ndarray:
        return self.data.reshape(-1)

    @classmethod
    def uniform(cls, L: int, q: int) -> "SectionalVector":
        return cls(np.full((L, q), 1.0 / q))

    @classmethod
    def zeros(cls, L: int, q: int) -> "SectionalVector":
        return cls(np.zeros((L, q)))

    @classmethod
    def from_flat(cls, flat: np.ndarray, q: int) -> "SectionalVector":
        flat = np.asarray(flat, dtype=np.float64)
        if flat.size % q:
            raise GeometryError(f"length {flat.size} is not a multiple of q={q}")
        return cls(flat.reshape(-1, q))

    def is_one_hot(self) -> bool:
        return bool(np.all((self.data == 0) | (self.data == 1)) and np.all(self.data.sum(axis=1) == 1))

    def is_pmf(self, tolerance: float = PMF_TOLERANCE) -> bool:
        return bool(
            np.all(self.data >= 0) and np.allclose(self.data.sum(axis=1), 1.0, rtol=0, atol=tolerance)
        )


def to_sparse(v: np.ndarray, q: int) -> SectionalVector:
    """One-hot section per symbol: section l is e_{index_symbol(v[l])}."""
    v = np.asarray(v, dtype=np.int64)
    data = np.zeros((v.size, q))
    data[np.arange(v.size), [index_symbol(s) for s in v]] = 1.0
    return SectionalVector(data)


class SensingMatrix:
    """
    n x (qL) matrix with i.i.d. N(0, 1/n) entries, reproducible from a seed.

    Section l's n x q column block is drawn from a Philox stream keyed by
    (seed, l), so dense and streamed storage hold the same numbers. Streamed
    mode regenerates blocks on every product instead of keeping them.
    """

    def __init__(self, n: int, L: int, q: int, seed: int, mode: StorageMode = "dense"):
        self.n = n
        self.L = L
        self.q = q
        self.seed = int(seed)
        self.mode = mode

    @property
    def shape(self) -> Tuple[int, int]:
        return self.n, self.q * self.L

    @property
    def dense_bytes(self) -> int:
        return self.n * self.q * self.L * 8

    def section_block(self, section: int) -> np.ndarray:
        key = np.random.SeedSequence([self.seed, section])
        rng = np.random.Generator(np.random.Philox(key))
        return rng.standard_normal((self.n, self.q)) / np.sqrt(self.n)

    def blocks(self) -> Iterator[np.ndarray]:
        if self.mode == "dense":
            for section in range(self.L):
                yield self.dense[:, section * self.q:(section + 1) * self.q]
        else:
            for section in range(self.L):
                yield self.section_block(section)

    @cached_property
    def dense(self) -> np.ndarray:
        matrix = np.hstack([self.section_block(section) for section in range(self.L)])
        matrix.setflags(write=False)
        return matrix

    def matvec(self, s: np.ndarray) -> np.ndarray:
        """A s for a flat length-qL vector."""
        s = np.asarray(s, dtype=np.float64).reshape(-1)
        if s.size != self.q * self.L:
            raise GeometryError(f"vector of length {s.size} does not match {self.q}x{self.L} sections")
        if self.mode == "dense":
            return self.dense @ s
        out = np.zeros(self.n)
        for section, block in enumerate(self.blocks()):
            out += block @ s[section * self.q:(section + 1) * self.q]
        return out

    def rmatvec(self, z: np.ndarray) -> np.ndarray:
        """A^T z, returned flat (length qL)."""
        z = np.asarray(z, dtype=np.float64).reshape(-1)
        if z.size != self.n:
            raise GeometryError(f"residual of length {z.size} does not match n={self.n}")
        if self.mode == "dense":
            return self.dense.T @ z
        return np.concatenate([block.T @ z for block in self.blocks()])

    def describe(self) -> Dict[str, object]:
        return {"n": self.n, "L": self.L, "q": self.q, "seed": self.seed, "mode": self.mode}


def sample_sensing_matrix(
    seed: int,
    n: int,
    L: int,
    q: int,
    mode: StorageMode = "dense",
    memory_budget: Optional[int] = DEFAULT_MEMORY_BUDGET,
) -> SensingMatrix:
    if n < 1:
        raise GeometryError(f"need at least one channel use, got n={n}")
    matrix = SensingMatrix(n, L, q, seed, mode)
    if mode == "dense" and memory_budget is not None and matrix.dense_bytes > memory_budget:
        raise MemoryBudgetError(
            f"dense {n}x{q * L} matrix needs {matrix.dense_bytes / 1024**3:.2f} GiB, "
            f"budget is {memory_budget / 1024**3:.2f} GiB; use mode='streamed'"
        )
    return matrix


def sr_encode(A: SensingMatrix, s: SectionalVector) -> np.ndarray:
    if (s.L, s.q) != (A.L, A.q):
        raise GeometryError(f"sparse vector {s.L}x{s.q} does not match matrix {A.L}x{A.q}")
    return A.matvec(s.flat)


def hard_decision(beliefs: SectionalVector) -> np.ndarray:
    """Argmax per section; np.argmax keeps the lowest index on ties."""
    return np.array([inverse_index(i) for i in np.argmax(beliefs.data, axis=1)], dtype=np.int64)


def extract_info_bits(code: LdpcCode, v_hat: np.ndarray) -> np.ndarray:
    """Little-endian p-bit expansion of the systematic symbols."""
    symbols = np.asarray(v_hat, dtype=np.int64)[code.info_positions]
    shifts = np.arange(code.field.p)
    return ((symbols[:, None] >> shifts[None, :]) & 1).reshape(-1).astype(np.uint8)


def bits_to_symbols(bits: np.ndarray, p: int) -> np.ndarray:
    """Inverse of the little-endian expansion used by extract_info_bits."""
    bits = np.asarray(bits, dtype=np.int64).reshape(-1, p)
    return (bits << np.arange(p)[None, :]).sum(axis=1)
