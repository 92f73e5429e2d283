"""
Arithmetic over GF(2^p), the symbol alphabet of the outer LDPC code.

Elements are integers whose bits are polynomial coefficients over GF(2).
Multiplication and inversion go through log/antilog tables built once per
field; addition is XOR.
"""

import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Dict, Optional

import numpy as np

logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)

# Conventional primitive polynomials, keyed by bit width p.
DEFAULT_MODULI: Dict[int, int] = {
    1: 0b11,
    2: 0b111,
    3: 0b1011,
    4: 0b10011,
    5: 0b100101,
    6: 0b1000011,
    7: 0b10001001,
    8: 0x11D,
    9: 0x211,
    10: 0x409,
    11: 0x805,
    12: 0x1053,
    13: 0x201B,
    14: 0x4443,
    15: 0x8003,
    16: 0x1100B,
}

# Dense q x q tables above this order would not fit comfortably in memory.
MAX_TABLE_ORDER = 4096


class FieldConstructionError(ValueError):
    """Raised when a modulus does not define a primitive GF(2^p)."""


class FieldDomainError(ValueError):
    """Raised for operations outside the field's domain (e.g. inverse of 0)."""


@dataclass(frozen=True, eq=False)
class FieldTable:
    """
    GF(2^p) with exp/log tables.

    exp has length 2(q-1) so that exp[log a + log b] needs no modulo.
    log[0] is unused and left at 0.
    """
    p: int
    modulus: int
    exp: np.ndarray = field(repr=False)
    log: np.ndarray = field(repr=False)

    @property
    def q(self) -> int:
        return 1 << self.p

    def add(self, a: int, b: int) -> int:
        return int(a) ^ int(b)

    def mul(self, a: int, b: int) -> int:
        if a == 0 or b == 0:
            return 0
        return int(self.exp[int(self.log[a]) + int(self.log[b])])

    def inv(self, a: int) -> int:
        if a == 0:
            raise FieldDomainError("0 has no multiplicative inverse")
        return int(self.exp[(self.q - 1) - int(self.log[a])])

    def div(self, a: int, b: int) -> int:
        return self.mul(a, self.inv(b))

    @cached_property
    def mul_table(self) -> np.ndarray:
        """q x q multiplication table, built on first use (vectorized BP)."""
        if self.q > MAX_TABLE_ORDER:
            raise FieldDomainError(
                f"multiplication table for q={self.q} exceeds {MAX_TABLE_ORDER}"
            )
        logs = self.log.astype(np.int64)
        table = self.exp[logs[:, None] + logs[None, :]].astype(np.int64)
        table[0, :] = 0
        table[:, 0] = 0
        table.setflags(write=False)
        return table

    @cached_property
    def inv_table(self) -> np.ndarray:
        """inv_table[a] = a^-1 for a != 0; inv_table[0] = 0 as a placeholder."""
        table = np.zeros(self.q, dtype=np.int64)
        nonzero = np.arange(1, self.q)
        table[1:] = self.exp[(self.q - 1) - self.log[nonzero]]
        table.setflags(write=False)
        return table

    def mul_vec(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """Elementwise product of two integer arrays of field elements."""
        a = np.asarray(a, dtype=np.int64)
        b = np.asarray(b, dtype=np.int64)
        out = self.exp[self.log[a].astype(np.int64) + self.log[b].astype(np.int64)].astype(np.int64)
        return np.where((a == 0) | (b == 0), 0, out)

    def describe(self) -> Dict[str, int]:
        """Metadata recorded alongside experiment output."""
        return {"p": self.p, "q": self.q, "modulus": self.modulus}


def _times_x(value: int, p: int, modulus: int) -> int:
    value <<= 1
    if value & (1 << p):
        value ^= modulus
    return value


def make_field(p: int, modulus: Optional[int] = None) -> FieldTable:
    """
    Build GF(2^p) from a primitive polynomial given as a bitmask.

    The generator x must have multiplicative order exactly q-1; anything else
    (reducible or non-primitive modulus) raises FieldConstructionError.
    """
    if not 1 <= p <= 16:
        raise FieldConstructionError(f"bit width p={p} outside [1, 16]")
    if modulus is None:
        modulus = DEFAULT_MODULI[p]
    if modulus >> p != 1:
        raise FieldConstructionError(
            f"modulus {modulus:#b} does not have degree {p}"
        )

    q = 1 << p
    order = q - 1
    exp = np.zeros(2 * order, dtype=np.int64)
    log = np.zeros(q, dtype=np.int64)

    value = 1
    for i in range(order):
        exp[i] = value
        log[value] = i
        value = _times_x(value, p, modulus)
        if value == 0:
            raise FieldConstructionError(
                f"order check failed for modulus {modulus:#b}: x^{i + 1} reduces to 0"
            )
        if value == 1 and i + 1 < order:
            raise FieldConstructionError(
                f"order check failed for modulus {modulus:#b}: "
                f"x has multiplicative order {i + 1}, expected {order}"
            )
    if value != 1:
        raise FieldConstructionError(
            f"order check failed for modulus {modulus:#b}: "
            f"x^{order} = {value} != 1, modulus is not primitive"
        )
    exp[order:] = exp[:order]
    exp.setflags(write=False)
    log.setflags(write=False)

    logger.debug(f"Built GF({q}) with modulus {modulus:#x}")
    return FieldTable(p=p, modulus=modulus, exp=exp, log=log)
