"""
Non-binary LDPC codes over GF(2^p).

Construction by progressive edge growth, systematic encoding from a reduced
parity-check matrix, syndrome checks, and the probability-domain belief
propagation engine used as the AMP denoiser.
"""

import logging
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import List, Optional, Set, Tuple, Union

import numpy as np
from scipy.linalg import hadamard

from galois_field import FieldTable, make_field

logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)

PROBABILITY_FLOOR = 1e-300
WEIGHT_REDRAWS = 16


class LdpcConstructionError(ValueError):
    """Raised when a parity-check matrix cannot satisfy the code invariants."""


class LdpcFormatError(ValueError):
    """Raised when a code text file cannot be parsed."""


class LdpcCode:
    """
    Sparse parity-check matrix H (M x L) over GF(q) with its encoder.

    Edges are stored sorted by (check, variable). The encoder keeps the
    reduced form of H: pivot columns hold parity symbols, the remaining
    columns (info_positions, ascending) hold the information word.
    """

    def __init__(self, field: FieldTable, H: np.ndarray):
        H = np.array(H, dtype=np.int64)
        if H.ndim != 2:
            raise LdpcConstructionError("parity-check matrix must be 2-D")
        M, L = H.shape
        if M >= L:
            raise LdpcConstructionError(f"need M < L, got M={M}, L={L}")
        if H.min() < 0 or H.max() >= field.q:
            raise LdpcConstructionError(f"edge weights must lie in GF({field.q})")

        row_degrees = np.count_nonzero(H, axis=1)
        col_degrees = np.count_nonzero(H, axis=0)
        if row_degrees.min() < 2:
            raise LdpcConstructionError(
                f"check {int(np.argmin(row_degrees))} has fewer than 2 edges"
            )
        if col_degrees.min() < 1:
            raise LdpcConstructionError(
                f"variable {int(np.argmin(col_degrees))} is not attached to any check"
            )

        self.field = field
        self.H = H
        self.H.setflags(write=False)
        self.M = M
        self.L = L

        checks, variables = np.nonzero(H)
        self.edge_check = checks
        self.edge_var = variables
        self.edge_weight = H[checks, variables]

        self.info_positions, self.parity_positions, self.parity_matrix = _reduce(field, H)

    @property
    def q(self) -> int:
        return self.field.q

    @property
    def K_sym(self) -> int:
        return self.L - self.M

    @property
    def num_edges(self) -> int:
        return int(self.edge_check.size)

    @property
    def rate(self) -> float:
        return self.K_sym / self.L

    # Padded adjacency used by the vectorized BP engine; -1 marks padding.
    @cached_property
    def var_edges(self) -> np.ndarray:
        return _padded_groups(self.edge_var, self.L)

    @cached_property
    def check_edges(self) -> np.ndarray:
        return _padded_groups(self.edge_check, self.M)

    @cached_property
    def permute_in(self) -> np.ndarray:
        """Row e maps u -> h_e^-1 u, turning a pmf of v into a pmf of h_e v."""
        inverse_weights = self.field.inv_table[self.edge_weight]
        return self.field.mul_table[inverse_weights]

    @cached_property
    def permute_out(self) -> np.ndarray:
        """Row e maps g -> h_e g."""
        return self.field.mul_table[self.edge_weight]

    @cached_property
    def hadamard_matrix(self) -> np.ndarray:
        return hadamard(self.q).astype(np.float64)

    def describe(self) -> dict:
        return {
            "q": self.q,
            "L": self.L,
            "M": self.M,
            "K_sym": self.K_sym,
            "edges": self.num_edges,
            "max_variable_degree": int(self.var_edges.shape[1]),
            "max_check_degree": int(self.check_edges.shape[1]),
        }


def _padded_groups(owner: np.ndarray, count: int) -> np.ndarray:
    degrees = np.bincount(owner, minlength=count)
    table = -np.ones((count, int(degrees.max())), dtype=np.int64)
    fill = np.zeros(count, dtype=np.int64)
    for edge, node in enumerate(owner):
        table[node, fill[node]] = edge
        fill[node] += 1
    return table


def _reduce(field: FieldTable, H: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Gauss-Jordan elimination of H over GF(q), scanning columns right to left.

    Returns (info_positions, parity_positions, P) where the parity symbol of
    pivot row j is sum_k P[j, k] * info[k].
    """
    R = H.copy()
    M, L = R.shape
    pivots: List[int] = []
    row = 0
    for col in range(L - 1, -1, -1):
        if row == M:
            break
        candidates = np.nonzero(R[row:, col])[0]
        if candidates.size == 0:
            continue
        pivot_row = row + int(candidates[0])
        if pivot_row != row:
            R[[row, pivot_row]] = R[[pivot_row, row]]
        R[row] = field.mul_vec(R[row], field.inv(int(R[row, col])))
        for other in range(M):
            if other != row and R[other, col] != 0:
                R[other] ^= field.mul_vec(R[row], int(R[other, col]))
        pivots.append(col)
        row += 1

    if row < M:
        raise LdpcConstructionError(f"parity-check matrix has rank {row} < M={M}")

    parity_positions = np.array(pivots, dtype=np.int64)
    info_mask = np.ones(L, dtype=bool)
    info_mask[parity_positions] = False
    info_positions = np.nonzero(info_mask)[0]
    parity_matrix = R[:, info_positions].copy()
    for arr in (parity_positions, info_positions, parity_matrix):
        arr.setflags(write=False)
    return info_positions, parity_positions, parity_matrix


def _peg_skeleton(L: int, M: int, variable_degree: int, rng: np.random.Generator) -> List[Set[int]]:
    """Progressive edge growth; returns the check set of every variable."""
    var_adj: List[Set[int]] = [set() for _ in range(L)]
    chk_adj: List[Set[int]] = [set() for _ in range(M)]
    chk_degree = np.zeros(M, dtype=np.int64)

    for var in range(L):
        for k in range(variable_degree):
            if k == 0:
                candidates = np.arange(M)
            else:
                reached = _reached_checks(var, var_adj, chk_adj, M)
                candidates = np.array(sorted(set(range(M)) - reached), dtype=np.int64)
            degrees = chk_degree[candidates]
            lightest = candidates[degrees == degrees.min()]
            chk = int(rng.choice(lightest))
            var_adj[var].add(chk)
            chk_adj[chk].add(var)
            chk_degree[chk] += 1
    return var_adj


def _reached_checks(var: int, var_adj: List[Set[int]], chk_adj: List[Set[int]], M: int) -> Set[int]:
    """
    Checks within the deepest BFS level from var that still leaves some
    check unreached (or all reachable checks if the tree stops growing).
    """
    reached = set(var_adj[var])
    frontier = set(reached)
    seen_vars = {var}
    while True:
        new_vars = {v for c in frontier for v in chk_adj[c]} - seen_vars
        seen_vars |= new_vars
        new_checks = {c for v in new_vars for c in var_adj[v]} - reached
        if not new_checks or len(reached) + len(new_checks) == M:
            return reached
        reached |= new_checks
        frontier = new_checks


def build_ldpc(field: FieldTable, L: int, M: int, variable_degree: int, seed: int) -> LdpcCode:
    """
    Seeded PEG skeleton with uniform nonzero GF(q) edge weights.

    Weights are redrawn (from the same seeded stream) if the first draw
    leaves H rank deficient.
    """
    if M >= L:
        raise LdpcConstructionError(f"need M < L, got M={M}, L={L}")
    if variable_degree < 2:
        raise LdpcConstructionError(f"variable degree must be >= 2, got {variable_degree}")
    if variable_degree > M:
        raise LdpcConstructionError(
            f"variable degree {variable_degree} exceeds the number of checks {M}"
        )
    if L * variable_degree < 2 * M:
        raise LdpcConstructionError(
            f"{L * variable_degree} edges cannot give all {M} checks degree >= 2"
        )

    rng = np.random.default_rng(seed)
    var_adj = _peg_skeleton(L, M, variable_degree, rng)
    skeleton = np.zeros((M, L), dtype=bool)
    for var, checks in enumerate(var_adj):
        skeleton[sorted(checks), var] = True

    last_error: Optional[LdpcConstructionError] = None
    for attempt in range(WEIGHT_REDRAWS):
        H = np.zeros((M, L), dtype=np.int64)
        H[skeleton] = rng.integers(1, field.q, size=int(skeleton.sum()))
        try:
            code = LdpcCode(field, H)
        except LdpcConstructionError as e:
            last_error = e
            logger.warning(f"Edge-weight draw {attempt} rejected: {e}")
            continue
        logger.info(
            f"Built ({L}, {L - M}) LDPC code over GF({field.q}), "
            f"{code.num_edges} edges, seed {seed}"
        )
        return code
    raise LdpcConstructionError(f"no valid edge-weight draw after {WEIGHT_REDRAWS} attempts: {last_error}")


def ldpc_encode(code: LdpcCode, w_symbols: np.ndarray) -> np.ndarray:
    """Systematic encoding: info symbols at code.info_positions."""
    w = np.asarray(w_symbols, dtype=np.int64)
    if w.shape != (code.K_sym,):
        raise ValueError(f"expected {code.K_sym} information symbols, got shape {w.shape}")
    products = code.field.mul_vec(code.parity_matrix, w[None, :])
    v = np.zeros(code.L, dtype=np.int64)
    v[code.info_positions] = w
    v[code.parity_positions] = np.bitwise_xor.reduce(products, axis=1)
    return v


def syndrome(code: LdpcCode, v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=np.int64)
    if v.shape != (code.L,):
        raise ValueError(f"expected {code.L} symbols, got shape {v.shape}")
    return np.bitwise_xor.reduce(code.field.mul_vec(code.H, v[None, :]), axis=1)


def is_codeword(code: LdpcCode, v: np.ndarray) -> bool:
    return not syndrome(code, v).any()


def walsh_hadamard(x: np.ndarray) -> np.ndarray:
    """Unnormalized WHT along the last axis; applying it twice scales by q."""
    x = np.asarray(x, dtype=np.float64)
    return x @ hadamard(x.shape[-1]).astype(np.float64)


@dataclass
class BeliefState:
    """Per-edge messages plus priors and beliefs for one (user, trial)."""
    v2c: np.ndarray
    c2v: np.ndarray
    priors: np.ndarray
    beliefs: np.ndarray
    collapse_resets: int = 0

    @classmethod
    def fresh(cls, code: LdpcCode) -> "BeliefState":
        uniform_edges = np.full((code.num_edges, code.q), 1.0 / code.q)
        uniform_vars = np.full((code.L, code.q), 1.0 / code.q)
        return cls(
            v2c=uniform_edges.copy(),
            c2v=uniform_edges.copy(),
            priors=uniform_vars.copy(),
            beliefs=uniform_vars.copy(),
        )


def _normalize_rows(pmfs: np.ndarray, floor: Optional[float] = None) -> Tuple[np.ndarray, int]:
    """Row-normalize; rows with no usable mass become uniform and are counted."""
    if floor is not None:
        pmfs = np.maximum(pmfs, floor)
    sums = pmfs.sum(axis=1)
    bad = ~(np.isfinite(sums) & (sums > 0))
    safe = np.where(bad, 1.0, sums)
    out = pmfs / safe[:, None]
    if bad.any():
        out[bad] = 1.0 / pmfs.shape[1]
    return out, int(bad.sum())


def _exclusive_products(stack: np.ndarray) -> np.ndarray:
    """Along axis 1, the product of every other slot (prefix * suffix)."""
    ones = np.ones_like(stack[:, :1])
    prefix = np.cumprod(np.concatenate([ones, stack[:, :-1]], axis=1), axis=1)
    suffix = np.cumprod(np.concatenate([ones, stack[:, :0:-1]], axis=1), axis=1)[:, ::-1]
    return prefix * suffix


def _gather(messages: np.ndarray, groups: np.ndarray, pad_value: float) -> Tuple[np.ndarray, np.ndarray]:
    mask = groups >= 0
    stacked = np.full(groups.shape + (messages.shape[1],), pad_value)
    stacked[mask] = messages[groups[mask]]
    return stacked, mask


def _variable_to_check(code: LdpcCode, priors: np.ndarray, c2v: np.ndarray) -> np.ndarray:
    stacked, mask = _gather(c2v, code.var_edges, 1.0)
    outgoing = _exclusive_products(stacked) * priors[:, None, :]
    v2c = np.empty_like(c2v)
    v2c[code.var_edges[mask]] = outgoing[mask]
    v2c, _ = _normalize_rows(v2c, PROBABILITY_FLOOR)
    return v2c


def _check_to_variable(code: LdpcCode, v2c: np.ndarray) -> np.ndarray:
    # pmf of h_e * v_e, then XOR-convolution over the other edges in the WHT domain
    weighted = np.take_along_axis(v2c, code.permute_in, axis=1)
    spectra = weighted @ code.hadamard_matrix
    stacked, mask = _gather(spectra, code.check_edges, 1.0)
    excluded = _exclusive_products(stacked)
    combined = np.empty_like(v2c)
    combined[code.check_edges[mask]] = excluded[mask] @ code.hadamard_matrix / code.q
    c2v = np.take_along_axis(combined, code.permute_out, axis=1)
    c2v, _ = _normalize_rows(c2v, PROBABILITY_FLOOR)
    return c2v


def bp_denoiser_round(
    code: LdpcCode,
    priors: np.ndarray,
    state: Optional[BeliefState] = None,
    iterations: int = 1,
) -> np.ndarray:
    """
    Run flooding BP for `iterations` rounds and return the L x q beliefs.

    The state's check-to-variable messages are used as the starting point,
    so passing the same state across calls continues the previous graph.
    With iterations == 0 the beliefs are the priors themselves.
    """
    priors = np.asarray(priors, dtype=np.float64)
    if priors.shape != (code.L, code.q):
        raise ValueError(f"priors must have shape {(code.L, code.q)}, got {priors.shape}")
    if state is None:
        state = BeliefState.fresh(code)
    state.priors = priors

    if iterations == 0:
        state.beliefs = priors.copy()
        return state.beliefs

    for _ in range(iterations):
        state.v2c = _variable_to_check(code, priors, state.c2v)
        state.c2v = _check_to_variable(code, state.v2c)

    stacked, _ = _gather(state.c2v, code.var_edges, 1.0)
    beliefs, collapsed = _normalize_rows(priors * stacked.prod(axis=1))
    if collapsed:
        state.collapse_resets += collapsed
        logger.warning(f"BP belief mass collapsed in {collapsed} section(s); reset to uniform")
    state.beliefs = beliefs
    return beliefs


def dumps_code(code: LdpcCode) -> str:
    """Text form: header 'q L M', then one line of 'var:weight' pairs per check."""
    lines = [f"{code.q} {code.L} {code.M}"]
    for m in range(code.M):
        cols = np.nonzero(code.H[m])[0]
        lines.append(" ".join(f"{int(c)}:{int(code.H[m, c])}" for c in cols))
    return "\n".join(lines) + "\n"


def loads_code(text: str, field: Optional[FieldTable] = None) -> LdpcCode:
    lines = [line.strip() for line in text.splitlines() if line.strip()]
    if not lines:
        raise LdpcFormatError("empty code description")
    try:
        q, L, M = (int(tok) for tok in lines[0].split())
    except ValueError as e:
        raise LdpcFormatError(f"bad header {lines[0]!r}: {e}") from e
    if len(lines) - 1 != M:
        raise LdpcFormatError(f"header announces {M} checks, found {len(lines) - 1}")
    if field is None:
        p = q.bit_length() - 1
        if 1 << p != q:
            raise LdpcFormatError(f"q={q} is not a power of two")
        field = make_field(p)
    elif field.q != q:
        raise LdpcFormatError(f"file is over GF({q}) but field is GF({field.q})")

    H = np.zeros((M, L), dtype=np.int64)
    for m, line in enumerate(lines[1:]):
        for pair in line.split():
            try:
                col, weight = (int(tok) for tok in pair.split(":"))
            except ValueError as e:
                raise LdpcFormatError(f"check {m}: bad entry {pair!r}") from e
            if not 0 <= col < L:
                raise LdpcFormatError(f"check {m}: column {col} out of range")
            H[m, col] = weight
    return LdpcCode(field, H)


def save_code(code: LdpcCode, path: Union[str, Path]) -> None:
    Path(path).write_text(dumps_code(code))
    logger.info(f"Code saved to {path}")


def load_code(path: Union[str, Path], field: Optional[FieldTable] = None) -> LdpcCode:
    return loads_code(Path(path).read_text(), field)
