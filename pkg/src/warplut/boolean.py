"""Exact Boolean-function machinery.

Truth tables, their signed (Walsh) coefficient form, the catalog of all
sixteen 2-input gates, and projection from real coefficients back to
the nearest truth table.

Index conventions shared by the whole package:

* Corner index ``k``: entry ``k`` of a truth table is the output for the
  input assignment whose bits are the binary digits of ``k`` with input 0
  as the most significant bit.  For two inputs (a, b) the entries are
  ordered a=0,b=0 / 0,1 / 1,0 / 1,1 so the identity-on-a gate reads "0011".
* Coefficient index ``t``: coefficient ``t`` multiplies the product of the
  signed inputs in subset ``S``, where input ``j`` is in ``S`` iff bit ``j``
  (least significant = input 0) of ``t`` is set.  For two inputs the order
  is (constant, a, b, a*b).

Signs follow the {0,1} -> {-1,+1} character convention: the weight of
corner ``k`` in coefficient ``t`` is the product of the signed bits of
``k`` selected by ``t``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import ArityError, ValidationError

# Hard cap on node arity: table size and coefficient count are 2**n.
MAX_ARITY = 6


def _check_arity(n: int) -> None:
    if not isinstance(n, (int, np.integer)) or isinstance(n, bool):
        raise ArityError(f"arity must be an int, got {type(n).__name__}")
    if not 1 <= n <= MAX_ARITY:
        raise ArityError(f"arity must be in [1, {MAX_ARITY}], got {n}")


@dataclass(frozen=True)
class TruthTable:
    """A Boolean function of ``arity`` inputs as its 2**arity output bits."""

    arity: int
    bits: tuple[int, ...]

    def __post_init__(self) -> None:
        _check_arity(self.arity)
        if len(self.bits) != 2 ** self.arity:
            raise ValidationError(
                f"table for arity {self.arity} needs {2 ** self.arity} bits, "
                f"got {len(self.bits)}"
            )
        if any(b not in (0, 1) for b in self.bits):
            raise ValidationError("table bits must all be 0 or 1")

    @classmethod
    def from_string(cls, text: str) -> "TruthTable":
        """Parse a table from its '0'/'1' string, e.g. "0110" for XOR."""
        if not text or any(ch not in "01" for ch in text):
            raise ValidationError(f"table string must be '0'/'1' chars, got {text!r}")
        n = int(math.log2(len(text)))
        if 2 ** n != len(text):
            raise ValidationError(f"table string length must be a power of two, got {len(text)}")
        return cls(n, tuple(int(ch) for ch in text))

    def to_string(self) -> str:
        return "".join(str(b) for b in self.bits)

    def signed(self) -> np.ndarray:
        """Outputs remapped 0 -> -1, 1 -> +1, as float64."""
        return 2.0 * np.asarray(self.bits, dtype=np.float64) - 1.0

    def evaluate(self, inputs) -> int:
        """Output bit for one assignment of {0,1} inputs, input 0 first."""
        inputs = tuple(inputs)
        if len(inputs) != self.arity:
            raise ValidationError(f"expected {self.arity} inputs, got {len(inputs)}")
        if any(v not in (0, 1) for v in inputs):
            raise ValidationError("inputs must be 0 or 1")
        corner = 0
        for v in inputs:
            corner = (corner << 1) | v
        return self.bits[corner]


@dataclass(frozen=True)
class WalshCoeffs:
    """Real coefficients over input subsets; see module header for index order."""

    arity: int
    values: tuple[float, ...]

    def __post_init__(self) -> None:
        _check_arity(self.arity)
        if len(self.values) != 2 ** self.arity:
            raise ValidationError(
                f"coefficients for arity {self.arity} need {2 ** self.arity} values, "
                f"got {len(self.values)}"
            )

    @classmethod
    def from_array(cls, arity: int, values) -> "WalshCoeffs":
        arr = np.asarray(values, dtype=np.float64).ravel()
        return cls(arity, tuple(float(v) for v in arr))

    def as_array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=np.float64)


@lru_cache(maxsize=MAX_ARITY)
def char_matrix(arity: int) -> np.ndarray:
    """Character matrix M with M[t, k] = prod of signed bits of corner k in subset t.

    Rows are coefficient indices, columns corner indices.  Entries are +-1
    (int8); M @ M.T == 2**arity * I, which makes the transform exact in
    integer arithmetic.
    """
    _check_arity(arity)
    size = 2 ** arity
    m = np.empty((size, size), dtype=np.int8)
    for t in range(size):
        for k in range(size):
            # Input j corresponds to bit j of t and, reading from the other
            # end, bit (arity-1-j) of k.
            prod = 1
            for j in range(arity):
                if (t >> j) & 1:
                    bit = (k >> (arity - 1 - j)) & 1
                    prod *= 1 if bit else -1
            m[t, k] = prod
    m.setflags(write=False)
    return m


def walsh_transform(table: TruthTable) -> WalshCoeffs:
    """Coefficients of the signed multilinear form of ``table``.

    The resulting polynomial l(x) = sum_t c_t * prod_{j in t} (2 x_j - 1)
    equals the signed output (+-1) on every corner.  All values are exact
    multiples of 2**-arity.
    """
    n = table.arity
    signed = 2 * np.asarray(table.bits, dtype=np.int64) - 1
    sums = char_matrix(n).astype(np.int64) @ signed
    return WalshCoeffs(n, tuple(float(s) / (2 ** n) for s in sums))


def corner_logits(coeffs: WalshCoeffs) -> np.ndarray:
    """Value of the coefficient polynomial at every corner, corner order."""
    return coeffs.as_array() @ char_matrix(coeffs.arity).astype(np.float64)


def corner_logit(coeffs: WalshCoeffs, corner: int) -> float:
    """Value of the coefficient polynomial at one corner."""
    size = 2 ** coeffs.arity
    if not 0 <= corner < size:
        raise ValidationError(f"corner must be in [0, {size}), got {corner}")
    col = char_matrix(coeffs.arity)[:, corner].astype(np.float64)
    return float(coeffs.as_array() @ col)


def nearest_truth_table(coeffs: WalshCoeffs) -> TruthTable:
    """Sign-threshold every corner value; exact zeros round to 1.

    Invariant under positive rescaling of the coefficients.
    """
    bits = corner_logits(coeffs) >= 0.0
    return TruthTable(coeffs.arity, tuple(int(b) for b in bits))


@dataclass(frozen=True)
class GateCatalogEntry:
    gate_id: int
    name: str
    expression: str
    table: TruthTable
    coeffs: WalshCoeffs


# All sixteen 2-input gates.  Coefficient order (const, a, b, ab); table
# strings read corners 00, 01, 10, 11.
_CATALOG_ROWS = (
    (0, "CONST0", "0", "0000", (-1.0, 0.0, 0.0, 0.0)),
    (1, "CONST1", "1", "1111", (1.0, 0.0, 0.0, 0.0)),
    (2, "AND", "a & b", "0001", (-0.5, 0.5, 0.5, 0.5)),
    (3, "OR", "a | b", "0111", (0.5, 0.5, 0.5, -0.5)),
    (4, "XOR", "a ^ b", "0110", (0.0, 0.0, 0.0, -1.0)),
    (5, "XNOR", "!(a ^ b)", "1001", (0.0, 0.0, 0.0, 1.0)),
    (6, "NAND", "!(a & b)", "1110", (0.5, -0.5, -0.5, -0.5)),
    (7, "NOR", "!(a | b)", "1000", (-0.5, -0.5, -0.5, 0.5)),
    (8, "A_AND_NOT_B", "a & !b", "0010", (-0.5, 0.5, -0.5, -0.5)),
    (9, "NOT_A_AND_B", "!a & b", "0100", (-0.5, -0.5, 0.5, -0.5)),
    (10, "ID_A", "a", "0011", (0.0, 1.0, 0.0, 0.0)),
    (11, "NOT_A", "!a", "1100", (0.0, -1.0, 0.0, 0.0)),
    (12, "ID_B", "b", "0101", (0.0, 0.0, 1.0, 0.0)),
    (13, "NOT_B", "!b", "1010", (0.0, 0.0, -1.0, 0.0)),
    (14, "IMP_A_B", "!a | b", "1101", (0.5, -0.5, 0.5, 0.5)),
    (15, "IMP_B_A", "a | !b", "1011", (0.5, 0.5, -0.5, 0.5)),
)


@lru_cache(maxsize=1)
def gate_catalog() -> tuple[GateCatalogEntry, ...]:
    """The sixteen 2-input gates in their canonical id order."""
    return tuple(
        GateCatalogEntry(
            gate_id=gid,
            name=name,
            expression=expr,
            table=TruthTable.from_string(tab),
            coeffs=WalshCoeffs(2, coeffs),
        )
        for gid, name, expr, tab, coeffs in _CATALOG_ROWS
    )


@lru_cache(maxsize=1)
def _table_to_gate_id() -> dict[tuple[int, ...], int]:
    return {entry.table.bits: entry.gate_id for entry in gate_catalog()}


def classify_gate(table: TruthTable) -> int:
    """Catalog id of a 2-input truth table."""
    if table.arity != 2:
        raise ValidationError(f"gate catalog covers arity 2 only, got arity {table.arity}")
    return _table_to_gate_id()[table.bits]


def gate_name(gate_id: int) -> str:
    if not 0 <= gate_id < 16:
        raise ValidationError(f"gate id must be in [0, 16), got {gate_id}")
    return gate_catalog()[gate_id].name


@lru_cache(maxsize=1)
def gate_tables_matrix() -> np.ndarray:
    """All 16 gate tables stacked as a read-only (16, 4) float64 {0,1} matrix."""
    mat = np.asarray([entry.table.bits for entry in gate_catalog()], dtype=np.float64)
    mat.setflags(write=False)
    return mat


@lru_cache(maxsize=1)
def gate_id_by_code() -> np.ndarray:
    """Lookup from a packed 2-input table (bits as an MSB-first nibble) to gate id."""
    arr = np.empty(16, dtype=np.int64)
    for entry in gate_catalog():
        code = int(entry.table.to_string(), 2)
        arr[code] = entry.gate_id
    arr.setflags(write=False)
    return arr


def classify_gate_bits(bits: np.ndarray) -> np.ndarray:
    """Gate ids for a stack of 2-input tables given as (..., 4) {0,1} arrays."""
    bits = np.asarray(bits)
    if bits.shape[-1] != 4:
        raise ValidationError(f"expected 4 table bits on the last axis, got {bits.shape[-1]}")
    codes = bits.astype(np.int64) @ np.asarray([8, 4, 2, 1], dtype=np.int64)
    return gate_id_by_code()[codes]
