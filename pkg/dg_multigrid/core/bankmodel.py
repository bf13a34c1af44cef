"""
Instruction-level model of banked shared-memory accesses.

A thread block of m x m threads (m = 2(k+1), one patch slice) multiplies
1D matrices into the slice stored in shared memory. In 3D each thread
keeps its z-column in registers, so shared memory only sees the x- and
y-contractions of every z-slice. Accesses are grouped into warps of 32
lanes; lanes that read the same word are served by one broadcast.
"""

import logging
from dataclasses import dataclass
from typing import Dict, List, Tuple

import numpy as np
from scipy.optimize import linear_sum_assignment

from dg_multigrid.core.models import LayoutKind, PhaseRow, Precision
from dg_multigrid.utils.common.constants import (BYTES_PER_BANK_CYCLE,
                                                 MAX_BANK_DEGREE,
                                                 MIN_BANK_DEGREE, WARP_SIZE)
from dg_multigrid.utils.common.validation import validate_dim

logger = logging.getLogger("dg-multigrid.bankmodel")


@dataclass(frozen=True)
class BankConfig:
    """Shared memory with num_banks banks of word_bytes each."""

    num_banks: int = 16
    word_bytes: int = 8

    def __post_init__(self) -> None:
        if self.num_banks * self.word_bytes != BYTES_PER_BANK_CYCLE:
            raise ValueError(
                f"{self.num_banks} banks of {self.word_bytes} bytes do not make "
                f"{BYTES_PER_BANK_CYCLE} bytes per cycle"
            )

    @classmethod
    def for_precision(cls, precision: Precision) -> "BankConfig":
        if Precision(precision) is Precision.DOUBLE:
            return cls(num_banks=16, word_bytes=8)
        return cls(num_banks=32, word_bytes=4)


@dataclass(frozen=True)
class WarpAccess:
    """Word addresses requested by the lanes of one warp in one instruction."""

    phase: str
    addresses: Tuple[int, ...]

    def __post_init__(self) -> None:
        if len(self.addresses) > WARP_SIZE:
            raise ValueError(f"A warp has at most {WARP_SIZE} lanes")
        if any(a < 0 for a in self.addresses):
            raise ValueError("Addresses must be non-negative")


@dataclass(frozen=True)
class AccessTrace:
    accesses: Tuple[WarpAccess, ...]

    def phases(self) -> List[str]:
        return list(dict.fromkeys(access.phase for access in self.accesses))


def wavefronts(addresses: Tuple[int, ...], config: BankConfig) -> int:
    """Largest number of distinct words any single bank must deliver."""
    if not addresses:
        return 0
    unique = np.unique(np.asarray(addresses, dtype=np.int64))
    return int(np.bincount(unique % config.num_banks).max())


def count_excess_wavefronts(trace: AccessTrace, config: BankConfig) -> int:
    """Sum over all accesses of wavefronts - 1."""
    return sum(
        max(wavefronts(access.addresses, config) - 1, 0) for access in trace.accesses
    )


def phase_table(trace: AccessTrace, config: BankConfig) -> List[PhaseRow]:
    """Wavefront and excess totals per phase, in trace order."""
    totals: Dict[str, List[int]] = {phase: [0, 0] for phase in trace.phases()}
    for access in trace.accesses:
        count = wavefronts(access.addresses, config)
        totals[access.phase][0] += count
        totals[access.phase][1] += max(count - 1, 0)
    return [
        PhaseRow(phase=phase, wavefronts=counts[0], excess=counts[1])
        for phase, counts in totals.items()
    ]


class SliceLayout:
    """Row-major storage of m x m z-slices."""

    def __init__(self, m: int, config: BankConfig) -> None:
        self.m = m
        self.config = config

    def address(self, z: int, row: int, col: int) -> int:
        return z * self.m * self.m + row * self.m + col


class ConflictFreeLayout(SliceLayout):
    """
    Row-major storage with a per-row column permutation.

    Column c of row r is stored at position offsets[r, c] of that row, so
    rows stay contiguous. The offsets are chosen so that for every c the
    words (r, c) of all rows fall into distinct banks, which makes column
    accesses conflict-free. Slice z rotates the columns by z.
    """

    def __init__(self, m: int, config: BankConfig) -> None:
        super().__init__(m, config)
        self.offsets = row_offsets(m, config.num_banks)

    def address(self, z: int, row: int, col: int) -> int:
        position = self.offsets[row, (col + z) % self.m]
        return z * self.m * self.m + row * self.m + int(position)


def row_offsets(m: int, num_banks: int) -> np.ndarray:
    """
    Column permutation per row, shape (m, m).

    Row r occupies banks (r*m + j) mod B for j < m. Padding the row-bank
    multigraph with B - m dummy rows makes it m-regular, and it then
    splits into m perfect matchings; matching c assigns column c.

    Raises:
        ValueError: If a row does not fit into the banks
    """
    banks = num_banks
    if m > banks:
        raise ValueError(f"Rows of {m} words exceed {banks} banks")
    edges = np.zeros((banks, banks), dtype=np.int64)
    for r in range(m):
        edges[r, (r * m + np.arange(m)) % banks] += 1
    deficit = np.repeat(np.arange(banks), m - edges[:m].sum(axis=0))
    for dummy, chunk in enumerate(np.split(deficit, banks - m) if banks > m else []):
        np.add.at(edges[m + dummy], chunk, 1)

    offsets = np.empty((m, m), dtype=np.int64)
    for col in range(m):
        rows, assigned = linear_sum_assignment((edges == 0).astype(np.int64))
        if np.any(edges[rows, assigned] == 0):
            raise RuntimeError(f"No conflict-free matching for column {col}")
        edges[rows, assigned] -= 1
        offsets[:, col] = (assigned[:m] - rows[:m] * m) % banks
    return offsets


def make_layout(layout: LayoutKind, m: int, config: BankConfig) -> SliceLayout:
    if LayoutKind(layout) is LayoutKind.CONFLICT_FREE:
        return ConflictFreeLayout(m, config)
    return SliceLayout(m, config)


def contraction_trace(
    k: int, dim: int, layout: LayoutKind, config: BankConfig
) -> AccessTrace:
    """
    Shared-memory reads of one sum-factorized patch application.

    Thread (tx, ty) has lane id tx + m*ty. At step s of the x-contraction it
    reads word (tx, s) of the slice, at step s of the y-contraction word
    (s, tx). Slices are visited z = 0..m-1 in 3D and once in 2D.

    Raises:
        ValueError: If k is outside 3..7 or dim is unsupported
    """
    validate_dim(dim)
    if not MIN_BANK_DEGREE <= k <= MAX_BANK_DEGREE:
        raise ValueError(
            f"Unsupported degree {k}; expected {MIN_BANK_DEGREE}..{MAX_BANK_DEGREE}"
        )
    m = 2 * (k + 1)
    storage = make_layout(layout, m, config)
    lanes = np.arange(m * m)
    tx = lanes % m
    warps = [slice(start, start + WARP_SIZE) for start in range(0, m * m, WARP_SIZE)]

    accesses: List[WarpAccess] = []
    for z in range(m if dim == 3 else 1):
        for phase in ("x-contraction", "y-contraction"):
            for s in range(m):
                if phase == "x-contraction":
                    words = [storage.address(z, int(t), s) for t in tx]
                else:
                    words = [storage.address(z, s, int(t)) for t in tx]
                for warp in warps:
                    accesses.append(WarpAccess(phase, tuple(words[warp])))
    logger.debug(f"Trace for k={k}, dim={dim}, {LayoutKind(layout).value}: {len(accesses)} accesses")
    return AccessTrace(tuple(accesses))
