"""Tests for the shared-memory bank conflict model."""

import numpy as np
import pytest

from dg_multigrid.core.bankmodel import (AccessTrace, BankConfig,
                                         ConflictFreeLayout, WarpAccess,
                                         contraction_trace,
                                         count_excess_wavefronts, phase_table,
                                         row_offsets, wavefronts)
from dg_multigrid.core.models import LayoutKind, Precision

DOUBLE = BankConfig.for_precision(Precision.DOUBLE)
SINGLE = BankConfig.for_precision(Precision.SINGLE)


def single_access(addresses, config):
    trace = AccessTrace((WarpAccess("load", tuple(addresses)),))
    return count_excess_wavefronts(trace, config)


def test_bank_configs():
    """Double words use 16 banks, single words 32."""
    assert (DOUBLE.num_banks, DOUBLE.word_bytes) == (16, 8)
    assert (SINGLE.num_banks, SINGLE.word_bytes) == (32, 4)
    with pytest.raises(ValueError):
        BankConfig(num_banks=16, word_bytes=4)


def test_warp_access_validation():
    """A warp has at most 32 lanes and non-negative addresses."""
    with pytest.raises(ValueError):
        WarpAccess("load", tuple(range(33)))
    with pytest.raises(ValueError):
        WarpAccess("load", (0, -1))


def test_broadcast_is_free():
    """All lanes reading one word cost one wavefront."""
    assert single_access([5] * 32, DOUBLE) == 0
    assert wavefronts((), DOUBLE) == 0


def test_unit_stride_is_free():
    """Lane i reading word i hits every bank once."""
    assert single_access(range(32), SINGLE) == 0


def test_stride_eight_serializes():
    """Stride 8 on 16 banks lands in two banks, 16 words each."""
    assert single_access([8 * i for i in range(32)], DOUBLE) == 15


def test_lane_order_does_not_matter(rng):
    """Permuting lanes keeps the wavefront count."""
    addresses = rng.integers(0, 200, size=32)
    shuffled = rng.permutation(addresses)
    assert wavefronts(tuple(addresses), DOUBLE) == wavefronts(tuple(shuffled), DOUBLE)


@pytest.mark.parametrize("m,banks", [(8, 16), (10, 16), (16, 16), (14, 32), (16, 32)])
def test_row_offsets_are_permutations(m, banks):
    """Each row keeps its words; each column spreads over distinct banks."""
    offsets = row_offsets(m, banks)
    for row in offsets:
        assert sorted(row.tolist()) == list(range(m))
    rows = np.arange(m)
    for col in range(m):
        bank_of = (rows * m + offsets[:, col]) % banks
        assert np.unique(bank_of).size == m


def test_row_offsets_too_wide():
    """Rows wider than the bank count cannot be spread."""
    with pytest.raises(ValueError):
        row_offsets(18, 16)


def test_conflict_free_layout_is_a_bijection():
    """Every (z, row, col) maps to its own word."""
    layout = ConflictFreeLayout(8, DOUBLE)
    words = {layout.address(z, r, c) for z in range(8) for r in range(8) for c in range(8)}
    assert words == set(range(512))


@pytest.mark.parametrize("k", range(3, 8))
@pytest.mark.parametrize("config", [DOUBLE, SINGLE])
def test_conflict_free_has_no_excess(k, config):
    """The permuted layout avoids all conflicts in 3D."""
    trace = contraction_trace(k, 3, LayoutKind.CONFLICT_FREE, config)
    assert count_excess_wavefronts(trace, config) == 0


@pytest.mark.parametrize("k", range(3, 8))
def test_basic_layout_conflicts(k):
    """Row-major storage serializes column reads on 16 banks."""
    trace = contraction_trace(k, 3, LayoutKind.BASIC, DOUBLE)
    assert count_excess_wavefronts(trace, DOUBLE) > 0


def test_basic_layout_counts_k3():
    """k=3 column reads hit 4 words per bank; rows are free."""
    trace = contraction_trace(3, 2, LayoutKind.BASIC, DOUBLE)
    assert count_excess_wavefronts(trace, DOUBLE) == 48
    trace3d = contraction_trace(3, 3, LayoutKind.BASIC, DOUBLE)
    assert count_excess_wavefronts(trace3d, DOUBLE) == 8 * 48


def test_phase_table():
    """Per-phase totals follow the trace order."""
    trace = contraction_trace(3, 2, LayoutKind.BASIC, DOUBLE)
    rows = phase_table(trace, DOUBLE)
    assert [row["phase"] for row in rows] == ["x-contraction", "y-contraction"]
    assert rows[0] == {"phase": "x-contraction", "wavefronts": 64, "excess": 48}
    assert rows[1] == {"phase": "y-contraction", "wavefronts": 16, "excess": 0}
    assert sum(row["excess"] for row in rows) == count_excess_wavefronts(trace, DOUBLE)


@pytest.mark.parametrize("k,dim", [(0, 3), (2, 3), (8, 3), (3, 4)])
def test_trace_rejects_bad_input(k, dim):
    """Degrees outside 3..7 and unsupported dimensions are rejected."""
    with pytest.raises(ValueError):
        contraction_trace(k, dim, LayoutKind.BASIC, DOUBLE)
