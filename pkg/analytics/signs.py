# analytics/signs.py
"""
Sign Ledger

Per-weight sign history across pruning levels and the statistics built on
it: the level at which signs settle, how often they flip, and how many
signs differ from their level-0 value.

Only prunable weight tensors are tracked. Rows hold sign(w) * mask with
values in {-1, 0, +1}; sign(0) = 0 never counts as a flip.
"""

import logging
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Dict, List, Tuple

import numpy as np
import pandas as pd

from lab.errors import LedgerMismatch, ShapeMismatch

if TYPE_CHECKING:
    from lab.network import ModelState
    from lab.pruning import Mask

logger = logging.getLogger(__name__)


@dataclass
class SignLedger:
    """Append-only sign rows, one per recorded level"""
    shapes: List[Tuple[int, ...]] = field(default_factory=list)
    rows: List[np.ndarray] = field(default_factory=list)
    masks: List[np.ndarray] = field(default_factory=list)

    @property
    def levels(self) -> int:
        return len(self.rows)

    @property
    def size(self) -> int:
        return int(sum(np.prod(s) for s in self.shapes))

    def matrix(self) -> np.ndarray:
        """levels x parameters int8 matrix"""
        if not self.rows:
            return np.zeros((0, self.size), dtype=np.int8)
        return np.vstack(self.rows)

    def survivors(self) -> np.ndarray:
        """Parameters kept at the final recorded level"""
        if not self.masks:
            return np.zeros(0, dtype=bool)
        return self.masks[-1]

    def to_arrays(self) -> Dict[str, np.ndarray]:
        arrays = {f'shape.{i}': np.array(s, dtype=np.int64) for i, s in enumerate(self.shapes)}
        arrays['signs'] = self.matrix()
        arrays['masks'] = np.vstack(self.masks) if self.masks else np.zeros((0, self.size), dtype=bool)
        return arrays

    @classmethod
    def from_arrays(cls, arrays: Dict[str, np.ndarray]) -> 'SignLedger':
        count = sum(1 for name in arrays if name.startswith('shape.'))
        ledger = cls(shapes=[tuple(int(v) for v in arrays[f'shape.{i}']) for i in range(count)])
        for row, mask in zip(arrays['signs'], arrays['masks']):
            ledger._append(row.astype(np.int8), mask.astype(bool))
        return ledger

    def _append(self, row: np.ndarray, mask: np.ndarray) -> None:
        row = row.copy()
        mask = mask.copy()
        row.flags.writeable = False
        mask.flags.writeable = False
        self.rows.append(row)
        self.masks.append(mask)


def record_signs(ledger: SignLedger, state: 'ModelState', mask: 'Mask', level: int) -> SignLedger:
    """
    Append sign(w) * mask for every weight tensor

    Raises:
        ValueError: level is not the next row index
        ShapeMismatch: tensors disagree with the mask or with earlier rows
    """
    if level != ledger.levels:
        raise ValueError(f"ledger holds {ledger.levels} levels, cannot record level {level}")
    weights = state.weights
    tensors = list(mask.tensors) if mask is not None else [np.ones(w.shape, dtype=bool) for w in weights]
    shapes = [tuple(w.shape) for w in weights]
    if [tuple(m.shape) for m in tensors] != shapes:
        raise ShapeMismatch("mask shapes do not match the weight tensors")
    if ledger.shapes and ledger.shapes != shapes:
        raise ShapeMismatch(f"ledger tracks {ledger.shapes}, state has {shapes}")
    if not ledger.shapes:
        ledger.shapes = shapes

    flat_mask = np.concatenate([np.asarray(m, dtype=bool).ravel() for m in tensors])
    flat_signs = np.concatenate([np.sign(w).ravel() for w in weights]).astype(np.int8)
    ledger._append(flat_signs * flat_mask, flat_mask)
    return ledger


def _carried_signs(signs: np.ndarray) -> np.ndarray:
    """Replace zeros with the last nonzero sign before them (leading zeros stay 0)"""
    carried = signs.copy()
    for level in range(1, carried.shape[0]):
        gap = carried[level] == 0
        carried[level, gap] = carried[level - 1, gap]
    return carried


def _changes(ledger: SignLedger) -> np.ndarray:
    """(levels - 1) x survivors matrix of genuine sign changes"""
    if ledger.levels < 2:
        raise ValueError(f"need at least two recorded levels, got {ledger.levels}")
    signs = _carried_signs(ledger.matrix()[:, ledger.survivors()])
    previous, current = signs[:-1], signs[1:]
    return (previous != 0) & (current != 0) & (previous != current)


def settle_levels(ledger: SignLedger) -> np.ndarray:
    """Earliest level after which each surviving weight keeps its sign"""
    changes = _changes(ledger)
    levels = np.zeros(changes.shape[1], dtype=np.int64)
    changed = changes.any(axis=0)
    # last change between level l-1 and l settles the weight at l
    last = changes.shape[0] - 1 - np.argmax(changes[::-1], axis=0)
    levels[changed] = last[changed] + 1
    return levels


def settle_iteration_histogram(ledger: SignLedger) -> np.ndarray:
    """Counts of surviving weights per settle level, bins 0..levels-1"""
    return np.bincount(settle_levels(ledger), minlength=ledger.levels)


def flip_counts(ledger: SignLedger) -> np.ndarray:
    return _changes(ledger).sum(axis=0)


def flip_count_histogram(ledger: SignLedger) -> np.ndarray:
    """Counts of surviving weights per number of sign flips, bins 0..levels-1"""
    return np.bincount(flip_counts(ledger), minlength=ledger.levels)


def flips_from_initial(ledger: SignLedger) -> np.ndarray:
    """Per level, weights whose nonzero sign differs from their nonzero level-0 sign"""
    signs = ledger.matrix()
    if signs.shape[0] == 0:
        return np.zeros(0, dtype=np.int64)
    initial = signs[0]
    differs = (signs != 0) & (initial != 0) & (signs != initial)
    return differs.sum(axis=1).astype(np.int64)


def net_flip_difference(ledger_a: SignLedger, ledger_b: SignLedger) -> np.ndarray:
    """
    flips_from_initial(A) - flips_from_initial(B), level by level

    Raises:
        LedgerMismatch: different level counts or parameter layouts
    """
    if ledger_a.levels != ledger_b.levels:
        raise LedgerMismatch(f"{ledger_a.levels} levels vs {ledger_b.levels} levels")
    if ledger_a.shapes != ledger_b.shapes:
        raise LedgerMismatch(f"parameter layouts differ: {ledger_a.shapes} vs {ledger_b.shapes}")
    return flips_from_initial(ledger_a) - flips_from_initial(ledger_b)


def median_settle_level(ledger: SignLedger) -> float:
    levels = settle_levels(ledger)
    return float(np.median(levels)) if levels.size else float('nan')


def histogram_frame(counts: np.ndarray) -> pd.DataFrame:
    """(bin, count) table for CSV export"""
    return pd.DataFrame({'bin': np.arange(len(counts)), 'count': np.asarray(counts, dtype=np.int64)})
