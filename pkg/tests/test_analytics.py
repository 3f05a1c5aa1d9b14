# tests/test_analytics.py
"""Sign ledger statistics and seed aggregation"""

from types import SimpleNamespace

import numpy as np
import pandas as pd
import pytest

from analytics.signs import (
    SignLedger, flip_count_histogram, flip_counts, flips_from_initial, histogram_frame,
    median_settle_level, net_flip_difference, record_signs, settle_iteration_histogram, settle_levels,
)
from analytics.stats import (
    aggregate_metrics, confidence_interval, group_label, sparsest_levels_gap, write_report,
)
from lab.errors import LedgerMismatch, ShapeMismatch
from lab.pruning import Mask
from lab.utils import storage

ROWS = [
    [1, 1, -1, 1],
    [-1, -1, -1, 1],
    [1, -1, 1, 1],
    [1, -1, 1, 1],
]
MASKS = [[True] * 4] * 3 + [[True, True, True, False]]


def _ledger(rows=ROWS, masks=MASKS):
    ledger = SignLedger()
    for level, (row, keep) in enumerate(zip(rows, masks)):
        state = SimpleNamespace(weights=[0.5 * np.array([row], dtype=np.float64)])
        record_signs(ledger, state, Mask([np.array([keep])]), level)
    return ledger


class TestSignLedger:

    def test_one_row_per_level(self):
        ledger = _ledger()
        assert ledger.levels == 4
        assert ledger.matrix().shape == (4, 4)

    def test_pruned_entries_are_zero(self):
        ledger = _ledger()
        np.testing.assert_array_equal(ledger.matrix()[3], [1, -1, 1, 0])

    def test_rows_are_read_only(self):
        ledger = _ledger()
        with pytest.raises(ValueError):
            ledger.rows[0][0] = 0

    def test_level_must_be_next(self):
        ledger = _ledger()
        state = SimpleNamespace(weights=[np.ones((1, 4))])
        with pytest.raises(ValueError):
            record_signs(ledger, state, Mask([np.ones((1, 4), bool)]), 7)

    def test_shape_change_is_rejected(self):
        ledger = _ledger()
        state = SimpleNamespace(weights=[np.ones((2, 2))])
        with pytest.raises(ShapeMismatch):
            record_signs(ledger, state, Mask([np.ones((2, 2), bool)]), 4)

    def test_survives_storage(self, tmp_path):
        ledger = _ledger()
        storage.atomic_save_npz(tmp_path / 'signs.bin', ledger.to_arrays())
        restored = SignLedger.from_arrays(storage.load_npz(tmp_path / 'signs.bin'))
        np.testing.assert_array_equal(restored.matrix(), ledger.matrix())
        assert restored.shapes == ledger.shapes


class TestSignStatistics:

    def test_settle_levels_of_survivors(self):
        np.testing.assert_array_equal(settle_levels(_ledger()), [2, 1, 2])

    def test_settle_histogram(self):
        counts = settle_iteration_histogram(_ledger())
        np.testing.assert_array_equal(counts, [0, 1, 2, 0])
        assert counts.sum() == 3

    def test_flip_counts(self):
        np.testing.assert_array_equal(flip_counts(_ledger()), [2, 1, 1])
        np.testing.assert_array_equal(flip_count_histogram(_ledger()), [0, 2, 1, 0])

    def test_constant_signs_settle_at_zero(self):
        ledger = _ledger(rows=[ROWS[0]] * 3, masks=[[True] * 4] * 3)
        np.testing.assert_array_equal(settle_levels(ledger), [0, 0, 0, 0])
        assert median_settle_level(ledger) == 0.0

    def test_bounds(self):
        ledger = _ledger()
        assert settle_levels(ledger).max() <= ledger.levels - 1
        assert flip_counts(ledger).max() <= ledger.levels - 1

    def test_needs_two_levels(self):
        with pytest.raises(ValueError):
            settle_levels(_ledger(rows=ROWS[:1], masks=MASKS[:1]))

    def test_flips_from_initial(self):
        np.testing.assert_array_equal(flips_from_initial(_ledger()), [0, 2, 2, 2])

    def test_net_difference_with_itself_is_zero(self):
        np.testing.assert_array_equal(net_flip_difference(_ledger(), _ledger()), [0, 0, 0, 0])

    def test_net_difference_needs_matching_levels(self):
        with pytest.raises(LedgerMismatch):
            net_flip_difference(_ledger(), _ledger(rows=ROWS[:3], masks=MASKS[:3]))

    def test_histogram_frame(self):
        frame = histogram_frame(np.array([3, 0, 1]))
        assert list(frame.columns) == ['bin', 'count']
        assert frame['count'].tolist() == [3, 0, 1]


class TestConfidenceInterval:

    def test_three_values(self):
        mean, low, high = confidence_interval([1.0, 2.0, 3.0])
        assert mean == pytest.approx(2.0)
        # t(0.975, 2) = 4.302653, standard error 1 / sqrt(3)
        assert low == pytest.approx(2.0 - 2.484138, abs=1e-5)
        assert high == pytest.approx(2.0 + 2.484138, abs=1e-5)

    def test_identical_values_give_zero_width(self):
        assert confidence_interval([0.7, 0.7, 0.7]) == pytest.approx((0.7, 0.7, 0.7))

    def test_single_value(self):
        assert confidence_interval([0.4]) == (0.4, 0.4, 0.4)


def _metrics(run, seed, accs):
    return pd.DataFrame({
        'level': range(len(accs)),
        'sparsity': [1 - 0.8 ** i for i in range(len(accs))],
        'train_loss': [0.1] * len(accs),
        'test_acc': accs,
        'seed': seed,
        'scheme': run.split('_')[0],
        'run': run,
    })


class TestAggregation:

    @pytest.fixture
    def frame(self):
        return pd.concat([
            _metrics('lrr_magnitude_global_seed0', 0, [0.9, 0.88, 0.86]),
            _metrics('lrr_magnitude_global_seed1', 1, [0.92, 0.90, 0.84]),
            _metrics('imp_magnitude_global_seed0', 0, [0.9, 0.85, 0.80]),
            _metrics('imp_magnitude_global_seed1', 1, [0.92, 0.83, 0.78]),
        ], ignore_index=True)

    def test_group_label_strips_the_seed(self):
        assert group_label('lrr_snip_perturb2_seed13') == 'lrr_snip_perturb2'
        assert group_label('custom') == 'custom'

    def test_one_row_per_group_and_level(self, frame):
        table = aggregate_metrics(frame)
        assert len(table) == 6
        row = table[(table['group'] == 'lrr_magnitude_global') & (table['level'] == 2)].iloc[0]
        assert row['mean'] == pytest.approx(0.85)
        assert row['seeds'] == 2
        assert row['ci_low'] < row['mean'] < row['ci_high']

    def test_sparsest_levels_gap(self, frame):
        gap = sparsest_levels_gap(aggregate_metrics(frame), 'lrr_magnitude_global', 'imp_magnitude_global')
        np.testing.assert_allclose(gap.values, [0.0, 0.05, 0.06], atol=1e-12)

    def test_write_report(self, frame, tmp_path):
        written = write_report(aggregate_metrics(frame), tmp_path)
        names = sorted(p.name for p in written)
        assert names == ['summary_test_acc.csv', 'test_acc_imp_magnitude_global.dat',
                         'test_acc_lrr_magnitude_global.dat']
        lines = (tmp_path / 'test_acc_lrr_magnitude_global.dat').read_text().splitlines()
        assert lines[0].startswith('#')
        assert len(lines) == 4
        assert len(lines[1].split()) == 4

    def test_empty_frame(self):
        assert aggregate_metrics(pd.DataFrame()).empty
