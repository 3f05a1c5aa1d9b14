# tests/test_storage.py
"""Atomic writes and the run directory layout"""

import numpy as np
import pandas as pd
import pytest

from lab.utils import storage


class TestAtomicWrites:

    def test_creates_parent_directories(self, tmp_path):
        path = storage.atomic_write_text(tmp_path / 'a' / 'b' / 'note.txt', 'hello')
        assert path.read_text() == 'hello'

    def test_replaces_existing_file_without_leftovers(self, tmp_path):
        target = tmp_path / 'note.txt'
        storage.atomic_write_text(target, 'first')
        storage.atomic_write_text(target, 'second')
        assert target.read_text() == 'second'
        assert [p.name for p in tmp_path.iterdir()] == ['note.txt']

    def test_csv_uses_lf_and_no_index(self, tmp_path):
        path = storage.atomic_write_csv(tmp_path / 'x.csv', pd.DataFrame({'a': [1, 2], 'b': [3, 4]}))
        raw = path.read_bytes()
        assert b'\r\n' not in raw
        assert raw == b'a,b\n1,3\n2,4\n'

    def test_npz_keeps_names_and_values(self, tmp_path):
        arrays = {'weight.0': np.arange(6.0).reshape(2, 3), 'flag': np.array(True)}
        loaded = storage.load_npz(storage.atomic_save_npz(tmp_path / 'c.npz', arrays))
        assert set(loaded) == {'weight.0', 'flag'}
        np.testing.assert_array_equal(loaded['weight.0'], arrays['weight.0'])


class TestRunLayout:

    def _save(self, run_dir, level):
        storage.save_level(run_dir, level, {'weight.0': np.full((2, 2), level, dtype=float)},
                           [np.eye(2, dtype=bool)])

    def test_level_paths(self, tmp_path):
        assert storage.checkpoint_path(tmp_path, 3) == tmp_path / 'level_03' / 'checkpoint.npz'
        assert storage.mask_path(tmp_path, 12) == tmp_path / 'level_12' / 'mask.npz'

    def test_completed_levels_stop_at_first_gap(self, tmp_path):
        for level in (0, 1, 3):
            self._save(tmp_path, level)
        assert storage.completed_levels(tmp_path) == [0, 1]

    def test_mask_without_checkpoint_is_incomplete(self, tmp_path):
        self._save(tmp_path, 0)
        storage.atomic_save_npz(storage.mask_path(tmp_path, 1), {'mask.0': np.ones((2, 2), bool)})
        assert storage.completed_levels(tmp_path) == [0]

    def test_level_round_trip(self, tmp_path):
        self._save(tmp_path, 2)
        checkpoint = storage.load_level_checkpoint(tmp_path, 2)
        assert 'format_version' not in checkpoint
        np.testing.assert_array_equal(checkpoint['weight.0'], np.full((2, 2), 2.0))
        np.testing.assert_array_equal(storage.load_level_mask(tmp_path, 2)[0], np.eye(2, dtype=bool))

    def test_wrong_format_version(self, tmp_path):
        storage.atomic_save_npz(storage.checkpoint_path(tmp_path, 0), {'format_version': np.array(99)})
        with pytest.raises(ValueError):
            storage.load_level_checkpoint(tmp_path, 0)

    def test_prefix_helpers(self):
        arrays = storage.with_prefix({'0': np.zeros(1)}, 'velocity')
        assert list(arrays) == ['velocity.0']
        assert list(storage.split_prefixed({**arrays, 'weight.0': np.zeros(1)}, 'velocity')) == ['0']


class TestMetrics:

    ROWS = [
        {'level': 0, 'sparsity': 0.0, 'train_loss': 0.5, 'test_acc': 0.8, 'seed': 1, 'scheme': 'lrr'},
        {'level': 1, 'sparsity': 0.2, 'train_loss': 0.4, 'test_acc': 0.82, 'seed': 1, 'scheme': 'lrr'},
    ]

    def test_write_and_read(self, tmp_path):
        run_dir = tmp_path / 'lrr_magnitude_global_seed1'
        storage.write_metrics(run_dir, self.ROWS)
        lines = (run_dir / 'metrics.csv').read_text().splitlines()
        assert lines[0] == ','.join(storage.METRICS_COLUMNS)
        frame = storage.read_metrics(run_dir)
        assert frame['run'].unique().tolist() == ['lrr_magnitude_global_seed1']
        assert frame['test_acc'].tolist() == [0.8, 0.82]

    def test_missing_columns(self, tmp_path):
        storage.atomic_write_csv(tmp_path / 'metrics.csv', pd.DataFrame({'level': [0]}))
        with pytest.raises(ValueError):
            storage.read_metrics(tmp_path)

    def test_find_run_dirs(self, tmp_path):
        storage.write_metrics(tmp_path / 'b', self.ROWS)
        storage.write_metrics(tmp_path / 'a', self.ROWS)
        (tmp_path / 'empty').mkdir()
        assert [p.name for p in storage.find_run_dirs(tmp_path)] == ['a', 'b']
        assert storage.find_run_dirs(tmp_path / 'absent') == []
