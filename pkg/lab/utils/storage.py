# lab/utils/storage.py
"""
Run Storage

Atomic file writes and the on-disk layout of a pruning run:

    <root>/<run name>/
        config.yaml
        level_XX/checkpoint.npz
        level_XX/mask.npz
        metrics.csv
        signs.bin
        bn_params.csv
"""

import io
import logging
import os
import tempfile
from pathlib import Path
from typing import Dict, List, Union

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
METRICS_COLUMNS = ['level', 'sparsity', 'train_loss', 'test_acc', 'seed', 'scheme']

PathLike = Union[str, Path]


# ATOMIC WRITES

def atomic_write_bytes(path: PathLike, data: bytes) -> Path:
    """Write to a temp file in the target directory, then rename over the target"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, 'wb') as f:
            f.write(data)
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise
    logger.debug(f"Wrote {path}")
    return path


def atomic_write_text(path: PathLike, text: str) -> Path:
    return atomic_write_bytes(path, text.encode('utf-8'))


def atomic_write_csv(path: PathLike, frame: pd.DataFrame) -> Path:
    """UTF-8 CSV with LF line endings and no index column"""
    return atomic_write_text(path, frame.to_csv(index=False, lineterminator='\n'))


def atomic_save_npz(path: PathLike, arrays: Dict[str, np.ndarray]) -> Path:
    buffer = io.BytesIO()
    np.savez(buffer, **arrays)
    return atomic_write_bytes(path, buffer.getvalue())


def load_npz(path: PathLike) -> Dict[str, np.ndarray]:
    with np.load(Path(path), allow_pickle=False) as data:
        return {name: data[name] for name in data.files}


# RUN LAYOUT

def level_dir(run_dir: PathLike, level: int) -> Path:
    return Path(run_dir) / f"level_{level:02d}"


def checkpoint_path(run_dir: PathLike, level: int) -> Path:
    return level_dir(run_dir, level) / 'checkpoint.npz'


def mask_path(run_dir: PathLike, level: int) -> Path:
    return level_dir(run_dir, level) / 'mask.npz'


def completed_levels(run_dir: PathLike) -> List[int]:
    """Levels 0..L-1 whose checkpoint and mask both exist, stopping at the first gap"""
    levels = []
    level = 0
    while checkpoint_path(run_dir, level).is_file() and mask_path(run_dir, level).is_file():
        levels.append(level)
        level += 1
    return levels


def save_level(
        run_dir: PathLike,
        level: int,
        checkpoint: Dict[str, np.ndarray],
        mask_tensors: List[np.ndarray]
) -> None:
    """Mask first: a level counts as complete only once its checkpoint exists"""
    masks = {f'mask.{i}': np.asarray(m, dtype=bool) for i, m in enumerate(mask_tensors)}
    atomic_save_npz(mask_path(run_dir, level), masks)
    arrays = dict(checkpoint)
    arrays['format_version'] = np.array(FORMAT_VERSION)
    atomic_save_npz(checkpoint_path(run_dir, level), arrays)


def load_level_mask(run_dir: PathLike, level: int) -> List[np.ndarray]:
    arrays = load_npz(mask_path(run_dir, level))
    return [arrays[f'mask.{i}'].astype(bool) for i in range(len(arrays))]


def load_level_checkpoint(run_dir: PathLike, level: int) -> Dict[str, np.ndarray]:
    arrays = load_npz(checkpoint_path(run_dir, level))
    version = int(arrays.pop('format_version', -1))
    if version != FORMAT_VERSION:
        raise ValueError(f"{checkpoint_path(run_dir, level)} has format version {version}")
    return arrays


def split_prefixed(arrays: Dict[str, np.ndarray], prefix: str) -> Dict[str, np.ndarray]:
    """Entries named '<prefix>.<rest>' keyed by <rest>"""
    head = prefix + '.'
    return {name[len(head):]: value for name, value in arrays.items() if name.startswith(head)}


def with_prefix(arrays: Dict[str, np.ndarray], prefix: str) -> Dict[str, np.ndarray]:
    return {f'{prefix}.{name}': value for name, value in arrays.items()}


# METRICS

def write_metrics(run_dir: PathLike, rows: List[dict]) -> Path:
    frame = pd.DataFrame(rows, columns=METRICS_COLUMNS)
    return atomic_write_csv(Path(run_dir) / 'metrics.csv', frame)


def read_metrics(run_dir: PathLike) -> pd.DataFrame:
    frame = pd.read_csv(Path(run_dir) / 'metrics.csv')
    missing = set(METRICS_COLUMNS) - set(frame.columns)
    if missing:
        raise ValueError(f"{run_dir}/metrics.csv lacks columns {sorted(missing)}")
    frame['run'] = Path(run_dir).name
    return frame


def find_run_dirs(root: PathLike) -> List[Path]:
    """Immediate subdirectories of root holding a metrics.csv"""
    root = Path(root)
    if not root.is_dir():
        return []
    return sorted(p for p in root.iterdir() if (p / 'metrics.csv').is_file())
