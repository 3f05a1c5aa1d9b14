# lab/utils/datasets.py
"""
Datasets

Synthetic Gaussian-mixture classification tasks, IDX (MNIST-style) file
ingestion and .npz persistence of generated tasks.
"""

import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Tuple, Union

import numpy as np

from lab.errors import BadMagic, ConfigError, CountMismatch, TruncatedFile
from lab.network import TaskData
from lab.numerics import RngState
from lab.utils.storage import atomic_save_npz, load_npz

logger = logging.getLogger(__name__)

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801


@dataclass
class Task:
    train: TaskData
    test: TaskData

    @property
    def classes(self) -> int:
        return self.train.num_classes


# SYNTHETIC

def _random_rotation(dim: int, rng: RngState) -> np.ndarray:
    gaussian = rng.generator().standard_normal((dim, dim))
    q, r = np.linalg.qr(gaussian)
    # sign fix makes the draw Haar-distributed
    return q * np.sign(np.diag(r))


def gen_synthetic_task(
        classes: int,
        dim: int,
        n_train: int,
        n_test: int,
        separation: float,
        rng: RngState
) -> Task:
    """
    Gaussian mixture with equal-weight classes

    Class c has mean (separation / sqrt(2)) * e_c rotated by a random
    orthogonal matrix, so any two means are `separation` apart. Noise is
    N(0, I / dim).
    """
    if classes < 2:
        raise ConfigError(f"classes must be >= 2, got {classes}")
    if dim < classes:
        raise ConfigError(f"dim ({dim}) must be at least the number of classes ({classes})")

    means = np.zeros((classes, dim))
    means[np.arange(classes), np.arange(classes)] = separation / np.sqrt(2)
    means = means @ _random_rotation(dim, rng.derive(0)).T

    def draw(n: int, tag: int, split: str) -> TaskData:
        generator = rng.derive(tag).generator()
        labels = generator.integers(0, classes, size=n)
        noise = generator.standard_normal((n, dim)) / np.sqrt(dim)
        return TaskData(means[labels] + noise, labels, split, classes)

    task = Task(train=draw(n_train, 1, 'train'), test=draw(n_test, 2, 'test'))
    logger.info(
        f"✅ Synthetic task: {classes} classes, dim {dim}, "
        f"{n_train}/{n_test} samples, separation {separation}"
    )
    return task


# IDX FILES

def _read_header(raw: bytes, path: Path, magic: int, dims: int) -> Tuple[int, ...]:
    if len(raw) < 4:
        raise TruncatedFile(f"{path}: {len(raw)} bytes, too short for a magic number")
    found, = struct.unpack('>l', raw[:4])
    if found != magic:
        raise BadMagic(f"{path}: magic {found:#010x}, expected {magic:#010x}")
    size = 4 * (dims + 1)
    if len(raw) < size:
        raise TruncatedFile(f"{path}: header needs {size} bytes, file has {len(raw)}")
    return tuple(struct.unpack(f'>{dims}l', raw[4:size]))


def _read_idx(path: Union[str, Path], magic: int, dims: int) -> np.ndarray:
    path = Path(path)
    raw = path.read_bytes()
    shape = _read_header(raw, path, magic, dims)
    offset = 4 * (dims + 1)
    expected = int(np.prod(shape))
    if len(raw) - offset < expected:
        raise TruncatedFile(f"{path}: payload has {len(raw) - offset} bytes, header announces {expected}")
    return np.frombuffer(raw, dtype=np.uint8, count=expected, offset=offset).reshape(shape)


def load_idx(
        images_path: Union[str, Path],
        labels_path: Union[str, Path],
        split: str = 'train',
        num_classes: int = 10
) -> TaskData:
    """
    Read an IDX image file (uint8, N x rows x cols) and its label file

    Pixels are scaled to [0, 1] and flattened to rows * cols features.

    Raises:
        BadMagic: unexpected magic number
        TruncatedFile: payload shorter than announced
        CountMismatch: image and label counts differ
    """
    images = _read_idx(images_path, IDX_IMAGE_MAGIC, 3)
    labels = _read_idx(labels_path, IDX_LABEL_MAGIC, 1)
    if images.shape[0] != labels.shape[0]:
        raise CountMismatch(f"{images.shape[0]} images but {labels.shape[0]} labels")
    num_classes = max(num_classes, int(labels.max()) + 1) if labels.size else num_classes
    inputs = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    logger.info(f"✅ Loaded {images.shape[0]} IDX samples from {images_path}")
    return TaskData(inputs, labels.astype(np.int64), split, num_classes)


# PERSISTENCE

def save_task(path: Union[str, Path], task: Task) -> Path:
    return atomic_save_npz(path, {
        'train_inputs': task.train.inputs,
        'train_targets': task.train.targets,
        'test_inputs': task.test.inputs,
        'test_targets': task.test.targets,
        'classes': np.array(task.classes),
    })


def load_task_file(path: Union[str, Path]) -> Task:
    arrays = load_npz(path)
    classes = int(arrays['classes'])
    return Task(
        train=TaskData(arrays['train_inputs'], arrays['train_targets'], 'train', classes),
        test=TaskData(arrays['test_inputs'], arrays['test_targets'], 'test', classes),
    )


def load_task(config) -> Task:
    """Build the task described by a TaskConfig"""
    if config.kind == 'synthetic':
        return gen_synthetic_task(
            config.classes, config.dim, config.n_train, config.n_test,
            config.separation, RngState(config.seed)
        )
    if config.kind == 'file':
        return load_task_file(config.path)
    train = load_idx(config.train_images, config.train_labels, 'train', config.classes)
    test = load_idx(config.test_images, config.test_labels, 'test', config.classes)
    classes = max(train.num_classes, test.num_classes)
    train.num_classes = test.num_classes = classes
    return Task(train=train, test=test)
