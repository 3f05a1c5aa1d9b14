# lab/pruning.py
"""
Iterative Pruning

Masks, pruning criteria, rewinding policies, sign perturbation, mask and
sign transplantation, and the train -> prune -> rewind loop shared by
IMP (weight rewinding) and learning rate rewinding (LRR).
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from analytics.signs import SignLedger, record_signs
from lab.errors import ConfigError, EmptyLayer, MissingCheckpoint, NonFiniteScore, ShapeMismatch
from lab.experiment import ExperimentConfig, config_to_dict, dump_config, load_config
from lab.network import (
    MLPSpec, Mode, ModelState, TaskData,
    backward, evaluate, fit, forward, gradients, init_state
)
from lab.numerics import RngState
from lab.utils import storage
from lab.utils.datasets import Task, load_task

logger = logging.getLogger(__name__)

PROBE_BATCH = 256

# RngState.derive tags
_INIT, _TRAIN, _PRUNE, _PERTURB, _PROBE = range(5)


# MASK

class Mask:
    """Per-weight-tensor boolean keep indicators"""

    def __init__(self, tensors: Sequence[np.ndarray]):
        self.tensors = [np.array(t, dtype=bool) for t in tensors]

    @classmethod
    def dense(cls, spec: MLPSpec) -> 'Mask':
        return cls([np.ones(shape, dtype=bool) for shape in spec.weight_shapes()])

    @property
    def kept_per_tensor(self) -> List[int]:
        return [int(np.count_nonzero(t)) for t in self.tensors]

    @property
    def kept(self) -> int:
        return sum(self.kept_per_tensor)

    @property
    def total(self) -> int:
        return sum(t.size for t in self.tensors)

    @property
    def density(self) -> float:
        return self.kept / self.total

    @property
    def sparsity(self) -> float:
        return 1.0 - self.kept / self.total

    def flat(self) -> np.ndarray:
        return np.concatenate([t.ravel() for t in self.tensors])

    def issubset(self, other: 'Mask') -> bool:
        return all(np.all(~a | b) for a, b in zip(self.tensors, other.tensors))

    def copy(self) -> 'Mask':
        return Mask(self.tensors)

    def __eq__(self, other) -> bool:
        return isinstance(other, Mask) and len(self.tensors) == len(other.tensors) and all(
            np.array_equal(a, b) for a, b in zip(self.tensors, other.tensors)
        )

    def __repr__(self) -> str:
        return f"<Mask(kept={self.kept}/{self.total}, sparsity={self.sparsity:.4f})>"


def apply_mask(state: ModelState, mask: Mask) -> ModelState:
    """Copy of state with pruned weights and their momentum buffers set to 0"""
    state = state.copy()
    for i, m in enumerate(mask.tensors):
        state.weights[i] = state.weights[i] * m
        name = f'weight.{i}'
        if name in state.velocity:
            state.velocity[name] = state.velocity[name] * m
    return state


# CRITERIA

class PruneCriterion(Enum):
    MAGNITUDE_GLOBAL = 'magnitude_global'
    MAGNITUDE_LAYERWISE = 'magnitude_layerwise'
    RANDOM_BALANCED = 'random_balanced'
    SNIP = 'snip'
    SYNFLOW = 'synflow'


def _synflow_scores(state: ModelState, mask: Mask) -> List[np.ndarray]:
    # linearized network: |weights|, no bias, no batchnorm, all-ones input
    linear = state.copy()
    linear.weights = [np.abs(w) for w in linear.weights]
    linear.biases = [np.zeros_like(b) for b in linear.biases]
    ones = np.ones((1, state.spec.layer_widths[0]))
    result = forward(linear, mask, ones, Mode.EVAL, use_batchnorm=False)
    grads = backward(linear, mask, result, np.ones_like(result.outputs), use_batchnorm=False)
    return [
        np.abs(grads[f'weight.{i}'] * w * m)
        for i, (w, m) in enumerate(zip(linear.weights, mask.tensors))
    ]


def criterion_scores(
        state: ModelState,
        mask: Mask,
        criterion: PruneCriterion,
        probe_data: Optional[TaskData] = None,
        rng: Optional[RngState] = None
) -> List[np.ndarray]:
    """
    Per-entry scores, higher means more worth keeping

    Magnitude: |w|. SNIP: |dL/dw * w| on one probe batch. Synflow:
    |dR/dw * w| where R sums the outputs of the linearized network on an
    all-ones input. RandomBalanced: uniform noise drawn from rng.

    Raises:
        ConfigError: SNIP without probe data or RandomBalanced without rng
        NonFiniteScore: a score is NaN or infinite
    """
    if criterion in (PruneCriterion.MAGNITUDE_GLOBAL, PruneCriterion.MAGNITUDE_LAYERWISE):
        scores = [np.abs(w) for w in state.weights]
    elif criterion is PruneCriterion.SNIP:
        if probe_data is None:
            raise ConfigError("SNIP scores need probe data")
        _, grads = gradients(state, mask, probe_data, Mode.TRAIN)
        scores = [np.abs(grads[f'weight.{i}'] * w) for i, w in enumerate(state.weights)]
    elif criterion is PruneCriterion.SYNFLOW:
        scores = _synflow_scores(state, mask)
    else:
        if rng is None:
            raise ConfigError("random scores need an RngState")
        generator = rng.generator()
        scores = [generator.random(w.shape) for w in state.weights]

    for i, s in enumerate(scores):
        if not np.all(np.isfinite(s[mask.tensors[i]])):
            logger.error(f"❌ Non-finite {criterion.value} score in tensor {i}")
            raise NonFiniteScore(f"{criterion.value} produced a non-finite score in tensor {i}")
    return scores


def _keep_top(scores: np.ndarray, candidates: np.ndarray, count: int) -> np.ndarray:
    """Boolean keep vector: `count` best candidates, ties broken by position"""
    ranked = np.where(candidates, scores, -np.inf)
    order = np.argsort(-ranked, kind='stable')
    keep = np.zeros(scores.size, dtype=bool)
    keep[order[:count]] = True
    return keep & candidates


def balanced_counts(capacity: Sequence[int], target: int) -> List[int]:
    """
    Split `target` kept weights as evenly as possible across layers

    Layers whose capacity is below the even share keep everything and the
    rest is shared among the others.
    """
    counts = [0] * len(capacity)
    open_layers = list(range(len(capacity)))
    remaining = target
    while open_layers and remaining > 0:
        share, extra = divmod(remaining, len(open_layers))
        capped = [i for i in open_layers if capacity[i] <= share]
        if capped:
            for i in capped:
                counts[i] = capacity[i]
                remaining -= capacity[i]
                if capacity[i] < share:
                    logger.warning(f"⚠️  Layer {i} holds only {capacity[i]} weights, below the even share {share}")
            open_layers = [i for i in open_layers if i not in capped]
            continue
        for rank, i in enumerate(open_layers):
            counts[i] = min(capacity[i], share + (1 if rank < extra else 0))
        remaining = 0
    return counts


def prune_step(
        state: ModelState,
        mask: Mask,
        criterion: PruneCriterion,
        keep_fraction: float,
        rng: RngState,
        probe_data: Optional[TaskData] = None
) -> Mask:
    """
    Keep ceil(keep_fraction * kept) of the currently kept weights

    Global criteria rank all tensors together; MagnitudeLayerwise keeps
    the fraction within each tensor; RandomBalanced draws the same number
    of weights per layer uniformly at random. Pruned entries stay pruned.

    Raises:
        EmptyLayer: a layerwise or balanced criterion would empty a layer
    """
    if not 0 < keep_fraction < 1:
        raise ValueError(f"keep_fraction must lie in (0, 1), got {keep_fraction}")
    scores = criterion_scores(state, mask, criterion, probe_data, rng)
    kept = mask.kept_per_tensor

    if criterion in (PruneCriterion.MAGNITUDE_LAYERWISE, PruneCriterion.RANDOM_BALANCED):
        if criterion is PruneCriterion.MAGNITUDE_LAYERWISE:
            counts = [math.ceil(keep_fraction * k) for k in kept]
        else:
            counts = balanced_counts(kept, math.ceil(keep_fraction * mask.kept))
        empty = [i for i, c in enumerate(counts) if c == 0]
        if empty:
            raise EmptyLayer(f"layers {empty} would lose all weights")
        tensors = [
            _keep_top(s.ravel(), m.ravel(), c).reshape(m.shape)
            for s, m, c in zip(scores, mask.tensors, counts)
        ]
        return Mask(tensors)

    flat_scores = np.concatenate([s.ravel() for s in scores])
    keep = _keep_top(flat_scores, mask.flat(), math.ceil(keep_fraction * mask.kept))
    tensors, offset = [], 0
    for m in mask.tensors:
        tensors.append(keep[offset:offset + m.size].reshape(m.shape))
        offset += m.size
    return Mask(tensors)


# REWINDING

class RewindPolicy(Enum):
    NONE = 'none'
    WEIGHTS = 'weights'
    BN_ONLY = 'bn_only'
    MAGNITUDES_ONLY_KEEP_SIGNS = 'magnitudes_only_keep_signs'


SCHEME_POLICIES = {
    'imp': RewindPolicy.WEIGHTS,
    'lrr': RewindPolicy.NONE,
    'lrr_rewind_bn': RewindPolicy.BN_ONLY,
    'imp_keep_signs': RewindPolicy.MAGNITUDES_ONLY_KEEP_SIGNS,
}


def _signs_with_fallback(current: np.ndarray, fallback: np.ndarray) -> np.ndarray:
    signs = np.sign(current)
    return np.where(signs == 0, np.sign(fallback), signs)


def rewind(
        state: ModelState,
        checkpoint: Optional[ModelState],
        policy: RewindPolicy,
        mask: Optional[Mask] = None
) -> ModelState:
    """
    Restart point for the next pruning level

    WEIGHTS restores every trainable and BN statistic from the checkpoint.
    BN_ONLY restores gamma, beta and running statistics only.
    MAGNITUDES_ONLY_KEEP_SIGNS takes checkpoint magnitudes with the current
    signs (a zero current sign takes the checkpoint's).
    NONE returns the state unchanged. All but NONE clear momentum buffers.

    Raises:
        MissingCheckpoint: the policy needs a checkpoint and none is given
    """
    if policy is RewindPolicy.NONE:
        result = state.copy()
        return apply_mask(result, mask) if mask is not None else result
    if checkpoint is None:
        raise MissingCheckpoint(f"policy {policy.value} needs a rewind checkpoint")

    if policy is RewindPolicy.WEIGHTS:
        result = checkpoint.copy()
    elif policy is RewindPolicy.BN_ONLY:
        result = state.copy()
        result.bn_gamma = {k: v.copy() for k, v in checkpoint.bn_gamma.items()}
        result.bn_beta = {k: v.copy() for k, v in checkpoint.bn_beta.items()}
        result.bn_running_mean = {k: v.copy() for k, v in checkpoint.bn_running_mean.items()}
        result.bn_running_var = {k: v.copy() for k, v in checkpoint.bn_running_var.items()}
    else:
        result = checkpoint.copy()
        current = state.parameters()
        for name, param in result.parameters().items():
            param[...] = np.abs(param) * _signs_with_fallback(current[name], param)

    result.reset_optimizer()
    return apply_mask(result, mask) if mask is not None else result


# SIGN SURGERY

def perturb_signs(state: ModelState, mask: Mask, fraction: float, rng: RngState) -> ModelState:
    """Negate floor(fraction * kept) distinct kept weights in every weight tensor"""
    if not 0 <= fraction <= 1:
        raise ValueError(f"fraction must lie in [0, 1], got {fraction}")
    result = state.copy()
    for i, m in enumerate(mask.tensors):
        kept = np.flatnonzero(m)
        count = int(math.floor(fraction * kept.size))
        if count == 0:
            continue
        chosen = rng.derive(i).generator().choice(kept, size=count, replace=False)
        flat = result.weights[i].reshape(-1)
        flat[chosen] = -flat[chosen]
    logger.info(f"Flipped {fraction:.0%} of kept signs per layer")
    return result


def transplant_assemble(init_from: ModelState, mask_from: Mask, signs_from: ModelState) -> ModelState:
    """
    Magnitudes of init_from, mask of mask_from, weight signs of signs_from

    A zero sign in signs_from falls back to the sign in init_from.

    Raises:
        ShapeMismatch: the three sources disagree in shape
    """
    shapes = [w.shape for w in init_from.weights]
    if [w.shape for w in signs_from.weights] != shapes or [m.shape for m in mask_from.tensors] != shapes:
        raise ShapeMismatch("transplant sources have different weight shapes")
    result = init_from.copy()
    result.weights = [
        np.abs(w) * _signs_with_fallback(s, w) * m
        for w, s, m in zip(init_from.weights, signs_from.weights, mask_from.tensors)
    ]
    result.reset_optimizer()
    return result


# RUN RECORD

@dataclass
class LevelRecord:
    level: int
    sparsity: float
    train_loss: float
    test_loss: float
    test_acc: float
    checkpoint_path: Optional[Path] = None
    mask_path: Optional[Path] = None

    def metrics_row(self, seed: int, scheme: str) -> dict:
        return {
            'level': self.level,
            'sparsity': self.sparsity,
            'train_loss': self.train_loss,
            'test_acc': self.test_acc,
            'seed': seed,
            'scheme': scheme,
        }


@dataclass
class RunRecord:
    seed: int
    scheme: str
    criterion: str
    run_dir: Optional[Path] = None
    levels: List[LevelRecord] = field(default_factory=list)
    ledger: SignLedger = field(default_factory=SignLedger)
    states: List[ModelState] = field(default_factory=list)
    masks: List[Mask] = field(default_factory=list)

    def add_level(self, record: LevelRecord, state: ModelState, mask: Mask) -> None:
        if self.levels and record.sparsity <= self.levels[-1].sparsity:
            raise ValueError(
                f"sparsity must increase across levels: {self.levels[-1].sparsity} -> {record.sparsity}"
            )
        self.levels.append(record)
        self.states.append(state)
        self.masks.append(mask)
        record_signs(self.ledger, state, mask, record.level)

    def metrics_rows(self) -> List[dict]:
        return [r.metrics_row(self.seed, self.scheme) for r in self.levels]

    @property
    def final(self) -> LevelRecord:
        return self.levels[-1]


# PERSISTENCE OF LEVELS

def _level_arrays(state: ModelState, checkpoint: Optional[ModelState], record: LevelRecord,
                  seed: int) -> Dict[str, np.ndarray]:
    arrays = storage.with_prefix(state.to_arrays(), 'state')
    if checkpoint is not None:
        arrays.update(storage.with_prefix(checkpoint.to_arrays(), 'rewind'))
    arrays.update({
        'level': np.array(record.level),
        'seed': np.array(seed),
        'sparsity': np.array(record.sparsity),
        'train_loss': np.array(record.train_loss),
        'test_loss': np.array(record.test_loss),
        'test_acc': np.array(record.test_acc),
    })
    return arrays


def load_level(run_dir: Path, level: int, spec: MLPSpec):
    """(state, rewind checkpoint or None, mask, LevelRecord) stored for a level"""
    arrays = storage.load_level_checkpoint(run_dir, level)
    state = ModelState.from_arrays(spec, storage.split_prefixed(arrays, 'state'))
    rewind_arrays = storage.split_prefixed(arrays, 'rewind')
    checkpoint = ModelState.from_arrays(spec, rewind_arrays) if rewind_arrays else None
    mask = Mask(storage.load_level_mask(run_dir, level))
    record = LevelRecord(
        level=level,
        sparsity=float(arrays['sparsity']),
        train_loss=float(arrays['train_loss']),
        test_loss=float(arrays['test_loss']),
        test_acc=float(arrays['test_acc']),
        checkpoint_path=storage.checkpoint_path(run_dir, level),
        mask_path=storage.mask_path(run_dir, level),
    )
    return state, checkpoint, mask, record


def _write_run_files(run_dir: Path, record: RunRecord) -> None:
    storage.write_metrics(run_dir, record.metrics_rows())
    storage.atomic_save_npz(run_dir / 'signs.bin', record.ledger.to_arrays())
    rows = []
    for level, state in zip(record.levels, record.states):
        for i in state.spec.bn_layers:
            for unit, (gamma, beta) in enumerate(zip(state.bn_gamma[i], state.bn_beta[i])):
                rows.append({'level': level.level, 'layer': i, 'unit': unit, 'gamma': gamma, 'beta': beta})
    if rows:
        storage.atomic_write_csv(run_dir / 'bn_params.csv', pd.DataFrame(rows))


def load_run(run_dir: Path, spec: MLPSpec, seed: int = 0, scheme: str = '', criterion: str = '') -> RunRecord:
    """Rebuild a RunRecord from the completed levels of a run directory"""
    run_dir = Path(run_dir)
    record = RunRecord(seed=seed, scheme=scheme, criterion=criterion, run_dir=run_dir)
    for level in storage.completed_levels(run_dir):
        state, _, mask, level_record = load_level(run_dir, level, spec)
        record.add_level(level_record, state, mask)
    return record


# THE PRUNING LOOP

PerturbHook = Callable[[int, ModelState, Mask], ModelState]


def _check_resumable(run_dir: Path, config: ExperimentConfig) -> None:
    """
    Refuse to continue levels written under another config

    Only the level count may grow, and only when the per-level keep
    fraction does not depend on it.
    """
    stored = load_config(run_dir / 'config.yaml')
    comparable = config.with_overrides(seeds=stored.seeds, output_root=stored.output_root)
    if config.pruning.target_sparsity is None:
        comparable = comparable.with_overrides(pruning={'levels': stored.pruning.levels})
    before, after = config_to_dict(stored), config_to_dict(comparable)
    changed = [name for name in after if after[name] != before[name]]
    if changed:
        logger.error(f"❌ {run_dir.name} was written with a different config: {', '.join(changed)}")
        raise ConfigError(
            f"{run_dir} holds levels of a different config (sections: {', '.join(changed)}); "
            f"use a fresh directory or disable resuming"
        )


def _probe_batch(train: TaskData, rng: RngState) -> TaskData:
    index = rng.generator().permutation(train.n)[:min(PROBE_BATCH, train.n)]
    return train.subset(np.sort(index))


def run_iterative_pruning(
        config: ExperimentConfig,
        task: Optional[Task] = None,
        run_dir: Optional[Path] = None,
        resume: bool = True,
        perturb_hook: Optional[PerturbHook] = None
) -> RunRecord:
    """
    Dense training, then `levels` rounds of prune -> rewind -> retrain

    Level 0 trains the dense network for the full schedule, storing the
    state after `rewind_epoch` epochs as the rewind checkpoint. Each later
    level prunes (or takes the transplanted mask), rewinds per the scheme,
    applies transplanted signs or the sign perturbation, and retrains the
    full schedule with a fresh optimizer.

    Args:
        config: validated experiment configuration
        task: preloaded data (built from config.task otherwise)
        run_dir: directory for level files; nothing is written when None
        resume: continue after the last complete level found in run_dir
        perturb_hook: called as hook(level, state, mask) before training each level

    Returns:
        RunRecord with one LevelRecord per level
    """
    pruning = config.pruning
    policy = SCHEME_POLICIES[pruning.scheme]
    criterion = PruneCriterion(pruning.criterion)
    seed_rng = RngState(config.seed)
    task = task or load_task(config.task)
    spec = config.model.to_spec(task.train.dim, task.train.num_classes)
    schedule = config.schedule.to_schedule()
    opt = config.optimizer
    keep_fraction = pruning.level_keep_fraction

    mask_source = Path(config.transplant.mask_run) if config.transplant.mask_run else None
    signs_source = Path(config.transplant.signs_run) if config.transplant.signs_run else None
    for source in (mask_source, signs_source):
        if source is not None and len(storage.completed_levels(source)) < pruning.levels + 1:
            raise ConfigError(f"transplant source {source} has fewer than {pruning.levels + 1} levels")

    def train(state: ModelState, mask: Mask, level: int, start: int = 0, stop: Optional[int] = None):
        return fit(state, mask, task.train, schedule, opt.momentum, opt.weight_decay,
                   opt.batch_size, seed_rng.derive(_TRAIN, level), start, stop)

    def finish_level(level: int, state: ModelState, mask: Mask, train_loss: float,
                     checkpoint: Optional[ModelState]) -> None:
        test_loss, test_acc = evaluate(state, mask, task.test)
        level_record = LevelRecord(level, mask.sparsity, train_loss, test_loss, test_acc)
        if run_dir is not None:
            storage.save_level(run_dir, level, _level_arrays(state, checkpoint, level_record, config.seed),
                               mask.tensors)
            level_record.checkpoint_path = storage.checkpoint_path(run_dir, level)
            level_record.mask_path = storage.mask_path(run_dir, level)
        record.add_level(level_record, state, mask)
        if run_dir is not None:
            _write_run_files(run_dir, record)
        logger.info(
            f"✅ {config.run_name()} level {level}: sparsity={mask.sparsity:.4f}, "
            f"train_loss={train_loss:.4f}, test_acc={test_acc:.4f}"
        )

    record = RunRecord(seed=config.seed, scheme=pruning.scheme, criterion=pruning.criterion,
                       run_dir=Path(run_dir) if run_dir is not None else None)
    checkpoint: Optional[ModelState] = None
    start_level = 0

    if run_dir is not None:
        run_dir = Path(run_dir)
        run_dir.mkdir(parents=True, exist_ok=True)
        done = storage.completed_levels(run_dir) if resume else []
        done = [level for level in done if level <= pruning.levels]
        if done and (run_dir / 'config.yaml').is_file():
            _check_resumable(run_dir, config)
        storage.atomic_write_text(run_dir / 'config.yaml', dump_config(config))
        if done:
            for level in done:
                state, checkpoint, mask, level_record = load_level(run_dir, level, spec)
                record.add_level(level_record, state, mask)
            start_level = done[-1] + 1
            logger.info(f"Resuming {run_dir.name} after level {done[-1]}")

    if start_level == 0:
        state = init_state(spec, seed_rng.derive(_INIT))
        mask = Mask.dense(spec)
        state, _ = train(state, mask, 0, 0, pruning.rewind_epoch)
        checkpoint = state.copy()
        checkpoint.reset_optimizer()
        state, loss = train(state, mask, 0, pruning.rewind_epoch)
        finish_level(0, state, mask, loss, checkpoint)
        start_level = 1
    else:
        state, mask = record.states[-1], record.masks[-1]

    for level in range(start_level, pruning.levels + 1):
        if mask_source is not None:
            new_mask = Mask(storage.load_level_mask(mask_source, level))
        else:
            probe = _probe_batch(task.train, seed_rng.derive(_PROBE, level))
            new_mask = prune_step(state, mask, criterion, keep_fraction,
                                  seed_rng.derive(_PRUNE, level), probe)
        mask = new_mask
        state = rewind(state, checkpoint, policy, mask)

        if signs_source is not None:
            signs_state, _, _, _ = load_level(signs_source, level, spec)
            state = transplant_assemble(state, mask, signs_state)

        if config.perturb.level == level:
            before = state
            state = perturb_signs(state, mask, config.perturb.fraction, seed_rng.derive(_PERTURB, level))
            if policy in (RewindPolicy.WEIGHTS, RewindPolicy.MAGNITUDES_ONLY_KEEP_SIGNS):
                # later rewinds restart from the perturbed signs
                checkpoint = checkpoint.copy()
                for i, (old, new) in enumerate(zip(before.weights, state.weights)):
                    flipped = (old != new) & mask.tensors[i]
                    checkpoint.weights[i][flipped] = -checkpoint.weights[i][flipped]
        if perturb_hook is not None:
            state = perturb_hook(level, state, mask)

        state.reset_optimizer()
        state, loss = train(state, mask, level)
        finish_level(level, state, mask, loss, checkpoint)

    return record
