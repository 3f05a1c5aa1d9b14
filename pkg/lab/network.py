# lab/network.py
"""
Network

Minimal numpy MLP: masked linear layers, batch normalization, ReLU,
cross-entropy / squared-error losses, manual backpropagation, SGD with
momentum and weight decay, and the warmup learning rate schedules.

Weights are stored as (fan_in, fan_out) so a layer is ``h @ W + b``.
Hidden layer i computes relu(bn(h @ (W * M) + b)); the last layer is linear.
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import TYPE_CHECKING, Dict, List, Optional, Sequence, Tuple

import numpy as np

from lab.errors import ConfigError, NonFiniteLoss, ShapeMismatch
from lab.numerics import DenseMatrix, RngState, as_dense

if TYPE_CHECKING:
    from lab.pruning import Mask

logger = logging.getLogger(__name__)

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


# SPEC AND STATE

class Activation(Enum):
    RELU = 'relu'


class InitScheme(Enum):
    KAIMING_NORMAL = 'kaiming_normal'


class Mode(Enum):
    TRAIN = 'train'
    EVAL = 'eval'


@dataclass(frozen=True)
class MLPSpec:
    """
    Architecture of a fully connected network.

    use_batchnorm has one flag per hidden layer (len(layer_widths) - 2).
    """
    layer_widths: Tuple[int, ...]
    use_batchnorm: Tuple[bool, ...] = ()
    use_bias: bool = True
    activation: Activation = Activation.RELU
    init: InitScheme = InitScheme.KAIMING_NORMAL

    def __post_init__(self):
        object.__setattr__(self, 'layer_widths', tuple(int(w) for w in self.layer_widths))
        flags = tuple(bool(f) for f in self.use_batchnorm)
        hidden = len(self.layer_widths) - 2
        if len(self.layer_widths) < 2 or min(self.layer_widths) < 1:
            raise ConfigError(f"need at least two positive widths, got {self.layer_widths}")
        if not flags:
            flags = (False,) * hidden
        if len(flags) != hidden:
            raise ConfigError(f"{hidden} hidden layers but {len(flags)} batchnorm flags")
        object.__setattr__(self, 'use_batchnorm', flags)

    @property
    def num_layers(self) -> int:
        return len(self.layer_widths) - 1

    @property
    def bn_layers(self) -> List[int]:
        return [i for i, flag in enumerate(self.use_batchnorm) if flag]

    @property
    def has_batchnorm(self) -> bool:
        return any(self.use_batchnorm)

    def weight_shapes(self) -> List[Tuple[int, int]]:
        widths = self.layer_widths
        return [(widths[i], widths[i + 1]) for i in range(self.num_layers)]


@dataclass
class ModelState:
    """All trainable parameters, BN running statistics and momentum buffers"""
    spec: MLPSpec
    weights: List[np.ndarray]
    biases: List[np.ndarray]
    bn_gamma: Dict[int, np.ndarray] = field(default_factory=dict)
    bn_beta: Dict[int, np.ndarray] = field(default_factory=dict)
    bn_running_mean: Dict[int, np.ndarray] = field(default_factory=dict)
    bn_running_var: Dict[int, np.ndarray] = field(default_factory=dict)
    velocity: Dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        shapes = self.spec.weight_shapes()
        if [w.shape for w in self.weights] != shapes:
            raise ShapeMismatch(f"weight shapes {[w.shape for w in self.weights]} != {shapes}")
        if [b.shape for b in self.biases] != [(s[1],) for s in shapes]:
            raise ShapeMismatch("bias shapes do not match the spec")
        for i in self.spec.bn_layers:
            width = shapes[i][1]
            for table in (self.bn_gamma, self.bn_beta, self.bn_running_mean, self.bn_running_var):
                if i not in table or table[i].shape != (width,):
                    raise ShapeMismatch(f"missing or misshapen batchnorm entry for layer {i}")
            if np.any(self.bn_running_var[i] <= 0):
                raise ValueError(f"running variance of layer {i} must be positive")

    def parameters(self) -> Dict[str, np.ndarray]:
        """Trainable arrays by name, in a fixed order"""
        params = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            params[f'weight.{i}'] = w
            if self.spec.use_bias:
                params[f'bias.{i}'] = b
        for i in self.spec.bn_layers:
            params[f'bn_gamma.{i}'] = self.bn_gamma[i]
            params[f'bn_beta.{i}'] = self.bn_beta[i]
        return params

    def copy(self) -> 'ModelState':
        return ModelState(
            spec=self.spec,
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
            bn_gamma={k: v.copy() for k, v in self.bn_gamma.items()},
            bn_beta={k: v.copy() for k, v in self.bn_beta.items()},
            bn_running_mean={k: v.copy() for k, v in self.bn_running_mean.items()},
            bn_running_var={k: v.copy() for k, v in self.bn_running_var.items()},
            velocity={k: v.copy() for k, v in self.velocity.items()},
        )

    def reset_optimizer(self) -> None:
        self.velocity = {}

    def to_arrays(self) -> Dict[str, np.ndarray]:
        """Flat name -> array mapping used by the checkpoint codec"""
        arrays = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            arrays[f'weight.{i}'] = w
            arrays[f'bias.{i}'] = b
        for i in self.spec.bn_layers:
            arrays[f'bn_gamma.{i}'] = self.bn_gamma[i]
            arrays[f'bn_beta.{i}'] = self.bn_beta[i]
            arrays[f'bn_running_mean.{i}'] = self.bn_running_mean[i]
            arrays[f'bn_running_var.{i}'] = self.bn_running_var[i]
        for name, buffer in self.velocity.items():
            arrays[f'velocity.{name}'] = buffer
        return arrays

    @classmethod
    def from_arrays(cls, spec: MLPSpec, arrays: Dict[str, np.ndarray]) -> 'ModelState':
        try:
            weights = [np.array(arrays[f'weight.{i}'], dtype=np.float64) for i in range(spec.num_layers)]
            biases = [np.array(arrays[f'bias.{i}'], dtype=np.float64) for i in range(spec.num_layers)]
            tables = {
                key: {i: np.array(arrays[f'{key}.{i}'], dtype=np.float64) for i in spec.bn_layers}
                for key in ('bn_gamma', 'bn_beta', 'bn_running_mean', 'bn_running_var')
            }
        except KeyError as e:
            raise ShapeMismatch(f"checkpoint is missing array {e}") from e
        velocity = {
            name[len('velocity.'):]: np.array(value, dtype=np.float64)
            for name, value in arrays.items() if name.startswith('velocity.')
        }
        return cls(spec=spec, weights=weights, biases=biases, velocity=velocity, **tables)


def init_state(spec: MLPSpec, rng: RngState) -> ModelState:
    """Kaiming-normal weights (std sqrt(2 / fan_in)), zero biases, identity BN"""
    generator = rng.generator()
    weights = [
        generator.standard_normal(shape) * math.sqrt(2.0 / shape[0])
        for shape in spec.weight_shapes()
    ]
    biases = [np.zeros(shape[1]) for shape in spec.weight_shapes()]
    widths = spec.layer_widths
    return ModelState(
        spec=spec,
        weights=weights,
        biases=biases,
        bn_gamma={i: np.ones(widths[i + 1]) for i in spec.bn_layers},
        bn_beta={i: np.zeros(widths[i + 1]) for i in spec.bn_layers},
        bn_running_mean={i: np.zeros(widths[i + 1]) for i in spec.bn_layers},
        bn_running_var={i: np.ones(widths[i + 1]) for i in spec.bn_layers},
    )


# DATA

@dataclass
class TaskData:
    """Inputs and targets of one split; num_classes None means regression"""
    inputs: DenseMatrix
    targets: np.ndarray
    split: str = 'train'
    num_classes: Optional[int] = None

    def __post_init__(self):
        self.inputs = as_dense(self.inputs)
        if self.split not in ('train', 'test'):
            raise ValueError(f"unknown split {self.split!r}")
        if self.num_classes is None:
            self.targets = np.asarray(self.targets, dtype=np.float64)
            if self.targets.ndim == 1:
                self.targets = self.targets.reshape(-1, 1)
        else:
            self.targets = np.asarray(self.targets, dtype=np.int64).reshape(-1)
            if self.targets.size and (self.targets.min() < 0 or self.targets.max() >= self.num_classes):
                raise ValueError(f"labels outside [0, {self.num_classes})")
        if self.targets.shape[0] != self.inputs.shape[0]:
            raise ShapeMismatch(f"{self.inputs.shape[0]} inputs but {self.targets.shape[0]} targets")

    @property
    def n(self) -> int:
        return self.inputs.shape[0]

    @property
    def dim(self) -> int:
        return self.inputs.shape[1]

    @property
    def is_classification(self) -> bool:
        return self.num_classes is not None

    def subset(self, index: np.ndarray) -> 'TaskData':
        return TaskData(self.inputs[index], self.targets[index], self.split, self.num_classes)


# FORWARD / BACKWARD

@dataclass
class LayerCache:
    inputs: np.ndarray
    effective_weight: np.ndarray
    pre_bn: np.ndarray
    pre_activation: np.ndarray
    x_hat: Optional[np.ndarray] = None
    inv_std: Optional[np.ndarray] = None
    batch_mean: Optional[np.ndarray] = None
    batch_var: Optional[np.ndarray] = None


@dataclass
class ForwardPass:
    outputs: np.ndarray
    activations: List[np.ndarray]
    caches: List[LayerCache]
    mode: Mode


def _mask_tensors(state: ModelState, mask: Optional['Mask']) -> List[Optional[np.ndarray]]:
    if mask is None:
        return [None] * len(state.weights)
    tensors = list(mask.tensors)
    if [m.shape for m in tensors] != [w.shape for w in state.weights]:
        raise ShapeMismatch("mask shapes do not match the weight tensors")
    return tensors


def forward(
        state: ModelState,
        mask: Optional['Mask'],
        batch: DenseMatrix,
        mode: Mode = Mode.EVAL,
        use_batchnorm: bool = True
) -> ForwardPass:
    """
    Masked forward pass.

    Train mode normalizes with batch statistics (returned in the caches,
    the state is not touched); eval mode uses the running statistics.
    use_batchnorm=False bypasses every BN layer.
    """
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 2 or batch.shape[1] != state.spec.layer_widths[0]:
        raise ShapeMismatch(
            f"batch of shape {batch.shape} for input width {state.spec.layer_widths[0]}"
        )
    masks = _mask_tensors(state, mask)
    h = batch
    activations, caches = [h], []
    last = state.spec.num_layers - 1

    for i, (w, b, m) in enumerate(zip(state.weights, state.biases, masks)):
        effective = w if m is None else w * m
        z = h @ effective + b
        cache = LayerCache(inputs=h, effective_weight=effective, pre_bn=z, pre_activation=z)
        if i < last:
            if use_batchnorm and state.spec.use_batchnorm[i]:
                if mode is Mode.TRAIN:
                    mean = z.mean(axis=0)
                    var = z.var(axis=0)
                    cache.batch_mean, cache.batch_var = mean, var
                else:
                    mean, var = state.bn_running_mean[i], state.bn_running_var[i]
                cache.inv_std = 1.0 / np.sqrt(var + BN_EPS)
                cache.x_hat = (z - mean) * cache.inv_std
                cache.pre_activation = state.bn_gamma[i] * cache.x_hat + state.bn_beta[i]
            h = np.maximum(cache.pre_activation, 0.0)
        else:
            h = z
        caches.append(cache)
        activations.append(h)

    return ForwardPass(outputs=h, activations=activations, caches=caches, mode=mode)


def loss_and_grad(outputs: np.ndarray, targets: np.ndarray, classification: bool) -> Tuple[float, np.ndarray]:
    """Mean cross-entropy (classes) or mean 0.5 * squared error, with d loss / d outputs"""
    batch_size = outputs.shape[0]
    if classification:
        shifted = outputs - outputs.max(axis=1, keepdims=True)
        log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
        rows = np.arange(batch_size)
        loss = -float(log_probs[rows, targets].mean())
        grad = np.exp(log_probs)
        grad[rows, targets] -= 1.0
        return loss, grad / batch_size
    residual = outputs - targets
    loss = 0.5 * float(np.sum(residual ** 2)) / batch_size
    return loss, residual / batch_size


def backward(
        state: ModelState,
        mask: Optional['Mask'],
        cache: ForwardPass,
        grad_outputs: np.ndarray,
        use_batchnorm: bool = True
) -> Dict[str, np.ndarray]:
    """Reverse-mode gradients of every trainable, keyed like ModelState.parameters()"""
    masks = _mask_tensors(state, mask)
    grads: Dict[str, np.ndarray] = {}
    g = grad_outputs
    last = state.spec.num_layers - 1

    for i in range(last, -1, -1):
        layer = cache.caches[i]
        if i < last:
            g = g * (layer.pre_activation > 0)
            if use_batchnorm and state.spec.use_batchnorm[i]:
                gamma = state.bn_gamma[i]
                grads[f'bn_gamma.{i}'] = np.sum(g * layer.x_hat, axis=0)
                grads[f'bn_beta.{i}'] = np.sum(g, axis=0)
                dx_hat = g * gamma
                if cache.mode is Mode.TRAIN:
                    n = g.shape[0]
                    g = layer.inv_std / n * (
                        n * dx_hat
                        - dx_hat.sum(axis=0)
                        - layer.x_hat * np.sum(dx_hat * layer.x_hat, axis=0)
                    )
                else:
                    g = dx_hat * layer.inv_std
        grad_w = layer.inputs.T @ g
        if masks[i] is not None:
            grad_w = grad_w * masks[i]
        grads[f'weight.{i}'] = grad_w
        if state.spec.use_bias:
            grads[f'bias.{i}'] = g.sum(axis=0)
        if i > 0:
            g = g @ layer.effective_weight.T

    return grads


def gradients(
        state: ModelState,
        mask: Optional['Mask'],
        data: TaskData,
        mode: Mode = Mode.TRAIN
) -> Tuple[float, Dict[str, np.ndarray]]:
    """Loss and parameter gradients on one batch"""
    result = forward(state, mask, data.inputs, mode)
    loss, grad_out = loss_and_grad(result.outputs, data.targets, data.is_classification)
    return loss, backward(state, mask, result, grad_out)


# OPTIMIZATION

def _update_running_stats(state: ModelState, result: ForwardPass) -> None:
    for i in state.spec.bn_layers:
        layer = result.caches[i]
        state.bn_running_mean[i] = (1 - BN_MOMENTUM) * state.bn_running_mean[i] + BN_MOMENTUM * layer.batch_mean
        state.bn_running_var[i] = (1 - BN_MOMENTUM) * state.bn_running_var[i] + BN_MOMENTUM * layer.batch_var


def sgd_epoch(
        state: ModelState,
        mask: Optional['Mask'],
        data: TaskData,
        lr: float,
        momentum: float,
        weight_decay: float,
        batch_size: int,
        rng: RngState
) -> Tuple[ModelState, float]:
    """
    One pass of mini-batch SGD over a shuffled copy of the data

    Momentum follows buf = momentum * buf + (grad + wd * param);
    param -= lr * buf. Pruned weights, their gradients and their buffers
    are held at exactly 0.

    Returns:
        (updated copy of the state, sample-weighted mean training loss)

    Raises:
        NonFiniteLoss: a batch loss is NaN or infinite
    """
    if lr <= 0:
        raise ValueError(f"lr must be positive, got {lr}")
    if batch_size < 1:
        raise ValueError(f"batch_size must be positive, got {batch_size}")

    state = state.copy()
    masks = _mask_tensors(state, mask)
    order = rng.generator().permutation(data.n)
    total_loss, seen = 0.0, 0

    for start in range(0, data.n, batch_size):
        index = order[start:start + batch_size]
        # batch statistics are undefined for a single sample
        if index.size < 2 and state.spec.has_batchnorm:
            continue
        batch = data.subset(index)
        result = forward(state, mask, batch.inputs, Mode.TRAIN)
        loss, grad_out = loss_and_grad(result.outputs, batch.targets, batch.is_classification)
        if not math.isfinite(loss):
            logger.error(f"❌ Non-finite training loss at lr={lr}")
            raise NonFiniteLoss(f"training loss became {loss}")
        grads = backward(state, mask, result, grad_out)
        _update_running_stats(state, result)

        for name, param in state.parameters().items():
            g = grads[name] + weight_decay * param
            buffer = state.velocity.get(name)
            buffer = g if buffer is None else momentum * buffer + g
            param -= lr * buffer
            if name.startswith('weight.'):
                m = masks[int(name.split('.')[1])]
                if m is not None:
                    buffer = buffer * m
                    param *= m
            state.velocity[name] = buffer

        total_loss += loss * index.size
        seen += index.size

    return state, total_loss / max(seen, 1)


def evaluate(
        state: ModelState,
        mask: Optional['Mask'],
        data: TaskData,
        batch_size: int = 1024
) -> Tuple[float, float]:
    """Eval-mode (loss, accuracy); accuracy is NaN for regression targets"""
    total_loss, correct = 0.0, 0
    for start in range(0, data.n, batch_size):
        batch = data.subset(np.arange(start, min(start + batch_size, data.n)))
        outputs = forward(state, mask, batch.inputs, Mode.EVAL).outputs
        loss, _ = loss_and_grad(outputs, batch.targets, batch.is_classification)
        total_loss += loss * batch.n
        if batch.is_classification:
            correct += int(np.sum(outputs.argmax(axis=1) == batch.targets))
    accuracy = correct / data.n if data.is_classification else float('nan')
    return total_loss / data.n, accuracy


# LEARNING RATE SCHEDULES

class ScheduleKind(Enum):
    COSINE_WARMUP = 'cosine_warmup'
    STEP_WARMUP = 'step_warmup'
    CONSTANT = 'constant'


@dataclass(frozen=True)
class LRSchedule:
    kind: ScheduleKind = ScheduleKind.COSINE_WARMUP
    base_lr: float = 0.1
    warmup_epochs: int = 5
    total_epochs: int = 30
    step_milestones: Tuple[int, ...] = ()
    step_factor: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, 'step_milestones', tuple(int(m) for m in self.step_milestones))
        if self.base_lr <= 0:
            raise ConfigError(f"base_lr must be positive, got {self.base_lr}")
        if not 0 <= self.warmup_epochs < self.total_epochs:
            raise ConfigError(
                f"need 0 <= warmup_epochs < total_epochs, got {self.warmup_epochs}/{self.total_epochs}"
            )
        if not 0 < self.step_factor <= 1:
            raise ConfigError(f"step_factor must lie in (0, 1], got {self.step_factor}")


def lr_at(schedule: LRSchedule, epoch: int) -> float:
    """
    Learning rate for a 0-based epoch

    The warmup ramp is base * max(epoch, 0.5) / warmup so epoch 0 is
    already positive; after warmup the cosine anneals toward 0 without
    reaching it, the step schedule multiplies by step_factor at each
    milestone passed.
    """
    if not 0 <= epoch < schedule.total_epochs:
        raise ValueError(f"epoch {epoch} outside [0, {schedule.total_epochs})")
    base, warmup = schedule.base_lr, schedule.warmup_epochs

    if epoch < warmup:
        return base * max(epoch, 0.5) / warmup

    if schedule.kind is ScheduleKind.COSINE_WARMUP:
        # progress < 1 because epoch < total_epochs
        progress = (epoch - warmup) / (schedule.total_epochs - warmup)
        return base * 0.5 * (1.0 + math.cos(math.pi * progress))
    if schedule.kind is ScheduleKind.STEP_WARMUP:
        drops = sum(1 for m in schedule.step_milestones if epoch >= m)
        return base * schedule.step_factor ** drops
    return base


def fit(
        state: ModelState,
        mask: Optional['Mask'],
        data: TaskData,
        schedule: LRSchedule,
        momentum: float,
        weight_decay: float,
        batch_size: int,
        rng: RngState,
        start_epoch: int = 0,
        stop_epoch: Optional[int] = None
) -> Tuple[ModelState, float]:
    """Run epochs [start_epoch, stop_epoch) of a schedule; epoch e shuffles with rng.derive(e)"""
    stop_epoch = schedule.total_epochs if stop_epoch is None else stop_epoch
    loss = float('nan')
    for epoch in range(start_epoch, stop_epoch):
        lr = lr_at(schedule, epoch)
        state, loss = sgd_epoch(state, mask, data, lr, momentum, weight_decay, batch_size, rng.derive(epoch))
        logger.debug(f"epoch {epoch}: lr={lr:.5f}, loss={loss:.5f}")
    return state, loss


def predict(state: ModelState, mask: Optional['Mask'], inputs: Sequence) -> np.ndarray:
    return forward(state, mask, as_dense(inputs), Mode.EVAL).outputs
