# lab/neuron_theory.py
"""
Single Hidden Neuron Theory

Dynamics of f(x) = a * relu(w . x) trained on the target relu(x_1) plus
Gaussian label noise under the mean squared error

    L = 1/(2n) * sum_i (a * relu(w . x_i) - y_i)^2.

Provides the closed-form univariate solution, the multivariate gradient
flow, outcome classification per initial sign quadrant and the iterative
pruning experiment contrasting weight rewinding (IMP) with learning rate
rewinding (LRR) on the toy model.
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Sequence

import numpy as np

from lab.errors import ConfigError
from lab.numerics import (
    DEFAULT_STEP, DenseMatrix, RngState, Trajectory,
    as_dense, integrate_ode, sample_gaussian_inputs
)

logger = logging.getLogger(__name__)

# Loss margin above the Bayes floor sigma^2/2 that still counts as success
SUCCESS_TOL = 1e-3
# |a * w_1 - 1| bound for success
PRODUCT_TOL = 0.1
# |a * w_1| at or above this with a < 0 is a wrong-sign fit rather than collapse
WRONG_SIGN_FLOOR = 0.1
# Full-batch gradient descent defaults for the pruning experiment
TOY_LR = 1e-2
TOY_EPOCHS = 10_000
BALANCE_TOL = 1e-12


# DOMAIN TYPES

@dataclass
class NeuronParams:
    """Outer weight a and inner weight vector w"""
    a: float
    w: np.ndarray

    def __post_init__(self):
        self.a = float(self.a)
        self.w = np.array(self.w, dtype=np.float64).reshape(-1)

    @property
    def d(self) -> int:
        return self.w.size

    def as_vector(self) -> np.ndarray:
        return np.concatenate(([self.a], self.w))

    @classmethod
    def from_vector(cls, vector: Sequence[float]) -> 'NeuronParams':
        vector = np.asarray(vector, dtype=np.float64)
        return cls(a=vector[0], w=vector[1:].copy())

    def copy(self) -> 'NeuronParams':
        return NeuronParams(self.a, self.w.copy())

    def imbalance(self) -> float:
        return abs(self.a ** 2 - float(self.w @ self.w))


@dataclass
class DataSet1Neuron:
    """Inputs X (n x d), labels y and the label noise standard deviation"""
    X: DenseMatrix
    y: np.ndarray
    noise_sigma: float = 0.0

    def __post_init__(self):
        self.X = as_dense(self.X)
        self.y = np.asarray(self.y, dtype=np.float64).reshape(-1)
        if self.y.size != self.X.shape[0]:
            raise ValueError(f"{self.X.shape[0]} inputs but {self.y.size} labels")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    @property
    def bayes_floor(self) -> float:
        return self.noise_sigma ** 2 / 2


@dataclass
class FlowConstants:
    """
    Constants of the flow on the current active set.

    C1, C2 are scalars for d = 1; for d > 1 they hold the first-coordinate
    entries and the full matrix / vector are in C1_matrix / C2_vector.
    """
    C1: float
    C2: float
    C2_tilde: float
    active_set: np.ndarray
    C1_matrix: Optional[np.ndarray] = None
    C2_vector: Optional[np.ndarray] = None


class SignQuadrant(Enum):
    """Joint initial sign of (a, w_1)"""
    POS_POS = (1, 1)
    POS_NEG = (1, -1)
    NEG_POS = (-1, 1)
    NEG_NEG = (-1, -1)

    @property
    def label(self) -> str:
        return {'POS_POS': 'PosPos', 'POS_NEG': 'PosNeg',
                'NEG_POS': 'NegPos', 'NEG_NEG': 'NegNeg'}[self.name]

    @classmethod
    def of(cls, params: NeuronParams) -> Optional['SignQuadrant']:
        key = (int(np.sign(params.a)), int(np.sign(params.w[0])))
        for quadrant in cls:
            if quadrant.value == key:
                return quadrant
        return None

    def apply(self, params: NeuronParams) -> NeuronParams:
        """Force the quadrant's signs onto params; magnitudes (and balancedness) kept"""
        sign_a, sign_w = self.value
        forced = params.copy()
        forced.a = sign_a * abs(forced.a)
        forced.w[0] = sign_w * abs(forced.w[0])
        return forced


class OutcomeKind(Enum):
    SUCCESS = 'Success'
    DEGENERATE = 'Degenerate'
    WRONG_SIGN = 'WrongSign'


@dataclass
class Outcome:
    kind: OutcomeKind
    final_loss: float

    @property
    def success(self) -> bool:
        return self.kind is OutcomeKind.SUCCESS


# DATA AND INITIALIZATION

def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def synthesize_dataset(n: int, d: int, noise_sigma: float, rng: RngState) -> DataSet1Neuron:
    """Gaussian inputs with rows ~ N(0, I/d) and labels relu(x_1) + N(0, sigma^2)"""
    X = sample_gaussian_inputs(n, d, rng.derive(0))
    noise = rng.derive(1).generator().standard_normal(n) * noise_sigma
    y = relu(X[:, 0]) + noise
    return DataSet1Neuron(X=X, y=y, noise_sigma=noise_sigma)


def balanced_init(
        d: int,
        scale: float,
        rng: RngState,
        max_product: Optional[float] = None
) -> NeuronParams:
    """
    Balanced random initialization: w ~ scale * N(0, I/d), a = +-||w||

    The sign of a is drawn uniformly, so |a| * ||w|| = ||w||^2. With
    max_product set, w is shrunk so that ||w||^2 <= max_product; sign
    preservation of a is only guaranteed for max_product <= 2.
    """
    if d < 1 or scale <= 0:
        raise ValueError(f"need d >= 1 and scale > 0, got d={d}, scale={scale}")
    generator = rng.generator()
    w = generator.standard_normal(d) * scale / np.sqrt(d)
    if max_product is not None and float(w @ w) > max_product:
        w *= np.sqrt(max_product / float(w @ w))
    sign = 1.0 if generator.random() < 0.5 else -1.0
    a = sign * float(np.sqrt(w @ w))
    return NeuronParams(a=a, w=w)


# LOSS AND FLOW CONSTANTS

def objective(params: NeuronParams, data: DataSet1Neuron, mask: np.ndarray = None) -> float:
    w = params.w if mask is None else params.w * mask
    residual = params.a * relu(data.X @ w) - data.y
    return float(residual @ residual) / (2 * data.n)


def active_set(w: np.ndarray, X: DenseMatrix) -> np.ndarray:
    """Samples with strictly positive pre-activation"""
    return np.flatnonzero(X @ w > 0)


def flow_constants(params: NeuronParams, data: DataSet1Neuron) -> FlowConstants:
    """
    Constants C1, C2 and C2_tilde = sign(a) sign(w) C2 over the active set

    An empty active set gives C1 = C2 = 0: the flow is frozen.
    """
    active = active_set(params.w, data.X)
    if active.size == 0:
        d = data.d
        return FlowConstants(0.0, 0.0, 0.0, active, np.zeros((d, d)), np.zeros(d))

    Xa = data.X[active]
    C1_matrix = Xa.T @ Xa / data.n
    C2_vector = Xa.T @ data.y[active] / data.n
    C1 = float(C1_matrix[0, 0])
    C2 = float(C2_vector[0])
    C2_tilde = float(np.sign(params.a) * np.sign(params.w[0])) * C2
    return FlowConstants(C1, C2, C2_tilde, active, C1_matrix, C2_vector)


def closed_form_w(t: float, w0: float, C1: float, C2_tilde: float) -> float:
    """
    Exact solution of the univariate flow  w' = -C1 w^3 + C2_tilde w

    Valid while w keeps its sign (the active set is then fixed). Uses the
    Bernoulli substitution u = 1/w^2, u' = 2 C1 - 2 C2_tilde u. C1 = 0 means
    an empty active set, so w stays at w0.
    """
    if C1 < 0:
        raise ValueError("C1 must be non-negative")
    if w0 == 0 or C1 == 0:
        return float(w0)

    if C2_tilde == 0:
        return float(w0 / math.sqrt(2 * C1 * w0 ** 2 * t + 1))

    exponent = -2 * C2_tilde * t
    if exponent > 700:
        return math.copysign(0.0, w0)
    # (1 - e^{-2ct}) / c is positive for either sign of c
    growth = -math.expm1(exponent) / C2_tilde
    inv_square = math.exp(exponent) / w0 ** 2 + C1 * growth
    return float(math.copysign(1.0 / math.sqrt(inv_square), w0))


def limit_w(w0: float, C1: float, C2_tilde: float) -> float:
    """t -> infinity value of closed_form_w"""
    if w0 == 0 or C1 == 0:
        return float(w0)
    if C2_tilde > 0:
        return math.copysign(math.sqrt(C2_tilde / C1), w0)
    return math.copysign(0.0, w0)


def univariate_rhs(C1: float, C2_tilde: float):
    """Right-hand side of the reduced scalar flow, for integrate_ode"""
    def rhs(t: float, state: np.ndarray) -> np.ndarray:
        w = state[0]
        return np.array([-C1 * w ** 3 + C2_tilde * w])
    return rhs


# MULTIVARIATE FLOW

def _flow_derivative(a: float, w: np.ndarray, X: DenseMatrix, y: np.ndarray):
    n = X.shape[0]
    pre = X @ w
    on = pre > 0
    C1w = X.T @ np.where(on, pre, 0.0) / n
    C2 = X.T @ np.where(on, y, 0.0) / n
    a_dot = -a * float(w @ C1w) + float(C2 @ w)
    w_dot = -a * a * C1w + a * C2
    return a_dot, w_dot


def multivariate_flow_rhs(params: NeuronParams, data: DataSet1Neuron) -> NeuronParams:
    """
    Time derivative (a', w') of the gradient flow

        w' = -a^2 C1 w + a C2,   a' = -a w^T C1 w + C2^T w

    with C1, C2 recomputed from the current active set.
    """
    a_dot, w_dot = _flow_derivative(params.a, params.w, data.X, data.y)
    return NeuronParams(a=a_dot, w=w_dot)


def loss_gradient(params: NeuronParams, data: DataSet1Neuron, mask: np.ndarray = None) -> NeuronParams:
    """Gradient of the objective; the negated flow, restricted to a mask"""
    w = params.w if mask is None else params.w * mask
    a_dot, w_dot = _flow_derivative(params.a, w, data.X, data.y)
    grad_w = -w_dot if mask is None else -w_dot * mask
    return NeuronParams(a=-a_dot, w=grad_w)


def simulate_flow(
        params0: NeuronParams,
        data: DataSet1Neuron,
        t_end: float,
        step: float = DEFAULT_STEP
) -> Trajectory:
    """Integrate the multivariate flow with RK4; states are rows [a, w_1..w_d]"""
    X, y = data.X, data.y

    def rhs(t: float, state: np.ndarray) -> np.ndarray:
        a_dot, w_dot = _flow_derivative(state[0], state[1:], X, y)
        derivative = np.empty_like(state)
        derivative[0] = a_dot
        derivative[1:] = w_dot
        return derivative

    logger.debug(f"Simulating flow: d={data.d}, n={data.n}, t_end={t_end}, step={step}")
    return integrate_ode(rhs, params0.as_vector(), t_end, step)


def max_imbalance(trajectory: Trajectory) -> float:
    states = trajectory.states
    return float(np.max(np.abs(states[:, 0] ** 2 - np.sum(states[:, 1:] ** 2, axis=1))))


# OUTCOMES

def classify_outcome(
        final: NeuronParams,
        loss: float,
        success_tol: float = SUCCESS_TOL,
        product_tol: float = PRODUCT_TOL,
        noise_floor: float = 0.0,
        wrong_sign_floor: float = WRONG_SIGN_FLOOR
) -> Outcome:
    """
    Success: loss within success_tol of the noise floor and a*w_1 near 1.
    WrongSign: a < 0 with |a*w_1| bounded away from 0. Degenerate otherwise.
    """
    if success_tol <= 0:
        raise ValueError("success_tol must be positive")
    product = final.a * final.w[0]
    if loss < noise_floor + success_tol and abs(product - 1.0) < product_tol:
        kind = OutcomeKind.SUCCESS
    elif final.a < 0 and abs(product) >= wrong_sign_floor:
        kind = OutcomeKind.WRONG_SIGN
    else:
        kind = OutcomeKind.DEGENERATE
    return Outcome(kind=kind, final_loss=float(loss))


def check_sign_preservation(trajectory: Trajectory) -> bool:
    """True iff a never changes sign (zeros are ignored)"""
    signs = np.sign(trajectory.states[:, 0])
    signs = signs[signs != 0]
    return bool(signs.size == 0 or np.all(signs == signs[0]))


def univariate_outcome_table(
        n: int = 10_000,
        seeds: int = 20,
        t_end: float = 50.0,
        step: float = 1e-2,
        scale: float = 1.0,
        base_seed: int = 0
) -> Dict[SignQuadrant, List[Outcome]]:
    """Univariate zero-noise flow outcomes per forced initial quadrant"""
    table = {quadrant: [] for quadrant in SignQuadrant}
    for seed in range(seeds):
        rng = RngState(base_seed + seed)
        data = synthesize_dataset(n, 1, 0.0, rng.derive(0))
        init = balanced_init(1, scale, rng.derive(1))
        for quadrant in SignQuadrant:
            trajectory = simulate_flow(quadrant.apply(init), data, t_end, step)
            final = NeuronParams.from_vector(trajectory.final)
            table[quadrant].append(classify_outcome(final, objective(final, data)))
    return table


# ITERATIVE PRUNING ON THE TOY MODEL

class ToyScheme(Enum):
    IMP = 'imp'
    LRR = 'lrr'


@dataclass
class QuadrantRun:
    """One CSV row of the quadrant experiment"""
    seed: int
    quadrant: SignQuadrant
    scheme: ToyScheme
    final_loss: float
    outcome: OutcomeKind
    a_final: float
    w1_final: float

    def as_row(self) -> dict:
        return {
            'seed': self.seed,
            'quadrant': self.quadrant.label,
            'scheme': self.scheme.value,
            'final_loss': self.final_loss,
            'outcome': self.outcome.value,
            'a_final': self.a_final,
            'w1_final': self.w1_final,
        }


@dataclass
class QuadrantReport:
    d: int
    scheme: ToyScheme
    runs: List[QuadrantRun] = field(default_factory=list)

    def success_rates(self) -> Dict[SignQuadrant, float]:
        rates = {}
        for quadrant in SignQuadrant:
            subset = [r for r in self.runs if r.quadrant is quadrant]
            rates[quadrant] = (
                sum(r.outcome is OutcomeKind.SUCCESS for r in subset) / len(subset)
                if subset else float('nan')
            )
        return rates

    def mean_loss(self, quadrant: SignQuadrant) -> float:
        losses = [r.final_loss for r in self.runs if r.quadrant is quadrant]
        return float(np.mean(losses)) if losses else float('nan')


def level_keep_count(d: int, target_sparsity: float, level: int, levels: int) -> int:
    """Inputs kept after `level` of `levels` equal-fraction pruning rounds"""
    if levels == 0:
        return d
    density = (1.0 - target_sparsity) ** (level / levels)
    return max(1, int(math.floor(d * density + 0.5)))


def prune_inputs(w: np.ndarray, mask: np.ndarray, keep: int) -> np.ndarray:
    """Keep the `keep` largest-magnitude inner weights among those still unmasked"""
    scores = np.where(mask > 0, np.abs(w), -np.inf)
    order = np.argsort(-scores, kind='stable')
    new_mask = np.zeros_like(mask)
    new_mask[order[:keep]] = 1.0
    return new_mask * mask


def train_gradient_descent(
        params: NeuronParams,
        data: DataSet1Neuron,
        mask: np.ndarray,
        lr: float,
        epochs: int
) -> NeuronParams:
    """Full-batch gradient descent on the masked neuron"""
    a, w = params.a, params.w * mask
    X, y = data.X, data.y
    for _ in range(epochs):
        a_dot, w_dot = _flow_derivative(a, w, X, y)
        a = a + lr * a_dot
        w = (w + lr * w_dot) * mask
    return NeuronParams(a=a, w=w)


def _run_single(
        init: NeuronParams,
        data: DataSet1Neuron,
        scheme: ToyScheme,
        levels: int,
        target_sparsity: float,
        epochs_per_level: int,
        lr: float
) -> NeuronParams:
    d = init.d
    mask = np.ones(d)
    params = init.copy()
    for level in range(levels + 1):
        if level > 0:
            keep = level_keep_count(d, target_sparsity, level, levels)
            mask = prune_inputs(params.w, mask, keep)
            if scheme is ToyScheme.IMP:
                params = NeuronParams(init.a, init.w * mask)
            else:
                params = NeuronParams(params.a, params.w * mask)
        params = train_gradient_descent(params, data, mask, lr, epochs_per_level)
    return params


def run_quadrant_experiment(
        d: int,
        n: int,
        sigma: float,
        levels: int,
        target_sparsity: float,
        scheme: ToyScheme,
        seeds: int,
        epochs_per_level: int = TOY_EPOCHS,
        lr: float = TOY_LR,
        scale: float = 1.0,
        success_tol: float = SUCCESS_TOL,
        product_tol: float = PRODUCT_TOL,
        base_seed: int = 0
) -> QuadrantReport:
    """
    Train, prune and retrain the d-input neuron once per (seed, quadrant)

    Args:
        d: input dimension
        n: training samples
        sigma: label noise standard deviation
        levels: pruning rounds; every round keeps the same fraction
        target_sparsity: final fraction of pruned inputs
        scheme: IMP rewinds to the initial parameters, LRR continues
        seeds: runs per quadrant
        epochs_per_level: gradient steps per training cycle
        lr: gradient descent step size

    Returns:
        QuadrantReport with one QuadrantRun per (seed, quadrant)

    Raises:
        ConfigError: the target sparsity leaves more than one input
    """
    if d < 1 or n < 1 or seeds < 1:
        raise ConfigError("d, n and seeds must be positive")
    if not 0 < target_sparsity < 1 and levels > 0:
        raise ConfigError(f"target_sparsity must lie in (0, 1), got {target_sparsity}")
    if level_keep_count(d, target_sparsity, levels, levels) > 1:
        raise ConfigError(
            f"target sparsity {target_sparsity} over {levels} levels leaves "
            f"{level_keep_count(d, target_sparsity, levels, levels)} of {d} inputs"
        )

    report = QuadrantReport(d=d, scheme=scheme)
    floor = sigma ** 2 / 2
    for seed in range(seeds):
        rng = RngState(base_seed + seed)
        data = synthesize_dataset(n, d, sigma, rng.derive(0))
        init = balanced_init(d, scale, rng.derive(1))
        for quadrant in SignQuadrant:
            final = _run_single(
                quadrant.apply(init), data, scheme, levels,
                target_sparsity, epochs_per_level, lr
            )
            loss = objective(final, data)
            outcome = classify_outcome(final, loss, success_tol, product_tol, floor)
            report.runs.append(QuadrantRun(
                seed=base_seed + seed, quadrant=quadrant, scheme=scheme,
                final_loss=loss, outcome=outcome.kind,
                a_final=final.a, w1_final=float(final.w[0])
            ))
        logger.debug(f"Seed {base_seed + seed} done for d={d}, scheme={scheme.value}")

    rates = report.success_rates()
    logger.info(
        f"✅ Quadrant experiment d={d} {scheme.value}: "
        + ", ".join(f"{q.label}={rates[q]:.2f}" for q in SignQuadrant)
    )
    return report


def run_overparam_sweep(
        dims: Sequence[int] = (1, 2, 5, 10),
        levels: int = 3,
        target_sparsity: float = 0.9,
        **kwargs
) -> Dict[int, Dict[ToyScheme, QuadrantReport]]:
    """Quadrant experiment for both schemes at several input dimensions"""
    sweep = {}
    for d in dims:
        d_levels = 0 if d == 1 else levels
        sweep[d] = {
            scheme: run_quadrant_experiment(
                d=d, levels=d_levels, target_sparsity=target_sparsity,
                scheme=scheme, **kwargs
            )
            for scheme in ToyScheme
        }
    return sweep
