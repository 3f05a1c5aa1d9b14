# lab/numerics.py
"""
Numerics

Dense linear algebra helpers, seeded randomness and a fixed-step RK4
integrator shared by every other module.

All reals are float64. Randomness never touches global state: every
consumer receives an ``RngState`` and builds its own generator from it.
"""

import logging
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from lab.errors import NonFiniteState, ShapeMismatch

logger = logging.getLogger(__name__)

MASK64 = (1 << 64) - 1

DEFAULT_STEP = 1e-3

# DENSE MATRICES

DenseMatrix = np.ndarray


def as_dense(data, rows: int = None, cols: int = None) -> DenseMatrix:
    """
    Validate and convert to a finite float64 row-major matrix

    Args:
        data: anything numpy can turn into a 2-D array
        rows: expected row count (optional)
        cols: expected column count (optional)

    Returns:
        C-contiguous float64 array
    """
    matrix = np.ascontiguousarray(data, dtype=np.float64)
    if matrix.ndim != 2:
        raise ShapeMismatch(f"expected a 2-D matrix, got shape {matrix.shape}")
    if rows is not None and matrix.shape[0] != rows:
        raise ShapeMismatch(f"expected {rows} rows, got {matrix.shape[0]}")
    if cols is not None and matrix.shape[1] != cols:
        raise ShapeMismatch(f"expected {cols} columns, got {matrix.shape[1]}")
    if not np.all(np.isfinite(matrix)):
        raise ValueError("matrix contains non-finite entries")
    return matrix


# RANDOMNESS

@dataclass(frozen=True)
class RngState:
    """
    Explicit random stream: a 64-bit seed plus a stream position.

    Generators are counter-based (Philox), so identical (seed, position)
    pairs give identical draws on every platform.
    """
    seed: int
    position: int = 0

    def generator(self) -> np.random.Generator:
        sequence = np.random.SeedSequence(
            entropy=self.seed & MASK64,
            spawn_key=(self.position & MASK64,)
        )
        return np.random.Generator(np.random.Philox(sequence))

    def derive(self, *tags: int) -> 'RngState':
        """Independent child stream addressed by integer tags"""
        sequence = np.random.SeedSequence(
            entropy=[self.seed & MASK64, self.position & MASK64, *(t & MASK64 for t in tags)]
        )
        position = int(sequence.generate_state(1, dtype=np.uint64)[0])
        return RngState(self.seed, position)


def sample_gaussian_inputs(n: int, d: int, rng: RngState) -> DenseMatrix:
    """n x d matrix with iid N(0, 1/d) entries, i.e. rows ~ N(0, I/d)"""
    if n < 1 or d < 1:
        raise ValueError(f"n and d must be positive, got n={n}, d={d}")
    return rng.generator().standard_normal((n, d)) / np.sqrt(d)


# ODE INTEGRATION

@dataclass
class Trajectory:
    """Time grid and the state recorded at each time point"""
    times: np.ndarray
    states: np.ndarray

    def __post_init__(self):
        if self.states.shape[0] != self.times.shape[0]:
            raise ShapeMismatch("one state per time point required")
        if self.times.size > 1 and not np.all(np.diff(self.times) > 0):
            raise ValueError("trajectory times must be strictly increasing")

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]

    def __len__(self) -> int:
        return self.times.shape[0]


def time_grid(t_end: float, step: float) -> np.ndarray:
    """Uniform grid from 0 to t_end; the last interval is shortened to land on t_end"""
    if step <= 0 or t_end <= 0:
        raise ValueError(f"step and t_end must be positive, got step={step}, t_end={t_end}")
    count = int(np.ceil(t_end / step - 1e-9))
    times = np.arange(count + 1, dtype=np.float64) * step
    times[-1] = t_end
    return times


def integrate_ode(
        rhs: Callable[[float, np.ndarray], np.ndarray],
        y0: Sequence[float],
        t_end: float,
        step: float = DEFAULT_STEP
) -> Trajectory:
    """
    Classical fourth-order Runge-Kutta on a fixed grid

    Args:
        rhs: derivative function rhs(t, y)
        y0: initial state vector
        t_end: final time (reached exactly)
        step: nominal step size

    Returns:
        Trajectory holding every grid point

    Raises:
        NonFiniteState: the state stopped being finite
    """
    times = time_grid(t_end, step)
    y = np.array(y0, dtype=np.float64).reshape(-1)
    states = np.empty((times.size, y.size), dtype=np.float64)
    states[0] = y

    for i in range(times.size - 1):
        t = times[i]
        h = times[i + 1] - t
        k1 = rhs(t, y)
        k2 = rhs(t + h / 2, y + (h / 2) * k1)
        k3 = rhs(t + h / 2, y + (h / 2) * k2)
        k4 = rhs(t + h, y + h * k3)
        y = y + (h / 6) * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(y)):
            logger.error(f"❌ RK4 state became non-finite at t={times[i + 1]:.6g}")
            raise NonFiniteState(f"non-finite state at t={times[i + 1]:.6g} (step {step})")
        states[i + 1] = y

    return Trajectory(times=times, states=states)
