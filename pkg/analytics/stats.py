# analytics/stats.py
"""
Seed Statistics

Aggregates metrics.csv files over seeds into per-(scheme, level) tables
with the mean and a Student-t 95% confidence interval, and emits
whitespace-separated plot-data files.
"""

import logging
from pathlib import Path
from typing import Iterable, List, Tuple, Union

import numpy as np
import pandas as pd
from scipy import stats

from lab.utils.storage import atomic_write_csv, atomic_write_text, read_metrics

logger = logging.getLogger(__name__)

CONFIDENCE = 0.95


def confidence_interval(values: Iterable[float], confidence: float = CONFIDENCE) -> Tuple[float, float, float]:
    """
    (mean, low, high) of a t-interval with n - 1 degrees of freedom

    A single value or zero spread gives a zero-width interval.
    """
    values = np.asarray(list(values), dtype=np.float64)
    if values.size == 0:
        return float('nan'), float('nan'), float('nan')
    mean = float(values.mean())
    if values.size == 1:
        return mean, mean, mean
    sem = float(values.std(ddof=1)) / np.sqrt(values.size)
    half = float(stats.t.ppf(0.5 + confidence / 2, df=values.size - 1)) * sem
    return mean, mean - half, mean + half


def load_runs(run_dirs: Iterable[Union[str, Path]]) -> pd.DataFrame:
    frames = [read_metrics(d) for d in run_dirs]
    if not frames:
        return pd.DataFrame(columns=['level', 'sparsity', 'train_loss', 'test_acc', 'seed', 'scheme', 'run'])
    return pd.concat(frames, ignore_index=True)


def group_label(run_name: str) -> str:
    """Run directory name without its trailing _seed<k>"""
    head, sep, tail = run_name.rpartition('_seed')
    return head if sep and tail.isdigit() else run_name


def aggregate_metrics(frame: pd.DataFrame, metric: str = 'test_acc') -> pd.DataFrame:
    """One row per (group, level): mean sparsity, metric mean and CI, seed count"""
    if frame.empty:
        return pd.DataFrame(columns=['group', 'level', 'sparsity', 'mean', 'ci_low', 'ci_high', 'seeds'])
    frame = frame.copy()
    frame['group'] = frame['run'].map(group_label) if 'run' in frame else frame['scheme']
    rows = []
    for (group, level), part in frame.groupby(['group', 'level'], sort=True):
        mean, low, high = confidence_interval(part[metric])
        rows.append({
            'group': group,
            'level': int(level),
            'sparsity': float(part['sparsity'].mean()),
            'mean': mean,
            'ci_low': low,
            'ci_high': high,
            'seeds': int(part['seed'].nunique()),
        })
    return pd.DataFrame(rows)


def write_report(table: pd.DataFrame, out_dir: Union[str, Path], metric: str = 'test_acc') -> List[Path]:
    """summary CSV plus one plot-data file (x y ci_low ci_high) per group"""
    out_dir = Path(out_dir)
    written = [atomic_write_csv(out_dir / f'summary_{metric}.csv', table)]
    for group, part in table.groupby('group', sort=True):
        lines = ['# sparsity mean ci_low ci_high']
        for row in part.sort_values('level').itertuples():
            lines.append(f"{row.sparsity:.6f} {row.mean:.6f} {row.ci_low:.6f} {row.ci_high:.6f}")
        written.append(atomic_write_text(out_dir / f'{metric}_{group}.dat', '\n'.join(lines) + '\n'))
    logger.info(f"✅ Report written to {out_dir} ({len(written)} files)")
    return written


def write_histogram_plot_data(counts: np.ndarray, path: Union[str, Path]) -> Path:
    lines = ['# bin count'] + [f"{i} {int(c)}" for i, c in enumerate(counts)]
    return atomic_write_text(path, '\n'.join(lines) + '\n')


def sparsest_levels_gap(table: pd.DataFrame, group_a: str, group_b: str, count: int = 3) -> pd.Series:
    """mean(A) - mean(B) at the `count` sparsest levels both groups reached"""
    a = table[table['group'] == group_a].set_index('level')['mean']
    b = table[table['group'] == group_b].set_index('level')['mean']
    shared = sorted(set(a.index) & set(b.index))[-count:]
    return a.loc[shared] - b.loc[shared]
