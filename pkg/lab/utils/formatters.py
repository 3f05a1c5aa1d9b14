# lab/utils/formatters.py
"""
Console Formatters

Plain-text tables printed by the CLI commands.
"""

from typing import Dict, Iterable, List, Sequence

import numpy as np
import pandas as pd

QUADRANT_ORDER = ('PosPos', 'PosNeg', 'NegPos', 'NegNeg')


def format_success_table(rates: Dict[str, Dict[str, float]], title: str = '') -> str:
    """
    Format per-quadrant success rates

    Args:
        rates: scheme -> quadrant label -> success rate

    Returns:
        Table with one row per scheme
    """
    header = f"{'scheme':<8}" + ''.join(f"{q:>9}" for q in QUADRANT_ORDER)
    lines = [title] if title else []
    lines += [header, '-' * len(header)]
    for scheme, row in rates.items():
        lines.append(f"{scheme:<8}" + ''.join(f"{row.get(q, float('nan')):>9.2f}" for q in QUADRANT_ORDER))
    return '\n'.join(lines)


def format_sweep_table(differences: Dict[int, Dict[str, float]]) -> str:
    """LRR - IMP success difference per input dimension"""
    header = f"{'d':>4}" + ''.join(f"{q:>9}" for q in QUADRANT_ORDER)
    lines = ['LRR - IMP success rate', header, '-' * len(header)]
    for d in sorted(differences):
        lines.append(f"{d:>4}" + ''.join(f"{differences[d].get(q, float('nan')):>+9.2f}" for q in QUADRANT_ORDER))
    return '\n'.join(lines)


def format_outcome_table(table: Dict[str, List[str]]) -> str:
    """Outcome counts per quadrant, e.g. 'Success x20'"""
    lines = []
    for quadrant in QUADRANT_ORDER:
        outcomes = table.get(quadrant, [])
        counts = pd.Series(outcomes, dtype=object).value_counts()
        summary = ', '.join(f"{name} x{count}" for name, count in counts.items()) or '-'
        lines.append(f"{quadrant:<8} {summary}")
    return '\n'.join(lines)


def format_closed_form(times: Sequence[float], values: Sequence[float], limit: float) -> str:
    lines = [f"{'t':>10} {'w(t)':>14}"]
    lines += [f"{t:>10.3f} {w:>14.8f}" for t, w in zip(times, values)]
    lines.append(f"{'inf':>10} {limit:>14.8f}")
    return '\n'.join(lines)


def format_report(table: pd.DataFrame) -> str:
    """Accuracy per group and level with its confidence interval"""
    if table.empty:
        return 'No runs found.'
    lines = []
    for group, part in table.groupby('group', sort=True):
        lines.append(f"📊 {group}")
        for row in part.sort_values('level').itertuples():
            lines.append(
                f"   level {row.level:>2}  sparsity {row.sparsity:6.2%}  "
                f"acc {row.mean:.4f}  [{row.ci_low:.4f}, {row.ci_high:.4f}]  n={row.seeds}"
            )
    return '\n'.join(lines)


def format_histogram(name: str, counts: Iterable[int]) -> str:
    counts = np.asarray(list(counts), dtype=np.int64)
    total = max(int(counts.sum()), 1)
    lines = [name]
    for level, count in enumerate(counts):
        bar = '█' * int(round(40 * count / total))
        lines.append(f"   {level:>2} {count:>8} {bar}")
    return '\n'.join(lines)
