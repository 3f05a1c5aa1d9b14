# lab/handlers/analyze.py
"""
Analyze Command Handler

Sign statistics of finished runs: settle-level and flip-count
histograms per run, and the net sign-flip difference of two runs.
"""

import argparse
import logging
from pathlib import Path
from typing import Union

import pandas as pd

from analytics.signs import (
    SignLedger, flip_count_histogram, flips_from_initial, histogram_frame,
    median_settle_level, net_flip_difference, settle_iteration_histogram,
)
from analytics.stats import write_histogram_plot_data
from lab.utils import formatters, storage

logger = logging.getLogger(__name__)

LEDGER_FILE = 'signs.bin'


def load_ledger(run_dir: Union[str, Path]) -> SignLedger:
    return SignLedger.from_arrays(storage.load_npz(Path(run_dir) / LEDGER_FILE))


def analyze_run(run_dir: Path, out_dir: Path) -> float:
    """Write both histograms of one run; returns its median settle level"""
    ledger = load_ledger(run_dir)
    histograms = {
        'settle': settle_iteration_histogram(ledger),
        'flips': flip_count_histogram(ledger),
    }
    for name, counts in histograms.items():
        stem = out_dir / f"{run_dir.name}_{name}"
        storage.atomic_write_csv(stem.with_suffix('.csv'), histogram_frame(counts))
        write_histogram_plot_data(counts, stem.with_suffix('.dat'))
        print(formatters.format_histogram(f"{run_dir.name} {name}", counts))

    median = median_settle_level(ledger)
    print(f"   median settle level: {median:.1f}")
    return median


def compare_runs(run_a: Path, run_b: Path, out_dir: Path) -> pd.DataFrame:
    """Per level flips from the initial signs of A minus those of B"""
    ledger_a, ledger_b = load_ledger(run_a), load_ledger(run_b)
    frame = pd.DataFrame({
        'level': range(ledger_a.levels),
        'flips_a': flips_from_initial(ledger_a),
        'flips_b': flips_from_initial(ledger_b),
        'difference': net_flip_difference(ledger_a, ledger_b),
    })
    path = storage.atomic_write_csv(out_dir / f"flipdiff_{run_a.name}__{run_b.name}.csv", frame)
    print(f"🔀 {run_a.name} - {run_b.name}")
    print(frame.to_string(index=False))
    logger.info(f"✅ Flip difference written to {path}")
    return frame


def handle_analyze(args: argparse.Namespace) -> int:
    out_dir = Path(args.out)
    run_dirs = [Path(d) for d in args.run_dirs]
    logger.info(f"Analyzing {len(run_dirs)} run(s) into {out_dir}")

    medians = {run_dir.name: analyze_run(run_dir, out_dir) for run_dir in run_dirs}
    storage.atomic_write_csv(
        out_dir / 'median_settle.csv',
        pd.DataFrame({'run': list(medians), 'median_settle_level': list(medians.values())})
    )

    if args.compare:
        run_a, run_b = (Path(d) for d in args.compare)
        compare_runs(run_a, run_b, out_dir)
    return 0
