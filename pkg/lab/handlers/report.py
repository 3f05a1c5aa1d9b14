# lab/handlers/report.py
"""
Report Command Handler

Aggregates the metrics.csv files under an output root into
sparsity-vs-metric tables with 95% confidence intervals over seeds.
"""

import argparse
import logging
from pathlib import Path

from analytics.stats import aggregate_metrics, load_runs, write_report
from config import settings
from lab.utils import formatters
from lab.utils.storage import find_run_dirs

logger = logging.getLogger(__name__)

REPORT_METRICS = ('test_acc', 'train_loss')


def handle_report(args: argparse.Namespace) -> int:
    root = Path(args.output_root) if args.output_root else settings.OUTPUT_ROOT
    out_dir = Path(args.out) if args.out else root / 'report'

    run_dirs = find_run_dirs(root)
    logger.info(f"Found {len(run_dirs)} run(s) under {root}")
    frame = load_runs(run_dirs)

    tables = {metric: aggregate_metrics(frame, metric) for metric in REPORT_METRICS}
    if not frame.empty:
        for metric, table in tables.items():
            write_report(table, out_dir, metric)

    print(formatters.format_report(tables['test_acc']))
    return 0
