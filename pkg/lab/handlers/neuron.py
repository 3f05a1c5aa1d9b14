# lab/handlers/neuron.py
"""
Neuron Command Handler

Single hidden neuron experiments: the quadrant success table, the
overparameterization sweep, the univariate outcome table and the
closed-form check against RK4.
"""

import argparse
import logging
import math
from typing import Dict, List

import numpy as np
import pandas as pd

from config import settings
from database import crud
from database.connection import get_session, init_registry
from lab.neuron_theory import (
    SignQuadrant, ToyScheme, QuadrantReport,
    balanced_init, closed_form_w, flow_constants, limit_w,
    run_overparam_sweep, run_quadrant_experiment,
    synthesize_dataset, univariate_outcome_table, univariate_rhs,
)
from lab.numerics import RngState, integrate_ode
from lab.utils import formatters, storage

logger = logging.getLogger(__name__)

# HELPERS

def _schemes(choice: str) -> List[ToyScheme]:
    if choice == 'both':
        return [ToyScheme.IMP, ToyScheme.LRR]
    return [ToyScheme(choice)]


def _rates_by_label(report: QuadrantReport) -> Dict[str, float]:
    return {q.label: rate for q, rate in report.success_rates().items()}


def _report_rows(report: QuadrantReport) -> List[dict]:
    return [dict(run.as_row(), d=report.d) for run in report.runs]


def _store_quadrants(experiment: str, reports: List[QuadrantReport]) -> None:
    """Registry is advisory: failures are logged, never raised"""
    try:
        init_registry(settings.database_url_for(settings.OUTPUT_ROOT))
        with get_session(settings.database_url_for(settings.OUTPUT_ROOT)) as session:
            for report in reports:
                crud.add_quadrant_results(session, experiment, report.d, _report_rows(report))
    except Exception as e:
        logger.warning(f"⚠️  Quadrant results not stored in registry: {e}")

# SUB-EXPERIMENTS

def show_closed_form(args: argparse.Namespace) -> None:
    """Closed-form w(t) next to the RK4 solution of the same scalar flow"""
    rng = RngState(args.seed)
    data = synthesize_dataset(args.n, 1, math.sqrt(args.sigma2), rng.derive(0))
    init = SignQuadrant.POS_POS.apply(balanced_init(1, 1.0, rng.derive(1)))
    constants = flow_constants(init, data)
    w0 = float(init.w[0])

    trajectory = integrate_ode(univariate_rhs(constants.C1, constants.C2_tilde), [w0], args.t_end, args.step)
    exact = np.array([closed_form_w(t, w0, constants.C1, constants.C2_tilde) for t in trajectory.times])
    error = float(np.max(np.abs(exact - trajectory.states[:, 0])))

    stride = max(1, len(trajectory) // 10)
    print(f"C1={constants.C1:.6f}  C2={constants.C2:.6f}  C2_tilde={constants.C2_tilde:.6f}  w0={w0:.6f}")
    print(formatters.format_closed_form(
        trajectory.times[::stride], exact[::stride],
        limit_w(w0, constants.C1, constants.C2_tilde)
    ))
    print(f"max |closed form - RK4| = {error:.3e}")


def show_univariate(args: argparse.Namespace) -> None:
    table = univariate_outcome_table(n=args.n, seeds=args.seeds, base_seed=args.seed)
    print("🧮 Univariate flow outcomes (d=1, no noise)")
    print(formatters.format_outcome_table({
        quadrant.label: [outcome.kind.value for outcome in outcomes]
        for quadrant, outcomes in table.items()
    }))


def _experiment_kwargs(args: argparse.Namespace) -> dict:
    return dict(
        n=args.n,
        sigma=math.sqrt(args.sigma2),
        seeds=args.seeds,
        epochs_per_level=args.epochs_per_level,
        lr=args.lr,
        base_seed=args.seed,
    )


def show_quadrants(args: argparse.Namespace) -> List[QuadrantReport]:
    reports = [
        run_quadrant_experiment(
            d=args.d, levels=args.levels, target_sparsity=args.target_sparsity,
            scheme=scheme, **_experiment_kwargs(args)
        )
        for scheme in _schemes(args.scheme)
    ]
    print(formatters.format_success_table(
        {report.scheme.value: _rates_by_label(report) for report in reports},
        title=f"🎯 Success rate per initial quadrant (d={args.d}, {args.seeds} seeds)"
    ))
    return reports


def show_sweep(args: argparse.Namespace) -> List[QuadrantReport]:
    dims = [int(d) for d in args.sweep.split(',') if d.strip()]
    sweep = run_overparam_sweep(
        dims=dims, levels=args.levels, target_sparsity=args.target_sparsity,
        **_experiment_kwargs(args)
    )
    differences = {}
    reports = []
    for d, by_scheme in sweep.items():
        lrr = _rates_by_label(by_scheme[ToyScheme.LRR])
        imp = _rates_by_label(by_scheme[ToyScheme.IMP])
        differences[d] = {label: lrr[label] - imp[label] for label in lrr}
        print(formatters.format_success_table(
            {scheme.value: _rates_by_label(report) for scheme, report in by_scheme.items()},
            title=f"\nd={d}"
        ))
        reports.extend(by_scheme.values())
    print()
    print(formatters.format_sweep_table(differences))
    return reports

# MAIN HANDLER

def handle_neuron(args: argparse.Namespace) -> int:
    """Run the requested neuron experiments; the quadrant table is the default"""
    logger.info("Neuron experiments started")

    if args.closed_form:
        show_closed_form(args)
    if args.univariate:
        show_univariate(args)

    reports: List[QuadrantReport] = []
    if args.sweep:
        reports = show_sweep(args)
    elif not (args.closed_form or args.univariate):
        reports = show_quadrants(args)

    if reports:
        if args.csv:
            rows = [row for report in reports for row in _report_rows(report)]
            path = storage.atomic_write_csv(args.csv, pd.DataFrame(rows))
            logger.info(f"✅ Quadrant rows written to {path}")
        _store_quadrants(args.tag, reports)

    logger.info("✅ Neuron experiments finished")
    return 0
