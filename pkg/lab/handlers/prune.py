# lab/handlers/prune.py
"""
Prune Command Handler

Runs iterative pruning over a seed x scheme matrix. Runs execute in a
worker pool when more than one worker is requested; the registry is
only written from the parent process.
"""

import argparse
import logging
from multiprocessing import Pool
from pathlib import Path
from typing import List, Optional, Tuple

from config import settings
from database import crud
from database.connection import get_session, init_registry
from lab.errors import LabError
from lab.experiment import ExperimentConfig, dump_config, load_config
from lab.pruning import run_iterative_pruning

logger = logging.getLogger(__name__)

Job = Tuple[ExperimentConfig, str]

# CONFIG RESOLUTION

def _source_for_seed(source: Optional[str], seed: int) -> Optional[str]:
    """Transplant sources may name the seed, e.g. runs/lrr_magnitude_global_seed{seed}"""
    return source.format(seed=seed) if source else source


def resolve_output_root(args: argparse.Namespace, config: ExperimentConfig) -> Path:
    """CLI flag, then config file, then LAB_OUTPUT_ROOT"""
    if args.output_root:
        return Path(args.output_root)
    if config.output_root:
        return Path(config.output_root)
    return settings.OUTPUT_ROOT


def build_jobs(args: argparse.Namespace) -> Tuple[Path, List[Job]]:
    """Expand the config and CLI overrides into one config per (scheme, seed)"""
    config = load_config(args.config) if args.config else ExperimentConfig()

    pruning = {}
    if args.levels is not None:
        pruning['levels'] = args.levels
    if args.criterion:
        pruning['criterion'] = args.criterion
    schedule = {'epochs': args.epochs} if args.epochs is not None else {}
    perturb = {}
    if args.perturb_level is not None:
        perturb['level'] = args.perturb_level
    if args.perturb_fraction is not None:
        perturb['fraction'] = args.perturb_fraction
    config = config.with_overrides(pruning=pruning, schedule=schedule, perturb=perturb)

    root = resolve_output_root(args, config)
    schemes = args.scheme or [config.pruning.scheme]
    seeds = args.seeds if args.seeds is not None else config.seeds
    first_seed = config.seed + args.seed_offset

    jobs = []
    for scheme in schemes:
        for seed in range(first_seed, first_seed + seeds):
            transplant = {
                'mask_run': _source_for_seed(args.mask_run, seed) or config.transplant.mask_run,
                'signs_run': _source_for_seed(args.signs_run, seed) or config.transplant.signs_run,
            }
            job_config = config.with_overrides(
                pruning={'scheme': scheme},
                transplant=transplant,
                seed=seed,
                output_root=str(root),
            )
            jobs.append((job_config, str(root / job_config.run_name())))
    return root, jobs

# WORKER

def run_job(job: Job) -> dict:
    """Executed in a worker: returns level metrics or the error, never raises"""
    config, run_dir = job
    try:
        record = run_iterative_pruning(config, run_dir=Path(run_dir))
        levels = [
            {
                'level': level.level,
                'sparsity': level.sparsity,
                'train_loss': level.train_loss,
                'test_loss': level.test_loss,
                'test_acc': level.test_acc,
            }
            for level in record.levels
        ]
        return {'run_dir': run_dir, 'levels': levels, 'error': None}

    except LabError as e:
        logger.error(f"❌ {Path(run_dir).name} failed: {e.code}: {e}")
        return {'run_dir': run_dir, 'levels': [], 'error': e}

    except Exception as e:
        logger.exception(f"❌ {Path(run_dir).name} crashed: {e}")
        return {'run_dir': run_dir, 'levels': [], 'error': e}

# REGISTRY

def _error_code(error: Exception) -> str:
    return error.code if isinstance(error, LabError) else type(error).__name__


def _register(url: str, jobs: List[Job]) -> dict:
    run_ids = {}
    try:
        init_registry(url)
        with get_session(url) as session:
            for config, run_dir in jobs:
                run = crud.register_run(
                    session, config.run_name(), run_dir,
                    config.pruning.scheme, config.pruning.criterion,
                    config.seed, dump_config(config)
                )
                if run:
                    run_ids[run_dir] = run.id
    except Exception as e:
        logger.warning(f"⚠️  Registry unavailable, continuing without it: {e}")
    return run_ids


def _record_result(url: str, run_id: Optional[int], result: dict) -> None:
    if run_id is None:
        return
    try:
        with get_session(url) as session:
            for level in result['levels']:
                crud.add_level_result(session, run_id, **level)
            error = result['error']
            if error is None:
                crud.mark_run_status(session, run_id, 'finished')
            else:
                crud.mark_run_status(session, run_id, 'failed', f"{_error_code(error)}: {error}")
    except Exception as e:
        logger.warning(f"⚠️  Could not record {result['run_dir']} in registry: {e}")

# MAIN HANDLER

def handle_prune(args: argparse.Namespace) -> int:
    """
    Run every (scheme, seed) job and record it in the registry

    Raises:
        Exception: the first error of a failed run, after all runs finished
    """
    root, jobs = build_jobs(args)
    workers = min(args.workers or settings.WORKERS, len(jobs))
    url = settings.database_url_for(root)
    logger.info(f"Starting {len(jobs)} run(s) under {root} with {workers} worker(s)")

    run_ids = _register(url, jobs)

    if workers > 1:
        with Pool(workers) as pool:
            results = list(pool.imap_unordered(run_job, jobs))
    else:
        results = [run_job(job) for job in jobs]

    failures = []
    for result in sorted(results, key=lambda r: r['run_dir']):
        _record_result(url, run_ids.get(result['run_dir']), result)
        if result['error'] is not None:
            failures.append(result['error'])
        else:
            final = result['levels'][-1]
            print(f"✅ {Path(result['run_dir']).name}: sparsity {final['sparsity']:.2%}, "
                  f"test acc {final['test_acc']:.4f}")

    if failures:
        logger.error(f"❌ {len(failures)} of {len(jobs)} run(s) failed")
        raise failures[0]

    logger.info(f"✅ All {len(jobs)} run(s) finished")
    return 0
