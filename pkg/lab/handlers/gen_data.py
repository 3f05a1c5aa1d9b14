# lab/handlers/gen_data.py
"""
Gen-Data Command Handler
"""

import argparse
import logging

from lab.numerics import RngState
from lab.utils.datasets import gen_synthetic_task, save_task

logger = logging.getLogger(__name__)


def handle_gen_data(args: argparse.Namespace) -> int:
    """Synthesize a Gaussian-mixture task and store it as .npz"""
    task = gen_synthetic_task(
        classes=args.classes,
        dim=args.dim,
        n_train=args.n_train,
        n_test=args.n_test,
        separation=args.separation,
        rng=RngState(args.seed),
    )
    path = save_task(args.out, task)
    print(f"✅ Task saved to {path} ({task.train.n} train / {task.test.n} test samples)")
    return 0
