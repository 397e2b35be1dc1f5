"""
Turning configs into runs: problem construction, seed resolution, the sweep
grid and the worker pool that executes (grid point, seed, algorithm) jobs.
"""
import concurrent.futures
import itertools
import logging
import os
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .algorithms import HyperParams, LearningRateSchedule, TrainingOptions, run_training
from .availability import (INTERLEAVED_SINE, DynamicsSpec, base_probs, default_phi_caps,
                           draw_class_contribution)
from .config import ExperimentConfig, with_overrides
from .errors import ConfigError, InvalidInputError
from .host import default_workers
from .objectives import (NoiseSpec, SyntheticPool, generate_dirichlet_partition, make_quadratics,
                         make_test_set, random_quadratics)
from .results import ResultRow
from .rng import stream

logger = logging.getLogger(__name__)

SEED_ENV_VAR = 'FEDAWE_SIM_SEED'


@dataclass
class Problem:
    """Everything a run needs besides the algorithm and its step sizes"""
    objectives: list
    dynamics: DynamicsSpec
    noise: NoiseSpec
    x0: np.ndarray
    test_set: Optional[object] = None


def build_dynamics(config: ExperimentConfig, objectives: Sequence, seed: int) -> DynamicsSpec:
    dyn = config.dynamics
    if dyn.class_weighted:
        classes = config.objective.classes
        caps = dyn.phi_caps if dyn.phi_caps is not None else default_phi_caps(classes)
        if len(caps) != classes:
            raise ConfigError('dynamics.phi_caps', f"expected {classes} caps, got {len(caps)}")
        phi = draw_class_contribution(stream(seed, 'dynamics'), caps)
        # interleaved sine is exempt from the floor
        p_min = 0.0 if dyn.family == INTERLEAVED_SINE else dyn.p_min
        base_p = base_probs([obj.class_dist for obj in objectives], phi, p_min)
    elif isinstance(dyn.p, list):
        base_p = np.asarray(dyn.p, dtype=np.float64)
    else:
        base_p = np.full(config.m, float(dyn.p))
    return DynamicsSpec(family=dyn.family, base_p=base_p, gamma=dyn.gamma, period=dyn.period,
                        delta0=dyn.delta0, staircase_low=dyn.staircase_low)


def build_problem(config: ExperimentConfig, seed: int) -> Problem:
    """Objectives, dynamics and starting point for one seed (shared by all algorithms)"""
    obj = config.objective
    rng = stream(seed, 'data')
    test_set = None
    if obj.kind == 'quadratic':
        if obj.minimizers is not None:
            objectives = make_quadratics(obj.minimizers)
        else:
            objectives = random_quadratics(config.m, obj.dim, obj.scale, rng)
    else:
        pool = SyntheticPool.generate(obj.classes, obj.features, obj.pool_per_class, rng=rng)
        objectives = generate_dirichlet_partition(obj.alpha, config.m, obj.classes, pool, rng,
                                                  samples_per_client=obj.samples_per_client)
        if obj.test_per_class:
            test_set = make_test_set(pool, obj.test_per_class, rng)

    dim = objectives[0].dim
    if config.x0 is None:
        x0 = np.zeros(dim)
    else:
        x0 = np.asarray(config.x0, dtype=np.float64)
        if x0.shape != (dim,):
            raise ConfigError('x0', f"expected {dim} values, got {x0.size}")
    return Problem(objectives=objectives, dynamics=build_dynamics(config, objectives, seed),
                   noise=NoiseSpec(config.noise.sigma, config.noise.batch_size), x0=x0, test_set=test_set)


def hyper_params(config: ExperimentConfig, algorithm: str) -> HyperParams:
    hyper = config.hyper
    return HyperParams(schedule=LearningRateSchedule(hyper.eta_0_for(algorithm), hyper.schedule),
                       eta_g=hyper.eta_g, local_steps=hyper.local_steps, rounds=hyper.rounds)


def resolve_seeds(cli_seeds: Optional[Sequence[int]], config: Optional[ExperimentConfig] = None) -> List[int]:
    """--seed flag, then the config's seeds, then $FEDAWE_SIM_SEED, then 0"""
    if cli_seeds:
        return [int(s) for s in cli_seeds]
    if config is not None and config.seeds:
        return list(config.seeds)
    env = os.environ.get(SEED_ENV_VAR)
    if env:
        try:
            return [int(part) for part in env.split(',') if part.strip()]
        except ValueError:
            raise ConfigError(SEED_ENV_VAR, f"expected comma-separated integers, got {env!r}")
    return [0]


def sweep_grid(config: ExperimentConfig) -> List[Dict[str, object]]:
    """Cartesian product of the sweep section; a single empty point when there is none"""
    if not config.sweep:
        return [{}]
    keys = sorted(config.sweep)
    return [dict(zip(keys, values)) for values in itertools.product(*(config.sweep[k] for k in keys))]


@dataclass
class RunJob:
    config: ExperimentConfig
    algorithm: str
    seed: int
    grid_point: int = 0
    overrides: Dict[str, object] = field(default_factory=dict)

    @property
    def sort_key(self) -> Tuple[int, int, int]:
        return self.grid_point, self.seed, self.config.algorithms.index(self.algorithm)


def run_job(job: RunJob) -> List[ResultRow]:
    config = job.config
    problem = build_problem(config, job.seed)
    options = TrainingOptions(
        track_auxiliary=config.track_auxiliary,
        test_set=problem.test_set,
        record_wallclock=config.record_wallclock,
    )
    result = run_training(job.algorithm, problem.objectives, problem.dynamics,
                          hyper_params(config, job.algorithm), job.seed,
                          noise=problem.noise, x0=problem.x0, options=options)
    return [ResultRow.from_record(r, job.algorithm, job.seed, job.grid_point) for r in result.records]


def execute(fn: Callable, jobs: Sequence, workers: Optional[int] = None, processes: bool = False) -> list:
    """Run ``fn`` over ``jobs`` on a bounded pool; results come back in job order"""
    jobs = list(jobs)
    workers = default_workers() if workers is None else max(1, int(workers))
    if workers == 1 or len(jobs) <= 1:
        return [fn(job) for job in jobs]

    pool_cls = (concurrent.futures.ProcessPoolExecutor if processes
                else concurrent.futures.ThreadPoolExecutor)
    results: list = [None] * len(jobs)
    with pool_cls(max_workers=min(workers, len(jobs))) as executor:
        futures = {executor.submit(fn, job): index for index, job in enumerate(jobs)}
        for future in concurrent.futures.as_completed(futures):
            results[futures[future]] = future.result()
    return results


def make_jobs(config: ExperimentConfig, seeds: Sequence[int], use_sweep: bool = False) -> List[RunJob]:
    if config.sweep and not use_sweep:
        logger.warning(f"Config '{config.name}' has a sweep section; use the sweep command to run it")
    grid = sweep_grid(config) if use_sweep else [{}]
    jobs = []
    for index, overrides in enumerate(grid):
        point_config = with_overrides(config, overrides) if overrides else config
        for seed in seeds:
            for algorithm in point_config.algorithms:
                jobs.append(RunJob(point_config, algorithm, int(seed), index, overrides))
    return jobs


def run_experiment(config: ExperimentConfig, seeds: Sequence[int], workers: Optional[int] = None,
                   processes: bool = False, use_sweep: bool = False) -> List[ResultRow]:
    """All rows for ``config``, sorted by grid point, then seed, then algorithm order"""
    if not seeds:
        raise InvalidInputError("need at least one seed")
    jobs = make_jobs(config, seeds, use_sweep=use_sweep)
    logger.info(f"Running '{config.name}': {len(jobs)} runs, "
                f"{len(sweep_grid(config)) if use_sweep else 1} grid point(s), seeds {list(seeds)}")
    outputs = execute(run_job, jobs, workers=workers, processes=processes)
    rows: List[ResultRow] = []
    for job, job_rows in sorted(zip(jobs, outputs), key=lambda pair: pair[0].sort_key):
        rows.extend(job_rows)
    logger.info(f"Finished '{config.name}': {len(rows)} rows")
    return rows
