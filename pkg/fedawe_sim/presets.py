"""
Named experiment presets.

Each preset is a pure function of its options and seeds and returns a
``PresetTable`` with the aggregated numbers plus the property checks it
evaluated. ``QUICK_OPTIONS`` holds reduced sizes that exercise the same code
paths in seconds.
"""
import logging
import math
from collections import defaultdict
from typing import Callable, Dict, Optional, Sequence, Tuple

import numpy as np

from .algorithms import HyperParams, fedavg_fixed_point, run_batched_quadratics
from .availability import FAMILIES, STATIONARY
from .config import ExperimentConfig, config_from_dict
from .host import default_workers
from .errors import InvalidInputError
from .results import PresetTable, ResultRow, summarize, tail_mean
from .runner import execute, run_experiment, sweep_grid

logger = logging.getLogger(__name__)

BIAS_MINIMIZERS = (0.0, 100.0)
BIAS_OPTIMUM = 50.0
DEFAULT_BIAS_GRID = tuple(round(0.1 * k, 1) for k in range(1, 11))
TAIL_ROUNDS = 50
TARGET_FRACTIONS = (0.25, 0.5, 0.75, 1.0)


def _check_probability_grid(values: Sequence[float], name: str) -> None:
    for v in values:
        if not 0.0 < v <= 1.0:
            raise InvalidInputError(f"{name} values must lie in (0, 1], got {v}")


def _bias_job(args: Tuple) -> np.ndarray:
    """x_output of a chunk of replications: mean of the last ``tail_fraction`` of the iterates"""
    algorithm, base_p, seeds, rounds, eta_l, tail_fraction = args
    hp = HyperParams.constant(eta_l, rounds=rounds)
    eval_models = run_batched_quadratics(algorithm, BIAS_MINIMIZERS, base_p, hp, seeds,
                                         x0=np.array([BIAS_OPTIMUM]))
    tail = max(1, int(round(tail_fraction * rounds)))
    return eval_models[:, -tail:, 0].mean(axis=1)


def preset_example1_bias(grid: Sequence[float] = DEFAULT_BIAS_GRID, replications: int = 10,
                         rounds: int = 2000, eta_l: float = 0.01, tail_fraction: float = 0.2,
                         seeds: Sequence[int] = (0,), workers: Optional[int] = 1, processes: bool = False,
                         fedavg_tolerance: float = 2.0, fedawe_tolerance: float = 5.0,
                         points: Optional[Sequence[Tuple[float, float]]] = None) -> PresetTable:
    """FedAvg-active vs FedAWE on two quadratics (minimizers 0 and 100) over a (p1, p2) grid.

    ``points`` replaces the full ``grid x grid`` product with explicit pairs.
    Replication r of a grid point uses seed ``seeds[0] + r``. All replications
    of all points advance together, split into one chunk per worker.
    """
    pairs = [tuple(pair) for pair in points] if points is not None else [(p1, p2) for p1 in grid for p2 in grid]
    _check_probability_grid([p for pair in pairs for p in pair], 'grid')
    if replications < 1 or rounds < 1:
        raise InvalidInputError("need at least one replication and one round")
    base_seed = int(seeds[0]) if seeds else 0

    base_p = np.array([pair for pair in pairs for _ in range(replications)], dtype=np.float64)
    run_seeds = np.array([base_seed + r for _ in pairs for r in range(replications)])
    chunks = max(1, min(default_workers() if workers is None else int(workers), len(run_seeds)))
    jobs = [(algorithm, p_chunk, s_chunk.tolist(), rounds, eta_l, tail_fraction)
            for algorithm in ('fedavg_active', 'fedawe')
            for p_chunk, s_chunk in zip(np.array_split(base_p, chunks), np.array_split(run_seeds, chunks))]
    outputs = execute(_bias_job, jobs, workers=workers, processes=processes)
    x_out = {'fedavg_active': np.concatenate(outputs[:chunks]), 'fedawe': np.concatenate(outputs[chunks:])}

    table = PresetTable('example1_bias', ['p1', 'p2', 'x_output_fedavg', 'x_output_fedawe',
                                          'closed_form_prediction'])
    fedavg_ok, fedawe_ok = True, True
    for index, (p1, p2) in enumerate(pairs):
        rows = slice(index * replications, (index + 1) * replications)
        fedavg = float(np.mean(x_out['fedavg_active'][rows]))
        fedawe = float(np.mean(x_out['fedawe'][rows]))
        predicted = float(fedavg_fixed_point([p1, p2], BIAS_MINIMIZERS)[0])
        table.add(p1=p1, p2=p2, x_output_fedavg=fedavg, x_output_fedawe=fedawe,
                  closed_form_prediction=predicted)
        if p1 != p2 and abs(fedavg - predicted) > fedavg_tolerance:
            fedavg_ok = False
            logger.warning(f"FedAvg x_output {fedavg:.2f} vs predicted {predicted:.2f} at ({p1}, {p2})")
        if abs(fedawe - BIAS_OPTIMUM) > fedawe_tolerance:
            fedawe_ok = False
            logger.warning(f"FedAWE x_output {fedawe:.2f} at ({p1}, {p2})")
    table.checks['fedavg_matches_fixed_point'] = fedavg_ok
    table.checks['fedawe_near_optimum'] = fedawe_ok
    return table


def _logistic_config(name: str, algorithms: Sequence[str], m: int, rounds: int, seeds: Sequence[int],
                     dynamics: dict, sweep: dict, objective: Optional[dict] = None,
                     noise: Optional[dict] = None, eta_0: float = 0.05) -> ExperimentConfig:
    return config_from_dict({
        'name': name,
        'algorithms': list(algorithms),
        'm': m,
        'seeds': [int(s) for s in seeds],
        'objective': {'kind': 'logistic', **(objective or {})},
        'noise': noise or {},
        'dynamics': dynamics,
        'hyper': {'eta_0': eta_0, 'schedule': 'sqrt_decay', 'rounds': rounds},
        'sweep': sweep,
    })


def _tail_metrics(rows: Sequence[ResultRow], tail: int = TAIL_ROUNDS) -> Dict[Tuple, Dict[str, float]]:
    """(grid_point, algorithm, seed) -> tail means of the train/test metrics"""
    series = defaultdict(lambda: defaultdict(list))
    for row in rows:
        key = (row.grid_point, row.algorithm, row.seed)
        for metric in ('loss', 'accuracy', 'test_accuracy', 'grad_norm_sq'):
            value = getattr(row, metric)
            if value is not None:
                series[key][metric].append(value)
    out = {}
    for key, metrics in series.items():
        out[key] = {name: tail_mean(values, tail) for name, values in metrics.items()}
        out[key]['grad_norm_time_avg'] = float(np.mean(metrics['grad_norm_sq']))
    return out


def _across_seeds(metrics: Dict[Tuple, Dict[str, float]], grid_point: int, algorithm: str,
                  name: str) -> Tuple[float, float]:
    values = [v[name] for (g, a, _), v in metrics.items() if g == grid_point and a == algorithm and name in v]
    return summarize(values)


def preset_example2_nonstationary(gammas: Sequence[float] = (0.1, 0.3, 0.5), ps: Sequence[float] = (0.1, 0.3),
                                  seeds: Sequence[int] = (0, 1, 2), m: int = 20, rounds: int = 300,
                                  workers: Optional[int] = 1, processes: bool = False) -> PresetTable:
    """FedAvg-active vs FedAWE on the logistic task under p_i^t = p [gamma sin(2 pi t / P) + 1 - gamma]"""
    _check_probability_grid(ps, 'p')
    config = _logistic_config('example2_nonstationary', ['fedawe', 'fedavg_active'], m, rounds, seeds,
                              dynamics={'family': 'sine'},
                              sweep={'dynamics.gamma': list(gammas), 'dynamics.p': list(ps)})
    grid = sweep_grid(config)
    rows = run_experiment(config, config.seeds, workers=workers, processes=processes, use_sweep=True)
    metrics = _tail_metrics(rows)

    table = PresetTable('example2_nonstationary', ['gamma', 'p', 'algorithm', 'loss_mean', 'loss_std',
                                                   'accuracy_mean', 'accuracy_std'])
    for index, point in enumerate(grid):
        for algorithm in config.algorithms:
            loss = _across_seeds(metrics, index, algorithm, 'loss')
            acc = _across_seeds(metrics, index, algorithm, 'accuracy')
            table.add(gamma=point['dynamics.gamma'], p=point['dynamics.p'], algorithm=algorithm,
                      loss_mean=loss[0], loss_std=loss[1], accuracy_mean=acc[0], accuracy_std=acc[1])

    def loss_of(gamma, p, algorithm):
        rows = table.where(gamma=gamma, p=p, algorithm=algorithm)
        return rows[0]['loss_mean'] if rows else None

    low, high = min(gammas), max(gammas)
    if low != high:
        degrade = [loss_of(high, p, 'fedavg_active') >= loss_of(low, p, 'fedavg_active') for p in ps]
        table.checks['fedavg_degrades_with_gamma'] = all(degrade)
    table.checks['fedawe_not_worse'] = all(
        loss_of(g, p, 'fedawe') <= loss_of(g, p, 'fedavg_active') for g in gammas for p in ps)
    return table


def preset_speedup(ms: Sequence[int] = (8, 16, 32), rounds: int = 500, delta: float = 0.5,
                   sigma: float = 1.0, seeds: Sequence[int] = (0, 1, 2),
                   workers: Optional[int] = 1, processes: bool = False) -> PresetTable:
    """Time-averaged ||grad F(x_bar)||^2 of FedAWE as the number of clients grows"""
    _check_probability_grid([delta], 'delta')
    config = _logistic_config('speedup', ['fedawe'], max(ms), rounds, seeds,
                              dynamics={'family': STATIONARY, 'p': delta},
                              noise={'sigma': sigma}, sweep={'m': list(ms)})
    grid = sweep_grid(config)
    rows = run_experiment(config, config.seeds, workers=workers, processes=processes, use_sweep=True)
    metrics = _tail_metrics(rows)

    table = PresetTable('speedup', ['m', 'expected_active', 'grad_norm_time_avg_mean',
                                    'grad_norm_time_avg_std'])
    for index, point in enumerate(grid):
        mean, std = _across_seeds(metrics, index, 'fedawe', 'grad_norm_time_avg')
        table.add(m=point['m'], expected_active=point['m'] * delta,
                  grad_norm_time_avg_mean=mean, grad_norm_time_avg_std=std)
    averages = table.column('grad_norm_time_avg_mean')
    table.checks['monotone_non_increasing'] = all(a >= b for a, b in zip(averages, averages[1:]))
    return table


def preset_dynamics_table(families: Sequence[str] = FAMILIES,
                          algorithms: Sequence[str] = ('fedawe', 'fedavg_active', 'fedavg_all',
                                                       'fedavg_knownp', 'mifa'),
                          seeds: Sequence[int] = (0, 1, 2), m: int = 20, rounds: int = 300,
                          alpha: float = 0.1, test_per_class: int = 100,
                          workers: Optional[int] = 1, processes: bool = False) -> PresetTable:
    """Every algorithm under every dynamics family, with p_i = <nu_i, phi>"""
    config = _logistic_config('dynamics_table', algorithms, m, rounds, seeds,
                              dynamics={'class_weighted': True},
                              objective={'alpha': alpha, 'test_per_class': test_per_class},
                              sweep={'dynamics.family': list(families)})
    grid = sweep_grid(config)
    rows = run_experiment(config, config.seeds, workers=workers, processes=processes, use_sweep=True)
    metrics = _tail_metrics(rows)

    columns = ['family', 'algorithm', 'train_loss_mean', 'train_loss_std', 'train_accuracy_mean',
               'train_accuracy_std', 'test_accuracy_mean', 'test_accuracy_std']
    table = PresetTable('dynamics_table', columns)
    for index, point in enumerate(grid):
        for algorithm in config.algorithms:
            loss = _across_seeds(metrics, index, algorithm, 'loss')
            acc = _across_seeds(metrics, index, algorithm, 'accuracy')
            test = _across_seeds(metrics, index, algorithm, 'test_accuracy') if test_per_class else (None, None)
            table.add(family=point['dynamics.family'], algorithm=algorithm,
                      train_loss_mean=loss[0], train_loss_std=loss[1],
                      train_accuracy_mean=acc[0], train_accuracy_std=acc[1],
                      test_accuracy_mean=test[0], test_accuracy_std=test[1])
    if {'fedawe', 'fedavg_active', 'fedavg_all'} <= set(config.algorithms) and 'sine' in families:
        row = {r['algorithm']: r['train_loss_mean'] for r in table.where(family='sine')}
        table.checks['sine_loss_ordering'] = row['fedawe'] <= row['fedavg_active'] <= row['fedavg_all']
    return table


def preset_dirichlet_alpha(alphas: Sequence[float] = (0.05, 0.1, 1.0), seeds: Sequence[int] = (0, 1, 2),
                           m: int = 20, rounds: int = 300, workers: Optional[int] = 1,
                           processes: bool = False) -> PresetTable:
    """FedAWE vs FedAvg-active under sine dynamics as the data heterogeneity varies"""
    for a in alphas:
        if not a > 0:
            raise InvalidInputError(f"Dirichlet alpha must be > 0, got {a}")
    config = _logistic_config('dirichlet_alpha', ['fedawe', 'fedavg_active'], m, rounds, seeds,
                              dynamics={'family': 'sine', 'class_weighted': True},
                              sweep={'objective.alpha': list(alphas)})
    grid = sweep_grid(config)
    rows = run_experiment(config, config.seeds, workers=workers, processes=processes, use_sweep=True)
    metrics = _tail_metrics(rows)

    table = PresetTable('dirichlet_alpha', ['alpha', 'algorithm', 'loss_mean', 'loss_std',
                                            'accuracy_mean', 'accuracy_std'])
    for index, point in enumerate(grid):
        for algorithm in config.algorithms:
            loss = _across_seeds(metrics, index, algorithm, 'loss')
            acc = _across_seeds(metrics, index, algorithm, 'accuracy')
            table.add(alpha=point['objective.alpha'], algorithm=algorithm, loss_mean=loss[0],
                      loss_std=loss[1], accuracy_mean=acc[0], accuracy_std=acc[1])
    return table


def _first_round_at(curve: Sequence[Tuple[int, float]], target: float) -> Optional[int]:
    for round_index, accuracy in curve:
        if accuracy >= target:
            return round_index
    return None


def preset_time_to_accuracy(families: Sequence[str] = FAMILIES,
                            algorithms: Sequence[str] = ('fedawe', 'fedavg_active', 'fedavg_all',
                                                         'fedavg_knownp', 'mifa'),
                            seeds: Sequence[int] = (0, 1, 2), m: int = 20, rounds: int = 300,
                            sample_every: int = 20, fractions: Sequence[float] = TARGET_FRACTIONS,
                            alpha: float = 0.1, test_per_class: int = 100,
                            workers: Optional[int] = 1, processes: bool = False) -> PresetTable:
    """First sampled round at which each algorithm's seed-averaged test accuracy reaches a
    fraction of the best accuracy seen under the same dynamics.

    The best accuracy is floored to a multiple of 0.1 (when it is at least 0.1)
    and the curves are sampled every ``sample_every`` rounds. ``first_round``
    is None when a target is never reached.
    """
    if sample_every < 1 or test_per_class < 1:
        raise InvalidInputError("sample_every and test_per_class must be >= 1")
    fractions = sorted(float(f) for f in fractions)
    if not fractions or fractions[0] <= 0.0 or fractions[-1] > 1.0:
        raise InvalidInputError(f"target fractions must lie in (0, 1], got {fractions}")
    config = _logistic_config('time_to_accuracy', algorithms, m, rounds, seeds,
                              dynamics={'class_weighted': True},
                              objective={'alpha': alpha, 'test_per_class': test_per_class},
                              sweep={'dynamics.family': list(families)})
    grid = sweep_grid(config)
    rows = run_experiment(config, config.seeds, workers=workers, processes=processes, use_sweep=True)

    sampled = defaultdict(list)
    for row in rows:
        if row.round % sample_every == 0:
            sampled[(row.grid_point, row.algorithm, row.round)].append(row.test_accuracy)

    table = PresetTable('time_to_accuracy', ['family', 'algorithm', 'fraction', 'target_accuracy',
                                             'first_round'])
    monotone = True
    for index, point in enumerate(grid):
        curves = {algorithm: [(r, float(np.mean(values))) for (g, a, r), values in sorted(sampled.items())
                              if g == index and a == algorithm]
                  for algorithm in config.algorithms}
        best = max(accuracy for curve in curves.values() for _, accuracy in curve)
        reference = math.floor(best * 10.0) / 10.0 if best >= 0.1 else best
        for algorithm in config.algorithms:
            reached = []
            for fraction in fractions:
                target = fraction * reference
                first = _first_round_at(curves[algorithm], target)
                table.add(family=point['dynamics.family'], algorithm=algorithm, fraction=fraction,
                          target_accuracy=target, first_round=first)
                reached.append(math.inf if first is None else first)
            monotone = monotone and all(a <= b for a, b in zip(reached, reached[1:]))
        logger.debug(f"time_to_accuracy {point['dynamics.family']}: best {best:.3f}, reference {reference:.1f}")
    table.checks['first_round_monotone'] = monotone
    return table


PRESETS: Dict[str, Callable[..., PresetTable]] = {
    'example1_bias': preset_example1_bias,
    'example2_nonstationary': preset_example2_nonstationary,
    'speedup': preset_speedup,
    'dynamics_table': preset_dynamics_table,
    'dirichlet_alpha': preset_dirichlet_alpha,
    'time_to_accuracy': preset_time_to_accuracy,
}

QUICK_OPTIONS: Dict[str, dict] = {
    'example1_bias': {'points': [(0.9, 0.3), (0.5, 0.8), (1.0, 1.0)], 'replications': 6},
    'example2_nonstationary': {'gammas': (0.0, 0.5), 'ps': (0.3,), 'm': 8, 'rounds': 60},
    'speedup': {'ms': (4, 8), 'rounds': 60},
    'dynamics_table': {'families': ('stationary', 'sine'), 'm': 8, 'rounds': 60, 'test_per_class': 20},
    'dirichlet_alpha': {'alphas': (0.1, 1.0), 'm': 8, 'rounds': 60},
    'time_to_accuracy': {'families': ('stationary', 'sine'), 'algorithms': ('fedawe', 'fedavg_active'),
                         'm': 8, 'rounds': 60, 'sample_every': 10, 'test_per_class': 20},
}


def run_preset(name: str, seeds: Optional[Sequence[int]] = None, workers: Optional[int] = 1,
               quick: bool = False, processes: bool = False, **options) -> PresetTable:
    if name not in PRESETS:
        raise InvalidInputError(f"unknown preset '{name}', expected one of {sorted(PRESETS)}")
    kwargs = dict(QUICK_OPTIONS[name]) if quick else {}
    kwargs.update(options)
    if seeds:
        kwargs['seeds'] = tuple(int(s) for s in seeds)
    logger.info(f"Running preset '{name}'{' (quick)' if quick else ''}")
    table = PRESETS[name](workers=workers, processes=processes, **kwargs)
    status = 'passed' if table.passed else 'FAILED'
    logger.info(f"Preset '{name}' finished; checks {status}: {table.checks}")
    return table
