"""
Experiment configuration: JSON files materialized into dataclasses.

A config file holds a subset of the keys in ``DEFAULT_CONFIG``; missing keys
take the defaults, unknown keys are rejected. Every validation failure raises
``ConfigError`` naming the dotted field (``hyper.eta_g``, ``dynamics.p`` ...).
"""
import copy
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

from .errors import ConfigError

logger = logging.getLogger(__name__)

OBJECTIVE_KINDS = ('quadratic', 'logistic')
SCHEDULES = ('sqrt_decay', 'constant')
KNOWN_ALGORITHMS = ('fedawe', 'fedavg_active', 'fedavg_all', 'fedavg_knownp', 'mifa')
KNOWN_FAMILIES = ('stationary', 'staircase', 'sine', 'interleaved_sine')

DEFAULT_CONFIG = {
    'name': 'experiment',
    'preset': None,
    'preset_options': {},
    'algorithms': ['fedawe', 'fedavg_active'],
    'm': 10,
    'seeds': [],
    'output': 'results',
    'x0': None,
    'record_wallclock': False,
    'track_auxiliary': False,
    'objective': {
        'kind': 'quadratic',
        'minimizers': None,
        'dim': 1,
        'scale': 10.0,
        'alpha': 0.1,
        'classes': 10,
        'features': 20,
        'samples_per_client': 200,
        'pool_per_class': 2000,
        'test_per_class': 0,
    },
    'noise': {
        'sigma': 0.0,
        'batch_size': None,
    },
    'dynamics': {
        'family': 'stationary',
        'p': 0.5,
        'class_weighted': False,
        'phi_caps': None,
        'p_min': 0.02,
        'gamma': 0.3,
        'period': 20,
        'delta0': 0.1,
        'staircase_low': 0.4,
    },
    'hyper': {
        'eta_0': 0.05,
        'schedule': 'sqrt_decay',
        'eta_g': 1.0,
        'local_steps': 1,
        'rounds': 100,
        'eta_0_overrides': {},
    },
    'sweep': {},
}

SECTIONS = ('objective', 'noise', 'dynamics', 'hyper')


@dataclass
class ObjectiveConfig:
    kind: str = 'quadratic'
    minimizers: Optional[List] = None
    dim: int = 1
    scale: float = 10.0
    alpha: float = 0.1
    classes: int = 10
    features: int = 20
    samples_per_client: int = 200
    pool_per_class: int = 2000
    test_per_class: int = 0


@dataclass
class NoiseConfig:
    sigma: float = 0.0
    batch_size: Optional[int] = None


@dataclass
class DynamicsConfig:
    family: str = 'stationary'
    p: Union[float, List[float]] = 0.5
    class_weighted: bool = False
    phi_caps: Optional[List[float]] = None
    p_min: float = 0.02
    gamma: float = 0.3
    period: int = 20
    delta0: float = 0.1
    staircase_low: float = 0.4


@dataclass
class HyperConfig:
    eta_0: float = 0.05
    schedule: str = 'sqrt_decay'
    eta_g: float = 1.0
    local_steps: int = 1
    rounds: int = 100
    eta_0_overrides: Dict[str, float] = field(default_factory=dict)

    def eta_0_for(self, algorithm: str) -> float:
        return self.eta_0_overrides.get(algorithm, self.eta_0)


@dataclass
class ExperimentConfig:
    name: str = 'experiment'
    preset: Optional[str] = None
    preset_options: Dict[str, Any] = field(default_factory=dict)
    algorithms: List[str] = field(default_factory=lambda: ['fedawe', 'fedavg_active'])
    m: int = 10
    seeds: List[int] = field(default_factory=list)
    output: str = 'results'
    x0: Optional[List[float]] = None
    record_wallclock: bool = False
    track_auxiliary: bool = False
    objective: ObjectiveConfig = field(default_factory=ObjectiveConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    dynamics: DynamicsConfig = field(default_factory=DynamicsConfig)
    hyper: HyperConfig = field(default_factory=HyperConfig)
    sweep: Dict[str, List] = field(default_factory=dict)


def _merge(defaults: dict, loaded: dict, prefix: str = '') -> dict:
    merged = copy.deepcopy(defaults)
    for key, value in loaded.items():
        dotted = f"{prefix}{key}"
        if key not in defaults:
            raise ConfigError(dotted, "unknown key")
        if key in SECTIONS and not prefix:
            if not isinstance(value, dict):
                raise ConfigError(dotted, "must be an object")
            merged[key] = _merge(defaults[key], value, prefix=f"{key}.")
        else:
            merged[key] = value
    return merged


def _number(value, name: str, low: float = -math.inf, high: float = math.inf,
            low_open: bool = False, integer: bool = False) -> Union[int, float]:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(name, f"expected a number, got {value!r}")
    if integer and int(value) != value:
        raise ConfigError(name, f"expected an integer, got {value!r}")
    if not math.isfinite(value):
        raise ConfigError(name, "must be finite")
    if value < low or (low_open and value == low) or value > high:
        bracket = '(' if low_open else '['
        raise ConfigError(name, f"must lie in {bracket}{low}, {high}], got {value}")
    return int(value) if integer else float(value)


def _validate_objective(cfg: ObjectiveConfig, m: int) -> None:
    if cfg.kind not in OBJECTIVE_KINDS:
        raise ConfigError('objective.kind', f"expected one of {OBJECTIVE_KINDS}, got {cfg.kind!r}")
    cfg.dim = _number(cfg.dim, 'objective.dim', low=1, integer=True)
    cfg.scale = _number(cfg.scale, 'objective.scale', low=0.0)
    cfg.alpha = _number(cfg.alpha, 'objective.alpha', low=0.0, low_open=True)
    cfg.classes = _number(cfg.classes, 'objective.classes', low=2, integer=True)
    cfg.features = _number(cfg.features, 'objective.features', low=cfg.classes, integer=True)
    cfg.samples_per_client = _number(cfg.samples_per_client, 'objective.samples_per_client', low=1, integer=True)
    cfg.pool_per_class = _number(cfg.pool_per_class, 'objective.pool_per_class', low=1, integer=True)
    cfg.test_per_class = _number(cfg.test_per_class, 'objective.test_per_class', low=0, integer=True)
    if cfg.minimizers is not None:
        if cfg.kind != 'quadratic':
            raise ConfigError('objective.minimizers', "only quadratic objectives take minimizers")
        if not isinstance(cfg.minimizers, list) or len(cfg.minimizers) != m:
            raise ConfigError('objective.minimizers', f"expected a list of {m} minimizers")


def _validate_dynamics(cfg: DynamicsConfig, m: int, objective_kind: str) -> None:
    if cfg.family not in KNOWN_FAMILIES:
        raise ConfigError('dynamics.family', f"expected one of {KNOWN_FAMILIES}, got {cfg.family!r}")
    if cfg.class_weighted:
        if objective_kind != 'logistic':
            raise ConfigError('dynamics.class_weighted', "needs a logistic objective with class mixtures")
    elif isinstance(cfg.p, list):
        if len(cfg.p) != m:
            raise ConfigError('dynamics.p', f"expected {m} probabilities, got {len(cfg.p)}")
        cfg.p = [_number(v, 'dynamics.p', low=0.0, high=1.0, low_open=True) for v in cfg.p]
    else:
        cfg.p = _number(cfg.p, 'dynamics.p', low=0.0, high=1.0, low_open=True)
    cfg.p_min = _number(cfg.p_min, 'dynamics.p_min', low=0.0, high=1.0, low_open=True)
    cfg.gamma = _number(cfg.gamma, 'dynamics.gamma', low=0.0, high=0.999999)
    cfg.period = _number(cfg.period, 'dynamics.period', low=1, integer=True)
    cfg.delta0 = _number(cfg.delta0, 'dynamics.delta0', low=0.0, high=0.999999)
    cfg.staircase_low = _number(cfg.staircase_low, 'dynamics.staircase_low', low=0.0, high=1.0, low_open=True)
    if cfg.phi_caps is not None:
        if not isinstance(cfg.phi_caps, list) or not cfg.phi_caps:
            raise ConfigError('dynamics.phi_caps', "expected a non-empty list")
        cfg.phi_caps = [_number(v, 'dynamics.phi_caps', low=0.0) for v in cfg.phi_caps]


def _validate_hyper(cfg: HyperConfig, algorithms: List[str]) -> None:
    cfg.eta_0 = _number(cfg.eta_0, 'hyper.eta_0', low=0.0)
    if cfg.schedule not in SCHEDULES:
        raise ConfigError('hyper.schedule', f"expected one of {SCHEDULES}, got {cfg.schedule!r}")
    cfg.eta_g = _number(cfg.eta_g, 'hyper.eta_g', low=1.0)
    cfg.local_steps = _number(cfg.local_steps, 'hyper.local_steps', low=1, integer=True)
    cfg.rounds = _number(cfg.rounds, 'hyper.rounds', low=0, integer=True)
    if not isinstance(cfg.eta_0_overrides, dict):
        raise ConfigError('hyper.eta_0_overrides', "must be an object")
    for name, value in cfg.eta_0_overrides.items():
        if name not in KNOWN_ALGORITHMS:
            raise ConfigError(f"hyper.eta_0_overrides.{name}", "unknown algorithm")
        cfg.eta_0_overrides[name] = _number(value, f"hyper.eta_0_overrides.{name}", low=0.0)


def _validate_sweep(sweep: dict) -> None:
    if not isinstance(sweep, dict):
        raise ConfigError('sweep', "must be an object mapping dotted fields to value lists")
    for dotted, values in sweep.items():
        parts = dotted.split('.')
        node = DEFAULT_CONFIG
        for part in parts:
            if not isinstance(node, dict) or part not in node:
                raise ConfigError(f"sweep.{dotted}", "does not name a config field")
            node = node[part]
        if parts[0] in ('sweep', 'seeds', 'preset', 'preset_options', 'output'):
            raise ConfigError(f"sweep.{dotted}", "cannot be swept")
        if not isinstance(values, list) or not values:
            raise ConfigError(f"sweep.{dotted}", "expected a non-empty list of values")


def validate(config: ExperimentConfig) -> ExperimentConfig:
    """Check every field, normalizing numeric types in place"""
    if not isinstance(config.name, str) or not config.name:
        raise ConfigError('name', "must be a non-empty string")
    config.m = _number(config.m, 'm', low=1, integer=True)
    if not isinstance(config.algorithms, list) or not config.algorithms:
        raise ConfigError('algorithms', "expected a non-empty list")
    for name in config.algorithms:
        if name not in KNOWN_ALGORITHMS:
            raise ConfigError('algorithms', f"unknown algorithm {name!r}, expected one of {KNOWN_ALGORITHMS}")
    if len(set(config.algorithms)) != len(config.algorithms):
        raise ConfigError('algorithms', "contains duplicates")
    if not isinstance(config.seeds, list):
        raise ConfigError('seeds', "expected a list of integers")
    config.seeds = [_number(s, 'seeds', low=0, integer=True) for s in config.seeds]
    if config.preset is not None:
        from .presets import PRESETS
        if config.preset not in PRESETS:
            raise ConfigError('preset', f"unknown preset {config.preset!r}, expected one of {sorted(PRESETS)}")
    if not isinstance(config.preset_options, dict):
        raise ConfigError('preset_options', "must be an object")
    if config.x0 is not None and not isinstance(config.x0, list):
        raise ConfigError('x0', "expected a list of numbers or null")
    for flag in ('record_wallclock', 'track_auxiliary'):
        if not isinstance(getattr(config, flag), bool):
            raise ConfigError(flag, "expected true or false")
    if not isinstance(config.dynamics.class_weighted, bool):
        raise ConfigError('dynamics.class_weighted', "expected true or false")

    _validate_objective(config.objective, config.m)
    _validate_dynamics(config.dynamics, config.m, config.objective.kind)
    _validate_hyper(config.hyper, config.algorithms)
    _validate_sweep(config.sweep)
    return config


def config_from_dict(data: dict) -> ExperimentConfig:
    """Defaults updated by ``data``, validated"""
    if not isinstance(data, dict):
        raise ConfigError('<root>', "config must be a JSON object")
    merged = _merge(DEFAULT_CONFIG, data)
    sections = {
        'objective': ObjectiveConfig(**merged.pop('objective')),
        'noise': NoiseConfig(**merged.pop('noise')),
        'dynamics': DynamicsConfig(**merged.pop('dynamics')),
        'hyper': HyperConfig(**merged.pop('hyper')),
    }
    return validate(ExperimentConfig(**merged, **sections))


def config_to_dict(config: ExperimentConfig) -> dict:
    return asdict(config)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding='utf-8'))
    except FileNotFoundError:
        raise ConfigError('<file>', f"{path} does not exist")
    except json.JSONDecodeError as e:
        raise ConfigError('<file>', f"{path} is not valid JSON ({e.msg} at line {e.lineno})")
    config = config_from_dict(data)
    logger.info(f"Loaded config '{config.name}' from {path}")
    return config


def save_config(config: ExperimentConfig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(config_to_dict(config), indent=2), encoding='utf-8')
    return path


def with_overrides(config: ExperimentConfig, overrides: Dict[str, Any]) -> ExperimentConfig:
    """Copy of ``config`` with dotted fields replaced (one sweep grid point)"""
    data = config_to_dict(config)
    for dotted, value in overrides.items():
        node = data
        *parents, leaf = dotted.split('.')
        for part in parents:
            node = node[part]
        node[leaf] = copy.deepcopy(value)
    data['sweep'] = {}
    return config_from_dict(data)
