"""
Round transitions for FedAWE and the FedAvg / MIFA baselines, and the
multi-round trainer.

All round functions share the signature

    round_fn(state, active, hp, pool, probs=None) -> ServerState

where ``active`` holds the sorted indices of A^t and ``probs`` the current
p_i^t (only the known-probability baseline reads it). States are never
mutated in place. Client updates are reduced in client-index order, so a run
is bit-reproducible for a given seed.
"""
import itertools
import logging
import math
import time
from dataclasses import dataclass, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .availability import AvailabilityState, DynamicsSpec, advance_tau, probs_at, sample_active
from .diagnostics import AuxiliaryTracker, RunTrace, TraceStep
from .errors import InvalidInputError, NumericalDivergenceError, SimulationError
from .mixing import consensus_error
from .objectives import NoiseSpec, global_eval, global_grad, stochastic_grad
from .rng import client_streams, stream

logger = logging.getLogger(__name__)

DIVERGENCE_LIMIT = 1e8
SQRT_DECAY = 'sqrt_decay'
CONSTANT = 'constant'


@dataclass(frozen=True)
class LearningRateSchedule:
    """eta_l(t) = eta_0 / sqrt(t/10 + 1), or eta_0 for the constant schedule"""
    eta_0: float
    kind: str = SQRT_DECAY

    def __post_init__(self):
        if self.kind not in (SQRT_DECAY, CONSTANT):
            raise InvalidInputError(f"unknown learning-rate schedule '{self.kind}'")
        if not (self.eta_0 >= 0.0 and math.isfinite(self.eta_0)):
            raise InvalidInputError(f"eta_0 must be finite and >= 0, got {self.eta_0}")

    def __call__(self, t: int) -> float:
        if self.kind == CONSTANT:
            return self.eta_0
        return self.eta_0 / math.sqrt(t / 10.0 + 1.0)


@dataclass(frozen=True)
class HyperParams:
    schedule: LearningRateSchedule
    eta_g: float = 1.0
    local_steps: int = 1
    rounds: int = 100

    def __post_init__(self):
        if self.eta_g < 1.0:
            raise InvalidInputError(f"eta_g must be >= 1, got {self.eta_g}")
        if self.local_steps < 1:
            raise InvalidInputError(f"local_steps must be >= 1, got {self.local_steps}")
        if self.rounds < 0:
            raise InvalidInputError(f"rounds must be >= 0, got {self.rounds}")

    @classmethod
    def constant(cls, eta_l: float, **kwargs) -> "HyperParams":
        return cls(schedule=LearningRateSchedule(eta_l, CONSTANT), **kwargs)

    def eta_l(self, t: int) -> float:
        return self.schedule(t)


@dataclass(frozen=True, eq=False)
class ServerState:
    """Global model, per-client models, availability bookkeeping and MIFA memory"""
    global_model: np.ndarray
    client_models: np.ndarray
    availability: AvailabilityState
    memory: Optional[np.ndarray] = None

    @classmethod
    def initial(cls, x0, m: int, with_memory: bool = False) -> "ServerState":
        x0 = np.array(x0, dtype=np.float64).reshape(-1)
        return cls(
            global_model=x0,
            client_models=np.tile(x0, (m, 1)),
            availability=AvailabilityState.initial(m),
            memory=np.zeros((m, x0.size)) if with_memory else None,
        )

    @property
    def round(self) -> int:
        return self.availability.round

    @property
    def tau(self) -> np.ndarray:
        return self.availability.tau

    @property
    def m(self) -> int:
        return self.client_models.shape[0]

    @property
    def dim(self) -> int:
        return self.global_model.size


@dataclass
class ClientPool:
    """What the clients bring to a round: objectives, noise model and their own rng streams"""
    objectives: Sequence
    noise: NoiseSpec
    rngs: Sequence[np.random.Generator]


def _guard(x: np.ndarray, round_index: Optional[int]) -> None:
    if not np.all(np.isfinite(x)):
        raise NumericalDivergenceError("non-finite model values", round_index)
    if np.max(np.abs(x)) > DIVERGENCE_LIMIT:
        raise NumericalDivergenceError(f"model left the box |x| <= {DIVERGENCE_LIMIT:g}", round_index)


def local_sgd(objective, x_start: np.ndarray, s: int, eta_l: float, noise: NoiseSpec,
              rng: np.random.Generator, round_index: Optional[int] = None) -> Tuple[np.ndarray, np.ndarray]:
    """s local SGD steps from x_start; returns (x_end, G = x_start - x_end)"""
    if s < 1:
        raise InvalidInputError(f"local steps must be >= 1, got {s}")
    x = np.array(x_start, dtype=np.float64)
    for _ in range(s):
        x = x - eta_l * stochastic_grad(objective, x, noise, rng)
        _guard(x, round_index)
    return x, x_start - x


def _active_indices(active, m: int) -> np.ndarray:
    active = np.unique(np.asarray(active, dtype=np.int64).reshape(-1))
    if active.size and (active[0] < 0 or active[-1] >= m):
        raise InvalidInputError(f"active set {active.tolist()} is not a subset of 0..{m - 1}")
    return active


def _skip(state: ServerState, active: np.ndarray) -> ServerState:
    """Empty active set: nothing is aggregated, only the round counter moves"""
    return replace(state, availability=advance_tau(state.availability, active))


def _innovations(state: ServerState, active: np.ndarray, starts: np.ndarray,
                 hp: HyperParams, pool: ClientPool) -> np.ndarray:
    """G_i for every active client, one row each in active order"""
    t = state.round
    eta_l = hp.eta_l(t)
    out = np.empty((active.size, state.dim))
    for row, i in enumerate(active):
        _, out[row] = local_sgd(pool.objectives[i], starts[row], hp.local_steps, eta_l,
                                pool.noise, pool.rngs[i], t)
    return out


def fedawe_round(state: ServerState, active, hp: HyperParams, pool: ClientPool,
                 probs: Optional[np.ndarray] = None) -> ServerState:
    """Local SGD from each client's own model, echo by t - tau_i(t), gossip among A^t"""
    active = _active_indices(active, state.m)
    if active.size == 0:
        return _skip(state, active)
    t = state.round
    starts = state.client_models[active]
    innovations = _innovations(state, active, starts, hp, pool)
    echo = state.availability.gaps()[active].astype(np.float64)
    echoed = starts - hp.eta_g * echo[:, None] * innovations
    new_global = echoed.sum(axis=0) / active.size
    _guard(new_global, t)

    client_models = state.client_models.copy()
    client_models[active] = new_global
    return ServerState(new_global, client_models, advance_tau(state.availability, active), state.memory)


def _fedavg_step(state: ServerState, active: np.ndarray, hp: HyperParams, pool: ClientPool,
                 weights: np.ndarray, denom: float) -> ServerState:
    """x^{t+1} = x^t - eta_g / denom * sum_i w_i G_i with clients starting from x^t"""
    x = state.global_model
    starts = np.tile(x, (active.size, 1))
    innovations = _innovations(state, active, starts, hp, pool)
    new_global = x - hp.eta_g * (weights[:, None] * innovations).sum(axis=0) / denom
    _guard(new_global, state.round)

    # clients keep the last model they received
    client_models = state.client_models.copy()
    client_models[active] = x
    return ServerState(new_global, client_models, advance_tau(state.availability, active), state.memory)


def fedavg_active_round(state: ServerState, active, hp: HyperParams, pool: ClientPool,
                        probs: Optional[np.ndarray] = None) -> ServerState:
    """FedAvg averaging over the active clients only"""
    active = _active_indices(active, state.m)
    if active.size == 0:
        return _skip(state, active)
    return _fedavg_step(state, active, hp, pool, np.ones(active.size), float(active.size))


def fedavg_all_round(state: ServerState, active, hp: HyperParams, pool: ClientPool,
                     probs: Optional[np.ndarray] = None) -> ServerState:
    """FedAvg over all m clients, unavailable clients contributing zeros"""
    active = _active_indices(active, state.m)
    if active.size == 0:
        return _skip(state, active)
    return _fedavg_step(state, active, hp, pool, np.ones(active.size), float(state.m))


def fedavg_knownp_round(state: ServerState, active, hp: HyperParams, pool: ClientPool,
                        probs: Optional[np.ndarray] = None) -> ServerState:
    """FedAvg with inverse-probability weights 1 / (m p_i^t)"""
    active = _active_indices(active, state.m)
    if probs is None:
        raise InvalidInputError("fedavg_knownp needs the current availability probabilities")
    probs = np.asarray(probs, dtype=np.float64)
    if probs.size != state.m:
        raise InvalidInputError(f"expected {state.m} probabilities, got {probs.size}")
    if active.size == 0:
        return _skip(state, active)
    p_active = probs[active]
    if np.any(p_active <= 0.0):
        bad = active[p_active <= 0.0].tolist()
        raise InvalidInputError(f"active clients {bad} have zero availability probability", state.round)
    return _fedavg_step(state, active, hp, pool, 1.0 / p_active, float(state.m))


def mifa_round(state: ServerState, active, hp: HyperParams, pool: ClientPool,
               probs: Optional[np.ndarray] = None) -> ServerState:
    """Average the latest stored innovation of every client (zeros until first seen)"""
    active = _active_indices(active, state.m)
    if active.size == 0:
        return _skip(state, active)
    x = state.global_model
    memory = np.zeros((state.m, state.dim)) if state.memory is None else state.memory.copy()
    memory[active] = _innovations(state, active, np.tile(x, (active.size, 1)), hp, pool)
    new_global = x - hp.eta_g * memory.sum(axis=0) / state.m
    _guard(new_global, state.round)

    client_models = state.client_models.copy()
    client_models[active] = x
    return ServerState(new_global, client_models, advance_tau(state.availability, active), memory)


@dataclass(frozen=True)
class AlgorithmInfo:
    name: str
    round_fn: Callable
    uses_memory: bool = False
    evaluates_client_mean: bool = False


ALGORITHMS: Dict[str, AlgorithmInfo] = {
    'fedawe': AlgorithmInfo('fedawe', fedawe_round, evaluates_client_mean=True),
    'fedavg_active': AlgorithmInfo('fedavg_active', fedavg_active_round),
    'fedavg_all': AlgorithmInfo('fedavg_all', fedavg_all_round),
    'fedavg_knownp': AlgorithmInfo('fedavg_knownp', fedavg_knownp_round),
    'mifa': AlgorithmInfo('mifa', mifa_round, uses_memory=True),
}


def get_algorithm(name: str) -> AlgorithmInfo:
    if name not in ALGORITHMS:
        raise InvalidInputError(f"unknown algorithm '{name}', expected one of {sorted(ALGORITHMS)}")
    return ALGORITHMS[name]


def evaluation_model(algorithm: str, state: ServerState) -> np.ndarray:
    """x_bar^t (mean of client models) for FedAWE, the global model for the baselines"""
    if get_algorithm(algorithm).evaluates_client_mean:
        return state.client_models.mean(axis=0)
    return state.global_model


def fedavg_fixed_point(probs, minimizers) -> np.ndarray:
    """Limit of E[x^t] for FedAvg-active on quadratics under stationary availability.

    Each non-empty pattern A pulls x towards the mean of its minimizers, so the
    fixed point is sum_A P(A) mean_A(u) / P(A != empty).
    """
    p = np.asarray(probs, dtype=np.float64).reshape(-1)
    u = np.asarray(minimizers, dtype=np.float64)
    if u.ndim == 1:
        u = u.reshape(-1, 1)
    if u.shape[0] != p.size:
        raise InvalidInputError("need one probability per minimizer")
    if p.size > 16:
        raise InvalidInputError("pattern enumeration is limited to m <= 16")
    numerator = np.zeros(u.shape[1])
    mass = 0.0
    for pattern in itertools.product((False, True), repeat=p.size):
        mask = np.array(pattern)
        if not mask.any():
            continue
        weight = float(np.prod(np.where(mask, p, 1.0 - p)))
        numerator += weight * u[mask].mean(axis=0)
        mass += weight
    if mass == 0.0:
        raise InvalidInputError("no client is ever available")
    return numerator / mass


@dataclass
class RoundRecord:
    """Metrics after one round"""
    round: int
    active: Tuple[int, ...]
    loss: float
    grad_norm_sq: float
    consensus_error: float
    approx_error: Optional[float] = None
    accuracy: Optional[float] = None
    test_loss: Optional[float] = None
    test_accuracy: Optional[float] = None
    wallclock: float = 0.0

    @property
    def active_count(self) -> int:
        return len(self.active)


@dataclass
class TrainingOptions:
    record_metrics: bool = True
    track_auxiliary: bool = False
    keep_trace: bool = False
    test_set: Optional[object] = None
    record_wallclock: bool = False


@dataclass
class TrainingResult:
    algorithm: str
    seed: int
    records: List[RoundRecord]
    final_state: ServerState
    eval_models: np.ndarray
    trace: Optional[RunTrace] = None

    @property
    def final_model(self) -> np.ndarray:
        return self.eval_models[-1]


def _mean_metric(objectives, x, metric: str) -> Optional[float]:
    if not all(hasattr(obj, metric) for obj in objectives):
        return None
    return float(np.mean([getattr(obj, metric)(x) for obj in objectives]))


def run_training(algorithm: str, objectives: Sequence, dynamics: DynamicsSpec, hp: HyperParams,
                 seed: int, noise: Optional[NoiseSpec] = None, x0: Optional[np.ndarray] = None,
                 options: Optional[TrainingOptions] = None) -> TrainingResult:
    """Run ``hp.rounds`` rounds of ``algorithm``; fully determined by ``seed``"""
    info = get_algorithm(algorithm)
    noise = noise or NoiseSpec()
    options = options or TrainingOptions()
    m = len(objectives)
    if m == 0 or dynamics.m != m:
        raise InvalidInputError(f"dynamics cover {dynamics.m} clients, {m} objectives given")
    dim = objectives[0].dim
    if any(obj.dim != dim for obj in objectives):
        raise InvalidInputError("objectives disagree on dimension")
    x0 = np.zeros(dim) if x0 is None else np.asarray(x0, dtype=np.float64)
    if x0.shape != (dim,):
        raise InvalidInputError(f"x0 has shape {x0.shape}, expected ({dim},)")

    pool = ClientPool(objectives=objectives, noise=noise, rngs=client_streams(seed, m, 'noise'))
    availability_rng = stream(seed, 'availability')
    state = ServerState.initial(x0, m, with_memory=info.uses_memory)

    tracker = None
    track = options.track_auxiliary and algorithm == 'fedawe'
    if track and noise.batch_size is not None and any(obj.kind == 'logistic' for obj in objectives):
        # z is defined through true gradients, which minibatch runs never see
        logger.info(f"{algorithm}: auxiliary tracking is off for minibatch runs (batch_size={noise.batch_size})")
        track = False
    if track:
        tracker = AuxiliaryTracker(objectives, state.client_models, hp.schedule, hp.eta_g, hp.local_steps)
    trace = None
    if options.keep_trace:
        trace = RunTrace(objectives=objectives, initial_models=state.client_models.copy(),
                         eta_l=hp.schedule, eta_g=hp.eta_g, local_steps=hp.local_steps)

    eval_models = np.empty((hp.rounds + 1, dim))
    eval_models[0] = evaluation_model(algorithm, state)
    records: List[RoundRecord] = []
    started = time.perf_counter()
    logger.debug(f"{algorithm}: m={m}, d={dim}, T={hp.rounds}, seed={seed}")

    for t in range(hp.rounds):
        active = sample_active(dynamics, t, availability_rng)
        probs = probs_at(dynamics, t) if algorithm == 'fedavg_knownp' else None
        tau_before = state.tau
        try:
            state = info.round_fn(state, active, hp, pool, probs)
        except SimulationError as e:
            raise e.with_round(t)

        aux = tracker.observe(active, state.client_models) if tracker else None
        if trace is not None:
            trace.steps.append(TraceStep(
                round=t, active=active, tau_before=tau_before, tau_after=state.tau,
                models_after=state.client_models.copy(),
                aux_after=None if aux is None else aux.copy()))

        x_eval = evaluation_model(algorithm, state)
        eval_models[t + 1] = x_eval
        if options.record_metrics:
            test = options.test_set
            records.append(RoundRecord(
                round=t,
                active=tuple(int(i) for i in active),
                loss=global_eval(objectives, x_eval),
                grad_norm_sq=float(np.sum(global_grad(objectives, x_eval) ** 2)),
                consensus_error=consensus_error(state.client_models),
                approx_error=tracker.approximation_error(state.client_models) if tracker else None,
                accuracy=_mean_metric(objectives, x_eval, 'accuracy'),
                test_loss=None if test is None else test.value(x_eval),
                test_accuracy=None if test is None else test.accuracy(x_eval),
                wallclock=time.perf_counter() - started if options.record_wallclock else 0.0,
            ))

    return TrainingResult(algorithm=algorithm, seed=seed, records=records, final_state=state,
                          eval_models=eval_models, trace=trace)


def run_batched_quadratics(algorithm: str, minimizers, base_p, hp: HyperParams, seeds: Sequence[int],
                           x0: Optional[np.ndarray] = None) -> np.ndarray:
    """Noise-free runs on quadratics under stationary availability, vectorized over a batch.

    Row b of ``base_p`` (one probability per client) pairs with ``seeds[b]``
    and replays ``run_training(algorithm, make_quadratics(minimizers),
    DynamicsSpec(STATIONARY, base_p[b]), hp, seeds[b], x0=x0)``: the active
    sets come from the same availability stream, so the trajectories agree up
    to summation order. Returns the evaluation models, shape (B, rounds + 1, d).
    """
    info = get_algorithm(algorithm)
    u = np.asarray(minimizers, dtype=np.float64)
    if u.ndim == 1:
        u = u.reshape(-1, 1)
    m, dim = u.shape
    base_p = np.atleast_2d(np.asarray(base_p, dtype=np.float64))
    if base_p.shape[1] != m or len(seeds) != base_p.shape[0]:
        raise InvalidInputError(f"need one seed and {m} probabilities per batch row")
    if np.any(~(base_p > 0.0)) or np.any(base_p > 1.0):
        raise InvalidInputError("base_p entries must lie in (0, 1]")
    batch, rounds = base_p.shape[0], hp.rounds
    x0 = np.zeros(dim) if x0 is None else np.asarray(x0, dtype=np.float64).reshape(-1)
    if x0.shape != (dim,):
        raise InvalidInputError(f"x0 has shape {x0.shape}, expected ({dim},)")

    # rng.random((T, m)) yields the same numbers as T successive rng.random(m) calls
    draws: Dict[int, np.ndarray] = {}
    for seed in seeds:
        if int(seed) not in draws:
            draws[int(seed)] = stream(int(seed), 'availability').random((rounds, m))
    uniforms = np.stack([draws[int(seed)] for seed in seeds])

    global_model = np.tile(x0, (batch, 1))
    client_models = np.tile(x0, (batch, m, 1))
    memory = np.zeros((batch, m, dim))
    tau = np.full((batch, m), -1, dtype=np.int64)
    eval_models = np.empty((batch, rounds + 1, dim))
    eval_models[:, 0] = client_models.mean(axis=1) if info.evaluates_client_mean else global_model

    for t in range(rounds):
        active = uniforms[:, t, :] < base_p
        count = active.sum(axis=1)
        live = count > 0
        eta_l = hp.eta_l(t)
        if info.evaluates_client_mean:
            starts = client_models
        else:
            starts = np.broadcast_to(global_model[:, None, :], client_models.shape)
        x = starts
        for _ in range(hp.local_steps):
            x = x - eta_l * (x - u)
        innovations = starts - x

        if algorithm == 'fedawe':
            echo = (t - tau).astype(np.float64)
            echoed = starts - hp.eta_g * echo[:, :, None] * innovations
            new_global = np.where(active[:, :, None], echoed, 0.0).sum(axis=1) / np.maximum(count, 1)[:, None]
            client_models = np.where(active[:, :, None], new_global[:, None, :], client_models)
            global_model = np.where(live[:, None], new_global, global_model)
        else:
            if algorithm == 'mifa':
                memory = np.where(active[:, :, None], innovations, memory)
                total, denom = memory.sum(axis=1), float(m)
            else:
                weights = np.where(active, 1.0 / base_p if algorithm == 'fedavg_knownp' else 1.0, 0.0)
                total = (weights[:, :, None] * innovations).sum(axis=1)
                denom = np.maximum(count, 1)[:, None] if algorithm == 'fedavg_active' else float(m)
            new_global = global_model - hp.eta_g * total / denom
            client_models = np.where(active[:, :, None], global_model[:, None, :], client_models)
            global_model = np.where(live[:, None], new_global, global_model)
        _guard(global_model, t)
        tau = np.where(active, t, tau)
        eval_models[:, t + 1] = client_models.mean(axis=1) if info.evaluates_client_mean else global_model

    return eval_models
