"""
Client availability: probability trajectories, active-set sampling and
last-active-round bookkeeping.

Every client i has a base probability p_i and a trajectory multiplier f_i(t);
its availability in round t is p_i^t = clamp(p_i * f_i(t), 0, 1) and clients
join the active set A^t independently.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import InvalidInputError, UnsupportedDynamicsError

logger = logging.getLogger(__name__)

STATIONARY = 'stationary'
STAIRCASE = 'staircase'
SINE = 'sine'
INTERLEAVED_SINE = 'interleaved_sine'
FAMILIES = (STATIONARY, STAIRCASE, SINE, INTERLEAVED_SINE)

DEFAULT_GAMMA = 0.3
DEFAULT_PERIOD = 20
DEFAULT_DELTA0 = 0.1
DEFAULT_STAIRCASE_LOW = 0.4
DEFAULT_P_MIN = 0.02


def default_phi_caps(classes: int) -> tuple:
    """Cap 1 for the first half of the classes, 0.5 for the rest"""
    high = (classes + 1) // 2
    return (1.0,) * high + (0.5,) * (classes - high)


DEFAULT_PHI_CAPS = default_phi_caps(10)


@dataclass(frozen=True, eq=False)
class DynamicsSpec:
    """Base probabilities plus the trajectory family shaping them over time"""
    family: str
    base_p: np.ndarray
    gamma: float = DEFAULT_GAMMA
    period: int = DEFAULT_PERIOD
    delta0: float = DEFAULT_DELTA0
    staircase_low: float = DEFAULT_STAIRCASE_LOW

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise InvalidInputError(f"unknown dynamics family '{self.family}', expected one of {FAMILIES}")
        base_p = np.array(self.base_p, dtype=np.float64).reshape(-1)
        if base_p.size == 0 or np.any(~(base_p > 0.0)) or np.any(base_p > 1.0):
            raise InvalidInputError("base_p entries must lie in (0, 1]")
        base_p.setflags(write=False)
        object.__setattr__(self, 'base_p', base_p)
        if not 0.0 <= self.gamma < 1.0:
            raise InvalidInputError(f"gamma must lie in [0, 1), got {self.gamma}")
        if int(self.period) != self.period or self.period < 1:
            raise InvalidInputError(f"period must be a positive integer, got {self.period}")
        object.__setattr__(self, 'period', int(self.period))
        if not 0.0 <= self.delta0 < 1.0:
            raise InvalidInputError(f"delta0 must lie in [0, 1), got {self.delta0}")
        if not 0.0 < self.staircase_low <= 1.0:
            raise InvalidInputError(f"staircase_low must lie in (0, 1], got {self.staircase_low}")

    @property
    def m(self) -> int:
        return self.base_p.size

    @classmethod
    def uniform(cls, family: str, p: float, m: int, **kwargs) -> "DynamicsSpec":
        return cls(family=family, base_p=np.full(m, float(p)), **kwargs)

    def to_dict(self) -> dict:
        return {
            'family': self.family,
            'base_p': [float(v) for v in self.base_p],
            'gamma': float(self.gamma),
            'period': int(self.period),
            'delta0': float(self.delta0),
            'staircase_low': float(self.staircase_low),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "DynamicsSpec":
        return cls(**data)


@dataclass(frozen=True, eq=False)
class ClassContribution:
    """Per-class weights phi_c ~ Uniform(0, Phi_c) mapping class mixtures to availability"""
    phi: np.ndarray
    caps: np.ndarray

    def __post_init__(self):
        phi = np.array(self.phi, dtype=np.float64).reshape(-1)
        caps = np.array(self.caps, dtype=np.float64).reshape(-1)
        if phi.size != caps.size:
            raise InvalidInputError("phi and caps must have the same length")
        if np.any(phi < 0) or np.any(phi > caps):
            raise InvalidInputError("phi entries must satisfy 0 <= phi_c <= Phi_c")
        object.__setattr__(self, 'phi', phi)
        object.__setattr__(self, 'caps', caps)


def draw_class_contribution(rng: np.random.Generator, caps=DEFAULT_PHI_CAPS) -> ClassContribution:
    caps = np.asarray(caps, dtype=np.float64)
    return ClassContribution(phi=rng.uniform(0.0, caps), caps=caps)


def base_probs(nus: Sequence, phi: ClassContribution, p_min: float = DEFAULT_P_MIN) -> np.ndarray:
    """p_i = <nu_i, phi>, clamped to [p_min, 1]"""
    nus = np.atleast_2d(np.asarray(nus, dtype=np.float64))
    if nus.shape[1] != phi.phi.size:
        raise InvalidInputError(
            f"class distributions have {nus.shape[1]} classes, phi has {phi.phi.size}")
    if not 0.0 <= p_min <= 1.0:
        raise InvalidInputError(f"p_min must lie in [0, 1], got {p_min}")
    raw = nus @ phi.phi
    clamped = np.clip(raw, p_min, 1.0)
    n_clamped = int(np.count_nonzero(clamped != raw))
    if n_clamped:
        logger.info(f"{n_clamped} of {raw.size} base probabilities clamped to [{p_min}, 1]")
    return clamped


def _trajectory(spec: DynamicsSpec, t: int) -> np.ndarray:
    """f_i(t) for all clients"""
    if spec.family == STATIONARY:
        return np.ones(spec.m)
    if spec.family == STAIRCASE:
        phase = t % spec.period
        level = 1.0 if phase < spec.period / 2 else spec.staircase_low
        return np.full(spec.m, level)
    g = spec.gamma * math.sin(2.0 * math.pi * t / spec.period) + (1.0 - spec.gamma)
    if spec.family == SINE:
        return np.full(spec.m, g)
    # interleaved sine: the cut-off depends on p_i, so clients drop out at different rounds
    return np.where(spec.base_p * g >= spec.delta0, g, 0.0)


def probs_at(spec: DynamicsSpec, t: int) -> np.ndarray:
    """p_i^t for every client"""
    if t < 0:
        raise InvalidInputError(f"round must be >= 0, got {t}")
    return np.clip(spec.base_p * _trajectory(spec, t), 0.0, 1.0)


def prob_at(spec: DynamicsSpec, i: int, t: int) -> float:
    return float(probs_at(spec, t)[i])


def min_probability(spec: DynamicsSpec, horizon: int) -> float:
    """Realized lower bound delta = min over clients and rounds [0, horizon)"""
    # every family is periodic in t with period P
    span = max(1, min(horizon, spec.period))
    return float(min(probs_at(spec, t).min() for t in range(span)))


def sample_active(spec: DynamicsSpec, t: int, rng: np.random.Generator) -> np.ndarray:
    """Independent Bernoulli(p_i^t) draws; returns sorted client indices"""
    return np.flatnonzero(rng.random(spec.m) < probs_at(spec, t))


@dataclass(frozen=True, eq=False)
class AvailabilityState:
    """tau_i: most recent round before ``round`` in which client i was active (-1 if never)"""
    tau: np.ndarray
    round: int = 0

    @classmethod
    def initial(cls, m: int) -> "AvailabilityState":
        tau = np.full(m, -1, dtype=np.int64)
        tau.setflags(write=False)
        return cls(tau=tau, round=0)

    def gaps(self) -> np.ndarray:
        """t - tau_i(t) for the current round t"""
        return self.round - self.tau


def advance_tau(state: AvailabilityState, active) -> AvailabilityState:
    """tau_i(t+1) = t for active clients, unchanged otherwise"""
    tau = state.tau.copy()
    tau[np.asarray(active, dtype=np.int64)] = state.round
    tau.setflags(write=False)
    return AvailabilityState(tau=tau, round=state.round + 1)


@dataclass
class MomentsReport:
    """Monte-Carlo estimates of the unavailable-duration moments per client"""
    mean_gap: np.ndarray
    mean_sq_gap: np.ndarray
    mean_gap_stderr: np.ndarray
    mean_sq_gap_stderr: np.ndarray
    delta: float
    replications: int
    horizon: int
    bound_mean: float = field(init=False)
    bound_sq: float = field(init=False)

    def __post_init__(self):
        self.bound_mean = 1.0 / self.delta
        self.bound_sq = 2.0 / self.delta ** 2

    def within_bounds(self, slack_se: float = 3.0) -> bool:
        mean_ok = np.all(self.mean_gap - slack_se * self.mean_gap_stderr <= self.bound_mean)
        sq_ok = np.all(self.mean_sq_gap - slack_se * self.mean_sq_gap_stderr <= self.bound_sq)
        return bool(mean_ok and sq_ok)


def unavailability_moments(spec: DynamicsSpec, horizon: int, replications: int,
                           rng: np.random.Generator) -> MomentsReport:
    """E[t - tau_i(t)] and E[(t - tau_i(t))^2], averaged over rounds and replications"""
    if spec.family == INTERLEAVED_SINE:
        raise UnsupportedDynamicsError(
            "interleaved_sine can reach zero probability; the unavailability bounds do not apply")
    if horizon < 1 or replications < 2:
        raise InvalidInputError("need horizon >= 1 and at least two replications")
    delta = min_probability(spec, horizon)

    # vectorized over replications: tau has shape (R, m)
    tau = np.full((replications, spec.m), -1, dtype=np.int64)
    gap_sum = np.zeros((replications, spec.m))
    sq_sum = np.zeros((replications, spec.m))
    for t in range(horizon):
        gap = (t - tau).astype(np.float64)
        gap_sum += gap
        sq_sum += gap * gap
        active = rng.random((replications, spec.m)) < probs_at(spec, t)
        tau[active] = t

    per_rep_mean = gap_sum / horizon
    per_rep_sq = sq_sum / horizon
    root_r = math.sqrt(replications)
    return MomentsReport(
        mean_gap=per_rep_mean.mean(axis=0),
        mean_sq_gap=per_rep_sq.mean(axis=0),
        mean_gap_stderr=per_rep_mean.std(axis=0, ddof=1) / root_r,
        mean_sq_gap_stderr=per_rep_sq.std(axis=0, ddof=1) / root_r,
        delta=delta,
        replications=replications,
        horizon=horizon,
    )
