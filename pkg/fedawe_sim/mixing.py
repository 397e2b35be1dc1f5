"""
Implicit-gossip mixing matrices, consensus error and the spectral bound.

In a FedAWE round the server averages the echoed models of the active clients
and hands the average back to them only. As a linear map on the stacked client
models this is

    W_ij = 1/|A|  if i, j in A,   W_ii = 1 if i not in A,   0 otherwise,

with W = I when nobody is active. Client models are stored as an (m, d)
array, one row per client; a d x m matrix B (one column per client) is used
where the contraction statement is phrased that way.
"""
import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.linalg import eigvalsh

from .availability import STATIONARY, DynamicsSpec, sample_active
from .errors import InvalidInputError

logger = logging.getLogger(__name__)

MIN_RELIABLE_SAMPLES = 1000


def build_W(active, m: int) -> np.ndarray:
    """Mixing matrix induced by the active set"""
    active = np.asarray(active, dtype=np.int64).reshape(-1)
    if active.size and (active.min() < 0 or active.max() >= m):
        raise InvalidInputError(f"active set {active.tolist()} is not a subset of 0..{m - 1}")
    W = np.eye(m)
    if active.size:
        W[np.ix_(active, active)] = 1.0 / active.size
    return W


def consensus_error(X) -> float:
    """(1/m) sum_i ||x_i - x_bar||^2 over the rows of X"""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    centered = X - X.mean(axis=0)
    return float(np.sum(centered * centered) / X.shape[0])


def rho_bound(delta: float, m: int) -> float:
    """1 - delta^4 (1 - (1 - delta)^m)^2 / 8"""
    if not 0.0 < delta <= 1.0:
        raise InvalidInputError(f"delta must lie in (0, 1], got {delta}")
    if m < 1:
        raise InvalidInputError(f"m must be >= 1, got {m}")
    return 1.0 - delta ** 4 * (1.0 - (1.0 - delta) ** m) ** 2 / 8.0


def _second_eigenvalue(M: np.ndarray) -> float:
    vals = eigvalsh(M)
    # symmetric doubly stochastic: the top eigenvalue is 1, the next lies in [0, 1]
    return float(min(max(vals[-2], 0.0), 1.0))


def _mixing_moment_sum(masks: np.ndarray) -> np.ndarray:
    """Sum of W over a batch of active-set masks (rows).

    W is idempotent, so this is also the sum of W^2.
    """
    a = masks.astype(np.float64)
    k = a.sum(axis=1)
    inv = np.divide(1.0, k, out=np.zeros_like(k), where=k > 0)
    return np.diag((1.0 - a).sum(axis=0)) + (a * inv[:, None]).T @ a


@dataclass
class RhoEstimate:
    """Monte-Carlo lambda_2(E[W^2]) with a batch-means standard error"""
    value: float
    stderr: float
    samples: int
    m: int
    heterogeneous: bool = False

    def __float__(self):
        return self.value


def empirical_rho(delta: float, m: int, samples: int, rng: np.random.Generator,
                  probs: Optional[np.ndarray] = None, batches: int = 20) -> RhoEstimate:
    """Estimate rho = lambda_2(E[W^2]) under independent availability.

    By default every client is active with probability ``delta``. A
    heterogeneous ``probs`` vector may be passed instead; such estimates carry
    no bound to compare against.
    """
    if m < 1:
        raise InvalidInputError(f"m must be >= 1, got {m}")
    if samples < 1:
        raise InvalidInputError("need at least one sample")
    if samples < MIN_RELIABLE_SAMPLES:
        logger.warning(f"empirical_rho with only {samples} samples; the estimate is unreliable")
    heterogeneous = probs is not None
    p = np.full(m, float(delta)) if probs is None else np.asarray(probs, dtype=np.float64)
    if p.size != m or np.any(p < 0) or np.any(p > 1):
        raise InvalidInputError("availability probabilities must be m values in [0, 1]")
    if m == 1:
        return RhoEstimate(value=0.0, stderr=0.0, samples=samples, m=m, heterogeneous=heterogeneous)

    batches = max(2, min(batches, samples))
    sizes = np.full(batches, samples // batches)
    sizes[: samples % batches] += 1
    total = np.zeros((m, m))
    batch_values = []
    for size in sizes:
        masks = rng.random((int(size), m)) < p
        batch_sum = _mixing_moment_sum(masks)
        total += batch_sum
        batch_values.append(_second_eigenvalue(batch_sum / size))

    value = _second_eigenvalue(total / samples)
    stderr = float(np.std(batch_values, ddof=1) / math.sqrt(batches))
    logger.debug(f"empirical rho: m={m}, delta={delta}, value={value:.6f} +/- {stderr:.2e}")
    return RhoEstimate(value=value, stderr=stderr, samples=samples, m=m, heterogeneous=heterogeneous)


@dataclass
class ContractionReport:
    estimate: float
    stderr: float
    bound: float
    norm_sq: float
    t_steps: int
    passed: bool

    @property
    def per_step_decay(self) -> Optional[float]:
        """(estimate / ||B||^2)^(1/t), comparable against rho_bound"""
        if self.t_steps == 0 or self.norm_sq == 0.0:
            return None
        return (self.estimate / self.norm_sq) ** (1.0 / self.t_steps)


def contraction_check(B, delta: float, m: int, t_steps: int, replications: int,
                      rng: np.random.Generator, slack_se: float = 3.0) -> ContractionReport:
    """Monte-Carlo check of E||B(W^(t-1)...W^(0) - J)||_F^2 <= rho_bound^t ||B||_F^2"""
    B = np.asarray(B, dtype=np.float64)
    if B.ndim != 2 or B.shape[1] != m:
        raise InvalidInputError(f"B must be d x {m}, got shape {B.shape}")
    if t_steps < 0 or replications < 2:
        raise InvalidInputError("need t_steps >= 0 and at least two replications")
    spec = DynamicsSpec.uniform(STATIONARY, delta, m)
    J = np.full((m, m), 1.0 / m)

    values = np.empty(replications)
    for r in range(replications):
        P = np.eye(m)
        for step in range(t_steps):
            P = build_W(sample_active(spec, step, rng), m) @ P
        diff = B @ (P - J)
        values[r] = np.sum(diff * diff)

    norm_sq = float(np.sum(B * B))
    estimate = float(values.mean())
    stderr = float(values.std(ddof=1) / math.sqrt(replications))
    bound = rho_bound(delta, m) ** t_steps * norm_sq
    return ContractionReport(
        estimate=estimate,
        stderr=stderr,
        bound=bound,
        norm_sq=norm_sq,
        t_steps=t_steps,
        passed=bool(estimate - slack_se * stderr <= bound + 1e-12),
    )
