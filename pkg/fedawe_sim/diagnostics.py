"""
Analysis-side quantities tracked alongside a FedAWE run.

The auxiliary sequence

    z_i^t = x_i^t - eta_g s (sum of eta_l(r) over r = tau_i(t)+1 .. t-1) grad F_i(x_i^{tau_i(t)+1})

is never computed by clients. It coincides with x_i^t whenever i was active
in round t-1 and otherwise descends by eta_l(t) eta_g s grad F_i(x_i^{tau_i+1})
in every idle round t; with a constant step the sum is eta_l (t - tau_i(t) - 1).
Everything here observes a run and never feeds back into the algorithm state.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Union

import numpy as np

from .errors import InvalidInputError
from .mixing import consensus_error
from .objectives import NoiseSpec, global_grad, stochastic_grad

logger = logging.getLogger(__name__)

IDENTITY_ATOL = 1e-9

# a constant local step size or a schedule t -> eta_l(t)
StepSize = Union[float, Callable[[int], float]]


def step_at(eta_l: StepSize, t: int) -> float:
    return eta_l(t) if callable(eta_l) else eta_l


def idle_step_sum(eta_l: StepSize, first: int, last: int) -> float:
    """eta_l(first) + ... + eta_l(last); zero for an empty range"""
    if last < first:
        return 0.0
    if callable(eta_l):
        return math.fsum(eta_l(r) for r in range(first, last + 1))
    return eta_l * (last - first + 1)


def auxiliary_value(x_i: np.ndarray, tau_i: int, t: int, eta_l: StepSize, eta_g: float, s: int,
                    true_grad_fn: Callable[[np.ndarray], np.ndarray],
                    anchor: Optional[np.ndarray] = None) -> np.ndarray:
    """z_i^t from scratch.

    ``anchor`` is x_i^{tau_i(t)+1}; for a client idle since tau_i(t) it equals
    x_i^t, which is the default.
    """
    x_i = np.asarray(x_i, dtype=np.float64)
    if t - tau_i - 1 < 0:
        raise InvalidInputError(f"tau_i(t) must be < t, got tau={tau_i}, t={t}")
    if t - tau_i - 1 == 0:
        return x_i.copy()
    base = x_i if anchor is None else anchor
    return x_i - eta_g * s * idle_step_sum(eta_l, tau_i + 1, t - 1) * true_grad_fn(base)


def approximation_error(X, Z) -> float:
    """(1/m) sum_i ||x_i - z_i||^2"""
    X = np.asarray(X, dtype=np.float64)
    Z = np.asarray(Z, dtype=np.float64)
    if X.shape != Z.shape:
        raise InvalidInputError(f"X and Z shapes differ: {X.shape} vs {Z.shape}")
    diff = X - Z
    return float(np.sum(diff * diff) / X.shape[0])


def young_relation(X, Z) -> bool:
    """Each consensus error is at most 2 x approximation error + 2 x the other one"""
    approx = approximation_error(X, Z)
    cx, cz = consensus_error(X), consensus_error(Z)
    slack = 1e-12 * (1.0 + approx + cx + cz)
    return cz <= 2 * approx + 2 * cx + slack and cx <= 2 * approx + 2 * cz + slack


class AuxiliaryTracker:
    """Maintains z_i^t incrementally next to a FedAWE run"""

    def __init__(self, objectives: Sequence, client_models: np.ndarray,
                 eta_l: StepSize, eta_g: float, local_steps: int):
        self.objectives = objectives
        self.eta_l = eta_l
        self.eta_g = eta_g
        self.local_steps = local_steps
        self.round = 0
        self.z = np.array(client_models, dtype=np.float64)
        # grad F_i at x_i^{tau_i(t)+1}, refreshed whenever i is active
        self.anchor_grads = np.stack([obj.true_grad(x) for obj, x in zip(objectives, self.z)])

    def observe(self, active: np.ndarray, client_models: np.ndarray) -> np.ndarray:
        """Advance z from round t to t+1 given A^t and the models x^{t+1}"""
        idle = np.ones(len(self.objectives), dtype=bool)
        idle[active] = False
        step = step_at(self.eta_l, self.round) * self.eta_g * self.local_steps
        self.z[idle] -= step * self.anchor_grads[idle]
        for i in active:
            self.z[i] = client_models[i]
            self.anchor_grads[i] = self.objectives[i].true_grad(client_models[i])
        self.round += 1
        return self.z

    def approximation_error(self, client_models: np.ndarray) -> float:
        return approximation_error(client_models, self.z)


@dataclass
class TraceStep:
    round: int
    active: np.ndarray
    tau_before: np.ndarray
    tau_after: np.ndarray
    models_after: np.ndarray
    aux_after: Optional[np.ndarray] = None


@dataclass
class RunTrace:
    """Per-round snapshots of a run, kept for after-the-fact identity checks"""
    objectives: Sequence
    initial_models: np.ndarray
    eta_l: StepSize
    eta_g: float
    local_steps: int
    steps: List[TraceStep] = field(default_factory=list)

    def idle_descent(self, first: int, last: int) -> float:
        """eta_g s times the step sizes of rounds first .. last"""
        return self.eta_g * self.local_steps * idle_step_sum(self.eta_l, first, last)

    def models_at(self, t: int) -> np.ndarray:
        """x^t, the client models at the start of round t"""
        return self.initial_models if t == 0 else self.steps[t - 1].models_after

    def mean_models(self) -> np.ndarray:
        """x_bar^t for t = 0 .. T-1"""
        return np.stack([self.models_at(t).mean(axis=0) for t in range(len(self.steps))])


@dataclass
class IdentityReport:
    name: str
    passed: bool
    checks: int
    max_violation: float
    failures: List[str] = field(default_factory=list)


def _report(name: str, violations: List[tuple], checks: int, atol: float) -> IdentityReport:
    worst = max((v for _, _, v in violations), default=0.0)
    failures = [f"round {t}, client {i}: violation {v:.3e}" for t, i, v in violations if v > atol]
    report = IdentityReport(name=name, passed=not failures, checks=checks,
                            max_violation=worst, failures=failures[:10])
    if failures:
        logger.warning(f"{name}: {len(failures)} of {checks} checks failed, worst {worst:.3e}")
    return report


def verify_inactive_identity(trace: RunTrace, atol: float = IDENTITY_ATOL) -> IdentityReport:
    """x_i^{t+1} - z_i^{t+1} = eta_g s (eta_l(tau+1) + ... + eta_l(t)) grad F_i(x_i^{tau+1}) for i not in A^t

    where tau = tau_i(t+1).
    """
    violations, checks = [], 0
    for step in trace.steps:
        if step.aux_after is None:
            raise InvalidInputError("trace was recorded without the auxiliary sequence")
        idle = np.setdiff1d(np.arange(step.models_after.shape[0]), step.active)
        for i in idle:
            tau = int(step.tau_after[i])
            anchor = trace.models_at(tau + 1)[i]
            rhs = trace.idle_descent(tau + 1, step.round) * trace.objectives[i].true_grad(anchor)
            lhs = step.models_after[i] - step.aux_after[i]
            violations.append((step.round, int(i), float(np.max(np.abs(lhs - rhs)))))
            checks += 1
    return _report('inactive_identity', violations, checks, atol)


def verify_active_identity(trace: RunTrace, atol: float = IDENTITY_ATOL) -> IdentityReport:
    """z_i^{t+1} = x_i^{t+1} for every i in A^t"""
    violations, checks = [], 0
    for step in trace.steps:
        if step.aux_after is None:
            raise InvalidInputError("trace was recorded without the auxiliary sequence")
        for i in step.active:
            gap = np.max(np.abs(step.models_after[i] - step.aux_after[i]))
            violations.append((step.round, int(i), float(gap)))
            checks += 1
    return _report('active_identity', violations, checks, atol)


def verify_z_tracking(trace: RunTrace, atol: float = IDENTITY_ATOL) -> IdentityReport:
    """Incrementally maintained z matches the closed form recomputed from scratch"""
    violations, checks = [], 0
    for step in trace.steps:
        t_next = step.round + 1
        for i, obj in enumerate(trace.objectives):
            tau = int(step.tau_after[i])
            anchor = trace.models_at(tau + 1)[i]
            z_ref = auxiliary_value(step.models_after[i], tau, t_next, trace.eta_l, trace.eta_g,
                                    trace.local_steps, obj.true_grad, anchor=anchor)
            violations.append((step.round, i, float(np.max(np.abs(z_ref - step.aux_after[i])))))
            checks += 1
    return _report('z_tracking', violations, checks, atol)


@dataclass
class GradNormReport:
    per_round: np.ndarray
    running_average: np.ndarray

    @property
    def time_average(self) -> float:
        return float(self.running_average[-1]) if self.running_average.size else 0.0


def grad_norm_trajectory(mean_models, objectives: Sequence) -> GradNormReport:
    """||grad F(x_bar^t)||^2 per round and its running time-average"""
    mean_models = np.atleast_2d(np.asarray(mean_models, dtype=np.float64))
    per_round = np.array([float(np.sum(global_grad(objectives, x) ** 2)) for x in mean_models])
    counts = np.arange(1, per_round.size + 1)
    return GradNormReport(per_round=per_round, running_average=np.cumsum(per_round) / counts)


@dataclass
class ProblemConstants:
    """Empirical stand-ins for the constants that appear in the convergence bounds"""
    sigma2: float
    zeta2: float
    beta2: float
    smoothness: float
    points: int


def estimate_problem_constants(objectives: Sequence, noise: NoiseSpec, rng: np.random.Generator,
                               center: Optional[np.ndarray] = None, spread: float = 1.0,
                               points: int = 20, draws: int = 200) -> ProblemConstants:
    """Estimate sigma^2, zeta^2, beta^2 and L around ``center``.

    sigma^2 is the largest per-(client, point) stochastic-gradient variance,
    (beta^2, zeta^2) come from a least-squares fit of the gradient
    dissimilarity against ||grad F||^2, and L is the largest observed
    gradient Lipschitz ratio.
    """
    dim = objectives[0].dim
    center = np.zeros(dim) if center is None else np.asarray(center, dtype=np.float64)
    xs = center + spread * rng.standard_normal((points, dim))

    sigma2 = 0.0
    dissimilarity, grad_sq = [], []
    local_grads = []
    for x in xs:
        grads = np.stack([obj.true_grad(x) for obj in objectives])
        local_grads.append(grads)
        mean_grad = grads.mean(axis=0)
        dissimilarity.append(float(np.mean(np.sum((grads - mean_grad) ** 2, axis=1))))
        grad_sq.append(float(np.sum(mean_grad ** 2)))
        for obj, g in zip(objectives, grads):
            samples = np.stack([stochastic_grad(obj, x, noise, rng) for _ in range(draws)])
            sigma2 = max(sigma2, float(np.mean(np.sum((samples - g) ** 2, axis=1))))

    design = np.column_stack([grad_sq, np.ones(points)])
    (beta2, zeta2), *_ = np.linalg.lstsq(design, np.array(dissimilarity), rcond=None)

    smoothness = 0.0
    for a in range(points):
        for b in range(a + 1, points):
            step = np.linalg.norm(xs[a] - xs[b])
            if step > 0:
                ratios = np.linalg.norm(local_grads[a] - local_grads[b], axis=1) / step
                smoothness = max(smoothness, float(ratios.max()))

    return ProblemConstants(sigma2=sigma2, zeta2=max(float(zeta2), 0.0), beta2=max(float(beta2), 0.0),
                            smoothness=smoothness, points=points)
