"""
Invariant suites behind ``fedawe-sim verify``.

Each suite returns a ``SuiteResult``; the command passes when every selected
suite passes. ``quick=True`` shrinks the Monte-Carlo sizes for smoke runs.
"""
import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from .algorithms import HyperParams, TrainingOptions, run_training
from .availability import FAMILIES, SINE, STATIONARY, DynamicsSpec, probs_at, unavailability_moments
from .diagnostics import (approximation_error, verify_active_identity, verify_inactive_identity,
                          verify_z_tracking, young_relation)
from .errors import InvalidInputError
from .mixing import build_W, empirical_rho, rho_bound
from .objectives import NoiseSpec, make_quadratics, random_quadratics
from .rng import stream

logger = logging.getLogger(__name__)

DOUBLY_STOCHASTIC_ATOL = 1e-12
REDUCTION_RTOL = 1e-12


@dataclass
class SuiteResult:
    name: str
    passed: bool
    checks: int
    seconds: float = 0.0
    details: List[str] = field(default_factory=list)


def suite_reequalization(rng: np.random.Generator, quick: bool = False) -> SuiteResult:
    """sum_{t<R} 1{i in A^t} (t - tau_i(t)) == R for every client active in round R-1"""
    traces = 100 if quick else 1000
    m, horizon = 10, 200
    checks, details = 0, []
    for family in FAMILIES:
        spec = DynamicsSpec(family, base_p=rng.uniform(0.1, 1.0, size=m))
        tau = np.full((traces, m), -1, dtype=np.int64)
        echoed = np.zeros((traces, m), dtype=np.int64)
        for t in range(horizon):
            active = rng.random((traces, m)) < probs_at(spec, t)
            echoed += np.where(active, t - tau, 0)
            tau[active] = t
            bad = active & (echoed != t + 1)
            checks += int(active.sum())
            if bad.any():
                details.append(f"{family}: {int(bad.sum())} mismatches at R={t + 1}")
    return SuiteResult('reequalization', not details, checks, details=details)


def suite_mixing(rng: np.random.Generator, quick: bool = False) -> SuiteResult:
    """W doubly stochastic, symmetric and idempotent; lambda_2(E[W^2]) under the bound"""
    sets = 1000 if quick else 10000
    samples = 5000 if quick else 50000
    m = 10
    checks, details = 0, []
    for k in range(sets):
        active = [] if k == 0 else np.flatnonzero(rng.random(m) < rng.uniform(0.0, 1.0))
        W = build_W(active, m)
        gaps = (np.abs(W.sum(axis=0) - 1.0).max(), np.abs(W.sum(axis=1) - 1.0).max(),
                np.abs(W - W.T).max(), np.abs(W @ W - W).max())
        checks += 1
        if max(gaps) > DOUBLY_STOCHASTIC_ATOL or W.min() < 0.0:
            details.append(f"active set {list(active)}: deviation {max(gaps):.2e}")

    for delta in (0.3, 0.5, 0.9):
        for size in (5, 10):
            estimate = empirical_rho(delta, size, samples, rng)
            bound = rho_bound(delta, size)
            checks += 1
            if estimate.value > bound + 3.0 * estimate.stderr:
                details.append(f"delta={delta}, m={size}: rho {estimate.value:.5f} > bound {bound:.5f}")
    return SuiteResult('mixing', not details, checks, details=details)


def suite_moments(rng: np.random.Generator, quick: bool = False) -> SuiteResult:
    """Unavailable-duration moments against 1/delta and 2/delta^2"""
    replications = 300 if quick else 2000
    horizon, m = 200, 5
    checks, details = 0, []
    for p in (0.3, 0.5, 0.9):
        report = unavailability_moments(DynamicsSpec.uniform(STATIONARY, p, m), horizon, replications, rng)
        checks += 2
        if not report.within_bounds():
            details.append(f"stationary p={p}: moments exceed the bounds")
        rel = np.abs(report.mean_gap * p - 1.0).max()
        if rel > 0.05:
            details.append(f"stationary p={p}: mean gap off the geometric value by {rel:.1%}")
    sine = DynamicsSpec(SINE, base_p=np.linspace(0.3, 0.9, m))
    report = unavailability_moments(sine, horizon, replications, rng)
    checks += 1
    if not report.within_bounds():
        details.append(f"sine: moments exceed the bounds for delta={report.delta:.3f}")
    return SuiteResult('moments', not details, checks, details=details)


def _identity_traces(rng: np.random.Generator, count: int, sigma: float, full: bool = False):
    m, dim = 5, 3
    for k in range(count):
        seed = int(rng.integers(2 ** 31))
        objectives = random_quadratics(m, dim, 5.0, rng)
        base_p = np.ones(m) if full else rng.uniform(0.2, 1.0, size=m)
        hp = HyperParams.constant(0.05, local_steps=1 + k % 2, rounds=40)
        yield run_training('fedawe', objectives, DynamicsSpec(STATIONARY, base_p=base_p), hp, seed,
                           noise=NoiseSpec(sigma), x0=rng.normal(size=dim),
                           options=TrainingOptions(track_auxiliary=True, keep_trace=True))


def suite_auxiliary(rng: np.random.Generator, quick: bool = False) -> SuiteResult:
    """Auxiliary-sequence identities along recorded FedAWE traces"""
    count = 10 if quick else 50
    checks, details = 0, []
    for sigma in (0.0, 1.0):
        for result in _identity_traces(rng, count, sigma):
            for report in (verify_active_identity(result.trace), verify_inactive_identity(result.trace),
                           verify_z_tracking(result.trace)):
                checks += report.checks
                if not report.passed:
                    details.append(f"sigma={sigma}, seed={result.seed}: {report.name} {report.failures[:2]}")
            for step in result.trace.steps:
                checks += 1
                if not young_relation(step.models_after, step.aux_after):
                    details.append(f"seed={result.seed}, round {step.round}: Young relation violated")
    for result in _identity_traces(rng, max(2, count // 5), 1.0, full=True):
        for step in result.trace.steps:
            checks += 1
            if approximation_error(step.models_after, step.aux_after) != 0.0:
                details.append(f"full participation seed={result.seed}: nonzero approximation error")
    return SuiteResult('auxiliary', not details, checks, details=details)


def gd_reference(objectives, x0: np.ndarray, step: float, rounds: int) -> np.ndarray:
    """Synchronous gradient descent x <- x - step * (1/m) sum_i grad F_i(x), one row per round"""
    x = np.array(x0, dtype=np.float64)
    trajectory = np.empty((rounds, x.size))
    for t in range(rounds):
        x = x - step * np.mean([obj.true_grad(x) for obj in objectives], axis=0)
        trajectory[t] = x
    return trajectory


def _full_participation_models(objectives, x0: np.ndarray, eta_l: float, eta_g: float, rounds: int) -> np.ndarray:
    m = len(objectives)
    hp = HyperParams.constant(eta_l, eta_g=eta_g, rounds=rounds)
    result = run_training('fedawe', objectives, DynamicsSpec.uniform(STATIONARY, 1.0, m), hp, 0,
                          x0=x0, options=TrainingOptions(record_metrics=False, keep_trace=True))
    return np.stack([step.models_after for step in result.trace.steps])


def suite_reduction(rng: np.random.Generator, quick: bool = False) -> SuiteResult:
    """Full participation, s=1, no noise: FedAWE is gradient descent on the mean objective.

    With dyadic step sizes and integer minimizers every intermediate value is
    exactly representable, so the two trajectories must agree bit for bit.
    Otherwise FedAWE rounds differently (it averages x - eta_g (x - (x - eta_l g_i))
    rather than stepping along the mean gradient) and agreement is to REDUCTION_RTOL.
    """
    details = []
    m, dim, rounds = 4, 3, 30
    exact = make_quadratics(rng.integers(-64, 65, size=(m, dim)).astype(np.float64))
    x0 = rng.integers(-64, 65, size=dim).astype(np.float64)
    simulated = _full_participation_models(exact, x0, 0.25, 2.0, rounds)
    reference = gd_reference(exact, x0, 0.5, rounds)
    if not np.array_equal(simulated, np.broadcast_to(reference[:, None, :], simulated.shape)):
        details.append("dyadic case is not bit-identical to gradient descent")

    m, dim, rounds = 5, 3, 100
    objectives = random_quadratics(m, dim, 5.0, rng)
    x0 = rng.normal(size=dim)
    simulated = _full_participation_models(objectives, x0, 0.1, 1.5, rounds)
    reference = gd_reference(objectives, x0, 0.15, rounds)
    if not np.allclose(simulated, reference[:, None, :], rtol=REDUCTION_RTOL, atol=REDUCTION_RTOL):
        worst = float(np.max(np.abs(simulated - reference[:, None, :])))
        details.append(f"trajectory drifts from gradient descent by {worst:.2e}")
    return SuiteResult('reduction', not details, 2, details=details)


def suite_bias(rng: np.random.Generator, quick: bool = False) -> SuiteResult:
    """FedAvg-active lands on its closed-form fixed point, FedAWE near the optimum"""
    from .presets import preset_example1_bias

    seed = int(rng.integers(2 ** 31))
    table = preset_example1_bias(points=[(0.9, 0.3), (0.5, 0.8), (1.0, 0.3)],
                                 replications=6 if quick else 10, seeds=(seed,))
    details = [f"{name} failed" for name, ok in table.checks.items() if not ok]
    return SuiteResult('bias', not details, len(table.rows), details=details)


SUITES: Dict[str, Callable[..., SuiteResult]] = {
    'reequalization': suite_reequalization,
    'mixing': suite_mixing,
    'moments': suite_moments,
    'auxiliary': suite_auxiliary,
    'reduction': suite_reduction,
    'bias': suite_bias,
}


def run_verify(seed: int = 0, suites: Optional[Sequence[str]] = None, quick: bool = False) -> List[SuiteResult]:
    names = list(suites) if suites else list(SUITES)
    for name in names:
        if name not in SUITES:
            raise InvalidInputError(f"unknown verify suite '{name}', expected one of {list(SUITES)}")
    results = []
    for name in names:
        rng = stream(seed, 'montecarlo', list(SUITES).index(name))
        started = time.perf_counter()
        result = SUITES[name](rng, quick=quick)
        result.seconds = time.perf_counter() - started
        status = 'passed' if result.passed else 'FAILED'
        logger.info(f"verify {name}: {status} ({result.checks} checks, {result.seconds:.1f}s)")
        for line in result.details[:10]:
            logger.warning(f"  {name}: {line}")
        results.append(result)
    return results
