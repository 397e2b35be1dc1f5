"""
Local objectives F_i, their gradients and the synthetic heterogeneous data.

Two families are supported:

- ``QuadraticObjective``: F_i(x) = ||x - u_i||^2 / 2, used for exact
  fixed-point and identity checks.
- ``LogisticObjective``: multinomial logistic regression (softmax
  cross-entropy) on a client's local samples, the desk-scale stand-in for the
  image classification experiments. Client data comes from Gaussian class
  blobs with per-client class mixtures drawn from a Dirichlet prior.

Model vectors are 1-D float64 arrays. For the logistic model the layout is the
C x d weight matrix in row-major order followed by the C biases.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
from scipy.special import logsumexp, softmax

from .errors import InvalidInputError

logger = logging.getLogger(__name__)

DEFAULT_SAMPLES_PER_CLIENT = 200
DEFAULT_CLASSES = 10
DEFAULT_FEATURES = 20
DEFAULT_SEPARATION = 3.0


@dataclass(frozen=True)
class NoiseSpec:
    """Stochastic-gradient noise: additive isotropic Gaussian and/or minibatching"""
    sigma: float = 0.0
    batch_size: Optional[int] = None

    def __post_init__(self):
        if not (self.sigma >= 0.0 and math.isfinite(self.sigma)):
            raise InvalidInputError(f"noise sigma must be finite and >= 0, got {self.sigma}")
        if self.batch_size is not None and self.batch_size < 1:
            raise InvalidInputError(f"batch_size must be >= 1, got {self.batch_size}")


class QuadraticObjective:
    """F_i(x) = ||x - u_i||^2 / 2"""

    kind = 'quadratic'

    def __init__(self, minimizer):
        u = np.array(minimizer, dtype=np.float64).reshape(-1)
        if u.size == 0 or not np.all(np.isfinite(u)):
            raise InvalidInputError("quadratic minimizer must be a non-empty finite vector")
        u.setflags(write=False)
        self.u = u

    @property
    def dim(self) -> int:
        return self.u.size

    def value(self, x: np.ndarray) -> float:
        diff = x - self.u
        return 0.5 * float(np.dot(diff, diff))

    def true_grad(self, x: np.ndarray) -> np.ndarray:
        return x - self.u

    def __repr__(self):
        return f"QuadraticObjective(u={self.u.tolist()})"


class LogisticObjective:
    """Softmax cross-entropy of a linear classifier on one client's samples"""

    kind = 'logistic'

    def __init__(self, features, labels, classes: int, class_dist=None):
        X = np.array(features, dtype=np.float64)
        y = np.array(labels, dtype=np.int64).reshape(-1)
        if X.ndim != 2 or X.shape[0] == 0 or X.shape[0] != y.size:
            raise InvalidInputError(
                f"features must be an n x d matrix matching {y.size} labels, got shape {X.shape}")
        if classes < 2 or y.min() < 0 or y.max() >= classes:
            raise InvalidInputError(f"labels must lie in 0..{classes - 1}")
        if class_dist is None:
            class_dist = np.bincount(y, minlength=classes) / y.size
        nu = np.array(class_dist, dtype=np.float64).reshape(-1)
        if nu.size != classes or np.any(nu < 0) or abs(nu.sum() - 1.0) > 1e-9:
            raise InvalidInputError("class_dist must be a probability vector over the classes")

        for arr in (X, y, nu):
            arr.setflags(write=False)
        self.features = X
        self.labels = y
        self.classes = int(classes)
        self.class_dist = nu

    @property
    def n_samples(self) -> int:
        return self.labels.size

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @property
    def dim(self) -> int:
        return self.classes * self.n_features + self.classes

    def _unpack(self, x: np.ndarray):
        cut = self.classes * self.n_features
        return x[:cut].reshape(self.classes, self.n_features), x[cut:]

    def _logits(self, x: np.ndarray, idx=None) -> np.ndarray:
        W, b = self._unpack(x)
        X = self.features if idx is None else self.features[idx]
        return X @ W.T + b

    def value(self, x: np.ndarray) -> float:
        logits = self._logits(x)
        picked = logits[np.arange(self.n_samples), self.labels]
        return float(np.mean(logsumexp(logits, axis=1) - picked))

    def batch_grad(self, x: np.ndarray, idx=None) -> np.ndarray:
        """Mean per-sample gradient over ``idx`` (all samples when None)"""
        X = self.features if idx is None else self.features[idx]
        y = self.labels if idx is None else self.labels[idx]
        probs = softmax(self._logits(x, idx), axis=1)
        probs[np.arange(y.size), y] -= 1.0
        grad_W = probs.T @ X / y.size
        grad_b = probs.mean(axis=0)
        return np.concatenate([grad_W.reshape(-1), grad_b])

    def true_grad(self, x: np.ndarray) -> np.ndarray:
        return self.batch_grad(x)

    def accuracy(self, x: np.ndarray) -> float:
        predicted = np.argmax(self._logits(x), axis=1)
        return float(np.mean(predicted == self.labels))

    def __repr__(self):
        return f"LogisticObjective(n={self.n_samples}, d={self.n_features}, C={self.classes})"


def _check_dim(obj, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.size != obj.dim:
        raise InvalidInputError(f"model has shape {x.shape}, objective expects ({obj.dim},)")
    return x


def value(obj, x) -> float:
    """F_i(x)"""
    return obj.value(_check_dim(obj, x))


def true_grad(obj, x) -> np.ndarray:
    """Exact gradient of F_i at x (full batch for logistic objectives)"""
    return obj.true_grad(_check_dim(obj, x))


def stochastic_grad(obj, x, noise: NoiseSpec, rng: np.random.Generator) -> np.ndarray:
    """Unbiased gradient oracle.

    Logistic objectives with ``noise.batch_size`` set use a uniform minibatch
    (without replacement). Additive Gaussian noise has per-coordinate variance
    sigma^2 / d, so the total variance is sigma^2.
    """
    x = _check_dim(obj, x)
    if (noise.batch_size is not None and isinstance(obj, LogisticObjective)
            and noise.batch_size < obj.n_samples):
        idx = rng.choice(obj.n_samples, size=noise.batch_size, replace=False)
        grad = obj.batch_grad(x, idx)
    else:
        grad = obj.true_grad(x)
    if noise.sigma > 0.0:
        grad = grad + rng.normal(0.0, noise.sigma / math.sqrt(obj.dim), size=obj.dim)
    return grad


def _check_family(objectives: Sequence) -> int:
    if len(objectives) == 0:
        raise InvalidInputError("objective list is empty")
    dims = {obj.dim for obj in objectives}
    if len(dims) != 1:
        raise InvalidInputError(f"objectives disagree on dimension: {sorted(dims)}")
    return dims.pop()


def global_eval(objectives: Sequence, x) -> float:
    """F(x) = (1/m) sum_i F_i(x)"""
    _check_family(objectives)
    x = _check_dim(objectives[0], x)
    # fsum is correctly rounded, so the result does not depend on client order
    return math.fsum(obj.value(x) for obj in objectives) / len(objectives)


def global_grad(objectives: Sequence, x) -> np.ndarray:
    """grad F(x), the mean of the local true gradients"""
    _check_family(objectives)
    x = _check_dim(objectives[0], x)
    return np.mean(np.stack([obj.true_grad(x) for obj in objectives]), axis=0)


def make_quadratics(minimizers) -> List[QuadraticObjective]:
    """One quadratic per row of ``minimizers`` (scalars become 1-D problems)"""
    rows = np.asarray(minimizers, dtype=np.float64)
    if rows.ndim == 1:
        rows = rows.reshape(-1, 1)
    objectives = [QuadraticObjective(u) for u in rows]
    _check_family(objectives)
    return objectives


def random_quadratics(m: int, dim: int, scale: float, rng: np.random.Generator) -> List[QuadraticObjective]:
    """m quadratics with minimizers drawn from N(0, scale^2 I)"""
    if m < 1 or dim < 1:
        raise InvalidInputError("need at least one client and one dimension")
    return make_quadratics(rng.normal(0.0, scale, size=(m, dim)))


@dataclass
class SyntheticPool:
    """Gaussian class blobs with unit covariance, class means on a scaled simplex"""
    means: np.ndarray
    samples: List[np.ndarray] = field(repr=False)

    @classmethod
    def generate(cls, classes: int = DEFAULT_CLASSES, features: int = DEFAULT_FEATURES,
                 per_class: int = 2000, separation: float = DEFAULT_SEPARATION,
                 rng: Optional[np.random.Generator] = None) -> "SyntheticPool":
        if features < classes:
            raise InvalidInputError(
                f"need at least as many features as classes for simplex means ({features} < {classes})")
        if per_class < 1:
            raise InvalidInputError("per_class must be >= 1")
        rng = rng if rng is not None else np.random.default_rng()
        means = separation * np.eye(classes, features)
        samples = [means[c] + rng.standard_normal((per_class, features)) for c in range(classes)]
        return cls(means=means, samples=samples)

    @property
    def classes(self) -> int:
        return self.means.shape[0]

    @property
    def features(self) -> int:
        return self.means.shape[1]

    @property
    def per_class(self) -> int:
        return self.samples[0].shape[0]

    def draw(self, label: int, count: int, rng: np.random.Generator) -> np.ndarray:
        """``count`` distinct pool rows of class ``label``"""
        if count > self.per_class:
            raise InvalidInputError(
                f"pool holds {self.per_class} samples of class {label}, {count} requested")
        rows = rng.choice(self.per_class, size=count, replace=False)
        return self.samples[label][rows]

    def fresh(self, label: int, count: int, rng: np.random.Generator) -> np.ndarray:
        """New draws from the class-conditional generator (not from the pool)"""
        return self.means[label] + rng.standard_normal((count, self.features))


def generate_dirichlet_partition(alpha: float, m: int, classes: int, pool: SyntheticPool,
                                 rng: np.random.Generator,
                                 samples_per_client: int = DEFAULT_SAMPLES_PER_CLIENT
                                 ) -> List[LogisticObjective]:
    """Client datasets with class mixtures nu_i ~ Dirichlet(alpha * 1_C)"""
    if not alpha > 0:
        raise InvalidInputError(f"Dirichlet alpha must be > 0, got {alpha}")
    if m < 1 or samples_per_client < 1:
        raise InvalidInputError("need m >= 1 clients and at least one sample per client")
    if pool.classes != classes:
        raise InvalidInputError(f"pool has {pool.classes} classes, partition asked for {classes}")

    objectives = []
    for i in range(m):
        nu = rng.dirichlet(np.full(classes, float(alpha)))
        nu = nu / nu.sum()
        labels = rng.choice(classes, size=samples_per_client, p=nu)
        counts = np.bincount(labels, minlength=classes)
        blocks, block_labels = [], []
        for c in np.flatnonzero(counts):
            blocks.append(pool.draw(int(c), int(counts[c]), rng))
            block_labels.append(np.full(counts[c], c))
        objectives.append(LogisticObjective(np.vstack(blocks), np.concatenate(block_labels),
                                            classes, class_dist=nu))
    logger.debug(f"Dirichlet partition: alpha={alpha}, m={m}, n_i={samples_per_client}")
    return objectives


def make_test_set(pool: SyntheticPool, per_class: int, rng: np.random.Generator) -> LogisticObjective:
    """Balanced held-out set drawn fresh from the class generator"""
    X = np.vstack([pool.fresh(c, per_class, rng) for c in range(pool.classes)])
    y = np.repeat(np.arange(pool.classes), per_class)
    return LogisticObjective(X, y, pool.classes)
