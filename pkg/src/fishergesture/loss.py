"""Softmax cross-entropy, the Fisher criterion and the running class means.

Features are passed as an (m, M) array with an (m,) integer label array.
"""

from dataclasses import dataclass

import numpy as np

from .linalg import log_softmax, softmax


@dataclass
class ClassifierParams:
    W: np.ndarray  # (n_classes, M); row j scores class j
    b: np.ndarray  # (n_classes,)

    @property
    def n_classes(self) -> int:
        return self.W.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.W.shape[1]

    @classmethod
    def init(cls, feature_dim: int, n_classes: int, rng: np.random.Generator) -> "ClassifierParams":
        bound = 1.0 / np.sqrt(feature_dim)
        return cls(W=rng.uniform(-bound, bound, size=(n_classes, feature_dim)), b=np.zeros(n_classes))

    def arrays(self) -> dict:
        return {"W": self.W, "b": self.b}

    def copy(self) -> "ClassifierParams":
        return ClassifierParams(self.W.copy(), self.b.copy())


@dataclass
class FisherState:
    means: np.ndarray  # (n_classes, M)
    theta: float = 0.1
    delta: float = 0.01
    alpha: float = 0.5

    def __post_init__(self):
        for name in ("theta", "delta", "alpha"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {value}")

    @classmethod
    def zeros(cls, n_classes: int, feature_dim: int, **hyper) -> "FisherState":
        return cls(means=np.zeros((n_classes, feature_dim)), **hyper)

    @property
    def n_classes(self) -> int:
        return self.means.shape[0]

    def copy(self) -> "FisherState":
        return FisherState(self.means.copy(), self.theta, self.delta, self.alpha)


@dataclass(frozen=True)
class LossBreakdown:
    softmax: float
    fisher: float
    total: float


def _check_batch(features, labels, feature_dim, n_classes):
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    if features.ndim != 2 or features.shape[0] == 0:
        raise ValueError(f"features must be a nonempty (m, M) array, got shape {features.shape}")
    if labels.shape != (features.shape[0],):
        raise ValueError(f"expected {features.shape[0]} labels, got shape {labels.shape}")
    if features.shape[1] != feature_dim:
        raise ValueError(f"feature size {features.shape[1]} != expected {feature_dim}")
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise ValueError(f"label out of range [0, {n_classes}): {labels.min()}..{labels.max()}")
    return features, labels.astype(np.intp)


def softmax_loss(clf: ClassifierParams, features, labels):
    """Mean cross-entropy. Returns (L_s, dL_s/dO, dL_s/dW, dL_s/db)."""
    O, y = _check_batch(features, labels, clf.feature_dim, clf.n_classes)
    m = O.shape[0]
    logits = O @ clf.W.T + clf.b
    logp = log_softmax(logits)
    rows = np.arange(m)
    loss = -np.mean(logp[rows, y])

    d_logits = softmax(logits)
    d_logits[rows, y] -= 1.0
    d_logits /= m
    return float(loss), d_logits @ clf.W, d_logits.T @ O, d_logits.sum(axis=0)


def inter_class_term(means, delta: float) -> float:
    """delta/(n(n-1)) times the squared distance summed over all ordered class pairs."""
    n = means.shape[0]
    if n < 2:
        return 0.0
    diff = means[:, None, :] - means[None, :, :]
    return delta / (n * (n - 1)) * float(np.sum(diff**2))


def fisher_loss(state: FisherState, features, labels):
    """Fisher criterion with means held constant. Returns (L_f, dL_f/dO)."""
    O, y = _check_batch(features, labels, state.means.shape[1], state.n_classes)
    m = O.shape[0]
    diff = O - state.means[y]
    intra = float(np.sum(diff**2)) / m
    return intra - inter_class_term(state.means, state.delta), (2.0 / m) * diff


def combined_loss(clf: ClassifierParams, state: FisherState, features, labels):
    """L = L_s + theta * L_f. Returns (LossBreakdown, dL/dO, dL/dW, dL/db)."""
    if clf.n_classes != state.n_classes:
        raise ValueError(f"classifier has {clf.n_classes} classes, Fisher state has {state.n_classes}")
    ls, g_O, g_W, g_b = softmax_loss(clf, features, labels)
    lf, g_fO = fisher_loss(state, features, labels)
    if state.theta == 0.0:
        return LossBreakdown(ls, lf, ls), g_O, g_W, g_b
    return LossBreakdown(ls, lf, ls + state.theta * lf), g_O + state.theta * g_fO, g_W, g_b


def update_means(state: FisherState, features, labels) -> FisherState:
    """Damped move of each present class mean toward its batch centroid; absent classes untouched."""
    O, y = _check_batch(features, labels, state.means.shape[1], state.n_classes)
    means = state.means.copy()
    for j in np.unique(y):
        members = O[y == j]
        step = np.sum(means[j] - members, axis=0) / (1.0 + members.shape[0])
        means[j] = means[j] - state.alpha * step
    return FisherState(means, state.theta, state.delta, state.alpha)
