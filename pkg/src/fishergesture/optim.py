"""Mini-batch training: BPTT through the pooled encoder, Adam or momentum
SGD on the network weights, then the damped class-mean update.
"""

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from .cells import backward_bptt, encode_bidirectional
from .data import Dataset
from .loss import LossBreakdown, combined_loss, update_means
from .model import GestureModel, predict

log = logging.getLogger(__name__)

OPTIMIZERS = ("adam", "sgd_momentum")


class NumericalError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    learning_rate: float = 0.002
    batch_size: int = 200
    max_iterations: int = 1500
    optimizer: str = "adam"
    momentum: float = 0.9
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    grad_clip_norm: float | None = 5.0
    seed: int = 0
    log_every: int = 50

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be >= 0")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}, got {self.optimizer!r}")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must be in [0, 1)")
        if not (0.0 < self.adam_beta1 < 1.0 and 0.0 < self.adam_beta2 < 1.0):
            raise ValueError("adam betas must be in (0, 1)")
        if self.adam_epsilon <= 0:
            raise ValueError("adam_epsilon must be > 0")
        if self.grad_clip_norm is not None and self.grad_clip_norm <= 0:
            raise ValueError("grad_clip_norm must be positive or None")
        if self.log_every < 1:
            raise ValueError("log_every must be >= 1")


class Adam:
    def __init__(self, lr, beta1=0.9, beta2=0.999, epsilon=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.m = {}
        self.v = {}
        self.t = 0

    def step(self, params: dict, grads: dict) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for k, p in params.items():
            g = grads[k]
            if k not in self.m:
                self.m[k] = np.zeros_like(p)
                self.v[k] = np.zeros_like(p)
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * (g * g)
            p -= self.lr * (self.m[k] / bc1) / (np.sqrt(self.v[k] / bc2) + self.epsilon)


class SgdMomentum:
    def __init__(self, lr, momentum=0.9):
        self.lr = lr
        self.momentum = momentum
        self.velocity = {}
        self.t = 0

    def step(self, params: dict, grads: dict) -> None:
        self.t += 1
        for k, p in params.items():
            v = self.velocity.get(k)
            if v is None:
                v = self.velocity[k] = np.zeros_like(p)
            v *= self.momentum
            v -= self.lr * grads[k]
            p += v


def make_optimizer(config: TrainConfig):
    if config.optimizer == "adam":
        return Adam(config.learning_rate, config.adam_beta1, config.adam_beta2, config.adam_epsilon)
    return SgdMomentum(config.learning_rate, config.momentum)


def global_norm(grads: dict) -> float:
    return float(np.sqrt(sum(np.sum(g * g) for g in grads.values())))


def clip_by_global_norm(grads: dict, max_norm: float | None):
    """Scale all gradients by one factor so their joint norm is at most ``max_norm``."""
    norm = global_norm(grads)
    if max_norm is None or norm <= max_norm:
        return grads, norm
    factor = max_norm / norm
    return {k: g * factor for k, g in grads.items()}, norm


def compute_gradients(model: GestureModel, X, y):
    """Loss and gradients of every trainable block on one batch; also returns pooled features."""
    enc = encode_bidirectional(model.fwd, model.bwd, X)
    steps = enc.features.shape[1]
    pooled = enc.features.mean(axis=1)
    breakdown, g_O, g_W, g_b = combined_loss(model.classifier, model.fisher, pooled, y)
    grad_f = np.broadcast_to(g_O[:, None, :] / steps, enc.features.shape)
    g_fwd, g_bwd, _ = backward_bptt(enc, grad_f)
    grads = {f"fwd.{k}": v for k, v in g_fwd.arrays().items()}
    grads.update({f"bwd.{k}": v for k, v in g_bwd.arrays().items()})
    grads["classifier.W"] = g_W
    grads["classifier.b"] = g_b
    return breakdown, grads, pooled


def train_step(model: GestureModel, X, y, config: TrainConfig, optimizer) -> LossBreakdown:
    """One iteration, in place: gradients, optimizer update, then the class-mean update."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 3 or X.shape[0] == 0:
        raise ValueError("train_step needs a nonempty (B, T, N) batch")
    breakdown, grads, pooled = compute_gradients(model, X, y)
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient in parameter block {name}")
    grads, _ = clip_by_global_norm(grads, config.grad_clip_norm)
    optimizer.step(model.parameters(), grads)
    model.fisher = update_means(model.fisher, pooled, y)
    return breakdown


@dataclass
class TrainRecord:
    iteration: int
    loss_s: float
    loss_f: float
    loss_total: float
    train_err: float
    test_err: float


@dataclass
class TrainReport:
    records: list = field(default_factory=list)

    CSV_HEADER = ("iter", "loss_s", "loss_f", "loss_total", "train_err", "test_err")

    def __len__(self):
        return len(self.records)

    def __eq__(self, other):
        if not isinstance(other, TrainReport) or len(self) != len(other):
            return False
        # NaN test errors compare equal here
        return all(np.array_equal(np.array(astuple_(a)), np.array(astuple_(b)), equal_nan=True)
                   for a, b in zip(self.records, other.records))

    def at(self, iteration: int) -> TrainRecord:
        for r in self.records:
            if r.iteration == iteration:
                return r
        raise KeyError(f"iteration {iteration} was not logged")

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.CSV_HEADER)
            for r in self.records:
                w.writerow([r.iteration] + [format(v, ".17g") for v in astuple_(r)[1:]])

    @classmethod
    def from_csv(cls, path) -> "TrainReport":
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = tuple(next(reader))
            if header != cls.CSV_HEADER:
                raise ValueError(f"{path}: unexpected header {header}")
            return cls([TrainRecord(int(row[0]), *map(float, row[1:])) for row in reader])


def astuple_(r: TrainRecord):
    return (r.iteration, r.loss_s, r.loss_f, r.loss_total, r.train_err, r.test_err)


def error_rate(model: GestureModel, X, y, chunk: int = 256) -> float:
    if len(y) == 0:
        return float("nan")
    wrong = 0
    for start in range(0, len(y), chunk):
        pred, _ = predict(model, X[start: start + chunk], "mean_pool")
        wrong += int(np.sum(pred != y[start: start + chunk]))
    return wrong / len(y)


def train_prepared(model: GestureModel, X, y, config: TrainConfig, X_test=None, y_test=None, progress=None):
    """Train on prepared arrays. Mutates and returns ``model`` with its TrainReport."""
    y = np.asarray(y)
    missing = sorted(set(range(model.n_classes)) - set(np.unique(y).tolist()))
    if missing:
        raise ValueError(f"classes {missing} have no training samples")
    rng = np.random.default_rng(config.seed)
    optimizer = make_optimizer(config)
    report = TrainReport()
    order = np.array([], dtype=np.intp)
    cursor = 0
    for it in range(1, config.max_iterations + 1):
        if cursor >= order.size:
            order = rng.permutation(len(y))
            cursor = 0
        idx = order[cursor: cursor + config.batch_size]
        cursor += config.batch_size
        breakdown = train_step(model, X[idx], y[idx], config, optimizer)
        if it % config.log_every == 0:
            rec = TrainRecord(it, breakdown.softmax, breakdown.fisher, breakdown.total,
                              error_rate(model, X, y),
                              error_rate(model, X_test, y_test) if X_test is not None else float("nan"))
            report.records.append(rec)
            log.info("iter %d  L=%.5f  Ls=%.5f  Lf=%.5f  train_err=%.4f  test_err=%.4f",
                     it, rec.loss_total, rec.loss_s, rec.loss_f, rec.train_err, rec.test_err)
            if progress is not None:
                progress(rec)
    return model, report


def train(model: GestureModel, dataset: Dataset, config: TrainConfig, test: Dataset | None = None):
    """Preprocess with the model's settings and train. Returns (model, fisher_state, report)."""
    X, y = model.prepare_dataset(dataset)
    X_test = y_test = None
    if test is not None and len(test):
        X_test, y_test = model.prepare_dataset(test)
    model, report = train_prepared(model, X, y, config, X_test, y_test)
    return model, model.fisher, report
