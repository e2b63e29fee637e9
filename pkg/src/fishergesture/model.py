"""F-BLSTM / F-BGRU assembly: encoder, mean pooling, linear classifier,
inference modes, evaluation and the binary model container.
"""

import hashlib
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .cells import GruParams, LstmParams, encode_bidirectional
from .data import Dataset, SequenceSample
from .linalg import softmax
from .loss import ClassifierParams, FisherState
from .preprocess import DEFAULT_LENGTH, DEFAULT_WINDOW, preprocess_pipeline

CELL_KINDS = {"lstm": LstmParams, "gru": GruParams}
POOLING_MODES = ("mean_pool", "per_step_vote")

MAGIC = b"FGMODEL\x00"
FORMAT_VERSION = 1


class ModelFormatError(ValueError):
    pass


@dataclass
class GestureModel:
    cell_kind: str
    fwd: object
    bwd: object
    classifier: ClassifierParams
    fisher: FisherState
    pooling: str = "mean_pool"
    window: int = DEFAULT_WINDOW
    length: int = DEFAULT_LENGTH
    class_names: list = field(default_factory=list)

    def __post_init__(self):
        if self.cell_kind not in CELL_KINDS:
            raise ValueError(f"cell_kind must be one of {sorted(CELL_KINDS)}, got {self.cell_kind!r}")
        if self.pooling not in POOLING_MODES:
            raise ValueError(f"pooling must be one of {POOLING_MODES}, got {self.pooling!r}")
        if self.classifier.feature_dim != 2 * self.hidden_dim:
            raise ValueError("classifier feature size must be twice the hidden size")
        if self.fisher.means.shape != self.classifier.W.shape:
            raise ValueError("Fisher means must be (n_classes, 2H)")
        if not self.class_names:
            self.class_names = [str(j) for j in range(self.n_classes)]

    @classmethod
    def create(cls, cell_kind: str, input_dim: int, hidden_dim: int, n_classes: int, seed: int = 0,
               theta: float = 0.1, delta: float = 0.01, alpha: float = 0.5, pooling: str = "mean_pool",
               window: int = DEFAULT_WINDOW, length: int = DEFAULT_LENGTH, class_names=None):
        if cell_kind not in CELL_KINDS:
            raise ValueError(f"cell_kind must be one of {sorted(CELL_KINDS)}, got {cell_kind!r}")
        rng = np.random.default_rng(seed)
        params_cls = CELL_KINDS[cell_kind]
        fwd = params_cls.init(input_dim, hidden_dim, rng)
        bwd = params_cls.init(input_dim, hidden_dim, rng)
        clf = ClassifierParams.init(2 * hidden_dim, n_classes, rng)
        fisher = FisherState.zeros(n_classes, 2 * hidden_dim, theta=theta, delta=delta, alpha=alpha)
        return cls(cell_kind, fwd, bwd, clf, fisher, pooling, window, length, list(class_names or []))

    @property
    def input_dim(self) -> int:
        return self.fwd.input_dim

    @property
    def hidden_dim(self) -> int:
        return self.fwd.hidden_dim

    @property
    def n_classes(self) -> int:
        return self.classifier.n_classes

    @property
    def feature_dim(self) -> int:
        return 2 * self.hidden_dim

    def parameters(self) -> dict:
        """Trainable arrays by qualified name, in canonical order. Values are live references."""
        out = {f"fwd.{k}": v for k, v in self.fwd.arrays().items()}
        out.update({f"bwd.{k}": v for k, v in self.bwd.arrays().items()})
        out.update({f"classifier.{k}": v for k, v in self.classifier.arrays().items()})
        return out

    def copy(self) -> "GestureModel":
        return GestureModel(self.cell_kind, self.fwd.copy(), self.bwd.copy(), self.classifier.copy(),
                            self.fisher.copy(), self.pooling, self.window, self.length, list(self.class_names))

    def prepare(self, sample) -> np.ndarray:
        """Raw recording (SequenceSample or (T, N) array) -> (length, N) model input."""
        values = sample.values if isinstance(sample, SequenceSample) else np.asarray(sample, dtype=np.float64)
        if values.shape[1] != self.input_dim:
            raise ValueError(f"sample has {values.shape[1]} channels, model expects {self.input_dim}")
        return preprocess_pipeline(values, self.window, self.length)

    def prepare_dataset(self, dataset: Dataset):
        if dataset.channels is not None and dataset.channels != self.input_dim:
            raise ValueError(f"dataset has {dataset.channels} channels, model expects {self.input_dim}")
        if len(dataset) == 0:
            return np.zeros((0, self.length, self.input_dim)), np.zeros(0, dtype=np.intp)
        X = np.stack([self.prepare(s) for s in dataset.samples])
        return X, dataset.labels


def _as_batch(model, values):
    x = np.asarray(values, dtype=np.float64)
    single = x.ndim == 2
    if single:
        x = x[None]
    if x.ndim != 3 or x.shape[2] != model.input_dim:
        raise ValueError(f"input has shape {np.shape(values)}, model expects (T, {model.input_dim})")
    return x, single


def step_features(model: GestureModel, values) -> np.ndarray:
    """Per-timestep bidirectional features, (T, 2H) or (B, T, 2H)."""
    x, single = _as_batch(model, values)
    feats = encode_bidirectional(model.fwd, model.bwd, x).features
    return feats[0] if single else feats


def forward_features(model: GestureModel, values) -> np.ndarray:
    """Time-mean of the per-step features: the pooled vector both losses act on."""
    return step_features(model, values).mean(axis=-2)


def _vote(step_logits):
    """Modal per-step argmax; ties go to larger summed posterior mass, then lower index."""
    post = softmax(step_logits)
    n = step_logits.shape[-1]
    counts = np.bincount(np.argmax(step_logits, axis=-1), minlength=n)
    mass = post.sum(axis=0)
    tied = np.flatnonzero(counts == counts.max())
    best = tied[np.argmax(mass[tied])]  # argmax returns the first (lowest) among equal masses
    return int(best), post.mean(axis=0)


def predict(model: GestureModel, X, pooling: str | None = None):
    """Batch inference on prepared inputs (B, T, N). Returns (labels, posteriors)."""
    pooling = pooling or model.pooling
    x, _ = _as_batch(model, X)
    feats = step_features(model, x)
    W, b = model.classifier.W, model.classifier.b
    if pooling == "mean_pool":
        post = softmax(feats.mean(axis=1) @ W.T + b)
        return np.argmax(post, axis=1), post
    if pooling != "per_step_vote":
        raise ValueError(f"unknown pooling {pooling!r}")
    step_logits = feats @ W.T + b
    results = [_vote(s) for s in step_logits]
    return np.array([r[0] for r in results], dtype=np.intp), np.stack([r[1] for r in results])


def classify(model: GestureModel, values, pooling: str | None = None):
    """Classify one prepared (T, N) input. Returns (label, class posteriors)."""
    labels, post = predict(model, np.asarray(values)[None], pooling)
    return int(labels[0]), post[0]


def fisher_ratio(features, labels) -> float | None:
    """Mean squared distance between class centroids over mean squared distance to own centroid.

    None when fewer than two classes are present or the within-class scatter is zero.
    """
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    present = np.unique(labels)
    if present.size < 2:
        return None
    centroids = np.stack([features[labels == j].mean(axis=0) for j in present])
    pair = centroids[:, None, :] - centroids[None, :, :]
    k = present.size
    between = np.sum(pair**2) / (k * (k - 1))
    index = np.searchsorted(present, labels)
    within = np.mean(np.sum((features - centroids[index]) ** 2, axis=1))
    if within == 0.0:
        return None
    return float(between / within)


@dataclass
class EvalResult:
    overall_accuracy: float
    per_class_accuracy: np.ndarray  # NaN for classes with no samples
    confusion: np.ndarray  # rows true class, columns predicted
    fisher_ratio: float | None
    class_names: list = field(default_factory=list)

    @classmethod
    def from_predictions(cls, labels, predicted, n_classes, ratio=None, class_names=None):
        confusion = np.zeros((n_classes, n_classes), dtype=np.int64)
        np.add.at(confusion, (np.asarray(labels), np.asarray(predicted)), 1)
        totals = confusion.sum(axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            per_class = np.where(totals > 0, np.diag(confusion) / np.maximum(totals, 1), np.nan)
        overall = float(np.trace(confusion) / confusion.sum())
        return cls(overall, per_class, confusion, ratio, list(class_names or range(n_classes)))

    def to_json(self) -> dict:
        return {
            "overall_accuracy": self.overall_accuracy,
            "per_class_accuracy": {str(name): (None if np.isnan(a) else float(a))
                                   for name, a in zip(self.class_names, self.per_class_accuracy)},
            "confusion": self.confusion.tolist(),
            "class_names": [str(c) for c in self.class_names],
            "fisher_ratio": self.fisher_ratio,
        }


def evaluate_prepared(model: GestureModel, X, y, pooling: str | None = None) -> EvalResult:
    if len(y) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    feats = forward_features(model, X)
    predicted, _ = predict(model, X, pooling)
    return EvalResult.from_predictions(y, predicted, model.n_classes, fisher_ratio(feats, y), model.class_names)


def evaluate(model: GestureModel, dataset: Dataset, pooling: str | None = None) -> EvalResult:
    X, y = model.prepare_dataset(dataset)
    return evaluate_prepared(model, X, y, pooling)


# -- serialization --------------------------------------------------------

def _blocks(model: GestureModel) -> dict:
    out = dict(model.parameters())
    out["fisher.means"] = model.fisher.means
    return out


def save_model(model: GestureModel, path) -> None:
    """Magic, uint32 header length, JSON header, then little-endian float64 blocks."""
    blocks = _blocks(model)
    payload = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in blocks.values())
    header = {
        "format_version": FORMAT_VERSION,
        "cell_kind": model.cell_kind,
        "input_dim": model.input_dim,
        "hidden_dim": model.hidden_dim,
        "n_classes": model.n_classes,
        "pooling": model.pooling,
        "window": model.window,
        "length": model.length,
        "theta": model.fisher.theta,
        "delta": model.fisher.delta,
        "alpha": model.fisher.alpha,
        "class_names": [str(c) for c in model.class_names],
        "blocks": [[name, list(a.shape)] for name, a in blocks.items()],
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(head)))
        fh.write(head)
        fh.write(payload)


def load_model(path) -> GestureModel:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[: len(MAGIC)] != MAGIC:
        raise ModelFormatError(f"{path}: not a model file (bad magic)")
    pos = len(MAGIC)
    if len(raw) < pos + 4:
        raise ModelFormatError(f"{path}: truncated header")
    (head_len,) = struct.unpack("<I", raw[pos: pos + 4])
    pos += 4
    try:
        header = json.loads(raw[pos: pos + head_len].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelFormatError(f"{path}: corrupt header ({exc})") from None
    pos += head_len
    if header.get("format_version") != FORMAT_VERSION:
        raise ModelFormatError(f"{path}: format version {header.get('format_version')} "
                               f"is not supported (expected {FORMAT_VERSION})")
    payload = raw[pos:]
    expected = 8 * sum(int(np.prod(shape)) for _, shape in header["blocks"])
    if len(payload) != expected:
        raise ModelFormatError(f"{path}: payload is {len(payload)} bytes, header describes {expected}")
    if hashlib.sha256(payload).hexdigest() != header["payload_sha256"]:
        raise ModelFormatError(f"{path}: payload checksum mismatch")

    arrays, offset = {}, 0
    for name, shape in header["blocks"]:
        count = int(np.prod(shape))
        arrays[name] = np.frombuffer(payload, dtype="<f8", count=count, offset=offset).astype(np.float64).reshape(shape)
        offset += 8 * count

    params_cls = CELL_KINDS[header["cell_kind"]]
    fwd = params_cls(**{k[4:]: v for k, v in arrays.items() if k.startswith("fwd.")})
    bwd = params_cls(**{k[4:]: v for k, v in arrays.items() if k.startswith("bwd.")})
    clf = ClassifierParams(arrays["classifier.W"], arrays["classifier.b"])
    fisher = FisherState(arrays["fisher.means"], header["theta"], header["delta"], header["alpha"])
    return GestureModel(header["cell_kind"], fwd, bwd, clf, fisher, header["pooling"],
                        header["window"], header["length"], header["class_names"])
