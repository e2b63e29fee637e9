"""Gesture datasets: container types, CSV storage, stratified splitting and a
synthetic generator that draws digit strokes in the air.
"""

import csv
import json
import os
import re
from dataclasses import dataclass, field

import numpy as np

from .preprocess import moving_average

SAMPLE_PERIOD = 0.005
CHANNEL_NAMES = ("ax", "ay", "az", "gx", "gy", "gz")
MANIFEST = "manifest.json"


class DataFormatError(ValueError):
    """A dataset file or directory does not match the expected layout."""

    def __init__(self, message: str, path=None, line: int | None = None):
        where = ""
        if path is not None:
            where = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(where + message)
        self.path = path
        self.line = line


@dataclass
class SequenceSample:
    values: np.ndarray  # (T, N), rows are timesteps
    label: int
    source_id: str = ""

    @property
    def length(self) -> int:
        return self.values.shape[0]

    @property
    def channels(self) -> int:
        return self.values.shape[1]


@dataclass
class Dataset:
    samples: list
    n_classes: int
    class_names: list = field(default_factory=list)

    def __post_init__(self):
        if not self.class_names:
            self.class_names = [str(j) for j in range(self.n_classes)]
        if len(self.class_names) != self.n_classes:
            raise ValueError(f"{len(self.class_names)} class names for {self.n_classes} classes")
        for s in self.samples:
            if not 0 <= s.label < self.n_classes:
                raise ValueError(f"sample {s.source_id!r} has label {s.label} outside [0, {self.n_classes})")

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def labels(self) -> np.ndarray:
        return np.array([s.label for s in self.samples], dtype=np.intp)

    @property
    def channels(self) -> int | None:
        return self.samples[0].channels if self.samples else None

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.n_classes)

    def subset(self, indices) -> "Dataset":
        return Dataset([self.samples[i] for i in indices], self.n_classes, list(self.class_names))


# Digit strokes in a unit box, pen-down the whole way.
TEMPLATES = {
    "1": [(0.25, 0.75), (0.35, 0.82), (0.45, 0.92), (0.55, 1.0), (0.55, 0.8), (0.55, 0.6),
          (0.55, 0.4), (0.55, 0.2), (0.55, 0.0)],
    "2": [(0.1, 0.75), (0.2, 0.92), (0.4, 1.0), (0.6, 0.98), (0.78, 0.85), (0.8, 0.68),
          (0.68, 0.5), (0.45, 0.3), (0.2, 0.1), (0.05, 0.0), (0.35, 0.0), (0.65, 0.0), (0.9, 0.0)],
    "3": [(0.1, 0.9), (0.35, 1.0), (0.65, 0.98), (0.8, 0.82), (0.7, 0.62), (0.45, 0.52),
          (0.72, 0.44), (0.85, 0.25), (0.75, 0.06), (0.45, 0.0), (0.12, 0.08)],
    "4": [(0.65, 1.0), (0.5, 0.8), (0.35, 0.6), (0.2, 0.4), (0.1, 0.3), (0.35, 0.3),
          (0.6, 0.3), (0.9, 0.3), (0.7, 0.45), (0.7, 0.7), (0.7, 0.45), (0.7, 0.2), (0.7, 0.0)],
}

BASE_LENGTH = 160  # samples for one unjittered gesture (0.8 s at 200 Hz)
WARP_GAIN = 3.0  # jitter 0.2 -> warp up to 0.6
TILT_GAIN = 2.0  # jitter 0.2 -> tilt up to 0.4 rad
IDLE_GAIN = 2.0  # jitter 0.2 -> up to 40% extra idle samples at each end


@dataclass
class SynthConfig:
    n_classes: int = 4
    samples_per_class: int = 150
    base_speed_jitter: float = 0.2
    amplitude_jitter: float = 0.2
    noise_sigma: float = 0.05
    seed: int = 0
    channels: int = 6

    def __post_init__(self):
        if not 1 <= self.n_classes <= len(TEMPLATES):
            raise ValueError(f"n_classes must be in [1, {len(TEMPLATES)}], got {self.n_classes}")
        if self.samples_per_class < 1:
            raise ValueError("samples_per_class must be >= 1")
        for name in ("base_speed_jitter", "amplitude_jitter"):
            if not 0.0 <= getattr(self, name) <= 0.5:
                raise ValueError(f"{name} must be in [0, 0.5], got {getattr(self, name)}")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if self.channels not in (3, 6):
            raise ValueError("channels must be 3 or 6")


def _polyline_at(vertices, u):
    """Points at arclength fractions ``u`` along the polyline."""
    pts = np.asarray(vertices, dtype=np.float64)
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)]) / seg.sum()
    return np.column_stack([np.interp(u, cum, pts[:, 0]), np.interp(u, cum, pts[:, 1])])


def _render(template, length, warp, scale, tilt, idle, rng_noise, noise_sigma, channels):
    tau = np.linspace(0.0, 1.0, length)
    # monotone time warp (|warp| < 1): uneven pen speed within one gesture
    u = tau + warp * np.sin(2.0 * np.pi * tau) / (2.0 * np.pi)
    # hand held still before and after the stroke
    u = np.concatenate([np.zeros(idle[0]), u, np.ones(idle[1])])
    tau = np.linspace(0.0, 1.0, u.size)
    rot = np.array([[np.cos(tilt), -np.sin(tilt)], [np.sin(tilt), np.cos(tilt)]])
    pos = (scale * _polyline_at(template, u)) @ rot.T
    width = max(3, (length // 12) | 1)
    for _ in range(3):
        pos = moving_average(pos, width)
    z = 0.03 * np.sin(np.pi * tau)

    per_sec = float(length)
    vel = np.gradient(pos, axis=0) * per_sec
    acc = np.diff(pos, n=2, axis=0, prepend=pos[:1], append=pos[-1:]) * per_sec**2
    acc_z = np.diff(z, n=2, prepend=z[:1], append=z[-1:]) * per_sec**2
    accel = np.column_stack([acc, acc_z]) / 20.0

    cols = [accel]
    if channels == 6:
        # device tilts with the hand's velocity and yaws with horizontal position
        orient = np.column_stack([0.5 * vel[:, 1], -0.5 * vel[:, 0], 2.0 * pos[:, 0]])
        gyro = np.diff(orient, axis=0, prepend=orient[:1]) * per_sec / 10.0
        cols.append(gyro)
    values = np.hstack(cols)
    if noise_sigma > 0:
        values = values + rng_noise.normal(0.0, noise_sigma, size=values.shape)
    return values


def generate_synthetic(cfg: SynthConfig) -> Dataset:
    rng = np.random.default_rng(cfg.seed)
    names = list(TEMPLATES)[: cfg.n_classes]
    samples = []
    for label, name in enumerate(names):
        for k in range(cfg.samples_per_class):
            speed = 1.0 + rng.uniform(-cfg.base_speed_jitter, cfg.base_speed_jitter)
            scale = 1.0 + rng.uniform(-cfg.amplitude_jitter, cfg.amplitude_jitter, size=2)
            warp = rng.uniform(-WARP_GAIN, WARP_GAIN) * cfg.base_speed_jitter
            tilt = rng.uniform(-TILT_GAIN, TILT_GAIN) * cfg.amplitude_jitter
            length = int(round(BASE_LENGTH / speed))
            idle = rng.integers(0, int(IDLE_GAIN * cfg.base_speed_jitter * length) + 1, size=2)
            values = _render(TEMPLATES[name], length, warp, scale, tilt, idle, rng, cfg.noise_sigma, cfg.channels)
            samples.append(SequenceSample(values, label, f"synth-{name}-{k:04d}"))
    return Dataset(samples, cfg.n_classes, names)


def split(dataset: Dataset, test_fraction: float, seed: int):
    """Stratified random split into (train, test)."""
    if not 0.0 < test_fraction < 1.0:
        raise ValueError(f"test_fraction must be in (0, 1), got {test_fraction}")
    rng = np.random.default_rng(seed)
    labels = dataset.labels
    train_idx, test_idx = [], []
    for j in range(dataset.n_classes):
        members = np.flatnonzero(labels == j)
        if members.size < 2:
            raise ValueError(f"class {dataset.class_names[j]!r} has {members.size} samples; need at least 2 to split")
        members = rng.permutation(members)
        n_test = min(max(int(round(test_fraction * members.size)), 1), members.size - 1)
        test_idx.extend(members[:n_test])
        train_idx.extend(members[n_test:])
    return dataset.subset(sorted(train_idx)), dataset.subset(sorted(test_idx))


def _safe_name(text: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]", "_", text)


def save_dataset(dataset: Dataset, root, sample_period: float = SAMPLE_PERIOD) -> None:
    """Write ``<root>/<class_name>/<sample_id>.csv`` files plus a manifest."""
    os.makedirs(root, exist_ok=True)
    for name in dataset.class_names:
        os.makedirs(os.path.join(root, _safe_name(name)), exist_ok=True)
    for idx, s in enumerate(dataset.samples):
        sample_id = _safe_name(s.source_id) if s.source_id else f"{idx:06d}"
        path = os.path.join(root, _safe_name(dataset.class_names[s.label]), sample_id + ".csv")
        header = ["t", *CHANNEL_NAMES[: s.channels]]
        with open(path, "w", newline="") as fh:
            fh.write(",".join(header) + "\n")
            for t, row in enumerate(s.values):
                fh.write(",".join(format(v, ".17g") for v in (t * sample_period, *row)) + "\n")
    manifest = {
        "format_version": 1,
        "class_names": list(dataset.class_names),
        "counts": {name: int(c) for name, c in zip(dataset.class_names, dataset.class_counts())},
        "channels": dataset.channels,
        "sample_period": sample_period,
    }
    with open(os.path.join(root, MANIFEST), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_sample_csv(path, channels: int | None = None) -> np.ndarray:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DataFormatError("empty file", path, 1)
        header = [h.strip() for h in header]
        n = len(header) - 1
        if n not in (3, 6) or header != ["t", *CHANNEL_NAMES[:n]]:
            raise DataFormatError(f"unexpected header {','.join(header)!r}", path, 1)
        if channels is not None and n != channels:
            raise DataFormatError(f"header declares {n} channels, expected {channels}", path, 1)
        rows = []
        for row in reader:
            line = reader.line_num
            if not row:
                continue
            if len(row) != n + 1:
                raise DataFormatError(f"expected {n + 1} columns, found {len(row)}", path, line)
            try:
                values = [float(v) for v in row[1:]]
            except ValueError as exc:
                raise DataFormatError(f"non-numeric value ({exc})", path, line) from None
            if not all(np.isfinite(values)):
                raise DataFormatError("non-finite value", path, line)
            rows.append(values)
    if not rows:
        raise DataFormatError("no data rows", path)
    return np.array(rows, dtype=np.float64)


def load_directory(path, channels: int | None = None, class_names=None) -> Dataset:
    """Load ``<path>/<class_name>/*.csv``.

    Class order comes from ``class_names``, else the manifest, else the sorted
    subdirectory names. A subdirectory outside a known class list is an error.
    """
    if not os.path.isdir(path):
        raise DataFormatError("not a directory", path)
    subdirs = sorted(d for d in os.listdir(path) if os.path.isdir(os.path.join(path, d)))
    if class_names is None:
        manifest_path = os.path.join(path, MANIFEST)
        if os.path.exists(manifest_path):
            with open(manifest_path) as fh:
                try:
                    class_names = json.load(fh)["class_names"]
                except (json.JSONDecodeError, KeyError) as exc:
                    raise DataFormatError(f"bad manifest ({exc})", manifest_path) from None
        else:
            class_names = subdirs
    class_names = list(class_names)
    dir_to_label = {_safe_name(name): j for j, name in enumerate(class_names)}
    unknown = [d for d in subdirs if d not in dir_to_label]
    if unknown:
        raise DataFormatError(f"unknown class directories {unknown}", path)

    samples = []
    for d in subdirs:
        class_dir = os.path.join(path, d)
        for fname in sorted(os.listdir(class_dir)):
            if not fname.endswith(".csv"):
                continue
            values = read_sample_csv(os.path.join(class_dir, fname), channels)
            samples.append(SequenceSample(values, dir_to_label[d], fname[:-4]))
    if channels is None and samples:
        widths = {s.channels for s in samples}
        if len(widths) > 1:
            raise DataFormatError(f"mixed channel counts {sorted(widths)}", path)
    return Dataset(samples, len(class_names), class_names)
