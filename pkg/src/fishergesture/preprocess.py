"""Signal conditioning: moving-average smoothing, min-max amplitude
normalization and fixed-length resampling through a natural cubic spline.

Signals are (T, N) arrays with time along the rows; 1-D input is treated
as a single channel.
"""

import numpy as np

DEFAULT_WINDOW = 5
DEFAULT_LENGTH = 1000


class ConstantChannelError(ValueError):
    def __init__(self, channel: int):
        super().__init__(f"channel {channel} is constant; min-max normalization is undefined")
        self.channel = channel


def _as_signal(sig):
    arr = np.asarray(sig, dtype=np.float64)
    if arr.ndim == 1:
        return arr[:, None], True
    if arr.ndim != 2:
        raise ValueError(f"signal must be (T, N), got shape {arr.shape}")
    return arr, False


def _restore(arr, squeeze):
    return arr[:, 0] if squeeze else arr


def moving_average(sig, window: int = DEFAULT_WINDOW):
    """Centered moving average; at the edges only the in-range samples are averaged."""
    if window < 1 or window % 2 == 0:
        raise ValueError(f"window must be an odd positive integer, got {window}")
    x, squeeze = _as_signal(sig)
    T = x.shape[0]
    half = window // 2
    csum = np.vstack([np.zeros((1, x.shape[1])), np.cumsum(x, axis=0)])
    idx = np.arange(T)
    lo = np.maximum(idx - half, 0)
    hi = np.minimum(idx + half + 1, T)
    out = (csum[hi] - csum[lo]) / (hi - lo)[:, None]
    if window == 1:
        out = x.copy()
    return _restore(out, squeeze)


def normalize_amplitude(sig):
    x, squeeze = _as_signal(sig)
    lo = x.min(axis=0)
    hi = x.max(axis=0)
    for ch in range(x.shape[1]):
        if not hi[ch] > lo[ch]:
            raise ConstantChannelError(ch)
    return _restore((x - lo) / (hi - lo), squeeze)


def natural_spline_second_derivs(y):
    """Second derivatives at unit-spaced knots for a natural spline, per column.

    Solves the (1, 4, 1) tridiagonal system with the Thomas algorithm.
    """
    n = y.shape[0]
    m = np.zeros_like(y)
    if n < 3:
        return m
    rhs = 6.0 * (y[2:] - 2.0 * y[1:-1] + y[:-2])
    k = n - 2
    c = np.empty(k)
    d = np.empty_like(rhs)
    c[0] = 1.0 / 4.0
    d[0] = rhs[0] / 4.0
    for i in range(1, k):
        denom = 4.0 - c[i - 1]
        c[i] = 1.0 / denom
        d[i] = (rhs[i] - d[i - 1]) / denom
    for i in range(k - 2, -1, -1):
        d[i] -= c[i] * d[i + 1]
    m[1:-1] = d
    return m


def eval_natural_spline(y, m, query):
    """Evaluate the spline with knot values ``y`` and second derivatives ``m`` at ``query``."""
    n = y.shape[0]
    k = np.clip(np.floor(query).astype(np.intp), 0, n - 2)
    u = (query - k)[:, None]
    v = 1.0 - u
    return (v * y[k] + u * y[k + 1]
            + ((v**3 - v) * m[k] + (u**3 - u) * m[k + 1]) / 6.0)


def resample_spline(sig, length: int):
    """Resample every channel to ``length`` points spanning the original time range."""
    if length < 2:
        raise ValueError(f"target length must be >= 2, got {length}")
    y, squeeze = _as_signal(sig)
    if y.shape[0] < 2:
        raise ValueError("need at least 2 samples to fit a spline")
    m = natural_spline_second_derivs(y)
    query = np.linspace(0.0, y.shape[0] - 1.0, length)
    return _restore(eval_natural_spline(y, m, query), squeeze)


def preprocess_pipeline(sig, window: int = DEFAULT_WINDOW, length: int = DEFAULT_LENGTH):
    """Smooth, min-max normalize, then resample to a (length, N) model input."""
    return resample_spline(normalize_amplitude(moving_average(sig, window)), length)
