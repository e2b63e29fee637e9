"""Small dense kernels shared by the cells and losses.

Everything is float64 numpy. Functions accept a single vector or a batch
stacked along the leading axis.
"""

import numpy as np


def matvec(m: np.ndarray, v: np.ndarray) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if m.ndim != 2 or v.ndim != 1:
        raise ValueError(f"matvec expects a matrix and a vector, got shapes {m.shape} and {v.shape}")
    if m.shape[1] != v.shape[0]:
        raise ValueError(f"dimension mismatch: matrix has {m.shape[1]} columns, vector has length {v.shape[0]}")
    return m @ v


def sigmoid(v):
    v = np.asarray(v, dtype=np.float64)
    # exp of a non-positive argument only, so no overflow for either sign
    e = np.exp(-np.abs(v))
    return np.where(v >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def tanh_vec(v):
    return np.tanh(np.asarray(v, dtype=np.float64))


def softmax(v, axis: int = -1):
    v = np.asarray(v, dtype=np.float64)
    shifted = v - np.max(v, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


def log_softmax(v, axis: int = -1):
    v = np.asarray(v, dtype=np.float64)
    shifted = v - np.max(v, axis=axis, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))
