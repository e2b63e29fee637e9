"""LSTM (with peepholes) and GRU cells, and the bidirectional encoder.

Forward steps accept a single frame of shape (N,) or a batch of shape (B, N).
The backward helpers and the encoder always work on batches.
"""

from dataclasses import dataclass, field, fields

import numpy as np

from .linalg import sigmoid


class _Params:
    """Shared plumbing for parameter containers: iteration, copies, zeros."""

    def arrays(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def zeros_like(self):
        return type(self)(**{k: np.zeros_like(v) for k, v in self.arrays().items()})

    def copy(self):
        return type(self)(**{k: v.copy() for k, v in self.arrays().items()})

    def scale(self, factor: float):
        return type(self)(**{k: v * factor for k, v in self.arrays().items()})

    @property
    def input_dim(self) -> int:
        return self._input_matrix().shape[1]

    @property
    def hidden_dim(self) -> int:
        return self._input_matrix().shape[0]

    def validate(self) -> None:
        n, h = self.input_dim, self.hidden_dim
        for name, arr in self.arrays().items():
            expected = self._expected_shape(name, n, h)
            if arr.shape != expected:
                raise ValueError(f"{type(self).__name__}.{name} has shape {arr.shape}, expected {expected}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{type(self).__name__}.{name} contains non-finite values")


@dataclass
class LstmParams(_Params):
    W_xi: np.ndarray
    W_hi: np.ndarray
    W_xf: np.ndarray
    W_hf: np.ndarray
    W_xc: np.ndarray
    W_hc: np.ndarray
    W_xo: np.ndarray
    W_ho: np.ndarray
    # peepholes are diagonal matrices, stored as their diagonals
    w_ci: np.ndarray
    w_cf: np.ndarray
    w_co: np.ndarray
    b_i: np.ndarray
    b_f: np.ndarray
    b_c: np.ndarray
    b_o: np.ndarray

    def _input_matrix(self):
        return self.W_xi

    @staticmethod
    def _expected_shape(name, n, h):
        if name.startswith("W_x"):
            return (h, n)
        if name.startswith("W_h"):
            return (h, h)
        return (h,)

    @classmethod
    def zeros(cls, input_dim: int, hidden_dim: int) -> "LstmParams":
        kw = {f.name: np.zeros(cls._expected_shape(f.name, input_dim, hidden_dim)) for f in fields(cls)}
        return cls(**kw)

    @classmethod
    def init(cls, input_dim: int, hidden_dim: int, rng: np.random.Generator) -> "LstmParams":
        p = cls.zeros(input_dim, hidden_dim)
        bound = 1.0 / np.sqrt(hidden_dim)
        for name, arr in p.arrays().items():
            if name.startswith("W_"):
                arr[...] = rng.uniform(-bound, bound, size=arr.shape)
        p.b_f[...] = 1.0
        return p


@dataclass
class GruParams(_Params):
    W_z: np.ndarray
    W_r: np.ndarray
    W: np.ndarray
    U_z: np.ndarray
    U_r: np.ndarray
    U: np.ndarray
    b_z: np.ndarray
    b_r: np.ndarray
    b_h: np.ndarray

    def _input_matrix(self):
        return self.W

    @staticmethod
    def _expected_shape(name, n, h):
        if name.startswith("W"):
            return (h, n)
        if name.startswith("U"):
            return (h, h)
        return (h,)

    @classmethod
    def zeros(cls, input_dim: int, hidden_dim: int) -> "GruParams":
        kw = {f.name: np.zeros(cls._expected_shape(f.name, input_dim, hidden_dim)) for f in fields(cls)}
        return cls(**kw)

    @classmethod
    def init(cls, input_dim: int, hidden_dim: int, rng: np.random.Generator) -> "GruParams":
        p = cls.zeros(input_dim, hidden_dim)
        bound = 1.0 / np.sqrt(hidden_dim)
        for name, arr in p.arrays().items():
            if not name.startswith("b_"):
                arr[...] = rng.uniform(-bound, bound, size=arr.shape)
        return p


@dataclass
class LstmState:
    h: np.ndarray
    c: np.ndarray
    # caches for the backward pass; None on an initial state
    x: np.ndarray = None
    h_prev: np.ndarray = None
    c_prev: np.ndarray = None
    i: np.ndarray = None
    f: np.ndarray = None
    o: np.ndarray = None
    g: np.ndarray = None
    tanh_c: np.ndarray = None

    @classmethod
    def initial(cls, hidden_dim: int, batch: int | None = None) -> "LstmState":
        shape = (hidden_dim,) if batch is None else (batch, hidden_dim)
        return cls(h=np.zeros(shape), c=np.zeros(shape))


@dataclass
class GruState:
    h: np.ndarray
    x: np.ndarray = None
    h_prev: np.ndarray = None
    z: np.ndarray = None
    r: np.ndarray = None
    h_tilde: np.ndarray = None

    @classmethod
    def initial(cls, hidden_dim: int, batch: int | None = None) -> "GruState":
        shape = (hidden_dim,) if batch is None else (batch, hidden_dim)
        return cls(h=np.zeros(shape))


def _check_step_dims(p, x, h):
    if x.shape[-1] != p.input_dim:
        raise ValueError(f"input has {x.shape[-1]} channels, cell expects {p.input_dim}")
    if h.shape[-1] != p.hidden_dim:
        raise ValueError(f"state has size {h.shape[-1]}, cell hidden size is {p.hidden_dim}")


def lstm_step(p: LstmParams, x_t, prev: LstmState) -> LstmState:
    x_t = np.asarray(x_t, dtype=np.float64)
    h0, c0 = prev.h, prev.c
    _check_step_dims(p, x_t, h0)
    i = sigmoid(x_t @ p.W_xi.T + h0 @ p.W_hi.T + c0 * p.w_ci + p.b_i)
    f = sigmoid(x_t @ p.W_xf.T + h0 @ p.W_hf.T + c0 * p.w_cf + p.b_f)
    g = np.tanh(x_t @ p.W_xc.T + h0 @ p.W_hc.T + p.b_c)
    c = f * c0 + i * g
    o = sigmoid(x_t @ p.W_xo.T + h0 @ p.W_ho.T + c * p.w_co + p.b_o)
    tanh_c = np.tanh(c)
    return LstmState(h=o * tanh_c, c=c, x=x_t, h_prev=h0, c_prev=c0, i=i, f=f, o=o, g=g, tanh_c=tanh_c)


def lstm_step_backward(p: LstmParams, s: LstmState, dh, dc_next, grads: LstmParams):
    """Backprop one batched step. Accumulates into ``grads``; returns (dx, dh_prev, dc_prev)."""
    da_o = dh * s.tanh_c * s.o * (1.0 - s.o)
    dc = dc_next + dh * s.o * (1.0 - s.tanh_c**2) + da_o * p.w_co
    da_i = dc * s.g * s.i * (1.0 - s.i)
    da_f = dc * s.c_prev * s.f * (1.0 - s.f)
    da_g = dc * s.i * (1.0 - s.g**2)

    grads.W_xi += da_i.T @ s.x
    grads.W_xf += da_f.T @ s.x
    grads.W_xc += da_g.T @ s.x
    grads.W_xo += da_o.T @ s.x
    grads.W_hi += da_i.T @ s.h_prev
    grads.W_hf += da_f.T @ s.h_prev
    grads.W_hc += da_g.T @ s.h_prev
    grads.W_ho += da_o.T @ s.h_prev
    grads.w_ci += np.sum(da_i * s.c_prev, axis=0)
    grads.w_cf += np.sum(da_f * s.c_prev, axis=0)
    grads.w_co += np.sum(da_o * s.c, axis=0)
    grads.b_i += np.sum(da_i, axis=0)
    grads.b_f += np.sum(da_f, axis=0)
    grads.b_c += np.sum(da_g, axis=0)
    grads.b_o += np.sum(da_o, axis=0)

    dx = da_i @ p.W_xi + da_f @ p.W_xf + da_g @ p.W_xc + da_o @ p.W_xo
    dh_prev = da_i @ p.W_hi + da_f @ p.W_hf + da_g @ p.W_hc + da_o @ p.W_ho
    dc_prev = dc * s.f + da_i * p.w_ci + da_f * p.w_cf
    return dx, dh_prev, dc_prev


def gru_step(p: GruParams, x_t, prev: GruState) -> GruState:
    x_t = np.asarray(x_t, dtype=np.float64)
    h0 = prev.h
    _check_step_dims(p, x_t, h0)
    z = sigmoid(x_t @ p.W_z.T + h0 @ p.U_z.T + p.b_z)
    r = sigmoid(x_t @ p.W_r.T + h0 @ p.U_r.T + p.b_r)
    h_tilde = np.tanh(x_t @ p.W.T + (r * h0) @ p.U.T + p.b_h)
    h = (1.0 - z) * h0 + z * h_tilde
    return GruState(h=h, x=x_t, h_prev=h0, z=z, r=r, h_tilde=h_tilde)


def gru_step_backward(p: GruParams, s: GruState, dh, grads: GruParams):
    """Backprop one batched step. Accumulates into ``grads``; returns (dx, dh_prev)."""
    da_z = dh * (s.h_tilde - s.h_prev) * s.z * (1.0 - s.z)
    da_h = dh * s.z * (1.0 - s.h_tilde**2)
    rh = s.r * s.h_prev
    d_rh = da_h @ p.U
    da_r = d_rh * s.h_prev * s.r * (1.0 - s.r)

    grads.W_z += da_z.T @ s.x
    grads.W_r += da_r.T @ s.x
    grads.W += da_h.T @ s.x
    grads.U_z += da_z.T @ s.h_prev
    grads.U_r += da_r.T @ s.h_prev
    grads.U += da_h.T @ rh
    grads.b_z += np.sum(da_z, axis=0)
    grads.b_r += np.sum(da_r, axis=0)
    grads.b_h += np.sum(da_h, axis=0)

    dx = da_z @ p.W_z + da_r @ p.W_r + da_h @ p.W
    dh_prev = dh * (1.0 - s.z) + d_rh * s.r + da_z @ p.U_z + da_r @ p.U_r
    return dx, dh_prev


def _step(p, x, state):
    return lstm_step(p, x, state) if isinstance(p, LstmParams) else gru_step(p, x, state)


def _initial(p, batch):
    if isinstance(p, LstmParams):
        return LstmState.initial(p.hidden_dim, batch)
    return GruState.initial(p.hidden_dim, batch)


@dataclass
class EncoderOutput:
    """Per-step bidirectional features plus everything BPTT needs.

    ``features`` has shape (B, T, 2H); the first H columns are the forward
    direction at step t, the last H the backward direction at step t.
    """

    features: np.ndarray
    fwd_params: object
    bwd_params: object
    fwd_states: list = field(repr=False)
    bwd_states: list = field(repr=False)  # bwd_states[k] consumed frame T-1-k
    batched: bool = True

    @property
    def length(self) -> int:
        return self.features.shape[1]


def _run_direction(p, seq):
    state = _initial(p, seq.shape[0])
    states = []
    for t in range(seq.shape[1]):
        state = _step(p, seq[:, t, :], state)
        states.append(state)
    return states


def encode_bidirectional(fwd_params, bwd_params, seq) -> EncoderOutput:
    """Run both directions from zero state over ``seq`` of shape (T, N) or (B, T, N)."""
    seq = np.asarray(seq, dtype=np.float64)
    batched = seq.ndim == 3
    if not batched:
        seq = seq[None]
    if seq.ndim != 3 or seq.shape[1] == 0:
        raise ValueError("encode_bidirectional needs a nonempty sequence")
    if type(fwd_params) is not type(bwd_params):
        raise TypeError("forward and backward cells must be the same kind")
    if seq.shape[2] != fwd_params.input_dim or seq.shape[2] != bwd_params.input_dim:
        raise ValueError(f"sequence has {seq.shape[2]} channels, cells expect {fwd_params.input_dim}")

    fwd_states = _run_direction(fwd_params, seq)
    bwd_states = _run_direction(bwd_params, seq[:, ::-1, :])
    h_fwd = np.stack([s.h for s in fwd_states], axis=1)
    h_bwd = np.stack([s.h for s in bwd_states[::-1]], axis=1)
    features = np.concatenate([h_fwd, h_bwd], axis=2)
    out = EncoderOutput(features, fwd_params, bwd_params, fwd_states, bwd_states, batched)
    if not batched:
        out.features = features[0]
    return out


def _backward_direction(p, states, dh_seq, grads):
    """dh_seq[k] is the upstream gradient on the hidden state of processing step k."""
    steps = len(states)
    batch, hidden = dh_seq.shape[1], p.hidden_dim
    dx_seq = np.zeros((steps, batch, p.input_dim))
    dh_next = np.zeros((batch, hidden))
    if isinstance(p, LstmParams):
        dc_next = np.zeros((batch, hidden))
        for k in range(steps - 1, -1, -1):
            dx, dh_next, dc_next = lstm_step_backward(p, states[k], dh_seq[k] + dh_next, dc_next, grads)
            dx_seq[k] = dx
    else:
        for k in range(steps - 1, -1, -1):
            dx, dh_next = gru_step_backward(p, states[k], dh_seq[k] + dh_next, grads)
            dx_seq[k] = dx
    return dx_seq


def backward_bptt(cache: EncoderOutput, grad_f):
    """Full BPTT through both directions.

    ``grad_f`` matches ``cache.features`` in shape. Returns
    (fwd_grads, bwd_grads, grad_input), gradients summed over batch and time.
    """
    grad_f = np.asarray(grad_f, dtype=np.float64)
    if not cache.batched:
        grad_f = grad_f[None]
    if grad_f.ndim != 3 or grad_f.shape[1] != len(cache.fwd_states):
        raise ValueError(f"gradient covers {grad_f.shape[1] if grad_f.ndim == 3 else '?'} steps, "
                         f"encoder ran {len(cache.fwd_states)}")
    hidden = cache.fwd_params.hidden_dim
    if grad_f.shape[2] != 2 * hidden:
        raise ValueError(f"gradient feature size {grad_f.shape[2]} != {2 * hidden}")

    g_fwd = cache.fwd_params.zeros_like()
    g_bwd = cache.bwd_params.zeros_like()
    # time-major views; the backward direction processed frames in reverse
    dh_fwd = np.ascontiguousarray(grad_f[:, :, :hidden].transpose(1, 0, 2))
    dh_bwd = np.ascontiguousarray(grad_f[:, ::-1, hidden:].transpose(1, 0, 2))
    dx_fwd = _backward_direction(cache.fwd_params, cache.fwd_states, dh_fwd, g_fwd)
    dx_bwd = _backward_direction(cache.bwd_params, cache.bwd_states, dh_bwd, g_bwd)
    grad_x = (dx_fwd + dx_bwd[::-1]).transpose(1, 0, 2)
    if not cache.batched:
        grad_x = grad_x[0]
    return g_fwd, g_bwd, grad_x
