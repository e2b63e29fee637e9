import math

import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import reference
from fishergesture.cells import (
    GruParams, GruState, LstmParams, LstmState, backward_bptt, encode_bidirectional, gru_step, lstm_step,
)
from fishergesture.gradcheck import numeric_gradient, relative_error

KINDS = {"lstm": LstmParams, "gru": GruParams}


def random_params(kind, n, h, rng, scale=0.5):
    p = KINDS[kind].zeros(n, h)
    for arr in p.arrays().values():
        arr[...] = rng.normal(0.0, scale, size=arr.shape)
    return p


def test_lstm_zero_params_fixed_point(rng):
    p = LstmParams.zeros(3, 4)
    s = lstm_step(p, rng.normal(size=3), LstmState.initial(4))
    npt.assert_array_equal(s.i, 0.5)
    npt.assert_array_equal(s.f, 0.5)
    npt.assert_array_equal(s.o, 0.5)
    npt.assert_array_equal(s.c, 0.0)
    npt.assert_array_equal(s.h, 0.0)


def test_lstm_scalar_open_gates():
    p = LstmParams.zeros(1, 1)
    p.b_i[:] = p.b_f[:] = p.b_o[:] = 50.0
    p.W_xc[:] = 1.0
    s = lstm_step(p, np.array([0.5]), LstmState.initial(1))
    # c = sigma(50) tanh(0.5), h = sigma(50) tanh(c), evaluated with math
    c = math.tanh(0.5) / (1 + math.exp(-50))
    npt.assert_allclose(s.c, [0.46211715726000974], atol=1e-4)
    npt.assert_allclose(s.h, [0.4318081805950961], atol=1e-4)
    npt.assert_allclose(s.h, [math.tanh(c) / (1 + math.exp(-50))], atol=1e-15)


@pytest.mark.parametrize("seed", range(3))
def test_lstm_step_matches_loop_oracle(seed):
    rng = np.random.default_rng(seed)
    p = random_params("lstm", 4, 3, rng)
    x, h, c = rng.normal(size=4), rng.normal(size=3) * 0.5, rng.normal(size=3)
    s = lstm_step(p, x, LstmState(h=h, c=c))
    h_ref, c_ref = reference.lstm_step(p, list(x), list(h), list(c))
    npt.assert_allclose(s.h, h_ref, rtol=0, atol=1e-14)
    npt.assert_allclose(s.c, c_ref, rtol=0, atol=1e-14)


def test_gru_closed_update_gate_copies_state(rng):
    p = random_params("gru", 3, 4, rng)
    p.b_z[:] = -50.0
    p.W_z[:] = p.U_z[:] = 0.0
    h0 = np.array([0.3, -0.7, 0.1, 0.9])
    s = gru_step(p, rng.normal(size=3), GruState(h=h0))
    npt.assert_allclose(s.h, h0, atol=1e-20)


def test_gru_open_update_gate(rng):
    p = GruParams.zeros(3, 4)
    p.b_z[:] = 50.0
    p.W[:] = rng.normal(size=(4, 3))
    p.b_h[:] = rng.normal(size=4)
    x = rng.normal(size=3)
    s = gru_step(p, x, GruState(h=np.array([0.5, -0.5, 0.2, 0.0])))
    npt.assert_allclose(s.h, np.tanh(p.W @ x + p.b_h), atol=1e-20)


@pytest.mark.parametrize("seed", range(3))
def test_gru_step_matches_loop_oracle(seed):
    rng = np.random.default_rng(seed)
    p = random_params("gru", 4, 3, rng)
    x, h = rng.normal(size=4), np.tanh(rng.normal(size=3))
    s = gru_step(p, x, GruState(h=h))
    npt.assert_allclose(s.h, reference.gru_step(p, list(x), list(h)), rtol=0, atol=1e-14)


def test_step_dimension_errors():
    with pytest.raises(ValueError):
        lstm_step(LstmParams.zeros(3, 2), np.zeros(4), LstmState.initial(2))
    with pytest.raises(ValueError):
        gru_step(GruParams.zeros(3, 2), np.zeros(3), GruState.initial(5))


@pytest.mark.parametrize("kind", ["lstm", "gru"])
def test_encoder_matches_loop_oracle(kind, rng):
    fwd, bwd = random_params(kind, 3, 3, rng), random_params(kind, 3, 3, rng)
    seq = rng.normal(size=(5, 3))
    out = encode_bidirectional(fwd, bwd, seq)
    assert out.features.shape == (5, 6)
    npt.assert_allclose(out.features, reference.encode(fwd, bwd, seq, kind), rtol=0, atol=1e-13)


@pytest.mark.parametrize("kind", ["lstm", "gru"])
def test_encoder_reversal_symmetry(kind, rng):
    fwd, bwd = random_params(kind, 3, 4, rng), random_params(kind, 3, 4, rng)
    seq = rng.normal(size=(6, 3))
    a = encode_bidirectional(fwd, bwd, seq).features
    b = encode_bidirectional(bwd, fwd, seq[::-1]).features
    npt.assert_array_equal(b[::-1], np.concatenate([a[:, 4:], a[:, :4]], axis=1))


def test_encoder_single_frame(rng):
    p = random_params("gru", 3, 2, rng)
    out = encode_bidirectional(p, p, rng.normal(size=(1, 3)))
    npt.assert_array_equal(out.features[0, :2], out.features[0, 2:])


def test_encoder_rejects_empty_and_wrong_channels(rng):
    p = random_params("lstm", 3, 2, rng)
    with pytest.raises(ValueError):
        encode_bidirectional(p, p, np.zeros((0, 3)))
    with pytest.raises(ValueError):
        encode_bidirectional(p, p, np.zeros((4, 2)))


def test_encoder_deterministic(rng):
    fwd, bwd = random_params("lstm", 3, 4, rng), random_params("lstm", 3, 4, rng)
    seq = rng.normal(size=(2, 9, 3))
    npt.assert_array_equal(encode_bidirectional(fwd, bwd, seq).features,
                           encode_bidirectional(fwd, bwd, seq).features)


def test_batched_encoder_equals_per_sequence(rng):
    fwd, bwd = random_params("gru", 3, 4, rng), random_params("gru", 3, 4, rng)
    seq = rng.normal(size=(3, 6, 3))
    batch = encode_bidirectional(fwd, bwd, seq).features
    for b in range(3):
        npt.assert_allclose(batch[b], encode_bidirectional(fwd, bwd, seq[b]).features, rtol=0, atol=1e-15)


@pytest.mark.parametrize("kind", ["lstm", "gru"])
def test_bptt_zero_upstream(kind, rng):
    fwd, bwd = random_params(kind, 3, 4, rng), random_params(kind, 3, 4, rng)
    out = encode_bidirectional(fwd, bwd, rng.normal(size=(2, 5, 3)))
    g_fwd, g_bwd, g_x = backward_bptt(out, np.zeros_like(out.features))
    for g in (g_fwd, g_bwd):
        for arr in g.arrays().values():
            assert not arr.any()
    assert not g_x.any()


@pytest.mark.parametrize("kind", ["lstm", "gru"])
def test_bptt_linear_in_upstream(kind, rng):
    fwd, bwd = random_params(kind, 3, 4, rng), random_params(kind, 3, 4, rng)
    out = encode_bidirectional(fwd, bwd, rng.normal(size=(2, 5, 3)))
    up = rng.normal(size=out.features.shape)
    g1 = backward_bptt(out, up)
    g2 = backward_bptt(out, 2.0 * up)
    for a, b in zip(g1[:2], g2[:2]):
        for name, arr in a.arrays().items():
            npt.assert_allclose(b.arrays()[name], 2.0 * arr, rtol=1e-13, atol=1e-15)


def test_bptt_length_mismatch(rng):
    p = random_params("gru", 3, 2, rng)
    out = encode_bidirectional(p, p, rng.normal(size=(5, 3)))
    with pytest.raises(ValueError):
        backward_bptt(out, np.zeros((4, 4)))


def _fd_check(kind, seed, H=4, N=3, T=7):
    rng = np.random.default_rng(seed)
    fwd, bwd = random_params(kind, N, H, rng), random_params(kind, N, H, rng)
    seq = rng.normal(size=(T, N))
    weights = rng.normal(size=(T, 2 * H))

    def objective():
        return float(np.sum(weights * encode_bidirectional(fwd, bwd, seq).features))

    g_fwd, g_bwd, g_x = backward_bptt(encode_bidirectional(fwd, bwd, seq), weights)
    worst = 0.0
    for params, grads in ((fwd, g_fwd), (bwd, g_bwd)):
        for name, arr in params.arrays().items():
            worst = max(worst, relative_error(grads.arrays()[name], numeric_gradient(objective, arr)))
    worst = max(worst, relative_error(g_x, numeric_gradient(objective, seq)))
    return worst


@pytest.mark.parametrize("kind", ["lstm", "gru"])
def test_bptt_matches_finite_differences(kind):
    worst = max(_fd_check(kind, seed) for seed in range(10))
    assert worst <= 1e-4


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1), st.sampled_from(["lstm", "gru"]))
def test_gates_and_hidden_bounded(seed, kind):
    rng = np.random.default_rng(seed)
    p = random_params(kind, 3, 5, rng, scale=1.0)
    seq = rng.normal(0, 3.0, size=(12, 3))
    out = encode_bidirectional(p, p, seq)
    assert np.all(np.abs(out.features) < 1.0)
    for s in out.fwd_states:
        gates = (s.i, s.f, s.o) if kind == "lstm" else (s.z, s.r)
        for g in gates:
            assert np.all((g > 0.0) & (g < 1.0))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_gru_hidden_stays_in_open_interval(seed):
    rng = np.random.default_rng(seed)
    p = random_params("gru", 2, 3, rng, scale=1.5)
    state = GruState(h=np.tanh(rng.normal(size=3)))
    for _ in range(20):
        state = gru_step(p, rng.normal(0, 2.0, size=2), state)
        assert np.all(np.abs(state.h) < 1.0)


def test_init_follows_documented_scheme():
    rng = np.random.default_rng(0)
    p = LstmParams.init(3, 16, rng)
    bound = 1 / 4
    for name in ("W_xi", "W_hc", "W_ho"):
        arr = getattr(p, name)
        assert np.all(np.abs(arr) <= bound) and arr.std() > 0
    npt.assert_array_equal(p.b_f, 1.0)
    for name in ("w_ci", "w_cf", "w_co", "b_i", "b_c", "b_o"):
        assert not getattr(p, name).any()
    g = GruParams.init(3, 16, rng)
    assert not g.b_z.any() and np.all(np.abs(g.U) <= bound)
