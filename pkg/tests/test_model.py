import numpy as np
import numpy.testing as npt
import pytest

import reference
from fishergesture.model import (
    EvalResult, GestureModel, ModelFormatError, _vote, classify, evaluate_prepared, fisher_ratio,
    forward_features, load_model, predict, save_model, step_features,
)


def random_model(kind="gru", N=3, H=4, n=3, seed=0, scale=0.5, **kw):
    model = GestureModel.create(kind, N, H, n, seed=seed, length=20, **kw)
    rng = np.random.default_rng(seed + 100)
    for arr in model.parameters().values():
        arr[...] = rng.normal(0.0, scale, size=arr.shape)
    model.fisher.means[...] = rng.normal(size=model.fisher.means.shape)
    return model


@pytest.mark.parametrize("kind", ["lstm", "gru"])
def test_single_frame_pooled_equals_step(kind, rng):
    model = random_model(kind)
    x = rng.normal(size=(1, 3))
    npt.assert_array_equal(forward_features(model, x), step_features(model, x)[0])


def test_zero_parameters_give_zero_features(rng):
    model = GestureModel.create("lstm", 3, 4, 2)
    for arr in model.parameters().values():
        arr[...] = 0.0
    out = forward_features(model, rng.normal(size=(9, 3)))
    npt.assert_array_equal(out, np.zeros(8))


@pytest.mark.parametrize("kind", ["lstm", "gru"])
def test_pooled_matches_loop_oracle(kind, rng):
    model = random_model(kind)
    x = rng.normal(size=(6, 3))
    expected = reference.pooled(model.fwd, model.bwd, x, kind)
    npt.assert_allclose(forward_features(model, x), expected, rtol=0, atol=1e-14)


def test_vote_tie_breaks():
    # two steps, one vote each; equal mass -> lowest index
    label, post = _vote(np.array([[1.0, 0.0], [0.0, 1.0]]))
    assert label == 0
    npt.assert_allclose(post, [0.5, 0.5], atol=1e-15)
    assert _vote(np.array([[2.0, 0.0], [0.0, 1.0]]))[0] == 0
    assert _vote(np.array([[1.0, 0.0], [0.0, 2.0]]))[0] == 1


def test_vote_with_zero_classifier(rng):
    model = random_model(n=2)
    model.classifier.W[...] = 0.0
    model.classifier.b[...] = 0.0
    label, post = classify(model, rng.normal(size=(7, 3)), pooling="per_step_vote")
    assert label == 0
    npt.assert_allclose(post, [0.5, 0.5], atol=1e-15)


def test_vote_all_steps_agree(rng):
    model = random_model(n=3)
    model.classifier.W[...] = 0.0
    model.classifier.b[...] = [0.0, 5.0, 0.0]
    labels, _ = predict(model, rng.normal(size=(4, 6, 3)), pooling="per_step_vote")
    npt.assert_array_equal(labels, 1)


@pytest.mark.parametrize("pooling", ["mean_pool", "per_step_vote"])
def test_posteriors_are_distributions(pooling, rng):
    model = random_model(n=4, scale=1.0)
    _, post = predict(model, rng.normal(size=(5, 8, 3)), pooling)
    assert np.all(post >= 0)
    npt.assert_allclose(post.sum(axis=1), 1.0, rtol=0, atol=1e-12)


def test_predict_rejects_wrong_channels(rng):
    with pytest.raises(ValueError):
        predict(random_model(), rng.normal(size=(2, 5, 4)))


def test_accuracy_is_trace_over_total():
    labels = np.array([0, 0, 1, 1, 1, 2])
    predicted = np.array([0, 1, 1, 1, 0, 2])
    res = EvalResult.from_predictions(labels, predicted, 4)
    assert res.overall_accuracy == np.trace(res.confusion) / res.confusion.sum() == 4 / 6
    npt.assert_array_equal(res.confusion.sum(axis=1), [2, 3, 1, 0])
    npt.assert_allclose(res.per_class_accuracy[:3], [0.5, 2 / 3, 1.0])
    assert np.isnan(res.per_class_accuracy[3])
    assert res.to_json()["per_class_accuracy"]["3"] is None


def test_fisher_ratio_hand_case():
    # centroids 0 and 2: between 4; every point one unit from its centroid: within 1
    feats = np.array([[-1.0], [1.0], [1.0], [3.0]])
    assert fisher_ratio(feats, [0, 0, 1, 1]) == 4.0


def test_fisher_ratio_degenerate_cases():
    assert fisher_ratio(np.ones((3, 2)), [1, 1, 1]) is None
    assert fisher_ratio(np.array([[0.0], [0.0], [2.0]]), [0, 0, 1]) is None


def test_fisher_ratio_grows_with_centroid_spread(rng):
    noise = rng.normal(size=(40, 3))
    labels = np.repeat([0, 1], 20)
    base = np.array([[0, 0, 0], [1, 0, 0]], dtype=float)
    ratios = [fisher_ratio(noise + s * base[labels], labels) for s in (1.0, 2.0, 4.0)]
    assert ratios[0] < ratios[1] < ratios[2]


def test_evaluate_prepared_rejects_empty():
    with pytest.raises(ValueError):
        evaluate_prepared(random_model(), np.zeros((0, 5, 3)), np.zeros(0, dtype=int))


@pytest.mark.parametrize("kind", ["lstm", "gru"])
def test_save_load_save_byte_identical(kind, tmp_path, rng):
    model = random_model(kind, class_names=["a", "b", "c"], theta=0.2, delta=0.03)
    save_model(model, tmp_path / "a.fgm")
    back = load_model(tmp_path / "a.fgm")
    save_model(back, tmp_path / "b.fgm")
    assert (tmp_path / "a.fgm").read_bytes() == (tmp_path / "b.fgm").read_bytes()
    assert back.class_names == ["a", "b", "c"] and back.fisher.delta == 0.03
    X = rng.normal(size=(4, 10, 3))
    for pooling in ("mean_pool", "per_step_vote"):
        la, pa = predict(model, X, pooling)
        lb, pb = predict(back, X, pooling)
        npt.assert_array_equal(la, lb)
        npt.assert_array_equal(pa, pb)


def test_load_rejects_truncated_and_corrupt(tmp_path):
    path = tmp_path / "m.fgm"
    save_model(random_model(), path)
    raw = path.read_bytes()
    (tmp_path / "short.fgm").write_bytes(raw[:-8])
    with pytest.raises(ModelFormatError, match="payload"):
        load_model(tmp_path / "short.fgm")
    flipped = bytearray(raw)
    flipped[-3] ^= 0xFF
    (tmp_path / "flip.fgm").write_bytes(bytes(flipped))
    with pytest.raises(ModelFormatError, match="checksum"):
        load_model(tmp_path / "flip.fgm")
    (tmp_path / "bad.fgm").write_bytes(b"NOTMODEL" + raw[8:])
    with pytest.raises(ModelFormatError, match="magic"):
        load_model(tmp_path / "bad.fgm")


def test_load_rejects_other_version(tmp_path):
    path = tmp_path / "m.fgm"
    save_model(random_model(), path)
    raw = path.read_bytes().replace(b'"format_version":1', b'"format_version":9')
    path.write_bytes(raw)
    with pytest.raises(ModelFormatError, match="version"):
        load_model(path)


def test_predictions_independent_of_batch_order(rng):
    model = random_model(scale=1.0)
    X = rng.normal(size=(6, 9, 3))
    perm = rng.permutation(6)
    la, pa = predict(model, X)
    lb, pb = predict(model, X[perm])
    npt.assert_array_equal(lb, la[perm])
    npt.assert_allclose(pb, pa[perm], rtol=0, atol=1e-15)


def test_create_validates():
    with pytest.raises(ValueError):
        GestureModel.create("rnn", 3, 4, 2)
    with pytest.raises(ValueError):
        GestureModel.create("gru", 3, 4, 2, pooling="max")
