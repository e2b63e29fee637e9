"""Central finite-difference check of every analytic gradient block.

Each suite builds a tiny random model and batch, perturbs every scalar of
every parameter block by +-step and compares the difference quotient of the
scalar loss with the BPTT gradient.
"""

from dataclasses import dataclass

import numpy as np

from .cells import backward_bptt, encode_bidirectional
from .loss import FisherState, fisher_loss, softmax_loss
from .model import GestureModel

TOLERANCE = 1e-4
STEP = 1e-5
# gradients below this magnitude are compared absolutely
FLOOR = 1e-6


@dataclass
class BlockResult:
    suite: str
    block: str
    max_rel_error: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= TOLERANCE


def relative_error(analytic, numeric) -> float:
    analytic = np.asarray(analytic)
    numeric = np.asarray(numeric)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), FLOOR)
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0


def _loss(model, X, y, mode, with_grads):
    enc = encode_bidirectional(model.fwd, model.bwd, X)
    pooled = enc.features.mean(axis=1)
    theta = model.fisher.theta
    value, g_O = 0.0, np.zeros_like(pooled)
    g_W = np.zeros_like(model.classifier.W)
    g_b = np.zeros_like(model.classifier.b)
    if mode in ("softmax", "combined"):
        ls, gs, g_W, g_b = softmax_loss(model.classifier, pooled, y)
        value += ls
        g_O = g_O + gs
    if mode in ("fisher", "combined"):
        lf, gf = fisher_loss(model.fisher, pooled, y)
        scale = theta if mode == "combined" else 1.0
        value += scale * lf
        g_O = g_O + scale * gf
    if not with_grads:
        return value
    grad_f = np.broadcast_to(g_O[:, None, :] / enc.features.shape[1], enc.features.shape)
    g_fwd, g_bwd, g_x = backward_bptt(enc, grad_f)
    grads = {f"fwd.{k}": v for k, v in g_fwd.arrays().items()}
    grads.update({f"bwd.{k}": v for k, v in g_bwd.arrays().items()})
    grads["classifier.W"] = g_W
    grads["classifier.b"] = g_b
    grads["input"] = g_x
    return value, grads


def numeric_gradient(f, arr, step=STEP):
    """Central differences of scalar ``f()`` w.r.t. every entry of ``arr`` (perturbed in place)."""
    out = np.zeros_like(arr)
    flat = arr.reshape(-1)
    grad = out.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        up = f()
        flat[i] = orig - step
        down = f()
        flat[i] = orig
        grad[i] = (up - down) / (2.0 * step)
    return out


def build_instance(cell_kind, seed, hidden=4, steps=7, channels=3, n_classes=3, batch=5,
                   theta=0.5, delta=0.01):
    rng = np.random.default_rng(seed)
    model = GestureModel.create(cell_kind, channels, hidden, n_classes, seed=seed,
                                theta=theta, delta=delta, alpha=0.5, length=steps)
    # move every bias and peephole off its initial constant so no gradient is trivially symmetric
    for arr in model.parameters().values():
        arr += rng.normal(0.0, 0.3, size=arr.shape)
    model.fisher = FisherState(rng.normal(0.0, 0.3, size=model.fisher.means.shape), theta, delta, 0.5)
    X = rng.normal(0.0, 1.0, size=(batch, steps, channels))
    y = rng.permutation(np.arange(batch) % n_classes)
    return model, X, y


def check_suite(model, X, y, mode, label=None):
    label = label or f"{model.cell_kind}/{mode}"
    _, analytic = _loss(model, X, y, mode, True)
    results = []
    targets = dict(model.parameters())
    if mode == "fisher":
        # the Fisher term never touches the classifier
        targets = {k: v for k, v in targets.items() if not k.startswith("classifier.")}
    for name, arr in targets.items():
        numeric = numeric_gradient(lambda: _loss(model, X, y, mode, False), arr)
        results.append(BlockResult(label, name, relative_error(analytic[name], numeric)))
    x = X.copy()
    numeric = numeric_gradient(lambda: _loss(model, x, y, mode, False), x)
    results.append(BlockResult(label, "input", relative_error(analytic["input"], numeric)))
    return results


def check_losses(seed, n_classes=3, feature_dim=8, batch=5, theta=0.5, delta=0.01):
    """Feature-level checks of dL/dO, dL/dW, dL/db for the bare losses."""
    from .loss import ClassifierParams, combined_loss

    rng = np.random.default_rng(seed)
    clf = ClassifierParams(rng.normal(size=(n_classes, feature_dim)), rng.normal(size=n_classes))
    state = FisherState(rng.normal(size=(n_classes, feature_dim)), theta, delta, 0.5)
    O = rng.normal(size=(batch, feature_dim))
    y = rng.permutation(np.arange(batch) % n_classes)
    results = []

    _, g_O, g_W, g_b = softmax_loss(clf, O, y)
    f = lambda: softmax_loss(clf, O, y)[0]
    results.append(BlockResult("loss/softmax", "O", relative_error(g_O, numeric_gradient(f, O))))
    results.append(BlockResult("loss/softmax", "W", relative_error(g_W, numeric_gradient(f, clf.W))))
    results.append(BlockResult("loss/softmax", "b", relative_error(g_b, numeric_gradient(f, clf.b))))
    if theta > 0:
        _, g_f = fisher_loss(state, O, y)
        f = lambda: fisher_loss(state, O, y)[0]
        results.append(BlockResult("loss/fisher", "O", relative_error(g_f, numeric_gradient(f, O))))
        _, g_c, _, _ = combined_loss(clf, state, O, y)
        f = lambda: combined_loss(clf, state, O, y)[0].total
        results.append(BlockResult("loss/combined", "O", relative_error(g_c, numeric_gradient(f, O))))
    return results


def run_gradcheck(seeds=range(5), theta=0.5, cell_kinds=("lstm", "gru")):
    """All suites for all seeds; with theta == 0 only the softmax suites run."""
    modes = ("softmax",) if theta == 0 else ("softmax", "fisher", "combined")
    results = []
    for seed in seeds:
        results.extend(check_losses(seed, theta=theta))
        for kind in cell_kinds:
            model, X, y = build_instance(kind, seed, theta=theta if theta > 0 else 0.5)
            for mode in modes:
                results.extend(check_suite(model, X, y, mode))
    return results


def summarize(results):
    """Worst error per (suite, block) across seeds, in first-seen order."""
    worst = {}
    for r in results:
        key = (r.suite, r.block)
        worst[key] = max(worst.get(key, 0.0), r.max_rel_error)
    return [BlockResult(s, b, e) for (s, b), e in worst.items()]
