import json

import numpy as np
import pytest

from balens.classifier import (
    ClassifierSpec,
    EarlyStopping,
    TrainConfig,
    TrainedUnit,
    forward,
    forward_params,
    init_params,
    load_unit,
    loss_and_grad,
    mean_loss,
    predict_proba,
    save_unit,
    train,
)
from balens.dataset import Dataset, generate_synthetic
from balens.errors import ConfigError, DataError, TrainingDivergedError


def unit_with(spec, theta):
    return TrainedUnit(spec=spec, parameters=theta, history=(), stopped_epoch=0, best_epoch=0)


def softmax_oracle(spec, theta, x):
    """Direct evaluation with explicit loops, independent of the vectorised path."""
    D, H = spec.input_dim, spec.hidden_units
    if spec.kind == "logistic":
        z = sum(theta[k] * x[k] for k in range(D)) + theta[D]
        logits = [0.0, z]
    else:
        W1 = theta[: H * D]
        b1 = theta[H * D: H * D + H]
        W2 = theta[H * D + H: H * D + 3 * H]
        b2 = theta[H * D + 3 * H:]
        h = [max(0.0, sum(W1[j * D + k] * x[k] for k in range(D)) + b1[j]) for j in range(H)]
        logits = [sum(W2[c * H + j] * h[j] for j in range(H)) + b2[c] for c in range(2)]
    m = max(logits)
    e = [np.exp(l - m) for l in logits]
    return [v / sum(e) for v in e]


@pytest.mark.parametrize("kind", ["mlp_head", "logistic"])
def test_forward_matches_oracle(kind, rng):
    spec = ClassifierSpec(5, kind, hidden_units=7)
    for _ in range(10):
        theta = rng.normal(size=spec.n_params)
        x = rng.normal(size=5) * 2
        p = forward(unit_with(spec, theta), x)
        np.testing.assert_allclose(p, softmax_oracle(spec, theta, x), atol=1e-12, rtol=0)
        assert abs(p[0] + p[1] - 1.0) <= 1e-12
        assert predict_proba(unit_with(spec, theta), x) == 1.0 - p[0]


def test_zero_parameters_give_half():
    spec = ClassifierSpec(3, "mlp_head", 64)
    u = unit_with(spec, np.zeros(spec.n_params))
    assert forward(u, [1.0, -2.0, 3.0]) == (0.5, 0.5)
    assert predict_proba(u, [1.0, -2.0, 3.0]) == 0.5


def test_logistic_bias_limit_and_monotone(rng):
    spec = ClassifierSpec(3, "logistic")
    theta = np.zeros(4)
    theta[-1] = 50.0
    assert predict_proba(unit_with(spec, theta), [0.3, 0.1, 0.2]) > 1 - 1e-15
    for _ in range(20):
        theta = rng.normal(size=4)
        x = rng.normal(size=3)
        lo = predict_proba(unit_with(spec, theta), x)
        theta[-1] += 1.0
        assert predict_proba(unit_with(spec, theta), x) > lo


def test_forward_dimension_mismatch():
    spec = ClassifierSpec(3, "logistic")
    with pytest.raises(DataError, match="dimension mismatch"):
        forward(unit_with(spec, np.zeros(4)), [1.0, 2.0])


def test_softmax_normalised_for_large_inputs(rng):
    spec = ClassifierSpec(4, "mlp_head", 8)
    theta = rng.normal(size=spec.n_params) * 10
    P = forward_params(spec, theta, rng.normal(size=(200, 4)) * 100)
    np.testing.assert_allclose(P.sum(axis=1), 1.0, atol=1e-12)
    assert np.all((P >= 0) & (P <= 1))


def central_fd(f, theta, h=1e-6):
    g = np.zeros_like(theta)
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = h
        g[i] = (f(theta + e) - f(theta - e)) / (2 * h)
    return g


def rel_err(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)


@pytest.mark.parametrize("kind", ["mlp_head", "logistic"])
def test_gradient_matches_finite_differences(kind, rng):
    spec = ClassifierSpec(4, kind, hidden_units=6)
    for _ in range(10):
        theta = rng.normal(size=spec.n_params)
        X = rng.normal(size=(5, 4))
        y = rng.integers(0, 2, size=5)
        _, g = loss_and_grad(spec, theta, X, y)
        fd = central_fd(lambda t: mean_loss(spec, t, X, y), theta)
        assert rel_err(g, fd) < 1e-4


def test_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(lr_decay_per_epoch=0.0)
    with pytest.raises(ConfigError):
        TrainConfig(batch_size=0)
    with pytest.raises(ConfigError):
        ClassifierSpec(3, "svm")
    with pytest.raises(ConfigError):
        ClassifierSpec(3, "mlp_head", hidden_units=0)


def separable_2d(n=60, seed=0):
    r = np.random.default_rng(seed)
    X = np.vstack([r.normal([2, 2], 0.4, (n, 2)), r.normal([-2, -2], 0.4, (n, 2))])
    y = np.r_[np.ones(n, int), np.zeros(n, int)]
    return Dataset([f"s{i}" for i in range(2 * n)], [f"u{i}" for i in range(2 * n)], X, y)


def test_separable_logistic_reaches_full_accuracy(backend):
    bag = separable_2d()
    val = separable_2d(20, seed=1)
    unit = train(ClassifierSpec(2, "logistic"), TrainConfig(learning_rate=0.01, max_epochs=200, seed=1),
                 bag, val, backend=backend)
    p = forward_params(unit.spec, unit.parameters, bag.features)[:, 1]
    assert np.mean((p > 0.5) == (bag.labels == 1)) == 1.0


def test_training_is_deterministic(small_data, backend):
    spec = ClassifierSpec(4, "mlp_head", 16)
    cfg = TrainConfig(learning_rate=1e-3, max_epochs=8, seed=4)
    a = train(spec, cfg, small_data, small_data, backend=backend)
    b = train(spec, cfg, small_data, small_data, backend=backend)
    assert a.parameters.tobytes() == b.parameters.tobytes()
    assert a.history == b.history


@pytest.mark.parametrize("kind", ["mlp_head", "logistic"])
def test_zero_learning_rate_is_identity(small_data, backend, kind):
    spec = ClassifierSpec(4, kind, 8)
    cfg = TrainConfig(learning_rate=0.0, max_epochs=3, seed=9)
    unit = train(spec, cfg, small_data, small_data, backend=backend)
    np.testing.assert_array_equal(unit.parameters, init_params(spec, np.random.default_rng(9)))


def test_early_stopping_rule():
    stop = EarlyStopping(patience=3)
    losses = [1.0, 0.8, 0.9, 1.0, 1.1, 1.2, 1.3]
    stopped = None
    for epoch, loss in enumerate(losses, start=1):
        if stop.update(epoch, loss, np.array([float(epoch)])):
            stopped = epoch
            break
    assert stopped == 5
    assert stop.best_epoch == 2 and stop.best_params[0] == 2.0


def test_early_stopping_returns_best_epoch(backend):
    # validation labels are the reverse of training labels, so validation loss rises
    bag = separable_2d()
    flipped = Dataset(bag.ids, bag.user_ids, bag.features, 1 - bag.labels)
    cfg = TrainConfig(learning_rate=0.01, max_epochs=50, early_stop_patience=3, seed=0)
    unit = train(ClassifierSpec(2, "logistic"), cfg, bag, flipped, backend=backend)
    losses = [h.validation_loss for h in unit.history]
    best = int(np.argmin(losses)) + 1
    assert unit.best_epoch == best
    assert unit.stopped_epoch == best + 3 <= 50
    val_loss = mean_loss(unit.spec, unit.parameters, flipped.features, flipped.labels)
    assert val_loss == min(losses)


def test_lr_decay_applied_per_epoch(small_data):
    # with decay d, epoch e runs at lr * d**(e-1): two epochs at d=0.5 equal one epoch at lr
    # followed by one at lr/2, checked against a manual two-stage run
    from balens import kernels
    from balens.classifier import ADAM_BETA1, ADAM_BETA2, ADAM_EPS

    spec = ClassifierSpec(4, "logistic")
    cfg = TrainConfig(learning_rate=0.05, lr_decay_per_epoch=0.5, max_epochs=2,
                      early_stop_patience=5, seed=3)
    unit = train(spec, cfg, small_data, small_data, backend="python")
    r = np.random.default_rng(3)
    theta = init_params(spec, r)
    m, v, t = np.zeros(5), np.zeros(5), 0
    X, y = small_data.features, small_data.labels.astype(float)
    snapshots = []
    for lr in (0.05, 0.025):
        order = r.permutation(len(small_data)).astype(np.int64)
        t, _ = kernels.get("python").adam_epoch_logistic(theta, m, v, t, X, y, order, lr, 1,
                                                          ADAM_BETA1, ADAM_BETA2, ADAM_EPS)
        snapshots.append((mean_loss(spec, theta, X, y), theta.copy()))
    best = min(snapshots, key=lambda s: s[0])[1]
    np.testing.assert_array_equal(unit.parameters, best)


def test_divergence_is_reported(small_data):
    X = small_data.features * 1e200
    huge = Dataset(small_data.ids, small_data.user_ids, X, small_data.labels)
    with pytest.raises(TrainingDivergedError, match="non-finite loss at epoch 1"):
        train(ClassifierSpec(4, "logistic"), TrainConfig(learning_rate=1e200, max_epochs=3), huge, huge)


def test_train_rejects_dimension_mismatch(small_data):
    with pytest.raises(DataError, match="dimension mismatch"):
        train(ClassifierSpec(5, "logistic"), TrainConfig(max_epochs=1), small_data, small_data)


def test_serialization_round_trip(tmp_path, small_data):
    spec = ClassifierSpec(4, "mlp_head", 8)
    unit = train(spec, TrainConfig(learning_rate=1e-3, max_epochs=4, seed=2), small_data, small_data)
    save_unit(unit, tmp_path / "u.json")
    back = load_unit(tmp_path / "u.json")
    assert back.parameters.tobytes() == unit.parameters.tobytes()
    assert back.history == unit.history and back.spec == unit.spec and back.config == unit.config
    P1 = forward_params(spec, unit.parameters, small_data.features)
    P2 = forward_params(back.spec, back.parameters, small_data.features)
    assert P1.tobytes() == P2.tobytes()


def test_corrupt_model_file(tmp_path):
    (tmp_path / "x.json").write_text(json.dumps({"format": "other"}))
    with pytest.raises(DataError, match="not a model file"):
        load_unit(tmp_path / "x.json")
    (tmp_path / "y.json").write_text("{broken")
    with pytest.raises(DataError, match="cannot read"):
        load_unit(tmp_path / "y.json")
