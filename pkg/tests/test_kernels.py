import os
import subprocess
import sys

import numpy as np
import pytest

from balens import kernels
from balens.classifier import (
    ADAM_BETA1,
    ADAM_BETA2,
    ClassifierSpec,
    TrainConfig,
    init_params,
    loss_and_grad,
    train,
)

needs_ext = pytest.mark.skipif(not kernels.compiled_available(), reason="compiled kernels not built")


def epoch(kern, spec, theta, X, y, order, lr=1e-3, batch=1, eps=1e-8, t=0):
    theta = theta.copy()
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    if spec.kind == "logistic":
        t, loss = kern.adam_epoch_logistic(theta, m, v, t, X, y, order, lr, batch, ADAM_BETA1, ADAM_BETA2, eps)
    else:
        t, loss = kern.adam_epoch_mlp(theta, m, v, t, X, y, order, lr, batch, spec.hidden_units,
                                      ADAM_BETA1, ADAM_BETA2, eps)
    return theta, t, loss


@pytest.mark.parametrize("kind", ["mlp_head", "logistic"])
@pytest.mark.parametrize("batch", [1, 5])
def test_kernel_first_step_recovers_gradient(backend, kind, batch, rng):
    """With a huge epsilon, one Adam step is -lr * g / eps, exposing the kernel's gradient."""
    spec = ClassifierSpec(4, kind, hidden_units=6)
    kern = kernels.get(backend)
    for _ in range(5):
        theta = rng.normal(size=spec.n_params)
        X = rng.normal(size=(batch, 4))
        y = rng.integers(0, 2, size=batch).astype(float)
        eps = 1e8
        lr = 1.0
        new, t, loss = epoch(kern, spec, theta, X, y, np.arange(batch, dtype=np.int64), lr, batch, eps)
        g_kernel = (theta - new) * eps / lr
        ref_loss, g = loss_and_grad(spec, theta, X, y)
        np.testing.assert_allclose(g_kernel, g, rtol=1e-6, atol=1e-7)
        assert t == 1
        assert loss == pytest.approx(ref_loss * batch, rel=1e-12)


@needs_ext
@pytest.mark.parametrize("kind", ["mlp_head", "logistic"])
@pytest.mark.parametrize("batch", [1, 3, 64])
def test_backends_agree_on_one_epoch(kind, batch, rng):
    spec = ClassifierSpec(8, kind, hidden_units=16)
    theta = init_params(spec, rng)
    X = rng.normal(size=(200, 8))
    y = rng.integers(0, 2, 200).astype(float)
    order = rng.permutation(200).astype(np.int64)
    a, ta, la = epoch(kernels.get("python"), spec, theta, X, y, order, batch=batch)
    b, tb, lb = epoch(kernels.get("cython"), spec, theta, X, y, order, batch=batch)
    assert ta == tb == -(-200 // batch)
    np.testing.assert_allclose(a, b, rtol=1e-9, atol=1e-11)
    assert la == pytest.approx(lb, rel=1e-11)


@needs_ext
def test_backends_agree_on_training(small_data):
    spec = ClassifierSpec(4, "mlp_head", 16)
    cfg = TrainConfig(learning_rate=1e-3, max_epochs=10, seed=2)
    a = train(spec, cfg, small_data, small_data, backend="python")
    b = train(spec, cfg, small_data, small_data, backend="cython")
    assert a.best_epoch == b.best_epoch
    np.testing.assert_allclose(a.parameters, b.parameters, rtol=1e-8, atol=1e-10)


@needs_ext
def test_kernel_rejects_wrong_parameter_count():
    X = np.zeros((2, 3))
    with pytest.raises(ValueError):
        kernels.get("cython").adam_epoch_logistic(np.zeros(3), np.zeros(3), np.zeros(3), 0, X,
                                                  np.zeros(2), np.arange(2, dtype=np.int64), 0.1, 1,
                                                  0.9, 0.999, 1e-8)


def test_env_var_forces_fallback():
    code = "from balens import kernels; print(kernels.BACKEND)"
    env = dict(os.environ, BALENS_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


def test_unknown_backend():
    with pytest.raises(ValueError):
        kernels.get("fortran")
