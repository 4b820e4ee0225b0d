import math

import numpy as np
import pytest

from attn_tgcn.data import SynthConfig, generate_synthetic
from attn_tgcn.exceptions import DomainError, NumericError, ValidationError
from attn_tgcn.graph import pad_sequence
from attn_tgcn.model import ModelConfig, Prediction, init_params
from attn_tgcn.training import (
    AdamState,
    TrainConfig,
    adam_step,
    grad_check_model,
    loss_and_grad,
    node_cross_entropy,
    sequence_loss,
    train,
)

SMALL = ModelConfig(t=4, n=3, f=5, g=6, h=6, d_a=4)


def pred(probs):
    probs = np.asarray(probs, dtype=float)
    return Prediction(probs=probs, attention_weights=np.ones((len(probs), 1)), contexts=np.zeros((len(probs), 1)))


def test_node_cross_entropy_examples():
    assert node_cross_entropy([1.0, 0.0], 0) == 0.0
    assert node_cross_entropy([0.5, 0.5], 0) == pytest.approx(math.log(2), abs=1e-15)
    assert node_cross_entropy([0.5, 0.5], 1) == pytest.approx(0.693147, abs=1e-6)
    assert node_cross_entropy([0.0, 1.0], 0) == pytest.approx(-math.log(1e-12))
    assert node_cross_entropy([0.0, 1.0], 0) == pytest.approx(27.631, abs=1e-3)
    assert node_cross_entropy([0.5, 0.5], 1, weight_dead=3.0) == pytest.approx(3 * math.log(2))
    with pytest.raises(DomainError):
        node_cross_entropy([0.5, 0.5], 2)
    with pytest.raises(DomainError):
        node_cross_entropy([0.5, 0.6], 0)


def test_sequence_loss_examples():
    seq = pad_sequence(np.ones((2, 2, 1)), [0, 1], 3)
    perfect = pred([[1, 0], [0, 1], [1, 0]])
    assert sequence_loss(perfect, seq, TrainConfig()) == 0.0
    half = pred([[0.5, 0.5]] * 3)
    assert sequence_loss(half, seq, TrainConfig()) == pytest.approx(3 * math.log(2))
    assert sequence_loss(half, seq, TrainConfig(include_padded_in_loss=False)) == pytest.approx(2 * math.log(2))


def test_excluding_padded_never_increases_loss():
    rng = np.random.default_rng(0)
    for _ in range(50):
        k = int(rng.integers(1, 4))
        seq = pad_sequence(np.ones((2, k, 1)), rng.integers(0, 2, k), 3)
        p = rng.dirichlet([1, 1], size=3)
        full = sequence_loss(pred(p), seq, TrainConfig())
        part = sequence_loss(pred(p), seq, TrainConfig(include_padded_in_loss=False))
        assert 0 <= part <= full


def test_taped_loss_matches_sequence_loss():
    rng = np.random.default_rng(1)
    cfg = TrainConfig(death_class_weight=2.5, include_padded_in_loss=False)
    seq = pad_sequence(rng.normal(size=(4, 2, 5)), [1, 0], 3)
    params = init_params(SMALL, 3)
    from attn_tgcn.model import forward

    loss, _ = loss_and_grad(seq, params, cfg)
    assert loss == pytest.approx(sequence_loss(forward(seq, params), seq, cfg), abs=1e-14)


# --- Adam -----------------------------------------------------------------------


def scripted_adam(x, grad_fn, steps, lr, b1, b2, eps):
    """Plain per-coordinate Adam, written out with Python floats."""
    x = list(x)
    m = [0.0] * len(x)
    v = [0.0] * len(x)
    for t in range(1, steps + 1):
        g = grad_fn(x)
        for i in range(len(x)):
            m[i] = b1 * m[i] + (1 - b1) * g[i]
            v[i] = b2 * v[i] + (1 - b2) * g[i] * g[i]
            mhat = m[i] / (1 - b1**t)
            vhat = v[i] / (1 - b2**t)
            x[i] = x[i] - lr * mhat / (math.sqrt(vhat) + eps)
    return x


def _only(params, name, value):
    return {k: (value if k == name else np.zeros_like(v)) for k, v in params.tensors.items()}


def test_adam_zero_gradient():
    params = init_params(SMALL, 0)
    state = AdamState.zeros_like(params)
    new, st = adam_step(params, {k: np.zeros_like(v) for k, v in params.tensors.items()}, state, TrainConfig())
    assert new.equals(params)
    assert st.step == 1


def test_adam_first_step_magnitude_is_lr():
    params = init_params(SMALL, 0)
    cfg = TrainConfig(learning_rate=1e-3)
    g = np.random.default_rng(0).normal(size=params["w_o"].shape)
    new, _ = adam_step(params, _only(params, "w_o", g), AdamState.zeros_like(params), cfg)
    step = new["w_o"] - params["w_o"]
    np.testing.assert_allclose(step, -1e-3 * np.sign(g), rtol=1e-4)


def test_adam_matches_scripted_reference_on_quadratic():
    cfg = TrainConfig(learning_rate=0.05)
    params = init_params(SMALL, 1)
    curv = np.random.default_rng(2).uniform(0.5, 2.0, size=params["w_o"].shape)

    state = AdamState.zeros_like(params)
    p = params
    for _ in range(2):
        p, state = adam_step(p, _only(p, "w_o", curv * p["w_o"]), state, cfg)

    flat_c = curv.reshape(-1).tolist()
    expected = scripted_adam(
        params["w_o"].reshape(-1).tolist(),
        lambda x: [c * xi for c, xi in zip(flat_c, x)],
        2, cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps,
    )
    np.testing.assert_allclose(p["w_o"].reshape(-1), expected, rtol=0, atol=1e-12)


def test_adam_rejects_nonfinite_gradient():
    params = init_params(SMALL, 0)
    bad = _only(params, "b_c", np.full(params["b_c"].shape, np.nan))
    with pytest.raises(NumericError, match="b_c"):
        adam_step(params, bad, AdamState.zeros_like(params), TrainConfig())


# --- training loop -----------------------------------------------------------------


@pytest.fixture(scope="module")
def tiny_data():
    return generate_synthetic(SynthConfig(videos=8, t=4, f=5, seed=3, death_onset_prob=0.2, threshold=0.5))


TINY = ModelConfig(t=4, n=3, f=5, g=4, h=4, d_a=3, gc_root_weight=True)


def test_zero_epochs_returns_init(tiny_data):
    params, history = train(tiny_data, TINY, TrainConfig(epochs=0, seed=5))
    assert params.equals(init_params(TINY, 5))
    assert len(history) == 0


def test_training_is_deterministic(tiny_data):
    cfg = TrainConfig(epochs=3, seed=2)
    a, ha = train(tiny_data, TINY, cfg)
    b, hb = train(tiny_data, TINY, cfg)
    assert a.equals(b)
    assert ha.loss == hb.loss


def test_training_ignores_file_order(tiny_data):
    cfg = TrainConfig(epochs=2, seed=2)
    a, _ = train(tiny_data, TINY, cfg)
    b, _ = train(list(reversed(tiny_data)), TINY, cfg)
    assert a.equals(b)


def test_training_reduces_loss(tiny_data):
    _, history = train(tiny_data, TINY, TrainConfig(epochs=15, learning_rate=1e-2, seed=0))
    assert history.loss[-1] < history.loss[0]


def test_training_log_lines(tiny_data):
    lines = []
    train(tiny_data, TINY, TrainConfig(epochs=2), log=lines.append)
    assert [line.split("\t")[0] for line in lines] == ["0", "1"]
    assert all(float(line.split("\t")[1]) >= 0 for line in lines)


def test_minibatch_training_runs(tiny_data):
    params, history = train(tiny_data, TINY, TrainConfig(epochs=1, batch=3))
    assert len(history) == 1


def test_train_rejects_dimension_mismatch(tiny_data):
    with pytest.raises(ValidationError, match="expects"):
        train(tiny_data, ModelConfig(t=4, n=3, f=7), TrainConfig(epochs=1))
    with pytest.raises(ValidationError):
        train([], TINY, TrainConfig(epochs=1))


def test_train_config_validation():
    with pytest.raises(ValidationError):
        TrainConfig(learning_rate=0)
    with pytest.raises(ValidationError):
        TrainConfig(epochs=-1)


# --- gradient check ---------------------------------------------------------------


def test_grad_check_small_config():
    report = grad_check_model(SMALL, seed=0, eps=1e-5, tol=1e-4)
    assert report.passed and report.max_rel_err <= 1e-4


def test_grad_check_head_only():
    report = grad_check_model(SMALL, seed=1, only=["w_o", "b_o"], tol=1e-4)
    assert report.passed
    assert set(report.per_parameter) == {"w_o", "b_o"}


def test_grad_check_infinite_tolerance_always_passes():
    report = grad_check_model(SMALL, seed=2, eps=1e-1, tol=math.inf)
    assert report.passed and report.max_rel_err > 0


@pytest.mark.parametrize(
    "config",
    [
        ModelConfig(t=3, n=3, f=4, g=3, h=3, d_a=2, gc_layers=2, gc_root_weight=True),
        ModelConfig(t=3, n=2, f=3, g=3, h=3, d_a=2, attention_tanh=True, isolate_padded=True),
    ],
)
def test_grad_check_variants(config):
    assert grad_check_model(config, seed=3).passed


def test_grad_check_with_loss_options():
    cfg = TrainConfig(death_class_weight=4.0, include_padded_in_loss=False)
    assert grad_check_model(SMALL, seed=4, train_config=cfg).passed


def test_float64_oracle_is_limited_by_roundoff_on_shift_invariant_biases():
    # b_1 and b_2 shift every frame score equally, so their true gradient is 0;
    # a float64 central difference only sees round-off there.
    report = grad_check_model(SMALL, seed=3, oracle_dtype=np.float64, only=["b_2"], tol=math.inf)
    assert report.max_rel_err < 1.0
