import dataclasses

import numpy as np
import pytest

from deeptraj import cnn
from deeptraj.errors import DataError

from oracles import conv_naive, fc_naive, gradient_check, lrn_naive, pool_naive, tiny_network_case


def conv_case(rng):
    c, f = rng.integers(1, 4), rng.integers(1, 4)
    k = int(rng.choice([1, 3, 5]))
    s = int(rng.integers(1, 3))
    size = int(rng.integers(k, k + 8))
    return (rng.normal(size=(c, size, size)), rng.normal(size=(f, c, k, k)), rng.normal(size=f), s)


@pytest.mark.parametrize("seed", range(10))
def test_conv_matches_loops(seed):
    x, w, b, s = conv_case(np.random.default_rng(seed))
    assert np.abs(cnn.conv_forward(x, w, b, s) - conv_naive(x, w, b, s)).max() <= 1e-12


@pytest.mark.parametrize("seed", range(10))
def test_pool_matches_loops(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(int(rng.integers(1, 4)), int(rng.integers(2, 12)), int(rng.integers(2, 12))))
    out, _ = cnn.max_pool(x, 2, 2)
    assert np.abs(out - pool_naive(x, 2, 2)).max() <= 1e-12


@pytest.mark.parametrize("seed", range(10))
def test_lrn_matches_loops(seed):
    rng = np.random.default_rng(seed)
    x = np.abs(rng.normal(size=(int(rng.integers(1, 9)), 5, 6)))
    got = cnn.lrn(x, 5, 2.0, 1e-4, 0.75)
    assert np.abs(got - lrn_naive(x, 5, 2.0, 1e-4, 0.75)).max() <= 1e-12
    got = cnn.lrn(x, 3, 1.0, 0.3, 0.5)
    assert np.abs(got - lrn_naive(x, 3, 1.0, 0.3, 0.5)).max() <= 1e-12


@pytest.mark.parametrize("seed", range(10))
def test_fc_matches_loops(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=int(rng.integers(1, 30)))
    w = rng.normal(size=(int(rng.integers(1, 10)), x.size))
    b = rng.normal(size=w.shape[0])
    assert np.abs(cnn.fc_forward(x, w, b) - fc_naive(x, w, b)).max() <= 1e-12


def test_small_examples():
    assert np.array_equal(cnn.relu(np.array([-2.0, 0.0, 3.0])), [0.0, 0.0, 3.0])
    out, arg = cnn.max_pool(np.array([[[1.0, 2.0], [3.0, 4.0]]]))
    assert out.shape == (1, 1, 1) and out[0, 0, 0] == 4.0 and arg[0, 0, 0] == 3
    loss, probs = cnn.softmax_cross_entropy(np.zeros(4), 2)
    assert np.allclose(probs, 0.25) and abs(loss - np.log(4)) < 1e-12
    loss, probs = cnn.softmax_cross_entropy(np.array([1000.0, 0.0]), 0)
    assert np.isfinite(loss) and loss < 1e-12


def test_conv_is_linear():
    rng = np.random.default_rng(7)
    x1, x2 = rng.normal(size=(2, 2, 9, 9))
    w = rng.normal(size=(3, 2, 3, 3))
    zero = np.zeros(3)
    lhs = cnn.conv_forward(2.0 * x1 + 3.0 * x2, w, zero)
    rhs = 2.0 * cnn.conv_forward(x1, w, zero) + 3.0 * cnn.conv_forward(x2, w, zero)
    assert np.allclose(lhs, rhs, atol=1e-12)


def test_default_dimensions():
    cfg = cnn.NetworkConfig()
    assert cfg.spatial_sizes() == [(159, 79), (75, 37), (35, 17), (15, 7)]
    assert cfg.feature_length() == 14400
    assert cfg.flat_length() == 64 * 7 * 7


def test_config_rejects_shrinking_input():
    with pytest.raises(ValueError):
        cnn.NetworkConfig(input_size=20)


@pytest.mark.parametrize("seed", range(3))
def test_gradient_check(seed):
    assert gradient_check(seed) < 1e-4


def test_zero_input_has_zero_conv_gradients():
    model, x, y = tiny_network_case(0)
    for name in model.params:
        if name.endswith(".bias"):
            model.params[name][:] = 0.0
    grads, _ = cnn.backward(model, np.zeros_like(x), y)
    for name, g in grads.items():
        if name.startswith("conv"):
            assert not g.any(), name


def test_duplicate_example_doubles_gradient():
    model, x, y = tiny_network_case(1)
    g1, l1 = cnn.backward(model, x, y)
    g2, l2 = cnn.backward(model, np.concatenate([x, x]), np.concatenate([y, y]))
    assert np.isclose(l2, 2 * l1, rtol=1e-12)
    for name in g1:
        assert np.allclose(g2[name], 2 * g1[name], rtol=1e-10, atol=1e-14)


def small_dataset(cfg, n=6, seed=0):
    rng = np.random.default_rng(seed)
    shape = (cfg.input_channels, cfg.input_size, cfg.input_size)
    return [(rng.random(shape), int(i % cfg.class_count)) for i in range(n)]


TINY = cnn.NetworkConfig(input_channels=2, input_size=30, conv_filters=(3, 4, 4, 3), conv_kernels=(3, 3, 3, 1),
                         fc_hidden=(6, 5), class_count=3, epochs=2, batch_size=4)


def test_zero_learning_rate_keeps_init():
    cfg = dataclasses.replace(TINY, learning_rate=0.0)
    model, losses = cnn.train(small_dataset(cfg), cfg)
    init = cnn.init_model(cfg)
    for name in init.params:
        assert np.array_equal(model.params[name], init.params[name])
    assert len(losses) == 2


def test_training_is_deterministic():
    data = small_dataset(TINY)
    a, la = cnn.train(data, TINY)
    b, lb = cnn.train(data, TINY)
    assert la == lb
    for name in a.params:
        assert a.params[name].tobytes() == b.params[name].tobytes()


def test_one_small_step_decreases_loss():
    model, x, y = tiny_network_case(2, batch=4)
    before = cnn.loss(model, x, y)
    grads, _ = cnn.backward(model, x, y)
    for name, g in grads.items():
        model.params[name] -= 1e-4 * g / len(x)
    assert cnn.loss(model, x, y) < before


def test_callback_stops_training():
    seen = []
    cfg = dataclasses.replace(TINY, epochs=10)
    _, losses = cnn.train(small_dataset(cfg), cfg, callback=lambda e, m, l: seen.append(e) or e == 2)
    assert seen == [0, 1, 2] and len(losses) == 3


def test_predict_and_features():
    model = cnn.init_model(TINY)
    x = np.random.default_rng(0).random((3, 2, 30, 30))
    cls, probs = cnn.predict(model, x[0])
    assert isinstance(cls, int) and np.isclose(probs.sum(), 1.0)
    labels, batch_probs = cnn.predict(model, x)
    assert labels.shape == (3,) and np.allclose(batch_probs[0], probs)
    assert cnn.extract_features(model, x).shape == (3, TINY.feature_length())
    with pytest.raises(DataError):
        cnn.predict(model, np.zeros((3, 30, 30)))


def test_training_errors():
    with pytest.raises(DataError):
        cnn.train([], TINY)
    with pytest.raises(DataError):
        cnn.train([(np.zeros((2, 30, 30)), 5)], TINY)


def test_model_round_trip(tmp_path):
    model = cnn.init_model(dataclasses.replace(TINY, seed=3, lrn_alpha=0.123))
    p1, p2 = tmp_path / "a.dtrj", tmp_path / "b.dtrj"
    cnn.save_model(model, p1)
    back = cnn.load_model(p1)
    assert back.config == model.config
    for name in model.params:
        assert back.params[name].tobytes() == model.params[name].tobytes()
    cnn.save_model(back, p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_model_file_errors(tmp_path):
    path = tmp_path / "m.dtrj"
    cnn.save_model(cnn.init_model(TINY), path)
    data = path.read_bytes()
    (tmp_path / "short").write_bytes(data[:-8])
    (tmp_path / "magic").write_bytes(b"XXXX" + data[4:])
    for name in ("short", "magic"):
        with pytest.raises(DataError):
            cnn.load_model(tmp_path / name)


def test_linear_svm_head():
    rng = np.random.default_rng(0)
    x = np.concatenate([rng.normal(-2, 1, (20, 5)), rng.normal(2, 1, (20, 5))])
    y = np.repeat([0, 1], 20)
    svm = cnn.LinearSVM().fit(x, y)
    assert (svm.predict(x) == y).mean() >= 0.95
