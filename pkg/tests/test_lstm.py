import math

import numpy as np
import pytest

from nowcaster import lstm
from nowcaster.errors import DataError, TrainingError
from nowcaster.tensorize import Batch

from _oracles import gradient_check


def _sig(v):
    return 1.0 / (1.0 + math.exp(-v))


def _batch(x, y=None):
    return Batch(x, y, tuple((2000 + i, 1) for i in range(len(x))),
                 tuple(f"f{j}" for j in range(x.shape[2])))


def test_init_determinism_and_layout():
    hp = lstm.LstmHyperparams(hidden_size=8, n_layers=2)
    a, b, c = lstm.init(hp, 3, 1), lstm.init(hp, 3, 1), lstm.init(hp, 3, 2)
    assert all(np.array_equal(p, q) for p, q in zip(a.parameters(), b.parameters()))
    assert any(not np.array_equal(p, q) for p, q in zip(a.parameters(), c.parameters()))
    assert all(len(bias) == 32 for bias in a.b)
    assert a.W_x[0].shape == (32, 3) and a.W_x[1].shape == (32, 8) and a.W_h[1].shape == (32, 8)
    bound = 1 / np.sqrt(8)
    assert all(np.abs(w).max() <= bound for w in a.W_x + a.W_h)
    assert (a.b[0][8:16] == 1.0).all()


def _zero_net(f=2, h=3, layers=2, b_out=0.37):
    net = lstm.init(lstm.LstmHyperparams(hidden_size=h, n_layers=layers), f, 0)
    for p in net.parameters():
        p[...] = 0.0
    net.b_out[0] = b_out
    return net


def test_zero_weights_predict_b_out():
    net = _zero_net()
    x = np.random.default_rng(0).normal(size=(5, 4, 2))
    assert (lstm.predict(net, x) == 0.37).all()
    _, cache = lstm.forward(net, x)
    assert (cache[0][2] == 0).all()


def test_hand_unrolled_single_unit():
    hp = lstm.LstmHyperparams(hidden_size=1, n_layers=1)
    net = lstm.init(hp, 1, 0)
    net.W_x[0][:, 0] = [0.5, -0.3, 0.8, 0.2]
    net.W_h[0][:, 0] = [0.1, 0.2, 0.3, 0.4]
    net.b[0][:] = [0.05, 1.0, -0.1, 0.0]
    net.w_out[:] = [1.7]
    net.b_out[:] = [-0.2]
    x = 0.9
    i = _sig(0.5 * x + 0.05)
    g = math.tanh(0.8 * x - 0.1)
    o = _sig(0.2 * x)
    c = i * g
    h = o * math.tanh(c)
    pred = lstm.predict(net, np.array([[[x]]]))[0]
    assert abs(pred - (1.7 * h - 0.2)) < 1e-12


def test_hand_unrolled_two_steps():
    hp = lstm.LstmHyperparams(hidden_size=1, n_layers=1)
    net = lstm.init(hp, 1, 0)
    wx, wh, bb = [0.5, -0.3, 0.8, 0.2], [0.1, 0.2, 0.3, 0.4], [0.05, 1.0, -0.1, 0.0]
    net.W_x[0][:, 0], net.W_h[0][:, 0], net.b[0][:] = wx, wh, bb
    net.w_out[:], net.b_out[:] = [1.0], [0.0]
    h = c = 0.0
    for x in (0.9, -0.4):
        z = [wx[k] * x + wh[k] * h + bb[k] for k in range(4)]
        i, f, g, o = _sig(z[0]), _sig(z[1]), math.tanh(z[2]), _sig(z[3])
        c = f * c + i * g
        h = o * math.tanh(c)
    assert abs(lstm.predict(net, np.array([[[0.9], [-0.4]]]))[0] - h) < 1e-12


def test_permuting_observations_permutes_predictions():
    rng = np.random.default_rng(1)
    net = lstm.init(lstm.LstmHyperparams(hidden_size=5), 3, 4)
    x = rng.normal(size=(7, 6, 3))
    perm = rng.permutation(7)
    np.testing.assert_array_equal(lstm.predict(net, x)[perm], lstm.predict(net, x[perm]))


def test_shape_mismatch():
    net = lstm.init(lstm.LstmHyperparams(), 3, 0)
    with pytest.raises(DataError):
        lstm.predict(net, np.zeros((2, 4, 5)))


def test_perfect_predictions_have_zero_readout_gradient():
    rng = np.random.default_rng(2)
    net = lstm.init(lstm.LstmHyperparams(hidden_size=4), 2, 0)
    x = rng.normal(size=(5, 3, 2))
    y = lstm.predict(net, x)
    mse, grads = lstm.loss_and_gradients(net, x, y)
    assert mse == 0.0
    assert (grads[-1] == 0).all() and (grads[-2] == 0).all()


def test_doubling_residuals_quadruples_mse():
    rng = np.random.default_rng(3)
    net = lstm.init(lstm.LstmHyperparams(hidden_size=4), 2, 0)
    x = rng.normal(size=(5, 3, 2))
    pred = lstm.predict(net, x)
    y = rng.normal(size=5)
    m1 = lstm.loss_and_gradients(net, x, y)[0]
    m2 = lstm.loss_and_gradients(net, x, pred - 2 * (pred - y))[0]
    assert m2 == pytest.approx(4 * m1, rel=1e-10)


@pytest.mark.parametrize("seed", range(5))
def test_gradient_check(seed):
    assert gradient_check(seed) < 1e-4


def test_gradient_check_three_layers():
    assert gradient_check(7, layers=3, h=3, t=4) < 1e-4


def _learnable(n=60, t=6, f=3, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, t, f))
    y = 0.8 * x[:, -1, 0] + 0.05 * rng.normal(size=n)
    return _batch(x, (y - y.mean()) / y.std())


def test_training_learns_linear_signal():
    b = _learnable()
    net = lstm.train(b, lstm.LstmHyperparams(n_timesteps=6, hidden_size=8, n_layers=1, epochs=60,
                                             batch_size=20), seed=0)
    assert len(net.loss_history) == 61
    assert net.final_loss < 0.25 * net.loss_history[0]
    assert net.loss_history[-1] <= net.loss_history[1]


def test_training_is_deterministic():
    b = _learnable(n=20)
    hp = lstm.LstmHyperparams(hidden_size=4, epochs=5, batch_size=7)
    a, c = lstm.train(b, hp, seed=3), lstm.train(b, hp, seed=3)
    assert a.loss_history == c.loss_history
    assert all(p.tobytes() == q.tobytes() for p, q in zip(a.parameters(), c.parameters()))


def test_zero_epochs_returns_initial_network():
    b = _learnable(n=10)
    hp = lstm.LstmHyperparams(hidden_size=4, epochs=0)
    net = lstm.train(b, hp, seed=5)
    ref = lstm.init(hp, 3, 5)
    assert all(np.array_equal(p, q) for p, q in zip(net.parameters(), ref.parameters()))
    assert net.epochs_run == 0 and len(net.loss_history) == 1


def test_divergence_raises_training_error():
    rng = np.random.default_rng(4)
    x = rng.normal(size=(20, 4, 2)) * 1e150
    b = _batch(x, rng.normal(size=20) * 1e300)
    with pytest.raises(TrainingError) as info:
        lstm.train(b, lstm.LstmHyperparams(hidden_size=3, epochs=3, learning_rate=1e3), seed=0)
    assert info.value.epoch is not None


def test_predict_is_repeatable_and_matches_forward():
    b = _learnable(n=12)
    net = lstm.train(b, lstm.LstmHyperparams(hidden_size=4, epochs=2), seed=1)
    p1, p2 = lstm.predict(net, b), lstm.predict(net, b)
    assert p1.tobytes() == p2.tobytes() == lstm.forward(net, b)[0].tobytes()


def test_training_needs_targets():
    b = _learnable(n=5)
    with pytest.raises(DataError):
        lstm.train(_batch(b.inputs), lstm.LstmHyperparams(epochs=1))


def test_hyperparameter_validation():
    with pytest.raises(ValueError):
        lstm.LstmHyperparams(hidden_size=0)
    with pytest.raises(ValueError):
        lstm.LstmHyperparams(learning_rate=0.0)
