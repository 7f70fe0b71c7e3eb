import numpy as np
import pytest

from hiveq.errors import ConfigurationError
from hiveq.nets import ParamSet
from hiveq.optim import RMSprop, rmsprop_update

from oracles import rmsprop_scalar_sequence


def test_zero_gradient_leaves_params_and_decays_accumulator():
    params = ParamSet({"w": np.array([1.0, -2.0])})
    opt = RMSprop(params, learning_rate=0.1, alpha=0.9, eps=1e-8)
    opt.square_avg["w"][:] = 4.0
    before = params["w"].value.copy()
    opt.step()  # no grads set -> g = 0
    assert np.array_equal(params["w"].value, before)
    assert np.allclose(opt.square_avg["w"], 3.6)  # alpha * 4


def test_alpha_zero_closed_form():
    new_p, new_sq = rmsprop_update(
        np.array(1.0), np.array(1.0), np.array(0.0), learning_rate=0.5, alpha=0.0, eps=0.0
    )
    assert new_p == pytest.approx(0.5)
    assert new_sq == pytest.approx(1.0)


def test_three_step_sequence_matches_scalar_recurrence():
    lr, alpha, eps = 5e-4, 0.99, 1e-5
    grads = [0.3, -1.2, 0.7]
    params = ParamSet({"p": np.array(1.0)})
    opt = RMSprop(params, learning_rate=lr, alpha=alpha, eps=eps)
    got = []
    for g in grads:
        params["p"].grad = np.array(g)
        opt.step()
        got.append(float(params["p"].value))
    expected = rmsprop_scalar_sequence(1.0, grads, lr, alpha, eps)
    assert np.allclose(got, expected, rtol=0, atol=1e-12)


def test_hyperparameters_must_be_positive():
    params = ParamSet({"p": np.array(1.0)})
    for kwargs in ({"learning_rate": 0}, {"alpha": -1}, {"eps": 0}):
        with pytest.raises(ConfigurationError):
            RMSprop(params, **kwargs)


def test_subset_of_names_only_updates_those():
    params = ParamSet({"a": np.array(1.0), "b": np.array(1.0)})
    opt = RMSprop(params, names=["a"], learning_rate=0.1, alpha=0.9, eps=1e-8)
    params["a"].grad = np.array(1.0)
    params["b"].grad = np.array(1.0)
    opt.step()
    assert params["a"].value != 1.0
    assert params["b"].value == 1.0


def test_state_roundtrip():
    params = ParamSet({"a": np.ones(3)})
    opt = RMSprop(params)
    params["a"].grad = np.ones(3)
    opt.step()
    state = opt.state_arrays()
    opt2 = RMSprop(params)
    opt2.load_state_arrays(state)
    assert np.array_equal(opt2.square_avg["a"], opt.square_avg["a"])
    with pytest.raises(ConfigurationError):
        opt2.load_state_arrays({"zzz": np.ones(1)})
