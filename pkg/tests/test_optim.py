import math

import numpy as np
import pytest

from decolearn.optim import AdamState, NonFiniteGradient, adam_update
from decolearn.tensor import Tensor


def adam_scalar(p, grads, lr=5e-4, b1=0.9, b2=0.999, eps=1e-8):
    """Plain-Python Adam on a single scalar, one entry of ``grads`` per step."""
    m = v = 0.0
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        p -= lr * (m / (1 - b1 ** t)) / (math.sqrt(v / (1 - b2 ** t)) + eps)
    return p


def test_single_step_matches_scalar_oracle():
    rng = np.random.default_rng(0)
    p0, g = rng.standard_normal(6), rng.standard_normal(6)
    params = {"w": Tensor(p0.copy())}
    adam_update(AdamState(), params, {"w": g})
    ref = [adam_scalar(p0[i], [g[i]]) for i in range(6)]
    np.testing.assert_allclose(params["w"].data, ref, rtol=0, atol=1e-10)


def test_several_steps_match_scalar_oracle():
    rng = np.random.default_rng(1)
    p0, gs = rng.standard_normal(4), rng.standard_normal((5, 4))
    params = {"w": Tensor(p0.copy())}
    st = AdamState(lr=1e-2)
    for g in gs:
        adam_update(st, params, {"w": g})
    ref = [adam_scalar(p0[i], gs[:, i], lr=1e-2) for i in range(4)]
    np.testing.assert_allclose(params["w"].data, ref, rtol=0, atol=1e-10)
    assert st.step == 5


def test_zero_gradient_leaves_params():
    params = {"w": Tensor(np.arange(3.0))}
    st = adam_update(AdamState(), params, {"w": np.zeros(3)})
    np.testing.assert_array_equal(params["w"].data, np.arange(3.0))
    assert st.step == 1


def test_nonfinite_gradient_names_parameter_and_changes_nothing():
    params = {"a": Tensor(np.ones(2)), "b": Tensor(np.ones(2))}
    st = AdamState()
    with pytest.raises(NonFiniteGradient, match="'b'"):
        adam_update(st, params, {"a": np.ones(2), "b": np.array([np.nan, 0.0])})
    assert st.step == 0 and not st.m
    np.testing.assert_array_equal(params["a"].data, np.ones(2))


def test_defaults():
    st = AdamState()
    assert (st.lr, st.beta1, st.beta2, st.eps) == (5e-4, 0.9, 0.999, 1e-8)
