import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mlpr.autodiff import Graph, Tensor
from mlpr.errors import ContractError, NumericError
from mlpr.objective import (
    Adam,
    bce_loss,
    combine_fixed,
    combine_uncertainty,
    uncertainty_sigma_form,
)


def _bce(yhat, y):
    return bce_loss(Graph(), Tensor(np.asarray(yhat, float)), y).item()


def test_bce_examples():
    assert _bce([0.5], [1]) == pytest.approx(math.log(2), abs=1e-15)
    assert _bce([1.0, 0.0], [1, 0]) <= 1e-11
    with pytest.raises(ContractError):
        _bce([0.5], [0.3])


def test_bce_matches_scalar_loop():
    rng = np.random.default_rng(0)
    p = rng.random(50)
    y = rng.integers(0, 2, 50)
    want = 0.0
    for pi, yi in zip(p, y):
        pi = min(max(pi, 1e-12), 1 - 1e-12)
        want -= yi * math.log(pi) + (1 - yi) * math.log(1 - pi)
    assert abs(_bce(p, y) - want / 50) < 1e-12


def test_bce_sample_weight_is_weighted_mean():
    p, y, w = np.array([0.2, 0.7]), np.array([1, 1]), np.array([3.0, 1.0])
    got = bce_loss(Graph(), Tensor(p), y, w).item()
    assert got == pytest.approx(-(3 * math.log(0.2) + math.log(0.7)) / 4, abs=1e-14)


def _losses(vals):
    return [Tensor(v) for v in vals]


def test_combine_fixed_examples():
    g = Graph()
    assert combine_fixed(g, _losses([0.3, 0.9, 1.7]), (1, 0, 0)).item() == 0.3
    total = combine_fixed(g, _losses([0.6] * 3), (1 / 3, 1 / 3, 1 / 3)).item()
    assert total == pytest.approx(0.6, abs=1e-15)


def test_combine_uncertainty_at_zero_is_half_sum():
    L = [0.31, 0.77, 1.9]
    got = combine_uncertainty(Graph(), _losses(L), Tensor(np.zeros(3))).item()
    assert got == (L[0] + L[1] + L[2]) / 2


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 5), min_size=3, max_size=3),
       st.lists(st.floats(-3, 3), min_size=3, max_size=3))
def test_s_form_equals_sigma_form(L, s):
    got = combine_uncertainty(Graph(), _losses(L), Tensor(np.array(s))).item()
    want = uncertainty_sigma_form(L, [math.exp(x / 2) for x in s])
    assert abs(got - want) < 1e-12 * max(1.0, abs(want))


def test_uncertainty_gradient_wrt_s():
    L = [0.5, 1.0, 2.0]
    s = Tensor(np.array([0.1, -0.2, 0.3]), requires_grad=True)
    g = Graph()
    g.backward(combine_uncertainty(g, _losses(L), s))
    want = -0.5 * np.exp(-s.data) * np.array(L) + 0.5
    np.testing.assert_allclose(s.grad, want, rtol=1e-14)


def test_adam_zero_gradient_leaves_parameters():
    p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
    opt = Adam({"p": p}, lr=0.1)
    opt.step()
    np.testing.assert_array_equal(p.data, [1.0, -2.0])


def test_adam_first_step_is_lr():
    p = Tensor(np.array([1.0]), requires_grad=True)
    opt = Adam({"p": p}, lr=0.01)
    opt.step({"p": np.array([3.0])})
    assert p.data[0] == pytest.approx(0.99, abs=1e-8)


def test_adam_minimizes_square():
    x = Tensor(np.array([1.0]), requires_grad=True)
    opt = Adam({"x": x}, lr=0.1)
    for _ in range(100):
        opt.step({"x": 2 * x.data})
    assert abs(x.data[0]) < 0.1


def test_adam_non_finite_gradient_names_parameter():
    p = Tensor(np.ones(2), requires_grad=True)
    opt = Adam({"tower0/layer0/weight": p})
    with pytest.raises(NumericError, match="tower0/layer0/weight"):
        opt.step({"tower0/layer0/weight": np.array([np.nan, 0.0])})
    np.testing.assert_array_equal(p.data, 1.0)
