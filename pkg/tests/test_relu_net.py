import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from src.experiment_harness import make_basis_2d
from src.relu_net import (
    Activation,
    BasisLayer,
    DimensionMismatchError,
    DomainWarning,
    EvalGrid,
    PermutationPlan,
    ReluNet,
    direction_tag,
    eval_grid,
    forward,
    forward_batch,
    gradients,
    l2_error,
    mse_loss,
    multiset_equal,
    parse_direction_tag,
    sup_error,
    uniform_grid,
)
from src.step_approximators import step_error_l2, step_matching


def _single_pair_net(domain=(-1.0, 1.0)):
    return ReluNet(basis=BasisLayer.paired_1d([0.0]), theta=[1.0, -1.0], domain=domain)


def _step_net():
    block = step_matching([0.1, 0.2, 0.3, 0.4])
    return ReluNet(basis=BasisLayer.paired_1d(block.locations), theta=block.coefficients())


def test_forward_single_kink_identity():
    net = _single_pair_net()
    assert forward(net, 0.5) == 0.5
    assert forward(net, -0.5) == -0.5


def test_forward_step_matched_left_branch():
    assert forward(_step_net(), 0.05) == pytest.approx(-0.04, abs=1e-15)
    assert forward(_step_net(), 0.9) == pytest.approx(0.04, abs=1e-15)


def test_forward_applies_alpha_and_gamma():
    net = ReluNet(basis=BasisLayer.paired_1d([0.0, 0.5, 1.0]), theta=[1, 0, 0, 0, 0, 0], alpha=0.5, gamma=2.0)
    assert forward(net, 0.25) == pytest.approx(1.0)


def test_forward_rejects_wrong_dimension():
    with pytest.raises(DimensionMismatchError):
        forward(_single_pair_net(), [0.1, 0.2])


def test_forward_warns_outside_domain():
    net = _single_pair_net(domain=(0.0, 1.0))
    with pytest.warns(DomainWarning):
        forward(net, 1.5)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        forward(net, 0.5)


@settings(max_examples=50, deadline=None)
@given(
    st.lists(st.floats(0.0, 1.0), min_size=1, max_size=12),
    st.integers(0, 2**32 - 1),
    st.sampled_from([Activation(), Activation("leaky", 0.01), Activation("leaky", 0.3)]),
)
def test_prefix_sum_evaluation_matches_dense_features(locations, seed, activation):
    rng = np.random.default_rng(seed)
    basis = BasisLayer.paired_1d(locations)
    net = ReluNet(basis=basis, theta=rng.normal(size=len(basis)), alpha=0.3, gamma=-1.7, activation=activation)
    x = np.concatenate((rng.uniform(0.0, 1.0, 50), np.asarray(locations)))
    dense = net.alpha + net.gamma * (basis.features(x, activation) @ net.theta)
    np.testing.assert_allclose(forward_batch(net, x), dense, rtol=1e-9, atol=1e-10)


def test_leaky_activation_negative_branch():
    act = Activation("leaky", 0.1)
    np.testing.assert_allclose(act(np.array([-2.0, 3.0])), [-0.2, 3.0])
    with pytest.raises(ValueError):
        Activation("leaky", 1.5)


def test_forward_is_linear_between_kinks():
    rng = np.random.default_rng(7)
    locations = np.sort(rng.uniform(0, 1, 6))
    net = ReluNet(basis=BasisLayer.paired_1d(locations), theta=rng.normal(size=12))
    for left, right in zip(locations[:-1], locations[1:]):
        a, b = left + 0.25 * (right - left), left + 0.75 * (right - left)
        mid = (a + b) / 2
        assert forward(net, mid) == pytest.approx((forward(net, a) + forward(net, b)) / 2, abs=1e-10)


def test_basis_homogeneity():
    basis = BasisLayer.paired_1d([0.3])
    x = np.array([0.1, 0.5, 0.9])
    scaled = 0.3 + 2.5 * (x - 0.3)
    np.testing.assert_allclose(basis.features(scaled), 2.5 * basis.features(x))


def test_zero_residual_gives_zero_gradients():
    rng = np.random.default_rng(3)
    net = ReluNet(basis=BasisLayer.paired_1d(rng.uniform(0, 1, 5)), theta=rng.normal(size=10), alpha=0.2)
    x = rng.uniform(0, 1, 8)
    features = net.basis.features(x)
    y = net.alpha + net.gamma * (features @ net.theta)
    d_theta, d_alpha, d_gamma = gradients(net, x, y, features)
    assert np.all(d_theta == 0.0) and d_alpha == 0.0 and d_gamma == 0.0


def test_single_point_gradient_is_twice_residual_times_basis():
    net = ReluNet(basis=BasisLayer.paired_1d([0.2, 0.6]), theta=[0.5, -0.1, 0.3, 0.2])
    x, y = np.array([0.4]), np.array([1.0])
    residual = forward(net, 0.4) - 1.0
    d_theta, _, _ = gradients(net, x, y)
    np.testing.assert_allclose(d_theta, 2 * residual * net.basis.features(x)[0])


def test_gradients_reject_empty_batch():
    with pytest.raises(ValueError):
        gradients(_single_pair_net(), np.zeros(0), np.zeros(0))


@pytest.mark.parametrize("dimension", [1, 2])
def test_gradients_match_central_differences(dimension):
    rng = np.random.default_rng(2022 + dimension)
    h = 1e-6
    for _ in range(20):
        if dimension == 1:
            basis = BasisLayer.paired_1d(rng.uniform(-1, 1, 6))
            x = rng.uniform(-1, 1, 50)
        else:
            basis = make_basis_2d(3, t_b=0.75)
            x = rng.uniform(-1, 1, (50, 2))
        net = ReluNet(basis=basis, theta=rng.normal(size=len(basis)), alpha=rng.normal(), gamma=rng.normal(),
                      domain=(-1.0, 1.0))
        y = rng.normal(size=len(x))
        d_theta, d_alpha, d_gamma = gradients(net, x, y)

        def loss_at(theta=net.theta, alpha=net.alpha, gamma=net.gamma):
            candidate = ReluNet(basis=basis, theta=theta, alpha=alpha, gamma=gamma, domain=(-1.0, 1.0))
            return mse_loss(candidate, x, y)

        numeric = np.empty_like(d_theta)
        for i in range(len(numeric)):
            up, down = net.theta.copy(), net.theta.copy()
            up[i] += h
            down[i] -= h
            numeric[i] = (loss_at(theta=up) - loss_at(theta=down)) / (2 * h)
        np.testing.assert_allclose(d_theta, numeric, rtol=1e-5, atol=1e-7)
        assert d_alpha == pytest.approx((loss_at(alpha=net.alpha + h) - loss_at(alpha=net.alpha - h)) / (2 * h),
                                        rel=1e-5, abs=1e-7)
        assert d_gamma == pytest.approx((loss_at(gamma=net.gamma + h) - loss_at(gamma=net.gamma - h)) / (2 * h),
                                        rel=1e-5, abs=1e-7)


def test_json_round_trip_is_bit_exact(tmp_path):
    rng = np.random.default_rng(11)
    basis = make_basis_2d(2, t_b=0.75)
    theta = rng.normal(size=len(basis))
    net = ReluNet(basis=basis, theta=theta, alpha=1 / 3, gamma=np.pi, initial_multiset=theta[::-1].copy(),
                  activation=Activation("leaky", 0.01), domain=(-1.0, 1.0))
    path = tmp_path / "net.json"
    net.save_json(str(path))
    loaded = ReluNet.load_json(str(path))
    assert loaded.theta.view(np.uint64).tolist() == net.theta.view(np.uint64).tolist()
    assert loaded.alpha == net.alpha and loaded.gamma == net.gamma
    assert np.array_equal(loaded.basis.axes, net.basis.axes)
    assert np.array_equal(loaded.basis.signs, net.basis.signs)
    assert loaded.activation == net.activation
    assert loaded.n == 2


def test_direction_tags():
    assert direction_tag((1,), 1) == "plus"
    assert direction_tag((1,), -1) == "minus"
    assert direction_tag((1, -1), 1) == "+x-y"
    assert direction_tag((1, -1), -1) == "-x+y"
    assert parse_direction_tag("-x+y", 2) == ((1, -1), -1)


def test_multiset_equal_distinguishes_signed_zero():
    assert multiset_equal([0.0, 1.0, -1.0], [-1.0, 0.0, 1.0])
    assert not multiset_equal([0.0], [-0.0])
    assert not multiset_equal([1.0, 2.0], [1.0, 2.0, 2.0])


def test_permutation_plan_composition():
    rng = np.random.default_rng(5)
    values = rng.normal(size=9)
    first = PermutationPlan(rng.permutation(9), "a")
    second = PermutationPlan(rng.permutation(9), "b")
    assert np.array_equal(first.compose(second).apply(values), second.apply(first.apply(values)))
    with pytest.raises(ValueError):
        PermutationPlan([0, 0, 1])


def test_identical_functions_have_zero_error():
    net = ReluNet(basis=BasisLayer.paired_1d([0.0, 1.0]), theta=[1.0, 0.0, 0.0, 0.0])
    grid = eval_grid(net, uniform_grid())
    assert sup_error(grid, lambda x: x) == 0.0
    assert l2_error(grid, lambda x: x) == pytest.approx(0.0, abs=1e-15)


def test_constant_offset_error():
    grid = EvalGrid(points=uniform_grid(), values=np.full(10001, 0.3))
    assert sup_error(grid, lambda x: np.zeros_like(x)) == pytest.approx(0.3)
    assert l2_error(grid, lambda x: np.zeros_like(x)) == pytest.approx(0.3)


def test_step_l2_error_on_grid_matches_closed_form():
    block = step_matching([0.1, 0.2, 0.3, 0.4])
    net = ReluNet(basis=BasisLayer.paired_1d(block.locations), theta=block.coefficients())
    grid = eval_grid(net, uniform_grid())
    ideal = lambda x: np.where(x > block.center, block.height / 2, -block.height / 2)
    assert l2_error(grid, ideal) == pytest.approx(step_error_l2(block.locations), rel=1e-2)


def test_eval_grid_requires_increasing_points():
    with pytest.raises(ValueError):
        EvalGrid(points=[0.0, 0.5, 0.5], values=[1, 2, 3])
