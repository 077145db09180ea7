import math

import numpy as np
import pandas as pd
import pytest

from src.experiment_harness import (
    CellSpec,
    SweepResult,
    bias_ranges,
    build_net,
    direction_set,
    fit_rate,
    fit_table,
    generate_data,
    get_target,
    initialize,
    make_basis_1d,
    make_basis_2d,
    make_basis_3d,
    median_errors,
    reference_seeds,
    resolve_strategy,
    run_cell,
    run_k_study,
    run_sweep,
    scale_defaults,
    step_rate_errors,
    sweep_cells,
)
from src.run_config import RunConfig, write_versioned_csv
from src.sweep_store import SweepStore


@pytest.fixture
def quick_config(tmp_path):
    return RunConfig(command="sweep", epochs=3, n_train=32, n_test=20, workers=1,
                     db_path=str(tmp_path / "sweeps.db"), output_dir=str(tmp_path))


def test_target_aliases():
    assert get_target("sin1d").name == "neg_sin2pi"
    assert get_target("sin2d").dimension == 2
    assert get_target("sin3d").dimension == 3
    with pytest.raises(ValueError, match="Valid targets"):
        get_target("cosine")


def test_unit_interval_pullback():
    f = get_target("sin1d").on_unit_interval()
    u = np.array([0.0, 0.125, 0.5, 1.0])
    np.testing.assert_allclose(f(u), -np.sin(2 * np.pi * (-1 + 2 * u)), atol=1e-15)
    assert get_target("linear").on_unit_interval()(0.25) == 0.25
    with pytest.raises(ValueError):
        get_target("sin2d").on_unit_interval()


def test_one_dimensional_basis():
    basis = make_basis_1d(2)
    assert len(basis) == 4
    assert basis.locations.tolist() == [0.0, 0.0, 1.0, 1.0]
    assert basis.signs.tolist() == [1, -1, 1, -1]
    with pytest.raises(ValueError):
        make_basis_1d(1)


def test_direction_sets():
    assert direction_set(1) == [(1,)]
    assert len(direction_set(2)) == 4
    three = direction_set(3)
    assert len(three) == 13 and len(set(three)) == 13
    assert all(next(c for c in v if c) > 0 for v in three)
    assert len(make_basis_3d(2)) == 52
    with pytest.raises(ValueError):
        direction_set(4)


def test_bias_ranges_widen_diagonals():
    ranges = bias_ranges(direction_set(2), (-1.0, 1.0), 0.75)
    assert ranges[0] == pytest.approx((-1.75, 1.75))
    assert ranges[2] == pytest.approx((-1.75 * math.sqrt(2), 1.75 * math.sqrt(2)))
    assert bias_ranges([(1,)], (0.0, 1.0), 0.0) == [(0.0, 1.0)]


def test_two_dimensional_basis_covers_the_square():
    basis = make_basis_2d(5, t_b=0.75)
    assert len(basis) == 40
    corners = np.array([[-1, -1], [-1, 1], [1, -1], [1, 1]], dtype=float)
    for axis in map(np.asarray, direction_set(2)):
        rows = np.all(basis.axes == axis, axis=1)
        projected = corners @ (axis / np.linalg.norm(axis))
        assert basis.locations[rows].min() < projected.min()
        assert basis.locations[rows].max() > projected.max()


def test_equidistant_initialization_is_exact():
    B, W = initialize("equidistant", 3, np.random.default_rng(0))
    assert B.tolist() == [0.0, 0.5, 1.0]
    expected = np.array([0.0, -0.0, 0.5, -0.5, 1.0, -1.0])
    assert W.view(np.uint64).tolist() == expected.view(np.uint64).tolist()


def test_pairwise_random_keeps_pairs():
    B, W = initialize("pairwise", 50, np.random.default_rng(1))
    np.testing.assert_array_equal(B, np.linspace(0, 1, 50))
    np.testing.assert_array_equal(W[0::2], -W[1::2])
    assert np.all((W[0::2] >= 0) & (W[0::2] <= 1))


def test_random_strategies_respect_their_bounds():
    rng = np.random.default_rng(2)
    n = 40
    B, W = initialize("xavier_uniform_all", n, rng)
    assert np.all(np.abs(B) <= math.sqrt(6 / (1 + 2 * n)))
    assert np.all(np.abs(W) <= math.sqrt(6 / (2 * n + 1)))
    B, W = initialize("total_random", n, rng, ranges=((-2.0, 2.0),))
    assert np.all(np.abs(B) <= 2.0) and np.all(np.abs(W) <= 1.0)
    assert len(W) == 2 * n
    B, W = initialize("W_only_random", n, rng)
    np.testing.assert_array_equal(B, np.linspace(0, 1, n))
    B, W = initialize("B_only_random", n, rng)
    np.testing.assert_array_equal(W, np.column_stack((np.linspace(0, 1, n), -np.linspace(0, 1, n))).reshape(-1))


def test_initialization_is_seeded():
    first = initialize("he_normal_all", 10, np.random.default_rng(5), ranges=((-1, 1), (-1, 1)), input_dim=2)
    second = initialize("he_normal_all", 10, np.random.default_rng(5), ranges=((-1, 1), (-1, 1)), input_dim=2)
    assert np.array_equal(first[0], second[0]) and np.array_equal(first[1], second[1])
    assert len(first[0]) == 20 and len(first[1]) == 40


def test_strategy_names():
    assert resolve_strategy("random") == "total_random"
    with pytest.raises(ValueError, match="Valid strategies"):
        resolve_strategy("orthogonal")


def test_build_net_two_dimensional():
    net = build_net(get_target("sin2d"), "equidistant", 4, np.random.default_rng(0))
    assert net.input_dim == 2
    assert len(net.theta) == 32
    assert net.n == 4
    assert net.multiset_preserved()


def test_reference_seeds_and_scales():
    assert reference_seeds(3) == [2022, 3022, 4022]
    assert scale_defaults(1)["n_train"] == 1600
    assert (scale_defaults(2)["n_train"], scale_defaults(2)["n_test"]) == (12800, 3200)
    assert (scale_defaults(3, full_scale=True)["n_train"], scale_defaults(3, full_scale=True)["epochs"]) \
        == (51200, 6400)
    assert scale_defaults(2, desk_scale=0.5)["n_test"] == 1600


def test_generate_data_sizes_and_determinism():
    target = get_target("sin1d")
    train, test = generate_data(target, 100, 50)
    assert len(train) == 100 and len(test) == 50
    assert np.all((train.x >= -1) & (train.x <= 1))
    np.testing.assert_array_equal(test.x, np.linspace(-1, 1, 50))
    again, _ = generate_data(target, 100, 50)
    np.testing.assert_array_equal(train.x, again.x)
    _, grid = generate_data(get_target("sin2d"), 64, 100)
    assert grid.x.shape == (100, 2)
    _, grid = generate_data(get_target("sin3d"), 64, 1000)
    assert grid.x.shape == (1000, 3)
    with pytest.raises(ValueError):
        generate_data(target, 0, 50)


def test_fit_rate_recovers_exact_power_law():
    fit = fit_rate([(n, 3.0 * n ** -0.5) for n in (10, 20, 40, 80)])
    assert fit.slope == pytest.approx(-0.5, abs=1e-12)
    assert fit.intercept == pytest.approx(math.log(3.0), abs=1e-12)
    assert fit.ci_low <= fit.slope <= fit.ci_high
    assert fit.points == 4


def test_fit_rate_needs_two_widths():
    with pytest.raises(ValueError):
        fit_rate([(10, 0.1)])
    with pytest.raises(ValueError):
        fit_rate([(10, 0.1), (10, 0.2)])
    with pytest.raises(ValueError):
        fit_rate([(10, 0.1), (20, 0.0)])
    two = fit_rate([(10, 0.1), (40, 0.05)])
    assert two.ci_low == two.ci_high == two.slope


def test_step_rate_is_near_one_half():
    fit = fit_rate(step_rate_errors())
    assert -0.65 <= fit.slope <= -0.35
    with pytest.raises(ValueError):
        step_rate_errors([3])


def test_cell_keys_ignore_sweep_lists(quick_config):
    small = sweep_cells(["sin1d"], ["equidistant"], [4, 8], [2022], quick_config)
    large = sweep_cells(["sin1d"], ["equidistant"], [4, 8, 16], [2022, 3022], quick_config)
    assert {c.key for c in small} <= {c.key for c in large}
    changed = sweep_cells(["sin1d"], ["equidistant"], [4], [2022], RunConfig(command="sweep", epochs=4))
    assert changed[0].key != small[0].key


def test_sweep_cells_expand_k_and_baseline(quick_config):
    quick_config.k_list = (1, 5)
    quick_config.with_baseline = True
    cells = sweep_cells(["sin1d"], ["pairwise"], [4], 2, quick_config)
    assert len(cells) == 2 * (2 + 1)
    assert {c.seed for c in cells} == {2022, 3022}
    assert {c.strategy for c in cells} == {"pairwise_random"}
    assert sorted(c.k for c in cells if c.mode == "laperm") == [1.0, 1.0, 5.0, 5.0]


def test_run_cell_reports_failures():
    outcome = run_cell(CellSpec(target="nope", strategy="equidistant", n=4, seed=1, k=5))
    assert set(outcome) == {"key", "error"}
    assert "ValueError" in outcome["error"]


def test_empty_sweep(quick_config):
    result = run_sweep(["sin1d"], ["equidistant"], [], 1, quick_config, show_progress=False)
    assert result.rows.empty and result.trained == 0


def test_sweep_resumes_completed_cells(quick_config):
    store = SweepStore(quick_config.db_path)
    first = run_sweep(["sin1d"], ["equidistant"], [4, 8], [2022], quick_config, store, show_progress=False)
    assert (first.trained, first.skipped, first.failed) == (2, 0, 0)
    assert first.rows["multiset_ok"].all()
    assert first.rows["n"].tolist() == [4, 8]
    second = run_sweep(["sin1d"], ["equidistant"], [4, 8, 16], [2022], quick_config, store, show_progress=False)
    assert (second.trained, second.skipped) == (1, 2)
    assert len(second.rows) == 3
    assert len(second.fits) == 2
    assert store.status_counts()["completed"] == 3


def test_sweep_result_csv_round_trip(quick_config, tmp_path):
    result = run_sweep(["sin1d"], ["equidistant"], [4, 8], [2022], quick_config, show_progress=False)
    result.write(str(tmp_path / "out"))
    loaded = SweepResult.from_csv(str(tmp_path / "out" / "sweep_results.csv"))
    assert len(loaded.rows) == 2
    assert loaded.fits["metric"].tolist() == ["sup_error", "l2_error"]
    with pytest.raises(ValueError):
        SweepResult.from_csv(str(tmp_path / "out" / "rate_fit.csv"))


def test_median_errors_over_seeds():
    rows = pd.DataFrame({
        "target": ["t"] * 6, "strategy": ["s"] * 6, "mode": ["laperm"] * 6, "k": [5.0] * 6,
        "n": [10, 10, 10, 20, 20, 20], "seed": [1, 2, 3, 1, 2, 3],
        "sup_error": [0.4, 0.2, 0.3, 0.2, 0.1, 0.15], "l2_error": [0.2, 0.1, 0.15, 0.1, 0.05, 0.075],
    })
    medians = median_errors(rows)
    assert medians["sup_error"].tolist() == [0.3, 0.15]
    fits = fit_table(rows)
    assert fits.loc[fits["metric"] == "sup_error", "slope"].iloc[0] == pytest.approx(-1.0)
    assert median_errors(rows.iloc[0:0]).empty


def test_k_study_rows(quick_config):
    frame = run_k_study("sin1d", quick_config, ks=(1, 5), n=4, seed=2022)
    assert frame["k"].tolist() == [1.0, 5.0]
    assert (frame["sup_error"] > 0).all()


def test_versioned_csv_schema_check(tmp_path):
    path = tmp_path / "other.csv"
    write_versioned_csv(pd.DataFrame({"a": [1]}), str(path), "something_else", 3)
    with pytest.raises(ValueError, match="expected"):
        SweepResult.from_csv(str(path))


def test_he_strategies_draw_at_hidden_width_scale():
    n = 400
    B, W = initialize("he_normal_all", n, np.random.default_rng(4))
    assert np.std(B) == pytest.approx(math.sqrt(2 / (2 * n)), rel=0.15)
    assert np.std(W) == pytest.approx(math.sqrt(2 / (2 * n)), rel=0.1)
    B, _ = initialize("he_W_only", n, np.random.default_rng(4))
    assert np.all((B >= 0) & (B <= 1))


@pytest.mark.parametrize("strategy", ["equidistant", "xavier_W_only", "he_W_only", "total_random"])
def test_build_net_starts_with_unit_effective_coefficients(strategy):
    net = build_net(get_target("sin1d"), strategy, 20, np.random.default_rng(0))
    assert net.gamma * np.max(np.abs(net.theta)) == pytest.approx(1.0)
    if strategy == "equidistant":
        assert net.gamma == 1.0


def test_explicit_epochs_survive_full_scale(quick_config):
    quick_config.full_scale = True
    assert sweep_cells(["sin1d"], ["equidistant"], [4], [2022], quick_config)[0].epochs == 3
    quick_config.epochs = None
    assert sweep_cells(["sin1d"], ["equidistant"], [4], [2022], quick_config)[0].epochs == 6400
    quick_config.full_scale = False
    assert sweep_cells(["sin1d"], ["equidistant"], [4], [2022], quick_config)[0].epochs == 2000


def test_k_study_accepts_seed_zero(quick_config):
    frame = run_k_study("sin1d", quick_config, ks=(5,), n=4, seed=0)
    assert frame["seed"].tolist() == [0]


@pytest.fixture(scope="module")
def desk_sweep(tmp_path_factory):
    """sin1d at desk scale: equidistant over three widths, every other strategy at n=160."""
    tmp = tmp_path_factory.mktemp("desk_sweep")
    cfg = RunConfig(command="sweep", workers=1, db_path=str(tmp / "sweeps.db"), output_dir=str(tmp))
    store = SweepStore(cfg.db_path)
    run_sweep(["sin1d"], ["equidistant"], [40, 80, 160], 3, cfg, store, show_progress=False)
    others = ["xavier_W_only", "he_W_only", "xavier_uniform_all", "he_normal_all"]
    result = run_sweep(["sin1d"], ["equidistant", *others], [160], 3, cfg, store, show_progress=False)
    assert result.trained == 12 and result.failed == 0
    return store.results_frame()


def test_sup_error_falls_with_width(desk_sweep):
    rows = desk_sweep[desk_sweep["strategy"] == "equidistant"]
    medians = median_errors(rows).sort_values("n")
    assert medians["n"].tolist() == [40, 80, 160]
    assert np.all(np.diff(medians["sup_error"].to_numpy()) < 0)
    assert fit_rate(zip(medians["n"], medians["sup_error"])).slope <= -0.25
    assert rows["multiset_ok"].all()


def test_initialization_ordering_at_width_160(desk_sweep):
    medians = median_errors(desk_sweep[desk_sweep["n"] == 160]).set_index("strategy")["sup_error"]
    assert medians["xavier_W_only"] <= 2 * medians["equidistant"]
    assert medians["he_W_only"] <= 2 * medians["equidistant"]
    assert medians["xavier_uniform_all"] >= 5 * medians["xavier_W_only"]
    assert medians["he_normal_all"] >= 5 * medians["xavier_W_only"]
