import os
import numpy as np
import pytest

from src.entropy.bell_sim import (
    BehaviorModel,
    BellSimulator,
    ChshStats,
    SpacetimeConfig,
    Trial,
    TrialBatch,
    cell_index,
    check_spacetime,
    chsh_value,
    dump_trials,
    expected_win_probability,
    frequencies_from_counts,
    load_counts,
    load_trials,
    running_chsh,
    update_stats,
    update_stats_batch,
)

DATA_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), "..", "data")


def test_chsh_value():
    assert chsh_value(0.75) == 2.0
    assert chsh_value(1.0) == 4.0
    with pytest.raises(ValueError):
        chsh_value(1.5)


def test_expected_value_of_reference_model(model):
    s = chsh_value(expected_win_probability(model))
    assert 2.0 < s < 2.02


def test_deterministic_model():
    m = BehaviorModel.deterministic(0, 0)
    # a = b = 0 wins on every setting but x = y = 1
    assert expected_win_probability(m) == pytest.approx(0.75)
    batch = BellSimulator(m, np.random.default_rng(0)).trials(100)
    assert not batch.a.any() and not batch.b.any()


def test_invalid_model():
    with pytest.raises(ValueError):
        BehaviorModel(np.full((4, 4), 0.3))
    with pytest.raises(ValueError):
        BehaviorModel(np.full((4, 4), 0.25), np.array([1.0, 0.0, 0.0, 0.5]))


def test_simulated_chsh_within_error(model):
    sim = BellSimulator(model, np.random.default_rng(42))
    batch = sim.trials(1_000_000)
    stats = update_stats_batch(ChshStats(), batch)
    expected = chsh_value(expected_win_probability(model))
    assert 1.99 <= stats.s_bar <= 2.03
    assert abs(stats.s_bar - expected) <= 3 * stats.sigma()


def test_conditional_frequency_of_first_cell(model):
    batch = BellSimulator(model, np.random.default_rng(3)).trials(400_000)
    cells = np.asarray(batch.cells)
    setting = cells >> 2 == 0
    freq = np.mean(cells[setting] == 0)
    assert model.nu[0, 0] == pytest.approx(0.95682221443247694737)
    assert freq == pytest.approx(0.9568, abs=0.003)


def test_cell_frequencies(model):
    batch = BellSimulator(model, np.random.default_rng(1)).trials(200_000)
    freq = np.bincount(batch.cells, minlength=16) / len(batch)
    assert np.allclose(freq, model.joint(), atol=4e-3)


def test_trial_indices(model):
    sim = BellSimulator(model, np.random.default_rng(2))
    first = sim.trials(10)
    t = sim.next_trial()
    second = sim.trials(5)
    assert first.first_index == 1 and first.last_index == 10
    assert t.index == 11
    assert second.first_index == 12
    assert [t.index for t in second] == list(range(12, 17))


def test_batch_and_single_stats_agree(model):
    batch = BellSimulator(model, np.random.default_rng(3)).trials(1000)
    stats = ChshStats()
    for t in batch:
        stats = update_stats(stats, t)
    assert stats == update_stats_batch(ChshStats(), batch)
    assert running_chsh(batch)[-1] == pytest.approx(stats.s_bar)


def test_trial_cell():
    t = Trial(1, 0, 1, 0, 1)
    assert t.cell == cell_index(1, 0, 1, 0) == 10
    assert not t.wins
    assert TrialBatch.from_trials([t]).cells[0] == 10


def test_reference_spacetime_holds():
    results = check_spacetime(SpacetimeConfig.reference())
    assert [r.name for r in results] == ["locality_1", "locality_2", "independence_a", "independence_b"]
    assert all(r.holds for r in results)
    assert all(r.slack_ns > 0 for r in results)


def test_slow_switching_breaks_locality():
    cfg = SpacetimeConfig.reference()
    cfg.t_delay1 = 400.0
    results = {r.name: r for r in check_spacetime(cfg)}
    assert not results["locality_1"].holds
    assert results["locality_2"].holds


def test_zero_distances_fail_every_condition():
    cfg = SpacetimeConfig.reference()
    cfg.dist_sa = cfg.dist_sb = 0.0
    assert not any(r.holds for r in check_spacetime(cfg))


def test_zero_delays_leave_light_travel_slack():
    cfg = SpacetimeConfig(30.0, 30.0, 30.0, 30.0, *([0.0] * 9))
    results = {r.name: r for r in check_spacetime(cfg)}
    for name in ("locality_1", "locality_2"):
        assert results[name].slack_ns == pytest.approx(60.0 / cfg.c)
        assert results[name].holds
    for name in ("independence_a", "independence_b"):
        assert results[name].slack_ns == pytest.approx(0.0, abs=1e-9)
        assert not results[name].holds


@pytest.mark.parametrize("shift", [1.0, 25.0, 120.0])
def test_slack_is_affine_in_the_delay(shift):
    base = {r.name: r.slack_ns for r in check_spacetime(SpacetimeConfig.reference())}
    cfg = SpacetimeConfig.reference()
    cfg.t_delay1 += shift
    moved = {r.name: r.slack_ns for r in check_spacetime(cfg)}
    assert moved["locality_1"] == pytest.approx(base["locality_1"] - shift)
    assert moved["independence_a"] == pytest.approx(base["independence_a"] + shift)
    assert moved["locality_2"] == pytest.approx(base["locality_2"])
    assert moved["independence_b"] == pytest.approx(base["independence_b"])


def test_negative_delay_rejected():
    with pytest.raises(ValueError):
        SpacetimeConfig(1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, -1)


def test_training_counts(model):
    report = frequencies_from_counts(load_counts(f"{DATA_DIR}/training_counts.txt"))
    assert report.max_violation < 1e-3
    assert np.allclose(report.nu_hat, model.nu, atol=1e-3)


def test_zero_setting_rejected():
    counts = np.ones((2, 2, 2, 2))
    counts[1, 1] = 0
    with pytest.raises(ValueError):
        frequencies_from_counts(counts)


def test_dump_odd_count(tmp_path, model):
    batch = BellSimulator(model, np.random.default_rng(4)).trials(11)
    dump_trials(batch, tmp_path / "trials.bin")
    loaded = load_trials(tmp_path / "trials.bin")
    assert np.array_equal(loaded.cells, batch.cells)
    assert loaded.first_index == 1
