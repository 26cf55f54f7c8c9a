import os
import sys
import numpy as np
import pandas as pd
import pytest
import yaml

from src.crypto.randomness import SeededRandomSource
from src.entropy.bell_sim import BellSimulator
from src.entropy.extractor import ToeplitzSeed
from src.entropy.qpe import determine_params
from src.errors import ConfigError
from src.run.analysis import compare_methods, simulated_bit_tests, simulated_shape
from src.run.bench import error_budget, round_table, run_bench, scaling_report
from src.run.config import RunConfig, parse_error
from src.run.documenter import Documenter, load_params
from src.run.plots import Plots, fit_power_law, fit_slope
from src.service.client import LocalBeaconClient, LocalTimestampClient
from src.service.clock import ManualClock
from src.service.timestamp import TimestampAuthority
DATA_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), "..", "data")
PARAMS_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), "..", "params")

T0 = 1_700_000_000_000


@pytest.fixture
def restore_streams(monkeypatch):
    monkeypatch.setattr(sys, "stdout", sys.stdout)
    monkeypatch.setattr(sys, "stderr", sys.stderr)


def base_params(tmp_path):
    return {
        "run_name": "unit",
        "behavior_model": os.path.join(DATA_DIR, "behavior_model.txt"),
        "pef_table": os.path.join(DATA_DIR, "pef_table.txt"),
        "keys": {"dir": str(tmp_path / "keys")},
    }


@pytest.mark.parametrize(
    "value,expected", [("2^-64", 2.0**-64), (" 2 ^ -4 ", 0.0625), (0.25, 0.25), ("2^3", 8.0)]
)
def test_parse_error(value, expected):
    assert parse_error(value, "eps") == expected


def test_parse_error_rejects_text():
    with pytest.raises(ConfigError):
        parse_error("tiny", "eps")


def test_defaults(tmp_path):
    cfg = RunConfig.from_params(base_params(tmp_path))
    assert cfg.period_ms == 60_000
    assert cfg.qpe.k_exp == cfg.extractor_m == 512
    assert cfg.qpe.eps_x == 2.0**-100
    assert cfg.seed_file == os.path.join(str(tmp_path / "keys"), "toeplitz_seed.bin")
    assert cfg.seed_bits == 2 * 9_640_000 + 511
    assert cfg.beacon.url == "http://localhost:8080"
    assert cfg.sig_params.n == 256
    assert cfg.spacetime.dist_sa == 93.0


@pytest.mark.parametrize(
    "overrides",
    [
        {"period_ms": 50},
        {"pef_table": "missing.txt"},
        {"qpe": {"rescale_mode": "hourly"}},
        {"qpe": {"eps_h": 2.0}},
        {"extractor": {"m": 64}},
        {"bench": {"lambda": 0}},
        {"bench": {"vertices": [3, 10]}},
        {"signature": {"q": 12}},
        {"spacetime": {"dist_moon": 1.0}},
    ],
)
def test_invalid_cards(tmp_path, overrides):
    params = base_params(tmp_path)
    params.update(overrides)
    with pytest.raises(ConfigError):
        RunConfig.from_params(params)


def test_relative_paths_fall_back_to_base_dir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    params = {"pef_table": "data/pef_table.txt", "behavior_model": "data/behavior_model.txt"}
    cfg = RunConfig.from_params(params, base_dir=os.path.dirname(DATA_DIR.rstrip(os.sep)))
    assert os.path.exists(cfg.pef_table)
    with pytest.raises(ConfigError):
        RunConfig.from_params(params)


def test_shipped_cards():
    root = os.path.dirname(PARAMS_DIR.rstrip(os.sep))
    for name in ("beacon.yaml", "fast.yaml", "bench.yaml"):
        cfg = RunConfig.from_params(load_params(os.path.join(PARAMS_DIR, name)), base_dir=root)
        assert cfg.extractor_m == cfg.qpe.k_exp


def test_load_params_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_params(tmp_path / "missing.yaml")
    (tmp_path / "list.yaml").write_text("- 1\n- 2\n")
    with pytest.raises(ConfigError):
        load_params(tmp_path / "list.yaml")


def test_documenter(tmp_path, restore_streams):
    card = tmp_path / "card.yaml"
    card.write_text(yaml.dump({"run_name": "doc", "run_folder": "sub"}))
    doc, params = Documenter.from_param_file(str(card), "check", str(tmp_path / "out"))
    assert params["run_name"] == "doc"
    assert os.path.basename(doc.basedir).endswith("_doc_check")
    assert os.path.dirname(doc.basedir) == str(tmp_path / "out" / "sub")
    assert os.path.exists(doc.get_file("params.yaml"))
    print("logged line")
    with open(doc.add_file("table.csv"), "w") as f:
        f.write("a")
    doc.add_file("table.csv")
    assert os.path.exists(os.path.join(doc.basedir, "old", "table.csv"))
    doc.close()
    with open(doc.get_file("log.txt")) as f:
        assert "logged line" in f.read()


def test_round_table():
    table = round_table([50, 100, 150, 200, 250], 64, 3)
    assert table["matches"].all()
    assert table["E"].tolist() == [150, 300, 450, 600, 750]
    other = round_table([50], 32, 3)
    assert other["reference"].isna().all()


def test_error_budget(pef_table):
    params = determine_params(512, 2.0**-64, 2.0**-100, 2.0**-64, pef_table)
    budget = error_budget(params, 64)
    assert budget["zkp"] == (2.0**-64, -64.0)
    assert budget["total"][1] == pytest.approx(-63, abs=0.01)
    assert budget["beacon_soundness"][0] == pytest.approx(2.0**-63)


def test_fit_slope():
    assert fit_slope(np.array([1, 2, 4]), np.array([3, 12, 48])) == pytest.approx(2)
    assert np.isnan(fit_slope(np.array([1, 2]), np.array([0, 5])))


def test_fit_ignores_zero_timings():
    slope, intercept = fit_power_law(np.array([1, 2, 4, 8]), np.array([3, 12, 0, 192]))
    assert slope == pytest.approx(2)
    assert intercept == pytest.approx(np.log(3))


def test_plot_bench_with_zero_timing(tmp_path, bench_frame):
    df = bench_frame.copy()
    df.loc[0, "verify_s"] = 0.0
    Plots().plot_bench(str(tmp_path / "bench.pdf"), df)
    assert os.path.getsize(tmp_path / "bench.pdf") > 0


@pytest.fixture
def bench_frame(chain_factory, ts_keypair, beacon_keys, rng):
    store, _ = chain_factory(4, start_ms=T0 - 60_000)
    ts = LocalTimestampClient(TimestampAuthority(ts_keypair, ManualClock(T0), rng))
    beacon = LocalBeaconClient(store, ManualClock(T0 + 600_000))
    return run_bench(
        [10, 20], 8, 3, ts, beacon, ts_keypair.pk, beacon_keys.pqc.pk, beacon_keys.legacy.pk, rng, wait_s=1
    )


def test_run_bench(bench_frame):
    assert bench_frame["ok"].all()
    assert bench_frame["E"].tolist() == [30, 60]
    assert (bench_frame["rounds"] == round_table([10, 20], 8, 3)["rounds"]).all()
    report = scaling_report(bench_frame)
    assert report["size_ratio_vertices"] == "20:10"
    assert 3 < report["size_ratio"] < 5
    assert report["slope_rounds"] == pytest.approx(1, abs=0.1)


def test_plots(tmp_path, bench_frame):
    plots = Plots()
    plots.plot_bench(str(tmp_path / "bench.pdf"), bench_frame)
    plots.plot_chsh_trace(str(tmp_path / "chsh.pdf"), np.linspace(2.5, 2.0, 100), 2.007)
    counts = np.array([100, 120, 90, -1, 110])
    plots.plot_stopping_times(str(tmp_path / "stop.pdf"), counts, 1.0, 4.0, 100.0, 200)
    for name in ("bench.pdf", "chsh.pdf", "stop.pdf"):
        assert os.path.getsize(tmp_path / name) > 0


def test_compare_methods():
    assert compare_methods(50, np.random.default_rng(0)) == 0


def test_simulated_outputs_pass_bit_tests(model):
    sim = BellSimulator(model, np.random.default_rng(21))
    seed = ToeplitzSeed.generate(simulated_shape(512).seed_len, SeededRandomSource("extract seed"))
    df = simulated_bit_tests(sim, seed, 512, 200)
    assert len(df) == 200
    assert sim.next_index == 1 + 200 * 32 * 512
    # 0.99 expected under uniform outputs
    assert (df["monobit"] >= 0.01).mean() >= 0.95
    assert (df["runs"] >= 0.01).mean() >= 0.95
