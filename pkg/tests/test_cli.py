import glob
import os
import sys
from dataclasses import asdict
import pandas as pd
import pytest
import yaml

from src.__main__ import main
from src.entropy.bell_sim import SpacetimeConfig
DATA_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), "..", "data")


@pytest.fixture(autouse=True)
def restore_streams(monkeypatch):
    monkeypatch.setattr(sys, "stdout", sys.stdout)
    monkeypatch.setattr(sys, "stderr", sys.stderr)


def write_card(tmp_path, **overrides) -> str:
    params = {
        "run_name": "cli",
        "period_ms": 500,
        "behavior_model": os.path.join(DATA_DIR, "behavior_model.txt"),
        "pef_table": os.path.join(DATA_DIR, "pef_table.txt"),
        "qpe": {
            "k_exp": 64,
            "eps_h": "2^-4",
            "eps_x": "2^-4",
            "kappa": "2^-2",
            "max_trials": 2_000_000,
        },
        "keys": {"dir": str(tmp_path / "keys")},
        "beacon": {"chain_dir": str(tmp_path / "chain"), "port": 0, "queue_size": 2},
        "timestamp": {"port": 0},
        "bench": {"vertices": [10, 20], "lambda": 8, "edge_factor": 3},
        "signature": {
            "n": 64, "q": 8380417, "k": 2, "l": 2, "eta": 2,
            "gamma1": 2**17, "gamma2": (8380417 - 1) // 32, "tau": 16, "beta": 32,
        },
        "sim_seed": 7,
        "challenge_wait_s": 30,
    }
    params.update(overrides)
    path = tmp_path / f"{params['run_name']}.yaml"
    path.write_text(yaml.dump(params))
    return str(path)


def run(verb, card, tmp_path, *extra) -> int:
    return main([verb, card, "--output", str(tmp_path / "out"), *extra])


def output_file(tmp_path, verb, name) -> str:
    matches = sorted(glob.glob(str(tmp_path / "out" / f"*_{verb}" / name)))
    assert matches, f"no {name} for {verb}"
    return matches[-1]


def test_fiat_shamir_flow(tmp_path):
    card = write_card(tmp_path)
    assert run("keygen", card, tmp_path) == 0
    for name in ("beacon_pqc.pk", "beacon_legacy.sk", "timestamp.pk", "toeplitz_seed.bin"):
        assert os.path.exists(tmp_path / "keys" / name)
    assert run("gen-instance", card, tmp_path) == 0
    graph = output_file(tmp_path, "cli_instance", "graph.txt")
    coloring = output_file(tmp_path, "cli_instance", "coloring.txt")
    assert run("prove", card, tmp_path, graph, coloring, "--fiat-shamir") == 0
    proof = output_file(tmp_path, "cli_prove", "proof.bin")
    assert run("verify", card, tmp_path, graph, proof) == 0
    assert run("inspect", card, tmp_path, "--proof", proof) == 0

    other = write_card(tmp_path, run_name="other")
    assert run("gen-instance", other, tmp_path, "--vertices", "12") == 0
    other_graph = output_file(tmp_path, "other_instance", "graph.txt")
    assert run("verify", card, tmp_path, other_graph, proof) == 11


def test_prove_rejects_bad_coloring(tmp_path):
    card = write_card(tmp_path)
    assert run("gen-instance", card, tmp_path, "--vertices", "10") == 0
    graph = output_file(tmp_path, "cli_instance", "graph.txt")
    bad = tmp_path / "bad.txt"
    bad.write_text("\n".join(["1"] * 10) + "\n")
    assert run("prove", card, tmp_path, graph, str(bad), "--fiat-shamir") == 9


def test_rounds_only(tmp_path):
    card = write_card(tmp_path)
    assert run("bench", card, tmp_path, "--rounds-only") == 0
    table = pd.read_csv(output_file(tmp_path, "cli_bench", "rounds.csv"))
    assert table["V"].tolist() == [10, 20]
    assert table["E"].tolist() == [30, 60]


def test_qpe(tmp_path):
    card = write_card(tmp_path)
    assert run("qpe", card, tmp_path) == 0
    with open(output_file(tmp_path, "cli_qpe", "qpe.yaml")) as f:
        report = yaml.load(f, Loader=yaml.FullLoader)
    assert report["threshold_bits"] == pytest.approx(11.53, abs=0.01)
    assert report["k_exp"] == 64
    assert 2.0 < report["chsh_expected"] < 2.02


def test_spacetime(tmp_path):
    assert run("spacetime", write_card(tmp_path), tmp_path) == 0
    geometry = asdict(SpacetimeConfig.reference())
    geometry["t_delay1"] = 400.0
    card = write_card(tmp_path, run_name="late", spacetime=geometry)
    assert run("spacetime", card, tmp_path) == 2


def test_config_errors(tmp_path):
    assert run("qpe", write_card(tmp_path, period_ms=50), tmp_path) == 2
    assert run("qpe", str(tmp_path / "missing.yaml"), tmp_path) == 2
    assert run("audit", write_card(tmp_path, beacon={}), tmp_path) == 2


def test_extract_check(tmp_path):
    card = write_card(tmp_path)
    assert run("extract-check", card, tmp_path, "--instances", "20", "--pulses", "10") == 0
    table = pd.read_csv(output_file(tmp_path, "cli_extract", "bit_tests.csv"))
    assert list(table.columns) == ["monobit", "runs"]
    assert len(table) == 10


def test_simulate(tmp_path):
    card = write_card(tmp_path, training_counts=os.path.join(DATA_DIR, "training_counts.txt"))
    assert run("simulate", card, tmp_path, "--trials", "1e4", "--dump") == 0
    assert os.path.getsize(output_file(tmp_path, "cli_simulate", "chsh.pdf")) > 0
    assert os.path.exists(output_file(tmp_path, "cli_simulate", "trials.bin"))


@pytest.mark.slow
def test_beacon_flow(tmp_path):
    card = write_card(tmp_path)
    assert run("keygen", card, tmp_path) == 0
    assert run("beacon", card, tmp_path, "--count", "3") == 0
    assert run("audit", card, tmp_path) == 0
    assert run("inspect", card, tmp_path, "--pulse", "last") == 0
    assert run("gen-instance", card, tmp_path) == 0
    graph = output_file(tmp_path, "cli_instance", "graph.txt")
    coloring = output_file(tmp_path, "cli_instance", "coloring.txt")
    assert run("prove", card, tmp_path, graph, coloring, "--local") == 0
    proof = output_file(tmp_path, "cli_prove", "proof.bin")
    assert run("verify", card, tmp_path, graph, proof) == 0
    assert run("bench", card, tmp_path, "--local") == 0
