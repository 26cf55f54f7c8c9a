import argparse
import time
import numpy as np
import pandas as pd
import yaml

from .main import add_common, init_run
from .plots import Plots
from .services import make_rng, qpe_params, stopping_rng
from ..entropy.bell_sim import (
    BehaviorModel,
    BellSimulator,
    ChshStats,
    chsh_value,
    check_spacetime,
    dump_trials,
    expected_win_probability,
    frequencies_from_counts,
    load_counts,
    running_chsh,
    update_stats_batch,
)
from ..entropy.extractor import (
    ExtractorConfig,
    ToeplitzSeed,
    extract,
    monobit_test,
    pack_raw,
    runs_test,
)
from ..entropy.qpe import (
    PefTable,
    entropy_rate,
    expected_stopping,
    min_entropy_bound,
    simulate_stopping_counts,
    soundness_error,
    success_probability,
    walk_parameters,
)
from ..errors import ConfigError, ExtractorError
from ..progress import progress

SIGNIFICANCE = 0.01


def init_entropy_args(subparsers):
    """
    Initializes the argparsers for the qpe, simulate, extract-check and spacetime commands

    Args:
        subparsers: Object returned by ArgumentParser.add_subparsers
    """
    qpe_parser = subparsers.add_parser("qpe")
    add_common(qpe_parser)
    qpe_parser.set_defaults(func=run_qpe)

    sim_parser = subparsers.add_parser("simulate")
    add_common(sim_parser)
    sim_parser.add_argument("--trials", type=float, default=1e6)
    sim_parser.add_argument("--runs", type=int, default=0, help="stopping-time Monte Carlo runs")
    sim_parser.add_argument("--dump", action="store_true", help="write the trials to trials.bin")
    sim_parser.set_defaults(func=run_simulate)

    extract_parser = subparsers.add_parser("extract-check")
    add_common(extract_parser)
    extract_parser.add_argument("--instances", type=int, default=1000)
    extract_parser.add_argument("--pulses", type=int, default=200)
    extract_parser.add_argument("--large-n", type=int, default=0, help="time one extraction of this size")
    extract_parser.set_defaults(func=run_extract_check)

    spacetime_parser = subparsers.add_parser("spacetime")
    add_common(spacetime_parser)
    spacetime_parser.set_defaults(func=run_spacetime)


def run_qpe(args: argparse.Namespace):
    doc, cfg = init_run(args, "qpe")
    print("------- Protocol parameters -------")
    params = qpe_params(cfg)
    model = BehaviorModel.load(cfg.behavior_model)
    table = PefTable.load(cfg.pef_table)
    mode = cfg.qpe.rescale_mode
    report = params.summary()
    report.update(
        {
            "min_entropy_bits": min_entropy_bound(params),
            "soundness_error": soundness_error(params),
            "entropy_rate": entropy_rate(model, table),
            "expected_trials": expected_stopping(model, table, params, mode),
            "success_probability": success_probability(model, table, params, mode),
            "chsh_expected": chsh_value(expected_win_probability(model)),
            "rescale_mode": mode,
        }
    )
    for key, value in report.items():
        print(f"    {key}: {value}")
    with open(doc.add_file("qpe.yaml"), "w") as f:
        yaml.dump({k: v.item() if isinstance(v, np.generic) else v for k, v in report.items()}, f)
    print("------- The end -------")


def run_simulate(args: argparse.Namespace):
    doc, cfg = init_run(args, "simulate")
    model = BehaviorModel.load(cfg.behavior_model)
    plots = Plots()

    print("------- Simulating CHSH trials -------")
    count = int(args.trials)
    if count < 1:
        raise ConfigError("need at least one trial")
    sim = BellSimulator(model, make_rng(cfg, "bell").numpy_generator())
    start = time.perf_counter()
    batch = sim.trials(count)
    stats = update_stats_batch(ChshStats(), batch)
    expected = chsh_value(expected_win_probability(model))
    print(f"    Trials: {count} in {time.perf_counter() - start:.2f}s")
    print(f"    CHSH: {stats.s_bar:.5f} +- {stats.sigma():.5f}, expected {expected:.5f}")
    inside = abs(stats.s_bar - expected) <= 3 * stats.sigma()
    print(f"    Expected value inside 3 sigma: {inside}")
    plots.plot_chsh_trace(doc.add_file("chsh.pdf"), running_chsh(batch), expected)
    if args.dump:
        dump_trials(batch, doc.add_file("trials.bin"))
        print(f"    Trials written to {doc.get_file('trials.bin')}")

    if cfg.training_counts is not None:
        print("------- Training counts -------")
        report = frequencies_from_counts(load_counts(cfg.training_counts))
        print(f"    Alice marginal differences: {np.array2string(report.alice, precision=5)}")
        print(f"    Bob marginal differences: {np.array2string(report.bob, precision=5)}")
        print(f"    Largest signalling: {report.max_violation:.2e}")

    if args.runs > 0:
        print("------- Stopping-time Monte Carlo -------")
        table = PefTable.load(cfg.pef_table)
        params = qpe_params(cfg)
        mode = cfg.qpe.rescale_mode
        counts = simulate_stopping_counts(
            model, table, params, args.runs, stopping_rng(cfg), mode, verbose=args.verbose
        )
        pd.DataFrame({"run": np.arange(len(counts)), "trials": counts}).to_csv(
            doc.add_file("stopping.csv"), index=False
        )
        done = counts[counts > 0]
        drift, var, target = walk_parameters(model, table, params, mode)
        print(f"    Successes: {len(done)}/{len(counts)}")
        if len(done) > 0:
            print(f"    Mean stopping count: {done.mean():.0f}, expected {target / drift:.0f}")
        print(f"    Success probability estimate: {success_probability(model, table, params, mode):.4f}")
        plots.plot_stopping_times(
            doc.add_file("stopping.pdf"), counts, drift, var, target, params.max_trials
        )
    print("------- The end -------")


def compare_methods(instances: int, rng: np.random.Generator, n_range=(4, 8), verbose: bool = False) -> int:
    """
    Random small extractions through both paths, followed by an exhaustive sweep over
    all inputs of the smallest shape per n.

    Returns:
        Number of mismatching instances
    """
    mismatches = 0
    for _ in progress(range(instances), verbose, desc="random instances"):
        n = int(rng.integers(n_range[0], n_range[1] + 1))
        m = int(rng.integers(1, n + 1))
        cfg = ExtractorConfig(n, m, n)
        seed = ToeplitzSeed(rng.integers(0, 2, cfg.seed_len))
        raw = rng.integers(0, 2, n).astype(np.uint8)
        if not np.array_equal(extract(raw, seed, cfg), extract(raw, seed, cfg, "naive")):
            mismatches += 1
    for n in range(n_range[0], n_range[1] + 1):
        cfg = ExtractorConfig(n, 2, n)
        seed = ToeplitzSeed(rng.integers(0, 2, cfg.seed_len))
        for value in range(2**n):
            raw = np.array([(value >> j) & 1 for j in range(n)], dtype=np.uint8)
            if not np.array_equal(extract(raw, seed, cfg), extract(raw, seed, cfg, "naive")):
                mismatches += 1
    return mismatches


def simulated_shape(m: int) -> ExtractorConfig:
    # 32 simulated trials per output bit; the worst cell carries about 0.064 bits of
    # min-entropy, so k is twice the output length
    return ExtractorConfig(64 * m, m, 2 * m)


def simulated_bit_tests(
    sim: BellSimulator, seed: ToeplitzSeed, m: int, pulses: int, verbose: bool = False
) -> pd.DataFrame:
    """
    Extracts one m-bit output per pulse from fresh simulated trials and runs the
    frequency and runs tests on each.

    Returns:
        One row of p-values per pulse
    """
    shape = simulated_shape(m)
    rows = []
    for _ in progress(range(pulses), verbose, desc="pulses"):
        bits = extract(pack_raw(sim.trials(shape.n // 2)), seed, shape)
        rows.append({"monobit": monobit_test(bits), "runs": runs_test(bits)})
    return pd.DataFrame(rows)


def run_extract_check(args: argparse.Namespace):
    doc, cfg = init_run(args, "extract")
    rng = make_rng(cfg, "extract").numpy_generator()

    print("------- Comparing FFT and matrix extraction -------")
    mismatches = compare_methods(args.instances, rng, verbose=args.verbose)
    print(f"    Mismatches: {mismatches}")

    print("------- Output statistics -------")
    m = cfg.extractor_m
    sim = BellSimulator(BehaviorModel.load(cfg.behavior_model), make_rng(cfg, "bell").numpy_generator())
    seed = ToeplitzSeed.generate(simulated_shape(m).seed_len, make_rng(cfg, "seed"))
    df = simulated_bit_tests(sim, seed, m, args.pulses, verbose=args.verbose)
    df.to_csv(doc.add_file("bit_tests.csv"), index=False)
    for column in df:
        print(f"    {column}: {(df[column] >= SIGNIFICANCE).mean():.3f} pass at {SIGNIFICANCE}")

    if args.large_n > 0:
        print("------- Large extraction -------")
        shape = ExtractorConfig(args.large_n, m, args.large_n)
        seed = ToeplitzSeed.generate(shape.seed_len, make_rng(cfg, "seed"))
        raw = pack_raw(sim.trials((shape.n + 1) // 2))[: shape.n]
        start = time.perf_counter()
        extract(raw, seed, shape)
        print(f"    n={shape.n}: {time.perf_counter() - start:.2f}s")
    if mismatches:
        raise ExtractorError(f"{mismatches} extractions differ between the two methods")
    print("------- The end -------")


def run_spacetime(args: argparse.Namespace):
    doc, cfg = init_run(args, "spacetime")
    print("------- Checking spacetime conditions -------")
    results = check_spacetime(cfg.spacetime)
    for r in results:
        print(f"    {r.name}: {r.lhs_ns:.1f} ns > {r.rhs_ns:.1f} ns, slack {r.slack_ns:.1f} ns, holds {r.holds}")
    if not all(r.holds for r in results):
        raise ConfigError("the station geometry violates a spacetime condition")
    print("------- The end -------")
