import os
import argparse
import json
import threading
import time
from datetime import timedelta
from typing import Optional
import pandas as pd

from .bench import error_budget, round_table, run_bench, scaling_report
from .config import RunConfig
from .documenter import Documenter
from .plots import Plots
from .services import (
    TIMESTAMP_KEY,
    generate_keys,
    load_beacon_keys,
    load_seed,
    load_timestamp_key,
    local_timestamp,
    make_rng,
    qpe_params,
    start_beacon,
    start_timestamp,
)
from ..crypto.lattice_sig import PublicKey, load_public_key
from ..errors import ConfigError, ServiceError, VerificationError
from ..service.beacon import audit_chain
from ..service.client import BeaconClient, BeaconSource, TimestampClient, TimestampService
from ..service.store import ChainStore
from ..zkp.fiat_shamir import fiat_shamir_prove, fiat_shamir_verify
from ..zkp.graph import Coloring, Graph, gen_instance
from ..zkp.zkp3col import Proof, prove, verify


def add_common(parser: argparse.ArgumentParser):
    parser.add_argument("paramcard")
    parser.add_argument("--output", type=str, default=None, help="output root directory")
    parser.add_argument("--verbose", action="store_true")


def init_service_args(subparsers):
    """
    Initializes the argparsers for the key, beacon, timestamp, audit and inspect commands

    Args:
        subparsers: Object returned by ArgumentParser.add_subparsers
    """
    keygen_parser = subparsers.add_parser("keygen")
    add_common(keygen_parser)
    keygen_parser.set_defaults(func=run_keygen)

    beacon_parser = subparsers.add_parser("beacon")
    add_common(beacon_parser)
    beacon_parser.add_argument("--count", type=int, default=None, help="stop after this many pulses")
    beacon_parser.add_argument("--port", type=int, default=None)
    beacon_parser.set_defaults(func=run_beacon)

    ts_parser = subparsers.add_parser("timestamp")
    add_common(ts_parser)
    ts_parser.add_argument("--port", type=int, default=None)
    ts_parser.add_argument("--duration", type=float, default=None, help="serve for this many seconds")
    ts_parser.set_defaults(func=run_timestamp)

    audit_parser = subparsers.add_parser("audit")
    add_common(audit_parser)
    audit_parser.add_argument("--start", type=int, default=1)
    audit_parser.add_argument("--end", type=int, default=None)
    audit_parser.add_argument("--remote", action="store_true", help="fetch the chain over HTTP")
    audit_parser.set_defaults(func=run_audit)

    inspect_parser = subparsers.add_parser("inspect")
    add_common(inspect_parser)
    target = inspect_parser.add_mutually_exclusive_group(required=True)
    target.add_argument("--pulse", type=str, help="pulse index or 'last'")
    target.add_argument("--proof", type=str, help="proof file")
    inspect_parser.add_argument("--remote", action="store_true")
    inspect_parser.set_defaults(func=run_inspect)


def init_proof_args(subparsers):
    """
    Initializes the argparsers for the gen-instance, prove, verify and bench commands

    Args:
        subparsers: Object returned by ArgumentParser.add_subparsers
    """
    gen_parser = subparsers.add_parser("gen-instance")
    add_common(gen_parser)
    gen_parser.add_argument("--vertices", type=int, default=None)
    gen_parser.add_argument("--edge-factor", type=int, default=None)
    gen_parser.set_defaults(func=run_gen_instance)

    prove_parser = subparsers.add_parser("prove")
    add_common(prove_parser)
    prove_parser.add_argument("graph")
    prove_parser.add_argument("coloring")
    prove_parser.add_argument("--lam", type=int, default=None)
    prove_parser.add_argument("--local", action="store_true", help="run the services in-process")
    prove_parser.add_argument("--fiat-shamir", action="store_true")
    prove_parser.set_defaults(func=run_prove)

    verify_parser = subparsers.add_parser("verify")
    add_common(verify_parser)
    verify_parser.add_argument("graph")
    verify_parser.add_argument("proof")
    verify_parser.set_defaults(func=run_verify)

    bench_parser = subparsers.add_parser("bench")
    add_common(bench_parser)
    bench_parser.add_argument("--local", action="store_true", help="run the services in-process")
    bench_parser.add_argument("--rounds-only", action="store_true")
    bench_parser.set_defaults(func=run_bench_cmd)


def init_run(args: argparse.Namespace, verb: str) -> tuple[Documenter, RunConfig]:
    doc, params = Documenter.from_param_file(args.paramcard, verb, args.output)
    card_dir = os.path.dirname(os.path.abspath(args.paramcard))
    cfg = RunConfig.from_params(params, base_dir=os.path.dirname(card_dir))
    print(f"    Run: {cfg.run_name}, output {doc.basedir}")
    return doc, cfg


def run_keygen(args: argparse.Namespace):
    doc, cfg = init_run(args, "keygen")
    print("------- Generating keys -------")
    generate_keys(cfg, make_rng(cfg, "keygen"))
    print("------- The end -------")


def _wait_forever(stop_after: Optional[float] = None):
    event = threading.Event()
    try:
        event.wait(stop_after)
    except KeyboardInterrupt:
        print("    Interrupted")


def run_beacon(args: argparse.Namespace):
    doc, cfg = init_run(args, "beacon")
    print("------- Loading keys -------")
    keys = load_beacon_keys(cfg)
    seed = load_seed(cfg)
    params = qpe_params(cfg)
    print(f"    Threshold: {params.threshold_bits:.2f} bits, max trials {params.max_trials}")
    print(f"    Period: {cfg.period_ms} ms, chain {cfg.chain_index}, store {cfg.chain_dir}")
    print("------- Running beacon -------")
    try:
        service = start_beacon(cfg, keys, seed, port=args.port, count=args.count)
    except OSError as e:
        raise ServiceError(f"cannot start beacon on port {args.port or cfg.beacon.port}: {e}") from e
    try:
        if args.count is not None:
            while service.thread.is_alive():
                service.join(timeout=0.5)
        else:
            _wait_forever()
    except KeyboardInterrupt:
        print("    Interrupted")
    finally:
        service.stop()
    print(f"    Chain length: {len(service.store)}")
    print("------- The end -------")


def run_timestamp(args: argparse.Namespace):
    doc, cfg = init_run(args, "timestamp")
    kp = load_timestamp_key(cfg)
    print("------- Running timestamp authority -------")
    try:
        server = start_timestamp(cfg, kp, port=args.port)
    except OSError as e:
        raise ServiceError(f"cannot start timestamp authority: {e}") from e
    try:
        _wait_forever(args.duration)
    finally:
        server.stop()
    print("------- The end -------")


def _public_key(path: str) -> Optional[PublicKey]:
    return load_public_key(path) if os.path.exists(path) else None


def _beacon_public_keys(cfg: RunConfig, remote: Optional[BeaconClient] = None):
    pk_pqc = _public_key(os.path.join(cfg.keys_dir, "beacon_pqc.pk"))
    pk_legacy = _public_key(os.path.join(cfg.keys_dir, "beacon_legacy.pk"))
    if pk_pqc is None:
        if remote is None:
            remote = BeaconClient(cfg.beacon.url, cfg.chain_index)
        keys = remote.public_keys()
        pk_pqc, pk_legacy = keys["pqc"], keys.get("legacy")
    return pk_pqc, pk_legacy


def _fetch_chain(client: BeaconClient, chain: int, end: Optional[int]) -> ChainStore:
    store = ChainStore(None, chain)
    latest = client.latest()
    last = 0 if latest is None else latest.pulse_index
    end = last if end is None else min(end, last)
    for i in range(1, end + 1):
        pulse = client.pulse(chain, i)
        if pulse is None:
            raise ServiceError(f"pulse {i} of chain {chain} is not served")
        store.append(pulse)
    return store


def run_audit(args: argparse.Namespace):
    doc, cfg = init_run(args, "audit")
    print("------- Loading chain -------")
    client = None
    if args.remote:
        client = BeaconClient(cfg.beacon.url, cfg.chain_index)
        store = _fetch_chain(client, cfg.chain_index, args.end)
    else:
        if cfg.chain_dir is None or not os.path.isdir(cfg.chain_dir):
            raise ConfigError("audit needs beacon.chain_dir or --remote")
        store = ChainStore(cfg.chain_dir, cfg.chain_index)
    print(f"    Pulses: {len(store)}")
    pk_pqc, pk_legacy = _beacon_public_keys(cfg, client)
    print("------- Running audit -------")
    findings = audit_chain(store, pk_pqc, pk_legacy, args.start, args.end, args.verbose)
    table = pd.DataFrame(
        [{"pulse_index": f.pulse_index, "check": f.check} for f in findings],
        columns=["pulse_index", "check"],
    )
    table.to_csv(doc.add_file("findings.csv"), index=False)
    print(f"    Findings: {len(findings)}")
    for f in findings[:20]:
        print(f"        pulse {f.pulse_index}: {f.check}")
    if findings:
        raise VerificationError(f"chain audit found {len(findings)} problems")
    print("------- The end -------")


def run_inspect(args: argparse.Namespace):
    doc, cfg = init_run(args, "inspect")
    if args.proof is not None:
        proof = Proof.load(args.proof)
        print(json.dumps(proof.to_json(), indent=2))
        print(f"    Size: {proof.size() / 1e6:.3f} MB")
        return
    if args.remote:
        client = BeaconClient(cfg.beacon.url, cfg.chain_index)
        pulse = client.latest() if args.pulse == "last" else client.pulse(cfg.chain_index, int(args.pulse))
    else:
        if cfg.chain_dir is None:
            raise ConfigError("inspect needs beacon.chain_dir or --remote")
        store = ChainStore(cfg.chain_dir, cfg.chain_index)
        pulse = store.latest() if args.pulse == "last" else store.get(int(args.pulse))
    if pulse is None:
        raise ServiceError(f"pulse {args.pulse} not found")
    print(json.dumps(pulse.to_json(), indent=2))


def run_gen_instance(args: argparse.Namespace):
    doc, cfg = init_run(args, "instance")
    v = args.vertices or cfg.bench.vertices[0]
    edge_factor = args.edge_factor or cfg.bench.edge_factor
    print("------- Generating instance -------")
    g, phi = gen_instance(v, edge_factor, make_rng(cfg, "instance"))
    g.save(doc.add_file("graph.txt"))
    phi.save(doc.add_file("coloring.txt"))
    print(f"    Vertices: {g.v}, edges: {g.edge_count}")
    print(f"    Graph digest: {g.digest().hex()[:32]}...")
    print(f"    Files: {doc.get_file('graph.txt')}, {doc.get_file('coloring.txt')}")


class LocalServices:
    """
    In-process beacon and timestamp authority sharing the system clock.
    """

    def __init__(self, cfg: RunConfig):
        self.beacon = start_beacon(cfg, load_beacon_keys(cfg), load_seed(cfg), http=False)
        self.ts_kp = load_timestamp_key(cfg)
        self.timestamp = local_timestamp(cfg, self.ts_kp, self.beacon.clock)

    def stop(self):
        self.beacon.stop()


def _services(cfg: RunConfig, local: bool) -> tuple[TimestampService, BeaconSource, Optional[LocalServices]]:
    if local:
        print("    Starting in-process beacon and timestamp authority")
        services = LocalServices(cfg)
        return services.timestamp, services.beacon.client(), services
    return TimestampClient(cfg.timestamp.url), BeaconClient(cfg.beacon.url, cfg.chain_index), None


def run_prove(args: argparse.Namespace):
    doc, cfg = init_run(args, "prove")
    g, phi = Graph.load(args.graph), Coloring.load(args.coloring)
    lam = args.lam or cfg.bench.lam
    print(f"    Vertices: {g.v}, edges: {g.edge_count}, lambda: {lam}")
    rng = make_rng(cfg, "prover")
    timings = {}
    print("------- Proving -------")
    if args.fiat_shamir:
        proof = fiat_shamir_prove(g, phi, lam, rng, timings)
    else:
        ts, beacon, services = _services(cfg, args.local)
        try:
            proof = prove(g, phi, lam, ts, beacon, rng, wait_s=cfg.challenge_wait_s, timings=timings)
        finally:
            if services is not None:
                services.stop()
        print(f"    Timestamp: {proof.token.time}, challenge pulse {proof.pulse.pulse_index}")
    proof.save(doc.add_file("proof.bin"))
    print(f"    Rounds: {proof.rounds}")
    print(f"    Commit: {timedelta(seconds=timings['commit'])}, response: {timedelta(seconds=timings['response'])}")
    print(f"    Size: {proof.size() / 1e6:.3f} MB, written to {doc.get_file('proof.bin')}")
    print("------- The end -------")


def run_verify(args: argparse.Namespace):
    doc, cfg = init_run(args, "verify")
    g, proof = Graph.load(args.graph), Proof.load(args.proof)
    print(f"    Rounds: {proof.rounds}, mode: {proof.mode}")
    print("------- Verifying -------")
    start = time.perf_counter()
    if proof.mode == "fiat_shamir":
        check = fiat_shamir_verify(g, proof)
    else:
        pk_ts = _public_key(os.path.join(cfg.keys_dir, f"{TIMESTAMP_KEY}.pk"))
        if pk_ts is None:
            pk_ts = TimestampClient(cfg.timestamp.url).public_key()
        pk_bc, pk_legacy = _beacon_public_keys(cfg)
        check = verify(g, proof, pk_ts, pk_bc, pk_legacy)
    print(f"    Time: {time.perf_counter() - start:.3f}s")
    for finding in check.findings:
        print(f"    Finding: {finding}")
    if not check.ok:
        raise VerificationError("proof rejected")
    print("    Proof accepted")
    print("------- The end -------")


def run_bench_cmd(args: argparse.Namespace):
    doc, cfg = init_run(args, "bench")
    bench = cfg.bench
    print("------- Round counts -------")
    rounds = round_table(bench.vertices, bench.lam, bench.edge_factor)
    rounds.to_csv(doc.add_file("rounds.csv"), index=False)
    print(rounds.to_string(index=False))
    print("------- Error budget -------")
    for name, (value, log2) in error_budget(qpe_params(cfg), bench.lam).items():
        print(f"    {name}: {value:.3e} (2^{log2:.2f})")
    if args.rounds_only:
        return

    print("------- Running bench -------")
    ts, beacon, services = _services(cfg, args.local)
    try:
        if services is not None:
            pk_ts = services.ts_kp.pk
            pk_bc, pk_legacy = services.beacon.keys.pqc.pk, services.beacon.keys.legacy.pk
        else:
            pk_ts = ts.public_key()
            pk_bc, pk_legacy = _beacon_public_keys(cfg)
        df = run_bench(
            bench.vertices,
            bench.lam,
            bench.edge_factor,
            ts,
            beacon,
            pk_ts,
            pk_bc,
            pk_legacy,
            make_rng(cfg, "bench"),
            wait_s=cfg.challenge_wait_s,
            verbose=args.verbose,
        )
    finally:
        if services is not None:
            services.stop()
    df.to_csv(doc.add_file("bench.csv"), index=False)
    print(df.to_string(index=False))
    print("------- Scaling -------")
    for name, value in scaling_report(df).items():
        print(f"    {name}: {value}")
    Plots().plot_bench(doc.add_file("bench.pdf"), df)
    if not df["ok"].all():
        raise VerificationError("a benchmark proof was rejected")
    print("------- The end -------")
