"""Acceptance suite.

One test per criterion, each printing a PASS/FAIL line. The throughput
comparison runs once (session fixture) and feeds both the trend criterion
and the block-capacity audit.
"""

import base64
import dataclasses
import random
import time
from contextlib import contextmanager

import pytest

from credchain.chain import (
    ChainConfig,
    Consensus,
    Genesis,
    genesis_state,
    replay_block,
)
from credchain.crypto import Digest32, KeyPair, keccak_256, sign
from credchain.docstore import (
    AcademicRecord,
    AccessControl,
    DocStore,
    SubjectEntry,
    export_record,
    record_hash,
)
from credchain.node import ROLE_OBSERVER, ROLE_SEALER
from credchain.registry import RegistryState
from credchain.service import CredentialService, NodeFacade, RpcDispatcher
from credchain.simnet import SimNetwork


@contextmanager
def criterion(number: int, title: str):
    try:
        yield
    except BaseException:
        print(f"\nACCEPTANCE CRITERION {number} FAIL: {title}", flush=True)
        raise
    print(f"\nACCEPTANCE CRITERION {number} PASS: {title}", flush=True)


# ---------------------------------------------------------------------------
# shared fixtures


@pytest.fixture(scope="module")
def acceptance_keys():
    return {
        "sealers": [KeyPair.from_sk(0x100 + i) for i in range(4)],
        "admin": KeyPair.from_sk(0x200),
        "prof": KeyPair.from_sk(0x201),
        "sender": KeyPair.from_sk(0x400),
    }


def random_record(student: KeyPair, rng: random.Random) -> AcademicRecord:
    subjects = tuple(
        SubjectEntry(
            subject=f"Subject {rng.randrange(1000)}",
            mark="" if rng.random() < 0.3 else f"{rng.randrange(0, 101) / 10:.1f}",
            subject_type=rng.choice(["Basic Core", "Elective", "Lab"]),
            course=rng.choice(["22/23", "23/24", "24/25"]),
        )
        for _ in range(rng.randrange(4, 11))
    )
    return AcademicRecord(
        id=Digest32(rng.randbytes(32)),
        public_key=student.address,
        degree=rng.choice(["Computer science", "Mathematics", "Physics"]),
        issue_date="" if rng.random() < 0.5 else "2024-06-15",
        name=f"Name{rng.randrange(10**6)}",
        surname=f"Surname{rng.randrange(10**6)}",
        subjects=subjects,
    )


def single_field_mutants(record: AcademicRecord, rng: random.Random, count: int):
    """Distinct single-field edits of a record's hashed content."""
    mutants = []
    while len(mutants) < count:
        choice = rng.randrange(6)
        if choice == 0:
            mutant = dataclasses.replace(record, name=record.name + "x")
        elif choice == 1:
            mutant = dataclasses.replace(record, surname=record.surname + "y")
        elif choice == 2:
            mutant = dataclasses.replace(record, degree=record.degree + " (hon)")
        elif choice == 3:
            mutant = dataclasses.replace(
                record, issue_date="1999-01-01" if record.issue_date != "1999-01-01" else "1999-01-02"
            )
        elif choice == 4 and record.subjects:
            i = rng.randrange(len(record.subjects))
            subject = record.subjects[i]
            new_mark = "9.9" if subject.mark != "9.9" else "1.1"
            subjects = list(record.subjects)
            subjects[i] = dataclasses.replace(subject, mark=new_mark)
            mutant = dataclasses.replace(record, subjects=tuple(subjects))
        elif record.subjects:
            i = rng.randrange(len(record.subjects))
            subject = record.subjects[i]
            subjects = list(record.subjects)
            subjects[i] = dataclasses.replace(subject, subject=subject.subject + "z")
            mutant = dataclasses.replace(record, subjects=tuple(subjects))
        else:
            continue
        mutants.append(mutant)
    return mutants


class AnchoringRig:
    """One-sealer chain with service and docstore, on the simulator."""

    def __init__(self, keys, n_students: int, seed: int = 1):
        config = ChainConfig(
            chain_id=11,
            consensus=Consensus.POA,
            poa_sealers=(keys["sealers"][0].address,),
        )
        self.genesis = Genesis(config=config)
        self.net = SimNetwork(
            self.genesis, [keys["sealers"][0]], [ROLE_SEALER], topology=[], seed=seed
        )
        self.node = self.net.nodes[0]
        access = AccessControl(
            writers=frozenset({keys["admin"].address, keys["prof"].address}),
            admins=frozenset({keys["admin"].address}),
        )
        self.store = DocStore(access)
        self.clock = [float(self.genesis.timestamp)]
        self.service = CredentialService(
            NodeFacade(self.node),
            self.store,
            {keys["admin"].address: keys["admin"]},
            clock=lambda: self.clock[0],
        )
        self.rpc = RpcDispatcher(self.service)
        self.rng = random.Random(seed)
        self.students = [KeyPair.from_sk(0x10000 + i) for i in range(n_students)]
        self.keys = keys

    def call(self, method, **params):
        response = self.rpc.dispatch(
            {"jsonrpc": "2.0", "id": 1, "method": method, "params": params}
        )
        if "error" in response:
            raise AssertionError(f"{method}: {response['error']}")
        return response["result"]

    def login(self, keypair):
        challenge = self.call("auth_challenge", pk=keypair.address.hex0x)["challenge"]
        sig = sign(keypair.sk, Digest32(keccak_256(challenge.encode())))
        return self.call(
            "auth_verify",
            pk=keypair.address.hex0x,
            challenge=challenge,
            signature="0x" + sig.to_bytes().hex(),
        )["token"]

    def mine(self, periods=1):
        self.net.run_for(self.genesis.config.poa_period_s * periods + 1)
        self.clock[0] = self.net.now

    def verify_bytes(self, blob: bytes) -> dict:
        return self.call("ar_verify", file_b64=base64.b64encode(blob).decode())


@pytest.fixture(scope="module")
def anchoring_rig(acceptance_keys):
    """100 randomized anchored records; reused by criteria 1 and 8."""
    rig = AnchoringRig(acceptance_keys, n_students=100)
    admin_token = rig.login(acceptance_keys["admin"])
    for student in rig.students:
        rig.store.put_record(random_record(student, rig.rng), acceptance_keys["prof"])
        rig.call("ar_issueFirst", token=admin_token, student=student.address.hex0x)
    # registry stores cost 41k gas: 24 per block at the 1M limit
    rig.mine(8)
    return rig


@pytest.fixture(scope="session")
def compare_result():
    """The paired PoA/PoW throughput comparison (criteria 3 and 5)."""
    from credchain.bench.stress import consensus_compare

    start = time.monotonic()
    result = consensus_compare(
        [250, 500, 750, 1000],
        gas_limit=1_000_000,
        repeats=20,
        n_nodes=8,
        n_validators=4,
        base_seed=0,
    )
    return result, time.monotonic() - start


# ---------------------------------------------------------------------------


def test_criterion_1_end_to_end_anti_forgery(anchoring_rig):
    with criterion(1, "end-to-end anti-forgery, 100 records + 500 mutants"):
        rig = anchoring_rig
        start = time.monotonic()
        exports = {}
        valid_count = 0
        for student in rig.students:
            blob = rig.store.export_ar(student.address)
            exports[student.address] = blob
            result = rig.verify_bytes(blob)
            if result["valid"]:
                valid_count += 1
        assert valid_count == 100, f"false invalids: {100 - valid_count}"

        false_valids = 0
        mutant_total = 0
        for student in rig.students:
            record = rig.store.get_record(student.address)
            for mutant in single_field_mutants(record, rig.rng, 5):
                assert record_hash(mutant) != record_hash(record)
                blob = export_record(mutant)
                mutant_total += 1
                if rig.verify_bytes(blob)["valid"]:
                    false_valids += 1
        assert mutant_total >= 500
        assert false_valids == 0
        elapsed = time.monotonic() - start
        assert elapsed < 120, f"took {elapsed:.0f}s, budget is 2 min"


def test_criterion_2_consensus_safety(acceptance_keys):
    with criterion(2, "16-node/4-sealer safety over 50 seeds, 0 divergences"):
        from credchain.bench.stress import build_transfer_workload

        sealers = acceptance_keys["sealers"]
        config = ChainConfig(
            chain_id=1,
            consensus=Consensus.POA,
            poa_sealers=tuple(k.address for k in sealers),
        )
        sender_keys = [KeyPair.from_sk(0x3000 + i) for i in range(8)]
        genesis = Genesis(
            config=config, balances={k.address: 10**12 for k in sender_keys}
        )
        observers = [KeyPair.from_sk(0x6000 + i) for i in range(12)]
        txs = build_transfer_workload(1000, chain_id=1, senders=sender_keys)
        hashes = [tx.hash for tx in txs]

        divergences = 0
        for seed in range(50):
            net = SimNetwork(
                genesis,
                sealers + observers,
                [ROLE_SEALER] * 4 + [ROLE_OBSERVER] * 12,
                topology="full_mesh",
                seed=seed,
            )
            for tx in txs:
                result = net.submit_tx(5, tx)
                assert result.accepted, result
            ok = net.run_until(
                lambda: all(net.nodes[5].receipt(h) for h in hashes),
                max_t_abs=net.now + 600,
            )
            assert ok, f"seed {seed}: not all transactions included"
            net.run_for(3)  # drain in-flight gossip
            if not net.converged():
                divergences += 1
        assert divergences == 0


def test_criterion_3_throughput_trend(compare_result):
    with criterion(3, "PoA >= PoW throughput at every point; ratio narrows"):
        result, wall = compare_result
        by_n = {}
        for poa_report, pow_report in zip(result.poa, result.pow):
            assert poa_report.n_t == pow_report.n_t
            assert poa_report.tps >= pow_report.tps, (
                f"PoW ahead at {poa_report.n_t}: {poa_report.tps} vs {pow_report.tps}"
            )
            by_n[poa_report.n_t] = poa_report.tps / pow_report.tps
        assert by_n[1000] <= by_n[250], f"ratios {by_n}"
        assert wall <= 300, f"simulated comparison took {wall:.0f}s, budget 5 min"


def test_criterion_4_gas_limit_effect():
    with criterion(4, "TPS grows with the gas limit, then plateaus"):
        from credchain.bench.stress import gas_sweep

        reports, details = gas_sweep(
            [1_000_000, 5_000_000, 20_000_000, 60_000_000],
            n_tx=1000,
            repeats=3,
            consensus="poa",
            n_nodes=8,
            n_validators=4,
        )
        tps = {r.gas_limit: r.tps for r in reports}
        assert tps[5_000_000] >= 1.2 * tps[1_000_000], tps
        assert tps[60_000_000] >= 0.9 * tps[20_000_000], tps
        # identical workload across limits
        base = details[0][0].tx_hashes
        assert all(runs[0].tx_hashes == base for runs in details)


def test_criterion_5_block_capacity(compare_result):
    with criterion(5, "no block exceeds 47 transfers at the 1M gas limit"):
        result, _ = compare_result
        violations = 0
        blocks_audited = 0
        for runs in result.poa_runs + result.pow_runs:
            for run in runs:
                for _, tx_count, gas_used in run.blocks:
                    blocks_audited += 1
                    if tx_count > 47 or gas_used > 1_000_000:
                        violations += 1
        assert blocks_audited > 1000
        assert violations == 0


def test_criterion_6_cpu_direction(tmp_path):
    with criterion(6, "hash-puzzle mining burns more CPU than authority sealing"):
        from credchain.bench.cpu import mean_cpu, run_consensus_cpu_scenario

        means = {}
        for consensus in ("pow", "poa"):
            samples = run_consensus_cpu_scenario(
                consensus,
                stress=False,
                duration_s=60,
                tmpdir=str(tmp_path / f"idle-{consensus}"),
            )
            means[f"{consensus}-idle"] = mean_cpu(samples)
        assert means["pow-idle"] > means["poa-idle"], means

        for consensus in ("pow", "poa"):
            samples = run_consensus_cpu_scenario(
                consensus,
                stress=True,
                duration_s=30,
                n_tx=1000,
                tmpdir=str(tmp_path / f"stress-{consensus}"),
            )
            means[f"{consensus}-stress"] = mean_cpu(samples)
        assert means["pow-stress"] > means["poa-stress"], means
        print(f"\n  cpu means: { {k: round(v, 1) for k, v in means.items()} }")


def test_criterion_7_latency_report_integrity(tmp_path):
    with criterion(7, "flood reports are monotone, clean at <=500 rps, recomputable"):
        import csv

        from credchain.bench.flood import flood
        from credchain.bench.reports import nearest_rank
        from rpc_node_proc import spawn_rpc_node

        proc, url = spawn_rpc_node(str(tmp_path))
        try:
            for rate in (100, 500, 1000):
                raw_path = tmp_path / f"raw-{rate}.csv"
                report = flood(
                    url,
                    method="registry_check",
                    target_rps=rate,
                    duration_s=30,
                    raw_out=str(raw_path),
                )
                assert report.p50_ms <= report.p90_ms <= report.p99_ms
                if rate <= 500:
                    assert report.errors == 0, f"{report.errors} errors at {rate} rps"
                with open(raw_path) as fh:
                    rows = list(csv.DictReader(fh))
                completed = [float(r["latency_ms"]) for r in rows if r["ok"] == "1"]
                assert abs(nearest_rank(completed, 50) - report.p50_ms) < 0.1
                assert abs(nearest_rank(completed, 90) - report.p90_ms) < 0.1
                assert abs(nearest_rank(completed, 99) - report.p99_ms) < 0.1
                print(f"\n  {rate} rps: {report.csv_row()}")
        finally:
            proc.terminate()
            proc.wait(timeout=5)


def test_criterion_8_registry_oracle_equivalence(anchoring_rig):
    with criterion(8, "registry matches a linear-scan oracle; replay is identical"):
        rng = random.Random(8)
        registry = RegistryState()
        oracle_entries: list[Digest32] = []
        pool = [Digest32(rng.randbytes(32)) for _ in range(2000)]
        agreements = 0
        for _ in range(10_000):
            digest = rng.choice(pool)
            if rng.random() < 0.5:
                inserted = registry.store(digest, 1).value == "inserted"
                scan_absent = all(existing != digest for existing in oracle_entries)
                assert inserted == scan_absent
                if scan_absent:
                    oracle_entries.append(digest)
            else:
                present = any(existing == digest for existing in oracle_entries)
                assert registry.check(digest) == present
            agreements += 1
        assert agreements == 10_000
        assert registry.count() == len(oracle_entries)

        # replay determinism on the anchoring chain
        node = anchoring_rig.node
        state = genesis_state(anchoring_rig.genesis)
        for block_hash in node.canonical[1:]:
            replay_block(state, node.blocks[block_hash])
        assert state.registry == node.registry
        assert state.registry.count() == 100


def test_criterion_9_crypto_vectors():
    with criterion(9, "keccak/signature reference vectors and canonical JSON"):
        import json

        from cryptography.hazmat.primitives import hashes as pyca_hashes
        from cryptography.hazmat.primitives.asymmetric import ec
        from cryptography.hazmat.primitives.asymmetric.utils import (
            Prehashed,
            decode_dss_signature,
            encode_dss_signature,
        )

        from credchain.canonical import canonical_json
        from credchain.crypto import N, Signature, verify
        from credchain.keccak import keccak_256 as fast_keccak
        from oracle_keccak import keccak256_reference

        assert (
            fast_keccak(b"").hex()
            == "c5d2460186f7233c927e7db2dcc703c0e500b653ca82273b7bfad8045d85a470"
        )
        assert (
            fast_keccak(b"abc").hex()
            == "4e03657aea45a94fc7d47ba826c8d667c0d1e6e33a64a036ec44f58fa12d6c45"
        )
        rng = random.Random(9)
        for i in range(110):
            data = rng.randbytes(rng.randrange(0, 4097))
            assert fast_keccak(data) == keccak256_reference(data), f"case {i}"

        prehashed = ec.ECDSA(Prehashed(pyca_hashes.SHA256()))
        for i in range(110):
            sk = rng.randrange(1, N)
            digest = rng.randbytes(32)
            ours = sign(sk, Digest32(digest))
            pyca_key = ec.derive_private_key(sk, ec.SECP256K1())
            pyca_key.public_key().verify(
                encode_dss_signature(ours.r, ours.s), digest, prehashed
            )
            r, s = decode_dss_signature(pyca_key.sign(digest, prehashed))
            if s > N // 2:
                s = N - s
            kp = KeyPair.from_sk(sk)
            assert any(
                verify(kp.pk, Digest32(digest), Signature(r, s, v)) for v in (0, 1)
            ), f"case {i}"

        docs = 0
        for _ in range(1000):
            doc = _random_document(rng, depth=3)
            once = canonical_json(doc)
            assert canonical_json(json.loads(once)) == once
            docs += 1
        assert docs == 1000


def _random_document(rng: random.Random, depth: int):
    if depth == 0 or rng.random() < 0.4:
        return rng.choice(
            [
                None,
                True,
                False,
                rng.randrange(-(10**9), 10**9),
                rng.random() * 1e6,
                "".join(chr(rng.randrange(32, 0x2FF)) for _ in range(rng.randrange(8))),
            ]
        )
    if rng.random() < 0.5:
        return [_random_document(rng, depth - 1) for _ in range(rng.randrange(4))]
    return {
        f"k{rng.randrange(100)}": _random_document(rng, depth - 1)
        for _ in range(rng.randrange(5))
    }
