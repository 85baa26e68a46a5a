"""Write-throughput stress runs, gas-limit sweeps and consensus comparison.

Throughput follows the successful-transactions-per-second definition:
tps = n_t / t_t, with t_t measured from the first submission to the
moment the last transaction lands in a block at the submitting node.
Simulated runs measure both points on the virtual clock; the HTTP target
uses the wall clock and receipt polling.

PoW runs start above the steady-state difficulty on purpose: a freshly
provisioned hash-puzzle chain needs a number of retarget steps before
block intervals settle, which is exactly the regime where authority
sealing dominates and why its advantage narrows as runs grow longer.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

from ..chain import (
    ChainConfig,
    Consensus,
    Genesis,
    Transaction,
    TxKind,
    sign_tx,
)
from ..crypto import Address, Digest32, KeyPair
from ..node import ROLE_MINER, ROLE_OBSERVER, ROLE_SEALER
from ..simnet import SimNetwork, SimParams
from .reports import StressReport

logger = logging.getLogger(__name__)

DEFAULT_SENDERS = 8
DEFAULT_NODES = 8
DEFAULT_VALIDATORS = 4
POW_SIM_HASHES_PER_S = 0.25  # virtual per-miner hash rate in simulation
POW_SPINUP_FACTOR = 3  # genesis difficulty relative to the steady state
SINK = Address(bytes.fromhex("00000000000000000000000000000000000000d1"))

# Sealer/miner and sender keys are fixed so workloads are identical across
# runs, limits and consensus engines (the sweep invariant).
VALIDATOR_KEYS = tuple(KeyPair.from_sk(0x1000 + i) for i in range(16))
OBSERVER_KEYS = tuple(KeyPair.from_sk(0x2000 + i) for i in range(32))
SENDER_KEYS = tuple(KeyPair.from_sk(0x3000 + i) for i in range(DEFAULT_SENDERS))


class StressAborted(RuntimeError):
    pass


@dataclass
class RunResult:
    n_included: int
    first_submit_t: float
    last_inclusion_t: float
    tx_hashes: set[Digest32]
    blocks: list[tuple[int, int, int]]  # (number, tx_count, gas_used)

    @property
    def t_t(self) -> float:
        return self.last_inclusion_t - self.first_submit_t

    @property
    def max_txs_per_block(self) -> int:
        return max((count for _, count, _ in self.blocks), default=0)


def build_transfer_workload(
    n_tx: int,
    chain_id: int,
    senders: Sequence[KeyPair] = SENDER_KEYS,
    recipient: Address = SINK,
) -> list[Transaction]:
    """Pre-signed unit transfers, round-robin over the funded senders."""
    txs = []
    nonces = {kp.address: 0 for kp in senders}
    for i in range(n_tx):
        kp = senders[i % len(senders)]
        tx = Transaction(
            nonce=nonces[kp.address],
            sender=kp.address,
            kind=TxKind.TRANSFER,
            gas_limit=21_000,
            chain_id=chain_id,
            to=recipient,
            value=1,
        )
        nonces[kp.address] += 1
        txs.append(sign_tx(tx, kp))
    return txs


def pow_steady_difficulty(
    n_miners: int, hashes_per_s: float, target_block_s: int
) -> int:
    # the 1/16-step retarget with a [t, 2t] dead zone settles where fast
    # and slow adjustments balance, at a mean interval near twice target
    return max(1, int(round(2.0 * target_block_s * n_miners * hashes_per_s)))


def make_bench_genesis(
    consensus: str,
    gas_limit: int,
    n_validators: int = DEFAULT_VALIDATORS,
    chain_id: int = 1,
    senders: Sequence[KeyPair] = SENDER_KEYS,
    pow_hashes_per_s: float = POW_SIM_HASHES_PER_S,
    pow_target_block_s: int = 15,
) -> Genesis:
    kind = Consensus(consensus)
    steady = pow_steady_difficulty(n_validators, pow_hashes_per_s, pow_target_block_s)
    config = ChainConfig(
        chain_id=chain_id,
        consensus=kind,
        block_gas_limit=gas_limit,
        poa_sealers=tuple(k.address for k in VALIDATOR_KEYS[:n_validators])
        if kind == Consensus.POA
        else (),
        pow_initial_difficulty=steady * POW_SPINUP_FACTOR,
        pow_target_block_s=pow_target_block_s,
    )
    balances = {kp.address: 10**12 for kp in senders}
    return Genesis(config=config, balances=balances)


class SimCluster:
    """One fresh simulated network; runs a workload and reports timings on
    the virtual clock."""

    def __init__(
        self,
        consensus: str,
        gas_limit: int,
        n_nodes: int = DEFAULT_NODES,
        n_validators: int = DEFAULT_VALIDATORS,
        seed: int = 0,
        pow_hashes_per_s: float = POW_SIM_HASHES_PER_S,
        senders: Sequence[KeyPair] = SENDER_KEYS,
    ):
        if n_nodes < n_validators:
            raise ValueError("more validators than nodes")
        self.genesis = make_bench_genesis(
            consensus,
            gas_limit,
            n_validators,
            senders=senders,
            pow_hashes_per_s=pow_hashes_per_s,
        )
        kind = self.genesis.config.consensus
        validator_role = ROLE_SEALER if kind == Consensus.POA else ROLE_MINER
        keypairs = list(VALIDATOR_KEYS[:n_validators]) + list(
            OBSERVER_KEYS[: n_nodes - n_validators]
        )
        roles = [validator_role] * n_validators + [ROLE_OBSERVER] * (
            n_nodes - n_validators
        )
        self.net = SimNetwork(
            self.genesis,
            keypairs,
            roles,
            topology="full_mesh",
            seed=seed,
            params=SimParams(pow_hashes_per_s=pow_hashes_per_s),
        )
        self.entry = n_validators if n_nodes > n_validators else 0

    def run(self, txs: Sequence[Transaction], max_virtual_s: float = 100_000.0) -> RunResult:
        net = self.net
        entry_node = net.nodes[self.entry]
        wanted = {tx.hash for tx in txs}
        seen: set = set()
        done = [False]

        def listener(block, receipts):
            # reorgs can re-deliver a tx in a new block; count unique hashes
            for receipt in receipts:
                if receipt.tx_hash in wanted:
                    seen.add(receipt.tx_hash)
            if len(seen) >= len(wanted):
                done[0] = True

        entry_node.add_block_listener(listener)
        first_submit = net.now
        for tx in txs:
            result = entry_node.submit_tx(tx)
            if not result.accepted:
                raise StressAborted(
                    f"tx nonce={tx.nonce} from={tx.sender.hex0x} rejected: {result.cause}"
                )
        ok = net.run_until(lambda: done[0], max_t_abs=first_submit + max_virtual_s)
        if not ok:
            raise StressAborted(
                f"only {len(seen)}/{len(wanted)} transactions included "
                f"after {max_virtual_s}s of virtual time"
            )
        last_inclusion = net.now
        blocks = [
            (b.number, len(b.transactions), b.header.gas_used)
            for b in entry_node.blocks.values()
            if b.number > 0
        ]
        return RunResult(
            n_included=len(seen),
            first_submit_t=first_submit,
            last_inclusion_t=last_inclusion,
            tx_hashes=wanted,
            blocks=blocks,
        )


def stress_write(
    cluster_factory: Callable[[int], SimCluster],
    n_tx: int,
    repeats: int = 20,
    batch_size: int = 1,
    base_seed: int = 0,
) -> tuple[StressReport, list[RunResult]]:
    """Run the workload `repeats` times on fresh clusters and average."""
    if n_tx < 1:
        raise ValueError("n_tx must be positive")
    if batch_size < 1:
        raise ValueError("batch_size must be positive")
    runs: list[RunResult] = []
    report_meta = None
    txs: Optional[list[Transaction]] = None
    for r in range(repeats):
        cluster = cluster_factory(base_seed + r)
        if txs is None:  # identical on every repeat; sign once
            txs = build_transfer_workload(n_tx, cluster.genesis.config.chain_id)
        result = cluster.run(txs)
        if result.n_included != n_tx:
            raise StressAborted(f"{result.n_included}/{n_tx} included")
        runs.append(result)
        report_meta = (
            cluster.genesis.config.consensus.value,
            cluster.genesis.config.block_gas_limit,
        )
    report = StressReport.from_runs(
        consensus=report_meta[0],
        gas_limit=report_meta[1],
        n_t=n_tx,
        t_ts=[run.t_t for run in runs],
    )
    return report, runs


def gas_sweep(
    limits: Sequence[int],
    n_tx: int = 1000,
    repeats: int = 3,
    consensus: str = "poa",
    n_nodes: int = DEFAULT_NODES,
    n_validators: int = DEFAULT_VALIDATORS,
    base_seed: int = 0,
) -> tuple[list[StressReport], list[list[RunResult]]]:
    """One StressReport per gas limit; identical workload otherwise."""
    reports = []
    details = []
    for limit in limits:
        factory = lambda seed, limit=limit: SimCluster(
            consensus, limit, n_nodes, n_validators, seed
        )
        report, runs = stress_write(factory, n_tx, repeats=repeats, base_seed=base_seed)
        reports.append(report)
        details.append(runs)
    return reports, details


@dataclass
class CompareResult:
    poa: list[StressReport]
    pow: list[StressReport]
    poa_runs: list[list[RunResult]] = field(default_factory=list)
    pow_runs: list[list[RunResult]] = field(default_factory=list)

    def ratios(self) -> dict[int, float]:
        """PoA/PoW throughput ratio per transaction count."""
        out = {}
        for a, w in zip(self.poa, self.pow):
            assert a.n_t == w.n_t
            out[a.n_t] = a.tps / w.tps
        return out


def consensus_compare(
    n_tx_list: Sequence[int],
    gas_limit: int = 1_000_000,
    repeats: int = 20,
    n_nodes: int = DEFAULT_NODES,
    n_validators: int = DEFAULT_VALIDATORS,
    base_seed: int = 0,
) -> CompareResult:
    """Paired PoA/PoW runs over identical topology and workloads."""
    result = CompareResult(poa=[], pow=[])
    for consensus in ("poa", "pow"):
        for n_tx in n_tx_list:
            factory = lambda seed, c=consensus: SimCluster(
                c, gas_limit, n_nodes, n_validators, seed
            )
            report, runs = stress_write(factory, n_tx, repeats=repeats, base_seed=base_seed)
            if consensus == "poa":
                result.poa.append(report)
                result.poa_runs.append(runs)
            else:
                result.pow.append(report)
                result.pow_runs.append(runs)
    return result


# --- real-transport target ----------------------------------------------------------


class HttpTarget:
    """Submit pre-signed txs over JSON-RPC and poll receipts; wall clock."""

    def __init__(self, endpoint: str, poll_interval_s: float = 0.2):
        import httpx

        self.endpoint = endpoint
        self.poll_interval_s = poll_interval_s
        self._client = httpx.Client(timeout=30.0)
        self._next_id = 0

    def _call(self, method: str, params: dict):
        self._next_id += 1
        resp = self._client.post(
            self.endpoint,
            json={
                "jsonrpc": "2.0",
                "id": self._next_id,
                "method": method,
                "params": params,
            },
        )
        resp.raise_for_status()
        data = resp.json()
        if "error" in data:
            raise StressAborted(f"{method}: {data['error']}")
        return data["result"]

    def run(
        self, txs: Sequence[Transaction], batch_size: int = 1, timeout_s: float = 1800.0
    ) -> RunResult:
        first_submit = time.monotonic()
        hashes = []
        for i in range(0, len(txs), batch_size):
            for tx in txs[i : i + batch_size]:
                result = self._call("tx_submitRaw", {"tx": tx.to_json()})
                hashes.append(result["tx_hash"])
        remaining = set(hashes)
        deadline = time.monotonic() + timeout_s
        while remaining and time.monotonic() < deadline:
            for tx_hash in list(remaining):
                if self._call("tx_getReceipt", {"tx_hash": tx_hash}) is not None:
                    remaining.discard(tx_hash)
            if remaining:
                time.sleep(self.poll_interval_s)
        if remaining:
            raise StressAborted(f"{len(remaining)} transactions never included")
        last_inclusion = time.monotonic()
        return RunResult(
            n_included=len(txs),
            first_submit_t=first_submit,
            last_inclusion_t=last_inclusion,
            tx_hashes={Digest32.parse(h) for h in hashes},
            blocks=[],
        )

    def close(self) -> None:
        self._client.close()
