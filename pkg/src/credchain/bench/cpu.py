"""CPU usage sampling and the miner-vs-sealer comparison scenarios.

The metric is process CPU time over wall time as a percentage of one core
(100 = one core fully busy; more than 100 means several). Hardware power
draw is out of scope; this is the software-observable proxy for it.

Comparison scenarios launch a real single-validator node in a subprocess
(so samples are not polluted by the harness) and optionally stress it by
feeding signed transactions over the live TCP transport.
"""

from __future__ import annotations

import json
import os
import socket
import subprocess
import sys
import threading
import time
from typing import Optional, Sequence

import psutil

from ..chain import Genesis
from ..node import NetMessage
from ..tcpnet import recv_frame, send_frame
from .reports import CpuSample
from .stress import SENDER_KEYS, VALIDATOR_KEYS, build_transfer_workload, make_bench_genesis


class ProcessGone(RuntimeError):
    pass


def cpu_monitor(
    process_id: int, interval_s: float = 1.0, duration_s: float = 60.0
) -> list[CpuSample]:
    """Sample a process's CPU usage until duration_s elapses."""
    try:
        proc = psutil.Process(process_id)
        proc.cpu_percent(None)  # prime the internal counter
    except psutil.NoSuchProcess as exc:
        raise ProcessGone(f"pid {process_id}") from exc
    samples: list[CpuSample] = []
    start = time.monotonic()
    while True:
        elapsed = time.monotonic() - start
        if elapsed >= duration_s:
            break
        time.sleep(min(interval_s, duration_s - elapsed))
        try:
            pct = proc.cpu_percent(None)
        except psutil.NoSuchProcess as exc:
            raise ProcessGone(f"pid {process_id}") from exc
        samples.append(CpuSample(t_s=time.monotonic() - start, percent_one_core=pct))
    return samples


def mean_cpu(samples: Sequence[CpuSample]) -> float:
    return sum(s.percent_one_core for s in samples) / len(samples)


def _free_port() -> int:
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


def _write_node_files(tmpdir: str, consensus: str) -> tuple[str, int]:
    port = _free_port()
    genesis = make_bench_genesis(
        consensus,
        gas_limit=1_000_000,
        n_validators=1,
        # real keccak throughput is around a few thousand hashes per second,
        # so this difficulty keeps the miner permanently busy
        pow_hashes_per_s=2000.0,
        pow_target_block_s=10,
    )
    genesis_path = os.path.join(tmpdir, "genesis.json")
    genesis.save(genesis_path)
    config = {
        "genesis": genesis_path,
        "role": "sealer" if consensus == "poa" else "miner",
        "sk": "0x%064x" % VALIDATOR_KEYS[0].sk,
        "listen": f"127.0.0.1:{port}",
        "peers": [],
        "data_dir": os.path.join(tmpdir, "data"),
    }
    config_path = os.path.join(tmpdir, "node.json")
    with open(config_path, "w", encoding="utf-8") as fh:
        json.dump(config, fh, indent=2)
    return config_path, port


def _wait_port(port: int, timeout_s: float = 15.0) -> None:
    deadline = time.monotonic() + timeout_s
    while time.monotonic() < deadline:
        try:
            with socket.create_connection(("127.0.0.1", port), 1.0):
                return
        except OSError:
            time.sleep(0.1)
    raise TimeoutError(f"node did not open port {port}")


def _feed_transactions(
    port: int, genesis: Genesis, n_tx: int, duration_s: float, stop: threading.Event
) -> None:
    """Act as a minimal peer: handshake, then push signed txs at a steady
    pace while draining whatever the node gossips back."""
    txs = build_transfer_workload(n_tx, genesis.config.chain_id)
    sock = socket.create_connection(("127.0.0.1", port), 5.0)
    sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)

    from ..chain import genesis_block

    gblock = genesis_block(genesis)
    status = NetMessage(
        kind="status",
        chain_id=genesis.config.chain_id,
        genesis_hash=gblock.hash,
        head_hash=gblock.hash,
        head_number=0,
        total_difficulty=gblock.header.difficulty,
    )
    send_frame(sock, status.encode())

    def drain():
        try:
            while not stop.is_set():
                if recv_frame(sock) is None:
                    return
        except (OSError, ValueError):
            return

    threading.Thread(target=drain, daemon=True).start()
    interval = duration_s / max(len(txs), 1)
    try:
        for tx in txs:
            if stop.is_set():
                break
            send_frame(sock, NetMessage(kind="new_tx", tx=tx).encode())
            time.sleep(interval)
    except OSError:
        pass
    finally:
        try:
            sock.close()
        except OSError:
            pass


def run_consensus_cpu_scenario(
    consensus: str,
    stress: bool,
    duration_s: float,
    tmpdir: str,
    n_tx: int = 1000,
    interval_s: float = 1.0,
) -> list[CpuSample]:
    """Launch a single-validator node subprocess, optionally under a
    transaction feed, and sample its CPU for duration_s."""
    os.makedirs(tmpdir, exist_ok=True)
    config_path, port = _write_node_files(tmpdir, consensus)
    proc = subprocess.Popen(
        [sys.executable, "-m", "credchain.cli", "run", "--config", config_path],
        stdout=subprocess.DEVNULL,
        stderr=subprocess.DEVNULL,
    )
    stop = threading.Event()
    feeder: Optional[threading.Thread] = None
    try:
        _wait_port(port)
        if stress:
            genesis = Genesis.load(os.path.join(tmpdir, "genesis.json"))
            feeder = threading.Thread(
                target=_feed_transactions,
                args=(port, genesis, n_tx, duration_s, stop),
                daemon=True,
            )
            feeder.start()
        time.sleep(1.0)  # let production start before sampling
        return cpu_monitor(proc.pid, interval_s, duration_s)
    finally:
        stop.set()
        proc.terminate()
        try:
            proc.wait(timeout=5)
        except subprocess.TimeoutExpired:
            proc.kill()
