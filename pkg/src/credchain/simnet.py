"""Deterministic in-memory multi-node harness.

A single heapq-driven virtual clock delivers messages with seeded
per-link latency; identical seeds give identical event traces, byte for
byte. Mining cost is modeled as (attempts / virtual hash rate) of delay,
where attempts come from the real nonce search, so sealed headers stay
verifiable and sealing times follow the true geometric distribution.
"""

from __future__ import annotations

import heapq
import itertools
import random
from dataclasses import dataclass
from typing import Callable, Iterable, Optional, Sequence

from .chain import Block, BlockHeader, Genesis
from .consensus import pow_seal
from .crypto import Digest32, KeyPair, keccak_256
from .node import Env, NetMessage, Node, ROLE_MINER, ROLE_OBSERVER, ROLE_SEALER

DEFAULT_LATENCY_RANGE_MS = (1.0, 10.0)


@dataclass(frozen=True)
class SimParams:
    latency_min_ms: float = DEFAULT_LATENCY_RANGE_MS[0]
    latency_max_ms: float = DEFAULT_LATENCY_RANGE_MS[1]
    pow_hashes_per_s: float = 20.0  # virtual per-miner hash rate


class _Timer:
    __slots__ = ("fn", "cancelled")

    def __init__(self, fn: Callable[[], None]):
        self.fn = fn
        self.cancelled = False

    def cancel(self) -> None:
        self.cancelled = True


class _SimMiningJob:
    """Chunked nonce search on the virtual clock.

    Each slice burns a bounded number of real attempts and advances virtual
    time by attempts/hashrate, so cancelled jobs only ever paid for the
    virtual time they actually ran, and sealing times still follow the
    geometric law of the real search.
    """

    SLICE_VIRTUAL_S = 8.0

    def __init__(self, net: "SimNetwork", header: BlockHeader, on_sealed):
        self.net = net
        self.header = header
        self.on_sealed = on_sealed
        self.rate = net.params.pow_hashes_per_s
        self.chunk = max(1, round(self.rate * self.SLICE_VIRTUAL_S))
        self.next_nonce = 0
        self.cancelled = False
        self._timer: Optional[_Timer] = None
        self._step()

    def _step(self) -> None:
        if self.cancelled:
            return
        sealed = pow_seal(
            self.header, start_nonce=self.next_nonce, max_attempts=self.chunk
        )
        if sealed is not None:
            attempts_in_slice = sealed.seal.nonce - self.next_nonce + 1
            delay = attempts_in_slice / self.rate
            self._timer = self.net._schedule(
                delay, lambda: None if self.cancelled else self.on_sealed(sealed)
            )
        else:
            self.next_nonce += self.chunk
            self._timer = self.net._schedule(self.chunk / self.rate, self._step)

    def cancel(self) -> None:
        self.cancelled = True
        if self._timer is not None:
            self._timer.cancel()


class SimEnv(Env):
    def __init__(self, net: "SimNetwork", index: int, rng: random.Random):
        self.net = net
        self.index = index
        self._rng = rng

    def now(self) -> float:
        return self.net.now

    def send(self, peer_id: int, msg: NetMessage) -> bool:
        return self.net._send(self.index, peer_id, msg)

    def schedule(self, delay_s: float, fn: Callable[[], None]) -> _Timer:
        return self.net._schedule(delay_s, fn)

    def start_pow(
        self, header: BlockHeader, on_sealed: Callable[[BlockHeader], None]
    ) -> _SimMiningJob:
        return _SimMiningJob(self.net, header, on_sealed)

    @property
    def rng(self) -> random.Random:
        return self._rng


def build_topology(n_nodes: int, topology) -> set[tuple[int, int]]:
    """Edge set for a named shape or an explicit iterable of pairs."""
    if not isinstance(topology, str):
        return {(min(a, b), max(a, b)) for a, b in topology}
    if topology == "full_mesh":
        return {(a, b) for a in range(n_nodes) for b in range(a + 1, n_nodes)}
    if topology == "line":
        return {(i, i + 1) for i in range(n_nodes - 1)}
    if topology == "ring":
        edges = {(i, i + 1) for i in range(n_nodes - 1)}
        if n_nodes > 2:
            edges.add((0, n_nodes - 1))
        return edges
    if topology == "star":
        return {(0, i) for i in range(1, n_nodes)}
    raise ValueError(f"unknown topology {topology!r}")


class SimNetwork:
    def __init__(
        self,
        genesis: Genesis,
        keypairs: Sequence[KeyPair],
        roles: Sequence[str],
        topology="full_mesh",
        seed: int = 0,
        params: SimParams = SimParams(),
    ):
        assert len(keypairs) == len(roles)
        self.genesis = genesis
        self.params = params
        self.seed = seed
        self.now = float(genesis.timestamp)
        self._queue: list[tuple[float, int, _Timer]] = []
        self._seq = itertools.count()
        self.edges = build_topology(len(keypairs), topology)
        self._partition_groups: Optional[list[set[int]]] = None
        self._link_rng: dict[tuple[int, int], random.Random] = {}
        self.trace: list[tuple[float, int, str]] = []
        self.delivered_messages = 0
        self.dropped_messages = 0

        self.nodes: list[Node] = []
        for i, (kp, role) in enumerate(zip(keypairs, roles)):
            node = Node(genesis, kp, role=role)
            self.nodes.append(node)
        for a, b in self.edges:
            self.nodes[a].add_peer(b)
            self.nodes[b].add_peer(a)
        for i, node in enumerate(self.nodes):
            node.start(SimEnv(self, i, random.Random((seed << 20) ^ (i * 0x9E3779B1))))

    # -- clock and queue ---------------------------------------------------

    def _schedule(self, delay_s: float, fn: Callable[[], None]) -> _Timer:
        timer = _Timer(fn)
        heapq.heappush(self._queue, (self.now + max(delay_s, 0.0), next(self._seq), timer))
        return timer

    def call_in(self, delay_s: float, fn: Callable[[], None]) -> _Timer:
        return self._schedule(delay_s, fn)

    def run_until_time(self, t_abs: float) -> None:
        queue = self._queue
        while queue and queue[0][0] <= t_abs:
            t, _, timer = heapq.heappop(queue)
            self.now = t
            if not timer.cancelled:
                timer.fn()
        self.now = max(self.now, t_abs)

    def run_for(self, dt: float) -> None:
        self.run_until_time(self.now + dt)

    def run_until(self, pred: Callable[[], bool], max_t_abs: float) -> bool:
        """Drain events until pred() holds; False if time/events ran out."""
        if pred():
            return True
        queue = self._queue
        while queue and queue[0][0] <= max_t_abs:
            t, _, timer = heapq.heappop(queue)
            self.now = t
            if not timer.cancelled:
                timer.fn()
                if pred():
                    return True
        return pred()

    # -- links ------------------------------------------------------------------

    def _connected(self, a: int, b: int) -> bool:
        if (min(a, b), max(a, b)) not in self.edges:
            return False
        if self._partition_groups is None:
            return True
        for group in self._partition_groups:
            if a in group:
                return b in group
        return False

    def _latency(self, a: int, b: int) -> float:
        key = (a, b)
        rng = self._link_rng.get(key)
        if rng is None:
            rng = random.Random((self.seed << 24) ^ (a * 131071) ^ (b * 8191))
            self._link_rng[key] = rng
        return rng.uniform(self.params.latency_min_ms, self.params.latency_max_ms) / 1000.0

    def _send(self, src: int, dst: int, msg: NetMessage) -> bool:
        if not self._connected(src, dst):
            self.dropped_messages += 1
            return False
        delay = self._latency(src, dst)

        def deliver():
            self.delivered_messages += 1
            self.trace.append((self.now, dst, msg.kind))
            self.nodes[dst].on_message(src, msg)

        self._schedule(delay, deliver)
        return True

    # -- partitions ----------------------------------------------------------------

    def partition(self, groups: Iterable[Iterable[int]]) -> None:
        self._partition_groups = [set(g) for g in groups]

    def heal(self) -> None:
        self._partition_groups = None
        # re-handshake so the sides learn about each other's progress
        for a, b in self.edges:
            self.nodes[a].on_peer_connected(b)
            self.nodes[b].on_peer_connected(a)

    # -- convenience --------------------------------------------------------------------

    def submit_tx(self, node_index: int, tx) -> object:
        return self.nodes[node_index].submit_tx(tx)

    def heads(self) -> list[Digest32]:
        return [node.head.hash for node in self.nodes]

    def stop_production(self) -> None:
        """Demote every node to observer so gossip can drain to a fixpoint
        (PoW nets never quiesce on their own)."""
        for node in self.nodes:
            node._cancel_production()
            node.role = ROLE_OBSERVER

    def converged(self) -> bool:
        first = self.nodes[0].head.hash
        return all(n.head.hash == first for n in self.nodes)

    def trace_digest(self) -> Digest32:
        """Fingerprint of delivery order plus final heads, for determinism
        assertions across runs."""
        parts = []
        for t, dst, kind in self.trace:
            parts.append(f"{t:.9f}|{dst}|{kind}")
        parts.extend(h.hex() for h in self.heads())
        return Digest32(keccak_256("\n".join(parts).encode()))


def sim_network(
    n_nodes: int,
    topology="full_mesh",
    seed: int = 0,
    params: SimParams = SimParams(),
    *,
    genesis: Genesis,
    keypairs: Sequence[KeyPair],
    roles: Sequence[str],
) -> SimNetwork:
    """Build a deterministic multi-node net. Wrapper kept thin; all the
    interesting knobs live on SimNetwork."""
    if n_nodes < 1:
        raise ValueError("need at least one node")
    if len(keypairs) != n_nodes:
        raise ValueError("keypairs must match n_nodes")
    return SimNetwork(
        genesis, keypairs, roles, topology=topology, seed=seed, params=params
    )
