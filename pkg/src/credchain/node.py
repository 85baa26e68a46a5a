"""Full node: mempool, chain index with fork choice and reorgs, gossip,
naive block-range sync, and the block production loop for both consensus
engines.

A node is a single logical event loop: every entry point (message, timer,
local submission) runs to completion before the next. Transports drive the
node through ``on_message``/timers; the deterministic simulator and the
TCP runtime both implement the same small Env interface.
"""

from __future__ import annotations

import logging
import os
from collections import OrderedDict
from dataclasses import dataclass
from typing import Callable, Optional

import json

from . import consensus
from .canonical import canonical_json
from .chain import (
    AccountState,
    Block,
    BlockHeader,
    BlockValidationError,
    ChainConfig,
    Consensus,
    Genesis,
    LedgerState,
    Receipt,
    Transaction,
    assemble_block,
    genesis_block,
    genesis_state,
    intrinsic_gas,
    replay_block,
    validate_block,
)
from .crypto import Address, Digest32, KeyPair, recover_address
from .registry import RegistryState

logger = logging.getLogger(__name__)

MEMPOOL_CAPACITY = 8192
SEEN_CAPACITY = 65536
MAX_MESSAGE_BYTES = 4 * 1024 * 1024
SYNC_BATCH = 64
SNAPSHOT_INTERVAL = 64
OUT_OF_TURN_WIGGLE_S = 0.5

ROLE_OBSERVER = "observer"
ROLE_SEALER = "sealer"
ROLE_MINER = "miner"


# --- wire messages ---------------------------------------------------------------


@dataclass(frozen=True)
class NetMessage:
    kind: str  # new_tx | new_block | get_blocks | blocks | status
    tx: Optional[Transaction] = None
    block: Optional[Block] = None
    blocks: tuple[Block, ...] = ()
    from_number: int = 0
    count: int = 0
    chain_id: int = 0
    genesis_hash: Optional[Digest32] = None
    head_hash: Optional[Digest32] = None
    head_number: int = 0
    total_difficulty: int = 0

    def to_json(self) -> dict:
        if self.kind == "new_tx":
            body = self.tx.to_json()
        elif self.kind == "new_block":
            body = self.block.to_json()
        elif self.kind == "get_blocks":
            body = {"from_number": self.from_number, "count": self.count}
        elif self.kind == "blocks":
            body = {"blocks": [b.to_json() for b in self.blocks]}
        elif self.kind == "status":
            body = {
                "chain_id": self.chain_id,
                "genesis_hash": self.genesis_hash.hex0x,
                "head_hash": self.head_hash.hex0x,
                "head_number": self.head_number,
                "total_difficulty": self.total_difficulty,
            }
        else:
            raise ValueError(f"unknown message kind {self.kind!r}")
        return {"kind": self.kind, "body": body}

    @classmethod
    def from_json(cls, data: dict) -> "NetMessage":
        kind = data["kind"]
        body = data["body"]
        if kind == "new_tx":
            return cls(kind=kind, tx=Transaction.from_json(body))
        if kind == "new_block":
            return cls(kind=kind, block=Block.from_json(body))
        if kind == "get_blocks":
            return cls(
                kind=kind,
                from_number=int(body["from_number"]),
                count=int(body["count"]),
            )
        if kind == "blocks":
            return cls(kind=kind, blocks=tuple(Block.from_json(b) for b in body["blocks"]))
        if kind == "status":
            return cls(
                kind=kind,
                chain_id=int(body["chain_id"]),
                genesis_hash=Digest32.parse(body["genesis_hash"]),
                head_hash=Digest32.parse(body["head_hash"]),
                head_number=int(body["head_number"]),
                total_difficulty=int(body["total_difficulty"]),
            )
        raise ValueError(f"unknown message kind {kind!r}")

    def encode(self) -> bytes:
        return canonical_json(self.to_json())

    @classmethod
    def decode(cls, raw: bytes) -> "NetMessage":
        if len(raw) > MAX_MESSAGE_BYTES:
            raise ValueError("message too large")
        return cls.from_json(json.loads(raw.decode("utf-8")))


# --- mempool ---------------------------------------------------------------------


@dataclass(frozen=True)
class SubmitResult:
    accepted: bool
    tx_hash: Optional[Digest32] = None
    cause: Optional[str] = None


class Mempool:
    """Transaction pool in global arrival order.

    The executable set keeps per-sender nonces gapless from the account
    nonce; out-of-order arrivals (gossip reorders freely) are parked in a
    per-sender future queue and promoted once the gap fills. Capacity
    covers both sets.
    """

    def __init__(self, capacity: int = MEMPOOL_CAPACITY):
        self.capacity = capacity
        self._txs: dict[Digest32, Transaction] = {}  # executable, by hash
        self._arrival: list[Digest32] = []
        self._executable: dict[Address, dict[int, Transaction]] = {}
        self._future: dict[Address, dict[int, Transaction]] = {}
        self._all_hashes: set[Digest32] = set()

    def __len__(self) -> int:
        return len(self._all_hashes)

    def __contains__(self, tx_hash: Digest32) -> bool:
        return tx_hash in self._all_hashes

    def _expected_nonce(self, sender: Address, state: LedgerState) -> int:
        return state.account(sender).nonce + len(self._executable.get(sender, ()))

    def try_add(self, tx: Transaction, state: LedgerState) -> Optional[str]:
        """Validate and insert; returns a rejection cause or None."""
        if tx.hash in self:
            return "Duplicate"
        if len(self) >= self.capacity:
            return "MempoolFull"
        if tx.signature is None or recover_address(tx.sighash, tx.signature) != tx.sender:
            return "BadSignature"
        if tx.gas_limit < intrinsic_gas(tx):
            return "GasTooLow"
        acct = state.account(tx.sender)
        if tx.nonce < acct.nonce:
            return f"BadNonce expected {acct.nonce} got {tx.nonce}"
        if tx.kind.value == "transfer" and acct.balance < tx.value:
            return "InsufficientBalance"
        expected = self._expected_nonce(tx.sender, state)
        if tx.nonce == expected:
            self._insert_executable(tx)
            self._promote(tx.sender, state)
        else:
            future = self._future.setdefault(tx.sender, {})
            if tx.nonce in future:
                return "Duplicate"
            future[tx.nonce] = tx
            self._all_hashes.add(tx.hash)
        return None

    def _insert_executable(self, tx: Transaction) -> None:
        self._txs[tx.hash] = tx
        self._arrival.append(tx.hash)
        self._executable.setdefault(tx.sender, {})[tx.nonce] = tx
        self._all_hashes.add(tx.hash)

    def _promote(self, sender: Address, state: LedgerState) -> None:
        future = self._future.get(sender)
        if not future:
            return
        expected = self._expected_nonce(sender, state)
        while expected in future:
            self._insert_executable(future.pop(expected))
            expected += 1
        if not future:
            self._future.pop(sender, None)

    @property
    def has_executable(self) -> bool:
        return bool(self._txs)

    def pending_in_order(self) -> list[Transaction]:
        return [self._txs[h] for h in self._arrival if h in self._txs]

    def _drop_executable(self, tx: Transaction, forget: bool) -> None:
        self._txs.pop(tx.hash, None)
        if forget:
            self._all_hashes.discard(tx.hash)
        nonces = self._executable.get(tx.sender)
        if nonces is not None:
            nonces.pop(tx.nonce, None)
            if not nonces:
                del self._executable[tx.sender]

    def prune(self, state: LedgerState) -> None:
        """Reconcile the pool with a new head state.

        Consumed nonces are dropped; executable runs that lost their floor
        in a reorg are demoted back to the future set; then contiguous
        futures are promoted. The executable set stays gapless from the
        account nonce, which block assembly relies on.
        """
        senders = set(self._executable) | set(self._future)
        for sender in senders:
            acct_nonce = state.account(sender).nonce
            exec_map = self._executable.get(sender, {})
            future = self._future.setdefault(sender, {})
            for nonce in [n for n in exec_map if n < acct_nonce]:
                self._drop_executable(exec_map[nonce], forget=True)
            for nonce in [n for n in future if n < acct_nonce]:
                self._all_hashes.discard(future[nonce].hash)
                del future[nonce]
            # demote anything no longer contiguous from the account nonce
            expected = acct_nonce
            for nonce in sorted(exec_map):
                if nonce == expected:
                    expected += 1
                else:
                    tx = exec_map[nonce]
                    self._drop_executable(tx, forget=False)
                    future[nonce] = tx
            self._promote(sender, state)
            if not self._future.get(sender):
                self._future.pop(sender, None)
        if len(self._arrival) > 4 * max(len(self._txs), 1):
            self._arrival = [h for h in self._arrival if h in self._txs]

    def queued_count(self, sender: Address) -> int:
        return len(self._executable.get(sender, ())) + len(
            self._future.get(sender, ())
        )


# --- environment interface ----------------------------------------------------------


class Env:
    """Transport/time facade a node runs against (see simnet and tcpnet)."""

    def now(self) -> float:
        raise NotImplementedError

    def send(self, peer_id, msg: NetMessage) -> bool:
        raise NotImplementedError

    def schedule(self, delay_s: float, fn: Callable[[], None]):
        """Run fn after delay; returns a handle with .cancel()."""
        raise NotImplementedError

    def start_pow(self, header: BlockHeader, on_sealed: Callable[[BlockHeader], None]):
        """Run a nonce search off the event path; returns cancel handle."""
        raise NotImplementedError

    @property
    def rng(self):
        raise NotImplementedError


# --- node -------------------------------------------------------------------------


class Node:
    def __init__(
        self,
        genesis: Genesis,
        keypair: KeyPair,
        role: str = ROLE_OBSERVER,
        data_dir: Optional[str] = None,
    ):
        if role == ROLE_SEALER and keypair.address not in genesis.config.poa_sealers:
            raise ValueError("sealer role requires a key in the sealer set")
        self.genesis = genesis
        self.config: ChainConfig = genesis.config
        self.keypair = keypair
        self.id: Address = keypair.address
        self.role = role
        self.data_dir = data_dir

        self.genesis_block = genesis_block(genesis)
        self.blocks: dict[Digest32, Block] = {self.genesis_block.hash: self.genesis_block}
        self.total_difficulty: dict[Digest32, int] = {
            self.genesis_block.hash: self.genesis_block.header.difficulty
        }
        self.receipts_by_block: dict[Digest32, list[Receipt]] = {
            self.genesis_block.hash: []
        }
        self.canonical: list[Digest32] = [self.genesis_block.hash]
        self.head: Block = self.genesis_block
        self.head_state: LedgerState = genesis_state(genesis)
        self._receipt_index: dict[Digest32, Receipt] = {}

        self.mempool = Mempool()
        self.peers: list = []
        self._seen: OrderedDict[Digest32, None] = OrderedDict()
        self._orphans: dict[Digest32, list[Block]] = {}
        self._signed_heights: set[int] = set()
        self._block_listeners: list[Callable[[Block, list[Receipt]], None]] = []

        self.env: Optional[Env] = None
        self._seal_timer = None
        self._pow_job = None
        self._pow_candidate_empty = True
        self._last_snapshot_height = 0
        self._blocks_fh = None
        self._restoring = False

        if data_dir:
            os.makedirs(data_dir, exist_ok=True)
            self._restoring = True
            try:
                self._restore_from_disk()
            finally:
                self._restoring = False

    # -- misc accessors -----------------------------------------------------

    @property
    def registry(self) -> RegistryState:
        return self.head_state.registry

    def head_total_difficulty(self) -> int:
        return self.total_difficulty[self.head.hash]

    def block_by_number(self, number: int) -> Optional[Block]:
        if 0 <= number < len(self.canonical):
            return self.blocks[self.canonical[number]]
        return None

    def block_by_hash(self, block_hash: Digest32) -> Optional[Block]:
        return self.blocks.get(block_hash)

    def receipt(self, tx_hash: Digest32) -> Optional[Receipt]:
        return self._receipt_index.get(tx_hash)

    def next_nonce(self, sender: Address) -> int:
        """Account nonce plus queued mempool txs; what a new tx should use."""
        return self.head_state.account(sender).nonce + self.mempool.queued_count(sender)

    def add_block_listener(self, fn: Callable[[Block, list[Receipt]], None]) -> None:
        self._block_listeners.append(fn)

    # -- lifecycle -------------------------------------------------------------

    def start(self, env: Env) -> None:
        self.env = env
        self._on_head_changed()

    def stop(self) -> None:
        self._cancel_production()
        if self._blocks_fh is not None:
            self._blocks_fh.close()
            self._blocks_fh = None

    def add_peer(self, peer_id) -> None:
        if peer_id not in self.peers:
            self.peers.append(peer_id)

    def remove_peer(self, peer_id) -> None:
        if peer_id in self.peers:
            self.peers.remove(peer_id)

    def on_peer_connected(self, peer_id) -> None:
        self.add_peer(peer_id)
        self.env.send(peer_id, self._status_message())

    def _status_message(self) -> NetMessage:
        return NetMessage(
            kind="status",
            chain_id=self.config.chain_id,
            genesis_hash=self.genesis_block.hash,
            head_hash=self.head.hash,
            head_number=self.head.number,
            total_difficulty=self.head_total_difficulty(),
        )

    # -- gossip ------------------------------------------------------------------

    def _mark_seen(self, digest: Digest32) -> bool:
        """Record a content hash; returns False if it was already known."""
        if digest in self._seen:
            self._seen.move_to_end(digest)
            return False
        self._seen[digest] = None
        if len(self._seen) > SEEN_CAPACITY:
            self._seen.popitem(last=False)
        return True

    def gossip(self, msg: NetMessage, exclude=None) -> int:
        delivered = 0
        for peer in self.peers:
            if peer == exclude:
                continue
            if self.env.send(peer, msg):
                delivered += 1
        return delivered

    # -- transactions ---------------------------------------------------------------

    def submit_tx(self, tx: Transaction, from_peer=None) -> SubmitResult:
        if tx.chain_id != self.config.chain_id:
            return SubmitResult(False, cause="WrongChain")
        cause = self.mempool.try_add(tx, self.head_state)
        if cause is not None:
            return SubmitResult(False, tx_hash=tx.hash, cause=cause)
        self._mark_seen(tx.hash)
        self.gossip(NetMessage(kind="new_tx", tx=tx), exclude=from_peer)
        if (
            self.role == ROLE_MINER
            and self._pow_job is not None
            and self._pow_candidate_empty
            and self.mempool.has_executable
        ):
            # the running search is over an empty candidate; restart so the
            # fresh transactions make it into this block, not the next
            self._restart_mining()
        return SubmitResult(True, tx_hash=tx.hash)

    # -- message handling --------------------------------------------------------------

    def on_message(self, peer_id, msg: NetMessage) -> None:
        kind = msg.kind
        if kind == "new_tx":
            if not self._mark_seen(msg.tx.hash):
                return
            result = self.submit_tx(msg.tx, from_peer=peer_id)
            if not result.accepted:
                logger.debug("%s dropped gossiped tx: %s", self.id.hex()[:8], result.cause)
        elif kind == "new_block":
            if not self._mark_seen(msg.block.hash):
                return
            outcome = self.import_block(msg.block, from_peer=peer_id)
            if outcome in ("imported", "queued", "known"):
                self.gossip(msg, exclude=peer_id)
        elif kind == "status":
            self._on_status(peer_id, msg)
        elif kind == "get_blocks":
            self._serve_blocks(peer_id, msg.from_number, msg.count)
        elif kind == "blocks":
            for block in sorted(msg.blocks, key=lambda b: b.number):
                self.import_block(block, from_peer=peer_id)

    def _on_status(self, peer_id, msg: NetMessage) -> None:
        if msg.chain_id != self.config.chain_id or msg.genesis_hash != self.genesis_block.hash:
            logger.warning("peer %s on different chain, ignoring", peer_id)
            return
        if msg.head_hash in self.blocks:
            return
        if consensus.head_is_better(
            msg.total_difficulty, msg.head_hash,
            self.head_total_difficulty(), self.head.hash,
        ):
            start = max(1, min(self.head.number + 1, msg.head_number - SYNC_BATCH + 1))
            self._request_blocks(peer_id, start, msg.head_number - start + 1)

    def _request_blocks(self, peer_id, from_number: int, count: int) -> None:
        count = max(1, min(count, SYNC_BATCH))
        self.env.send(
            peer_id, NetMessage(kind="get_blocks", from_number=from_number, count=count)
        )

    def _serve_blocks(self, peer_id, from_number: int, count: int) -> None:
        count = max(1, min(count, SYNC_BATCH))
        batch = []
        for number in range(from_number, from_number + count):
            block = self.block_by_number(number)
            if block is None:
                break
            batch.append(block)
        if batch:
            self.env.send(peer_id, NetMessage(kind="blocks", blocks=tuple(batch)))

    # -- block import -------------------------------------------------------------------

    def _seal_check(self, header: BlockHeader, parent: Block) -> bool:
        if self.config.consensus == Consensus.POW:
            if not consensus.pow_verify(header):
                return False
            expected = self._expected_difficulty(parent)
            return header.difficulty == expected
        recent = self._recent_sealers(parent)
        return consensus.poa_verify(
            header, self.config, parent.header.timestamp, recent
        )

    def _expected_difficulty(self, parent: Block) -> int:
        if parent.number == 0:
            return self.config.pow_initial_difficulty
        grandparent = self.blocks[parent.header.parent_hash]
        interval = parent.header.timestamp - grandparent.header.timestamp
        return consensus.pow_retarget(
            parent.header.difficulty, interval, self.config.pow_target_block_s
        )

    def _recent_sealers(self, parent: Block) -> list[Address]:
        window = consensus.poa_recent_window(len(self.config.poa_sealers))
        sealers: list[Address] = []
        cursor = parent
        for _ in range(window):
            if cursor.number == 0:
                break
            sealers.append(cursor.header.sealer)
            cursor = self.blocks[cursor.header.parent_hash]
        sealers.reverse()
        return sealers

    def _orphan_plausible(self, block: Block) -> bool:
        """Light check for blocks whose parent we lack: the seal must at
        least be internally consistent before we spend bandwidth on it."""
        header = block.header
        if self.config.consensus == Consensus.POW:
            return consensus.pow_verify(header)
        seal = header.seal
        if not isinstance(seal, consensus.PoaSeal):
            return False
        signer = recover_address(header.sighash, seal.signature)
        return signer is not None and signer in self.config.poa_sealers

    def _state_at(self, block_hash: Digest32) -> LedgerState:
        """State after the given block, rebuilt by branch replay."""
        if block_hash == self.head.hash:
            return self.head_state
        chain = self._branch_to_genesis(block_hash)
        state = genesis_state(self.genesis)
        for block in chain[1:]:
            replay_block(state, block)
        return state

    def _branch_to_genesis(self, block_hash: Digest32) -> list[Block]:
        chain = []
        cursor = self.blocks[block_hash]
        while True:
            chain.append(cursor)
            if cursor.number == 0:
                break
            cursor = self.blocks[cursor.header.parent_hash]
        chain.reverse()
        return chain

    def import_block(self, block: Block, from_peer=None) -> str:
        if block.hash in self.blocks:
            return "known"
        parent = self.blocks.get(block.header.parent_hash)
        if parent is None:
            if not self._orphan_plausible(block):
                return "rejected:BadSeal"
            queue = self._orphans.setdefault(block.header.parent_hash, [])
            if all(b.hash != block.hash for b in queue):
                queue.append(block)
            if from_peer is not None:
                start = max(1, block.number - SYNC_BATCH + 1)
                self._request_blocks(from_peer, start, block.number - start)
            return "queued"

        parent_state = self._state_at(parent.hash)
        try:
            post_state, receipts = validate_block(
                block,
                parent,
                parent_state,
                self.config,
                seal_check=lambda h: self._seal_check(h, parent),
            )
        except BlockValidationError as exc:
            logger.info("rejected block %d: %s", block.number, exc)
            return f"rejected:{type(exc).__name__}"

        self.blocks[block.hash] = block
        self.total_difficulty[block.hash] = (
            self.total_difficulty[parent.hash] + block.header.difficulty
        )
        self.receipts_by_block[block.hash] = receipts
        self._persist_block(block)

        if consensus.head_is_better(
            self.total_difficulty[block.hash], block.hash,
            self.head_total_difficulty(), self.head.hash,
        ):
            self._set_head(block, post_state)

        self._import_orphans_of(block.hash)
        return "imported"

    def _import_orphans_of(self, parent_hash: Digest32) -> None:
        pending = self._orphans.pop(parent_hash, None)
        if not pending:
            return
        for block in pending:
            self.import_block(block)

    def _set_head(self, new_head: Block, post_state: LedgerState) -> None:
        """Adopt a new head. post_state is the state after new_head (its
        validation already replayed the branch, so it is correct whether
        this is an extension or a reorg)."""
        old_canonical = self.canonical
        new_canonical = [b.hash for b in self._branch_to_genesis(new_head.hash)]

        fork = 0
        limit = min(len(old_canonical), len(new_canonical))
        while fork < limit and old_canonical[fork] == new_canonical[fork]:
            fork += 1

        abandoned = old_canonical[fork:]
        adopted = new_canonical[fork:]

        returned: list[Transaction] = []
        for block_hash in abandoned:
            for receipt in self.receipts_by_block.get(block_hash, []):
                self._receipt_index.pop(receipt.tx_hash, None)
            returned.extend(self.blocks[block_hash].transactions)

        self.canonical = new_canonical
        self.head = new_head
        self.head_state = post_state

        for block_hash in adopted:
            for receipt in self.receipts_by_block[block_hash]:
                self._receipt_index[receipt.tx_hash] = receipt

        # losing-branch txs go back to the pool if still valid
        self.mempool.prune(self.head_state)
        for tx in returned:
            self.mempool.try_add(tx, self.head_state)

        for block_hash in adopted:
            blk = self.blocks[block_hash]
            for listener in self._block_listeners:
                listener(blk, self.receipts_by_block[block_hash])

        self._maybe_snapshot()
        self._on_head_changed()

    # -- block production ------------------------------------------------------------------

    def _cancel_production(self) -> None:
        if self._seal_timer is not None:
            self._seal_timer.cancel()
            self._seal_timer = None
        if self._pow_job is not None:
            self._pow_job.cancel()
            self._pow_job = None

    def _on_head_changed(self) -> None:
        if self.env is None:
            return
        self._cancel_production()
        if self.role == ROLE_SEALER and self.config.consensus == Consensus.POA:
            self._schedule_poa_seal()
        elif self.role == ROLE_MINER and self.config.consensus == Consensus.POW:
            self._restart_mining()

    def _poa_eligible(self) -> bool:
        recent = self._recent_sealers(self.head)
        window = consensus.poa_recent_window(len(self.config.poa_sealers))
        return not (window and self.id in recent[-window:])

    def _schedule_poa_seal(self) -> None:
        height = self.head.number + 1
        if height in self._signed_heights or not self._poa_eligible():
            return
        in_turn = (
            consensus.poa_expected_sealer(height, self.config.poa_sealers) == self.id
        )
        seal_at = self.head.header.timestamp + self.config.poa_period_s
        delay = max(0.0, seal_at - self.env.now())
        if not in_turn:
            delay += self.env.rng.uniform(0.0, OUT_OF_TURN_WIGGLE_S)
        parent_hash = self.head.hash
        self._seal_timer = self.env.schedule(
            delay, lambda: self._try_poa_seal(parent_hash, height)
        )

    def _try_poa_seal(self, parent_hash: Digest32, height: int) -> None:
        self._seal_timer = None
        if self.head.hash != parent_hash or height in self._signed_heights:
            return
        if not self._poa_eligible():
            return
        timestamp = max(
            self.head.header.timestamp + self.config.poa_period_s, int(self.env.now())
        )
        candidate, _ = assemble_block(
            self.head,
            self.mempool.pending_in_order(),
            self.head_state,
            self.config,
            timestamp=timestamp,
            sealer=self.id,
            difficulty=1,
        )
        try:
            sealed = consensus.poa_seal(
                candidate.header, self.keypair, self.config, self.head.header.timestamp
            )
        except (consensus.NotAuthorized, consensus.TooEarly) as exc:
            logger.warning("seal attempt failed: %s", exc)
            return
        block = Block(header=sealed, transactions=candidate.transactions)
        self._signed_heights.add(height)
        outcome = self.import_block(block)
        if outcome == "imported":
            self._mark_seen(block.hash)
            self.gossip(NetMessage(kind="new_block", block=block))
        else:
            logger.warning("own sealed block not imported: %s", outcome)

    def _restart_mining(self) -> None:
        if self._pow_job is not None:
            self._pow_job.cancel()
            self._pow_job = None
        parent = self.head
        difficulty = self._expected_difficulty(parent)
        timestamp = max(int(self.env.now()), parent.header.timestamp)
        candidate, _ = assemble_block(
            parent,
            self.mempool.pending_in_order(),
            self.head_state,
            self.config,
            timestamp=timestamp,
            sealer=self.id,
            difficulty=difficulty,
        )
        self._pow_candidate_empty = not candidate.transactions
        parent_hash = parent.hash
        transactions = candidate.transactions

        def on_sealed(header: BlockHeader) -> None:
            self._pow_job = None
            if self.head.hash != parent_hash:
                return  # stale solution; a restart is already under way
            block = Block(header=header, transactions=transactions)
            outcome = self.import_block(block)
            if outcome == "imported":
                self._mark_seen(block.hash)
                self.gossip(NetMessage(kind="new_block", block=block))
            else:
                logger.warning("own mined block not imported: %s", outcome)
                self._restart_mining()

        self._pow_job = self.env.start_pow(candidate.header, on_sealed)

    # -- persistence -----------------------------------------------------------------------

    def _paths(self):
        return (
            os.path.join(self.data_dir, "blocks.ndjson"),
            os.path.join(self.data_dir, "snapshot.json"),
        )

    def _persist_block(self, block: Block) -> None:
        if not self.data_dir or self._restoring:
            return
        if self._blocks_fh is None:
            self._blocks_fh = open(self._paths()[0], "a", encoding="utf-8")
        self._blocks_fh.write(canonical_json(block.to_json()).decode("utf-8") + "\n")
        self._blocks_fh.flush()

    def _maybe_snapshot(self) -> None:
        if not self.data_dir:
            return
        if self.head.number - self._last_snapshot_height < SNAPSHOT_INTERVAL:
            return
        snapshot = {
            "head": self.head.hash.hex0x,
            "height": self.head.number,
            "accounts": {
                a.hex0x: [s.nonce, s.balance]
                for a, s in sorted(self.head_state.accounts.items())
            },
            "registry": self.head_state.registry.to_json(),
        }
        path = self._paths()[1]
        tmp = path + ".tmp"
        with open(tmp, "w", encoding="utf-8") as fh:
            json.dump(snapshot, fh)
        os.replace(tmp, path)
        self._last_snapshot_height = self.head.number

    def _restore_from_disk(self) -> None:
        blocks_path, snapshot_path = self._paths()
        if not os.path.exists(blocks_path):
            return
        stored: list[Block] = []
        with open(blocks_path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    stored.append(Block.from_json(json.loads(line)))

        snapshot = None
        if os.path.exists(snapshot_path):
            with open(snapshot_path, encoding="utf-8") as fh:
                snapshot = json.load(fh)

        if snapshot is not None:
            # trust the snapshot for everything at or below its height, then
            # replay the tail through normal import
            by_hash = {b.hash: b for b in stored}
            head_hash = Digest32.parse(snapshot["head"])
            if head_hash in by_hash:
                chain = []
                cursor = by_hash[head_hash]
                while True:
                    chain.append(cursor)
                    if cursor.number <= 1:
                        break
                    parent = by_hash.get(cursor.header.parent_hash)
                    if parent is None:
                        logger.warning("snapshot ancestry incomplete; replaying all")
                        chain = None
                        break
                    cursor = parent
                if chain is None:
                    for block in stored:
                        self.import_block(block)
                    return
                chain.reverse()
                for block in chain:
                    self.blocks[block.hash] = block
                    self.total_difficulty[block.hash] = (
                        self.total_difficulty[block.header.parent_hash]
                        + block.header.difficulty
                    )
                    self.receipts_by_block.setdefault(block.hash, [])
                    self.canonical.append(block.hash)
                self.head = by_hash[head_hash]
                state = LedgerState()
                for addr_hex, (nonce, balance) in snapshot["accounts"].items():
                    state.accounts[Address.parse(addr_hex)] = AccountState(nonce, balance)
                state.registry = RegistryState.from_json(snapshot["registry"])
                self.head_state = state
                self._last_snapshot_height = self.head.number
                # receipts below the snapshot are rebuilt by replay
                replay_state = genesis_state(self.genesis)
                for block in chain:
                    receipts = replay_block(replay_state, block)
                    self.receipts_by_block[block.hash] = receipts
                    for receipt in receipts:
                        self._receipt_index[receipt.tx_hash] = receipt

        for block in stored:
            self.import_block(block)
