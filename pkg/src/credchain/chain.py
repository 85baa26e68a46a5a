"""Ledger data types, transaction validation, gas accounting and the
state-transition function.

Canonical JSON of the field trees is both the wire format and the hashing
preimage. Transaction sighashes cover every field except the signature
(chain id included, for replay protection); block hashes cover the sealed
header.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from enum import Enum
from functools import lru_cache
from typing import Callable, Iterable, Optional, Sequence, Union

from .canonical import canonical_json
from .crypto import (
    Address,
    Digest32,
    KeyPair,
    Signature,
    ZERO_ADDRESS,
    ZERO_DIGEST,
    keccak_256,
    recover_address,
)
from .registry import RegistryState

GAS_TX_BASE = 21_000
GAS_PER_STORED_HASH = 20_000

DEFAULT_BLOCK_GAS_LIMIT = 1_000_000
DEFAULT_POA_PERIOD_S = 4
DEFAULT_POW_TARGET_BLOCK_S = 15
DEFAULT_GENESIS_TIME = 1_700_000_000


class TxKind(str, Enum):
    TRANSFER = "transfer"
    REGISTRY_STORE = "registry_store"
    REGISTRY_STORE_BATCH = "registry_store_batch"


class TxStatus(str, Enum):
    SUCCESS = "success"
    OUT_OF_GAS = "out_of_gas"
    REVERTED = "reverted"


# --- errors -------------------------------------------------------------------


class TxValidationError(Exception):
    pass


class BadSignature(TxValidationError):
    pass


class BadNonce(TxValidationError):
    def __init__(self, expected: int, got: int):
        super().__init__(f"bad nonce: expected {expected}, got {got}")
        self.expected = expected
        self.got = got


class GasTooLow(TxValidationError):
    pass


class InsufficientBalance(TxValidationError):
    pass


class BlockValidationError(Exception):
    pass


class BadParent(BlockValidationError):
    pass


class BadTxRoot(BlockValidationError):
    pass


class BadGasUsed(BlockValidationError):
    pass


class BadSeal(BlockValidationError):
    pass


class BadTx(BlockValidationError):
    def __init__(self, index: int, cause: TxValidationError):
        super().__init__(f"tx {index} invalid: {cause}")
        self.index = index
        self.cause = cause


# --- seals ----------------------------------------------------------------------


@dataclass(frozen=True)
class PowSeal:
    nonce: int  # 64-bit search counter
    mix: Digest32


@dataclass(frozen=True)
class PoaSeal:
    signature: Signature


Seal = Union[PowSeal, PoaSeal, None]


# --- transactions ----------------------------------------------------------------


@dataclass(frozen=True)
class Transaction:
    nonce: int
    sender: Address
    kind: TxKind
    gas_limit: int
    chain_id: int
    to: Optional[Address] = None
    value: int = 0
    payload: tuple[Digest32, ...] = ()
    signature: Optional[Signature] = None

    def __post_init__(self):
        if self.kind == TxKind.TRANSFER:
            if self.to is None:
                raise ValueError("transfer requires a destination")
            if self.value < 0:
                raise ValueError("negative value")
            if self.payload:
                raise ValueError("transfer carries no payload")
        else:
            if not self.payload:
                raise ValueError("registry tx requires a non-empty payload")
            if self.to is not None or self.value:
                raise ValueError("registry tx carries no destination/value")
        if self.gas_limit < 0 or self.nonce < 0:
            raise ValueError("negative gas_limit/nonce")

    def _signing_fields(self) -> dict:
        fields: dict = {
            "chain_id": self.chain_id,
            "from": self.sender.hex0x,
            "gas_limit": self.gas_limit,
            "kind": self.kind.value,
            "nonce": self.nonce,
        }
        if self.kind == TxKind.TRANSFER:
            fields["to"] = self.to.hex0x
            fields["value"] = self.value
        else:
            fields["payload"] = [d.hex0x for d in self.payload]
        return fields

    @property
    def sighash(self) -> Digest32:
        cached = self.__dict__.get("_sighash")
        if cached is None:
            cached = Digest32(keccak_256(canonical_json(self._signing_fields())))
            object.__setattr__(self, "_sighash", cached)
        return cached

    @property
    def hash(self) -> Digest32:
        cached = self.__dict__.get("_hash")
        if cached is None:
            cached = Digest32(keccak_256(canonical_json(self.to_json())))
            object.__setattr__(self, "_hash", cached)
        return cached

    def to_json(self) -> dict:
        fields = self._signing_fields()
        if self.signature is not None:
            fields["signature"] = "0x" + self.signature.to_bytes().hex()
        return fields

    @classmethod
    def from_json(cls, data: dict) -> "Transaction":
        kind = TxKind(data["kind"])
        sig = None
        if "signature" in data:
            raw = data["signature"]
            sig = Signature.from_bytes(bytes.fromhex(raw[2:] if raw.startswith("0x") else raw))
        return cls(
            nonce=int(data["nonce"]),
            sender=Address.parse(data["from"]),
            kind=kind,
            gas_limit=int(data["gas_limit"]),
            chain_id=int(data["chain_id"]),
            to=Address.parse(data["to"]) if kind == TxKind.TRANSFER else None,
            value=int(data.get("value", 0)) if kind == TxKind.TRANSFER else 0,
            payload=tuple(Digest32.parse(h) for h in data.get("payload", ())),
            signature=sig,
        )


def tx_sighash(tx: Transaction) -> Digest32:
    return tx.sighash


def sign_tx(tx: Transaction, keypair: KeyPair) -> Transaction:
    from .crypto import sign  # local import keeps module load order simple

    return replace(tx, signature=sign(keypair.sk, tx.sighash))


def intrinsic_gas(tx: Transaction) -> int:
    if tx.kind == TxKind.TRANSFER:
        return GAS_TX_BASE
    return GAS_TX_BASE + GAS_PER_STORED_HASH * len(tx.payload)


def max_hashes_per_tx(block_gas_limit: int) -> int:
    """Largest registry batch that still fits a block's gas budget."""
    return (block_gas_limit - GAS_TX_BASE) // GAS_PER_STORED_HASH


@dataclass(frozen=True)
class Receipt:
    tx_hash: Digest32
    block_hash: Digest32
    block_number: int
    status: TxStatus
    gas_used: int

    def to_json(self) -> dict:
        return {
            "tx_hash": self.tx_hash.hex0x,
            "block_hash": self.block_hash.hex0x,
            "block_number": self.block_number,
            "status": self.status.value,
            "gas_used": self.gas_used,
        }

    @classmethod
    def from_json(cls, data: dict) -> "Receipt":
        return cls(
            tx_hash=Digest32.parse(data["tx_hash"]),
            block_hash=Digest32.parse(data["block_hash"]),
            block_number=int(data["block_number"]),
            status=TxStatus(data["status"]),
            gas_used=int(data["gas_used"]),
        )


# --- blocks -------------------------------------------------------------------


@dataclass(frozen=True)
class BlockHeader:
    number: int
    parent_hash: Digest32
    timestamp: int
    gas_limit: int
    gas_used: int
    tx_root: Digest32
    sealer: Address
    difficulty: int
    seal: Seal = None

    def _fields_without_seal(self) -> dict:
        return {
            "difficulty": self.difficulty,
            "gas_limit": self.gas_limit,
            "gas_used": self.gas_used,
            "number": self.number,
            "parent_hash": self.parent_hash.hex0x,
            "sealer": self.sealer.hex0x,
            "timestamp": self.timestamp,
            "tx_root": self.tx_root.hex0x,
        }

    @property
    def sighash(self) -> Digest32:
        """Digest of the header minus its seal; the sealing preimage."""
        cached = self.__dict__.get("_sighash")
        if cached is None:
            cached = Digest32(keccak_256(canonical_json(self._fields_without_seal())))
            object.__setattr__(self, "_sighash", cached)
        return cached

    @property
    def hash(self) -> Digest32:
        cached = self.__dict__.get("_hash")
        if cached is None:
            cached = Digest32(keccak_256(canonical_json(self.to_json())))
            object.__setattr__(self, "_hash", cached)
        return cached

    def to_json(self) -> dict:
        fields = self._fields_without_seal()
        if isinstance(self.seal, PowSeal):
            fields["pow_nonce"] = "0x%016x" % self.seal.nonce
            fields["pow_mix"] = self.seal.mix.hex0x
        elif isinstance(self.seal, PoaSeal):
            fields["poa_sig"] = "0x" + self.seal.signature.to_bytes().hex()
        return fields

    @classmethod
    def from_json(cls, data: dict) -> "BlockHeader":
        seal: Seal = None
        if "pow_nonce" in data:
            seal = PowSeal(
                nonce=int(data["pow_nonce"], 16),
                mix=Digest32.parse(data["pow_mix"]),
            )
        elif "poa_sig" in data:
            raw = data["poa_sig"]
            seal = PoaSeal(
                signature=Signature.from_bytes(
                    bytes.fromhex(raw[2:] if raw.startswith("0x") else raw)
                )
            )
        return cls(
            number=int(data["number"]),
            parent_hash=Digest32.parse(data["parent_hash"]),
            timestamp=int(data["timestamp"]),
            gas_limit=int(data["gas_limit"]),
            gas_used=int(data["gas_used"]),
            tx_root=Digest32.parse(data["tx_root"]),
            sealer=Address.parse(data["sealer"]),
            difficulty=int(data["difficulty"]),
            seal=seal,
        )


@dataclass(frozen=True)
class Block:
    header: BlockHeader
    transactions: tuple[Transaction, ...] = ()

    @property
    def hash(self) -> Digest32:
        return self.header.hash

    @property
    def number(self) -> int:
        return self.header.number

    def to_json(self) -> dict:
        return {
            "header": self.header.to_json(),
            "transactions": [tx.to_json() for tx in self.transactions],
        }

    @classmethod
    def from_json(cls, data: dict) -> "Block":
        return cls(
            header=BlockHeader.from_json(data["header"]),
            transactions=tuple(Transaction.from_json(t) for t in data["transactions"]),
        )


@lru_cache(maxsize=4096)
def _tx_root_of(joined_hashes: bytes) -> Digest32:
    return Digest32(keccak_256(joined_hashes))


def compute_tx_root(transactions: Sequence[Transaction]) -> Digest32:
    """Digest of the ordered tx-hash list (fixed-width concatenation).

    Memoized: every miner candidate and every validating node hashes the
    same list for any given block content.
    """
    return _tx_root_of(b"".join(tx.hash for tx in transactions))


# --- state --------------------------------------------------------------------


class AccountState:
    __slots__ = ("nonce", "balance")

    def __init__(self, nonce: int = 0, balance: int = 0):
        self.nonce = nonce
        self.balance = balance

    def __eq__(self, other):
        return (
            isinstance(other, AccountState)
            and self.nonce == other.nonce
            and self.balance == other.balance
        )

    def __repr__(self):
        return f"AccountState(nonce={self.nonce}, balance={self.balance})"


_EMPTY_ACCOUNT = AccountState()


class LedgerState:
    """Full mutable chain state: accounts plus the hash registry.

    Mutation happens only on the block-application path; callers that need
    isolation clone first.
    """

    __slots__ = ("accounts", "registry")

    def __init__(self, accounts=None, registry=None):
        self.accounts: dict[Address, AccountState] = accounts if accounts is not None else {}
        self.registry: RegistryState = registry if registry is not None else RegistryState()

    def account(self, addr: Address) -> AccountState:
        """Read-only view; missing accounts read as (nonce 0, balance 0)."""
        return self.accounts.get(addr, _EMPTY_ACCOUNT)

    def _mutable_account(self, addr: Address) -> AccountState:
        acct = self.accounts.get(addr)
        if acct is None:
            acct = AccountState()
            self.accounts[addr] = acct
        return acct

    def clone(self) -> "LedgerState":
        accounts = {
            addr: AccountState(a.nonce, a.balance) for addr, a in self.accounts.items()
        }
        return LedgerState(accounts, self.registry.clone())

    def digest(self) -> Digest32:
        """Order-independent fingerprint of the whole state, for tests."""
        doc = {
            "accounts": {
                a.hex0x: [s.nonce, s.balance] for a, s in sorted(self.accounts.items())
            },
            "registry": [[d.hex0x, n] for d, n in self.registry.entries],
        }
        return Digest32(keccak_256(canonical_json(doc)))


# --- configuration ---------------------------------------------------------------


class Consensus(str, Enum):
    POW = "pow"
    POA = "poa"


@dataclass(frozen=True)
class ChainConfig:
    chain_id: int = 1
    consensus: Consensus = Consensus.POA
    block_gas_limit: int = DEFAULT_BLOCK_GAS_LIMIT
    poa_sealers: tuple[Address, ...] = ()
    poa_period_s: int = DEFAULT_POA_PERIOD_S
    pow_initial_difficulty: int = 1000
    pow_target_block_s: int = DEFAULT_POW_TARGET_BLOCK_S

    def __post_init__(self):
        if self.consensus == Consensus.POA and not self.poa_sealers:
            raise ValueError("PoA requires a non-empty sealer set")
        # a single-hash store must fit, or the chain cannot anchor anything
        if self.block_gas_limit < GAS_TX_BASE + GAS_PER_STORED_HASH:
            raise ValueError("block gas limit below the smallest registry tx")


@dataclass(frozen=True)
class Genesis:
    config: ChainConfig
    balances: dict[Address, int] = field(default_factory=dict)
    timestamp: int = DEFAULT_GENESIS_TIME

    def to_json(self) -> dict:
        return {
            "chain_id": self.config.chain_id,
            "consensus": self.config.consensus.value,
            "block_gas_limit": self.config.block_gas_limit,
            "sealers": [a.hex0x for a in self.config.poa_sealers],
            "poa_period_s": self.config.poa_period_s,
            "pow_initial_difficulty": self.config.pow_initial_difficulty,
            "pow_target_block_s": self.config.pow_target_block_s,
            "balances": {a.hex0x: v for a, v in sorted(self.balances.items())},
            "timestamp": self.timestamp,
        }

    @classmethod
    def from_json(cls, data: dict) -> "Genesis":
        config = ChainConfig(
            chain_id=int(data["chain_id"]),
            consensus=Consensus(data["consensus"]),
            block_gas_limit=int(data.get("block_gas_limit", DEFAULT_BLOCK_GAS_LIMIT)),
            poa_sealers=tuple(Address.parse(a) for a in data.get("sealers", [])),
            poa_period_s=int(data.get("poa_period_s", DEFAULT_POA_PERIOD_S)),
            pow_initial_difficulty=int(data.get("pow_initial_difficulty", 1000)),
            pow_target_block_s=int(
                data.get("pow_target_block_s", DEFAULT_POW_TARGET_BLOCK_S)
            ),
        )
        balances = {
            Address.parse(a): int(v) for a, v in data.get("balances", {}).items()
        }
        return cls(config=config, balances=balances, timestamp=int(data.get("timestamp", DEFAULT_GENESIS_TIME)))

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, indent=2, sort_keys=True)

    @classmethod
    def load(cls, path) -> "Genesis":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))


def genesis_block(genesis: Genesis) -> Block:
    config = genesis.config
    header = BlockHeader(
        number=0,
        parent_hash=ZERO_DIGEST,
        timestamp=genesis.timestamp,
        gas_limit=config.block_gas_limit,
        gas_used=0,
        tx_root=compute_tx_root(()),
        sealer=ZERO_ADDRESS,
        difficulty=(
            config.pow_initial_difficulty if config.consensus == Consensus.POW else 1
        ),
        seal=None,
    )
    return Block(header=header)


def genesis_state(genesis: Genesis) -> LedgerState:
    state = LedgerState()
    for addr, balance in genesis.balances.items():
        state._mutable_account(addr).balance = balance
    return state


# --- state transition ---------------------------------------------------------


def validate_tx(tx: Transaction, state: LedgerState) -> None:
    """Raise a TxValidationError subclass if tx is not applicable to state."""
    if tx.signature is None:
        raise BadSignature("unsigned transaction")
    signer = recover_address(tx.sighash, tx.signature)
    if signer != tx.sender:
        raise BadSignature("signature does not recover to sender")
    acct = state.account(tx.sender)
    if tx.nonce != acct.nonce:
        raise BadNonce(expected=acct.nonce, got=tx.nonce)
    need = intrinsic_gas(tx)
    if tx.gas_limit < need:
        raise GasTooLow(f"gas_limit {tx.gas_limit} below intrinsic {need}")
    if tx.kind == TxKind.TRANSFER and acct.balance < tx.value:
        raise InsufficientBalance(
            f"balance {acct.balance} below value {tx.value}"
        )


def apply_tx(
    state: LedgerState,
    registry: RegistryState,
    tx: Transaction,
    *,
    block_hash: Digest32 = ZERO_DIGEST,
    block_number: int = 0,
) -> Receipt:
    """Execute a validated tx. Execution is total for all supported kinds:
    duplicate registry stores succeed without re-appending."""
    sender = state._mutable_account(tx.sender)
    sender.nonce += 1
    if tx.kind == TxKind.TRANSFER:
        sender.balance -= tx.value
        state._mutable_account(tx.to).balance += tx.value
    else:
        for digest in tx.payload:
            registry.store(digest, block_number)
    return Receipt(
        tx_hash=tx.hash,
        block_hash=block_hash,
        block_number=block_number,
        status=TxStatus.SUCCESS,
        gas_used=intrinsic_gas(tx),
    )


def assemble_block(
    parent: Block,
    pending: Iterable[Transaction],
    state: LedgerState,
    config: ChainConfig,
    *,
    timestamp: int,
    sealer: Address,
    difficulty: int,
) -> tuple[Block, list[Transaction]]:
    """Greedy arrival-order packing under the block gas limit.

    Returns the unsealed block and the txs that did not fit. Once a
    sender's tx is skipped, its later txs are skipped too (nonces must
    stay gapless within the block).
    """
    scratch = state.clone()
    number = parent.number + 1
    included: list[Transaction] = []
    skipped: list[Transaction] = []
    blocked: set[Address] = set()
    gas_used = 0
    for tx in pending:
        if tx.sender in blocked:
            skipped.append(tx)
            continue
        gas = intrinsic_gas(tx)
        if gas_used + gas > config.block_gas_limit:
            blocked.add(tx.sender)
            skipped.append(tx)
            continue
        try:
            validate_tx(tx, scratch)
        except TxValidationError:
            blocked.add(tx.sender)
            skipped.append(tx)
            continue
        apply_tx(scratch, scratch.registry, tx, block_number=number)
        included.append(tx)
        gas_used += gas

    header = BlockHeader(
        number=number,
        parent_hash=parent.hash,
        timestamp=timestamp,
        gas_limit=config.block_gas_limit,
        gas_used=gas_used,
        tx_root=compute_tx_root(included),
        sealer=sealer,
        difficulty=difficulty,
        seal=None,
    )
    return Block(header=header, transactions=tuple(included)), skipped


def validate_block(
    block: Block,
    parent: Block,
    state: LedgerState,
    config: ChainConfig,
    seal_check: Optional[Callable[[BlockHeader], bool]] = None,
) -> tuple[LedgerState, list[Receipt]]:
    """Full block validation against its parent and pre-state.

    Returns the post-state (a clone; the input is untouched) and receipts.
    Seal verification is delegated to the consensus engine via seal_check.
    """
    header = block.header
    if header.parent_hash != parent.hash:
        raise BadParent("parent hash mismatch")
    if header.number != parent.number + 1:
        raise BadParent(f"number {header.number} after {parent.number}")
    if header.timestamp < parent.header.timestamp:
        raise BadParent("timestamp before parent")
    if header.gas_limit != config.block_gas_limit:
        raise BadGasUsed(f"gas limit {header.gas_limit} != {config.block_gas_limit}")
    if header.gas_used > header.gas_limit:
        raise BadGasUsed("gas used above limit")
    if compute_tx_root(block.transactions) != header.tx_root:
        raise BadTxRoot("tx root mismatch")
    if seal_check is not None and not seal_check(header):
        raise BadSeal(f"seal rejected for block {header.number}")

    post = state.clone()
    receipts: list[Receipt] = []
    gas_total = 0
    for i, tx in enumerate(block.transactions):
        try:
            validate_tx(tx, post)
        except TxValidationError as exc:
            raise BadTx(i, exc) from exc
        receipt = apply_tx(
            post,
            post.registry,
            tx,
            block_hash=block.hash,
            block_number=header.number,
        )
        receipts.append(receipt)
        gas_total += receipt.gas_used
    if gas_total != header.gas_used:
        raise BadGasUsed(f"declared {header.gas_used}, executed {gas_total}")
    return post, receipts


def replay_block(state: LedgerState, block: Block) -> list[Receipt]:
    """Re-apply an already-validated block in place (reorg/restart replay)."""
    receipts = []
    for tx in block.transactions:
        receipts.append(
            apply_tx(
                state,
                state.registry,
                tx,
                block_hash=block.hash,
                block_number=block.number,
            )
        )
    return receipts
