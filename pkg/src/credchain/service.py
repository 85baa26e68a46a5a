"""Credential service: challenge-response login, record access, anchoring
workflows and document verification, exposed as JSON-RPC 2.0 methods.

The service binds a node (directly in simulation, through the runtime's
event loop for real deployments), the document store, and a keystore of
admin signing keys. Issue/approve return immediately with tx hashes; a
block listener writes the tx hash back onto the record once the anchoring
transaction lands in a canonical block.
"""

from __future__ import annotations

import base64
import binascii
import inspect
import logging
import secrets
import time
from dataclasses import dataclass
from typing import Callable, Optional

from . import docstore as ds
from .chain import (
    GAS_PER_STORED_HASH,
    GAS_TX_BASE,
    Block,
    Receipt,
    Transaction,
    TxKind,
    max_hashes_per_tx,
    sign_tx,
)
from .crypto import Address, Digest32, KeyPair, Signature, keccak_256, recover_address
from .node import Node, SubmitResult

logger = logging.getLogger(__name__)

CHALLENGE_TTL_S = 120
SESSION_TTL_S = 3600

# JSON-RPC 2.0 standard codes
PARSE_ERROR = -32700
INVALID_REQUEST = -32600
METHOD_NOT_FOUND = -32601
INVALID_PARAMS = -32602
INTERNAL_ERROR = -32603

# application codes (documented in the README)
UNAUTHENTICATED = 1000
UNAUTHORIZED = 1001
NOT_FOUND = 1002
BAD_SIGNATURE = 1003
EXPIRED = 1004
UNKNOWN_CHALLENGE = 1005
ALREADY_ANCHORED = 1006
NOT_PENDING = 1007
TX_REJECTED = 1008
INVALID_RECORD = 1009


class RpcError(Exception):
    def __init__(self, code: int, message: str, data=None):
        super().__init__(message)
        self.code = code
        self.message = message
        self.data = data


@dataclass
class Challenge:
    nonce: str  # 32 random bytes, hex; also the exact string to sign
    issued_at: float
    ttl_s: int = CHALLENGE_TTL_S


@dataclass
class Session:
    token: str
    subject: Address
    role: str  # student | admin
    expires_at: float


@dataclass(frozen=True)
class VerificationResult:
    valid: bool
    hash: Digest32
    anchored_in_block: Optional[int] = None

    def to_json(self) -> dict:
        data = {"valid": self.valid, "hash": self.hash.hex0x}
        if self.anchored_in_block is not None:
            data["anchored_in_block"] = self.anchored_in_block
        return data


class NodeFacade:
    """Synchronous node access for RPC handlers. The direct variant is for
    in-process nodes (simulation, tests); the runtime variant marshals every
    call onto the node's event loop thread."""

    def __init__(self, node: Node, call: Optional[Callable] = None):
        self._node = node
        self._call = call if call is not None else lambda fn: fn()

    def submit_tx(self, tx: Transaction) -> SubmitResult:
        return self._call(lambda: self._node.submit_tx(tx))

    def head_block(self) -> Block:
        return self._call(lambda: self._node.head)

    def block_by_number(self, number: int) -> Optional[Block]:
        return self._call(lambda: self._node.block_by_number(number))

    def block_by_hash(self, block_hash: Digest32) -> Optional[Block]:
        return self._call(lambda: self._node.block_by_hash(block_hash))

    def receipt(self, tx_hash: Digest32) -> Optional[Receipt]:
        return self._call(lambda: self._node.receipt(tx_hash))

    def registry_check(self, digest: Digest32) -> bool:
        return self._call(lambda: self._node.registry.check(digest))

    def registry_anchored_block(self, digest: Digest32) -> Optional[int]:
        return self._call(lambda: self._node.registry.anchored_block(digest))

    def registry_count(self) -> int:
        return self._call(lambda: self._node.registry.count())

    def next_nonce(self, sender: Address) -> int:
        return self._call(lambda: self._node.next_nonce(sender))

    def add_block_listener(self, fn) -> None:
        self._node.add_block_listener(fn)

    @property
    def config(self):
        return self._node.config


class CredentialService:
    def __init__(
        self,
        node: NodeFacade,
        store: ds.DocStore,
        keystore: dict[Address, KeyPair],
        clock: Callable[[], float] = time.time,
        rng_token: Callable[[int], bytes] = secrets.token_bytes,
    ):
        self.node = node
        self.store = store
        self.keystore = keystore
        self.clock = clock
        self.rng_token = rng_token
        self._challenges: dict[Address, Challenge] = {}
        self._sessions: dict[str, Session] = {}
        # record_hash -> (student, tx_hash, admin address) awaiting inclusion
        self._awaiting: dict[Digest32, tuple[Address, Digest32, Address]] = {}
        node.add_block_listener(self._on_block)

    # -- confirmation watcher ------------------------------------------------

    def _on_block(self, block: Block, receipts: list[Receipt]) -> None:
        if not self._awaiting:
            return
        for tx in block.transactions:
            if tx.kind == TxKind.TRANSFER:
                continue
            for digest in tx.payload:
                entry = self._awaiting.pop(digest, None)
                if entry is None:
                    continue
                student, tx_hash, admin = entry
                keypair = self.keystore.get(admin)
                if keypair is None:
                    continue
                try:
                    self.store.set_tx_hash(student, tx_hash, keypair)
                except (ds.NotAuthorized, ds.NotFound) as exc:
                    logger.warning("could not record tx hash: %s", exc)

    # -- auth ------------------------------------------------------------------

    def auth_challenge(self, pk: Address) -> Challenge:
        challenge = Challenge(
            nonce=self.rng_token(32).hex(), issued_at=self.clock()
        )
        self._challenges[pk] = challenge
        return challenge

    def auth_verify(self, pk: Address, challenge_nonce: str, signature: Signature) -> Session:
        challenge = self._challenges.get(pk)
        if challenge is None or challenge.nonce != challenge_nonce:
            raise RpcError(UNKNOWN_CHALLENGE, "no outstanding challenge for this key")
        if self.clock() - challenge.issued_at > challenge.ttl_s:
            del self._challenges[pk]
            raise RpcError(EXPIRED, "challenge expired")
        digest = Digest32(keccak_256(challenge.nonce.encode("ascii")))
        signer = recover_address(digest, signature)
        if signer != pk:
            raise RpcError(BAD_SIGNATURE, "signature does not prove key possession")
        del self._challenges[pk]  # single use
        role = "admin" if pk in self.store.access.admins else "student"
        session = Session(
            token=self.rng_token(32).hex(),
            subject=pk,
            role=role,
            expires_at=self.clock() + SESSION_TTL_S,
        )
        self._sessions[session.token] = session
        return session

    def _session(self, token: str) -> Session:
        session = self._sessions.get(token)
        if session is None:
            raise RpcError(UNAUTHENTICATED, "unknown session token")
        if self.clock() > session.expires_at:
            del self._sessions[token]
            raise RpcError(EXPIRED, "session expired")
        return session

    def _admin_session(self, token: str) -> Session:
        session = self._session(token)
        if session.role != "admin":
            raise RpcError(UNAUTHORIZED, "admin session required")
        return session

    # -- record access --------------------------------------------------------------

    def get_my_record(self, token: str) -> dict:
        session = self._session(token)
        try:
            record = self.store.get_record(session.subject)
        except ds.NotFound:
            raise RpcError(NOT_FOUND, "no record filed under this key")
        digest = ds.record_hash(record)
        anchored_block = self.node.registry_anchored_block(digest)
        return {
            "record": record.to_json(),
            "record_hash": digest.hex0x,
            "anchored": anchored_block is not None,
            "anchored_in_block": anchored_block,
        }

    # -- anchoring workflows -----------------------------------------------------------

    def _signing_key(self, admin: Address) -> KeyPair:
        keypair = self.keystore.get(admin)
        if keypair is None:
            raise RpcError(UNAUTHORIZED, "no signing key for this admin")
        return keypair

    def _submit_registry_tx(
        self, admin: Address, keypair: KeyPair, hashes: list[Digest32]
    ) -> Digest32:
        kind = TxKind.REGISTRY_STORE if len(hashes) == 1 else TxKind.REGISTRY_STORE_BATCH
        tx = Transaction(
            nonce=self.node.next_nonce(admin),
            sender=admin,
            kind=kind,
            gas_limit=GAS_TX_BASE + GAS_PER_STORED_HASH * len(hashes),
            chain_id=self.node.config.chain_id,
            payload=tuple(hashes),
        )
        signed = sign_tx(tx, keypair)
        result = self.node.submit_tx(signed)
        if not result.accepted:
            raise RpcError(TX_REJECTED, f"transaction rejected: {result.cause}")
        return signed.hash

    def issue_first(self, token: str, student: Address) -> Digest32:
        session = self._admin_session(token)
        keypair = self._signing_key(session.subject)
        try:
            record = self.store.get_record(student)
        except ds.NotFound:
            raise RpcError(NOT_FOUND, "student has no record")
        digest = ds.record_hash(record)
        if self.node.registry_check(digest):
            raise RpcError(ALREADY_ANCHORED, "record hash is already anchored")
        tx_hash = self._submit_registry_tx(session.subject, keypair, [digest])
        self._awaiting[digest] = (student, tx_hash, session.subject)
        return tx_hash

    def pending_updates(self, token: str) -> list[dict]:
        self._admin_session(token)
        pending = self.store.list_pending(self.node.registry_check)
        out = []
        for student, digest in pending:
            record = self.store.get_record(student)
            out.append(
                {
                    "student": student.hex0x,
                    "record_hash": digest.hex0x,
                    "record": record.to_json(),
                }
            )
        return out

    def approve_updates(
        self, token: str, students: list[Address], batch: bool
    ) -> list[Digest32]:
        session = self._admin_session(token)
        keypair = self._signing_key(session.subject)
        pending = dict(self.store.list_pending(self.node.registry_check))
        hashes: list[tuple[Address, Digest32]] = []
        for student in students:
            digest = pending.get(student)
            if digest is None:
                raise RpcError(NOT_PENDING, f"{student.hex0x} has no pending update")
            hashes.append((student, digest))

        tx_hashes: list[Digest32] = []
        if batch:
            # one batch tx, split at the block gas limit
            chunk_size = max_hashes_per_tx(self.node.config.block_gas_limit)
            for i in range(0, len(hashes), chunk_size):
                chunk = hashes[i : i + chunk_size]
                tx_hash = self._submit_registry_tx(
                    session.subject, keypair, [d for _, d in chunk]
                )
                for student, digest in chunk:
                    self._awaiting[digest] = (student, tx_hash, session.subject)
                tx_hashes.append(tx_hash)
        else:
            for student, digest in hashes:
                tx_hash = self._submit_registry_tx(session.subject, keypair, [digest])
                self._awaiting[digest] = (student, tx_hash, session.subject)
                tx_hashes.append(tx_hash)
        return tx_hashes

    # -- verification --------------------------------------------------------------------

    def verify_document(self, file_bytes: bytes) -> VerificationResult:
        """Hash the exact uploaded bytes; no re-parsing, so whitespace or
        encoding tampering of a shared file is caught too."""
        digest = Digest32(keccak_256(file_bytes))
        block_number = self.node.registry_anchored_block(digest)
        return VerificationResult(
            valid=block_number is not None,
            hash=digest,
            anchored_in_block=block_number,
        )


# --- JSON-RPC dispatch ------------------------------------------------------------------


def _parse_address(value) -> Address:
    try:
        return Address.parse(value)
    except (ValueError, TypeError, AttributeError):
        raise RpcError(INVALID_PARAMS, f"bad address: {value!r}")


def _parse_digest(value) -> Digest32:
    try:
        return Digest32.parse(value)
    except (ValueError, TypeError, AttributeError):
        raise RpcError(INVALID_PARAMS, f"bad hash: {value!r}")


def _parse_signature(value) -> Signature:
    try:
        raw = value[2:] if value.startswith("0x") else value
        return Signature.from_bytes(bytes.fromhex(raw))
    except (ValueError, TypeError, AttributeError):
        raise RpcError(INVALID_PARAMS, f"bad signature: {value!r}")


def build_method_table(service: CredentialService) -> dict[str, Callable]:
    def auth_challenge(pk: str) -> dict:
        challenge = service.auth_challenge(_parse_address(pk))
        return {
            "challenge": challenge.nonce,
            "issued_at": challenge.issued_at,
            "ttl_s": challenge.ttl_s,
        }

    def auth_verify(pk: str, challenge: str, signature: str) -> dict:
        session = service.auth_verify(
            _parse_address(pk), challenge, _parse_signature(signature)
        )
        return {
            "token": session.token,
            "subject": session.subject.hex0x,
            "role": session.role,
            "expires_at": session.expires_at,
        }

    def ar_get(token: str) -> dict:
        return service.get_my_record(token)

    def ar_issueFirst(token: str, student: str) -> dict:
        return {"tx_hash": service.issue_first(token, _parse_address(student)).hex0x}

    def ar_pending(token: str) -> list:
        return service.pending_updates(token)

    def ar_approve(token: str, students: list, batch: bool = False) -> dict:
        tx_hashes = service.approve_updates(
            token, [_parse_address(s) for s in students], bool(batch)
        )
        return {"tx_hashes": [h.hex0x for h in tx_hashes]}

    def ar_verify(file_b64: str) -> dict:
        try:
            blob = base64.b64decode(file_b64, validate=True)
        except (binascii.Error, ValueError, TypeError):
            raise RpcError(INVALID_PARAMS, "file_b64 is not valid base64")
        return service.verify_document(blob).to_json()

    def tx_getReceipt(tx_hash: str):
        receipt = service.node.receipt(_parse_digest(tx_hash))
        return receipt.to_json() if receipt is not None else None

    def chain_getHead() -> dict:
        head = service.node.head_block()
        return {
            "number": head.number,
            "hash": head.hash.hex0x,
            "timestamp": head.header.timestamp,
            "gas_used": head.header.gas_used,
            "gas_limit": head.header.gas_limit,
            "tx_count": len(head.transactions),
        }

    def chain_getBlock(number=None, hash=None) -> Optional[dict]:
        if (number is None) == (hash is None):
            raise RpcError(INVALID_PARAMS, "pass exactly one of number, hash")
        if number is not None:
            block = service.node.block_by_number(int(number))
        else:
            block = service.node.block_by_hash(_parse_digest(hash))
        if block is None:
            return None
        data = block.to_json()
        data["hash"] = block.hash.hex0x
        return data

    def registry_check(hash: str) -> bool:
        return service.node.registry_check(_parse_digest(hash))

    def registry_count() -> int:
        return service.node.registry_count()

    def tx_submitRaw(tx: dict) -> dict:
        try:
            parsed = Transaction.from_json(tx)
        except (ValueError, KeyError, TypeError) as exc:
            raise RpcError(INVALID_PARAMS, f"malformed transaction: {exc}")
        result = service.node.submit_tx(parsed)
        if not result.accepted:
            raise RpcError(TX_REJECTED, f"transaction rejected: {result.cause}")
        return {"tx_hash": result.tx_hash.hex0x}

    return {
        "auth_challenge": auth_challenge,
        "auth_verify": auth_verify,
        "ar_get": ar_get,
        "ar_issueFirst": ar_issueFirst,
        "ar_pending": ar_pending,
        "ar_approve": ar_approve,
        "ar_verify": ar_verify,
        "tx_getReceipt": tx_getReceipt,
        "chain_getHead": chain_getHead,
        "chain_getBlock": chain_getBlock,
        "registry_check": registry_check,
        "registry_count": registry_count,
        "tx_submitRaw": tx_submitRaw,
    }


class RpcDispatcher:
    def __init__(self, service: CredentialService):
        self.methods = build_method_table(service)

    def dispatch(self, request) -> dict:
        rid = request.get("id") if isinstance(request, dict) else None
        if (
            not isinstance(request, dict)
            or request.get("jsonrpc") != "2.0"
            or not isinstance(request.get("method"), str)
        ):
            return _error_response(rid, INVALID_REQUEST, "malformed JSON-RPC request")
        method = self.methods.get(request["method"])
        if method is None:
            return _error_response(rid, METHOD_NOT_FOUND, f"no method {request['method']!r}")
        params = request.get("params", {})
        try:
            if isinstance(params, dict):
                _check_params(method, params)
                result = method(**params)
            elif isinstance(params, list):
                result = method(*params)
            else:
                return _error_response(rid, INVALID_PARAMS, "params must be object or array")
        except RpcError as exc:
            return _error_response(rid, exc.code, exc.message, exc.data)
        except TypeError as exc:
            return _error_response(rid, INVALID_PARAMS, str(exc))
        except Exception as exc:  # pragma: no cover - defensive
            logger.exception("internal error in %s", request["method"])
            return _error_response(rid, INTERNAL_ERROR, f"{type(exc).__name__}: {exc}")
        return {"jsonrpc": "2.0", "id": rid, "result": result}


def _check_params(method: Callable, params: dict) -> None:
    sig = inspect.signature(method)
    try:
        sig.bind(**params)
    except TypeError as exc:
        raise RpcError(INVALID_PARAMS, str(exc))


def _error_response(rid, code: int, message: str, data=None) -> dict:
    error: dict = {"code": code, "message": message}
    if data is not None:
        error["data"] = data
    return {"jsonrpc": "2.0", "id": rid, "error": error}
