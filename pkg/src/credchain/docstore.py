"""Off-chain document store for academic records.

Key-addressed JSON documents behind a signed, append-only operation log
with writer/admin access control. Last put wins. The content hash of a
record excludes its bookkeeping tx_hash field, so the hash can be computed
before the anchoring transaction exists and is stable across anchoring.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, replace
from decimal import Decimal, InvalidOperation
from typing import Callable, Optional

from .canonical import canonical_json
from .crypto import (
    Address,
    Digest32,
    KeyPair,
    Signature,
    keccak_256,
    recover_address,
)

import json


class NotAuthorized(Exception):
    pass


class NotFound(KeyError):
    pass


class InvalidRecord(ValueError):
    def __init__(self, field_name: str, reason: str):
        super().__init__(f"invalid record field {field_name}: {reason}")
        self.field_name = field_name


class CorruptLog(ValueError):
    pass


MARK_MIN = Decimal(0)
MARK_MAX = Decimal(10)


@dataclass(frozen=True)
class SubjectEntry:
    subject: str
    mark: str  # decimal string in [0, 10], or "" when not yet evaluated
    subject_type: str
    course: str

    def to_json(self) -> dict:
        return {
            "course": self.course,
            "mark": self.mark,
            "subject": self.subject,
            "subject_type": self.subject_type,
        }

    @classmethod
    def from_json(cls, data: dict) -> "SubjectEntry":
        return cls(
            subject=data["subject"],
            mark=data["mark"],
            subject_type=data["subject_type"],
            course=data["course"],
        )


@dataclass(frozen=True)
class AcademicRecord:
    id: Digest32
    public_key: Address  # the student key the document is filed under
    degree: str
    issue_date: str  # ISO-8601 date, or "" until the title is issued
    name: str
    surname: str
    subjects: tuple[SubjectEntry, ...] = ()
    tx_hash: Optional[Digest32] = None  # bookkeeping only, not hashed

    def content_json(self) -> dict:
        """The hashed/exported view of the record (tx_hash excluded)."""
        return {
            "degree": self.degree,
            "id": self.id.hex0x,
            "issue_date": self.issue_date,
            "name": self.name,
            "public_key": self.public_key.hex0x,
            "subjects": [s.to_json() for s in self.subjects],
            "surname": self.surname,
        }

    def to_json(self) -> dict:
        data = self.content_json()
        data["tx_hash"] = self.tx_hash.hex0x if self.tx_hash is not None else ""
        return data

    @classmethod
    def from_json(cls, data: dict) -> "AcademicRecord":
        raw_txh = data.get("tx_hash", "")
        return cls(
            id=Digest32.parse(data["id"]),
            public_key=Address.parse(data["public_key"]),
            degree=data["degree"],
            issue_date=data["issue_date"],
            name=data["name"],
            surname=data["surname"],
            subjects=tuple(SubjectEntry.from_json(s) for s in data["subjects"]),
            tx_hash=Digest32.parse(raw_txh) if raw_txh else None,
        )


def validate_record(record: AcademicRecord) -> None:
    for i, entry in enumerate(record.subjects):
        if entry.mark == "":
            continue
        try:
            mark = Decimal(entry.mark)
        except InvalidOperation:
            raise InvalidRecord(f"subjects[{i}].mark", f"not a decimal: {entry.mark!r}")
        if not MARK_MIN <= mark <= MARK_MAX:
            raise InvalidRecord(f"subjects[{i}].mark", f"outside [0, 10]: {entry.mark}")


def record_hash(record: AcademicRecord) -> Digest32:
    """Content hash of a record. Any change to graded content moves the
    hash; updating tx_hash does not."""
    return Digest32(keccak_256(canonical_json(record.content_json())))


def export_record(record: AcademicRecord) -> bytes:
    """The exact bytes whose digest gets anchored on chain."""
    return canonical_json(record.content_json())


@dataclass(frozen=True)
class AccessControl:
    writers: frozenset[Address]
    admins: frozenset[Address]
    public_read: bool = True

    def __post_init__(self):
        if not self.writers:
            raise ValueError("empty writer set")
        if not self.admins <= self.writers:
            raise ValueError("admins must be a subset of writers")


@dataclass(frozen=True)
class StoreOp:
    seq: int
    op: str  # "put" | "delete"
    doc_key: Address
    body: Optional[AcademicRecord]
    writer: Address
    signature: Optional[Signature] = None

    def _signing_fields(self) -> dict:
        return {
            "body": self.body.to_json() if self.body is not None else None,
            "doc_key": self.doc_key.hex0x,
            "op": self.op,
            "seq": self.seq,
            "writer": self.writer.hex0x,
        }

    @property
    def sighash(self) -> Digest32:
        return Digest32(keccak_256(canonical_json(self._signing_fields())))

    def to_json(self) -> dict:
        data = self._signing_fields()
        data["signature"] = "0x" + self.signature.to_bytes().hex()
        return data

    @classmethod
    def from_json(cls, data: dict) -> "StoreOp":
        raw = data["signature"]
        return cls(
            seq=int(data["seq"]),
            op=data["op"],
            doc_key=Address.parse(data["doc_key"]),
            body=AcademicRecord.from_json(data["body"]) if data["body"] is not None else None,
            writer=Address.parse(data["writer"]),
            signature=Signature.from_bytes(
                bytes.fromhex(raw[2:] if raw.startswith("0x") else raw)
            ),
        )


class DocStore:
    """Single-writer document store with a signed op log.

    When a path is given the log is one canonical-JSON op per line and is
    flushed before a put returns; reloading the file replays it and must
    yield the identical view.
    """

    def __init__(self, access: AccessControl, path: Optional[str] = None):
        self.access = access
        self.path = path
        self._seq = 0
        self._records: dict[Address, AcademicRecord] = {}
        self._log_fh = None
        if path is not None and os.path.exists(path):
            self._replay_file(path)
        if path is not None:
            self._log_fh = open(path, "a", encoding="utf-8")

    # -- log handling ------------------------------------------------------

    def _replay_file(self, path: str) -> None:
        with open(path, encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    op = StoreOp.from_json(json.loads(line))
                except (ValueError, KeyError) as exc:
                    raise CorruptLog(f"line {line_no}: {exc}") from exc
                self._apply_op(op, from_replay=True)

    def _apply_op(self, op: StoreOp, from_replay: bool = False) -> None:
        if op.seq <= self._seq:
            raise CorruptLog(f"op seq {op.seq} not above {self._seq}")
        if op.signature is None:
            raise CorruptLog("unsigned op")
        if recover_address(op.sighash, op.signature) != op.writer:
            raise CorruptLog(f"op {op.seq} signature does not match writer")
        if op.writer not in self.access.writers:
            raise NotAuthorized(f"{op.writer.hex0x} is not a writer")
        self._seq = op.seq
        if op.op == "put":
            self._records[op.doc_key] = op.body
        elif op.op == "delete":
            self._records.pop(op.doc_key, None)
        else:
            raise CorruptLog(f"unknown op {op.op!r}")
        if not from_replay and self._log_fh is not None:
            self._log_fh.write(canonical_json(op.to_json()).decode("utf-8") + "\n")
            self._log_fh.flush()
            os.fsync(self._log_fh.fileno())

    def _sign_and_apply(self, op: StoreOp, keypair: KeyPair) -> int:
        from .crypto import sign

        signed = replace(op, signature=sign(keypair.sk, op.sighash))
        self._apply_op(signed)
        return signed.seq

    # -- public API ----------------------------------------------------------

    def put_record(self, record: AcademicRecord, writer_keypair: KeyPair) -> int:
        writer = writer_keypair.address
        if writer not in self.access.writers:
            raise NotAuthorized(f"{writer.hex0x} is not a writer")
        validate_record(record)
        existing = self._records.get(record.public_key)
        if record.tx_hash is None and existing is not None:
            # edits keep the anchoring bookkeeping unless explicitly replaced
            record = replace(record, tx_hash=existing.tx_hash)
        op = StoreOp(
            seq=self._seq + 1,
            op="put",
            doc_key=record.public_key,
            body=record,
            writer=writer,
        )
        return self._sign_and_apply(op, writer_keypair)

    def delete_record(self, student: Address, writer_keypair: KeyPair) -> int:
        writer = writer_keypair.address
        if writer not in self.access.writers:
            raise NotAuthorized(f"{writer.hex0x} is not a writer")
        if student not in self._records:
            raise NotFound(student.hex0x)
        op = StoreOp(
            seq=self._seq + 1, op="delete", doc_key=student, body=None, writer=writer
        )
        return self._sign_and_apply(op, writer_keypair)

    def get_record(self, student: Address) -> AcademicRecord:
        record = self._records.get(student)
        if record is None:
            raise NotFound(student.hex0x)
        return record

    def export_ar(self, student: Address) -> bytes:
        return export_record(self.get_record(student))

    def set_tx_hash(
        self, student: Address, tx_hash: Digest32, admin_keypair: KeyPair
    ) -> int:
        admin = admin_keypair.address
        if admin not in self.access.admins:
            raise NotAuthorized(f"{admin.hex0x} is not an admin")
        record = self.get_record(student)
        op = StoreOp(
            seq=self._seq + 1,
            op="put",
            doc_key=student,
            body=replace(record, tx_hash=tx_hash),
            writer=admin,
        )
        return self._sign_and_apply(op, admin_keypair)

    def list_pending(
        self, registry_check: Callable[[Digest32], bool]
    ) -> list[tuple[Address, Digest32]]:
        """Records whose current content hash is not anchored yet."""
        pending = []
        for student, record in self._records.items():
            digest = record_hash(record)
            if not registry_check(digest):
                pending.append((student, digest))
        pending.sort(key=lambda item: bytes(item[0]))
        return pending

    def students(self) -> list[Address]:
        return sorted(self._records, key=bytes)

    def close(self) -> None:
        if self._log_fh is not None:
            self._log_fh.close()
            self._log_fh = None
