import dataclasses
import random

import pytest

from credchain.crypto import Digest32, KeyPair, keccak_256
from credchain.docstore import (
    AcademicRecord,
    AccessControl,
    CorruptLog,
    DocStore,
    InvalidRecord,
    NotAuthorized,
    NotFound,
    SubjectEntry,
    export_record,
    record_hash,
    validate_record,
)

from conftest import make_record


class TestAccessControl:
    def test_admins_must_be_writers(self, keys):
        with pytest.raises(ValueError):
            AccessControl(
                writers=frozenset({keys["prof"].address}),
                admins=frozenset({keys["admin"].address}),
            )

    def test_empty_writers_rejected(self):
        with pytest.raises(ValueError):
            AccessControl(writers=frozenset(), admins=frozenset())


class TestPutGet:
    def test_put_then_get(self, store, keys):
        record = make_record(keys["students"][0].address)
        seq = store.put_record(record, keys["prof"])
        assert seq == 1
        assert store.get_record(keys["students"][0].address) == record

    def test_unknown_student(self, store, keys):
        with pytest.raises(NotFound):
            store.get_record(keys["students"][3].address)

    def test_non_writer_rejected(self, store, keys):
        record = make_record(keys["students"][0].address)
        with pytest.raises(NotAuthorized):
            store.put_record(record, keys["students"][0])

    def test_last_write_wins(self, store, keys):
        student = keys["students"][0].address
        store.put_record(make_record(student, marks=("5.2", "")), keys["prof"])
        updated = make_record(student, marks=("5.2", "7.0"))
        store.put_record(updated, keys["prof"])
        assert store.get_record(student).subjects[1].mark == "7.0"

    def test_bad_mark_rejected(self, store, keys):
        record = make_record(keys["students"][0].address, marks=("11", ""))
        with pytest.raises(InvalidRecord):
            store.put_record(record, keys["prof"])
        with pytest.raises(InvalidRecord):
            validate_record(make_record(keys["students"][0].address, marks=("abc",)))

    def test_empty_marks_allowed(self, store, keys):
        record = make_record(keys["students"][0].address, marks=("", "", ""))
        store.put_record(record, keys["prof"])


class TestRecordHash:
    def test_tx_hash_excluded(self, keys):
        record = make_record(keys["students"][0].address)
        with_tx = dataclasses.replace(
            record, tx_hash=Digest32(keccak_256(b"some-tx"))
        )
        assert record_hash(record) == record_hash(with_tx)

    def test_mark_change_moves_hash(self, keys):
        a = make_record(keys["students"][0].address, marks=("5.2",))
        b = make_record(keys["students"][0].address, marks=("5.3",))
        assert record_hash(a) != record_hash(b)

    def test_hash_equals_keccak_of_export(self, keys):
        record = make_record(keys["students"][0].address)
        assert record_hash(record) == Digest32(keccak_256(export_record(record)))

    def test_any_content_field_mutation_changes_hash(self, keys):
        base = make_record(keys["students"][0].address)
        mutations = [
            dataclasses.replace(base, name="Eve"),
            dataclasses.replace(base, surname="Smith"),
            dataclasses.replace(base, degree="Mathematics"),
            dataclasses.replace(base, issue_date="2024-06-01"),
            dataclasses.replace(
                base, subjects=base.subjects[:1]
            ),
            dataclasses.replace(
                base,
                subjects=(dataclasses.replace(base.subjects[0], course="24/25"),)
                + base.subjects[1:],
            ),
        ]
        h = record_hash(base)
        for mutant in mutations:
            assert record_hash(mutant) != h


class TestExport:
    def test_export_deterministic(self, store, keys):
        student = keys["students"][0].address
        store.put_record(make_record(student), keys["prof"])
        assert store.export_ar(student) == store.export_ar(student)

    def test_export_roundtrip_through_parse(self, store, keys):
        import json

        student = keys["students"][0].address
        store.put_record(make_record(student), keys["prof"])
        blob = store.export_ar(student)
        parsed = json.loads(blob)
        rebuilt = AcademicRecord.from_json({**parsed, "tx_hash": ""})
        assert record_hash(rebuilt) == Digest32(keccak_256(blob))

    def test_tampered_export_changes_hash(self, store, keys):
        student = keys["students"][0].address
        store.put_record(make_record(student), keys["prof"])
        blob = store.export_ar(student)
        tampered = blob.replace(b"5.2", b"9.9", 1)
        assert keccak_256(tampered) != keccak_256(blob)

    def test_export_missing(self, store, keys):
        with pytest.raises(NotFound):
            store.export_ar(keys["students"][4].address)


class TestTxHashBookkeeping:
    def test_set_tx_hash(self, store, keys):
        student = keys["students"][0].address
        store.put_record(make_record(student), keys["prof"])
        before = record_hash(store.get_record(student))
        txh = Digest32(keccak_256(b"tx"))
        store.set_tx_hash(student, txh, keys["admin"])
        record = store.get_record(student)
        assert record.tx_hash == txh
        assert record_hash(record) == before

    def test_non_admin_cannot_set(self, store, keys):
        student = keys["students"][0].address
        store.put_record(make_record(student), keys["prof"])
        with pytest.raises(NotAuthorized):
            store.set_tx_hash(student, Digest32(keccak_256(b"t")), keys["prof"])

    def test_edit_preserves_tx_hash(self, store, keys):
        student = keys["students"][0].address
        store.put_record(make_record(student), keys["prof"])
        txh = Digest32(keccak_256(b"tx"))
        store.set_tx_hash(student, txh, keys["admin"])
        # professor edits marks without touching the bookkeeping field
        store.put_record(make_record(student, marks=("6.0",)), keys["prof"])
        assert store.get_record(student).tx_hash == txh


class TestPendingList:
    def test_all_pending_when_nothing_anchored(self, store, keys):
        for student in keys["students"][:3]:
            store.put_record(make_record(student.address), keys["prof"])
        pending = store.list_pending(lambda h: False)
        assert len(pending) == 3
        assert pending == sorted(pending, key=lambda item: bytes(item[0]))

    def test_empty_after_anchoring_all(self, store, keys):
        anchored = set()
        for student in keys["students"][:3]:
            record = make_record(student.address)
            store.put_record(record, keys["prof"])
            anchored.add(record_hash(record))
        assert store.list_pending(lambda h: h in anchored) == []

    def test_exactly_the_edited_record_pending(self, store, keys):
        anchored = set()
        for student in keys["students"][:3]:
            record = make_record(student.address)
            store.put_record(record, keys["prof"])
            anchored.add(record_hash(record))
        edited = keys["students"][1].address
        store.put_record(make_record(edited, marks=("9.1",)), keys["prof"])
        pending = store.list_pending(lambda h: h in anchored)
        assert [student for student, _ in pending] == [edited]


class TestLogReplay:
    def test_reload_matches_memory(self, access, keys, tmp_path):
        path = str(tmp_path / "log.ndjson")
        store = DocStore(access, path=path)
        for i, student in enumerate(keys["students"][:3]):
            store.put_record(make_record(student.address, seq=i), keys["prof"])
        store.set_tx_hash(
            keys["students"][0].address, Digest32(keccak_256(b"tx")), keys["admin"]
        )
        store.close()

        reloaded = DocStore(access, path=path)
        for student in keys["students"][:3]:
            assert reloaded.get_record(student.address) == store.get_record(
                student.address
            )

    def test_replay_prefix_determinism(self, access, keys, tmp_path):
        path = str(tmp_path / "log.ndjson")
        store = DocStore(access, path=path)
        for i in range(4):
            store.put_record(
                make_record(keys["students"][0].address, marks=(str(i),)), keys["prof"]
            )
        store.close()
        with open(path) as fh:
            lines = fh.readlines()
        prefix_path = str(tmp_path / "prefix.ndjson")
        with open(prefix_path, "w") as fh:
            fh.writelines(lines[:2])
        a = DocStore(access, path=prefix_path)
        b = DocStore(AccessControl(access.writers, access.admins), path=prefix_path)
        assert a.get_record(keys["students"][0].address) == b.get_record(
            keys["students"][0].address
        )

    def test_tampered_log_rejected(self, access, keys, tmp_path):
        path = str(tmp_path / "log.ndjson")
        store = DocStore(access, path=path)
        store.put_record(make_record(keys["students"][0].address), keys["prof"])
        store.close()
        with open(path) as fh:
            content = fh.read()
        with open(path, "w") as fh:
            fh.write(content.replace("Rose", "Mallory"))
        with pytest.raises(CorruptLog):
            DocStore(access, path=path)

    def test_delete_op(self, access, keys, tmp_path):
        path = str(tmp_path / "log.ndjson")
        store = DocStore(access, path=path)
        student = keys["students"][0].address
        store.put_record(make_record(student), keys["prof"])
        store.delete_record(student, keys["prof"])
        with pytest.raises(NotFound):
            store.get_record(student)
        store.close()
        reloaded = DocStore(access, path=path)
        with pytest.raises(NotFound):
            reloaded.get_record(student)


class TestUnauthorizedWritesDoNotChangeView:
    def test_view_hash_stable(self, store, keys):
        student = keys["students"][0].address
        store.put_record(make_record(student), keys["prof"])
        before = record_hash(store.get_record(student))
        with pytest.raises(NotAuthorized):
            store.put_record(
                make_record(student, marks=("1.0",)), keys["students"][1]
            )
        assert record_hash(store.get_record(student)) == before


def test_single_field_mutation_property(keys):
    """record_hash is invariant under tx_hash edits and variant under any
    random single content-field edit."""
    rng = random.Random(9)
    base = make_record(keys["students"][0].address, marks=("5.2", "6.1", ""))
    h = record_hash(base)
    assert record_hash(
        dataclasses.replace(base, tx_hash=Digest32(rng.randbytes(32)))
    ) == h
    for _ in range(50):
        field = rng.choice(["name", "surname", "degree", "issue_date", "mark"])
        if field == "mark":
            i = rng.randrange(len(base.subjects))
            new_subjects = list(base.subjects)
            new_subjects[i] = dataclasses.replace(
                new_subjects[i], mark=str(rng.randrange(10))
            )
            mutant = dataclasses.replace(base, subjects=tuple(new_subjects))
            if mutant.subjects == base.subjects:
                continue
        else:
            mutant = dataclasses.replace(base, **{field: f"x{rng.randrange(1000)}"})
        assert record_hash(mutant) != h
