import pytest

from credchain.chain import ChainConfig, Consensus, Genesis
from credchain.crypto import Digest32, KeyPair, keccak_256
from credchain.docstore import (
    AcademicRecord,
    AccessControl,
    DocStore,
    SubjectEntry,
)


@pytest.fixture(scope="session")
def keys():
    """Deterministic keypairs: sealers, admin, professor, students, funded
    sender."""
    return {
        "sealers": [KeyPair.from_sk(0x100 + i) for i in range(4)],
        "admin": KeyPair.from_sk(0x200),
        "prof": KeyPair.from_sk(0x201),
        "students": [KeyPair.from_sk(0x300 + i) for i in range(5)],
        "sender": KeyPair.from_sk(0x400),
    }


@pytest.fixture
def poa_genesis(keys):
    config = ChainConfig(
        chain_id=7,
        consensus=Consensus.POA,
        poa_sealers=tuple(k.address for k in keys["sealers"][:3]),
    )
    return Genesis(config=config, balances={keys["sender"].address: 10**12})


@pytest.fixture
def access(keys):
    return AccessControl(
        writers=frozenset({keys["admin"].address, keys["prof"].address}),
        admins=frozenset({keys["admin"].address}),
    )


def make_record(student_address, seq=0, marks=("5.2", "")):
    subjects = tuple(
        SubjectEntry(
            subject=f"Subject {i}",
            mark=mark,
            subject_type="Basic Core",
            course="23/24",
        )
        for i, mark in enumerate(marks)
    )
    return AcademicRecord(
        id=Digest32(keccak_256(f"record-{student_address.hex()}-{seq}".encode())),
        public_key=student_address,
        degree="Computer science",
        issue_date="",
        name="Rose",
        surname="Howard",
        subjects=subjects,
    )


@pytest.fixture
def store(access, keys, tmp_path):
    return DocStore(access, path=str(tmp_path / "docstore.ndjson"))
