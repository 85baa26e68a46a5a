"""On-chain hash registry: an append-ordered list of anchored record hashes
with an O(1) membership index.

Writes happen only inside block execution; reads are served straight off a
node's head state without gas metering.
"""

from __future__ import annotations

from enum import Enum

from .crypto import Digest32


class StoreResult(Enum):
    INSERTED = "inserted"
    ALREADY_PRESENT = "already_present"


class RegistryState:
    """Entries keep insertion order (hash, block_number); the index set
    makes membership checks independent of entry count. Duplicates are
    silently deduplicated; a second store succeeds without re-appending."""

    __slots__ = ("entries", "_index")

    def __init__(self) -> None:
        self.entries: list[tuple[Digest32, int]] = []
        self._index: dict[Digest32, int] = {}

    def store(self, digest: Digest32, block_number: int) -> StoreResult:
        if digest in self._index:
            return StoreResult.ALREADY_PRESENT
        self.entries.append((digest, block_number))
        self._index[digest] = block_number
        return StoreResult.INSERTED

    def check(self, digest: Digest32) -> bool:
        return digest in self._index

    def anchored_block(self, digest: Digest32) -> int | None:
        """Block number the hash was first stored in, or None."""
        return self._index.get(digest)

    def count(self) -> int:
        return len(self.entries)

    def clone(self) -> "RegistryState":
        other = RegistryState.__new__(RegistryState)
        other.entries = list(self.entries)
        other._index = dict(self._index)
        return other

    # snapshot format: JSON list of {hash, block_number}, embedded in the
    # node snapshot file
    def to_json(self) -> list[dict]:
        return [
            {"hash": d.hex0x, "block_number": n}
            for d, n in self.entries
        ]

    @classmethod
    def from_json(cls, data: list[dict]) -> "RegistryState":
        reg = cls()
        for item in data:
            reg.store(Digest32.parse(item["hash"]), int(item["block_number"]))
        return reg

    def __eq__(self, other) -> bool:
        return isinstance(other, RegistryState) and self.entries == other.entries

    def __repr__(self) -> str:
        return f"<RegistryState {len(self.entries)} entries>"
