import random

from hypothesis import given, settings
from hypothesis import strategies as st

from credchain.crypto import Digest32, keccak_256
from credchain.registry import RegistryState, StoreResult


def digest(i):
    return Digest32(keccak_256(f"h{i}".encode()))


class TestStore:
    def test_insert_into_empty(self):
        reg = RegistryState()
        assert reg.store(digest(1), 5) == StoreResult.INSERTED
        assert reg.count() == 1

    def test_duplicate_is_noop(self):
        reg = RegistryState()
        reg.store(digest(1), 5)
        assert reg.store(digest(1), 9) == StoreResult.ALREADY_PRESENT
        assert reg.count() == 1
        assert reg.anchored_block(digest(1)) == 5  # first anchoring wins

    def test_thousand_distinct(self):
        reg = RegistryState()
        rng = random.Random(1)
        hashes = {Digest32(rng.randbytes(32)) for _ in range(1000)}
        for h in hashes:
            reg.store(h, 1)
        assert reg.count() == len(hashes) == 1000


class TestCheck:
    def test_absent(self):
        assert not RegistryState().check(digest(1))

    def test_present(self):
        reg = RegistryState()
        reg.store(digest(1), 1)
        assert reg.check(digest(1))

    def test_agrees_with_linear_scan(self):
        # oracle: naive scan of the entries list
        reg = RegistryState()
        rng = random.Random(3)
        pool = [Digest32(rng.randbytes(32)) for _ in range(500)]
        for h in pool[:250]:
            reg.store(h, 1)
        for _ in range(10_000):
            probe = rng.choice(pool)
            scan = any(h == probe for h, _ in reg.entries)
            assert reg.check(probe) == scan


class TestCount:
    def test_empty(self):
        assert RegistryState().count() == 0

    def test_distinct_stores(self):
        reg = RegistryState()
        for i in range(7):
            reg.store(digest(i), 1)
        assert reg.count() == 7

    def test_duplicates_collapse(self):
        reg = RegistryState()
        seq = [1, 2, 2, 3, 1, 4, 4, 4]
        oracle = set()
        for i in seq:
            reg.store(digest(i), 1)
            oracle.add(digest(i))
        assert reg.count() == len(oracle)


class TestSnapshot:
    def test_roundtrip_preserves_order(self):
        reg = RegistryState()
        for i in (5, 3, 9, 1):
            reg.store(digest(i), i)
        loaded = RegistryState.from_json(reg.to_json())
        assert loaded == reg
        assert loaded.entries == reg.entries

    def test_clone_independent(self):
        reg = RegistryState()
        reg.store(digest(1), 1)
        clone = reg.clone()
        clone.store(digest(2), 2)
        assert reg.count() == 1 and clone.count() == 2


@given(
    st.lists(
        st.tuples(st.integers(min_value=0, max_value=50), st.booleans()),
        max_size=200,
    )
)
@settings(max_examples=100, deadline=None)
def test_matches_set_oracle(ops):
    """store/check stream against a plain set."""
    reg = RegistryState()
    oracle: set = set()
    for key, is_store in ops:
        h = digest(key)
        if is_store:
            result = reg.store(h, 1)
            assert (result == StoreResult.INSERTED) == (h not in oracle)
            oracle.add(h)
        else:
            assert reg.check(h) == (h in oracle)
    assert reg.count() == len(oracle)
