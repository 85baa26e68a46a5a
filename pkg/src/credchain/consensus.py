"""Sealing and seal-verification engines: a single-hash PoW puzzle and a
round-robin authority scheme, plus heaviest-chain fork choice.

The PoW seal preimage is the header sighash followed by the 8-byte
big-endian nonce, so one search attempt costs one hash. The authority
scheme rotates an in-turn sealer per height (difficulty 2, out-of-turn 1)
and bars a signer from sealing again within floor(n_sealers / 2) blocks.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Iterable, Optional, Sequence

from .chain import BlockHeader, ChainConfig, PoaSeal, PowSeal
from .crypto import Address, Digest32, KeyPair, keccak_256, recover_address, sign

POW_CANCEL_CHECK_INTERVAL = 4096  # nonces between cancellation checks


class ZeroDifficulty(ValueError):
    pass


class EmptySealerSet(ValueError):
    pass


class NotAuthorized(Exception):
    pass


class TooEarly(Exception):
    pass


# --- proof of work -----------------------------------------------------------


def pow_target(difficulty: int) -> int:
    if difficulty < 1:
        raise ZeroDifficulty(f"difficulty {difficulty} < 1")
    return (1 << 256) // difficulty


def _pow_mix(sighash: Digest32, nonce: int) -> bytes:
    return keccak_256(bytes(sighash) + nonce.to_bytes(8, "big"))


def pow_seal(
    header: BlockHeader,
    difficulty: Optional[int] = None,
    start_nonce: int = 0,
    cancel: Optional[Callable[[], bool]] = None,
    max_attempts: Optional[int] = None,
) -> Optional[BlockHeader]:
    """Linear nonce search until the mix clears the difficulty target.

    Expected attempts equal the difficulty. Returns None if the cancel
    callback fires (checked every POW_CANCEL_CHECK_INTERVAL nonces) or the
    attempt budget runs out; callers resume from the next nonce.
    """
    if difficulty is not None:
        header = replace(header, difficulty=difficulty)
    target = pow_target(header.difficulty)
    sighash = bytes(header.sighash)
    nonce = start_nonce
    attempts = 0
    while True:
        mix = keccak_256(sighash + nonce.to_bytes(8, "big"))
        if int.from_bytes(mix, "big") < target:
            return replace(header, seal=PowSeal(nonce=nonce, mix=Digest32(mix)))
        nonce += 1
        attempts += 1
        if max_attempts is not None and attempts >= max_attempts:
            return None
        if cancel is not None and nonce % POW_CANCEL_CHECK_INTERVAL == 0 and cancel():
            return None


def pow_verify(header: BlockHeader) -> bool:
    seal = header.seal
    if not isinstance(seal, PowSeal):
        return False
    try:
        target = pow_target(header.difficulty)
    except ZeroDifficulty:
        return False
    mix = _pow_mix(header.sighash, seal.nonce)
    return mix == bytes(seal.mix) and int.from_bytes(mix, "big") < target


def pow_retarget(parent_difficulty: int, parent_interval_s: int, target_block_s: int) -> int:
    """Nudge difficulty by 1/16 toward the target block interval.

    Fast parent (< target) raises difficulty; very slow parent (> 2x
    target) lowers it; anything in between leaves it alone. Never drops
    below 1.
    """
    d = parent_difficulty
    if parent_interval_s < target_block_s:
        d = d + d // 16
    elif parent_interval_s > 2 * target_block_s:
        d = d - max(d // 16, 1)
    return max(d, 1)


# --- proof of authority ---------------------------------------------------------


def poa_expected_sealer(block_number: int, sealers: Sequence[Address]) -> Address:
    """The in-turn sealer for a height: plain round robin over the set."""
    if not sealers:
        raise EmptySealerSet("no sealers configured")
    return sealers[block_number % len(sealers)]


def poa_recent_window(n_sealers: int) -> int:
    """How many most recent blocks bar their signer from sealing again."""
    return n_sealers // 2


def poa_seal(
    header: BlockHeader,
    sealer_keypair: KeyPair,
    config: ChainConfig,
    parent_timestamp: int,
) -> BlockHeader:
    sealer = sealer_keypair.address
    if sealer not in config.poa_sealers:
        raise NotAuthorized(f"{sealer.hex0x} not in sealer set")
    if header.timestamp < parent_timestamp + config.poa_period_s:
        raise TooEarly(
            f"timestamp {header.timestamp} before parent+{config.poa_period_s}"
        )
    in_turn = poa_expected_sealer(header.number, config.poa_sealers) == sealer
    header = replace(header, sealer=sealer, difficulty=2 if in_turn else 1)
    sig = sign(sealer_keypair.sk, header.sighash)
    return replace(header, seal=PoaSeal(signature=sig))


def poa_verify(
    header: BlockHeader,
    config: ChainConfig,
    parent_timestamp: int,
    recent_sealers: Sequence[Address] = (),
) -> bool:
    """Check signature, membership, turn-difficulty, period and the
    anti-monopoly rule (signer absent from the recent window)."""
    seal = header.seal
    if not isinstance(seal, PoaSeal):
        return False
    signer = recover_address(header.sighash, seal.signature)
    if signer is None or signer not in config.poa_sealers:
        return False
    if signer != header.sealer:
        return False
    if header.timestamp < parent_timestamp + config.poa_period_s:
        return False
    in_turn = poa_expected_sealer(header.number, config.poa_sealers) == signer
    if header.difficulty != (2 if in_turn else 1):
        return False
    window = poa_recent_window(len(config.poa_sealers))
    if window and recent_sealers and signer in recent_sealers[-window:]:
        return False
    return True


# --- fork choice -----------------------------------------------------------------


@dataclass(frozen=True, order=False)
class HeadCandidate:
    total_difficulty: int
    head_hash: Digest32


def fork_choice(candidates: Iterable[HeadCandidate]) -> HeadCandidate:
    """Heaviest chain wins; ties break to the lexicographically smaller
    head hash so every node picks the same tip."""
    candidates = list(candidates)
    if not candidates:
        raise ValueError("no candidate heads")
    return min(candidates, key=lambda c: (-c.total_difficulty, bytes(c.head_hash)))


def head_is_better(
    new_td: int, new_hash: Digest32, cur_td: int, cur_hash: Digest32
) -> bool:
    """True if (new_td, new_hash) beats the current head under fork choice."""
    if new_td != cur_td:
        return new_td > cur_td
    return bytes(new_hash) < bytes(cur_hash)
