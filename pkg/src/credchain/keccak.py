"""Keccak-256 (original Keccak padding, as used by Ethereum-style chains).

Pure-Python sponge over keccak-f[1600]. The round function is fully
unrolled; this is the innermost loop of block sealing and runs a few
hundred thousand times in the benchmark suite. The permutation is shared
with NIST SHA-3, which differs only in the domain-separation padding byte;
``sha3_256`` exposes that variant so tests can cross-check the permutation
against ``hashlib.sha3_256``.
"""

from __future__ import annotations

import struct

M = (1 << 64) - 1

_ROUND_CONSTANTS = (
    0x0000000000000001, 0x0000000000008082, 0x800000000000808A,
    0x8000000080008000, 0x000000000000808B, 0x0000000080000001,
    0x8000000080008081, 0x8000000000008009, 0x000000000000008A,
    0x0000000000000088, 0x0000000080008009, 0x000000008000000A,
    0x000000008000808B, 0x800000000000008B, 0x8000000000008089,
    0x8000000000008003, 0x8000000000008002, 0x8000000000000080,
    0x000000000000800A, 0x800000008000000A, 0x8000000080008081,
    0x8000000000008080, 0x0000000080000001, 0x8000000080008008,
)

_RATE_256 = 136  # bytes absorbed per permutation for 256-bit output


def _keccak_f(state: list[int]) -> None:
    """Apply the 24-round keccak-f[1600] permutation in place."""
    (s0, s1, s2, s3, s4, s5, s6, s7, s8, s9, s10, s11, s12,
     s13, s14, s15, s16, s17, s18, s19, s20, s21, s22, s23, s24) = state
    for rc in _ROUND_CONSTANTS:
        # theta
        c0 = s0 ^ s5 ^ s10 ^ s15 ^ s20
        c1 = s1 ^ s6 ^ s11 ^ s16 ^ s21
        c2 = s2 ^ s7 ^ s12 ^ s17 ^ s22
        c3 = s3 ^ s8 ^ s13 ^ s18 ^ s23
        c4 = s4 ^ s9 ^ s14 ^ s19 ^ s24
        d0 = c4 ^ (((c1 << 1) | (c1 >> 63)) & M)
        d1 = c0 ^ (((c2 << 1) | (c2 >> 63)) & M)
        d2 = c1 ^ (((c3 << 1) | (c3 >> 63)) & M)
        d3 = c2 ^ (((c4 << 1) | (c4 >> 63)) & M)
        d4 = c3 ^ (((c0 << 1) | (c0 >> 63)) & M)
        s0 ^= d0
        s1 ^= d1
        s2 ^= d2
        s3 ^= d3
        s4 ^= d4
        s5 ^= d0
        s6 ^= d1
        s7 ^= d2
        s8 ^= d3
        s9 ^= d4
        s10 ^= d0
        s11 ^= d1
        s12 ^= d2
        s13 ^= d3
        s14 ^= d4
        s15 ^= d0
        s16 ^= d1
        s17 ^= d2
        s18 ^= d3
        s19 ^= d4
        s20 ^= d0
        s21 ^= d1
        s22 ^= d2
        s23 ^= d3
        s24 ^= d4
        # rho + pi
        b0 = s0
        b10 = ((s1 << 1) | (s1 >> 63)) & M
        b20 = ((s2 << 62) | (s2 >> 2)) & M
        b5 = ((s3 << 28) | (s3 >> 36)) & M
        b15 = ((s4 << 27) | (s4 >> 37)) & M
        b16 = ((s5 << 36) | (s5 >> 28)) & M
        b1 = ((s6 << 44) | (s6 >> 20)) & M
        b11 = ((s7 << 6) | (s7 >> 58)) & M
        b21 = ((s8 << 55) | (s8 >> 9)) & M
        b6 = ((s9 << 20) | (s9 >> 44)) & M
        b7 = ((s10 << 3) | (s10 >> 61)) & M
        b17 = ((s11 << 10) | (s11 >> 54)) & M
        b2 = ((s12 << 43) | (s12 >> 21)) & M
        b12 = ((s13 << 25) | (s13 >> 39)) & M
        b22 = ((s14 << 39) | (s14 >> 25)) & M
        b23 = ((s15 << 41) | (s15 >> 23)) & M
        b8 = ((s16 << 45) | (s16 >> 19)) & M
        b18 = ((s17 << 15) | (s17 >> 49)) & M
        b3 = ((s18 << 21) | (s18 >> 43)) & M
        b13 = ((s19 << 8) | (s19 >> 56)) & M
        b14 = ((s20 << 18) | (s20 >> 46)) & M
        b24 = ((s21 << 2) | (s21 >> 62)) & M
        b9 = ((s22 << 61) | (s22 >> 3)) & M
        b19 = ((s23 << 56) | (s23 >> 8)) & M
        b4 = ((s24 << 14) | (s24 >> 50)) & M
        # chi + iota
        s0 = (b0 ^ (~b1 & b2) ^ rc) & M
        s1 = b1 ^ (~b2 & b3)
        s2 = b2 ^ (~b3 & b4)
        s3 = b3 ^ (~b4 & b0)
        s4 = b4 ^ (~b0 & b1)
        s5 = b5 ^ (~b6 & b7)
        s6 = b6 ^ (~b7 & b8)
        s7 = b7 ^ (~b8 & b9)
        s8 = b8 ^ (~b9 & b5)
        s9 = b9 ^ (~b5 & b6)
        s10 = b10 ^ (~b11 & b12)
        s11 = b11 ^ (~b12 & b13)
        s12 = b12 ^ (~b13 & b14)
        s13 = b13 ^ (~b14 & b10)
        s14 = b14 ^ (~b10 & b11)
        s15 = b15 ^ (~b16 & b17)
        s16 = b16 ^ (~b17 & b18)
        s17 = b17 ^ (~b18 & b19)
        s18 = b18 ^ (~b19 & b15)
        s19 = b19 ^ (~b15 & b16)
        s20 = b20 ^ (~b21 & b22)
        s21 = b21 ^ (~b22 & b23)
        s22 = b22 ^ (~b23 & b24)
        s23 = b23 ^ (~b24 & b20)
        s24 = b24 ^ (~b20 & b21)
    state[:] = (s0, s1, s2, s3, s4, s5, s6, s7, s8, s9, s10, s11, s12,
                s13, s14, s15, s16, s17, s18, s19, s20, s21, s22, s23, s24)


def _sponge_256(data: bytes, pad_byte: int) -> bytes:
    state = [0] * 25
    rate = _RATE_256

    full_len = len(data) - (len(data) % rate)
    unpack_from = struct.unpack_from
    for off in range(0, full_len, rate):
        lanes = unpack_from("<17Q", data, off)
        for i in range(17):
            state[i] ^= lanes[i]
        _keccak_f(state)

    block = bytearray(data[full_len:])
    block.append(pad_byte)
    block.extend(b"\x00" * (rate - len(block)))
    block[-1] |= 0x80
    lanes = unpack_from("<17Q", bytes(block), 0)
    for i in range(17):
        state[i] ^= lanes[i]
    _keccak_f(state)

    return struct.pack("<4Q", state[0], state[1], state[2], state[3])


def keccak_256(data: bytes) -> bytes:
    """Keccak-256 digest (0x01 padding, not the NIST SHA-3 0x06 variant)."""
    return _sponge_256(bytes(data), 0x01)


def sha3_256(data: bytes) -> bytes:
    """NIST SHA3-256 over the same sponge; exists for oracle cross-checks."""
    return _sponge_256(bytes(data), 0x06)
