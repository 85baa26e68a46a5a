"""Reference Keccak-256 used as an independent test oracle.

Written straight from the permutation's definition: round constants come
from the degree-8 LFSR, rotation offsets from the (t+1)(t+2)/2 walk, and
the state is a 5x5 lane matrix. Deliberately shares no structure with the
production implementation (which uses precomputed tables and an unrolled
round), so agreement between the two is meaningful.
"""

M64 = (1 << 64) - 1


def _rot(value: int, n: int) -> int:
    n %= 64
    if n == 0:
        return value
    return ((value << n) | (value >> (64 - n))) & M64


def _rc_bit(t: int) -> int:
    # x^8 + x^6 + x^5 + x^4 + 1 over GF(2)
    r = 1
    for _ in range(t % 255):
        r <<= 1
        if r & 0x100:
            r ^= 0x171
    return r & 1


def _round_constants() -> list[int]:
    constants = []
    for i in range(24):
        rc = 0
        for j in range(7):
            if _rc_bit(j + 7 * i):
                rc |= 1 << (2**j - 1)
        constants.append(rc)
    return constants


def _rho_offsets() -> list[list[int]]:
    offsets = [[0] * 5 for _ in range(5)]
    x, y = 1, 0
    for t in range(24):
        offsets[x][y] = ((t + 1) * (t + 2) // 2) % 64
        x, y = y, (2 * x + 3 * y) % 5
    return offsets


_RC = _round_constants()
_RHO = _rho_offsets()


def _keccak_f(a: list[list[int]]) -> list[list[int]]:
    for rnd in range(24):
        c = [a[x][0] ^ a[x][1] ^ a[x][2] ^ a[x][3] ^ a[x][4] for x in range(5)]
        d = [c[(x - 1) % 5] ^ _rot(c[(x + 1) % 5], 1) for x in range(5)]
        a = [[a[x][y] ^ d[x] for y in range(5)] for x in range(5)]
        b = [[0] * 5 for _ in range(5)]
        for x in range(5):
            for y in range(5):
                b[y][(2 * x + 3 * y) % 5] = _rot(a[x][y], _RHO[x][y])
        a = [
            [b[x][y] ^ ((~b[(x + 1) % 5][y] & M64) & b[(x + 2) % 5][y]) for y in range(5)]
            for x in range(5)
        ]
        a[0][0] ^= _RC[rnd]
    return a


def keccak256_reference(data: bytes, pad_byte: int = 0x01) -> bytes:
    rate = 136
    padded = bytearray(data)
    padded.append(pad_byte)
    while len(padded) % rate:
        padded.append(0)
    padded[-1] |= 0x80

    a = [[0] * 5 for _ in range(5)]
    for block_start in range(0, len(padded), rate):
        for lane_index in range(rate // 8):
            lane = int.from_bytes(
                padded[block_start + 8 * lane_index : block_start + 8 * lane_index + 8],
                "little",
            )
            a[lane_index % 5][lane_index // 5] ^= lane
        a = _keccak_f(a)

    out = b""
    for lane_index in range(4):
        out += a[lane_index % 5][lane_index // 5].to_bytes(8, "little")
    return out
