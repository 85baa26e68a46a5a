"""Keys, addresses and deterministic ECDSA over secp256k1.

Self-contained implementation (no native bindings available in the target
environments). Point arithmetic uses Jacobian coordinates; base-point
multiplication goes through a precomputed table of doublings. Signatures
use RFC-6979 deterministic nonces and enforce the canonical (low) s rule,
and carry a recovery id so the signer's key can be recovered from the
signature alone.

Not hardened against side channels; the threat model here is forged
documents, not key extraction from a co-resident process.
"""

from __future__ import annotations

import hashlib
import hmac
import secrets
from dataclasses import dataclass
from functools import lru_cache

from .keccak import keccak_256

# secp256k1 domain parameters
P = 0xFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFEFFFFFC2F
N = 0xFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFEBAAEDCE6AF48A03BBFD25E8CD0364141
GX = 0x79BE667EF9DCBBAC55A06295CE870B07029BFCDB2DCE28D959F2815B16F81798
GY = 0x483ADA7726A3C4655DA4FBFC0E1108A8FD17B448A68554199C47D08FFB10D4B8

_HALF_N = N // 2

keccak256 = keccak_256


class InvalidPoint(ValueError):
    """Public key bytes do not describe a point on the curve."""


class InvalidKey(ValueError):
    """Private key scalar outside [1, N-1]."""


class Digest32(bytes):
    """A 32-byte hash value. Hex renders lowercase; parse accepts 0x."""

    def __new__(cls, value: bytes) -> "Digest32":
        if len(value) != 32:
            raise ValueError(f"digest must be 32 bytes, got {len(value)}")
        return super().__new__(cls, value)

    @classmethod
    def parse(cls, text: str) -> "Digest32":
        if text.startswith(("0x", "0X")):
            text = text[2:]
        return cls(bytes.fromhex(text))

    @property
    def hex0x(self) -> str:
        return "0x" + self.hex()


ZERO_DIGEST = Digest32(b"\x00" * 32)


class Address(bytes):
    """A 20-byte account identifier (tail of the public key hash)."""

    def __new__(cls, value: bytes) -> "Address":
        if len(value) != 20:
            raise ValueError(f"address must be 20 bytes, got {len(value)}")
        return super().__new__(cls, value)

    @classmethod
    def parse(cls, text: str) -> "Address":
        if text.startswith(("0x", "0X")):
            text = text[2:]
        return cls(bytes.fromhex(text))

    @property
    def hex0x(self) -> str:
        return "0x" + self.hex()


ZERO_ADDRESS = Address(b"\x00" * 20)


# --- Jacobian point arithmetic (a = 0 curve) --------------------------------

_INF = (0, 0, 0)


def _jac_double(pt):
    x, y, z = pt
    if not y:
        return _INF
    y2 = y * y % P
    s = 4 * x * y2 % P
    m = 3 * x * x % P
    nx = (m * m - 2 * s) % P
    ny = (m * (s - nx) - 8 * y2 * y2) % P
    nz = 2 * y * z % P
    return nx, ny, nz


def _jac_add(p1, p2):
    if not p1[2]:
        return p2
    if not p2[2]:
        return p1
    x1, y1, z1 = p1
    x2, y2, z2 = p2
    z1s = z1 * z1 % P
    z2s = z2 * z2 % P
    u1 = x1 * z2s % P
    u2 = x2 * z1s % P
    s1 = y1 * z2s * z2 % P
    s2 = y2 * z1s * z1 % P
    if u1 == u2:
        if s1 != s2:
            return _INF
        return _jac_double(p1)
    h = (u2 - u1) % P
    r = (s2 - s1) % P
    h2 = h * h % P
    h3 = h2 * h % P
    u1h2 = u1 * h2 % P
    nx = (r * r - h3 - 2 * u1h2) % P
    ny = (r * (u1h2 - nx) - s1 * h3) % P
    nz = h * z1 * z2 % P
    return nx, ny, nz


def _jac_add_affine(p1, ax, ay):
    # Mixed addition with an affine point (z2 = 1); saves a few mults.
    if not p1[2]:
        return ax, ay, 1
    x1, y1, z1 = p1
    z1s = z1 * z1 % P
    u2 = ax * z1s % P
    s2 = ay * z1s * z1 % P
    if x1 == u2:
        if y1 != s2:
            return _INF
        return _jac_double(p1)
    h = (u2 - x1) % P
    r = (s2 - y1) % P
    h2 = h * h % P
    h3 = h2 * h % P
    u1h2 = x1 * h2 % P
    nx = (r * r - h3 - 2 * u1h2) % P
    ny = (r * (u1h2 - nx) - y1 * h3) % P
    nz = h * z1 % P
    return nx, ny, nz


def _to_affine(pt):
    x, y, z = pt
    if not z:
        return None
    inv = pow(z, -1, P)
    inv2 = inv * inv % P
    return x * inv2 % P, y * inv2 * inv % P


def _on_curve(x: int, y: int) -> bool:
    if not (0 < x < P and 0 < y < P):
        return False
    return (y * y - (x * x * x + 7)) % P == 0


# Precomputed affine doublings of G: _G_TABLE[i] = 2^i * G.
def _build_g_table():
    table = []
    pt = (GX, GY, 1)
    for _ in range(256):
        aff = _to_affine(pt)
        table.append(aff)
        pt = _jac_double(pt)
    return tuple(table)


_G_TABLE = _build_g_table()


def _mult_g(k: int):
    acc = _INF
    i = 0
    while k:
        if k & 1:
            ax, ay = _G_TABLE[i]
            acc = _jac_add_affine(acc, ax, ay)
        k >>= 1
        i += 1
    return acc


def _mult(k: int, pt) -> tuple:
    acc = _INF
    while k:
        if k & 1:
            acc = _jac_add(acc, pt)
        pt = _jac_double(pt)
        k >>= 1
    return acc


# --- keys and addresses ------------------------------------------------------


def _point_to_pk(x: int, y: int) -> bytes:
    return x.to_bytes(32, "big") + y.to_bytes(32, "big")


def _pk_to_point(pk: bytes) -> tuple[int, int]:
    if len(pk) != 64:
        raise InvalidPoint(f"public key must be 64 bytes, got {len(pk)}")
    x = int.from_bytes(pk[:32], "big")
    y = int.from_bytes(pk[32:], "big")
    if not _on_curve(x, y):
        raise InvalidPoint("point not on curve")
    return x, y


@dataclass(frozen=True)
class KeyPair:
    sk: int
    pk: bytes  # 64-byte uncompressed point, no 0x04 tag

    @classmethod
    def from_sk(cls, sk: int) -> "KeyPair":
        if not 1 <= sk < N:
            raise InvalidKey("private key out of range")
        aff = _to_affine(_mult_g(sk))
        return cls(sk=sk, pk=_point_to_pk(*aff))

    @classmethod
    def generate(cls, rng=None) -> "KeyPair":
        while True:
            raw = rng.randbytes(32) if rng is not None else secrets.token_bytes(32)
            sk = int.from_bytes(raw, "big")
            if 1 <= sk < N:
                return cls.from_sk(sk)

    @property
    def address(self) -> Address:
        return derive_address(self.pk)


def derive_address(pk: bytes) -> Address:
    """Account address: last 20 bytes of keccak256 of the raw public key."""
    _pk_to_point(pk)  # raises InvalidPoint for garbage input
    return Address(keccak_256(pk)[-20:])


# --- signatures ---------------------------------------------------------------


@dataclass(frozen=True)
class Signature:
    r: int
    s: int
    v: int  # recovery id in {0, 1}

    def to_bytes(self) -> bytes:
        return self.r.to_bytes(32, "big") + self.s.to_bytes(32, "big") + bytes([self.v])

    @classmethod
    def from_bytes(cls, raw: bytes) -> "Signature":
        if len(raw) != 65:
            raise ValueError(f"signature must be 65 bytes, got {len(raw)}")
        return cls(
            r=int.from_bytes(raw[:32], "big"),
            s=int.from_bytes(raw[32:64], "big"),
            v=raw[64],
        )


def _rfc6979_nonce(sk: int, digest: bytes) -> int:
    # RFC 6979 with HMAC-SHA256; q and the hash are both 256 bits, so
    # bits2int is plain big-endian conversion.
    qlen_bytes = 32
    x = sk.to_bytes(qlen_bytes, "big")
    h1 = (int.from_bytes(digest, "big") % N).to_bytes(qlen_bytes, "big")
    v = b"\x01" * 32
    k = b"\x00" * 32
    k = hmac.new(k, v + b"\x00" + x + h1, hashlib.sha256).digest()
    v = hmac.new(k, v, hashlib.sha256).digest()
    k = hmac.new(k, v + b"\x01" + x + h1, hashlib.sha256).digest()
    v = hmac.new(k, v, hashlib.sha256).digest()
    while True:
        v = hmac.new(k, v, hashlib.sha256).digest()
        candidate = int.from_bytes(v, "big")
        if 1 <= candidate < N:
            return candidate
        k = hmac.new(k, v + b"\x00", hashlib.sha256).digest()
        v = hmac.new(k, v, hashlib.sha256).digest()


def sign(sk: int, digest: Digest32) -> Signature:
    """Deterministic ECDSA signature of a 32-byte digest, low-s form."""
    if not 1 <= sk < N:
        raise InvalidKey("private key out of range")
    z = int.from_bytes(digest, "big") % N
    k = _rfc6979_nonce(sk, bytes(digest))
    while True:
        rx, ry = _to_affine(_mult_g(k))
        r = rx % N
        if r == 0:
            k = (k + 1) % N or 1
            continue
        s = pow(k, -1, N) * (z + r * sk) % N
        if s == 0:
            k = (k + 1) % N or 1
            continue
        v = ry & 1
        if s > _HALF_N:
            s = N - s
            v ^= 1
        return Signature(r=r, s=s, v=v)


def verify(pk: bytes, digest: Digest32, sig: Signature) -> bool:
    """True iff sig is a canonical-s signature of digest under pk.

    Malformed inputs yield False rather than raising.
    """
    try:
        x, y = _pk_to_point(pk)
    except (InvalidPoint, TypeError):
        return False
    if not (1 <= sig.r < N and 1 <= sig.s <= _HALF_N):
        return False
    z = int.from_bytes(digest, "big") % N
    w = pow(sig.s, -1, N)
    u1 = z * w % N
    u2 = sig.r * w % N
    pt = _jac_add(_mult_g(u1), _mult(u2, (x, y, 1)))
    aff = _to_affine(pt)
    if aff is None:
        return False
    return aff[0] % N == sig.r


def recover_pubkey(digest: Digest32, sig: Signature) -> bytes | None:
    """Recover the 64-byte public key from a signature, or None."""
    if not (1 <= sig.r < N and 1 <= sig.s <= _HALF_N and sig.v in (0, 1)):
        return None
    # r + N may also be a valid x coordinate, but only for r > P - N,
    # a ~2^-127 sliver; that case is rejected rather than searched.
    x = sig.r
    if x >= P:
        return None
    y_sq = (x * x * x + 7) % P
    y = pow(y_sq, (P + 1) // 4, P)
    if y * y % P != y_sq:
        return None
    if y & 1 != sig.v:
        y = P - y
    z = int.from_bytes(digest, "big") % N
    r_inv = pow(sig.r, -1, N)
    u1 = (-z * r_inv) % N
    u2 = sig.s * r_inv % N
    pt = _jac_add(_mult_g(u1), _mult(u2, (x, y, 1)))
    aff = _to_affine(pt)
    if aff is None:
        return None
    return _point_to_pk(*aff)


@lru_cache(maxsize=65536)
def _recover_addr_cached(digest: bytes, r: int, s: int, v: int) -> Address | None:
    pk = recover_pubkey(Digest32(digest), Signature(r, s, v))
    if pk is None:
        return None
    return Address(keccak_256(pk)[-20:])


def recover_address(digest: Digest32, sig: Signature) -> Address | None:
    """Signer address recovered from a signature; memoized.

    Signature recovery dominates transaction validation cost, and the same
    (digest, signature) pair is re-verified by every node that sees a
    transaction or block, so results are shared process-wide.
    """
    return _recover_addr_cached(bytes(digest), sig.r, sig.s, sig.v)
