"""Per-participant envelope encryption for raw data chunks.

Every chunk gets a fresh 256-bit data key. The data key is wrapped for the
participant's X25519 public key (ephemeral-static ECDH + HKDF-SHA256 +
AES-256-GCM) and the payload is sealed with AES-256-GCM under the data key.
Compression, when requested, happens before encryption.

On-disk layout (``.hcz``), all integers big-endian::

    magic           4   b"HOPE"
    version         1   0x01
    flags           1   bit0 = payload was DEFLATE-compressed (zlib stream)
    suite_id        1   0x01 = X25519/HKDF-SHA256/AES-256-GCM
    wrapped_key_len 2
    wrapped_key     n   ephemeral public key (32) || GCM(kek, data_key) (48)
    nonce           12
    ciphertext+tag  rest

The 9-byte fixed header and the wrapped key are bound to the payload as
associated data, so any header bit flip fails authentication.
"""

from __future__ import annotations

import hashlib
import os
import struct
import zlib
from dataclasses import dataclass

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric.x25519 import X25519PrivateKey, X25519PublicKey
from cryptography.hazmat.primitives.ciphers.aead import AESGCM
from cryptography.hazmat.primitives.kdf.hkdf import HKDF

MAGIC = b"HOPE"
VERSION = 1
SUITE_X25519_AESGCM = 1
FLAG_COMPRESSED = 0x01
FILE_EXT = ".hcz"

ALGORITHM_X25519 = 1
KEY_LEN = 32
NONCE_LEN = 12
TAG_LEN = 16
_FIXED = struct.Struct(">4sBBBH")
_WRAP_INFO = b"phenopipe/hcz/v1/key-wrap"
# The KEK is unique per ephemeral key, so a constant nonce is safe here.
_WRAP_NONCE = bytes(NONCE_LEN)


class CryptoError(Exception):
    """Base class for envelope failures."""


class BadMagic(CryptoError):
    pass


class UnknownVersion(CryptoError):
    pass


class UnknownSuite(CryptoError):
    pass


class MalformedChunk(CryptoError):
    pass


class AuthFailure(CryptoError):
    """Tampered chunk or wrong private key."""


class DecompressFailure(CryptoError):
    pass


class InvalidKey(CryptoError):
    pass


class EntropyError(CryptoError):
    pass


@dataclass(frozen=True)
class KeyPair:
    public_key: bytes
    private_key: bytes
    algorithm_id: int = ALGORITHM_X25519


def generate_keypair(seed: bytes | str | int | None = None) -> KeyPair:
    """Create an X25519 keypair.

    With ``seed`` the private scalar is SHA-256 of the seed, which gives a
    reproducible keypair for tests and synthetic studies. Without it the OS
    entropy source is used.
    """
    if seed is None:
        try:
            sk = X25519PrivateKey.generate()
        except Exception as exc:  # pragma: no cover - OS entropy failure
            raise EntropyError(str(exc)) from exc
    else:
        if isinstance(seed, int):
            seed = seed.to_bytes(16, "big", signed=True)
        elif isinstance(seed, str):
            seed = seed.encode()
        sk = X25519PrivateKey.from_private_bytes(hashlib.sha256(b"phenopipe-key" + seed).digest())
    private = sk.private_bytes(serialization.Encoding.Raw, serialization.PrivateFormat.Raw,
                               serialization.NoEncryption())
    public = sk.public_key().public_bytes(serialization.Encoding.Raw, serialization.PublicFormat.Raw)
    return KeyPair(public_key=public, private_key=private)


def _kek(shared: bytes, eph_pub: bytes, recipient_pub: bytes) -> bytes:
    return HKDF(algorithm=hashes.SHA256(), length=KEY_LEN, salt=eph_pub + recipient_pub,
                info=_WRAP_INFO).derive(shared)


def _load_public(pub: bytes) -> X25519PublicKey:
    if not isinstance(pub, (bytes, bytearray)) or len(pub) != KEY_LEN:
        raise InvalidKey("public key must be 32 raw bytes")
    try:
        return X25519PublicKey.from_public_bytes(bytes(pub))
    except ValueError as exc:
        raise InvalidKey(str(exc)) from exc


def _raw_public(key: X25519PublicKey) -> bytes:
    return key.public_bytes(serialization.Encoding.Raw, serialization.PublicFormat.Raw)


def encrypt_chunk(plaintext: bytes, pub: bytes, compress: bool = False, level: int = 6) -> bytes:
    """Seal ``plaintext`` for the holder of the private half of ``pub``."""
    recipient = _load_public(pub)
    body = zlib.compress(plaintext, level) if compress else bytes(plaintext)
    flags = FLAG_COMPRESSED if compress else 0

    eph = X25519PrivateKey.generate()
    eph_pub = _raw_public(eph.public_key())
    shared = eph.exchange(recipient)
    if shared == bytes(KEY_LEN):
        raise InvalidKey("low-order public key")
    data_key = os.urandom(KEY_LEN)
    wrapped = eph_pub + AESGCM(_kek(shared, eph_pub, bytes(pub))).encrypt(_WRAP_NONCE, data_key, None)

    header = _FIXED.pack(MAGIC, VERSION, flags, SUITE_X25519_AESGCM, len(wrapped)) + wrapped
    nonce = os.urandom(NONCE_LEN)
    return header + nonce + AESGCM(data_key).encrypt(nonce, body, header)


def parse_header(chunk: bytes) -> dict:
    """Split a chunk into its fields without decrypting anything."""
    if len(chunk) < _FIXED.size:
        raise MalformedChunk("chunk shorter than fixed header")
    magic, version, flags, suite, wlen = _FIXED.unpack_from(chunk)
    if magic != MAGIC:
        raise BadMagic(repr(magic))
    if version != VERSION:
        raise UnknownVersion(str(version))
    if suite != SUITE_X25519_AESGCM:
        raise UnknownSuite(str(suite))
    if wlen != KEY_LEN + KEY_LEN + TAG_LEN:
        raise MalformedChunk(f"wrapped key length {wlen}")
    off = _FIXED.size
    end = off + wlen
    if len(chunk) < end + NONCE_LEN + TAG_LEN:
        raise MalformedChunk("truncated chunk")
    return {
        "version": version,
        "flags": flags,
        "compressed": bool(flags & FLAG_COMPRESSED),
        "suite_id": suite,
        "wrapped_key": chunk[off:end],
        "nonce": chunk[end:end + NONCE_LEN],
        "header": chunk[:end],
        "ciphertext": chunk[end + NONCE_LEN:],
    }


def decrypt_chunk(chunk: bytes, priv: bytes) -> bytes:
    """Authenticate and open a chunk; never returns unauthenticated bytes."""
    h = parse_header(chunk)
    if len(priv) != KEY_LEN:
        raise InvalidKey("private key must be 32 raw bytes")
    sk = X25519PrivateKey.from_private_bytes(bytes(priv))
    eph_pub = h["wrapped_key"][:KEY_LEN]
    try:
        shared = sk.exchange(X25519PublicKey.from_public_bytes(eph_pub))
    except ValueError as exc:
        raise AuthFailure("bad ephemeral key") from exc
    own_pub = _raw_public(sk.public_key())
    try:
        data_key = AESGCM(_kek(shared, eph_pub, own_pub)).decrypt(_WRAP_NONCE, h["wrapped_key"][KEY_LEN:], None)
        body = AESGCM(data_key).decrypt(h["nonce"], h["ciphertext"], h["header"])
    except InvalidTag as exc:
        raise AuthFailure("authentication failed") from exc
    if h["compressed"]:
        try:
            return zlib.decompress(body)
        except zlib.error as exc:
            raise DecompressFailure(str(exc)) from exc
    return body
