"""Encrypted parameter transport pipeline.

A local model update travels as: canonical serialization -> zlib
compression -> AES-256-GCM under a fresh per-(sender, round) symmetric
key -> the symmetric key wrapped for the recipient with an X25519 +
HKDF + AES-GCM envelope. A SHA-256 digest of the plaintext
serialization is committed on-chain so the receiver can prove the
payload was not altered in flight.

All randomness is derived from an explicit seed, so sealing the same
update with the same seed is byte-for-byte reproducible.
"""

from __future__ import annotations

import hashlib
import struct
import zlib
from dataclasses import dataclass

import numpy as np
from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.asymmetric.x25519 import (
    X25519PrivateKey,
    X25519PublicKey,
)
from cryptography.hazmat.primitives.ciphers.aead import AESGCM
from cryptography.hazmat.primitives.hashes import SHA256
from cryptography.hazmat.primitives.kdf.hkdf import HKDF

from .rng import derive_bytes

MAGIC = b"FBC1"
HEADER = struct.Struct("<4sIQ")  # magic, layout_id, element count
DIGEST_SIZE = 32
KEY_SIZE = 32
NONCE_SIZE = 12
_WRAP_INFO = b"fedchain key wrap v1"
_WRAP_NONCE = bytes(NONCE_SIZE)  # wrap KEK is single-use, fixed nonce is safe
_AAD_PREFIX = b"fedchain update v1"
_ZLIB_LEVEL = 6


# ---------------------------------------------------------------------------
# Errors
# ---------------------------------------------------------------------------

class PipelineError(Exception):
    """Base error for the parameter transport pipeline."""


class SerializationError(PipelineError):
    """Parameters cannot be serialized (non-finite value, layout mismatch)."""


class MalformedInputError(PipelineError):
    """Serialized bytes are truncated, padded, or otherwise invalid."""


class UnknownLayoutError(MalformedInputError):
    """Serialized bytes reference a layout id that was never registered."""


class DecompressionError(PipelineError):
    """Compressed stream is corrupt."""


class KeyUnwrapError(PipelineError):
    """Wrapped symmetric key cannot be recovered with the given secret key."""


class AuthenticationError(PipelineError):
    """AEAD tag check failed: ciphertext, nonce, or metadata was modified."""


# ---------------------------------------------------------------------------
# Parameter layouts
# ---------------------------------------------------------------------------

_layouts: dict[int, int] = {}


def register_layout(layout_id: int, length: int) -> None:
    """Register a parameter layout (re-registering the same length is a no-op)."""
    if layout_id < 0 or layout_id > 0xFFFFFFFF:
        raise ValueError(f"layout_id must fit in 32 bits, got {layout_id}")
    if length < 0:
        raise ValueError("layout length must be non-negative")
    known = _layouts.get(layout_id)
    if known is not None and known != length:
        raise ValueError(
            f"layout {layout_id} already registered with length {known}, not {length}"
        )
    _layouts[layout_id] = length


def layout_length(layout_id: int) -> int:
    try:
        return _layouts[layout_id]
    except KeyError:
        raise UnknownLayoutError(f"layout {layout_id} is not registered") from None


def reset_layouts() -> None:
    """Forget all registered layouts (test isolation helper)."""
    _layouts.clear()


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ModelParams:
    """A flat vector of float64 model weights tagged with its layout."""

    values: np.ndarray
    layout_id: int

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.float64)
        if arr.ndim != 1:
            raise ValueError("model parameters must be a flat vector")
        if arr.size and not np.all(np.isfinite(arr)):
            raise ValueError("model parameters must be finite")
        arr = arr.copy()
        arr.flags.writeable = False
        object.__setattr__(self, "values", arr)

    def __len__(self) -> int:
        return int(self.values.size)

    def __eq__(self, other) -> bool:
        if not isinstance(other, ModelParams):
            return NotImplemented
        return self.layout_id == other.layout_id and np.array_equal(
            self.values, other.values
        )

    def __hash__(self):
        return hash((self.layout_id, self.values.tobytes()))


@dataclass(frozen=True)
class KeyPair:
    """X25519 key pair; both halves are raw 32-byte strings."""

    public_key: bytes
    secret_key: bytes


@dataclass(frozen=True)
class SealedUpdate:
    """Wire form of one local model update."""

    sender: int
    round: int
    wrapped_key: bytes
    nonce: bytes
    ciphertext: bytes
    declared_plain_digest: bytes

    def __post_init__(self):
        if self.round < 0:
            raise ValueError("round must be non-negative")
        if len(self.nonce) != NONCE_SIZE:
            raise ValueError(f"nonce must be {NONCE_SIZE} bytes")
        if len(self.declared_plain_digest) != DIGEST_SIZE:
            raise ValueError(f"digest must be {DIGEST_SIZE} bytes")

    @property
    def payload_bytes(self) -> int:
        """Transmitted size as seen by the network delay model."""
        return len(self.wrapped_key) + len(self.nonce) + len(self.ciphertext)

    def to_bytes(self) -> bytes:
        fields = [
            self.sender.to_bytes(8, "little"),
            self.round.to_bytes(8, "little"),
            self.wrapped_key,
            self.nonce,
            self.ciphertext,
            self.declared_plain_digest,
        ]
        return b"".join(len(f).to_bytes(4, "little") + f for f in fields)

    @classmethod
    def from_bytes(cls, data: bytes) -> "SealedUpdate":
        fields = []
        pos = 0
        for _ in range(6):
            if pos + 4 > len(data):
                raise MalformedInputError("truncated sealed update")
            n = int.from_bytes(data[pos : pos + 4], "little")
            pos += 4
            if pos + n > len(data):
                raise MalformedInputError("truncated sealed update field")
            fields.append(data[pos : pos + n])
            pos += n
        if pos != len(data):
            raise MalformedInputError("trailing bytes after sealed update")
        if len(fields[0]) != 8 or len(fields[1]) != 8:
            raise MalformedInputError("bad sender/round field width")
        try:
            return cls(
                sender=int.from_bytes(fields[0], "little"),
                round=int.from_bytes(fields[1], "little"),
                wrapped_key=fields[2],
                nonce=fields[3],
                ciphertext=fields[4],
                declared_plain_digest=fields[5],
            )
        except ValueError as exc:
            raise MalformedInputError(str(exc)) from exc


# ---------------------------------------------------------------------------
# Serialization and hashing
# ---------------------------------------------------------------------------

def canonical_serialize(p: ModelParams) -> bytes:
    """Platform-independent byte encoding: header then little-endian float64s."""
    expected = layout_length(p.layout_id)
    if len(p) != expected:
        raise SerializationError(
            f"layout {p.layout_id} expects {expected} weights, got {len(p)}"
        )
    if len(p) and not np.all(np.isfinite(p.values)):
        raise SerializationError("refusing to serialize non-finite weights")
    header = HEADER.pack(MAGIC, p.layout_id, len(p))
    return header + p.values.astype("<f8", copy=False).tobytes()


def canonical_deserialize(data: bytes) -> ModelParams:
    """Inverse of canonical_serialize; rejects anything not byte-exact."""
    if len(data) < HEADER.size:
        raise MalformedInputError("input shorter than header")
    magic, layout_id, count = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise MalformedInputError(f"bad magic {magic!r}")
    expected = layout_length(layout_id)
    if count != expected:
        raise MalformedInputError(
            f"layout {layout_id} expects {expected} weights, header says {count}"
        )
    body = data[HEADER.size :]
    if len(body) < 8 * count:
        raise MalformedInputError("truncated weight payload")
    if len(body) > 8 * count:
        raise MalformedInputError("trailing bytes after weight payload")
    values = np.frombuffer(body, dtype="<f8")
    if count and not np.all(np.isfinite(values)):
        raise MalformedInputError("non-finite weight in payload")
    return ModelParams(values=values, layout_id=layout_id)


def compress(data: bytes) -> bytes:
    return zlib.compress(data, _ZLIB_LEVEL)


def decompress(data: bytes) -> bytes:
    try:
        return zlib.decompress(data)
    except zlib.error as exc:
        raise DecompressionError(f"corrupt compressed stream: {exc}") from exc


def hash_digest(data: bytes) -> bytes:
    """32-byte SHA-256 digest."""
    return hashlib.sha256(data).digest()


# ---------------------------------------------------------------------------
# Keys and envelope encryption
# ---------------------------------------------------------------------------

def generate_keypair(seed: int, owner: int = 0) -> KeyPair:
    """Deterministically generate an X25519 key pair for a node."""
    secret = derive_bytes(seed, f"keypair/{owner}", KEY_SIZE)
    private = X25519PrivateKey.from_private_bytes(secret)
    public = private.public_key().public_bytes_raw()
    return KeyPair(public_key=public, secret_key=secret)


def _kek(shared: bytes, ephemeral_public: bytes, recipient_public: bytes) -> bytes:
    return HKDF(
        algorithm=SHA256(),
        length=KEY_SIZE,
        salt=ephemeral_public + recipient_public,
        info=_WRAP_INFO,
    ).derive(shared)


def wrap_key(key: bytes, recipient_public_key: bytes, seed: int, label: str = "") -> bytes:
    """Wrap a 32-byte key for the recipient: ephemeral X25519 + HKDF + AES-GCM."""
    if len(key) != KEY_SIZE:
        raise ValueError(f"can only wrap {KEY_SIZE}-byte keys")
    eph_secret = derive_bytes(seed, f"wrap-ephemeral/{label}", KEY_SIZE)
    eph_private = X25519PrivateKey.from_private_bytes(eph_secret)
    eph_public = eph_private.public_key().public_bytes_raw()
    try:
        recipient = X25519PublicKey.from_public_bytes(recipient_public_key)
    except ValueError as exc:
        raise ValueError(f"bad recipient public key: {exc}") from exc
    shared = eph_private.exchange(recipient)
    kek = _kek(shared, eph_public, recipient_public_key)
    return eph_public + AESGCM(kek).encrypt(_WRAP_NONCE, key, None)


def unwrap_key(wrapped: bytes, secret_key: bytes) -> bytes:
    """Recover a key wrapped with wrap_key; raises KeyUnwrapError on any failure."""
    if len(wrapped) < KEY_SIZE + 1:
        raise KeyUnwrapError("wrapped key too short")
    eph_public = wrapped[:KEY_SIZE]
    try:
        private = X25519PrivateKey.from_private_bytes(secret_key)
        shared = private.exchange(X25519PublicKey.from_public_bytes(eph_public))
        kek = _kek(shared, eph_public, private.public_key().public_bytes_raw())
        return AESGCM(kek).decrypt(_WRAP_NONCE, wrapped[KEY_SIZE:], None)
    except (ValueError, InvalidTag) as exc:
        raise KeyUnwrapError(f"cannot unwrap symmetric key: {exc}") from exc


def _update_aad(sender: int, round: int) -> bytes:
    return _AAD_PREFIX + sender.to_bytes(8, "little") + round.to_bytes(8, "little")


def seal_update(
    p: ModelParams,
    sender: int,
    round: int,
    recipient_public_key: bytes,
    rng_seed: int,
) -> SealedUpdate:
    """Serialize, compress, encrypt, and key-wrap one local update."""
    plain = canonical_serialize(p)
    digest = hash_digest(plain)
    compressed = compress(plain)
    scope = f"{sender}/{round}"
    sym_key = derive_bytes(rng_seed, f"update-key/{scope}", KEY_SIZE)
    nonce = derive_bytes(rng_seed, f"update-nonce/{scope}", NONCE_SIZE)
    ciphertext = AESGCM(sym_key).encrypt(nonce, compressed, _update_aad(sender, round))
    wrapped = wrap_key(sym_key, recipient_public_key, rng_seed, label=scope)
    return SealedUpdate(
        sender=sender,
        round=round,
        wrapped_key=wrapped,
        nonce=nonce,
        ciphertext=ciphertext,
        declared_plain_digest=digest,
    )


def open_update(s: SealedUpdate, recipient_secret_key: bytes) -> tuple[ModelParams, bytes]:
    """Reverse seal_update.

    Returns the recovered parameters together with the digest recomputed
    over the recovered plaintext serialization; callers must compare that
    digest against the on-chain commitment before trusting the update.
    """
    sym_key = unwrap_key(s.wrapped_key, recipient_secret_key)
    try:
        compressed = AESGCM(sym_key).decrypt(
            s.nonce, s.ciphertext, _update_aad(s.sender, s.round)
        )
    except InvalidTag as exc:
        raise AuthenticationError("update failed AEAD authentication") from exc
    plain = decompress(compressed)
    params = canonical_deserialize(plain)
    return params, hash_digest(plain)
