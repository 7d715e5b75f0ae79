"""Sender-authenticated, recipient-confidential envelopes.

Sign-then-encrypt: the sender signs the plaintext with Ed25519, and the
signature plus plaintext are encrypted to the recipient with an X25519
key agreement feeding ChaCha20-Poly1305. An outer Ed25519 signature over
the ciphertext (``auth_tag``) lets anyone holding the sender's public key
check origin without decrypting.

Sealing is deterministic: the ephemeral key is derived from the sender's
secret, the recipient key and the plaintext, so equal inputs give equal
envelopes and therefore equal digests across runs.
"""
from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass

from cryptography.exceptions import InvalidSignature, InvalidTag
from cryptography.hazmat.primitives import hashes
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)
from cryptography.hazmat.primitives.asymmetric.x25519 import (
    X25519PrivateKey,
    X25519PublicKey,
)
from cryptography.hazmat.primitives.ciphers.aead import ChaCha20Poly1305
from cryptography.hazmat.primitives.kdf.hkdf import HKDF
from cryptography.hazmat.primitives.serialization import Encoding, PublicFormat

from .cas import Cid

SIG_LEN = 64
KEY_LEN = 32
_NONCE = bytes(12)  # every message gets a fresh derived key
_ENVELOPE_MAGIC = b"SEL1"


class SealError(Exception):
    """Base for envelope failures; the protocol treats any of them as 'exclude'."""


class AuthenticityError(SealError):
    pass


class DecryptionError(SealError):
    pass


class MalformedPayloadError(SealError):
    pass


@dataclass(frozen=True)
class PublicKey:
    owner: str
    verify: bytes  # Ed25519
    encrypt: bytes  # X25519

    def __repr__(self):
        return f"PublicKey({self.owner!r}, {self.verify.hex()[:8]}…)"


@dataclass(frozen=True)
class SecretKey:
    owner: str
    sign: bytes
    decrypt: bytes

    def __repr__(self):
        return f"SecretKey({self.owner!r})"


@dataclass(frozen=True)
class KeyPair:
    public: PublicKey
    secret: SecretKey
    owner: str


@dataclass(frozen=True)
class SealedPayload:
    ciphertext: bytes
    sender: str
    auth_tag: bytes

    def to_bytes(self) -> bytes:
        sender = self.sender.encode()
        return b"".join([
            _ENVELOPE_MAGIC,
            struct.pack("<HII", len(sender), len(self.auth_tag), len(self.ciphertext)),
            sender,
            self.auth_tag,
            self.ciphertext,
        ])

    @classmethod
    def from_bytes(cls, blob: bytes) -> "SealedPayload":
        head = len(_ENVELOPE_MAGIC) + struct.calcsize("<HII")
        if len(blob) < head or blob[:4] != _ENVELOPE_MAGIC:
            raise MalformedPayloadError("bad envelope header")
        n_sender, n_tag, n_ct = struct.unpack_from("<HII", blob, 4)
        if len(blob) != head + n_sender + n_tag + n_ct:
            raise MalformedPayloadError("envelope length mismatch")
        pos = head
        try:
            sender = blob[pos:pos + n_sender].decode()
        except UnicodeDecodeError:
            raise MalformedPayloadError("sender is not utf-8") from None
        pos += n_sender
        tag = blob[pos:pos + n_tag]
        pos += n_tag
        return cls(ciphertext=blob[pos:], sender=sender, auth_tag=tag)


def _raw_public(key) -> bytes:
    return key.public_bytes(Encoding.Raw, PublicFormat.Raw)


def keygen(seed, owner: str) -> KeyPair:
    """Deterministic key pair for ``owner`` from an integer or bytes seed."""
    seed_bytes = seed if isinstance(seed, bytes) else str(seed).encode()
    material = hashlib.sha512(b"fedchain-keygen\0" + seed_bytes + b"\0" + owner.encode()).digest()
    sign_sk = Ed25519PrivateKey.from_private_bytes(material[:32])
    dec_sk = X25519PrivateKey.from_private_bytes(material[32:])
    public = PublicKey(owner, _raw_public(sign_sk.public_key()), _raw_public(dec_sk.public_key()))
    secret = SecretKey(owner, material[:32], material[32:])
    return KeyPair(public=public, secret=secret, owner=owner)


def _derive_key(shared: bytes, eph_pub: bytes, recipient_pub: bytes) -> bytes:
    return HKDF(
        algorithm=hashes.SHA256(), length=32, salt=None,
        info=b"fedchain-seal\0" + eph_pub + recipient_pub,
    ).derive(shared)


def _outer_message(sender: str, ciphertext: bytes) -> bytes:
    return b"fedchain-outer\0" + sender.encode() + b"\0" + ciphertext


def _inner_message(sender: str, plaintext: bytes) -> bytes:
    return b"fedchain-inner\0" + sender.encode() + b"\0" + plaintext


def seal(plaintext: bytes, sender_sk: SecretKey, recipient_pk: PublicKey) -> SealedPayload:
    if not plaintext:
        raise ValueError("plaintext must be non-empty")
    signer = Ed25519PrivateKey.from_private_bytes(sender_sk.sign)
    inner_sig = signer.sign(_inner_message(sender_sk.owner, plaintext))

    eph_seed = hashlib.sha256(
        b"fedchain-eph\0" + sender_sk.decrypt + recipient_pk.encrypt
        + hashlib.sha256(plaintext).digest()
    ).digest()
    eph = X25519PrivateKey.from_private_bytes(eph_seed)
    eph_pub = _raw_public(eph.public_key())
    shared = eph.exchange(X25519PublicKey.from_public_bytes(recipient_pk.encrypt))
    key = _derive_key(shared, eph_pub, recipient_pk.encrypt)
    body = ChaCha20Poly1305(key).encrypt(_NONCE, inner_sig + plaintext, eph_pub)

    ciphertext = eph_pub + body
    auth_tag = signer.sign(_outer_message(sender_sk.owner, ciphertext))
    return SealedPayload(ciphertext=ciphertext, sender=sender_sk.owner, auth_tag=auth_tag)


def open_sealed(payload: SealedPayload, recipient_sk: SecretKey, sender_pk: PublicKey) -> bytes:
    """Verify and decrypt ``payload``.

    Raises :class:`AuthenticityError` when the envelope was not produced by
    ``sender_pk`` and :class:`DecryptionError` when it was not sealed for
    ``recipient_sk``.
    """
    if payload.sender != sender_pk.owner:
        raise AuthenticityError(
            f"payload claims sender {payload.sender!r}, expected {sender_pk.owner!r}")
    verifier = Ed25519PublicKey.from_public_bytes(sender_pk.verify)
    if len(payload.auth_tag) != SIG_LEN:
        raise AuthenticityError("auth tag has wrong length")
    try:
        verifier.verify(payload.auth_tag, _outer_message(payload.sender, payload.ciphertext))
    except InvalidSignature:
        raise AuthenticityError("auth tag does not verify") from None

    if len(payload.ciphertext) < KEY_LEN + SIG_LEN + 16:
        raise MalformedPayloadError("ciphertext too short")
    eph_pub, body = payload.ciphertext[:KEY_LEN], payload.ciphertext[KEY_LEN:]
    dec_sk = X25519PrivateKey.from_private_bytes(recipient_sk.decrypt)
    recipient_pub = _raw_public(dec_sk.public_key())
    try:
        shared = dec_sk.exchange(X25519PublicKey.from_public_bytes(eph_pub))
        key = _derive_key(shared, eph_pub, recipient_pub)
        inner = ChaCha20Poly1305(key).decrypt(_NONCE, body, eph_pub)
    except (InvalidTag, ValueError):
        raise DecryptionError("cannot decrypt with this recipient key") from None

    inner_sig, plaintext = inner[:SIG_LEN], inner[SIG_LEN:]
    try:
        verifier.verify(inner_sig, _inner_message(payload.sender, plaintext))
    except InvalidSignature:
        raise AuthenticityError("inner signature does not verify") from None
    return plaintext


def digest(content: bytes) -> Cid:
    """On-ledger commitment for ``content``; identical to the store's Cid."""
    return Cid.of(content)
