"""
Provenance: pluggable signature schemes, tuple signing and the key registry.

Two schemes ship with GIN:

- hmac-sha256: deterministic test scheme, the key pair is one shared secret
- ed25519: deterministic public-key scheme from the cryptography package

The key registry maps signer UUIDs to (scheme, public key). It is loaded from
a keys file and can be published into the graph itself as tuples.
"""

import enum
import hashlib
import hmac
import logging
import os
import uuid
from typing import Callable, Dict, Iterable, List, Optional, Protocol, Tuple

from cryptography.exceptions import InvalidSignature as CryptoInvalidSignature
from cryptography.hazmat.primitives import serialization
from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey, Ed25519PublicKey

from gin.errors import MissingSigner
from gin.tuples import Tuple7, TuplePattern, canonical_serialize

logger = logging.getLogger(__name__)


class SignatureScheme(Protocol):
    scheme_id: str

    def sign(self, key: bytes, data: bytes) -> bytes: ...

    def verify(self, public: bytes, data: bytes, signature: bytes) -> bool: ...


class HmacScheme:
    scheme_id = "hmac-sha256"

    def sign(self, key: bytes, data: bytes) -> bytes:
        return hmac.new(key, data, hashlib.sha256).digest()

    def verify(self, public: bytes, data: bytes, signature: bytes) -> bool:
        return hmac.compare_digest(self.sign(public, data), signature)

    def generate(self) -> Tuple[bytes, bytes]:
        secret = os.urandom(32)
        return secret, secret


class Ed25519Scheme:
    scheme_id = "ed25519"

    def sign(self, key: bytes, data: bytes) -> bytes:
        return Ed25519PrivateKey.from_private_bytes(key).sign(data)

    def verify(self, public: bytes, data: bytes, signature: bytes) -> bool:
        try:
            Ed25519PublicKey.from_public_bytes(public).verify(signature, data)
            return True
        except (CryptoInvalidSignature, ValueError):
            return False

    def generate(self) -> Tuple[bytes, bytes]:
        private = Ed25519PrivateKey.generate()
        private_bytes = private.private_bytes(
            serialization.Encoding.Raw, serialization.PrivateFormat.Raw, serialization.NoEncryption()
        )
        public_bytes = private.public_key().public_bytes(serialization.Encoding.Raw, serialization.PublicFormat.Raw)
        return private_bytes, public_bytes


SCHEMES: Dict[str, SignatureScheme] = {
    HmacScheme.scheme_id: HmacScheme(),
    Ed25519Scheme.scheme_id: Ed25519Scheme(),
}
DEFAULT_SCHEME = SCHEMES[HmacScheme.scheme_id]


def get_scheme(scheme_id: str) -> SignatureScheme:
    try:
        return SCHEMES[scheme_id]
    except KeyError:
        raise ValueError(f"unknown signature scheme {scheme_id!r}") from None


class VerifyStatus(str, enum.Enum):
    VALID = "Valid"
    UNSIGNED = "Unsigned"
    INVALID = "Invalid"
    UNKNOWN_SIGNER = "UnknownSigner"


def sign_tuple(unsigned: Tuple7, key: bytes, scheme: SignatureScheme = DEFAULT_SCHEME) -> Tuple7:
    if unsigned.signer is None:
        raise MissingSigner("tuple has no signer to sign for")
    signature = scheme.sign(key, canonical_serialize(unsigned, include_signature=False))
    return unsigned.model_copy(update={"signature": signature})


class KeyRegistry:
    """signer UUID -> (scheme, public key)"""

    def __init__(self):
        self._keys: Dict[uuid.UUID, Tuple[SignatureScheme, bytes]] = {}

    def register(self, signer: uuid.UUID, public: bytes, scheme: SignatureScheme = DEFAULT_SCHEME) -> None:
        self._keys[signer] = (scheme, public)

    def lookup(self, signer: uuid.UUID) -> Optional[Tuple[SignatureScheme, bytes]]:
        return self._keys.get(signer)

    def __contains__(self, signer: uuid.UUID) -> bool:
        return signer in self._keys

    def __len__(self) -> int:
        return len(self._keys)

    def signers(self) -> List[uuid.UUID]:
        return sorted(self._keys, key=str)

    @classmethod
    def load(cls, path: str) -> "KeyRegistry":
        """Keys file: `signer-uuid scheme_id public_hex` per line, # comments"""
        registry = cls()
        with open(path, encoding="utf-8") as f:
            for number, line in enumerate(f, 1):
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                fields = line.split()
                if len(fields) != 3:
                    raise ValueError(f"{path}:{number}: expected 3 fields")
                registry.register(uuid.UUID(fields[0]), bytes.fromhex(fields[2]), get_scheme(fields[1]))
        logger.info(f"🔑 [KEYS] Loaded {len(registry)} signer key(s) from {path}")
        return registry

    # --- in-graph representation -------------------------------------------

    def to_tuples(self, timestamp: int) -> List[Tuple7]:
        tuples = []
        for signer in self.signers():
            scheme, public = self._keys[signer]
            tuples.extend(key_tuples(signer, scheme.scheme_id, public, timestamp))
        return tuples

    @classmethod
    def from_graph(cls, signers: Iterable[uuid.UUID], fetch: Callable[[TuplePattern], Iterable[Tuple7]]) -> "KeyRegistry":
        registry = cls()
        for signer in signers:
            found = read_key_from_graph(signer, fetch)
            if found is not None:
                scheme_id, public = found
                registry.register(signer, public, get_scheme(scheme_id))
        return registry


# Fixed vocabulary for keys published as tuples
KEY_NAMESPACE = uuid.UUID("6b1d7f0e-3c2a-5e4b-9a8d-0f1e2d3c4b5a")
HAS_KEY = uuid.uuid5(KEY_NAMESPACE, "has-key")
KEY_BYTES = uuid.uuid5(KEY_NAMESPACE, "key-bytes")


def scheme_vertex(scheme_id: str) -> uuid.UUID:
    return uuid.uuid5(KEY_NAMESPACE, f"scheme:{scheme_id}")


def key_tuples(signer: uuid.UUID, scheme_id: str, public: bytes, timestamp: int) -> List[Tuple7]:
    """
    signer -has-key-> key vertex (context: scheme vertex), then one
    key vertex -key-bytes-> chunk tuple per 16-byte chunk with the chunk
    index as context.
    """
    key_vertex = uuid.uuid5(KEY_NAMESPACE, f"key:{public.hex()}")
    tuples = [
        Tuple7(source=signer, edge=HAS_KEY, target=key_vertex, context=scheme_vertex(scheme_id), timestamp=timestamp)
    ]
    padded = public + b"\x00" * (-len(public) % 16)
    for index in range(0, len(padded), 16):
        tuples.append(
            Tuple7(
                source=key_vertex,
                edge=KEY_BYTES,
                target=uuid.UUID(bytes=padded[index : index + 16]),
                context=uuid.UUID(int=(index // 16) << 16 | len(public)),
                timestamp=timestamp,
            )
        )
    return tuples


def read_key_from_graph(
    signer: uuid.UUID, fetch: Callable[[TuplePattern], Iterable[Tuple7]]
) -> Optional[Tuple[str, bytes]]:
    schemes = {scheme_vertex(scheme_id): scheme_id for scheme_id in SCHEMES}
    for link in fetch(TuplePattern.of(source=signer, edge=HAS_KEY)):
        scheme_id = schemes.get(link.context)
        if scheme_id is None:
            continue
        chunks = sorted(fetch(TuplePattern.of(source=link.target, edge=KEY_BYTES)), key=lambda t: t.context.int)
        if not chunks:
            continue
        length = chunks[0].context.int & 0xFFFF
        public = b"".join(t.target.bytes for t in chunks)[:length]
        return scheme_id, public
    return None


def verify_tuple(t: Tuple7, key_registry: KeyRegistry) -> VerifyStatus:
    if t.signer is None:
        return VerifyStatus.UNSIGNED
    entry = key_registry.lookup(t.signer)
    if entry is None:
        return VerifyStatus.UNKNOWN_SIGNER
    if t.signature is None:
        return VerifyStatus.INVALID
    scheme, public = entry
    if scheme.verify(public, canonical_serialize(t, include_signature=False), t.signature):
        return VerifyStatus.VALID
    return VerifyStatus.INVALID


def load_signing_key(path: str) -> Tuple[uuid.UUID, SignatureScheme, bytes]:
    """Private key file: one line `signer-uuid scheme_id private_hex`"""
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line and not line.startswith("#"):
                signer, scheme_id, private_hex = line.split()
                return uuid.UUID(signer), get_scheme(scheme_id), bytes.fromhex(private_hex)
    raise ValueError(f"{path}: no key line")
