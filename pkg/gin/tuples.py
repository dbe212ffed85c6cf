"""
Core data model: 7-tuples, tuple ids, patterns and the tuple text format.

A tuple is (source, edge, target, context, timestamp, signer, signature).
All four addressing slots are UUIDs; the edge is itself a UUID naming a
relationship. Labels, if any, are published as further tuples.
"""

import hashlib
import struct
import time
import uuid
from typing import Iterable, Iterator, List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, model_validator

from gin.errors import MalformedTuple

SLOT_NAMES = ("source", "edge", "target", "context")
UUID_LEN = 16
UNSIGNED_LEN = UUID_LEN * 4 + 8 + 1
INT64_MIN = -(2**63)
INT64_MAX = 2**63 - 1

# slot positions
SOURCE, EDGE, TARGET, CONTEXT = range(4)


class Tuple7(BaseModel):
    """One immutable hypergraph statement"""

    model_config = ConfigDict(frozen=True)

    source: uuid.UUID
    edge: uuid.UUID
    target: uuid.UUID
    context: uuid.UUID
    timestamp: int = Field(ge=INT64_MIN, le=INT64_MAX)
    signer: Optional[uuid.UUID] = None
    signature: Optional[bytes] = None

    @model_validator(mode="after")
    def _signature_needs_signer(self) -> "Tuple7":
        # signer without signature is allowed as a signing draft only
        if self.signature is not None and self.signer is None:
            raise ValueError("signature present without signer")
        if self.signature is not None and not 0 < len(self.signature) <= 0xFFFF:
            raise ValueError("signature must be 1..65535 bytes")
        return self

    @property
    def slots(self) -> Tuple[uuid.UUID, uuid.UUID, uuid.UUID, uuid.UUID]:
        return (self.source, self.edge, self.target, self.context)

    def is_publishable(self) -> bool:
        return (self.signer is None) == (self.signature is None)


def make_tuple(
    source: uuid.UUID,
    edge: uuid.UUID,
    target: uuid.UUID,
    context: uuid.UUID,
    timestamp: Optional[int] = None,
    signer: Optional[uuid.UUID] = None,
) -> Tuple7:
    if timestamp is None:
        timestamp = now_micros()
    return Tuple7(source=source, edge=edge, target=target, context=context, timestamp=timestamp, signer=signer)


def now_micros() -> int:
    return time.time_ns() // 1000


def canonical_serialize(t: Tuple7, include_signature: bool = False) -> bytes:
    parts = [t.source.bytes, t.edge.bytes, t.target.bytes, t.context.bytes, struct.pack(">q", t.timestamp)]
    if t.signer is None:
        parts.append(b"\x00")
    else:
        parts.append(b"\x01")
        parts.append(t.signer.bytes)
    if include_signature:
        signature = t.signature or b""
        parts.append(struct.pack(">H", len(signature)))
        parts.append(signature)
    return b"".join(parts)


def parse_tuple(data: bytes, offset: int = 0, include_signature: bool = True) -> Tuple[Tuple7, int]:
    """Decode one canonical serialization; returns (tuple, next offset)"""
    try:
        fields = []
        for _ in range(4):
            fields.append(uuid.UUID(bytes=bytes(data[offset : offset + UUID_LEN])))
            offset += UUID_LEN
        (timestamp,) = struct.unpack_from(">q", data, offset)
        offset += 8
        flag = data[offset]
        offset += 1
        signer = None
        if flag == 1:
            signer = uuid.UUID(bytes=bytes(data[offset : offset + UUID_LEN]))
            offset += UUID_LEN
        elif flag != 0:
            raise MalformedTuple(f"bad signer flag {flag}")
        signature = None
        if include_signature:
            (length,) = struct.unpack_from(">H", data, offset)
            offset += 2
            if length:
                if offset + length > len(data):
                    raise MalformedTuple("truncated signature")
                signature = bytes(data[offset : offset + length])
                offset += length
        t = Tuple7(
            source=fields[0],
            edge=fields[1],
            target=fields[2],
            context=fields[3],
            timestamp=timestamp,
            signer=signer,
            signature=signature,
        )
        return t, offset
    except (ValueError, IndexError, struct.error) as e:
        raise MalformedTuple(f"cannot parse tuple at offset {offset}: {e}") from e


def iter_tuples(data: bytes) -> Iterator[Tuple7]:
    """Decode a concatenation of canonical serializations (with signatures)"""
    offset = 0
    while offset < len(data):
        t, offset = parse_tuple(data, offset)
        yield t


def tuple_id(t: Tuple7) -> bytes:
    """256-bit content hash; the signature never takes part"""
    return hashlib.sha256(canonical_serialize(t, include_signature=False)).digest()


class TuplePattern(BaseModel):
    """Four slots, each a fixed UUID or None for a wildcard"""

    model_config = ConfigDict(frozen=True)

    slots: Tuple[Optional[uuid.UUID], Optional[uuid.UUID], Optional[uuid.UUID], Optional[uuid.UUID]]

    @classmethod
    def of(
        cls,
        source: Optional[uuid.UUID] = None,
        edge: Optional[uuid.UUID] = None,
        target: Optional[uuid.UUID] = None,
        context: Optional[uuid.UUID] = None,
    ) -> "TuplePattern":
        return cls(slots=(source, edge, target, context))

    @classmethod
    def from_mask(cls, mask: int, values: Iterable[uuid.UUID]) -> "TuplePattern":
        it = iter(values)
        return cls(slots=tuple(next(it) if mask & (1 << i) else None for i in range(4)))

    @property
    def mask(self) -> int:
        """Bit i set iff slot i is fixed; always derived from the slots"""
        return sum(1 << i for i, value in enumerate(self.slots) if value is not None)

    @property
    def fixed(self) -> List[Tuple[int, uuid.UUID]]:
        return [(i, value) for i, value in enumerate(self.slots) if value is not None]

    def __str__(self) -> str:
        return " ".join(str(v) if v is not None else "*" for v in self.slots)


def pattern_matches(p: TuplePattern, t: Tuple7) -> bool:
    values = t.slots
    for i, fixed in enumerate(p.slots):
        if fixed is not None and fixed != values[i]:
            return False
    return True


def parse_pattern(text: str) -> TuplePattern:
    terms = text.split()
    if len(terms) != 4:
        raise ValueError(f"pattern needs 4 terms, got {len(terms)}")
    return TuplePattern(slots=tuple(None if term == "*" else uuid.UUID(term) for term in terms))


# ---------------------------------------------------------------------------
# Tuple text format: source edge target context timestamp [signer signature_hex]
# ---------------------------------------------------------------------------


def format_tuple_line(t: Tuple7) -> str:
    fields = [str(t.source), str(t.edge), str(t.target), str(t.context), str(t.timestamp)]
    if t.signer is not None:
        fields.append(str(t.signer))
        fields.append(t.signature.hex() if t.signature else "-")
    return " ".join(fields)


def parse_tuple_line(line: str) -> Optional[Tuple7]:
    """Returns None for blank and comment lines"""
    line = line.strip()
    if not line or line.startswith("#"):
        return None
    fields = line.split()
    if len(fields) not in (5, 7):
        raise MalformedTuple(f"expected 5 or 7 fields, got {len(fields)}")
    try:
        signer = uuid.UUID(fields[5]) if len(fields) == 7 else None
        signature = None
        if len(fields) == 7 and fields[6] != "-":
            signature = bytes.fromhex(fields[6])
        return Tuple7(
            source=uuid.UUID(fields[0]),
            edge=uuid.UUID(fields[1]),
            target=uuid.UUID(fields[2]),
            context=uuid.UUID(fields[3]),
            timestamp=int(fields[4]),
            signer=signer,
            signature=signature,
        )
    except ValueError as e:
        raise MalformedTuple(str(e)) from e


def read_tuple_lines(lines: Iterable[str]) -> List[Tuple7]:
    tuples = []
    for number, line in enumerate(lines, 1):
        try:
            t = parse_tuple_line(line)
        except MalformedTuple as e:
            raise MalformedTuple(f"line {number}: {e}") from e
        if t is not None:
            tuples.append(t)
    return tuples


def read_tuple_file(path: str) -> List[Tuple7]:
    with open(path, encoding="utf-8") as f:
        return read_tuple_lines(f)
