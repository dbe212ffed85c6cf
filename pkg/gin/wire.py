"""
Binary RPC frames and payload codecs.

Frame layout (all integers big-endian):

    4 bytes   length of everything that follows
    1 byte    kind (high bit set on responses)
    16 bytes  request id (echoed by the response)
    20 bytes  sender node id
    2 bytes   sender address length, then the UTF-8 address
    ...       payload

Response payloads start with a status byte: 0 = ok, 1 = error followed by a
UTF-8 message.
"""

import enum
import struct
import uuid
from typing import List, Optional, Sequence, Tuple

from pydantic import BaseModel

from gin.errors import FrameError, MalformedTuple
from gin.routing import ID_BYTES, Contact, id_from_bytes, id_to_bytes
from gin.store import Digest
from gin.tuples import Tuple7, TuplePattern, canonical_serialize, parse_tuple

RESPONSE_FLAG = 0x80
MAX_FRAME = 64 * 1024 * 1024
STATUS_OK = 0
STATUS_ERROR = 1


class RpcKind(enum.IntEnum):
    PING = 1
    STORE_TUPLE = 2
    FIND_NODE = 3
    MULTI_GET = 4
    SUBSCRIBE = 5
    UNSUBSCRIBE = 6
    NOTIFY = 7
    DIGEST = 8
    PULL_TUPLES = 9


class RpcMessage(BaseModel):
    kind: RpcKind
    request_id: uuid.UUID
    sender: Contact
    payload: bytes = b""
    is_response: bool = False

    def reply(self, me: Contact, payload: bytes) -> "RpcMessage":
        return RpcMessage(kind=self.kind, request_id=self.request_id, sender=me, payload=payload, is_response=True)


def encode_frame(message: RpcMessage) -> bytes:
    address = message.sender.address.encode("utf-8")
    kind = int(message.kind) | (RESPONSE_FLAG if message.is_response else 0)
    body = b"".join(
        [
            struct.pack(">B", kind),
            message.request_id.bytes,
            id_to_bytes(message.sender.node_id),
            struct.pack(">H", len(address)),
            address,
            message.payload,
        ]
    )
    return struct.pack(">I", len(body)) + body


def decode_frame(frame: bytes) -> RpcMessage:
    if len(frame) < 4:
        raise FrameError("frame shorter than its length prefix")
    (length,) = struct.unpack_from(">I", frame, 0)
    if length > MAX_FRAME:
        raise FrameError(f"frame too large: {length}")
    if len(frame) - 4 != length:
        raise FrameError(f"length prefix {length} does not match {len(frame) - 4} bytes")
    try:
        kind_byte = frame[4]
        request_id = uuid.UUID(bytes=bytes(frame[5:21]))
        node_id = id_from_bytes(frame[21 : 21 + ID_BYTES])
        offset = 21 + ID_BYTES
        (address_len,) = struct.unpack_from(">H", frame, offset)
        offset += 2
        address = bytes(frame[offset : offset + address_len]).decode("utf-8")
        offset += address_len
        kind = RpcKind(kind_byte & ~RESPONSE_FLAG)
    except (ValueError, IndexError, struct.error) as e:
        raise FrameError(f"bad frame header: {e}") from e
    return RpcMessage(
        kind=kind,
        request_id=request_id,
        sender=Contact(node_id=node_id, address=address),
        payload=bytes(frame[offset:]),
        is_response=bool(kind_byte & RESPONSE_FLAG),
    )


# --- payload pieces --------------------------------------------------------


def encode_pattern(p: TuplePattern) -> bytes:
    return struct.pack(">B", p.mask) + b"".join(value.bytes for _, value in p.fixed)


def decode_pattern(data: bytes, offset: int = 0) -> Tuple[TuplePattern, int]:
    try:
        mask = data[offset]
    except IndexError:
        raise FrameError("missing pattern mask") from None
    if mask > 0x0F:
        raise FrameError(f"bad pattern mask {mask:#x}")
    offset += 1
    values = []
    for i in range(4):
        if mask & (1 << i):
            chunk = bytes(data[offset : offset + 16])
            if len(chunk) != 16:
                raise FrameError("truncated pattern")
            values.append(uuid.UUID(bytes=chunk))
            offset += 16
    return TuplePattern.from_mask(mask, values), offset


def encode_tuples(tuples: Sequence[Tuple7]) -> bytes:
    return struct.pack(">I", len(tuples)) + b"".join(canonical_serialize(t, include_signature=True) for t in tuples)


def decode_tuples(data: bytes, offset: int = 0) -> Tuple[List[Tuple7], int]:
    try:
        (count,) = struct.unpack_from(">I", data, offset)
    except struct.error as e:
        raise FrameError(f"missing tuple count: {e}") from e
    offset += 4
    tuples = []
    for _ in range(count):
        try:
            t, offset = parse_tuple(data, offset)
        except MalformedTuple as e:
            raise FrameError(str(e)) from e
        tuples.append(t)
    return tuples, offset


def encode_ids(ids: Sequence[bytes]) -> bytes:
    return struct.pack(">I", len(ids)) + b"".join(ids)


def decode_ids(data: bytes, offset: int = 0) -> Tuple[List[bytes], int]:
    try:
        (count,) = struct.unpack_from(">I", data, offset)
    except struct.error as e:
        raise FrameError(f"missing id count: {e}") from e
    offset += 4
    end = offset + 32 * count
    if end > len(data):
        raise FrameError("truncated id list")
    return [bytes(data[i : i + 32]) for i in range(offset, end, 32)], end


def encode_digest(digest: Digest) -> bytes:
    return encode_ids(digest.ids)


def decode_digest(data: bytes, offset: int = 0) -> Tuple[Digest, int]:
    ids, offset = decode_ids(data, offset)
    return Digest(count=len(ids), ids=tuple(ids)), offset


def encode_key(key: int) -> bytes:
    return id_to_bytes(key)


def decode_key(data: bytes, offset: int = 0) -> Tuple[int, int]:
    chunk = bytes(data[offset : offset + ID_BYTES])
    if len(chunk) != ID_BYTES:
        raise FrameError("truncated key")
    return id_from_bytes(chunk), offset + ID_BYTES


def encode_contacts(contacts: Sequence[Contact]) -> bytes:
    parts = [struct.pack(">H", len(contacts))]
    for contact in contacts:
        address = contact.address.encode("utf-8")
        parts.append(id_to_bytes(contact.node_id) + struct.pack(">H", len(address)) + address)
    return b"".join(parts)


def decode_contacts(data: bytes, offset: int = 0) -> Tuple[List[Contact], int]:
    try:
        (count,) = struct.unpack_from(">H", data, offset)
        offset += 2
        contacts = []
        for _ in range(count):
            node_id = id_from_bytes(data[offset : offset + ID_BYTES])
            offset += ID_BYTES
            (length,) = struct.unpack_from(">H", data, offset)
            offset += 2
            address = bytes(data[offset : offset + length]).decode("utf-8")
            offset += length
            contacts.append(Contact(node_id=node_id, address=address))
        return contacts, offset
    except (struct.error, UnicodeDecodeError) as e:
        raise FrameError(f"bad contact list: {e}") from e


def encode_uuid(value: uuid.UUID) -> bytes:
    return value.bytes


def decode_uuid(data: bytes, offset: int = 0) -> Tuple[uuid.UUID, int]:
    chunk = bytes(data[offset : offset + 16])
    if len(chunk) != 16:
        raise FrameError("truncated uuid")
    return uuid.UUID(bytes=chunk), offset + 16


def ok(body: bytes = b"") -> bytes:
    return bytes([STATUS_OK]) + body


def error(message: str) -> bytes:
    return bytes([STATUS_ERROR]) + message.encode("utf-8")


def split_status(payload: bytes) -> Tuple[bool, bytes, Optional[str]]:
    """(ok, body, error message)"""
    if not payload:
        raise FrameError("empty response payload")
    if payload[0] == STATUS_OK:
        return True, payload[1:], None
    return False, b"", payload[1:].decode("utf-8", errors="replace")
