"""
Minimal canonical DER encoder/decoder.

Only the subset needed by CMS and X.509 is supported: low tag numbers
(< 31), definite minimal lengths, and a handful of universal primitive
types whose content is checked for canonical form on both encode and
decode.  Everything else is carried as opaque bytes.
"""

from __future__ import annotations

import datetime as _dt
import enum
import re
from dataclasses import dataclass
from typing import Iterable, Sequence, Union

from .errors import (
    DerError,
    DerLimitExceeded,
    MalformedOid,
    NonCanonical,
    TagTooLarge,
    TrailingGarbage,
    Truncated,
)

MAX_DEPTH = 32
MAX_SIZE = 64 * 1024 * 1024


class TagClass(enum.IntEnum):
    UNIVERSAL = 0
    APPLICATION = 1
    CONTEXT = 2
    PRIVATE = 3


# universal tag numbers
BOOLEAN = 1
INTEGER = 2
BIT_STRING = 3
OCTET_STRING = 4
NULL = 5
OBJECT_IDENTIFIER = 6
ENUMERATED = 10
UTF8_STRING = 12
SEQUENCE = 16
SET = 17
PRINTABLE_STRING = 19
IA5_STRING = 22
UTC_TIME = 23
GENERALIZED_TIME = 24

_CONSTRUCTED_UNIVERSAL = frozenset((SEQUENCE, SET))

Payload = Union[bytes, "tuple[DerNode, ...]"]


@dataclass(frozen=True)
class DerNode:
    tag_class: TagClass
    constructed: bool
    tag_number: int
    payload: Payload

    def __post_init__(self):
        object.__setattr__(self, "tag_class", TagClass(self.tag_class))
        if self.tag_number < 0:
            raise ValueError("negative tag number")
        if self.constructed:
            children = tuple(self.payload)
            if not all(isinstance(c, DerNode) for c in children):
                raise TypeError("constructed node payload must be DerNode children")
            object.__setattr__(self, "payload", children)
        else:
            if not isinstance(self.payload, (bytes, bytearray, memoryview)):
                raise TypeError("primitive node payload must be bytes")
            object.__setattr__(self, "payload", bytes(self.payload))

    @property
    def children(self) -> "tuple[DerNode, ...]":
        if not self.constructed:
            raise TypeError("primitive node has no children")
        return self.payload

    def is_universal(self, number: int) -> bool:
        return self.tag_class == TagClass.UNIVERSAL and self.tag_number == number

    def is_context(self, number: int) -> bool:
        return self.tag_class == TagClass.CONTEXT and self.tag_number == number

    def __repr__(self):
        if self.tag_class == TagClass.UNIVERSAL:
            tag = "U%d" % self.tag_number
        else:
            tag = "%s%d" % (self.tag_class.name[0], self.tag_number)
        if self.constructed:
            return "DerNode(%s, %r)" % (tag, list(self.payload))
        return "DerNode(%s, %s)" % (tag, self.payload.hex())


# -- object identifiers ------------------------------------------------------

@dataclass(frozen=True, order=True)
class ObjectIdentifier:
    arcs: "tuple[int, ...]"

    def __post_init__(self):
        arcs = tuple(int(a) for a in self.arcs)
        object.__setattr__(self, "arcs", arcs)
        if len(arcs) < 2:
            raise MalformedOid("an OID needs at least two arcs")
        if any(a < 0 for a in arcs):
            raise MalformedOid("negative arc")
        if arcs[0] > 2:
            raise MalformedOid("first arc must be 0, 1 or 2")
        if arcs[0] < 2 and arcs[1] >= 40:
            raise MalformedOid("second arc must be < 40 under arcs 0 and 1")

    @classmethod
    def from_dotted(cls, text: str) -> "ObjectIdentifier":
        if not re.fullmatch(r"\d+(\.\d+)+", text):
            raise MalformedOid("not a dotted OID: %r" % text)
        return cls(tuple(int(p) for p in text.split(".")))

    def __str__(self):
        return ".".join(str(a) for a in self.arcs)


def oid(text: str) -> ObjectIdentifier:
    return ObjectIdentifier.from_dotted(text)


def _base128(value: int) -> bytes:
    out = [value & 0x7F]
    value >>= 7
    while value:
        out.append(0x80 | (value & 0x7F))
        value >>= 7
    return bytes(reversed(out))


def encode_oid(value: ObjectIdentifier) -> bytes:
    """Pack OID arcs into the body of an OBJECT IDENTIFIER (no tag/length)."""
    arcs = value.arcs
    body = bytearray(_base128(40 * arcs[0] + arcs[1]))
    for arc in arcs[2:]:
        body += _base128(arc)
    return bytes(body)


def decode_oid(body: bytes) -> ObjectIdentifier:
    if not body:
        raise MalformedOid("empty OID body")
    if body[-1] & 0x80:
        raise MalformedOid("OID ends inside a subidentifier")
    subids = []
    current = 0
    fresh = True
    for b in body:
        if fresh and b == 0x80:
            raise MalformedOid("non-minimal subidentifier")
        current = (current << 7) | (b & 0x7F)
        fresh = not (b & 0x80)
        if fresh:
            subids.append(current)
            current = 0
    first = subids[0]
    if first < 40:
        arcs = [0, first]
    elif first < 80:
        arcs = [1, first - 40]
    else:
        arcs = [2, first - 80]
    return ObjectIdentifier(tuple(arcs + subids[1:]))


# -- content checks for universal primitives --------------------------------

_UTC_RE = re.compile(rb"\d{12}Z")
_GEN_RE = re.compile(rb"\d{14}Z")
_PRINTABLE_RE = re.compile(rb"[A-Za-z0-9 '()+,\-./:=?]*")


def _check_universal(node: DerNode) -> None:
    number = node.tag_number
    if number == 0:
        raise NonCanonical("universal tag 0 (end-of-contents) is not DER")
    if number in _CONSTRUCTED_UNIVERSAL:
        if not node.constructed:
            raise NonCanonical("SEQUENCE/SET must be constructed")
        return
    if node.constructed:
        raise NonCanonical("universal tag %d must be primitive in DER" % number)
    body = node.payload
    if number == BOOLEAN:
        if body not in (b"\x00", b"\xff"):
            raise NonCanonical("BOOLEAN must be 00 or FF")
    elif number in (INTEGER, ENUMERATED):
        if not body:
            raise NonCanonical("empty INTEGER")
        if len(body) > 1 and (
            (body[0] == 0x00 and not body[1] & 0x80)
            or (body[0] == 0xFF and body[1] & 0x80)
        ):
            raise NonCanonical("INTEGER has redundant leading octet")
    elif number == NULL:
        if body:
            raise NonCanonical("NULL must be empty")
    elif number == OBJECT_IDENTIFIER:
        decode_oid(body)
    elif number == BIT_STRING:
        if not body or body[0] > 7 or (len(body) == 1 and body[0] != 0):
            raise NonCanonical("bad BIT STRING unused-bits octet")
        if body[0] and body[-1] & ((1 << body[0]) - 1):
            raise NonCanonical("BIT STRING padding bits must be zero")
    elif number == UTC_TIME:
        if not _UTC_RE.fullmatch(body):
            raise NonCanonical("UTCTime must be YYMMDDHHMMSSZ")
    elif number == GENERALIZED_TIME:
        if not _GEN_RE.fullmatch(body):
            raise NonCanonical("GeneralizedTime must be YYYYMMDDHHMMSSZ")
    elif number == PRINTABLE_STRING:
        if not _PRINTABLE_RE.fullmatch(body):
            raise NonCanonical("character outside PrintableString set")
    elif number == UTF8_STRING:
        try:
            body.decode("utf-8")
        except UnicodeDecodeError:
            raise NonCanonical("invalid UTF-8 in UTF8String") from None
    elif number == IA5_STRING:
        if any(b > 0x7F for b in body):
            raise NonCanonical("non-ASCII octet in IA5String")


# -- encoding ----------------------------------------------------------------

def _encode_length(n: int) -> bytes:
    if n < 0x80:
        return bytes((n,))
    raw = n.to_bytes((n.bit_length() + 7) // 8, "big")
    return bytes((0x80 | len(raw),)) + raw


def _encode(node: DerNode, depth: int, out: bytearray) -> None:
    if depth > MAX_DEPTH:
        raise DerLimitExceeded("nesting deeper than %d" % MAX_DEPTH)
    if node.tag_number >= 31:
        raise TagTooLarge("tag number %d not supported" % node.tag_number)
    if node.tag_class == TagClass.UNIVERSAL:
        _check_universal(node)
    ident = (node.tag_class << 6) | (0x20 if node.constructed else 0) | node.tag_number
    if node.constructed:
        body = bytearray()
        for child in node.payload:
            _encode(child, depth + 1, body)
    else:
        body = node.payload
    out.append(ident)
    out += _encode_length(len(body))
    out += body


def der_encode(node: DerNode) -> bytes:
    out = bytearray()
    _encode(node, 1, out)
    return bytes(out)


# -- decoding ----------------------------------------------------------------

def _read_header(raw, pos: int, end: int):
    if pos >= end:
        raise Truncated("missing identifier octet")
    ident = raw[pos]
    pos += 1
    number = ident & 0x1F
    if number == 0x1F:
        raise TagTooLarge("high tag numbers are not supported")
    if pos >= end:
        raise Truncated("missing length octet")
    first = raw[pos]
    pos += 1
    if first < 0x80:
        length = first
    elif first == 0x80:
        raise NonCanonical("indefinite length")
    elif first == 0xFF:
        raise NonCanonical("reserved length octet")
    else:
        count = first & 0x7F
        if pos + count > end:
            raise Truncated("length octets run past end of input")
        if raw[pos] == 0:
            raise NonCanonical("length has leading zero octet")
        if count > 4:
            raise DerLimitExceeded("length field too large")
        length = int.from_bytes(raw[pos:pos + count], "big")
        pos += count
        if length < 0x80:
            raise NonCanonical("long-form length used for short value")
    if length > end - pos:
        raise Truncated("content runs past end of input")
    return TagClass(ident >> 6), bool(ident & 0x20), number, length, pos


def _decode(raw, pos: int, end: int, depth: int):
    if depth > MAX_DEPTH:
        raise DerLimitExceeded("nesting deeper than %d" % MAX_DEPTH)
    tag_class, constructed, number, length, pos = _read_header(raw, pos, end)
    stop = pos + length
    if constructed:
        children = []
        while pos < stop:
            child, pos = _decode(raw, pos, stop, depth + 1)
            children.append(child)
        node = DerNode(tag_class, True, number, tuple(children))
    else:
        node = DerNode(tag_class, False, number, bytes(raw[pos:stop]))
    if tag_class == TagClass.UNIVERSAL:
        _check_universal(node)
    return node, stop


def der_decode(raw: bytes) -> DerNode:
    """Decode exactly one DER value occupying all of ``raw``."""
    if len(raw) > MAX_SIZE:
        raise DerLimitExceeded("input larger than %d bytes" % MAX_SIZE)
    raw = memoryview(bytes(raw))
    node, pos = _decode(raw, 0, len(raw), 1)
    if pos != len(raw):
        raise TrailingGarbage("%d bytes after the value" % (len(raw) - pos))
    return node


def decode_prefix(raw: bytes, pos: int = 0):
    """Decode one value starting at ``pos``; returns (node, end_offset)."""
    raw = memoryview(bytes(raw))
    return _decode(raw, pos, len(raw), 1)


# -- builders and accessors ---------------------------------------------------

def universal(number: int, payload) -> DerNode:
    return DerNode(TagClass.UNIVERSAL, number in _CONSTRUCTED_UNIVERSAL, number, payload)


def sequence(*children: DerNode) -> DerNode:
    return DerNode(TagClass.UNIVERSAL, True, SEQUENCE, children)


def sequence_of(children: Iterable[DerNode]) -> DerNode:
    return DerNode(TagClass.UNIVERSAL, True, SEQUENCE, tuple(children))


def set_of(children: Iterable[DerNode], sort: bool = True) -> DerNode:
    children = tuple(children)
    if sort:
        children = tuple(sorted(children, key=der_encode))
    return DerNode(TagClass.UNIVERSAL, True, SET, children)


def context(number: int, payload, constructed: bool = True) -> DerNode:
    return DerNode(TagClass.CONTEXT, constructed, number, payload)


def integer(value: int) -> DerNode:
    length = (value + (value < 0)).bit_length() // 8 + 1
    return universal(INTEGER, value.to_bytes(length, "big", signed=True))


def boolean(value: bool) -> DerNode:
    return universal(BOOLEAN, b"\xff" if value else b"\x00")


def null() -> DerNode:
    return universal(NULL, b"")


def octet_string(data: bytes) -> DerNode:
    return universal(OCTET_STRING, data)


def bit_string(data: bytes) -> DerNode:
    return universal(BIT_STRING, b"\x00" + data)


def object_identifier(value) -> DerNode:
    if isinstance(value, str):
        value = ObjectIdentifier.from_dotted(value)
    return universal(OBJECT_IDENTIFIER, encode_oid(value))


def utf8_string(text: str) -> DerNode:
    return universal(UTF8_STRING, text.encode("utf-8"))


def printable_string(text: str) -> DerNode:
    return universal(PRINTABLE_STRING, text.encode("ascii"))


def is_printable(text: str) -> bool:
    try:
        return bool(_PRINTABLE_RE.fullmatch(text.encode("ascii")))
    except UnicodeEncodeError:
        return False


def time_node(when: _dt.datetime) -> DerNode:
    """UTCTime for 1950-2049, GeneralizedTime otherwise."""
    when = when.astimezone(_dt.timezone.utc)
    if 1950 <= when.year < 2050:
        return universal(UTC_TIME, when.strftime("%y%m%d%H%M%SZ").encode())
    return universal(GENERALIZED_TIME, ("%04d" % when.year + when.strftime("%m%d%H%M%SZ")).encode())


def _expect(node: DerNode, number: int) -> None:
    if not node.is_universal(number):
        raise DerError("expected universal tag %d, got %r" % (number, node))


def get_integer(node: DerNode) -> int:
    _expect(node, INTEGER)
    return int.from_bytes(node.payload, "big", signed=True)


def get_boolean(node: DerNode) -> bool:
    _expect(node, BOOLEAN)
    return node.payload == b"\xff"


def get_oid(node: DerNode) -> ObjectIdentifier:
    _expect(node, OBJECT_IDENTIFIER)
    return decode_oid(node.payload)


def get_octets(node: DerNode) -> bytes:
    _expect(node, OCTET_STRING)
    return node.payload


def get_bits(node: DerNode) -> bytes:
    _expect(node, BIT_STRING)
    if node.payload[0] != 0:
        raise DerError("BIT STRING with unused bits where octets expected")
    return node.payload[1:]


def get_time(node: DerNode) -> _dt.datetime:
    if node.is_universal(UTC_TIME):
        text = node.payload.decode("ascii")
        year = int(text[:2])
        year += 1900 if year >= 50 else 2000
        rest = text[2:]
    elif node.is_universal(GENERALIZED_TIME):
        text = node.payload.decode("ascii")
        year = int(text[:4])
        if 1950 <= year < 2050:
            raise NonCanonical("GeneralizedTime used for a UTCTime-range date")
        rest = text[4:]
    else:
        raise DerError("expected a time value, got %r" % node)
    try:
        return _dt.datetime(
            year, int(rest[0:2]), int(rest[2:4]), int(rest[4:6]),
            int(rest[6:8]), int(rest[8:10]), tzinfo=_dt.timezone.utc,
        )
    except ValueError as exc:
        raise DerError("invalid calendar time: %s" % exc) from None


def expect_sequence(node: DerNode, lengths: Sequence[int] = ()) -> "tuple[DerNode, ...]":
    _expect(node, SEQUENCE)
    if lengths and len(node.payload) not in lengths:
        raise DerError("SEQUENCE has %d elements" % len(node.payload))
    return node.payload


def expect_set(node: DerNode) -> "tuple[DerNode, ...]":
    _expect(node, SET)
    return node.payload
