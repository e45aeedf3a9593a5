"""Binary codec for BGP UPDATEs carrying the FC path attribute.

Every message starts with a container header::

    magic "FCBG"(4) | version(1) | message-type(1)

An update body is::

    kind(1) | prefix | as-path-count(2) | asn(4)* | attr-section-length(2) | attribute*

    prefix    := family(1: 4|6) | masklen(1) | address(4|16)
    attribute := flags(1) | type-code(1) | length(1, or 2 when E is set) | value

The FC attribute (type code 41) is optional, transitive and partial
(O=T=P=1). Its E bit follows the FC count: set exactly when more than one
FC is carried, in which case the length field is two octets. The value is
a run of FC records::

    previous(4) | current(4) | next(4) | sig-len(2) | signature

Attributes with any other type code are kept as opaque bytes and
re-encoded verbatim.
"""

from __future__ import annotations

import enum
import ipaddress
import struct
from dataclasses import dataclass
from typing import Iterable, Sequence

from fcbgp.fc_core import ForwardingCommitment
from fcbgp.trust_base import Prefix

MAGIC = b"FCBG"
FORMAT_VERSION = 1

FC_ATTR_TYPE = 41  # unassigned by IANA at time of writing

FLAG_OPTIONAL = 0x80
FLAG_TRANSITIVE = 0x40
FLAG_PARTIAL = 0x20
FLAG_EXTENDED = 0x10
FLAG_UNUSED = 0x0F
FC_BASE_FLAGS = FLAG_OPTIONAL | FLAG_TRANSITIVE | FLAG_PARTIAL

FC_RECORD_FIXED = 14


class MsgType(enum.IntEnum):
    UPDATE = 1
    BINDING = 2
    SYNC = 3


class UpdateKind(enum.IntEnum):
    ANNOUNCE = 1
    WITHDRAW = 2


class MalformedMessageError(ValueError):
    def __init__(self, offset: int, msg: str):
        super().__init__(f"malformed message at offset {offset}: {msg}")
        self.offset = offset


class AttributeOverflowError(ValueError):
    """Attribute value does not fit its length field."""


class Reader:
    """Cursor over a byte string that reports absolute offsets on failure."""

    def __init__(self, data: bytes, offset: int = 0):
        self.data = data
        self.pos = offset

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise MalformedMessageError(
                self.pos, f"truncated {what}: need {n} octets, have {len(self.data) - self.pos}")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u8(self, what: str) -> int:
        return self.take(1, what)[0]

    def u16(self, what: str) -> int:
        return struct.unpack(">H", self.take(2, what))[0]

    def u32(self, what: str) -> int:
        return struct.unpack(">I", self.take(4, what))[0]

    def i32(self, what: str) -> int:
        return struct.unpack(">i", self.take(4, what))[0]

    def at_end(self) -> bool:
        return self.pos == len(self.data)

    def expect_end(self):
        if not self.at_end():
            raise MalformedMessageError(self.pos, f"{len(self.data) - self.pos} trailing octets")


def encode_header(msg_type: MsgType) -> bytes:
    return MAGIC + bytes([FORMAT_VERSION, msg_type])


def read_header(r: Reader, expected: MsgType | None = None) -> MsgType:
    if r.take(4, "magic") != MAGIC:
        raise MalformedMessageError(0, "bad magic")
    version = r.u8("version")
    if version != FORMAT_VERSION:
        raise MalformedMessageError(4, f"unsupported format version {version}")
    pos = r.pos
    try:
        mt = MsgType(r.u8("message type"))
    except ValueError:
        raise MalformedMessageError(pos, "unknown message type") from None
    if expected is not None and mt != expected:
        raise MalformedMessageError(pos, f"expected {expected.name} message, got {mt.name}")
    return mt


def encode_prefix(p: Prefix) -> bytes:
    return bytes([p.version, p.prefixlen]) + p.network_address.packed


def read_prefix(r: Reader) -> Prefix:
    start = r.pos
    family = r.u8("prefix family")
    if family not in (4, 6):
        raise MalformedMessageError(start, f"unknown address family {family}")
    masklen = r.u8("prefix length")
    width = 4 if family == 4 else 16
    if masklen > width * 8:
        raise MalformedMessageError(start + 1, f"mask length {masklen} out of range")
    addr = r.take(width, "prefix address")
    cls = ipaddress.IPv4Network if family == 4 else ipaddress.IPv6Network
    try:
        return cls((addr, masklen), strict=True)
    except ValueError:
        raise MalformedMessageError(start, "prefix has host bits set") from None


def encode_fc_records(fcs: Iterable[ForwardingCommitment]) -> bytes:
    out = bytearray()
    for fc in fcs:
        if len(fc.signature) > 0xFFFF:
            raise AttributeOverflowError("signature longer than 65535 octets")
        out += struct.pack(">IIIH", fc.previous, fc.current, fc.next, len(fc.signature))
        out += fc.signature
    return bytes(out)


def read_fc_records(r: Reader, end: int) -> list[ForwardingCommitment]:
    fcs = []
    while r.pos < end:
        if end - r.pos < FC_RECORD_FIXED:
            raise MalformedMessageError(r.pos, "truncated FC record")
        prev, cur, nxt, siglen = struct.unpack(">IIIH", r.take(FC_RECORD_FIXED, "FC record"))
        if r.pos + siglen > end:
            raise MalformedMessageError(r.pos, "truncated FC signature")
        fcs.append(ForwardingCommitment(prev, cur, nxt, r.take(siglen, "FC signature")))
    return fcs


@dataclass(frozen=True)
class PathAttribute:
    flags: int
    type_code: int
    value: bytes

    @property
    def extended(self) -> bool:
        return bool(self.flags & FLAG_EXTENDED)

    def encode(self) -> bytes:
        n = len(self.value)
        if self.extended:
            if n > 0xFFFF:
                raise AttributeOverflowError(f"attribute {self.type_code} value exceeds 65535 octets")
            length = struct.pack(">H", n)
        else:
            if n > 0xFF:
                raise AttributeOverflowError(
                    f"attribute {self.type_code} value of {n} octets needs the E bit")
            length = bytes([n])
        return bytes([self.flags, self.type_code]) + length + self.value


def fc_attribute(fcs: Sequence[ForwardingCommitment]) -> PathAttribute:
    flags = FC_BASE_FLAGS | (FLAG_EXTENDED if len(fcs) > 1 else 0)
    return PathAttribute(flags, FC_ATTR_TYPE, encode_fc_records(fcs))


def decode_fc_value(value: bytes) -> list[ForwardingCommitment]:
    r = Reader(value)
    return read_fc_records(r, len(value))


@dataclass(frozen=True)
class BgpUpdate:
    kind: UpdateKind
    prefix: Prefix
    as_path: tuple[int, ...] = ()
    attributes: tuple[PathAttribute, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "as_path", tuple(self.as_path))
        object.__setattr__(self, "attributes", tuple(self.attributes))
        if self.kind == UpdateKind.ANNOUNCE and not self.as_path:
            raise ValueError("announcement needs a non-empty AS path")
        fc_attrs = [a for a in self.attributes if a.type_code == FC_ATTR_TYPE]
        if len(fc_attrs) > 1:
            raise ValueError("at most one FC attribute per update")
        if fc_attrs and len(decode_fc_value(fc_attrs[0].value)) > len(self.as_path):
            raise ValueError("more FCs than AS-path entries")

    @classmethod
    def announce(cls, prefix: Prefix, as_path: Sequence[int],
                 fcs: Sequence[ForwardingCommitment] = (),
                 other: Iterable[PathAttribute] = ()) -> "BgpUpdate":
        attrs = [a for a in other if a.type_code != FC_ATTR_TYPE]
        if fcs:
            attrs.append(fc_attribute(fcs))
        return cls(UpdateKind.ANNOUNCE, prefix, tuple(as_path), tuple(attrs))

    @classmethod
    def withdraw(cls, prefix: Prefix) -> "BgpUpdate":
        return cls(UpdateKind.WITHDRAW, prefix)

    @property
    def fc_attr(self) -> PathAttribute | None:
        for a in self.attributes:
            if a.type_code == FC_ATTR_TYPE:
                return a
        return None

    @property
    def fcs(self) -> tuple[ForwardingCommitment, ...]:
        a = self.fc_attr
        return tuple(decode_fc_value(a.value)) if a else ()

    @property
    def other_attributes(self) -> tuple[PathAttribute, ...]:
        return tuple(a for a in self.attributes if a.type_code != FC_ATTR_TYPE)


def encode_update(update: BgpUpdate) -> bytes:
    attrs = b"".join(a.encode() for a in update.attributes)
    if len(attrs) > 0xFFFF:
        raise AttributeOverflowError("attribute section exceeds 65535 octets")
    if len(update.as_path) > 0xFFFF:
        raise AttributeOverflowError("AS path too long")
    return (encode_header(MsgType.UPDATE)
            + bytes([update.kind])
            + encode_prefix(update.prefix)
            + struct.pack(">H", len(update.as_path))
            + b"".join(struct.pack(">I", a) for a in update.as_path)
            + struct.pack(">H", len(attrs))
            + attrs)


def decode_update(data: bytes) -> BgpUpdate:
    r = Reader(bytes(data))
    read_header(r, MsgType.UPDATE)
    pos = r.pos
    try:
        kind = UpdateKind(r.u8("update kind"))
    except ValueError:
        raise MalformedMessageError(pos, "unknown update kind") from None
    prefix = read_prefix(r)
    n = r.u16("AS path count")
    path = []
    for _ in range(n):
        pos = r.pos
        asn = r.u32("AS path entry")
        if asn == 0:
            raise MalformedMessageError(pos, "AS 0 in AS path")
        path.append(asn)
    if kind == UpdateKind.ANNOUNCE and not path:
        raise MalformedMessageError(pos, "announcement with empty AS path")
    section = r.u16("attribute section length")
    end = r.pos + section
    if end > len(r.data):
        raise MalformedMessageError(r.pos, "attribute section runs past end of message")
    attrs = []
    seen_fc = False
    while r.pos < end:
        start = r.pos
        if end - r.pos < 3:
            raise MalformedMessageError(start, "truncated attribute header")
        flags = r.u8("attribute flags")
        code = r.u8("attribute type code")
        if flags & FLAG_EXTENDED:
            if end - r.pos < 2:
                raise MalformedMessageError(r.pos, "truncated extended length")
            length = r.u16("attribute length")
        else:
            length = r.u8("attribute length")
        vstart = r.pos
        if vstart + length > end:
            raise MalformedMessageError(vstart, f"attribute {code} value overruns section")
        if code == FC_ATTR_TYPE:
            if seen_fc:
                raise MalformedMessageError(start, "duplicate FC attribute")
            seen_fc = True
            if flags & ~FLAG_EXTENDED != FC_BASE_FLAGS:
                raise MalformedMessageError(start, f"FC attribute flags {flags:#04x} invalid")
            fcs = read_fc_records(r, vstart + length)
            if bool(flags & FLAG_EXTENDED) != (len(fcs) > 1):
                raise MalformedMessageError(
                    start, f"E bit contradicts FC count {len(fcs)}")
            if len(fcs) > len(path):
                raise MalformedMessageError(start, "more FCs than AS-path entries")
            value = r.data[vstart:vstart + length]
        else:
            value = r.take(length, "attribute value")
        attrs.append(PathAttribute(flags, code, value))
    r.expect_end()
    return BgpUpdate(kind, prefix, tuple(path), tuple(attrs))


def legacy_passthrough(update: BgpUpdate, self_asn: int) -> BgpUpdate:
    """What an FC-unaware speaker forwards: path extended, attributes untouched."""
    if update.kind != UpdateKind.ANNOUNCE:
        return update
    return BgpUpdate(update.kind, update.prefix, update.as_path + (self_asn,), update.attributes)
