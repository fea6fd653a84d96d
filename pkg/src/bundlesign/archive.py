"""
ZIP-based bundle archives where entry order carries meaning.

The reader walks local file headers front to back and cross-checks every
one against the central directory, so the order seen by the validator is
exactly the order stored on disk.  The writer is deterministic: fixed
timestamps, no extra fields, UTF-8 names.
"""

from __future__ import annotations

import binascii
import enum
import re
import struct
import zlib
from dataclasses import dataclass
from typing import Iterable, Iterator, Optional

from .errors import InvalidBundle, DuplicatePath, MalformedArchive, UnsupportedFeature

_LOCAL_SIG = 0x04034B50
_CENTRAL_SIG = 0x02014B50
_EOCD_SIG = 0x06054B50
_ZIP64_LOCATOR_SIG = 0x07064B50
_DESCRIPTOR_SIG = 0x08074B50

_LOCAL = struct.Struct("<IHHHHHIIIHH")
_CENTRAL = struct.Struct("<IHHHHHHIIIHHHHHII")
_EOCD = struct.Struct("<IHHHHIIH")

_FLAG_ENCRYPTED = 0x0001
_FLAG_DESCRIPTOR = 0x0008
_FLAG_UTF8 = 0x0800
_FLAG_STRONG_ENCRYPTION = 0x0040

# 1980-01-01 00:00:00 in MS-DOS format
_DOS_TIME = 0
_DOS_DATE = (0 << 9) | (1 << 5) | 1
_VERSION = 20
_EXTERNAL_ATTR = 0o600 << 16  # rw------- as stdlib zipfile writes it

MANIFEST_PATH = "META-INF/MANIFEST.MF"


class Compression(enum.IntEnum):
    STORED = 0
    DEFLATED = 8


class EntryClass(enum.Enum):
    MANIFEST = "manifest"
    SIGNATURE_FILE = "signature_file"
    SIGNATURE_BLOCK = "signature_block"
    RESOURCE = "resource"

    @property
    def is_metadata(self) -> bool:
        return self is not EntryClass.RESOURCE


def validate_path(path: str) -> None:
    if not path:
        raise InvalidBundle("empty entry path")
    if "\\" in path:
        raise InvalidBundle("backslash in entry path %r" % path)
    if path.startswith("/"):
        raise InvalidBundle("absolute entry path %r" % path)
    if "\x00" in path:
        raise InvalidBundle("NUL in entry path %r" % path)
    for segment in path.split("/"):
        if segment in ("", ".", ".."):
            raise InvalidBundle("bad segment in entry path %r" % path)


@dataclass(frozen=True)
class ArchiveEntry:
    path: str
    content: bytes
    compression: Compression = Compression.DEFLATED

    def __post_init__(self):
        validate_path(self.path)
        object.__setattr__(self, "content", bytes(self.content))
        object.__setattr__(self, "compression", Compression(self.compression))

    @property
    def kind(self) -> EntryClass:
        return classify_entry(self.path)


@dataclass(frozen=True)
class BundleArchive:
    entries: "tuple[ArchiveEntry, ...]" = ()

    def __post_init__(self):
        entries = tuple(self.entries)
        object.__setattr__(self, "entries", entries)
        seen = set()
        for entry in entries:
            if entry.path in seen:
                raise DuplicatePath("duplicate entry path %r" % entry.path)
            seen.add(entry.path)

    def __iter__(self) -> Iterator[ArchiveEntry]:
        return iter(self.entries)

    def __len__(self) -> int:
        return len(self.entries)

    def __getitem__(self, index):
        return self.entries[index]

    @property
    def paths(self) -> "list[str]":
        return [e.path for e in self.entries]

    def get(self, path: str) -> Optional[ArchiveEntry]:
        for entry in self.entries:
            if entry.path == path:
                return entry
        return None

    def index_of(self, path: str) -> int:
        for i, entry in enumerate(self.entries):
            if entry.path == path:
                return i
        return -1

    def resources(self) -> "list[ArchiveEntry]":
        return [e for e in self.entries if e.kind is EntryClass.RESOURCE]

    @classmethod
    def from_items(cls, items: Iterable, compression=Compression.DEFLATED) -> "BundleArchive":
        """Build a bundle from (path, content) pairs."""
        return cls(tuple(ArchiveEntry(p, c, compression) for p, c in items))


# -- classification ------------------------------------------------------------

_SF_RE = re.compile(r"META-INF/([^/]+)\.SF")
_BLOCK_RE = re.compile(r"META-INF/([^/]+)\.(RSA|DSA)")


def classify_entry(path: str) -> EntryClass:
    upper = path.upper()
    if upper == MANIFEST_PATH:
        return EntryClass.MANIFEST
    if _SF_RE.fullmatch(upper):
        return EntryClass.SIGNATURE_FILE
    if _BLOCK_RE.fullmatch(upper):
        return EntryClass.SIGNATURE_BLOCK
    return EntryClass.RESOURCE


def signer_stem(path: str) -> Optional[str]:
    """Upper-cased signer name of a .SF or block path, else None."""
    upper = path.upper()
    m = _SF_RE.fullmatch(upper) or _BLOCK_RE.fullmatch(upper)
    if m is None or upper == MANIFEST_PATH:
        return None
    return m.group(1)


def block_extension(path: str) -> Optional[str]:
    m = _BLOCK_RE.fullmatch(path.upper())
    return m.group(2) if m else None


# -- order checking --------------------------------------------------------------

class OrderViolation(enum.Enum):
    NO_MANIFEST = "NO_MANIFEST"
    BAD_ORDER = "BAD_ORDER"
    NO_SIGNER = "NO_SIGNER"
    UNPAIRED_SIGNATURE = "UNPAIRED_SIGNATURE"


@dataclass(frozen=True)
class OrderReport:
    ok: bool
    index: Optional[int] = None
    reason: Optional[OrderViolation] = None
    detail: str = ""


def check_entry_order(bundle: BundleArchive) -> OrderReport:
    """Manifest first, then (.SF, block) pairs, then resources only."""
    kinds = [classify_entry(e.path) for e in bundle]
    if EntryClass.MANIFEST not in kinds:
        return OrderReport(False, 0, OrderViolation.NO_MANIFEST, "no manifest entry")
    if kinds[0] is not EntryClass.MANIFEST:
        return OrderReport(False, 0, OrderViolation.BAD_ORDER, "first entry is not the manifest")
    i = 1
    pairs = 0
    while i < len(kinds) and kinds[i] is not EntryClass.RESOURCE:
        if kinds[i] is not EntryClass.SIGNATURE_FILE:
            reason = OrderViolation.BAD_ORDER
            if kinds[i] is EntryClass.SIGNATURE_BLOCK:
                reason = OrderViolation.UNPAIRED_SIGNATURE
            return OrderReport(False, i, reason, "expected a signature file at %s" % bundle[i].path)
        if (
            i + 1 >= len(kinds)
            or kinds[i + 1] is not EntryClass.SIGNATURE_BLOCK
            or signer_stem(bundle[i + 1].path) != signer_stem(bundle[i].path)
        ):
            return OrderReport(
                False, i + 1 if i + 1 < len(kinds) else i, OrderViolation.UNPAIRED_SIGNATURE,
                "%s is not immediately followed by its block file" % bundle[i].path,
            )
        pairs += 1
        i += 2
    if pairs == 0:
        return OrderReport(False, 1, OrderViolation.NO_SIGNER, "no signature file after the manifest")
    for j in range(i, len(kinds)):
        if kinds[j] is not EntryClass.RESOURCE:
            return OrderReport(False, j, OrderViolation.BAD_ORDER, "metadata entry %s after resources" % bundle[j].path)
    return OrderReport(True)


# -- reading ---------------------------------------------------------------------

@dataclass
class _CentralRecord:
    flags: int
    method: int
    crc: int
    csize: int
    usize: int
    name: bytes
    offset: int


def _decode_name(raw: bytes, flags: int) -> str:
    try:
        return raw.decode("utf-8") if flags & _FLAG_UTF8 else raw.decode("cp437")
    except UnicodeDecodeError:
        raise MalformedArchive("entry name is not valid UTF-8") from None


def _find_eocd(raw: bytes) -> int:
    lowest = max(0, len(raw) - (_EOCD.size + 0xFFFF))
    pos = len(raw) - _EOCD.size
    while pos >= lowest:
        pos = raw.rfind(b"PK\x05\x06", lowest, pos + 4)
        if pos < 0:
            break
        comment_len = struct.unpack_from("<H", raw, pos + 20)[0]
        if pos + _EOCD.size + comment_len == len(raw):
            return pos
        pos -= 1
    raise MalformedArchive("end of central directory record not found")


def _read_central(raw: bytes) -> "tuple[list[_CentralRecord], int]":
    if len(raw) < _EOCD.size:
        raise MalformedArchive("file too short to be a ZIP container")
    eocd = _find_eocd(raw)
    if eocd >= 20 and struct.unpack_from("<I", raw, eocd - 20)[0] == _ZIP64_LOCATOR_SIG:
        raise UnsupportedFeature("zip64 archives are not supported")
    _, disk, cd_disk, n_here, n_total, cd_size, cd_offset, _ = _EOCD.unpack_from(raw, eocd)
    if 0xFFFF in (n_here, n_total) or 0xFFFFFFFF in (cd_size, cd_offset):
        raise UnsupportedFeature("zip64 archives are not supported")
    if disk or cd_disk or n_here != n_total:
        raise UnsupportedFeature("multi-disk archives are not supported")
    if cd_offset + cd_size != eocd:
        raise MalformedArchive("central directory does not end at the EOCD record")
    records = []
    pos = cd_offset
    for _ in range(n_total):
        if pos + _CENTRAL.size > eocd:
            raise MalformedArchive("truncated central directory")
        (sig, _made, _need, flags, method, _t, _d, crc, csize, usize,
         nlen, xlen, clen, _disk, _iattr, _eattr, offset) = _CENTRAL.unpack_from(raw, pos)
        if sig != _CENTRAL_SIG:
            raise MalformedArchive("bad central directory signature")
        pos += _CENTRAL.size
        name = raw[pos:pos + nlen]
        pos += nlen + xlen + clen
        if pos > eocd:
            raise MalformedArchive("truncated central directory entry")
        if 0xFFFFFFFF in (csize, usize, offset):
            raise UnsupportedFeature("zip64 entries are not supported")
        records.append(_CentralRecord(flags, method, crc, csize, usize, name, offset))
    if pos != eocd:
        raise MalformedArchive("central directory size mismatch")
    return records, cd_offset


def _inflate(data: bytes) -> bytes:
    inflater = zlib.decompressobj(-15)
    try:
        out = inflater.decompress(data)
        out += inflater.flush()
    except zlib.error as exc:
        raise MalformedArchive("corrupt deflate stream: %s" % exc) from None
    if not inflater.eof or inflater.unused_data:
        raise MalformedArchive("deflate stream length does not match entry size")
    return out


def read_bundle(raw: bytes) -> BundleArchive:
    """Parse a ZIP container into a :class:`BundleArchive` in local-header order."""
    raw = bytes(raw)
    records, cd_offset = _read_central(raw)
    entries = []
    seen = set()
    pos = 0
    for index, rec in enumerate(records):
        if pos + _LOCAL.size > cd_offset:
            raise MalformedArchive("truncated local header %d" % index)
        (sig, _need, flags, method, _t, _d, crc, csize, usize, nlen, xlen) = _LOCAL.unpack_from(raw, pos)
        if sig != _LOCAL_SIG:
            raise MalformedArchive("bad local header signature at offset %d" % pos)
        if rec.offset != pos:
            raise MalformedArchive("central directory order differs from local header order")
        if flags & (_FLAG_ENCRYPTED | _FLAG_STRONG_ENCRYPTION) or rec.flags & _FLAG_ENCRYPTED:
            raise UnsupportedFeature("encrypted entries are not supported")
        if method not in (0, 8):
            raise UnsupportedFeature("compression method %d is not supported" % method)
        name = raw[pos + _LOCAL.size:pos + _LOCAL.size + nlen]
        if name != rec.name or method != rec.method:
            raise MalformedArchive("local header %d disagrees with central directory" % index)
        if flags & _FLAG_DESCRIPTOR:
            crc, csize, usize = rec.crc, rec.csize, rec.usize
        elif (crc, csize, usize) != (rec.crc, rec.csize, rec.usize):
            raise MalformedArchive("local header %d sizes/CRC disagree with central directory" % index)
        start = pos + _LOCAL.size + nlen + xlen
        end = start + csize
        if end > cd_offset:
            raise MalformedArchive("entry %d data runs into the central directory" % index)
        data = raw[start:end]
        content = _inflate(data) if method == 8 else data
        if len(content) != usize:
            raise MalformedArchive("entry %d uncompressed size mismatch" % index)
        if binascii.crc32(content) != crc:
            raise MalformedArchive("CRC mismatch in entry %d" % index)
        pos = end
        if flags & _FLAG_DESCRIPTOR:
            if raw[pos:pos + 4] == struct.pack("<I", _DESCRIPTOR_SIG):
                pos += 4
            if raw[pos:pos + 12] != struct.pack("<III", crc, csize, usize):
                raise MalformedArchive("bad data descriptor for entry %d" % index)
            pos += 12
        path = _decode_name(name, flags)
        if path in seen:
            raise MalformedArchive("duplicate entry path %r" % path)
        seen.add(path)
        if path.endswith("/"):
            if content:
                raise MalformedArchive("directory entry %r has content" % path)
            continue
        try:
            entries.append(ArchiveEntry(path, content, Compression(method)))
        except InvalidBundle as exc:
            raise MalformedArchive(str(exc)) from None
    if pos != cd_offset:
        raise MalformedArchive("unexpected data between entries and central directory")
    return BundleArchive(tuple(entries))


# -- writing -------------------------------------------------------------------

def _deflate(data: bytes) -> bytes:
    compressor = zlib.compressobj(zlib.Z_DEFAULT_COMPRESSION, zlib.DEFLATED, -15)
    return compressor.compress(data) + compressor.flush()


def write_bundle(bundle: BundleArchive) -> bytes:
    """Serialize deterministically: same bundle in, same bytes out."""
    if not isinstance(bundle, BundleArchive):
        raise InvalidBundle("expected a BundleArchive")
    out = bytearray()
    central = bytearray()
    for entry in bundle:
        try:
            name = entry.path.encode("ascii")
            flags = 0
        except UnicodeEncodeError:
            name = entry.path.encode("utf-8")
            flags = _FLAG_UTF8
        data = _deflate(entry.content) if entry.compression is Compression.DEFLATED else entry.content
        crc = binascii.crc32(entry.content)
        offset = len(out)
        out += _LOCAL.pack(_LOCAL_SIG, _VERSION, flags, int(entry.compression), _DOS_TIME, _DOS_DATE,
                           crc, len(data), len(entry.content), len(name), 0)
        out += name
        out += data
        central += _CENTRAL.pack(_CENTRAL_SIG, _VERSION, _VERSION, flags, int(entry.compression),
                                 _DOS_TIME, _DOS_DATE, crc, len(data), len(entry.content),
                                 len(name), 0, 0, 0, 0, _EXTERNAL_ATTR, offset)
        central += name
    cd_offset = len(out)
    out += central
    out += _EOCD.pack(_EOCD_SIG, 0, 0, len(bundle), len(bundle), len(central), cd_offset, 0)
    return bytes(out)
