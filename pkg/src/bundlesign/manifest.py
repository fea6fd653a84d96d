"""
Manifest and Signature File documents.

Both are "Key: value" attribute documents in the JAR manifest text
format: CRLF line ends, physical lines of at most 72 bytes, continuation
lines starting with one space, sections separated by a blank line.
"""

from __future__ import annotations

import base64
import binascii
import re
from dataclasses import dataclass
from typing import Iterable, Optional, Union

from .algorithms import DigestAlg
from .archive import BundleArchive, EntryClass
from .errors import MalformedManifest, UnsupportedAlgorithm

MAX_LINE = 72  # bytes, including CRLF
_KEY_RE = re.compile(r"[A-Za-z0-9_-]{1,70}")
_DIGEST_KEY_RE = re.compile(r"(.+)-Digest", re.IGNORECASE)
_MANIFEST_DIGEST_KEY_RE = re.compile(r"(.+)-Digest-Manifest", re.IGNORECASE)


@dataclass(frozen=True)
class AttributeSection:
    name: Optional[str] = None
    attributes: "tuple[tuple[str, str], ...]" = ()

    def __post_init__(self):
        attrs = tuple((str(k), str(v)) for k, v in self.attributes)
        object.__setattr__(self, "attributes", attrs)
        if self.name is not None:
            _check_value(self.name)
        seen = set()
        for key, value in attrs:
            if not _KEY_RE.fullmatch(key):
                raise MalformedManifest("invalid attribute name %r" % key)
            if key.lower() == "name":
                raise MalformedManifest("'Name' is reserved for the section header")
            if key.lower() in seen:
                raise MalformedManifest("duplicate attribute %r" % key)
            seen.add(key.lower())
            _check_value(value)

    def get(self, key: str) -> Optional[str]:
        key = key.lower()
        for k, v in self.attributes:
            if k.lower() == key:
                return v
        return None


def _check_value(value: str) -> None:
    if any(c in value for c in "\r\n\x00"):
        raise MalformedManifest("attribute values may not contain CR, LF or NUL")


def _digest_attrs(section: AttributeSection, pattern) -> "list[tuple[DigestAlg, str]]":
    found = []
    for key, value in section.attributes:
        m = pattern.fullmatch(key)
        if m is None:
            continue
        if pattern is _DIGEST_KEY_RE and _MANIFEST_DIGEST_KEY_RE.fullmatch(key):
            continue
        try:
            alg = DigestAlg.from_token(m.group(1))
        except UnsupportedAlgorithm as exc:
            raise MalformedManifest(str(exc)) from None
        try:
            raw = base64.b64decode(value, validate=True)
        except binascii.Error:
            raise MalformedManifest("digest value for %r is not base64" % key) from None
        if len(raw) * 8 != alg.bits:
            raise MalformedManifest("digest value for %r has wrong length" % key)
        found.append((alg, value))
    return found


@dataclass(frozen=True)
class ManifestDoc:
    main: AttributeSection
    entries: "tuple[AttributeSection, ...]" = ()

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        if self.main.name is not None:
            raise MalformedManifest("main section cannot have a Name")
        names = set()
        for section in self.entries:
            if section.name is None:
                raise MalformedManifest("entry section without a Name")
            if section.name in names:
                raise MalformedManifest("duplicate manifest entry %r" % section.name)
            names.add(section.name)
            if len(_digest_attrs(section, _DIGEST_KEY_RE)) != 1:
                raise MalformedManifest("entry %r must carry exactly one digest" % section.name)

    def entry(self, name: str) -> Optional[AttributeSection]:
        for section in self.entries:
            if section.name == name:
                return section
        return None

    @property
    def names(self) -> "list[str]":
        return [s.name for s in self.entries]

    @staticmethod
    def entry_digest(section: AttributeSection) -> "tuple[DigestAlg, str]":
        return _digest_attrs(section, _DIGEST_KEY_RE)[0]


@dataclass(frozen=True)
class SignatureFileDoc:
    main: AttributeSection

    def __post_init__(self):
        if self.main.name is not None:
            raise MalformedManifest("main section cannot have a Name")
        if len(_digest_attrs(self.main, _MANIFEST_DIGEST_KEY_RE)) != 1:
            raise MalformedManifest("signature file must carry exactly one manifest digest")

    @property
    def manifest_digest(self) -> "tuple[DigestAlg, str]":
        return _digest_attrs(self.main, _MANIFEST_DIGEST_KEY_RE)[0]


# -- generation --------------------------------------------------------------------

def generate_manifest(
    bundle: BundleArchive,
    alg: DigestAlg,
    extra_main_attrs: Iterable = (),
) -> ManifestDoc:
    """One digest section per resource, in bundle order."""
    extra = [(k, v) for k, v in extra_main_attrs if k.lower() != "manifest-version"]
    main = AttributeSection(None, (("Manifest-Version", "1.0"), *extra))
    sections = [
        AttributeSection(e.path, ((alg.attribute, alg.digest_b64(e.content)),))
        for e in bundle
        if e.kind is EntryClass.RESOURCE
    ]
    return ManifestDoc(main, tuple(sections))


def generate_signature_file(manifest_bytes: bytes, alg: DigestAlg, extra_main_attrs: Iterable = ()) -> SignatureFileDoc:
    attrs = [("Signature-Version", "1.0")]
    attrs += [(k, v) for k, v in extra_main_attrs]
    attrs.append((alg.manifest_attribute, alg.digest_b64(manifest_bytes)))
    return SignatureFileDoc(AttributeSection(None, tuple(attrs)))


# -- serialization -----------------------------------------------------------------

def _wrap(line: bytes) -> bytes:
    limit = MAX_LINE - 2
    out = bytearray()
    first = True
    while True:
        room = limit if first else limit - 1
        if len(line) <= room:
            chunk, line = line, b""
        else:
            cut = room
            # never split a UTF-8 sequence across physical lines
            while cut > 0 and (line[cut] & 0xC0) == 0x80:
                cut -= 1
            chunk, line = line[:cut], line[cut:]
        out += (b"" if first else b" ") + chunk + b"\r\n"
        first = False
        if not line:
            return bytes(out)


def _section_bytes(section: AttributeSection) -> bytes:
    out = bytearray()
    if section.name is not None:
        out += _wrap(b"Name: " + section.name.encode("utf-8"))
    for key, value in section.attributes:
        out += _wrap(key.encode("ascii") + b": " + value.encode("utf-8"))
    return bytes(out) + b"\r\n"


def serialize_attributes(doc: Union[ManifestDoc, SignatureFileDoc]) -> bytes:
    out = bytearray(_section_bytes(doc.main))
    for section in getattr(doc, "entries", ()):
        out += _section_bytes(section)
    return bytes(out)


# -- parsing ----------------------------------------------------------------------

def _logical_lines(raw: bytes):
    """Yield logical lines (continuations joined) or None for blank lines."""
    lines = raw.split(b"\n")
    if lines and lines[-1] == b"":
        lines.pop()
    current = None
    for number, line in enumerate(lines, 1):
        if len(line) + 1 > MAX_LINE:
            raise MalformedManifest("line %d longer than %d bytes" % (number, MAX_LINE))
        if line.endswith(b"\r"):
            line = line[:-1]
        if b"\r" in line or b"\x00" in line:
            raise MalformedManifest("binary data on line %d" % number)
        if line.startswith(b" "):
            if current is None:
                raise MalformedManifest("continuation without a preceding header on line %d" % number)
            current += line[1:]
            continue
        if current is not None:
            yield current
            current = None
        if line:
            current = line
        else:
            yield None
    if current is not None:
        yield current


def _split_header(line: bytes) -> "tuple[str, str]":
    try:
        text = line.decode("utf-8")
    except UnicodeDecodeError:
        raise MalformedManifest("line is not valid UTF-8") from None
    key, sep, value = text.partition(": ")
    if not sep:
        raise MalformedManifest("missing ': ' separator in %r" % text[:40])
    if not _KEY_RE.fullmatch(key):
        raise MalformedManifest("invalid attribute name %r" % key)
    return key, value


def parse_sections(raw: bytes) -> "list[AttributeSection]":
    """Parse into raw sections without interpreting digests; main section first."""
    sections = []
    name = None
    attrs = []
    started = False
    for line in _logical_lines(bytes(raw)):
        if line is None:
            if not sections or started:
                sections.append(AttributeSection(name, tuple(attrs)))
            name, attrs, started = None, [], False
            continue
        key, value = _split_header(line)
        if key.lower() == "name" and not attrs and name is None and sections:
            name = value
        else:
            attrs.append((key, value))
        started = True
    if started or not sections:
        sections.append(AttributeSection(name, tuple(attrs)))
    for section in sections[1:]:
        if section.name is None:
            raise MalformedManifest("entry section does not start with Name")
    return sections


def parse_manifest(raw: bytes) -> ManifestDoc:
    sections = parse_sections(raw)
    if sections[0].get("Manifest-Version") is None:
        raise MalformedManifest("missing Manifest-Version")
    return ManifestDoc(sections[0], tuple(sections[1:]))


def parse_signature_file(raw: bytes) -> SignatureFileDoc:
    sections = parse_sections(raw)
    if len(sections) != 1:
        raise MalformedManifest("signature file must contain only a main section")
    if sections[0].get("Signature-Version") is None:
        raise MalformedManifest("missing Signature-Version")
    return SignatureFileDoc(sections[0])


def parse_attributes(raw: bytes) -> Union[ManifestDoc, SignatureFileDoc]:
    sections = parse_sections(raw)
    if sections[0].get("Signature-Version") is not None:
        return parse_signature_file(raw)
    return parse_manifest(raw)


# -- coverage -----------------------------------------------------------------------

@dataclass(frozen=True)
class CoverageReport:
    unlisted_resources: "tuple[str, ...]" = ()
    missing_resources: "tuple[str, ...]" = ()
    digest_mismatches: "tuple[str, ...]" = ()

    @property
    def ok(self) -> bool:
        return not (self.unlisted_resources or self.missing_resources or self.digest_mismatches)


def verify_manifest_coverage(bundle: BundleArchive, doc: ManifestDoc) -> CoverageReport:
    """Compare resources against manifest entries: unlisted, missing, mismatched."""
    resources = {e.path: e for e in bundle if e.kind is EntryClass.RESOURCE}
    listed = set(doc.names)
    unlisted = tuple(p for p in resources if p not in listed)
    missing = tuple(n for n in doc.names if n not in resources)
    mismatched = []
    for section in doc.entries:
        entry = resources.get(section.name)
        if entry is None:
            continue
        alg, expected = ManifestDoc.entry_digest(section)
        if alg.digest_b64(entry.content) != expected:
            mismatched.append(section.name)
    return CoverageReport(unlisted, missing, tuple(mismatched))
