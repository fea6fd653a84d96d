"""
X.509 certificates: parsing, generation, path building and path validation.

Only what signer authentication needs is modeled.  Distinguished names are
compared in order; ``[C=Germany, O=Acme]`` and ``[O=Acme, C=Germany]`` are
different names.
"""

from __future__ import annotations

import base64
import datetime as dt
import enum
import functools
import re
import secrets
import textwrap
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

from . import der
from .algorithms import DigestAlg, KeyAlg, SigAlg, load_public_key, public_key_der, sign, verify
from .errors import (
    AmbiguousIssuer,
    CycleDetected,
    DerError,
    MalformedCertificate,
    NoTrustAnchor,
    UnsupportedAlgorithm,
)

DN_ATTRIBUTES = {
    "CN": der.oid("2.5.4.3"),
    "OU": der.oid("2.5.4.11"),
    "O": der.oid("2.5.4.10"),
    "L": der.oid("2.5.4.7"),
    "S": der.oid("2.5.4.8"),
    "C": der.oid("2.5.4.6"),
}
_ATTR_BY_OID = {v: k for k, v in DN_ATTRIBUTES.items()}
_ATTR_ALIASES = {"ST": "S"}
_STRING_TAGS = (der.UTF8_STRING, der.PRINTABLE_STRING, der.IA5_STRING)

BASIC_CONSTRAINTS = der.oid("2.5.29.19")
CRL_DISTRIBUTION_POINTS = der.oid("2.5.29.31")


# -- distinguished names ------------------------------------------------------------

def _escape(value: str) -> str:
    out = re.sub(r'([\\,=+"<>;#])', r"\\\1", value)
    if out.startswith(" "):
        out = "\\" + out
    if out.endswith(" ") and not out.endswith("\\ "):
        out = out[:-1] + "\\ "
    return out


def _split_unescaped(text: str, sep: str) -> "list[str]":
    parts, current, i = [], [], 0
    while i < len(text):
        ch = text[i]
        if ch == "\\" and i + 1 < len(text):
            current.append(text[i:i + 2])
            i += 2
            continue
        if ch == sep:
            parts.append("".join(current))
            current = []
        else:
            current.append(ch)
        i += 1
    parts.append("".join(current))
    return parts


def _unescape(text: str) -> str:
    # strip unescaped surrounding blanks, then drop escape backslashes
    start, end = 0, len(text)
    while start < end and text[start] == " ":
        start += 1
    while end > start and text[end - 1] == " " and not (end - 2 >= start and text[end - 2] == "\\"):
        end -= 1
    return re.sub(r"\\(.)", r"\1", text[start:end])


@dataclass(frozen=True)
class DistinguishedName:
    rdns: "tuple[tuple[str, str], ...]"
    # ASN.1 string tags as decoded; only affects encoding, never equality
    tags: "Optional[tuple[int, ...]]" = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        rdns = tuple((str(a), str(v)) for a, v in self.rdns)
        object.__setattr__(self, "rdns", rdns)
        if self.tags is not None and len(self.tags) != len(rdns):
            raise ValueError("tags must match rdns")

    @classmethod
    def from_string(cls, text: str) -> "DistinguishedName":
        rdns = []
        if text.strip():
            for part in _split_unescaped(text, ","):
                key, sep, value = part.partition("=")
                key = key.strip().upper()
                key = _ATTR_ALIASES.get(key, key)
                if not sep or key not in DN_ATTRIBUTES:
                    raise ValueError("bad DN component %r" % part)
                rdns.append((key, _unescape(value)))
        return cls(tuple(rdns))

    def __str__(self):
        return ", ".join("%s=%s" % (a, _escape(v)) for a, v in self.rdns)

    def get(self, attr: str) -> Optional[str]:
        for a, v in self.rdns:
            if a == attr:
                return v
        return None

    def to_node(self) -> der.DerNode:
        rdns = []
        for i, (attr, value) in enumerate(self.rdns):
            type_oid = DN_ATTRIBUTES.get(attr) or der.oid(attr)
            if self.tags is not None:
                tag = self.tags[i]
            elif attr == "C" and der.is_printable(value):
                tag = der.PRINTABLE_STRING
            else:
                tag = der.UTF8_STRING
            body = value.encode("utf-8" if tag == der.UTF8_STRING else "ascii")
            atv = der.sequence(der.object_identifier(type_oid), der.universal(tag, body))
            rdns.append(der.set_of([atv]))
        return der.sequence_of(rdns)

    def to_der(self) -> bytes:
        return der.der_encode(self.to_node())

    @classmethod
    def from_node(cls, node: der.DerNode, strict: bool = True) -> "DistinguishedName":
        rdns, tags = [], []
        for rdn in der.expect_sequence(node):
            atvs = der.expect_set(rdn)
            if len(atvs) != 1:
                raise MalformedCertificate("multi-valued RDNs are not supported")
            type_node, value_node = der.expect_sequence(atvs[0], (2,))
            type_oid = der.get_oid(type_node)
            attr = _ATTR_BY_OID.get(type_oid)
            if attr is None:
                if strict:
                    raise MalformedCertificate("DN attribute %s not allowed" % type_oid)
                attr = str(type_oid)
            if value_node.tag_class != der.TagClass.UNIVERSAL or value_node.tag_number not in _STRING_TAGS:
                raise MalformedCertificate("unsupported DN string type")
            rdns.append((attr, value_node.payload.decode("utf-8")))
            tags.append(value_node.tag_number)
        return cls(tuple(rdns), tuple(tags))


def dn(text: str) -> DistinguishedName:
    return DistinguishedName.from_string(text)


# -- certificates --------------------------------------------------------------------

@dataclass(frozen=True)
class CertificateView:
    raw_der: bytes = field(repr=False)
    raw_tbs: bytes = field(repr=False)
    version: int
    serial: int
    subject: DistinguishedName
    issuer: DistinguishedName
    not_before: dt.datetime
    not_after: dt.datetime
    key_alg: KeyAlg
    public_key_der: bytes = field(repr=False)
    is_ca: bool
    sig_alg: SigAlg
    signature: bytes = field(repr=False)
    crl_distribution_points: "tuple[str, ...]" = ()
    extensions: "tuple[tuple[str, bool, bytes], ...]" = field(default=(), repr=False)

    @property
    def public_key(self):
        return _load_key(self.public_key_der)

    @property
    def self_issued(self) -> bool:
        return self.subject == self.issuer

    def to_pem(self) -> str:
        return to_pem(self.raw_der)

    def within_validity(self, at_time: dt.datetime) -> bool:
        return self.not_before <= at_time <= self.not_after


@functools.lru_cache(maxsize=256)
def _load_key(spki: bytes):
    return load_public_key(spki)


def _key_alg_from_spki(node: der.DerNode) -> KeyAlg:
    alg_id, _bits = der.expect_sequence(node, (2,))
    parts = der.expect_sequence(alg_id, (1, 2))
    key_oid = der.get_oid(parts[0])
    for alg in KeyAlg:
        if alg.oid == key_oid:
            return alg
    raise UnsupportedAlgorithm("unsupported public key algorithm %s" % key_oid)


def _collect_uris(node: der.DerNode, out: list) -> None:
    if node.constructed:
        for child in node.payload:
            _collect_uris(child, out)
    elif node.is_context(6):
        out.append(node.payload.decode("ascii", "replace"))


def _parse_extensions(node: der.DerNode, strict: bool):
    is_ca = False
    crl_points = []
    extensions = []
    seen = set()
    if len(node.children) != 1:
        raise MalformedCertificate("extensions wrapper must hold one SEQUENCE")
    for ext in der.expect_sequence(node.children[0]):
        parts = der.expect_sequence(ext, (2, 3))
        ext_oid = der.get_oid(parts[0])
        critical = False
        if len(parts) == 3:
            critical = der.get_boolean(parts[1])
            if not critical:
                raise MalformedCertificate("explicit DEFAULT FALSE critical flag is not DER")
        value = der.get_octets(parts[-1])
        if ext_oid in seen:
            raise MalformedCertificate("duplicate extension %s" % ext_oid)
        seen.add(ext_oid)
        extensions.append((str(ext_oid), critical, value))
        if ext_oid == BASIC_CONSTRAINTS:
            bc = der.expect_sequence(der.der_decode(value), (0, 1, 2))
            if bc and bc[0].is_universal(der.BOOLEAN):
                is_ca = der.get_boolean(bc[0])
                if not is_ca:
                    raise MalformedCertificate("explicit DEFAULT FALSE cA flag is not DER")
        elif ext_oid == CRL_DISTRIBUTION_POINTS:
            _collect_uris(der.der_decode(value), crl_points)
        elif critical and strict:
            raise MalformedCertificate("unsupported critical extension %s" % ext_oid)
    return is_ca, tuple(crl_points), tuple(extensions)


def parse_certificate(data: bytes, strict: bool = True) -> CertificateView:
    """Parse DER certificate bytes.  ``strict`` restricts DN attributes to CN/OU/O/L/S/C."""
    try:
        root = der.der_decode(data)
        tbs, outer_alg, sig_bits = der.expect_sequence(root, (3,))
        parts = list(der.expect_sequence(tbs))
        version = 0
        if parts and parts[0].is_context(0) and parts[0].constructed:
            (version_node,) = parts.pop(0).children
            version = der.get_integer(version_node)
            if version not in (1, 2):
                raise MalformedCertificate("bad certificate version %d" % version)
        if len(parts) < 6:
            raise MalformedCertificate("TBSCertificate has too few fields")
        serial = der.get_integer(parts[0])
        if parts[1] != outer_alg:
            raise MalformedCertificate("inner and outer signature algorithms differ")
        sig_alg = SigAlg.from_node(outer_alg)
        if sig_alg.digest_alg is None:
            raise UnsupportedAlgorithm("certificate signature algorithm lacks a digest")
        issuer = DistinguishedName.from_node(parts[2], strict)
        not_before, not_after = (der.get_time(n) for n in der.expect_sequence(parts[3], (2,)))
        subject = DistinguishedName.from_node(parts[4], strict)
        spki = parts[5]
        key_alg = _key_alg_from_spki(spki)
        is_ca, crl_points, extensions = False, (), ()
        for extra in parts[6:]:
            if extra.is_context(3) and extra.constructed:
                if version != 2:
                    raise MalformedCertificate("extensions require a v3 certificate")
                is_ca, crl_points, extensions = _parse_extensions(extra, strict)
            elif not (extra.is_context(1) or extra.is_context(2)):
                raise MalformedCertificate("unexpected field in TBSCertificate")
        signature = der.get_bits(sig_bits)
    except DerError as exc:
        raise MalformedCertificate("bad certificate encoding: %s" % exc) from None
    except (ValueError, UnicodeDecodeError) as exc:
        raise MalformedCertificate(str(exc)) from None
    if not_before > not_after:
        raise MalformedCertificate("notBefore is after notAfter")
    return CertificateView(
        raw_der=bytes(data),
        raw_tbs=der.der_encode(tbs),
        version=version,
        serial=serial,
        subject=subject,
        issuer=issuer,
        not_before=not_before,
        not_after=not_after,
        key_alg=key_alg,
        public_key_der=der.der_encode(spki),
        is_ca=is_ca,
        sig_alg=sig_alg,
        signature=signature,
        crl_distribution_points=crl_points,
        extensions=extensions,
    )


def build_certificate(
    subject: DistinguishedName,
    issuer: DistinguishedName,
    public_key,
    signing_key,
    *,
    not_before: dt.datetime,
    not_after: dt.datetime,
    is_ca: bool = False,
    serial: Optional[int] = None,
    digest_alg: DigestAlg = DigestAlg.SHA256,
    crl_urls: Sequence[str] = (),
) -> CertificateView:
    """Create a v3 certificate for ``public_key`` signed by ``signing_key``."""
    from .algorithms import key_alg_of

    if serial is None:
        serial = secrets.randbits(63) | 1
    sig_alg = SigAlg.for_pair(key_alg_of(signing_key), digest_alg)
    spki = der.der_decode(public_key_der(public_key))
    extensions = []
    if is_ca:
        bc = der.der_encode(der.sequence(der.boolean(True)))
        extensions.append(der.sequence(der.object_identifier(BASIC_CONSTRAINTS), der.boolean(True), der.octet_string(bc)))
    if crl_urls:
        points = der.sequence_of(
            der.sequence(der.context(0, [der.context(0, [der.context(6, url.encode("ascii"), constructed=False)])]))
            for url in crl_urls
        )
        extensions.append(der.sequence(der.object_identifier(CRL_DISTRIBUTION_POINTS), der.octet_string(der.der_encode(points))))
    fields = [
        der.context(0, [der.integer(2)]),
        der.integer(serial),
        sig_alg.to_node(),
        issuer.to_node(),
        der.sequence(der.time_node(not_before), der.time_node(not_after)),
        subject.to_node(),
        spki,
    ]
    if extensions:
        fields.append(der.context(3, [der.sequence_of(extensions)]))
    tbs = der.sequence_of(fields)
    tbs_der = der.der_encode(tbs)
    signature = sign(signing_key, sig_alg.digest_alg, tbs_der)
    cert_der = der.der_encode(der.sequence(tbs, sig_alg.to_node(), der.bit_string(signature)))
    return parse_certificate(cert_der, strict=False)


# -- PEM ---------------------------------------------------------------------------

_PEM_RE = re.compile(
    r"-----BEGIN CERTIFICATE-----\s*(.*?)\s*-----END CERTIFICATE-----", re.DOTALL
)


def to_pem(cert_der: bytes) -> str:
    body = base64.b64encode(cert_der).decode("ascii")
    return "-----BEGIN CERTIFICATE-----\n%s\n-----END CERTIFICATE-----\n" % "\n".join(textwrap.wrap(body, 64))


def from_pem(text: str) -> "list[bytes]":
    out = []
    for m in _PEM_RE.finditer(text):
        try:
            out.append(base64.b64decode("".join(m.group(1).split()), validate=True))
        except ValueError:
            raise MalformedCertificate("bad base64 in PEM block") from None
    return out


def load_certificates(data: bytes, strict: bool = False) -> "list[CertificateView]":
    """Accept either PEM text (possibly several blocks) or a single DER certificate."""
    if data.lstrip().startswith(b"-----BEGIN"):
        blobs = from_pem(data.decode("ascii", "replace"))
        if not blobs:
            raise MalformedCertificate("no certificate in PEM input")
        return [parse_certificate(b, strict) for b in blobs]
    return [parse_certificate(data, strict)]


# -- paths ---------------------------------------------------------------------------

def verify_issued_by(cert: CertificateView, issuer: CertificateView) -> bool:
    """True if ``cert``'s signature verifies under ``issuer``'s public key."""
    if cert.sig_alg.key_alg is not issuer.key_alg:
        return False
    try:
        key = issuer.public_key
    except UnsupportedAlgorithm:
        return False
    return verify(key, cert.sig_alg.digest_alg, cert.raw_tbs, cert.signature)


@dataclass(frozen=True)
class CertPath:
    chain: "tuple[CertificateView, ...]"

    def __post_init__(self):
        chain = tuple(self.chain)
        object.__setattr__(self, "chain", chain)
        if not chain:
            raise ValueError("empty certificate path")

    def __len__(self):
        return len(self.chain)

    def __iter__(self):
        return iter(self.chain)

    @property
    def leaf(self) -> CertificateView:
        return self.chain[0]

    @property
    def anchor(self) -> CertificateView:
        return self.chain[-1]


def build_cert_path(leaf: CertificateView, candidates: Iterable[CertificateView], store) -> CertPath:
    """Link ``leaf`` to a certificate the store trusts.

    Either the leaf itself is trusted, or follow the unique verifying
    issuer through ``candidates`` and the store's certificates until a
    trusted one is reached.
    """
    if store.is_trusted(leaf):
        return CertPath((leaf,))
    pool = {}
    for cert in list(candidates) + list(store.certificates()):
        pool.setdefault(cert.raw_der, cert)
    chain = [leaf]
    seen = {leaf.raw_der}
    current = leaf
    while True:
        matches = [
            c for c in pool.values()
            if c.raw_der != current.raw_der and c.subject == current.issuer and verify_issued_by(current, c)
        ]
        if not matches:
            raise NoTrustAnchor("no trusted issuer found for %s" % current.subject)
        if len(matches) > 1:
            raise AmbiguousIssuer("%d certificates can issue %s" % (len(matches), current.subject))
        issuer = matches[0]
        if issuer.raw_der in seen:
            raise CycleDetected("certificate path loops back to %s" % issuer.subject)
        chain.append(issuer)
        seen.add(issuer.raw_der)
        if store.is_trusted(issuer):
            return CertPath(tuple(chain))
        current = issuer


class PathFailure(enum.Enum):
    NOT_A_CA = "NOT_A_CA"
    BAD_SIGNATURE = "BAD_SIGNATURE"
    EXPIRED = "EXPIRED"
    NOT_YET_VALID = "NOT_YET_VALID"
    ISSUER_MISMATCH = "ISSUER_MISMATCH"


@dataclass(frozen=True)
class PathVerdict:
    failures: "tuple[tuple[int, PathFailure], ...]" = ()

    @property
    def ok(self) -> bool:
        return not self.failures

    def reasons(self) -> "set[PathFailure]":
        return {r for _, r in self.failures}


def validate_cert_path(path: CertPath, at_time: dt.datetime) -> PathVerdict:
    """Check CA rights, signatures and validity windows along the path."""
    failures = []
    chain = path.chain
    for i, cert in enumerate(chain):
        if i > 0 and not cert.is_ca:
            failures.append((i, PathFailure.NOT_A_CA))
        if i + 1 < len(chain):
            issuer = chain[i + 1]
            if cert.issuer != issuer.subject:
                failures.append((i, PathFailure.ISSUER_MISMATCH))
            if not verify_issued_by(cert, issuer):
                failures.append((i, PathFailure.BAD_SIGNATURE))
        elif cert.self_issued and not verify_issued_by(cert, cert):
            failures.append((i, PathFailure.BAD_SIGNATURE))
        if at_time < cert.not_before:
            failures.append((i, PathFailure.NOT_YET_VALID))
        elif at_time > cert.not_after:
            failures.append((i, PathFailure.EXPIRED))
    return PathVerdict(tuple(failures))
