"""
CMS ``signed-data`` documents used as Signature Block Files.

The structure is the plain RFC 5652 form: version 1, issuer-and-serial
signer identification, no signed attributes, detached content.  The
signature is computed directly over the content bytes.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

from . import der
from .algorithms import DigestAlg, KeyAlg, SigAlg, digest_alg_from_node, digest_alg_node, key_alg_of, public_key_der, sign, verify
from .errors import (
    DerError,
    KeyAlgorithmMismatch,
    MalformedCertificate,
    MalformedCms,
    NonCanonical,
    SignerCertificateMissing,
    UnsupportedAlgorithm,
)
from .pki import CertificateView, DistinguishedName, parse_certificate

SIGNED_DATA = der.oid("1.2.840.113549.1.7.2")
DATA = der.oid("1.2.840.113549.1.7.1")


@dataclass(frozen=True)
class SignerInfoRec:
    issuer: DistinguishedName
    serial: int
    digest_alg: DigestAlg
    sig_alg: SigAlg
    encrypted_digest: bytes

    def matches(self, cert: CertificateView) -> bool:
        # byte-exact issuer comparison so re-tagged strings never resolve
        return cert.serial == self.serial and cert.issuer.to_der() == self.issuer.to_der()


@dataclass(frozen=True)
class SignedDataDoc:
    signer_infos: "tuple[SignerInfoRec, ...]"
    certificates: "tuple[CertificateView, ...]" = ()
    digest_algs: "frozenset[DigestAlg]" = frozenset()
    content: Optional[bytes] = None
    crls: "tuple[bytes, ...]" = ()
    version: int = 1
    content_type: der.ObjectIdentifier = DATA

    def __post_init__(self):
        object.__setattr__(self, "signer_infos", tuple(self.signer_infos))
        object.__setattr__(self, "certificates", tuple(self.certificates))
        object.__setattr__(self, "crls", tuple(bytes(c) for c in self.crls))
        algs = frozenset(self.digest_algs) or frozenset(si.digest_alg for si in self.signer_infos)
        object.__setattr__(self, "digest_algs", algs)
        if not self.signer_infos:
            raise MalformedCms("signed-data needs at least one signer")
        for si in self.signer_infos:
            if si.digest_alg not in algs:
                raise MalformedCms("signer digest algorithm missing from digestAlgorithms")

    @property
    def detached(self) -> bool:
        return self.content is None

    def signer_certificate(self, index: int) -> CertificateView:
        si = self.signer_infos[index]
        for cert in self.certificates:
            if si.matches(cert):
                return cert
        raise SignerCertificateMissing("no certificate for signer %d (%s, serial %d)" % (index, si.issuer, si.serial))


def build_signed_data(
    detached_content: bytes,
    identity,
    chain: Sequence[CertificateView] = None,
    digest_alg: DigestAlg = DigestAlg.SHA256,
) -> SignedDataDoc:
    """Sign ``detached_content`` with ``identity``'s key; ``chain[0]`` is the signer certificate."""
    chain = tuple(chain if chain is not None else identity.certificate_chain)
    if not chain:
        raise KeyAlgorithmMismatch("empty certificate chain")
    leaf = chain[0]
    key = identity.private_key
    key_alg = key_alg_of(key)
    if key_alg is not leaf.key_alg or key_alg is not getattr(identity, "algorithm", key_alg):
        raise KeyAlgorithmMismatch("key algorithm %s does not match certificate" % key_alg.value)
    if public_key_der(key) != leaf.public_key_der:
        raise KeyAlgorithmMismatch("private key does not belong to the signer certificate")
    sig_alg = SigAlg.RSA if key_alg is KeyAlg.RSA else SigAlg.for_pair(KeyAlg.DSA, digest_alg)
    signature = sign(key, digest_alg, detached_content)
    info = SignerInfoRec(leaf.issuer, leaf.serial, digest_alg, sig_alg, signature)
    return SignedDataDoc((info,), chain, frozenset((digest_alg,)))


def verify_signer_info(doc: SignedDataDoc, detached_content: bytes, signer_index: int = 0) -> bool:
    si = doc.signer_infos[signer_index]
    cert = doc.signer_certificate(signer_index)
    if si.sig_alg.key_alg is not cert.key_alg:
        return False
    if si.sig_alg.digest_alg not in (None, si.digest_alg):
        return False
    try:
        key = cert.public_key
    except UnsupportedAlgorithm:
        return False
    return verify(key, si.digest_alg, detached_content, si.encrypted_digest)


# -- encoding ----------------------------------------------------------------------

def _signer_info_node(si: SignerInfoRec) -> der.DerNode:
    return der.sequence(
        der.integer(1),
        der.sequence(si.issuer.to_node(), der.integer(si.serial)),
        digest_alg_node(si.digest_alg),
        si.sig_alg.to_node(),
        der.octet_string(si.encrypted_digest),
    )


def encode_signed_data(doc: SignedDataDoc) -> bytes:
    encap = [der.object_identifier(doc.content_type)]
    if doc.content is not None:
        encap.append(der.context(0, [der.octet_string(doc.content)]))
    fields = [
        der.integer(doc.version),
        der.set_of(digest_alg_node(a) for a in doc.digest_algs),
        der.sequence_of(encap),
    ]
    if doc.certificates:
        # chain order (leaf first) is kept rather than DER SET OF sorting
        fields.append(der.context(0, [der.der_decode(c.raw_der) for c in doc.certificates]))
    if doc.crls:
        fields.append(der.context(1, [der.der_decode(c) for c in doc.crls]))
    fields.append(der.set_of((_signer_info_node(si) for si in doc.signer_infos), sort=False))
    content_info = der.sequence(
        der.object_identifier(SIGNED_DATA),
        der.context(0, [der.sequence_of(fields)]),
    )
    return der.der_encode(content_info)


# -- decoding ----------------------------------------------------------------------

def _decode_signer_info(node: der.DerNode) -> SignerInfoRec:
    parts = der.expect_sequence(node)
    if len(parts) != 5:
        raise MalformedCms("signed or unsigned attributes are not supported")
    version, sid, digest, sig_alg, signature = parts
    if der.get_integer(version) != 1:
        raise MalformedCms("SignerInfo version must be 1")
    if not sid.is_universal(der.SEQUENCE):
        raise MalformedCms("signer must be identified by issuer and serial number")
    issuer_node, serial_node = der.expect_sequence(sid, (2,))
    try:
        issuer = DistinguishedName.from_node(issuer_node, strict=True)
    except MalformedCertificate as exc:
        raise MalformedCms("bad signer issuer: %s" % exc) from None
    return SignerInfoRec(
        issuer=issuer,
        serial=der.get_integer(serial_node),
        digest_alg=digest_alg_from_node(digest),
        sig_alg=SigAlg.from_node(sig_alg),
        encrypted_digest=der.get_octets(signature),
    )


def decode_signed_data(raw: bytes, strict: bool = True) -> SignedDataDoc:
    """Decode a ContentInfo-wrapped signed-data block.

    Raises NonCanonical for non-DER input (including any encoding that would
    not be reproduced byte for byte by :func:`encode_signed_data`).
    """
    root = der.der_decode(raw)
    try:
        outer = der.expect_sequence(root, (2,))
        if der.get_oid(outer[0]) != SIGNED_DATA:
            raise MalformedCms("content type is not signed-data")
        if not (outer[1].is_context(0) and outer[1].constructed and len(outer[1].children) == 1):
            raise MalformedCms("missing [0] signed-data content")
        fields = list(der.expect_sequence(outer[1].children[0]))
        if len(fields) < 4:
            raise MalformedCms("signed-data has too few fields")
        version = der.get_integer(fields.pop(0))
        if version != 1:
            raise MalformedCms("signed-data version must be 1")
        digest_algs = frozenset(digest_alg_from_node(n) for n in der.expect_set(fields.pop(0)))
        encap = der.expect_sequence(fields.pop(0), (1, 2))
        content_type = der.get_oid(encap[0])
        if content_type != DATA:
            raise MalformedCms("encapsulated content type must be id-data")
        content = None
        if len(encap) == 2:
            if not (encap[1].is_context(0) and encap[1].constructed and len(encap[1].children) == 1):
                raise MalformedCms("bad encapsulated content")
            content = der.get_octets(encap[1].children[0])
        certificates = ()
        crls = ()
        if fields and fields[0].is_context(0) and fields[0].constructed:
            certificates = tuple(
                parse_certificate(der.der_encode(c), strict=strict) for c in fields.pop(0).children
            )
        if fields and fields[0].is_context(1) and fields[0].constructed:
            crls = tuple(der.der_encode(c) for c in fields.pop(0).children)
        if len(fields) != 1:
            raise MalformedCms("unexpected fields in signed-data")
        signer_infos = tuple(_decode_signer_info(n) for n in der.expect_set(fields[0]))
        doc = SignedDataDoc(signer_infos, certificates, digest_algs, content, crls, version, content_type)
    except (DerError, MalformedCertificate) as exc:
        raise MalformedCms(str(exc)) from None
    if encode_signed_data(doc) != bytes(raw):
        raise NonCanonical("signed-data does not re-encode to the same bytes")
    return doc
