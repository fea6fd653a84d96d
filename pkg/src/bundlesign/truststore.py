"""
Password-protected certificate store.

File layout::

    b"SFXS1\\n" || DER(StoreBody) || HMAC-SHA256(32 bytes)

    StoreBody  ::= SEQUENCE { version INTEGER (1), salt OCTET STRING (16),
                              iterations INTEGER, entries SEQUENCE OF Entry }
    Entry      ::= SEQUENCE { alias UTF8String, kind ENUMERATED,
                              certificate Certificate, key [0] EncryptedKey OPTIONAL }
    EncryptedKey ::= SEQUENCE { salt OCTET STRING, iterations INTEGER,
                                nonce OCTET STRING, ciphertext OCTET STRING }

The MAC key is PBKDF2-HMAC-SHA256(store password, salt); it covers the
magic and the whole DER body.  Private keys are PKCS#8 DER encrypted with
AES-256-GCM under PBKDF2-HMAC-SHA256(key password, key salt), with the
alias as associated data.
"""

from __future__ import annotations

import datetime as dt
import enum
import hashlib
import hmac
import os
import re
import secrets
import tempfile
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterator, Optional

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from . import der
from .algorithms import (
    DigestAlg,
    KeyAlg,
    generate_private_key,
    key_alg_of,
    private_key_from_pkcs8,
    private_key_to_pkcs8,
    public_key_der,
)
from .errors import (
    AliasExists,
    BadKeyPassword,
    BadPassword,
    DerError,
    IoFailure,
    IssuerNotCa,
    MalformedCertificate,
    MalformedStore,
    NoSuchAlias,
    NotAKeyPair,
    UnsupportedAlgorithm,
)
from .pki import CertificateView, DistinguishedName, build_certificate, parse_certificate, verify_issued_by

MAGIC = b"SFXS1\n"
MAC_SIZE = 32
SALT_SIZE = 16
NONCE_SIZE = 12
DEFAULT_ITERATIONS = 100_000
MIN_ITERATIONS = 100_000
MAX_ITERATIONS = 10_000_000

_ALIAS_RE = re.compile(r"[A-Za-z0-9_-]+")


class EntryKind(enum.IntEnum):
    TRUSTED_CERT = 0
    UNTRUSTED_CERT = 1
    KEY_PAIR = 2


@dataclass(frozen=True)
class EncryptedKey:
    salt: bytes
    iterations: int
    nonce: bytes
    ciphertext: bytes


@dataclass(frozen=True)
class StoreEntry:
    alias: str
    kind: EntryKind
    certificate: CertificateView
    encrypted_key: Optional[EncryptedKey] = None

    def __post_init__(self):
        object.__setattr__(self, "alias", normalize_alias(self.alias))
        object.__setattr__(self, "kind", EntryKind(self.kind))
        if (self.kind is EntryKind.KEY_PAIR) != (self.encrypted_key is not None):
            raise ValueError("key_pair entries, and only those, carry an encrypted key")


@dataclass(frozen=True)
class SigningIdentity:
    alias: str
    certificate_chain: "tuple[CertificateView, ...]"
    private_key: object
    algorithm: KeyAlg

    def __post_init__(self):
        chain = tuple(self.certificate_chain)
        object.__setattr__(self, "certificate_chain", chain)
        if not chain:
            raise ValueError("signing identity needs a certificate")
        if public_key_der(self.private_key) != chain[0].public_key_der:
            raise ValueError("private key does not match the leaf certificate")

    @property
    def certificate(self) -> CertificateView:
        return self.certificate_chain[0]


def normalize_alias(alias: str) -> str:
    if not isinstance(alias, str) or not _ALIAS_RE.fullmatch(alias):
        raise ValueError("alias must match [A-Za-z0-9_-]+: %r" % (alias,))
    return alias.lower()


@dataclass(frozen=True)
class TrustStore:
    """Immutable snapshot; every mutator returns a new store."""

    entries: "tuple[StoreEntry, ...]" = ()

    def __post_init__(self):
        entries = tuple(self.entries)
        object.__setattr__(self, "entries", entries)
        aliases = [e.alias for e in entries]
        if len(set(aliases)) != len(aliases):
            raise AliasExists("duplicate alias in store")

    def __iter__(self) -> Iterator[StoreEntry]:
        return iter(self.entries)

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, alias: str) -> bool:
        return self.find(alias) is not None

    def find(self, alias: str) -> Optional[StoreEntry]:
        key = alias.lower()
        for entry in self.entries:
            if entry.alias == key:
                return entry
        return None

    def get(self, alias: str) -> StoreEntry:
        entry = self.find(alias)
        if entry is None:
            raise NoSuchAlias(alias)
        return entry

    @property
    def aliases(self) -> "list[str]":
        return [e.alias for e in self.entries]

    def certificates(self) -> "list[CertificateView]":
        return [e.certificate for e in self.entries]

    def anchors(self) -> "list[CertificateView]":
        return [e.certificate for e in self.entries if e.kind is not EntryKind.UNTRUSTED_CERT]

    def is_trusted(self, cert: CertificateView) -> bool:
        """Trusted certificates and the store owner's own key-pair certificates are anchors."""
        return any(a.raw_der == cert.raw_der for a in self.anchors())

    def add_entry(self, entry: StoreEntry) -> "TrustStore":
        if entry.alias in self:
            raise AliasExists("alias %r already exists" % entry.alias)
        return TrustStore(self.entries + (entry,))

    def add_certificate(self, alias: str, cert: CertificateView, trusted: bool) -> "TrustStore":
        kind = EntryKind.TRUSTED_CERT if trusted else EntryKind.UNTRUSTED_CERT
        return self.add_entry(StoreEntry(alias, kind, cert))

    def mark_trusted(self, alias: str) -> "TrustStore":
        entry = self.get(alias)
        if entry.kind is not EntryKind.UNTRUSTED_CERT:
            return self
        return self._replace(replace(entry, kind=EntryKind.TRUSTED_CERT))

    def remove(self, alias: str) -> "TrustStore":
        entry = self.get(alias)
        return TrustStore(tuple(e for e in self.entries if e is not entry))

    def _replace(self, new: StoreEntry) -> "TrustStore":
        return TrustStore(tuple(new if e.alias == new.alias else e for e in self.entries))


# -- key encryption --------------------------------------------------------------

def _derive(password: str, salt: bytes, iterations: int) -> bytes:
    return hashlib.pbkdf2_hmac("sha256", password.encode("utf-8"), salt, iterations, dklen=32)


def encrypt_private_key(key, alias: str, password: str, iterations: int = DEFAULT_ITERATIONS) -> EncryptedKey:
    salt = secrets.token_bytes(SALT_SIZE)
    nonce = secrets.token_bytes(NONCE_SIZE)
    aead = AESGCM(_derive(password, salt, iterations))
    ciphertext = aead.encrypt(nonce, private_key_to_pkcs8(key), normalize_alias(alias).encode())
    return EncryptedKey(salt, iterations, nonce, ciphertext)


def decrypt_private_key(blob: EncryptedKey, alias: str, password: str):
    aead = AESGCM(_derive(password, blob.salt, blob.iterations))
    try:
        plaintext = aead.decrypt(blob.nonce, blob.ciphertext, normalize_alias(alias).encode())
    except InvalidTag:
        raise BadKeyPassword("wrong password for key %r" % alias) from None
    return private_key_from_pkcs8(plaintext)


# -- serialization ------------------------------------------------------------------

def _entry_node(entry: StoreEntry) -> der.DerNode:
    fields = [
        der.utf8_string(entry.alias),
        der.universal(der.ENUMERATED, der.integer(int(entry.kind)).payload),
        der.der_decode(entry.certificate.raw_der),
    ]
    if entry.encrypted_key is not None:
        k = entry.encrypted_key
        fields.append(der.context(0, [
            der.octet_string(k.salt),
            der.integer(k.iterations),
            der.octet_string(k.nonce),
            der.octet_string(k.ciphertext),
        ]))
    return der.sequence_of(fields)


def serialize_store(store: TrustStore, password: str, *, salt: Optional[bytes] = None,
                    iterations: int = DEFAULT_ITERATIONS) -> bytes:
    salt = secrets.token_bytes(SALT_SIZE) if salt is None else salt
    if len(salt) != SALT_SIZE:
        raise ValueError("salt must be %d bytes" % SALT_SIZE)
    _check_iterations(iterations)
    body = der.sequence(
        der.integer(1),
        der.octet_string(salt),
        der.integer(iterations),
        der.sequence_of(_entry_node(e) for e in store.entries),
    )
    data = MAGIC + der.der_encode(body)
    return data + hmac.new(_derive(password, salt, iterations), data, hashlib.sha256).digest()


def _check_iterations(n: int) -> int:
    if not MIN_ITERATIONS <= n <= MAX_ITERATIONS:
        raise MalformedStore("PBKDF2 iteration count %d out of range" % n)
    return n


def _parse_entry(node: der.DerNode) -> StoreEntry:
    parts = der.expect_sequence(node, (3, 4))
    if not parts[0].is_universal(der.UTF8_STRING) or not parts[1].is_universal(der.ENUMERATED):
        raise MalformedStore("bad entry header")
    alias = parts[0].payload.decode("utf-8")
    kind = EntryKind(int.from_bytes(parts[1].payload, "big", signed=True))
    cert = parse_certificate(der.der_encode(parts[2]), strict=False)
    key = None
    if len(parts) == 4:
        if not parts[3].is_context(0) or not parts[3].constructed or len(parts[3].children) != 4:
            raise MalformedStore("bad encrypted key")
        salt, iters, nonce, ct = parts[3].children
        key = EncryptedKey(der.get_octets(salt), _check_iterations(der.get_integer(iters)),
                           der.get_octets(nonce), der.get_octets(ct))
    if normalize_alias(alias) != alias:
        raise MalformedStore("alias %r is not canonical" % alias)
    return StoreEntry(alias, kind, cert, key)


def deserialize_store(data: bytes, password: str) -> TrustStore:
    if not data.startswith(MAGIC) or len(data) < len(MAGIC) + MAC_SIZE + 2:
        raise MalformedStore("not a store file")
    signed, mac = data[:-MAC_SIZE], data[-MAC_SIZE:]
    try:
        body = der.der_decode(signed[len(MAGIC):])
        version, salt_node, iter_node, entries_node = der.expect_sequence(body, (4,))
        if der.get_integer(version) != 1:
            raise MalformedStore("unsupported store version")
        salt = der.get_octets(salt_node)
        if len(salt) != SALT_SIZE:
            raise MalformedStore("bad salt length")
        iterations = _check_iterations(der.get_integer(iter_node))
        der.expect_sequence(entries_node)
    except DerError as exc:
        raise MalformedStore("corrupt store: %s" % exc) from None
    expected = hmac.new(_derive(password, salt, iterations), signed, hashlib.sha256).digest()
    if not hmac.compare_digest(expected, mac):
        raise BadPassword("store password incorrect or store tampered with")
    try:
        return TrustStore(tuple(_parse_entry(n) for n in entries_node.children))
    except (DerError, MalformedCertificate, UnsupportedAlgorithm, ValueError, AliasExists) as exc:
        raise MalformedStore("corrupt store entry: %s" % exc) from None


def open_store(path, password: str) -> TrustStore:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    return deserialize_store(data, password)


def save_store(store: TrustStore, path, password: str) -> None:
    """Write atomically with a fresh salt."""
    data = serialize_store(store, password)
    path = Path(path)
    try:
        fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=".%s." % path.name)
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(data)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
    except OSError as exc:
        raise IoFailure(str(exc)) from exc


# -- identities ----------------------------------------------------------------------

def generate_key_pair(
    store: TrustStore,
    alias: str,
    subject: DistinguishedName,
    algorithm: KeyAlg,
    validity_days: int,
    issuer: Optional[str] = None,
    key_password: str = "",
    *,
    is_ca: bool = False,
    issuer_key_password: Optional[str] = None,
    key_size: Optional[int] = None,
    digest_alg: DigestAlg = DigestAlg.SHA256,
    not_before: Optional[dt.datetime] = None,
    crl_urls=(),
) -> "tuple[TrustStore, CertificateView]":
    """Create a key pair and its certificate; returns the new store and the certificate.

    Without ``issuer`` the certificate is self-signed.  With ``issuer`` it is
    signed by that key-pair entry, which must be a CA.
    """
    alias = normalize_alias(alias)
    if alias in store:
        raise AliasExists("alias %r already exists" % alias)
    algorithm = KeyAlg(algorithm)
    if not_before is None:
        not_before = dt.datetime.now(dt.timezone.utc).replace(microsecond=0)
    not_after = not_before + dt.timedelta(days=validity_days)
    key = generate_private_key(algorithm, key_size)
    if issuer is None:
        issuer_dn, signing_key = subject, key
    else:
        issuer_entry = store.get(issuer)
        if issuer_entry.kind is not EntryKind.KEY_PAIR:
            raise NotAKeyPair("issuer %r has no private key" % issuer)
        if not issuer_entry.certificate.is_ca:
            raise IssuerNotCa("issuer %r is not a certification authority" % issuer)
        signing_key = decrypt_private_key(
            issuer_entry.encrypted_key, issuer_entry.alias,
            key_password if issuer_key_password is None else issuer_key_password,
        )
        issuer_dn = issuer_entry.certificate.subject
    cert = build_certificate(
        subject, issuer_dn, key, signing_key,
        not_before=not_before, not_after=not_after, is_ca=is_ca,
        digest_alg=digest_alg, crl_urls=crl_urls,
    )
    entry = StoreEntry(alias, EntryKind.KEY_PAIR, cert, encrypt_private_key(key, alias, key_password))
    return store.add_entry(entry), cert


def assemble_chain(store: TrustStore, leaf: CertificateView) -> "tuple[CertificateView, ...]":
    """Follow issuer links through the store from ``leaf`` up to a self-signed certificate."""
    chain = [leaf]
    seen = {leaf.raw_der}
    current = leaf
    while not current.self_issued:
        issuer = next(
            (c for c in store.certificates()
             if c.raw_der not in seen and c.subject == current.issuer and verify_issued_by(current, c)),
            None,
        )
        if issuer is None:
            break
        chain.append(issuer)
        seen.add(issuer.raw_der)
        current = issuer
    return tuple(chain)


def get_signing_identity(store: TrustStore, alias: str, key_password: str) -> SigningIdentity:
    entry = store.get(alias)
    if entry.kind is not EntryKind.KEY_PAIR:
        raise NotAKeyPair("alias %r is not a key pair" % alias)
    key = decrypt_private_key(entry.encrypted_key, entry.alias, key_password)
    return SigningIdentity(entry.alias, assemble_chain(store, entry.certificate), key, key_alg_of(key))


def new_store() -> TrustStore:
    return TrustStore(())
