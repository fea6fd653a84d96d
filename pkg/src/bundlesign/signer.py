"""
Bundle signing: manifest, per-signer Signature File and Signature Block
File, assembled with all metadata ahead of the resources.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

from .algorithms import DigestAlg, KeyAlg
from .archive import (
    MANIFEST_PATH,
    ArchiveEntry,
    BundleArchive,
    Compression,
    EntryClass,
    check_entry_order,
    read_bundle,
    signer_stem,
    write_bundle,
)
from .cms import build_signed_data, encode_signed_data
from .errors import (
    DuplicateSigner,
    InvalidAlias,
    MalformedManifest,
    StaleManifest,
    UnsignableInput,
)
from .manifest import (
    generate_manifest,
    generate_signature_file,
    parse_manifest,
    parse_sections,
    serialize_attributes,
    verify_manifest_coverage,
)
from .truststore import SigningIdentity, get_signing_identity, open_store

_ALIAS_RE = re.compile(r"[A-Za-z0-9_-]+")

CREATED_BY = ("Created-By", "bundlesign")


@dataclass(frozen=True)
class SignRequest:
    input: BundleArchive
    identity: SigningIdentity
    digest_alg: DigestAlg = DigestAlg.SHA256


def signer_file_names(alias: str, algorithm: KeyAlg) -> "tuple[str, str]":
    if not isinstance(alias, str) or not _ALIAS_RE.fullmatch(alias):
        raise InvalidAlias("alias must match [A-Za-z0-9_-]+: %r" % (alias,))
    stem = "META-INF/" + alias.upper()
    return stem + ".SF", stem + "." + KeyAlg(algorithm).value


def _unsigned_manifest(bundle: BundleArchive, alg: DigestAlg) -> bytes:
    existing = bundle.get(MANIFEST_PATH) or next(
        (e for e in bundle if e.kind is EntryClass.MANIFEST), None
    )
    extra = [CREATED_BY]
    if existing is not None:
        # keep the bundle's own main headers; per-entry sections are regenerated
        try:
            main = parse_sections(existing.content)[0]
        except MalformedManifest as exc:
            raise UnsignableInput("existing manifest is unreadable: %s" % exc) from None
        extra = [(k, v) for k, v in main.attributes]
    return serialize_attributes(generate_manifest(bundle, alg, extra))


def sign_bundle(req: SignRequest) -> BundleArchive:
    """Add ``req.identity`` as a signer of ``req.input``.

    Unsigned input gets a fresh manifest.  Input already signed by other
    signers keeps its manifest byte for byte, which must still match the
    resources.
    """
    bundle = req.input
    identity = req.identity
    alg = req.digest_alg
    sf_path, block_path = signer_file_names(identity.alias, identity.algorithm)

    pairs = [e for e in bundle if e.kind in (EntryClass.SIGNATURE_FILE, EntryClass.SIGNATURE_BLOCK)]
    resources = [e for e in bundle if e.kind is EntryClass.RESOURCE]
    if not pairs:
        manifest_bytes = _unsigned_manifest(bundle, alg)
    else:
        order = check_entry_order(bundle)
        if not order.ok:
            raise UnsignableInput("signed input has bad metadata order: %s" % order.detail)
        if any(signer_stem(e.path) == identity.alias.upper() for e in pairs):
            raise DuplicateSigner("%s has already signed this bundle" % identity.alias.upper())
        manifest_bytes = bundle[0].content
        try:
            doc = parse_manifest(manifest_bytes)
        except MalformedManifest as exc:
            raise StaleManifest("existing manifest is unreadable: %s" % exc) from None
        coverage = verify_manifest_coverage(bundle, doc)
        if not coverage.ok:
            raise StaleManifest("existing manifest no longer matches the resources")
        if doc.names != [e.path for e in resources]:
            raise StaleManifest("resource order differs from manifest order")

    sf_bytes = serialize_attributes(generate_signature_file(manifest_bytes, alg, [CREATED_BY]))
    block = encode_signed_data(
        build_signed_data(sf_bytes, identity, identity.certificate_chain, digest_alg=alg)
    )
    entries = [ArchiveEntry(MANIFEST_PATH, manifest_bytes, Compression.DEFLATED)]
    entries += pairs
    entries.append(ArchiveEntry(sf_path, sf_bytes, Compression.DEFLATED))
    entries.append(ArchiveEntry(block_path, block, Compression.STORED))
    entries += resources
    return BundleArchive(tuple(entries))


def sign_file(in_path, out_path, store_path, alias: str, store_password: str, key_password: str,
              digest_alg: DigestAlg = DigestAlg.SHA256) -> BundleArchive:
    """File-level signing entry point: read, sign with ``alias`` from the store, write."""
    in_path, out_path = Path(in_path), Path(out_path)
    if in_path.resolve() == out_path.resolve():
        raise ValueError("input and output bundle must be different files")
    store = open_store(store_path, store_password)
    identity = get_signing_identity(store, alias, key_password)
    signed = sign_bundle(SignRequest(read_bundle(in_path.read_bytes()), identity, digest_alg))
    out_path.write_bytes(write_bundle(signed))
    return signed
