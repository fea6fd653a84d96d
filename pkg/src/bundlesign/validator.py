"""
Bundle signature validation.

Three steps, in order:

1. authenticate every signer (certificate path to a trusted store entry);
   if nobody authenticates, stop without touching the resources;
2. check metadata and resource ordering;
3. check coherence: block signature over the .SF, .SF digest of the
   manifest, manifest digests of every resource with nothing added or
   missing.
"""

from __future__ import annotations

import datetime as dt
import enum
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .archive import (
    BundleArchive,
    EntryClass,
    block_extension,
    check_entry_order,
    read_bundle,
    signer_stem,
)
from .cms import SignedDataDoc, decode_signed_data, verify_signer_info
from .errors import (
    AmbiguousIssuer,
    BundleSignError,
    CycleDetected,
    MalformedCms,
    MalformedManifest,
    NoTrustAnchor,
)
from .manifest import parse_manifest, parse_signature_file, verify_manifest_coverage
from .pki import DistinguishedName, PathFailure, build_cert_path, validate_cert_path, verify_issued_by
from .truststore import TrustStore, open_store

REPORT_VERSION = 1


class Verdict(enum.Enum):
    VALID = "VALID"
    INVALID = "INVALID"


class ReasonCode(enum.Enum):
    UNSIGNED_BUNDLE = "UNSIGNED_BUNDLE"
    BAD_ORDER = "BAD_ORDER"
    UNKNOWN_SIGNER = "UNKNOWN_SIGNER"
    CERT_PATH_INVALID = "CERT_PATH_INVALID"
    EXPIRED_CERT = "EXPIRED_CERT"
    BAD_BLOCK_SIGNATURE = "BAD_BLOCK_SIGNATURE"
    MANIFEST_DIGEST_MISMATCH = "MANIFEST_DIGEST_MISMATCH"
    RESOURCE_DIGEST_MISMATCH = "RESOURCE_DIGEST_MISMATCH"
    MISSING_MANIFEST_ENTRY = "MISSING_MANIFEST_ENTRY"
    EXTRA_MANIFEST_ENTRY = "EXTRA_MANIFEST_ENTRY"
    MALFORMED_METADATA = "MALFORMED_METADATA"


class TrustMode(enum.Enum):
    ALL_SIGNERS = "all-signers"
    ANY_SIGNER = "any-signer"


@dataclass(frozen=True)
class Failure:
    code: ReasonCode
    detail: str
    path: Optional[str] = None


@dataclass(frozen=True)
class SignerStatus:
    alias: str
    dn: Optional[DistinguishedName]
    path_ok: bool


@dataclass(frozen=True)
class ValidationReport:
    verdict: Verdict
    signers: "tuple[SignerStatus, ...]" = ()
    failures: "tuple[Failure, ...]" = ()

    @property
    def valid(self) -> bool:
        return self.verdict is Verdict.VALID

    @property
    def codes(self) -> "set[ReasonCode]":
        return {f.code for f in self.failures}

    def to_dict(self) -> dict:
        return {
            "report-version": REPORT_VERSION,
            "verdict": self.verdict.value,
            "signers": [
                {"alias": s.alias, "dn": None if s.dn is None else str(s.dn), "path_ok": s.path_ok}
                for s in self.signers
            ],
            "failures": [
                {"code": f.code.value, "detail": f.detail, "path": f.path} for f in self.failures
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_text(self) -> str:
        lines = ["report-version: %d" % REPORT_VERSION, "verdict: %s" % self.verdict.value]
        for s in self.signers:
            lines.append("signer: %s\t%s\t%s" % (s.alias, s.dn if s.dn is not None else "-",
                                                  "path-ok" if s.path_ok else "path-failed"))
        for f in self.failures:
            lines.append("failure: %s\t%s\t%s" % (f.code.value, f.path or "-", f.detail))
        return "\n".join(lines) + "\n"


@dataclass
class _Signer:
    stem: str
    sf_path: Optional[str] = None
    block_path: Optional[str] = None
    doc: Optional[SignedDataDoc] = None
    dn: Optional[DistinguishedName] = None
    authenticated: bool = False
    failures: list = field(default_factory=list)


_PATH_CODES = {
    PathFailure.EXPIRED: ReasonCode.EXPIRED_CERT,
    PathFailure.NOT_YET_VALID: ReasonCode.EXPIRED_CERT,
}


def _stray_certificates(doc: SignedDataDoc, leaf) -> list:
    """Certificates in the block that neither are the signer's nor issue another one in it."""
    certs = doc.certificates
    return [
        c for c in certs
        if c.raw_der != leaf.raw_der and not any(
            o.raw_der != c.raw_der and o.issuer == c.subject and verify_issued_by(o, c) for o in certs
        )
    ]


def _authenticate(signer: _Signer, bundle: BundleArchive, store: TrustStore, at_time: dt.datetime) -> None:
    path = signer.block_path
    try:
        doc = decode_signed_data(bundle.get(path).content)
    except (BundleSignError, ValueError) as exc:
        signer.failures.append(Failure(ReasonCode.MALFORMED_METADATA, "undecodable block: %s" % exc, path))
        return
    if len(doc.signer_infos) != 1 or doc.content is not None:
        signer.failures.append(Failure(ReasonCode.MALFORMED_METADATA, "block must hold one detached signature", path))
        return
    try:
        leaf = doc.signer_certificate(0)
    except MalformedCms as exc:
        signer.failures.append(Failure(ReasonCode.MALFORMED_METADATA, str(exc), path))
        return
    if block_extension(path) != leaf.key_alg.value:
        signer.failures.append(Failure(ReasonCode.MALFORMED_METADATA, "block extension does not match key algorithm", path))
        return
    signer.doc = doc
    signer.dn = leaf.subject
    stray = _stray_certificates(doc, leaf)
    if stray:
        signer.failures.append(Failure(ReasonCode.CERT_PATH_INVALID,
                                       "block carries %s outside the signer's chain" % stray[0].subject, path))
        return
    try:
        cert_path = build_cert_path(leaf, doc.certificates, store)
    except NoTrustAnchor as exc:
        signer.failures.append(Failure(ReasonCode.UNKNOWN_SIGNER, str(exc), path))
        return
    except (AmbiguousIssuer, CycleDetected) as exc:
        signer.failures.append(Failure(ReasonCode.CERT_PATH_INVALID, str(exc), path))
        return
    verdict = validate_cert_path(cert_path, at_time)
    for index, reason in verdict.failures:
        code = _PATH_CODES.get(reason, ReasonCode.CERT_PATH_INVALID)
        cert = cert_path.chain[index]
        signer.failures.append(Failure(code, "%s at %s" % (reason.value, cert.subject), path))
    signer.authenticated = verdict.ok


def _collect_signers(bundle: BundleArchive) -> "tuple[list[_Signer], list[Failure]]":
    signers = {}
    problems = []
    for entry in bundle:
        kind = entry.kind
        if kind not in (EntryClass.SIGNATURE_FILE, EntryClass.SIGNATURE_BLOCK):
            continue
        stem = signer_stem(entry.path)
        s = signers.setdefault(stem, _Signer(stem))
        slot = "sf_path" if kind is EntryClass.SIGNATURE_FILE else "block_path"
        if getattr(s, slot) is not None:
            problems.append(Failure(ReasonCode.MALFORMED_METADATA, "duplicate signer file", entry.path))
            continue
        setattr(s, slot, entry.path)
    complete = []
    for s in signers.values():
        if s.sf_path is None or s.block_path is None:
            problems.append(Failure(ReasonCode.MALFORMED_METADATA, "signer %s lacks a .SF or block file" % s.stem,
                                    s.sf_path or s.block_path))
        else:
            complete.append(s)
    return complete, problems


def _check_order(bundle: BundleArchive, failures: list) -> None:
    order = check_entry_order(bundle)
    if not order.ok:
        path = bundle[order.index].path if order.index is not None and order.index < len(bundle) else None
        failures.append(Failure(ReasonCode.BAD_ORDER, "%s: %s" % (order.reason.value, order.detail), path))


def _check_coherence(bundle: BundleArchive, signers: "list[_Signer]", failures: list) -> None:
    manifest_entry = next((e for e in bundle if e.kind is EntryClass.MANIFEST), None)
    manifest_bytes = manifest_entry.content if manifest_entry is not None else None
    for s in signers:
        sf_bytes = bundle.get(s.sf_path).content
        if s.doc is not None and not verify_signer_info(s.doc, sf_bytes, 0):
            failures.append(Failure(ReasonCode.BAD_BLOCK_SIGNATURE, "block signature does not match .SF", s.block_path))
        try:
            sf = parse_signature_file(sf_bytes)
        except MalformedManifest as exc:
            failures.append(Failure(ReasonCode.MALFORMED_METADATA, str(exc), s.sf_path))
            continue
        alg, expected = sf.manifest_digest
        if manifest_bytes is None or alg.digest_b64(manifest_bytes) != expected:
            failures.append(Failure(ReasonCode.MANIFEST_DIGEST_MISMATCH, "manifest digest differs", s.sf_path))
    if manifest_entry is None:
        failures.append(Failure(ReasonCode.MALFORMED_METADATA, "no manifest"))
        return
    try:
        doc = parse_manifest(manifest_bytes)
    except MalformedManifest as exc:
        failures.append(Failure(ReasonCode.MALFORMED_METADATA, str(exc), manifest_entry.path))
        return
    coverage = verify_manifest_coverage(bundle, doc)
    for p in coverage.unlisted_resources:
        failures.append(Failure(ReasonCode.MISSING_MANIFEST_ENTRY, "resource not listed in manifest", p))
    for p in coverage.missing_resources:
        failures.append(Failure(ReasonCode.EXTRA_MANIFEST_ENTRY, "manifest lists a resource that is absent", p))
    for p in coverage.digest_mismatches:
        failures.append(Failure(ReasonCode.RESOURCE_DIGEST_MISMATCH, "resource digest differs", p))
    if coverage.ok:
        listed = [e.path for e in bundle if e.kind is EntryClass.RESOURCE]
        if listed != doc.names:
            first = next(i for i, (a, b) in enumerate(zip(listed, doc.names)) if a != b)
            failures.append(Failure(ReasonCode.BAD_ORDER, "resource order differs from manifest order", listed[first]))


def check_bundle(
    bundle: BundleArchive,
    store: TrustStore,
    at_time: Optional[dt.datetime] = None,
    mode: TrustMode = TrustMode.ALL_SIGNERS,
) -> ValidationReport:
    if at_time is None:
        at_time = dt.datetime.now(dt.timezone.utc)
    mode = TrustMode(mode)
    signers, failures = _collect_signers(bundle)
    if not signers and not failures:
        return ValidationReport(Verdict.INVALID, (), (Failure(ReasonCode.UNSIGNED_BUNDLE, "bundle carries no signature"),))

    # step 1: authentication
    for s in signers:
        _authenticate(s, bundle, store, at_time)
    authenticated = [s for s in signers if s.authenticated]
    statuses = tuple(SignerStatus(s.stem.lower(), s.dn, s.authenticated) for s in signers)
    for s in signers:
        if mode is TrustMode.ALL_SIGNERS or s.doc is None or not authenticated:
            failures.extend(s.failures)
    if not authenticated:
        return _report(bundle, statuses, failures)

    # step 2: order
    _check_order(bundle, failures)

    # step 3: coherence of every signer's metadata
    _check_coherence(bundle, signers, failures)
    return _report(bundle, statuses, failures)


def _report(bundle: BundleArchive, statuses, failures) -> ValidationReport:
    n = len(bundle)
    positions = {p: i for i, p in enumerate(bundle.paths)}
    ordered = sorted(failures, key=lambda f: positions.get(f.path, n) if f.path is not None else -1)
    ok = not ordered and any(s.path_ok for s in statuses)
    return ValidationReport(Verdict.VALID if ok else Verdict.INVALID, statuses, tuple(ordered))


def check_file(path, store_path, store_password: str, at_time: Optional[dt.datetime] = None,
               mode: TrustMode = TrustMode.ALL_SIGNERS) -> ValidationReport:
    """Open the store (password first), read the bundle file, validate it."""
    store = open_store(store_path, store_password)
    bundle = read_bundle(Path(path).read_bytes())
    return check_bundle(bundle, store, at_time, mode)
