"""Signing and validation of ZIP-based component bundles."""

from .algorithms import DigestAlg, KeyAlg, SigAlg
from .archive import (
    ArchiveEntry,
    BundleArchive,
    Compression,
    EntryClass,
    OrderReport,
    check_entry_order,
    classify_entry,
    read_bundle,
    write_bundle,
)
from .cms import SignedDataDoc, build_signed_data, decode_signed_data, encode_signed_data, verify_signer_info
from .der import DerNode, der_decode, der_encode
from .manifest import (
    ManifestDoc,
    SignatureFileDoc,
    generate_manifest,
    generate_signature_file,
    parse_attributes,
    serialize_attributes,
    verify_manifest_coverage,
)
from .pki import CertificateView, DistinguishedName, build_cert_path, parse_certificate, validate_cert_path
from .repo import RepoIndex, RepoTarget, publish, read_index, write_index
from .signer import SignRequest, sign_bundle, sign_file
from .truststore import (
    SigningIdentity,
    TrustStore,
    generate_key_pair,
    get_signing_identity,
    new_store,
    open_store,
    save_store,
)
from .validator import ReasonCode, TrustMode, ValidationReport, Verdict, check_bundle, check_file

__version__ = "0.1.0"

__all__ = [
    "ArchiveEntry", "BundleArchive", "CertificateView", "Compression", "DerNode", "DigestAlg",
    "DistinguishedName", "EntryClass", "KeyAlg", "ManifestDoc", "OrderReport", "ReasonCode",
    "RepoIndex", "RepoTarget", "SigAlg", "SignRequest", "SignatureFileDoc", "SignedDataDoc",
    "SigningIdentity", "TrustMode", "TrustStore", "ValidationReport", "Verdict",
    "build_cert_path", "build_signed_data", "check_bundle", "check_entry_order", "check_file",
    "classify_entry", "decode_signed_data", "der_decode", "der_encode", "encode_signed_data",
    "generate_key_pair", "generate_manifest", "generate_signature_file", "get_signing_identity",
    "new_store", "open_store", "parse_attributes", "parse_certificate", "publish", "read_bundle",
    "read_index", "save_store", "serialize_attributes", "sign_bundle", "sign_file",
    "validate_cert_path", "verify_manifest_coverage", "verify_signer_info", "write_bundle",
    "write_index",
]
