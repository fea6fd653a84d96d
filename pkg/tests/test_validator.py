import dataclasses
import datetime as dt
import json

import pytest

from bundlesign.algorithms import DigestAlg, KeyAlg
from bundlesign.archive import MANIFEST_PATH, ArchiveEntry, BundleArchive, write_bundle
from bundlesign.cms import build_signed_data, encode_signed_data
from bundlesign.errors import BadPassword, MalformedArchive
from bundlesign.manifest import generate_signature_file, serialize_attributes
from bundlesign.signer import SignRequest, sign_bundle, signer_file_names
from bundlesign.truststore import save_store
from bundlesign.validator import ReasonCode, TrustMode, Verdict, check_bundle, check_file

from .helpers import AT_TIME, NOT_BEFORE, STORE_PW, make_key_pair, trusting


@pytest.fixture
def signed(sample_bundle, rsa_identity):
    return sign_bundle(SignRequest(sample_bundle, rsa_identity))


def replace_entry(bundle, index, **changes):
    entries = list(bundle)
    entries[index] = dataclasses.replace(entries[index], **changes)
    return BundleArchive(tuple(entries))


def flip(data, pos):
    raw = bytearray(data)
    raw[pos] ^= 0x01
    return bytes(raw)


def test_valid(signed, pki):
    report = check_bundle(signed, trusting(pki.root), AT_TIME)
    assert report.verdict is Verdict.VALID
    assert report.failures == ()
    assert [(s.alias, s.path_ok) for s in report.signers] == [("alice", True)]
    assert report.signers[0].dn == pki.leaf.subject


def test_flipped_resource_byte(signed, pki):
    report = check_bundle(replace_entry(signed, 3, content=flip(signed[3].content, 5)), trusting(pki.root), AT_TIME)
    assert report.verdict is Verdict.INVALID
    assert [(f.code, f.path) for f in report.failures] == [(ReasonCode.RESOURCE_DIGEST_MISMATCH, signed[3].path)]


def test_added_resource(signed, pki):
    bundle = BundleArchive(tuple(signed) + (ArchiveEntry("extra.class", b"x"),))
    report = check_bundle(bundle, trusting(pki.root), AT_TIME)
    assert [(f.code, f.path) for f in report.failures] == [(ReasonCode.MISSING_MANIFEST_ENTRY, "extra.class")]


def test_removed_resource(signed, pki):
    bundle = BundleArchive(tuple(e for i, e in enumerate(signed) if i != 4))
    report = check_bundle(bundle, trusting(pki.root), AT_TIME)
    assert [(f.code, f.path) for f in report.failures] == [(ReasonCode.EXTRA_MANIFEST_ENTRY, signed[4].path)]


def test_untrusted_signer_stops_before_digesting(signed, pki, monkeypatch):
    calls = []
    original = DigestAlg.digest
    monkeypatch.setattr(DigestAlg, "digest", lambda self, data: calls.append(len(data)) or original(self, data))
    report = check_bundle(signed, trusting(), AT_TIME)
    assert report.codes == {ReasonCode.UNKNOWN_SIGNER}
    assert calls == []
    check_bundle(signed, trusting(pki.root), AT_TIME)
    assert calls


def test_unsigned_bundle(sample_bundle, pki):
    report = check_bundle(sample_bundle, trusting(pki.root), AT_TIME)
    assert [f.code for f in report.failures] == [ReasonCode.UNSIGNED_BUNDLE]
    assert report.signers == ()


def test_flipped_sf_byte(signed, pki):
    report = check_bundle(replace_entry(signed, 1, content=flip(signed[1].content, 3)), trusting(pki.root), AT_TIME)
    assert ReasonCode.BAD_BLOCK_SIGNATURE in report.codes


def test_flipped_sf_digest_value(signed, pki):
    sf = signed[1].content
    pos = sf.index(b"Manifest: ") + 12
    report = check_bundle(replace_entry(signed, 1, content=flip(sf, pos)), trusting(pki.root), AT_TIME)
    assert ReasonCode.BAD_BLOCK_SIGNATURE in report.codes


def test_manifest_edit(signed, pki):
    manifest = signed[0].content + b"Name: ghost\r\nSHA-256-Digest: 47DEQpj8HBSa+/TImW+5JCeuQeRkm5NMpJWZG3hSuFU=\r\n\r\n"
    report = check_bundle(replace_entry(signed, 0, content=manifest), trusting(pki.root), AT_TIME)
    assert ReasonCode.MANIFEST_DIGEST_MISMATCH in report.codes
    assert ReasonCode.EXTRA_MANIFEST_ENTRY in report.codes


def test_garbage_block(signed, pki):
    report = check_bundle(replace_entry(signed, 2, content=b"\x30\x00junk"), trusting(pki.root), AT_TIME)
    assert report.codes == {ReasonCode.MALFORMED_METADATA}


def test_swapped_manifest(signed, pki):
    entries = list(signed)
    entries[0], entries[3] = entries[3], entries[0]
    report = check_bundle(BundleArchive(tuple(entries)), trusting(pki.root), AT_TIME)
    assert ReasonCode.BAD_ORDER in report.codes


def test_swapped_resources(signed, pki):
    entries = list(signed)
    entries[3], entries[4] = entries[4], entries[3]
    report = check_bundle(BundleArchive(tuple(entries)), trusting(pki.root), AT_TIME)
    assert report.codes == {ReasonCode.BAD_ORDER}


def sign_manifest_bytes(resources, manifest, identity):
    """Sign a hand-written manifest without regenerating it."""
    sf = serialize_attributes(generate_signature_file(manifest, DigestAlg.SHA256))
    block = encode_signed_data(build_signed_data(sf, identity))
    sf_path, block_path = signer_file_names(identity.alias, identity.algorithm)
    head = (ArchiveEntry(MANIFEST_PATH, manifest), ArchiveEntry(sf_path, sf), ArchiveEntry(block_path, block))
    return BundleArchive(head + tuple(resources))


def test_unknown_digest_name_is_malformed(signed, pki, rsa_identity):
    manifest = signed[0].content.replace(b"SHA-256-Digest:", b"MD5-Digest:", 1)
    bundle = sign_manifest_bytes(signed.resources(), manifest, rsa_identity)
    report = check_bundle(bundle, trusting(pki.root), AT_TIME)
    assert report.codes == {ReasonCode.MALFORMED_METADATA}


def test_hand_signed_manifest_is_valid(signed, pki, rsa_identity):
    bundle = sign_manifest_bytes(signed.resources(), signed[0].content, rsa_identity)
    assert check_bundle(bundle, trusting(pki.root), AT_TIME).valid


def test_expired_and_not_yet_valid(signed, pki):
    late = check_bundle(signed, trusting(pki.root), NOT_BEFORE + dt.timedelta(days=800))
    early = check_bundle(signed, trusting(pki.root), NOT_BEFORE - dt.timedelta(days=1))
    assert late.codes == {ReasonCode.EXPIRED_CERT}
    assert ReasonCode.EXPIRED_CERT in early.codes


def test_unpaired_signature_file(signed, pki):
    bundle = BundleArchive(tuple(e for i, e in enumerate(signed) if i != 2))
    report = check_bundle(bundle, trusting(pki.root), AT_TIME)
    assert report.verdict is Verdict.INVALID
    assert ReasonCode.MALFORMED_METADATA in report.codes


def test_block_extension_must_match_key(signed, pki):
    bundle = replace_entry(signed, 2, path="META-INF/ALICE.DSA")
    report = check_bundle(bundle, trusting(pki.root), AT_TIME)
    assert ReasonCode.MALFORMED_METADATA in report.codes


@pytest.fixture(scope="module")
def two_roots(pki):
    store, root_b = make_key_pair(pki.store, "otherroot", "CN=Other Root, O=Elsewhere, C=DE", is_ca=True)
    store, signer_b = make_key_pair(store, "bob", "CN=Bob, O=Elsewhere, C=DE", alg=KeyAlg.DSA,
                                    issuer="otherroot", days=500)
    from .helpers import KEY_PW
    from bundlesign.truststore import get_signing_identity
    return root_b, get_signing_identity(store, "bob", KEY_PW)


def test_multi_signer_modes(signed, pki, two_roots):
    root_b, bob = two_roots
    both = sign_bundle(SignRequest(signed, bob))
    assert check_bundle(both, trusting(pki.root, root_b), AT_TIME).valid
    for remaining in (pki.root, root_b):
        strict = check_bundle(both, trusting(remaining), AT_TIME, TrustMode.ALL_SIGNERS)
        assert strict.codes == {ReasonCode.UNKNOWN_SIGNER}
        lenient = check_bundle(both, trusting(remaining), AT_TIME, "any-signer")
        assert lenient.valid
        assert sorted(s.path_ok for s in lenient.signers) == [False, True]
    assert not check_bundle(both, trusting(), AT_TIME, TrustMode.ANY_SIGNER).valid


def test_any_signer_still_requires_coherence(signed, pki, two_roots):
    root_b, bob = two_roots
    both = sign_bundle(SignRequest(signed, bob))
    sf = both[3].content
    broken = replace_entry(both, 3, content=flip(sf, sf.index(b"bundlesign")))
    report = check_bundle(broken, trusting(pki.root, root_b), AT_TIME, TrustMode.ANY_SIGNER)
    assert report.codes == {ReasonCode.BAD_BLOCK_SIGNATURE}


def test_report_formats(signed, pki):
    report = check_bundle(replace_entry(signed, 5, content=b"zz"), trusting(pki.root), AT_TIME)
    text = report.to_text()
    assert text.splitlines()[0] == "report-version: 1"
    assert "RESOURCE_DIGEST_MISMATCH" in text
    data = json.loads(report.to_json())
    assert data["report-version"] == 1
    assert data["verdict"] == "INVALID"
    assert data["failures"] == [{"code": "RESOURCE_DIGEST_MISMATCH", "detail": "resource digest differs",
                                 "path": signed[5].path}]
    assert data["signers"][0]["alias"] == "alice"


def test_failures_sorted_by_entry_index(signed, pki):
    bundle = replace_entry(replace_entry(signed, 6, content=b"a"), 3, content=b"b")
    paths = [f.path for f in check_bundle(bundle, trusting(pki.root), AT_TIME).failures]
    assert paths == [signed[3].path, signed[6].path]


def test_check_file(tmp_path, signed, pki):
    store_path = tmp_path / "verifier.sfxs"
    save_store(trusting(pki.root), store_path, STORE_PW)
    jar = tmp_path / "a.jar"
    jar.write_bytes(write_bundle(signed))
    assert check_file(jar, store_path, STORE_PW, AT_TIME).valid
    with pytest.raises(BadPassword):
        check_file(tmp_path / "does-not-matter.jar", store_path, "wrong", AT_TIME)
    (tmp_path / "text.jar").write_text("not a zip")
    with pytest.raises(MalformedArchive):
        check_file(tmp_path / "text.jar", store_path, STORE_PW, AT_TIME)


def test_stray_certificate_in_block(signed, pki, rsa_identity, two_roots):
    root_b, _ = two_roots
    sf = signed[1].content
    block = encode_signed_data(build_signed_data(sf, rsa_identity, rsa_identity.certificate_chain + (root_b,)))
    report = check_bundle(replace_entry(signed, 2, content=block), trusting(pki.root), AT_TIME)
    assert report.codes == {ReasonCode.CERT_PATH_INVALID}
    assert "outside the signer's chain" in report.failures[0].detail


def test_corrupted_root_copy_in_block(signed, pki):
    block = signed[2].content
    root = pki.root.raw_der
    pos = block.index(root) + root.rindex(b"Acme Root CA")  # inside the root's subject
    report = check_bundle(replace_entry(signed, 2, content=flip(block, pos)), trusting(pki.root), AT_TIME)
    assert report.codes == {ReasonCode.CERT_PATH_INVALID}
