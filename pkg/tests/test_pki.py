import datetime as dt
import random
import subprocess

import pytest
from cryptography import x509
from cryptography.hazmat.primitives import hashes
from cryptography.hazmat.primitives.asymmetric import rsa
from cryptography.x509.oid import NameOID

from bundlesign.algorithms import KeyAlg
from bundlesign.errors import AmbiguousIssuer, BundleSignError, CycleDetected, MalformedCertificate, NoTrustAnchor
from bundlesign.pki import (
    CertPath,
    DistinguishedName,
    PathFailure,
    build_cert_path,
    build_certificate,
    dn,
    load_certificates,
    parse_certificate,
    validate_cert_path,
)
from bundlesign.truststore import new_store

from .helpers import AT_TIME, NOT_BEFORE, UTC, trusting


def test_certificates_parse_with_cryptography(pki):
    for cert in (pki.root, pki.ca, pki.leaf, pki.dsa_leaf):
        ref = x509.load_der_x509_certificate(cert.raw_der)
        assert ref.serial_number == cert.serial
        assert ref.not_valid_before_utc == cert.not_before
        assert ref.not_valid_after_utc == cert.not_after
        assert ref.subject.public_bytes() == cert.subject.to_der()
        assert ref.issuer.public_bytes() == cert.issuer.to_der()
        assert ref.tbs_certificate_bytes == cert.raw_tbs
        try:
            bc = ref.extensions.get_extension_for_class(x509.BasicConstraints)
            assert bc.critical and bc.value.ca == cert.is_ca
        except x509.ExtensionNotFound:
            assert not cert.is_ca


def test_chain_verifies_with_cryptography(pki):
    leaf = x509.load_der_x509_certificate(pki.leaf.raw_der)
    ca = x509.load_der_x509_certificate(pki.ca.raw_der)
    root = x509.load_der_x509_certificate(pki.root.raw_der)
    leaf.verify_directly_issued_by(ca)
    ca.verify_directly_issued_by(root)
    root.verify_directly_issued_by(root)


def test_chain_verifies_with_openssl(pki, tmp_path):
    (tmp_path / "root.pem").write_text(pki.root.to_pem())
    (tmp_path / "ca.pem").write_text(pki.ca.to_pem())
    (tmp_path / "leaf.pem").write_text(pki.leaf.to_pem())
    out = subprocess.run(
        ["openssl", "verify", "-attime", str(int(AT_TIME.timestamp())), "-CAfile", str(tmp_path / "root.pem"),
         "-untrusted", str(tmp_path / "ca.pem"), str(tmp_path / "leaf.pem")],
        capture_output=True, text=True,
    )
    assert out.returncode == 0, out.stderr


def test_parses_cryptography_built_certificate():
    key = rsa.generate_private_key(public_exponent=65537, key_size=2048)
    name = x509.Name([x509.NameAttribute(NameOID.COUNTRY_NAME, "DE"),
                      x509.NameAttribute(NameOID.ORGANIZATION_NAME, "Acme"),
                      x509.NameAttribute(NameOID.COMMON_NAME, "Ext")])
    cert = (
        x509.CertificateBuilder().subject_name(name).issuer_name(name).public_key(key.public_key())
        .serial_number(12345).not_valid_before(NOT_BEFORE).not_valid_after(NOT_BEFORE + dt.timedelta(days=10))
        .add_extension(x509.BasicConstraints(ca=True, path_length=None), critical=True)
        .add_extension(x509.CRLDistributionPoints([x509.DistributionPoint(
            [x509.UniformResourceIdentifier("http://crl.example/ca.crl")], None, None, None)]), critical=False)
        .sign(key, hashes.SHA256())
    )
    from cryptography.hazmat.primitives.serialization import Encoding
    view = parse_certificate(cert.public_bytes(Encoding.DER))
    assert view.subject == dn("C=DE, O=Acme, CN=Ext")
    assert view.is_ca and view.self_issued and view.serial == 12345
    assert view.crl_distribution_points == ("http://crl.example/ca.crl",)
    assert validate_cert_path(CertPath((view,)), NOT_BEFORE).ok


def test_dn_order_matters_and_string_round_trip():
    a = dn("C=Germany, O=Acme")
    b = dn("O=Acme, C=Germany")
    assert a != b
    assert str(a) == "C=Germany, O=Acme"
    tricky = DistinguishedName((("CN", "Doe, John"), ("O", " lead+trail ")))
    assert dn(str(tricky)) == tricky
    assert dn("ST=Rhone").rdns == (("S", "Rhone"),)


def test_strict_dn_rejects_other_attributes():
    email = DistinguishedName((("1.2.840.113549.1.9.1", "a@b"),))
    with pytest.raises(MalformedCertificate):
        DistinguishedName.from_node(email.to_node(), strict=True)
    assert DistinguishedName.from_node(email.to_node(), strict=False) == email


def test_pem_round_trip(pki):
    pem = (pki.leaf.to_pem() + pki.ca.to_pem()).encode()
    assert [c.raw_der for c in load_certificates(pem)] == [pki.leaf.raw_der, pki.ca.raw_der]
    assert load_certificates(pki.root.raw_der)[0] == pki.root


def test_case1_direct_trust(pki):
    path = build_cert_path(pki.leaf, [], trusting(pki.leaf))
    assert path.chain == (pki.leaf,)
    assert validate_cert_path(path, AT_TIME).ok


def test_case2_chain_to_root(pki):
    path = build_cert_path(pki.leaf, [pki.ca], trusting(pki.root))
    assert path.chain == (pki.leaf, pki.ca, pki.root)
    assert validate_cert_path(path, AT_TIME).ok


def test_intermediate_in_store_is_enough(pki):
    assert build_cert_path(pki.leaf, [], trusting(pki.ca)).chain == (pki.leaf, pki.ca)


def test_no_anchor(pki):
    with pytest.raises(NoTrustAnchor):
        build_cert_path(pki.leaf, [pki.ca], new_store())
    with pytest.raises(NoTrustAnchor):
        build_cert_path(pki.leaf, [], trusting(pki.root))


def test_ambiguous_issuer(pki):
    store, _ = _twin_ca(pki)
    with pytest.raises(AmbiguousIssuer):
        build_cert_path(pki.leaf, [pki.ca], store)


def _twin_ca(pki):
    """A second certificate with the Dev CA subject and key, signed by the root."""
    from .helpers import KEY_PW
    from bundlesign.truststore import decrypt_private_key
    root_key = decrypt_private_key(pki.store.get("acmeroot").encrypted_key, "acmeroot", KEY_PW)
    ca_key = decrypt_private_key(pki.store.get("devca").encrypted_key, "devca", KEY_PW)
    twin = build_certificate(pki.ca.subject, pki.root.subject, ca_key.public_key(), root_key,
                             not_before=NOT_BEFORE, not_after=NOT_BEFORE + dt.timedelta(days=99), is_ca=True)
    return trusting(pki.root).add_certificate("twin", twin, trusted=False), twin


def test_cycle_detected():
    a_key = rsa.generate_private_key(public_exponent=65537, key_size=2048)
    b_key = rsa.generate_private_key(public_exponent=65537, key_size=2048)
    until = NOT_BEFORE + dt.timedelta(days=30)
    a = build_certificate(dn("CN=A"), dn("CN=B"), a_key.public_key(), b_key,
                          not_before=NOT_BEFORE, not_after=until, is_ca=True)
    b = build_certificate(dn("CN=B"), dn("CN=A"), b_key.public_key(), a_key,
                          not_before=NOT_BEFORE, not_after=until, is_ca=True)
    leaf_key = rsa.generate_private_key(public_exponent=65537, key_size=2048)
    leaf = build_certificate(dn("CN=L"), dn("CN=A"), leaf_key.public_key(), a_key,
                             not_before=NOT_BEFORE, not_after=until)
    with pytest.raises(CycleDetected):
        build_cert_path(leaf, [a, b], new_store())


def test_non_ca_intermediate(pki):
    from .helpers import KEY_PW
    from bundlesign.truststore import decrypt_private_key
    leaf_key = decrypt_private_key(pki.store.get("alice").encrypted_key, "alice", KEY_PW)
    sub_key = rsa.generate_private_key(public_exponent=65537, key_size=2048)
    sub = build_certificate(dn("CN=Sub"), pki.leaf.subject, sub_key.public_key(), leaf_key,
                            not_before=NOT_BEFORE, not_after=NOT_BEFORE + dt.timedelta(days=30))
    path = build_cert_path(sub, [pki.leaf, pki.ca], trusting(pki.root))
    verdict = validate_cert_path(path, NOT_BEFORE + dt.timedelta(days=1))
    assert verdict.failures == ((1, PathFailure.NOT_A_CA),)


@pytest.mark.parametrize("offset,reason", [(-1, PathFailure.NOT_YET_VALID), (800, PathFailure.EXPIRED)])
def test_validity_window(pki, offset, reason):
    at = NOT_BEFORE + dt.timedelta(days=offset)
    verdict = validate_cert_path(build_cert_path(pki.leaf, [pki.ca], trusting(pki.root)), at)
    assert (0, reason) in verdict.failures


def test_validity_bounds_inclusive(pki):
    path = build_cert_path(pki.leaf, [pki.ca], trusting(pki.root))
    assert validate_cert_path(path, pki.leaf.not_before).ok
    assert validate_cert_path(path, pki.leaf.not_after).ok


def _tbs_span(cert):
    start = cert.raw_der.index(cert.raw_tbs)
    return start, start + len(cert.raw_tbs)


def test_tbs_byte_flips_break_the_signature(pki):
    rng = random.Random(3)
    chain = [pki.leaf, pki.ca, pki.root]
    checked = 0
    for index in range(3):
        start, end = _tbs_span(chain[index])
        # skip the outer TBS header so flips land in the fields
        for pos in rng.sample(range(start + 4, end), 60):
            raw = bytearray(chain[index].raw_der)
            raw[pos] ^= 1 << rng.randrange(8)
            try:
                tampered = parse_certificate(bytes(raw))
            except BundleSignError:
                continue  # no longer parses, so it can never enter a path
            path = list(chain)
            path[index] = tampered
            verdict = validate_cert_path(CertPath(tuple(path)), AT_TIME)
            assert not verdict.ok
            if index < 2 or tampered.self_issued:
                assert (index, PathFailure.BAD_SIGNATURE) in verdict.failures
            else:
                # a renamed root no longer claims to sign itself; the link below breaks instead
                assert (index - 1, PathFailure.ISSUER_MISMATCH) in verdict.failures
            checked += 1
    assert checked > 60


def test_dsa_issued_certificates(pki):
    path = build_cert_path(pki.dsa_leaf, [pki.ca], trusting(pki.root))
    assert pki.dsa_leaf.key_alg is KeyAlg.DSA
    assert validate_cert_path(path, AT_TIME).ok


def test_utc_times_are_aware(pki):
    assert pki.leaf.not_before.tzinfo is not None
    assert pki.leaf.not_before == NOT_BEFORE.astimezone(UTC)
