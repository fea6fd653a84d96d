import os
import random

import pytest

from bundlesign.algorithms import KeyAlg, private_key_to_pkcs8
from bundlesign.errors import (
    AliasExists,
    BadKeyPassword,
    BadPassword,
    IoFailure,
    IssuerNotCa,
    MalformedStore,
    NoSuchAlias,
    NotAKeyPair,
)
from bundlesign import truststore
from bundlesign.pki import dn
from bundlesign.truststore import (
    MAGIC,
    EntryKind,
    TrustStore,
    decrypt_private_key,
    deserialize_store,
    generate_key_pair,
    get_signing_identity,
    new_store,
    open_store,
    save_store,
    serialize_store,
)

from .helpers import KEY_PW, STORE_PW, make_key_pair


def test_round_trip_preserves_entries(pki, tmp_path):
    store = pki.store.add_certificate("extra", pki.root, trusted=False)
    path = tmp_path / "ks.sfxs"
    save_store(store, path, STORE_PW)
    again = open_store(path, STORE_PW)
    assert again == store
    assert [e.kind for e in again] == [EntryKind.KEY_PAIR] * 4 + [EntryKind.UNTRUSTED_CERT]
    assert path.read_bytes().startswith(MAGIC)


def test_fresh_salt_per_save(pki):
    assert serialize_store(pki.store, STORE_PW) != serialize_store(pki.store, STORE_PW)


def test_wrong_password(pki):
    with pytest.raises(BadPassword):
        deserialize_store(serialize_store(pki.store, STORE_PW), "nope")


def test_mutations_detected(pki):
    data = serialize_store(pki.store, STORE_PW)
    rng = random.Random(11)
    for pos in rng.sample(range(len(data)), 60) + [0, len(MAGIC), len(data) - 1]:
        raw = bytearray(data)
        raw[pos] ^= 1 << rng.randrange(8)
        with pytest.raises((BadPassword, MalformedStore)):
            deserialize_store(bytes(raw), STORE_PW)


def test_truncation_and_garbage(pki):
    data = serialize_store(pki.store, STORE_PW)
    for cut in (0, 5, len(MAGIC) + 1, len(data) // 2, len(data) - 1):
        with pytest.raises((BadPassword, MalformedStore)):
            deserialize_store(data[:cut], STORE_PW)
    with pytest.raises(MalformedStore):
        deserialize_store(b"PK\x03\x04 not a store", STORE_PW)


def test_plaintext_key_never_stored(pki):
    data = serialize_store(pki.store, STORE_PW)
    for alias in ("acmeroot", "devca", "alice", "dsasigner"):
        key = decrypt_private_key(pki.store.get(alias).encrypted_key, alias, KEY_PW)
        pkcs8 = private_key_to_pkcs8(key)
        assert pkcs8 not in data
        assert pkcs8[-48:] not in data


def test_key_password_checked(pki):
    with pytest.raises(BadKeyPassword):
        get_signing_identity(pki.store, "alice", "wrong")


def test_key_bound_to_alias(pki):
    blob = pki.store.get("alice").encrypted_key
    with pytest.raises(BadKeyPassword):
        decrypt_private_key(blob, "devca", KEY_PW)


def test_signing_identity_chain(pki):
    ident = get_signing_identity(pki.store, "AlIcE", KEY_PW)
    assert ident.alias == "alice"
    assert ident.certificate_chain == (pki.leaf, pki.ca, pki.root)
    assert ident.algorithm is KeyAlg.RSA


def test_store_is_immutable(pki):
    before = pki.store
    after = before.add_certificate("copy", pki.root, trusted=True)
    assert "copy" not in before and "copy" in after
    with pytest.raises(Exception):
        before.entries = ()


def test_aliases_case_insensitive_and_unique(pki):
    assert pki.store.get("AcmeRoot") is pki.store.get("acmeroot")
    with pytest.raises(AliasExists):
        pki.store.add_certificate("ACMEROOT", pki.root, trusted=True)
    with pytest.raises(ValueError):
        pki.store.add_certificate("bad alias", pki.root, trusted=True)


def test_trust_transitions(pki):
    store = new_store().add_certificate("r", pki.root, trusted=False)
    assert not store.is_trusted(pki.root)
    store = store.mark_trusted("r")
    assert store.is_trusted(pki.root)
    assert store.mark_trusted("r") == store
    assert not store.remove("r").is_trusted(pki.root)
    with pytest.raises(NoSuchAlias):
        store.remove("missing")


def test_key_pair_certificates_are_anchors(pki):
    assert pki.store.is_trusted(pki.leaf)


def test_issuer_rules(pki):
    with pytest.raises(IssuerNotCa):
        make_key_pair(pki.store, "x", "CN=X", issuer="alice")
    store = pki.store.add_certificate("cert-only", pki.root, trusted=True)
    with pytest.raises(NotAKeyPair):
        make_key_pair(store, "x", "CN=X", issuer="cert-only")
    with pytest.raises(NoSuchAlias):
        make_key_pair(pki.store, "x", "CN=X", issuer="nobody")
    with pytest.raises(NotAKeyPair):
        get_signing_identity(store, "cert-only", KEY_PW)


def test_issuer_key_password_is_separate(pki):
    store, cert = generate_key_pair(pki.store, "sub", dn("CN=Sub"), KeyAlg.RSA, 10, "devca", "leafpw",
                                    issuer_key_password=KEY_PW)
    assert cert.issuer == pki.ca.subject
    get_signing_identity(store, "sub", "leafpw")


def test_open_missing_file(tmp_path):
    with pytest.raises(IoFailure):
        open_store(tmp_path / "nope.sfxs", STORE_PW)


def test_save_is_atomic(pki, tmp_path, monkeypatch):
    path = tmp_path / "ks.sfxs"
    save_store(pki.store, path, STORE_PW)
    before = path.read_bytes()

    def boom(*a, **k):
        raise OSError("disk full")

    monkeypatch.setattr(os, "replace", boom)
    with pytest.raises(IoFailure):
        save_store(TrustStore(), path, STORE_PW)
    assert path.read_bytes() == before
    assert sorted(p.name for p in tmp_path.iterdir()) == ["ks.sfxs"]


def test_iteration_count_bounds(pki, monkeypatch):
    with pytest.raises(MalformedStore):
        serialize_store(pki.store, STORE_PW, iterations=1000)
    monkeypatch.setattr(truststore, "MIN_ITERATIONS", 1)
    weak = serialize_store(pki.store, STORE_PW, iterations=1000)
    monkeypatch.undo()
    with pytest.raises(MalformedStore):
        deserialize_store(weak, STORE_PW)
