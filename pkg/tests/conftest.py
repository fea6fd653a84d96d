import pytest

from bundlesign.algorithms import KeyAlg
from bundlesign.archive import BundleArchive
from bundlesign.truststore import new_store

from .helpers import Pki, make_key_pair


@pytest.fixture(scope="session")
def pki():
    """Acme root -> Dev intermediate CA -> alice (RSA) and dsasigner (DSA)."""
    store = new_store()
    store, root = make_key_pair(store, "acmeroot", "CN=Acme Root CA, O=Acme, C=DE", is_ca=True)
    store, ca = make_key_pair(store, "devca", "CN=Dev CA, OU=Dev, O=Acme, C=DE",
                                 issuer="acmeroot", is_ca=True)
    store, leaf = make_key_pair(store, "alice", "CN=Alice Martin, OU=Dev, O=Acme, C=DE",
                                   days=700, issuer="devca")
    store, dsa_leaf = make_key_pair(store, "dsasigner", "CN=DSA Signer, O=Acme, C=DE",
                                       alg=KeyAlg.DSA, days=700, issuer="devca")
    return Pki(store, root, ca, leaf, dsa_leaf)


@pytest.fixture(scope="session")
def rsa_identity(pki):
    return pki.identity("alice")


@pytest.fixture(scope="session")
def dsa_identity(pki):
    return pki.identity("dsasigner")


@pytest.fixture
def sample_bundle():
    return BundleArchive.from_items([
        ("org/example/Activator.class", b"\xca\xfe\xba\xbe" + bytes(range(200))),
        ("org/example/impl/Service.class", b"\xca\xfe\xba\xbe service"),
        ("OSGI-INF/metatype.xml", b"<metatype/>\n"),
        ("empty.txt", b""),
    ])



def pytest_terminal_summary(terminalreporter):
    from .test_acceptance import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance")
        for line in RESULTS:
            terminalreporter.write_line(line)
