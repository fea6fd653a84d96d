"""Shared constants and builders for the test suite."""

import datetime as dt
import random
from dataclasses import dataclass

from bundlesign.algorithms import KeyAlg
from bundlesign.archive import BundleArchive
from bundlesign.pki import dn
from bundlesign.truststore import generate_key_pair, get_signing_identity, new_store

UTC = dt.timezone.utc
NOT_BEFORE = dt.datetime(2026, 1, 1, tzinfo=UTC)
AT_TIME = dt.datetime(2027, 1, 1, tzinfo=UTC)
KEY_PW = "key-secret"
STORE_PW = "store-secret"


@dataclass(frozen=True)
class Pki:
    store: object
    root: object
    ca: object
    leaf: object
    dsa_leaf: object

    def identity(self, alias):
        return get_signing_identity(self.store, alias, KEY_PW)


def make_key_pair(store, alias, subject, alg=KeyAlg.RSA, days=3650, **kw):
    kw.setdefault("not_before", NOT_BEFORE)
    return generate_key_pair(store, alias, dn(subject), alg, days, key_password=KEY_PW, **kw)


def trusting(*certs):
    """A verifier's store: only the given certificates, all trusted."""
    store = new_store()
    for i, cert in enumerate(certs):
        store = store.add_certificate("anchor%d" % i, cert, trusted=True)
    return store


def random_bundle(rng: random.Random, max_resources=50, max_size=64 * 1024) -> BundleArchive:
    """Resources with unique paths and random content; sizes skew small."""
    count = rng.randint(0, max_resources)
    paths = set()
    while len(paths) < count:
        depth = rng.randint(0, 3)
        parts = ["d%d" % rng.randint(0, 5) for _ in range(depth)]
        parts.append("R%d.%s" % (rng.randint(0, 10**6), rng.choice(["class", "xml", "txt", "bin"])))
        paths.add("/".join(parts))
    items = []
    for p in sorted(paths, key=lambda _: rng.random()):
        size = min(max_size, int(rng.expovariate(1 / 2048))) if rng.random() < 0.95 else max_size
        items.append((p, rng.randbytes(size)))
    return BundleArchive.from_items(items)
