"""
Digest and signature algorithm registry.

Hashing uses :mod:`hashlib`.  RSA signing and all signature verification
are delegated to the ``cryptography`` package; DSA signing is done here so
that the per-message nonce can be derived deterministically (RFC 6979)
from the key and the message digest.
"""

from __future__ import annotations

import base64
import enum
import hashlib
import hmac

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric import dsa, padding, rsa
from cryptography.hazmat.primitives.asymmetric.utils import (
    decode_dss_signature,
    encode_dss_signature,
)

from . import der
from .errors import UnsupportedAlgorithm


class DigestAlg(enum.Enum):
    SHA1 = "SHA1"
    SHA256 = "SHA256"

    @property
    def token(self) -> str:
        """Algorithm token used in manifest attribute names."""
        return _DIGEST_INFO[self][0]

    @property
    def bits(self) -> int:
        return _DIGEST_INFO[self][1]

    @property
    def oid(self) -> der.ObjectIdentifier:
        return _DIGEST_INFO[self][2]

    @property
    def hash(self) -> hashes.HashAlgorithm:
        return _DIGEST_INFO[self][3]()

    @property
    def attribute(self) -> str:
        return self.token + "-Digest"

    @property
    def manifest_attribute(self) -> str:
        return self.token + "-Digest-Manifest"

    def digest(self, data: bytes) -> bytes:
        return hashlib.new(self.value.lower(), data).digest()

    def digest_b64(self, data: bytes) -> str:
        return base64.b64encode(self.digest(data)).decode("ascii")

    @classmethod
    def from_token(cls, token: str) -> "DigestAlg":
        """Resolve an attribute-name token, accepting hyphenated spellings."""
        key = token.upper().replace("-", "")
        for alg in cls:
            if alg.value == key:
                return alg
        raise UnsupportedAlgorithm("unknown digest algorithm %r" % token)

    @classmethod
    def from_oid(cls, value: der.ObjectIdentifier) -> "DigestAlg":
        for alg in cls:
            if alg.oid == value:
                return alg
        raise UnsupportedAlgorithm("unknown digest OID %s" % value)


_DIGEST_INFO = {
    DigestAlg.SHA1: ("SHA1", 160, der.oid("1.3.14.3.2.26"), hashes.SHA1),
    DigestAlg.SHA256: ("SHA-256", 256, der.oid("2.16.840.1.101.3.4.2.1"), hashes.SHA256),
}


class KeyAlg(enum.Enum):
    RSA = "RSA"
    DSA = "DSA"

    @property
    def oid(self) -> der.ObjectIdentifier:
        return RSA_ENCRYPTION if self is KeyAlg.RSA else DSA_KEY


RSA_ENCRYPTION = der.oid("1.2.840.113549.1.1.1")
DSA_KEY = der.oid("1.2.840.10040.4.1")


class SigAlg(enum.Enum):
    """Signature algorithm identifiers.

    ``RSA`` (rsaEncryption) and ``DSA`` carry no digest of their own; the
    digest comes from the surrounding structure (a CMS SignerInfo).
    """

    RSA = ("1.2.840.113549.1.1.1", KeyAlg.RSA, None, True)
    SHA1_RSA = ("1.2.840.113549.1.1.5", KeyAlg.RSA, DigestAlg.SHA1, True)
    SHA256_RSA = ("1.2.840.113549.1.1.11", KeyAlg.RSA, DigestAlg.SHA256, True)
    DSA = ("1.2.840.10040.4.1", KeyAlg.DSA, None, False)
    SHA1_DSA = ("1.2.840.10040.4.3", KeyAlg.DSA, DigestAlg.SHA1, False)
    SHA256_DSA = ("2.16.840.1.101.3.4.3.2", KeyAlg.DSA, DigestAlg.SHA256, False)

    def __init__(self, dotted, key_alg, digest_alg, null_params):
        self.oid = der.oid(dotted)
        self.key_alg = key_alg
        self.digest_alg = digest_alg
        self.null_params = null_params

    def to_node(self) -> der.DerNode:
        if self.null_params:
            return der.sequence(der.object_identifier(self.oid), der.null())
        return der.sequence(der.object_identifier(self.oid))

    @classmethod
    def for_pair(cls, key_alg: KeyAlg, digest_alg: DigestAlg) -> "SigAlg":
        for alg in cls:
            if alg.key_alg is key_alg and alg.digest_alg is digest_alg:
                return alg
        raise UnsupportedAlgorithm("no signature algorithm for %s/%s" % (key_alg, digest_alg))

    @classmethod
    def from_node(cls, node: der.DerNode) -> "SigAlg":
        parts = der.expect_sequence(node, (1, 2))
        value = der.get_oid(parts[0])
        for alg in cls:
            if alg.oid == value:
                break
        else:
            raise UnsupportedAlgorithm("unknown signature algorithm %s" % value)
        # exact parameter form: NULL for RSA, absent for DSA
        if alg.null_params != (len(parts) == 2) or (len(parts) == 2 and not parts[1].is_universal(der.NULL)):
            raise UnsupportedAlgorithm("unexpected parameters for %s" % alg.name)
        return alg


def digest_alg_node(alg: DigestAlg) -> der.DerNode:
    """AlgorithmIdentifier for a digest; parameters are omitted."""
    return der.sequence(der.object_identifier(alg.oid))


def digest_alg_from_node(node: der.DerNode) -> DigestAlg:
    parts = der.expect_sequence(node, (1,))
    return DigestAlg.from_oid(der.get_oid(parts[0]))


# -- keys -------------------------------------------------------------------

def key_alg_of(key) -> KeyAlg:
    if isinstance(key, (rsa.RSAPrivateKey, rsa.RSAPublicKey)):
        return KeyAlg.RSA
    if isinstance(key, (dsa.DSAPrivateKey, dsa.DSAPublicKey)):
        return KeyAlg.DSA
    raise UnsupportedAlgorithm("unsupported key type %s" % type(key).__name__)


def generate_private_key(alg: KeyAlg, key_size: int | None = None):
    if alg is KeyAlg.RSA:
        return rsa.generate_private_key(public_exponent=65537, key_size=key_size or 2048)
    return dsa.generate_private_key(key_size=key_size or 2048)


def public_key_der(key) -> bytes:
    """SubjectPublicKeyInfo DER for a public or private key."""
    if hasattr(key, "public_key"):
        key = key.public_key()
    return key.public_bytes(serialization.Encoding.DER, serialization.PublicFormat.SubjectPublicKeyInfo)


def load_public_key(spki_der: bytes):
    try:
        return serialization.load_der_public_key(spki_der)
    except (ValueError, TypeError) as exc:
        raise UnsupportedAlgorithm("cannot load public key: %s" % exc) from None


def private_key_to_pkcs8(key) -> bytes:
    return key.private_bytes(
        serialization.Encoding.DER,
        serialization.PrivateFormat.PKCS8,
        serialization.NoEncryption(),
    )


def private_key_from_pkcs8(data: bytes):
    return serialization.load_der_private_key(data, password=None)


# -- deterministic DSA --------------------------------------------------------

def _bits2int(data: bytes, qlen: int) -> int:
    value = int.from_bytes(data, "big")
    blen = len(data) * 8
    if blen > qlen:
        value >>= blen - qlen
    return value


def rfc6979_nonce(x: int, q: int, h1: bytes, hashname: str) -> int:
    """Deterministic DSA nonce for private key ``x`` and message digest ``h1``."""
    qlen = q.bit_length()
    rlen = (qlen + 7) // 8

    def int2octets(v):
        return v.to_bytes(rlen, "big")

    def bits2octets(data):
        return int2octets(_bits2int(data, qlen) % q)

    def mac(key, data):
        return hmac.new(key, data, hashname).digest()

    hlen = hashlib.new(hashname).digest_size
    v = b"\x01" * hlen
    k = b"\x00" * hlen
    seed = int2octets(x) + bits2octets(h1)
    k = mac(k, v + b"\x00" + seed)
    v = mac(k, v)
    k = mac(k, v + b"\x01" + seed)
    v = mac(k, v)
    while True:
        t = b""
        while len(t) < rlen:
            v = mac(k, v)
            t += v
        candidate = _bits2int(t, qlen)
        if 1 <= candidate < q:
            return candidate
        k = mac(k, v + b"\x00")
        v = mac(k, v)


def dsa_sign_deterministic(key: dsa.DSAPrivateKey, data: bytes, digest_alg: DigestAlg) -> tuple[int, int]:
    numbers = key.private_numbers()
    params = numbers.public_numbers.parameter_numbers
    p, q, g, x = params.p, params.q, params.g, numbers.x
    h1 = digest_alg.digest(data)
    hashname = digest_alg.value.lower()
    e = _bits2int(h1, q.bit_length())
    k = rfc6979_nonce(x, q, h1, hashname)
    while True:
        r = pow(g, k, p) % q
        s = (pow(k, -1, q) * (e + x * r)) % q
        if r and s:
            return r, s
        # practically unreachable; step k forward deterministically
        k = k % (q - 1) + 1


def sign(key, digest_alg: DigestAlg, data: bytes) -> bytes:
    """Sign ``data`` with ``key`` over ``digest_alg``; output is the raw signature value."""
    alg = key_alg_of(key)
    if alg is KeyAlg.RSA:
        return key.sign(data, padding.PKCS1v15(), digest_alg.hash)
    r, s = dsa_sign_deterministic(key, data, digest_alg)
    return encode_dss_signature(r, s)


def verify(public_key, digest_alg: DigestAlg, data: bytes, signature: bytes) -> bool:
    try:
        if isinstance(public_key, rsa.RSAPublicKey):
            public_key.verify(signature, data, padding.PKCS1v15(), digest_alg.hash)
        elif isinstance(public_key, dsa.DSAPublicKey):
            # reject signature blobs that are not exactly one DER SEQUENCE of two INTEGERs
            r, s = decode_dss_signature(signature)
            if encode_dss_signature(r, s) != signature:
                return False
            public_key.verify(signature, data, digest_alg.hash)
        else:
            return False
    except (InvalidSignature, ValueError):
        return False
    return True
