"""Exception hierarchy shared by every layer of the package."""


class BundleSignError(Exception):
    """Base class for all errors raised by bundlesign."""


# -- DER -------------------------------------------------------------------

class DerError(BundleSignError, ValueError):
    pass


class Truncated(DerError):
    pass


class NonCanonical(DerError):
    pass


class TrailingGarbage(DerError):
    pass


class TagTooLarge(DerError):
    pass


class MalformedOid(DerError):
    pass


class DerLimitExceeded(DerError):
    """Input exceeds the size or nesting limits of the decoder."""


# -- archives --------------------------------------------------------------

class MalformedArchive(BundleSignError):
    pass


class UnsupportedFeature(MalformedArchive):
    pass


class InvalidBundle(BundleSignError, ValueError):
    pass


class DuplicatePath(InvalidBundle):
    pass


# -- manifests -------------------------------------------------------------

class MalformedManifest(BundleSignError, ValueError):
    pass


# -- certificates and CMS ----------------------------------------------------

class UnsupportedAlgorithm(BundleSignError):
    pass


class MalformedCertificate(BundleSignError):
    pass


class PathError(BundleSignError):
    pass


class NoTrustAnchor(PathError):
    pass


class AmbiguousIssuer(PathError):
    pass


class CycleDetected(PathError):
    pass


class MalformedCms(BundleSignError):
    pass


class KeyAlgorithmMismatch(BundleSignError):
    pass


class SignerCertificateMissing(MalformedCms):
    pass


# -- trust store -----------------------------------------------------------

class StoreError(BundleSignError):
    pass


class BadPassword(StoreError):
    """The store MAC did not verify. A wrong password and a tampered file look the same."""


class MalformedStore(StoreError):
    pass


class IoFailure(StoreError, OSError):
    pass


class AliasExists(StoreError):
    pass


class NoSuchAlias(StoreError, KeyError):
    pass


class IssuerNotCa(StoreError):
    pass


class BadKeyPassword(StoreError):
    pass


class NotAKeyPair(StoreError):
    pass


# -- signing -----------------------------------------------------------------

class SigningError(BundleSignError):
    pass


class StaleManifest(SigningError):
    pass


class DuplicateSigner(SigningError):
    pass


class UnsignableInput(SigningError):
    pass


class InvalidAlias(SigningError, ValueError):
    pass


# -- repository --------------------------------------------------------------

class RepoError(BundleSignError):
    pass


class ValidationFailed(RepoError):
    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class IndexCorrupt(RepoError):
    pass
