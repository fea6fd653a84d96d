"""
Publication of validated bundles to a flat filesystem repository.

Layout: bundle files directly under the root, plus ``index.txt`` and an
advisory ``.lock``.  Each index line is

    filename <TAB> size <TAB> sha256-hex <TAB> signer,signer <TAB> published-at

sorted by filename, UTF-8, LF-terminated.
"""

from __future__ import annotations

import contextlib
import datetime as dt
import fcntl
import hashlib
import os
import re
import tempfile
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

from .archive import read_bundle
from .errors import IndexCorrupt, IoFailure, ValidationFailed
from .truststore import TrustStore
from .validator import TrustMode, check_bundle

INDEX_NAME = "index.txt"
LOCK_NAME = ".lock"
_TIME_FORMAT = "%Y-%m-%dT%H:%M:%SZ"
_SHA_RE = re.compile(r"[0-9a-f]{64}")
_RESERVED = {INDEX_NAME, LOCK_NAME}


@dataclass(frozen=True)
class RepoTarget:
    root: Path
    kind: str = "filesystem"

    def __post_init__(self):
        object.__setattr__(self, "root", Path(self.root))
        if self.kind != "filesystem":
            raise ValueError("unsupported repository kind %r" % self.kind)


@dataclass(frozen=True)
class IndexEntry:
    filename: str
    size: int
    sha256: str
    signers: "tuple[str, ...]"
    published_at: dt.datetime

    def __post_init__(self):
        object.__setattr__(self, "signers", tuple(self.signers))
        _check_filename(self.filename)
        if not _SHA_RE.fullmatch(self.sha256):
            raise IndexCorrupt("sha256 must be 64 lower-case hex digits")
        if self.size < 0:
            raise IndexCorrupt("negative size")
        if self.published_at.tzinfo is None:
            raise ValueError("published_at must be timezone-aware")
        for s in self.signers:
            if not s or any(c in s for c in ",\t\n"):
                raise IndexCorrupt("bad signer alias %r" % s)

    def to_line(self) -> str:
        stamp = self.published_at.astimezone(dt.timezone.utc).strftime(_TIME_FORMAT)
        return "\t".join((self.filename, str(self.size), self.sha256, ",".join(self.signers), stamp))


@dataclass(frozen=True)
class RepoIndex:
    entries: "tuple[IndexEntry, ...]" = ()

    def __post_init__(self):
        ordered = tuple(sorted(self.entries, key=lambda e: e.filename))
        names = [e.filename for e in ordered]
        if len(set(names)) != len(names):
            raise IndexCorrupt("duplicate filename in index")
        object.__setattr__(self, "entries", ordered)

    def __len__(self) -> int:
        return len(self.entries)

    def get(self, filename: str) -> Optional[IndexEntry]:
        return next((e for e in self.entries if e.filename == filename), None)

    def upsert(self, entry: IndexEntry) -> "RepoIndex":
        return RepoIndex(tuple(e for e in self.entries if e.filename != entry.filename) + (entry,))


def _check_filename(name: str) -> None:
    if (not name or name in _RESERVED or name.startswith(".") or "/" in name or "\\" in name
            or any(c in name for c in "\t\n\r\x00")):
        raise IndexCorrupt("bad repository filename %r" % name)


def _sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def serialize_index(index: RepoIndex) -> bytes:
    return "".join(e.to_line() + "\n" for e in index.entries).encode("utf-8")


def parse_index(data: bytes) -> RepoIndex:
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError:
        raise IndexCorrupt("index is not UTF-8") from None
    if text and not text.endswith("\n"):
        raise IndexCorrupt("index does not end with a line feed")
    entries = []
    for number, line in enumerate(text.split("\n")[:-1], 1):
        fields = line.split("\t")
        if len(fields) != 5:
            raise IndexCorrupt("line %d: expected 5 fields" % number)
        filename, size, sha, signers, stamp = fields
        if not size.isdigit():
            raise IndexCorrupt("line %d: bad size" % number)
        try:
            when = dt.datetime.strptime(stamp, _TIME_FORMAT).replace(tzinfo=dt.timezone.utc)
        except ValueError:
            raise IndexCorrupt("line %d: bad timestamp" % number) from None
        entries.append(IndexEntry(filename, int(size), sha, tuple(signers.split(",")) if signers else (), when))
    index = RepoIndex(tuple(entries))
    if [e.filename for e in entries] != [e.filename for e in index.entries]:
        raise IndexCorrupt("index is not sorted by filename")
    return index


def read_index(target: RepoTarget) -> RepoIndex:
    path = target.root / INDEX_NAME
    try:
        data = path.read_bytes()
    except FileNotFoundError:
        return RepoIndex()
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    return parse_index(data)


def _atomic_write(path: Path, data: bytes) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(OSError):
            os.unlink(tmp)
        raise


def write_index(target: RepoTarget, index: RepoIndex) -> None:
    try:
        _atomic_write(target.root / INDEX_NAME, serialize_index(index))
    except OSError as exc:
        raise IoFailure(str(exc)) from exc


@contextlib.contextmanager
def _locked(target: RepoTarget):
    try:
        fh = open(target.root / LOCK_NAME, "a+b")
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    with fh:
        fcntl.flock(fh.fileno(), fcntl.LOCK_EX)
        try:
            yield
        finally:
            fcntl.flock(fh.fileno(), fcntl.LOCK_UN)


def verify_index(target: RepoTarget, index: RepoIndex) -> None:
    """Raise IndexCorrupt unless every indexed file exists with its recorded size and hash."""
    for e in index.entries:
        path = target.root / e.filename
        try:
            if path.stat().st_size != e.size or _sha256_file(path) != e.sha256:
                raise IndexCorrupt("%s does not match its index entry" % e.filename)
        except FileNotFoundError:
            raise IndexCorrupt("%s is indexed but missing" % e.filename) from None
        except OSError as exc:
            raise IoFailure(str(exc)) from exc


def publish(
    bundle_path,
    target: RepoTarget,
    store: TrustStore,
    at_time: Optional[dt.datetime] = None,
    mode: TrustMode = TrustMode.ALL_SIGNERS,
    *,
    _before_index_write=None,
) -> RepoIndex:
    """Validate ``bundle_path`` and, only if VALID, copy it under the root and index it."""
    bundle_path = Path(bundle_path)
    if at_time is None:
        at_time = dt.datetime.now(dt.timezone.utc)
    if not target.root.is_dir():
        raise IoFailure("repository root %s is not a directory" % target.root)
    filename = bundle_path.name
    _check_filename(filename)
    try:
        data = bundle_path.read_bytes()
    except OSError as exc:
        raise IoFailure(str(exc)) from exc

    report = check_bundle(read_bundle(data), store, at_time, mode)
    if not report.valid:
        raise ValidationFailed("%s is not validly signed" % filename, report)

    with _locked(target):
        index = read_index(target)
        verify_index(target, replace(index, entries=tuple(e for e in index.entries if e.filename != filename)))
        dest = target.root / filename
        try:
            _atomic_write(dest, data)
        except OSError as exc:
            raise IoFailure(str(exc)) from exc
        entry = IndexEntry(
            filename,
            len(data),
            hashlib.sha256(data).hexdigest(),
            tuple(s.alias for s in report.signers if s.path_ok),
            at_time.replace(microsecond=0),
        )
        index = index.upsert(entry)
        if _before_index_write is not None:
            _before_index_write()
        write_index(target, index)
    return index
