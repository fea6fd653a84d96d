"""
Command-line front end.

Exit codes: 0 success or VALID, 1 INVALID, 2 usage error, 3 environment,
I/O, password or processing error.  Passwords are taken from
SFXS_STORE_PASS / SFXS_KEY_PASS / SFXS_ISSUER_KEY_PASS, else prompted for on
a terminal, else read one per line from stdin.  They are never accepted as
arguments.
"""

from __future__ import annotations

import argparse
import contextlib
import datetime as dt
import getpass
import json
import os
import sys
from pathlib import Path

from .algorithms import DigestAlg, KeyAlg
from .archive import EntryClass, read_bundle
from .cms import decode_signed_data
from .errors import BundleSignError, ValidationFailed
from .pki import dn, load_certificates
from .repo import RepoTarget, publish
from .signer import sign_file
from .truststore import (
    EntryKind,
    generate_key_pair,
    new_store,
    open_store,
    save_store,
)
from .validator import REPORT_VERSION, TrustMode, check_file

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_USAGE = 2
EXIT_ERROR = 3

STORE_PASS = "SFXS_STORE_PASS"
KEY_PASS = "SFXS_KEY_PASS"
ISSUER_KEY_PASS = "SFXS_ISSUER_KEY_PASS"


class UsageError(Exception):
    pass


class _Context:
    def __init__(self, env, stdin, stdout, stderr):
        self.env = env
        self.stdin = stdin
        self.stdout = stdout
        self.stderr = stderr

    def password(self, var: str, prompt: str, fallback: str = None) -> str:
        if var in self.env:
            return self.env[var]
        if fallback is not None and fallback in self.env:
            return self.env[fallback]
        isatty = getattr(self.stdin, "isatty", lambda: False)
        if isatty():
            return getpass.getpass(prompt, stream=self.stderr)
        line = self.stdin.readline()
        if not line:
            raise UsageError("no password available for %s" % var)
        return line.rstrip("\r\n")

    def out(self, text: str = "") -> None:
        self.stdout.write(text + "\n")


def _parse_time(text: str) -> dt.datetime:
    try:
        when = dt.datetime.fromisoformat(text.replace("Z", "+00:00"))
    except ValueError:
        raise argparse.ArgumentTypeError("not an ISO 8601 timestamp: %r" % text) from None
    if when.tzinfo is None:
        when = when.replace(tzinfo=dt.timezone.utc)
    return when.astimezone(dt.timezone.utc)


def _digest(text: str) -> DigestAlg:
    try:
        return DigestAlg.from_token(text)
    except BundleSignError:
        raise argparse.ArgumentTypeError("unknown digest %r" % text) from None


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bundlesign", description="Sign, validate and publish bundles.")
    sub = p.add_subparsers(dest="verb", required=True, metavar="VERB")

    def verb(name, help_text, store=True):
        sp = sub.add_parser(name, help=help_text)
        if store:
            sp.add_argument("--store", required=True, type=Path, help="trust store file")
        return sp

    verb("keystore-init", "create an empty trust store")

    sp = verb("keystore-gen", "generate a key pair and certificate")
    sp.add_argument("--alias", required=True)
    sp.add_argument("--dname", required=True, help='e.g. "CN=Alice, O=Acme, C=DE"')
    sp.add_argument("--alg", default="RSA", choices=[a.value for a in KeyAlg])
    sp.add_argument("--key-size", type=int)
    sp.add_argument("--days", type=int, default=365)
    sp.add_argument("--issuer", help="alias of a CA key pair that signs the certificate")
    sp.add_argument("--ca", action="store_true", help="mark the certificate as a CA")
    sp.add_argument("--digest", type=_digest, default=DigestAlg.SHA256)
    sp.add_argument("--not-before", type=_parse_time)

    sp = verb("keystore-import", "import certificates from a PEM or DER file")
    sp.add_argument("--alias", required=True)
    sp.add_argument("--cert", required=True, type=Path)
    sp.add_argument("--trusted", action="store_true")

    sp = verb("keystore-trust", "mark an imported certificate as trusted")
    sp.add_argument("--alias", required=True)

    sp = verb("keystore-list", "list store entries")
    sp.add_argument("--pem", action="store_true", help="also print certificates as PEM")

    sp = verb("sign", "sign a bundle")
    sp.add_argument("--in", dest="input", required=True, type=Path)
    sp.add_argument("--out", required=True, type=Path)
    sp.add_argument("--alias", required=True)
    sp.add_argument("--digest", type=_digest, default=DigestAlg.SHA256)

    sp = verb("check", "validate a signed bundle")
    sp.add_argument("--in", dest="input", required=True, type=Path)
    sp.add_argument("--at", type=_parse_time, help="validation time (default: now)")
    sp.add_argument("--mode", default=TrustMode.ALL_SIGNERS.value, choices=[m.value for m in TrustMode])
    sp.add_argument("--format", default="text", choices=["text", "json"])

    sp = verb("inspect", "show bundle entries and signers", store=False)
    sp.add_argument("--in", dest="input", required=True, type=Path)
    sp.add_argument("--format", default="text", choices=["text", "json"])

    sp = verb("publish", "validate and publish a bundle to a repository")
    sp.add_argument("--in", dest="input", required=True, type=Path)
    sp.add_argument("--repo", required=True, type=Path)
    sp.add_argument("--at", type=_parse_time)
    sp.add_argument("--mode", default=TrustMode.ALL_SIGNERS.value, choices=[m.value for m in TrustMode])
    return p


# -- verbs -------------------------------------------------------------------------

def _keystore_init(args, ctx):
    if args.store.exists():
        raise FileExistsError("%s already exists" % args.store)
    save_store(new_store(), args.store, ctx.password(STORE_PASS, "Store password: "))
    ctx.out("created %s" % args.store)
    return EXIT_OK


def _keystore_gen(args, ctx):
    store_pw = ctx.password(STORE_PASS, "Store password: ")
    store = open_store(args.store, store_pw)
    key_pw = ctx.password(KEY_PASS, "Key password: ")
    issuer_pw = None
    if args.issuer is not None:
        issuer_pw = ctx.password(ISSUER_KEY_PASS, "Issuer key password: ", fallback=KEY_PASS)
    try:
        subject = dn(args.dname)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    store, cert = generate_key_pair(
        store, args.alias, subject, KeyAlg(args.alg), args.days, args.issuer, key_pw,
        is_ca=args.ca, issuer_key_password=issuer_pw, key_size=args.key_size,
        digest_alg=args.digest, not_before=args.not_before,
    )
    save_store(store, args.store, store_pw)
    ctx.out("%s\t%s\tserial=%d" % (args.alias.lower(), cert.subject, cert.serial))
    return EXIT_OK


def _keystore_import(args, ctx):
    store_pw = ctx.password(STORE_PASS, "Store password: ")
    store = open_store(args.store, store_pw)
    certs = load_certificates(args.cert.read_bytes())
    if not certs:
        raise UsageError("no certificate found in %s" % args.cert)
    aliases = [args.alias] if len(certs) == 1 else ["%s-%d" % (args.alias, i) for i in range(len(certs))]
    for alias, cert in zip(aliases, certs):
        store = store.add_certificate(alias, cert, args.trusted)
        ctx.out("%s\t%s" % (alias.lower(), cert.subject))
    save_store(store, args.store, store_pw)
    return EXIT_OK


def _keystore_trust(args, ctx):
    store_pw = ctx.password(STORE_PASS, "Store password: ")
    store = open_store(args.store, store_pw).mark_trusted(args.alias)
    save_store(store, args.store, store_pw)
    ctx.out("trusted %s" % args.alias.lower())
    return EXIT_OK


_KIND_NAMES = {EntryKind.TRUSTED_CERT: "trusted-cert", EntryKind.UNTRUSTED_CERT: "untrusted-cert",
               EntryKind.KEY_PAIR: "key-pair"}


def _keystore_list(args, ctx):
    store = open_store(args.store, ctx.password(STORE_PASS, "Store password: "))
    for entry in store:
        cert = entry.certificate
        ctx.out("%s\t%s\t%s\t%s\t%s" % (
            entry.alias, _KIND_NAMES[entry.kind], cert.subject,
            cert.not_after.strftime("%Y-%m-%dT%H:%M:%SZ"), "ca" if cert.is_ca else "end-entity",
        ))
        if args.pem:
            ctx.stdout.write(cert.to_pem())
    return EXIT_OK


def _sign(args, ctx):
    if args.input.resolve() == args.out.resolve():
        raise UsageError("--in and --out must name different files")
    store_pw = ctx.password(STORE_PASS, "Store password: ")
    key_pw = ctx.password(KEY_PASS, "Key password: ")
    sign_file(args.input, args.out, args.store, args.alias, store_pw, key_pw, args.digest)
    ctx.out("signed %s -> %s as %s" % (args.input, args.out, args.alias.lower()))
    return EXIT_OK


def _check(args, ctx):
    store_pw = ctx.password(STORE_PASS, "Store password: ")
    report = check_file(args.input, args.store, store_pw, args.at, TrustMode(args.mode))
    if args.format == "json":
        ctx.out(report.to_json())
    else:
        ctx.stdout.write(report.to_text())
    return EXIT_OK if report.valid else EXIT_INVALID


def _inspect(args, ctx):
    bundle = read_bundle(args.input.read_bytes())
    entries = []
    for e in bundle:
        item = {"path": e.path, "kind": e.kind.name, "compression": e.compression.name, "size": len(e.content)}
        if e.kind is EntryClass.SIGNATURE_BLOCK:
            try:
                doc = decode_signed_data(e.content, strict=False)
                item["certificates"] = [str(c.subject) for c in doc.certificates]
            except (BundleSignError, ValueError) as exc:
                item["error"] = str(exc)
        entries.append(item)
    if args.format == "json":
        ctx.out(json.dumps({"report-version": REPORT_VERSION, "entries": entries}, indent=2))
        return EXIT_OK
    ctx.out("report-version: %d" % REPORT_VERSION)
    for item in entries:
        ctx.out("%s\t%s\t%s\t%d" % (item["path"], item["kind"], item["compression"], item["size"]))
        for subject in item.get("certificates", ()):
            ctx.out("  certificate: %s" % subject)
        if "error" in item:
            ctx.out("  error: %s" % item["error"])
    return EXIT_OK


def _publish(args, ctx):
    store = open_store(args.store, ctx.password(STORE_PASS, "Store password: "))
    try:
        index = publish(args.input, RepoTarget(args.repo), store, args.at, TrustMode(args.mode))
    except ValidationFailed as exc:
        ctx.stderr.write("bundlesign: %s\n" % exc)
        if exc.report is not None:
            ctx.stdout.write(exc.report.to_text())
        return EXIT_INVALID
    entry = index.get(args.input.name)
    ctx.out("published %s sha256=%s" % (entry.filename, entry.sha256))
    return EXIT_OK


_VERBS = {
    "keystore-init": _keystore_init,
    "keystore-gen": _keystore_gen,
    "keystore-import": _keystore_import,
    "keystore-trust": _keystore_trust,
    "keystore-list": _keystore_list,
    "sign": _sign,
    "check": _check,
    "inspect": _inspect,
    "publish": _publish,
}


def run(argv, env=None, stdin=None, stdout=None, stderr=None) -> int:
    """Run one CLI invocation and return its exit code."""
    env = dict(os.environ if env is None else env)
    stdin = sys.stdin if stdin is None else stdin
    stdout = sys.stdout if stdout is None else stdout
    stderr = sys.stderr if stderr is None else stderr
    parser = _build_parser()
    try:
        with contextlib.redirect_stdout(stdout), contextlib.redirect_stderr(stderr):
            args = parser.parse_args(list(argv))
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    ctx = _Context(env, stdin, stdout, stderr)
    try:
        return _VERBS[args.verb](args, ctx)
    except UsageError as exc:
        stderr.write("bundlesign: %s\n" % exc)
        return EXIT_USAGE
    except (BundleSignError, OSError, ValueError) as exc:
        stderr.write("bundlesign: %s: %s\n" % (type(exc).__name__, exc))
        return EXIT_ERROR


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
