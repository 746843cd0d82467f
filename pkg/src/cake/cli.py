"""Command-line front end.

Commands map one-to-one onto protocol operations and run against a local
deployment directory (``--home``, default ``$CAKE_HOME`` or ``./.cake``)
that is auto-provisioned on first use: master secret, service identities,
genesis configuration, an append-only chain file, and a blob directory.
When ``CAKE_SDM_ADDR`` / ``CAKE_UD_ADDR`` / ``CAKE_SKM_ADDR`` are set
(``host:port``), the client commands talk to remote services (see
``cake serve``) instead of in-process ones.

Exit codes: 0 success, 64 usage, 65-75 one code per error class.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path
from typing import Optional

from . import abe, cas, ledger, protocol, scenario
from . import policy as policy_mod
from .codec import CodecError
from .errors import CakeError

EXIT_OK = 0
EXIT_USAGE = 64
EXIT_POLICY_SYNTAX = 65
EXIT_NOT_FOUND = 66
EXIT_POLICY_NOT_SATISFIED = 67
EXIT_INTEGRITY = 68
EXIT_AUTH = 69
EXIT_NOT_CERTIFIED = 70
EXIT_LEDGER_REJECTED = 71
EXIT_STORAGE = 72
EXIT_CHAIN_INVALID = 73
EXIT_BAD_REQUEST = 74
EXIT_OTHER = 75

_EXIT_CODES: list[tuple[tuple[type, ...], int]] = [
    ((policy_mod.PolicyError,), EXIT_POLICY_SYNTAX),
    ((ledger.RecordNotFound, cas.BlobNotFound), EXIT_NOT_FOUND),
    ((abe.PolicyNotSatisfied,), EXIT_POLICY_NOT_SATISFIED),
    ((abe.IntegrityFailure, cas.IntegrityViolation), EXIT_INTEGRITY),
    ((protocol.AuthFailure, protocol.UnknownClient, protocol.ReplayDetected),
     EXIT_AUTH),
    ((protocol.NotCertified, ledger.NotCertifier), EXIT_NOT_CERTIFIED),
    ((protocol.LedgerRejected, ledger.AlreadyRecorded, ledger.BadNonce,
      ledger.BadSignature, ledger.UnknownContract), EXIT_LEDGER_REJECTED),
    ((cas.StorageFailure, cas.BlobTooLarge), EXIT_STORAGE),
    ((abe.EmptyContainer, abe.DuplicateLabel, abe.EmptyAttributeSet,
      cas.MalformedLocator, CodecError, scenario.ScenarioError), EXIT_BAD_REQUEST),
    ((CakeError,), EXIT_OTHER),
]


def exit_code_for(exc: Exception) -> int:
    for classes, code in _EXIT_CODES:
        if isinstance(exc, classes):
            return code
    return EXIT_OTHER


class UsageError(Exception):
    pass


# --- the deployment directory ------------------------------------------------

class Home:
    """On-disk deployment state for the in-process services."""

    def __init__(self, path: Path) -> None:
        self.path = path
        self._loaded_height = 0

    # file layout
    @property
    def master_file(self) -> Path: return self.path / "master.key"
    @property
    def services_file(self) -> Path: return self.path / "services.json"
    @property
    def chain_file(self) -> Path: return self.path / "chain.bin"
    @property
    def directory_file(self) -> Path: return self.path / "directory.json"
    @property
    def identities_dir(self) -> Path: return self.path / "identities"
    @property
    def keys_dir(self) -> Path: return self.path / "keys"

    def ensure_provisioned(self) -> None:
        if self.master_file.exists():
            return
        self.path.mkdir(parents=True, exist_ok=True)
        self.identities_dir.mkdir(exist_ok=True)
        self.keys_dir.mkdir(exist_ok=True)
        master = abe.setup()
        services = {name: protocol.Identity.generate().to_dict()
                    for name in ("sdm", "ud", "skm", "certifier")}
        self.services_file.write_text(json.dumps(services, indent=2))
        self.master_file.write_text(master.root_key.hex())
        self.chain_file.write_bytes(b"")
        self.directory_file.write_text(json.dumps({"peers": {}}, indent=2))
        print(f"provisioned new deployment in {self.path}", file=sys.stderr)

    def open(self) -> protocol.Deployment:
        self.ensure_provisioned()
        master = abe.MasterSecret(bytes.fromhex(self.master_file.read_text().strip()))
        services = json.loads(self.services_file.read_text())
        identities = {name: protocol.Identity.from_dict(blob)
                      for name, blob in services.items()}
        certifier = identities["certifier"]
        chain = ledger.Chain.load(
            accounts=[identities["sdm"].signing_public, certifier.signing_public],
            certifiers=[certifier.address],
            data=self.chain_file.read_bytes())
        self._loaded_height = chain.height
        store = cas.DirectoryBlobStore(self.path)
        directory = protocol.IdentityDirectory()
        directory.register(certifier.public())
        for peer in json.loads(self.directory_file.read_text())["peers"].values():
            directory.register(protocol.PeerIdentity.from_dict(peer))
        sdm = protocol.SdmService(identities["sdm"], directory, master, chain, store)
        ud = protocol.UdService(identities["ud"], directory, chain, store,
                                {certifier.address: certifier.signer})
        skm = protocol.SkmService(identities["skm"], directory, master, chain, store)
        return protocol.Deployment(master, chain, store, directory,
                                   sdm, ud, skm, certifier)

    def save_chain(self, chain: ledger.Chain) -> None:
        """Append blocks sealed since load; the file stays append-only."""
        with self.chain_file.open("ab") as fh:
            for block in chain.blocks[self._loaded_height:]:
                body = block.serialize()
                fh.write(len(body).to_bytes(4, "big") + body)
        self._loaded_height = chain.height

    # named identities and keys
    def save_identity(self, name: str, identity: protocol.Identity) -> None:
        self.identities_dir.mkdir(parents=True, exist_ok=True)
        path = self.identities_dir / f"{name}.json"
        path.write_text(json.dumps(identity.to_dict(), indent=2))
        path.chmod(0o600)
        registry = json.loads(self.directory_file.read_text())
        registry["peers"][name] = identity.public().to_dict()
        self.directory_file.write_text(json.dumps(registry, indent=2))

    def identity(self, name: str) -> protocol.Identity:
        path = self.identities_dir / f"{name}.json"
        if not path.exists():
            raise UsageError(f"unknown identity {name!r}; run: cake identity new {name}")
        return protocol.Identity.from_dict(json.loads(path.read_text()))

    def address_of(self, name: str) -> bytes:
        peers = json.loads(self.directory_file.read_text())["peers"]
        if name not in peers:
            raise UsageError(f"unknown identity {name!r}; run: cake identity new {name}")
        return bytes.fromhex(peers[name]["address"])

    def save_user_key(self, name: str, key: abe.UserKey) -> Path:
        self.keys_dir.mkdir(parents=True, exist_ok=True)
        path = self.keys_dir / f"{name}.key"
        path.write_bytes(abe.serialize_user_key(key))
        path.chmod(0o600)
        return path

    def user_key(self, name: str) -> abe.UserKey:
        path = self.keys_dir / f"{name}.key"
        if not path.exists():
            raise UsageError(f"no key for {name!r}; run: cake key request --as {name}")
        return abe.parse_user_key(path.read_bytes())


def _remote_addr(var: str) -> Optional[tuple[str, int]]:
    value = os.environ.get(var)
    if not value:
        return None
    host, _, port = value.rpartition(":")
    if not host or not port.isdigit():
        raise UsageError(f"{var} must be host:port, got {value!r}")
    return host, int(port)


def _connect(home: Home, deployment: protocol.Deployment, which: str,
             identity: protocol.Identity) -> protocol.ServiceClient:
    remote = _remote_addr(f"CAKE_{which.upper()}_ADDR")
    service = getattr(deployment, which)
    if remote is None:
        return protocol.ServiceClient(identity, service.public(),
                                      protocol.serve_in_background(service))
    return protocol.ServiceClient(identity, service.public(),
                                  protocol.connect_tcp(*remote))


# --- output helpers -------------------------------------------------------------

def _emit(args: argparse.Namespace, human: str, payload: dict) -> None:
    if args.format == "json":
        print(json.dumps(payload, indent=2, sort_keys=True))
    else:
        print(human)


# --- commands --------------------------------------------------------------------

def cmd_identity_new(args: argparse.Namespace, home: Home) -> int:
    home.ensure_provisioned()
    identity = protocol.Identity.generate()
    home.save_identity(args.name, identity)
    _emit(args, f"{args.name}: {identity.address.hex()}",
          {"name": args.name, "address": identity.address.hex()})
    return EXIT_OK


def cmd_certify(args: argparse.Namespace, home: Home) -> int:
    deployment = home.open()
    actor = home.address_of(args.actor)
    client = _connect(home, deployment, "ud", deployment.certifier)
    try:
        locator = client.certify(actor, args.attributes)
    finally:
        client.close()
    home.save_chain(deployment.chain)
    _emit(args, f"certified {args.actor} -> {locator}",
          {"actor": args.actor, "address": actor.hex(),
           "attributes": sorted(policy_mod.normalize_attribute(a)
                                for a in args.attributes),
           "metadata_locator": locator})
    return EXIT_OK


def _collect_slices(args: argparse.Namespace) -> list[tuple[str, str, bytes]]:
    policies = args.policy or []
    extra = args.slice or []
    expected = len(extra) + (1 if args.file else 0)
    if not policies or len(policies) != expected:
        raise UsageError("each slice (the positional file and every --slice) "
                         "needs exactly one --policy, in order")
    slices: list[tuple[str, str, bytes]] = []
    cursor = 0
    if args.file:
        path = Path(args.file)
        slices.append((args.label or path.name, policies[0], path.read_bytes()))
        cursor = 1
    for spec in extra:
        label, sep, filename = spec.partition("=")
        if not sep or not label or not filename:
            raise UsageError(f"--slice wants label=file, got {spec!r}")
        slices.append((label, policies[cursor], Path(filename).read_bytes()))
        cursor += 1
    return slices


def cmd_store(args: argparse.Namespace, home: Home) -> int:
    slices = _collect_slices(args)
    deployment = home.open()
    client = _connect(home, deployment, "sdm", home.identity(args.as_name))
    try:
        message_id, locator = client.store(slices)
    finally:
        client.close()
    home.save_chain(deployment.chain)
    _emit(args, f"message {message_id.hex()} -> {locator}",
          {"message_id": message_id.hex(), "locator": locator,
           "slices": [label for label, _, _ in slices]})
    return EXIT_OK


def cmd_key_request(args: argparse.Namespace, home: Home) -> int:
    deployment = home.open()
    client = _connect(home, deployment, "skm", home.identity(args.as_name))
    try:
        key = client.request_key()
    finally:
        client.close()
    path = home.save_user_key(args.as_name, key)
    _emit(args, f"key for {args.as_name} ({', '.join(sorted(key.attributes))}) "
                f"saved to {path}",
          {"holder": key.holder.hex(), "attributes": sorted(key.attributes),
           "issued_at": key.issued_at, "path": str(path)})
    return EXIT_OK


def cmd_read(args: argparse.Namespace, home: Home) -> int:
    try:
        message_id = bytes.fromhex(args.message_id)
    except ValueError:
        raise UsageError("message id must be hex")
    deployment = home.open()
    key = home.user_key(args.as_name)
    results = protocol.client_read(deployment.chain, deployment.store,
                                   message_id, key)
    payload: dict = {"message_id": args.message_id, "slices": []}
    lines = []
    readable = 0
    for label, body in results:
        if body is None:
            lines.append(f"{label}: policy not satisfied")
            payload["slices"].append({"label": label, "readable": False})
            continue
        readable += 1
        if args.out_dir:
            out = Path(args.out_dir)
            out.mkdir(parents=True, exist_ok=True)
            (out / label).write_bytes(body)
            lines.append(f"{label}: {len(body)} bytes -> {out / label}")
        else:
            try:
                rendered = body.decode("utf-8")
            except UnicodeDecodeError:
                rendered = body.hex()
            lines.append(f"{label}: {rendered}")
        payload["slices"].append({"label": label, "readable": True,
                                  "bytes": len(body)})
    _emit(args, "\n".join(lines), payload)
    if readable == 0:
        raise abe.PolicyNotSatisfied("no slice readable with this key")
    return EXIT_OK


def cmd_ledger_verify(args: argparse.Namespace, home: Home) -> int:
    deployment = home.open()
    result = deployment.chain.verify()
    _emit(args,
          "ledger ok" if result.ok else f"ledger INVALID at height {result.failed_height}",
          {"ok": result.ok, "failed_height": result.failed_height,
           "height": deployment.chain.height})
    return EXIT_OK if result.ok else EXIT_CHAIN_INVALID


def cmd_ledger_show(args: argparse.Namespace, home: Home) -> int:
    try:
        message_id = bytes.fromhex(args.message_id)
    except ValueError:
        raise UsageError("message id must be hex")
    deployment = home.open()
    record = deployment.chain.message_get(message_id)
    _emit(args,
          f"{args.message_id}: locator={record.locator} "
          f"sender={record.sender.hex()} height={record.height}",
          {"message_id": args.message_id, "locator": record.locator,
           "sender": record.sender.hex(), "height": record.height})
    return EXIT_OK


def _run_scenario(args: argparse.Namespace, script: scenario.ScenarioScript) -> int:
    report = scenario.run_scenario(script, seed=args.seed)
    if args.ledger_out:
        Path(args.ledger_out).write_bytes(report.ledger_bytes)
    if args.format == "json":
        print(report.to_json())
    else:
        print(report.format_table())
        print(f"ledger height={report.ledger_height} "
              f"verified={'ok' if report.chain_ok else 'INVALID'}")
    if not report.chain_ok:
        return EXIT_CHAIN_INVALID
    if not report.matrix_ok:
        print(f"access matrix mismatch: {report.mismatches()}", file=sys.stderr)
        return 1
    return EXIT_OK


def cmd_scenario_brie(args: argparse.Namespace, home: Home) -> int:
    return _run_scenario(args, scenario.brie_script())


def cmd_scenario_run(args: argparse.Namespace, home: Home) -> int:
    script = scenario.parse_script(Path(args.script).read_text())
    return _run_scenario(args, script)


def cmd_serve(args: argparse.Namespace, home: Home) -> int:
    deployment = home.open()
    servers = [
        protocol.serve_tcp(deployment.sdm, args.host, args.sdm_port),
        protocol.serve_tcp(deployment.ud, args.host, args.ud_port),
        protocol.serve_tcp(deployment.skm, args.host, args.skm_port),
    ]
    import threading
    for server in servers:
        threading.Thread(target=server.serve_forever, daemon=True).start()
    print(f"sdm={args.host}:{args.sdm_port} ud={args.host}:{args.ud_port} "
          f"skm={args.host}:{args.skm_port}", file=sys.stderr)
    print("serving; ctrl-c to stop (chain changes are saved on exit)",
          file=sys.stderr)
    try:
        threading.Event().wait()
    except KeyboardInterrupt:
        pass
    finally:
        for server in servers:
            server.shutdown()
        home.save_chain(deployment.chain)
    return EXIT_OK


# --- parser --------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cake",
        description="Share policy-encrypted document slices over a "
                    "content-addressed store and a notarizing ledger.")
    parser.add_argument("--home", default=None,
                        help="deployment directory (default $CAKE_HOME or ./.cake)")
    parser.add_argument("--format", choices=("table", "json"), default="table")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("identity", help="identity management")
    idsub = p.add_subparsers(dest="subcommand", required=True)
    p = idsub.add_parser("new", help="create and register a named identity")
    p.add_argument("name")
    p.set_defaults(func=cmd_identity_new)

    p = sub.add_parser("certify", help="certify an actor's attributes")
    p.add_argument("actor")
    p.add_argument("attributes", nargs="+")
    p.set_defaults(func=cmd_certify)

    p = sub.add_parser("store", help="encrypt, store, and notarize slices")
    p.add_argument("--as", dest="as_name", required=True,
                   help="identity submitting the data")
    p.add_argument("--policy", action="append",
                   help="policy for the next slice (repeatable, in order)")
    p.add_argument("--slice", action="append", metavar="LABEL=FILE",
                   help="additional slice (repeatable)")
    p.add_argument("--label", help="label for the positional file")
    p.add_argument("file", nargs="?", help="file for the first slice")
    p.set_defaults(func=cmd_store)

    p = sub.add_parser("key", help="decryption keys")
    keysub = p.add_subparsers(dest="subcommand", required=True)
    p = keysub.add_parser("request", help="request this identity's key")
    p.add_argument("--as", dest="as_name", required=True)
    p.set_defaults(func=cmd_key_request)

    p = sub.add_parser("read", help="fetch and decrypt a notarized message")
    p.add_argument("message_id")
    p.add_argument("--as", dest="as_name", required=True)
    p.add_argument("--out-dir", help="write readable slices into this directory")
    p.set_defaults(func=cmd_read)

    p = sub.add_parser("ledger", help="chain queries")
    ledsub = p.add_subparsers(dest="subcommand", required=True)
    p = ledsub.add_parser("verify", help="recheck every block and signature")
    p.set_defaults(func=cmd_ledger_verify)
    p = ledsub.add_parser("show", help="resolve a message id")
    p.add_argument("message_id")
    p.set_defaults(func=cmd_ledger_show)

    p = sub.add_parser("scenario", help="end-to-end scenario runs")
    scsub = p.add_subparsers(dest="subcommand", required=True)
    p = scsub.add_parser("brie", help="run the built-in import-export exchange")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--ledger-out", help="write the run's ledger bytes here")
    p.set_defaults(func=cmd_scenario_brie)
    p = scsub.add_parser("run", help="run a scenario script file")
    p.add_argument("script")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--ledger-out")
    p.set_defaults(func=cmd_scenario_run)

    p = sub.add_parser("serve", help="host the services over TCP")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--sdm-port", type=int, default=7801)
    p.add_argument("--ud-port", type=int, default=7802)
    p.add_argument("--skm-port", type=int, default=7803)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else 0
    home = Home(Path(args.home or os.environ.get("CAKE_HOME", ".cake")))
    try:
        return args.func(args, home)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (CakeError, CodecError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exit_code_for(exc)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STORAGE


if __name__ == "__main__":
    sys.exit(main())
