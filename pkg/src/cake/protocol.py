"""The three services (data manager, user directory, key manager) and their
client library, over an authenticated, encrypted, length-prefixed transport.

Every conversation starts with a three-message handshake::

    client -> server   HELLO     address, ephemeral X25519 key, nonce
    server -> client   CHALLENGE ephemeral X25519 key, nonce, signature
    client -> server   AUTH      signature

Each side signs the running transcript with its Ed25519 identity key: the
server's key is known to clients ahead of time, the client's is resolved
from the shared identity directory by the address claimed in HELLO. The
session key is derived (HKDF-SHA256, salted with the transcript hash) from
the ephemeral-ephemeral exchange plus an exchange against the server's
static key-agreement key. Signing with any key other than the one
registered for the claimed address fails the handshake, as does replaying
a recorded HELLO (nonce tracking) or a recorded AUTH in a fresh session
(the transcript differs).

After the handshake, every frame is AES-GCM sealed under the session key
with a per-direction counter as the nonce and the transcript hash as
associated data; counters strictly increase, so recorded frames cannot be
replayed into a live session. Frame layout on the wire is a 4-byte
big-endian length followed by the (sealed) body.

Services:

* ``SdmService`` — encrypts submitted slices under their policies, puts the
  container on the content store, and notarizes message id -> locator on
  the chain under its own address (the submitting owner never appears).
* ``UdService``  — serves attribute certifiers: uploads signed actor
  metadata to the content store and records its locator on the chain. The
  service holds the ledger signers of the certifiers it fronts; a session
  from any other identity is refused.
* ``SkmService`` — issues attribute-bound user keys: resolves the caller's
  latest certified metadata through chain + store, re-derives wrap keys,
  and returns the bundle over the sealed channel only.

Reading is a pure client-side operation (``client_read``): ledger lookup,
verified content fetch, container decryption.

Services may serve many sessions concurrently (state per session is local),
but a deterministic deployment should drive them sequentially with a seeded
entropy source, as the scenario harness does.
"""

from __future__ import annotations

import hashlib
import random
import socket
import socketserver
import threading
import time
from dataclasses import dataclass
from queue import Empty, Queue
from typing import Callable, Iterable, Optional

from cryptography.exceptions import InvalidSignature, InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import AESGCM
from cryptography.hazmat.primitives.hashes import SHA256
from cryptography.hazmat.primitives.kdf.hkdf import HKDF
from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PublicKey
from cryptography.hazmat.primitives.asymmetric.x25519 import (
    X25519PrivateKey,
    X25519PublicKey,
)

from . import abe, cas, ledger
from . import policy as policy_mod
from .codec import CodecError, Reader, Writer
from .errors import CakeError

MAX_FRAME_BYTES = 80 * 1024 * 1024
NONCE_LEN = 16

TAG_HELLO = 0x01
TAG_CHALLENGE = 0x02
TAG_AUTH = 0x03
TAG_STORE_REQ = 0x10
TAG_STORE_RESP = 0x11
TAG_CERTIFY_REQ = 0x12
TAG_CERTIFY_RESP = 0x13
TAG_KEY_REQ = 0x14
TAG_KEY_RESP = 0x15
TAG_ERROR = 0x1F

_SERVER_SIG_CONTEXT = b"cake/handshake/server/v1"
_CLIENT_SIG_CONTEXT = b"cake/handshake/client/v1"
_SESSION_KEY_INFO = b"cake/session-key/v1"

_DIR_CLIENT_TO_SERVER = 0x01
_DIR_SERVER_TO_CLIENT = 0x02

Clock = Callable[[], int]


def _system_clock() -> int:
    return int(time.time())


class ProtocolError(CakeError):
    pass


class TransportClosed(ProtocolError):
    """The peer closed the connection."""


class AuthFailure(ProtocolError):
    """Handshake signature or sealed-frame authentication failed."""


class UnknownClient(ProtocolError):
    """The claimed address is not in the identity directory."""


class ReplayDetected(ProtocolError):
    """A handshake nonce was reused."""


class NotCertified(ProtocolError):
    """The caller has no actor record on the chain."""


class LedgerRejected(ProtocolError):
    """The chain rejected the transaction backing this operation."""


class RemoteServiceError(ProtocolError):
    """Error reported by the peer that maps to no local exception type."""

    def __init__(self, code: str, message: str) -> None:
        super().__init__(f"{code}: {message}")
        self.code = code


# --- identities ---------------------------------------------------------------

class Identity:
    """An actor's signing keypair plus static key-agreement keypair."""

    def __init__(self, signer: ledger.Signer, kx_private: X25519PrivateKey) -> None:
        self.signer = signer
        self.kx_private = kx_private
        self.address = signer.address
        self.signing_public = signer.public_bytes
        self.kx_public = kx_private.public_key().public_bytes_raw()

    @classmethod
    def generate(cls, rng: Optional[random.Random] = None) -> "Identity":
        if rng is None:
            return cls(ledger.Signer.generate(), X25519PrivateKey.generate())
        return cls(ledger.Signer.from_seed(rng.randbytes(32)),
                   X25519PrivateKey.from_private_bytes(rng.randbytes(32)))

    def public(self) -> "PeerIdentity":
        return PeerIdentity(self.address, self.signing_public, self.kx_public)

    def to_dict(self) -> dict[str, str]:
        return {
            "signing_private": self.signer.private_bytes().hex(),
            "kx_private": self.kx_private.private_bytes_raw().hex(),
        }

    @classmethod
    def from_dict(cls, data: dict[str, str]) -> "Identity":
        return cls(
            ledger.Signer.from_seed(bytes.fromhex(data["signing_private"])),
            X25519PrivateKey.from_private_bytes(bytes.fromhex(data["kx_private"])),
        )


@dataclass(frozen=True)
class PeerIdentity:
    """The public half of an identity, as published to peers."""
    address: bytes
    signing_public: bytes
    kx_public: bytes

    def to_dict(self) -> dict[str, str]:
        return {
            "address": self.address.hex(),
            "signing_public": self.signing_public.hex(),
            "kx_public": self.kx_public.hex(),
        }

    @classmethod
    def from_dict(cls, data: dict[str, str]) -> "PeerIdentity":
        return cls(bytes.fromhex(data["address"]),
                   bytes.fromhex(data["signing_public"]),
                   bytes.fromhex(data["kx_public"]))


class IdentityDirectory:
    """address -> signing key map the services authenticate clients against."""

    def __init__(self) -> None:
        self._signing_keys: dict[bytes, bytes] = {}

    def register(self, peer: PeerIdentity | Identity) -> None:
        self._signing_keys[peer.address] = (
            peer.signing_public if isinstance(peer, PeerIdentity)
            else peer.signer.public_bytes)

    def resolve(self, address: bytes) -> Optional[bytes]:
        return self._signing_keys.get(address)


@dataclass(frozen=True)
class ActorMetadata:
    """Certified actor -> attributes binding, uploaded to the content store."""
    actor: bytes
    attributes: frozenset[str]
    certified_at: int
    certifier: bytes


def serialize_actor_metadata(md: ActorMetadata) -> bytes:
    w = Writer()
    w.put_raw(md.actor)
    w.put_u32(len(md.attributes))
    for name in sorted(md.attributes):
        w.put_str(name)
    w.put_u64(md.certified_at)
    w.put_raw(md.certifier)
    return w.getvalue()


def parse_actor_metadata(data: bytes) -> ActorMetadata:
    r = Reader(data)
    actor = r.take_raw(ledger.ADDRESS_BYTES)
    attrs = frozenset(r.take_str() for _ in range(r.take_u32()))
    certified_at = r.take_u64()
    certifier = r.take_raw(ledger.ADDRESS_BYTES)
    r.expect_end()
    return ActorMetadata(actor, attrs, certified_at, certifier)


# --- transports ----------------------------------------------------------------

class Transport:
    """Byte-frame duplex channel: 4-byte big-endian length, then the body."""

    def send_frame(self, body: bytes) -> None:
        raise NotImplementedError

    def recv_frame(self) -> bytes:
        raise NotImplementedError

    def close(self) -> None:
        raise NotImplementedError


class MemoryTransport(Transport):
    """One endpoint of an in-process duplex channel."""

    _CLOSE = object()

    def __init__(self, inbox: Queue, outbox: Queue) -> None:
        self._inbox = inbox
        self._outbox = outbox
        self._closed = False

    def send_frame(self, body: bytes) -> None:
        if self._closed:
            raise TransportClosed("transport closed")
        if len(body) > MAX_FRAME_BYTES:
            raise ProtocolError("frame exceeds size limit")
        self._outbox.put(body)

    def recv_frame(self) -> bytes:
        while True:
            try:
                item = self._inbox.get(timeout=30.0)
            except Empty:
                raise TransportClosed("peer went silent")
            if item is MemoryTransport._CLOSE:
                self._inbox.put(item)  # keep raising for later readers
                raise TransportClosed("peer closed the channel")
            return item

    def close(self) -> None:
        if not self._closed:
            self._closed = True
            self._outbox.put(MemoryTransport._CLOSE)


def memory_pair() -> tuple[MemoryTransport, MemoryTransport]:
    a_to_b: Queue = Queue()
    b_to_a: Queue = Queue()
    return MemoryTransport(b_to_a, a_to_b), MemoryTransport(a_to_b, b_to_a)


class SocketTransport(Transport):
    """Stream-socket transport with the same framing."""

    def __init__(self, sock: socket.socket) -> None:
        self._sock = sock

    def send_frame(self, body: bytes) -> None:
        if len(body) > MAX_FRAME_BYTES:
            raise ProtocolError("frame exceeds size limit")
        try:
            self._sock.sendall(len(body).to_bytes(4, "big") + body)
        except OSError as exc:
            raise TransportClosed(f"socket send failed: {exc}") from exc

    def _recv_exact(self, n: int) -> bytes:
        chunks = []
        while n:
            try:
                chunk = self._sock.recv(n)
            except OSError as exc:
                raise TransportClosed(f"socket recv failed: {exc}") from exc
            if not chunk:
                raise TransportClosed("peer closed the socket")
            chunks.append(chunk)
            n -= len(chunk)
        return b"".join(chunks)

    def recv_frame(self) -> bytes:
        length = int.from_bytes(self._recv_exact(4), "big")
        if length > MAX_FRAME_BYTES:
            raise ProtocolError("incoming frame exceeds size limit")
        return self._recv_exact(length)

    def close(self) -> None:
        try:
            self._sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self._sock.close()


# --- wire errors ----------------------------------------------------------------

# Exception classes a service may report to its client. All constructible
# from a single message, except the policy errors which carry an offset.
_WIRE_ERROR_CLASSES: dict[str, Callable[[str, int], CakeError]] = {
    "PolicySyntaxError": lambda m, off: policy_mod.PolicySyntaxError(m, off),
    "InvalidAttributeError": lambda m, off: policy_mod.InvalidAttributeError(m, off),
    "EmptyContainer": lambda m, _: abe.EmptyContainer(m),
    "DuplicateLabel": lambda m, _: abe.DuplicateLabel(m),
    "EmptyAttributeSet": lambda m, _: abe.EmptyAttributeSet(m),
    "IntegrityFailure": lambda m, _: abe.IntegrityFailure(m),
    "BlobTooLarge": lambda m, _: cas.BlobTooLarge(m),
    "StorageFailure": lambda m, _: cas.StorageFailure(m),
    "BlobNotFound": lambda m, _: cas.BlobNotFound(m),
    "IntegrityViolation": lambda m, _: cas.IntegrityViolation(m),
    "NotCertifier": lambda m, _: ledger.NotCertifier(m),
    "RecordNotFound": lambda m, _: ledger.RecordNotFound(m),
    "AuthFailure": lambda m, _: AuthFailure(m),
    "UnknownClient": lambda m, _: UnknownClient(m),
    "ReplayDetected": lambda m, _: ReplayDetected(m),
    "NotCertified": lambda m, _: NotCertified(m),
    "LedgerRejected": lambda m, _: LedgerRejected(m),
}


def _encode_error(exc: Exception) -> bytes:
    w = Writer()
    w.put_str(type(exc).__name__)
    w.put_str(str(exc.args[0]) if exc.args else str(exc))
    w.put_u64(max(getattr(exc, "offset", 0), 0))
    return w.getvalue()


def _raise_wire_error(payload: bytes) -> None:
    r = Reader(payload)
    code = r.take_str()
    message = r.take_str()
    offset = r.take_u64()
    factory = _WIRE_ERROR_CLASSES.get(code)
    if factory is None:
        raise RemoteServiceError(code, message)
    raise factory(message, offset)


# --- handshake and sealed session ------------------------------------------------

def _x25519_public(private: X25519PrivateKey) -> bytes:
    return private.public_key().public_bytes_raw()


def _exchange(private: X25519PrivateKey, peer_public: bytes) -> bytes:
    return private.exchange(X25519PublicKey.from_public_bytes(peer_public))


def _session_key(shared: bytes, transcript_hash: bytes) -> bytes:
    return HKDF(algorithm=SHA256(), length=32, salt=transcript_hash,
                info=_SESSION_KEY_INFO).derive(shared)


class Session:
    """Sealed channel after a completed handshake."""

    def __init__(self, transport: Transport, key: bytes, transcript_hash: bytes,
                 peer_address: bytes, is_client: bool) -> None:
        self._transport = transport
        self._aead = AESGCM(key)
        self.transcript_hash = transcript_hash
        self.peer_address = peer_address
        self._send_dir = _DIR_CLIENT_TO_SERVER if is_client else _DIR_SERVER_TO_CLIENT
        self._recv_dir = _DIR_SERVER_TO_CLIENT if is_client else _DIR_CLIENT_TO_SERVER
        self._send_counter = 0
        self._recv_counter = 0

    @staticmethod
    def _nonce(direction: int, counter: int) -> bytes:
        return bytes([direction, 0, 0, 0]) + counter.to_bytes(8, "big")

    def send(self, tag: int, payload: bytes) -> None:
        nonce = self._nonce(self._send_dir, self._send_counter)
        self._send_counter += 1
        sealed = self._aead.encrypt(nonce, bytes([tag]) + payload, self.transcript_hash)
        self._transport.send_frame(sealed)

    def receive(self) -> tuple[int, bytes]:
        sealed = self._transport.recv_frame()
        nonce = self._nonce(self._recv_dir, self._recv_counter)
        try:
            body = self._aead.decrypt(nonce, sealed, self.transcript_hash)
        except InvalidTag as exc:
            raise AuthFailure("sealed frame failed authentication") from exc
        self._recv_counter += 1
        if not body:
            raise AuthFailure("empty sealed frame")
        return body[0], body[1:]

    def close(self) -> None:
        self._transport.close()


def _server_signing_input(hello: bytes, challenge_core: bytes) -> bytes:
    return hashlib.sha256(_SERVER_SIG_CONTEXT + hello + challenge_core).digest()


def _client_signing_input(hello: bytes, challenge: bytes) -> bytes:
    return hashlib.sha256(_CLIENT_SIG_CONTEXT + hello + challenge).digest()


def client_handshake(identity: Identity, server: PeerIdentity, transport: Transport,
                     rng: Optional[random.Random] = None) -> Session:
    """Run the client side of the handshake and return the sealed session."""
    rng = rng if rng is not None else random.SystemRandom()
    ephemeral = X25519PrivateKey.from_private_bytes(rng.randbytes(32))
    hello = (bytes([TAG_HELLO]) + identity.address + _x25519_public(ephemeral)
             + rng.randbytes(NONCE_LEN))
    transport.send_frame(hello)

    challenge = transport.recv_frame()
    if challenge[:1] == bytes([TAG_ERROR]):
        _raise_wire_error(challenge[1:])
    if len(challenge) != 1 + 32 + NONCE_LEN + 64 or challenge[0] != TAG_CHALLENGE:
        raise AuthFailure("malformed handshake challenge")
    server_ephemeral = challenge[1:33]
    challenge_core = challenge[1:1 + 32 + NONCE_LEN]
    server_sig = challenge[1 + 32 + NONCE_LEN:]
    try:
        Ed25519PublicKey.from_public_bytes(server.signing_public).verify(
            server_sig, _server_signing_input(hello, challenge_core))
    except InvalidSignature as exc:
        raise AuthFailure("server signature does not verify") from exc

    client_sig = identity.signer.sign(_client_signing_input(hello, challenge))
    auth = bytes([TAG_AUTH]) + client_sig
    transport.send_frame(auth)

    transcript_hash = hashlib.sha256(hello + challenge + auth).digest()
    shared = (_exchange(ephemeral, server_ephemeral)
              + _exchange(ephemeral, server.kx_public))
    return Session(transport, _session_key(shared, transcript_hash),
                   transcript_hash, server.address, is_client=True)


# --- services ----------------------------------------------------------------

class Service:
    """Base: server-side handshake plus the request/response loop."""

    def __init__(self, identity: Identity, directory: IdentityDirectory,
                 rng: Optional[random.Random] = None) -> None:
        self.identity = identity
        self.directory = directory
        self._rng = rng if rng is not None else random.SystemRandom()
        self._seen_nonces: set[bytes] = set()
        self._lock = threading.Lock()

    def public(self) -> PeerIdentity:
        return self.identity.public()

    def serve_session(self, transport: Transport) -> None:
        """Serve one connection until the peer closes it."""
        try:
            session = self._server_handshake(transport)
        except TransportClosed:
            transport.close()
            return
        except CakeError as exc:
            try:
                transport.send_frame(bytes([TAG_ERROR]) + _encode_error(exc))
            except TransportClosed:
                pass
            transport.close()
            return
        try:
            while True:
                try:
                    tag, payload = session.receive()
                except TransportClosed:
                    return
                except AuthFailure:
                    return  # garbage within a sealed session: drop the peer
                try:
                    resp_tag, resp_payload = self._handle(session, tag, payload)
                except (CakeError, CodecError) as exc:
                    session.send(TAG_ERROR, _encode_error(exc))
                    continue
                session.send(resp_tag, resp_payload)
        finally:
            transport.close()

    def _server_handshake(self, transport: Transport) -> Session:
        hello = transport.recv_frame()
        if len(hello) != 1 + ledger.ADDRESS_BYTES + 32 + NONCE_LEN or hello[0] != TAG_HELLO:
            raise AuthFailure("expected client hello")
        client_address = hello[1:21]
        client_ephemeral = hello[21:53]
        client_nonce = hello[53:]
        client_signing = self.directory.resolve(client_address)
        if client_signing is None:
            raise UnknownClient(f"no identity registered for {client_address.hex()}")
        with self._lock:
            if client_nonce in self._seen_nonces:
                raise ReplayDetected("client hello nonce was seen before")
            self._seen_nonces.add(client_nonce)

        ephemeral = X25519PrivateKey.from_private_bytes(self._rng.randbytes(32))
        challenge_core = _x25519_public(ephemeral) + self._rng.randbytes(NONCE_LEN)
        server_sig = self.identity.signer.sign(
            _server_signing_input(hello, challenge_core))
        challenge = bytes([TAG_CHALLENGE]) + challenge_core + server_sig
        transport.send_frame(challenge)

        auth = transport.recv_frame()
        if len(auth) != 1 + 64 or auth[0] != TAG_AUTH:
            raise AuthFailure("expected client auth")
        try:
            Ed25519PublicKey.from_public_bytes(client_signing).verify(
                auth[1:], _client_signing_input(hello, challenge))
        except InvalidSignature as exc:
            raise AuthFailure("client signature does not verify") from exc

        transcript_hash = hashlib.sha256(hello + challenge + auth).digest()
        shared = (_exchange(ephemeral, client_ephemeral)
                  + _exchange(self.identity.kx_private, client_ephemeral))
        return Session(transport, _session_key(shared, transcript_hash),
                       transcript_hash, client_address, is_client=False)

    def _handle(self, session: Session, tag: int, payload: bytes) -> tuple[int, bytes]:
        raise NotImplementedError


class SdmService(Service):
    """Secure data manager: encrypt, store, notarize."""

    def __init__(self, identity: Identity, directory: IdentityDirectory,
                 master: abe.MasterSecret, chain: ledger.Chain, store: cas.BlobStore,
                 rng: Optional[random.Random] = None) -> None:
        super().__init__(identity, directory, rng)
        self.master = master
        self.chain = chain
        self.store = store

    def _handle(self, session: Session, tag: int, payload: bytes) -> tuple[int, bytes]:
        if tag != TAG_STORE_REQ:
            raise ProtocolError(f"unexpected request tag {tag:#x}")
        r = Reader(payload)
        slices = [(r.take_str(), r.take_str(), r.take_bytes())
                  for _ in range(r.take_u32())]
        r.expect_end()

        message_id = abe.new_message_id(self._rng)
        container = abe.encrypt_container(self.master, message_id, slices, self._rng)
        locator = self.store.put(abe.serialize_container(container))
        receipt = ledger.message_store(self.chain, self.identity.signer,
                                       message_id, locator.render())
        self.chain.seal_block()
        if receipt.status != ledger.STATUS_APPLIED:
            raise LedgerRejected(f"store transaction rejected: {receipt.error}")

        w = Writer()
        w.put_bytes(message_id)
        w.put_str(locator.render())
        return TAG_STORE_RESP, w.getvalue()


class UdService(Service):
    """User directory: actor metadata upload plus on-chain certification.

    Runs on behalf of the attribute certifiers: it holds their ledger
    signers, and only a session authenticated as one of them may certify.
    """

    def __init__(self, identity: Identity, directory: IdentityDirectory,
                 chain: ledger.Chain, store: cas.BlobStore,
                 certifier_signers: dict[bytes, ledger.Signer],
                 clock: Clock = _system_clock,
                 rng: Optional[random.Random] = None) -> None:
        super().__init__(identity, directory, rng)
        self.chain = chain
        self.store = store
        self.certifier_signers = dict(certifier_signers)
        self.clock = clock

    def _handle(self, session: Session, tag: int, payload: bytes) -> tuple[int, bytes]:
        if tag != TAG_CERTIFY_REQ:
            raise ProtocolError(f"unexpected request tag {tag:#x}")
        signer = self.certifier_signers.get(session.peer_address)
        if signer is None:
            raise ledger.NotCertifier(
                f"{session.peer_address.hex()} is not a registered certifier")
        r = Reader(payload)
        actor = r.take_raw(ledger.ADDRESS_BYTES)
        attrs = frozenset(policy_mod.normalize_attribute(r.take_str())
                          for _ in range(r.take_u32()))
        r.expect_end()
        if not attrs:
            raise abe.EmptyAttributeSet("cannot certify an empty attribute set")

        metadata = ActorMetadata(actor, attrs, self.clock(), signer.address)
        locator = self.store.put(serialize_actor_metadata(metadata))
        receipt = ledger.actor_certify(self.chain, signer, actor, locator.render())
        self.chain.seal_block()
        if receipt.status != ledger.STATUS_APPLIED:
            raise LedgerRejected(f"certify transaction rejected: {receipt.error}")

        w = Writer()
        w.put_str(locator.render())
        return TAG_CERTIFY_RESP, w.getvalue()


class SkmService(Service):
    """Secure key manager: derive and return attribute-bound user keys."""

    def __init__(self, identity: Identity, directory: IdentityDirectory,
                 master: abe.MasterSecret, chain: ledger.Chain, store: cas.BlobStore,
                 clock: Clock = _system_clock,
                 rng: Optional[random.Random] = None) -> None:
        super().__init__(identity, directory, rng)
        self.master = master
        self.chain = chain
        self.store = store
        self.clock = clock

    def _handle(self, session: Session, tag: int, payload: bytes) -> tuple[int, bytes]:
        if tag != TAG_KEY_REQ:
            raise ProtocolError(f"unexpected request tag {tag:#x}")
        caller = session.peer_address
        try:
            record = self.chain.actor_get(caller)
        except ledger.RecordNotFound as exc:
            raise NotCertified(f"no certification for {caller.hex()}") from exc
        blob = self.store.get(cas.parse_locator(record.metadata_locator))
        metadata = parse_actor_metadata(blob)
        if metadata.actor != caller:
            raise cas.IntegrityViolation("metadata does not belong to the caller")
        user_key = abe.keygen(self.master, caller, metadata.attributes,
                              issued_at=self.clock())
        w = Writer()
        w.put_bytes(abe.serialize_user_key(user_key))
        return TAG_KEY_RESP, w.getvalue()


# --- client library -----------------------------------------------------------

class ServiceClient:
    """One authenticated session against one service."""

    def __init__(self, identity: Identity, server: PeerIdentity, transport: Transport,
                 rng: Optional[random.Random] = None) -> None:
        self.identity = identity
        self.session = client_handshake(identity, server, transport, rng)

    def _call(self, tag: int, payload: bytes, expect: int) -> bytes:
        self.session.send(tag, payload)
        resp_tag, resp_payload = self.session.receive()
        if resp_tag == TAG_ERROR:
            _raise_wire_error(resp_payload)
        if resp_tag != expect:
            raise ProtocolError(f"unexpected response tag {resp_tag:#x}")
        return resp_payload

    def store(self, slices: list[tuple[str, str, bytes]]) -> tuple[bytes, str]:
        """Submit (label, policy, plaintext) slices; returns (message id, locator)."""
        w = Writer()
        w.put_u32(len(slices))
        for label, policy, data in slices:
            w.put_str(label)
            w.put_str(policy)
            w.put_bytes(data)
        resp = Reader(self._call(TAG_STORE_REQ, w.getvalue(), TAG_STORE_RESP))
        message_id = resp.take_bytes()
        locator = resp.take_str()
        resp.expect_end()
        return message_id, locator

    def certify(self, actor: bytes, attributes: Iterable[str]) -> str:
        """Certify an actor's attribute set; returns the metadata locator."""
        attrs = sorted(set(attributes))
        w = Writer()
        w.put_raw(actor)
        w.put_u32(len(attrs))
        for name in attrs:
            w.put_str(name)
        resp = Reader(self._call(TAG_CERTIFY_REQ, w.getvalue(), TAG_CERTIFY_RESP))
        locator = resp.take_str()
        resp.expect_end()
        return locator

    def request_key(self) -> abe.UserKey:
        """Obtain this identity's attribute-bound decryption key."""
        resp = Reader(self._call(TAG_KEY_REQ, b"", TAG_KEY_RESP))
        blob = resp.take_bytes()
        resp.expect_end()
        return abe.parse_user_key(blob)

    def close(self) -> None:
        self.session.close()


def client_read(chain: ledger.Chain, store: cas.BlobStore, message_id: bytes,
                key: abe.UserKey) -> list[tuple[str, Optional[bytes]]]:
    """Resolve, fetch, verify, and decrypt a notarized container.

    Raises :class:`ledger.RecordNotFound` for unknown ids and
    :class:`cas.IntegrityViolation` / :class:`abe.IntegrityFailure` for
    tampered content; per-slice policy failures come back as ``None``.
    """
    record = chain.message_get(message_id)
    blob = store.get(cas.parse_locator(record.locator))
    container = abe.parse_container(blob)
    if container.message_id != message_id:
        raise abe.IntegrityFailure("container does not carry the notarized id")
    return abe.decrypt_container(key, container)


# --- deployment plumbing ---------------------------------------------------------

@dataclass
class Deployment:
    """A provisioned single-authority installation of the three services."""
    master: abe.MasterSecret
    chain: ledger.Chain
    store: cas.BlobStore
    directory: IdentityDirectory
    sdm: SdmService
    ud: UdService
    skm: SkmService
    certifier: Identity

    def register(self, identity: Identity | PeerIdentity) -> None:
        self.directory.register(
            identity.public() if isinstance(identity, Identity) else identity)

    def connect_sdm(self, identity: Identity,
                    rng: Optional[random.Random] = None) -> ServiceClient:
        return ServiceClient(identity, self.sdm.public(),
                             serve_in_background(self.sdm), rng)

    def connect_ud(self, identity: Identity,
                   rng: Optional[random.Random] = None) -> ServiceClient:
        return ServiceClient(identity, self.ud.public(),
                             serve_in_background(self.ud), rng)

    def connect_skm(self, identity: Identity,
                    rng: Optional[random.Random] = None) -> ServiceClient:
        return ServiceClient(identity, self.skm.public(),
                             serve_in_background(self.skm), rng)


def provision(rng: Optional[random.Random] = None,
              store: Optional[cas.BlobStore] = None,
              clock: Clock = _system_clock) -> Deployment:
    """Stand up master secret, chain, store, and the three services.

    One certifier identity is created and given chain write access alongside
    the data manager; its sessions go through the user directory like any
    other client's.
    """
    rng = rng if rng is not None else random.SystemRandom()
    store = store if store is not None else cas.MemoryBlobStore()
    master = abe.setup(rng)

    sdm_identity = Identity.generate(rng)
    ud_identity = Identity.generate(rng)
    skm_identity = Identity.generate(rng)
    certifier = Identity.generate(rng)

    chain = ledger.Chain(
        accounts=[sdm_identity.signing_public, certifier.signing_public],
        certifiers=[certifier.address])
    directory = IdentityDirectory()
    directory.register(certifier.public())

    sdm = SdmService(sdm_identity, directory, master, chain, store, rng)
    ud = UdService(ud_identity, directory, chain, store,
                   {certifier.address: certifier.signer}, clock, rng)
    skm = SkmService(skm_identity, directory, master, chain, store, clock, rng)
    return Deployment(master, chain, store, directory, sdm, ud, skm, certifier)


def serve_in_background(service: Service) -> Transport:
    """Spawn a session handler thread; returns the client-side transport."""
    server_side, client_side = memory_pair()
    thread = threading.Thread(target=service.serve_session, args=(server_side,),
                              daemon=True)
    thread.start()
    return client_side


class _SessionHandler(socketserver.BaseRequestHandler):
    def handle(self) -> None:
        self.server.cake_service.serve_session(SocketTransport(self.request))


class ServiceServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, service: Service, host: str, port: int) -> None:
        super().__init__((host, port), _SessionHandler)
        self.cake_service = service


def serve_tcp(service: Service, host: str, port: int) -> ServiceServer:
    """Bind a threaded TCP server for the service; caller runs serve_forever."""
    return ServiceServer(service, host, port)


def connect_tcp(host: str, port: int) -> SocketTransport:
    return SocketTransport(socket.create_connection((host, port)))
