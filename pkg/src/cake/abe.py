"""Ciphertext-policy encryption of document slices.

Hybrid scheme: each slice's plaintext is sealed with AES-256-GCM under a
fresh data key, the data key is secret-shared along the compiled access tree
of the slice's policy, and every leaf share is wrapped (again AES-GCM) under
a symmetric key derived per attribute from the authority's master secret.
A reader holding wrap keys for a satisfying attribute set unwraps enough
shares to rebuild the data key; anyone else learns nothing but the policy.

Keys:

* attribute wrap key  = HKDF-SHA256(root_key, info="cake/attribute-key/" + name)
* payload key         = HKDF-SHA256(data_key_bytes, info="cake/payload-key")

The payload AEAD binds the slice header (policy text plus wrapped shares):
its associated data is the SHA-256 of the canonical slice serialization with
the payload fields emptied, so any header mutation fails authentication
rather than decrypting to garbage.

Derived wrap keys are deterministic, so two users certified for the same
attribute hold identical wrap keys and colluding users can pool attributes;
see the project README for the trust model this implements.
"""

from __future__ import annotations

import hashlib
import random
import time
from dataclasses import dataclass
from typing import Optional

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import AESGCM
from cryptography.hazmat.primitives.hashes import SHA256
from cryptography.hazmat.primitives.kdf.hkdf import HKDF

from . import policy as policy_mod
from . import sss
from .codec import CodecError, Reader, Writer
from .errors import CakeError

KEY_BYTES = 32
NONCE_BYTES = 12
MESSAGE_ID_BYTES = 16

_ATTRIBUTE_KEY_INFO = b"cake/attribute-key/"
_PAYLOAD_KEY_INFO = b"cake/payload-key"


class AbeError(CakeError):
    pass


class PolicyNotSatisfied(AbeError):
    """The key's attributes cannot rebuild the data key. A normal outcome."""


class IntegrityFailure(AbeError):
    """Authentication failed somewhere a certified reader should succeed:
    the ciphertext was tampered with."""


class EmptyAttributeSet(AbeError):
    pass


class DuplicateLabel(AbeError):
    pass


class EmptyContainer(AbeError):
    pass


class EntropyFailure(AbeError):
    """The injected entropy source failed to produce bytes."""


@dataclass(frozen=True)
class MasterSecret:
    """Authority root key. Never serialized into ciphertexts."""
    root_key: bytes

    def __post_init__(self) -> None:
        if len(self.root_key) != KEY_BYTES:
            raise ValueError("root key must be 32 bytes")


@dataclass(frozen=True)
class UserKey:
    """Attribute-bound decryption key issued to one actor."""
    holder: bytes  # 20-byte actor address
    attribute_keys: dict[str, bytes]
    issued_at: int

    @property
    def attributes(self) -> frozenset[str]:
        return frozenset(self.attribute_keys)


@dataclass(frozen=True)
class WrappedShare:
    leaf_index: int
    attribute: str
    nonce: bytes
    wrapped: bytes  # AES-GCM sealed 32-byte share


@dataclass(frozen=True)
class SliceCiphertext:
    policy_text: str  # canonical rendering
    wrapped_shares: tuple[WrappedShare, ...]
    payload_nonce: bytes
    payload: bytes


@dataclass(frozen=True)
class CiphertextContainer:
    message_id: bytes
    slices: tuple[tuple[str, SliceCiphertext], ...]


def _rng_or_system(rng: Optional[random.Random]) -> random.Random:
    return rng if rng is not None else random.SystemRandom()


def _random_bytes(rng: random.Random, n: int) -> bytes:
    try:
        data = rng.randbytes(n)
    except OSError as exc:
        raise EntropyFailure(f"entropy source failed: {exc}") from exc
    if len(data) != n:
        raise EntropyFailure("entropy source returned short read")
    return data


def setup(rng: Optional[random.Random] = None) -> MasterSecret:
    """Provision a fresh authority master secret."""
    return MasterSecret(_random_bytes(_rng_or_system(rng), KEY_BYTES))


def _hkdf(ikm: bytes, info: bytes) -> bytes:
    return HKDF(algorithm=SHA256(), length=KEY_BYTES, salt=None, info=info).derive(ikm)


def attribute_wrap_key(ms: MasterSecret, attribute: str) -> bytes:
    """Deterministic 32-byte wrap key for one attribute."""
    name = policy_mod.normalize_attribute(attribute)
    return _hkdf(ms.root_key, _ATTRIBUTE_KEY_INFO + name.encode())


def _payload_key(data_key: int) -> bytes:
    return _hkdf(sss.encode_field(data_key), _PAYLOAD_KEY_INFO)


def keygen(ms: MasterSecret, holder: bytes, attrs: frozenset[str] | set[str],
           issued_at: Optional[int] = None) -> UserKey:
    """Issue the wrap-key bundle for a holder's certified attributes."""
    if not attrs:
        raise EmptyAttributeSet("cannot issue a key for an empty attribute set")
    keys = {policy_mod.normalize_attribute(a): attribute_wrap_key(ms, a) for a in attrs}
    stamp = int(time.time()) if issued_at is None else issued_at
    return UserKey(holder=holder, attribute_keys=keys, issued_at=stamp)


def _share_aad(leaf_index: int, attribute: str) -> bytes:
    return leaf_index.to_bytes(4, "big") + attribute.encode()


def encrypt_slice(ms: MasterSecret, policy: str, plaintext: bytes,
                  rng: Optional[random.Random] = None) -> SliceCiphertext:
    """Encrypt one slice under an access policy.

    The policy is stored in its canonical rendering; the compiled tree's
    leaves determine the wrapped-share list. Raises
    :class:`policy.PolicySyntaxError` / :class:`policy.InvalidAttributeError`
    for bad policy text.
    """
    rng = _rng_or_system(rng)
    ast = policy_mod.parse_policy(policy)
    canonical = policy_mod.render_policy(ast)
    tree = policy_mod.compile_policy(ast)

    data_key = sss.random_element(rng)
    leaf_values = sss.share_tree(tree, data_key, rng)

    wrapped: list[WrappedShare] = []
    for leaf in policy_mod.tree_leaves(tree):
        wrap_key = attribute_wrap_key(ms, leaf.attribute)
        nonce = _random_bytes(rng, NONCE_BYTES)
        sealed = AESGCM(wrap_key).encrypt(
            nonce, sss.encode_field(leaf_values[leaf.leaf_index]),
            _share_aad(leaf.leaf_index, leaf.attribute))
        wrapped.append(WrappedShare(leaf.leaf_index, leaf.attribute, nonce, sealed))

    header = SliceCiphertext(canonical, tuple(wrapped), b"", b"")
    payload_nonce = _random_bytes(rng, NONCE_BYTES)
    payload = AESGCM(_payload_key(data_key)).encrypt(
        payload_nonce, plaintext, header_hash(header))
    return SliceCiphertext(canonical, tuple(wrapped), payload_nonce, payload)


def decrypt_slice(uk: UserKey, ct: SliceCiphertext) -> bytes:
    """Recover the slice plaintext, or explain why not.

    Raises :class:`PolicyNotSatisfied` when the key's attributes do not
    satisfy the slice policy, and :class:`IntegrityFailure` when the
    ciphertext structure, a share held by this key, or the payload fails
    authentication.
    """
    tree = _checked_tree(ct)

    available: dict[int, int] = {}
    unwrap_failed = False
    for ws in ct.wrapped_shares:
        wrap_key = uk.attribute_keys.get(ws.attribute)
        if wrap_key is None:
            continue
        try:
            raw = AESGCM(wrap_key).decrypt(
                ws.nonce, ws.wrapped, _share_aad(ws.leaf_index, ws.attribute))
            available[ws.leaf_index] = sss.decode_field(raw)
        except (InvalidTag, sss.FieldDecodeError):
            # A wrap key this user legitimately holds must open an honest
            # share; failure is evidence of tampering, but only decisive if
            # it changes the outcome below.
            unwrap_failed = True

    data_key = sss.reconstruct_tree(tree, available)
    if data_key is None:
        if unwrap_failed:
            raise IntegrityFailure("wrapped share failed authentication")
        raise PolicyNotSatisfied(f"attributes do not satisfy {ct.policy_text!r}")

    header = SliceCiphertext(ct.policy_text, ct.wrapped_shares, b"", b"")
    try:
        return AESGCM(_payload_key(data_key)).decrypt(
            ct.payload_nonce, ct.payload, header_hash(header))
    except InvalidTag as exc:
        raise IntegrityFailure("payload or header authentication failed") from exc


def _checked_tree(ct: SliceCiphertext) -> policy_mod.AccessTree:
    """Parse the header policy and verify the wrapped shares mirror its tree."""
    try:
        ast = policy_mod.parse_policy(ct.policy_text)
    except policy_mod.PolicyError as exc:
        raise IntegrityFailure(f"unparseable policy header: {exc}") from exc
    if policy_mod.render_policy(ast) != ct.policy_text:
        raise IntegrityFailure("policy header is not in canonical form")
    tree = policy_mod.compile_policy(ast)
    expected = [(leaf.leaf_index, leaf.attribute) for leaf in policy_mod.tree_leaves(tree)]
    actual = [(ws.leaf_index, ws.attribute) for ws in ct.wrapped_shares]
    if expected != actual:
        raise IntegrityFailure("wrapped shares do not match the policy tree")
    return tree


def new_message_id(rng: Optional[random.Random] = None) -> bytes:
    return _random_bytes(_rng_or_system(rng), MESSAGE_ID_BYTES)


def encrypt_container(ms: MasterSecret, message_id: bytes,
                      slices: list[tuple[str, str, bytes]],
                      rng: Optional[random.Random] = None) -> CiphertextContainer:
    """Encrypt a multi-slice submission, one policy per slice."""
    if len(message_id) != MESSAGE_ID_BYTES:
        raise ValueError("message id must be 16 bytes")
    if not slices:
        raise EmptyContainer("a container needs at least one slice")
    labels = [label for label, _, _ in slices]
    if len(set(labels)) != len(labels):
        raise DuplicateLabel("slice labels must be unique within a container")
    rng = _rng_or_system(rng)
    encrypted = tuple(
        (label, encrypt_slice(ms, policy, data, rng))
        for label, policy, data in slices)
    return CiphertextContainer(message_id=message_id, slices=encrypted)


def decrypt_container(uk: UserKey,
                      container: CiphertextContainer) -> list[tuple[str, Optional[bytes]]]:
    """Decrypt every slice the key can open.

    Returns (label, plaintext) pairs with ``None`` for slices whose policy
    the key does not satisfy; partial readability is a normal outcome.
    Tampering still raises :class:`IntegrityFailure`.
    """
    results: list[tuple[str, Optional[bytes]]] = []
    for label, ct in container.slices:
        try:
            results.append((label, decrypt_slice(uk, ct)))
        except PolicyNotSatisfied:
            results.append((label, None))
    return results


# --- canonical serialization -------------------------------------------------

def serialize_slice(ct: SliceCiphertext) -> bytes:
    w = Writer()
    w.put_str(ct.policy_text)
    w.put_u32(len(ct.wrapped_shares))
    for ws in ct.wrapped_shares:
        w.put_u32(ws.leaf_index)
        w.put_str(ws.attribute)
        w.put_bytes(ws.nonce)
        w.put_bytes(ws.wrapped)
    w.put_bytes(ct.payload_nonce)
    w.put_bytes(ct.payload)
    return w.getvalue()


def header_hash(ct: SliceCiphertext) -> bytes:
    """Digest of the canonical slice form with the payload fields emptied."""
    stripped = SliceCiphertext(ct.policy_text, ct.wrapped_shares, b"", b"")
    return hashlib.sha256(serialize_slice(stripped)).digest()


def parse_slice(data: bytes) -> SliceCiphertext:
    r = Reader(data)
    ct = _read_slice(r)
    r.expect_end()
    return ct


def _read_slice(r: Reader) -> SliceCiphertext:
    policy_text = r.take_str()
    count = r.take_u32()
    shares = tuple(
        WrappedShare(r.take_u32(), r.take_str(), r.take_bytes(), r.take_bytes())
        for _ in range(count))
    return SliceCiphertext(policy_text, shares, r.take_bytes(), r.take_bytes())


def serialize_container(container: CiphertextContainer) -> bytes:
    w = Writer()
    w.put_bytes(container.message_id)
    w.put_u32(len(container.slices))
    for label, ct in container.slices:
        w.put_str(label)
        w.put_bytes(serialize_slice(ct))
    return w.getvalue()


def parse_container(data: bytes) -> CiphertextContainer:
    r = Reader(data)
    message_id = r.take_bytes()
    if len(message_id) != MESSAGE_ID_BYTES:
        raise CodecError("message id must be 16 bytes")
    count = r.take_u32()
    slices = tuple((r.take_str(), parse_slice(r.take_bytes())) for _ in range(count))
    r.expect_end()
    if not slices:
        raise EmptyContainer("container has no slices")
    labels = [label for label, _ in slices]
    if len(set(labels)) != len(labels):
        raise DuplicateLabel("duplicate slice label in container")
    return CiphertextContainer(message_id=message_id, slices=slices)


def serialize_user_key(uk: UserKey) -> bytes:
    w = Writer()
    w.put_raw(uk.holder)
    w.put_u64(uk.issued_at)
    w.put_u32(len(uk.attribute_keys))
    for name in sorted(uk.attribute_keys):
        w.put_str(name)
        w.put_bytes(uk.attribute_keys[name])
    return w.getvalue()


def parse_user_key(data: bytes) -> UserKey:
    r = Reader(data)
    holder = r.take_raw(20)
    issued_at = r.take_u64()
    count = r.take_u32()
    keys = {r.take_str(): r.take_bytes() for _ in range(count)}
    r.expect_end()
    if not keys:
        raise EmptyAttributeSet("user key carries no attributes")
    return UserKey(holder=holder, attribute_keys=keys, issued_at=issued_at)
