"""Signed, hash-chained claim ledger with identity registry and artifact store.

The ledger is the trust anchor of the toolkit: every protocol step is recorded
as a claim envelope that is signed by its author and chained to the previous
entry by a SHA-512 hash, so any post-hoc modification is detectable. Model,
query, and reply bytes live next to it in a content-addressed blob store.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterator

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import serialization
from cryptography.hazmat.primitives.asymmetric import ed25519

from .rng import MASK64

GENESIS_HASH = "0" * 128

_FINGERPRINT_LEN = 16
_KEY_DOMAIN = b"flaudit/ed25519/v1:"


class LedgerError(Exception):
    """Base class for ledger-layer failures."""


class EncodingError(LedgerError):
    """Document cannot be canonically encoded."""


class RegistrationError(LedgerError):
    """Actor unknown to, or inconsistent with, the registry."""


class SignatureError(LedgerError):
    """Signature does not verify under the registered public key."""


class MissingArtifactError(LedgerError):
    """No blob stored under the requested digest."""


class ArtifactIntegrityError(LedgerError):
    """Stored blob no longer matches its digest key."""


# ---------------------------------------------------------------------------
# Canonical encoding and hashing
# ---------------------------------------------------------------------------

def _check_encodable(value: Any) -> None:
    if value is None or isinstance(value, (bool, str)):
        return
    if isinstance(value, int):
        return
    if isinstance(value, float):
        if not math.isfinite(value):
            raise EncodingError(f"non-finite float {value!r} is not encodable")
        return
    if isinstance(value, (list, tuple)):
        for item in value:
            _check_encodable(item)
        return
    if isinstance(value, dict):
        for key, item in value.items():
            if not isinstance(key, str):
                raise EncodingError(f"map key {key!r} is not a string")
            _check_encodable(item)
        return
    raise EncodingError(f"type {type(value).__name__} is not encodable")


def canonical_encode(doc: Any) -> bytes:
    """Encode a document as canonical UTF-8 JSON.

    Keys are sorted bytewise, whitespace is dropped, floats use the shortest
    round-trip decimal, and non-ASCII text stays literal. Equal documents
    always yield identical bytes, which is what signatures and digests hash.
    """
    _check_encodable(doc)
    return json.dumps(
        doc, ensure_ascii=False, allow_nan=False, sort_keys=True, separators=(",", ":")
    ).encode("utf-8")


def canonical_decode(data: bytes) -> Any:
    return json.loads(data.decode("utf-8"))


def digest(data: bytes) -> str:
    """SHA-512 of the given bytes as 128 lowercase hex chars."""
    return hashlib.sha512(data).hexdigest()


def doc_digest(doc: Any) -> str:
    return digest(canonical_encode(doc))


# ---------------------------------------------------------------------------
# Identities and signatures
# ---------------------------------------------------------------------------

def fingerprint(public_bytes: bytes) -> str:
    """Short identity fingerprint: leading hex of SHA-512 over the public key."""
    return hashlib.sha512(public_bytes).hexdigest()[:_FINGERPRINT_LEN]


@dataclass(frozen=True)
class ActorId:
    name: str
    pubkey_fingerprint: str

    def to_doc(self) -> dict:
        return {"fingerprint": self.pubkey_fingerprint, "name": self.name}

    @classmethod
    def from_doc(cls, doc: dict) -> "ActorId":
        return cls(name=doc["name"], pubkey_fingerprint=doc["fingerprint"])


@dataclass(frozen=True)
class KeyPair:
    """Ed25519 signing/verification key pair held as raw bytes."""

    private_bytes: bytes
    public_bytes: bytes

    def sign(self, message: bytes) -> bytes:
        key = ed25519.Ed25519PrivateKey.from_private_bytes(self.private_bytes)
        return key.sign(message)


def generate_keypair(seed: int) -> KeyPair:
    """Derive a deterministic Ed25519 key pair from a 64-bit seed.

    Signatures are deterministic for a fixed (key, message), so replaying a
    run with the same seeds reproduces the ledger byte-for-byte.
    """
    material = hashlib.sha512(_KEY_DOMAIN + (seed & MASK64).to_bytes(8, "big")).digest()[:32]
    key = ed25519.Ed25519PrivateKey.from_private_bytes(material)
    public = key.public_key().public_bytes(
        serialization.Encoding.Raw, serialization.PublicFormat.Raw
    )
    return KeyPair(private_bytes=material, public_bytes=public)


def verify_signature(public_bytes: bytes, signature: bytes, message: bytes) -> bool:
    try:
        ed25519.Ed25519PublicKey.from_public_bytes(public_bytes).verify(signature, message)
        return True
    except (InvalidSignature, ValueError):
        return False


# ---------------------------------------------------------------------------
# Claim envelopes
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ClaimEnvelope:
    """One signed, chained ledger entry carrying a typed claim payload."""

    seq: int
    actor: ActorId
    kind: str
    payload: dict
    prev_hash: str
    signature: str  # hex

    def to_doc(self) -> dict:
        return {
            "actor": self.actor.to_doc(),
            "kind": self.kind,
            "payload": self.payload,
            "prev_hash": self.prev_hash,
            "seq": self.seq,
            "signature": self.signature,
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "ClaimEnvelope":
        env = cls(
            seq=doc["seq"],
            actor=ActorId.from_doc(doc["actor"]),
            kind=doc["kind"],
            payload=doc["payload"],
            prev_hash=doc["prev_hash"],
            signature=doc["signature"],
        )
        if not (isinstance(env.seq, int) and isinstance(env.kind, str)
                and isinstance(env.payload, dict) and isinstance(env.prev_hash, str)
                and isinstance(env.signature, str) and isinstance(env.actor.name, str)):
            raise EncodingError("envelope fields have the wrong types")
        return env


def signing_bytes(seq: int, prev_hash: str, kind: str, payload: dict) -> bytes:
    """Message a claim signature covers: seq, prev hash, kind, then payload.

    The first three fields cannot contain newlines, so the framing is
    unambiguous.
    """
    return f"{seq}\n{prev_hash}\n{kind}\n".encode("utf-8") + canonical_encode(payload)


def envelope_bytes(env: ClaimEnvelope) -> bytes:
    return canonical_encode(env.to_doc())


def entry_hash(env: ClaimEnvelope) -> str:
    return digest(envelope_bytes(env))


@dataclass(frozen=True)
class EntryCheck:
    seq: int
    signature_ok: bool
    chain_ok: bool
    seq_ok: bool
    note: str = ""

    @property
    def ok(self) -> bool:
        return self.signature_ok and self.chain_ok and self.seq_ok

    def to_doc(self) -> dict:
        return {
            "chain_ok": self.chain_ok,
            "note": self.note,
            "seq": self.seq,
            "seq_ok": self.seq_ok,
            "signature_ok": self.signature_ok,
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "EntryCheck":
        return cls(
            seq=doc["seq"],
            signature_ok=doc["signature_ok"],
            chain_ok=doc["chain_ok"],
            seq_ok=doc["seq_ok"],
            note=doc.get("note", ""),
        )


@dataclass(frozen=True)
class IntegrityReport:
    entries: tuple[EntryCheck, ...]
    ok: bool
    head: str
    head_ok: bool | None = None  # None when no expected head was supplied

    def to_doc(self) -> dict:
        return {
            "entries": [e.to_doc() for e in self.entries],
            "head": self.head,
            "head_ok": self.head_ok,
            "ok": self.ok,
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "IntegrityReport":
        return cls(
            entries=tuple(EntryCheck.from_doc(e) for e in doc["entries"]),
            ok=doc["ok"],
            head=doc["head"],
            head_ok=doc.get("head_ok"),
        )


class Ledger:
    """Append-only claim log: dense sequence numbers, hash chain, signatures.

    A single logical writer appends; reads are pure. Entries loaded from a
    file keep their raw line bytes so that tampering with the serialized form
    (not just the parsed values) is detected.
    """

    def __init__(self) -> None:
        self.entries: list[ClaimEnvelope | None] = []
        self.registry: dict[str, bytes] = {}
        self._raw: list[bytes] = []
        self._notes: dict[int, str] = {}  # position -> parse/canonical problem

    def __len__(self) -> int:
        return len(self._raw)

    def __iter__(self) -> Iterator[ClaimEnvelope]:
        return (e for e in self.entries if e is not None)

    # -- registry ----------------------------------------------------------

    def register(self, name: str, public_bytes: bytes) -> ActorId:
        existing = self.registry.get(name)
        if existing is not None and existing != public_bytes:
            raise RegistrationError(f"actor {name!r} already registered with a different key")
        self.registry[name] = public_bytes
        return ActorId(name=name, pubkey_fingerprint=fingerprint(public_bytes))

    def actor_id(self, name: str) -> ActorId:
        if name not in self.registry:
            raise RegistrationError(f"actor {name!r} is not registered")
        return ActorId(name=name, pubkey_fingerprint=fingerprint(self.registry[name]))

    # -- appends -----------------------------------------------------------

    def head_hash(self) -> str:
        if not self._raw:
            return GENESIS_HASH
        return digest(self._raw[-1])

    def append_claim(
        self, actor: ActorId | str, keypair: KeyPair, kind: str, payload: dict
    ) -> ClaimEnvelope:
        """Sign a claim with the actor's key and append it to the chain.

        The signature is checked against the registered public key before the
        entry is accepted, so an actor cannot append under someone else's
        name.
        """
        name = actor.name if isinstance(actor, ActorId) else actor
        if name not in self.registry:
            raise RegistrationError(f"actor {name!r} is not registered")
        aid = self.actor_id(name)
        if isinstance(actor, ActorId) and actor.pubkey_fingerprint != aid.pubkey_fingerprint:
            raise RegistrationError(f"actor {name!r} fingerprint does not match the registry")

        seq = len(self._raw)
        prev = self.head_hash()
        message = signing_bytes(seq, prev, kind, payload)
        signature = keypair.sign(message)
        if not verify_signature(self.registry[name], signature, message):
            raise SignatureError(f"key does not match the registered public key of {name!r}")

        env = ClaimEnvelope(
            seq=seq,
            actor=aid,
            kind=kind,
            payload=payload,
            prev_hash=prev,
            signature=signature.hex(),
        )
        self.entries.append(env)
        self._raw.append(envelope_bytes(env))
        return env

    # -- reads -------------------------------------------------------------

    def claims_by(
        self,
        actor: ActorId | str | None = None,
        kind: str | None = None,
        round: int | None = None,
    ) -> list[ClaimEnvelope]:
        """Order-preserving subsequence matching all provided filters."""
        name = actor.name if isinstance(actor, ActorId) else actor
        out = []
        for env in self:
            if name is not None and env.actor.name != name:
                continue
            if kind is not None and env.kind != kind:
                continue
            if round is not None and env.payload.get("round") != round:
                continue
            out.append(env)
        return out

    def raw_bytes(self, index: int) -> bytes:
        return self._raw[index]

    def verify_integrity(self, expected_head: str | None = None) -> IntegrityReport:
        """Check every entry's signature, chain link, and sequence number.

        Findings are report content; nothing raises. When an expected head
        digest is supplied (e.g. from a run summary) it also catches
        truncation of the newest entries, which the chain alone cannot see.
        """
        checks: list[EntryCheck] = []
        key_cache: dict[str, bytes | None] = {}
        for i, env in enumerate(self.entries):
            note = self._notes.get(i, "")
            if env is None:
                checks.append(
                    EntryCheck(i, signature_ok=False, chain_ok=False, seq_ok=False, note=note)
                )
                continue
            seq_ok = env.seq == i
            prev_expected = GENESIS_HASH if i == 0 else digest(self._raw[i - 1])
            chain_ok = env.prev_hash == prev_expected

            name = env.actor.name
            if name not in key_cache:
                key_cache[name] = self.registry.get(name)
            public = key_cache[name]
            if public is None:
                signature_ok = False
                note = note or f"actor {name!r} not in registry"
            elif fingerprint(public) != env.actor.pubkey_fingerprint:
                signature_ok = False
                note = note or f"actor {name!r} fingerprint mismatch"
            else:
                try:
                    message = signing_bytes(env.seq, env.prev_hash, env.kind, env.payload)
                    signature_ok = verify_signature(public, bytes.fromhex(env.signature), message)
                except (EncodingError, ValueError, TypeError):
                    signature_ok = False
            checks.append(EntryCheck(i, signature_ok, chain_ok, seq_ok, note))

        head = self.head_hash()
        head_ok: bool | None = None
        if expected_head is not None:
            head_ok = head == expected_head
        ok = all(c.ok for c in checks) and head_ok is not False
        return IntegrityReport(entries=tuple(checks), ok=ok, head=head, head_ok=head_ok)


# ---------------------------------------------------------------------------
# Ledger and registry persistence (JSON Lines / canonical documents)
# ---------------------------------------------------------------------------

def save_ledger(ledger: Ledger, path: str | Path) -> None:
    with open(path, "wb") as fh:
        for i in range(len(ledger)):
            fh.write(ledger.raw_bytes(i))
            fh.write(b"\n")


def load_ledger(path: str | Path, registry: dict[str, bytes]) -> Ledger:
    """Load a ledger file, keeping raw line bytes for integrity checking.

    Unparseable or non-canonical lines become placeholder entries that fail
    verification instead of aborting the load; an auditor needs the report,
    not an exception.
    """
    ledger = Ledger()
    ledger.registry = dict(registry)
    data = Path(path).read_bytes()
    lines = data.split(b"\n")
    if lines and lines[-1] == b"":
        lines.pop()
    for i, line in enumerate(lines):
        ledger._raw.append(line)
        try:
            doc = canonical_decode(line)
            if canonical_encode(doc) != line:
                raise EncodingError("line is not in canonical form")
            ledger.entries.append(ClaimEnvelope.from_doc(doc))
        except Exception as exc:  # malformed line: record, keep going
            ledger.entries.append(None)
            ledger._notes[i] = f"unreadable entry: {exc}"
    return ledger


def save_registry(registry: dict[str, bytes], path: str | Path) -> None:
    doc = {name: key.hex() for name, key in registry.items()}
    Path(path).write_bytes(canonical_encode(doc) + b"\n")


def load_registry(path: str | Path) -> dict[str, bytes]:
    doc = canonical_decode(Path(path).read_bytes())
    return {name: bytes.fromhex(hexkey) for name, hexkey in doc.items()}


# ---------------------------------------------------------------------------
# Content-addressed artifact store
# ---------------------------------------------------------------------------

class ArtifactStore:
    """Blob store keyed by the SHA-512 digest of the content."""

    def __init__(self) -> None:
        self._blobs: dict[str, bytes] = {}

    def __len__(self) -> int:
        return len(self._blobs)

    def __contains__(self, d: str) -> bool:
        return d in self._blobs

    def digests(self) -> list[str]:
        return sorted(self._blobs)

    def put(self, data: bytes) -> str:
        d = digest(data)
        self._blobs[d] = data
        return d

    def get(self, d: str) -> bytes:
        if d not in self._blobs:
            raise MissingArtifactError(f"no artifact stored under {d[:16]}…")
        data = self._blobs[d]
        if digest(data) != d:
            raise ArtifactIntegrityError(f"artifact {d[:16]}… no longer matches its digest")
        return data

    def save_dir(self, path: str | Path) -> None:
        root = Path(path)
        root.mkdir(parents=True, exist_ok=True)
        for d, data in self._blobs.items():
            (root / d).write_bytes(data)

    @classmethod
    def load_dir(cls, path: str | Path) -> "ArtifactStore":
        store = cls()
        for entry in sorted(Path(path).iterdir()):
            if entry.is_file():
                store._blobs[entry.name] = entry.read_bytes()
        return store
