"""Domain types, canonical byte layout, digests and signatures.

Every value here is an immutable dataclass.  ``canonical_serialize`` produces
a stable byte string for each of them:

* integers are fixed-width little-endian (``u8``, ``u32``, ``u64``);
* account keys and digests are raw 32-byte fields;
* signatures and lists carry a ``u32`` length/count prefix;
* package items are tagged with one byte (0 = transaction, 1 = violation report).

A ``BalanceRecord`` is therefore exactly 48 bytes (32 + 8 + 8).
"""

from __future__ import annotations

import enum
import hashlib
import hmac
import struct
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Iterable, Protocol, Union

KEY_SIZE = 32
DIGEST_SIZE = 32
MAX_AMOUNT = 2**64 - 1

ZERO_DIGEST = bytes(DIGEST_SIZE)
# reserved account for penalties, taxes and rounding dust
RECYCLED_KEY = b"\xff" * KEY_SIZE

RECORD_SIZE = KEY_SIZE + 8 + 8


class ProtocolError(Exception):
    """Base class for protocol-level failures."""


class DuplicateVester(ProtocolError):
    pass


class SerializationError(ProtocolError):
    pass


def digest(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


def _check_key(key: bytes, what: str = "key") -> None:
    if not isinstance(key, bytes) or len(key) != KEY_SIZE:
        raise ValueError(f"{what} must be {KEY_SIZE} bytes")


def _check_amount(value: int, what: str = "amount") -> None:
    if not isinstance(value, int) or isinstance(value, bool):
        raise TypeError(f"{what} must be an int")
    if value < 0 or value > MAX_AMOUNT:
        raise OverflowError(f"{what} {value} outside [0, 2**64)")


# -- signatures ---------------------------------------------------------------


@dataclass(frozen=True)
class KeyPair:
    secret: bytes = field(repr=False)
    public: bytes


class SignatureScheme(Protocol):
    name: str

    def keygen(self, seed: bytes | int | str) -> KeyPair: ...

    def sign(self, key: KeyPair, message: bytes) -> bytes: ...

    def verify(self, pubkey: bytes, message: bytes, signature: bytes) -> bool: ...


def _seed_bytes(seed: bytes | int | str) -> bytes:
    if isinstance(seed, bytes):
        return seed
    if isinstance(seed, int):
        return seed.to_bytes(16, "little", signed=True)
    return seed.encode()


class HmacScheme:
    """Fast deterministic test signatures: HMAC-SHA256 under a seed-derived key.

    Verification needs the secret, so the scheme keeps a public -> secret table
    filled by ``keygen`` (a simulated PKI).  Keys unknown to the table never
    verify.
    """

    name = "hmac-sha256"

    def __init__(self) -> None:
        self._secrets: dict[bytes, bytes] = {}

    def keygen(self, seed: bytes | int | str) -> KeyPair:
        secret = digest(b"hmac-sk:" + _seed_bytes(seed))
        public = digest(b"hmac-pk:" + secret)
        if public == RECYCLED_KEY:  # pragma: no cover - 2**-256
            raise ValueError("seed maps onto the reserved recycled key")
        self._secrets[public] = secret
        return KeyPair(secret, public)

    def sign(self, key: KeyPair, message: bytes) -> bytes:
        return hmac.new(key.secret, message, hashlib.sha256).digest()

    def verify(self, pubkey: bytes, message: bytes, signature: bytes) -> bool:
        secret = self._secrets.get(pubkey)
        if secret is None:
            return False
        expected = hmac.new(secret, message, hashlib.sha256).digest()
        return hmac.compare_digest(expected, signature)


class Ed25519Scheme:
    """Real asymmetric signatures via ``cryptography``; slower, no key table."""

    name = "ed25519"

    def keygen(self, seed: bytes | int | str) -> KeyPair:
        from cryptography.hazmat.primitives import serialization
        from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey

        secret = digest(b"ed25519-sk:" + _seed_bytes(seed))
        sk = Ed25519PrivateKey.from_private_bytes(secret)
        public = sk.public_key().public_bytes(
            serialization.Encoding.Raw, serialization.PublicFormat.Raw
        )
        return KeyPair(secret, public)

    def sign(self, key: KeyPair, message: bytes) -> bytes:
        from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey

        return Ed25519PrivateKey.from_private_bytes(key.secret).sign(message)

    def verify(self, pubkey: bytes, message: bytes, signature: bytes) -> bool:
        from cryptography.exceptions import InvalidSignature
        from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PublicKey

        try:
            Ed25519PublicKey.from_public_bytes(pubkey).verify(signature, message)
        except (InvalidSignature, ValueError):
            return False
        return True


DEFAULT_SCHEME: SignatureScheme = HmacScheme()


# -- byte layout helpers -------------------------------------------------------


class _Writer:
    __slots__ = ("buf",)

    def __init__(self) -> None:
        self.buf = bytearray()

    def u8(self, v: int) -> None:
        self.buf += struct.pack("<B", v)

    def u32(self, v: int) -> None:
        self.buf += struct.pack("<I", v)

    def u64(self, v: int) -> None:
        if v < 0 or v > MAX_AMOUNT:
            raise OverflowError(f"{v} does not fit in u64")
        self.buf += struct.pack("<Q", v)

    def fixed(self, b: bytes, size: int = KEY_SIZE) -> None:
        if len(b) != size:
            raise SerializationError(f"expected {size} bytes, got {len(b)}")
        self.buf += b

    def var(self, b: bytes) -> None:
        self.u32(len(b))
        self.buf += b


class _Reader:
    __slots__ = ("data", "pos")

    def __init__(self, data: bytes) -> None:
        self.data = memoryview(data)
        self.pos = 0

    def _take(self, n: int) -> bytes:
        end = self.pos + n
        if end > len(self.data):
            raise SerializationError("truncated input")
        out = bytes(self.data[self.pos:end])
        self.pos = end
        return out

    def u8(self) -> int:
        return self._take(1)[0]

    def u32(self) -> int:
        return struct.unpack("<I", self._take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self._take(8))[0]

    def fixed(self, size: int = KEY_SIZE) -> bytes:
        return self._take(size)

    def var(self) -> bytes:
        return self._take(self.u32())

    def done(self) -> None:
        if self.pos != len(self.data):
            raise SerializationError("trailing bytes")


# -- ledger types --------------------------------------------------------------


@dataclass(frozen=True)
class BalanceRecord:
    pubkey: bytes
    balance: int
    time_last_activity: int = 0

    def __post_init__(self) -> None:
        _check_key(self.pubkey, "pubkey")
        _check_amount(self.balance, "balance")
        _check_amount(self.time_last_activity, "time_last_activity")

    def _write(self, w: _Writer) -> None:
        w.fixed(self.pubkey)
        w.u64(self.balance)
        w.u64(self.time_last_activity)

    @classmethod
    def _read(cls, r: _Reader) -> BalanceRecord:
        return cls(r.fixed(), r.u64(), r.u64())


@dataclass(frozen=True)
class BalanceView:
    """Snapshot of every balance plus the recycled record, chained by hash.

    Build instances with :meth:`create`, which sorts the records and fills in
    ``hash``.  The constructor rejects unsorted records or a stale hash.
    """

    sn: int
    base_view_sn: int
    base_view_hash: bytes
    tx_package_51_hash: bytes
    records: tuple[BalanceRecord, ...]
    recycled: BalanceRecord
    hash: bytes

    def __post_init__(self) -> None:
        if self.recycled.pubkey != RECYCLED_KEY:
            raise ValueError("recycled record must use RECYCLED_KEY")
        prev = None
        for rec in self.records:
            if rec.pubkey == RECYCLED_KEY:
                raise ValueError("user record uses the reserved recycled key")
            if prev is not None and rec.pubkey <= prev:
                raise ValueError("records must be strictly sorted by pubkey")
            prev = rec.pubkey
        if self.hash != view_hash(self):
            raise ValueError("view hash does not match contents")

    @classmethod
    def create(
        cls,
        sn: int,
        base_view_sn: int,
        base_view_hash: bytes,
        tx_package_51_hash: bytes,
        records: Iterable[BalanceRecord],
        recycled: BalanceRecord | int,
    ) -> BalanceView:
        if isinstance(recycled, int):
            recycled = BalanceRecord(RECYCLED_KEY, recycled, 0)
        ordered = tuple(sorted(records, key=lambda rec: rec.pubkey))
        body = _view_body(sn, base_view_sn, base_view_hash, tx_package_51_hash, ordered, recycled)
        view = object.__new__(cls)
        # bypass __post_init__ hash check; contents are trusted here
        for name, value in (
            ("sn", sn),
            ("base_view_sn", base_view_sn),
            ("base_view_hash", base_view_hash),
            ("tx_package_51_hash", tx_package_51_hash),
            ("records", ordered),
            ("recycled", recycled),
            ("hash", digest(body)),
        ):
            object.__setattr__(view, name, value)
        prev = None
        for rec in ordered:
            if rec.pubkey == RECYCLED_KEY or (prev is not None and rec.pubkey == prev):
                raise ValueError("duplicate or reserved pubkey in records")
            prev = rec.pubkey
        return view

    @cached_property
    def balances(self) -> dict[bytes, int]:
        return {rec.pubkey: rec.balance for rec in self.records}

    @cached_property
    def by_key(self) -> dict[bytes, BalanceRecord]:
        return {rec.pubkey: rec for rec in self.records}

    @cached_property
    def total_supply(self) -> int:
        return sum(rec.balance for rec in self.records) + self.recycled.balance

    def balance_of(self, pubkey: bytes) -> int:
        return self.balances.get(pubkey, 0)

    @property
    def ref(self) -> tuple[int, bytes]:
        """``(sn, hash)``: what transactions and packages cite as their baseview."""
        return self.sn, self.hash

    def _write(self, w: _Writer) -> None:
        w.buf += _view_body(
            self.sn, self.base_view_sn, self.base_view_hash,
            self.tx_package_51_hash, self.records, self.recycled,
        )
        w.fixed(self.hash, DIGEST_SIZE)

    @classmethod
    def _read(cls, r: _Reader) -> BalanceView:
        sn, base_sn = r.u64(), r.u64()
        base_hash, pkg_hash = r.fixed(DIGEST_SIZE), r.fixed(DIGEST_SIZE)
        records = tuple(BalanceRecord._read(r) for _ in range(r.u32()))
        recycled = BalanceRecord._read(r)
        return cls(sn, base_sn, base_hash, pkg_hash, records, recycled, r.fixed(DIGEST_SIZE))


def _view_body(sn, base_sn, base_hash, pkg_hash, records, recycled) -> bytes:
    w = _Writer()
    w.u64(sn)
    w.u64(base_sn)
    w.fixed(base_hash, DIGEST_SIZE)
    w.fixed(pkg_hash, DIGEST_SIZE)
    w.u32(len(records))
    for rec in records:
        rec._write(w)
    recycled._write(w)
    return bytes(w.buf)


def view_hash(view: BalanceView) -> bytes:
    """Digest over every field of ``view`` except ``hash`` itself."""
    return digest(
        _view_body(
            view.sn, view.base_view_sn, view.base_view_hash,
            view.tx_package_51_hash, view.records, view.recycled,
        )
    )


# -- transactions and packages -------------------------------------------------


@dataclass(frozen=True)
class Transaction:
    base_view_sn: int
    base_view_hash: bytes
    sender: bytes
    receiver: bytes
    volume: int
    tx_fee: int
    timestamp: int
    signature: bytes = b""

    def __post_init__(self) -> None:
        _check_amount(self.volume, "volume")
        _check_amount(self.tx_fee, "tx_fee")

    def signing_bytes(self) -> bytes:
        w = _Writer()
        w.u64(self.base_view_sn)
        w.fixed(self.base_view_hash, DIGEST_SIZE)
        w.fixed(self.sender)
        w.fixed(self.receiver)
        w.u64(self.volume)
        w.u64(self.tx_fee)
        w.u64(self.timestamp)
        return bytes(w.buf)

    @classmethod
    def create(
        cls,
        baseview: tuple[int, bytes],
        sender: KeyPair,
        receiver: bytes,
        volume: int,
        tx_fee: int,
        timestamp: int,
        scheme: SignatureScheme = DEFAULT_SCHEME,
    ) -> Transaction:
        unsigned = cls(baseview[0], baseview[1], sender.public, receiver, volume, tx_fee, timestamp)
        return replace(unsigned, signature=scheme.sign(sender, unsigned.signing_bytes()))

    def verify(self, scheme: SignatureScheme = DEFAULT_SCHEME) -> bool:
        return scheme.verify(self.sender, self.signing_bytes(), self.signature)

    def _write(self, w: _Writer) -> None:
        w.buf += self.signing_bytes()
        w.var(self.signature)

    @classmethod
    def _read(cls, r: _Reader) -> Transaction:
        return cls(
            r.u64(), r.fixed(DIGEST_SIZE), r.fixed(), r.fixed(),
            r.u64(), r.u64(), r.u64(), r.var(),
        )


@dataclass(frozen=True)
class VesterItem:
    vester_pubkey: bytes
    signature: bytes

    def _write(self, w: _Writer) -> None:
        w.fixed(self.vester_pubkey)
        w.var(self.signature)

    @classmethod
    def _read(cls, r: _Reader) -> VesterItem:
        return cls(r.fixed(), r.var())


@dataclass(frozen=True)
class PackageHeader:
    """The agent-signed part of a package; the items enter only by digest.

    Headers are what a double-packaging proof carries: two of them by one
    agent at one ``base_view_sn`` that differ.
    """

    base_view_sn: int
    base_view_hash: bytes
    agent_pubkey: bytes
    items_digest: bytes
    timestamp: int
    agent_signature: bytes = b""

    def signing_bytes(self) -> bytes:
        w = _Writer()
        w.u64(self.base_view_sn)
        w.fixed(self.base_view_hash, DIGEST_SIZE)
        w.fixed(self.agent_pubkey)
        w.fixed(self.items_digest, DIGEST_SIZE)
        w.u64(self.timestamp)
        return bytes(w.buf)

    def verify(self, scheme: SignatureScheme = DEFAULT_SCHEME) -> bool:
        return scheme.verify(self.agent_pubkey, self.signing_bytes(), self.agent_signature)

    def _write(self, w: _Writer) -> None:
        w.buf += self.signing_bytes()
        w.var(self.agent_signature)

    @classmethod
    def _read(cls, r: _Reader) -> PackageHeader:
        return cls(r.u64(), r.fixed(DIGEST_SIZE), r.fixed(), r.fixed(DIGEST_SIZE), r.u64(), r.var())


def _chain_ok(base_signature: bytes, items: Iterable[VesterItem], scheme: SignatureScheme) -> bool:
    prev = base_signature
    for item in items:
        if not scheme.verify(item.vester_pubkey, prev, item.signature):
            return False
        prev = item.signature
    return True


@dataclass(frozen=True)
class PackageProof:
    """A signed artifact from a package: its header plus a vester-chain prefix.

    With an empty prefix it attests that the agent signed the header.  With a
    prefix it attests that the last vester in it vested in this package.
    """

    header: PackageHeader
    vester_items: tuple[VesterItem, ...] = ()

    @property
    def signer(self) -> bytes:
        return self.vester_items[-1].vester_pubkey if self.vester_items else self.header.agent_pubkey

    def verify(self, scheme: SignatureScheme = DEFAULT_SCHEME) -> bool:
        return self.header.verify(scheme) and _chain_ok(
            self.header.agent_signature, self.vester_items, scheme
        )

    def _write(self, w: _Writer) -> None:
        self.header._write(w)
        w.u32(len(self.vester_items))
        for item in self.vester_items:
            item._write(w)

    @classmethod
    def _read(cls, r: _Reader) -> PackageProof:
        header = PackageHeader._read(r)
        return cls(header, tuple(VesterItem._read(r) for _ in range(r.u32())))


class ViolationType(enum.IntEnum):
    DOUBLE_PACKAGE = 0
    DOUBLE_VEST = 1


@dataclass(frozen=True)
class ViolationReport:
    violation_type: ViolationType
    reporter: bytes
    accused: bytes
    proofs: tuple[PackageProof, PackageProof]
    timestamp: int
    signature: bytes = b""

    def signing_bytes(self) -> bytes:
        w = _Writer()
        w.u8(int(self.violation_type))
        w.fixed(self.reporter)
        w.fixed(self.accused)
        for proof in self.proofs:
            proof._write(w)
        w.u64(self.timestamp)
        return bytes(w.buf)

    @property
    def offense(self) -> tuple[int, bytes, int]:
        """``(type, accused, base_view_sn)`` identifying the punished offense."""
        return int(self.violation_type), self.accused, self.proofs[0].header.base_view_sn

    @classmethod
    def create(
        cls,
        violation_type: ViolationType,
        reporter: KeyPair,
        accused: bytes,
        proofs: tuple[PackageProof, PackageProof],
        timestamp: int,
        scheme: SignatureScheme = DEFAULT_SCHEME,
    ) -> ViolationReport:
        unsigned = cls(ViolationType(violation_type), reporter.public, accused, tuple(proofs), timestamp)
        return replace(unsigned, signature=scheme.sign(reporter, unsigned.signing_bytes()))

    def _write(self, w: _Writer) -> None:
        w.buf += self.signing_bytes()
        w.var(self.signature)

    @classmethod
    def _read(cls, r: _Reader) -> ViolationReport:
        vtype = ViolationType(r.u8())
        reporter, accused = r.fixed(), r.fixed()
        proofs = (PackageProof._read(r), PackageProof._read(r))
        return cls(vtype, reporter, accused, proofs, r.u64(), r.var())


PackageItem = Union[Transaction, ViolationReport]


def _write_item(w: _Writer, item: PackageItem) -> None:
    if isinstance(item, Transaction):
        w.u8(0)
    elif isinstance(item, ViolationReport):
        w.u8(1)
    else:
        raise SerializationError(f"not a package item: {type(item).__name__}")
    item._write(w)


def _read_item(r: _Reader) -> PackageItem:
    tag = r.u8()
    if tag == 0:
        return Transaction._read(r)
    if tag == 1:
        return ViolationReport._read(r)
    raise SerializationError(f"unknown item tag {tag}")


def items_digest(items: Iterable[PackageItem]) -> bytes:
    items = tuple(items)
    w = _Writer()
    w.u32(len(items))
    for item in items:
        _write_item(w, item)
    return digest(bytes(w.buf))


@dataclass(frozen=True)
class TxPackage:
    base_view_sn: int
    base_view_hash: bytes
    agent_pubkey: bytes
    transactions: tuple[PackageItem, ...]
    timestamp: int
    agent_signature: bytes
    flag_51: bool = False
    vester_items: tuple[VesterItem, ...] = ()
    last_item_timestamp: int = 0

    @classmethod
    def create(
        cls,
        baseview: tuple[int, bytes],
        agent: KeyPair,
        transactions: Iterable[PackageItem],
        timestamp: int,
        scheme: SignatureScheme = DEFAULT_SCHEME,
    ) -> TxPackage:
        txs = tuple(transactions)
        header = PackageHeader(baseview[0], baseview[1], agent.public, items_digest(txs), timestamp)
        sig = scheme.sign(agent, header.signing_bytes())
        return cls(baseview[0], baseview[1], agent.public, txs, timestamp, sig, False, (), timestamp)

    @cached_property
    def header(self) -> PackageHeader:
        return PackageHeader(
            self.base_view_sn, self.base_view_hash, self.agent_pubkey,
            items_digest(self.transactions), self.timestamp, self.agent_signature,
        )

    @property
    def ref(self) -> tuple[int, bytes]:
        return self.base_view_sn, self.base_view_hash

    @property
    def vesters(self) -> tuple[bytes, ...]:
        return tuple(item.vester_pubkey for item in self.vester_items)

    def proof_for(self, index: int | None = None) -> PackageProof:
        """Proof that the agent (``index=None``) or vester ``index`` signed this package."""
        if index is None:
            return PackageProof(self.header)
        return PackageProof(self.header, self.vester_items[: index + 1])

    def verify_header(self, scheme: SignatureScheme = DEFAULT_SCHEME) -> bool:
        return self.header.verify(scheme)

    def _write(self, w: _Writer) -> None:
        w.u64(self.base_view_sn)
        w.fixed(self.base_view_hash, DIGEST_SIZE)
        w.fixed(self.agent_pubkey)
        w.u32(len(self.transactions))
        for item in self.transactions:
            _write_item(w, item)
        w.u64(self.timestamp)
        w.var(self.agent_signature)
        w.u8(1 if self.flag_51 else 0)
        w.u32(len(self.vester_items))
        for item in self.vester_items:
            item._write(w)
        w.u64(self.last_item_timestamp)

    @classmethod
    def _read(cls, r: _Reader) -> TxPackage:
        sn, base_hash, agent = r.u64(), r.fixed(DIGEST_SIZE), r.fixed()
        txs = tuple(_read_item(r) for _ in range(r.u32()))
        ts, sig = r.u64(), r.var()
        flag = r.u8()
        if flag > 1:
            raise SerializationError("flag_51 must be 0 or 1")
        items = tuple(VesterItem._read(r) for _ in range(r.u32()))
        return cls(sn, base_hash, agent, txs, ts, sig, bool(flag), items, r.u64())


# -- canonical serialization ---------------------------------------------------

_SERIALIZABLE = (
    BalanceRecord, BalanceView, Transaction, VesterItem,
    PackageHeader, PackageProof, ViolationReport, TxPackage,
)


def canonical_serialize(value) -> bytes:
    if not isinstance(value, _SERIALIZABLE):
        raise TypeError(f"cannot serialize {type(value).__name__}")
    w = _Writer()
    value._write(w)
    return bytes(w.buf)


def deserialize(cls, data: bytes):
    if cls not in _SERIALIZABLE:
        raise TypeError(f"cannot deserialize {cls.__name__}")
    r = _Reader(data)
    try:
        value = cls._read(r)
    except (ValueError, TypeError, OverflowError) as exc:
        raise SerializationError(str(exc)) from exc
    r.done()
    return value


def package_digest(pkg: TxPackage) -> bytes:
    return digest(canonical_serialize(pkg))


def package_size(pkg: TxPackage) -> int:
    return len(canonical_serialize(pkg))


# -- vester chain ---------------------------------------------------------------


def append_vester(
    package: TxPackage,
    vester: KeyPair,
    timestamp: int | None = None,
    scheme: SignatureScheme = DEFAULT_SCHEME,
    allow_duplicate: bool = False,
) -> TxPackage:
    """Return ``package`` with one more vester item signing its predecessor.

    The first item signs the agent signature.  ``allow_duplicate`` exists only
    so adversaries and tests can build rule-3 violations.
    """
    if not allow_duplicate and vester.public in package.vesters:
        raise DuplicateVester(vester.public.hex())
    prev = package.vester_items[-1].signature if package.vester_items else package.agent_signature
    item = VesterItem(vester.public, scheme.sign(vester, prev))
    return replace(
        package,
        vester_items=package.vester_items + (item,),
        last_item_timestamp=package.last_item_timestamp if timestamp is None else timestamp,
    )


def verify_vester_chain(package: TxPackage, scheme: SignatureScheme = DEFAULT_SCHEME) -> bool:
    try:
        return _chain_ok(package.agent_signature, package.vester_items, scheme)
    except Exception:
        return False
