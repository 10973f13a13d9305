import json
from dataclasses import replace
from pathlib import Path

import pytest
from hypothesis import given
from hypothesis import strategies as st

from nochainpos.core import (
    DEFAULT_SCHEME, MAX_AMOUNT, RECORD_SIZE, RECYCLED_KEY, ZERO_DIGEST,
    BalanceRecord, BalanceView, DuplicateVester, Ed25519Scheme, HmacScheme, PackageProof,
    SerializationError, Transaction, TxPackage, ViolationReport, ViolationType,
    append_vester, canonical_serialize, deserialize, digest, verify_vester_chain, view_hash,
)

VECTORS = json.loads((Path(__file__).parent / "vectors" / "core_vectors.json").read_text())
KEYS = [DEFAULT_SCHEME.keygen(f"core:{i}") for i in range(6)]

keys = st.sampled_from(KEYS)
amounts = st.integers(0, MAX_AMOUNT)
small = st.integers(0, 10**12)
digests = st.binary(min_size=32, max_size=32)


@st.composite
def views(draw):
    chosen = draw(st.lists(keys, unique_by=lambda k: k.public, max_size=len(KEYS)))
    records = [BalanceRecord(k.public, draw(small), draw(small)) for k in chosen]
    return BalanceView.create(draw(small), draw(small), draw(digests), draw(digests), records, draw(small))


@st.composite
def transactions(draw):
    sender, receiver = draw(keys), draw(keys)
    return Transaction.create((draw(small), draw(digests)), sender, receiver.public, draw(small), draw(small), draw(small))


@st.composite
def packages(draw):
    agent = draw(keys)
    pkg = TxPackage.create((draw(small), draw(digests)), agent, draw(st.lists(transactions(), max_size=3)), draw(small))
    for v in draw(st.lists(keys, unique_by=lambda k: k.public, max_size=3)):
        pkg = append_vester(pkg, v, draw(small))
    return replace(pkg, flag_51=draw(st.booleans()))


def _report(sn: int = 4) -> ViolationReport:
    agent = KEYS[0]
    a = TxPackage.create((sn, ZERO_DIGEST), agent, [], 1)
    b = TxPackage.create((sn, ZERO_DIGEST), agent, [], 2)
    return ViolationReport.create(
        ViolationType.DOUBLE_PACKAGE, KEYS[1], agent.public, (a.proof_for(), b.proof_for()), 9
    )


# -- serialization -----------------------------------------------------------------


def test_zero_record_is_all_zero_bytes():
    raw = canonical_serialize(BalanceRecord(bytes(32), 0, 0))
    assert raw == bytes(RECORD_SIZE)
    assert len(raw) == 48


def test_views_differing_only_in_sn_serialize_differently():
    records = [BalanceRecord(KEYS[0].public, 10)]
    a = BalanceView.create(1, 0, ZERO_DIGEST, ZERO_DIGEST, records, 0)
    b = BalanceView.create(2, 0, ZERO_DIGEST, ZERO_DIGEST, records, 0)
    assert canonical_serialize(a) != canonical_serialize(b)
    assert a.hash != b.hash


@given(views())
def test_view_round_trip(view):
    raw = canonical_serialize(view)
    assert canonical_serialize(view) == raw
    assert deserialize(BalanceView, raw) == view


@given(packages())
def test_package_round_trip(pkg):
    assert deserialize(TxPackage, canonical_serialize(pkg)) == pkg


@given(transactions())
def test_transaction_round_trip(tx):
    assert deserialize(Transaction, canonical_serialize(tx)) == tx


def test_report_round_trip():
    report = _report()
    assert deserialize(ViolationReport, canonical_serialize(report)) == report
    proof = report.proofs[0]
    assert deserialize(PackageProof, canonical_serialize(proof)) == proof


def test_trailing_bytes_rejected():
    raw = canonical_serialize(BalanceRecord(KEYS[0].public, 1))
    with pytest.raises(SerializationError):
        deserialize(BalanceRecord, raw + b"\0")
    with pytest.raises(SerializationError):
        deserialize(BalanceRecord, raw[:-1])


def test_amount_range_enforced():
    with pytest.raises(OverflowError):
        BalanceRecord(KEYS[0].public, MAX_AMOUNT + 1)
    with pytest.raises(OverflowError):
        BalanceRecord(KEYS[0].public, -1)


# -- view hash ---------------------------------------------------------------------


def test_golden_vectors():
    """Byte layout regression: these were produced once and pinned."""
    scheme_keys = [DEFAULT_SCHEME.keygen(s) for s in VECTORS["seeds"]]
    assert VECTORS["zero_record"] == bytes(48).hex()
    view = deserialize(BalanceView, bytes.fromhex(VECTORS["view"]))
    assert view.hash.hex() == VECTORS["view_hash"]
    assert view_hash(view) == view.hash
    assert [r.pubkey for r in view.records] == sorted(k.public for k in scheme_keys)
    tx = deserialize(Transaction, bytes.fromhex(VECTORS["transaction"]))
    assert tx.verify()
    pkg = deserialize(TxPackage, bytes.fromhex(VECTORS["package"]))
    assert pkg.verify_header() and verify_vester_chain(pkg)
    assert canonical_serialize(pkg).hex() == VECTORS["package"]


def test_view_hash_is_stable_and_sensitive():
    records = [BalanceRecord(KEYS[0].public, 500), BalanceRecord(KEYS[1].public, 500)]
    a = BalanceView.create(0, 0, ZERO_DIGEST, ZERO_DIGEST, records, 0)
    assert view_hash(a) == view_hash(a) == a.hash
    bumped = [BalanceRecord(KEYS[0].public, 501), records[1]]
    assert BalanceView.create(0, 0, ZERO_DIGEST, ZERO_DIGEST, bumped, 0).hash != a.hash


def test_record_order_does_not_change_hash():
    records = [BalanceRecord(k.public, i) for i, k in enumerate(KEYS)]
    a = BalanceView.create(0, 0, ZERO_DIGEST, ZERO_DIGEST, records, 0)
    b = BalanceView.create(0, 0, ZERO_DIGEST, ZERO_DIGEST, reversed(records), 0)
    assert a.hash == b.hash


def test_view_rejects_tampering():
    view = BalanceView.create(0, 0, ZERO_DIGEST, ZERO_DIGEST, [BalanceRecord(KEYS[0].public, 5)], 0)
    with pytest.raises(ValueError):
        replace(view, sn=3)
    with pytest.raises(ValueError):
        BalanceView.create(0, 0, ZERO_DIGEST, ZERO_DIGEST, [BalanceRecord(RECYCLED_KEY, 1)], 0)


# -- vester chain ------------------------------------------------------------------


def _pkg() -> TxPackage:
    return TxPackage.create((3, digest(b"base")), KEYS[0], [], 10)


def test_first_item_signs_agent_signature():
    pkg = append_vester(_pkg(), KEYS[1], 11)
    item = pkg.vester_items[0]
    assert DEFAULT_SCHEME.verify(KEYS[1].public, pkg.agent_signature, item.signature)
    assert pkg.last_item_timestamp == 11


def test_duplicate_vester_rejected():
    pkg = append_vester(_pkg(), KEYS[1])
    with pytest.raises(DuplicateVester):
        append_vester(pkg, KEYS[1])


def test_chain_of_three_and_corruption():
    pkg = _pkg()
    for k in KEYS[1:4]:
        pkg = append_vester(pkg, k)
    assert verify_vester_chain(pkg)
    mid = pkg.vester_items[1]
    bad = replace(mid, signature=bytes([mid.signature[0] ^ 1]) + mid.signature[1:])
    items = (pkg.vester_items[0], bad, pkg.vester_items[2])
    assert not verify_vester_chain(replace(pkg, vester_items=items))


def test_empty_chain_verifies():
    assert verify_vester_chain(_pkg())


@given(st.lists(keys, unique_by=lambda k: k.public, min_size=1, max_size=5), st.data())
def test_any_signature_byte_flip_breaks_chain(vesters, data):
    pkg = _pkg()
    for v in vesters:
        pkg = append_vester(pkg, v)
    assert verify_vester_chain(pkg)
    i = data.draw(st.integers(0, len(vesters) - 1))
    pos = data.draw(st.integers(0, 31))
    sig = bytearray(pkg.vester_items[i].signature)
    sig[pos] ^= 0xFF
    items = list(pkg.vester_items)
    items[i] = replace(items[i], signature=bytes(sig))
    assert not verify_vester_chain(replace(pkg, vester_items=tuple(items)))


# -- signature schemes -------------------------------------------------------------


@pytest.mark.parametrize("scheme", [HmacScheme(), pytest.param("ed25519", id="ed25519")])
def test_scheme_contract(scheme):
    if scheme == "ed25519":
        pytest.importorskip("cryptography")
        scheme = Ed25519Scheme()
    key = scheme.keygen("alice")
    assert scheme.keygen("alice").public == key.public
    sig = scheme.sign(key, b"message")
    assert scheme.verify(key.public, b"message", sig)
    assert not scheme.verify(key.public, b"messagf", sig)
    assert not scheme.verify(scheme.keygen("bob").public, b"message", sig)


def test_hmac_unknown_key_never_verifies():
    other = HmacScheme()
    key = other.keygen("stranger")
    assert not HmacScheme().verify(key.public, b"m", other.sign(key, b"m"))


def test_ed25519_package_chain():
    pytest.importorskip("cryptography")
    scheme = Ed25519Scheme()
    agent, v1, v2 = (scheme.keygen(s) for s in ("a", "v1", "v2"))
    pkg = TxPackage.create((0, ZERO_DIGEST), agent, [], 1, scheme)
    pkg = append_vester(append_vester(pkg, v1, scheme=scheme), v2, scheme=scheme)
    assert pkg.verify_header(scheme) and verify_vester_chain(pkg, scheme)
