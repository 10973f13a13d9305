from dataclasses import replace
from fractions import Fraction

import pytest
from hypothesis import given
from hypothesis import strategies as st

from nochainpos.core import DEFAULT_SCHEME, ZERO_DIGEST, BalanceRecord, BalanceView, Transaction, TxPackage, ViolationReport, ViolationType, append_vester, package_digest
from nochainpos.ledger import (
    DeflationPolicy, InvalidProofs, NothingToRedistribute, PreconditionViolated, Rejection,
    apply_deflation, apply_tx_package_51, apply_violation, check_conservation, largest_remainder,
    make_view, redistribute_recycled, split_fees, stake_exceeds, validate_transaction, verify_violation,
)

K = [DEFAULT_SCHEME.keygen(f"ledger:{i}") for i in range(8)]
PK = [k.public for k in K]
YEAR = 365 * 24 * 3600
DECADE = DeflationPolicy().decade_length


def base_view(balances=(6000, 2000, 1000, 500, 500), recycled=0) -> BalanceView:
    return make_view(zip(PK, balances), recycled)


def finalize(view: BalanceView, items, agent=3, vesters=(0,), ts=100) -> TxPackage:
    pkg = TxPackage.create(view.ref, K[agent], items, ts)
    for v in vesters:
        pkg = append_vester(pkg, K[v], ts + 1)
    return replace(pkg, flag_51=True)


def tx(view, sender, receiver_key, volume, fee, ts=1) -> Transaction:
    return Transaction.create(view.ref, K[sender], receiver_key, volume, fee, ts)


# -- validation ----------------------------------------------------------------


def test_insufficient_funds_boundary():
    view = make_view([(PK[0], 100), (PK[1], 0)])
    assert validate_transaction(view, tx(view, 0, PK[1], 100, 1)) is Rejection.INSUFFICIENT_FUNDS
    assert validate_transaction(view, tx(view, 0, PK[1], 99, 1)) is None


def test_baseview_mismatch():
    v5 = make_view([(PK[0], 100)], sn=5)
    v6 = make_view([(PK[0], 100)], sn=6)
    assert validate_transaction(v6, tx(v5, 0, PK[1], 1, 0)) is Rejection.BASEVIEW_MISMATCH


def test_unknown_sender_and_bad_signature():
    view = make_view([(PK[0], 100)])
    assert validate_transaction(view, tx(view, 1, PK[0], 1, 0)) is Rejection.UNKNOWN_SENDER
    forged = replace(tx(view, 0, PK[1], 1, 0), volume=2)
    assert validate_transaction(view, forged) is Rejection.BAD_SIGNATURE


def test_fresh_receiver_gets_an_account():
    view = base_view()
    fresh = DEFAULT_SCHEME.keygen("ledger:fresh").public
    t = tx(view, 1, fresh, 300, 0)
    assert validate_transaction(view, t) is None
    nxt = apply_tx_package_51(view, finalize(view, [t]))
    assert nxt.balance_of(fresh) == 300
    assert nxt.by_key[fresh].time_last_activity == 101


# -- fees --------------------------------------------------------------------------


def test_split_fees_examples():
    zero = split_fees(0, PK[0], [(PK[1], 5)])
    assert zero.agent_share == 0 and zero.dust == 0 and all(v == 0 for _, v in zero.vester_shares)
    one = split_fees(100, PK[0], [(PK[1], 7)])
    assert (one.agent_share, one.vester_shares, one.dust) == (50, ((PK[1], 50),), 0)
    two = split_fees(101, PK[0], [(PK[1], 2), (PK[2], 1)])
    assert (two.agent_share, dict(two.vester_shares), two.dust) == (50, {PK[1]: 34, PK[2]: 17}, 0)


@given(st.integers(0, 10**12), st.lists(st.integers(0, 10**9), min_size=1, max_size=7))
def test_split_fees_conserves(total, stakes):
    split = split_fees(total, PK[7], list(zip(PK, stakes)))
    assert split.total == total
    assert split.agent_share == total // 2
    if sum(stakes):
        assert split.dust == 0
        pool = total - total // 2
        for (_, share), s in zip(split.vester_shares, stakes):
            exact = Fraction(pool * s, sum(stakes))
            assert abs(share - exact) < 1


@given(st.integers(0, 10**6), st.lists(st.integers(0, 1000), min_size=1, max_size=7))
def test_largest_remainder_is_exact(total, weights):
    shares = largest_remainder(total, list(zip(PK, weights)))
    assert sum(s for _, s in shares) == (total if sum(weights) else 0)


# -- tx_package_51 -----------------------------------------------------------------


def test_empty_package_increments_sn_only():
    view = base_view()
    nxt = apply_tx_package_51(view, finalize(view, []))
    assert nxt.balances == view.balances
    assert (nxt.sn, nxt.base_view_sn, nxt.base_view_hash) == (1, 0, view.hash)


def test_one_transaction_moves_money_and_fees():
    view = base_view()
    pkg = finalize(view, [tx(view, 1, PK[2], 400, 10)], agent=3, vesters=(0,))
    nxt = apply_tx_package_51(view, pkg)
    assert nxt.balance_of(PK[1]) == 2000 - 410
    assert nxt.balance_of(PK[2]) == 1400
    assert nxt.balance_of(PK[3]) == 505
    assert nxt.balance_of(PK[0]) == 6005
    assert nxt.tx_package_51_hash == package_digest(pkg)
    assert nxt.total_supply == view.total_supply


def test_overspend_in_sequence_is_skipped():
    view = base_view()
    first, second = tx(view, 1, PK[2], 1500, 0, 1), tx(view, 1, PK[2], 600, 0, 2)
    nxt = apply_tx_package_51(view, finalize(view, [first, second]))
    # brute-force replay: only the first fits
    assert nxt.balance_of(PK[1]) == 500
    assert nxt.balance_of(PK[2]) == 2500
    check_conservation(nxt, view.total_supply)


def test_preconditions():
    view = base_view()
    pkg = finalize(view, [], vesters=(1, 2))  # 3000 of 10000: not enough
    with pytest.raises(PreconditionViolated):
        apply_tx_package_51(view, pkg)
    with pytest.raises(PreconditionViolated):
        apply_tx_package_51(view, replace(finalize(view, []), flag_51=False))
    other = make_view([(PK[0], 10_000)], sn=4)
    with pytest.raises(PreconditionViolated):
        apply_tx_package_51(other, finalize(view, []))
    good = finalize(view, [])
    with pytest.raises(PreconditionViolated):
        apply_tx_package_51(view, replace(good, agent_signature=b"\0" * 32))


def test_threshold_is_strict():
    total = 10_000
    assert not stake_exceeds(5100, total)
    assert stake_exceeds(5101, total)
    view = make_view([(PK[0], 5100), (PK[1], 4900)])
    with pytest.raises(PreconditionViolated):
        apply_tx_package_51(view, finalize(view, [], vesters=(0,)))
    view = make_view([(PK[0], 5101), (PK[1], 4899)])
    assert apply_tx_package_51(view, finalize(view, [], vesters=(0,))).sn == 1


def _replay(balances: dict, items, agent, vesters):
    """Naive reference: sequential dict updates, then the fee formula by hand."""
    bal = dict(balances)
    fees = 0
    for t in items:
        have = bal.get(t.sender)
        if have is None or have < t.volume + t.tx_fee:
            continue
        bal[t.sender] = have - t.volume - t.tx_fee
        bal[t.receiver] = bal.get(t.receiver, 0) + t.volume
        fees += t.tx_fee
    bal[agent] = bal.get(agent, 0) + fees // 2
    return bal, fees


@given(
    st.lists(st.tuples(st.integers(0, 4), st.integers(0, 7), st.integers(0, 3000), st.integers(0, 50)), max_size=12)
)
def test_package_matches_naive_replay(spec):
    view = base_view()
    items = [tx(view, s, PK[r], v, f, i) for i, (s, r, v, f) in enumerate(spec)]
    nxt = apply_tx_package_51(view, finalize(view, items, agent=3, vesters=(0,)))
    expected, fees = _replay(view.balances, items, PK[3], [PK[0]])
    expected[PK[0]] += fees - fees // 2
    assert {k: v for k, v in nxt.balances.items() if v or k in view.balances} == {
        k: v for k, v in expected.items() if v or k in view.balances
    }
    assert nxt.total_supply == view.total_supply


@given(st.lists(st.tuples(st.integers(0, 4), st.integers(0, 4), st.integers(0, 3000), st.integers(0, 50)), max_size=8))
def test_successor_is_deterministic(spec):
    view = base_view()
    items = [tx(view, s, PK[r], v, f, i) for i, (s, r, v, f) in enumerate(spec)]
    pkg = finalize(view, items)
    assert apply_tx_package_51(view, pkg).hash == apply_tx_package_51(view, pkg).hash


# -- violations ---------------------------------------------------------------------


def double_package_report(view, accused=4, reporter=0) -> ViolationReport:
    a = TxPackage.create(view.ref, K[accused], [], 1)
    b = TxPackage.create(view.ref, K[accused], [], 2)
    return ViolationReport.create(ViolationType.DOUBLE_PACKAGE, K[reporter], PK[accused], (a.proof_for(), b.proof_for()), 3)


def double_vest_report(view, accused=2) -> ViolationReport:
    a = append_vester(TxPackage.create(view.ref, K[3], [], 1), K[accused])
    b = append_vester(TxPackage.create(view.ref, K[4], [], 1), K[accused])
    return ViolationReport.create(ViolationType.DOUBLE_VEST, K[0], PK[accused], (a.proof_for(0), b.proof_for(0)), 3)


@pytest.mark.parametrize("balance,kept,recycled", [(1000, 500, 500), (0, 0, 0), (101, 51, 50)])
def test_violation_halves_balance(balance, kept, recycled):
    view = make_view([(PK[0], 10_000), (PK[4], balance)])
    out = apply_violation(view, double_package_report(view))
    assert out.balance_of(PK[4]) == kept
    assert out.recycled.balance == recycled


def test_verify_violation_cases():
    view = base_view()
    genuine = double_package_report(view)
    assert verify_violation(genuine)
    assert verify_violation(double_vest_report(view))
    same = ViolationReport.create(
        ViolationType.DOUBLE_PACKAGE, K[0], PK[4], (genuine.proofs[0], genuine.proofs[0]), 3
    )
    assert not verify_violation(same)
    stranger = DEFAULT_SCHEME.keygen("ledger:stranger")
    forged_header = replace(genuine.proofs[1].header, agent_signature=DEFAULT_SCHEME.sign(stranger, b"x"))
    forged = ViolationReport.create(
        ViolationType.DOUBLE_PACKAGE, K[0], PK[4], (genuine.proofs[0], replace(genuine.proofs[1], header=forged_header)), 3
    )
    assert not verify_violation(forged)
    wrong_accused = replace(genuine, accused=PK[5])
    assert not verify_violation(wrong_accused)
    with pytest.raises(InvalidProofs):
        apply_violation(view, forged)


def test_report_in_package_is_applied_once():
    view = base_view()
    report = double_package_report(view)
    nxt = apply_tx_package_51(view, finalize(view, [report, report]))
    assert nxt.balance_of(PK[4]) == 250
    assert nxt.recycled.balance == 250


# -- deflation and redistribution -----------------------------------------------------


def test_deflation_schedule():
    policy = DeflationPolicy()
    assert [policy.rate(d) for d in (1, 2, 3)] == [Fraction(1, 100), Fraction(2, 100), Fraction(4, 100)]
    assert policy.rate(20) == 1


def test_deflation_first_decade_takes_one_percent():
    view = make_view([(PK[0], 1000)])
    out = apply_deflation(view, DECADE)
    assert out.balance_of(PK[0]) == 990 and out.recycled.balance == 10
    assert out.by_key[PK[0]].time_last_activity == 0


def test_deflation_third_boundary_takes_four_percent():
    view = make_view([(PK[0], 1000)])
    v1 = apply_deflation(view, DECADE)
    v2 = apply_deflation(v1, 2 * DECADE, previous=DECADE)
    before = v2.balance_of(PK[0])
    v3 = apply_deflation(v2, 3 * DECADE, previous=2 * DECADE)
    assert before - v3.balance_of(PK[0]) == before * 4 // 100


def test_active_account_untouched():
    view = BalanceView.create(0, 0, ZERO_DIGEST, ZERO_DIGEST, [BalanceRecord(PK[0], 1000, 5 * YEAR)], 0)
    assert apply_deflation(view, 9 * YEAR).balances == view.balances


def test_redistribution_examples():
    with pytest.raises(NothingToRedistribute):
        redistribute_recycled(make_view([(PK[0], 1)]))
    out = redistribute_recycled(make_view([(PK[0], 75), (PK[1], 25)], recycled=100))
    assert (out.balance_of(PK[0]), out.balance_of(PK[1]), out.recycled.balance) == (150, 50, 0)
    single = redistribute_recycled(make_view([(PK[0], 3)], recycled=7))
    assert single.balance_of(PK[0]) == 10


transitions = st.lists(
    st.one_of(
        st.tuples(st.just("pkg"), st.lists(st.tuples(st.integers(0, 4), st.integers(0, 7), st.integers(0, 4000), st.integers(0, 99)), max_size=5)),
        st.tuples(st.just("violation"), st.integers(0, 4)),
        st.tuples(st.just("deflate"), st.integers(1, 4)),
        st.tuples(st.just("redistribute"), st.none()),
    ),
    max_size=10,
)


@given(transitions)
def test_conservation_over_random_histories(steps):
    view = base_view(recycled=17)
    total = view.total_supply
    clock = 0
    for kind, arg in steps:
        if kind == "pkg":
            richest = sorted(range(5), key=lambda i: -view.balance_of(PK[i]))
            vesters = [i for n, i in enumerate(richest) if sum(view.balance_of(PK[j]) for j in richest[:n]) * 100 <= 51 * total]
            if not stake_exceeds(sum(view.balance_of(PK[i]) for i in vesters), total):
                continue
            items = [tx(view, s, PK[r], v, f, i) for i, (s, r, v, f) in enumerate(arg)]
            nxt = apply_tx_package_51(view, finalize(view, items, agent=3, vesters=vesters), now=clock)
            assert nxt.sn == view.sn + 1 and nxt.base_view_hash == view.hash
            view = nxt
        elif kind == "violation":
            view = apply_violation(view, double_package_report(view, accused=arg, reporter=(arg + 1) % 5))
        elif kind == "deflate":
            prev, clock = clock, clock + arg * DECADE
            view = apply_deflation(view, clock, previous=prev)
        elif view.recycled.balance and any(view.balances.values()):
            view = redistribute_recycled(view)
        check_conservation(view, total)
