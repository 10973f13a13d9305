import pytest
from hypothesis import given
from hypothesis import strategies as st

from nochainpos.consensus import (
    InvalidA, NoSamples, accept_winner, derive_params, stability_step, weighted_winner,
)

from oracles import TABLE_1

H1, H2, H3 = b"\x02" * 32, b"\x01" * 32, b"\x03" * 32


@pytest.mark.parametrize("A,B,M,N", TABLE_1)
def test_table_rows(A, B, M, N):
    p = derive_params(A)
    assert (p.B, p.M, p.N) == (B, M, N)


def test_small_and_invalid_A():
    assert (derive_params(1).B, derive_params(1).M) == (1, 1)
    assert derive_params(101).B == 3  # a ceil(log2)-style formula would give more
    with pytest.raises(InvalidA):
        derive_params(0)


def test_winner_examples():
    assert weighted_winner([(H1, 1, 60), (H2, 1, 40)]) == (H1, 1)
    assert weighted_winner([(H1, 1, 50), (H2, 1, 50)])[0] == min(H1, H2)
    assert weighted_winner([(H3, 4, 1)]) == (H3, 4)
    assert weighted_winner([(H1, 2, 5), (H1, 7, 5), (H2, 9, 1)]) == (H1, 7)
    with pytest.raises(NoSamples):
        weighted_winner([])
    with pytest.raises(NoSamples):
        weighted_winner([(H1, 1, 0)])


samples = st.lists(
    st.tuples(st.sampled_from([H1, H2, H3]), st.integers(0, 20), st.integers(0, 1000)), min_size=1
).filter(lambda xs: any(w for _, _, w in xs))


@given(samples, st.integers(1, 1000), st.randoms())
def test_winner_scale_and_permutation_invariant(xs, c, rnd):
    base = weighted_winner(xs)
    assert weighted_winner([(h, sn, w * c) for h, sn, w in xs])[0] == base[0]
    shuffled = list(xs)
    rnd.shuffle(shuffled)
    assert weighted_winner(shuffled) == base


@given(samples, st.integers(0, 50))
def test_zero_weight_padding_changes_nothing(xs, pad):
    assert weighted_winner(xs + [(b"\xff" * 32, 99, 0)] * pad) == weighted_winner(xs)


def test_stability_examples():
    assert stability_step(8, H1, H1, 9) == (9, True)
    assert stability_step(5, H1, H2, 9) == (1, False)
    counter, fired = 0, []
    for step in range(1, 10):
        counter, promoted = stability_step(counter, H1 if step > 1 else H2, H1, 9)
        fired.append(promoted)
    assert fired == [False] * 8 + [True]


@given(st.lists(st.sampled_from([H1, H2]), min_size=1, max_size=40), st.integers(1, 6))
def test_promotion_iff_last_n_identical(seq, n):
    """Fold vs brute force; the counter restarts after a promotion as in the node."""
    counter, prev, start = 0, None, 0
    for i, w in enumerate(seq):
        counter, promoted = stability_step(counter, prev, w, n)
        run = seq[start:i + 1]
        run_len = next((j for j, x in enumerate(reversed(run)) if x != w), len(run))
        assert promoted == (run_len >= n)
        if promoted:
            counter, start = 0, i + 1
        prev = w


def test_accept_winner():
    assert accept_winner(5, 6)
    assert not accept_winner(5, 5)
    assert not accept_winner(5, 4)
