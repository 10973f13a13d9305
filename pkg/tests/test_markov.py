from collections import Counter

import pytest

from nochainpos.netsim import MarkovSetup, estimate_absorption_probability, run_markov_mode
from nochainpos.netsim.markov import absorption_step

import oracles

A, B = b"\x0a" * 32, b"\x0b" * 32


def test_identical_nodes_stay_absorbed():
    setup = MarkovSetup((1,) * 5, (A,) * 5, 3)
    assert all(c == Counter({A: 5}) for c in run_markov_mode(setup, 20, seed=1))


def test_single_node_absorbed_at_zero():
    setup = MarkovSetup((7,), (A,), 1)
    assert absorption_step(setup, 10) == 0


def test_split_absorbs_every_seed():
    setup = MarkovSetup.split(20, 9, [1, 1], [A, B])
    assert Counter(setup.views) == Counter({A: 10, B: 10})
    for seed in range(200):
        assert absorption_step(setup, oracles.MARKOV_20_9_CAP, seed=seed) is not None


def test_trajectory_preserves_node_count():
    setup = MarkovSetup.split(20, 9, [1, 1], [A, B])
    traj = run_markov_mode(setup, 50, seed=3)
    assert len(traj) == 51 and all(sum(c.values()) == 20 for c in traj)
    assert traj == run_markov_mode(setup, 50, seed=3)


def test_estimate_shape_and_exact_agreement():
    setup = MarkovSetup.split(20, 9, [1, 1], [A, B])
    curve = estimate_absorption_probability(setup, [0, 50, 200], 1000, seed=0)
    assert curve[0] == (0, 0.0)
    assert [p for _, p in curve] == sorted(p for _, p in curve)
    # binomial tolerance around the exact chain value
    assert curve[-1][1] == pytest.approx(oracles.MARKOV_20_9_BY_200, abs=4 * (0.0006 / 1000) ** 0.5 + 1e-3)


def test_absorbed_start_is_one_everywhere():
    setup = MarkovSetup((1,) * 4, (A,) * 4, 2)
    assert estimate_absorption_probability(setup, [0, 3, 9], 10) == [(0, 1.0), (3, 1.0), (9, 1.0)]


def test_setup_validation():
    with pytest.raises(ValueError):
        MarkovSetup((1, 1), (A,), 1)
    with pytest.raises(ValueError):
        MarkovSetup((1, 1), (A, B), 3)
