import pytest

from nochainpos.netsim import LoadEstimate, load_model
from nochainpos.netsim.load import balance_view_bytes, vester_list_length


def test_published_figures():
    assert vester_list_length() == 15_001
    assert load_model() == LoadEstimate(15_001, 1_505_376, 26)
    heavy = load_model(n_txs=10_000)
    assert (heavy.package_bytes, heavy.verifications_per_sec) == (2_800_096, 42)


def test_rate_overrides_count():
    assert load_model(tx_rate=0.8) == load_model(n_txs=480)


def test_small_inputs_and_errors():
    assert load_model(1, 0, package_period=1) == LoadEstimate(1, 96, 1)
    assert balance_view_bytes(50_000) == 2_400_000
    with pytest.raises(ValueError):
        load_model(0)
