"""Simulation lab for a proof-of-stake ledger that keeps balance views instead of a block chain."""

from .consensus import ConsensusParams, derive_params, weighted_winner
from .core import BalanceRecord, BalanceView, Transaction, TxPackage, ViolationReport
from .ledger import apply_tx_package_51, validate_transaction
from .node import Node

__version__ = "0.1.0"

__all__ = [
    "BalanceRecord", "BalanceView", "ConsensusParams", "Node", "Transaction", "TxPackage",
    "ViolationReport", "apply_tx_package_51", "derive_params", "validate_transaction",
    "weighted_winner",
]
