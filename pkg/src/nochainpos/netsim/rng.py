"""Splittable seeding: every named stream is derived from the scenario seed alone."""

from __future__ import annotations

import random

import numpy as np


def _label_words(label) -> list[int]:
    if isinstance(label, int):
        return [label & 0xFFFFFFFF, (label >> 32) & 0xFFFFFFFF]
    return list(str(label).encode())


def derive_seed(seed: int, *labels) -> int:
    key: list[int] = []
    for label in labels:
        key += _label_words(label) + [0x5EED]
    ss = np.random.SeedSequence(entropy=seed, spawn_key=tuple(key))
    return int.from_bytes(ss.generate_state(4, np.uint32).tobytes(), "little")


def derive_rng(seed: int, *labels) -> random.Random:
    """Independent ``random.Random`` for the stream named by ``labels``.

    Adding streams (for example another node) never shifts existing ones.
    """
    return random.Random(derive_seed(seed, *labels))
