from __future__ import annotations

import math
from typing import Sequence, TypeVar

import numpy as np

from ..core import ValidationError

T = TypeVar("T")


def split_sequences(manifests: Sequence[T], train_fraction: float = 0.9, seed: int = 0) -> tuple[list[T], list[T]]:
    """Sequence-level train/test split.

    Shuffles deterministically with ``seed`` and sends floor(n * fraction)
    sequences to train (at least one in each split). Frames of one sequence
    never end up on both sides.
    """
    n = len(manifests)
    if n < 2:
        raise ValidationError(f"need at least 2 sequences to split, got {n}")
    if not 0.0 < train_fraction < 1.0:
        raise ValidationError(f"train_fraction must be in (0, 1), got {train_fraction}")
    # tolerance guards against products like 0.29 * 100 = 28.999999999999996
    n_train = min(max(math.floor(n * train_fraction + 1e-9), 1), n - 1)
    order = np.random.default_rng(seed).permutation(n)
    train = [manifests[i] for i in sorted(order[:n_train])]
    test = [manifests[i] for i in sorted(order[n_train:])]
    return train, test
