"""Cross-entropy and key/secondary margin-ranking losses.

The plain-number functions here double as references for the autodiff
versions the model builds its objective from.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .nn import autograd as ag
from .nn.autograd import Tensor

DEFAULT_GAMMA = 0.5
DEFAULT_SAMPLE_PAIRS = 512


@dataclass
class LossBreakdown:
    entity_loss: float
    relation_loss: float
    ranking_loss: float
    total: float
    z1: int
    z2: int
    z3: int

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _nll(probs, targets) -> float:
    probs = np.asarray(probs, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.int64)
    if probs.ndim != 2 or probs.shape[0] != targets.size:
        raise ValueError("need one probability row per target")
    if targets.size == 0:
        raise ValueError("cross-entropy over an empty set")
    return float(-np.log(probs[np.arange(targets.size), targets]).mean())


def cross_entropy_loss(entity_probs, entity_targets, relation_probs=None, relation_targets=None):
    """Mean negative log-likelihood of entity and relation targets.

    ``Z1`` is the number of entities and ``Z2`` the number of scored pairs.
    Returns ``(entity_loss, relation_loss)``; the relation term is 0 when no
    pairs are given.
    """
    ent = _nll(entity_probs, entity_targets)
    if relation_probs is None or len(relation_targets) == 0:
        return ent, 0.0
    return ent, _nll(relation_probs, relation_targets)


def sample_key_secondary_pairs(key: Sequence[int], secondary: Sequence[int],
                               count: int = DEFAULT_SAMPLE_PAIRS, seed=0) -> list[tuple[int, int]]:
    """``count`` uniform (key, secondary) pairs, drawn with replacement."""
    if len(key) == 0 or len(secondary) == 0 or count == 0:
        return []
    rng = np.random.default_rng(seed)
    ki = rng.integers(0, len(key), size=count)
    si = rng.integers(0, len(secondary), size=count)
    return [(key[a], secondary[b]) for a, b in zip(ki, si)]


def margin_ranking_loss(pairs: Sequence[tuple[int, int]], phi, gamma: float = DEFAULT_GAMMA) -> float:
    """Mean of ``max(0, gamma - phi[key] + phi[secondary])`` over ``pairs``; 0 when empty.

    ``phi`` is indexable by the pair members (a sequence or a dict).
    """
    if not pairs:
        return 0.0
    return float(np.mean([max(0.0, gamma - phi[k] + phi[s]) for k, s in pairs]))


# -- autodiff versions ---------------------------------------------------------

def nll_rows(logits: Tensor, targets) -> Tensor:
    """Per-row negative log-likelihood ``(n, 1)`` of integer ``targets``."""
    targets = np.asarray(targets, dtype=np.int64)
    n, c = logits.shape
    picked = ag.gather_flat(ag.log_softmax(logits), (np.arange(n) * c + targets)[:, None])
    return ag.scale(picked, -1.0)


def hinge_rows(phi: Tensor, pairs: Sequence[tuple[int, int]], gamma: float) -> Tensor:
    """``max(0, gamma - phi[k] + phi[s])`` per sampled pair, ``(m, 1)``."""
    k = np.array([p[0] for p in pairs], dtype=np.int64)
    s = np.array([p[1] for p in pairs], dtype=np.int64)
    diff = ag.sub(ag.take_rows(phi, s), ag.take_rows(phi, k))
    return ag.relu(ag.add(diff, Tensor(np.full((len(pairs), 1), gamma))))
