"""Relation Ranking Module: triplet representations, BiLSTM context, ranking scores."""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from .nn import autograd as ag
from .nn.autograd import Tensor
from .nn.cells import LSTMCell, chain_propagate
from .nn.params import ModelParameters
from .scene import BoundingBox, iou


def geometric_feature(b_i: BoundingBox, b_j: BoundingBox) -> np.ndarray:
    """Relative offset, scale, both aspect ratios and IoU of a subject/object box pair.

    Offsets use box centers and are normalised by the subject's sqrt(area).
    """
    (xi, yi), (xj, yj) = b_i.center, b_j.center
    wi, hi, wj, hj = b_i.width, b_i.height, b_j.width, b_j.height
    norm = math.sqrt(wi * hi)
    return np.array([
        (xj - xi) / norm,
        (yj - yi) / norm,
        math.sqrt((wj * hj) / (wi * hi)),
        wi / hi,
        wj / hj,
        iou(b_i, b_j),
    ])


def build_sequence(candidates: Sequence[tuple[int, int, float]]) -> list[int]:
    """Order ``(subject_id, object_id, score)`` candidates by score, high first.

    Ties fall back to ascending ``(subject_id, object_id)``. Returns positions
    into ``candidates``.
    """
    return sorted(range(len(candidates)),
                  key=lambda k: (-candidates[k][2], candidates[k][0], candidates[k][1]))


def sequence_links(sequences: Sequence[Sequence[int]], n: int):
    """Predecessor/level arrays for forward and backward chains over row sequences."""
    prev_f = np.full(n, -1, dtype=np.int64)
    prev_b = np.full(n, -1, dtype=np.int64)
    pos = np.zeros(n, dtype=np.int64)
    rev = np.zeros(n, dtype=np.int64)
    for seq in sequences:
        m = len(seq)
        for k, row in enumerate(seq):
            pos[row] = k
            rev[row] = m - 1 - k
            if k > 0:
                prev_f[row] = seq[k - 1]
            if k + 1 < m:
                prev_b[row] = seq[k + 1]
    return prev_f, pos, prev_b, rev


def fuse_confidence(s_i, s_j, s_ij, t_ij):
    return s_i * s_j * s_ij * t_ij


class RelationRanker:
    """``t = W2 ReLU(W1 h)`` with ``h`` the BiLSTM context of ``r = [v ; W_g g]``.

    The two directions share the hidden width and are summed, so ``h`` has
    ``hidden`` entries and ``W1`` is ``fc x hidden``.
    """

    def __init__(self, params: ModelParameters, prefix: str, visual_dim: int, geo_dim: int,
                 hidden: int, fc_dim: int):
        self.visual_dim = visual_dim
        self.geo = params.weight(f"{prefix}.W_geo", 6, geo_dim)
        self.fwd = LSTMCell(params, f"{prefix}.fwd", visual_dim + geo_dim, hidden)
        self.bwd = LSTMCell(params, f"{prefix}.bwd", visual_dim + geo_dim, hidden)
        self.w1 = params.weight(f"{prefix}.W1", hidden, fc_dim)
        self.w2 = params.weight(f"{prefix}.W2", fc_dim, 1)

    def representation(self, visual: Tensor, geometry: np.ndarray) -> Tensor:
        return ag.concat([visual, ag.matmul(Tensor(geometry), self.geo)], axis=1)

    def __call__(self, visual: Tensor, geometry: np.ndarray, sequences: Sequence[Sequence[int]]) -> Tensor:
        """Ranking scores ``(n, 1)`` for rows grouped into ordered ``sequences``."""
        r = self.representation(visual, geometry)
        prev_f, pos, prev_b, rev = sequence_links(sequences, r.shape[0])
        h = ag.add(chain_propagate(self.fwd.project(r), prev_f, pos, self.fwd),
                   chain_propagate(self.bwd.project(r), prev_b, rev, self.bwd))
        return ag.matmul(ag.relu(ag.matmul(h, self.w1)), self.w2)
