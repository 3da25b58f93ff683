"""Hybrid-LSTM context encoding and decoding over HETs.

A batch of trees is flattened into a :class:`Forest` (one row per node, the
virtual root of every tree included) so that each LSTM update runs over a
whole depth level or sibling position of the batch at once.

Each encoder produces, per node, ``[h_down; h_up; h_left; h_right]``:

* ``h_down`` - top-down pass, every node conditioned on its parent state;
* ``h_up`` - bottom-up child-sum TreeLSTM over the node's children;
* ``h_left``/``h_right`` - chain LSTMs over each sibling group in HET child
  order, read left-to-right and right-to-left.

Missing parents, children and neighbours contribute zero states.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .het import ROOT_ID, HetTree
from .nn import autograd as ag
from .nn.autograd import Tensor
from .nn.cells import LSTMCell, chain_propagate, child_sum_propagate, split_gates
from .nn.params import ModelParameters


@dataclass
class Forest:
    parent: np.ndarray
    depth: np.ndarray
    left: np.ndarray
    right: np.ndarray
    sib_pos: np.ndarray
    sib_rev: np.ndarray
    scene: np.ndarray
    entity_id: np.ndarray
    offsets: list
    rows: list  # per scene: entity id -> row

    @property
    def size(self) -> int:
        return self.parent.size

    @property
    def is_root(self) -> np.ndarray:
        return self.parent < 0

    def row(self, scene: int, entity_id: int) -> int:
        return self.rows[scene][entity_id]


def build_forest(trees: Sequence[HetTree]) -> Forest:
    parent, depth, left, right, pos, rev, scene, eid = ([] for _ in range(8))
    offsets, rows = [], []
    base = 0
    for s, tree in enumerate(trees):
        order = tree.bfs_order()
        row = {n: base + k for k, n in enumerate(order)}
        for n in order:
            node = tree.nodes[n]
            parent.append(row[node.parent_id] if node.parent_id is not None else -1)
            depth.append(node.depth)
            if node.parent_id is None:
                group = (n,)
            else:
                group = tree.nodes[node.parent_id].children
            k = group.index(n)
            left.append(row[group[k - 1]] if k > 0 else -1)
            right.append(row[group[k + 1]] if k + 1 < len(group) else -1)
            pos.append(k)
            rev.append(len(group) - 1 - k)
            scene.append(s)
            eid.append(n)
        offsets.append(base)
        rows.append(row)
        base += len(order)
    arr = lambda v: np.asarray(v, dtype=np.int64)
    return Forest(arr(parent), arr(depth), arr(left), arr(right), arr(pos), arr(rev),
                  arr(scene), arr(eid), offsets, rows)


class HybridEncoder:
    """One Hybrid-LSTM: Bi-TreeLSTM hierarchy context plus sibling Bi-LSTM."""

    def __init__(self, params: ModelParameters, prefix: str, in_dim: int, hidden: int):
        self.hidden = hidden
        self.down = LSTMCell(params, f"{prefix}.tree_down", in_dim, hidden)
        self.up = LSTMCell(params, f"{prefix}.tree_up", in_dim, hidden)
        self.fwd = LSTMCell(params, f"{prefix}.sib_fwd", in_dim, hidden)
        self.bwd = LSTMCell(params, f"{prefix}.sib_bwd", in_dim, hidden)

    @property
    def out_dim(self) -> int:
        return 4 * self.hidden

    def hierarchy(self, x: Tensor, forest: Forest) -> Tensor:
        h_down = chain_propagate(self.down.project(x), forest.parent, forest.depth, self.down)
        h_up = child_sum_propagate(self.up.project(x), forest.parent, forest.depth, self.up)
        return ag.concat([h_down, h_up], axis=1)

    def siblings(self, x: Tensor, forest: Forest) -> Tensor:
        h_l = chain_propagate(self.fwd.project(x), forest.left, forest.sib_pos, self.fwd)
        h_r = chain_propagate(self.bwd.project(x), forest.right, forest.sib_rev, self.bwd)
        return ag.concat([h_l, h_r], axis=1)

    def __call__(self, x: Tensor, forest: Forest) -> Tensor:
        return ag.concat([self.hierarchy(x, forest), self.siblings(x, forest)], axis=1)


def encode_hierarchy(encoder: HybridEncoder, x: Tensor, forest: Forest) -> Tensor:
    return encoder.hierarchy(x, forest)


def encode_siblings(encoder: HybridEncoder, x: Tensor, forest: Forest) -> Tensor:
    return encoder.siblings(x, forest)


class EntityDecoder:
    """Top-down LSTM decoder; input ``[f_O ; W_e2 q_parent]``, softmax classifier + box regressor."""

    def __init__(self, params: ModelParameters, prefix: str, ctx_dim: int, num_classes: int,
                 embed_dim: int, hidden: int):
        self.num_classes = num_classes
        self.hidden = hidden
        self.embed = params.weight(f"{prefix}.parent_embed", num_classes, embed_dim)
        self.cell = LSTMCell(params, f"{prefix}.lstm", ctx_dim + embed_dim, hidden)
        self.cls_w = params.weight(f"{prefix}.cls.W", hidden, num_classes)
        self.cls_b = params.bias(f"{prefix}.cls.b", num_classes)
        self.box_w = params.weight(f"{prefix}.box.W", hidden, 4)
        self.box_b = params.bias(f"{prefix}.box.b", 4)

    def __call__(self, f_obj: Tensor, forest: Forest, parent_q: Optional[np.ndarray] = None):
        """Decode every node in breadth-first (depth-level) order.

        ``parent_q`` (rows aligned with the forest) fixes each node's parent
        distribution, e.g. ground-truth one-hots; when omitted the parent's
        own predicted softmax is fed forward. Roots and children of roots see a
        zero vector since the virtual root carries no class.

        Returns ``(logits, probs, box_deltas)`` in node order.
        """
        n, hid, ncls = forest.size, self.hidden, self.num_classes
        pos = np.empty(n, dtype=np.int64)
        parent_is_root = np.zeros(n, dtype=bool)
        has_parent = forest.parent >= 0
        parent_is_root[has_parent] = forest.parent[forest.parent[has_parent]] < 0
        logits_blocks, prob_blocks, box_blocks, order = [], [], [], []
        prev = None
        for d in np.unique(forest.depth):
            idx = np.nonzero(forest.depth == d)[0]
            pos[idx] = np.arange(idx.size)
            if parent_q is not None:
                q = Tensor(np.where((has_parent[idx] & ~parent_is_root[idx])[:, None],
                                    parent_q[idx], 0.0))
            elif prev is None:
                q = ag.zeros(idx.size, ncls)
            else:
                src = ag.concat([prev[1], ag.zeros(1, ncls)], axis=0)
                rows = np.where(parent_is_root[idx], src.shape[0] - 1,
                                pos[np.maximum(forest.parent[idx], 0)])
                q = ag.take_rows(src, rows)
            x = ag.concat([ag.take_rows(f_obj, idx), ag.matmul(q, self.embed)], axis=1)
            z = self.cell.project(x)
            if prev is None:
                i, _, o, g = split_gates(z, hid)
                c = ag.mul(i, g)
            else:
                rows = pos[forest.parent[idx]]
                h_p, c_p = ag.take_rows(prev[0][0], rows), ag.take_rows(prev[0][1], rows)
                i, f, o, g = split_gates(ag.add(z, ag.matmul(h_p, self.cell.U)), hid)
                c = ag.add(ag.mul(f, c_p), ag.mul(i, g))
            h = ag.mul(o, ag.tanh(c))
            logits = ag.add(ag.matmul(h, self.cls_w), self.cls_b)
            probs = ag.softmax(logits)
            logits_blocks.append(logits)
            prob_blocks.append(probs)
            box_blocks.append(ag.add(ag.matmul(h, self.box_w), self.box_b))
            order.append(idx)
            prev = ((h, c), probs)
        inv = np.empty(n, dtype=np.int64)
        inv[np.concatenate(order)] = np.arange(n)
        back = lambda blocks: ag.take_rows(ag.concat(blocks, axis=0), inv)
        return back(logits_blocks), back(prob_blocks), back(box_blocks)


class PredicateClassifier:
    """Two-layer MLP on ``[f_R(subject) ; f_R(object)]`` over ``P + 1`` classes (0 = background)."""

    def __init__(self, params: ModelParameters, prefix: str, ctx_dim: int, hidden: int,
                 num_predicates: int):
        self.num_outputs = num_predicates
        # first layer split by input half so pair rows are gathered after projection
        self.w_sub = params.weight(f"{prefix}.W1_subject", ctx_dim, hidden, bound_fan_in=2 * ctx_dim)
        self.w_obj = params.weight(f"{prefix}.W1_object", ctx_dim, hidden, bound_fan_in=2 * ctx_dim)
        self.b1 = params.bias(f"{prefix}.b1", hidden)
        self.w2 = params.weight(f"{prefix}.W2", hidden, num_predicates)
        self.b2 = params.bias(f"{prefix}.b2", num_predicates)

    def __call__(self, f_rel: Tensor, subj_rows, obj_rows) -> Tensor:
        a = ag.take_rows(ag.matmul(f_rel, self.w_sub), subj_rows)
        b = ag.take_rows(ag.matmul(f_rel, self.w_obj), obj_rows)
        hidden = ag.relu(ag.add(ag.add(a, b), self.b1))
        return ag.add(ag.matmul(hidden, self.w2), self.b2)


def node_inputs(visual: np.ndarray, q: np.ndarray, is_root: np.ndarray,
                word_embed: Tensor, root_embed: Tensor) -> Tensor:
    """``x_i = [v_i ; W_e1 q_i]``, the root taking a learned embedding instead."""
    z = ag.matmul(Tensor(q), word_embed)
    z = ag.add(z, ag.matmul(Tensor(is_root.astype(float)[:, None]), root_embed))
    return ag.concat([Tensor(visual), z], axis=1)


def root_rows(forest: Forest) -> np.ndarray:
    return np.nonzero(forest.entity_id == ROOT_ID)[0]
