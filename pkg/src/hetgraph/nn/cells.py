"""LSTM and child-sum TreeLSTM cells, single-step and level-batched.

Gate layout in every weight matrix is ``[input, forget, output, candidate]``.
The child-sum TreeLSTM reuses the same layout, applying the forget block once
per child, so a node with exactly one child reduces to a plain LSTM step.
"""

from __future__ import annotations

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .params import ModelParameters


class LSTMCell:
    def __init__(self, params: ModelParameters, prefix: str, in_dim: int, hidden: int):
        self.hidden = hidden
        self.in_dim = in_dim
        self.W = params.weight(f"{prefix}.W", in_dim, 4 * hidden)
        self.U = params.weight(f"{prefix}.U", hidden, 4 * hidden)
        self.b = params.bias(f"{prefix}.b", 4 * hidden)

    def project(self, x: Tensor) -> Tensor:
        """Input contribution ``x W + b`` for every row of ``x``."""
        return ag.add(ag.matmul(x, self.W), self.b)


def split_gates(z: Tensor, hidden: int):
    s = ag.sigmoid(ag.slice_cols(z, 0, 3 * hidden))
    g = ag.tanh(ag.slice_cols(z, 3 * hidden, 4 * hidden))
    i = ag.slice_cols(s, 0, hidden)
    f = ag.slice_cols(s, hidden, 2 * hidden)
    o = ag.slice_cols(s, 2 * hidden, 3 * hidden)
    return i, f, o, g


def lstm_step(x: Tensor, h_prev: Tensor, c_prev: Tensor, cell: LSTMCell):
    z = ag.add(cell.project(x), ag.matmul(h_prev, cell.U))
    i, f, o, g = split_gates(z, cell.hidden)
    c = ag.add(ag.mul(f, c_prev), ag.mul(i, g))
    h = ag.mul(o, ag.tanh(c))
    return h, c


def tree_lstm_step(x: Tensor, children, cell: LSTMCell):
    """Child-sum TreeLSTM update for one node; ``children`` is a list of ``(h, c)``."""
    hid = cell.hidden
    xw = cell.project(x)
    if children:
        h_sum = children[0][0]
        for h_k, _ in children[1:]:
            h_sum = ag.add(h_sum, h_k)
        z = ag.add(xw, ag.matmul(h_sum, cell.U))
    else:
        z = xw
    i, _, o, g = split_gates(z, hid)
    c = ag.mul(i, g)
    xf = ag.slice_cols(xw, hid, 2 * hid)
    for h_k, c_k in children:
        f_k = ag.sigmoid(ag.add(xf, ag.slice_cols(ag.matmul(h_k, cell.U), hid, 2 * hid)))
        c = ag.add(c, ag.mul(f_k, c_k))
    h = ag.mul(o, ag.tanh(c))
    return h, c


def _blocks(level: np.ndarray):
    for lv in np.unique(level):
        yield lv, np.nonzero(level == lv)[0]


def chain_propagate(xw: Tensor, prev: np.ndarray, level: np.ndarray, cell: LSTMCell) -> Tensor:
    """Run many LSTM chains at once.

    Row ``k`` of ``xw`` is the projected input of node ``k``; ``prev[k]`` is the
    node whose state feeds it (``-1`` for a chain start) and must sit exactly one
    level below. Nodes sharing a level are updated together. Returns the
    hidden states in node order.
    """
    n, hid = xw.shape[0], cell.hidden
    prev = np.asarray(prev, dtype=np.int64)
    level = np.asarray(level, dtype=np.int64)
    pos = np.empty(n, dtype=np.int64)
    hs, cs, order = [], [], []
    last_level = None
    for lv, idx in _blocks(level):
        pos[idx] = np.arange(idx.size)
        z = ag.take_rows(xw, idx)
        pr = prev[idx]
        has = pr >= 0
        if has.any():
            if last_level != lv - 1 or np.any(level[pr[has]] != last_level):
                raise ValueError("chain predecessor must sit on the previous level")
            h_src, c_src = hs[-1], cs[-1]
            if has.all():
                rows = pos[pr]
            else:
                h_src = ag.concat([h_src, ag.zeros(1, hid)], axis=0)
                c_src = ag.concat([c_src, ag.zeros(1, hid)], axis=0)
                rows = np.where(has, pos[np.maximum(pr, 0)], h_src.shape[0] - 1)
            h_p, c_p = ag.take_rows(h_src, rows), ag.take_rows(c_src, rows)
            i, f, o, g = split_gates(ag.add(z, ag.matmul(h_p, cell.U)), hid)
            c = ag.add(ag.mul(f, c_p), ag.mul(i, g))
        else:
            i, _, o, g = split_gates(z, hid)
            c = ag.mul(i, g)
        hs.append(ag.mul(o, ag.tanh(c)))
        cs.append(c)
        order.append(idx)
        last_level = lv
    inv = np.empty(n, dtype=np.int64)
    inv[np.concatenate(order)] = np.arange(n)
    return ag.take_rows(ag.concat(hs, axis=0), inv)


def child_sum_propagate(xw: Tensor, parent: np.ndarray, depth: np.ndarray, cell: LSTMCell) -> Tensor:
    """Bottom-up child-sum TreeLSTM over a forest, one depth level at a time.

    ``parent[k] == -1`` marks a root; children must sit one level deeper than
    their parent. Returns the hidden states in node order.
    """
    n, hid = xw.shape[0], cell.hidden
    parent = np.asarray(parent, dtype=np.int64)
    depth = np.asarray(depth, dtype=np.int64)
    has_parent = parent >= 0
    if np.any(depth[has_parent] != depth[parent[has_parent]] + 1):
        raise ValueError("child depth must equal parent depth + 1")
    pos = np.empty(n, dtype=np.int64)
    hs, cs, order = [], [], []
    below = None  # (idx, h, c) of the level just processed
    for _, idx in reversed(list(_blocks(depth))):
        pos[idx] = np.arange(idx.size)
        z = z_own = ag.take_rows(xw, idx)
        if below is not None:
            kid_idx, h_k, c_k = below
            local = pos[parent[kid_idx]]
            m = np.zeros((idx.size, kid_idx.size))
            m[local, np.arange(kid_idx.size)] = 1.0
            m = Tensor(m)
            hu = ag.matmul(h_k, cell.U)
            z = ag.add(z, ag.matmul(m, hu))
            i, _, o, g = split_gates(z, hid)
            zf = ag.add(ag.take_rows(ag.slice_cols(z_own, hid, 2 * hid), local),
                        ag.slice_cols(hu, hid, 2 * hid))
            fc = ag.mul(ag.sigmoid(zf), c_k)
            c = ag.add(ag.mul(i, g), ag.matmul(m, fc))
        else:
            i, _, o, g = split_gates(z, hid)
            c = ag.mul(i, g)
        h = ag.mul(o, ag.tanh(c))
        hs.append(h)
        cs.append(c)
        order.append(idx)
        below = (idx, h, c)
    inv = np.empty(n, dtype=np.int64)
    inv[np.concatenate(order)] = np.arange(n)
    return ag.take_rows(ag.concat(hs, axis=0), inv)
