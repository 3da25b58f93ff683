import numpy as np
import pytest

from hetgraph.context import (EntityDecoder, HybridEncoder, PredicateClassifier, build_forest,
                              node_inputs, root_rows)
from hetgraph.het import build_het
from hetgraph.nn.autograd import Tensor
from hetgraph.nn.params import ModelParameters
from hetgraph.scene import BoundingBox, Entity

from oracles import unrolled_chain, unrolled_hierarchy


def ent(i, *b):
    return Entity(i, BoundingBox(*map(float, b)), np.array([1.0]), np.zeros(1))


def five_node_tree():
    # root -> 1 -> {2, 3}, 2 -> 4, root -> 5
    return build_het([ent(1, 0, 0, 10, 10), ent(2, 0, 0, 6, 6), ent(3, 6, 6, 9, 9),
                      ent(4, 1, 1, 2, 2), ent(5, 20, 20, 25, 25)], 0.9, "ifs")


def chain_tree(n):
    return build_het([ent(k + 1, k, k, 20 - k, 20 - k) for k in range(n)], 0.9, "ifs")


def encoder(in_dim=3, hidden=2, seed=0):
    p = ModelParameters(seed)
    enc = HybridEncoder(p, "enc", in_dim, hidden)
    rng = np.random.default_rng(seed + 1)
    for c in (enc.down, enc.up, enc.fwd, enc.bwd):
        c.b.data[...] = rng.uniform(-0.3, 0.3, c.b.shape)
    return enc


def weights(c):
    return c.W.data.tolist(), c.U.data.tolist(), c.b.data[0].tolist()


class TestForest:
    def test_layout(self):
        f = build_forest([five_node_tree(), chain_tree(2)])
        assert f.size == 9
        assert f.entity_id.tolist() == [0, 1, 5, 2, 3, 4, 0, 1, 2]
        assert f.parent.tolist() == [-1, 0, 0, 1, 1, 3, -1, 6, 7]
        assert f.left.tolist() == [-1, -1, 1, -1, 3, -1, -1, -1, -1]
        assert f.right.tolist() == [-1, 2, -1, 4, -1, -1, -1, -1, -1]
        assert root_rows(f).tolist() == [0, 6]
        assert f.row(1, 2) == 8


class TestHybridEncoder:
    def test_zero_weights_give_zero(self):
        enc = encoder()
        for c in (enc.down, enc.up, enc.fwd, enc.bwd):
            for t in (c.W, c.U, c.b):
                t.data[...] = 0.0
        f = build_forest([five_node_tree()])
        out = enc(Tensor(np.ones((f.size, 3))), f)
        assert out.shape == (6, 8) and not out.data.any()

    def test_hierarchy_matches_recursion(self):
        enc = encoder(seed=3)
        tree = five_node_tree()
        f = build_forest([tree])
        x = np.random.default_rng(4).standard_normal((f.size, 3))
        out = enc.hierarchy(Tensor(x), f).data
        inputs = {int(e): x[k].tolist() for k, e in enumerate(f.entity_id)}
        h_down, h_up = unrolled_hierarchy(tree, inputs, weights(enc.down), weights(enc.up))
        for k, e in enumerate(f.entity_id):
            assert np.allclose(out[k, :2], h_down[int(e)], atol=1e-12)
            assert np.allclose(out[k, 2:], h_up[int(e)], atol=1e-12)

    def test_siblings_match_chains(self):
        enc = encoder(seed=5)
        tree = five_node_tree()
        f = build_forest([tree])
        x = np.random.default_rng(6).standard_normal((f.size, 3))
        out = enc.siblings(Tensor(x), f).data
        row = f.rows[0]
        groups = [(0,)] + [tree.nodes[n].children for n in tree.nodes if tree.nodes[n].children]
        for g in groups:
            seq = [x[row[n]].tolist() for n in g]
            fwd = unrolled_chain(seq, weights(enc.fwd))
            bwd = unrolled_chain(seq[::-1], weights(enc.bwd))[::-1]
            for k, n in enumerate(g):
                assert np.allclose(out[row[n], :2], fwd[k], atol=1e-12)
                assert np.allclose(out[row[n], 2:], bwd[k], atol=1e-12)

    def test_chain_reduction(self):
        # on a chain the hierarchy pass is a bidirectional LSTM over the chain
        enc = encoder(seed=7)
        tree = chain_tree(4)
        f = build_forest([tree])
        x = np.random.default_rng(8).standard_normal((f.size, 3))
        out = enc.hierarchy(Tensor(x), f).data
        seq = [x[f.row(0, n)].tolist() for n in range(5)]
        fwd = unrolled_chain(seq, weights(enc.down))
        bwd = unrolled_chain(seq[::-1], weights(enc.up))[::-1]
        for n in range(5):
            assert np.allclose(out[f.row(0, n), :2], fwd[n], atol=1e-12)
            assert np.allclose(out[f.row(0, n), 2:], bwd[n], atol=1e-12)

    def test_batching_is_independent(self):
        enc = encoder(seed=9)
        t1, t2 = five_node_tree(), chain_tree(3)
        rng = np.random.default_rng(10)
        x1, x2 = rng.standard_normal((6, 3)), rng.standard_normal((4, 3))
        both = enc(Tensor(np.vstack([x1, x2])), build_forest([t1, t2])).data
        one = enc(Tensor(x1), build_forest([t1])).data
        two = enc(Tensor(x2), build_forest([t2])).data
        assert np.allclose(both, np.vstack([one, two]), atol=1e-12)


class TestNodeInputs:
    def test_root_uses_learned_embedding(self):
        p = ModelParameters(0)
        W = p.weight("W", 3, 2)
        r = p.vector("root", 2)
        q = np.array([[0, 0, 0], [0, 1, 0.0]])
        x = node_inputs(np.array([[0.0], [5.0]]), q, np.array([True, False]), W, r).data
        assert np.allclose(x[0], [0.0, *r.data[0]])
        assert np.allclose(x[1], [5.0, *W.data[1]])


class TestEntityDecoder:
    def setup_method(self):
        self.p = ModelParameters(2)
        self.dec = EntityDecoder(self.p, "dec", 4, 3, 2, 5)
        self.tree = five_node_tree()
        self.f = build_forest([self.tree])
        self.ctx = Tensor(np.random.default_rng(1).standard_normal((self.f.size, 4)))

    def test_shapes_and_distribution(self):
        logits, probs, boxes = self.dec(self.ctx, self.f)
        assert logits.shape == (6, 3) and boxes.shape == (6, 4)
        assert np.allclose(probs.data.sum(axis=1), 1.0)

    def test_zero_classifier_is_uniform(self):
        self.dec.cls_w.data[...] = 0.0
        _, probs, _ = self.dec(self.ctx, self.f)
        assert np.allclose(probs.data, 1 / 3)

    def test_parent_distribution_feeds_children(self):
        # row k holds the distribution of k's parent; changing node 2's row
        # moves node 2 and, through the decoder state, its child 4
        q = np.zeros((self.f.size, 3))
        q[:, 0] = 1.0
        _, a, _ = self.dec(self.ctx, self.f, parent_q=q)
        q2 = q.copy()
        q2[self.f.row(0, 2)] = [0.0, 0.0, 1.0]
        _, b, _ = self.dec(self.ctx, self.f, parent_q=q2)
        changed = np.nonzero(np.abs(a.data - b.data).max(axis=1) > 0)[0]
        assert changed.tolist() == [self.f.row(0, 2), self.f.row(0, 4)]

    def test_root_children_ignore_parent_q(self):
        q = np.random.default_rng(3).random((self.f.size, 3))
        _, a, _ = self.dec(self.ctx, self.f, parent_q=q)
        _, b, _ = self.dec(self.ctx, self.f, parent_q=np.zeros_like(q))
        for e in (0, 1, 5):
            assert np.array_equal(a.data[self.f.row(0, e)], b.data[self.f.row(0, e)])


class TestPredicateClassifier:
    def test_asymmetric(self):
        p = ModelParameters(0)
        clf = PredicateClassifier(p, "pred", 4, 6, 3)
        f = Tensor(np.random.default_rng(0).standard_normal((2, 4)))
        ab = clf(f, [0], [1]).data
        ba = clf(f, [1], [0]).data
        assert ab.shape == (1, 3) and not np.allclose(ab, ba)

    def test_matches_dense_mlp(self):
        p = ModelParameters(1)
        clf = PredicateClassifier(p, "pred", 3, 4, 2)
        clf.b1.data[...] = 0.1
        f = np.random.default_rng(2).standard_normal((3, 3))
        out = clf(Tensor(f), [2, 0], [1, 2]).data
        W1 = np.vstack([clf.w_sub.data, clf.w_obj.data])
        for k, (s, o) in enumerate([(2, 1), (0, 2)]):
            hid = np.maximum(np.concatenate([f[s], f[o]]) @ W1 + 0.1, 0)
            assert np.allclose(out[k], hid @ clf.w2.data + clf.b2.data[0], atol=1e-12)
