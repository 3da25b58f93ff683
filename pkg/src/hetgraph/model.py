"""The full relation model: HET context encoders, decoders, predicate classifier and ranker.

Scenes are first turned into :class:`PreparedScene` (tree, node inputs, the
attention-weighted feature grid and a cache of pair features). Batches of
prepared scenes are encoded together as one forest.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .config import RunConfig
from .context import EntityDecoder, HybridEncoder, PredicateClassifier, build_forest, node_inputs
from .het import ROOT_ID, HetTree, Strategy, build_het
from .losses import LossBreakdown, hinge_rows, nll_rows, sample_key_secondary_pairs
from .maps import embed_attention, pooled_attention_mask, roi_pool, synthesize_feature_grid
from .nn import autograd as ag
from .nn.autograd import Tensor
from .nn.params import ModelParameters
from .rrm import RelationRanker, build_sequence, geometric_feature
from .scene import BoundingBox, SceneRecord

PREDCLS, SGCLS, SGGEN = "predcls", "sgcls", "sggen"


def grid_templates(num_classes: int, channels: int, seed: int) -> np.ndarray:
    """Non-negative per-class grid templates (row 0 background); channel 0 is constant 1."""
    t = np.random.default_rng([seed, 29]).uniform(0.0, 1.0, size=(num_classes + 1, channels))
    t[:, 0] = 1.0
    return t


@dataclass
class PreparedScene:
    scene: SceneRecord
    tree: HetTree
    protocol: str
    order: list              # entity ids in BFS order, root first
    visual: np.ndarray       # (n, visual_dim)
    q: np.ndarray            # (n, C) class distribution fed to the encoder
    onehot: np.ndarray       # (n, C) ground-truth one-hot (zeros where unknown)
    labels: np.ndarray       # (n,) ground-truth label, -1 for the root / unknown
    grid: np.ndarray         # attention-weighted feature grid
    bins: tuple
    pair_cache: dict = field(default_factory=dict)

    @property
    def row(self) -> dict:
        return {e: k for k, e in enumerate(self.order)}

    def pair_features(self, pairs: Sequence[tuple[int, int]]):
        """RoI features over the union box and geometric features for ``(subj, obj)`` id pairs."""
        vis, geo = [], []
        hw = (self.scene.height, self.scene.width)
        for a, b in pairs:
            hit = self.pair_cache.get((a, b))
            if hit is None:
                ba, bb = self.scene.entity(a).box, self.scene.entity(b).box
                hit = (roi_pool(self.grid, ba.union_cover(bb), self.bins, hw), geometric_feature(ba, bb))
                self.pair_cache[(a, b)] = hit
            vis.append(hit[0])
            geo.append(hit[1])
        width = self.grid.shape[0] * self.bins[0] * self.bins[1]
        if not pairs:
            return np.zeros((0, width)), np.zeros((0, 6))
        return np.stack(vis), np.stack(geo)


def prepare_scene(scene: SceneRecord, cfg: RunConfig, num_classes: int,
                  protocol: Optional[str] = None, tree: Optional[HetTree] = None) -> PreparedScene:
    protocol = protocol or cfg.protocol
    tree = tree or build_het(scene, cfg.threshold, Strategy.parse(cfg.strategy))
    order = tree.bfs_order()
    n = len(order)
    visual = np.zeros((n, cfg.visual_dim))
    q = np.zeros((n, num_classes))
    onehot = np.zeros((n, num_classes))
    labels = np.full(n, -1, dtype=np.int64)
    if scene.image_feature is not None:
        if scene.image_feature.size != cfg.visual_dim:
            raise ValueError(f"image {scene.image_id}: image feature width != visual_dim")
        visual[0] = scene.image_feature
    for k, eid in enumerate(order[1:], start=1):
        e = scene.entity(eid)
        if e.visual_feature.size != cfg.visual_dim:
            raise ValueError(f"image {scene.image_id}: entity {eid} feature width "
                             f"{e.visual_feature.size} != visual_dim {cfg.visual_dim}")
        if e.class_probs.size != num_classes:
            raise ValueError(f"image {scene.image_id}: entity {eid} class vector has wrong size")
        visual[k] = e.visual_feature
        if e.label is not None:
            labels[k] = e.label
            onehot[k, e.label] = 1.0
        if protocol == PREDCLS:
            if e.label is None:
                raise ValueError(f"image {scene.image_id}: predcls needs ground-truth labels")
            q[k] = onehot[k]
        else:
            q[k] = e.class_probs
    g = cfg.feature_grid
    templates = grid_templates(num_classes, cfg.feature_channels, cfg.feature_seed)
    feat = synthesize_feature_grid(scene, cfg.feature_channels, (g, g), templates, cfg.feature_noise,
                                   seed=[cfg.feature_seed, zlib.crc32(scene.image_id.encode("utf-8"))])
    if cfg.attention == "none":
        grid = feat
    else:
        mask = pooled_attention_mask(scene, (g, g), use_saliency=cfg.attention in ("both", "saliency"),
                                     use_area=cfg.attention in ("both", "area"))
        grid = embed_attention(feat, mask, np.zeros_like(mask))
    return PreparedScene(scene, tree, protocol, order, visual, q, onehot, labels, grid,
                         tuple(cfg.roi_bins))


@dataclass(frozen=True)
class RankedRelation:
    subject_id: int
    object_id: int
    predicate: int
    s_i: float
    s_j: float
    s_ij: float
    t: float
    phi: float
    score: float  # the ranking key: phi with the ranker, s_i * s_j * s_ij without


@dataclass
class PredictionSet:
    image_id: str
    relations: list
    labels: dict
    boxes: dict
    entity_scores: dict

    def top(self, k: int) -> list:
        return self.relations[:k]


def candidate_pairs_ep(entity_ids: Sequence[int]) -> list[tuple[int, int]]:
    """Every ordered pair of distinct entities (the virtual root excluded)."""
    ids = sorted(i for i in entity_ids if i != ROOT_ID)
    return [(a, b) for a in ids for b in ids if a != b]


def candidate_pairs_sp(tree: HetTree) -> list[tuple[int, int]]:
    """Both orders of every non-root parent/child edge and of every sibling pair."""
    out = set()
    for node in tree.nodes.values():
        kids = node.children
        if node.entity_id != ROOT_ID:
            for c in kids:
                out.add((node.entity_id, c))
                out.add((c, node.entity_id))
        for a in kids:
            for b in kids:
                if a != b:
                    out.add((a, b))
    return sorted(out)


class HetModel:
    """Hybrid-LSTM entity/relation model with an optional relation ranker."""

    def __init__(self, cfg: RunConfig, num_classes: int, num_predicates: int):
        self.cfg = cfg
        self.num_classes = num_classes
        self.num_predicates = num_predicates  # including background
        p = self.params = ModelParameters(cfg.seed)
        h = cfg.hidden
        self.word_embed = p.weight("embed.W_e1", num_classes, cfg.embedding)
        self.root_embed = p.weight("embed.root", 1, cfg.embedding)
        self.obj_encoder = HybridEncoder(p, "obj_ctx", cfg.visual_dim + cfg.embedding, h)
        self.rel_encoder = HybridEncoder(p, "rel_ctx", 4 * h, h)
        self.decoder = EntityDecoder(p, "decoder", 4 * h, num_classes, cfg.embedding, h)
        self.predicate = PredicateClassifier(p, "predicate", 4 * h, cfg.mlp_hidden, num_predicates)
        self.ranker = None
        if cfg.rrm:
            vdim = cfg.feature_channels * cfg.roi_bins[0] * cfg.roi_bins[1]
            self.ranker = RelationRanker(p, "rrm", vdim, cfg.geo_dim, cfg.rrm_hidden, cfg.rrm_fc)

    def prepare(self, scene: SceneRecord, protocol: Optional[str] = None,
                tree: Optional[HetTree] = None) -> PreparedScene:
        return prepare_scene(scene, self.cfg, self.num_classes, protocol, tree)

    # -- shared forward ------------------------------------------------------

    def _encode(self, batch: Sequence[PreparedScene]):
        forest = build_forest([p.tree for p in batch])
        visual = np.concatenate([p.visual for p in batch])
        q = np.concatenate([p.q for p in batch])
        x = node_inputs(visual, q, forest.is_root, self.word_embed, self.root_embed)
        f_obj = self.obj_encoder(x, forest)
        f_rel = self.rel_encoder(f_obj, forest)
        parent_q = None
        if batch[0].protocol == PREDCLS:
            onehot = np.concatenate([p.onehot for p in batch])
            parent_q = onehot[np.maximum(forest.parent, 0)]
        logits, probs, boxes = self.decoder(f_obj, forest, parent_q)
        if batch[0].protocol == PREDCLS:
            s_ent = Tensor(np.ones((forest.size, 1)))
            pred_labels = np.concatenate([p.labels for p in batch])
        else:
            pred_labels = probs.data.argmax(axis=1)
            s_ent = ag.gather_flat(probs, (np.arange(forest.size) * self.num_classes + pred_labels)[:, None])
        return forest, f_rel, logits, boxes, s_ent, pred_labels

    # -- training objective --------------------------------------------------

    def loss(self, batch: Sequence[PreparedScene], step: int = 0):
        """Batch objective (mean of per-scene losses) and its breakdown."""
        cfg = self.cfg
        nb = len(batch)
        forest, f_rel, logits, boxes, s_ent, _ = self._encode(batch)

        ent_rows, ent_tgt, ent_w = [], [], []
        subj, obj, pred_tgt, pair_w = [], [], [], []
        gt_spans = []  # per scene: (first pair row, unique GT pairs, key flags)
        z1 = z2 = 0
        for s, p in enumerate(batch):
            base = forest.offsets[s]
            n_ent = len(p.order) - 1
            if n_ent == 0:
                raise ValueError(f"image {p.scene.image_id}: no entities")
            ent_rows.extend(range(base + 1, base + 1 + n_ent))
            ent_tgt.extend(p.labels[1:])
            ent_w.extend([1.0 / (n_ent * nb)] * n_ent)
            z1 += n_ent
            row = forest.rows[s]
            rels = p.scene.relations
            first = len(subj)
            uniq, keys = [], {}
            for r in rels:
                subj.append(row[r.subject_id])
                obj.append(row[r.object_id])
                pred_tgt.append(r.predicate)
                pr = (r.subject_id, r.object_id)
                if pr not in keys:
                    keys[pr] = False
                    uniq.append((pr, len(subj) - 1))
                keys[pr] = keys[pr] or r.is_key
            gt_pairs = set(keys)
            pool = [pr for pr in candidate_pairs_ep(p.order) if pr not in gt_pairs]
            rng = np.random.default_rng([cfg.seed, step, s])
            n_neg = min(len(pool), cfg.neg_ratio * len(rels))
            for k in np.sort(rng.choice(len(pool), size=n_neg, replace=False)) if n_neg else ():
                a, b = pool[k]
                subj.append(row[a])
                obj.append(row[b])
                pred_tgt.append(0)
            z = len(subj) - first
            pair_w.extend([1.0 / (max(z, 1) * nb)] * z)
            z2 += z
            gt_spans.append((uniq, keys))

        ent_nll = nll_rows(ag.take_rows(logits, ent_rows), ent_tgt)
        entity_term = ag.weighted_sum(ent_nll, np.array(ent_w)[:, None])
        total = entity_term
        rel_term = None
        if subj:
            pair_logits = self.predicate(f_rel, subj, obj)
            rel_term = ag.weighted_sum(nll_rows(pair_logits, pred_tgt), np.array(pair_w)[:, None])
            total = ag.add(total, rel_term)
        if cfg.box_loss_weight > 0:
            # the boxes fed in are the targets, so the regression target is a zero offset
            sq = ag.mul(ag.take_rows(boxes, ent_rows), ag.take_rows(boxes, ent_rows))
            w = np.repeat(np.array(ent_w)[:, None], 4, axis=1) * cfg.box_loss_weight
            total = ag.add(total, ag.weighted_sum(sq, w))

        rank_term, z3 = None, 0
        if self.ranker is not None and subj:
            rank_term, z3 = self._ranking_term(batch, forest, s_ent, pair_logits, gt_spans, step)
            if rank_term is not None:
                total = ag.add(total, rank_term)
        val = lambda t: 0.0 if t is None else float(t.data.item())
        return total, LossBreakdown(val(entity_term), val(rel_term), val(rank_term),
                                    float(total.data.item()), z1, z2, z3)

    def _ranking_term(self, batch, forest, s_ent, pair_logits, gt_spans, step):
        cfg = self.cfg
        nb = len(batch)
        probs = ag.softmax(pair_logits)
        npred = self.num_predicates
        rows, sub_rows, obj_rows, seqs, vis, geo = [], [], [], [], [], []
        hinge_pairs, hinge_w = [], []
        z3 = 0
        for s, (p, (uniq, keys)) in enumerate(zip(batch, gt_spans)):
            if not uniq:
                continue
            row = forest.rows[s]
            start = len(rows)
            pairs = [pr for pr, _ in uniq]
            cand = []
            for pr, r in uniq:
                rows.append(r)
                sub_rows.append(row[pr[0]])
                obj_rows.append(row[pr[1]])
            v, g = p.pair_features(pairs)
            vis.append(v)
            geo.append(g)
            pd = probs.data[[r for _, r in uniq]]
            for k, pr in enumerate(pairs):
                sc = (s_ent.data[row[pr[0]], 0] * s_ent.data[row[pr[1]], 0] * pd[k, 1:].max())
                cand.append((pr[0], pr[1], sc))
            seqs.append([start + k for k in build_sequence(cand)])
            key = [start + k for k, pr in enumerate(pairs) if keys[pr]]
            sec = [start + k for k, pr in enumerate(pairs) if not keys[pr]]
            sampled = sample_key_secondary_pairs(key, sec, cfg.sample_pairs, seed=[cfg.seed, step, s, 1])
            if sampled:
                hinge_pairs.extend(sampled)
                hinge_w.extend([1.0 / (len(sampled) * nb)] * len(sampled))
                z3 += len(sampled)
        if not hinge_pairs:
            return None, 0
        best = probs.data[rows, 1:].argmax(axis=1) + 1
        s_ij = ag.gather_flat(probs, (np.asarray(rows) * npred + best)[:, None])
        t = self.ranker(Tensor(np.concatenate(vis)), np.concatenate(geo), seqs)
        phi = ag.mul(ag.mul(ag.take_rows(s_ent, sub_rows), ag.take_rows(s_ent, obj_rows)),
                     ag.mul(s_ij, t))
        hinge = hinge_rows(phi, hinge_pairs, cfg.gamma)
        return ag.weighted_sum(hinge, np.array(hinge_w)[:, None]), z3

    # -- inference -----------------------------------------------------------

    def predict(self, batch: Sequence[PreparedScene], pair_source: str = "ep",
                graph_constraint: bool = True) -> list[PredictionSet]:
        with ag.no_grad():
            forest, f_rel, logits, _, s_ent, labels = self._encode(batch)
            per_scene, subj, obj = [], [], []
            for s, p in enumerate(batch):
                pairs = (candidate_pairs_ep(p.order) if pair_source == "ep"
                         else candidate_pairs_sp(p.tree))
                row = forest.rows[s]
                per_scene.append((len(subj), pairs))
                subj.extend(row[a] for a, _ in pairs)
                obj.extend(row[b] for _, b in pairs)
            probs = (ag.softmax(self.predicate(f_rel, subj, obj)).data if subj
                     else np.zeros((0, self.num_predicates)))
            s_vals = s_ent.data[:, 0]
            # per pair: candidate predicates with their s_ij
            choices = []
            for k in range(len(subj)):
                fg = probs[k, 1:]
                if graph_constraint:
                    b = int(fg.argmax())
                    choices.append([(b + 1, float(fg[b]))])
                else:
                    choices.append([(c + 1, float(fg[c])) for c in range(fg.size)])
            t_vals = np.ones(len(subj))
            if self.ranker is not None and subj:
                seqs, vis, geo = [], [], []
                for s, (start, pairs) in enumerate(per_scene):
                    cand = [(a, b, s_vals[subj[start + k]] * s_vals[obj[start + k]]
                             * max(c[1] for c in choices[start + k]))
                            for k, (a, b) in enumerate(pairs)]
                    seqs.append([start + k for k in build_sequence(cand)])
                    v, g = batch[s].pair_features(pairs)
                    vis.append(v)
                    geo.append(g)
                t_vals = self.ranker(Tensor(np.concatenate(vis)), np.concatenate(geo), seqs).data[:, 0]
            out = []
            for s, (start, pairs) in enumerate(per_scene):
                p = batch[s]
                base = forest.offsets[s]
                ranked = []
                for k, (a, b) in enumerate(pairs):
                    si, sj = float(s_vals[subj[start + k]]), float(s_vals[obj[start + k]])
                    t = float(t_vals[start + k])
                    for pred, sij in choices[start + k]:
                        prod = si * sj * sij
                        phi = prod * t
                        key = phi if self.ranker is not None else prod
                        ranked.append(RankedRelation(a, b, pred, si, sj, sij, t, phi, key))
                ranked.sort(key=lambda r: (-r.score, r.subject_id, r.object_id, r.predicate))
                ids = p.order[1:]
                out.append(PredictionSet(
                    image_id=p.scene.image_id,
                    relations=ranked,
                    labels={e: int(labels[base + k + 1]) for k, e in enumerate(ids)},
                    boxes={e: p.scene.entity(e).box for e in ids},
                    entity_scores={e: float(s_vals[base + k + 1]) for k, e in enumerate(ids)},
                ))
            return out
