"""Seeded synthetic scenes with a known containment hierarchy.

A *world* (fixed by ``world_seed``) assigns object classes to nesting tiers,
draws predicate tables for parent->child and sibling pairs, and the visual
class templates. Each scene then nests boxes strictly inside their parents
with margins, so every child is fully contained (P = 1) in its ancestors and
disjoint from everything else; an IFS tree at any T < 1 recovers the
construction tree exactly.

Relations: every parent->child edge plus each consecutive pair of siblings
(larger -> smaller). Relations between the two largest entities are key.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import Dataset, Vocabulary
from .scene import BoundingBox, Entity, RelationTriplet, SceneRecord


class SynthError(ValueError):
    pass


@dataclass(frozen=True)
class SynthConfig:
    num_classes: int = 8
    num_predicates: int = 5
    min_entities: int = 5
    max_entities: int = 10
    depth: int = 3
    top_level: tuple = (2, 3)
    max_children: int = 3
    width: int = 64
    height: int = 64
    feature_dim: int = 32
    feature_noise: float = 0.3
    label_noise: float = 0.5
    world_seed: int = 11

    def validate(self) -> "SynthConfig":
        if self.depth < 1:
            raise SynthError("nesting depth must be at least 1")
        if self.num_classes < self.depth:
            raise SynthError("need at least one class per nesting tier")
        if self.num_predicates < 1:
            raise SynthError("need at least one predicate")
        lo, hi = self.top_level
        if not 1 <= lo <= hi:
            raise SynthError("top_level must be an increasing pair of positive counts")
        if self.min_entities < lo or self.max_entities < self.min_entities:
            raise SynthError("entity range cannot hold the top-level boxes")
        if self.depth == 1 and self.min_entities > hi:
            raise SynthError("depth 1 cannot reach min_entities with the top-level range")
        # a child side is at most half its parent; below ~4 px boxes stop nesting cleanly
        if min(self.width, self.height) / (hi * 2 ** (self.depth - 1)) < 4:
            raise SynthError("image too small for the requested nesting depth")
        return self


@dataclass(frozen=True)
class World:
    config: SynthConfig
    tiers: tuple            # tier -> tuple of class indices
    parent_child: np.ndarray  # (C, C) predicate for parent -> child
    sibling: np.ndarray       # (C, C) predicate for larger -> smaller sibling
    templates: np.ndarray     # (C, feature_dim)

    @property
    def vocab(self) -> Vocabulary:
        c = self.config
        return Vocabulary(tuple(f"cls{k}" for k in range(c.num_classes)),
                          ("__background__",) + tuple(f"pred{k}" for k in range(1, c.num_predicates + 1)),
                          tuple(f"cls{k}.n.01" for k in range(c.num_classes)))


def make_world(config: SynthConfig) -> World:
    config.validate()
    rng = np.random.default_rng([config.world_seed, 1])
    tiers = tuple(tuple(int(k) for k in t)
                  for t in np.array_split(np.arange(config.num_classes), config.depth))
    c, p = config.num_classes, config.num_predicates
    pc = rng.integers(1, p + 1, size=(c, c))
    sib = rng.integers(1, p + 1, size=(c, c))
    templates = rng.standard_normal((c, config.feature_dim))
    return World(config, tiers, pc, sib, templates)


def _split_box(box: BoundingBox, k: int, vertical: bool, rng, shrink=(0.3, 0.5)):
    """``k`` disjoint boxes inside ``box``, one per strip, each well inside its strip."""
    out = []
    for s in range(k):
        if vertical:
            lo = box.x1 + (box.x2 - box.x1) * s / k
            hi = box.x1 + (box.x2 - box.x1) * (s + 1) / k
            strip = (lo, box.y1, hi, box.y2)
        else:
            lo = box.y1 + (box.y2 - box.y1) * s / k
            hi = box.y1 + (box.y2 - box.y1) * (s + 1) / k
            strip = (box.x1, lo, box.x2, hi)
        sw, sh = strip[2] - strip[0], strip[3] - strip[1]
        fw = rng.uniform(*shrink) if not vertical else rng.uniform(0.55, 0.85)
        fh = rng.uniform(*shrink) if vertical else rng.uniform(0.55, 0.85)
        # keep children at most half the parent's side in both directions
        w = min(fw * sw, 0.5 * (box.x2 - box.x1))
        h = min(fh * sh, 0.5 * (box.y2 - box.y1))
        x = strip[0] + rng.uniform(0.1, 0.9) * (sw - w)
        y = strip[1] + rng.uniform(0.1, 0.9) * (sh - h)
        out.append(BoundingBox(round(x, 3), round(y, 3), round(x + w, 3), round(y + h, 3)))
    return out


def _saliency(boxes: list[BoundingBox], width: int, height: int) -> np.ndarray:
    """Max over entities of ``sqrt(area / max area)`` times a distance-from-border ramp."""
    ys = np.arange(height)[:, None] + 0.5
    xs = np.arange(width)[None, :] + 0.5
    grid = np.zeros((height, width))
    top = max(b.width * b.height for b in boxes)
    for b in boxes:
        half = 0.5 * min(b.width, b.height)
        d = np.minimum(np.minimum(xs - b.x1, b.x2 - xs), np.minimum(ys - b.y1, b.y2 - ys))
        ramp = np.clip(d / half, 0.0, 1.0)
        grid = np.maximum(grid, math.sqrt(b.width * b.height / top) * ramp)
    return grid


def generate_scene(world: World, seed: int, image_id: str | None = None) -> SceneRecord:
    cfg = world.config
    rng = np.random.default_rng([cfg.world_seed, 2, seed])
    budget = int(rng.integers(cfg.min_entities, cfg.max_entities + 1))
    n_top = int(rng.integers(cfg.top_level[0], min(cfg.top_level[1], budget) + 1))

    # top-level boxes: one per vertical slot, side fraction in [0.6, 0.95] of the slot
    slot_w = cfg.width / n_top
    boxes, parents, levels = [], [], []
    for s in range(n_top):
        w = slot_w * rng.uniform(0.6, 0.95)
        h = cfg.height * rng.uniform(0.6, 0.95)
        x = s * slot_w + rng.uniform(0.1, 0.9) * (slot_w - w)
        y = rng.uniform(0.1, 0.9) * (cfg.height - h)
        boxes.append(BoundingBox(round(x, 3), round(y, 3), round(x + w, 3), round(y + h, 3)))
        parents.append(-1)
        levels.append(0)

    # grow children breadth-first until the budget is spent
    frontier = list(range(n_top))
    rng.shuffle(frontier)
    while len(boxes) < budget and frontier:
        nxt = []
        for k in frontier:
            if len(boxes) >= budget or levels[k] + 1 >= cfg.depth:
                continue
            n_kids = int(rng.integers(1, cfg.max_children + 1))
            n_kids = min(n_kids, budget - len(boxes))
            parent_box = boxes[k]
            vertical = parent_box.width >= parent_box.height
            for b in _split_box(parent_box, n_kids, vertical, rng):
                boxes.append(b)
                parents.append(k)
                levels.append(levels[k] + 1)
                nxt.append(len(boxes) - 1)
        rng.shuffle(nxt)
        frontier = nxt
    if len(boxes) < cfg.min_entities and cfg.depth > 1:
        raise SynthError("could not place the requested number of entities")

    labels = [int(rng.choice(world.tiers[lv])) for lv in levels]
    entities = []
    for k, (b, lab) in enumerate(zip(boxes, labels)):
        logits = 2.5 * np.eye(cfg.num_classes)[lab] + cfg.label_noise * rng.standard_normal(cfg.num_classes)
        probs = np.exp(logits - logits.max())
        feat = world.templates[lab] + cfg.feature_noise * rng.standard_normal(cfg.feature_dim)
        entities.append(Entity(id=k + 1, box=b, class_probs=probs / probs.sum(), visual_feature=feat,
                               label=lab, synset=f"cls{lab}.n.01"))

    area = [b.width * b.height for b in boxes]
    by_size = sorted(range(len(boxes)), key=lambda k: (-area[k], k))
    key_ids = {by_size[0] + 1, by_size[1] + 1} if len(boxes) > 1 else set()
    top_area = area[by_size[0]]

    pairs = []
    for k, p in enumerate(parents):
        if p >= 0:
            pairs.append((p, k, int(world.parent_child[labels[p], labels[k]])))
    groups: dict = {}
    for k, p in enumerate(parents):
        groups.setdefault(p, []).append(k)
    for members in groups.values():
        members.sort(key=lambda k: (-area[k], k))
        for a, b in zip(members, members[1:]):
            pairs.append((a, b, int(world.sibling[labels[a], labels[b]])))
    relations = []
    for a, b, pred in sorted(pairs):
        key = {a + 1, b + 1} == key_ids
        # desk stand-in for caption mention counts: keys always mentioned, others by size
        weight = math.sqrt(math.sqrt(area[a] * area[b]) / top_area)
        cs = 5 if key else int(rng.binomial(5, min(1.0, 0.8 * weight)))
        relations.append(RelationTriplet(a + 1, b + 1, pred, is_key=key, cognitive_saliency=cs))

    return SceneRecord(image_id=image_id or f"synth-{seed}", width=float(cfg.width),
                       height=float(cfg.height), entities=tuple(entities), relations=tuple(relations),
                       saliency=_saliency(boxes, cfg.width, cfg.height))


def construction_parents(scene: SceneRecord) -> dict:
    """Smallest strictly-containing entity per entity (0 for top-level), from the boxes."""
    out = {}
    for e in scene.entities:
        holders = [m for m in scene.entities if m.id != e.id and m.area > e.area
                   and m.box.x1 <= e.box.x1 and m.box.y1 <= e.box.y1
                   and m.box.x2 >= e.box.x2 and m.box.y2 >= e.box.y2]
        out[e.id] = min(holders, key=lambda m: (m.area, m.id)).id if holders else 0
    return out


def generate_dataset(config: SynthConfig, count: int, seed: int = 0, prefix: str = "synth") -> Dataset:
    world = make_world(config)
    scenes = [generate_scene(world, seed * 1_000_003 + k, f"{prefix}-{seed}-{k}") for k in range(count)]
    return Dataset(scenes, world.vocab)
