"""Geometry and scene primitives shared by the rest of the package."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np


class SceneError(ValueError):
    """Raised when a scene, box or relation violates its invariants."""


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box in continuous corner coordinates (x1, y1, x2, y2)."""

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        if not all(np.isfinite([self.x1, self.y1, self.x2, self.y2])):
            raise SceneError(f"non-finite box {self.as_tuple()}")
        if not (self.x2 > self.x1 and self.y2 > self.y1):
            raise SceneError(f"degenerate box {self.as_tuple()}")

    @classmethod
    def from_seq(cls, seq: Sequence[float]) -> "BoundingBox":
        if len(seq) != 4:
            raise SceneError(f"box needs 4 coordinates, got {len(seq)}")
        return cls(*(float(v) for v in seq))

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x1, self.y1, self.x2, self.y2)

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def center(self) -> tuple[float, float]:
        return ((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)

    def union_cover(self, other: "BoundingBox") -> "BoundingBox":
        """Tightest box covering both boxes."""
        return BoundingBox(min(self.x1, other.x1), min(self.y1, other.y1),
                           max(self.x2, other.x2), max(self.y2, other.y2))


def area(box: BoundingBox) -> float:
    return (box.x2 - box.x1) * (box.y2 - box.y1)


def intersection_area(a: BoundingBox, b: BoundingBox) -> float:
    w = min(a.x2, b.x2) - max(a.x1, b.x1)
    h = min(a.y2, b.y2) - max(a.y1, b.y1)
    if w <= 0 or h <= 0:
        return 0.0
    return w * h


def iou(a: BoundingBox, b: BoundingBox) -> float:
    inter = intersection_area(a, b)
    if inter == 0.0:
        return 0.0
    return inter / (area(a) + area(b) - inter)


def _frozen(arr) -> np.ndarray:
    out = np.array(arr, dtype=np.float64)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class Entity:
    """A detected (or annotated) object.

    ``class_probs`` is the detector softmax over the object vocabulary and
    ``visual_feature`` its appearance vector. ``label`` holds the ground-truth
    class index when known.
    """

    id: int
    box: BoundingBox
    class_probs: np.ndarray
    visual_feature: np.ndarray
    label: Optional[int] = None
    synset: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "class_probs", _frozen(self.class_probs))
        object.__setattr__(self, "visual_feature", _frozen(self.visual_feature))
        q = self.class_probs
        if q.ndim != 1 or np.any(q < 0) or abs(q.sum() - 1.0) > 1e-6:
            raise SceneError(f"entity {self.id}: class_probs is not a distribution")
        if self.visual_feature.ndim != 1:
            raise SceneError(f"entity {self.id}: visual_feature must be a vector")

    @property
    def area(self) -> float:
        return area(self.box)

    def __eq__(self, other):
        if not isinstance(other, Entity):
            return NotImplemented
        return (self.id == other.id and self.box == other.box
                and self.label == other.label and self.synset == other.synset
                and np.array_equal(self.class_probs, other.class_probs)
                and np.array_equal(self.visual_feature, other.visual_feature))

    __hash__ = None


@dataclass(frozen=True)
class RelationTriplet:
    subject_id: int
    object_id: int
    predicate: int
    is_key: bool = False
    # times referred across captions; only used by the cognitive-saliency analysis
    cognitive_saliency: Optional[float] = None

    def __post_init__(self):
        if self.subject_id == self.object_id:
            raise SceneError(f"relation on a single entity {self.subject_id}")
        if self.predicate < 0:
            raise SceneError(f"negative predicate index {self.predicate}")


@dataclass(frozen=True)
class SceneRecord:
    image_id: str
    width: float
    height: float
    entities: tuple[Entity, ...]
    relations: tuple[RelationTriplet, ...] = ()
    saliency_path: Optional[str] = None
    saliency: Optional[np.ndarray] = field(default=None, compare=False)
    image_feature: Optional[np.ndarray] = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "entities", tuple(self.entities))
        object.__setattr__(self, "relations", tuple(self.relations))
        if self.width <= 0 or self.height <= 0:
            raise SceneError(f"image {self.image_id}: non-positive size")
        ids = [e.id for e in self.entities]
        if len(set(ids)) != len(ids):
            raise SceneError(f"image {self.image_id}: duplicate entity ids")
        if any(i <= 0 for i in ids):
            raise SceneError(f"image {self.image_id}: entity ids must be >= 1 (0 is the root)")
        for e in self.entities:
            b = e.box
            if b.x1 < 0 or b.y1 < 0 or b.x2 > self.width or b.y2 > self.height:
                raise SceneError(f"image {self.image_id}: entity {e.id} box outside image")
        known = set(ids)
        for r in self.relations:
            if r.subject_id not in known or r.object_id not in known:
                raise SceneError(
                    f"image {self.image_id}: relation {r.subject_id}->{r.object_id} "
                    "references a missing entity")
        if self.saliency is not None:
            sal = np.asarray(self.saliency, dtype=np.float64)
            if sal.ndim != 2 or np.any(sal < 0) or np.any(sal > 1):
                raise SceneError(f"image {self.image_id}: saliency must be a 2-D grid in [0,1]")
            sal.setflags(write=False)
            object.__setattr__(self, "saliency", sal)
        if self.image_feature is not None:
            object.__setattr__(self, "image_feature", _frozen(self.image_feature))

    @property
    def image_box(self) -> BoundingBox:
        return BoundingBox(0.0, 0.0, float(self.width), float(self.height))

    @property
    def image_area(self) -> float:
        return float(self.width) * float(self.height)

    def entity(self, entity_id: int) -> Entity:
        for e in self.entities:
            if e.id == entity_id:
                return e
        raise KeyError(entity_id)

    def with_relations(self, relations) -> "SceneRecord":
        return replace(self, relations=tuple(relations))
