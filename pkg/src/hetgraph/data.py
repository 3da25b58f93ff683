"""Dataset files, vocabulary filtering, key-relation tagging, splits and the frequency baseline.

Dataset file (JSON)::

    {"vocab": {"objects": [...], "predicates": ["__background__", ...], "synsets": [...]},
     "images": [{"id", "width", "height", "saliency"?, "imageFeature"?,
                 "entities": [{"id", "box": [x1, y1, x2, y2], "label", "synset"?,
                               "feature"?, "classProbs"?}],
                 "relations": [{"sub", "obj", "predicate", "key"?, "cs"?}]}]}

Labels and predicates may be given as names or indices. Entities without a
``feature`` get a seeded class-template stand-in; without ``classProbs`` they
get the one-hot of their label. Caption triplets are JSON lines of
``{"imageId", "subjectSynset", "objectSynset", "predicateLemma"}``.
"""

from __future__ import annotations

import json
import os
import zlib
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .maps import read_saliency
from .scene import BoundingBox, Entity, RelationTriplet, SceneError, SceneRecord

BACKGROUND = "__background__"
DEFAULT_FEATURE_DIM = 32


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class Vocabulary:
    objects: tuple[str, ...]
    predicates: tuple[str, ...]
    synsets: tuple[Optional[str], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "objects", tuple(self.objects))
        preds = tuple(self.predicates)
        if not preds or preds[0] != BACKGROUND:
            preds = (BACKGROUND,) + tuple(p for p in preds if p != BACKGROUND)
        object.__setattr__(self, "predicates", preds)
        syn = tuple(self.synsets) if self.synsets else (None,) * len(self.objects)
        object.__setattr__(self, "synsets", syn)
        if len(set(self.objects)) != len(self.objects):
            raise DatasetError("duplicate object class names")
        if len(set(self.predicates)) != len(self.predicates):
            raise DatasetError("duplicate predicate names")
        if len(self.synsets) != len(self.objects):
            raise DatasetError("synsets must align with object classes")

    @property
    def num_classes(self) -> int:
        return len(self.objects)

    @property
    def num_predicates(self) -> int:
        """Including the background slot at index 0."""
        return len(self.predicates)

    def to_json(self) -> dict:
        out = {"objects": list(self.objects), "predicates": list(self.predicates)}
        if any(s is not None for s in self.synsets):
            out["synsets"] = list(self.synsets)
        return out


@dataclass(frozen=True)
class CaptionTriplet:
    image_id: str
    subject_synset: str
    object_synset: str
    predicate_lemma: str = ""


@dataclass
class Dataset:
    scenes: list
    vocab: Vocabulary
    root: Optional[Path] = field(default=None, compare=False)


# -- stand-in features ---------------------------------------------------------

def class_templates(num_rows: int, dim: int, seed: int) -> np.ndarray:
    return np.random.default_rng([seed, 17]).standard_normal((num_rows, dim))


def stub_feature(label: int, dim: int, seed: int, key: str, noise: float = 0.3) -> np.ndarray:
    """Class template plus noise keyed on ``key`` (deterministic)."""
    template = class_templates(label + 1, dim, seed)[label]
    rng = np.random.default_rng([seed, zlib.crc32(key.encode("utf-8"))])
    return template + noise * rng.standard_normal(dim)


# -- loading / saving ------------------------------------------------------------

def _index(value, names: Sequence[str], where: str) -> int:
    if isinstance(value, bool):
        raise DatasetError(f"{where}: expected a name or index, got {value!r}")
    if isinstance(value, int):
        if not 0 <= value < len(names):
            raise DatasetError(f"{where}: index {value} out of range")
        return value
    try:
        return names.index(value)
    except ValueError:
        raise DatasetError(f"{where}: unknown name {value!r}") from None


def _require(obj: dict, key: str, where: str):
    if not isinstance(obj, dict) or key not in obj:
        raise DatasetError(f"{where}: missing field {key!r}")
    return obj[key]


def parse_dataset(doc: dict, root: Optional[Path] = None, feature_dim: int = DEFAULT_FEATURE_DIM,
                  feature_seed: int = 7) -> Dataset:
    vocab_doc = _require(doc, "vocab", "$")
    vocab = Vocabulary(tuple(_require(vocab_doc, "objects", "vocab")),
                       tuple(_require(vocab_doc, "predicates", "vocab")),
                       tuple(vocab_doc.get("synsets") or ()))
    images = _require(doc, "images", "$")
    if not isinstance(images, list):
        raise DatasetError("images: expected a list")
    scenes = []
    for i, img in enumerate(images):
        where = f"images[{i}]"
        image_id = str(_require(img, "id", where))
        entities = []
        for j, ent in enumerate(_require(img, "entities", where)):
            ew = f"{where}.entities[{j}]"
            label = ent.get("label")
            label = None if label is None else _index(label, list(vocab.objects), f"{ew}.label")
            probs = ent.get("classProbs")
            if probs is None:
                if label is None:
                    raise DatasetError(f"{ew}: needs a label or classProbs")
                probs = np.eye(vocab.num_classes)[label]
            feat = ent.get("feature")
            if feat is None:
                ref = label if label is not None else int(np.argmax(probs))
                feat = stub_feature(ref, feature_dim, feature_seed, f"{image_id}/{ent.get('id')}")
            try:
                entities.append(Entity(
                    id=int(_require(ent, "id", ew)),
                    box=BoundingBox.from_seq(_require(ent, "box", ew)),
                    class_probs=np.asarray(probs, dtype=np.float64),
                    visual_feature=np.asarray(feat, dtype=np.float64),
                    label=label,
                    synset=ent.get("synset"),
                ))
            except SceneError as exc:
                raise DatasetError(f"{ew}: {exc}") from None
        relations = []
        for j, rel in enumerate(img.get("relations", [])):
            rw = f"{where}.relations[{j}]"
            try:
                relations.append(RelationTriplet(
                    subject_id=int(_require(rel, "sub", rw)),
                    object_id=int(_require(rel, "obj", rw)),
                    predicate=_index(_require(rel, "predicate", rw), list(vocab.predicates),
                                     f"{rw}.predicate"),
                    is_key=bool(rel.get("key", False)),
                    cognitive_saliency=rel.get("cs"),
                ))
            except SceneError as exc:
                raise DatasetError(f"{rw}: {exc}") from None
        sal_path = img.get("saliency")
        saliency = None
        if sal_path is not None:
            full = Path(sal_path) if root is None else root / sal_path
            saliency = read_saliency(full)
        try:
            scenes.append(SceneRecord(
                image_id=image_id,
                width=float(_require(img, "width", where)),
                height=float(_require(img, "height", where)),
                entities=tuple(entities),
                relations=tuple(relations),
                saliency_path=sal_path,
                saliency=saliency,
                image_feature=img.get("imageFeature"),
            ))
        except SceneError as exc:
            raise DatasetError(f"{where}: {exc}") from None
    return Dataset(scenes, vocab, root)


def load_dataset(path: str | os.PathLike, **kwargs) -> Dataset:
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DatasetError(f"{path}: line {exc.lineno}: {exc.msg}") from None
    return parse_dataset(doc, root=path.parent, **kwargs)


def scene_to_json(scene: SceneRecord, vocab: Vocabulary) -> dict:
    img = {"id": scene.image_id, "width": scene.width, "height": scene.height, "entities": [],
           "relations": []}
    if scene.saliency_path is not None:
        img["saliency"] = scene.saliency_path
    if scene.image_feature is not None:
        img["imageFeature"] = scene.image_feature.tolist()
    for e in scene.entities:
        ent = {"id": e.id, "box": list(e.box.as_tuple()),
               "classProbs": e.class_probs.tolist(), "feature": e.visual_feature.tolist()}
        if e.label is not None:
            ent["label"] = vocab.objects[e.label]
        if e.synset is not None:
            ent["synset"] = e.synset
        img["entities"].append(ent)
    for r in scene.relations:
        rel = {"sub": r.subject_id, "obj": r.object_id, "predicate": vocab.predicates[r.predicate],
               "key": r.is_key}
        if r.cognitive_saliency is not None:
            rel["cs"] = r.cognitive_saliency
        img["relations"].append(rel)
    return img


def _relocate(ref: str, old_root: Optional[Path], new_root: Path) -> str:
    """Rewrite a relative file reference so it still resolves from ``new_root``."""
    if old_root is None or Path(ref).is_absolute():
        return ref
    return Path(os.path.relpath(Path(old_root, ref).resolve(), new_root.resolve())).as_posix()


def save_dataset(dataset: Dataset, path: str | os.PathLike) -> None:
    path = Path(path)
    images = []
    for s in dataset.scenes:
        img = scene_to_json(s, dataset.vocab)
        if "saliency" in img:
            img["saliency"] = _relocate(img["saliency"], dataset.root, path.parent)
        images.append(img)
    doc = {"vocab": dataset.vocab.to_json(), "images": images}
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)


def load_caption_triplets(path: str | os.PathLike) -> list[CaptionTriplet]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                out.append(CaptionTriplet(str(rec["imageId"]), rec["subjectSynset"],
                                          rec["objectSynset"], rec.get("predicateLemma", "")))
            except (json.JSONDecodeError, KeyError) as exc:
                raise DatasetError(f"{path}: line {lineno}: {exc}") from None
    return out


def save_caption_triplets(triplets: Iterable[CaptionTriplet], path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for t in triplets:
            fh.write(json.dumps({"imageId": t.image_id, "subjectSynset": t.subject_synset,
                                 "objectSynset": t.object_synset,
                                 "predicateLemma": t.predicate_lemma}) + "\n")


# -- vocabulary filtering --------------------------------------------------------

def _top(counts: Counter, names: Sequence[str], k: int, exclude=()) -> list[int]:
    pool = [i for i in range(len(names)) if counts[i] > 0 and i not in exclude]
    pool.sort(key=lambda i: (-counts[i], names[i]))
    return pool[:k]


def filter_vocabulary(dataset: Dataset, k_obj: int = 150, k_pred: int = 50, extra_obj: int = 50,
                      extra_pred: int = 30,
                      caption_triplets: Sequence[CaptionTriplet] = ()) -> Dataset:
    """Keep the most frequent classes/predicates plus the ones most frequent in captions.

    Frequency ties break by name. Entities and relations outside the kept
    vocabulary are dropped, then images left without relations.
    """
    vocab = dataset.vocab
    obj_count, pred_count = Counter(), Counter()
    for s in dataset.scenes:
        obj_count.update(e.label for e in s.entities if e.label is not None)
        pred_count.update(r.predicate for r in s.relations if r.predicate != 0)
    fg_names = list(vocab.predicates)
    keep_obj = _top(obj_count, vocab.objects, k_obj)
    keep_pred = _top(pred_count, fg_names, k_pred, exclude={0})

    syn_index = {s: i for i, s in enumerate(vocab.synsets) if s is not None}
    cap_obj, cap_pred = Counter(), Counter()
    for t in caption_triplets:
        for syn in (t.subject_synset, t.object_synset):
            if syn in syn_index:
                cap_obj[syn_index[syn]] += 1
        if t.predicate_lemma in fg_names[1:]:
            cap_pred[fg_names.index(t.predicate_lemma)] += 1
    keep_obj += _top(cap_obj, vocab.objects, extra_obj, exclude=set(keep_obj))
    keep_pred += _top(cap_pred, fg_names, extra_pred, exclude=set(keep_pred) | {0})

    obj_old = sorted(keep_obj)
    pred_old = [0] + sorted(keep_pred)
    obj_map = {o: n for n, o in enumerate(obj_old)}
    pred_map = {o: n for n, o in enumerate(pred_old)}
    new_vocab = Vocabulary(tuple(vocab.objects[i] for i in obj_old),
                           tuple(vocab.predicates[i] for i in pred_old),
                           tuple(vocab.synsets[i] for i in obj_old))
    scenes = []
    for s in dataset.scenes:
        ents = []
        for e in s.entities:
            if e.label is None or e.label not in obj_map:
                continue
            probs = e.class_probs[obj_old]
            total = probs.sum()
            probs = probs / total if total > 0 else np.eye(len(obj_old))[obj_map[e.label]]
            ents.append(replace(e, label=obj_map[e.label], class_probs=probs))
        alive = {e.id for e in ents}
        rels = [replace(r, predicate=pred_map[r.predicate]) for r in s.relations
                if r.predicate in pred_map and r.predicate != 0
                and r.subject_id in alive and r.object_id in alive]
        if rels:
            scenes.append(replace(s, entities=tuple(ents), relations=tuple(rels)))
    return Dataset(scenes, new_vocab, dataset.root)


# -- key relations ---------------------------------------------------------------

def _entity_synset(e: Entity, vocab: Optional[Vocabulary]) -> Optional[str]:
    if e.synset is not None:
        return e.synset
    if vocab is not None and e.label is not None:
        return vocab.synsets[e.label]
    return None


def tag_key_relations(scenes: Sequence[SceneRecord], caption_triplets: Sequence[CaptionTriplet],
                      vocab: Optional[Vocabulary] = None, strict: bool = False) -> list[SceneRecord]:
    """Flag relations whose ordered (subject, object) synsets occur in the image's captions.

    ``strict`` additionally requires the caption predicate lemma to equal the
    relation's predicate name (needs ``vocab``). Existing flags are overwritten.
    """
    if strict and vocab is None:
        raise ValueError("strict matching needs the vocabulary")
    by_image: dict[str, set] = {}
    for t in caption_triplets:
        k = (t.subject_synset, t.object_synset, t.predicate_lemma if strict else None)
        by_image.setdefault(t.image_id, set()).add(k)
    out = []
    for s in scenes:
        wanted = by_image.get(s.image_id, set())
        syn = {e.id: _entity_synset(e, vocab) for e in s.entities}
        rels = []
        for r in s.relations:
            a, b = syn[r.subject_id], syn[r.object_id]
            lemma = vocab.predicates[r.predicate] if strict else None
            key = a is not None and b is not None and (a, b, lemma) in wanted
            rels.append(replace(r, is_key=key))
        out.append(s.with_relations(rels))
    return out


def has_key_relation(scene: SceneRecord) -> bool:
    return any(r.is_key for r in scene.relations)


def key_relation_subset(scenes: Sequence[SceneRecord]) -> list[SceneRecord]:
    return [s for s in scenes if has_key_relation(s)]


# -- splits ----------------------------------------------------------------------

def split_dataset(scenes: Sequence, ratio: float = 0.7, seed: int = 0) -> tuple[list, list]:
    if not 0.0 < ratio < 1.0:
        raise ValueError(f"split ratio must lie in (0, 1), got {ratio}")
    order = np.random.default_rng(seed).permutation(len(scenes))
    cut = int(round(ratio * len(scenes)))
    return [scenes[i] for i in order[:cut]], [scenes[i] for i in order[cut:]]


def carve_validation(train: Sequence, limit: int = 5000, fraction: float = 0.1) -> tuple[list, list]:
    """First ``min(limit, fraction * len(train))`` scenes become validation; returns ``(rest, val)``."""
    n = min(limit, int(fraction * len(train)))
    return list(train[n:]), list(train[:n])


# -- frequency baseline ----------------------------------------------------------

class FrequencyRanker:
    """Ranks a scene's ground-truth relations by training frequency of their triplet type."""

    def __init__(self, train: Iterable[SceneRecord]):
        self.table: Counter = Counter()
        for s in train:
            labels = {e.id: e.label for e in s.entities}
            for r in s.relations:
                self.table[(labels[r.subject_id], r.predicate, labels[r.object_id])] += 1

    def frequency(self, subject_label, predicate, object_label) -> int:
        return self.table.get((subject_label, predicate, object_label), 0)

    def __call__(self, scene: SceneRecord) -> list[RelationTriplet]:
        labels = {e.id: e.label for e in scene.entities}
        return sorted(scene.relations,
                      key=lambda r: (-self.frequency(labels[r.subject_id], r.predicate,
                                                     labels[r.object_id]),
                                     r.subject_id, r.object_id, r.predicate))


def frequency_ranker(train: Iterable[SceneRecord]) -> Callable[[SceneRecord], list]:
    return FrequencyRanker(train)
