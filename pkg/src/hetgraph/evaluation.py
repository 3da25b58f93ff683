"""Protocol runners and recall metrics.

Matching walks the ranked predictions top-down; each prediction claims the
first still-unmatched ground-truth relation it agrees with, so a ground-truth
relation is counted at most once. Scenes without ground truth (or without
key relations, for kR@K) are skipped, and dataset numbers average over the
remaining scenes.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np

from .het import HetTree
from .model import (PREDCLS, SGCLS, SGGEN, PredictionSet, candidate_pairs_ep, candidate_pairs_sp)
from .scene import BoundingBox, SceneRecord, iou

PROPOSAL_IOU = 0.5

__all__ = ["MatchRule", "GroundTruth", "ground_truth", "recall_at_k", "key_recall_at_k",
           "candidate_pairs_ep", "candidate_pairs_sp", "run_protocol", "evaluate", "write_report"]


class MatchRule(str, enum.Enum):
    TRIPLET = "triplet"
    TUPLE = "tuple"


@dataclass(frozen=True)
class GroundTruth:
    relations: tuple   # (subject_id, object_id, predicate, is_key)
    labels: dict
    boxes: dict


def ground_truth(scene: SceneRecord) -> GroundTruth:
    return GroundTruth(tuple((r.subject_id, r.object_id, r.predicate, r.is_key) for r in scene.relations),
                       {e.id: e.label for e in scene.entities},
                       {e.id: e.box for e in scene.entities})


def _entity_match(pred: PredictionSet, pid: int, gt: GroundTruth, gid: int,
                  iou_threshold: Optional[float]) -> bool:
    if pred.labels.get(pid) != gt.labels.get(gid):
        return False
    if iou_threshold is None:
        return pid == gid
    return iou(pred.boxes[pid], gt.boxes[gid]) >= iou_threshold


def matched_count(pred: PredictionSet, gt_relations: Sequence[tuple], gt: GroundTruth, k: int,
                  rule: MatchRule = MatchRule.TRIPLET, iou_threshold: Optional[float] = None) -> int:
    rule = MatchRule(rule)
    used = [False] * len(gt_relations)
    hits = 0
    for r in pred.relations[:max(k, 0)]:
        for g, (gs, go, gp, _) in enumerate(gt_relations):
            if used[g]:
                continue
            if rule is MatchRule.TRIPLET and r.predicate != gp:
                continue
            if (_entity_match(pred, r.subject_id, gt, gs, iou_threshold)
                    and _entity_match(pred, r.object_id, gt, go, iou_threshold)):
                used[g] = True
                hits += 1
                break
    return hits


def recall_at_k(pred: PredictionSet, gt: GroundTruth, k: int, rule=MatchRule.TRIPLET,
                iou_threshold: Optional[float] = None) -> Optional[float]:
    """Fraction of ground-truth relations recovered in the top ``k``; ``None`` without ground truth."""
    if not gt.relations:
        return None
    return matched_count(pred, gt.relations, gt, k, rule, iou_threshold) / len(gt.relations)


def key_recall_at_k(pred: PredictionSet, gt: GroundTruth, k: int, rule=MatchRule.TRIPLET,
                    iou_threshold: Optional[float] = None) -> Optional[float]:
    """Recall over key relations only; ``None`` when the scene has none."""
    keys = [r for r in gt.relations if r[3]]
    if not keys:
        return None
    return matched_count(pred, keys, gt, k, rule, iou_threshold) / len(keys)


def _input_scene(scene: SceneRecord, protocol: str, proposals: Optional[Mapping]) -> SceneRecord:
    if protocol != SGGEN:
        return scene
    if proposals is None or scene.image_id not in proposals:
        raise ValueError(f"sggen needs proposals for image {scene.image_id}")
    return proposals[scene.image_id]


def run_protocol(model, scene: SceneRecord, protocol: str = PREDCLS, pair_source: str = "ep",
                 proposals: Optional[Mapping] = None, graph_constraint: bool = True,
                 tree: Optional[HetTree] = None) -> PredictionSet:
    """Ranked predictions for one scene under a protocol and candidate-pair source."""
    if protocol not in (PREDCLS, SGCLS, SGGEN):
        raise ValueError(f"unknown protocol {protocol!r}")
    if pair_source not in ("ep", "sp"):
        raise ValueError(f"unknown pair source {pair_source!r}")
    prepared = model.prepare(_input_scene(scene, protocol, proposals), protocol, tree)
    return model.predict([prepared], pair_source, graph_constraint)[0]


def predict_scenes(model, scenes: Sequence[SceneRecord], protocol: str = PREDCLS, pair_source: str = "ep",
                   proposals: Optional[Mapping] = None, graph_constraint: bool = True,
                   batch_size: int = 25, prepared: Optional[Sequence] = None) -> list[PredictionSet]:
    if prepared is None:
        prepared = [model.prepare(_input_scene(s, protocol, proposals), protocol) for s in scenes]
    out = []
    for i in range(0, len(prepared), batch_size):
        out.extend(model.predict(prepared[i:i + batch_size], pair_source, graph_constraint))
    return out


def _mean(values) -> Optional[float]:
    vals = [v for v in values if v is not None]
    return float(np.mean(vals)) if vals else None


def score_predictions(predictions: Sequence[PredictionSet], scenes: Sequence[SceneRecord],
                      k_list=(20, 50, 100), kr_list=(1, 5), protocol: str = PREDCLS,
                      rules=(MatchRule.TRIPLET, MatchRule.TUPLE)) -> dict:
    """Per-scene and image-averaged R@K / kR@K for each match rule."""
    thr = PROPOSAL_IOU if protocol == SGGEN else None
    per_scene = []
    for pred, scene in zip(predictions, scenes):
        gt = ground_truth(scene)
        row = {"imageId": scene.image_id, "numCandidates": len(pred.relations)}
        for rule in rules:
            rule = MatchRule(rule)
            for k in k_list:
                row[f"{rule.value}.R@{k}"] = recall_at_k(pred, gt, k, rule, thr)
            for k in kr_list:
                row[f"{rule.value}.kR@{k}"] = key_recall_at_k(pred, gt, k, rule, thr)
        per_scene.append(row)
    metrics = {}
    for rule in rules:
        rule = MatchRule(rule)
        metrics[rule.value] = {}
        for name in [f"R@{k}" for k in k_list] + [f"kR@{k}" for k in kr_list]:
            key = f"{rule.value}.{name}"
            metrics[rule.value][name] = _mean(r[key] for r in per_scene)
    return {"metrics": metrics, "scenes": per_scene}


def evaluate(model, scenes: Sequence[SceneRecord], protocol: str = PREDCLS, pair_source: str = "ep",
             k_list=(20, 50, 100), kr_list=(1, 5), graph_constraint: bool = True,
             proposals: Optional[Mapping] = None, prepared: Optional[Sequence] = None) -> dict:
    preds = predict_scenes(model, scenes, protocol, pair_source, proposals, graph_constraint,
                           prepared=prepared)
    report = score_predictions(preds, scenes, k_list, kr_list, protocol)
    report.update({"protocol": protocol, "pairs": pair_source, "graphConstraint": graph_constraint,
                   "numScenes": len(scenes),
                   "meanCandidates": _mean(len(p.relations) for p in preds)})
    return report


def write_report(report: dict, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=1, sort_keys=True)
        fh.write("\n")
