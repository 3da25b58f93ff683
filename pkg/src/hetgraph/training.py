"""Seeded SGD training with best-on-validation model selection."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .config import RunConfig
from .evaluation import evaluate
from .losses import (LossBreakdown, cross_entropy_loss, margin_ranking_loss,  # noqa: F401 (re-export)
                     sample_key_secondary_pairs)
from .model import HetModel
from .nn import autograd as ag
from .nn.params import read_checkpoint, save_checkpoint, sgd_step
from .scene import SceneRecord

log = logging.getLogger(__name__)


@dataclass
class TrainResult:
    model: HetModel
    losses: list = field(default_factory=list)        # total loss per step
    evaluations: list = field(default_factory=list)   # {"step", "score", "metrics"}
    best_step: int = 0
    best_score: Optional[float] = None
    checkpoint: Optional[Path] = None


def selection_score(metrics: dict, cfg: RunConfig) -> float:
    """Mean triplet R@K, plus mean kR@K when the ranker is on."""
    m = metrics["triplet"]
    r = [m[f"R@{k}"] for k in cfg.k_list if m[f"R@{k}"] is not None]
    score = float(np.mean(r)) if r else 0.0
    if cfg.rrm:
        kr = [m[f"kR@{k}"] for k in cfg.kr_list if m[f"kR@{k}"] is not None]
        score += float(np.mean(kr)) if kr else 0.0
    return score


def check_training_data(scenes: Sequence[SceneRecord], cfg: RunConfig) -> None:
    if not scenes:
        raise ValueError("training needs at least one scene")
    if cfg.rrm and not any(r.is_key for s in scenes for r in s.relations):
        raise ValueError("the ranker needs key-flagged relations in the training data")


def train_loop(train: Sequence[SceneRecord], cfg: RunConfig, num_classes: int, num_predicates: int,
               validation: Sequence[SceneRecord] = (), checkpoint: Optional[str] = None,
               on_event: Optional[Callable[[dict], None]] = None) -> TrainResult:
    """Plain SGD over shuffled batches; keeps the parameters that score best on ``validation``.

    Validation runs at step 0, every ``eval_every`` steps and after the last
    step. Without validation scenes the final parameters are kept.
    """
    check_training_data(train, cfg)
    model = HetModel(cfg, num_classes, num_predicates)
    prepared = [model.prepare(s) for s in train]
    val_prepared = [model.prepare(s) for s in validation]
    result = TrainResult(model)
    best_state = model.params.state()
    emit = on_event or (lambda ev: None)

    def validate(step):
        nonlocal best_state
        if not val_prepared:
            return
        report = evaluate(model, validation, cfg.protocol, cfg.pairs, cfg.k_list, cfg.kr_list,
                          cfg.graph_constraint, prepared=val_prepared)
        score = selection_score(report["metrics"], cfg)
        result.evaluations.append({"step": step, "score": score, "metrics": report["metrics"]})
        emit({"event": "validation", "step": step, "score": score})
        if result.best_score is None or score > result.best_score:
            result.best_score, result.best_step = score, step
            best_state = model.params.state()

    validate(0)
    rng = np.random.default_rng([cfg.seed, 3])
    order = rng.permutation(len(prepared))
    cursor = 0
    for step in range(1, cfg.steps + 1):
        if cursor + cfg.batch > len(order):
            order, cursor = rng.permutation(len(prepared)), 0
        idx = order[cursor:cursor + cfg.batch]
        cursor += cfg.batch
        model.params.zero_grad()
        loss, parts = model.loss([prepared[i] for i in idx], step)
        ag.backward(loss)
        sgd_step(model.params, model.params.grads(), cfg.lr)
        result.losses.append(parts.total)
        if not np.isfinite(parts.total):
            raise FloatingPointError(f"loss diverged at step {step}")
        if cfg.eval_every and step % cfg.eval_every == 0:
            emit({"event": "loss", "step": step, **parts.to_dict()})
            if step != cfg.steps:
                validate(step)
    if cfg.steps:
        validate(cfg.steps)
    if val_prepared:
        model.params.load_state(best_state)
    else:
        result.best_step = cfg.steps
    if checkpoint is not None:
        result.checkpoint = save_model(model, checkpoint, best_step=result.best_step)
    return result


def save_model(model: HetModel, path, **info) -> Path:
    extra = {"config": model.cfg.to_dict(), "numClasses": model.num_classes,
             "numPredicates": model.num_predicates, **info}
    return save_checkpoint(model.params, path, extra)


def load_model(path) -> HetModel:
    state, manifest = read_checkpoint(path)
    extra = manifest.get("extra") or {}
    if "config" not in extra:
        raise ValueError(f"{path}: checkpoint carries no model config")
    cfg = RunConfig.from_dict(extra["config"])
    model = HetModel(cfg, extra["numClasses"], extra["numPredicates"])
    model.params.load_state(state)
    return model
