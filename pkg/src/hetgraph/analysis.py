"""Diagnostics: depth statistics of ranked relations and saliency/size indicators.

The indicators compare how salient and how large a relation's subject and
object are with how often people mention that relation (its cognitive
saliency, supplied per relation in the dataset).
"""

from __future__ import annotations

import csv
import enum
from collections import Counter, defaultdict
from typing import Iterable, Optional, Sequence

import numpy as np

from .het import HetTree, depth_of
from .maps import covered_span
from .model import PredictionSet
from .scene import BoundingBox, SceneRecord, area


class Indicator(str, enum.Enum):
    PHI = "phi"
    PHI_PRIME = "phi_prime"


# -- depth ---------------------------------------------------------------------

def depth_tuple(tree: HetTree, subject_id: int, object_id: int) -> tuple[int, int]:
    a, b = depth_of(tree, subject_id), depth_of(tree, object_id)
    return (min(a, b), max(a, b))


def depth_counts(prediction: PredictionSet, tree: HetTree, top_n: int = 5) -> Counter:
    return Counter(depth_tuple(tree, r.subject_id, r.object_id) for r in prediction.top(top_n))


def depth_distribution(predictions, trees, top_n: int = 5) -> dict:
    """Share of each (shallower, deeper) depth tuple among the top-``top_n`` relations.

    Accepts one prediction set and tree, or parallel sequences of them.
    """
    if isinstance(predictions, PredictionSet):
        predictions, trees = [predictions], [trees]
    total = Counter()
    for p, t in zip(predictions, trees):
        total.update(depth_counts(p, t, top_n))
    n = sum(total.values())
    return {k: v / n for k, v in sorted(total.items())} if n else {}


def confidence_by_depth(predictions: Sequence[PredictionSet], trees: Sequence[HetTree],
                        samples_per_depth: int = 200, repeats: int = 5, seed: int = 0) -> dict:
    """Mean and spread of phi per relation depth ``max(d_subject, d_object)``.

    Each repeat draws up to ``samples_per_depth`` predicted relations per
    depth without replacement and averages their phi; the report gives the
    mean and standard deviation of those averages across repeats.
    """
    buckets = defaultdict(list)
    for p, t in zip(predictions, trees):
        for r in p.relations:
            buckets[depth_tuple(t, r.subject_id, r.object_id)[1]].append(r.phi)
    rng = np.random.default_rng(seed)
    out = {}
    for d in sorted(buckets):
        vals = np.asarray(buckets[d])
        means = []
        for _ in range(repeats):
            take = rng.choice(vals.size, size=min(samples_per_depth, vals.size), replace=False)
            means.append(vals[take].mean())
        out[d] = {"mean": float(np.mean(means)), "sd": float(np.std(means)), "count": int(vals.size)}
    return out


# -- saliency / size indicators -------------------------------------------------

def saliency_fraction(box: BoundingBox, grid: np.ndarray, threshold: float,
                      image_hw: Optional[tuple] = None) -> float:
    """Fraction of grid cells inside ``box`` (by cell center) whose value exceeds ``threshold``.

    ``image_hw`` rescales the box when the grid is not at image resolution.
    """
    grid = np.asarray(grid, dtype=np.float64)
    h, w = grid.shape
    sy, sx = (1.0, 1.0) if image_hw is None else (h / image_hw[0], w / image_hw[1])
    r0, r1 = covered_span(box.y1 * sy, box.y2 * sy, h)
    c0, c1 = covered_span(box.x1 * sx, box.x2 * sx, w)
    if r1 <= r0 or c1 <= c0:
        raise ValueError(f"box {box.as_tuple()} covers no grid cell center")
    return float((grid[r0:r1, c0:c1] > threshold).mean())


def cs_indicator(sub_box: BoundingBox, obj_box: BoundingBox, grid: np.ndarray, threshold: float,
                 variant=Indicator.PHI, image_area: Optional[float] = None,
                 image_hw: Optional[tuple] = None) -> float:
    """Saliency fractions of subject and object, plus their normalised areas for ``PHI_PRIME``."""
    variant = Indicator(variant)
    value = (saliency_fraction(sub_box, grid, threshold, image_hw)
             + saliency_fraction(obj_box, grid, threshold, image_hw))
    if variant is Indicator.PHI_PRIME:
        if image_area is None:
            raise ValueError("PHI_PRIME needs the image area")
        value += area(sub_box) / image_area + area(obj_box) / image_area
    return value


def cs_samples(scenes: Iterable[SceneRecord], threshold: float = 0.5,
               variant=Indicator.PHI_PRIME) -> list[tuple[float, float]]:
    """``(indicator, cognitive saliency)`` for every relation that carries a saliency count."""
    out = []
    for s in scenes:
        if s.saliency is None:
            continue
        hw = (s.height, s.width)
        for r in s.relations:
            if r.cognitive_saliency is None:
                continue
            out.append((cs_indicator(s.entity(r.subject_id).box, s.entity(r.object_id).box, s.saliency,
                                     threshold, variant, s.image_area, hw),
                        float(r.cognitive_saliency)))
    return out


def bin_curve(samples: Sequence[tuple[float, float]], bins: int = 50,
              mode: str = "equal-count") -> list[tuple[float, float]]:
    """Sort by indicator, cut into ``bins`` intervals, emit (mean indicator, mean CS) per interval.

    ``equal-count`` intervals hold (nearly) the same number of samples;
    ``equal-width`` intervals split the indicator range evenly and skip empty ones.
    """
    if bins < 1:
        raise ValueError("bins must be positive")
    if len(samples) < bins:
        raise ValueError(f"need at least {bins} samples, got {len(samples)}")
    arr = np.asarray(sorted(samples, key=lambda s: (s[0], s[1])), dtype=np.float64)
    if mode == "equal-count":
        groups = np.array_split(arr, bins)
    elif mode == "equal-width":
        lo, hi = arr[0, 0], arr[-1, 0]
        edges = np.linspace(lo, hi, bins + 1)
        which = np.clip(np.searchsorted(edges, arr[:, 0], side="right") - 1, 0, bins - 1)
        groups = [arr[which == b] for b in range(bins)]
    else:
        raise ValueError(f"unknown binning mode {mode!r}")
    return [(float(g[:, 0].mean()), float(g[:, 1].mean())) for g in groups if len(g)]


def write_curve_csv(points: Sequence[tuple[float, float]], path, header=("indicator", "cs")) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in points:
            w.writerow([repr(float(v)) for v in row])
