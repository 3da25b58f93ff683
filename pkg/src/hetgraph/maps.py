"""Saliency/area maps, adaptive average pooling, attention embedding and RoI pooling.

Scalar grids are 2-D ``(H, W)`` float arrays; feature grids are channel-major
``(C, H, W)`` arrays. Pixel ``(x, y)`` is considered inside a box when its
center ``(x + 0.5, y + 0.5)`` lies in ``[x1, x2) x [y1, y2)``.
"""

from __future__ import annotations

import math
import os
from typing import Sequence

import numpy as np

from .scene import BoundingBox, SceneRecord, area


class GridError(ValueError):
    pass


def grid_shape(scene: SceneRecord) -> tuple[int, int]:
    return int(math.ceil(scene.height)), int(math.ceil(scene.width))


def covered_span(lo: float, hi: float, n: int) -> tuple[int, int]:
    """Index range ``[a, b)`` of cells whose centers fall in ``[lo, hi)``."""
    a = max(0, math.ceil(lo - 0.5))
    b = min(n, math.ceil(hi - 0.5))
    return a, max(a, b)


def compute_area_map(scene: SceneRecord) -> np.ndarray:
    h, w = grid_shape(scene)
    image_area = scene.image_area
    amap = np.full((h, w), np.inf)
    for e in scene.entities:
        r0, r1 = covered_span(e.box.y1, e.box.y2, h)
        c0, c1 = covered_span(e.box.x1, e.box.x2, w)
        if r1 > r0 and c1 > c0:
            region = amap[r0:r1, c0:c1]
            np.minimum(region, area(e.box) / image_area, out=region)
    amap[np.isinf(amap)] = 0.0
    return amap


def adaptive_avg_pool(grid: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim != 2:
        raise GridError("adaptive_avg_pool expects a 2-D grid")
    h, w = grid.shape
    if not (1 <= out_h <= h and 1 <= out_w <= w):
        raise GridError(f"cannot pool {h}x{w} to {out_h}x{out_w}")
    out = np.empty((out_h, out_w))
    for i in range(out_h):
        r0, r1 = (i * h) // out_h, -((-(i + 1) * h) // out_h)
        for j in range(out_w):
            c0, c1 = (j * w) // out_w, -((-(j + 1) * w) // out_w)
            out[i, j] = grid[r0:r1, c0:c1].mean()
    return out


def embed_attention(features: np.ndarray, saliency: np.ndarray, area_map: np.ndarray) -> np.ndarray:
    """Scale every channel of ``features`` by the pooled ``saliency + area_map`` mask."""
    features = np.asarray(features, dtype=np.float64)
    mask = np.asarray(saliency, dtype=np.float64) + np.asarray(area_map, dtype=np.float64)
    if features.ndim != 3 or mask.shape != features.shape[1:]:
        raise GridError(f"mask {mask.shape} does not match feature grid {features.shape}")
    return features * mask[None, :, :]


def roi_bins(box: BoundingBox, grid_hw: tuple[int, int], image_hw: tuple[float, float],
             bins: tuple[int, int]) -> list[tuple[int, int, int, int]]:
    """Row/column spans ``(r0, r1, c0, c1)`` of every pooling bin, bin-row major."""
    gh, gw = grid_hw
    ih, iw = image_hw
    sy, sx = gh / ih, gw / iw
    y0, y1 = math.floor(box.y1 * sy), math.ceil(box.y2 * sy)
    x0, x1 = math.floor(box.x1 * sx), math.ceil(box.x2 * sx)
    if y0 < 0 or x0 < 0 or y1 > gh or x1 > gw:
        raise GridError(f"box {box.as_tuple()} falls outside the feature grid")
    bh, bw = bins
    rh, rw = y1 - y0, x1 - x0
    spans = []
    for i in range(bh):
        r0, r1 = y0 + (i * rh) // bh, y0 + -((-(i + 1) * rh) // bh)
        for j in range(bw):
            c0, c1 = x0 + (j * rw) // bw, x0 + -((-(j + 1) * rw) // bw)
            spans.append((r0, r1, c0, c1))
    return spans


def roi_argmax(features: np.ndarray, box: BoundingBox, bins: tuple[int, int],
               image_hw: tuple[float, float]) -> np.ndarray:
    """Flat indices into ``features`` of each bin maximum (-1 for empty bins).

    Output is ordered channel-major: ``index[c * bh * bw + bin]``.
    """
    c, gh, gw = features.shape
    spans = roi_bins(box, (gh, gw), image_hw, bins)
    idx = np.full((c, len(spans)), -1, dtype=np.int64)
    for k, (r0, r1, c0, c1) in enumerate(spans):
        if r1 <= r0 or c1 <= c0:
            continue
        block = features[:, r0:r1, c0:c1].reshape(c, -1)
        best = block.argmax(axis=1)
        rows = r0 + best // (c1 - c0)
        cols = c0 + best % (c1 - c0)
        idx[:, k] = np.arange(c) * gh * gw + rows * gw + cols
    return idx.reshape(-1)


def roi_pool(features: np.ndarray, box: BoundingBox, bins: tuple[int, int] = (2, 2),
             image_hw: tuple[float, float] | None = None) -> np.ndarray:
    """Max-pool ``box`` into ``bins`` cells per channel, flattened channel-major.

    ``image_hw`` is the image size the box lives in; it defaults to the grid
    size (box already in grid coordinates).
    """
    features = np.asarray(features, dtype=np.float64)
    if image_hw is None:
        image_hw = features.shape[1:]
    idx = roi_argmax(features, box, bins, image_hw)
    flat = features.reshape(-1)
    return np.where(idx >= 0, flat[np.maximum(idx, 0)], 0.0)


def synthesize_feature_grid(scene: SceneRecord, channels: int, grid_hw: tuple[int, int],
                            templates: np.ndarray, noise: float, seed: int) -> np.ndarray:
    """Stand-in for a backbone feature map.

    Each cell carries the template of the smallest entity covering its center
    (row 0 of ``templates`` is background, row ``k + 1`` class ``k``) plus
    seeded Gaussian noise.
    """
    gh, gw = grid_hw
    if templates.shape[1] != channels:
        raise GridError("template width does not match channel count")
    owner_area = np.full((gh, gw), np.inf)
    owner = np.zeros((gh, gw), dtype=np.int64)
    sy, sx = gh / scene.height, gw / scene.width
    for e in sorted(scene.entities, key=lambda e: (-e.area, e.id)):
        label = e.label if e.label is not None else int(np.argmax(e.class_probs))
        r0, r1 = covered_span(e.box.y1 * sy, e.box.y2 * sy, gh)
        c0, c1 = covered_span(e.box.x1 * sx, e.box.x2 * sx, gw)
        sub = owner_area[r0:r1, c0:c1]
        take = e.area <= sub
        owner[r0:r1, c0:c1][take] = label + 1
        sub[take] = e.area
    rng = np.random.default_rng(seed)
    grid = templates[owner].transpose(2, 0, 1)
    return grid + noise * rng.standard_normal((channels, gh, gw))


def read_saliency(path: str | os.PathLike) -> np.ndarray:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise GridError(f"{path}: first line must be 'H W'")
        h, w = int(header[0]), int(header[1])
        rows = [line.split() for line in fh if line.strip()]
    if len(rows) != h or any(len(r) != w for r in rows):
        raise GridError(f"{path}: expected {h} rows of {w} values")
    grid = np.array([[float(v) for v in r] for r in rows])
    if np.any(grid < 0) or np.any(grid > 1):
        raise GridError(f"{path}: saliency values must lie in [0, 1]")
    return grid


def write_saliency(path: str | os.PathLike, grid: np.ndarray) -> None:
    grid = np.asarray(grid, dtype=np.float64)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{grid.shape[0]} {grid.shape[1]}\n")
        for row in grid:
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")


def pooled_attention_mask(scene: SceneRecord, grid_hw: Sequence[int],
                          use_saliency: bool = True, use_area: bool = True) -> np.ndarray:
    """``AAP(S) + AAP(A)`` at feature-grid resolution (missing saliency counts as 0)."""
    gh, gw = grid_hw
    mask = np.zeros((gh, gw))
    if use_area:
        mask += adaptive_avg_pool(compute_area_map(scene), gh, gw)
    if use_saliency and scene.saliency is not None:
        mask += adaptive_avg_pool(scene.saliency, gh, gw)
    return mask
