"""Named parameter store, seeded initialisation, SGD and checkpoint I/O."""

from __future__ import annotations

import json
import os
import zlib
from collections import OrderedDict
from pathlib import Path
from typing import Mapping

import numpy as np

from .autograd import Tensor

MANIFEST_SUFFIX = ".json"
BLOB_SUFFIX = ".bin"


class ModelParameters:
    """Ordered ``name -> Tensor`` map whose initial values depend only on the seed.

    Each tensor draws from its own generator keyed by ``(seed, crc32(name))``,
    so adding a parameter never shifts the values of the others.
    """

    def __init__(self, seed: int = 0):
        self.seed = int(seed)
        self.tensors: "OrderedDict[str, Tensor]" = OrderedDict()

    def _rng(self, name: str) -> np.random.Generator:
        return np.random.default_rng([self.seed, zlib.crc32(name.encode("utf-8"))])

    def _register(self, name: str, value: np.ndarray) -> Tensor:
        if name in self.tensors:
            raise KeyError(f"duplicate parameter name {name!r}")
        t = Tensor(value, requires_grad=True)
        self.tensors[name] = t
        return t

    def weight(self, name: str, fan_in: int, fan_out: int, bound_fan_in: int | None = None) -> Tensor:
        """``(fan_in, fan_out)`` matrix, uniform in ``+-1/sqrt(bound_fan_in or fan_in)``."""
        bound = 1.0 / np.sqrt(bound_fan_in or fan_in)
        return self._register(name, self._rng(name).uniform(-bound, bound, size=(fan_in, fan_out)))

    def bias(self, name: str, size: int) -> Tensor:
        return self._register(name, np.zeros((1, size)))

    def vector(self, name: str, size: int, bound: float = 1.0) -> Tensor:
        return self._register(name, self._rng(name).uniform(-bound, bound, size=(1, size)))

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self.tensors

    def __iter__(self):
        return iter(self.tensors)

    def __len__(self):
        return len(self.tensors)

    def items(self):
        return self.tensors.items()

    def zero_grad(self):
        for t in self.tensors.values():
            t.grad = None

    def grads(self) -> dict:
        return {n: (t.grad if t.grad is not None else np.zeros_like(t.data))
                for n, t in self.tensors.items()}

    def fill_(self, value: float) -> "ModelParameters":
        for t in self.tensors.values():
            t.data[...] = value
        return self

    def state(self) -> dict:
        return {n: t.data.copy() for n, t in self.tensors.items()}

    def load_state(self, state: Mapping[str, np.ndarray]) -> None:
        missing = set(self.tensors) - set(state)
        if missing:
            raise KeyError(f"state lacks parameters: {sorted(missing)}")
        for n, t in self.tensors.items():
            arr = np.asarray(state[n], dtype=t.data.dtype)
            if arr.shape != t.data.shape:
                raise ValueError(f"{n}: shape {arr.shape} != {t.data.shape}")
            t.data[...] = arr

    def num_scalars(self) -> int:
        return sum(t.data.size for t in self.tensors.values())


def sgd_step(params: ModelParameters, grads: Mapping[str, np.ndarray], lr: float) -> ModelParameters:
    """In-place ``p <- p - lr * g`` for every parameter."""
    missing = [n for n in params if n not in grads]
    if missing:
        raise KeyError(f"no gradient for {missing}")
    for n, t in params.items():
        t.data -= lr * np.asarray(grads[n], dtype=t.data.dtype)
    return params


def save_checkpoint(params: ModelParameters, path: str | os.PathLike, extra: dict | None = None) -> Path:
    """Write ``<path>.json`` (name, shape, byte offset) and ``<path>.bin`` (float32 LE)."""
    base = Path(path)
    if base.suffix in (MANIFEST_SUFFIX, BLOB_SUFFIX):
        base = base.with_suffix("")
    base.parent.mkdir(parents=True, exist_ok=True)
    entries, offset, chunks = [], 0, []
    for name, t in params.items():
        raw = np.ascontiguousarray(t.data, dtype="<f4").tobytes()
        entries.append({"name": name, "shape": list(t.data.shape), "offset": offset})
        chunks.append(raw)
        offset += len(raw)
    manifest = {"format": "float32-le", "seed": params.seed, "blob": base.name + BLOB_SUFFIX,
                "tensors": entries}
    if extra:
        manifest["extra"] = extra
    with open(base.with_suffix(BLOB_SUFFIX), "wb") as fh:
        fh.write(b"".join(chunks))
    with open(base.with_suffix(MANIFEST_SUFFIX), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
    return base


def read_checkpoint(path: str | os.PathLike) -> tuple[dict, dict]:
    """Return ``(state, manifest)``; arrays come back as float64."""
    base = Path(path)
    if base.suffix in (MANIFEST_SUFFIX, BLOB_SUFFIX):
        base = base.with_suffix("")
    with open(base.with_suffix(MANIFEST_SUFFIX), encoding="utf-8") as fh:
        manifest = json.load(fh)
    blob = (base.parent / manifest["blob"]).read_bytes()
    state = {}
    for e in manifest["tensors"]:
        count = int(np.prod(e["shape"])) if e["shape"] else 1
        arr = np.frombuffer(blob, dtype="<f4", count=count, offset=e["offset"])
        state[e["name"]] = arr.astype(np.float64).reshape(e["shape"])
    return state, manifest
