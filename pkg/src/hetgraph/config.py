"""Run configuration: every tunable, its default, and the flat ``key = value`` file format.

Config files hold one ``key = value`` per line; ``#`` starts a comment. Lists
are comma-separated, booleans accept true/false/yes/no/1/0. Unknown keys are
rejected. Example::

    # desk-scale run
    hidden = 32
    lr = 0.05
    k_list = 20, 50, 100
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, fields
from typing import Any

PROTOCOLS = ("predcls", "sgcls", "sggen")
ATTENTION_MODES = ("both", "saliency", "area", "none")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # HET construction
    threshold: float = 0.9
    strategy: str = "ifs"
    # model widths (paper scale)
    visual_dim: int = 4096
    embedding: int = 200
    hidden: int = 512
    mlp_hidden: int = 512
    rrm_hidden: int = 512
    rrm_fc: int = 256
    geo_dim: int = 256
    feature_channels: int = 512
    feature_grid: int = 32
    roi_bins: tuple = (7, 7)
    # relation ranking
    rrm: bool = True
    attention: str = "both"
    gamma: float = 0.5
    sample_pairs: int = 512
    # optimisation
    lr: float = 0.001
    batch: int = 10
    steps: int = 1000
    neg_ratio: int = 4
    box_loss_weight: float = 0.0
    eval_every: int = 0
    # evaluation
    protocol: str = "predcls"
    pairs: str = "ep"
    graph_constraint: bool = True
    k_list: tuple = (20, 50, 100)
    kr_list: tuple = (1, 5)
    # randomness / stubs
    seed: int = 0
    feature_seed: int = 7
    feature_noise: float = 0.1
    threads: int = 1

    def __post_init__(self):
        self.validate()

    def validate(self) -> "RunConfig":
        if not 0.0 < self.threshold <= 1.0:
            raise ConfigError("threshold must lie in (0, 1]")
        if self.strategy not in ("ifs", "afs"):
            raise ConfigError("strategy must be ifs or afs")
        if self.protocol not in PROTOCOLS:
            raise ConfigError(f"protocol must be one of {PROTOCOLS}")
        if self.pairs not in ("ep", "sp"):
            raise ConfigError("pairs must be ep or sp")
        if self.attention not in ATTENTION_MODES:
            raise ConfigError(f"attention must be one of {ATTENTION_MODES}")
        for name in ("visual_dim", "embedding", "hidden", "mlp_hidden", "rrm_hidden", "rrm_fc",
                     "geo_dim", "feature_channels", "feature_grid", "batch", "threads"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.steps < 0 or self.sample_pairs < 0 or self.neg_ratio < 0 or self.eval_every < 0:
            raise ConfigError("steps, sample_pairs, neg_ratio and eval_every must be non-negative")
        if self.lr < 0 or self.gamma < 0:
            raise ConfigError("lr and gamma must be non-negative")
        if len(self.roi_bins) != 2 or min(self.roi_bins) < 1:
            raise ConfigError("roi_bins needs two positive integers")
        if any(k < 0 for k in self.k_list) or any(k < 0 for k in self.kr_list):
            raise ConfigError("K values must be non-negative")
        return self

    @classmethod
    def desk(cls, **overrides) -> "RunConfig":
        """Small widths suitable for CPU runs on synthetic scenes."""
        base = dict(visual_dim=32, embedding=16, hidden=32, mlp_hidden=64, rrm_hidden=32,
                    rrm_fc=32, geo_dim=16, feature_channels=16, feature_grid=16, roi_bins=(2, 2),
                    lr=0.3, steps=2000, eval_every=100)
        base.update(overrides)
        return cls(**base)

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        for k, v in out.items():
            if isinstance(v, tuple):
                out[k] = list(v)
        return out

    @classmethod
    def from_dict(cls, values: dict, base: "RunConfig | None" = None) -> "RunConfig":
        known = {f.name: f for f in fields(cls)}
        unknown = sorted(set(values) - set(known))
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        current = dataclasses.asdict(base) if base is not None else {}
        for k, v in values.items():
            current[k] = _coerce(k, v, known[k].default)
        return cls(**current)


def _coerce(key: str, value: Any, default: Any):
    try:
        if isinstance(default, bool):
            if isinstance(value, bool):
                return value
            text = str(value).strip().lower()
            if text in ("1", "true", "yes", "on"):
                return True
            if text in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
        if isinstance(default, tuple):
            items = value if isinstance(value, (list, tuple)) else str(value).replace(" ", "").split(",")
            return tuple(int(v) for v in items if str(v) != "")
        if isinstance(default, int):
            return int(value)
        if isinstance(default, float):
            return float(value)
        return str(value).strip().lower()
    except ValueError:
        raise ConfigError(f"bad value for {key}: {value!r}") from None


def load_config(path, base: RunConfig | None = None) -> RunConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",), interpolation=None)
    parser.optionxform = str
    with open(path, encoding="utf-8") as fh:
        parser.read_string("[run]\n" + fh.read())
    return RunConfig.from_dict(dict(parser["run"]), base=base)


def dump_config(cfg: RunConfig) -> str:
    lines = []
    for k, v in cfg.to_dict().items():
        if isinstance(v, list):
            v = ", ".join(str(x) for x in v)
        elif isinstance(v, bool):
            v = "true" if v else "false"
        lines.append(f"{k} = {v}")
    return "\n".join(lines) + "\n"
