"""Flat key=value run configuration with dotted sections.

Example:

    search.total_rounds = 20
    search.warmstart_rounds = 2
    model.family = residual-mlp
    model.width = 32
    data.generator = spirals
    data.n = 2000
    out.dir = runs/demo
    seeds = 0,1,2,3,4

Unknown keys are rejected before any compute; '#' starts a comment.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

from .data import gen_blobs, gen_spirals, load_csv, load_idx, split
from .models import ModelSpec
from .search import OptimizerSpec, SearchConfig

__all__ = ["ConfigError", "RunConfig", "parse_config", "load_config"]


class ConfigError(Exception):
    pass


def _parse_bool(v):
    low = v.lower()
    if low in ("true", "1", "yes"):
        return True
    if low in ("false", "0", "no"):
        return False
    raise ValueError(f"expected a boolean, got {v!r}")


def _parse_seeds(v):
    return [int(s) for s in v.split(",") if s.strip() != ""]


def _parse_shape(v):
    parts = [int(p) for p in v.lower().split("x")]
    if len(parts) != 3:
        raise ValueError(f"expected CxHxW, got {v!r}")
    return tuple(parts)


# key -> (parser, default); None default means "no entry unless configured"
_SCHEMA = {
    "search.total_rounds": (int, 20),
    "search.warmstart_rounds": (int, 1),
    "search.split": (float, 0.75),
    "search.batch_size": (int, 32),
    "search.grad_accum": (int, 1),
    "search.anchor_weight": (float, 1e-3),
    "search.anchor_mode": (str, "penalty"),
    "search.clamp": (float, 10.0),
    "search.shrink": (_parse_bool, True),
    "search.inner.kind": (str, "sgd-momentum"),
    "search.inner.lr": (float, 0.05),
    "search.inner.momentum": (float, 0.9),
    "search.inner.weight_decay": (float, 1e-4),
    "search.inner.beta1": (float, 0.9),
    "search.inner.beta2": (float, 0.999),
    "search.outer.kind": (str, "adam"),
    "search.outer.lr": (float, 6e-4),
    "search.outer.beta1": (float, 0.5),
    "search.outer.beta2": (float, 0.999),
    "model.family": (str, "residual-mlp"),
    "model.width": (int, 32),
    "model.depth": (int, 2),
    "model.activation": (str, None),
    "model.standardize": (_parse_bool, False),
    "model.image_shape": (_parse_shape, None),
    "data.generator": (str, "spirals"),
    "data.n": (int, 1000),
    "data.noise": (float, 0.25),
    "data.k": (int, 2),
    "data.spread": (float, 1.0),
    "data.path": (str, None),
    "data.images": (str, None),
    "data.labels": (str, None),
    "data.seed": (int, 0),
    "data.test_fraction": (float, 0.25),
    "retrain.rounds": (int, 40),
    "retrain.batch_size": (int, 32),
    "retrain.grad_accum": (int, 1),
    "retrain.kind": (str, "sgd-momentum"),
    "retrain.lr": (float, 0.05),
    "retrain.momentum": (float, 0.9),
    "retrain.weight_decay": (float, 1e-4),
    "out.dir": (str, "runs/out"),
    "seeds": (_parse_seeds, [0]),
}


@dataclass
class RunConfig:
    values: dict = field(default_factory=dict)
    digest: str = ""

    def __getitem__(self, key):
        return self.values[key]

    def search_config(self, seed):
        v = self.values
        inner = OptimizerSpec(kind=v["search.inner.kind"], lr=v["search.inner.lr"],
                              momentum=v["search.inner.momentum"],
                              weight_decay=v["search.inner.weight_decay"],
                              beta1=v["search.inner.beta1"], beta2=v["search.inner.beta2"])
        outer = OptimizerSpec(kind=v["search.outer.kind"], lr=v["search.outer.lr"],
                              weight_decay=0.0,
                              beta1=v["search.outer.beta1"], beta2=v["search.outer.beta2"])
        return SearchConfig(
            total_rounds=v["search.total_rounds"],
            warmstart_rounds=v["search.warmstart_rounds"],
            split=v["search.split"],
            batch_size=v["search.batch_size"],
            grad_accum=v["search.grad_accum"],
            inner=inner,
            outer=outer,
            anchor_weight=v["search.anchor_weight"],
            anchor_mode=v["search.anchor_mode"],
            clamp=v["search.clamp"],
            shrink=v["search.shrink"],
            seed=seed,
        )

    def retrain_optimizer(self):
        v = self.values
        return OptimizerSpec(kind=v["retrain.kind"], lr=v["retrain.lr"],
                             momentum=v["retrain.momentum"],
                             weight_decay=v["retrain.weight_decay"])

    def model_spec(self, dataset):
        v = self.values
        return ModelSpec(
            family=v["model.family"],
            input_dim=dataset.features.shape[1],
            classes=dataset.classes,
            width=v["model.width"],
            depth=v["model.depth"],
            activation=v["model.activation"],
            image_shape=v["model.image_shape"],
            standardize=v["model.standardize"],
        )

    def build_dataset(self):
        v = self.values
        gen = v["data.generator"]
        if gen == "spirals":
            return gen_spirals(v["data.n"], v["data.noise"], v["data.seed"])
        if gen == "blobs":
            return gen_blobs(v["data.n"], v["data.k"], v["data.spread"], v["data.seed"])
        if gen == "csv":
            if not v["data.path"]:
                raise ConfigError("data.generator = csv requires data.path")
            return load_csv(v["data.path"])
        if gen == "idx":
            if not (v["data.images"] and v["data.labels"]):
                raise ConfigError("data.generator = idx requires data.images and data.labels")
            return load_idx(v["data.images"], v["data.labels"])
        raise ConfigError(f"unknown data.generator {gen!r}")

    def train_test_split(self, dataset):
        """Fixed (trainval, test) partition: test carved with the data seed so
        every run seed sees the same held-out set."""
        frac = self.values["data.test_fraction"]
        if not 0.0 < frac < 1.0:
            raise ConfigError(f"data.test_fraction must be in (0, 1), got {frac}")
        return split(dataset, 1.0 - frac, self.values["data.seed"])

    @property
    def seeds(self):
        return self.values["seeds"]

    @property
    def out_dir(self):
        return self.values["out.dir"]


def parse_config(text):
    values = {}
    seen = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {line_no}: expected key = value, got {raw!r}")
        key, _, val = line.partition("=")
        key = key.strip()
        val = val.strip()
        if key not in _SCHEMA:
            raise ConfigError(f"line {line_no}: unknown key {key!r}")
        if key in seen:
            raise ConfigError(f"line {line_no}: duplicate key {key!r} (first at line {seen[key]})")
        seen[key] = line_no
        parser = _SCHEMA[key][0]
        try:
            values[key] = parser(val)
        except ValueError as exc:
            raise ConfigError(f"line {line_no}: bad value for {key}: {exc}") from None
    for key, (_, default) in _SCHEMA.items():
        values.setdefault(key, default)
    canonical = "\n".join(f"{k}={values[k]!r}" for k in sorted(values))
    digest = hashlib.sha256(canonical.encode("utf-8")).hexdigest()
    cfg = RunConfig(values=values, digest=digest)
    try:
        cfg.search_config(seed=0).validate()  # fail fast before any compute
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return cfg


def load_config(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return parse_config(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
