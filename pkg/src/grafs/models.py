"""Desk-scale trainable networks hosting swappable activation sites.

Three families stand in for the full-scale architectures: a plain MLP, a
residual MLP (y = x + act(Wx + b), so dying-activation pathologies remain
representable), and a two-layer strided conv net for image-shaped inputs.
Every activation site calls a user-supplied `site_fn`, which is how the
original activation, the relaxed search cell, or a frozen discrete cell
get installed.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .cell import DiscreteActivation
from .formulas import canonical_formula_id, discovered_site_fn
from .ops import baseline_site_fn, canonical_baseline

__all__ = [
    "ModelSpec",
    "Model",
    "ModelError",
    "build_model",
    "train_step",
    "evaluate",
    "site_fn_for",
    "mean_and_sem",
    "save_checkpoint",
    "load_checkpoint",
]

CHECKPOINT_MAGIC = b"ZOOCKPT1"
CHECKPOINT_VERSION = 1

FAMILIES = ("mlp", "residual-mlp", "mini-conv")
RELU_FAMILY = {"relu", "leaky_relu", "elu"}


class ModelError(Exception):
    pass


@dataclass
class ModelSpec:
    family: str
    input_dim: int
    classes: int
    width: int = 32
    depth: int = 2
    activation: str = None  # original activation; per-family default
    image_shape: tuple = None  # (c, h, w), mini-conv only
    standardize: bool = False

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ModelError(f"unknown family {self.family!r}; expected one of {FAMILIES}")
        if self.width < 1:
            raise ModelError(f"width must be positive, got {self.width}")
        if self.depth < 1:
            raise ModelError(f"depth must be >= 1 (a depth-0 model has no activation sites)")
        if self.classes < 2:
            raise ModelError(f"need at least 2 classes, got {self.classes}")
        if self.activation is None:
            self.activation = "relu" if self.family in ("mlp", "mini-conv") else "gelu"
        else:
            self.activation = canonical_baseline(self.activation)
        if self.family == "mini-conv":
            if self.depth > 2:
                raise ModelError("mini-conv supports at most 2 conv layers")
            if self.image_shape is None:
                raise ModelError("mini-conv requires image_shape=(c, h, w)")
            c, h, w = self.image_shape
            if c * h * w != self.input_dim:
                raise ModelError(
                    f"image_shape {self.image_shape} does not match input_dim {self.input_dim}"
                )

    def to_dict(self):
        return {
            "family": self.family,
            "input_dim": self.input_dim,
            "classes": self.classes,
            "width": self.width,
            "depth": self.depth,
            "activation": self.activation,
            "image_shape": list(self.image_shape) if self.image_shape else None,
            "standardize": self.standardize,
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if d.get("image_shape"):
            d["image_shape"] = tuple(d["image_shape"])
        return cls(**d)


def _init_limit(fan_in, fan_out, activation):
    if activation in RELU_FAMILY:
        return np.sqrt(6.0 / fan_in)  # He-uniform
    return np.sqrt(6.0 / (fan_in + fan_out))  # Glorot-uniform


@dataclass
class Model:
    spec: ModelSpec
    params: list = field(default_factory=list)

    def param_count(self):
        return sum(p.size for p in self.params)

    def named(self, name):
        for p in self.params:
            if p.name == name:
                return p
        raise ModelError(f"no parameter named {name!r}")

    def _param(self, name, array):
        t = Tensor(array, requires_grad=True, name=name)
        self.params.append(t)
        return t

    def site_ids(self):
        return [f"site{i}" for i in range(self.spec.depth)]

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def forward(self, x, site_fn, probe=None):
        """Logits for a (n, input_dim) tensor; `site_fn(tensor)` is applied
        at every activation site (or `site_fn(site_id, tensor)` when it
        accepts two arguments via `per_site=True` wrappers)."""
        if self.spec.family == "mlp":
            return self._forward_mlp(x, site_fn, probe)
        if self.spec.family == "residual-mlp":
            return self._forward_residual(x, site_fn, probe)
        return self._forward_conv(x, site_fn, probe)

    def _apply_site(self, site_fn, site_id, h, probe):
        out = site_fn(site_id, h) if getattr(site_fn, "per_site", False) else site_fn(h)
        if probe is not None:
            probe(site_id, h.data.copy(), out.data.copy())
        return out

    def _standardize(self, h):
        n = h.shape[0]
        ones = Tensor(np.full((1, n), 1.0 / n))
        m = ad.matmul(ones, h)  # (1, w) feature means
        c = ad.sub(h, ad.broadcast_to(m, h.shape))
        v = ad.matmul(ones, ad.mul(c, c))
        s = ad.unary(v, lambda a: np.sqrt(a + 1e-8), lambda a: 0.5 / np.sqrt(a + 1e-8))
        return ad.div(c, ad.broadcast_to(s, h.shape))

    def _forward_mlp(self, x, site_fn, probe):
        h = x
        for i in range(self.spec.depth):
            h = ad.add(ad.matmul(h, self.named(f"layers.{i}.weight")),
                       self.named(f"layers.{i}.bias"))
            if self.spec.standardize:
                h = self._standardize(h)
            h = self._apply_site(site_fn, f"site{i}", h, probe)
        return ad.add(ad.matmul(h, self.named("head.weight")), self.named("head.bias"))

    def _forward_residual(self, x, site_fn, probe):
        h = ad.add(ad.matmul(x, self.named("proj.weight")), self.named("proj.bias"))
        for i in range(self.spec.depth):
            z = ad.add(ad.matmul(h, self.named(f"blocks.{i}.weight")),
                       self.named(f"blocks.{i}.bias"))
            if self.spec.standardize:
                z = self._standardize(z)
            a = self._apply_site(site_fn, f"site{i}", z, probe)
            h = ad.add(h, a)
        return ad.add(ad.matmul(h, self.named("head.weight")), self.named("head.bias"))

    def _forward_conv(self, x, site_fn, probe):
        c, height, width = self.spec.image_shape
        n = x.shape[0]
        h = ad.reshape(x, (n, c, height, width))
        shape = (c, height, width)
        for i in range(self.spec.depth):
            cols = ad.im2col(h, 3, 3, stride=2)
            out_h = (shape[1] - 3) // 2 + 1
            out_w = (shape[2] - 3) // 2 + 1
            z = ad.add(ad.matmul(cols, self.named(f"conv.{i}.weight")),
                       self.named(f"conv.{i}.bias"))
            z = self._apply_site(site_fn, f"site{i}", z, probe)
            feat = self.spec.width
            z = ad.reshape(z, (n, out_h, out_w, feat))
            h = ad.transpose(z, (0, 3, 1, 2))
            shape = (feat, out_h, out_w)
        flat = ad.reshape(h, (n, shape[0] * shape[1] * shape[2]))
        return ad.add(ad.matmul(flat, self.named("head.weight")), self.named("head.bias"))


def build_model(spec, seed=0):
    """Initialize a model deterministically: He-uniform before relu-family
    sites, Glorot-uniform otherwise."""
    rng = np.random.default_rng([seed, 0xA11])
    model = Model(spec=spec)
    act = spec.activation

    def uniform(shape, fan_in, fan_out):
        lim = _init_limit(fan_in, fan_out, act)
        return rng.uniform(-lim, lim, size=shape)

    if spec.family == "mlp":
        d = spec.input_dim
        for i in range(spec.depth):
            w = spec.width
            model._param(f"layers.{i}.weight", uniform((d, w), d, w))
            model._param(f"layers.{i}.bias", np.zeros(w))
            d = w
        model._param("head.weight", uniform((d, spec.classes), d, spec.classes))
        model._param("head.bias", np.zeros(spec.classes))
    elif spec.family == "residual-mlp":
        d, w = spec.input_dim, spec.width
        model._param("proj.weight", uniform((d, w), d, w))
        model._param("proj.bias", np.zeros(w))
        for i in range(spec.depth):
            model._param(f"blocks.{i}.weight", uniform((w, w), w, w))
            model._param(f"blocks.{i}.bias", np.zeros(w))
        model._param("head.weight", uniform((w, spec.classes), w, spec.classes))
        model._param("head.bias", np.zeros(spec.classes))
    else:  # mini-conv
        c, height, width = spec.image_shape
        shape = (c, height, width)
        for i in range(spec.depth):
            k = shape[0] * 9
            model._param(f"conv.{i}.weight", uniform((k, spec.width), k, spec.width))
            model._param(f"conv.{i}.bias", np.zeros(spec.width))
            out_h = (shape[1] - 3) // 2 + 1
            out_w = (shape[2] - 3) // 2 + 1
            if out_h <= 0 or out_w <= 0:
                raise ModelError(f"image_shape {spec.image_shape} too small for depth {spec.depth}")
            shape = (spec.width, out_h, out_w)
        flat = shape[0] * shape[1] * shape[2]
        model._param("head.weight", uniform((flat, spec.classes), flat, spec.classes))
        model._param("head.bias", np.zeros(spec.classes))
    return model


def site_fn_for(activation):
    """Resolve a site function from a DiscreteActivation, a baseline name,
    a published formula id, or a callable."""
    if isinstance(activation, DiscreteActivation):
        return activation.site_fn()
    if callable(activation):
        return activation
    if isinstance(activation, str):
        try:
            return discovered_site_fn(canonical_formula_id(activation))
        except KeyError:
            return baseline_site_fn(activation)
    raise ModelError(f"cannot make an activation site from {activation!r}")


def train_step(model, features, labels, optimizer, site_fn, probe=None):
    """One forward/backward/step; returns the (per-sample mean) loss."""
    with Tape() as tape:
        logits = model.forward(Tensor(features), site_fn, probe=probe)
        loss = ad.softmax_cross_entropy(logits, labels)
        value = loss.item()
        if not np.isfinite(value):
            raise ModelError(f"non-finite training loss {value}")
        optimizer.zero_grad()
        tape.backward(loss)
    optimizer.step()
    return value


def evaluate(model, dataset, activation, chunk=1024):
    """(accuracy, mean loss) over the full dataset, deterministically."""
    if len(dataset) == 0:
        raise ModelError("cannot evaluate on an empty dataset")
    site_fn = site_fn_for(activation)
    correct = 0
    loss_sum = 0.0
    for start in range(0, len(dataset), chunk):
        X = dataset.features[start:start + chunk]
        y = dataset.labels[start:start + chunk]
        logits = model.forward(Tensor(X), site_fn)
        loss = ad.softmax_cross_entropy(logits, y)
        loss_sum += loss.item() * len(X)
        correct += int((logits.data.argmax(axis=1) == y).sum())
    n = len(dataset)
    return correct / n, loss_sum / n


def mean_and_sem(values):
    """Mean and standard error of the mean; SEM is None for a single value."""
    values = np.asarray(values, dtype=np.float64)
    mean = float(values.mean())
    if values.size < 2:
        return mean, None
    return mean, float(values.std(ddof=1) / np.sqrt(values.size))


def save_checkpoint(model, path):
    """Binary layout: magic, version u32-LE, spec-JSON (u32-LE length +
    UTF-8 bytes), then each parameter tensor in declaration order as raw
    little-endian float64."""
    spec_blob = json.dumps(model.spec.to_dict(), sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<I", len(spec_blob)))
        fh.write(spec_blob)
        for p in model.params:
            fh.write(np.ascontiguousarray(p.data, dtype="<f8").tobytes())


def load_checkpoint(path):
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ModelError(f"{path}: bad checkpoint magic {magic!r}")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != CHECKPOINT_VERSION:
            raise ModelError(f"{path}: unsupported checkpoint version {version}")
        (spec_len,) = struct.unpack("<I", fh.read(4))
        spec = ModelSpec.from_dict(json.loads(fh.read(spec_len).decode("utf-8")))
        model = build_model(spec, seed=0)
        for p in model.params:
            raw = fh.read(p.size * 8)
            if len(raw) != p.size * 8:
                raise ModelError(f"{path}: truncated parameter {p.name!r}")
            p.data = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(p.shape)
        trailing = fh.read(1)
        if trailing:
            raise ModelError(f"{path}: trailing bytes after parameters")
    return model
