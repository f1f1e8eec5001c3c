"""Finite-difference verification of every analytic derivative.

Checks each unary/binary op, the clamp, the full relaxed cell under a fixed
sample, and an end-to-end model loss against central differences, reporting
the worst relative error per subject. Sample points avoid each op's
non-differentiable loci, where one-sided subgradients are the intended
behaviour rather than a bug.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor, finite_difference_grad
from .cell import CellDistribution, eval_cell_relaxed, sample_cell
from .models import ModelSpec, build_model
from .ops import (
    BINARY_ORDER,
    GAMMA_BINARY,
    GAMMA_UNARY,
    UNARY_ORDER,
    clamp_output,
    eval_binary,
    eval_unary,
)
from .search import relaxed_site_fn

__all__ = ["run_gradcheck", "DEFAULT_TOLERANCE"]

DEFAULT_TOLERANCE = 1e-5
KINKED_UNARY = {"abs", "min0", "max0", "leaky_relu", "sqrt", "elu"}
KINKED_BINARY = {"max", "min"}


def _rel_err(got, want):
    denom = np.maximum(1.0, np.maximum(np.abs(got), np.abs(want)))
    return float(np.max(np.abs(got - want) / denom)) if np.size(got) else 0.0


def _unary_points(rng, name, n):
    pts = rng.uniform(-3.0, 3.0, size=n)
    if name in KINKED_UNARY:
        pts = np.where(np.abs(pts) < 0.1, pts + 0.25 * np.sign(pts + 0.5), pts)
    return pts


def check_unary(name, rng, points=50):
    x = Tensor(_unary_points(rng, name, points), requires_grad=True)
    gamma = Tensor(0.7, requires_grad=True) if name in GAMMA_UNARY else None
    mix = Tensor(rng.normal(size=x.shape))

    def forward():
        return ad.reduce_sum(ad.mul(eval_unary(name, x, gamma=gamma, clamp=False), mix))

    with Tape() as tape:
        tape.backward(forward())
    params = [x] + ([gamma] if gamma is not None else [])
    fd = finite_difference_grad(lambda: forward().item(), params)
    err = _rel_err(x.gradient(), fd[0])
    if gamma is not None:
        err = max(err, _rel_err(gamma.gradient(), fd[1]))
    return err


def check_binary(name, rng, points=50):
    a = rng.uniform(-3.0, 3.0, size=points)
    b = rng.uniform(-3.0, 3.0, size=points)
    if name in KINKED_BINARY:
        b = np.where(np.abs(a - b) < 0.1, b + 0.5, b)
    x1 = Tensor(a, requires_grad=True)
    x2 = Tensor(b, requires_grad=True)
    gamma = Tensor(0.3, requires_grad=True) if name in GAMMA_BINARY else None
    mix = Tensor(rng.normal(size=a.shape))

    def forward():
        return ad.reduce_sum(ad.mul(eval_binary(name, x1, x2, gamma=gamma, clamp=False), mix))

    with Tape() as tape:
        tape.backward(forward())
    params = [x1, x2] + ([gamma] if gamma is not None else [])
    fd = finite_difference_grad(lambda: forward().item(), params)
    err = max(_rel_err(x1.gradient(), fd[0]), _rel_err(x2.gradient(), fd[1]))
    if gamma is not None:
        err = max(err, _rel_err(gamma.gradient(), fd[2]))
    return err


def check_clamp(rng, points=50):
    pts = rng.uniform(-15.0, 15.0, size=points)
    pts = np.where(np.abs(np.abs(pts) - 10.0) < 0.1, pts * 1.1, pts)  # off the band edge
    x = Tensor(pts, requires_grad=True)
    mix = Tensor(rng.normal(size=x.shape))

    def forward():
        return ad.reduce_sum(ad.mul(clamp_output(x), mix))

    with Tape() as tape:
        tape.backward(forward())
    (fd,) = finite_difference_grad(lambda: forward().item(), [x])
    return _rel_err(x.gradient(), fd)


def check_cell(rng, points=50):
    """Full 110-op cell under one fixed sample: gradients wrt the input,
    every gamma, and the sample weights."""
    dist = CellDistribution()
    sample = sample_cell(dist, rng)
    for w in sample.weights.values():
        w.requires_grad = True
    x = Tensor(rng.uniform(-2.0, 2.0, size=points), requires_grad=True)
    mix = Tensor(rng.normal(size=x.shape))
    gammas = [dist.gammas[k] for k in sorted(dist.gammas)]
    weights = [sample.weights[loc] for loc in sorted(sample.weights)]

    def forward():
        return ad.reduce_sum(ad.mul(eval_cell_relaxed(dist, sample, x), mix))

    with Tape() as tape:
        tape.backward(forward())
    params = [x] + gammas + weights
    fd = finite_difference_grad(lambda: forward().item(), params)
    return max(_rel_err(p.gradient(), f) for p, f in zip(params, fd))


def check_model_loss(rng, coords=50):
    """End-to-end loss of a relaxed-cell model wrt `coords` randomly chosen
    weight coordinates."""
    spec = ModelSpec(family="residual-mlp", input_dim=2, classes=2, width=8,
                     depth=2, activation="gelu")
    model = build_model(spec, seed=int(rng.integers(2**31)))
    dist = CellDistribution()
    samples = {sid: sample_cell(dist, rng) for sid in model.site_ids()}
    site = relaxed_site_fn(dist, samples)
    X = rng.normal(size=(16, 2))
    y = rng.integers(0, 2, size=16)

    def forward():
        return ad.softmax_cross_entropy(model.forward(Tensor(X), site), y)

    with Tape() as tape:
        tape.backward(forward())
    total = sum(p.size for p in model.params)
    picks = sorted(rng.choice(total, size=min(coords, total), replace=False))
    coord_map = {}
    offset = 0
    for p in model.params:
        mine = [c - offset for c in picks if offset <= c < offset + p.size]
        coord_map[id(p)] = mine
        offset += p.size
    fd = finite_difference_grad(lambda: forward().item(), model.params, coords=coord_map)
    err = 0.0
    for p, f in zip(model.params, fd):
        idx = coord_map[id(p)]
        if idx:
            g = p.gradient().reshape(-1)[idx]
            err = max(err, _rel_err(g, f.reshape(-1)[idx]))
    return err


def run_gradcheck(seed=20240811, points=50, tolerance=DEFAULT_TOLERANCE):
    """Run the whole suite; returns (per-subject max relative error, ok)."""
    rng = np.random.default_rng(seed)
    report = {}
    for name in UNARY_ORDER:
        report[f"unary.{name}"] = check_unary(name, rng, points)
    for name in BINARY_ORDER:
        report[f"binary.{name}"] = check_binary(name, rng, points)
    report["clamp"] = check_clamp(rng, points)
    report["cell"] = check_cell(rng, points)
    report["model-loss"] = check_model_loss(rng, points)
    ok = all(err < tolerance for err in report.values())
    return report, ok
