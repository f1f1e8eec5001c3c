"""The bi-level activation search loop.

Each round alternates two updates per batch group:

  1. outer: draw fresh per-site cell samples, descend the validation loss
     (plus the anchor term) in the concentration/gamma parameters;
  2. inner: descend the training loss in the network weights — with the
     original activation during warm-start, with freshly sampled relaxed
     cells afterwards.

From the shrink-start round onward, the lowest-concentration ops are
dropped on the log schedule before the updates, so the final round leaves
exactly one op per edge/vertex. Disabling shrinking yields the plain
distribution-learning baseline; discretization then falls back to the
argmax of the learned concentrations.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import __version__
from . import autodiff as ad
from .autodiff import Tape, Tensor
from .cell import (
    LOCATIONS,
    CellDistribution,
    discretize,
    drop_op,
    eval_cell_relaxed,
    sample_cell,
)
from .data import batches, split
from .models import build_model
from .ops import baseline_site_fn
from .schedule import FINAL_OPS, FULL_SPACE, build_shrink_schedule
from .symbolic import to_symbolic

__all__ = [
    "OptimizerSpec",
    "SearchConfig",
    "SearchRun",
    "SearchDivergence",
    "anchor_penalty",
    "drop_ops",
    "relaxed_site_fn",
    "weight_update_round",
    "fit",
    "run_grafs",
    "run_drnas_baseline",
]

_VAL_SEED_OFFSET = 7919  # decorrelates the validation batch stream


class SearchDivergence(Exception):
    pass


@dataclass(frozen=True)
class OptimizerSpec:
    kind: str = "sgd-momentum"
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999

    def build(self, params):
        if self.kind == "sgd-momentum":
            return ad.SGD(params, lr=self.lr, momentum=self.momentum,
                          weight_decay=self.weight_decay)
        if self.kind == "adam":
            return ad.Adam(params, lr=self.lr, betas=(self.beta1, self.beta2),
                           weight_decay=self.weight_decay)
        if self.kind == "adamw":
            return ad.AdamW(params, lr=self.lr, betas=(self.beta1, self.beta2),
                            weight_decay=self.weight_decay)
        raise ad.OptimizerError(f"unknown optimizer kind {self.kind!r}")


@dataclass(frozen=True)
class SearchConfig:
    total_rounds: int = 50
    warmstart_rounds: int = 1
    split: float = 0.75
    batch_size: int = 32
    grad_accum: int = 1
    inner: OptimizerSpec = field(default_factory=OptimizerSpec)
    outer: OptimizerSpec = field(default_factory=lambda: OptimizerSpec(
        kind="adam", lr=6e-4, weight_decay=0.0, beta1=0.5, beta2=0.999))
    anchor_weight: float = 1e-3
    anchor_mode: str = "penalty"  # penalty | weight-decay
    clamp: float = 10.0
    shrink: bool = True
    seed: int = 0

    @property
    def shrink_start(self):
        """Shrinking begins at twice the warm-start length (floor 1)."""
        return max(1, 2 * self.warmstart_rounds)

    def validate(self):
        if self.total_rounds < 1:
            raise ValueError(f"total_rounds must be >= 1, got {self.total_rounds}")
        if self.warmstart_rounds < 0:
            raise ValueError(f"warmstart_rounds must be >= 0, got {self.warmstart_rounds}")
        if self.shrink and self.total_rounds <= self.shrink_start:
            raise ValueError(
                f"total_rounds ({self.total_rounds}) must exceed the shrink "
                f"start round ({self.shrink_start})"
            )
        if not 0.0 < self.split < 1.0:
            raise ValueError(f"split must be in (0, 1), got {self.split}")
        if self.batch_size < 1 or self.grad_accum < 1:
            raise ValueError("batch_size and grad_accum must be positive")
        if self.anchor_mode not in ("penalty", "weight-decay"):
            raise ValueError(f"anchor_mode must be penalty|weight-decay, got {self.anchor_mode!r}")
        if self.anchor_weight < 0:
            raise ValueError(f"anchor_weight must be >= 0, got {self.anchor_weight}")
        if self.clamp <= 0:
            raise ValueError(f"clamp must be positive, got {self.clamp}")


@dataclass
class SearchRun:
    config: SearchConfig
    dist: CellDistribution
    model: object
    events: list = field(default_factory=list)
    params_after_warmstart: list = None
    activation: object = None
    run_id: str = ""


def anchor_penalty(dist_or_rhos, lam):
    """lam * sum (rho - 1)^2 over all concentrations, as a taped scalar."""
    if lam < 0:
        raise ValueError(f"anchor weight must be >= 0, got {lam}")
    if isinstance(dist_or_rhos, CellDistribution):
        rhos = [dist_or_rhos.rho_tensor(loc) for loc in LOCATIONS]
    else:
        rhos = list(dist_or_rhos)
    total = None
    for rho in rhos:
        d = ad.sub(rho, Tensor(1.0))
        term = ad.reduce_sum(ad.mul(d, d))
        total = term if total is None else ad.add(total, term)
    return ad.mul(total, Tensor(lam))


def drop_ops(dist, count, optimizer=None):
    """Procedure: `count` times, pick the location with the most active ops
    (ties in fixed location order) and drop its lowest-concentration op
    (ties toward the lower enumeration index). Stops early at the 1-op
    floor; returns the (location, op) pairs actually dropped."""
    dropped = []
    for _ in range(count):
        candidates = [loc for loc in LOCATIONS if len(dist.active[loc]) > 1]
        if not candidates:
            break
        loc = max(candidates, key=lambda l: len(dist.active[l]))
        rho = dist.rho_values(loc)
        name = dist.active[loc][int(np.argmin(rho))]
        drop_op(dist, loc, name, optimizer=optimizer)
        dropped.append((loc, name))
    return dropped


def relaxed_site_fn(dist, site_samples, limit=10.0):
    """Site function evaluating the relaxed cell with per-site samples."""

    def site(site_id, x):
        return eval_cell_relaxed(dist, site_samples[site_id], x, limit)

    site.per_site = True
    return site


def _grouped(batch_list, group_size):
    return [batch_list[i:i + group_size] for i in range(0, len(batch_list), group_size)]


def _accumulate_step(model, groups_xy, site_fn, optimizer, extra_loss_fn=None):
    """One optimizer step from a group of microbatches.

    Losses are per-sample means, so each microbatch is weighted by its size;
    the accumulated gradient equals the gradient of one big batch. Gradients
    are zeroed right before backward: the other optimization level's
    backward passes also touch these tensors, and those contributions must
    not leak into this step. Returns the group's per-sample mean data loss.
    """
    total_n = sum(len(y) for _, y in groups_xy)
    with Tape() as tape:
        total = None
        value = 0.0
        for X, y in groups_xy:
            logits = model.forward(Tensor(X), site_fn)
            loss = ad.softmax_cross_entropy(logits, y)
            value += loss.item() * len(y)
            scaled = ad.mul(loss, Tensor(len(y) / total_n))
            total = scaled if total is None else ad.add(total, scaled)
        if extra_loss_fn is not None:
            total = ad.add(total, extra_loss_fn())
        optimizer.zero_grad()
        tape.backward(total)
    optimizer.step()
    return value / total_n


def weight_update_round(model, dataset, optimizer, config, round_idx, site_fn,
                        sample_factory=None):
    """One pass of inner weight updates over the training set.

    This exact routine is what the search loop runs, so plain training with
    the original activation reproduces the warm-start weight trajectory
    bit for bit. `sample_factory`, when given, is called before every
    update step and must return the site function for that step.
    """
    batch_list = list(batches(dataset, config.batch_size, config.seed, round_idx))
    losses = []
    sizes = []
    for group in _grouped(batch_list, config.grad_accum):
        fn = sample_factory() if sample_factory is not None else site_fn
        loss = _accumulate_step(model, group, fn, optimizer)
        losses.append(loss)
        sizes.append(sum(len(y) for _, y in group))
    return float(np.average(losses, weights=sizes))


def fit(model, dataset, activation_site_fn, opt_spec, rounds, batch_size, seed,
        grad_accum=1):
    """Plain training of a model with a fixed activation; per-round losses."""
    cfg = SearchConfig(total_rounds=max(rounds, 1), warmstart_rounds=0, shrink=False,
                       batch_size=batch_size, grad_accum=grad_accum, seed=seed)
    optimizer = opt_spec.build(model.params)
    losses = []
    for rnd in range(rounds):
        try:
            losses.append(weight_update_round(model, dataset, optimizer, cfg, rnd,
                                              activation_site_fn))
        except ad.OptimizerError as exc:
            raise SearchDivergence(f"training diverged at round {rnd}: {exc}") from exc
        if not np.isfinite(losses[-1]):
            raise SearchDivergence(f"training diverged at round {rnd}")
    return losses


def _outer_step(run, dist, outer_opt, val_groups, sampler_rng, site_ids, lam, mode):
    """One concentration/gamma update on a group of validation batches.

    Sampling happens inside the step's tape so gradients reach the
    concentrations through the Gamma draws."""
    total_n = sum(len(y) for _, y in val_groups)
    with Tape() as tape:
        samples = {sid: sample_cell(dist, sampler_rng) for sid in site_ids}
        site = relaxed_site_fn(dist, samples, run.config.clamp)
        total = None
        value = 0.0
        for X, y in val_groups:
            logits = run.model.forward(Tensor(X), site)
            loss = ad.softmax_cross_entropy(logits, y)
            value += loss.item() * len(y)
            scaled = ad.mul(loss, Tensor(len(y) / total_n))
            total = scaled if total is None else ad.add(total, scaled)
        if mode == "penalty" and lam > 0:
            total = ad.add(total, anchor_penalty(dist, lam))
        outer_opt.zero_grad()
        tape.backward(total)
    outer_opt.step()
    return value / total_n


def _run_search(config, model_spec, dataset, run_id=""):
    config.validate()
    train, val = split(dataset, config.split, config.seed)
    model = build_model(model_spec, seed=config.seed)
    dist = CellDistribution()
    dist.validate()

    inner_opt = config.inner.build(model.params)
    outer_spec = config.outer
    if config.anchor_mode == "weight-decay":
        outer_spec = replace(outer_spec, kind="adamw", weight_decay=config.anchor_weight)
    outer_opt = outer_spec.build(dist.parameters())

    sampler_rng = np.random.default_rng([config.seed, 1])
    abar_site = baseline_site_fn(model_spec.activation)
    site_ids = model.site_ids()
    schedule = {}
    if config.shrink:
        schedule = build_shrink_schedule(FULL_SPACE, FINAL_OPS,
                                         config.shrink_start, config.total_rounds)

    run = SearchRun(config=config, dist=dist, model=model, run_id=run_id)
    E, E0 = config.total_rounds, config.warmstart_rounds

    for rnd in range(E):
        phase = "warmstart" if rnd < E0 else "search"
        drops = []
        requested = 0
        if phase == "search" and config.shrink:
            requested = schedule.get(rnd, 0)
            if rnd == E - 1:
                requested += schedule.get(E, 0)  # closing bin of the schedule
            drops = drop_ops(dist, requested, optimizer=outer_opt)

        val_batches = list(batches(val, config.batch_size,
                                   config.seed + _VAL_SEED_OFFSET, rnd))
        val_groups = _grouped(val_batches, config.grad_accum)

        val_losses = []
        group_idx = [0]

        def next_val_group():
            g = val_groups[group_idx[0] % len(val_groups)]
            group_idx[0] += 1
            return g

        def outer_then_sample():
            # one outer update precedes each inner update
            loss = _outer_step(run, dist, outer_opt, next_val_group(), sampler_rng,
                               site_ids, config.anchor_weight, config.anchor_mode)
            val_losses.append(loss)
            if phase == "warmstart":
                return abar_site
            samples = {sid: sample_cell(dist, sampler_rng) for sid in site_ids}
            return relaxed_site_fn(dist, samples, config.clamp)

        try:
            train_loss = weight_update_round(model, train, inner_opt, config, rnd,
                                             None, sample_factory=outer_then_sample)
        except ad.OptimizerError as exc:
            raise SearchDivergence(
                f"round {rnd}: {exc}; last drops: {drops}"
            ) from exc
        val_loss = float(np.mean(val_losses))
        if not (np.isfinite(train_loss) and np.isfinite(val_loss)):
            raise SearchDivergence(
                f"round {rnd}: non-finite loss (train={train_loss}, val={val_loss}); "
                f"last drops: {drops}"
            )
        run.events.append({
            "round": rnd,
            "phase": phase,
            "train_loss": train_loss,
            "val_loss": val_loss,
            "drops": [[loc, op] for loc, op in drops],
            "drops_requested": requested,
            "rho_summary": dist.rho_snapshot(),
        })
        if rnd == E0 - 1:
            run.params_after_warmstart = [p.data.copy() for p in model.params]

    provenance = {
        "seed": config.seed,
        "rounds": E,
        "run_id": run_id or f"seed{config.seed}",
        "tool_version": __version__,
    }
    run.activation = discretize(dist, provenance)
    return run.activation, run


def run_grafs(config, model_spec, dataset, run_id=""):
    """Full search: warm-start, bi-level updates, progressive shrinking.

    Returns the discretized activation and the run record (event log, final
    model, distribution state)."""
    activation, run = _run_search(config, model_spec, dataset, run_id)
    if config.shrink and run.dist.active_count() != FINAL_OPS:
        raise SearchDivergence(
            f"search ended with {run.dist.active_count()} active ops, expected {FINAL_OPS}"
        )
    return activation, run


def run_drnas_baseline(config, model_spec, dataset, run_id=""):
    """Distribution learning without shrinking; argmax discretization."""
    cfg = replace(config, shrink=False)
    return _run_search(cfg, model_spec, dataset, run_id)
