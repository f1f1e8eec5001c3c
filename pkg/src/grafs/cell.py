"""The searchable activation cell.

Fixed two-level topology with four unary edges and two binary vertices:

    f(x) = b_top( u3( b_bot( u1(x), u2(x) ) ), u4(x) )

Every edge/vertex carries a Dirichlet concentration per still-active op.
During search the cell is evaluated in relaxed mode (simplex-weighted sum
of clamped ops, one independent sample per activation site); after
discretization a single op per location remains and the frozen cell
evaluates unclamped, like any closed-form activation.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import ops as op_lib
from .autodiff import Tensor
from .dirichlet import dirichlet_weights
from .ops import BINARY_OPS, BINARY_ORDER, UNARY_OPS, UNARY_ORDER

__all__ = [
    "LOCATIONS",
    "UNARY_LOCATIONS",
    "BINARY_LOCATIONS",
    "CellError",
    "CellDistribution",
    "CellSample",
    "DiscreteActivation",
    "sample_cell",
    "eval_cell",
    "eval_cell_relaxed",
    "drop_op",
    "discretize",
]

UNARY_LOCATIONS = ("u1", "u2", "u3", "u4")
BINARY_LOCATIONS = ("b_bot", "b_top")
LOCATIONS = UNARY_LOCATIONS + BINARY_LOCATIONS

RHO_FLOOR = 1e-3
ANCHOR = 1.0
# softplus(theta0) + floor == 1 so every concentration starts at the anchor
_THETA_INIT = math.log(math.expm1(1.0 - RHO_FLOOR))


class CellError(Exception):
    pass


def _op_table(location):
    return UNARY_OPS if location in UNARY_LOCATIONS else BINARY_OPS


def _op_order(location):
    return UNARY_ORDER if location in UNARY_LOCATIONS else BINARY_ORDER


class CellDistribution:
    """Outer-loop state: per-location active ops, concentrations, gammas.

    Concentrations are stored as unconstrained theta with
    rho = softplus(theta) + 1e-3, so positivity can never be violated by an
    optimizer step; the anchor penalty is applied in rho space.
    """

    def __init__(self):
        self.active = {loc: list(_op_order(loc)) for loc in LOCATIONS}
        self.theta = {
            loc: Tensor(np.full(len(ops), _THETA_INIT), requires_grad=True,
                        name=f"cell.{loc}.theta")
            for loc, ops in self.active.items()
        }
        self.gammas = {}
        for loc in LOCATIONS:
            for name in self.active[loc]:
                op = _op_table(loc)[name]
                if op.needs_gamma:
                    self.gammas[(loc, name)] = Tensor(
                        op.gamma_init, requires_grad=True, name=f"cell.{loc}.{name}.gamma"
                    )

    def parameters(self):
        """Learnable tensors in deterministic order (thetas, then gammas)."""
        params = [self.theta[loc] for loc in LOCATIONS]
        for loc in LOCATIONS:
            for name in self.active[loc]:
                if (loc, name) in self.gammas:
                    params.append(self.gammas[(loc, name)])
        return params

    def rho_tensor(self, location):
        """Taped rho = softplus(theta) + floor for one location."""
        sp = ad.unary(self.theta[location], op_lib.softplus, op_lib.sigmoid, label="softplus")
        return ad.add(sp, Tensor(RHO_FLOOR))

    def rho_values(self, location):
        return op_lib.softplus(self.theta[location].data) + RHO_FLOOR

    def rho_snapshot(self):
        return {loc: [float(v) for v in self.rho_values(loc)] for loc in LOCATIONS}

    def active_count(self):
        return sum(len(ops) for ops in self.active.values())

    def validate(self):
        for loc in LOCATIONS:
            if len(self.active[loc]) < 1:
                raise CellError(f"location {loc} has no active ops")
            if self.theta[loc].size != len(self.active[loc]):
                raise CellError(f"location {loc}: theta/active length mismatch")
            if np.any(self.rho_values(loc) <= 0):
                raise CellError(f"location {loc}: non-positive concentration")

    def gamma_for(self, location, op_name):
        return self.gammas.get((location, op_name))


@dataclass
class CellSample:
    """One draw of simplex weights for every edge and vertex.

    Consumed by a single activation site for a single forward pass.
    """

    weights: dict = field(default_factory=dict)  # location -> 1-D Tensor

    @classmethod
    def one_hot(cls, dist, choices):
        """Deterministic sample putting all weight on `choices[location]`."""
        weights = {}
        for loc in LOCATIONS:
            ops = dist.active[loc]
            if choices[loc] not in ops:
                raise CellError(f"{choices[loc]!r} not active at {loc}")
            w = np.zeros(len(ops))
            w[ops.index(choices[loc])] = 1.0
            weights[loc] = Tensor(w)
        return cls(weights)

    def check_against(self, dist):
        for loc in LOCATIONS:
            if self.weights[loc].size != len(dist.active[loc]):
                raise CellError(
                    f"sample arity mismatch at {loc}: "
                    f"{self.weights[loc].size} weights for {len(dist.active[loc])} ops"
                )


def sample_cell(dist, rng):
    """Draw one CellSample, with gradients attached to the concentrations.

    Distinct activation sites must each call this once per forward pass so
    their draws are independent.
    """
    weights = {}
    for loc in LOCATIONS:
        if len(dist.active[loc]) == 1:
            weights[loc] = Tensor([1.0])
            continue
        weights[loc] = dirichlet_weights(dist.rho_tensor(loc), rng)
    return CellSample(weights)


def _edge_relaxed(dist, sample, loc, x, limit):
    outs = [
        op_lib.eval_unary(name, x, gamma=dist.gamma_for(loc, name), limit=limit)
        for name in dist.active[loc]
    ]
    return ad.linear_combination(sample.weights[loc], outs)


def _vertex_relaxed(dist, sample, loc, a, b, limit):
    outs = [
        op_lib.eval_binary(name, a, b, gamma=dist.gamma_for(loc, name), limit=limit)
        for name in dist.active[loc]
    ]
    return ad.linear_combination(sample.weights[loc], outs)


def eval_cell_relaxed(dist, sample, x, limit=op_lib.CLAMP_LIMIT):
    """Simplex-weighted cell evaluation; every op output is clamped."""
    sample.check_against(dist)
    u1 = _edge_relaxed(dist, sample, "u1", x, limit)
    u2 = _edge_relaxed(dist, sample, "u2", x, limit)
    bot = _vertex_relaxed(dist, sample, "b_bot", u1, u2, limit)
    u3 = _edge_relaxed(dist, sample, "u3", bot, limit)
    u4 = _edge_relaxed(dist, sample, "u4", x, limit)
    return _vertex_relaxed(dist, sample, "b_top", u3, u4, limit)


def eval_cell(cell, x, sample=None, limit=op_lib.CLAMP_LIMIT):
    """Evaluate a relaxed distribution (sample required) or a frozen cell."""
    if isinstance(cell, CellDistribution):
        if sample is None:
            raise CellError("relaxed evaluation requires a CellSample")
        return eval_cell_relaxed(cell, sample, x, limit)
    if isinstance(cell, DiscreteActivation):
        return cell.site_fn()(x)
    raise CellError(f"cannot evaluate {type(cell).__name__}")


def drop_op(dist, location, op_name, optimizer=None):
    """Remove one op from a location; survivors' concentrations are untouched.

    When the outer optimizer is supplied, its moment slices for the deleted
    concentration entry are removed too, and any gamma owned by the dropped
    op leaves the parameter list.
    """
    ops = dist.active[location]
    if op_name not in ops:
        raise CellError(f"{op_name!r} not active at {location}")
    if len(ops) < 2:
        raise CellError(f"cannot drop the last op at {location}")
    idx = ops.index(op_name)
    ops.pop(idx)
    theta = dist.theta[location]
    if optimizer is not None:
        optimizer.delete_index(theta, idx)
    else:
        theta.data = np.delete(theta.data, idx)
        if theta.grad is not None:
            theta.grad = np.delete(theta.grad, idx)
    gamma = dist.gammas.pop((location, op_name), None)
    if gamma is not None and optimizer is not None:
        optimizer.remove_param(gamma)


def discretize(dist, provenance=None):
    """Collapse to the argmax-concentration op per location.

    Ties break toward the lower op-enumeration index (active lists keep
    enumeration order, argmax returns the first maximum). Gamma values of
    the selected ops are frozen at their learned values.
    """
    ops = {}
    gammas = {}
    for loc in LOCATIONS:
        rho = dist.rho_values(loc)
        name = dist.active[loc][int(np.argmax(rho))]
        ops[loc] = name
        if (loc, name) in dist.gammas:
            gammas[f"{loc}:{name}"] = float(dist.gammas[(loc, name)].data)
    return DiscreteActivation(ops=ops, gammas=gammas, provenance=dict(provenance or {}))


@dataclass
class DiscreteActivation:
    """A fully discretized cell: one op per location, frozen gammas."""

    ops: dict
    gammas: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if set(self.ops) != set(LOCATIONS):
            raise CellError(f"discrete cell must name all of {LOCATIONS}")
        for loc in UNARY_LOCATIONS:
            if self.ops[loc] not in UNARY_OPS:
                raise CellError(f"unknown unary op {self.ops[loc]!r} at {loc}")
        for loc in BINARY_LOCATIONS:
            if self.ops[loc] not in BINARY_OPS:
                raise CellError(f"unknown binary op {self.ops[loc]!r} at {loc}")
        for key in self.gammas:
            loc, name = key.split(":")
            if self.ops.get(loc) != name:
                raise CellError(f"gamma {key!r} does not match a selected op")

    def gamma_value(self, loc):
        name = self.ops[loc]
        op = _op_table(loc)[name]
        if not op.needs_gamma:
            return None
        return self.gammas.get(f"{loc}:{name}", op.gamma_init)

    def _unary_value(self, loc, x):
        name = self.ops[loc]
        g = self.gamma_value(loc)
        if name == "const":
            return np.full_like(x, g)
        if name == "scale":
            return x * g
        if name == "shift":
            return x + g
        return UNARY_OPS[name].fn(x)

    def _binary_value(self, loc, a, b):
        name = self.ops[loc]
        if name == "mix":
            w = float(op_lib.sigmoid(self.gamma_value(loc)))
            return a * w + b * (1.0 - w)
        return BINARY_OPS[name].fn(a, b)

    def eval(self, x):
        """Plain-array evaluation, no clamping (this is a final activation)."""
        x = np.asarray(x, dtype=np.float64)
        u1 = self._unary_value("u1", x)
        u2 = self._unary_value("u2", x)
        bot = self._binary_value("b_bot", u1, u2)
        u3 = self._unary_value("u3", bot)
        u4 = self._unary_value("u4", x)
        return self._binary_value("b_top", u3, u4)

    def __call__(self, x):
        scalar = np.isscalar(x)
        out = self.eval(x)
        return float(out) if scalar else out

    def site_fn(self):
        """Taped evaluation for retraining; gammas enter as frozen constants."""
        frozen = {
            loc: Tensor(self.gamma_value(loc))
            for loc in LOCATIONS
            if self.gamma_value(loc) is not None
        }

        def site(x):
            u1 = op_lib.eval_unary(self.ops["u1"], x, gamma=frozen.get("u1"), clamp=False)
            u2 = op_lib.eval_unary(self.ops["u2"], x, gamma=frozen.get("u2"), clamp=False)
            bot = op_lib.eval_binary(self.ops["b_bot"], u1, u2,
                                     gamma=frozen.get("b_bot"), clamp=False)
            u3 = op_lib.eval_unary(self.ops["u3"], bot, gamma=frozen.get("u3"), clamp=False)
            u4 = op_lib.eval_unary(self.ops["u4"], x, gamma=frozen.get("u4"), clamp=False)
            return op_lib.eval_binary(self.ops["b_top"], u3, u4,
                                      gamma=frozen.get("b_top"), clamp=False)

        return site

    @property
    def formula(self):
        from .symbolic import to_symbolic

        return to_symbolic(self)[1]

    def to_json(self):
        doc = {
            "format": "grafs-activation",
            "version": 1,
            "ops": {loc: self.ops[loc] for loc in LOCATIONS},
            "gammas": dict(sorted(self.gammas.items())),
            "provenance": self.provenance,
            "formula": self.formula,
        }
        return json.dumps(doc, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        doc = json.loads(text)
        if doc.get("format") != "grafs-activation":
            raise CellError("not an activation document")
        return cls(ops=doc["ops"], gammas=doc.get("gammas", {}),
                   provenance=doc.get("provenance", {}))
