"""Gradient-based search over the space of scalar activation functions.

A fixed computation cell (four unary edges, two binary vertices) is relaxed
onto probability simplices, the simplex weights are sampled from learnable
Dirichlet distributions, and the concentrations are trained bi-level against
a small network: validation loss updates the distribution, training loss
updates the network weights. A logarithmic schedule progressively drops the
weakest operations until a single discrete, symbolically renderable
activation remains.
"""

__version__ = "0.1.0"

from .autodiff import (
    Adam,
    AdamW,
    SGD,
    Tape,
    Tensor,
    finite_difference_grad,
    make_optimizer,
)
from .cell import (
    CellDistribution,
    CellSample,
    DiscreteActivation,
    discretize,
    drop_op,
    eval_cell,
    sample_cell,
)
from .data import Dataset, batches, gen_blobs, gen_spirals, load_csv, load_idx, save_csv, split
from .formulas import FORMULA_IDS, eval_discovered
from .models import (
    ModelSpec,
    build_model,
    evaluate,
    load_checkpoint,
    mean_and_sem,
    save_checkpoint,
    train_step,
)
from .ops import (
    BINARY_OPS,
    UNARY_OPS,
    clamp_output,
    eval_baseline,
    eval_binary,
    eval_unary,
)
from .schedule import build_shrink_schedule
from .search import (
    OptimizerSpec,
    SearchConfig,
    anchor_penalty,
    drop_ops,
    fit,
    run_drnas_baseline,
    run_grafs,
)
from .symbolic import to_symbolic

__all__ = [
    "__version__",
    "Tensor",
    "Tape",
    "SGD",
    "Adam",
    "AdamW",
    "make_optimizer",
    "finite_difference_grad",
    "UNARY_OPS",
    "BINARY_OPS",
    "eval_unary",
    "eval_binary",
    "eval_baseline",
    "eval_discovered",
    "FORMULA_IDS",
    "clamp_output",
    "CellDistribution",
    "CellSample",
    "DiscreteActivation",
    "sample_cell",
    "eval_cell",
    "drop_op",
    "discretize",
    "to_symbolic",
    "build_shrink_schedule",
    "SearchConfig",
    "OptimizerSpec",
    "anchor_penalty",
    "drop_ops",
    "run_grafs",
    "run_drnas_baseline",
    "fit",
    "ModelSpec",
    "build_model",
    "train_step",
    "evaluate",
    "mean_and_sem",
    "save_checkpoint",
    "load_checkpoint",
    "Dataset",
    "gen_spirals",
    "gen_blobs",
    "load_csv",
    "save_csv",
    "load_idx",
    "split",
    "batches",
]
