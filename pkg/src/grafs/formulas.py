"""Closed-form evaluators for the fifteen published search results.

Three families of five activations each, found on residual CNNs (F_RN),
vision transformers (F_ViT) and GPT-style language models (F_GPT). These
are final, frozen activations: no output clamping applies. Each entry
carries an analytic derivative so the formulas can serve directly as
trainable network activations.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .ops import UNARY_OPS, gelu, leaky_relu, relu, silu

__all__ = [
    "FORMULAS",
    "FORMULA_IDS",
    "eval_discovered",
    "discovered_grad",
    "canonical_formula_id",
    "discovered_site_fn",
]

_d_gelu = UNARY_OPS["gelu"].dfn
_d_silu = UNARY_OPS["silu"].dfn
_d_relu = UNARY_OPS["max0"].dfn
_d_lrelu = UNARY_OPS["leaky_relu"].dfn


def _f_rn_1(x):
    return 0.4739 * leaky_relu(leaky_relu(x)) + 0.5261 * gelu(x)


def _d_rn_1(x):
    return 0.4739 * _d_lrelu(leaky_relu(x)) * _d_lrelu(x) + 0.5261 * _d_gelu(x)


def _f_rn_2(x):
    return 0.5163 * leaky_relu(0.4945 * relu(x) + 0.5055 * gelu(x)) + 0.4837 * gelu(x)


def _d_rn_2(x):
    u = 0.4945 * relu(x) + 0.5055 * gelu(x)
    du = 0.4945 * _d_relu(x) + 0.5055 * _d_gelu(x)
    return 0.5163 * _d_lrelu(u) * du + 0.4837 * _d_gelu(x)


def _f_rn_3(x):
    return 0.4865 * gelu(0.4873 * relu(x) + 0.5127 * gelu(x)) + 0.5135 * gelu(x)


def _d_rn_3(x):
    u = 0.4873 * relu(x) + 0.5127 * gelu(x)
    du = 0.4873 * _d_relu(x) + 0.5127 * _d_gelu(x)
    return 0.4865 * _d_gelu(u) * du + 0.5135 * _d_gelu(x)


def _f_rn_4(x):
    return 0.4756 * relu(x) + 0.5244 * gelu(x)


def _d_rn_4(x):
    return 0.4756 * _d_relu(x) + 0.5244 * _d_gelu(x)


def _f_rn_5(x):
    return 0.4591 * leaky_relu(0.5267 * leaky_relu(x) + 0.4733 * gelu(x)) + 0.5409 * gelu(x)


def _d_rn_5(x):
    u = 0.5267 * leaky_relu(x) + 0.4733 * gelu(x)
    du = 0.5267 * _d_lrelu(x) + 0.4733 * _d_gelu(x)
    return 0.4591 * _d_lrelu(u) * du + 0.5409 * _d_gelu(x)


def _f_vit_1(x):
    return 0.6601 * gelu(silu(x) * gelu(x)) + 0.3399 * x**2


def _d_gelu_silu_gelu(x):
    u = silu(x) * gelu(x)
    return _d_gelu(u) * (_d_silu(x) * gelu(x) + silu(x) * _d_gelu(x))


def _d_vit_1(x):
    return 0.6601 * _d_gelu_silu_gelu(x) + 0.3399 * 2.0 * x


def _f_vit_2(x):
    return 0.7322 * silu(0.2822 * x**2 + 0.7178 * gelu(x)) + 0.2678 * x**2


def _d_vit_2(x):
    u = 0.2822 * x**2 + 0.7178 * gelu(x)
    du = 0.2822 * 2.0 * x + 0.7178 * _d_gelu(x)
    return 0.7322 * _d_silu(u) * du + 0.2678 * 2.0 * x


def _f_vit_3(x):
    return 0.7319 * gelu(silu(x) * gelu(x)) + 0.2681 * x**2


def _d_vit_3(x):
    return 0.7319 * _d_gelu_silu_gelu(x) + 0.2681 * 2.0 * x


def _f_vit_4(x):
    return 0.6778 * gelu(silu(x) * gelu(x)) + 0.3222 * x**2


def _d_vit_4(x):
    return 0.6778 * _d_gelu_silu_gelu(x) + 0.3222 * 2.0 * x


def _f_vit_5(x):
    return 0.3139 * x**2 + 0.5431 * gelu(x)


def _d_vit_5(x):
    return 0.3139 * 2.0 * x + 0.5431 * _d_gelu(x)


def _f_gpt_1(x):
    return 0.4953 * leaky_relu(x) * gelu(x) + 0.5047 * relu(x)


def _d_gpt_1(x):
    return (
        0.4953 * (_d_lrelu(x) * gelu(x) + leaky_relu(x) * _d_gelu(x))
        + 0.5047 * _d_relu(x)
    )


def _f_gpt_2(x):
    return (0.4689 * gelu(x) + 0.5311) * relu(x)


def _d_gpt_2(x):
    return 0.4689 * _d_gelu(x) * relu(x) + (0.4689 * gelu(x) + 0.5311) * _d_relu(x)


def _f_gpt_3(x):
    return (0.4662 * np.sinh(x) + 0.5338) * gelu(x)


def _d_gpt_3(x):
    return 0.4662 * np.cosh(x) * gelu(x) + (0.4662 * np.sinh(x) + 0.5338) * _d_gelu(x)


def _f_gpt_4(x):
    return 0.4781 * relu(x) ** 2 + 0.5219 * relu(x)


def _d_gpt_4(x):
    return (0.4781 * 2.0 * relu(x) + 0.5219) * _d_relu(x)


def _f_gpt_5(x):
    return 0.4828 * relu(x) ** 2 + 0.5172 * relu(x)


def _d_gpt_5(x):
    return (0.4828 * 2.0 * relu(x) + 0.5172) * _d_relu(x)


FORMULAS = {
    "F_RN_1": (_f_rn_1, _d_rn_1),
    "F_RN_2": (_f_rn_2, _d_rn_2),
    "F_RN_3": (_f_rn_3, _d_rn_3),
    "F_RN_4": (_f_rn_4, _d_rn_4),
    "F_RN_5": (_f_rn_5, _d_rn_5),
    "F_ViT_1": (_f_vit_1, _d_vit_1),
    "F_ViT_2": (_f_vit_2, _d_vit_2),
    "F_ViT_3": (_f_vit_3, _d_vit_3),
    "F_ViT_4": (_f_vit_4, _d_vit_4),
    "F_ViT_5": (_f_vit_5, _d_vit_5),
    "F_GPT_1": (_f_gpt_1, _d_gpt_1),
    "F_GPT_2": (_f_gpt_2, _d_gpt_2),
    "F_GPT_3": (_f_gpt_3, _d_gpt_3),
    "F_GPT_4": (_f_gpt_4, _d_gpt_4),
    "F_GPT_5": (_f_gpt_5, _d_gpt_5),
}

FORMULA_IDS = tuple(FORMULAS)

_CANONICAL = {k.lower(): k for k in FORMULAS}


def canonical_formula_id(name):
    key = name.strip().lower().replace("^", "_").replace("-", "_")
    if key in _CANONICAL:
        return _CANONICAL[key]
    raise KeyError(f"unknown discovered-activation id {name!r}; expected one of {FORMULA_IDS}")


def eval_discovered(formula_id, x):
    """Evaluate a published activation at x (scalar or ndarray)."""
    fn = FORMULAS[canonical_formula_id(formula_id)][0]
    scalar = np.isscalar(x)
    out = fn(np.asarray(x, dtype=np.float64))
    return float(out) if scalar else out


def discovered_grad(formula_id, x):
    fn = FORMULAS[canonical_formula_id(formula_id)][1]
    scalar = np.isscalar(x)
    out = fn(np.asarray(x, dtype=np.float64))
    return float(out) if scalar else out


def discovered_site_fn(formula_id):
    """Tape-recorded application for use as a network activation."""
    fid = canonical_formula_id(formula_id)
    fn, dfn = FORMULAS[fid]

    def site(x):
        return ad.unary(x, fn, dfn, label=fid)

    return site
