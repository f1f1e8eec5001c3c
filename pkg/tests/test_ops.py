import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from grafs import autodiff as ad
from grafs.autodiff import Tape, Tensor, finite_difference_grad
from grafs.ops import (
    BINARY_OPS,
    BINARY_ORDER,
    GAMMA_BINARY,
    GAMMA_UNARY,
    OpError,
    UNARY_OPS,
    UNARY_ORDER,
    clamp_output,
    eval_baseline,
    eval_binary,
    eval_unary,
)

import oracles
from conftest import rel_err

# sampling windows that stay clear of each op's non-differentiable loci
KINKED_UNARY = {"abs", "min0", "max0", "leaky_relu", "sqrt", "elu"}
KINKED_BINARY = {"max", "min"}


def _unary_points(rng, name, n=50):
    pts = rng.uniform(-3.0, 3.0, size=n)
    if name in KINKED_UNARY:
        pts = np.where(np.abs(pts) < 0.1, pts + 0.25 * np.sign(pts + 0.5), pts)
    return pts


def test_op_catalogue_cardinality():
    assert len(UNARY_ORDER) == 23
    assert len(BINARY_ORDER) == 9
    assert set(GAMMA_UNARY) == {"const", "scale", "shift"}
    assert set(GAMMA_BINARY) == {"mix"}


@pytest.mark.parametrize("name", UNARY_ORDER)
def test_unary_derivative_matches_finite_differences(name, rng):
    x = Tensor(_unary_points(rng, name), requires_grad=True)
    gamma = Tensor(0.7, requires_grad=True) if name in GAMMA_UNARY else None
    mix = Tensor(rng.normal(size=x.shape))

    def forward():
        y = eval_unary(name, x, gamma=gamma, clamp=False)
        return ad.reduce_sum(ad.mul(y, mix))

    with Tape() as tape:
        tape.backward(forward())

    params = [x] if gamma is None else [x, gamma]
    fd = finite_difference_grad(lambda: forward().item(), params)
    assert rel_err(x.gradient(), fd[0]) < 1e-6, name
    if gamma is not None:
        assert rel_err(gamma.gradient(), fd[1]) < 1e-6, name


@pytest.mark.parametrize("name", BINARY_ORDER)
def test_binary_derivative_matches_finite_differences(name, rng):
    a = rng.uniform(-3.0, 3.0, size=50)
    b = rng.uniform(-3.0, 3.0, size=50)
    if name in KINKED_BINARY:
        b = np.where(np.abs(a - b) < 0.1, b + 0.5, b)
    x1 = Tensor(a, requires_grad=True)
    x2 = Tensor(b, requires_grad=True)
    gamma = Tensor(0.3, requires_grad=True) if name in GAMMA_BINARY else None
    mix = Tensor(rng.normal(size=a.shape))

    def forward():
        y = eval_binary(name, x1, x2, gamma=gamma, clamp=False)
        return ad.reduce_sum(ad.mul(y, mix))

    with Tape() as tape:
        tape.backward(forward())

    params = [x1, x2] + ([gamma] if gamma is not None else [])
    fd = finite_difference_grad(lambda: forward().item(), params)
    assert rel_err(x1.grad, fd[0]) < 1e-6, name
    assert rel_err(x2.grad, fd[1]) < 1e-6, name
    if gamma is not None:
        assert rel_err(gamma.grad, fd[2]) < 1e-6, name


class TestClamp:
    def test_exp_of_five_truncates_to_limit(self):
        y = eval_unary("exp", Tensor([5.0]))
        assert y.data[0] == 10.0

    def test_inside_band_passes_through(self):
        y = clamp_output(Tensor([-3.0]))
        assert y.data[0] == -3.0

    def test_outside_band_truncates_and_kills_gradient(self):
        x = Tensor([-12.0, 2.0], requires_grad=True)
        with Tape() as tape:
            y = clamp_output(x)
            tape.backward(ad.reduce_sum(y))
        np.testing.assert_array_equal(y.data, [-10.0, 2.0])
        np.testing.assert_array_equal(x.grad, [0.0, 1.0])

    def test_invalid_limit_rejected(self):
        with pytest.raises(OpError):
            clamp_output(Tensor([1.0]), limit=0.0)

    @given(st.floats(allow_nan=False, allow_infinity=False, width=64))
    @settings(max_examples=300, deadline=None)
    def test_every_op_output_bounded_for_any_finite_input(self, x):
        gamma = Tensor(0.5)
        for name in UNARY_ORDER:
            g = gamma if name in GAMMA_UNARY else None
            y = eval_unary(name, Tensor([x]), gamma=g)
            assert np.isfinite(y.data[0]) and abs(y.data[0]) <= 10.0, (name, x)
        for name in BINARY_ORDER:
            g = gamma if name in GAMMA_BINARY else None
            y = eval_binary(name, Tensor([x]), Tensor([0.5 * x]), gamma=g)
            assert np.isfinite(y.data[0]) and abs(y.data[0]) <= 10.0, (name, x)


class TestUnaryValues:
    def test_softplus_zero_is_log_two(self):
        y = eval_unary("softplus", Tensor([0.0]), clamp=False)
        assert math.isclose(y.data[0], 0.6931471805599453, rel_tol=1e-12)

    def test_gelu_one(self):
        # 0.5 * (1 + erf(1/sqrt(2))) from the series oracle
        y = eval_unary("gelu", Tensor([1.0]), clamp=False)
        assert math.isclose(y.data[0], 0.8413447460685429, rel_tol=1e-12)

    def test_negation(self):
        y = eval_unary("neg", Tensor([5.0]), clamp=False)
        assert y.data[0] == -5.0

    def test_signed_sqrt_is_odd(self):
        y = eval_unary("sqrt", Tensor([-4.0, 4.0]), clamp=False)
        np.testing.assert_allclose(y.data, [-2.0, 2.0], rtol=1e-15)

    def test_gamma_required_iff_gamma_bearing(self):
        with pytest.raises(OpError, match="requires a gamma"):
            eval_unary("scale", Tensor([1.0]))
        with pytest.raises(OpError, match="does not take"):
            eval_unary("tanh", Tensor([1.0]), gamma=Tensor(1.0))

    def test_unknown_op_rejected(self):
        with pytest.raises(OpError, match="unknown unary"):
            eval_unary("cosine", Tensor([1.0]))


class TestBinaryValues:
    def test_projections_exact(self):
        left = eval_binary("left", Tensor([3.0]), Tensor([99.0]), clamp=False)
        right = eval_binary("right", Tensor([3.0]), Tensor([99.0]), clamp=False)
        assert left.data[0] == 3.0
        assert right.data[0] == 99.0
        # with the clamp active, projections are exact within the band,
        # which is the regime they see inside the cell
        assert eval_binary("left", Tensor([3.0]), Tensor([99.0])).data[0] == 3.0
        assert eval_binary("right", Tensor([3.0]), Tensor([-7.0])).data[0] == -7.0

    def test_gate_at_zero_is_half(self):
        y = eval_binary("gate", Tensor([0.0]), Tensor([7.0]), clamp=False)
        assert y.data[0] == 3.5

    def test_mix_reproduces_published_blend(self):
        # sigma(gamma) = 0.4756 on (relu(-1), gelu(-1)); expected value frozen
        # from 0.5244 * gelu(-1) computed with the high-precision oracle
        gamma = Tensor(math.log(0.4756 / 0.5244))
        a = Tensor([eval_baseline("relu", -1.0)])
        b = Tensor([eval_baseline("gelu", -1.0)])
        y = eval_binary("mix", a, b, gamma=gamma, clamp=False)
        assert math.isclose(y.data[0], -0.0831988, abs_tol=5e-7)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ad.ShapeError, match="add"):
            eval_binary("add", Tensor([1.0, 2.0]), Tensor([1.0]))


class TestBaselines:
    def test_relu_negative(self):
        assert eval_baseline("ReLU", -2.0) == 0.0

    def test_silu_zero(self):
        assert eval_baseline("SiLU", 0.0) == 0.0

    def test_elu_minus_one(self):
        assert math.isclose(eval_baseline("ELU", -1.0), -0.6321205588285577, rel_tol=1e-12)

    def test_leaky_relu_default_slope(self):
        assert math.isclose(eval_baseline("LeakyReLU", -3.0), -0.03, rel_tol=1e-15)

    def test_unknown_baseline_rejected(self):
        with pytest.raises(OpError, match="unknown baseline"):
            eval_baseline("mish", 1.0)

    @pytest.mark.parametrize("name,fn", [
        ("relu", oracles.relu),
        ("gelu", oracles.gelu),
        ("silu", oracles.silu),
        ("elu", oracles.elu),
        ("leaky_relu", oracles.leaky_relu),
    ])
    def test_baselines_match_series_oracles(self, name, fn, rng):
        for x in rng.uniform(-8, 8, size=40):
            assert math.isclose(eval_baseline(name, x), fn(float(x)),
                                rel_tol=1e-11, abs_tol=1e-300), (name, x)
