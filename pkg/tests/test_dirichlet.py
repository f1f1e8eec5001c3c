import numpy as np

from grafs import autodiff as ad
from grafs.autodiff import Tape
from grafs.dirichlet import dirichlet_weights, gamma_shape_grad, sample_gamma
from grafs.autodiff import Tensor


def test_samples_lie_on_simplex(rng):
    rho = Tensor(np.array([0.4, 1.0, 2.5]), requires_grad=True)
    for _ in range(200):
        w = dirichlet_weights(rho, rng)
        assert abs(w.data.sum() - 1.0) <= 1e-12
        assert np.all(w.data >= 0)


def test_empirical_mean_matches_concentration_ratio(rng):
    # Dir(2, 1, 1) has mean (0.5, 0.25, 0.25)
    rho = Tensor(np.array([2.0, 1.0, 1.0]))
    n = 100_000
    z = rng.gamma(np.tile(rho.data, (n, 1)))
    w = z / z.sum(axis=1, keepdims=True)
    np.testing.assert_allclose(w.mean(axis=0), [0.5, 0.25, 0.25], atol=0.01)


def test_mc_gradient_matches_analytic_dirichlet_moment(rng):
    # d E[w1] / d rho1 = rho2 / (rho1 + rho2)^2, checked pathwise
    n = 100_000
    for _ in range(4):
        r1, r2 = rng.uniform(0.3, 3.0, size=2)
        z1 = rng.gamma(r1, size=n)
        z2 = rng.gamma(r2, size=n)
        s = z1 + z2
        est = (z2 / s**2) * gamma_shape_grad(z1, np.full(n, r1))
        sem = est.std(ddof=1) / np.sqrt(n)
        analytic = r2 / (r1 + r2) ** 2
        assert abs(est.mean() - analytic) < 3 * sem, (r1, r2)


def test_zero_upstream_gives_zero_rho_gradient(rng):
    rho = Tensor(np.array([1.0, 1.0]), requires_grad=True)
    with Tape() as tape:
        w = dirichlet_weights(rho, rng)
        loss = ad.reduce_sum(ad.mul(w, Tensor([0.0, 0.0])))
        tape.backward(loss)
    np.testing.assert_array_equal(rho.gradient(), [0.0, 0.0])


def test_symmetric_loss_gives_symmetric_gradient_in_expectation(rng):
    # loss = sum w_i^2 is exchangeable under rho = (c, c)
    rho = Tensor(np.array([1.5, 1.5]), requires_grad=True)
    n = 20_000
    grads = np.zeros(2)
    for _ in range(n):
        rho.grad = None
        with Tape() as tape:
            w = dirichlet_weights(rho, rng)
            tape.backward(ad.reduce_sum(ad.mul(w, w)))
        grads += rho.grad
    grads /= n
    # components agree within a loose statistical tolerance
    assert abs(grads[0] - grads[1]) < 0.02, grads


def test_tape_records_gamma_draw_gradient(rng):
    rho = Tensor(np.array([2.0, 1.0]), requires_grad=True)
    with Tape() as tape:
        z = sample_gamma(rho, rng)
        tape.backward(ad.reduce_sum(z))
    expected = gamma_shape_grad(z.data, rho.data)
    np.testing.assert_allclose(rho.grad, expected, rtol=1e-12)


def test_extreme_draws_yield_zero_not_nan():
    g = gamma_shape_grad(np.array([1e-300, 700.0]), np.array([1e-3, 1e-3]))
    assert np.all(np.isfinite(g))
