"""Per-op gradient checks for the tape against central finite differences."""

import numpy as np
import pytest

from ratectl import autodiff as ad


def fd_grad(f, x, h=1e-6):
    g = np.zeros_like(x)
    flat = x.ravel()
    gflat = g.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = f()
        flat[i] = orig - h
        down = f()
        flat[i] = orig
        gflat[i] = (up - down) / (2 * h)
    return g


def check_op(build, *arrays, rtol=1e-6):
    """build(*leaves) must return a scalar Tensor."""
    leaves = [ad.leaf(a) for a in arrays]
    out = build(*leaves)
    out.backward()
    for leaf_t, arr in zip(leaves, arrays):
        def value():
            fresh = [ad.leaf(a) for a in arrays]
            return float(build(*fresh).value)
        # n.b. fd perturbs the shared underlying array in place
        fd = fd_grad(value, arr)
        np.testing.assert_allclose(leaf_t.grad, fd, rtol=rtol, atol=1e-8)


rng = np.random.default_rng(0)


def test_matmul_and_add():
    a = rng.normal(size=(3, 4))
    b = rng.normal(size=(4, 5))
    c = rng.normal(size=(5,))
    w = rng.normal(size=(3,))

    def build(at, bt, ct):
        out = ad.add(ad.matmul(at, bt), ct)
        return ad.pinball(out, np.zeros(3), np.full(5, 0.5), w)

    check_op(build, a, b, c)


def test_relu_tanh_chain():
    x = rng.normal(size=(4, 6)) + 0.3

    def build(xt):
        return ad.pinball(ad.tanh(ad.relu(xt)), np.zeros(4), np.full(6, 0.3),
                          np.ones(4))

    check_op(build, x)


def test_layer_norm():
    x = rng.normal(size=(5, 8))
    g = rng.normal(size=(8,)) + 1.0
    b = rng.normal(size=(8,))

    def build(xt, gt, bt):
        return ad.pinball(ad.layer_norm(xt, gt, bt), np.zeros(5),
                          np.full(8, 0.7), np.ones(5))

    check_op(build, x, g, b, rtol=1e-5)


def test_softmax_cross_entropy_grad_and_value():
    logits = rng.normal(size=(6, 5))
    targets = rng.dirichlet(np.ones(5), size=6)
    weights = rng.uniform(0.1, 1.0, size=6)

    def build(lt):
        return ad.softmax_cross_entropy(lt, targets, weights)

    check_op(build, logits)

    # value agrees with a direct computation
    t = ad.leaf(logits)
    out = ad.softmax_cross_entropy(t, targets, weights)
    probs = np.exp(logits) / np.exp(logits).sum(-1, keepdims=True)
    direct = (-(targets * np.log(probs)).sum(-1) * weights).sum()
    assert float(out.value) == pytest.approx(direct, rel=1e-12)


def test_cross_entropy_vanishes_on_confident_match():
    targets = np.zeros((1, 4))
    targets[0, 2] = 1.0
    logits = ad.leaf(np.where(targets > 0, 50.0, -50.0))
    out = ad.softmax_cross_entropy(logits, targets, np.ones(1))
    assert float(out.value) < 1e-12


def test_pinball_zero_at_exact_fit():
    taus = np.array([0.25, 0.75])
    preds = ad.leaf(np.full((3, 2), 1.7))
    out = ad.pinball(preds, np.full(3, 1.7), taus, np.ones(3))
    assert float(out.value) == 0.0


def test_pinball_grad():
    preds = rng.normal(size=(4, 8))
    targets = rng.normal(size=4) + 0.5
    taus = (np.arange(8) + 0.5) / 8
    weights = rng.uniform(0.2, 1.0, 4)

    def build(pt):
        return ad.pinball(pt, targets, taus, weights)

    check_op(build, preds)


def test_l2_penalty_and_add_all():
    a = rng.normal(size=(3, 3))
    b = rng.normal(size=(4,))

    def build(at, bt):
        return ad.add_all([ad.l2_penalty([at, bt], 0.003),
                           ad.pinball(at, np.zeros(3), np.full(3, 0.5), np.ones(3))])

    check_op(build, a, b)


def test_backward_requires_scalar():
    t = ad.leaf(np.ones(3))
    with pytest.raises(ValueError):
        t.backward()


def test_shared_subgraph_accumulates():
    x = ad.leaf(np.array(2.0).reshape(1, 1))
    y = ad.matmul(x, x)      # x^2; gradient flows through both parents
    s = ad.pinball(y, np.array([0.0]), np.array([0.5]), np.ones(1))
    s.backward()
    # u = -4 < 0 so dloss/dy = 1 - 0.5; dy/dx = 2x
    assert x.grad[0, 0] == pytest.approx(0.5 * 2 * 2.0)


def test_quantile_head_recovers_uniform_quantiles():
    """Pinball-trained quantile outputs converge to the target distribution."""
    n_q = 8
    taus = (np.arange(n_q) + 0.5) / n_q
    rng_local = np.random.default_rng(42)
    w = ad.leaf(np.zeros((1, n_q)))
    for step in range(3000):
        targets = rng_local.uniform(0.0, 1.0, size=64)
        x = ad.leaf(np.ones((64, 1)))
        preds = ad.matmul(x, w)
        loss = ad.pinball(preds, targets, taus, np.full(64, 1.0 / 64))
        loss.backward()
        w.value -= 0.05 * w.grad
        w.grad = None
    np.testing.assert_allclose(w.value[0], taus, atol=0.05)
