import math

import numpy as np
import pytest
import torch
from torch import nn

from roam.errors import ShapeMismatch, SplitError
from roam.losses import (
    concat_batches, consistency_mse, loss_terms, soft_cross_entropy, split_predictions, total_loss,
)
from roam.net import build_net
from roam.types import Layer, MixupPlan, one_hot_encode

from conftest import random_simplex


def test_concat_and_split_round_trip():
    xl, xu = torch.rand(2, 1, 4, 4), torch.rand(2, 1, 4, 4)
    yl, yu = torch.rand(2, 3, 4, 4), torch.rand(2, 3, 4, 4)
    x, y, marker = concat_batches(xl, yl, xu, yu)
    assert x.shape[0] == 4 and marker == 2
    p_l, y_l, p_u, y_u = split_predictions(x, y, marker)
    assert torch.equal(p_l, xl) and torch.equal(p_u, xu) and torch.equal(y_l, yl) and torch.equal(y_u, yu)


def test_concat_empty_unlabeled():
    xl, yl = torch.rand(3, 1, 4, 4), torch.rand(3, 2, 4, 4)
    x, y, marker = concat_batches(xl, yl, xl[:0], yl[:0])
    assert x is xl and marker == 3


def test_concat_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        concat_batches(torch.rand(1, 1, 4, 4), torch.rand(1, 2, 4, 4), torch.rand(1, 1, 8, 8), torch.rand(1, 2, 8, 8))


def test_split_bad_marker():
    with pytest.raises(SplitError) as exc:
        split_predictions(torch.rand(2, 3), torch.rand(2, 3), 3)
    assert exc.value.code == "BAD_MARKER"
    p_l, _, p_u, _ = split_predictions(torch.rand(2, 3), torch.rand(2, 3), 2)
    assert p_u.shape[0] == 0


def test_ce_uniform_logits_is_log_c(rng):
    t = random_simplex(rng, (2, 3, 3), 5)
    assert float(soft_cross_entropy(torch.zeros(2, 5, 3, 3), t)) == pytest.approx(math.log(5), rel=1e-6)


def test_ce_large_margin_goes_to_zero():
    target = one_hot_encode(torch.tensor([[[1]]]), 3)
    logits = torch.zeros(1, 3, 1, 1)
    logits[0, 1] = 50.0
    assert float(soft_cross_entropy(logits, target)) < 1e-4


def test_ce_matches_scalar_oracle(rng):
    z = rng.normal(size=2)
    t = rng.uniform()
    tt = [t, 1 - t]
    lse = math.log(math.exp(z[0]) + math.exp(z[1]))
    expected = -sum(tt[c] * (z[c] - lse) for c in range(2))
    got = soft_cross_entropy(torch.tensor(z).reshape(1, 2, 1, 1), torch.tensor(tt, dtype=torch.float64).reshape(1, 2, 1, 1))
    assert float(got) == pytest.approx(expected, abs=1e-12)


def test_mse_zero_at_target(rng):
    t = random_simplex(rng, (2, 3, 3), 4).double()
    assert float(consistency_mse(t.log(), t)) == pytest.approx(0.0, abs=1e-12)


def test_mse_uniform_vs_one_hot():
    target = one_hot_encode(torch.tensor([[[0]]]), 2)
    assert float(consistency_mse(torch.zeros(1, 2, 1, 1), target)) == pytest.approx(0.25)


def test_mse_permutation_invariant(rng):
    z = torch.from_numpy(rng.normal(size=(4, 3, 2, 2)))
    t = random_simplex(rng, (4, 2, 2), 3).double()
    perm = torch.tensor([3, 1, 0, 2])
    assert float(consistency_mse(z[perm], t[perm])) == pytest.approx(float(consistency_mse(z, t)), abs=1e-14)


def test_loss_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        soft_cross_entropy(torch.zeros(1, 2, 2, 2), torch.zeros(1, 3, 2, 2))
    with pytest.raises(ShapeMismatch):
        consistency_mse(torch.zeros(1, 2, 2, 2), torch.zeros(1, 2, 3, 2))


def test_total_loss_beta_behaviour(rng):
    pl, pu = torch.from_numpy(rng.normal(size=(2, 3, 4, 4))), torch.from_numpy(rng.normal(size=(2, 3, 4, 4)))
    yl, yu = random_simplex(rng, (2, 4, 4), 3).double(), random_simplex(rng, (2, 4, 4), 3).double()
    l0 = float(total_loss(pl, yl, pu, yu, 0.0))
    assert l0 == pytest.approx(float(soft_cross_entropy(pl, yl)))
    l1, l2 = float(total_loss(pl, yl, pu, yu, 75.0)), float(total_loss(pl, yl, pu, yu, 150.0))
    assert l2 - l0 == pytest.approx(2 * (l1 - l0), rel=1e-10)
    assert l1 >= 0
    total, ce, mse = loss_terms(pl, yl, pu[:0], yu[:0], 75.0)
    assert mse is None and float(total) == float(ce)


class ToyNet(nn.Module):
    def __init__(self, c=3):
        super().__init__()
        self.a = nn.Conv2d(1, 4, 3, padding=1)
        self.b = nn.Conv2d(4, c, 1)

    def forward(self, x):
        return self.b(torch.tanh(self.a(x)))


def _flat_grad_vs_fd(model, loss_fn, eps=1e-6, coords=None):
    params = [p for p in model.parameters()]
    model.zero_grad()
    loss_fn().backward()
    analytic, numeric = [], []
    for p in params:
        flat = p.data.view(-1)
        idxs = range(flat.numel()) if coords is None else coords(flat.numel())
        for i in idxs:
            orig = flat[i].item()
            flat[i] = orig + eps
            up = float(loss_fn())
            flat[i] = orig - eps
            down = float(loss_fn())
            flat[i] = orig
            analytic.append(p.grad.view(-1)[i].item())
            numeric.append((up - down) / (2 * eps))
    return np.array(analytic), np.array(numeric)


def test_gradient_check_toy_net(rng):
    torch.manual_seed(0)
    net = ToyNet().double()
    x = torch.from_numpy(rng.uniform(size=(4, 1, 8, 8)))
    yl = one_hot_encode(torch.from_numpy(rng.integers(0, 3, (2, 8, 8))), 3).double()
    yu = random_simplex(rng, (2, 8, 8), 3).double()

    def loss():
        p = net(x)
        return total_loss(p[:2], yl, p[2:], yu, 75.0)

    a, n = _flat_grad_vs_fd(net, loss)
    rel = np.linalg.norm(a - n) / max(np.linalg.norm(a), np.linalg.norm(n))
    assert rel <= 1e-3
    big = np.abs(n) > 1e-6
    assert (np.abs(a - n)[big] / np.abs(n)[big]).max() <= 1e-3


def test_gradient_check_through_mixed_forward(rng):
    net = build_net(3, seed=2).double().eval()
    x = torch.from_numpy(rng.uniform(size=(4, 1, 16, 16)))
    y = torch.cat([one_hot_encode(torch.from_numpy(rng.integers(0, 3, (2, 16, 16))), 3).double(),
                   random_simplex(rng, (2, 16, 16), 3).double()])
    plan = MixupPlan(Layer.ENC2, 0.7, np.array([3, 2, 0, 1]), mix_skips=True)

    def loss():
        logits, ym = net.mixed_forward(x, y, plan)
        return total_loss(logits[:2], ym[:2], logits[2:], ym[2:], 75.0)

    pick = np.random.default_rng(0)
    a, n = _flat_grad_vs_fd(net, loss, coords=lambda size: pick.choice(size, size=min(size, 3), replace=False))
    rel = np.linalg.norm(a - n) / max(np.linalg.norm(a), np.linalg.norm(n))
    assert rel <= 1e-3
