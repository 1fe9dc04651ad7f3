import numpy as np
import pytest
import torch

from roam.errors import CheckpointError, LayerError, ShapeMismatch
from roam.net import (
    SKIP_SOURCES, build_net, load_checkpoint, make_checkpoint, net_from_checkpoint, parameter_count,
    save_checkpoint,
)
from roam.types import HIDDEN_LAYERS, LAYER_ORDER, Layer, MixupPlan


@pytest.fixture(scope="module")
def net():
    n = build_net(4, seed=11)
    # give batch-norm non-trivial running statistics
    n.train()
    with torch.no_grad():
        for _ in range(3):
            n(torch.rand(6, 1, 32, 32))
    return n.eval()


def test_input_split_returns_x(net):
    x = torch.rand(2, 1, 32, 32)
    h, skips = net.forward_to(x, Layer.INPUT)
    assert h is x and skips == {}


@pytest.mark.parametrize("kappa", LAYER_ORDER)
def test_two_pass_composition_is_bit_exact(net, kappa):
    x = torch.rand(3, 1, 32, 32)
    with torch.no_grad():
        full = net(x)
        h, skips = net.forward_to(x, kappa)
        assert torch.equal(net.forward_from(h, skips, kappa), full)


def test_last_split_holds_all_skips(net):
    h, skips = net.forward_to(torch.rand(2, 1, 32, 32), Layer.LAST)
    assert set(skips) == set(SKIP_SOURCES)
    assert h.shape == (2, 32, 32, 32)


@pytest.mark.parametrize("kappa", HIDDEN_LAYERS)
def test_hidden_widths_at_least_32(net, kappa):
    h, _ = net.forward_to(torch.rand(1, 1, 32, 32), kappa)
    assert h.shape[1] >= 32


def test_zero_classifier_gives_zero_logits():
    n = build_net(3, seed=0).eval()
    torch.nn.init.zeros_(n.classifier.weight)
    torch.nn.init.zeros_(n.classifier.bias)
    out = n.forward_from(torch.zeros(2, 32, 16, 16), {}, Layer.LAST)
    assert torch.equal(out, torch.zeros(2, 3, 16, 16))


def test_forward_from_deterministic(net):
    h, skips = net.forward_to(torch.rand(2, 1, 32, 32), Layer.ENC2)
    with torch.no_grad():
        assert torch.equal(net.forward_from(h, skips, Layer.ENC2), net.forward_from(h, skips, Layer.ENC2))


def test_errors(net):
    x = torch.rand(2, 1, 32, 32)
    with pytest.raises(LayerError) as exc:
        net.forward_to(x, "ENC7")
    assert exc.value.code == "UNKNOWN_LAYER"
    h, skips = net.forward_to(x, Layer.BOTTLENECK)
    with pytest.raises(LayerError) as exc:
        net.forward_from(h, {}, Layer.BOTTLENECK)
    assert exc.value.code == "MISSING_SKIP"
    with pytest.raises(ShapeMismatch):
        net.forward_from(h[:, :5], skips, Layer.BOTTLENECK)


@pytest.mark.parametrize("size", [16, 32, 48])
def test_output_shape(net, size):
    assert net(torch.rand(2, 1, size, size)).shape == (2, 4, size, size)


def test_parameter_count_independent_of_kappa_set():
    # injection points are views on existing stages: nothing to add
    assert parameter_count(build_net(4, seed=0)) == parameter_count(build_net(4, seed=1))


def test_passthrough_mixed_forward_is_plain_forward(net):
    x = torch.rand(4, 1, 32, 32)
    y = torch.softmax(torch.rand(4, 4, 32, 32), 1)
    with torch.no_grad():
        logits, ym = net.mixed_forward(x, y, MixupPlan.passthrough(4))
        assert torch.equal(logits, net(x)) and ym is y


def test_input_mixup_equivalence(net):
    x = torch.rand(4, 1, 32, 32)
    y = torch.softmax(torch.rand(4, 4, 32, 32), 1)
    perm = np.array([2, 3, 1, 0])
    plan = MixupPlan(Layer.INPUT, 0.7, perm)
    with torch.no_grad():
        logits, ym = net.mixed_forward(x, y, plan)
        ref = net(0.7 * x + 0.3 * x[perm])
    assert (logits - ref).abs().max() <= 1e-6
    assert torch.allclose(ym, 0.7 * y + 0.3 * y[perm])


class Capture:
    def __init__(self, net):
        self.seen = {}
        net.dec1.register_forward_pre_hook(self._hook("ENC2"))
        net.dec2.register_forward_pre_hook(self._hook("ENC1"))

    def _hook(self, name):
        def fn(module, args):
            self.seen[name] = args[0].detach().clone()
        return fn


@pytest.mark.parametrize("mix_skips", [False, True])
def test_bottleneck_skip_policy(mix_skips):
    n = build_net(4, seed=5).eval()
    cap = Capture(n)
    x = torch.rand(4, 1, 32, 32)
    y = torch.softmax(torch.rand(4, 4, 32, 32), 1)
    perm = np.array([1, 0, 3, 2])
    with torch.no_grad():
        _, skips = n.forward_to(x, Layer.BOTTLENECK)
        n.mixed_forward(x, y, MixupPlan(Layer.BOTTLENECK, 0.6, perm, mix_skips=mix_skips))
    w1 = n.widths[1]
    enc2_in_decoder = cap.seen["ENC2"][:, w1:]
    enc2 = skips[Layer.ENC2]
    expected = 0.6 * enc2 + 0.4 * enc2[perm] if mix_skips else enc2
    assert torch.allclose(enc2_in_decoder, expected, atol=1e-6)


def test_checkpoint_round_trip(tmp_path, net):
    ckpt = make_checkpoint(net, epoch=7, rng_state={"perm": {"s": 1}})
    save_checkpoint(ckpt, tmp_path / "c.pt")
    loaded = load_checkpoint(tmp_path / "c.pt")
    assert loaded["format_version"] == 1 and loaded["epoch"] == 7
    n2 = net_from_checkpoint(loaded, 4).eval()
    x = torch.rand(2, 1, 32, 32)
    with torch.no_grad():
        assert torch.equal(n2(x), net(x))


def test_checkpoint_errors(tmp_path, net):
    ckpt = make_checkpoint(net)
    with pytest.raises(CheckpointError) as exc:
        net_from_checkpoint(ckpt, 3)
    assert exc.value.code == "INCOMPATIBLE_CHECKPOINT"
    with pytest.raises(CheckpointError):
        net_from_checkpoint({**ckpt, "format_version": 99})
    with pytest.raises(CheckpointError) as exc:
        load_checkpoint(tmp_path / "missing.pt")
    assert exc.value.code == "MISSING_CHECKPOINT"


def test_seeded_init_is_reproducible():
    a, b = build_net(4, seed=3), build_net(4, seed=3)
    assert all(torch.equal(p, q) for p, q in zip(a.parameters(), b.parameters()))
    c = build_net(4, seed=4)
    assert not torch.equal(a.enc1[0].weight, c.enc1[0].weight)
