import numpy as np
import pytest
import torch

from conftest import finite_difference_grads, relative_error
from raydiance.config import EncoderConfig
from raydiance.encoder import RayFeatureExtractor, init_encoder, receptive_field


def _param_count(cfg: EncoderConfig, in_dim: int) -> int:
    """Closed-form parameter count, summed layer by layer by hand."""
    w, k = cfg.width, cfg.kernel
    total = in_dim * w + w                     # first pointwise layer
    total += (cfg.point_layers - 1) * (w * w + w)
    total += cfg.down_layers * (w * w * k + w)  # strided convs
    total += cfg.down_layers * (2 * w * w + w)  # post-upsample pointwise
    return total


class TestInit:
    def test_deterministic(self):
        cfg = EncoderConfig(width=16, updown_layers=4, kernel=3, depth_total=8)
        a = init_encoder(cfg, 6, seed=3)
        b = init_encoder(cfg, 6, seed=3)
        for pa, pb in zip(a.parameters(), b.parameters()):
            assert torch.equal(pa, pb)

    def test_seed_changes_parameters(self):
        cfg = EncoderConfig(width=16, updown_layers=4, kernel=3, depth_total=8)
        a = init_encoder(cfg, 6, seed=3)
        b = init_encoder(cfg, 6, seed=4)
        assert any(not torch.equal(pa, pb)
                   for pa, pb in zip(a.parameters(), b.parameters()))

    def test_parameter_count(self):
        cfg = EncoderConfig(width=16, updown_layers=4, kernel=3, depth_total=8)
        enc = init_encoder(cfg, 6, seed=0)
        assert sum(p.numel() for p in enc.parameters()) == _param_count(cfg, 6)

    def test_biases_zero(self):
        cfg = EncoderConfig(width=8, updown_layers=2, kernel=3, depth_total=3)
        enc = init_encoder(cfg, 4, seed=0)
        for name, p in enc.named_parameters():
            if name.endswith("bias"):
                assert torch.equal(p, torch.zeros_like(p))


class TestForward:
    def test_output_shape(self):
        cfg = EncoderConfig(width=16, updown_layers=4, kernel=3, depth_total=8)
        enc = init_encoder(cfg, 6, seed=0)
        out = enc(torch.randn(8, 6))
        assert out.shape == (8, 16)

    def test_zero_params_zero_output(self):
        cfg = EncoderConfig(width=16, updown_layers=4, kernel=3, depth_total=8)
        enc = RayFeatureExtractor(cfg, 6)
        with torch.no_grad():
            for p in enc.parameters():
                p.zero_()
        out = enc(torch.randn(2, 8, 6))
        assert torch.equal(out, torch.zeros(2, 8, 16))

    @pytest.mark.parametrize("n_samples,down", [(8, 2), (12, 1), (32, 2)])
    def test_length_preserved(self, n_samples, down):
        cfg = EncoderConfig(width=8, updown_layers=2 * down, kernel=3,
                            depth_total=2 * down + 2)
        enc = init_encoder(cfg, 5, seed=1)
        assert enc(torch.randn(3, n_samples, 5)).shape == (3, n_samples, 8)

    def test_indivisible_length_rejected(self):
        cfg = EncoderConfig(width=8, updown_layers=4, kernel=3, depth_total=8)
        enc = init_encoder(cfg, 5, seed=1)
        with pytest.raises(ValueError, match="divisible"):
            enc(torch.randn(3, 6, 5))

    def test_deterministic_forward(self):
        cfg = EncoderConfig(width=16, updown_layers=4, kernel=3, depth_total=8)
        enc = init_encoder(cfg, 6, seed=0)
        x = torch.randn(4, 8, 6)
        assert torch.equal(enc(x), enc(x))


def _oracle_single_pair(x, w_point, w_down, w_up):
    """Direct numpy computation of one pointwise + one down/up pair.

    Explicit loops; mirrors the module contract, not its implementation.
    x: (D,) single-channel input; w_point: scalar weight; w_down: (3,) kernel;
    w_up: (2,) weights over [upsampled, skip] channels.  All biases zero.
    """
    d = x.size
    h = np.maximum(0.0, w_point * x)           # kernel-1 layer, width 1
    skip = h
    # kernel-3 stride-2 zero-padded convolution
    padded = np.concatenate([[0.0], h, [0.0]])
    down = np.zeros(d // 2)
    for j in range(d // 2):
        acc = 0.0
        for m in range(3):
            acc += w_down[m] * padded[2 * j + m]
        down[j] = max(0.0, acc)
    # endpoint-aligned linear interpolation back to length d
    n = d // 2
    up = np.zeros(d)
    for j in range(d):
        pos = j * (n - 1) / (d - 1)
        i0 = min(int(np.floor(pos)), n - 2)
        frac = pos - i0
        up[j] = (1 - frac) * down[i0] + frac * down[i0 + 1]
    # pointwise layer over [up, skip] channels
    return np.maximum(0.0, w_up[0] * up + w_up[1] * skip)


def test_matches_direct_convolution_oracle():
    cfg = EncoderConfig(width=1, updown_layers=2, kernel=3, depth_total=3)
    enc = RayFeatureExtractor(cfg, 1).double()
    w_point, w_down, w_up = 0.7, np.array([0.2, -0.5, 0.9]), np.array([1.3, -0.4])
    with torch.no_grad():
        enc.point_layers[0].weight[:] = w_point
        enc.point_layers[0].bias.zero_()
        enc.down_layers[0].weight[0, 0] = torch.tensor(w_down)
        enc.down_layers[0].bias.zero_()
        enc.up_layers[0].weight[0] = torch.tensor(w_up)
        enc.up_layers[0].bias.zero_()
    x = np.linspace(-1.0, 1.0, 8)              # ramp input
    with torch.no_grad():
        got = enc(torch.tensor(x)[:, None]).numpy().ravel()
    want = _oracle_single_pair(x, w_point, w_down, w_up)
    np.testing.assert_allclose(got, want, atol=1e-12)


class TestReceptiveField:
    def test_no_updown_is_one(self):
        assert receptive_field(EncoderConfig(width=8, updown_layers=0,
                                             kernel=3, depth_total=4)) == 1

    def test_kernel_one_is_one(self):
        assert receptive_field(EncoderConfig(width=8, updown_layers=4,
                                             kernel=1, depth_total=8)) == 1

    def test_two_downs_kernel_three(self):
        cfg = EncoderConfig(width=8, updown_layers=4, kernel=3, depth_total=8)
        assert receptive_field(cfg) == 7

    def test_perturbation_probe(self):
        # bottleneck feature i must react to exactly the inputs within the
        # analytic receptive field centered on its stride-4 position
        cfg = EncoderConfig(width=8, updown_layers=4, kernel=3, depth_total=8)
        torch.manual_seed(0)
        enc = RayFeatureExtractor(cfg, 4).double()
        with torch.no_grad():  # strictly positive weights: no dead units
            for p in enc.parameters():
                p.uniform_(0.05, 0.3)
        d = 16
        rf = receptive_field(cfg)
        x = torch.rand(d, 4, dtype=torch.float64) + 0.5

        def bottleneck(inp):
            h = inp
            for layer in enc.point_layers:
                h = torch.relu(layer(h))
            h = h.T[None]
            for conv in enc.down_layers:
                h = torch.relu(conv(h))
            return h[0]

        base = bottleneck(x)
        stride = 2 ** cfg.down_layers
        for j in range(d):
            pert = x.clone()
            pert[j] += 1.0
            changed = (bottleneck(pert) - base).abs().sum(dim=0) > 1e-12
            for i in range(d // stride):
                center = i * stride
                predicted = abs(center - j) <= rf / 2
                if changed[i]:
                    assert predicted, (i, j)


def test_gradients_match_finite_differences():
    cfg = EncoderConfig(width=8, updown_layers=2, kernel=3, depth_total=4)
    enc = init_encoder(cfg, 5, seed=2).double()
    x = torch.randn(8, 5, dtype=torch.float64, generator=torch.Generator().manual_seed(0))
    readout = torch.randn(8, 8, dtype=torch.float64,
                          generator=torch.Generator().manual_seed(1))

    def loss_fn():
        return (enc(x) * readout).sum()

    loss = loss_fn()
    loss.backward()
    params = list(enc.parameters())
    rng = np.random.default_rng(0)
    indices = [(int(rng.integers(len(params))), 0) for _ in range(20)]
    indices = [(pi, int(rng.integers(params[pi].numel()))) for pi, _ in indices]
    fd = finite_difference_grads(loss_fn, params, indices)
    for (pi, fi), fd_val in zip(indices, fd):
        auto = params[pi].grad.reshape(-1)[fi].item()
        assert relative_error(auto, fd_val) < 1e-3, (pi, fi, auto, fd_val)
