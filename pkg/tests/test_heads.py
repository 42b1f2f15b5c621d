import numpy as np
import pytest
import torch

from conftest import finite_difference_grads, relative_error
from raydiance.heads import GeometryHead, RadianceHead


def _zero(module):
    with torch.no_grad():
        for p in module.parameters():
            p.zero_()
    return module


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def _gru_oracle(head: GeometryHead, v: np.ndarray) -> np.ndarray:
    """Step-by-step recurrence with explicit per-gate formulas, then the MLP.

    Gate convention: reset r = sig(W_ir x + b_ir + W_hr h + b_hr),
    update z likewise, candidate n = tanh(W_in x + b_in + r * (W_hn h + b_hn)),
    h' = (1 - z) n + z h.
    """
    p = {k: t.detach().numpy().astype(np.float64) for k, t in head.gru.named_parameters()}
    hidden = p["weight_hh_l0"].shape[1]
    w_ir, w_iz, w_in = np.split(p["weight_ih_l0"], 3)
    w_hr, w_hz, w_hn = np.split(p["weight_hh_l0"], 3)
    b_ir, b_iz, b_in = np.split(p["bias_ih_l0"], 3)
    b_hr, b_hz, b_hn = np.split(p["bias_hh_l0"], 3)
    h = np.zeros(hidden)
    outputs = []
    for x in v:
        r = _sigmoid(w_ir @ x + b_ir + w_hr @ h + b_hr)
        z = _sigmoid(w_iz @ x + b_iz + w_hz @ h + b_hz)
        n = np.tanh(w_in @ x + b_in + r * (w_hn @ h + b_hn))
        h = (1 - z) * n + z * h
        outputs.append(h)
    s = []
    fc = {k: t.detach().numpy().astype(np.float64) for k, t in head.named_parameters()
          if k.startswith("fc")}
    for h in outputs:
        a = np.maximum(0.0, fc["fc1.weight"] @ h + fc["fc1.bias"])
        a = np.maximum(0.0, fc["fc2.weight"] @ a + fc["fc2.bias"])
        s.append(_sigmoid(fc["fc3.weight"] @ a + fc["fc3.bias"]))
    return np.array(s).ravel()


class TestGeometryHead:
    def test_zero_params_half(self):
        head = _zero(GeometryHead(width=6, gru_hidden=4, mlp_hidden=4))
        out = head(torch.zeros(5, 6) + 1.0)
        torch.testing.assert_close(out, torch.full((5,), 0.5))

    def test_causality_probe(self):
        torch.manual_seed(0)
        head = GeometryHead(width=6, gru_hidden=8, mlp_hidden=8)
        v = torch.randn(7, 6)
        base = head(v)
        for j in range(7):
            pert = v.clone()
            pert[j] += 1.0
            out = head(pert)
            assert torch.equal(out[:j], base[:j])     # earlier outputs untouched
            assert not torch.allclose(out[j:], base[j:])

    def test_matches_per_gate_oracle(self):
        torch.manual_seed(1)
        head = GeometryHead(width=5, gru_hidden=6, mlp_hidden=6).double()
        v = torch.randn(4, 5, dtype=torch.float64)
        with torch.no_grad():
            got = head(v).numpy()
        want = _gru_oracle(head, v.numpy())
        np.testing.assert_allclose(got, want, atol=1e-10)

    def test_causal_gradients_exactly_zero(self):
        torch.manual_seed(2)
        head = GeometryHead(width=4, gru_hidden=4, mlp_hidden=4).double()
        v = torch.randn(5, 4, dtype=torch.float64, requires_grad=True)
        s = head(v)
        for i in range(5):
            grad = torch.autograd.grad(s[i], v, retain_graph=True)[0]
            assert torch.equal(grad[i + 1:], torch.zeros_like(grad[i + 1:]))

    def test_empty_sequence_rejected(self):
        head = GeometryHead(width=4)
        with pytest.raises(ValueError):
            head(torch.zeros(1, 0, 4))

    def test_output_in_open_interval(self):
        torch.manual_seed(3)
        head = GeometryHead(width=4)
        out = head(torch.randn(3, 6, 4) * 100)
        assert (out > 0).all() and (out < 1).all()

    def test_gradients_match_finite_differences(self):
        torch.manual_seed(4)
        head = GeometryHead(width=4, gru_hidden=4, mlp_hidden=4).double()
        v = torch.randn(4, 4, dtype=torch.float64)
        readout = torch.randn(4, dtype=torch.float64)

        def loss_fn():
            return (head(v) * readout).sum()

        loss_fn().backward()
        params = list(head.parameters())
        rng = np.random.default_rng(5)
        indices = [(pi, int(rng.integers(params[pi].numel())))
                   for pi in range(len(params)) for _ in range(3)]
        fd = finite_difference_grads(loss_fn, params, indices)
        for (pi, fi), fd_val in zip(indices, fd):
            auto = params[pi].grad.reshape(-1)[fi].item()
            assert relative_error(auto, fd_val) < 1e-3


class TestRadianceHead:
    def test_zero_params_half(self):
        head = _zero(RadianceHead(width=6, hidden=3))
        out = head(torch.randn(4, 6))
        torch.testing.assert_close(out, torch.full((4, 3), 0.5))

    def test_row_permutation_equivariance(self):
        torch.manual_seed(6)
        head = RadianceHead(width=5, hidden=4)
        v = torch.randn(7, 5)
        perm = torch.randperm(7)
        assert torch.equal(head(v[perm]), head(v)[perm])

    def test_matches_affine_sigmoid_oracle(self):
        torch.manual_seed(7)
        head = RadianceHead(width=5, hidden=4).double()
        v = torch.randn(1, 5, dtype=torch.float64)
        with torch.no_grad():
            got = head(v).numpy()
        w1 = head.fc1.weight.detach().numpy()
        b1 = head.fc1.bias.detach().numpy()
        w2 = head.fc2.weight.detach().numpy()
        b2 = head.fc2.bias.detach().numpy()
        hid = np.maximum(0.0, v.numpy() @ w1.T + b1)
        want = _sigmoid(hid @ w2.T + b2)
        np.testing.assert_allclose(got, want, atol=1e-12)

    def test_gradients_match_finite_differences(self):
        torch.manual_seed(8)
        head = RadianceHead(width=4, hidden=3).double()
        v = torch.randn(4, 4, dtype=torch.float64)
        readout = torch.randn(4, 3, dtype=torch.float64)

        def loss_fn():
            return (head(v) * readout).sum()

        loss_fn().backward()
        params = list(head.parameters())
        rng = np.random.default_rng(9)
        indices = [(pi, int(rng.integers(params[pi].numel())))
                   for pi in range(len(params)) for _ in range(3)]
        fd = finite_difference_grads(loss_fn, params, indices)
        for (pi, fi), fd_val in zip(indices, fd):
            auto = params[pi].grad.reshape(-1)[fi].item()
            assert relative_error(auto, fd_val) < 1e-3
