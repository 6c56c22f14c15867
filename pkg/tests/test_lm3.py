import numpy as np
import pytest
import torch

from rgsl.core import ShapeMismatch
from rgsl.graphops import BranchParams, Propagator, graph_transform
from rgsl.lm3 import LM3Gate, MixAttentionParams, lm3_forward, mix


def _attn(h, weight=None, bias=0.0):
    params = MixAttentionParams(h, dtype=torch.float64)
    with torch.no_grad():
        if weight is None:
            params.score_weight.zero_()
        else:
            params.score_weight.copy_(torch.as_tensor(weight, dtype=torch.float64).reshape(h, 1))
        params.score_bias.fill_(bias)
    return params


class TestMix:
    def test_identical_branches_symmetric(self):
        h = torch.randn(4, 3, dtype=torch.float64)
        params = _attn(3, weight=np.random.default_rng(0).normal(size=3))
        out, a0, al = mix(h, h.clone(), params)
        assert torch.allclose(out, h)
        assert torch.allclose(a0, torch.full_like(a0, 0.5))
        assert torch.allclose(al, torch.full_like(al, 0.5))

    def test_zero_weight_gives_average(self):
        h0 = torch.randn(5, 2, dtype=torch.float64)
        hl = torch.randn(5, 2, dtype=torch.float64)
        out, a0, al = mix(h0, hl, _attn(2))
        assert torch.allclose(out, (h0 + hl) / 2)

    def test_hand_softmax_case(self):
        h0 = torch.tensor([[2.0]], dtype=torch.float64)
        hl = torch.tensor([[0.0]], dtype=torch.float64)
        out, a0, _ = mix(h0, hl, _attn(1, weight=[1.0]))
        expect_a0 = np.exp(2) / (np.exp(2) + 1)
        assert float(a0.detach()) == pytest.approx(expect_a0, rel=1e-12)
        assert float(out.detach()) == pytest.approx(2 * expect_a0, rel=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            mix(torch.zeros(3, 2), torch.zeros(2, 2), _attn(2))

    def test_convexity_property(self, rng):
        params = MixAttentionParams(4, dtype=torch.float64)
        for _ in range(200):
            h0 = torch.as_tensor(rng.normal(scale=3.0, size=(6, 4)))
            hl = torch.as_tensor(rng.normal(scale=3.0, size=(6, 4)))
            out, a0, al = mix(h0, hl, params)
            assert torch.all(a0 >= 0) and torch.all(al >= 0)
            assert torch.allclose(a0 + al, torch.ones_like(a0), atol=1e-6)
            lo = torch.minimum(h0, hl)
            hi = torch.maximum(h0, hl)
            assert torch.all(out >= lo - 1e-9) and torch.all(out <= hi + 1e-9)

    def test_forced_alphas(self):
        h0 = torch.randn(3, 2, dtype=torch.float64)
        hl = torch.randn(3, 2, dtype=torch.float64)
        params = _attn(2, weight=[1.0, -1.0])
        for alpha, expect in [((1.0, 0.0), h0), ((0.0, 1.0), hl),
                              ((0.5, 0.5), (h0 + hl) / 2)]:
            out, _, _ = mix(h0, hl, params, force_alpha=alpha)
            assert torch.allclose(out, expect, atol=1e-10)

    def test_attention_gradient_nonzero(self):
        params = MixAttentionParams(3, dtype=torch.float64)
        h0 = torch.randn(4, 3, dtype=torch.float64)
        hl = torch.randn(4, 3, dtype=torch.float64)
        out, _, _ = mix(h0, hl, params)
        out.square().sum().backward()
        assert params.score_weight.grad.abs().sum() > 0
        assert params.score_bias.grad.abs().sum() > 0


def _branch(in_dim, out_dim, weight, bias):
    p = BranchParams(in_dim, out_dim, dtype=torch.float64)
    with torch.no_grad():
        p.weight.copy_(torch.as_tensor(weight, dtype=torch.float64))
        p.bias.copy_(torch.as_tensor(bias, dtype=torch.float64))
    return p


class TestLM3Forward:
    def test_identical_branches_equal_single_branch(self, rng):
        n, f, h = 3, 2, 4
        mat = torch.as_tensor(np.eye(n) + rng.uniform(0, 1, (n, n)))
        p = Propagator(matrix=mat, source="explicit")
        b = _branch(f, h, rng.normal(size=(f, h)), rng.normal(size=h))
        b2 = _branch(f, h, b.weight.detach().numpy(), b.bias.detach().numpy())
        attn = MixAttentionParams(h, dtype=torch.float64)
        x = torch.as_tensor(rng.normal(size=(n, f)))
        out, a0, al = lm3_forward(p, p, x, b, b2, attn)
        assert torch.allclose(out, graph_transform(p, x, b))

    def test_implicit_only_ablation_reduces_to_linear_map(self, rng):
        n, f, h = 3, 2, 4
        identity = Propagator(matrix=torch.eye(n, dtype=torch.float64), source="learned")
        p0 = Propagator(matrix=torch.as_tensor(np.eye(n) * 2.0), source="explicit")
        b0 = _branch(f, h, np.zeros((f, h)), np.zeros(h))
        w = rng.normal(size=(f, h))
        bias = rng.normal(size=h)
        bl = _branch(f, h, w, bias)
        attn = MixAttentionParams(h, dtype=torch.float64)
        x = torch.as_tensor(rng.normal(size=(n, f)))
        out, _, _ = lm3_forward(p0, identity, x, b0, bl, attn, force_alpha=(0.0, 1.0))
        assert torch.allclose(out, torch.as_tensor(x.numpy() @ w + bias))

    def test_composed_hand_case(self):
        # explicit branch: P=[[1,1],[1,1]], W=[[3]], b=1 on X=[[1],[2]] -> [[10],[10]]
        # learned branch: identity propagator, W=[[1]], b=0 -> [[1],[2]]
        p0 = Propagator(matrix=torch.ones(2, 2, dtype=torch.float64), source="explicit")
        pl = Propagator(matrix=torch.eye(2, dtype=torch.float64), source="learned")
        b0 = _branch(1, 1, [[3.0]], [1.0])
        bl = _branch(1, 1, [[1.0]], [0.0])
        x = torch.tensor([[1.0], [2.0]], dtype=torch.float64)
        out, a0, al = lm3_forward(p0, pl, x, b0, bl, _attn(1, weight=[1.0]))
        # node scores: e0 = 10, el = 1 and e0 = 10, el = 2
        for i, (h0v, hlv) in enumerate([(10.0, 1.0), (10.0, 2.0)]):
            w0 = np.exp(h0v) / (np.exp(h0v) + np.exp(hlv))
            assert float(out[i, 0].detach()) == pytest.approx(w0 * h0v + (1 - w0) * hlv, rel=1e-12)


class TestLM3Gate:
    def test_gate_module_matches_function(self, rng):
        torch.manual_seed(0)
        gate = LM3Gate(3, 4, dtype=torch.float64)
        n = 5
        mat = torch.as_tensor(np.eye(n) + rng.uniform(0, 1, (n, n)))
        p0 = Propagator(matrix=mat, source="explicit")
        pl = Propagator(matrix=torch.eye(n, dtype=torch.float64), source="learned")
        x = torch.as_tensor(rng.normal(size=(n, 3)))
        out_mod, _, _ = gate(p0, pl, x)
        out_fn, _, _ = lm3_forward(p0, pl, x, gate.explicit, gate.learned, gate.attention)
        assert torch.equal(out_mod, out_fn)

    def test_force_alpha_attribute(self, rng):
        torch.manual_seed(1)
        gate = LM3Gate(2, 3, dtype=torch.float64)
        n = 4
        p = Propagator(matrix=torch.eye(n, dtype=torch.float64), source="explicit")
        x = torch.as_tensor(rng.normal(size=(n, 2)))
        gate.force_alpha = (1.0, 0.0)
        out, a0, _ = gate(p, p, x)
        assert torch.allclose(out, graph_transform(p, x, gate.explicit))
        assert torch.all(a0 == 1.0)
