import numpy as np
import pytest
import torch

from rgsl.core import NegativeEntry, NonSquare, ShapeMismatch
from rgsl.graphops import BranchParams, Propagator, graph_transform, normalize_adjacency


def brute_force_propagator(a: np.ndarray, floor=1e-8) -> np.ndarray:
    """Explicit D construction and matrix products; the independent oracle."""
    n = a.shape[0]
    d = np.diag(np.maximum(a.sum(axis=1), floor))
    d_inv_sqrt = np.diag(1.0 / np.sqrt(np.diag(d)))
    return np.eye(n) + d_inv_sqrt @ a @ d_inv_sqrt


class TestNormalizeAdjacency:
    def test_empty_graph_is_identity(self):
        p = normalize_adjacency(torch.zeros(3, 3), "explicit")
        assert torch.allclose(p.matrix, torch.eye(3))

    def test_single_edge_hand_case(self):
        a = torch.tensor([[0.0, 1.0], [1.0, 0.0]])
        p = normalize_adjacency(a, "explicit")
        assert torch.allclose(p.matrix, torch.ones(2, 2))

    def test_uniform_scaling_cancels(self):
        a = torch.tensor([[0.0, 2.0], [2.0, 0.0]])
        p = normalize_adjacency(a, "explicit")
        assert torch.allclose(p.matrix, torch.ones(2, 2))

    def test_matches_brute_force_on_random_matrices(self, rng):
        for _ in range(100):
            n = int(rng.integers(2, 11))
            a = rng.uniform(0, 3, size=(n, n))
            np.fill_diagonal(a, 0.0)
            got = normalize_adjacency(torch.as_tensor(a), "learned").matrix.numpy()
            assert np.allclose(got, brute_force_propagator(a), atol=1e-12)

    def test_symmetry_preserved(self, rng):
        a = rng.uniform(0, 1, size=(5, 5))
        a = np.triu(a, 1)
        a = a + a.T
        got = normalize_adjacency(torch.as_tensor(a), "explicit").matrix.numpy()
        assert np.allclose(got, got.T, atol=1e-14)

    def test_diagonal_at_least_one(self, rng):
        a = rng.uniform(0, 1, size=(6, 6))
        np.fill_diagonal(a, 0.0)
        got = normalize_adjacency(torch.as_tensor(a), "learned").matrix.numpy()
        assert (np.diag(got) >= 1.0).all()

    def test_negative_entry_rejected(self):
        with pytest.raises(NegativeEntry):
            normalize_adjacency(torch.tensor([[0.0, -0.1], [0.0, 0.0]]), "learned")

    def test_non_square_rejected(self):
        with pytest.raises(NonSquare):
            normalize_adjacency(torch.zeros(2, 3), "learned")

    def test_differentiable_wrt_adjacency(self):
        a = torch.rand(4, 4, generator=torch.Generator().manual_seed(0), requires_grad=True)
        p = normalize_adjacency(a * (1 - torch.eye(4)), "learned")
        p.matrix.sum().backward()
        assert a.grad is not None and torch.isfinite(a.grad).all()


def _params(in_dim, out_dim, weight, bias):
    p = BranchParams(in_dim, out_dim, dtype=torch.float64)
    with torch.no_grad():
        p.weight.copy_(torch.as_tensor(weight, dtype=torch.float64))
        p.bias.copy_(torch.as_tensor(bias, dtype=torch.float64))
    return p


class TestGraphTransform:
    def test_identity_pipeline(self):
        p = Propagator(matrix=torch.eye(3, dtype=torch.float64), source="explicit")
        params = _params(2, 2, np.eye(2), np.zeros(2))
        x = torch.randn(3, 2, dtype=torch.float64)
        assert torch.allclose(graph_transform(p, x, params), x)

    def test_zero_input_gives_bias(self):
        p = Propagator(matrix=torch.eye(3, dtype=torch.float64), source="explicit")
        params = _params(2, 2, np.zeros((2, 2)), np.array([1.5, -0.5]))
        out = graph_transform(p, torch.zeros(3, 2, dtype=torch.float64), params)
        assert torch.allclose(out, torch.tensor([1.5, -0.5], dtype=torch.float64).expand(3, 2))

    def test_hand_case(self):
        p = Propagator(matrix=torch.ones(2, 2, dtype=torch.float64), source="explicit")
        params = _params(1, 1, [[3.0]], [1.0])
        out = graph_transform(p, torch.tensor([[1.0], [2.0]], dtype=torch.float64), params)
        assert torch.allclose(out, torch.full((2, 1), 10.0, dtype=torch.float64))

    def test_batched_matches_loop(self, rng):
        mat = torch.as_tensor(brute_force_propagator(rng.uniform(0, 1, (4, 4))))
        p = Propagator(matrix=mat, source="learned")
        params = _params(3, 2, rng.normal(size=(3, 2)), rng.normal(size=2))
        x = torch.as_tensor(rng.normal(size=(5, 4, 3)))
        batched = graph_transform(p, x, params)
        for b in range(5):
            assert torch.allclose(batched[b], graph_transform(p, x[b], params))

    def test_dim_mismatch(self):
        p = Propagator(matrix=torch.eye(3, dtype=torch.float64), source="explicit")
        params = _params(2, 2, np.eye(2), np.zeros(2))
        with pytest.raises(ShapeMismatch):
            graph_transform(p, torch.zeros(3, 5, dtype=torch.float64), params)
        with pytest.raises(ShapeMismatch):
            graph_transform(p, torch.zeros(4, 2, dtype=torch.float64), params)

    def test_permutation_equivariance(self, rng):
        n = 5
        a = rng.uniform(0, 1, size=(n, n))
        np.fill_diagonal(a, 0.0)
        x = rng.normal(size=(n, 3))
        perm = rng.permutation(n)
        pi = np.eye(n)[perm]
        params = _params(3, 2, rng.normal(size=(3, 2)), rng.normal(size=2))
        base = graph_transform(
            Propagator(torch.as_tensor(brute_force_propagator(a)), "learned"),
            torch.as_tensor(x), params)
        permuted = graph_transform(
            Propagator(torch.as_tensor(brute_force_propagator(pi @ a @ pi.T)), "learned"),
            torch.as_tensor(pi @ x), params)
        assert torch.allclose(permuted, torch.as_tensor(pi) @ base, atol=1e-12)

    def test_gradients_match_finite_differences(self, rng):
        a = rng.uniform(0.1, 1.0, size=(3, 3))
        np.fill_diagonal(a, 0.0)
        a_t = torch.as_tensor(a).requires_grad_(True)
        params = _params(2, 2, rng.normal(size=(2, 2)), rng.normal(size=2))
        x = torch.as_tensor(rng.normal(size=(3, 2))).requires_grad_(True)
        coeff = torch.as_tensor(rng.normal(size=(3, 2)))

        def f(a_in, x_in, w_in, b_in):
            prop = normalize_adjacency(a_in, "learned")
            return ((torch.matmul(prop.matrix, x_in) @ w_in + b_in) * coeff).sum()

        loss = f(a_t, x, params.weight, params.bias)
        loss.backward()
        eps = 1e-6
        tensors = [a_t, x, params.weight, params.bias]
        for idx, tensor in enumerate(tensors):
            grad = tensor.grad.flatten()
            for k in range(tensor.numel()):
                if idx == 0 and float(tensor.detach().flatten()[k]) == 0.0:
                    continue  # diagonal entries must stay non-negative
                args_p = [t.detach().clone() for t in tensors]
                args_m = [t.detach().clone() for t in tensors]
                args_p[idx].view(-1)[k] += eps
                args_m[idx].view(-1)[k] -= eps
                fd = (f(*args_p) - f(*args_m)) / (2 * eps)
                assert float(grad[k]) == pytest.approx(float(fd), rel=1e-5, abs=1e-9)
