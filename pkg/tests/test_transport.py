import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from physair.geometry import unit_bearings
from physair.transport import aggregate, physics_score, spatial_weights, upwind_mask, wind_alignment

T64 = torch.float64


def t(x):
    return torch.tensor(x, dtype=T64)


def test_physics_score_values():
    one = t(1.0)
    D = t([[0.0, 1.0], [1.0, 0.0]])
    A = t([[0.0, 0.5], [-0.5, 0.0]])
    Phi = physics_score(A, t(2.0), D, one, one, one, one, t(0.0))
    assert Phi[0, 1].item() == pytest.approx(0.0, abs=1e-15)
    calm = physics_score(A, t(0.0), D, one, t(2.0), one, t(4.0), t(0.1))
    assert torch.allclose(calm, -2.0 * (D / 4.0) ** 2)
    below = physics_score(t([[0.0, 0.04]]), t(3.0), t([[0.0, 0.0]]), one, one, one, one, t(0.05))
    assert below[0, 1].item() == 0.0


def test_upwind_mask_rules():
    R = torch.tensor(unit_bearings([[0, 0], [1, 0], [0, 1], [-1, -1]]), dtype=T64)
    A = wind_alignment(t([0.6, 0.8]), R)
    M = upwind_mask(A, t(0.05))
    assert not M.diagonal().any()
    assert not (M & M.T).any()
    assert not upwind_mask(torch.zeros(4, 4, dtype=T64), t(0.05)).any()


def test_spatial_weights_examples():
    Z = t([[0.0, 3.0, 3.0], [1.0, 0.0, 2.0], [5.0, 5.0, 0.0]])
    M = torch.tensor([[False, True, True], [True, False, True], [False, False, False]])
    W = spatial_weights(Z, M)
    assert W[0].tolist() == [0.0, 0.5, 0.5]
    e1, e2 = math.exp(1), math.exp(2)
    assert W[1, 0].item() == pytest.approx(e1 / (e1 + e2), abs=1e-12)
    assert W[1, 2].item() == pytest.approx(e2 / (e1 + e2), abs=1e-12)
    assert W[1, 0].item() == pytest.approx(0.2689, abs=1e-4)
    assert W[2].tolist() == [0.0, 0.0, 0.0]


def test_spatial_weights_mask_dominance_and_gradients():
    Z = t([[0.0, 1e6, -3.0], [2.0, 0.0, -1e6], [7.0, 1.0, 0.0]]).requires_grad_()
    M = torch.tensor([[False, False, True], [True, False, False], [False, False, False]])
    W = spatial_weights(Z, M)
    assert W[0, 1].item() == 0.0 and W[0, 2].item() == 1.0
    (W * torch.arange(9, dtype=T64).reshape(3, 3)).sum().backward()
    assert torch.isfinite(Z.grad).all()
    assert (Z.grad[~M] == 0).all()


def test_aggregate_examples(rng):
    G = t(rng.normal(size=(3, 2, 2)))
    W = torch.zeros(2, 3, 3, dtype=T64)
    assert not aggregate(W, G).any()
    W[1, 0, 2] = 1.0
    C = aggregate(W, G)
    assert torch.equal(C[0, 1], G[2, 1])
    Wr = rng.uniform(size=(2, 3, 3))
    C = aggregate(t(Wr), G).numpy()
    g = G.numpy()
    ref = np.zeros((3, 2, 2))
    for m in range(2):
        for s in range(3):
            for s0 in range(3):
                ref[s, m] += Wr[m, s, s0] * g[s0, m]
    assert np.allclose(C, ref, atol=1e-12)


def _random_plan(rng, S, eps=0.05):
    planar = rng.uniform(-10, 10, size=(S, 2))
    R = t(unit_bearings(planar))
    D = torch.linalg.norm(R.new_tensor(planar)[:, None] - R.new_tensor(planar)[None], dim=-1)
    theta = rng.uniform(0, 2 * np.pi)
    A = wind_alignment(t([np.cos(theta), np.sin(theta)]), R)
    one = t(1.0)
    Z = physics_score(A, t(rng.uniform(0, 8)), D, one, one, one, t(5.0), t(eps)) + t(rng.normal(size=(S, S)))
    M = upwind_mask(A, t(eps))
    return A, Z, M


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000))
def test_convexity_and_no_self_transport(seed):
    rng = np.random.default_rng(seed)
    S = 5
    A, Z, M = _random_plan(rng, S)
    W = spatial_weights(Z, M)
    G = t(rng.normal(size=(S, 1, 1)))
    C = aggregate(W[None], G)
    for s in range(S):
        src = M[s].nonzero().flatten()
        if len(src):
            vals = G[src, 0, 0]
            assert vals.min() - 1e-9 <= C[s, 0, 0] <= vals.max() + 1e-9
    G2 = G.clone()
    G2[2] += 10.0
    C2 = aggregate(W[None], G2)
    assert C2[2, 0, 0] == C[2, 0, 0]


def test_monotone_alignment(rng):
    S = 4
    planar = rng.uniform(-10, 10, size=(S, 2))
    R = t(unit_bearings(planar))
    D = t(np.linalg.norm(planar[:, None] - planar[None], axis=-1))
    A = wind_alignment(t([1.0, 0.0]), R)
    one = t(1.0)
    M = upwind_mask(A, t(0.0))
    s, s0 = [int(i) for i in M.nonzero()[0]]
    W0 = spatial_weights(physics_score(A, t(3.0), D, one, one, one, t(5.0), t(0.0)), M)
    A2 = A.clone()
    A2[s, s0] += 0.1
    W1 = spatial_weights(physics_score(A2, t(3.0), D, one, one, one, t(5.0), t(0.0)), M)
    assert W1[s, s0] >= W0[s, s0]
