import numpy as np
import pytest
import torch

from physair.dataio import WindowSample
from physair.embedding import (
    depthwise_conv,
    embed,
    segments,
    sinusoidal_table,
    station_gate,
    token_layout,
    tokenize,
)
from physair.errors import ConfigError

T64 = torch.float64


def sample_with(blocks):
    S = blocks[0].shape[0]
    return WindowSample(tuple(blocks), np.zeros((S, 12)), None, np.datetime64("2022-01-01T00", "h"))


def test_token_counts():
    meta = token_layout([48, 48 + 72, 48 + 72], 12)
    counts = [sum(1 for i, _ in meta if i == f) for f in range(3)]
    assert counts == [4, 10, 10]
    meta = token_layout([48 + 0, 48 + 24, 48 + 24], 12)
    assert len(meta) == 16


def test_tokenize_partition(rng):
    x = rng.normal(size=(2, 24))
    grid = tokenize(sample_with([x]), 12)
    assert grid.values.shape == (2, 2, 12)
    assert np.array_equal(grid.values.reshape(2, 24), x)
    assert grid.token_meta == ((0, 0), (0, 1))


def test_tokenize_rejects_bad_patch():
    with pytest.raises(ConfigError):
        tokenize(sample_with([np.zeros((1, 48))]), 5)


def test_segments():
    assert segments(token_layout([24, 36], 12)) == [(0, 2), (2, 3)]


def test_sinusoid_injective():
    for d in (1, 2, 8, 16):
        table = sinusoidal_table(64, d).numpy()
        dists = np.linalg.norm(table[:, None] - table[None], axis=-1)
        assert np.all(dists[~np.eye(64, dtype=bool)] > 1e-6)


def test_depthwise_conv_matches_loop(rng):
    h = torch.tensor(rng.normal(size=(2, 5, 3)), dtype=T64)
    k = torch.tensor(rng.normal(size=(3, 3)), dtype=T64)
    out = depthwise_conv(h, k).numpy()
    hp = np.pad(h.numpy(), ((0, 0), (1, 1), (0, 0)))
    ref = np.zeros_like(out)
    for s in range(2):
        for n in range(5):
            for c in range(3):
                ref[s, n, c] = sum(k[j, c].item() * hp[s, n + j, c] for j in range(3))
    assert np.allclose(out, ref, atol=1e-12)


def _params(P, d, F, rng, zero_conv=False):
    W = torch.tensor(rng.normal(size=(P, d)), dtype=T64)
    k = torch.zeros(3, d, dtype=T64) if zero_conv else torch.tensor(rng.normal(size=(3, d)), dtype=T64)
    return W, k, sinusoidal_table(F, d)


def test_embed_zero_input_gives_feature_code(rng):
    meta = token_layout([24, 36], 12)
    W, _, table = _params(12, 4, 2, rng)
    H = embed(torch.zeros(2, len(meta), 12, dtype=T64), W, torch.zeros(3, 4, dtype=T64), table, meta)
    expected = table[[i for i, _ in meta]]
    assert torch.equal(H[0], expected) and torch.equal(H[1], expected)


def test_embed_identical_stations_identical_rows(rng):
    meta = token_layout([24, 36], 12)
    W, k, table = _params(12, 4, 2, rng)
    x = torch.tensor(rng.normal(size=(1, len(meta), 12)), dtype=T64).repeat(3, 1, 1)
    H = embed(x, W, k, table, meta)
    assert torch.equal(H[0], H[1]) and torch.equal(H[1], H[2])


def test_embed_identity_projection(rng):
    meta = token_layout([24], 12)
    x = torch.tensor(rng.normal(size=(2, 2, 12)), dtype=T64)
    H = embed(x, torch.eye(12, dtype=T64), torch.zeros(3, 12, dtype=T64), torch.zeros(1, 12, dtype=T64), meta)
    assert torch.equal(H, x)


def test_embed_locality(rng):
    meta = token_layout([48, 36], 12)
    W, k, table = _params(12, 4, 2, rng)
    x = torch.tensor(rng.normal(size=(1, len(meta), 12)), dtype=T64)
    base = embed(x, W, k, table, meta)
    x2 = x.clone()
    x2[0, 1, 5] += 1.0  # token 1 of feature 0
    changed = (embed(x2, W, k, table, meta) != base).any(dim=-1)[0]
    assert changed.nonzero().flatten().tolist() == [0, 1, 2]
    x3 = x.clone()
    x3[0, 4, 0] += 1.0  # first token of feature 1: conv must not reach feature 0
    changed = (embed(x3, W, k, table, meta) != base).any(dim=-1)[0]
    assert changed.nonzero().flatten().tolist() == [4, 5]


def test_station_gate(rng):
    H = torch.tensor(rng.normal(size=(2, 5, 3)), dtype=T64)
    ones, zeros = torch.ones(2, 3, dtype=T64), torch.zeros(2, 3, dtype=T64)
    assert torch.equal(station_gate(H, ones, zeros, zeros), H)
    B = torch.tensor(rng.normal(size=(2, 3)), dtype=T64)
    out = station_gate(H, zeros, zeros, B)
    assert torch.equal(out, B[:, None, :].expand_as(H))
    h = torch.tensor([[[1.5]]], dtype=T64)
    out = station_gate(h, torch.tensor([[2.0]], dtype=T64), torch.tensor([[0.25]], dtype=T64), torch.tensor([[-1.0]], dtype=T64))
    assert out.item() == pytest.approx(2 * (1.5 + 0.25) - 1.0)
