import math

import numpy as np
import pytest
import torch

from physair.errors import ConfigError, NumericError
from physair.gradcheck import GradcheckReport, gradcheck, relative_error, tiny_setup
from physair.model import Batch
from physair.training import (
    AdamState,
    TrainConfig,
    adam_step,
    backward,
    error_metrics,
    format_report,
    loss_fn,
    metrics_report,
    read_checkpoint,
    save_checkpoint,
    model_from_checkpoint,
    train,
    write_history,
)

T64 = torch.float64


def test_loss_examples():
    y = torch.randn(3, 24, dtype=T64)
    assert loss_fn(y, y, torch.tensor(0.0, dtype=T64), 1e-3).item() == 0.0
    assert loss_fn(y + 1, y, None, 0.0).item() == pytest.approx(1.0)
    assert loss_fn(y, y, torch.tensor(0.2, dtype=T64), 0.001).item() == pytest.approx(4e-5, rel=1e-12)
    with pytest.raises(NumericError):
        loss_fn(y * float("nan"), y)
    with pytest.raises(ConfigError):
        loss_fn(y[:, :12], y)


def test_gradients_vanish_through_zero_gate():
    _, model, batch = tiny_setup(0)
    with torch.no_grad():
        model.gamma.zero_()
    grads = backward(model, batch, lambda_eps=0.0)
    for name in ("U", "raw_alpha_dir", "raw_alpha_dist", "raw_beta_speed", "raw_sigma_d", "raw_eps"):
        assert not grads[name].any(), name
    assert grads["gamma"].abs().sum() > 0


def test_duplicated_batch_same_gradient():
    _, model, batch = tiny_setup(1, batch_size=1)
    g1 = backward(model, batch, 1e-3)
    dup = Batch(*(torch.cat([t, t]) for t in (batch.tokens, batch.u_hat, batch.v, batch.y)))
    g2 = backward(model, dup, 1e-3)
    for name in g1:
        assert torch.allclose(g1[name], g2[name], rtol=0, atol=1e-12)


def test_batch_gradient_is_mean_of_sample_gradients():
    _, model, batch = tiny_setup(2, batch_size=3)
    full = backward(model, batch, 1e-3)
    parts = [backward(model, batch.subset([i]), 1e-3) for i in range(3)]
    for name in full:
        assert torch.allclose(full[name], sum(p[name] for p in parts) / 3, rtol=0, atol=1e-12)


def test_gradcheck_passes_and_catches_corruption():
    _, model, batch = tiny_setup(0)
    report = gradcheck(model, batch)
    assert report.passed, report.format()
    grads = backward(model, batch, 1e-3)
    grads["W_V"] = grads["W_V"] * 1.01
    bad = gradcheck(model, batch, grads=grads)
    assert not bad.passed
    assert [c.name for c in bad.failures] == ["W_V"]
    assert "FAIL" in bad.format() and "W_V" in bad.format()


def test_gradcheck_zero_gate_passes():
    _, model, batch = tiny_setup(5)
    with torch.no_grad():
        model.gamma.zero_()
    assert gradcheck(model, batch).passed


def test_relative_error_floor():
    assert relative_error(0.0, 0.0) == 0.0
    assert relative_error(1.0, 1.0 + 1e-6) == pytest.approx(1e-6, rel=1e-3)


def test_adam_first_step_is_signed_lr():
    cfg = TrainConfig(lr=1e-3)
    for g in (0.37, -5.0, 1e-3):
        p = torch.tensor([1.0], dtype=T64)
        adam_step({"p": p}, {"p": torch.tensor([g], dtype=T64)}, AdamState(), cfg)
        assert p.item() - 1.0 == pytest.approx(-cfg.lr * math.copysign(1, g), abs=cfg.lr * 1e-5)


def test_adam_zero_grad_and_elementwise():
    cfg = TrainConfig()
    p = torch.tensor([1.0, 2.0], dtype=T64)
    state = AdamState()
    for _ in range(5):
        adam_step({"p": p}, {"p": torch.zeros(2, dtype=T64)}, state, cfg)
    assert p.tolist() == [1.0, 2.0]
    a, b = torch.tensor([3.0], dtype=T64), torch.tensor([3.0], dtype=T64)
    st = AdamState()
    for k in range(4):
        g = torch.tensor([0.1 * (k - 1.5)], dtype=T64)
        adam_step({"a": a, "b": b}, {"a": g, "b": g.clone()}, st, cfg)
    assert torch.equal(a, b)


def _toy_data(seed=0, n=12):
    _, model, batch = tiny_setup(seed, batch_size=n)
    return model, batch


def test_train_is_deterministic():
    h = []
    for _ in range(2):
        model, batch = _toy_data()
        res = train(model, batch.subset(range(8)), batch.subset(range(8, 12)), TrainConfig(lr=1e-2, batch_size=4, max_epochs=3, seed=3))
        h.append(res.history)
    assert h[0] == h[1]


def test_early_stopping_patience_one(monkeypatch):
    import physair.training as T

    calls = []
    values = iter([1.0, 2.0, 3.0, 4.0])

    def fake_mse(model, data):
        calls.append(1)
        return next(values)

    monkeypatch.setattr(T, "mse_on", fake_mse)
    model, batch = _toy_data()
    res = T.train(model, batch.subset(range(8)), batch.subset(range(8, 12)), TrainConfig(max_epochs=10, patience=1))
    assert len(calls) == 2 and res.stopped_early
    assert res.best_val == 1.0


def test_early_stopping_returns_best():
    model, batch = _toy_data(1)
    res = train(model, batch.subset(range(8)), batch.subset(range(8, 12)), TrainConfig(lr=5e-2, batch_size=2, max_epochs=15, patience=3, seed=1))
    best = min(r["val_mse"] for r in res.history)
    assert res.best_val == best
    from physair.training import mse_on

    assert mse_on(model, batch.subset(range(8, 12))) == pytest.approx(best, rel=1e-12)


def test_divergence_restores_checkpoint():
    model, batch = _toy_data(2)
    res = train(model, batch.subset(range(8)), None, TrainConfig(lr=1e12, batch_size=8, max_epochs=20, seed=0))
    assert all(torch.isfinite(p).all() for p in model.parameters())
    if res.diverged:
        assert math.isfinite(res.best_val) or res.best_val == math.inf


def test_metrics_closed_form(rng):
    y = rng.normal(size=(5, 3, 24))
    assert error_metrics(y, y) == {"MAE": 0.0, "MSE": 0.0}
    m = error_metrics(y + 2.5, y)
    assert m["MAE"] == pytest.approx(2.5, abs=1e-12) and m["MSE"] == pytest.approx(6.25, abs=1e-12)
    with pytest.raises(ConfigError):
        error_metrics(np.zeros(0), np.zeros(0))


def test_report_layout():
    rep = metrics_report({24: {"MAE": 1.0, "MSE": 2.0}, 48: {"MAE": 3.0, "MSE": 4.0}, 72: {"MAE": 5.0, "MSE": 6.0}})
    assert [r["horizon"] for r in rep["rows"]] == ["24", "48", "72", "AVG"]
    assert rep["rows"][-1] == {"horizon": "AVG", "MAE": 3.0, "MSE": 4.0}
    assert "AVG" in format_report(rep)


def test_checkpoint_round_trip(tmp_path):
    net, model, batch = tiny_setup(6)
    save_checkpoint(tmp_path / "c.json", model, {"seed": 6, "config": {}})
    body = read_checkpoint(tmp_path / "c.json")
    assert set(body["meta"]) >= {"config", "code_version", "seed"}
    back = model_from_checkpoint(body, net)
    assert torch.equal(back.predict(batch).y_hat, model.predict(batch).y_hat)


def test_history_csv(tmp_path):
    write_history([{"epoch": 1, "train_loss": 0.5, "val_mse": 0.25}], tmp_path / "h.csv")
    assert (tmp_path / "h.csv").read_text().splitlines()[1] == "1,0.5,0.25"
