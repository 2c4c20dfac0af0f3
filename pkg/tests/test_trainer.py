import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lenlab import model as M
from lenlab import tensor as T
from lenlab import trainer as TR
from lenlab.checkpoint import ModelCheckpoint
from lenlab.posenc import ConfigError


def tiny(kind="alibi", seed=3):
    cfg = M.ModelConfig(12, kind, d_model=16, enc_layers=1, enc_heads=2, dec_layers=1, dec_heads=2,
                        enc_max_len=16, dec_max_len=6, head_dim=8, ffn_mult=2)
    return M.build_model(cfg, seed=seed)


def copy_data(n, seed=0):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        src = rng.integers(5, 12, size=rng.integers(3, 8)).tolist()
        out.append((src, src[:2] + [M.EOS_ID]))
    return out


def test_schedule_endpoints_and_continuity():
    c = TR.TrainConfig(lr_peak=1e-4, warmup_steps=2000, total_steps=10_000)
    assert TR.lr_at_step(0, c) == 0.0
    assert TR.lr_at_step(2000, c) == pytest.approx(1e-4, abs=1e-12)
    assert abs(TR.lr_at_step(1999, c) - TR.lr_at_step(2000, c)) < 1e-7
    assert abs(TR.lr_at_step(2001, c) - TR.lr_at_step(2000, c)) < 1e-7
    assert TR.lr_at_step(1000, c) == pytest.approx(5e-5)
    assert TR.lr_at_step(6000, c) == pytest.approx(5e-5)
    assert TR.lr_at_step(10_000, c) == pytest.approx(0.0, abs=1e-20)
    assert TR.lr_at_step(20_000, c) == pytest.approx(0.0, abs=1e-20)


@given(st.integers(0, 3000))
def test_schedule_bounded(step):
    c = TR.TrainConfig(lr_peak=1e-3, warmup_steps=100, total_steps=2000)
    assert 0.0 <= TR.lr_at_step(step, c) <= 1e-3


def test_schedule_rejects_bad_totals():
    with pytest.raises(ConfigError):
        TR.lr_at_step(0, TR.TrainConfig(warmup_steps=10, total_steps=5))
    with pytest.raises(ValueError):
        TR.lr_at_step(-1, TR.TrainConfig(warmup_steps=1, total_steps=5))
    assert TR.TrainConfig(batch_size=32, max_epochs=2).with_total_steps(65).total_steps == 6


class Quadratic:
    """Duck-typed model: f(w) = sum((w - target)^2)."""

    def __init__(self):
        self.w = T.Tensor(np.zeros(3), requires_grad=True, dtype=np.float64)
        self.target = np.array([1.0, -2.0, 0.5])

    def named_parameters(self):
        return [("w", self.w)]

    def grad(self):
        self.w.grad = 2 * (self.w.data - self.target)


def test_adam_converges_on_quadratic():
    q, st_ = Quadratic(), TR.AdamState()
    cfg = TR.TrainConfig()
    for _ in range(200):
        q.grad()
        TR.adam_update(q, st_, 0.05, cfg)
    assert np.allclose(q.w.data, q.target, atol=1e-2)


def test_adam_first_step_moves_by_lr():
    q, st_ = Quadratic(), TR.AdamState()
    q.grad()
    TR.adam_update(q, st_, 0.1, TR.TrainConfig())
    assert np.allclose(np.abs(q.w.data), 0.1, atol=1e-6)


def test_zero_lr_leaves_parameters_unchanged():
    m = tiny()
    before = {k: v.copy() for k, v in m.state_dict().items()}
    cfg = TR.TrainConfig(batch_size=4, warmup_steps=1, total_steps=10)
    TR.train_step(m, copy_data(4), TR.AdamState(), cfg, lr=0.0)
    assert all(np.array_equal(before[k], v) for k, v in m.state_dict().items())
    assert all(p.grad is None for _, p in m.named_parameters())


def test_training_reduces_loss():
    m = tiny()
    data = copy_data(64)
    cfg = TR.TrainConfig(lr_peak=1e-2, batch_size=16, warmup_steps=5, max_epochs=15)
    before = TR.evaluate_loss(m, data)
    res = TR.fit(m, data, data[:16], cfg)
    assert TR.evaluate_loss(m, data) < 0.5 * before
    assert res.best.valid_loss == min(h["valid_loss"] for h in res.history if h["valid_loss"] is not None)


def losses(seed):
    m = tiny()
    cfg = TR.TrainConfig(lr_peak=1e-2, batch_size=8, warmup_steps=2, max_epochs=10, seed=seed)
    return [h["train_loss"] for h in TR.fit(m, copy_data(8), copy_data(4, 1), cfg).history]


def test_seeded_trajectory_is_reproducible():
    assert losses(0) == losses(0)
    assert len(losses(0)) == 10


def test_fit_keeps_best_and_resume_matches(tmp_path):
    data, valid = copy_data(32), copy_data(8, 1)
    cfg = TR.TrainConfig(lr_peak=5e-3, batch_size=8, warmup_steps=2, max_epochs=4)
    full = TR.fit(tiny(), data, valid, cfg, out_dir=tmp_path / "a")
    part = TR.fit(tiny(), data, valid, cfg, out_dir=tmp_path / "b", max_epochs=2)
    assert part.last.epoch == 2
    resumed = TR.fit(tiny(), data, valid, cfg, out_dir=tmp_path / "b",
                     resume=ModelCheckpoint.load(tmp_path / "b" / "last"))
    assert [h["train_loss"] for h in resumed.history] == [h["train_loss"] for h in full.history]
    for k, v in full.last.state.items():
        assert np.array_equal(v, resumed.last.state[k])
    best = ModelCheckpoint.load(tmp_path / "a" / "best")
    assert best.valid_loss == min(h["valid_loss"] for h in full.history if h["valid_loss"] is not None)
    assert (tmp_path / "a" / "history.csv").read_text().startswith("step,epoch,lr,train_loss,valid_loss")


def test_empty_sets_rejected():
    cfg = TR.TrainConfig(batch_size=4, warmup_steps=1)
    with pytest.raises(ConfigError):
        TR.fit(tiny(), copy_data(4), [], cfg)
    with pytest.raises(ConfigError):
        TR.fit(tiny(), [], copy_data(4), cfg)
    with pytest.raises(ValueError):
        TR.train_step(tiny(), [], TR.AdamState(), cfg, lr=0.1)


def test_divergence_reports_diagnostics():
    m = tiny()
    name = next(k for k in m.params if "emb" in k)
    m.params[name].data[:] = np.inf
    cfg = TR.TrainConfig(batch_size=4, warmup_steps=1, total_steps=10)
    with pytest.raises(TR.TrainingError, match="step 0"):
        TR.train_step(m, copy_data(4), TR.AdamState(), cfg, lr=0.1, batch_ids=[7, 8, 9, 10])
