import dataclasses

import numpy as np
import pytest
import torch

from slowcpc.audio_io import CpcBatch
from slowcpc.checkpoint import load_checkpoint
from slowcpc.config import ModelConfig, RegConfig, TrainConfig, format_config, parse_config
from slowcpc.errors import NonFiniteGradient, ParseError
from slowcpc.model import init_model
from slowcpc.trainer import (
    LOG_COLUMNS,
    ModelState,
    adam_update,
    clip_by_global_norm,
    fit,
    step_batch,
    train_step,
)


class Scalar(torch.nn.Module):
    def __init__(self, value=0.0):
        super().__init__()
        self.theta = torch.nn.Parameter(torch.tensor([value], dtype=torch.float64))


def test_adam_first_step_value():
    state = ModelState.fresh(Scalar())
    cfg = TrainConfig(learning_rate=1e-3)
    adam_update(state, {"theta": torch.tensor([1.0], dtype=torch.float64)}, cfg)
    assert state.step == 1
    assert state.model.theta.item() == pytest.approx(-1e-3 / (1 + 1e-8), rel=1e-12)
    assert state.model.theta.item() == pytest.approx(-9.99999990e-4, abs=1e-12)


def test_adam_zero_gradient_is_fixed_point():
    state = ModelState.fresh(Scalar(0.25))
    for _ in range(3):
        adam_update(state, {"theta": torch.zeros(1, dtype=torch.float64)}, TrainConfig())
    assert state.model.theta.item() == 0.25
    assert state.step == 3


def test_adam_matches_reference_loop():
    """Compare against a plain-numpy Adam written out step by step."""
    rng = np.random.default_rng(0)
    cfg = TrainConfig(learning_rate=0.01, grad_clip_norm=1e9)
    state = ModelState.fresh(Scalar(0.5))
    theta, m, v = 0.5, 0.0, 0.0
    for t in range(1, 8):
        g = float(rng.normal())
        adam_update(state, {"theta": torch.tensor([g], dtype=torch.float64)}, cfg)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        theta -= 0.01 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
        assert state.model.theta.item() == pytest.approx(theta, rel=1e-12)


def test_adam_non_finite_gradient_leaves_state():
    state = ModelState.fresh(Scalar(1.0))
    with pytest.raises(NonFiniteGradient):
        adam_update(state, {"theta": torch.tensor([float("nan")], dtype=torch.float64)}, TrainConfig())
    assert state.model.theta.item() == 1.0 and state.step == 0
    assert state.m["theta"].item() == 0.0


def test_global_norm_clipping():
    grads = {"a": torch.tensor([3.0, 4.0], dtype=torch.float64), "b": torch.tensor([12.0], dtype=torch.float64)}
    clipped, norm = clip_by_global_norm(grads, 10.0)
    assert norm == pytest.approx(13.0)
    total = np.sqrt(sum(float((g ** 2).sum()) for g in clipped.values()))
    assert total <= 10.0 + 1e-9
    same, _ = clip_by_global_norm(grads, 20.0)
    assert torch.equal(same["a"], grads["a"])


def _state(cfg):
    return ModelState.fresh(init_model(cfg.model, np.random.default_rng(cfg.seed)))


def test_train_step_positive_and_deterministic(tiny_dataset, tiny_train_cfg):
    cfg = dataclasses.replace(tiny_train_cfg, reg=RegConfig(combined_mode="none"))
    batch, _ = step_batch(tiny_dataset, cfg, 0, None)
    s1, m1 = train_step(_state(cfg), batch, cfg, np.random.default_rng(9))
    s2, m2 = train_step(_state(cfg), batch, cfg, np.random.default_rng(9))
    assert m1 == m2
    assert np.isfinite(m1["total"]) and m1["total"] > 0
    assert set(m1) == set(LOG_COLUMNS)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_overfit_fixed_batch(tiny_dataset, seed):
    cfg = TrainConfig(batch_size=2, window_samples=1600, learning_rate=1e-2, seed=seed,
                      model=ModelConfig(channels=8, context_dim=8, prediction_steps=2, negatives=4))
    batch, _ = step_batch(tiny_dataset, cfg, 0, None)
    state = _state(cfg)
    losses = []
    for step in range(50):
        state, metrics = train_step(state, batch, cfg, np.random.default_rng([seed, 0]))
        losses.append(metrics["cpc"])
    assert losses[-1] < losses[0]


def test_fit_single_step(tmp_path, tiny_dataset, tiny_train_cfg):
    cfg = dataclasses.replace(tiny_train_cfg, steps=1)
    final = fit(cfg, tiny_dataset, tmp_path)
    assert sorted(p.name for p in tmp_path.glob("*.cpck")) == [final.name]
    lines = (tmp_path / "train_log.tsv").read_text().splitlines()
    assert len(lines) == 1 and len(lines[0].split("\t")) == 7


def test_fit_checkpoint_schedule_and_resume(tmp_path, tiny_dataset, tiny_train_cfg):
    cfg = dataclasses.replace(tiny_train_cfg, steps=5)
    straight = fit(cfg, tiny_dataset, tmp_path / "a")
    assert [p.name for p in sorted((tmp_path / "a").glob("*.cpck"))] == \
        ["ckpt_00000002.cpck", "ckpt_00000004.cpck", "ckpt_00000005.cpck"]
    # stop at step 2, then resume to 5: identical bytes to the uninterrupted run
    fit(dataclasses.replace(cfg, steps=2), tiny_dataset, tmp_path / "b")
    resumed = fit(cfg, tiny_dataset, tmp_path / "b", resume=tmp_path / "b" / "ckpt_00000002.cpck")
    assert load_checkpoint(resumed).step == 5
    assert resumed.read_bytes() == straight.read_bytes()
    assert (tmp_path / "a" / "train_log.tsv").read_text() == (tmp_path / "b" / "train_log.tsv").read_text()


def test_fit_is_bit_deterministic(tmp_path, tiny_dataset, tiny_train_cfg):
    a = fit(tiny_train_cfg, tiny_dataset, tmp_path / "a")
    b = fit(tiny_train_cfg, tiny_dataset, tmp_path / "b")
    assert a.read_bytes() == b.read_bytes()


def test_step_counter_monotone(tmp_path, tiny_dataset, tiny_train_cfg):
    fit(tiny_train_cfg, tiny_dataset, tmp_path)
    steps = [int(l.split("\t")[0]) for l in (tmp_path / "train_log.tsv").read_text().splitlines()]
    assert steps == [1, 2, 3]


def test_future_branch_used_for_positives(tiny_dataset, tiny_train_cfg):
    batch, _ = step_batch(tiny_dataset, tiny_train_cfg, 0, None)
    noisy = CpcBatch(batch.past_windows, batch.future_source + 0.05, batch.speaker_ids, batch.window_origin)
    _, m_clean = train_step(_state(tiny_train_cfg), batch, tiny_train_cfg, np.random.default_rng(1))
    _, m_noisy = train_step(_state(tiny_train_cfg), noisy, tiny_train_cfg, np.random.default_rng(1))
    assert m_clean["cpc"] != m_noisy["cpc"]
    assert m_clean["se"] == m_noisy["se"] and m_clean["lorr"] == m_noisy["lorr"]


# --- config file -----------------------------------------------------------------

def test_config_round_trip():
    cfg = TrainConfig(steps=7, seed=3, model=ModelConfig(channels=16, head_type="attention"),
                      reg=RegConfig(combined_mode="lorr", window=3))
    assert parse_config(format_config(cfg)) == cfg


def test_config_defaults_and_comments():
    cfg = parse_config("# comment\nsteps = 10\n\nmodel.channels = 32  # trailing\naug.enabled_ops = pitch, reverb\n")
    assert cfg.steps == 10 and cfg.model.channels == 32
    assert cfg.aug.enabled_ops == ("pitch", "reverb")
    assert cfg.batch_size == 12 and cfg.learning_rate == 2e-4


@pytest.mark.parametrize("text", ["bogus = 1", "model.nope = 3", "reg.combined_mode = both",
                                  "steps = many", "steps 3", "steps = 0"])
def test_config_errors(text):
    with pytest.raises(ParseError):
        parse_config(text)
