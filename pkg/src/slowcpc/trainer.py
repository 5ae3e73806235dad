"""Optimization loop: Adam with global-norm clipping, train steps, and ``fit``."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .audio_io import CpcBatch, Dataset, sample_training_windows
from .augment import NoiseCache, augment_future
from .checkpoint import Checkpoint, assign_parameters, load_checkpoint, save_checkpoint
from .config import TrainConfig
from .errors import ConfigMismatch, NonFiniteGradient
from .losses import sample_negatives, total_loss
from .model import CPCModel, init_model

log = logging.getLogger(__name__)

LOG_COLUMNS = ("step", "total", "cpc", "se", "lorr", "accuracy", "grad_norm")


@dataclass
class ModelState:
    model: CPCModel
    m: dict[str, torch.Tensor] = field(default_factory=dict)
    v: dict[str, torch.Tensor] = field(default_factory=dict)
    step: int = 0

    @classmethod
    def fresh(cls, model: CPCModel) -> "ModelState":
        params = dict(model.named_parameters())
        return cls(model,
                   {k: torch.zeros_like(p) for k, p in params.items()},
                   {k: torch.zeros_like(p) for k, p in params.items()})

    def params(self) -> dict[str, torch.Tensor]:
        return dict(self.model.named_parameters())


def _rng(seed: int, *stream: int) -> np.random.Generator:
    return np.random.default_rng([seed, *stream])


def clip_by_global_norm(grads: dict[str, torch.Tensor], max_norm: float):
    norm = math.sqrt(sum(float((g.double() ** 2).sum()) for g in grads.values()))
    if norm > max_norm:
        scale = max_norm / norm
        grads = {k: g * scale for k, g in grads.items()}
    return grads, norm


def adam_update(state: ModelState, grads: dict[str, torch.Tensor], cfg: TrainConfig) -> ModelState:
    """One bias-corrected Adam step after global-norm clipping; mutates ``state`` in place.

    Raises NonFiniteGradient (state untouched) if any gradient entry is NaN/inf.
    """
    params = state.params()
    if set(grads) != set(params):
        raise ValueError("gradient names do not match parameters")
    for name, g in grads.items():
        if g.shape != params[name].shape:
            raise ValueError(f"gradient shape mismatch for {name}")
        if not torch.isfinite(g).all():
            raise NonFiniteGradient(f"non-finite gradient in {name}")
    grads, _ = clip_by_global_norm(grads, cfg.grad_clip_norm)
    t = state.step + 1
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    with torch.no_grad():
        for name, p in params.items():
            g = grads[name]
            m = state.m[name].mul_(b1).add_(g, alpha=1.0 - b1)
            v = state.v[name].mul_(b2).addcmul_(g, g, value=1.0 - b2)
            p.sub_(cfg.learning_rate * (m / c1) / (torch.sqrt(v / c2) + cfg.adam_eps))
    state.step = t
    return state


def forward_losses(model: CPCModel, batch: CpcBatch, cfg: TrainConfig, rng: np.random.Generator):
    past = torch.from_numpy(np.ascontiguousarray(batch.past_windows, dtype=np.float32))
    z_past = model.encode(past)
    if batch.future_source is batch.past_windows or np.array_equal(batch.future_source, batch.past_windows):
        z_future = z_past
    else:
        future = torch.from_numpy(np.ascontiguousarray(batch.future_source, dtype=np.float32))
        z_future = model.encode(future)
    c = model.contextualize(z_past)
    pred = model.predict_future(c)
    negs = sample_negatives(z_past.shape[0], z_past.shape[1], cfg.model.prediction_steps,
                            cfg.model.negatives, rng)
    return total_loss(z_past, z_future, pred, negs, cfg.reg)


def train_step(state: ModelState, batch: CpcBatch, cfg: TrainConfig, rng: np.random.Generator):
    """Forward, backward and one Adam update. Returns ``(state, metrics)``."""
    model = state.model
    model.zero_grad(set_to_none=True)
    loss, parts = forward_losses(model, batch, cfg, rng)
    loss.backward()
    grads = {k: (p.grad if p.grad is not None else torch.zeros_like(p))
             for k, p in model.named_parameters()}
    grad_norm = math.sqrt(sum(float((g.double() ** 2).sum()) for g in grads.values()))
    adam_update(state, grads, cfg)
    metrics = {
        "step": state.step,
        "total": float(loss.detach()),
        "cpc": float(parts["cpc"].detach()),
        "se": float(parts["se"].detach()),
        "lorr": float(parts["lorr"].detach()),
        "accuracy": float(parts["accuracy"].mean()),
        "grad_norm": grad_norm,
    }
    return state, metrics


def step_batch(dataset: Dataset, cfg: TrainConfig, step: int, cache: NoiseCache | None):
    """The batch and loss rng for ``step`` depend only on (seed, step)."""
    rng = _rng(cfg.seed, 1, step)
    batch = sample_training_windows(dataset, cfg.window_samples, cfg.batch_size, rng)
    if cfg.aug.enabled_ops:
        batch = augment_future(batch, cfg.aug, cache, rng)
    return batch, rng


def format_log_line(metrics: dict) -> str:
    vals = [str(metrics["step"])] + [repr(float(metrics[k])) for k in LOG_COLUMNS[1:]]
    return "\t".join(vals) + "\n"


def checkpoint_name(step: int) -> str:
    return f"ckpt_{step:08d}.cpck"


def save_state(path: Path, state: ModelState, cfg: TrainConfig) -> None:
    save_checkpoint(path, state.params(), (state.m, state.v), cfg.model, state.step, cfg)


def state_from_checkpoint(ck: Checkpoint, cfg: TrainConfig) -> ModelState:
    if ck.model_cfg != cfg.model:
        raise ConfigMismatch("checkpoint model config differs from the training config")
    model = CPCModel(cfg.model)
    assign_parameters(model, ck.group("param"))
    state = ModelState.fresh(model)
    for name in state.m:
        state.m[name] = torch.from_numpy(ck.arrays["adam_m/" + name]).to(torch.float32)
        state.v[name] = torch.from_numpy(ck.arrays["adam_v/" + name]).to(torch.float32)
    state.step = ck.step
    return state


def fit(cfg: TrainConfig, dataset: Dataset, out_dir: str | Path,
        resume: str | Path | None = None, progress_every: int = 0) -> Path:
    """Train to ``cfg.steps`` total steps; returns the final checkpoint path.

    Writes ``ckpt_<step>.cpck`` every ``checkpoint_every`` steps and at the end,
    and appends one tab-separated line per step to ``train_log.tsv``.
    """
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    torch.manual_seed(cfg.seed)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    log_path = out / "train_log.tsv"
    if resume is not None:
        state = state_from_checkpoint(load_checkpoint(resume), cfg)
        keep = []
        if log_path.exists():
            keep = [ln for ln in log_path.read_text().splitlines(keepends=True)
                    if int(ln.split("\t", 1)[0]) <= state.step]
        log_path.write_text("".join(keep))
    else:
        state = ModelState.fresh(init_model(cfg.model, _rng(cfg.seed, 0)))
        log_path.write_text("")
    cache = None
    if "noise" in cfg.aug.enabled_ops and cfg.aug.noise_dir:
        cache = NoiseCache.load(cfg.aug.noise_dir)
    last = None
    with log_path.open("a") as fh:
        while state.step < cfg.steps:
            if cache is not None:
                cache = cache.maybe_refresh(state.step)
            batch, rng = step_batch(dataset, cfg, state.step, cache)
            state, metrics = train_step(state, batch, cfg, rng)
            fh.write(format_log_line(metrics))
            if progress_every and state.step % progress_every == 0:
                log.info("step %d loss %.4f acc %.3f", state.step, metrics["total"], metrics["accuracy"])
            if state.step % cfg.checkpoint_every == 0 or state.step == cfg.steps:
                fh.flush()
                last = out / checkpoint_name(state.step)
                save_state(last, state, cfg)
    if last is None:
        last = out / checkpoint_name(state.step)
        save_state(last, state, cfg)
    return last
