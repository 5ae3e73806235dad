"""CPC network: strided conv encoder with channel norm, LSTM context net, prediction heads."""

from __future__ import annotations

import math

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from .config import ModelConfig
from .errors import ShapeError

NORM_EPS = 1e-5
ATTENTION_HEADS = 4


def channel_norm(x: torch.Tensor, gain: torch.Tensor, bias: torch.Tensor, dim: int = -1) -> torch.Tensor:
    """Normalize each frame across its channels (population variance, eps 1e-5),
    then apply the per-channel affine ``gain``/``bias``."""
    mean = x.mean(dim=dim, keepdim=True)
    var = ((x - mean) ** 2).mean(dim=dim, keepdim=True)
    y = (x - mean) / torch.sqrt(var + NORM_EPS)
    shape = [1] * x.dim()
    shape[dim] = -1
    return gain.view(shape) * y + bias.view(shape)


class CPCModel(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        d, c = cfg.channels, cfg.context_dim
        self.convs = nn.ModuleList()
        in_ch = 1
        for k, s, p in zip(cfg.kernel_sizes, cfg.strides, cfg.paddings):
            self.convs.append(nn.Conv1d(in_ch, d, k, stride=s, padding=p))
            in_ch = d
        n = len(self.convs)
        self.norm_gain = nn.ParameterList([nn.Parameter(torch.ones(d)) for _ in range(n)])
        self.norm_bias = nn.ParameterList([nn.Parameter(torch.zeros(d)) for _ in range(n)])
        self.context = nn.LSTM(d, c, num_layers=cfg.context_layers, batch_first=True)
        if cfg.head_type == "attention":
            self.attn_in = nn.Linear(c, 3 * c)
            self.attn_out = nn.Linear(c, c)
        m = cfg.prediction_steps
        self.head_weight = nn.Parameter(torch.zeros(m, d, c))
        self.head_bias = nn.Parameter(torch.zeros(m, d))

    def encode(self, windows: torch.Tensor) -> torch.Tensor:
        """(B, T) samples -> (B, T/160, channels) non-negative frame features."""
        if windows.dim() != 2 or windows.shape[1] % 160:
            raise ShapeError(f"window length must be a multiple of 160; got shape {tuple(windows.shape)}")
        h = windows.unsqueeze(1)
        for conv, g, b in zip(self.convs, self.norm_gain, self.norm_bias):
            h = F.relu(channel_norm(conv(h), g, b, dim=1))
        return h.transpose(1, 2)

    def contextualize(self, z: torch.Tensor) -> torch.Tensor:
        """(B, L, d) -> (B, L, context_dim); zero initial state, causal."""
        out, _ = self.context(z)
        return out

    def _attend(self, c: torch.Tensor) -> torch.Tensor:
        bsz, length, dim = c.shape
        hd = dim // ATTENTION_HEADS
        q, k, v = self.attn_in(c).split(dim, dim=-1)
        q, k, v = (t.view(bsz, length, ATTENTION_HEADS, hd).transpose(1, 2) for t in (q, k, v))
        scores = q @ k.transpose(-1, -2) / math.sqrt(hd)
        future = torch.triu(torch.ones(length, length, dtype=torch.bool, device=c.device), 1)
        scores = scores.masked_fill(future, float("-inf"))
        att = torch.softmax(scores, dim=-1) @ v
        return c + self.attn_out(att.transpose(1, 2).reshape(bsz, length, dim))

    def predict_future(self, c: torch.Tensor) -> torch.Tensor:
        """(B, L, context_dim) -> (B, L, M, d); slice [:, :, m-1] predicts z_{t+m}."""
        if self.cfg.head_type == "attention":
            c = self._attend(c)
        return torch.einsum("blc,mdc->blmd", c, self.head_weight) + self.head_bias

    def forward(self, windows: torch.Tensor):
        z = self.encode(windows)
        c = self.contextualize(z)
        return z, c, self.predict_future(c)


def _uniform(rng: np.random.Generator, shape, fan_in: int) -> torch.Tensor:
    a = math.sqrt(1.0 / fan_in)
    return torch.from_numpy(rng.uniform(-a, a, size=shape).astype(np.float32))


def init_model(cfg: ModelConfig, rng: np.random.Generator) -> CPCModel:
    """Build a model: weights ~ U(-a, a), a = sqrt(1/fan_in); biases zero;
    norm gains one; LSTM forget-gate biases one."""
    model = CPCModel(cfg)
    with torch.no_grad():
        for name, p in model.named_parameters():
            if name.startswith("norm_gain"):
                p.fill_(1.0)
            elif "bias" in name:
                p.zero_()
            elif name.startswith("convs"):
                out_ch, in_ch, k = p.shape
                p.copy_(_uniform(rng, p.shape, in_ch * k))
            elif name.startswith("context.weight"):
                p.copy_(_uniform(rng, p.shape, p.shape[1]))
            elif name == "head_weight":
                p.copy_(_uniform(rng, p.shape, cfg.context_dim))
            elif name.startswith("attn") and name.endswith("weight"):
                p.copy_(_uniform(rng, p.shape, p.shape[1]))
            else:
                raise AssertionError(f"no init rule for {name}")
        h = cfg.context_dim
        for layer in range(cfg.context_layers):
            getattr(model.context, f"bias_ih_l{layer}")[h:2 * h] = 1.0
    return model


def parameters_dict(model: CPCModel) -> dict[str, torch.Tensor]:
    return {name: p for name, p in model.named_parameters()}
