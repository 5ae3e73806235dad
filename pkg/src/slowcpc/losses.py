"""InfoNCE, self-expressing and left-or-right losses, and their combination.

All functions take batched ``(B, L, d)`` tensors (a single ``(L, d)`` sequence
is promoted to a batch of one) and are differentiable with autograd in any
floating dtype.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .config import RegConfig
from .errors import DegenerateRange

NORM_FLOOR = 1e-8


def _batched(z: torch.Tensor) -> torch.Tensor:
    return z.unsqueeze(0) if z.dim() == 2 else z


# --- negatives --------------------------------------------------------------

@dataclass
class NegativeSet:
    """Flat frame indices ``row * L + frame`` of shape (B, L - M, M, K)."""

    indices: np.ndarray
    length: int

    def pairs(self, b: int, t: int, m: int) -> list[tuple[int, int]]:
        """The K (row, frame) pairs for reference time t and step m (1-based m)."""
        return [divmod(int(i), self.length) for i in self.indices[b, t, m - 1]]


def sample_negatives(num_rows: int, length: int, steps: int, k: int,
                     rng: np.random.Generator) -> NegativeSet:
    """Draw K negatives per (row, reference time, step) uniformly with replacement
    from every frame in the batch except the positive (b, t + m)."""
    valid = length - steps
    if valid < 1:
        raise DegenerateRange(f"sequence length {length} leaves no reference time for M={steps}")
    pool = num_rows * length
    if k > 0 and pool < 2:
        raise ValueError("need at least 2 frames in the batch to draw negatives")
    b = np.arange(num_rows)[:, None, None, None]
    t = np.arange(valid)[None, :, None, None]
    m = np.arange(1, steps + 1)[None, None, :, None]
    positive = b * length + t + m
    draw = rng.integers(0, max(pool - 1, 1), size=(num_rows, valid, steps, k))
    # skip over the positive: values >= positive shift up by one
    return NegativeSet(draw + (draw >= positive), length)


# --- InfoNCE ----------------------------------------------------------------

def cpc_scores(z: torch.Tensor, predictions: torch.Tensor, negatives: NegativeSet) -> torch.Tensor:
    """Candidate scores (B, L-M, M, 1+K); column 0 is the positive."""
    bsz, length, d = z.shape
    steps = predictions.shape[2]
    valid = length - steps
    pred = predictions[:, :valid]
    pos = torch.stack([z[:, m:m + valid] for m in range(1, steps + 1)], dim=2)
    s_pos = (pos * pred).sum(-1, keepdim=True)
    all_scores = pred.reshape(-1, d) @ z.reshape(-1, d).T
    idx = torch.as_tensor(negatives.indices, dtype=torch.long).reshape(all_scores.shape[0], -1)
    s_neg = torch.gather(all_scores, 1, idx).reshape(bsz, valid, steps, -1)
    return torch.cat([s_pos, s_neg], dim=-1)


def cpc_loss(z: torch.Tensor, predictions: torch.Tensor, negatives: NegativeSet):
    """InfoNCE averaged over steps m=1..M and reference times t with t + M <= L.

    ``z`` (B, L, d) supplies positives and negatives; ``predictions`` is
    (B, L, M, d). Returns ``(loss, per-step accuracy)`` where accuracy counts
    times the positive strictly beats every negative.
    """
    z = _batched(z)
    if predictions.dim() == 3:
        predictions = predictions.unsqueeze(0)
    steps = predictions.shape[2]
    if z.shape[1] <= steps:
        raise DegenerateRange(f"L={z.shape[1]} <= M={steps}")
    scores = cpc_scores(z, predictions, negatives)
    log_prob = torch.log_softmax(scores, dim=-1)[..., 0]
    loss = -log_prob.mean()
    with torch.no_grad():
        if scores.shape[-1] > 1:
            hit = scores[..., 0] > scores[..., 1:].max(dim=-1).values
        else:
            hit = torch.ones_like(scores[..., 0], dtype=torch.bool)
        accuracy = hit.to(torch.float64).mean(dim=(0, 1))
    return loss, accuracy


# --- self-expressing ---------------------------------------------------------

def affinity(z: torch.Tensor) -> torch.Tensor:
    """Pairwise cosine similarities (B, L, L); rows/columns of near-zero frames are 0."""
    z = _batched(z)
    norm = z.norm(dim=-1, keepdim=True)
    live = norm >= NORM_FLOOR
    u = torch.where(live, z / torch.where(live, norm, torch.ones_like(norm)), torch.zeros_like(z))
    return u @ u.transpose(-1, -2)


def self_express(z: torch.Tensor) -> torch.Tensor:
    """Express each frame as the row-normalized affinity-weighted mix of the others.

    Frames whose off-diagonal affinities sum below 1e-8 are left as themselves.
    """
    squeeze = z.dim() == 2
    z = _batched(z)
    a = affinity(z)
    eye = torch.eye(z.shape[1], dtype=torch.bool, device=z.device)
    b = a.masked_fill(eye, 0.0)
    rows = b.sum(-1, keepdim=True)
    ok = rows >= NORM_FLOOR
    mixed = (b / torch.where(ok, rows, torch.ones_like(rows))) @ z
    out = torch.where(ok, mixed, z)
    return out[0] if squeeze else out


def se_loss(z: torch.Tensor) -> torch.Tensor:
    """Mean squared residual between the frames and their self-expressed version."""
    z = _batched(z)
    return ((z - self_express(z)) ** 2).mean()


# --- left-or-right -----------------------------------------------------------

def lorr_loss(z: torch.Tensor, w: int = 2) -> torch.Tensor:
    """Per frame, the smaller summed variance of the w-frame windows ending and
    starting at that frame; averaged over frames (and rows)."""
    if w < 2:
        raise ValueError("window must be >= 2")
    z = _batched(z)
    bsz, length, _ = z.shape
    if length < w:
        return z.sum() * 0.0
    win = z.unfold(1, w, 1)
    cost = win.var(dim=-1, unbiased=False).sum(-1)
    inf = torch.full((bsz, w - 1), float("inf"), dtype=z.dtype, device=z.device)
    left = torch.cat([inf, cost], dim=1)
    right = torch.cat([cost, inf], dim=1)
    per_frame = torch.minimum(left, right)
    per_frame = torch.where(torch.isinf(per_frame), torch.zeros_like(per_frame), per_frame)
    return per_frame.mean()


# --- combination -------------------------------------------------------------

def combine(cpc: torch.Tensor, se: torch.Tensor, lorr: torch.Tensor, reg: RegConfig) -> torch.Tensor:
    mode = reg.combined_mode
    if mode == "none":
        return cpc
    if mode == "se":
        return cpc + reg.lambda_se * se
    if mode == "lorr":
        return cpc + reg.alpha_lorr * lorr
    return cpc + 0.5 * (reg.alpha_lorr * lorr + reg.lambda_se * se)


def total_loss(z_past: torch.Tensor, z_future: torch.Tensor, predictions: torch.Tensor,
               negatives: NegativeSet, reg: RegConfig):
    """Training objective plus a breakdown of every raw component.

    Regularizers act on ``z_past``; positives/negatives come from ``z_future``.
    Components not used by the mode are computed without gradient.
    """
    cpc, acc = cpc_loss(z_future, predictions, negatives)
    use_se = reg.combined_mode in ("se", "se+lorr")
    use_lorr = reg.combined_mode in ("lorr", "se+lorr")
    with torch.set_grad_enabled(use_se and torch.is_grad_enabled()):
        se = se_loss(z_past)
    with torch.set_grad_enabled(use_lorr and torch.is_grad_enabled()):
        lorr = lorr_loss(z_past, reg.window)
    total = combine(cpc, se, lorr, reg)
    return total, {"cpc": cpc, "se": se, "lorr": lorr, "accuracy": acc}
