"""Linear probes on frozen features (phone per frame, speaker per utterance)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch.nn import functional as F

from ..errors import SingleClass


@dataclass
class ProbeReport:
    task: str
    train_accuracy: float
    test_accuracy: float
    num_classes: int
    initial_train_accuracy: float = 0.0


def utterance_embedding(context: np.ndarray) -> np.ndarray:
    """The last context frame, which has seen the whole utterance."""
    context = np.asarray(context)
    if context.ndim != 2 or context.shape[0] < 1:
        raise ValueError("context features must be a non-empty L x d matrix")
    return context[-1]


def _accuracy(w, b, x, y) -> float:
    if len(y) == 0:
        return 0.0
    with torch.no_grad():
        return 100.0 * float((torch.argmax(x @ w + b, dim=1) == y).double().mean())


def train_linear_probe(features: np.ndarray, labels, train_idx, test_idx, epochs: int = 10,
                       lr: float = 1e-2, batch_size: int = 256, seed: int = 0,
                       task: str = "phone") -> ProbeReport:
    """Softmax regression trained with Adam on ``train_idx``; accuracies in percent."""
    labels = np.asarray(labels)
    classes = np.unique(labels)
    if len(classes) < 2:
        raise SingleClass(f"probe needs >= 2 classes, got {len(classes)}")
    y_all = torch.from_numpy(np.searchsorted(classes, labels).astype(np.int64))
    x_all = torch.from_numpy(np.asarray(features, dtype=np.float32))
    train_idx = torch.as_tensor(np.asarray(train_idx, dtype=np.int64))
    test_idx = torch.as_tensor(np.asarray(test_idx, dtype=np.int64))
    x_tr, y_tr = x_all[train_idx], y_all[train_idx]
    x_te, y_te = x_all[test_idx], y_all[test_idx]

    gen = torch.Generator().manual_seed(seed)
    w = torch.zeros(x_all.shape[1], len(classes), requires_grad=True)
    b = torch.zeros(len(classes), requires_grad=True)
    opt = torch.optim.Adam([w, b], lr=lr)
    initial = _accuracy(w, b, x_tr, y_tr)
    for _ in range(epochs):
        order = torch.randperm(len(y_tr), generator=gen)
        for start in range(0, len(order), batch_size):
            idx = order[start:start + batch_size]
            opt.zero_grad()
            F.cross_entropy(x_tr[idx] @ w + b, y_tr[idx]).backward()
            opt.step()
    return ProbeReport(task, _accuracy(w, b, x_tr, y_tr), _accuracy(w, b, x_te, y_te),
                       len(classes), initial)
