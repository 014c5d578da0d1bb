"""Shared test utilities: independent oracles and finite-difference checks."""

from __future__ import annotations

import hashlib
from pathlib import Path

import numpy as np
import torch


def pairwise_auc_oracle(scores, labels) -> float:
    """Brute-force AUC: count correctly ordered positive/negative pairs."""
    scores = np.asarray(scores, dtype=np.float64)
    pos = scores[np.asarray(labels) == 1]
    neg = scores[np.asarray(labels) == 0]
    wins = 0.0
    for p in pos:
        for n in neg:
            if p > n:
                wins += 1.0
            elif p == n:
                wins += 0.5
    return wins / (len(pos) * len(neg))


def youden_scan_oracle(scores, labels, candidates) -> tuple[float, float]:
    """Exhaustive Youden scan over candidate thresholds: (best tau, best J)."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    best_tau, best_j = None, -np.inf
    for tau in candidates:
        pred = scores >= tau
        sens = pred[labels == 1].mean()
        spec = (~pred[labels == 0]).mean()
        j = sens + spec - 1.0
        if j > best_j:
            best_tau, best_j = tau, j
    return float(best_tau), float(best_j)


def fd_gradient(fn, x: torch.Tensor, h: float = 1e-5) -> torch.Tensor:
    """Central finite-difference gradient of a scalar function at ``x``."""
    x = x.detach().double()
    grad = torch.zeros_like(x)
    flat = x.view(-1)
    gflat = grad.view(-1)
    for i in range(flat.numel()):
        orig = flat[i].item()
        flat[i] = orig + h
        f_plus = float(fn(x))
        flat[i] = orig - h
        f_minus = float(fn(x))
        flat[i] = orig
        gflat[i] = (f_plus - f_minus) / (2 * h)
    return grad


def autograd_gradient(fn, x: torch.Tensor) -> torch.Tensor:
    x = x.detach().double().requires_grad_(True)
    fn(x).backward()
    return x.grad.detach().clone()


def relative_error(a: torch.Tensor, b: torch.Tensor) -> float:
    denom = max(float(a.norm()), float(b.norm()), 1e-12)
    return float((a - b).norm()) / denom


def dir_digest(root: Path) -> str:
    """Order-independent content hash of every file under a directory."""
    h = hashlib.sha256()
    for path in sorted(Path(root).rglob("*")):
        if path.is_file():
            h.update(str(path.relative_to(root)).encode())
            h.update(path.read_bytes())
    return h.hexdigest()
