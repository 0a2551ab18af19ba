"""Divergences between the intra-patch and inter-patch views.

The training objective is ``(L_intra - L_inter) / C``.  With the default
symmetric KL both terms have the same forward value, so the objective is
identically zero; only the stop-gradient placement makes the two gradients
differ.  ``L_intra / C`` is what gets reported while training.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from transde import autodiff as ad
from transde.errors import ConfigError

LOSS_VARIANTS = ("symmetric-kl", "simple-kl", "js")


@dataclass(frozen=True)
class LossConfig:
    variant: str = "symmetric-kl"
    stop_intra: bool = True
    stop_inter: bool = True
    epsilon: float = 1e-8

    def __post_init__(self):
        if self.variant not in LOSS_VARIANTS:
            raise ConfigError(f"loss variant must be one of {LOSS_VARIANTS}, got {self.variant!r}")
        if not self.epsilon > 0:
            raise ConfigError("epsilon must be positive")


# ---------------------------------------------------------------------------
# plain numpy divergences (summed over every row of the matrices)
# ---------------------------------------------------------------------------


def _check_pair(p, q):
    p, q = np.asarray(p, dtype=np.float64), np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {q.shape}")
    return p, q


def kl_rows(p, q, epsilon: float = 1e-8) -> float:
    p, q = _check_pair(p, q)
    return float(np.sum(p * (np.log(np.maximum(p, epsilon)) - np.log(np.maximum(q, epsilon)))))


def simple_kl_rows(p, q, epsilon: float = 1e-8) -> float:
    return kl_rows(p, q, epsilon)


def symmetric_kl_rows(p, q, epsilon: float = 1e-8) -> float:
    return kl_rows(p, q, epsilon) + kl_rows(q, p, epsilon)


def js_rows(p, q, epsilon: float = 1e-8) -> float:
    p, q = _check_pair(p, q)
    m = (p + q) / 2
    return 0.5 * kl_rows(p, m, epsilon) + 0.5 * kl_rows(q, m, epsilon)


# ---------------------------------------------------------------------------
# graph versions
# ---------------------------------------------------------------------------


def _kl(p, q, eps, weights):
    """Batch-mean of ``sum p (log p - log q)`` over all non-batch axes of ``(B, C, 2, W, W)``."""
    term = ad.mul(p, ad.sub(ad.log(p, eps), ad.log(q, eps)))
    if weights is not None:
        term = ad.mul(term, np.asarray(weights, dtype=term.dtype).reshape(1, 1, -1, 1, 1))
    per_window = ad.sum(ad.reshape(term, (term.shape[0], -1)), axis=1)
    return ad.mean(per_window)


def _divergence(own, other, variant, eps, weights):
    if variant == "symmetric-kl":
        return ad.add(_kl(own, other, eps, weights), _kl(other, own, eps, weights))
    if variant == "simple-kl":
        return _kl(own, other, eps, weights)
    mid = ad.scale(ad.add(own, other), 0.5)
    return ad.scale(ad.add(_kl(own, mid, eps, weights), _kl(other, mid, eps, weights)), 0.5)


def loss_intra(intra, inter, cfg: LossConfig = LossConfig(), weights: Optional[np.ndarray] = None):
    """Divergence of the intra view against the (stopped) inter view.

    ``weights`` optionally scales the trend/cyclical components.
    """
    other = ad.stop_gradient(inter) if cfg.stop_inter else inter
    return _divergence(intra, other, cfg.variant, cfg.epsilon, weights)


def loss_inter(intra, inter, cfg: LossConfig = LossConfig(), weights: Optional[np.ndarray] = None):
    other = ad.stop_gradient(intra) if cfg.stop_intra else intra
    return _divergence(inter, other, cfg.variant, cfg.epsilon, weights)


@dataclass
class LossTerms:
    total: ad.Tensor
    intra: ad.Tensor
    inter: ad.Tensor
    channels: int

    @property
    def monitor(self) -> float:
        return float(self.intra.value) / self.channels


def total_loss(intra, inter, cfg: LossConfig = LossConfig(),
               weights: Optional[np.ndarray] = None) -> LossTerms:
    channels = intra.shape[1]
    if channels < 1:
        raise ValueError("need at least one channel")
    li = loss_intra(intra, inter, cfg, weights)
    le = loss_inter(intra, inter, cfg, weights)
    total = ad.scale(ad.sub(li, le), 1.0 / channels)
    return LossTerms(total, li, le, channels)
