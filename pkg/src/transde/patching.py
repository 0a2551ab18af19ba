"""Multi-scale patch views of a decomposed window.

For patch size ``P`` a window of length ``W`` holds ``N = W // P`` patches and
position ``t`` maps to ``(n, p) = divmod(t, P)``.  The inter-patch view has one
token per patch (features = the ``P`` values inside it); the intra-patch view
has one token per in-patch offset (features = that offset's value in each of
the ``N`` patches).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from transde.errors import ConfigError

# window, patch sizes per benchmark
BENCHMARK_CONFIGS = {
    "MSL": (90, (3, 5)),
    "SMAP": (105, (3, 5, 7)),
    "PSM": (60, (1, 3, 5)),
    "SMD": (105, (5, 7)),
    "SWaT": (105, (3, 5, 7)),
}


@dataclass(frozen=True)
class PatchConfig:
    window: int
    sizes: tuple

    @property
    def channels(self) -> int:
        return len(self.sizes)

    def num_patches(self, P: int) -> int:
        return self.window // P


@dataclass(frozen=True)
class PatchTokens:
    intra: np.ndarray  # (..., d, P, N)
    inter: np.ndarray  # (..., d, N, P)
    P: int
    N: int


def validate_config(cfg: PatchConfig) -> PatchConfig:
    sizes = tuple(int(p) for p in cfg.sizes)
    if not sizes:
        raise ConfigError("at least one patch size is required")
    if len(set(sizes)) != len(sizes):
        raise ConfigError(f"patch sizes must be distinct, got {list(sizes)}")
    if cfg.window < 1:
        raise ConfigError("window must be positive")
    for P in sizes:
        if P < 1 or cfg.window % P:
            raise ConfigError(f"patch size must divide window: {P} does not divide {cfg.window}")
    return PatchConfig(int(cfg.window), sizes)


def make_patches(component, P: int) -> PatchTokens:
    """Patch a ``(..., W, d)`` component; the variable axis moves in front of the tokens."""
    component = np.asarray(component)
    W = component.shape[-2]
    if P < 1 or W % P:
        raise ConfigError(f"patch size must divide window: {P} does not divide {W}")
    N = W // P
    per_var = np.swapaxes(component, -1, -2)  # (..., d, W)
    inter = per_var.reshape(per_var.shape[:-1] + (N, P))
    intra = np.swapaxes(inter, -1, -2)
    return PatchTokens(np.ascontiguousarray(intra), np.ascontiguousarray(inter), P, N)
