"""Model container: preprocessing, encoder parameters, optimizer state, checkpoint I/O."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from transde import checkpoint
from transde.data import NormalizerStats, STD_FLOOR, TimeSeriesDataset, apply_normalizer, fit_normalizer
from transde.decomposition import DEFAULT_ALPHA, decompose_batch
from transde.encoder import EncoderConfig, EncoderParams, encode
from transde.errors import ConfigError, DataError

NORMALIZE_MODES = ("input", "none", "per-component")


@dataclass
class ComponentStats:
    """Per-variable z-score statistics of the trend and cyclical components, ``(2, d)`` each."""
    mean: np.ndarray
    std: np.ndarray


class TransDe:
    def __init__(self, config: EncoderConfig, params: Optional[EncoderParams] = None,
                 alpha: float = DEFAULT_ALPHA, normalize: str = "input", seed: int = 0):
        if normalize not in NORMALIZE_MODES:
            raise ConfigError(f"normalize must be one of {NORMALIZE_MODES}")
        if not alpha > 0:
            raise ConfigError("alpha must be positive")
        self.config = config
        self.params = params if params is not None else EncoderParams.init(config, seed)
        self.alpha = float(alpha)
        self.normalize = normalize
        self.seed = seed
        self.normalizer: Optional[NormalizerStats] = None
        self.component_stats: Optional[ComponentStats] = None
        self.optimizer_state: dict = {}
        self.extra_config: dict = {}

    @property
    def d(self) -> Optional[int]:
        if self.normalizer is not None:
            return self.normalizer.d
        return None

    # ------------------------------------------------------------------
    # preprocessing
    # ------------------------------------------------------------------

    def fit_preprocessing(self, train: TimeSeriesDataset) -> None:
        self.normalizer = fit_normalizer(train)
        if self.normalize == "per-component":
            from transde.data import sliding_windows
            windows = sliding_windows(train, self.config.window).windows
            comps = decompose_batch(windows, self.alpha)
            mean = comps.mean(axis=(0, 2))
            std = np.maximum(comps.std(axis=(0, 2)), STD_FLOOR)
            self.component_stats = ComponentStats(mean, std)

    def prepare(self, ds: TimeSeriesDataset) -> TimeSeriesDataset:
        if self.normalizer is None:
            raise ConfigError("preprocessing has not been fitted")
        if ds.d != self.normalizer.d:
            raise DataError(f"dimension mismatch: model expects d={self.normalizer.d}, data has d={ds.d}")
        if self.normalize == "input":
            return apply_normalizer(ds, self.normalizer)
        return ds

    def components(self, windows: np.ndarray) -> np.ndarray:
        """``(B, W, d)`` prepared windows -> ``(B, 2, W, d)`` (trend, cyclical)."""
        comps = decompose_batch(windows, self.alpha)
        if self.normalize == "per-component":
            s = self.component_stats
            comps = (comps - s.mean[None, :, None, :]) / s.std[None, :, None, :]
        return comps

    def represent(self, components: np.ndarray):
        intra, inter = encode(components, self.params)
        return intra.value, inter.value

    # ------------------------------------------------------------------
    # persistence
    # ------------------------------------------------------------------

    def config_dict(self) -> dict:
        cfg = self.config.to_dict()
        cfg.update(alpha=self.alpha, normalize=self.normalize, seed=self.seed,
                   dtype=str(self.params.leaves()[0].dtype))
        cfg.update(self.extra_config)
        return cfg

    def tensors(self) -> dict:
        out = {f"param/{k}": v for k, v in self.params.arrays().items()}
        if self.normalizer is not None:
            out["norm/mean"] = self.normalizer.mean
            out["norm/std"] = self.normalizer.std
        if self.component_stats is not None:
            out["norm/component_mean"] = self.component_stats.mean
            out["norm/component_std"] = self.component_stats.std
        for k, v in self.optimizer_state.items():
            out[f"optim/{k}"] = v
        return out

    def save(self, path) -> None:
        checkpoint.save(path, self.tensors(), self.config_dict())

    @classmethod
    def load(cls, path) -> "TransDe":
        tensors, cfg = checkpoint.load(path)
        try:
            config = EncoderConfig(cfg["window"], tuple(cfg["patch_sizes"]), cfg["d_model"],
                                   cfg["heads"], cfg["layers"], cfg.get("patch_level", "both"))
        except KeyError as exc:
            raise DataError(f"checkpoint config is missing {exc}") from None
        from transde import autodiff as ad
        params = EncoderParams(config, {k[len("param/"):]: ad.leaf(v, name=k[len("param/"):])
                                        for k, v in tensors.items() if k.startswith("param/")})
        model = cls(config, params, alpha=cfg["alpha"], normalize=cfg["normalize"], seed=cfg.get("seed", 0))
        if "norm/mean" in tensors:
            model.normalizer = NormalizerStats(tensors["norm/mean"], tensors["norm/std"])
        if "norm/component_mean" in tensors:
            model.component_stats = ComponentStats(tensors["norm/component_mean"],
                                                   tensors["norm/component_std"])
        model.optimizer_state = {k[len("optim/"):]: v for k, v in tensors.items() if k.startswith("optim/")}
        known = set(config.to_dict()) | {"alpha", "normalize", "seed", "dtype"}
        model.extra_config = {k: v for k, v in cfg.items() if k not in known}
        return model
