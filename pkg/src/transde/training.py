"""Adam optimizer and the training loop."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from transde import autodiff as ad
from transde.data import TimeSeriesDataset, sliding_windows
from transde.encoder import encode
from transde.errors import ConfigError, NumericError
from transde.losses import LossConfig, total_loss
from transde.model import TransDe

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-4
    batch_size: int = 32
    epochs: int = 3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    stride: Optional[int] = None  # defaults to the window length

    def __post_init__(self):
        if not self.lr >= 0:
            raise ConfigError("learning rate must be non-negative")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch size must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


class Adam:
    """Adaptive moment estimation with bias-corrected first and second moments."""

    def __init__(self, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8, state: Optional[dict] = None):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m: dict = {}
        self.v: dict = {}
        self.t = 0
        if state:
            self.t = int(state["step"][0]) if "step" in state else 0
            self.m = {k[2:]: v.copy() for k, v in state.items() if k.startswith("m.")}
            self.v = {k[2:]: v.copy() for k, v in state.items() if k.startswith("v.")}

    def step(self, params: dict) -> None:
        """Update every tensor in ``params`` (name -> leaf) in place from its ``.grad``."""
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, p in params.items():
            g = p.grad
            dt = p.value.dtype
            if name not in self.m:
                self.m[name] = np.zeros_like(p.value)
                self.v[name] = np.zeros_like(p.value)
            m = self.m[name] = (self.beta1 * self.m[name] + (1 - self.beta1) * g).astype(dt)
            v = self.v[name] = (self.beta2 * self.v[name] + (1 - self.beta2) * g * g).astype(dt)
            m_hat = m / dt.type(bc1)
            v_hat = v / dt.type(bc2)
            p.value = (p.value - dt.type(self.lr) * m_hat / (np.sqrt(v_hat) + dt.type(self.eps))).astype(dt)

    def state(self) -> dict:
        out = {"step": np.array([self.t], dtype=np.int64)}
        out.update({f"m.{k}": v for k, v in self.m.items()})
        out.update({f"v.{k}": v for k, v in self.v.items()})
        return out


def train(dataset: TimeSeriesDataset, model: TransDe, cfg: TrainConfig = TrainConfig(),
          loss_cfg: LossConfig = LossConfig()) -> list:
    """Fit ``model`` on the (normal) training split; returns per-epoch mean ``L_intra / C``.

    Windows are decomposed once up front since the decomposition has no
    parameters.  Batch order is shuffled with a generator seeded by ``cfg.seed``.
    """
    if model.normalizer is None:
        model.fit_preprocessing(dataset)
    prepared = model.prepare(dataset)
    W = model.config.window
    batch = sliding_windows(prepared, W, cfg.stride or W)
    comps = model.components(batch.windows)

    rng = np.random.default_rng(cfg.seed)
    opt = Adam(cfg.lr, cfg.beta1, cfg.beta2, cfg.eps, state=model.optimizer_state)
    params = model.params.tensors
    history = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(comps))
        seen = []
        for start in range(0, len(order), cfg.batch_size):
            idx = np.sort(order[start:start + cfg.batch_size])
            intra, inter = encode(comps[idx], model.params)
            terms = total_loss(intra, inter, loss_cfg)
            if not np.isfinite(terms.monitor):
                raise NumericError(f"loss became NaN at epoch {epoch + 1}")
            ad.zero_grad(model.params.leaves())
            ad.backward(terms.total)
            opt.step(params)
            seen.append(terms.monitor)
        history.append(float(np.mean(seen)))
        log.info("epoch %d  loss_intra/C = %.6f", epoch + 1, history[-1])
    model.optimizer_state = opt.state()
    return history
