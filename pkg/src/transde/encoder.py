"""Patch-attention encoder producing intra-patch and inter-patch views.

Per patch channel (one patch size ``P``) and per component (trend, cyclical):

1. patch the component into intra tokens (``P`` tokens of length ``N``) and
   inter tokens (``N`` tokens of length ``P``), variables folded into batch;
2. embed tokens to ``d_model`` with a channel-specific width-3 circular conv;
3. for each layer, build a softmax attention map from queries/keys computed
   with that layer's ``W_Q``/``W_K`` (shared by both components, both views
   and all channels).  There is no value projection: the map is the output;
4. average maps over layers, heads and variables, then expand to ``W x W``.

The representation of a batch is a pair of ``(B, C, 2, W, W)`` tensors whose
rows are probability distributions.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from transde import autodiff as ad
from transde.errors import ConfigError
from transde.patching import PatchConfig, make_patches, validate_config

PATCH_LEVELS = ("both", "intra-only", "inter-only")


@dataclass(frozen=True)
class EncoderConfig:
    window: int
    patch_sizes: tuple
    d_model: int = 128
    heads: int = 1
    layers: int = 2
    patch_level: str = "both"

    def __post_init__(self):
        object.__setattr__(self, "patch_sizes", tuple(int(p) for p in self.patch_sizes))
        validate_config(PatchConfig(self.window, self.patch_sizes))
        if self.d_model < 1 or self.heads < 1 or self.d_model % self.heads:
            raise ConfigError(f"d_model ({self.d_model}) must be divisible by heads ({self.heads})")
        if self.layers < 1:
            raise ConfigError("layers must be >= 1")
        if self.patch_level not in PATCH_LEVELS:
            raise ConfigError(f"patch_level must be one of {PATCH_LEVELS}")

    @property
    def head_dim(self) -> int:
        return self.d_model // self.heads

    @property
    def patch_config(self) -> PatchConfig:
        return PatchConfig(self.window, self.patch_sizes)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["patch_sizes"] = list(self.patch_sizes)
        return d


@dataclass
class ViewRepresentation:
    intra: np.ndarray  # (C, 2, W, W), or (B, C, 2, W, W) for batches
    inter: np.ndarray


class EncoderParams:
    """Named parameter leaves.  ``W_Q``/``W_K`` exist once per layer and are
    referenced by every path that uses them, so their gradients add up."""

    def __init__(self, config: EncoderConfig, tensors: dict):
        self.config = config
        self.tensors = dict(sorted(tensors.items()))

    @classmethod
    def init(cls, config: EncoderConfig, seed: int = 0, dtype=np.float32) -> "EncoderParams":
        rng = np.random.default_rng(seed)
        D, dk = config.d_model, config.head_dim
        shapes = {}
        for c, P in enumerate(config.patch_sizes):
            N = config.window // P
            shapes[f"embed_intra.{c}"] = (3, N, D)
            shapes[f"embed_inter.{c}"] = (3, P, D)
            if config.patch_level == "intra-only":
                shapes[f"embed_intra_alt.{c}"] = (3, N, D)
            elif config.patch_level == "inter-only":
                shapes[f"embed_inter_alt.{c}"] = (3, P, D)
        for layer in range(config.layers):
            shapes[f"w_q.{layer}"] = (config.heads, dk, dk)
            shapes[f"w_k.{layer}"] = (config.heads, dk, dk)
        tensors = {}
        for name in sorted(shapes):
            shape = shapes[name]
            fan_in = shape[0] * shape[1] if name.startswith("embed") else shape[-1]
            bound = 1.0 / np.sqrt(fan_in)
            tensors[name] = ad.leaf(rng.uniform(-bound, bound, size=shape).astype(dtype), name=name)
        return cls(config, tensors)

    def __getitem__(self, name: str) -> ad.Tensor:
        return self.tensors[name]

    def leaves(self) -> list:
        return list(self.tensors.values())

    def arrays(self) -> dict:
        return {k: t.value for k, t in self.tensors.items()}

    def astype(self, dtype) -> "EncoderParams":
        return EncoderParams(self.config, {k: ad.leaf(t.value.astype(dtype), name=k)
                                           for k, t in self.tensors.items()})


# ---------------------------------------------------------------------------
# building blocks
# ---------------------------------------------------------------------------


def embed_intra(tokens, kernel) -> ad.Tensor:
    """``(..., P, N)`` intra tokens -> ``(..., P, d_model)``."""
    return ad.conv1d(tokens, kernel)


def embed_inter(tokens, kernel) -> ad.Tensor:
    """``(..., N, P)`` inter tokens -> ``(..., N, d_model)``."""
    return ad.conv1d(tokens, kernel)


def attention_map(E, w_q, w_k, heads: int) -> ad.Tensor:
    """Row-stochastic ``(..., heads, tokens, tokens)`` maps from embeddings ``(..., tokens, d_model)``.

    Head ``i`` uses the ``i``-th ``d_model/heads`` slice of the embedding and
    ``Q = E_i W_Q[i]^T``, ``K = E_i W_K[i]^T``.
    """
    E = ad._as_tensor(E)
    D = E.shape[-1]
    if D % heads:
        raise ConfigError(f"d_model ({D}) must be divisible by heads ({heads})")
    dk = D // heads
    split = ad.swapaxes(ad.reshape(E, E.shape[:-1] + (heads, dk)), -2, -3)
    q = ad.matmul(split, ad.swapaxes(w_q))
    k = ad.matmul(split, ad.swapaxes(w_k))
    logits = ad.scale(ad.matmul(q, ad.swapaxes(k)), 1.0 / np.sqrt(dk))
    return ad.softmax_rows(logits)


def attention_map_single(E, w_q, w_k) -> ad.Tensor:
    """One-head map ``(..., tokens, tokens)`` with ``(d_model, d_model)`` projections."""
    q = ad.matmul(E, ad.swapaxes(w_q))
    k = ad.matmul(E, ad.swapaxes(w_k))
    return ad.softmax_rows(ad.scale(ad.matmul(q, ad.swapaxes(k)), 1.0 / np.sqrt(E.shape[-1])))


def expand_intra(M, N: int) -> ad.Tensor:
    """Tile a ``P x P`` map into an ``N x N`` grid of copies and divide by ``N``."""
    M = ad._as_tensor(M)
    if M.shape[-1] != M.shape[-2]:
        raise ValueError(f"expected square maps, got {M.shape}")
    return ad.scale(ad.repeat_tile(M, N), 1.0 / N)


def expand_inter(M, P: int) -> ad.Tensor:
    """Blow every entry of an ``N x N`` map up into a constant ``P x P`` block and divide by ``P``."""
    M = ad._as_tensor(M)
    if M.shape[-1] != M.shape[-2]:
        raise ValueError(f"expected square maps, got {M.shape}")
    return ad.scale(ad.repeat_interleave(M, P), 1.0 / P)


def _view(tokens: np.ndarray, kernel: ad.Tensor, params: EncoderParams, lead: tuple) -> ad.Tensor:
    """Embed folded tokens, average per-layer maps over layers, heads and variables.

    ``tokens`` is ``(B*2*d, n_tokens, features)``; returns ``(B, 2, n, n)``.
    """
    cfg = params.config
    E = embed_intra(ad.Tensor(tokens, op="const"), kernel)
    total = None
    for layer in range(cfg.layers):
        m = attention_map(E, params[f"w_q.{layer}"], params[f"w_k.{layer}"], cfg.heads)
        total = m if total is None else ad.add(total, m)
    B, comps, d = lead
    n = tokens.shape[-2]
    folded = ad.reshape(total, (B, comps, d * cfg.heads, n, n))
    return ad.scale(ad.sum(folded, axis=2), 1.0 / (cfg.layers * d * cfg.heads))


def encode(components: np.ndarray, params: EncoderParams):
    """Encode ``(B, 2, W, d)`` decomposed windows into ``(intra, inter)`` graph tensors of
    shape ``(B, C, 2, W, W)``.

    With ``patch_level="intra-only"`` the second view is a second intra-patch
    view built from independent embedding kernels (and vice versa for
    ``"inter-only"``), so the losses and scores compare two same-level views.
    """
    cfg = params.config
    dtype = params.leaves()[0].dtype
    components = np.asarray(components, dtype=dtype)
    if components.ndim != 4 or components.shape[1] != 2 or components.shape[2] != cfg.window:
        raise ValueError(f"expected (B, 2, {cfg.window}, d) components, got {components.shape}")
    B, _, W, d = components.shape
    lead = (B, 2, d)
    intra_views, inter_views = [], []
    for c, P in enumerate(cfg.patch_sizes):
        N = W // P
        tok = make_patches(components, P)
        intra_tok = tok.intra.reshape(-1, P, N)
        inter_tok = tok.inter.reshape(-1, N, P)

        def intra_view(kname):
            return expand_intra(_view(intra_tok, params[kname], params, lead), N)

        def inter_view(kname):
            return expand_inter(_view(inter_tok, params[kname], params, lead), P)

        if cfg.patch_level == "both":
            a, b = intra_view(f"embed_intra.{c}"), inter_view(f"embed_inter.{c}")
        elif cfg.patch_level == "intra-only":
            a, b = intra_view(f"embed_intra.{c}"), intra_view(f"embed_intra_alt.{c}")
        else:
            a, b = inter_view(f"embed_inter.{c}"), inter_view(f"embed_inter_alt.{c}")
        intra_views.append(ad.reshape(a, (B, 1, 2, W, W)))
        inter_views.append(ad.reshape(b, (B, 1, 2, W, W)))
    return ad.concat(intra_views, axis=1), ad.concat(inter_views, axis=1)


def encode_window(dw, params: EncoderParams, cfg: Optional[PatchConfig] = None) -> ViewRepresentation:
    """Encode a single :class:`~transde.decomposition.DecomposedWindow`."""
    if cfg is not None:
        cfg = validate_config(cfg)
        if (cfg.window, cfg.sizes) != (params.config.window, params.config.patch_sizes):
            raise ConfigError("patch config does not match the encoder parameters")
    comps = np.stack([dw.trend, dw.cyclical])[None]
    intra, inter = encode(comps, params)
    return ViewRepresentation(intra.value[0], inter.value[0])
