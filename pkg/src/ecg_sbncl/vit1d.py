"""1D Vision Transformer encoder for 10-second ECG strips.

A strip of ``input_len`` samples is cut into non-overlapping patches of
``patch_size`` samples, each patch is linearly projected to ``model_dim``, a
learned class token is prepended, learned positional embeddings are added, and
the sequence runs through ``n_blocks`` pre-norm transformer blocks. The
encoder output is the final-layernormed class-token state.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Mapping

import numpy as np

from .autodiff import Tensor, as_tensor, attention, concat, gelu, layer_norm

REFERENCE_PARAM_COUNT = 1_192_616


class LengthNotDivisible(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    input_len: int = 1000
    patch_size: int = 20
    model_dim: int = 128
    n_blocks: int = 6
    n_heads: int = 4
    mlp_ratio: int = 4

    def __post_init__(self):
        if self.input_len % self.patch_size:
            raise LengthNotDivisible(f"input_len {self.input_len} not divisible by patch_size {self.patch_size}")
        if self.model_dim % self.n_heads:
            raise ValueError(f"model_dim {self.model_dim} not divisible by n_heads {self.n_heads}")
        if min(self.input_len, self.patch_size, self.model_dim, self.n_blocks, self.n_heads, self.mlp_ratio) < 1:
            raise ValueError("all ModelConfig fields must be positive")

    @property
    def n_patches(self) -> int:
        return self.input_len // self.patch_size

    @property
    def head_dim(self) -> int:
        return self.model_dim // self.n_heads

    def to_dict(self) -> dict:
        return asdict(self)


ParamSet = dict  # name -> np.ndarray, insertion ordered


def param_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Every encoder tensor name and shape, in canonical order."""
    d, p, hidden = config.model_dim, config.patch_size, config.model_dim * config.mlp_ratio
    shapes: dict[str, tuple[int, ...]] = {
        "patch_embed.weight": (p, d),
        "patch_embed.bias": (d,),
        "cls_token": (d,),
        "pos_embed": (config.n_patches + 1, d),
    }
    for i in range(config.n_blocks):
        b = f"blocks.{i}."
        shapes.update(
            {
                b + "ln1.weight": (d,),
                b + "ln1.bias": (d,),
                b + "attn.qkv.weight": (d, 3 * d),
                b + "attn.qkv.bias": (3 * d,),
                b + "attn.out.weight": (d, d),
                b + "attn.out.bias": (d,),
                b + "ln2.weight": (d,),
                b + "ln2.bias": (d,),
                b + "mlp.fc1.weight": (d, hidden),
                b + "mlp.fc1.bias": (hidden,),
                b + "mlp.fc2.weight": (hidden, d),
                b + "mlp.fc2.bias": (d,),
            }
        )
    shapes["norm.weight"] = (d,)
    shapes["norm.bias"] = (d,)
    return shapes


def param_count(config: ModelConfig) -> int:
    d, p, n = config.model_dim, config.patch_size, config.n_patches
    hidden = d * config.mlp_ratio
    block = (d * 3 * d + 3 * d) + (d * d + d) + 4 * d + (d * hidden + hidden) + (hidden * d + d)
    return (p * d + d) + d + (n + 1) * d + config.n_blocks * block + 2 * d


def truncated_normal(rng: np.random.Generator, shape, std: float = 0.02, bound: float = 2.0) -> np.ndarray:
    """Normal(0, std) truncated to +-bound*std by resampling."""
    out = rng.standard_normal(shape)
    bad = np.abs(out) > bound
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > bound
    return out * std


def init_params(config: ModelConfig, seed: int) -> ParamSet:
    rng = np.random.default_rng(seed)
    params: ParamSet = {}
    for name, shape in param_shapes(config).items():
        if name.endswith("ln1.weight") or name.endswith("ln2.weight") or name == "norm.weight":
            params[name] = np.ones(shape)
        elif name.endswith(".bias"):
            params[name] = np.zeros(shape)
        else:
            params[name] = truncated_normal(rng, shape)
    return params


def patchify(strip: np.ndarray, patch_size: int = 20) -> np.ndarray:
    """Split the trailing axis into ``(n_patches, patch_size)``."""
    strip = np.asarray(strip)
    n = strip.shape[-1]
    if n % patch_size:
        raise LengthNotDivisible(f"strip length {n} not divisible by patch size {patch_size}")
    return strip.reshape(*strip.shape[:-1], n // patch_size, patch_size)


def _block(x: Tensor, params: Mapping[str, Tensor], prefix: str, config: ModelConfig) -> Tensor:
    batch, tokens, d = x.shape
    h, hd = config.n_heads, config.head_dim

    y = layer_norm(x, params[prefix + "ln1.weight"], params[prefix + "ln1.bias"])
    qkv = y @ params[prefix + "attn.qkv.weight"] + params[prefix + "attn.qkv.bias"]
    qkv = qkv.reshape(batch, tokens, 3, h, hd).transpose(2, 0, 3, 1, 4)
    att = attention(qkv[0], qkv[1], qkv[2])  # (batch, heads, tokens, head_dim)
    att = att.transpose(0, 2, 1, 3).reshape(batch, tokens, d)
    x = x + (att @ params[prefix + "attn.out.weight"] + params[prefix + "attn.out.bias"])

    y = layer_norm(x, params[prefix + "ln2.weight"], params[prefix + "ln2.bias"])
    y = gelu(y @ params[prefix + "mlp.fc1.weight"] + params[prefix + "mlp.fc1.bias"])
    return x + (y @ params[prefix + "mlp.fc2.weight"] + params[prefix + "mlp.fc2.bias"])


def encode_tokens(strips, params: Mapping, config: ModelConfig, n_blocks: int | None = None) -> Tensor:
    """Token states ``(batch, n_patches + 1, model_dim)`` after ``n_blocks`` blocks (no final norm)."""
    params = {k: as_tensor(v) for k, v in params.items()}
    x = np.asarray(strips, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.shape[-1] != config.input_len:
        raise ValueError(f"expected strips of length {config.input_len}, got {x.shape[-1]}")
    batch = x.shape[0]
    patches = Tensor(patchify(x, config.patch_size))
    tokens = patches @ params["patch_embed.weight"] + params["patch_embed.bias"]
    cls = params["cls_token"].reshape(1, 1, config.model_dim).broadcast_to((batch, 1, config.model_dim))
    h = concat([cls, tokens], axis=1) + params["pos_embed"]
    for i in range(config.n_blocks if n_blocks is None else n_blocks):
        h = _block(h, params, f"blocks.{i}.", config)
    return h


def forward(strips, params: Mapping, config: ModelConfig) -> Tensor:
    """Representation vectors: ``(batch, model_dim)``, or ``(model_dim,)`` for a single strip."""
    single = np.ndim(strips) == 1
    h = encode_tokens(strips, params, config)
    out = layer_norm(h[:, 0, :], as_tensor(params["norm.weight"]), as_tensor(params["norm.bias"]))
    return out[0] if single else out
