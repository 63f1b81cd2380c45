"""Uni-stream transformer encoder.

A single stack attends across every token regardless of modality or
segment. Blocks are pre-norm residual (more stable at small width), with a
final layer norm. Attention masks padding by adding -1e9 to masked keys'
logits and zeroing masked queries' outputs, so padding neither attends nor
is attended to. The stack itself is position-agnostic: all order
information enters through the positional input stream.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .encoders import VISION_PRE_DIM

_MASK_LOGIT = -1e9


class NumericError(RuntimeError):
    """Non-finite values where finite ones are required."""


@dataclass(frozen=True)
class ModelConfig:
    layers: int = 2
    heads: int = 2
    hidden: int = 64
    ffn_mult: int = 4
    l_max: int = 128
    dropout: float = 0.1
    text_buckets: int = 4096
    d_text: int = 0      # 0 means "same as hidden"
    d_vision: int = 0

    def validate(self) -> None:
        if self.layers < 1:
            raise ValueError("need at least one layer")
        if self.hidden % self.heads != 0:
            raise ValueError(f"hidden={self.hidden} not divisible by heads={self.heads}")
        if self.l_max < 5:
            raise ValueError("l_max too small for the special tokens")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")

    @property
    def text_dim(self) -> int:
        return self.d_text or self.hidden

    @property
    def vision_dim(self) -> int:
        return self.d_vision or self.hidden

    @property
    def vision_pre_dim(self) -> int:
        return VISION_PRE_DIM

    @classmethod
    def desk(cls, **kw) -> "ModelConfig":
        return cls(**kw)

    @classmethod
    def base(cls, **kw) -> "ModelConfig":
        return cls(layers=6, heads=6, hidden=768, **kw)

    @classmethod
    def large(cls, **kw) -> "ModelConfig":
        return cls(layers=12, heads=6, hidden=768, **kw)


class MultiHeadSelfAttention(nn.Module):
    def __init__(self, hidden: int, heads: int, dropout: float):
        super().__init__()
        self.heads = heads
        self.head_dim = hidden // heads
        self.q = nn.Linear(hidden, hidden)
        self.k = nn.Linear(hidden, hidden)
        self.v = nn.Linear(hidden, hidden)
        self.out = nn.Linear(hidden, hidden)
        self.drop = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor, valid: torch.Tensor) -> torch.Tensor:
        b, l, d = x.shape
        shape = (b, l, self.heads, self.head_dim)
        q = self.q(x).view(shape).transpose(1, 2)
        k = self.k(x).view(shape).transpose(1, 2)
        v = self.v(x).view(shape).transpose(1, 2)
        scores = q @ k.transpose(-1, -2) / math.sqrt(self.head_dim)
        scores = scores + torch.where(valid, 0.0, _MASK_LOGIT)[:, None, None, :]
        attn = self.drop(F.softmax(scores, dim=-1))
        ctx = (attn @ v).transpose(1, 2).reshape(b, l, d)
        return self.out(ctx) * valid.unsqueeze(-1)


class FeedForward(nn.Module):
    def __init__(self, hidden: int, mult: int, dropout: float):
        super().__init__()
        self.up = nn.Linear(hidden, hidden * mult)
        self.down = nn.Linear(hidden * mult, hidden)
        self.drop = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.down(self.drop(F.gelu(self.up(x))))


class EncoderLayer(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.attn_norm = nn.LayerNorm(cfg.hidden)
        self.attn = MultiHeadSelfAttention(cfg.hidden, cfg.heads, cfg.dropout)
        self.ffn_norm = nn.LayerNorm(cfg.hidden)
        self.ffn = FeedForward(cfg.hidden, cfg.ffn_mult, cfg.dropout)
        self.drop = nn.Dropout(cfg.dropout)

    def forward(self, x: torch.Tensor, valid: torch.Tensor) -> torch.Tensor:
        x = x + self.drop(self.attn(self.attn_norm(x), valid))
        x = x + self.drop(self.ffn(self.ffn_norm(x)))
        return x


class TransformerEncoder(nn.Module):
    """Maps fused inputs (B, L, D) to contextual embeddings (B, L, D)."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.blocks = nn.ModuleList(EncoderLayer(cfg) for _ in range(cfg.layers))
        self.final_norm = nn.LayerNorm(cfg.hidden)

    def forward(self, inputs: torch.Tensor, valid: torch.Tensor) -> torch.Tensor:
        if not torch.isfinite(inputs).all():
            raise NumericError("non-finite values in transformer input")
        x = inputs
        for block in self.blocks:
            x = block(x, valid)
        return self.final_norm(x) * valid.unsqueeze(-1)


def glorot_bound(fan_in: int, fan_out: int) -> float:
    return math.sqrt(6.0 / (fan_in + fan_out))


def glorot_init(model: nn.Module, seed: int) -> None:
    """Deterministic Glorot-uniform init of a module tree.

    Weight matrices draw uniform within +/- sqrt(6/(fan_in+fan_out));
    biases start at zero, layer norms at identity. Free-standing embedding
    vectors are treated as 1 x D matrices. Parameters are visited in name
    order with one seeded generator, so the result depends only on the
    seed and the set of parameter names.
    """
    gen = torch.Generator().manual_seed(seed)
    owners: dict[str, tuple[nn.Module, str]] = {}
    for mod_name, mod in model.named_modules():
        for p_name, _ in mod.named_parameters(recurse=False):
            full = f"{mod_name}.{p_name}" if mod_name else p_name
            owners[full] = (mod, p_name)
    with torch.no_grad():
        for name in sorted(owners):
            mod, p_name = owners[name]
            param = getattr(mod, p_name)
            if isinstance(mod, nn.LayerNorm):
                param.fill_(1.0 if p_name == "weight" else 0.0)
            elif p_name == "bias":
                param.zero_()
            elif param.dim() == 2:
                fan_out, fan_in = param.shape
                param.uniform_(-glorot_bound(fan_in, fan_out), glorot_bound(fan_in, fan_out), generator=gen)
            elif param.dim() == 1:
                bound = glorot_bound(1, param.shape[0])
                param.uniform_(-bound, bound, generator=gen)
            else:
                raise ValueError(f"no init rule for parameter {name} of dim {param.dim()}")


def check_glorot_bounds(model: nn.Module) -> None:
    """Verify every freshly initialized weight matrix obeys the Glorot bound."""
    for name, param in model.named_parameters():
        if param.dim() != 2 or name.endswith("bias"):
            continue
        if "norm" in name:
            continue
        fan_out, fan_in = param.shape
        bound = glorot_bound(fan_in, fan_out)
        max_abs = param.detach().abs().max().item()
        if max_abs > bound + 1e-12:
            raise ValueError(f"{name}: |w|max {max_abs} exceeds Glorot bound {bound}")
