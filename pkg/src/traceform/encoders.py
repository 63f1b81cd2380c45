"""Input encoders and four-stream fusion.

Text: whitespace tokens are FNV-1a-64 hashed into a fixed bucket count
vector, L2-normalized, then linearly projected. The hash is pinned so
datasets and checkpoints stay portable.

Vision: crops are bilinear-resized to 16x16 RGB, scaled to [0, 1], and
flattened to 768 values before a linear projection. Whole-screen shots go
through the same path.

Fusion: the text, vision, positional (9 geometry features), and segment
(5-way one-hot) streams each get their own linear layer + layer norm; the
four results are summed into the transformer input. Masked text tokens
have their text encoding swapped for a learned MASK vector before the text
linear; text tokens' vision slots get a learned placeholder added to the
whole-screen encoding. Padding rows are zeroed.
"""

from __future__ import annotations

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

VISION_SIDE = 16
VISION_PRE_DIM = VISION_SIDE * VISION_SIDE * 3  # 768
POSITIONAL_DIM = 9

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_U64 = 0xFFFFFFFFFFFFFFFF


def fnv1a_64(data: bytes) -> int:
    """FNV-1a 64-bit hash; fixed-by-contract for portable text buckets."""
    h = _FNV_OFFSET
    for byte in data:
        h = ((h ^ byte) * _FNV_PRIME) & _U64
    return h


def text_bucket_vector(sentence: str, buckets: int) -> np.ndarray:
    """Hashed bag-of-words counts, L2-normalized (zero stays zero)."""
    vec = np.zeros(buckets, dtype=np.float32)
    for token in sentence.split():
        vec[fnv1a_64(token.encode("utf-8")) % buckets] += 1.0
    norm = float(np.linalg.norm(vec))
    if norm > 0.0:
        vec /= norm
    return vec


def crop_feature(crop: np.ndarray) -> np.ndarray:
    """Pre-projection vision feature: resize to 16x16, scale, flatten."""
    if crop.ndim != 3 or crop.shape[2] != 3:
        raise ValueError(f"expected HxWx3 crop, got shape {crop.shape}")
    if crop.shape[0] == 0 or crop.shape[1] == 0:
        raise ValueError("zero-area crop")
    t = torch.from_numpy(np.ascontiguousarray(crop, dtype=np.float32))
    t = t.permute(2, 0, 1).unsqueeze(0) / 255.0
    resized = F.interpolate(t, size=(VISION_SIDE, VISION_SIDE), mode="bilinear", align_corners=False)
    return resized.squeeze(0).permute(1, 2, 0).reshape(-1).numpy()


class TextEncoder(nn.Module):
    """Trainable projection of hashed bag-of-words vectors.

    Bias-free so the empty sentence encodes to the zero vector.
    """

    def __init__(self, buckets: int, d_out: int):
        super().__init__()
        self.proj = nn.Linear(buckets, d_out, bias=False)

    def forward(self, bucket_vecs: torch.Tensor) -> torch.Tensor:
        return self.proj(bucket_vecs)


class VisionEncoder(nn.Module):
    """Trainable projection of resize-flattened crops."""

    def __init__(self, d_out: int, d_in: int = VISION_PRE_DIM):
        super().__init__()
        self.proj = nn.Linear(d_in, d_out, bias=False)

    def forward(self, crop_vecs: torch.Tensor) -> torch.Tensor:
        return self.proj(crop_vecs)


class InputFuser(nn.Module):
    """Sum of the four per-stream (linear -> layer norm) projections."""

    def __init__(self, hidden: int, d_text: int, d_vision: int, n_segments: int):
        super().__init__()
        self.text_proj = nn.Linear(d_text, hidden)
        self.text_norm = nn.LayerNorm(hidden)
        self.vision_proj = nn.Linear(d_vision, hidden)
        self.vision_norm = nn.LayerNorm(hidden)
        self.pos_proj = nn.Linear(POSITIONAL_DIM, hidden)
        self.pos_norm = nn.LayerNorm(hidden)
        self.seg_proj = nn.Linear(n_segments, hidden)
        self.seg_norm = nn.LayerNorm(hidden)
        self.mask_embedding = nn.Parameter(torch.zeros(d_text))
        self.img_embedding = nn.Parameter(torch.zeros(d_vision))

    def forward(
        self,
        text_enc: torch.Tensor,     # (B, L, d_text)
        vision_enc: torch.Tensor,   # (B, L, d_vision)
        positions: torch.Tensor,    # (B, L, 9)
        segments_onehot: torch.Tensor,  # (B, L, n_segments)
        mask_flags: torch.Tensor,   # (B, L) bool: replace text stream with MASK
        valid: torch.Tensor,        # (B, L) bool: False on padding
    ) -> torch.Tensor:
        text_in = torch.where(mask_flags.unsqueeze(-1), self.mask_embedding, text_enc)
        fused = (
            self.text_norm(self.text_proj(text_in))
            + self.vision_norm(self.vision_proj(vision_enc))
            + self.pos_norm(self.pos_proj(positions))
            + self.seg_norm(self.seg_proj(segments_onehot))
        )
        return fused * valid.unsqueeze(-1)
