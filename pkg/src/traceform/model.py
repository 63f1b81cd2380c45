"""Model assembly and the numeric bridge from token sequences to tensors.

FeatureCache memoizes the deterministic, non-trainable preprocessing
(hashed text buckets, resize-flattened crops) per screen and per sentence;
collate stacks a list of composed sequences into padded batch tensors.
UIModel owns the trainable pieces: both input encoders, the four-stream
fuser, and the transformer stack.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .corpus import get_raster
from .encoders import (
    POSITIONAL_DIM,
    VISION_PRE_DIM,
    TextEncoder,
    VisionEncoder,
    InputFuser,
    crop_feature,
    text_bucket_vector,
)
from .render import crop
from .sequence import KIND_TEXT, KIND_VISION, N_SEGMENTS, TokenSequence
from .transformer import ModelConfig, TransformerEncoder
from .vh import Screen, positional_features


@dataclass
class ScreenFeatures:
    whole: np.ndarray            # (768,) pre-projection vector of the full shot
    crops: list[np.ndarray]      # per-leaf pre-projection vectors


class FeatureCache:
    """Lazy per-screen and per-sentence feature memoizer."""

    def __init__(self, screens: Mapping[str, Screen], buckets: int):
        self.screens = screens
        self.buckets = buckets
        self._text: dict[str, np.ndarray] = {}
        self._vision: dict[str, ScreenFeatures] = {}

    def sentence_vec(self, sentence: str) -> np.ndarray:
        vec = self._text.get(sentence)
        if vec is None:
            vec = text_bucket_vector(sentence, self.buckets)
            self._text[sentence] = vec
        return vec

    def screen_features(self, screen_id: str) -> ScreenFeatures:
        feats = self._vision.get(screen_id)
        if feats is None:
            screen = self.screens[screen_id]
            raster = get_raster(screen)
            feats = ScreenFeatures(
                whole=crop_feature(raster),
                crops=[crop_feature(crop(raster, leaf.bounds)) for leaf in screen.vh.leaves],
            )
            self._vision[screen_id] = feats
        return feats

    def vision_vec(self, key: tuple) -> np.ndarray:
        if key[0] == "whole":
            return self.screen_features(key[1]).whole
        return self.screen_features(key[1]).crops[key[2]]


@dataclass
class Batch:
    text: torch.Tensor          # (B, L, buckets)
    vision: torch.Tensor        # (B, L, 768)
    positions: torch.Tensor     # (B, L, 9)
    segments: torch.Tensor      # (B, L) int64
    img_flags: torch.Tensor     # (B, L) bool
    mask_flags: torch.Tensor    # (B, L) bool
    valid: torch.Tensor         # (B, L) bool
    cand_mask: torch.Tensor     # (B, L) bool: text+vision tokens from components
    vis_cand_mask: torch.Tensor  # (B, L) bool: vision tokens from components
    link_targets: torch.Tensor  # (B,) int64, -1 when the indicator is 0
    cui_labels: torch.Tensor    # (B,) float32, -1 when absent
    has_cui: torch.Tensor       # (B,) bool
    sample_ids: list[str]

    def __len__(self) -> int:
        return self.text.shape[0]

    def to(self, dtype: torch.dtype) -> "Batch":
        out = Batch(**self.__dict__)
        out.text = self.text.to(dtype)
        out.vision = self.vision.to(dtype)
        out.positions = self.positions.to(dtype)
        return out


def collate(seqs: Sequence[TokenSequence], cache: FeatureCache) -> Batch:
    b = len(seqs)
    length = max(len(s) for s in seqs)
    buckets = cache.buckets
    text = np.zeros((b, length, buckets), dtype=np.float32)
    vision = np.zeros((b, length, VISION_PRE_DIM), dtype=np.float32)
    positions = np.zeros((b, length, POSITIONAL_DIM), dtype=np.float32)
    segments = np.zeros((b, length), dtype=np.int64)
    img_flags = np.zeros((b, length), dtype=bool)
    mask_flags = np.zeros((b, length), dtype=bool)
    valid = np.zeros((b, length), dtype=bool)
    cand = np.zeros((b, length), dtype=bool)
    vis_cand = np.zeros((b, length), dtype=bool)
    links = np.full(b, -1, dtype=np.int64)
    cui = np.full(b, -1.0, dtype=np.float32)
    has_cui = np.zeros(b, dtype=bool)
    ids = []

    for si, seq in enumerate(seqs):
        padded = seq.padded(length)
        ids.append(seq.sample_id)
        if seq.link_target is not None:
            links[si] = seq.link_target
        if seq.cui_label is not None:
            cui[si] = float(seq.cui_label)
            has_cui[si] = True
        for ti, tok in enumerate(padded.tokens):
            segments[si, ti] = tok.segment
            if tok.vision is None:  # padding
                continue
            valid[si, ti] = True
            if tok.sentence:
                text[si, ti] = cache.sentence_vec(tok.sentence)
            vision[si, ti] = cache.vision_vec(tok.vision)
            positions[si, ti] = positional_features(tok.box, *tok.screen_wh)
            img_flags[si, ti] = tok.img_slot
            mask_flags[si, ti] = tok.masked
            if tok.origin is not None and tok.kind in (KIND_TEXT, KIND_VISION):
                cand[si, ti] = True
                if tok.kind == KIND_VISION:
                    vis_cand[si, ti] = True

    return Batch(
        text=torch.from_numpy(text),
        vision=torch.from_numpy(vision),
        positions=torch.from_numpy(positions),
        segments=torch.from_numpy(segments),
        img_flags=torch.from_numpy(img_flags),
        mask_flags=torch.from_numpy(mask_flags),
        valid=torch.from_numpy(valid),
        cand_mask=torch.from_numpy(cand),
        vis_cand_mask=torch.from_numpy(vis_cand),
        link_targets=torch.from_numpy(links),
        cui_labels=torch.from_numpy(cui),
        has_cui=torch.from_numpy(has_cui),
        sample_ids=ids,
    )


class UIModel(nn.Module):
    """Encoders + fusion + transformer; returns contextual embeddings."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.text_encoder = TextEncoder(cfg.text_buckets, cfg.text_dim)
        self.vision_encoder = VisionEncoder(cfg.vision_dim)
        self.fuser = InputFuser(cfg.hidden, cfg.text_dim, cfg.vision_dim, N_SEGMENTS)
        self.encoder = TransformerEncoder(cfg)
        if cfg.text_dim != cfg.hidden:
            # fixed (non-trainable) adapter aligning text-encoder targets with D2
            gen = torch.Generator().manual_seed(0x7A2F)
            bound = (6.0 / (cfg.text_dim + cfg.hidden)) ** 0.5
            adapter = torch.empty(cfg.text_dim, cfg.hidden).uniform_(-bound, bound, generator=gen)
            self.register_buffer("target_adapter", adapter)
        else:
            self.target_adapter = None

    def fuse(self, batch: Batch) -> tuple[torch.Tensor, torch.Tensor]:
        """Fused L x D1 inputs plus the (pre-masking) text encodings."""
        text_enc = self.text_encoder(batch.text)
        vision_enc = self.vision_encoder(batch.vision)
        img = self.fuser.img_embedding.to(vision_enc.dtype)
        vision_enc = vision_enc + batch.img_flags.unsqueeze(-1).to(vision_enc.dtype) * img
        seg_onehot = F.one_hot(batch.segments, N_SEGMENTS).to(text_enc.dtype)
        fused = self.fuser(
            text_enc, vision_enc, batch.positions, seg_onehot, batch.mask_flags, batch.valid
        )
        return fused, text_enc

    def forward(self, batch: Batch) -> tuple[torch.Tensor, torch.Tensor]:
        """Contextual embeddings (B, L, D2) and detached mask-loss targets."""
        fused, text_enc = self.fuse(batch)
        outputs = self.encoder(fused, batch.valid)
        targets = text_enc.detach()
        if self.target_adapter is not None:
            targets = targets @ self.target_adapter
        return outputs, targets


def component_embeddings(
    outputs: torch.Tensor, seq: TokenSequence, ui: str = "a"
) -> torch.Tensor:
    """Per-component contextual embeddings: the vision-token output rows."""
    rows = [
        outputs[i]
        for i, tok in enumerate(seq.tokens)
        if tok.kind == KIND_VISION and tok.origin is not None and tok.origin[0] == ui
    ]
    if not rows:
        return outputs.new_zeros((0, outputs.shape[-1]))
    return torch.stack(rows)


def retrieve_by_dot_product(anchor: torch.Tensor, candidates: torch.Tensor) -> int:
    """Index of the best candidate by dot-product similarity, ties -> lowest."""
    if candidates.ndim != 2 or candidates.shape[0] == 0:
        raise ValueError("need at least one candidate embedding")
    scores = candidates @ anchor
    return int(torch.argmax(scores).item())
