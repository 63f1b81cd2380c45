import numpy as np
import pytest
import torch

from traceform.encoders import (
    VISION_PRE_DIM,
    InputFuser,
    TextEncoder,
    VisionEncoder,
    crop_feature,
    fnv1a_64,
    text_bucket_vector,
)
from traceform.render import icon_color, render_screen
from traceform.transformer import glorot_init


def fnv_reference(data: bytes) -> int:
    # independent spelling of the FNV-1a definition
    h = 14695981039346656037
    for b in data:
        h = ((h ^ b) * 1099511628211) % 2**64
    return h


def test_fnv1a_matches_reference_and_known_values():
    assert fnv1a_64(b"") == 0xCBF29CE484222325
    assert fnv1a_64(b"a") == fnv_reference(b"a")
    rng = np.random.default_rng(0)
    for _ in range(50):
        data = bytes(rng.integers(0, 256, size=int(rng.integers(0, 32))).tolist())
        assert fnv1a_64(data) == fnv_reference(data)


def test_bucket_vector_empty_and_normalized():
    assert not text_bucket_vector("", 64).any()
    v = text_bucket_vector("check in btn Button", 4096)
    assert v.dtype == np.float32
    assert np.linalg.norm(v) == pytest.approx(1.0, abs=1e-6)
    assert np.array_equal(v, text_bucket_vector("check in btn Button", 4096))


def test_bucket_vector_collision_rate_under_5_percent():
    rng = np.random.default_rng(3)
    words = [f"w{int(x):06d}" for x in rng.integers(0, 10**6, size=400)]
    sentences = list({" ".join(rng.choice(words, size=3)) for _ in range(120)})[:100]
    assert len(sentences) == 100
    vecs = [tuple(np.nonzero(text_bucket_vector(s, 4096))[0]) for s in sentences]
    assert len(set(vecs)) >= 95


def test_crop_feature_constant_input():
    gray = np.full((40, 30, 3), 128, dtype=np.uint8)
    feat = crop_feature(gray)
    assert feat.shape == (VISION_PRE_DIM,)
    assert np.allclose(feat, 128 / 255, atol=1e-6)
    assert np.array_equal(feat, crop_feature(gray))


def test_crop_feature_rejects_empty():
    with pytest.raises(ValueError):
        crop_feature(np.zeros((0, 10, 3), dtype=np.uint8))
    with pytest.raises(ValueError):
        crop_feature(np.zeros((10, 10), dtype=np.uint8))


def test_crop_features_distinguish_icon_classes():
    from traceform.synth import GeneratorConfig, generate_app
    from traceform.render import crop

    spec, _ = generate_app(GeneratorConfig(), seed=0, app_index=0)
    screen = spec.screens[0]
    from dataclasses import replace

    comp = screen.components[1]
    feats = []
    for cls in (3, 17):
        s = replace(screen, components=[replace(comp, icon_class=cls)])
        feats.append(crop_feature(crop(render_screen(s), comp.bounds)))
    assert np.abs(feats[0] - feats[1]).max() >= 1e-3


def test_text_encoder_zero_for_empty_and_linear():
    enc = TextEncoder(64, 8)
    glorot_init(enc, 0)
    zero = enc(torch.zeros(1, 64))
    assert torch.equal(zero, torch.zeros(1, 8))
    x = torch.tensor(text_bucket_vector("hello world", 64)).unsqueeze(0)
    y1 = enc(x)
    with torch.no_grad():
        enc.proj.weight.mul_(2.0)
    assert torch.allclose(enc(x), 2 * y1, atol=1e-6)


def test_fuser_pad_rows_zero_and_content_function():
    torch.manual_seed(0)
    fuser = InputFuser(hidden=16, d_text=8, d_vision=8, n_segments=5)
    glorot_init(fuser, 1)
    text = torch.randn(1, 3, 8)
    vision = torch.randn(1, 3, 8)
    pos = torch.rand(1, 3, 9)
    seg = torch.zeros(1, 3, 5)
    seg[..., 0] = 1
    # token 1 duplicates token 0; token 2 is padding
    for t in (text, vision, pos):
        t[0, 1] = t[0, 0]
    valid = torch.tensor([[True, True, False]])
    masks = torch.tensor([[False, False, False]])
    out = fuser(text, vision, pos, seg, masks, valid)
    assert torch.equal(out[0, 2], torch.zeros(16))
    assert torch.allclose(out[0, 0], out[0, 1])


def test_fuser_mask_substitution_changes_row():
    fuser = InputFuser(hidden=16, d_text=8, d_vision=8, n_segments=5)
    glorot_init(fuser, 2)
    text = torch.randn(1, 2, 8)
    text[0, 1] = text[0, 0]
    vision = torch.zeros(1, 2, 8)
    pos = torch.zeros(1, 2, 9)
    seg = torch.zeros(1, 2, 5)
    valid = torch.ones(1, 2, dtype=torch.bool)
    masks = torch.tensor([[False, True]])
    out = fuser(text, vision, pos, seg, masks, valid)
    assert not torch.allclose(out[0, 0], out[0, 1])


def test_vision_encoder_shapes():
    enc = VisionEncoder(d_out=8)
    feats = torch.rand(2, 5, VISION_PRE_DIM)
    assert enc(feats).shape == (2, 5, 8)
