import math

import numpy as np
import pytest
import torch

from traceform.transformer import (
    ModelConfig,
    NumericError,
    TransformerEncoder,
    check_glorot_bounds,
    glorot_bound,
    glorot_init,
)


def make_encoder(seed=0, **kw):
    cfg = ModelConfig(dropout=0.0, **kw)
    enc = TransformerEncoder(cfg)
    glorot_init(enc, seed)
    enc.eval()
    return enc


def test_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(hidden=65, heads=2).validate()
    with pytest.raises(ValueError):
        ModelConfig(layers=0).validate()
    ModelConfig.base().validate()
    ModelConfig.large().validate()


def test_output_shape():
    enc = make_encoder()
    x = torch.randn(3, 11, 64)
    valid = torch.ones(3, 11, dtype=torch.bool)
    assert enc(x, valid).shape == (3, 11, 64)


def test_padding_does_not_change_valid_rows():
    enc = make_encoder()
    torch.manual_seed(1)
    x = torch.randn(2, 7, 64)
    valid = torch.ones(2, 7, dtype=torch.bool)
    out = enc(x, valid)
    x_pad = torch.cat([x, torch.zeros(2, 5, 64)], dim=1)
    valid_pad = torch.cat([valid, torch.zeros(2, 5, dtype=torch.bool)], dim=1)
    out_pad = enc(x_pad, valid_pad)
    assert torch.allclose(out, out_pad[:, :7], atol=1e-6)
    assert torch.equal(out_pad[:, 7:], torch.zeros(2, 5, 64))


def test_permutation_equivariance():
    enc = make_encoder()
    torch.manual_seed(2)
    x = torch.randn(1, 9, 64)
    valid = torch.tensor([[True] * 6 + [False] * 3])
    perm = torch.randperm(9)
    out = enc(x, valid)
    out_perm = enc(x[:, perm], valid[:, perm])
    assert torch.allclose(out[:, perm], out_perm, atol=1e-5)


def test_bitwise_determinism():
    enc = make_encoder()
    x = torch.randn(2, 5, 64)
    valid = torch.ones(2, 5, dtype=torch.bool)
    assert torch.equal(enc(x, valid), enc(x, valid))


def test_nan_input_rejected():
    enc = make_encoder()
    x = torch.randn(1, 4, 64)
    x[0, 0, 0] = float("nan")
    with pytest.raises(NumericError):
        enc(x, torch.ones(1, 4, dtype=torch.bool))


def test_glorot_bound_and_determinism():
    e1 = make_encoder(seed=7)
    e2 = make_encoder(seed=7)
    e3 = make_encoder(seed=8)
    s1 = e1.state_dict()
    for name, p in e2.state_dict().items():
        assert torch.equal(s1[name], p)
    assert any(not torch.equal(s1[n], p) for n, p in e3.state_dict().items())
    check_glorot_bounds(e1)
    for name, p in e1.named_parameters():
        if p.dim() == 2:
            fan_out, fan_in = p.shape
            assert p.abs().max().item() <= glorot_bound(fan_in, fan_out)
        if name.endswith("bias"):
            assert not p.detach().any()


def test_glorot_empirical_mean_near_zero():
    lin = torch.nn.Linear(64, 64, bias=False)
    glorot_init(lin, 123)
    a = glorot_bound(64, 64)
    # uniform(-a, a): sd = a/sqrt(3); standard error of the mean over 4096 draws
    se = a / math.sqrt(3) / math.sqrt(64 * 64)
    assert abs(lin.weight.detach().mean().item()) < 3 * se


def test_layernorm_initialized_to_identity():
    enc = make_encoder()
    for name, p in enc.named_parameters():
        if "norm" in name:
            expected = 1.0 if name.endswith("weight") else 0.0
            assert torch.equal(p.detach(), torch.full_like(p, expected))


def test_paper_scale_configs_instantiate():
    for cfg in (ModelConfig.base(), ModelConfig.large()):
        enc = TransformerEncoder(cfg)
        glorot_init(enc, 0)
        x = torch.randn(1, 8, cfg.hidden)
        out = enc(x, torch.ones(1, 8, dtype=torch.bool))
        assert out.shape == (1, 8, cfg.hidden)
