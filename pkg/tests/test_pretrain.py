import math
from types import SimpleNamespace

import numpy as np
import pytest
import torch

from traceform.dataset import build_split_pairs, split_by_app
from traceform.model import Batch, FeatureCache, UIModel, collate
from traceform.pretrain import (
    LossWeights,
    PretrainHeads,
    TrainConfig,
    batch_losses,
    checkpoint_tensors,
    cui_loss,
    evaluate_pairs,
    lcp_loss,
    load_into,
    make_optimizer,
    mask_loss,
    run_pretraining,
    total_loss,
    train_step,
)
from traceform.checkpoint import load_checkpoint, save_checkpoint
from traceform.sequence import compose, compose_sequence
from traceform.synth import GeneratorConfig, generate_corpus
from traceform.transformer import ModelConfig, glorot_init
from tests.test_sequence import make_screen

# heads whose logit is simply the first embedding coordinate, so tests can
# dictate logits through the outputs matrix
PICK_FIRST = SimpleNamespace(
    lcp_mlp=lambda x: x[..., 0], cui_mlp=lambda x: x[..., 0]
)


def two_ui_seq(n_a=2, n_b=2, link=None, cui=True):
    return compose(
        make_screen("a", n_a),
        make_screen("b", n_b),
        l_max=64,
        link_component=link,
        cui_label=cui,
    )


def outputs_for(seq, d=8, fill=0.0):
    out = torch.full((len(seq), d), 0.5)
    out[:, 0] = fill
    return out


def test_lcp_uniform_logits_is_log_candidate_count():
    for n_a, n_b in ((1, 1), (2, 2), (3, 2)):
        seq = two_ui_seq(n_a, n_b, link=0)
        out = outputs_for(seq, fill=0.7)  # equal logits everywhere
        loss, pred = lcp_loss(out, seq, PICK_FIRST)
        n_cands = 2 * (n_a + n_b)
        assert loss.item() == pytest.approx(math.log(n_cands), abs=1e-6)
        assert pred in seq.candidate_indices()


def test_lcp_zero_when_indicator_zero():
    seq = two_ui_seq(link=None)
    out = torch.randn(len(seq), 8)
    loss, _ = lcp_loss(out, seq, PICK_FIRST)
    assert loss.item() == 0.0
    # shuffling logits never changes it
    out2 = out[torch.randperm(len(seq))]
    loss2, _ = lcp_loss(out2, seq, PICK_FIRST)
    assert loss2.item() == 0.0


def test_lcp_saturated_logit():
    seq = two_ui_seq(link=1)
    out = outputs_for(seq, fill=0.0)
    out[seq.link_target, 0] = 20.0
    loss, pred = lcp_loss(out, seq, PICK_FIRST)
    assert loss.item() < 1e-8
    assert pred == seq.link_target


def test_cui_closed_forms():
    seq = two_ui_seq(cui=True)
    out = outputs_for(seq, fill=0.0)  # logit 0 -> prob 0.5
    loss, prob = cui_loss(out, seq, PICK_FIRST)
    assert prob.item() == pytest.approx(0.5)
    assert loss.item() == pytest.approx(math.log(2), abs=1e-6)
    out[0, 0] = 20.0
    loss, prob = cui_loss(out, seq, PICK_FIRST)
    assert loss.item() < 1e-8


def test_cui_requires_label():
    seq = two_ui_seq(cui=None)
    with pytest.raises(ValueError):
        cui_loss(outputs_for(seq), seq, PICK_FIRST)


def test_mask_loss_cases():
    screen = make_screen("a", 3)
    seq = compose(screen, None, l_max=64, mask_a=[True, False, False])
    out = torch.zeros(len(seq), 8)
    targets = torch.zeros(len(seq), 8)
    assert mask_loss(out, seq, targets).item() == 0.0
    # one masked token, output - target = e1 -> loss 1
    masked_pos = next(i for i, t in enumerate(seq.tokens) if t.masked)
    out[masked_pos, 0] = 1.0
    assert mask_loss(out, seq, targets).item() == pytest.approx(1.0)
    # perturbing unmasked rows changes nothing, exactly
    out2 = out.clone()
    for i in range(len(seq)):
        if i != masked_pos:
            out2[i] += torch.randn(8)
    assert mask_loss(out2, seq, targets).item() == mask_loss(out, seq, targets).item()
    # no masked tokens -> exactly zero
    seq0 = compose(screen, None, l_max=64)
    assert mask_loss(torch.randn(len(seq0), 8), seq0, targets).item() == 0.0


def test_total_loss_composition():
    w = LossWeights()
    assert total_loss(1.0, 2.0, 3.0, w) == 1.23
    assert total_loss(0.0, 0.0, 0.0, w) == 0.0
    assert total_loss(5.0, 7.0, 9.0, LossWeights(0.0, 0.0)) == 5.0


@pytest.fixture(scope="module")
def tiny_setup():
    corpus = generate_corpus(
        GeneratorConfig(n_apps=5, traces_per_app=6, screens_min=4, screens_max=6), seed=9
    )
    split = split_by_app([a.spec.app_id for a in corpus.apps], 2)
    pairs = build_split_pairs(
        {a.spec.app_id: a.traces for a in corpus.apps}, split, pair_seed=3, mask_rate=0.15
    )
    screens = corpus.all_screens()
    cfg = ModelConfig(layers=1, heads=2, hidden=32, dropout=0.0, text_buckets=512)
    cache = FeatureCache(screens, cfg.text_buckets)
    return corpus, pairs, cache, cfg


def fresh_model(cfg, seed=0):
    model = UIModel(cfg)
    heads = PretrainHeads(cfg.hidden)
    glorot_init(model, seed)
    glorot_init(heads, seed + 1)
    return model, heads


def test_batched_losses_match_per_sample(tiny_setup):
    _, pairs, cache, cfg = tiny_setup
    model, heads = fresh_model(cfg)
    samples = pairs["train"][:6]
    seqs = [compose_sequence(s, cache.screens, cfg.l_max) for s in samples]
    batch = collate(seqs, cache)
    model.eval()
    with torch.no_grad():
        outputs, targets = model(batch)
        total_b, metrics = batch_losses(model, heads, batch, LossWeights())
        lcp_sum = cui_sum = mask_sum = 0.0
        for i, seq in enumerate(seqs):
            out_i = outputs[i, : len(seq)]
            tgt_i = targets[i, : len(seq)]
            l, _ = lcp_loss(out_i, seq, heads)
            lcp_sum += l.item()
            c, _ = cui_loss(out_i, seq, heads)
            cui_sum += c.item()
            mask_sum += mask_loss(out_i, seq, tgt_i).item()
    n = len(seqs)
    assert metrics["loss_lcp"] == pytest.approx(lcp_sum / n, abs=1e-5)
    assert metrics["loss_cui"] == pytest.approx(cui_sum / n, abs=1e-5)
    assert metrics["loss_mask"] == pytest.approx(mask_sum / n, rel=1e-4)


def test_zero_learning_rate_keeps_params_bitwise(tiny_setup):
    _, pairs, cache, cfg = tiny_setup
    model, heads = fresh_model(cfg)
    samples = pairs["train"][:4]
    seqs = [compose_sequence(s, cache.screens, cfg.l_max) for s in samples]
    batch = collate(seqs, cache)
    before = {k: v.clone() for k, v in checkpoint_tensors(model, heads).items()}
    opt = make_optimizer(list(model.parameters()) + list(heads.parameters()),
                         TrainConfig(lr=0.0))
    train_step(model, heads, batch, opt, LossWeights())
    after = checkpoint_tensors(model, heads)
    for k in before:
        assert torch.equal(before[k], after[k]), k


def test_overfit_single_batch(tiny_setup):
    _, pairs, cache, cfg = tiny_setup
    model, heads = fresh_model(cfg, seed=4)
    samples = pairs["train"][:8]
    seqs = [compose_sequence(s, cache.screens, cfg.l_max) for s in samples]
    batch = collate(seqs, cache)
    opt = make_optimizer(list(model.parameters()) + list(heads.parameters()),
                         TrainConfig(lr=1e-3))
    first = None
    for _ in range(200):
        metrics = train_step(model, heads, batch, opt, LossWeights())
        if first is None:
            first = metrics["loss_total"]
    assert metrics["loss_total"] < first


def test_run_pretraining_deterministic(tiny_setup, tmp_path):
    _, pairs, cache, cfg = tiny_setup
    logs = []
    for run in range(2):
        model, heads = fresh_model(cfg, seed=1)
        res = run_pretraining(
            model,
            heads,
            pairs["train"][:64],
            cache,
            TrainConfig(steps=6, batch_size=16, seed=5, log_interval=2),
            LossWeights(),
        )
        logs.append(res.metrics_log)
    assert logs[0] == logs[1]
    keys = set(logs[0][0])
    assert keys == {"step", "loss_total", "loss_lcp", "loss_cui", "loss_mask", "acc_lcp", "acc_cui"}


def test_checkpoint_roundtrip_bitwise(tiny_setup, tmp_path):
    _, pairs, cache, cfg = tiny_setup
    model, heads = fresh_model(cfg, seed=2)
    tensors = checkpoint_tensors(model, heads)
    save_checkpoint(tmp_path / "ck", tensors, {"hidden": cfg.hidden}, step=7, seeds={"init": 2})
    manifest, loaded = load_checkpoint(tmp_path / "ck")
    assert manifest["step"] == 7
    assert set(loaded) == set(tensors)
    for k, v in tensors.items():
        assert torch.equal(loaded[k], v), k
    model2, heads2 = fresh_model(cfg, seed=9)
    load_into(model2, heads2, loaded)
    for k, v in checkpoint_tensors(model2, heads2).items():
        assert torch.equal(v, tensors[k])


def test_evaluate_reports_chance_from_histogram(tiny_setup):
    _, pairs, cache, cfg = tiny_setup
    model, heads = fresh_model(cfg)
    report = evaluate_pairs(model, heads, pairs["dev"][:40], cache)
    hist = report["candidate_histogram"]
    expected_chance = sum(n / c for c, n in hist.items()) / sum(hist.values())
    assert report["chance_lcp"] == pytest.approx(expected_chance)
    assert report["n_linked"] == sum(hist.values())
