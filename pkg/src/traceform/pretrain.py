"""Pre-training tasks, losses, and the optimization loop.

Three losses drive pre-training:

  * link prediction: softmax cross-entropy over every component token
    (text and vision, both screens) for the component that was clicked;
    contributes exactly zero when the pair has no link (non-consecutive
    pair or unresolvable click).
  * consecutiveness: binary cross-entropy of a sigmoid head on the [CLS]
    embedding.
  * masked text: squared L2 regression of masked text tokens' output rows
    onto the (gradient-blocked) text-encoder embeddings of their original
    sentences.

The total is loss_link + lambda_cui * loss_cui + lambda_mask * loss_mask.
Batch losses are averaged over the batch for scale invariance.
"""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import torch
import torch.nn.functional as F
from torch import nn

from . import rng
from .checkpoint import save_checkpoint
from .model import Batch, FeatureCache, UIModel, collate
from .sequence import TokenSequence, compose_sequence
from .transformer import NumericError

logger = logging.getLogger(__name__)

_NEG_INF = float("-inf")


@dataclass(frozen=True)
class LossWeights:
    lambda_cui: float = 0.1
    lambda_mask: float = 0.01

    def validate(self) -> None:
        if self.lambda_cui < 0 or self.lambda_mask < 0:
            raise ValueError("loss weights must be non-negative")


class ScoreHead(nn.Module):
    """Two-layer GELU MLP producing one scalar per input row."""

    def __init__(self, d_in: int, d_hidden: Optional[int] = None):
        super().__init__()
        self.fc1 = nn.Linear(d_in, d_hidden or d_in)
        self.fc2 = nn.Linear(d_hidden or d_in, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.fc2(F.gelu(self.fc1(x))).squeeze(-1)


class PretrainHeads(nn.Module):
    def __init__(self, hidden: int):
        super().__init__()
        self.lcp_mlp = ScoreHead(hidden)
        self.cui_mlp = ScoreHead(hidden)


# ------------------------------------------------------------------ per-sample ops


def lcp_loss(
    outputs: torch.Tensor, seq: TokenSequence, heads: PretrainHeads
) -> tuple[torch.Tensor, int]:
    """Link-prediction loss and argmax candidate for one sequence.

    Candidates are all component-origin text and vision tokens. When the
    sequence carries no link target the loss is exactly zero regardless of
    the logits.
    """
    cands = seq.candidate_indices()
    if not cands:
        raise ValueError("sequence has no candidate tokens")
    logits = heads.lcp_mlp(outputs[cands])
    predicted = cands[int(torch.argmax(logits).item())]
    if seq.link_target is None:
        return outputs.new_zeros(()), predicted
    if seq.link_target not in cands:
        raise ValueError(f"link target {seq.link_target} is not a candidate token")
    target = torch.tensor(cands.index(seq.link_target))
    loss = F.cross_entropy(logits.unsqueeze(0), target.unsqueeze(0))
    return loss, predicted


def cui_loss(
    outputs: torch.Tensor, seq: TokenSequence, heads: PretrainHeads
) -> tuple[torch.Tensor, torch.Tensor]:
    """Consecutiveness BCE and predicted probability for one sequence."""
    if seq.cui_label is None:
        raise ValueError("sequence has no consecutiveness label")
    logit = heads.cui_mlp(outputs[0])
    prob = torch.sigmoid(logit)
    label = torch.tensor(float(seq.cui_label), dtype=logit.dtype)
    return F.binary_cross_entropy_with_logits(logit, label), prob


def mask_loss(
    outputs: torch.Tensor, seq: TokenSequence, targets: torch.Tensor
) -> torch.Tensor:
    """Sum of squared L2 distances at masked text-token positions."""
    seq.check_layout()  # rejects mask flags on non-text tokens
    total = outputs.new_zeros(())
    for i, tok in enumerate(seq.tokens):
        if tok.masked:
            diff = outputs[i] - targets[i]
            total = total + (diff * diff).sum()
    return total


def total_loss(l_lcp, l_cui, l_mask, weights: LossWeights):
    """Weighted pre-training objective."""
    return l_lcp + weights.lambda_cui * l_cui + weights.lambda_mask * l_mask


# ------------------------------------------------------------------ batched losses


def lcp_loss_batch(
    outputs: torch.Tensor, batch: Batch, heads: PretrainHeads
) -> tuple[torch.Tensor, torch.Tensor]:
    """Mean link loss over the batch and per-sample argmax token indices."""
    logits = heads.lcp_mlp(outputs)
    masked_logits = logits.masked_fill(~batch.cand_mask, _NEG_INF)
    preds = masked_logits.argmax(dim=1)
    linked = batch.link_targets >= 0
    if linked.any():
        log_probs = F.log_softmax(masked_logits[linked], dim=1)
        targets = batch.link_targets[linked]
        ce = -log_probs.gather(1, targets.unsqueeze(1)).squeeze(1)
        loss = ce.sum() / len(batch)
    else:
        loss = outputs.new_zeros(())
    return loss, preds


def cui_loss_batch(
    outputs: torch.Tensor, batch: Batch, heads: PretrainHeads
) -> tuple[torch.Tensor, torch.Tensor]:
    """Mean consecutiveness BCE over labeled samples, plus probabilities."""
    logits = heads.cui_mlp(outputs[:, 0])
    probs = torch.sigmoid(logits)
    labeled = batch.has_cui
    if not labeled.any():
        return outputs.new_zeros(()), probs
    loss = F.binary_cross_entropy_with_logits(
        logits[labeled], batch.cui_labels[labeled].to(logits.dtype)
    )
    return loss, probs


def mask_loss_batch(
    outputs: torch.Tensor, batch: Batch, targets: torch.Tensor
) -> torch.Tensor:
    """Mean over the batch of per-sample masked regression sums."""
    if not batch.mask_flags.any():
        return outputs.new_zeros(())
    diff = (outputs - targets) * batch.mask_flags.unsqueeze(-1).to(outputs.dtype)
    return (diff * diff).sum() / len(batch)


def batch_losses(
    model: UIModel, heads: PretrainHeads, batch: Batch, weights: LossWeights
) -> tuple[torch.Tensor, dict]:
    outputs, targets = model(batch)
    l_lcp, preds = lcp_loss_batch(outputs, batch, heads)
    l_cui, probs = cui_loss_batch(outputs, batch, heads)
    l_mask = mask_loss_batch(outputs, batch, targets)
    total = total_loss(l_lcp, l_cui, l_mask, weights)

    linked = batch.link_targets >= 0
    lcp_correct = int((preds[linked] == batch.link_targets[linked]).sum().item())
    labeled = batch.has_cui
    cui_correct = int(
        ((probs[labeled] > 0.5) == (batch.cui_labels[labeled] > 0.5)).sum().item()
    )
    metrics = {
        "loss_total": float(total.detach().item()),
        "loss_lcp": float(l_lcp.detach().item()),
        "loss_cui": float(l_cui.detach().item()),
        "loss_mask": float(l_mask.detach().item()),
        "n_linked": int(linked.sum().item()),
        "lcp_correct": lcp_correct,
        "n_labeled": int(labeled.sum().item()),
        "cui_correct": cui_correct,
    }
    return total, metrics


# ------------------------------------------------------------------ training loop


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 2000
    batch_size: int = 32
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-7
    seed: int = 0
    log_interval: int = 50
    checkpoint_interval: int = 0  # 0: only final


def make_optimizer(params, cfg: TrainConfig) -> torch.optim.Adam:
    return torch.optim.Adam(
        params, lr=cfg.lr, betas=(cfg.beta1, cfg.beta2), eps=cfg.eps
    )


def train_step(
    model: UIModel,
    heads: PretrainHeads,
    batch: Batch,
    optimizer: torch.optim.Optimizer,
    weights: LossWeights,
) -> dict:
    """One forward/backward/Adam update over a batch."""
    total, metrics = batch_losses(model, heads, batch, weights)
    if not torch.isfinite(total):
        raise NumericError(
            f"non-finite loss {total.item()}; offending samples: {batch.sample_ids}"
        )
    optimizer.zero_grad(set_to_none=True)
    total.backward()
    optimizer.step()
    return metrics


def iter_batches(
    samples: Sequence,
    cache: FeatureCache,
    l_max: int,
    batch_size: int,
    order: Optional[Sequence[int]] = None,
):
    idx = list(order) if order is not None else list(range(len(samples)))
    for start in range(0, len(idx), batch_size):
        chunk = [samples[i] for i in idx[start : start + batch_size]]
        seqs = [compose_sequence(s, cache.screens, l_max) for s in chunk]
        yield collate(seqs, cache)


@dataclass
class PretrainResult:
    steps: int
    final_metrics: dict
    metrics_log: list[dict] = field(default_factory=list)


def run_pretraining(
    model: UIModel,
    heads: PretrainHeads,
    samples: Sequence,
    cache: FeatureCache,
    train_cfg: TrainConfig,
    weights: LossWeights,
    out_dir: Optional[Path] = None,
    metrics_sink: Optional[Callable[[dict], None]] = None,
    config_snapshot: Optional[dict] = None,
    seeds: Optional[dict] = None,
) -> PretrainResult:
    """Train for a fixed number of steps, logging aggregated metrics.

    Deterministic for a fixed (seed, thread count): batch order comes from
    keyed streams and dropout from the global torch seed set here.
    """
    weights.validate()
    torch.manual_seed(train_cfg.seed)
    model.train()
    heads.train()
    optimizer = make_optimizer(list(model.parameters()) + list(heads.parameters()), train_cfg)

    log: list[dict] = []
    window: list[dict] = []
    step = 0
    epoch = 0
    start = time.time()
    final_metrics: dict = {}

    def emit(step_no: int) -> None:
        if not window:
            return
        n_linked = sum(m["n_linked"] for m in window)
        n_labeled = sum(m["n_labeled"] for m in window)
        line = {
            "step": step_no,
            "loss_total": sum(m["loss_total"] for m in window) / len(window),
            "loss_lcp": sum(m["loss_lcp"] for m in window) / len(window),
            "loss_cui": sum(m["loss_cui"] for m in window) / len(window),
            "loss_mask": sum(m["loss_mask"] for m in window) / len(window),
            "acc_lcp": (
                sum(m["lcp_correct"] for m in window) / n_linked if n_linked else None
            ),
            "acc_cui": (
                sum(m["cui_correct"] for m in window) / n_labeled if n_labeled else None
            ),
        }
        log.append(line)
        if metrics_sink is not None:
            metrics_sink(line)
        window.clear()

    while step < train_cfg.steps:
        order = list(range(len(samples)))
        rng.stream(train_cfg.seed, "order", epoch).shuffle(order)
        for batch in iter_batches(samples, cache, model.cfg.l_max, train_cfg.batch_size, order):
            metrics = train_step(model, heads, batch, optimizer, weights)
            final_metrics = metrics
            window.append(metrics)
            step += 1
            if step % train_cfg.log_interval == 0:
                emit(step)
            if (
                out_dir is not None
                and train_cfg.checkpoint_interval
                and step % train_cfg.checkpoint_interval == 0
            ):
                write_model_checkpoint(
                    out_dir / f"checkpoint-{step:06d}", model, heads, step,
                    config_snapshot or {}, seeds or {},
                )
            if step >= train_cfg.steps:
                break
        epoch += 1
    emit(step)
    logger.info("pre-trained %d steps in %.1fs", step, time.time() - start)
    if out_dir is not None:
        write_model_checkpoint(
            out_dir / "checkpoint-final", model, heads, step,
            config_snapshot or {}, seeds or {},
        )
    return PretrainResult(steps=step, final_metrics=final_metrics, metrics_log=log)


def checkpoint_tensors(model: UIModel, heads: Optional[nn.Module]) -> dict[str, torch.Tensor]:
    tensors = {f"model.{k}": v for k, v in model.state_dict().items()}
    if heads is not None:
        tensors.update({f"heads.{k}": v for k, v in heads.state_dict().items()})
    return tensors


def write_model_checkpoint(
    path: Path,
    model: UIModel,
    heads: Optional[nn.Module],
    step: int,
    config_snapshot: dict,
    seeds: dict,
) -> None:
    save_checkpoint(path, checkpoint_tensors(model, heads), config_snapshot, step, seeds)


def load_into(model: UIModel, heads: Optional[nn.Module], tensors: dict[str, torch.Tensor]) -> None:
    model.load_state_dict(
        {k[len("model."):]: v for k, v in tensors.items() if k.startswith("model.")}
    )
    if heads is not None:
        head_state = {k[len("heads."):]: v for k, v in tensors.items() if k.startswith("heads.")}
        if head_state:
            heads.load_state_dict(head_state)


# ------------------------------------------------------------------ evaluation


def evaluate_pairs(
    model: UIModel,
    heads: PretrainHeads,
    samples: Sequence,
    cache: FeatureCache,
    batch_size: int = 64,
) -> dict:
    """Task metrics over a sample set, plus the analytic chance level.

    The link-prediction chance level is the mean of 1/|candidates| over
    evaluated (linked) samples, i.e. the accuracy of a uniform guesser.
    """
    model.eval()
    heads.eval()
    weights = LossWeights()
    n_linked = lcp_correct = 0
    n_labeled = cui_correct = 0
    chance_sum = 0.0
    losses = {"loss_lcp": 0.0, "loss_cui": 0.0, "loss_mask": 0.0}
    n_batches = 0
    cand_hist: dict[int, int] = {}
    with torch.no_grad():
        for batch in iter_batches(samples, cache, model.cfg.l_max, batch_size):
            _, metrics = batch_losses(model, heads, batch, weights)
            n_batches += 1
            for k in losses:
                losses[k] += metrics[k]
            n_linked += metrics["n_linked"]
            lcp_correct += metrics["lcp_correct"]
            n_labeled += metrics["n_labeled"]
            cui_correct += metrics["cui_correct"]
            counts = batch.cand_mask.sum(dim=1)
            for i in range(len(batch)):
                if batch.link_targets[i] >= 0:
                    c = int(counts[i].item())
                    cand_hist[c] = cand_hist.get(c, 0) + 1
                    chance_sum += 1.0 / c
    model.train()
    heads.train()
    return {
        "n_samples": len(samples),
        "n_linked": n_linked,
        "acc_lcp": lcp_correct / n_linked if n_linked else None,
        "acc_cui": cui_correct / n_labeled if n_labeled else None,
        "chance_lcp": chance_sum / n_linked if n_linked else None,
        "candidate_histogram": dict(sorted(cand_hist.items())),
        **{k: v / max(n_batches, 1) for k, v in losses.items()},
    }


def metrics_jsonl_sink(path: Path) -> Callable[[dict], None]:
    path.parent.mkdir(parents=True, exist_ok=True)
    f = path.open("a")

    def sink(line: dict) -> None:
        f.write(json.dumps(line) + "\n")
        f.flush()

    return sink
