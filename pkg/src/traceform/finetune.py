"""Downstream tasks: dataset builders, task heads, fine-tuning, evaluation.

Five tasks ride on the pre-trained encoder:

  * icon_cls            per-component classification from the component's
                        vision-token output row
  * app_type_cls        per-screen classification from the [CLS] row
  * similar_component   two-UI retrieval by dot product between the anchor
                        component's embedding and candidate embeddings
  * referring_expression single-UI selection: the expression rides as an
                        extra text token, a per-token score head picks
                        among the screen's component vision tokens
  * link_component      the pre-training link task on held-out pairs,
                        reusing the pre-trained link head unchanged

Every task fine-tunes end to end: encoders, fusion, transformer, and task
head all receive gradients.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Sequence

import torch
import torch.nn.functional as F
from torch import nn

from . import rng
from .checkpoint import load_checkpoint
from .dataset import PairSample, Split, build_pairs
from .metrics import task_report
from .model import Batch, FeatureCache, UIModel, collate
from .pretrain import ScoreHead, make_optimizer, TrainConfig
from .sequence import KIND_VISION, TokenSequence, compose, compose_sequence
from .synth import CorpusData
from .transformer import ModelConfig, glorot_init

logger = logging.getLogger(__name__)

TASKS = (
    "icon_cls",
    "app_type_cls",
    "similar_component",
    "referring_expression",
    "link_component",
)


class TaskError(ValueError):
    pass


@dataclass(frozen=True)
class TaskSpec:
    task: str
    n_classes: int = 0          # label vocabulary for classification heads
    report_macro_f1: bool = False

    @classmethod
    def for_task(cls, task: str, corpus: CorpusData) -> "TaskSpec":
        if task == "icon_cls":
            return cls(task, n_classes=corpus.config.n_icon_classes, report_macro_f1=True)
        if task == "app_type_cls":
            return cls(task, n_classes=corpus.config.n_app_types, report_macro_f1=True)
        if task in ("similar_component", "referring_expression", "link_component"):
            return cls(task)
        raise TaskError(f"unknown task {task!r} (choose from {TASKS})")


# ------------------------------------------------------------------ examples


@dataclass(frozen=True)
class ComponentExample:
    screen_id: str
    component: int
    label: int


@dataclass(frozen=True)
class ScreenExample:
    screen_id: str
    label: int


@dataclass(frozen=True)
class RetrievalExample:
    ui_a: str
    comp_a: int
    ui_b: str
    comp_b: int


@dataclass(frozen=True)
class ReferringTaskExample:
    screen_id: str
    expression: str
    target: int


def _apps_of_split(split: Split) -> dict[str, tuple[str, ...]]:
    return {"train": split.train, "dev": split.dev, "test": split.test}


def build_task_examples(
    task: str, corpus: CorpusData, split: Split, seed: int
) -> dict[str, list]:
    """Per-split example lists; apps never straddle splits."""
    labels = corpus.merged_labels()
    apps_by_id = {a.spec.app_id: a for a in corpus.apps}
    out: dict[str, list] = {}
    for name, app_ids in _apps_of_split(split).items():
        examples: list = []
        if task == "icon_cls":
            for app_id in app_ids:
                for sid in sorted(apps_by_id[app_id].screens):
                    for ci, cls in enumerate(labels.icon[sid]):
                        examples.append(ComponentExample(sid, ci, cls))
        elif task == "app_type_cls":
            for app_id in app_ids:
                for sid in sorted(apps_by_id[app_id].screens):
                    examples.append(ScreenExample(sid, labels.app_type[app_id]))
        elif task == "similar_component":
            examples = _similar_examples(corpus, set(app_ids), seed, name)
        elif task == "referring_expression":
            wanted = set(app_ids)
            examples = [
                ReferringTaskExample(r.screen_id, r.expression, r.target)
                for r in labels.referring
                if r.screen_id.split("/")[0] in wanted
            ]
        elif task == "link_component":
            traces = [t for app_id in app_ids for t in apps_by_id[app_id].traces]
            pairs = build_pairs(traces, rng.stream_key(seed, "link", name) % (2**63))
            examples = [p for p in pairs if p.link_component is not None]
        else:
            raise TaskError(f"unknown task {task!r}")
        out[name] = examples
    return out


def _similar_examples(
    corpus: CorpusData, app_ids: set[str], seed: int, split_name: str
) -> list[RetrievalExample]:
    """Labeled pairs plus mined same-function pairs across screens."""
    examples = []
    by_screen: dict[str, list] = {}
    by_function: dict[int, list[tuple[str, int]]] = {}
    for app in corpus.apps:
        if app.spec.app_id not in app_ids:
            continue
        for p in app.labels.similar_pairs:
            examples.append(RetrievalExample(p.ui_a, p.comp_a, p.ui_b, p.comp_b))
        for s in app.spec.screens:
            by_screen[s.screen_id] = s.components
            for ci, comp in enumerate(s.components):
                by_function.setdefault(comp.function, []).append((s.screen_id, ci))

    g = rng.stream(seed, "similar", split_name)
    functions = sorted(f for f, entries in by_function.items() if len(entries) >= 2)
    target = 4 * len(examples) + 1
    attempts = 0
    while len(examples) < target and attempts < 20 * target and functions:
        attempts += 1
        f = functions[int(g.integers(0, len(functions)))]
        entries = by_function[f]
        ia, ib = g.integers(0, len(entries)), g.integers(0, len(entries))
        (ua, ca), (ub, cb) = entries[int(ia)], entries[int(ib)]
        if ua == ub:
            continue
        if len(by_screen[ub]) < 2:
            continue
        examples.append(RetrievalExample(ua, ca, ub, cb))
    return examples


# ------------------------------------------------------------------ heads & ops


class ClassifierHead(nn.Module):
    """Linear-softmax head over a task's label vocabulary."""

    def __init__(self, hidden: int, n_classes: int):
        super().__init__()
        self.proj = nn.Linear(hidden, n_classes)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.proj(x)


def classify(embedding: torch.Tensor, head: ClassifierHead) -> int:
    """Argmax class for one embedding (component row or CLS row)."""
    if embedding.shape[-1] != head.proj.in_features:
        raise TaskError(
            f"embedding dim {embedding.shape[-1]} does not match head "
            f"input {head.proj.in_features}"
        )
    return int(torch.argmax(head(embedding)).item())


def format_referring_task(expression: str, screen, l_max: int, target: Optional[int] = None):
    """Single-UI sequence with the expression as an extra UI-A text token."""
    if not expression:
        raise TaskError("referring expression must be non-empty")
    return compose(
        screen, None, l_max, link_component=target, extra_text=expression,
        sample_id=f"{screen.screen_id}|ref",
    )


def selection_loss_batch(
    outputs: torch.Tensor,
    batch: Batch,
    score_head: nn.Module,
    vision_only: bool,
) -> tuple[torch.Tensor, torch.Tensor]:
    """LCP-style selection: per-token scores, softmax over candidates."""
    cand = batch.vis_cand_mask if vision_only else batch.cand_mask
    logits = score_head(outputs).masked_fill(~cand, float("-inf"))
    preds = logits.argmax(dim=1)
    selected = batch.link_targets >= 0
    if not selected.any():
        return outputs.new_zeros(()), preds
    log_probs = F.log_softmax(logits[selected], dim=1)
    ce = -log_probs.gather(1, batch.link_targets[selected].unsqueeze(1)).squeeze(1)
    return ce.mean(), preds


# ------------------------------------------------------------------ fine-tuning


@dataclass(frozen=True)
class FinetuneConfig:
    epochs: int = 3
    batch_size: int = 16
    lr: float = 1e-3
    seed: int = 0
    max_train_examples: int = 5000
    eval_batch_size: int = 64


def _subsample(examples: list, limit: int, seed: int) -> list:
    if limit <= 0 or len(examples) <= limit:
        return list(examples)
    order = list(range(len(examples)))
    rng.stream(seed, "subsample").shuffle(order)
    return [examples[i] for i in sorted(order[:limit])]


def init_model(
    cfg: ModelConfig,
    init_mode: str,
    checkpoint_dir: Optional[Path],
    seed: int,
) -> tuple[UIModel, ScoreHead]:
    """Model plus an LCP-style score head, pre-trained or random."""
    model = UIModel(cfg)
    glorot_init(model, seed)
    score_head = ScoreHead(cfg.hidden)
    glorot_init(score_head, seed + 1)
    if init_mode == "pretrained":
        if checkpoint_dir is None:
            raise TaskError("pretrained init requires a checkpoint")
        _, tensors = load_checkpoint(checkpoint_dir)
        model.load_state_dict(
            {k[len("model."):]: v for k, v in tensors.items() if k.startswith("model.")}
        )
        lcp_state = {
            k[len("heads.lcp_mlp."):]: v
            for k, v in tensors.items()
            if k.startswith("heads.lcp_mlp.")
        }
        if lcp_state:
            score_head.load_state_dict(lcp_state)
    elif init_mode != "random":
        raise TaskError(f"unknown init mode {init_mode!r}")
    return model, score_head


class _TaskRunner:
    """Shared fine-tune/eval machinery parameterized by task callbacks."""

    def __init__(
        self,
        task: TaskSpec,
        corpus: CorpusData,
        cache: FeatureCache,
        model: UIModel,
        score_head: ScoreHead,
        ft_cfg: FinetuneConfig,
    ):
        self.spec = task
        self.corpus = corpus
        self.cache = cache
        self.model = model
        self.score_head = score_head
        self.cfg = ft_cfg
        self.screens = cache.screens
        hidden = model.cfg.hidden
        self.classifier: Optional[ClassifierHead] = None
        if task.n_classes:
            self.classifier = ClassifierHead(hidden, task.n_classes)
            glorot_init(self.classifier, ft_cfg.seed + 2)

    # ---- sequence construction per example

    def _sequences(self, examples: Sequence) -> list[TokenSequence]:
        task = self.spec.task
        l_max = self.model.cfg.l_max
        seqs = []
        for ex in examples:
            if task == "icon_cls" or task == "app_type_cls":
                sid = ex.screen_id
                seqs.append(compose(self.screens[sid], None, l_max, sample_id=sid))
            elif task == "similar_component":
                seqs.append(
                    compose(
                        self.screens[ex.ui_a],
                        self.screens[ex.ui_b],
                        l_max,
                        sample_id=f"{ex.ui_a}|{ex.ui_b}",
                    )
                )
            elif task == "referring_expression":
                seqs.append(
                    format_referring_task(
                        ex.expression, self.screens[ex.screen_id], l_max, target=ex.target
                    )
                )
            else:  # link_component
                seqs.append(compose_sequence(ex, self.screens, l_max))
        return seqs

    def _trainable_params(self):
        params = list(self.model.parameters())
        if self.spec.task in ("referring_expression", "link_component"):
            params += list(self.score_head.parameters())
        if self.classifier is not None:
            params += list(self.classifier.parameters())
        return params

    # ---- loss and predictions per batch

    def _batch_loss(
        self, batch: Batch, seqs: Sequence[TokenSequence], examples: Sequence
    ) -> tuple[torch.Tensor, list[int], list[int]]:
        outputs, _ = self.model(batch)
        task = self.spec.task
        if task == "icon_cls":
            rows, labels = [], []
            for i, (seq, ex) in enumerate(zip(seqs, examples)):
                rows.append(outputs[i, seq.vision_position("a", ex.component)])
                labels.append(ex.label)
            logits = self.classifier(torch.stack(rows))
            target = torch.tensor(labels)
            return F.cross_entropy(logits, target), logits.argmax(1).tolist(), labels
        if task == "app_type_cls":
            logits = self.classifier(outputs[:, 0])
            labels = [ex.label for ex in examples]
            target = torch.tensor(labels)
            return F.cross_entropy(logits, target), logits.argmax(1).tolist(), labels
        if task == "similar_component":
            losses, preds, labels = [], [], []
            for i, (seq, ex) in enumerate(zip(seqs, examples)):
                anchor = outputs[i, seq.vision_position("a", ex.comp_a)]
                b_positions = [
                    (t.origin[1], j)
                    for j, t in enumerate(seq.tokens)
                    if t.kind == KIND_VISION and t.origin and t.origin[0] == "b"
                ]
                cand_rows = torch.stack([outputs[i, j] for _, j in b_positions])
                scores = cand_rows @ anchor
                target_pos = next(
                    k for k, (leaf, _) in enumerate(b_positions) if leaf == ex.comp_b
                )
                losses.append(F.cross_entropy(scores.unsqueeze(0), torch.tensor([target_pos])))
                preds.append(b_positions[int(scores.argmax().item())][0])
                labels.append(ex.comp_b)
            return torch.stack(losses).mean(), preds, labels
        # referring_expression and link_component share the selection head
        vision_only = task == "referring_expression"
        loss, pred_tokens = selection_loss_batch(outputs, batch, self.score_head, vision_only)
        preds = pred_tokens.tolist()
        labels = batch.link_targets.tolist()
        return loss, preds, labels

    # ---- loops

    def finetune(self, train_examples: Sequence) -> None:
        torch.manual_seed(self.cfg.seed)
        self.model.train()
        opt = make_optimizer(self._trainable_params(), TrainConfig(lr=self.cfg.lr))
        n = len(train_examples)
        for epoch in range(self.cfg.epochs):
            order = list(range(n))
            rng.stream(self.cfg.seed, "ft-order", epoch).shuffle(order)
            for start in range(0, n, self.cfg.batch_size):
                chunk = [train_examples[i] for i in order[start : start + self.cfg.batch_size]]
                seqs = self._sequences(chunk)
                batch = collate(seqs, self.cache)
                loss, _, _ = self._batch_loss(batch, seqs, chunk)
                opt.zero_grad(set_to_none=True)
                loss.backward()
                opt.step()

    def predict(self, examples: Sequence) -> tuple[list[int], list[int]]:
        self.model.eval()
        preds: list[int] = []
        labels: list[int] = []
        with torch.no_grad():
            for start in range(0, len(examples), self.cfg.eval_batch_size):
                chunk = examples[start : start + self.cfg.eval_batch_size]
                seqs = self._sequences(chunk)
                batch = collate(seqs, self.cache)
                _, p, t = self._batch_loss(batch, seqs, chunk)
                preds.extend(p)
                labels.extend(t)
        self.model.train()
        return labels, preds

    def chance_accuracy(self, examples: Sequence) -> float:
        task = self.spec.task
        if task in ("icon_cls", "app_type_cls"):
            return 1.0 / self.spec.n_classes
        total = 0.0
        for ex in examples:
            if task == "similar_component":
                total += 1.0 / len(self.screens[ex.ui_b].vh.leaves)
            elif task == "referring_expression":
                total += 1.0 / len(self.screens[ex.screen_id].vh.leaves)
            else:  # link task: all component tokens of both screens
                n = 2 * (
                    len(self.screens[ex.ui_a].vh.leaves) + len(self.screens[ex.ui_b].vh.leaves)
                )
                total += 1.0 / n
        return total / max(len(examples), 1)


def eval_task(
    task_name: str,
    corpus: CorpusData,
    split: Split,
    model_cfg: ModelConfig,
    cache: FeatureCache,
    checkpoint_dir: Optional[Path],
    init_mode: str = "pretrained",
    ft_cfg: FinetuneConfig = FinetuneConfig(),
    data_seed: int = 0,
    eval_split: str = "test",
) -> dict:
    """Fine-tune on the train split and report metrics on the eval split."""
    spec = TaskSpec.for_task(task_name, corpus)
    examples = build_task_examples(task_name, corpus, split, data_seed)
    train = _subsample(examples["train"], ft_cfg.max_train_examples, ft_cfg.seed)
    held_out = examples[eval_split]
    if not train or not held_out:
        raise TaskError(f"task {task_name}: empty train or {eval_split} split")

    model, score_head = init_model(model_cfg, init_mode, checkpoint_dir, ft_cfg.seed)
    runner = _TaskRunner(spec, corpus, cache, model, score_head, ft_cfg)
    logger.info(
        "fine-tuning %s on %d examples (init=%s, seed=%d)",
        task_name, len(train), init_mode, ft_cfg.seed,
    )
    runner.finetune(train)
    labels, preds = runner.predict(held_out)
    return task_report(
        task=task_name,
        split=eval_split,
        y_true=labels,
        y_pred=preds,
        chance_accuracy=runner.chance_accuracy(held_out),
        init_mode=init_mode,
        seed=ft_cfg.seed,
        with_macro_f1=spec.report_macro_f1,
    )
