"""Pair dataset construction: app-disjoint splits, negative sampling, masking.

Positives are every consecutive screen pair of every trace, with the link
component recovered by hit-testing the recorded click. Each positive
contributes one negative that reuses its first screen: half of the
negatives swap in a non-adjacent screen of the same trace, half a screen
from a different trace. The final composition is 50% positive, 25%
same-sequence, 25% cross-sequence.

Negative kinds are assigned preferentially so that same-sequence slots go
to anchors whose trace is long enough (>= 3 screens); only when a split
runs out of eligible anchors is the remainder backfilled with
cross-sequence negatives, with a warning.
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass
from typing import Optional, Sequence

from . import rng
from .vh import Trace, hit_test

logger = logging.getLogger(__name__)

NEGATIVE_NONE = "none"
NEGATIVE_SAME_SEQUENCE = "same_sequence"
NEGATIVE_CROSS_SEQUENCE = "cross_sequence"


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class Split:
    train: tuple[str, ...]
    dev: tuple[str, ...]
    test: tuple[str, ...]

    def all_ids(self) -> set[str]:
        return set(self.train) | set(self.dev) | set(self.test)


def split_by_app(app_ids: Sequence[str], seed: int) -> Split:
    """Deterministic 80/10/10 partition over whole apps.

    Dev and test get round(0.1 * n), at least 1 app each, so no split is
    ever empty; any app lands in exactly one split.
    """
    ids = list(app_ids)
    if len(ids) != len(set(ids)):
        raise DatasetError("duplicate app ids")
    n = len(ids)
    if n < 3:
        raise DatasetError(f"need at least 3 apps to split, got {n}")
    order = sorted(ids)
    rng.stream(seed, "split").shuffle(order)
    n_hold = max(1, int(0.1 * n + 0.5))
    test = order[:n_hold]
    dev = order[n_hold : 2 * n_hold]
    train = order[2 * n_hold :]
    return Split(train=tuple(sorted(train)), dev=tuple(sorted(dev)), test=tuple(sorted(test)))


@dataclass(frozen=True)
class PairSample:
    """One training example: two screens plus consecutiveness ground truth.

    link_component indexes ui_a's leaves and is present only on consecutive
    pairs whose click resolves to a component; its presence is what makes
    the link-prediction indicator 1 for this sample. mask_a/mask_b flag
    which components' text gets masked (flags only; application happens at
    encoding time).
    """

    ui_a: str
    ui_b: str
    label_consecutive: bool
    link_component: Optional[int]
    negative_kind: str
    mask_a: tuple[bool, ...]
    mask_b: tuple[bool, ...]

    def validate(self) -> None:
        if self.label_consecutive != (self.negative_kind == NEGATIVE_NONE):
            raise DatasetError("consecutive label must match negative kind")
        if self.link_component is not None and not self.label_consecutive:
            raise DatasetError("link component on a non-consecutive pair")


def build_pairs(traces: Sequence[Trace], seed: int) -> list[PairSample]:
    """All consecutive pairs plus an equal number of sampled negatives."""
    usable = []
    for t in traces:
        if len(t.screens) < 2:
            logger.warning("skipping trace %s: fewer than 2 screens", t.trace_id)
            continue
        usable.append(t)
    if len(usable) < 2:
        raise DatasetError("need at least 2 traces to sample cross-sequence negatives")

    positives: list[tuple[int, int, PairSample]] = []  # (trace idx, screen idx, sample)
    for ti, t in enumerate(usable):
        for i in range(len(t.screens) - 1):
            a, b = t.screens[i], t.screens[i + 1]
            action = t.actions[i]
            link = hit_test(a.vh.leaves, action.x, action.y)
            positives.append(
                (
                    ti,
                    i,
                    PairSample(
                        ui_a=a.screen_id,
                        ui_b=b.screen_id,
                        label_consecutive=True,
                        link_component=link,
                        negative_kind=NEGATIVE_NONE,
                        mask_a=(False,) * len(a.vh.leaves),
                        mask_b=(False,) * len(b.vh.leaves),
                    ),
                )
            )

    n_pos = len(positives)
    n_same = n_pos // 2
    eligible = [k for k, (ti, _, _) in enumerate(positives) if len(usable[ti].screens) >= 3]
    rng.stream(seed, "kinds").shuffle(eligible)
    same_set = set(eligible[:n_same])
    backfilled = n_same - len(same_set)
    if backfilled:
        logger.warning(
            "%d same-sequence negatives impossible (traces of length 2); "
            "backfilling from cross-sequence",
            backfilled,
        )

    samples: list[PairSample] = []
    for k, (ti, i, pos) in enumerate(positives):
        samples.append(pos)
        g = rng.stream(seed, "neg", usable[ti].trace_id, i)
        if k in same_set:
            t = usable[ti]
            choices = [j for j in range(len(t.screens)) if j != i and j != i + 1]
            j = choices[int(g.integers(0, len(choices)))]
            other = t.screens[j]
            kind = NEGATIVE_SAME_SEQUENCE
        else:
            uj = int(g.integers(0, len(usable) - 1))
            if uj >= ti:
                uj += 1
            u = usable[uj]
            other = u.screens[int(g.integers(0, len(u.screens)))]
            kind = NEGATIVE_CROSS_SEQUENCE
        samples.append(
            dataclasses.replace(
                pos,
                ui_b=other.screen_id,
                label_consecutive=False,
                link_component=None,
                negative_kind=kind,
                mask_b=(False,) * len(other.vh.leaves),
            )
        )
    return samples


def apply_text_mask(sample: PairSample, rate: float, seed: int, salt: int = 0) -> PairSample:
    """Independently flag each component of both screens with probability rate."""
    if not 0.0 <= rate <= 1.0:
        raise DatasetError(f"mask rate must be in [0, 1], got {rate}")
    g = rng.stream(seed, "mask", salt, sample.ui_a, sample.ui_b, sample.negative_kind)
    mask_a = tuple(bool(g.random() < rate) for _ in sample.mask_a)
    mask_b = tuple(bool(g.random() < rate) for _ in sample.mask_b)
    return dataclasses.replace(sample, mask_a=mask_a, mask_b=mask_b)


def composition_counts(samples: Sequence[PairSample]) -> dict[str, int]:
    counts = {NEGATIVE_NONE: 0, NEGATIVE_SAME_SEQUENCE: 0, NEGATIVE_CROSS_SEQUENCE: 0}
    for s in samples:
        counts[s.negative_kind] += 1
    return counts


def build_split_pairs(
    traces_by_app: dict[str, list[Trace]],
    split: Split,
    pair_seed: int,
    mask_rate: float,
) -> dict[str, list[PairSample]]:
    """Pairs per split, sampled within the split so apps never leak across."""
    out: dict[str, list[PairSample]] = {}
    for name, ids in (("train", split.train), ("dev", split.dev), ("test", split.test)):
        traces = [t for app_id in ids for t in traces_by_app.get(app_id, [])]
        pairs = build_pairs(traces, rng.stream_key(pair_seed, "pairs", name) % (2**63))
        mask_seed = rng.stream_key(pair_seed, "mask", name) % (2**63)
        out[name] = [
            apply_text_mask(s, mask_rate, mask_seed, salt=i) for i, s in enumerate(pairs)
        ]
    return out
