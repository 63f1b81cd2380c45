"""Token sequence composition for UI pairs.

A composed sequence lays out, in order: [CLS], UI-A text tokens, [SEP],
UI-B text tokens, [SEP], UI-A vision tokens, [SEP], UI-B vision tokens,
[END], then padding. Every component contributes one text token (its
field sentence) and one vision token (its crop). Special tokens and text
tokens take the whole-screen shot as their vision input (text tokens
additionally get the learned image-placeholder embedding) and a
full-screen box as their positional input. Single-UI tasks use the same
layout with the B segments left empty.

Truncation drops trailing components first and refuses to drop the link
component until nothing else is left; if it must, the sequence loses its
link target (the link-prediction indicator becomes 0) and is flagged.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

from .dataset import PairSample
from .vh import BoundingBox, Screen, leaf_sentence

KIND_CLS = 0
KIND_SEP = 1
KIND_END = 2
KIND_TEXT = 3
KIND_VISION = 4
KIND_PAD = 5

SEG_A_TEXT = 0
SEG_B_TEXT = 1
SEG_A_VISION = 2
SEG_B_VISION = 3
SEG_PADDING = 4
N_SEGMENTS = 5

MARKER_SENTENCES = {KIND_CLS: "[CLS]", KIND_SEP: "[SEP]", KIND_END: "[END]"}

N_SPECIAL_TOKENS = 5  # CLS + 3x SEP + END, present in every sequence


class SequenceError(ValueError):
    pass


@dataclass(frozen=True)
class Token:
    kind: int
    segment: int
    sentence: str                      # marker for specials, "" for vision/pad
    vision: Optional[tuple]            # ("crop", screen_id, leaf) | ("whole", screen_id)
    box: BoundingBox
    screen_wh: tuple[int, int]
    origin: Optional[tuple[str, int]] = None  # ("a"|"b", leaf index)
    img_slot: bool = False             # vision slot holds the [IMG] placeholder
    masked: bool = False


@dataclass
class TokenSequence:
    tokens: list[Token]
    link_target: Optional[int]
    cui_label: Optional[bool]
    screen_a: str
    screen_b: Optional[str]
    link_truncated: bool = False
    sample_id: str = ""

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def attention_mask(self) -> list[bool]:
        return [t.kind != KIND_PAD for t in self.tokens]

    def candidate_indices(self, vision_only: bool = False) -> list[int]:
        """Token positions eligible as link/selection candidates."""
        kinds = (KIND_VISION,) if vision_only else (KIND_TEXT, KIND_VISION)
        return [i for i, t in enumerate(self.tokens) if t.origin and t.kind in kinds]

    def vision_position(self, ui: str, leaf: int) -> int:
        for i, t in enumerate(self.tokens):
            if t.kind == KIND_VISION and t.origin == (ui, leaf):
                return i
        raise SequenceError(f"no vision token for {ui}[{leaf}]")

    def padded(self, length: int) -> "TokenSequence":
        if length < len(self.tokens):
            raise SequenceError("cannot pad below current length")
        pad = Token(
            kind=KIND_PAD,
            segment=SEG_PADDING,
            sentence="",
            vision=None,
            box=BoundingBox(0, 0, 1, 1),
            screen_wh=(1, 1),
        )
        return TokenSequence(
            tokens=self.tokens + [pad] * (length - len(self.tokens)),
            link_target=self.link_target,
            cui_label=self.cui_label,
            screen_a=self.screen_a,
            screen_b=self.screen_b,
            link_truncated=self.link_truncated,
            sample_id=self.sample_id,
        )

    def check_layout(self) -> None:
        kinds = [t.kind for t in self.tokens]
        if kinds.count(KIND_CLS) != 1 or kinds[0] != KIND_CLS:
            raise SequenceError("sequence must start with exactly one [CLS]")
        if kinds.count(KIND_SEP) != 3:
            raise SequenceError("sequence must contain exactly three [SEP]")
        non_pad = [k for k in kinds if k != KIND_PAD]
        if kinds.count(KIND_END) != 1 or non_pad[-1] != KIND_END:
            raise SequenceError("sequence must end with exactly one [END]")
        for t in self.tokens:
            if t.masked and t.kind != KIND_TEXT:
                raise SequenceError("mask flag on a non-text token")
            if (t.segment == SEG_PADDING) != (t.kind == KIND_PAD):
                raise SequenceError("padding segment must coincide with pad tokens")


def _truncate(n_a: int, n_b: int, budget: int, link: Optional[int]) -> tuple[int, int, bool]:
    keep_a, keep_b = n_a, n_b
    need_a = link + 1 if link is not None else 0
    lost = False
    while keep_a + keep_b > budget:
        can_drop_a = keep_a > need_a
        if can_drop_a and (keep_a >= keep_b or keep_b == 0):
            keep_a -= 1
        elif keep_b > 0:
            keep_b -= 1
        elif can_drop_a:
            keep_a -= 1
        else:
            # only the link component is left to drop
            need_a = 0
            lost = True
    return keep_a, keep_b, lost


def compose(
    screen_a: Screen,
    screen_b: Optional[Screen],
    l_max: int,
    link_component: Optional[int] = None,
    mask_a: Sequence[bool] = (),
    mask_b: Sequence[bool] = (),
    cui_label: Optional[bool] = None,
    extra_text: Optional[str] = None,
    sample_id: str = "",
) -> TokenSequence:
    """Compose a (possibly single-UI) token sequence from screens."""
    n_extra = 1 if extra_text is not None else 0
    if l_max < N_SPECIAL_TOKENS + n_extra:
        raise SequenceError(f"l_max={l_max} cannot fit the mandatory special tokens")

    leaves_a = screen_a.vh.leaves
    leaves_b = screen_b.vh.leaves if screen_b is not None else []
    if link_component is not None and not 0 <= link_component < len(leaves_a):
        raise SequenceError(
            f"link component {link_component} outside UI-A's {len(leaves_a)} leaves"
        )
    budget = (l_max - N_SPECIAL_TOKENS - n_extra) // 2
    keep_a, keep_b, link_lost = _truncate(len(leaves_a), len(leaves_b), budget, link_component)
    link = link_component if (link_component is not None and not link_lost) else None

    wh_a = (screen_a.width, screen_a.height)
    full_a = BoundingBox(0, 0, screen_a.width, screen_a.height)
    if screen_b is not None:
        wh_b = (screen_b.width, screen_b.height)
        full_b = BoundingBox(0, 0, screen_b.width, screen_b.height)
        whole_b = ("whole", screen_b.screen_id)
    else:
        wh_b, full_b, whole_b = wh_a, full_a, ("whole", screen_a.screen_id)
    whole_a = ("whole", screen_a.screen_id)

    def special(kind: int, segment: int, vision, box, wh) -> Token:
        return Token(
            kind=kind,
            segment=segment,
            sentence=MARKER_SENTENCES[kind],
            vision=vision,
            box=box,
            screen_wh=wh,
        )

    def text_token(ui: str, screen: Screen, i: int, segment: int, masked: bool, whole) -> Token:
        leaf = screen.vh.leaves[i]
        return Token(
            kind=KIND_TEXT,
            segment=segment,
            sentence=leaf_sentence(leaf),
            vision=whole,
            box=leaf.bounds,
            screen_wh=(screen.width, screen.height),
            origin=(ui, i),
            img_slot=True,
            masked=masked,
        )

    def vision_token(ui: str, screen: Screen, i: int, segment: int) -> Token:
        leaf = screen.vh.leaves[i]
        return Token(
            kind=KIND_VISION,
            segment=segment,
            sentence="",
            vision=("crop", screen.screen_id, i),
            box=leaf.bounds,
            screen_wh=(screen.width, screen.height),
            origin=(ui, i),
        )

    def flag(mask: Sequence[bool], i: int) -> bool:
        return bool(mask[i]) if i < len(mask) else False

    tokens = [special(KIND_CLS, SEG_A_TEXT, whole_a, full_a, wh_a)]
    for i in range(keep_a):
        tokens.append(text_token("a", screen_a, i, SEG_A_TEXT, flag(mask_a, i), whole_a))
    if extra_text is not None:
        if not extra_text:
            raise SequenceError("extra text token must be non-empty")
        tokens.append(
            Token(
                kind=KIND_TEXT,
                segment=SEG_A_TEXT,
                sentence=extra_text,
                vision=whole_a,
                box=full_a,
                screen_wh=wh_a,
                img_slot=True,
            )
        )
    tokens.append(special(KIND_SEP, SEG_A_TEXT, whole_a, full_a, wh_a))
    for i in range(keep_b):
        tokens.append(text_token("b", screen_b, i, SEG_B_TEXT, flag(mask_b, i), whole_b))
    tokens.append(special(KIND_SEP, SEG_B_TEXT, whole_b, full_b, wh_b))
    a_vision_start = len(tokens)
    for i in range(keep_a):
        tokens.append(vision_token("a", screen_a, i, SEG_A_VISION))
    tokens.append(special(KIND_SEP, SEG_A_VISION, whole_a, full_a, wh_a))
    for i in range(keep_b):
        tokens.append(vision_token("b", screen_b, i, SEG_B_VISION))
    tokens.append(special(KIND_END, SEG_B_VISION, whole_b, full_b, wh_b))

    seq = TokenSequence(
        tokens=tokens,
        link_target=a_vision_start + link if link is not None else None,
        cui_label=cui_label,
        screen_a=screen_a.screen_id,
        screen_b=screen_b.screen_id if screen_b is not None else None,
        link_truncated=link_lost,
        sample_id=sample_id,
    )
    seq.check_layout()
    return seq


def compose_sequence(
    sample: PairSample, screens: Mapping[str, Screen], l_max: int
) -> TokenSequence:
    """Compose the two-UI pre-training sequence for a pair sample."""
    return compose(
        screens[sample.ui_a],
        screens[sample.ui_b],
        l_max,
        link_component=sample.link_component,
        mask_a=sample.mask_a,
        mask_b=sample.mask_b,
        cui_label=sample.label_consecutive,
        sample_id=f"{sample.ui_a}|{sample.ui_b}|{sample.negative_kind}",
    )
