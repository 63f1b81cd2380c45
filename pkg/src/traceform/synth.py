"""Synthetic app, trace, and label generation.

Each app is a tree of screens: clicking a button on a screen navigates to
one child screen. Every non-root screen owns a distinct "subject" function
label; the button that leads to it carries that label, and the target
screen's title announces it. Text fields carry the function vocabulary and
are blanked with probability eta, so the vision stream (icon class colors,
1:1 with function labels) has to pick up the slack.

The tree shape is deliberate: a random walk down a tree never produces a
non-consecutive screen pair that is secretly adjacent in the app graph, so
negative consecutiveness labels are exact.

All randomness is drawn from streams keyed by (seed, entity path); see rng.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import rng
from .render import hsv_to_rgb8, render_screen
from .vh import Action, BoundingBox, Node, Screen, Trace, ViewHierarchy, hit_test

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1

FUNCTION_WORDS = [
    "home", "back", "search", "settings", "share", "add",
    "delete", "edit", "save", "cart", "checkout", "profile",
    "login", "logout", "favorites", "history", "help", "alerts",
    "camera", "gallery", "map", "chat", "call", "mail",
    "play", "pause", "download", "upload", "filter", "sort",
    "refresh", "info",
]

APP_TYPE_WORDS = [
    "shopping", "travel", "finance", "social", "news", "music",
    "video", "food", "fitness", "health", "education", "weather",
    "sports", "books", "photo", "navigation", "dating", "games",
    "business", "productivity", "utilities", "lifestyle", "medical",
    "parenting", "events", "auto", "art",
]

CLASS_NAME_VOCAB = ["TextView", "Button", "ImageView"]

_ROLE_CLASS = {"title": "TextView", "button": "Button", "decor": "ImageView"}
_ROLE_NOUN = {"title": "header", "button": "button", "decor": "icon"}
_ROLE_RID = {"title": "title", "button": "btn", "decor": "img"}

HOME_FUNCTION = 0  # reserved for root-screen subjects, never a button label


class GenerationError(ValueError):
    """Config cannot be satisfied by the generator."""


@dataclass(frozen=True)
class GeneratorConfig:
    n_apps: int = 200
    traces_per_app: int = 30
    screens_min: int = 8
    screens_max: int = 12
    slots_min: int = 1          # grid slots below the title, each a button or decor
    slots_max: int = 3
    max_buttons: int = 3        # per-screen cap on clickable components
    chain_bias: float = 0.75    # probability a new screen attaches to the previous one
    dead_button_prob: float = 0.6
    noise_eta: float = 0.3      # probability a component's text fields are blanked
    max_trace_len: int = 9
    n_functions: int = 32
    n_icon_classes: int = 32
    n_app_types: int = 27
    screen_w: int = 360
    screen_h: int = 640
    referring_per_screen: int = 3
    format_version: int = FORMAT_VERSION

    def validate(self) -> None:
        if self.screens_min < 2 or self.screens_max < self.screens_min:
            raise GenerationError("need at least 2 screens per app")
        if self.slots_min < 1 or self.slots_max < self.slots_min or self.slots_max > 4:
            raise GenerationError("slots per screen must be within 1..4")
        if self.max_buttons < 1:
            # screens >= 2 implies at least one edge, which needs a clickable component
            raise GenerationError("need at least one clickable component to place edges")
        if self.max_buttons > self.slots_max:
            raise GenerationError("max_buttons cannot exceed slots_max")
        if not 2 <= self.n_functions <= len(FUNCTION_WORDS):
            raise GenerationError(f"n_functions must be in 2..{len(FUNCTION_WORDS)}")
        if self.n_icon_classes < self.n_functions:
            raise GenerationError("need an icon class per function label")
        if not 1 <= self.n_app_types <= len(APP_TYPE_WORDS):
            raise GenerationError(f"n_app_types must be in 1..{len(APP_TYPE_WORDS)}")
        if self.screens_max - 1 > self.n_functions - 1:
            raise GenerationError("not enough function labels for distinct screen subjects")
        if not 0.0 <= self.noise_eta <= 1.0:
            raise GenerationError("noise_eta must be a probability")
        if self.max_trace_len < 2:
            raise GenerationError("max_trace_len must be >= 2")
        if self.screen_w < 64 or self.screen_h < 240:
            raise GenerationError("screen too small for the component grid")


@dataclass(frozen=True)
class ComponentSpec:
    role: str                   # title | button | decor
    function: int               # index into FUNCTION_WORDS
    icon_class: int
    bounds: BoundingBox
    clickable: bool
    content_desc: str
    text: str
    resource_id: str
    class_name: str


@dataclass(frozen=True)
class Edge:
    screen: int
    component: int              # leaf index on the source screen
    target: int


@dataclass
class ScreenSpec:
    screen_id: str
    subject: int
    width: int
    height: int
    n_icon_classes: int
    bg_rgb: tuple[int, int, int]
    components: list[ComponentSpec]


@dataclass
class AppSpec:
    app_id: str
    app_name: str
    app_type: int
    screens: list[ScreenSpec]
    edges: list[Edge]

    def edges_from(self, screen_index: int) -> list[Edge]:
        return [e for e in self.edges if e.screen == screen_index]


@dataclass(frozen=True)
class SimilarPair:
    ui_a: str
    comp_a: int
    ui_b: str
    comp_b: int
    function: int


@dataclass(frozen=True)
class ReferringExample:
    screen_id: str
    expression: str
    target: int


@dataclass
class DownstreamLabels:
    icon: dict[str, list[int]] = field(default_factory=dict)       # screen_id -> per-leaf class
    app_type: dict[str, int] = field(default_factory=dict)         # app_id -> type index
    similar_pairs: list[SimilarPair] = field(default_factory=list)
    referring: list[ReferringExample] = field(default_factory=list)


@dataclass
class AppData:
    spec: AppSpec
    labels: DownstreamLabels
    screens: dict[str, Screen]
    traces: list[Trace] = field(default_factory=list)


@dataclass
class CorpusData:
    config: GeneratorConfig
    seed: int
    apps: list[AppData]

    def all_screens(self) -> dict[str, Screen]:
        out: dict[str, Screen] = {}
        for app in self.apps:
            out.update(app.screens)
        return out

    def all_traces(self) -> list[Trace]:
        return [t for app in self.apps for t in app.traces]

    def merged_labels(self) -> DownstreamLabels:
        merged = DownstreamLabels()
        for app in self.apps:
            merged.icon.update(app.labels.icon)
            merged.app_type.update(app.labels.app_type)
            merged.similar_pairs.extend(app.labels.similar_pairs)
            merged.referring.extend(app.labels.referring)
        return merged


def phrase_variants(function: int) -> tuple[str, str, str]:
    w = FUNCTION_WORDS[function]
    return (w, f"open {w}", f"{w} section")


def _slot_bounds(cfg: GeneratorConfig, slot: int) -> BoundingBox:
    y0 = 96 + slot * 132
    return BoundingBox(24, y0, cfg.screen_w - 24, y0 + 112)


def _title_bounds(cfg: GeneratorConfig) -> BoundingBox:
    return BoundingBox(20, 18, cfg.screen_w - 20, 70)


def _component(
    cfg: GeneratorConfig,
    role: str,
    function: int,
    bounds: BoundingBox,
    g: np.random.Generator,
    app_name: str,
    type_word: str,
) -> ComponentSpec:
    word = FUNCTION_WORDS[function]
    variants = phrase_variants(function)
    content_desc = variants[int(g.integers(0, len(variants)))]
    if role == "title":
        text = f"{app_name} {type_word}"
    elif role == "button":
        text = variants[int(g.integers(0, len(variants)))]
    else:
        text = ""
    resource_id = f"{_ROLE_RID[role]}_{word}"
    if g.random() < cfg.noise_eta:
        content_desc, text, resource_id = "", "", ""
    return ComponentSpec(
        role=role,
        function=function,
        icon_class=function,  # labels map 1:1 onto icon classes
        bounds=bounds,
        clickable=role == "button",
        content_desc=content_desc,
        text=text,
        resource_id=resource_id,
        class_name=_ROLE_CLASS[role],
    )


def generate_app(cfg: GeneratorConfig, seed: int, app_index: int = 0) -> tuple[AppSpec, DownstreamLabels]:
    """Build one app (screen tree, components, edges) plus its task labels.

    Deterministic in (cfg, seed, app_index); every random draw comes from a
    stream keyed by those plus the entity being generated.
    """
    cfg.validate()
    app_id = f"app{app_index:04d}"
    g_app = rng.stream(seed, "app", app_index)
    app_type = int(g_app.integers(0, cfg.n_app_types))
    type_word = APP_TYPE_WORDS[app_type]
    app_name = f"{type_word}app{app_index:04d}"
    n_screens = int(g_app.integers(cfg.screens_min, cfg.screens_max + 1))

    # Screen tree: parents biased toward the previous screen to get deep walks.
    parents: list[Optional[int]] = [None]
    child_count = [0] * n_screens
    for k in range(1, n_screens):
        eligible = [p for p in range(k) if child_count[p] < cfg.max_buttons]
        if not eligible:
            raise GenerationError("ran out of clickable capacity while wiring screens")
        if k - 1 in eligible and g_app.random() < cfg.chain_bias:
            parent = k - 1
        else:
            parent = int(eligible[g_app.integers(0, len(eligible))])
        parents.append(parent)
        child_count[parent] += 1

    # Distinct subject label per non-root screen; root is "home".
    subject_pool = list(range(1, cfg.n_functions))
    g_app.shuffle(subject_pool)
    subjects = [HOME_FUNCTION] + subject_pool[: n_screens - 1]
    free_functions = [f for f in range(1, cfg.n_functions) if f not in subjects]

    children: list[list[int]] = [[] for _ in range(n_screens)]
    for k in range(1, n_screens):
        children[parents[k]].append(k)  # type: ignore[index]

    screens: list[ScreenSpec] = []
    edges: list[Edge] = []
    # hue stays inside the app type's sector; the per-app offset tells apps apart
    hue_offset = int(g_app.integers(0, 16)) / 16
    bg_rgb = hsv_to_rgb8((app_type + 0.3 + 0.4 * hue_offset) / cfg.n_app_types, 0.12, 0.96)

    for k in range(n_screens):
        g_s = rng.stream(seed, "screen", app_index, k)
        n_children = len(children[k])
        n_slots = max(int(g_s.integers(cfg.slots_min, cfg.slots_max + 1)), n_children)
        n_slots = min(n_slots, 4)
        # slot roles: each child needs a live button; the rest are distractors
        slot_plan: list[tuple[str, int]] = [("child", c) for c in children[k]]
        pool = [f for f in free_functions if f != subjects[k]]
        g_s.shuffle(pool)
        n_buttons = n_children
        for _ in range(n_slots - n_children):
            if not pool:
                break
            f = pool.pop()
            if n_buttons < cfg.max_buttons and g_s.random() < cfg.dead_button_prob:
                slot_plan.append(("dead", f))
                n_buttons += 1
            else:
                slot_plan.append(("decor", f))
        g_s.shuffle(slot_plan)  # type: ignore[arg-type]

        comps = [
            _component(cfg, "title", subjects[k], _title_bounds(cfg), g_s, app_name, type_word)
        ]
        for slot, (kind, payload) in enumerate(slot_plan):
            bounds = _slot_bounds(cfg, slot)
            if kind == "child":
                comp_index = len(comps)
                comps.append(
                    _component(cfg, "button", subjects[payload], bounds, g_s, app_name, type_word)
                )
                edges.append(Edge(screen=k, component=comp_index, target=payload))
            elif kind == "dead":
                comps.append(_component(cfg, "button", payload, bounds, g_s, app_name, type_word))
            else:
                comps.append(_component(cfg, "decor", payload, bounds, g_s, app_name, type_word))
        screens.append(
            ScreenSpec(
                screen_id=f"{app_id}/s{k:02d}",
                subject=subjects[k],
                width=cfg.screen_w,
                height=cfg.screen_h,
                n_icon_classes=cfg.n_icon_classes,
                bg_rgb=bg_rgb,
                components=comps,
            )
        )

    spec = AppSpec(app_id=app_id, app_name=app_name, app_type=app_type, screens=screens, edges=edges)
    labels = _build_labels(cfg, seed, app_index, spec)
    return spec, labels


def _build_labels(cfg: GeneratorConfig, seed: int, app_index: int, spec: AppSpec) -> DownstreamLabels:
    labels = DownstreamLabels()
    labels.app_type[spec.app_id] = spec.app_type
    for s in spec.screens:
        labels.icon[s.screen_id] = [c.icon_class for c in s.components]
    # one similar-component pair per edge: the link button and the title it reveals
    for e in spec.edges:
        labels.similar_pairs.append(
            SimilarPair(
                ui_a=spec.screens[e.screen].screen_id,
                comp_a=e.component,
                ui_b=spec.screens[e.target].screen_id,
                comp_b=0,
                function=spec.screens[e.target].subject,
            )
        )
    for k, s in enumerate(spec.screens):
        g_r = rng.stream(seed, "referring", app_index, k)
        order = list(range(len(s.components)))
        g_r.shuffle(order)
        made = 0
        for target in order:
            if made >= cfg.referring_per_screen:
                break
            expr = _make_expression(s, target, g_r)
            if expr is None:
                continue
            labels.referring.append(ReferringExample(s.screen_id, expr, target))
            made += 1
    return labels


_TEMPLATES = (
    "click the {np}",
    "tap the {np}",
    "select the {np}",
    "click the {np} at the {loc}",
    "tap the {np} at the {loc}",
)


def _location_word(bounds: BoundingBox, height: int) -> str:
    yc = (bounds.y_min + bounds.y_max) / 2
    if yc < height / 3:
        return "top"
    if yc < 2 * height / 3:
        return "middle"
    return "bottom"


def _make_expression(screen: ScreenSpec, target: int, g: np.random.Generator) -> Optional[str]:
    comp = screen.components[target]
    np_phrase = f"{FUNCTION_WORDS[comp.function]} {_ROLE_NOUN[comp.role]}"
    template = _TEMPLATES[int(g.integers(0, len(_TEMPLATES)))]
    expr = template.format(np=np_phrase, loc=_location_word(comp.bounds, screen.height))
    matches = resolve_referring_expression(expr, screen)
    if matches != [target]:
        return None
    return expr


def resolve_referring_expression(expression: str, screen: ScreenSpec) -> list[int]:
    """Grammar-inverse oracle: indices of components the expression denotes.

    A component matches when its function word, role noun, and (if stated)
    on-screen location all appear in the expression.
    """
    tokens = expression.split()
    loc = None
    if "at" in tokens:
        loc = tokens[-1]
    matches = []
    for i, comp in enumerate(screen.components):
        word = FUNCTION_WORDS[comp.function]
        noun = _ROLE_NOUN[comp.role]
        if word not in tokens or noun not in tokens:
            continue
        if loc is not None and _location_word(comp.bounds, screen.height) != loc:
            continue
        matches.append(i)
    return matches


def build_screen(spec: ScreenSpec, app_id: str) -> Screen:
    """Materialize a screen spec: VH tree plus rendered raster."""
    leaves = [
        Node(
            class_name=c.class_name,
            bounds=c.bounds,
            content_desc=c.content_desc,
            text=c.text,
            resource_id=c.resource_id,
            clickable=c.clickable,
        )
        for c in spec.components
    ]
    root = Node(
        class_name="Screen",
        bounds=BoundingBox(0, 0, spec.width, spec.height),
        children=list(leaves),
    )
    return Screen(
        screen_id=spec.screen_id,
        app_id=app_id,
        width=spec.width,
        height=spec.height,
        vh=ViewHierarchy(root=root, leaves=leaves),
        raster=render_screen(spec),
    )


def simulate_trace(app: AppData, seed: int, max_len: int, trace_index: int = 0) -> Trace:
    """Random walk down the app tree, recording a click inside each link.

    Every recorded action replays: hit_test on the source screen's leaves
    recovers exactly the edge's component index.
    """
    if max_len < 2:
        raise GenerationError("max_len must be >= 2")
    spec = app.spec
    outgoing: dict[int, list[Edge]] = {}
    for e in spec.edges:
        outgoing.setdefault(e.screen, []).append(e)
    if not outgoing.get(0):
        raise GenerationError(f"{spec.app_id}: root screen has no outgoing edges")
    g = rng.stream(seed, "trace", spec.app_id, trace_index)
    path = [0]
    clicks: list[tuple[int, Edge]] = []
    current = 0
    while len(path) < max_len:
        edges = outgoing.get(current)
        if not edges:
            break
        e = edges[int(g.integers(0, len(edges)))]
        clicks.append((current, e))
        path.append(e.target)
        current = e.target

    screens = [app.screens[spec.screens[k].screen_id] for k in path]
    actions = []
    for (k, e), src in zip(clicks, screens):
        b = spec.screens[k].components[e.component].bounds
        x = int(g.integers(b.x_min + 1, b.x_max - 1))
        y = int(g.integers(b.y_min + 1, b.y_max - 1))
        if hit_test(src.vh.leaves, x, y) != e.component:
            raise GenerationError(f"{spec.app_id}: click replay failed on screen {k}")
        actions.append(Action(x=x, y=y))
    trace_id = f"{spec.app_id}/t{trace_index:03d}"
    return Trace(trace_id=trace_id, app_id=spec.app_id, screens=screens, actions=actions)


def generate_corpus(cfg: GeneratorConfig, seed: int) -> CorpusData:
    """Generate the full corpus: apps, rendered screens, traces, labels."""
    cfg.validate()
    apps: list[AppData] = []
    for i in range(cfg.n_apps):
        spec, labels = generate_app(cfg, seed, i)
        screens = {s.screen_id: build_screen(s, spec.app_id) for s in spec.screens}
        app = AppData(spec=spec, labels=labels, screens=screens)
        for j in range(cfg.traces_per_app):
            app.traces.append(simulate_trace(app, seed, cfg.max_trace_len, trace_index=j))
        apps.append(app)
        if (i + 1) % 50 == 0:
            logger.info("generated %d/%d apps", i + 1, cfg.n_apps)
    return CorpusData(config=cfg, seed=seed, apps=apps)
