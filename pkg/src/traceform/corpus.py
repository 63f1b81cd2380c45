"""Corpus serialization: manifest, per-trace JSONL files, PNG rasters.

Layout under the corpus root:

    manifest.json                     config, seed, vocabularies, trace index
    labels.json                       downstream task labels
    apps/<app_id>/spec.json           app spec (screens, components, edges)
    apps/<app_id>/screens.jsonl       one record per distinct screen
    apps/<app_id>/screens/<sid>.png   rasters, shared by all traces
    traces/<app_id>/<tid>.jsonl       one file per trace; line = screen record
                                      (inline VH, raster reference, action)

Screens are deduplicated on load: every trace row resolves to the single
Screen object of its app, with rasters decoded lazily.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
from pathlib import Path

import numpy as np
from PIL import Image

from .synth import (
    APP_TYPE_WORDS,
    CLASS_NAME_VOCAB,
    FUNCTION_WORDS,
    AppData,
    AppSpec,
    ComponentSpec,
    CorpusData,
    DownstreamLabels,
    Edge,
    GeneratorConfig,
    ReferringExample,
    ScreenSpec,
    SimilarPair,
)
from .vh import Action, BoundingBox, Screen, Trace, node_to_obj, parse_vh

logger = logging.getLogger(__name__)


class CorpusFormatError(ValueError):
    pass


def _dump_json(obj, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, sort_keys=True, separators=(",", ":")) + "\n")


def _spec_to_obj(spec: AppSpec) -> dict:
    return {
        "app_id": spec.app_id,
        "app_name": spec.app_name,
        "app_type": spec.app_type,
        "screens": [
            {
                "screen_id": s.screen_id,
                "subject": s.subject,
                "width": s.width,
                "height": s.height,
                "n_icon_classes": s.n_icon_classes,
                "bg_rgb": list(s.bg_rgb),
                "components": [
                    {
                        "role": c.role,
                        "function": c.function,
                        "icon_class": c.icon_class,
                        "bounds": c.bounds.as_list(),
                        "clickable": c.clickable,
                        "content_desc": c.content_desc,
                        "text": c.text,
                        "resource_id": c.resource_id,
                        "class_name": c.class_name,
                    }
                    for c in s.components
                ],
            }
            for s in spec.screens
        ],
        "edges": [[e.screen, e.component, e.target] for e in spec.edges],
    }


def _spec_from_obj(obj: dict) -> AppSpec:
    screens = [
        ScreenSpec(
            screen_id=s["screen_id"],
            subject=s["subject"],
            width=s["width"],
            height=s["height"],
            n_icon_classes=s["n_icon_classes"],
            bg_rgb=tuple(s["bg_rgb"]),
            components=[
                ComponentSpec(
                    role=c["role"],
                    function=c["function"],
                    icon_class=c["icon_class"],
                    bounds=BoundingBox(*c["bounds"]),
                    clickable=c["clickable"],
                    content_desc=c["content_desc"],
                    text=c["text"],
                    resource_id=c["resource_id"],
                    class_name=c["class_name"],
                )
                for c in s["components"]
            ],
        )
        for s in obj["screens"]
    ]
    edges = [Edge(*e) for e in obj["edges"]]
    return AppSpec(
        app_id=obj["app_id"],
        app_name=obj["app_name"],
        app_type=obj["app_type"],
        screens=screens,
        edges=edges,
    )


def _labels_to_obj(labels: DownstreamLabels) -> dict:
    return {
        "icon": labels.icon,
        "app_type": labels.app_type,
        "similar_pairs": [
            [p.ui_a, p.comp_a, p.ui_b, p.comp_b, p.function] for p in labels.similar_pairs
        ],
        "referring": [[r.screen_id, r.expression, r.target] for r in labels.referring],
    }


def _labels_from_obj(obj: dict) -> DownstreamLabels:
    return DownstreamLabels(
        icon={k: list(v) for k, v in obj["icon"].items()},
        app_type=dict(obj["app_type"]),
        similar_pairs=[SimilarPair(*row) for row in obj["similar_pairs"]],
        referring=[ReferringExample(*row) for row in obj["referring"]],
    )


def _screen_rel_raster(screen_id: str) -> str:
    app_id, sid = screen_id.split("/")
    return f"apps/{app_id}/screens/{sid}.png"


def _screen_record(screen: Screen, action) -> dict:
    rec = {
        "screen_id": screen.screen_id,
        "app_id": screen.app_id,
        "width": screen.width,
        "height": screen.height,
        "vh": node_to_obj(screen.vh.root),
        "raster": _screen_rel_raster(screen.screen_id),
    }
    rec["action"] = {"x": action.x, "y": action.y} if action is not None else None
    return rec


def write_corpus(corpus: CorpusData, out_dir: str | Path) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    trace_index: dict[str, str] = {}
    for app in corpus.apps:
        app_id = app.spec.app_id
        _dump_json(
            {"spec": _spec_to_obj(app.spec), "labels": _labels_to_obj(app.labels)},
            out / "apps" / app_id / "spec.json",
        )
        screens_path = out / "apps" / app_id / "screens.jsonl"
        screens_path.parent.mkdir(parents=True, exist_ok=True)
        with screens_path.open("w") as f:
            for sid in sorted(app.screens):
                screen = app.screens[sid]
                f.write(json.dumps(_screen_record(screen, None), sort_keys=True) + "\n")
                png_path = out / _screen_rel_raster(sid)
                png_path.parent.mkdir(parents=True, exist_ok=True)
                Image.fromarray(screen.raster, mode="RGB").save(png_path, format="PNG")
        for trace in app.traces:
            rel = f"traces/{app_id}/{trace.trace_id.split('/')[1]}.jsonl"
            trace_index[trace.trace_id] = rel
            tpath = out / rel
            tpath.parent.mkdir(parents=True, exist_ok=True)
            with tpath.open("w") as f:
                for i, screen in enumerate(trace.screens):
                    action = trace.actions[i] if i < len(trace.actions) else None
                    f.write(json.dumps(_screen_record(screen, action), sort_keys=True) + "\n")

    manifest = {
        "format_version": corpus.config.format_version,
        "kind": "traceform-corpus",
        "seed": corpus.seed,
        "config": dataclasses.asdict(corpus.config),
        "vocab": {
            "functions": FUNCTION_WORDS[: corpus.config.n_functions],
            "icon_classes": FUNCTION_WORDS[: corpus.config.n_icon_classes],
            "app_types": APP_TYPE_WORDS[: corpus.config.n_app_types],
            "class_names": CLASS_NAME_VOCAB,
        },
        "apps": [app.spec.app_id for app in corpus.apps],
        "traces": dict(sorted(trace_index.items())),
        "counts": {
            "apps": len(corpus.apps),
            "screens": sum(len(a.screens) for a in corpus.apps),
            "traces": sum(len(a.traces) for a in corpus.apps),
            "ui_instances": sum(len(t.screens) for a in corpus.apps for t in a.traces),
        },
    }
    _dump_json(manifest, out / "manifest.json")
    _dump_json(_labels_to_obj(corpus.merged_labels()), out / "labels.json")
    logger.info("wrote corpus to %s (%s)", out, manifest["counts"])


def load_corpus(corpus_dir: str | Path) -> CorpusData:
    """Load a corpus with lazy rasters. Screens are shared across traces."""
    root = Path(corpus_dir)
    manifest_path = root / "manifest.json"
    if not manifest_path.exists():
        raise CorpusFormatError(f"no manifest.json under {root}")
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("kind") != "traceform-corpus":
        raise CorpusFormatError(f"{manifest_path} is not a corpus manifest")
    if manifest.get("format_version") != GeneratorConfig().format_version:
        raise CorpusFormatError(
            f"corpus format version {manifest.get('format_version')} unsupported"
        )
    cfg = GeneratorConfig(**manifest["config"])

    apps: list[AppData] = []
    for app_id in manifest["apps"]:
        spec_obj = json.loads((root / "apps" / app_id / "spec.json").read_text())
        spec = _spec_from_obj(spec_obj["spec"])
        labels = _labels_from_obj(spec_obj["labels"])
        screens: dict[str, Screen] = {}
        with (root / "apps" / app_id / "screens.jsonl").open() as f:
            for line in f:
                rec = json.loads(line)
                vh = parse_vh(json.dumps(rec["vh"]).encode())
                screens[rec["screen_id"]] = Screen(
                    screen_id=rec["screen_id"],
                    app_id=rec["app_id"],
                    width=rec["width"],
                    height=rec["height"],
                    vh=vh,
                    raster=None,
                    raster_path=str(root / rec["raster"]),
                )
        apps.append(AppData(spec=spec, labels=labels, screens=screens))

    by_app = {a.spec.app_id: a for a in apps}
    for trace_id, rel in manifest["traces"].items():
        app_id = trace_id.split("/")[0]
        app = by_app[app_id]
        tr_screens: list[Screen] = []
        actions: list[Action] = []
        with (root / rel).open() as f:
            for line in f:
                rec = json.loads(line)
                tr_screens.append(app.screens[rec["screen_id"]])
                if rec["action"] is not None:
                    actions.append(Action(x=rec["action"]["x"], y=rec["action"]["y"]))
        app.traces.append(
            Trace(trace_id=trace_id, app_id=app_id, screens=tr_screens, actions=actions)
        )
    return CorpusData(config=cfg, seed=manifest["seed"], apps=apps)


def get_raster(screen: Screen) -> np.ndarray:
    """Screen raster, decoding and caching from disk on first use."""
    if screen.raster is None:
        if screen.raster_path is None:
            raise CorpusFormatError(f"screen {screen.screen_id} has no raster")
        screen.raster = np.asarray(Image.open(screen.raster_path).convert("RGB"))
    return screen.raster


def file_sha256(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def tree_checksum(root: str | Path) -> str:
    """Order-independent digest of every file under a directory."""
    root = Path(root)
    h = hashlib.sha256()
    for path in sorted(p for p in root.rglob("*") if p.is_file()):
        h.update(str(path.relative_to(root)).encode())
        h.update(b"\0")
        h.update(bytes.fromhex(file_sha256(path)))
    return h.hexdigest()
