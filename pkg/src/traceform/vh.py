"""View-hierarchy data model: trees, screens, traces, and geometry.

A view hierarchy is a tree of nodes carrying four semantic string fields
(content description, text, resource id, class name) plus a bounding box
and a clickable flag. Only leaf nodes matter downstream; they are kept in
pre-order.

The on-disk node schema is JSON with exactly these keys:

    {"class": str, "bounds": [x_min, y_min, x_max, y_max],
     "content_desc": str, "text": str, "resource_id": str,
     "clickable": bool, "children": [...]}

"class" and "bounds" are required; the rest default to empty/false. A node
is a leaf iff "children" is absent or empty.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterator, Optional, Sequence


class ParseError(ValueError):
    """Malformed VH document. `offset` is the byte offset of the fault."""

    def __init__(self, message: str, offset: int = 0):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class ValidationError(ValueError):
    """Structurally valid document violating a VH invariant. Names the node."""

    def __init__(self, message: str, node_path: str):
        super().__init__(f"{message} (at {node_path})")
        self.node_path = node_path


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box in integer screen coordinates, exclusive max edges."""

    x_min: int
    y_min: int
    x_max: int
    y_max: int

    @property
    def width(self) -> int:
        return self.x_max - self.x_min

    @property
    def height(self) -> int:
        return self.y_max - self.y_min

    @property
    def area(self) -> int:
        return self.width * self.height

    def contains(self, x: int, y: int) -> bool:
        # Half-open on the max edges so adjacent boxes never both claim a point.
        return self.x_min <= x < self.x_max and self.y_min <= y < self.y_max

    def as_list(self) -> list[int]:
        return [self.x_min, self.y_min, self.x_max, self.y_max]


@dataclass
class Node:
    """One VH tree node. Leaf iff `children` is empty."""

    class_name: str
    bounds: BoundingBox
    content_desc: str = ""
    text: str = ""
    resource_id: str = ""
    clickable: bool = False
    children: list["Node"] = field(default_factory=list)

    @property
    def is_leaf(self) -> bool:
        return not self.children


@dataclass
class ViewHierarchy:
    """VH tree plus its leaf nodes in pre-order."""

    root: Node
    leaves: list[Node]


@dataclass
class Screen:
    """One UI state: id, dimensions, view hierarchy, and rendered raster."""

    screen_id: str
    app_id: str
    width: int
    height: int
    vh: ViewHierarchy
    raster: Optional["object"] = None  # HxWx3 uint8 ndarray when loaded
    raster_path: Optional[str] = None


@dataclass(frozen=True)
class Action:
    """A click at (x, y) on the source screen."""

    x: int
    y: int


@dataclass
class Trace:
    """Ordered screens of one interaction, linked by click actions.

    actions[i] is the click on screens[i] that led to screens[i+1], so
    len(actions) == len(screens) - 1.
    """

    trace_id: str
    app_id: str
    screens: list[Screen]
    actions: list[Action]


_NODE_KEYS = {"class", "bounds", "content_desc", "text", "resource_id", "clickable", "children"}


def _node_from_obj(obj: object, path: str) -> Node:
    if not isinstance(obj, dict):
        raise ValidationError("node must be a JSON object", path)
    unknown = set(obj) - _NODE_KEYS
    if unknown:
        raise ValidationError(f"unknown keys {sorted(unknown)}", path)
    if "class" not in obj or "bounds" not in obj:
        raise ValidationError("missing required key 'class' or 'bounds'", path)
    class_name = obj["class"]
    if not isinstance(class_name, str) or not class_name:
        raise ValidationError("'class' must be a non-empty string", path)
    bounds = obj["bounds"]
    if (
        not isinstance(bounds, list)
        or len(bounds) != 4
        or not all(isinstance(v, int) and not isinstance(v, bool) for v in bounds)
    ):
        raise ValidationError("'bounds' must be a list of 4 integers", path)
    box = BoundingBox(*bounds)
    if box.x_min >= box.x_max or box.y_min >= box.y_max:
        raise ValidationError(f"degenerate bounds {bounds}", path)

    def _str_field(key: str) -> str:
        v = obj.get(key, "")
        if not isinstance(v, str):
            raise ValidationError(f"'{key}' must be a string", path)
        return v

    clickable = obj.get("clickable", False)
    if not isinstance(clickable, bool):
        raise ValidationError("'clickable' must be a boolean", path)
    raw_children = obj.get("children", [])
    if not isinstance(raw_children, list):
        raise ValidationError("'children' must be a list", path)
    children = [
        _node_from_obj(c, f"{path}.children[{i}]") for i, c in enumerate(raw_children)
    ]
    return Node(
        class_name=class_name,
        bounds=box,
        content_desc=_str_field("content_desc"),
        text=_str_field("text"),
        resource_id=_str_field("resource_id"),
        clickable=clickable,
        children=children,
    )


def _preorder_leaves(node: Node) -> Iterator[Node]:
    if node.is_leaf:
        yield node
    else:
        for child in node.children:
            yield from _preorder_leaves(child)


def parse_vh(document: bytes) -> ViewHierarchy:
    """Parse a VH JSON document into a validated tree.

    Raises ParseError (with byte offset) for malformed input and
    ValidationError (naming the node) for invariant violations.
    """
    try:
        text = document.decode("utf-8")
    except UnicodeDecodeError as e:
        raise ParseError("invalid UTF-8", e.start) from e
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as e:
        # e.pos is a character offset; convert to bytes for the contract.
        raise ParseError(e.msg, len(text[: e.pos].encode("utf-8"))) from e
    root = _node_from_obj(obj, "root")
    return ViewHierarchy(root=root, leaves=list(_preorder_leaves(root)))


def node_to_obj(node: Node) -> dict:
    obj: dict = {
        "class": node.class_name,
        "bounds": node.bounds.as_list(),
        "content_desc": node.content_desc,
        "text": node.text,
        "resource_id": node.resource_id,
        "clickable": node.clickable,
    }
    if node.children:
        obj["children"] = [node_to_obj(c) for c in node.children]
    return obj


def serialize_vh(vh: ViewHierarchy) -> bytes:
    """Inverse of parse_vh. parse(serialize(vh)) preserves the leaf list."""
    return json.dumps(node_to_obj(vh.root), separators=(",", ":")).encode("utf-8")


def extract_leaves(vh: ViewHierarchy) -> list[Node]:
    """All leaf nodes in pre-order, unfiltered."""
    return list(vh.leaves)


def leaf_sentence(leaf: Node) -> str:
    """Join the four semantic fields into one space-separated sentence.

    Order: content description, resource id, class name, text. Empty fields
    are skipped, so the result never has doubled or trailing spaces.
    """
    parts = [leaf.content_desc, leaf.resource_id, leaf.class_name, leaf.text]
    return " ".join(p for p in parts if p)


def positional_features(
    box: BoundingBox, screen_w: int, screen_h: int
) -> tuple[float, ...]:
    """Nine geometric features, each normalized to [0, 1].

    (x_min/W, y_min/H, x_max/W, y_max/H, x_center/W, y_center/H,
     height/H, width/W, area) with area = (width/W) * (height/H).
    """
    if screen_w <= 0 or screen_h <= 0:
        raise ValueError(f"screen dimensions must be positive, got {screen_w}x{screen_h}")
    w = box.width / screen_w
    h = box.height / screen_h
    return (
        box.x_min / screen_w,
        box.y_min / screen_h,
        box.x_max / screen_w,
        box.y_max / screen_h,
        (box.x_min + box.x_max) / 2 / screen_w,
        (box.y_min + box.y_max) / 2 / screen_h,
        h,
        w,
        w * h,
    )


def hit_test(leaves: Sequence[Node], x: int, y: int) -> Optional[int]:
    """Index of the leaf a click at (x, y) lands on, or None.

    Among leaves whose bounds contain the point, picks the smallest area;
    ties go to the earliest pre-order index. Containment is half-open, and
    the clickable flag is advisory: any containing leaf qualifies.
    """
    best: Optional[int] = None
    best_area = None
    for i, leaf in enumerate(leaves):
        if leaf.bounds.contains(x, y):
            area = leaf.bounds.area
            if best_area is None or area < best_area:
                best, best_area = i, area
    return best
