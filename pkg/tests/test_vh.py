import json

import numpy as np
import pytest

from traceform.vh import (
    BoundingBox,
    Node,
    ParseError,
    ValidationError,
    extract_leaves,
    hit_test,
    leaf_sentence,
    parse_vh,
    positional_features,
    serialize_vh,
)


def leaf_obj(class_name="Button", bounds=(0, 0, 10, 10), **kw):
    obj = {"class": class_name, "bounds": list(bounds)}
    obj.update(kw)
    return obj


def test_parse_single_leaf_preserves_fields():
    doc = json.dumps(
        leaf_obj(
            class_name="Button",
            bounds=(1, 2, 30, 40),
            content_desc="check in",
            text="Check In",
            resource_id="btn_ci",
            clickable=True,
        )
    ).encode()
    vh = parse_vh(doc)
    assert len(vh.leaves) == 1
    leaf = vh.leaves[0]
    assert leaf.content_desc == "check in"
    assert leaf.text == "Check In"
    assert leaf.resource_id == "btn_ci"
    assert leaf.class_name == "Button"
    assert leaf.bounds == BoundingBox(1, 2, 30, 40)
    assert leaf.clickable is True


def test_parse_rejects_degenerate_box():
    doc = json.dumps(leaf_obj(bounds=(5, 0, 5, 10))).encode()
    with pytest.raises(ValidationError, match="degenerate"):
        parse_vh(doc)


def test_parse_rejects_unknown_keys_and_names_node():
    doc = json.dumps(
        {
            "class": "Layout",
            "bounds": [0, 0, 10, 10],
            "children": [leaf_obj(wat=1)],
        }
    ).encode()
    with pytest.raises(ValidationError) as ei:
        parse_vh(doc)
    assert ei.value.node_path == "root.children[0]"


def test_parse_malformed_reports_byte_offset():
    with pytest.raises(ParseError) as ei:
        parse_vh(b'{"class": "A", ')
    assert ei.value.offset > 0


def test_preorder_leaves_three_level_tree():
    # Hand-walked pre-order of a 3-level tree with 5 leaves:
    #   root -> [leaf a, mid1 -> [leaf b, mid2 -> [leaf c, leaf d]], leaf e]
    doc = {
        "class": "Root",
        "bounds": [0, 0, 100, 100],
        "children": [
            leaf_obj("A", (0, 0, 10, 10), resource_id="a"),
            {
                "class": "Mid1",
                "bounds": [0, 0, 100, 50],
                "children": [
                    leaf_obj("B", (0, 0, 10, 20), resource_id="b"),
                    {
                        "class": "Mid2",
                        "bounds": [10, 10, 90, 40],
                        "children": [
                            leaf_obj("C", (10, 10, 20, 20), resource_id="c"),
                            leaf_obj("D", (20, 20, 30, 30), resource_id="d"),
                        ],
                    },
                ],
            },
            leaf_obj("E", (50, 50, 60, 60), resource_id="e"),
        ],
    }
    vh = parse_vh(json.dumps(doc).encode())
    assert [l.resource_id for l in vh.leaves] == ["a", "b", "c", "d", "e"]
    assert [l.resource_id for l in extract_leaves(vh)] == ["a", "b", "c", "d", "e"]
    # stable across repeated calls
    assert extract_leaves(vh) == extract_leaves(vh)


def test_roundtrip_identity_on_leaves():
    doc = {
        "class": "Root",
        "bounds": [0, 0, 100, 100],
        "children": [
            leaf_obj("A", (0, 0, 10, 10), text="x y", clickable=True),
            leaf_obj("B", (10, 0, 20, 10), content_desc="hello"),
        ],
    }
    vh1 = parse_vh(json.dumps(doc).encode())
    vh2 = parse_vh(serialize_vh(vh1))
    assert vh1.leaves == vh2.leaves


def test_leaf_sentence_order_and_skipping():
    mk = lambda cd, rid, cls, txt: Node(
        class_name=cls,
        bounds=BoundingBox(0, 0, 1, 1),
        content_desc=cd,
        resource_id=rid,
        text=txt,
    )
    assert leaf_sentence(mk("check in", "btn_ci", "Button", "")) == "check in btn_ci Button"
    assert leaf_sentence(mk("", "", "ImageView", "")) == "ImageView"
    assert leaf_sentence(mk("a", "b", "C", "d")) == "a b C d"


def test_leaf_sentence_never_doubles_spaces():
    rng = np.random.default_rng(0)
    words = ["", "alpha", "beta gamma", "x"]
    for _ in range(200):
        cd, rid, txt = rng.choice(words, size=3)
        s = leaf_sentence(
            Node(class_name="Cls", bounds=BoundingBox(0, 0, 1, 1),
                 content_desc=str(cd), resource_id=str(rid), text=str(txt))
        )
        assert "  " not in s
        assert s == s.strip()


def test_positional_features_full_screen():
    feats = positional_features(BoundingBox(0, 0, 640, 480), 640, 480)
    assert feats == (0.0, 0.0, 1.0, 1.0, 0.5, 0.5, 1.0, 1.0, 1.0)


def test_positional_features_derived_case():
    # screen 100x200, box (10,20)-(30,60): direct arithmetic on the nine definitions
    feats = positional_features(BoundingBox(10, 20, 30, 60), 100, 200)
    expected = (0.1, 0.1, 0.3, 0.3, 0.2, 0.2, 0.2, 0.2, 0.04)
    assert feats == pytest.approx(expected, abs=1e-12)


def test_positional_features_zero_dimension_errors():
    with pytest.raises(ValueError):
        positional_features(BoundingBox(0, 0, 1, 1), 0, 100)


def test_positional_features_in_unit_range_and_area_consistent():
    rng = np.random.default_rng(7)
    for _ in range(500):
        w, h = int(rng.integers(2, 2000)), int(rng.integers(2, 2000))
        x0 = int(rng.integers(0, w - 1))
        y0 = int(rng.integers(0, h - 1))
        x1 = int(rng.integers(x0 + 1, w))
        y1 = int(rng.integers(y0 + 1, h))
        f = positional_features(BoundingBox(x0, y0, x1, y1), w, h)
        assert all(0.0 <= v <= 1.0 for v in f)
        assert abs(f[8] - f[6] * f[7]) < 1e-12


def _leaf(bounds, clickable=False):
    return Node(class_name="V", bounds=BoundingBox(*bounds), clickable=clickable)


def test_hit_test_single_and_outside():
    leaves = [_leaf((0, 0, 10, 10)), _leaf((20, 20, 30, 30))]
    assert hit_test(leaves, 5, 5) == 0
    assert hit_test(leaves, 25, 25) == 1
    assert hit_test(leaves, 15, 15) is None


def test_hit_test_nested_picks_smaller():
    outer = _leaf((0, 0, 100, 100))
    inner = _leaf((40, 40, 60, 60))
    assert hit_test([outer, inner], 50, 50) == 1
    assert hit_test([inner, outer], 50, 50) == 0


def test_hit_test_half_open_edges():
    a = _leaf((0, 0, 10, 10))
    b = _leaf((10, 0, 20, 10))
    assert hit_test([a, b], 10, 5) == 1
    assert hit_test([a, b], 9, 5) == 0
    assert hit_test([a, b], 20, 5) is None


def _hit_test_oracle(leaves, x, y):
    containing = [
        (l.bounds.area, i)
        for i, l in enumerate(leaves)
        if l.bounds.x_min <= x < l.bounds.x_max and l.bounds.y_min <= y < l.bounds.y_max
    ]
    if not containing:
        return None
    return min(containing)[1]


def test_hit_test_matches_exhaustive_oracle_on_random_screens():
    rng = np.random.default_rng(1234)
    for _ in range(1000):
        n = int(rng.integers(1, 12))
        leaves = []
        for _ in range(n):
            x0 = int(rng.integers(0, 90))
            y0 = int(rng.integers(0, 90))
            leaves.append(
                _leaf((x0, y0, x0 + int(rng.integers(1, 40)), y0 + int(rng.integers(1, 40))))
            )
        x, y = int(rng.integers(0, 130)), int(rng.integers(0, 130))
        assert hit_test(leaves, x, y) == _hit_test_oracle(leaves, x, y)
