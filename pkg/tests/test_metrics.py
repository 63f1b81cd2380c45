import pytest

from traceform.metrics import macro_f1, micro_accuracy, task_report


def test_micro_accuracy():
    assert micro_accuracy([1, 2, 3], [1, 2, 0]) == pytest.approx(2 / 3)
    assert micro_accuracy([1], [1]) == 1.0
    with pytest.raises(ValueError):
        micro_accuracy([], [])
    with pytest.raises(ValueError):
        micro_accuracy([1], [1, 2])


def test_macro_f1_hand_computed_three_class_fixture():
    # confusion: class0 P=2/3 R=2/3 F1=2/3; class1 P=2/3 R=1 F1=4/5; class2 F1=0
    y_true = [0, 0, 0, 1, 1, 2]
    y_pred = [0, 1, 0, 1, 1, 0]
    expected = (2 / 3 + 4 / 5 + 0.0) / 3
    assert macro_f1(y_true, y_pred) == pytest.approx(expected, abs=1e-9)


def test_macro_f1_perfect_and_explicit_labels():
    assert macro_f1([0, 1, 2], [0, 1, 2]) == 1.0
    # averaging over an absent class drags the mean down
    assert macro_f1([0, 0], [0, 0], labels=[0, 1]) == pytest.approx(0.5)


def test_task_report_shape():
    r = task_report(
        task="icon_cls",
        split="test",
        y_true=[1, 1, 0],
        y_pred=[1, 1, 1],
        chance_accuracy=0.25,
        init_mode="random",
        seed=3,
        with_macro_f1=True,
    )
    assert set(r) == {
        "task", "split", "micro_accuracy", "macro_f1",
        "n_examples", "chance_accuracy", "init_mode", "seed",
    }
    assert r["micro_accuracy"] == pytest.approx(2 / 3)
    assert r["n_examples"] == 3
    r2 = task_report("similar_component", "test", [0], [0], 0.3, "pretrained", 1, False)
    assert r2["macro_f1"] is None
