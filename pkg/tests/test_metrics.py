import pytest
from hypothesis import given
from hypothesis import strategies as st

from avcil.metrics import AccuracyMatrix, MetricError, avg_accuracy, forgetting, task_forgetting


def test_hand_oracle_two_tasks():
    A = AccuracyMatrix([[0.9], [0.7, 0.8]])
    assert avg_accuracy(A, 1) == 0.9
    assert avg_accuracy(A, 2) == 0.75
    assert task_forgetting(A, 2, 1) == 0.2
    assert forgetting(A, 2) == 0.2


def test_set_builds_rows_and_one_based_access():
    A = AccuracyMatrix()
    A.set(1, 1, 0.9)
    A.set(2, 2, 0.8)
    A.set(2, 1, 0.7)
    assert A.a(2, 1) == 0.7 and A.to_list() == [[0.9], [0.7, 0.8]]


def test_forgetting_uses_best_earlier_accuracy():
    A = AccuracyMatrix([[0.5], [0.9, 0.6], [0.4, 0.6, 1.0]])
    # task 1 peaked at 0.9, task 2 never dropped
    assert forgetting(A, 3) == 0.25


@pytest.mark.parametrize(
    "action",
    [
        lambda: AccuracyMatrix([[0.5, 0.5]]),
        lambda: AccuracyMatrix([[1.5]]),
        lambda: AccuracyMatrix().set(1, 2, 0.5),
        lambda: AccuracyMatrix().set(1, 0, 0.5),
        lambda: forgetting(AccuracyMatrix([[0.5]]), 1),
        lambda: avg_accuracy(AccuracyMatrix([[0.5], [0.4]]), 2),
        lambda: forgetting(AccuracyMatrix([[0.5], [0.4]]), 2),
        lambda: task_forgetting(AccuracyMatrix([[0.5], [0.4, 0.3]]), 2, 2),
        lambda: AccuracyMatrix([[0.5]]).a(2, 1),
    ],
)
def test_invalid_inputs_raise(action):
    with pytest.raises(MetricError):
        action()


acc = st.floats(0, 1)


@given(st.lists(acc, min_size=3, max_size=3), acc, acc)
def test_forgetting_non_positive_when_nothing_drops(first, x, y):
    a11 = min(first[0], x)
    A = AccuracyMatrix([[a11], [max(a11, x), y], [max(a11, x, first[1]), max(y, first[2]), 0.5]])
    assert forgetting(A, 3) <= 0


@given(st.lists(acc, min_size=1, max_size=6))
def test_avg_accuracy_within_bounds(row):
    k = len(row)
    A = AccuracyMatrix([[0.0] * i for i in range(1, k)] + [row])
    v = avg_accuracy(A, k)
    assert min(row) <= v <= max(row)
