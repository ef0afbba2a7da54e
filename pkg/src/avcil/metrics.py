"""Average accuracy and average forgetting over the incremental accuracy matrix.

Tasks are 1-indexed in the public API (``a(k, j)``, ``avg_accuracy(A, k)``);
storage is a 0-indexed list of rows where ``rows[k-1][j-1]`` is the accuracy
on task ``j`` after learning task ``k``.

Sums and differences are computed on the shortest decimal form of each
entry as exact fractions, so ``0.9 - 0.7`` yields ``0.2`` rather than the
binary-rounded ``0.20000000000000007``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction


def _q(v: float) -> Fraction:
    return Fraction(repr(float(v)))


class MetricError(ValueError):
    pass


@dataclass
class AccuracyMatrix:
    rows: list[list[float]] = field(default_factory=list)

    def __post_init__(self):
        for k, row in enumerate(self.rows, start=1):
            self._check_row(k, row)

    @staticmethod
    def _check_row(k: int, row):
        if len(row) > k:
            raise MetricError(f"row {k} has {len(row)} entries; only tasks 1..{k} exist")
        for v in row:
            if not 0.0 <= v <= 1.0:
                raise MetricError(f"accuracy {v} outside [0, 1]")

    @property
    def n_tasks(self) -> int:
        return len(self.rows)

    def set(self, k: int, j: int, value: float):
        if j > k or j < 1:
            raise MetricError(f"a[{k}][{j}] does not exist (need 1 <= j <= k)")
        while len(self.rows) < k:
            self.rows.append([])
        row = self.rows[k - 1]
        while len(row) < j:
            row.append(float("nan"))
        row[j - 1] = float(value)
        if not 0.0 <= row[j - 1] <= 1.0:
            raise MetricError(f"accuracy {value} outside [0, 1]")

    def a(self, k: int, j: int) -> float:
        try:
            v = self.rows[k - 1][j - 1]
        except IndexError:
            raise MetricError(f"a[{k}][{j}] is missing") from None
        if v != v:
            raise MetricError(f"a[{k}][{j}] is missing")
        return v

    def row_complete(self, k: int) -> bool:
        return k <= len(self.rows) and len(self.rows[k - 1]) == k and all(v == v for v in self.rows[k - 1])

    def to_list(self) -> list[list[float]]:
        return [list(r) for r in self.rows]


def avg_accuracy(A: AccuracyMatrix, k: int) -> float:
    """Mean accuracy over tasks ``1..k`` after learning task ``k``."""
    if k < 1 or not A.row_complete(k):
        raise MetricError(f"row {k} of the accuracy matrix is incomplete")
    return float(sum(_q(A.a(k, j)) for j in range(1, k + 1)) / k)


def task_forgetting(A: AccuracyMatrix, k: int, j: int) -> float:
    """Best earlier accuracy on task ``j`` (after tasks ``j..k-1``) minus its accuracy after ``k``."""
    if not 1 <= j < k:
        raise MetricError(f"forgetting of task {j} after task {k} needs 1 <= j < k")
    return float(_task_forgetting(A, k, j))


def _task_forgetting(A: AccuracyMatrix, k: int, j: int) -> Fraction:
    return max(_q(A.a(l, j)) for l in range(j, k)) - _q(A.a(k, j))


def forgetting(A: AccuracyMatrix, k: int) -> float:
    if k < 2:
        raise MetricError("forgetting is undefined before the second task")
    for l in range(1, k + 1):
        if not A.row_complete(l):
            raise MetricError(f"row {l} of the accuracy matrix is incomplete")
    return float(sum(_task_forgetting(A, k, j) for j in range(1, k)) / (k - 1))
