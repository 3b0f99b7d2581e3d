from __future__ import annotations

import math
from typing import Optional, Sequence

import pytest

from tsdebate.model import (
    Answer,
    AnswerSpace,
    TaskInstance,
    TaskType,
    TimeSeriesRecord,
)


def make_series(
    *channels: Sequence[Optional[float]],
    id: str = "s",
    names: Optional[Sequence[str]] = None,
    timestamps: Optional[Sequence[str]] = None,
    granularity: Optional[str] = None,
) -> TimeSeriesRecord:
    return TimeSeriesRecord.build(
        id=id,
        channels=list(channels),
        channel_names=names,
        timestamps=timestamps,
        granularity=granularity,
    )


def sinusoid(cycles: float, length: int, amplitude: float = 1.0) -> list[float]:
    return [amplitude * math.sin(2 * math.pi * cycles * t / length) for t in range(length)]


def make_instance(
    *,
    id: str = "inst-1",
    query: str = "Classify the overall trend of the series.",
    series: Optional[TimeSeriesRecord] = None,
    task_type: TaskType = TaskType.CLASSIFICATION,
    labels: Sequence[str] = ("increasing", "decreasing", "stable"),
    horizon: int = 0,
    context: Optional[str] = None,
    ground_truth: Optional[Answer] = None,
) -> TaskInstance:
    if series is None:
        series = make_series([float(i) for i in range(16)], id=f"{id}-series")
    if task_type in (TaskType.REGRESSION, TaskType.FORECASTING, TaskType.IMPUTATION):
        space = AnswerSpace.for_vector(horizon or 3)
    elif task_type == TaskType.MCQA:
        space = AnswerSpace.for_options(labels or ("A", "B", "C", "D"))
    elif task_type == TaskType.OPEN_QA:
        space = AnswerSpace.free_text()
    else:
        space = AnswerSpace.for_labels(labels)
    return TaskInstance(
        id=id,
        query=query,
        context=context,
        series=series,
        task_type=task_type,
        answer_space=space,
        ground_truth=ground_truth,
    )


@pytest.fixture
def ramp_series() -> TimeSeriesRecord:
    return make_series([float(i) for i in range(40)])
