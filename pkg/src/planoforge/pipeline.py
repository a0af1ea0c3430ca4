"""End-to-end helpers shared by the CLI, demos and acceptance checks."""

from __future__ import annotations

import time
from collections.abc import Sequence

from .corpus import Dataset
from .diffusion import DenoiserModel, NoiseSchedule, sample_fixtures, schedule_for
from .domain import Planogram, decode
from .evaluation import RevenueModel, RunReport, build_report


def evaluation_planograms(dataset: Dataset, count: int) -> list[Planogram]:
    """``count`` corpus planograms spread evenly over stores; their fixtures are the sampling targets."""
    pgs = dataset.planograms
    if count > len(pgs):
        raise ValueError(f"asked for {count} evaluation fixtures from a corpus of {len(pgs)}")
    stride = len(pgs) / count
    return [pgs[int(i * stride)] for i in range(count)]


def sample_for(
    model: DenoiserModel,
    dataset: Dataset,
    count: int,
    seed: int,
    schedule: NoiseSchedule | None = None,
    revenue_model: RevenueModel | None = None,
) -> tuple[list[Planogram], float]:
    """One sample per evaluation fixture plus the wall-clock seconds spent sampling."""
    targets = evaluation_planograms(dataset, count)
    start = time.perf_counter()
    xs = sample_fixtures(model, schedule or schedule_for(model), [pg.fixture for pg in targets], seed, revenue_model)
    out = [decode(x, dataset.catalog, pg.fixture, pg.store_id) for x, pg in zip(xs, targets)]
    return out, time.perf_counter() - start


def sampling_report(
    model: DenoiserModel,
    dataset: Dataset,
    count: int,
    seed: int,
    constraints: Sequence | None = None,
    revenue_model: RevenueModel | None = None,
) -> RunReport:
    samples, seconds = sample_for(model, dataset, count, seed, revenue_model=revenue_model)
    return build_report(
        samples,
        dataset.constraints if constraints is None else constraints,
        dataset.catalog,
        revenue_model,
        sampling_seconds=[seconds / max(count, 1)] * count,
    )
