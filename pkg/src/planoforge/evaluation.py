"""Expected revenue, shelf-space utilization, and aggregated run reports."""

from __future__ import annotations

import logging
import math
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from . import numerics as nx
from .constraints import KINDS, Constraint, GridContext, SoftReadings, satisfied
from .domain import SKU, Catalog, Fixture, Planogram, check_planogram

log = logging.getLogger(__name__)

KIND_LABELS = {
    "physical-fit": "Physical feasibility",
    "weight-limit": "Weight limit compliance",
    "category-grouping": "Category grouping",
    "regulatory-age": "Regulatory compliance",
    "brand-placement": "Brand placement agreements",
}


@dataclass(frozen=True)
class RevenueModel:
    """Linear revenue: facings x margin x category demand x shelf position.

    ``position_multipliers`` overrides the eye-level rule when given; it must
    then have one entry per shelf of every fixture it is used with.
    """

    demand_proxy: Mapping[str, float] = field(default_factory=dict)
    position_multipliers: tuple[float, ...] | None = None
    eye_level_fraction: float = 0.6
    eye_level_boost: float = 1.5

    def __post_init__(self):
        if self.position_multipliers is not None and any(m <= 0 for m in self.position_multipliers):
            raise ValueError("position multipliers must be > 0")
        if self.eye_level_boost <= 0:
            raise ValueError("eye-level boost must be > 0")

    def multipliers(self, fixture: Fixture) -> np.ndarray:
        if self.position_multipliers is not None:
            if len(self.position_multipliers) != fixture.shelf_count:
                raise ValueError(
                    f"{len(self.position_multipliers)} position multipliers for {fixture.shelf_count} shelves"
                )
            return np.asarray(self.position_multipliers, dtype=float)
        centres = fixture.shelf_bases() + fixture.clearances / 2
        eye = int(np.argmin(np.abs(centres - self.eye_level_fraction * fixture.height_cm)))
        out = np.ones(fixture.shelf_count)
        out[eye] = self.eye_level_boost
        return out

    def demand(self, category: str) -> float:
        if category in self.demand_proxy:
            return float(self.demand_proxy[category])
        if self.demand_proxy:
            log.info("no demand proxy for category %r, using 1.0", category)
        return 1.0


def expected_revenue(planogram: Planogram, catalog: Catalog, model: RevenueModel) -> float:
    mult = model.multipliers(planogram.fixture)
    return math.fsum(
        p.facings * catalog[p.sku].margin * model.demand(catalog[p.sku].category) * mult[p.shelf_index]
        for p in planogram.placements
    )


def revenue_scale(fixture: Fixture, catalog: Catalog, model: RevenueModel) -> float:
    """Revenue of a fixture packed wall to wall with the best margin-per-cm product."""
    density = max(max(p.margin, 0.0) * model.demand(p.category) / p.width_cm for p in catalog)
    scale = float(np.sum(model.multipliers(fixture))) * fixture.width_cm * density
    return scale if scale > 0 else 1.0


def tensor_revenue(
    x: nx.Tensor, ctx: GridContext, model: RevenueModel, readings: SoftReadings | None = None
) -> nx.Tensor:
    """Expected revenue of each tensor in a batch divided by :func:`revenue_scale`, shape ``(B,)``.

    Agrees with :func:`expected_revenue` on encoded planograms.
    """
    from .constraints import soft_readings

    r = readings or soft_readings(x, ctx)
    table = ctx.catalog.table(lambda p: p.margin * model.demand(p.category) / p.width_cm)
    B, _, S, K = x.shape
    weight = np.empty((B, S, K))
    for b, fx in enumerate(ctx.fixtures):
        weight[b] = (model.multipliers(fx) * fx.column_width / revenue_scale(fx, ctx.catalog, model))[:, None]
    cell = r.fill * nx.interp(r.sku, ctx.knots, table) * weight
    return nx.reduce_sum(cell, axis=(1, 2))


def space_utilization(planogram: Planogram) -> float:
    return float(_utilization_fraction(planogram))


def _utilization_fraction(planogram: Planogram) -> Fraction:
    fx = planogram.fixture
    used = sum(p.span_columns for p in planogram.placements)
    return Fraction(used, fx.shelf_count * fx.slot_columns)


# ----------------------------------------------------------------------------
# reports


@dataclass(frozen=True)
class SampleRecord:
    store_id: str
    outcomes: tuple[tuple[str, bool], ...]
    utilization: Fraction
    revenue: float


def _rates(records: Iterable[SampleRecord]) -> dict[str, float]:
    hit = {k: 0 for k in KINDS}
    seen = {k: 0 for k in KINDS}
    for r in records:
        for kind, ok in r.outcomes:
            seen[kind] += 1
            hit[kind] += ok
    return {k: (hit[k] / seen[k] if seen[k] else 1.0) for k in KINDS}


@dataclass(frozen=True)
class RunReport:
    """Satisfaction, utilization and revenue over a set of planograms.

    The report keeps one record per sample, so :meth:`merge` of reports over
    a partition reproduces the report of the whole set exactly.
    """

    records: tuple[SampleRecord, ...]
    sampling_seconds: tuple[float, ...] = ()

    @property
    def count(self) -> int:
        return len(self.records)

    @property
    def satisfaction(self) -> dict[str, float]:
        return _rates(self.records)

    @property
    def overall(self) -> float:
        rates = self.satisfaction
        return sum(rates[k] for k in KINDS) / len(KINDS)

    @property
    def per_store_std(self) -> dict[str, float]:
        """Std of per-store rates (population std; resampling unit is a guess)."""
        stores: dict[str, list[SampleRecord]] = {}
        for r in self.records:
            stores.setdefault(r.store_id, []).append(r)
        per = [_rates(v) for v in stores.values()]
        if len(per) < 2:
            return {k: 0.0 for k in KINDS}
        return {k: float(np.std([p[k] for p in per])) for k in KINDS}

    @property
    def utilization(self) -> dict[str, float]:
        vals = sorted(r.utilization for r in self.records)
        if not vals:
            return {"mean": 0.0, "min": 0.0, "max": 0.0, "p10": 0.0, "p90": 0.0}
        arr = np.array([float(v) for v in vals])
        return {
            "mean": float(sum(vals) / len(vals)),
            "min": float(vals[0]),
            "max": float(vals[-1]),
            "p10": float(np.percentile(arr, 10)),
            "p90": float(np.percentile(arr, 90)),
        }

    @property
    def mean_revenue(self) -> float:
        return math.fsum(r.revenue for r in self.records) / self.count if self.records else 0.0

    def merge(self, *others: RunReport) -> RunReport:
        recs = list(self.records)
        secs = list(self.sampling_seconds)
        for o in others:
            recs += o.records
            secs += o.sampling_seconds
        return RunReport(tuple(recs), tuple(secs))

    def summary(self) -> dict:
        secs = np.array(self.sampling_seconds) if self.sampling_seconds else None
        return {
            "count": self.count,
            "satisfaction": self.satisfaction,
            "overall": self.overall,
            "per_store_std": self.per_store_std,
            "utilization": self.utilization,
            "mean_expected_revenue": self.mean_revenue,
            "sampling_seconds": None
            if secs is None
            else {"mean": float(secs.mean()), "p50": float(np.median(secs)), "max": float(secs.max())},
        }

    def __eq__(self, other) -> bool:
        return isinstance(other, RunReport) and self.summary() == other.summary()

    __hash__ = None

    def render(self) -> str:
        """Five-row satisfaction table plus utilization and revenue lines."""
        rates, std = self.satisfaction, self.per_store_std
        width = max(len(v) for v in KIND_LABELS.values())
        lines = [f"{'Constraint':<{width}}  Satisfaction", "-" * (width + 22)]
        for k in KINDS:
            lines.append(f"{KIND_LABELS[k]:<{width}}  {100 * rates[k]:5.1f}% ± {100 * std[k]:.1f}%")
        lines.append("-" * (width + 22))
        lines.append(f"{'Overall average':<{width}}  {100 * self.overall:5.1f}%")
        u = self.utilization
        lines.append(f"Space utilization: mean {100 * u['mean']:.1f}% (range {100 * u['min']:.1f}%-{100 * u['max']:.1f}%)")
        lines.append(f"Mean expected revenue: {self.mean_revenue:.2f} over {self.count} planograms")
        return "\n".join(lines)


def record_for(
    planogram: Planogram, constraints: Sequence[Constraint], catalog: Catalog, revenue_model: RevenueModel
) -> SampleRecord:
    check_planogram(planogram, catalog)
    outcomes = tuple((c.kind, satisfied(c, planogram, catalog)) for c in constraints)
    return SampleRecord(
        planogram.store_id,
        outcomes,
        _utilization_fraction(planogram),
        expected_revenue(planogram, catalog, revenue_model),
    )


def build_report(
    samples: Sequence[Planogram],
    constraints: Sequence[Constraint],
    catalog: Catalog,
    revenue_model: RevenueModel | None = None,
    sampling_seconds: Sequence[float] = (),
) -> RunReport:
    revenue_model = revenue_model or RevenueModel()
    if not samples:
        raise ValueError("build_report needs at least one sample")
    recs = tuple(record_for(pg, constraints, catalog, revenue_model) for pg in samples)
    return RunReport(recs, tuple(float(s) for s in sampling_seconds))


def report_from_rates(rates: Mapping[str, float]) -> float:
    """Overall satisfaction implied by five per-kind rates (their plain mean)."""
    return sum(float(rates[k]) for k in KINDS) / len(KINDS)
