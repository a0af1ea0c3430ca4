"""Retail constraints as signed margins, hard validators, and the hinge penalty.

Every constraint ``c`` maps a planogram to a margin with ``margin >= 0`` exactly
when ``c`` holds.  The hinge penalty is ``sum_i w_i * max(0, -margin_i)``.

Margins are available along two routes:

* the planogram route works on a discrete :class:`~planoforge.domain.Planogram`;
* the tensor route works on a batch of ``(B, 5, S, K)`` tensors through
  :mod:`planoforge.numerics`, reading product attributes by piecewise-linear
  lookup on the sku channel so the result is differentiable.  On tensors
  produced by :func:`~planoforge.domain.encode` both routes agree.
"""

from __future__ import annotations

import json
import math
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import numerics as nx
from .domain import (
    CATEGORY,
    DIMENSION,
    SKU,
    Catalog,
    Fixture,
    Planogram,
    PlanogramTensor,
    check_planogram,
    fits,
)

PHYSICAL = "physical-fit"
WEIGHT = "weight-limit"
GROUPING = "category-grouping"
AGE = "regulatory-age"
BRAND = "brand-placement"
KINDS = (PHYSICAL, WEIGHT, GROUPING, AGE, BRAND)

# denominator guard for the soft same-category fraction; bounds the
# tensor/planogram disagreement by 1e-8 when at least one pair exists
_PAIR_EPS = 1e-8


class ConstraintError(ValueError):
    pass


def _default_params(kind: str) -> dict:
    if kind == GROUPING:
        return {"threshold": 0.8}
    if kind == AGE:
        return {"min_shelf_index": 2}
    return {}


@dataclass(frozen=True)
class Constraint:
    kind: str
    params: Mapping = field(default_factory=dict)
    weight: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConstraintError(f"unknown constraint kind {self.kind!r}")
        if not (self.weight >= 0 and math.isfinite(self.weight)):
            raise ConstraintError(f"{self.kind}: weight must be a nonnegative real")
        params = {**_default_params(self.kind), **dict(self.params)}
        if self.kind == BRAND:
            contracts = params.get("contracts")
            if contracts is None:
                raise ConstraintError("brand-placement needs params.contracts")
            clean = []
            for c in contracts:
                if not {"brand", "shelf_min", "shelf_max"} <= set(c):
                    raise ConstraintError(f"brand contract {c!r} needs brand, shelf_min, shelf_max")
                clean.append({"brand": str(c["brand"]), "shelf_min": int(c["shelf_min"]),
                              "shelf_max": int(c["shelf_max"])})
            params["contracts"] = tuple(clean)
        object.__setattr__(self, "params", params)

    def to_dict(self) -> dict:
        params = dict(self.params)
        if "contracts" in params:
            params["contracts"] = [dict(c) for c in params["contracts"]]
        return {"kind": self.kind, "params": params, "weight": self.weight}


ConstraintSet = tuple  # tuple[Constraint, ...]


def default_constraints(catalog: Catalog, contracts: Sequence[Mapping] | None = None) -> tuple[Constraint, ...]:
    """One constraint per kind; brand contracts default to the two largest brands."""
    if contracts is None:
        counts: dict[str, int] = {}
        for p in catalog:
            counts[p.brand] = counts.get(p.brand, 0) + 1
        top = sorted(counts, key=lambda b: (-counts[b], b))[:2]
        bands = [(1, 2), (0, 1)]
        contracts = [{"brand": b, "shelf_min": lo, "shelf_max": hi} for b, (lo, hi) in zip(top, bands)]
    return (
        Constraint(PHYSICAL),
        Constraint(WEIGHT),
        Constraint(GROUPING),
        Constraint(AGE),
        Constraint(BRAND, {"contracts": list(contracts)}),
    )


def constraints_to_json(constraints: Iterable[Constraint]) -> str:
    return json.dumps([c.to_dict() for c in constraints], indent=2)


def constraints_from_obj(obj) -> tuple[Constraint, ...]:
    if not isinstance(obj, list):
        raise ConstraintError("constraint set must be a JSON list")
    out = []
    for i, item in enumerate(obj):
        if not isinstance(item, dict) or set(item) - {"kind", "params", "weight"} or "kind" not in item:
            raise ConstraintError(f"constraint[{i}] must be an object with kind, params, weight")
        out.append(Constraint(item["kind"], item.get("params", {}), float(item.get("weight", 1.0))))
    return tuple(out)


def save_constraints(constraints: Iterable[Constraint], path: str | Path) -> None:
    Path(path).write_text(constraints_to_json(constraints) + "\n", encoding="utf-8")


def load_constraints(path: str | Path) -> tuple[Constraint, ...]:
    return constraints_from_obj(json.loads(Path(path).read_text(encoding="utf-8")))


# ----------------------------------------------------------------------------
# planogram route


def _cell_rows(planogram: Planogram, catalog: Catalog) -> list[list]:
    """``rows[s][k]`` is the product occupying a cell, or None."""
    fx = planogram.fixture
    rows: list[list] = [[None] * fx.slot_columns for _ in range(fx.shelf_count)]
    for p in planogram.placements:
        prod = catalog[p.sku]
        for k in p.columns():
            rows[p.shelf_index][k] = prod
    return rows


def _brand_violations(constraint: Constraint, planogram: Planogram, catalog: Catalog) -> int:
    rows = _cell_rows(planogram, catalog)
    bad = 0
    for c in constraint.params["contracts"]:
        violated = False
        for s, row in enumerate(rows):
            mask = [prod is not None and prod.brand == c["brand"] for prod in row]
            if not any(mask):
                continue
            if not c["shelf_min"] <= s <= c["shelf_max"]:
                violated = True
            runs = sum(1 for k, m in enumerate(mask) if m and (k == 0 or not mask[k - 1]))
            if runs > 1:
                violated = True
        bad += violated
    return bad


def _grouping_fraction(planogram: Planogram, catalog: Catalog) -> float:
    pairs = same = 0
    for row in _cell_rows(planogram, catalog):
        for a, b in zip(row, row[1:]):
            if a is not None and b is not None:
                pairs += 1
                same += a.category == b.category
    return 1.0 if pairs == 0 else same / pairs


def margin(constraint: Constraint, planogram: Planogram, catalog: Catalog) -> float:
    """Signed, scale-normalized margin; ``>= 0`` iff the constraint holds."""
    fx = planogram.fixture
    kind = constraint.kind
    if kind == PHYSICAL:
        worst = 0.0
        for p in planogram.placements:
            prod = catalog[p.sku]
            height_load = prod.height_cm / fx.per_shelf[p.shelf_index][0]
            width_fill = min(1.0, p.facings * prod.width_cm / (p.span_columns * fx.column_width))
            worst = max(worst, height_load, width_fill)
        return 1.0 - worst
    if kind == WEIGHT:
        loads = np.zeros(fx.shelf_count)
        for p in planogram.placements:
            loads[p.shelf_index] += p.facings * catalog[p.sku].weight_kg
        return float(np.min((fx.capacities - loads) / fx.capacities))
    if kind == GROUPING:
        return _grouping_fraction(planogram, catalog) - float(constraint.params["threshold"])
    if kind == AGE:
        lo = int(constraint.params["min_shelf_index"])
        vals = [(p.shelf_index - lo) / fx.shelf_count for p in planogram.placements if catalog[p.sku].age_restricted]
        return min(vals) if vals else 1.0
    if kind == BRAND:
        n = len(constraint.params["contracts"])
        bad = _brand_violations(constraint, planogram, catalog)
        return 1.0 if bad == 0 else -bad / n
    raise ConstraintError(f"unknown constraint kind {kind!r}")


def satisfied(constraint: Constraint, planogram: Planogram, catalog: Catalog) -> bool:
    """Hard boolean validator, written independently of :func:`margin`."""
    fx = planogram.fixture
    kind = constraint.kind
    if kind == PHYSICAL:
        return all(
            catalog[p.sku].height_cm / fx.per_shelf[p.shelf_index][0] <= 1.0
            and fits(catalog[p.sku], p.facings, p.span_columns, fx.column_width)
            for p in planogram.placements
        )
    if kind == WEIGHT:
        return all(
            sum(p.facings * catalog[p.sku].weight_kg for p in planogram.on_shelf(s)) <= cap
            for s, (_, cap) in enumerate(fx.per_shelf)
        )
    if kind == GROUPING:
        return _grouping_fraction(planogram, catalog) >= float(constraint.params["threshold"])
    if kind == AGE:
        lo = int(constraint.params["min_shelf_index"])
        return all(p.shelf_index >= lo for p in planogram.placements if catalog[p.sku].age_restricted)
    if kind == BRAND:
        return _brand_violations(constraint, planogram, catalog) == 0
    raise ConstraintError(f"unknown constraint kind {kind!r}")


# ----------------------------------------------------------------------------
# tensor route


@dataclass(frozen=True)
class GridContext:
    """Constants for evaluating tensor-route margins on a ``(B, 5, S, K)`` batch."""

    catalog: Catalog
    fixtures: tuple[Fixture, ...]
    knots: np.ndarray
    occupancy: np.ndarray
    height: np.ndarray
    kg_per_cm: np.ndarray
    category_code: np.ndarray
    age_flag: np.ndarray
    n_categories: int
    inv_clearance: np.ndarray  # (B, S, K)
    inv_capacity_cw: np.ndarray  # (B, S, K) column width / capacity
    shelf_index: np.ndarray  # (B, S, K)
    shelf_count: np.ndarray  # (B, S, K)

    @classmethod
    def build(cls, catalog: Catalog, fixtures: Sequence[Fixture]) -> GridContext:
        fixtures = tuple(fixtures)
        shapes = {(f.shelf_count, f.slot_columns) for f in fixtures}
        if len(shapes) != 1:
            raise ConstraintError(f"batch fixtures must share one grid shape, got {sorted(shapes)}")
        (S, K), = shapes
        B = len(fixtures)
        inv_clear = np.empty((B, S, K))
        inv_cap = np.empty((B, S, K))
        for b, f in enumerate(fixtures):
            inv_clear[b] = (1.0 / f.clearances)[:, None]
            inv_cap[b] = (f.column_width / f.capacities)[:, None]
        shelf = np.broadcast_to(np.arange(S, dtype=float)[None, :, None], (B, S, K)).copy()
        cat_index = {c: i for i, c in enumerate(catalog.categories)}
        table = catalog.table
        return cls(
            catalog=catalog,
            fixtures=fixtures,
            knots=catalog.knots,
            occupancy=np.concatenate([[0.0], np.ones(len(catalog))]),
            height=table(lambda p: p.height_cm),
            kg_per_cm=table(lambda p: p.weight_kg / p.width_cm),
            category_code=np.concatenate(
                [[-1.0], [catalog.category_codes[p.category] for p in catalog.products]]
            ),
            age_flag=table(lambda p: 1.0 if p.age_restricted else 0.0),
            n_categories=len(cat_index),
            inv_clearance=inv_clear,
            inv_capacity_cw=inv_cap,
            shelf_index=shelf,
            shelf_count=np.full((B, S, K), float(S)),
        )

    def brand_table(self, brand: str) -> np.ndarray:
        return self.catalog.table(lambda p: 1.0 if p.brand == brand else 0.0)


@dataclass
class SoftReadings:
    """Shared per-cell quantities of a batch, each ``(B, S, K)``."""

    sku: nx.Tensor
    occupancy: nx.Tensor
    fill: nx.Tensor


def soft_readings(x: nx.Tensor, ctx: GridContext) -> SoftReadings:
    sku = nx.clip(x[:, SKU], -1.0, 1.0)
    occ = nx.interp(sku, ctx.knots, ctx.occupancy)
    fill = nx.clip((x[:, DIMENSION] + 1.0) * 0.5, 0.0, 1.0)
    return SoftReadings(sku, occ, fill)


def tensor_margin(constraint: Constraint, x: nx.Tensor, ctx: GridContext, readings: SoftReadings | None = None) -> nx.Tensor:
    """Margin of each batch element, shape ``(B,)``, differentiable in ``x``."""
    r = readings or soft_readings(x, ctx)
    kind = constraint.kind
    B = x.shape[0]
    if kind == PHYSICAL:
        height_load = nx.interp(r.sku, ctx.knots, ctx.height) * ctx.inv_clearance
        load = nx.maximum(height_load, r.fill * r.occupancy)
        return 1.0 - nx.reduce_max(load, axis=(1, 2))
    if kind == WEIGHT:
        kg = r.fill * nx.interp(r.sku, ctx.knots, ctx.kg_per_cm) * ctx.inv_capacity_cw
        return 1.0 - nx.reduce_max(nx.reduce_sum(kg, axis=2), axis=1)
    if kind == GROUPING:
        threshold = float(constraint.params["threshold"])
        K = x.shape[-1]
        if K < 2:
            return nx.constant(np.full(B, 1.0 - threshold))
        cat = nx.interp(r.sku, ctx.knots, ctx.category_code)
        gap = nx.absolute(cat[:, :, 1:] - cat[:, :, :-1])
        same = nx.relu(1.0 - gap * (ctx.n_categories * 1.0))
        pairs = r.occupancy[:, :, 1:] * r.occupancy[:, :, :-1]
        num = nx.reduce_sum(pairs * same, axis=(1, 2)) + _PAIR_EPS
        den = nx.reduce_sum(pairs, axis=(1, 2)) + _PAIR_EPS
        return num / den - threshold
    if kind == AGE:
        lo = float(constraint.params["min_shelf_index"])
        pos = (ctx.shelf_index - lo) / ctx.shelf_count
        flagged = nx.interp(r.sku, ctx.knots, ctx.age_flag)
        term = 1.0 + flagged * (pos - 1.0)
        return nx.reduce_min(term, axis=(1, 2))
    if kind == BRAND:
        contracts = constraint.params["contracts"]
        if not contracts:
            return nx.constant(np.ones(B))
        S = x.shape[2]
        total = None
        for c in contracts:
            b = nx.interp(r.sku, ctx.knots, ctx.brand_table(c["brand"]))
            band = (ctx.shelf_index < c["shelf_min"]) | (ctx.shelf_index > c["shelf_max"])
            outside = nx.reduce_max(b * band.astype(float), axis=(1, 2))
            prev = nx.concat([nx.constant(np.zeros((B, S, 1))), b[:, :, :-1]], axis=2)
            runs = nx.reduce_sum(nx.relu(b - prev), axis=2)
            excess = nx.reduce_sum(nx.relu(runs - 1.0), axis=1)
            viol = nx.minimum(outside + excess, nx.constant(np.ones(B)))
            total = viol if total is None else total + viol
        clean = (total.data == 0).astype(float)
        return total * (-1.0 / len(contracts)) + clean
    raise ConstraintError(f"unknown constraint kind {kind!r}")


def tensor_hinge(constraints: Sequence[Constraint], x: nx.Tensor, ctx: GridContext) -> nx.Tensor:
    """Per-element hinge penalty ``(B,)`` of a tensor batch."""
    r = soft_readings(x, ctx)
    total = nx.constant(np.zeros(x.shape[0]))
    for c in constraints:
        if c.weight == 0:
            continue
        total = total + nx.relu(-tensor_margin(c, x, ctx, r)) * c.weight
    return total


# ----------------------------------------------------------------------------
# penalty and reports


def margins(constraints: Sequence[Constraint], planogram: Planogram, catalog: Catalog) -> list[float]:
    return [margin(c, planogram, catalog) for c in constraints]


def hinge_from_margins(weights: Sequence[float], values: Sequence[float]) -> float:
    return float(sum(w * max(0.0, -m) for w, m in zip(weights, values)))


def hinge_loss(
    constraints: Sequence[Constraint],
    target: Planogram | PlanogramTensor,
    catalog: Catalog,
    fixture: Fixture | None = None,
) -> float:
    """``sum_i weight_i * max(0, -margin_i)`` of a planogram or an encoded tensor."""
    if isinstance(target, Planogram):
        return hinge_from_margins([c.weight for c in constraints], margins(constraints, target, catalog))
    if fixture is None:
        raise ConstraintError("hinge_loss on a tensor needs the fixture")
    x = nx.constant(np.asarray(target.grid)[None])
    with nx.no_grad():
        return float(tensor_hinge(constraints, x, GridContext.build(catalog, [fixture])).data[0])


@dataclass(frozen=True)
class ValidationReport:
    per_constraint: tuple[tuple[str, bool, float], ...]
    per_category_rate: Mapping[str, float]
    overall: float

    @classmethod
    def from_rates(cls, rates: Mapping[str, float], per_constraint=()) -> ValidationReport:
        full = {k: float(rates.get(k, 1.0)) for k in KINDS}
        return cls(tuple(per_constraint), full, float(sum(full.values()) / len(KINDS)))

    def to_dict(self) -> dict:
        return {
            "per_constraint": [{"kind": k, "satisfied": s, "margin": m} for k, s, m in self.per_constraint],
            "per_category_rate": dict(self.per_category_rate),
            "overall": self.overall,
        }


def rates_from_outcomes(outcomes: Iterable[tuple[str, bool]]) -> dict[str, float]:
    """Fraction satisfied per kind; kinds with no checks count as fully satisfied."""
    hit = {k: 0 for k in KINDS}
    seen = {k: 0 for k in KINDS}
    for kind, ok in outcomes:
        seen[kind] += 1
        hit[kind] += bool(ok)
    return {k: (hit[k] / seen[k] if seen[k] else 1.0) for k in KINDS}


def validate(planogram: Planogram, constraints: Sequence[Constraint], catalog: Catalog) -> ValidationReport:
    """Per-constraint outcomes plus per-kind and overall satisfaction rates.

    Raises :class:`~planoforge.domain.DomainError` for structurally invalid
    planograms (overlaps, unknown skus, placements that do not fit their span).
    """
    check_planogram(planogram, catalog)
    rows = []
    for c in constraints:
        m = margin(c, planogram, catalog)
        ok = satisfied(c, planogram, catalog)
        rows.append((c.kind, ok, m))
    return ValidationReport.from_rates(rates_from_outcomes((k, ok) for k, ok, _ in rows), rows)
