"""Products, fixtures, planograms, and their multi-channel tensor encoding.

A planogram is a fixture with ``S`` shelves, each cut into ``K`` equal slot
columns, plus a list of placements occupying column runs.  The tensor view is
a ``5 x S x K`` array of normalized values:

==========  ==============================================================
channel     per-cell value (empty cell = -1 in every channel)
==========  ==============================================================
sku         scalar product code, evenly spaced in (-1, 1]
dimension   width fill of the allotted span, ``facings*width / (span*col)``
weight      load carried by the cell as a fraction of shelf capacity
category    category code, evenly spaced in (-1, 1]
price       price relative to the most expensive catalog product
==========  ==============================================================

All five "raw" quantities live in [0, 1] for valid planograms and map to
[-1, 1] through one affine transform per channel.
"""

from __future__ import annotations

import csv
import json
import math
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

SKU, DIMENSION, WEIGHT, CATEGORY, PRICE = range(5)
CHANNELS = ("sku", "dimension", "weight", "category", "price")
EMPTY_CODE = -1.0
FIT_RTOL = 1e-9

CATALOG_HEADER = (
    "sku",
    "width_cm",
    "height_cm",
    "depth_cm",
    "weight_kg",
    "category",
    "brand",
    "price",
    "margin",
    "age_restricted",
)


class DomainError(ValueError):
    """Base class for data-model errors."""


class InvariantError(DomainError):
    """One or more records violate a data-model invariant."""

    def __init__(self, message: str, violations: Sequence[str] = ()):
        self.violations = list(violations)
        if self.violations:
            message = message + ": " + "; ".join(self.violations)
        super().__init__(message)


class UnknownSkuError(DomainError):
    pass


class OverlapError(InvariantError):
    pass


class ParseError(DomainError):
    """Malformed input file; the message carries line and field."""


@dataclass(frozen=True)
class Product:
    sku: str
    width_cm: float
    height_cm: float
    depth_cm: float
    weight_kg: float
    category: str
    brand: str
    price: float
    margin: float
    age_restricted: bool = False

    def __post_init__(self):
        problems = self.problems()
        if problems:
            raise InvariantError(f"product {self.sku!r}", problems)

    def problems(self) -> list[str]:
        out = []
        if not self.sku:
            out.append("sku must be non-empty")
        for name in ("width_cm", "height_cm", "depth_cm", "weight_kg"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                out.append(f"{name} must be > 0 (got {v})")
        if not (math.isfinite(self.price) and self.price >= 0):
            out.append(f"price must be >= 0 (got {self.price})")
        if not math.isfinite(self.margin):
            out.append("margin must be finite")
        return out


class Catalog:
    """Immutable product collection with the sku and category code tables.

    Products are ordered by ``(category, sku)``; product ``j`` gets code
    ``-1 + 2 (j + 1) / n`` so neighbouring codes tend to share a category.
    """

    def __init__(self, products: Iterable[Product]):
        products = list(products)
        seen: dict[str, int] = {}
        dupes = []
        for p in products:
            if p.sku in seen:
                dupes.append(p.sku)
            seen[p.sku] = 1
        if dupes:
            raise InvariantError("duplicate sku in catalog", [f"duplicate sku {s!r}" for s in sorted(set(dupes))])
        if not products:
            raise InvariantError("catalog is empty")
        self.products: tuple[Product, ...] = tuple(sorted(products, key=lambda p: (p.category, p.sku)))
        self._by_sku = {p.sku: p for p in self.products}
        self._index = {p.sku: i for i, p in enumerate(self.products)}
        n = len(self.products)
        self.codes = -1.0 + 2.0 * (np.arange(n) + 1) / n
        self.categories: tuple[str, ...] = tuple(sorted({p.category for p in self.products}))
        m = len(self.categories)
        self.category_codes = {c: -1.0 + 2.0 * (i + 1) / m for i, c in enumerate(self.categories)}
        self.max_price = max(p.price for p in self.products)

    def __len__(self) -> int:
        return len(self.products)

    def __iter__(self):
        return iter(self.products)

    def __contains__(self, sku) -> bool:
        return sku in self._by_sku

    def __getitem__(self, sku: str) -> Product:
        try:
            return self._by_sku[sku]
        except KeyError:
            raise UnknownSkuError(f"unknown sku {sku!r}") from None

    def __eq__(self, other) -> bool:
        return isinstance(other, Catalog) and self.products == other.products

    def index(self, sku: str) -> int:
        self[sku]
        return self._index[sku]

    def code(self, sku: str) -> float:
        return float(self.codes[self.index(sku)])

    @property
    def knots(self) -> np.ndarray:
        """Empty code followed by the product codes (strictly increasing)."""
        return np.concatenate([[EMPTY_CODE], self.codes])

    def table(self, fn) -> np.ndarray:
        """Per-knot values of ``fn(product)``; the empty knot gets 0."""
        return np.array([0.0] + [float(fn(p)) for p in self.products])

    def by_category(self, category: str) -> list[Product]:
        return [p for p in self.products if p.category == category]


@dataclass(frozen=True)
class Fixture:
    width_cm: float
    height_cm: float
    shelf_count: int
    per_shelf: tuple[tuple[float, float], ...]  # (clearance_height_cm, weight_capacity_kg)
    slot_columns: int = 16

    def __post_init__(self):
        object.__setattr__(self, "per_shelf", tuple((float(c), float(w)) for c, w in self.per_shelf))
        problems = []
        if not self.width_cm > 0:
            problems.append("width_cm must be > 0")
        if not self.height_cm > 0:
            problems.append("height_cm must be > 0")
        if self.shelf_count < 1:
            problems.append("shelf_count must be >= 1")
        if self.slot_columns < 1:
            problems.append("slot_columns must be >= 1")
        if len(self.per_shelf) != self.shelf_count:
            problems.append(f"per_shelf has {len(self.per_shelf)} entries for {self.shelf_count} shelves")
        for i, (clear, cap) in enumerate(self.per_shelf):
            if not clear > 0:
                problems.append(f"shelf {i} clearance must be > 0")
            if not cap > 0:
                problems.append(f"shelf {i} weight capacity must be > 0")
        if sum(c for c, _ in self.per_shelf) > self.height_cm * (1 + FIT_RTOL):
            problems.append("sum of shelf clearances exceeds fixture height")
        if problems:
            raise InvariantError("invalid fixture", problems)

    @property
    def column_width(self) -> float:
        return self.width_cm / self.slot_columns

    @property
    def clearances(self) -> np.ndarray:
        return np.array([c for c, _ in self.per_shelf])

    @property
    def capacities(self) -> np.ndarray:
        return np.array([w for _, w in self.per_shelf])

    @property
    def grid_shape(self) -> tuple[int, int, int]:
        return (len(CHANNELS), self.shelf_count, self.slot_columns)

    def shelf_bases(self) -> np.ndarray:
        """Height of each shelf's floor above the fixture base (shelf 0 lowest)."""
        return np.concatenate([[0.0], np.cumsum(self.clearances)[:-1]])

    def span_for(self, product: Product, facings: int) -> int:
        """Columns needed for ``facings`` units of ``product``."""
        return max(1, math.ceil(facings * product.width_cm / self.column_width * (1 - FIT_RTOL)))


@dataclass(frozen=True, order=True)
class Placement:
    shelf_index: int
    start_column: int
    span_columns: int
    sku: str = field(compare=True)
    facings: int = 1

    @property
    def end_column(self) -> int:
        return self.start_column + self.span_columns

    def columns(self) -> range:
        return range(self.start_column, self.end_column)


def fits(product: Product, facings: int, span: int, column_width: float) -> bool:
    return facings * product.width_cm <= span * column_width * (1 + FIT_RTOL)


@dataclass(frozen=True)
class Planogram:
    fixture: Fixture
    placements: tuple[Placement, ...] = ()
    store_id: str = ""

    def __post_init__(self):
        object.__setattr__(self, "placements", tuple(sorted(self.placements)))

    def on_shelf(self, shelf: int) -> list[Placement]:
        return [p for p in self.placements if p.shelf_index == shelf]

    def replace(self, placements: Iterable[Placement]) -> Planogram:
        return Planogram(self.fixture, tuple(placements), self.store_id)


def structural_violations(planogram: Planogram, catalog: Catalog) -> list[str]:
    """Grid, overlap, sku and width-fit problems; empty when the planogram is valid."""
    fx = planogram.fixture
    out = []
    occupied: dict[tuple[int, int], Placement] = {}
    for p in planogram.placements:
        where = f"shelf {p.shelf_index} columns {p.start_column}-{p.end_column - 1}"
        if not 0 <= p.shelf_index < fx.shelf_count:
            out.append(f"{p.sku} shelf index {p.shelf_index} out of range")
            continue
        if p.start_column < 0 or p.span_columns < 1 or p.end_column > fx.slot_columns:
            out.append(f"{p.sku} at {where} outside the {fx.slot_columns}-column grid")
            continue
        if p.facings < 1:
            out.append(f"{p.sku} at {where} has facings {p.facings} < 1")
        if p.sku not in catalog:
            out.append(f"unknown sku {p.sku!r} at {where}")
        elif not fits(catalog[p.sku], p.facings, p.span_columns, fx.column_width):
            out.append(f"{p.sku} x{p.facings} does not fit {where}")
        for col in p.columns():
            other = occupied.get((p.shelf_index, col))
            if other is not None:
                out.append(
                    f"overlap on shelf {p.shelf_index} column {col}: {other.sku} and {p.sku}"
                )
                break
            occupied[(p.shelf_index, col)] = p
    return out


def check_planogram(planogram: Planogram, catalog: Catalog) -> None:
    problems = structural_violations(planogram, catalog)
    if not problems:
        return
    unknown = [m for m in problems if m.startswith("unknown sku")]
    if unknown:
        raise UnknownSkuError("; ".join(unknown))
    if any(m.startswith("overlap") for m in problems):
        raise OverlapError("overlapping placements", problems)
    raise InvariantError("invalid planogram", problems)


# ----------------------------------------------------------------------------
# tensor encoding


@dataclass(frozen=True)
class ChannelNormalization:
    """``value = scale * raw + offset`` per channel."""

    scale: tuple[float, ...] = (1.0, 2.0, 2.0, 1.0, 2.0)
    offset: tuple[float, ...] = (0.0, -1.0, -1.0, 0.0, -1.0)

    def normalize(self, raw: np.ndarray) -> np.ndarray:
        raw = np.asarray(raw, dtype=np.float64)
        s = np.asarray(self.scale).reshape((-1,) + (1,) * (raw.ndim - 1))
        o = np.asarray(self.offset).reshape(s.shape)
        return s * raw + o

    def denormalize(self, value: np.ndarray) -> np.ndarray:
        value = np.asarray(value, dtype=np.float64)
        s = np.asarray(self.scale).reshape((-1,) + (1,) * (value.ndim - 1))
        o = np.asarray(self.offset).reshape(s.shape)
        return (value - o) / s


NORMALIZATION = ChannelNormalization()


@dataclass(frozen=True)
class PlanogramTensor:
    grid: np.ndarray  # (C, S, K)
    normalization: ChannelNormalization = NORMALIZATION

    def __post_init__(self):
        grid = np.array(self.grid, dtype=np.float64)
        if grid.ndim != 3 or grid.shape[0] != len(CHANNELS):
            raise DomainError(f"planogram tensor must be {len(CHANNELS)} x S x K, got {grid.shape}")
        grid.flags.writeable = False
        object.__setattr__(self, "grid", grid)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.grid.shape

    def raw(self) -> np.ndarray:
        return self.normalization.denormalize(self.grid)


def encode(planogram: Planogram, catalog: Catalog) -> PlanogramTensor:
    """Multi-channel tensor of a valid planogram."""
    check_planogram(planogram, catalog)
    fx = planogram.fixture
    raw = np.zeros(fx.grid_shape)
    raw[SKU] = EMPTY_CODE
    raw[CATEGORY] = EMPTY_CODE
    cw = fx.column_width
    for pl in planogram.placements:
        prod = catalog[pl.sku]
        cols = slice(pl.start_column, pl.end_column)
        s = pl.shelf_index
        raw[SKU, s, cols] = catalog.code(pl.sku)
        raw[DIMENSION, s, cols] = pl.facings * prod.width_cm / (pl.span_columns * cw)
        raw[WEIGHT, s, cols] = pl.facings * prod.weight_kg / (pl.span_columns * fx.per_shelf[s][1])
        raw[CATEGORY, s, cols] = catalog.category_codes[prod.category]
        raw[PRICE, s, cols] = prod.price / catalog.max_price if catalog.max_price > 0 else 0.0
    return PlanogramTensor(NORMALIZATION.normalize(raw))


def nearest_code_index(values: np.ndarray, catalog: Catalog) -> np.ndarray:
    """Index into ``catalog.knots`` (0 = empty) of the nearest code; ties go low."""
    knots = catalog.knots
    values = np.asarray(values, dtype=np.float64)
    hi = np.clip(np.searchsorted(knots, values, side="left"), 1, knots.size - 1)
    lo = hi - 1
    pick_hi = np.abs(knots[hi] - values) < np.abs(values - knots[lo])
    return np.where(pick_hi, hi, lo)


def decode(tensor: PlanogramTensor | np.ndarray, catalog: Catalog, fixture: Fixture, store_id: str = "") -> Planogram:
    """Discrete planogram read off a (possibly noisy) tensor.

    Each maximal run of cells sharing the same nearest product code becomes
    one placement; facings come from the mean width fill of the run and are
    clamped to what physically fits.  Runs narrower than one facing are
    dropped.  Two adjacent placements of the same sku are indistinguishable
    in the grid and decode as a single placement.
    """
    grid = tensor.grid if isinstance(tensor, PlanogramTensor) else np.asarray(tensor, dtype=np.float64)
    if grid.shape != fixture.grid_shape:
        raise DomainError(f"tensor shape {grid.shape} does not match fixture grid {fixture.grid_shape}")
    raw = NORMALIZATION.denormalize(grid)
    idx = nearest_code_index(grid[SKU], catalog)
    cw = fixture.column_width
    placements = []
    for s in range(fixture.shelf_count):
        row = idx[s]
        k = 0
        while k < fixture.slot_columns:
            j = int(row[k])
            end = k + 1
            while end < fixture.slot_columns and row[end] == j:
                end += 1
            if j > 0:
                prod = catalog.products[j - 1]
                span = end - k
                max_facings = int(math.floor(span * cw / prod.width_cm * (1 + FIT_RTOL)))
                if max_facings >= 1:
                    fill = float(np.mean(raw[DIMENSION, s, k:end]))
                    facings = int(np.clip(round(fill * span * cw / prod.width_cm), 1, max_facings))
                    placements.append(Placement(s, k, span, prod.sku, facings))
            k = end
    return Planogram(fixture, tuple(placements), store_id)


# ----------------------------------------------------------------------------
# files


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "y", "t"):
        return True
    if t in ("0", "false", "no", "n", "f", ""):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def load_catalog(path: str | Path) -> Catalog:
    """Read a catalog CSV; every bad row is reported, not just the first."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        if tuple(h.strip() for h in header) != CATALOG_HEADER:
            raise ParseError(f"{path}:1: header must be {','.join(CATALOG_HEADER)}")
        products, problems = [], []
        for row in reader:
            line = reader.line_num
            if not row:
                continue
            if len(row) != len(CATALOG_HEADER):
                raise ParseError(f"{path}:{line}: expected {len(CATALOG_HEADER)} fields, got {len(row)}")
            rec = dict(zip(CATALOG_HEADER, row))
            values = {"sku": rec["sku"].strip(), "category": rec["category"].strip(), "brand": rec["brand"].strip()}
            for name in ("width_cm", "height_cm", "depth_cm", "weight_kg", "price", "margin"):
                try:
                    values[name] = float(rec[name])
                except ValueError:
                    raise ParseError(f"{path}:{line}: field {name!r}: not a number: {rec[name]!r}") from None
            try:
                values["age_restricted"] = _parse_bool(rec["age_restricted"])
            except ValueError as exc:
                raise ParseError(f"{path}:{line}: field 'age_restricted': {exc}") from None
            try:
                products.append(Product(**values))
            except InvariantError as exc:
                problems.append(f"line {line}: {exc}")
    if problems:
        raise InvariantError(f"{path}: invalid catalog records", problems)
    return Catalog(products)


def save_catalog(catalog: Catalog, path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CATALOG_HEADER)
        for p in catalog:
            w.writerow(
                [p.sku, repr(p.width_cm), repr(p.height_cm), repr(p.depth_cm), repr(p.weight_kg),
                 p.category, p.brand, repr(p.price), repr(p.margin), "true" if p.age_restricted else "false"]
            )


_FIXTURE_FIELDS = {"width_cm", "height_cm", "shelf_count", "per_shelf", "slot_columns"}
_SHELF_FIELDS = {"clearance_height_cm", "weight_capacity_kg"}
_PLACEMENT_FIELDS = {"sku", "shelf_index", "start_column", "span_columns", "facings"}
_PLANOGRAM_FIELDS = {"fixture", "placements", "store_id"}


def _check_fields(obj, allowed: set[str], what: str, required: set[str] | None = None) -> None:
    if not isinstance(obj, dict):
        raise ParseError(f"{what}: expected a JSON object, got {type(obj).__name__}")
    unknown = set(obj) - allowed
    if unknown:
        raise ParseError(f"{what}: unknown field(s) {sorted(unknown)}")
    missing = (allowed if required is None else required) - set(obj)
    if missing:
        raise ParseError(f"{what}: missing field(s) {sorted(missing)}")


def fixture_to_dict(fx: Fixture) -> dict:
    return {
        "width_cm": fx.width_cm,
        "height_cm": fx.height_cm,
        "shelf_count": fx.shelf_count,
        "per_shelf": [{"clearance_height_cm": c, "weight_capacity_kg": w} for c, w in fx.per_shelf],
        "slot_columns": fx.slot_columns,
    }


def fixture_from_dict(obj) -> Fixture:
    _check_fields(obj, _FIXTURE_FIELDS, "fixture")
    shelves = obj["per_shelf"]
    if not isinstance(shelves, list):
        raise ParseError("fixture.per_shelf: expected a list")
    per_shelf = []
    for i, sh in enumerate(shelves):
        _check_fields(sh, _SHELF_FIELDS, f"fixture.per_shelf[{i}]")
        per_shelf.append((float(sh["clearance_height_cm"]), float(sh["weight_capacity_kg"])))
    try:
        return Fixture(
            float(obj["width_cm"]),
            float(obj["height_cm"]),
            int(obj["shelf_count"]),
            tuple(per_shelf),
            int(obj["slot_columns"]),
        )
    except (TypeError, ValueError) as exc:
        if isinstance(exc, DomainError):
            raise
        raise ParseError(f"fixture: {exc}") from None


def planogram_to_dict(pg: Planogram) -> dict:
    return {
        "store_id": pg.store_id,
        "fixture": fixture_to_dict(pg.fixture),
        "placements": [
            {
                "sku": p.sku,
                "shelf_index": p.shelf_index,
                "start_column": p.start_column,
                "span_columns": p.span_columns,
                "facings": p.facings,
            }
            for p in pg.placements
        ],
    }


def planogram_from_dict(obj) -> Planogram:
    _check_fields(obj, _PLANOGRAM_FIELDS, "planogram", required={"fixture", "placements"})
    fx = fixture_from_dict(obj["fixture"])
    if not isinstance(obj["placements"], list):
        raise ParseError("planogram.placements: expected a list")
    placements = []
    for i, p in enumerate(obj["placements"]):
        _check_fields(p, _PLACEMENT_FIELDS, f"planogram.placements[{i}]")
        try:
            placements.append(
                Placement(int(p["shelf_index"]), int(p["start_column"]), int(p["span_columns"]),
                          str(p["sku"]), int(p["facings"]))
            )
        except (TypeError, ValueError) as exc:
            raise ParseError(f"planogram.placements[{i}]: {exc}") from None
    return Planogram(fx, tuple(placements), str(obj.get("store_id", "")))


def _read_json(path: str | Path):
    text = Path(path).read_text(encoding="utf-8")
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}:{exc.lineno}: {exc.msg}") from None


def save_planogram(pg: Planogram, path: str | Path) -> None:
    Path(path).write_text(json.dumps(planogram_to_dict(pg), indent=2) + "\n", encoding="utf-8")


def load_planogram(path: str | Path) -> Planogram:
    return planogram_from_dict(_read_json(path))


def save_fixture(fx: Fixture, path: str | Path) -> None:
    Path(path).write_text(json.dumps(fixture_to_dict(fx), indent=2) + "\n", encoding="utf-8")


def load_fixture(path: str | Path) -> Fixture:
    return fixture_from_dict(_read_json(path))


def save_planograms_jsonl(planograms: Iterable[Planogram], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for pg in planograms:
            fh.write(json.dumps(planogram_to_dict(pg), separators=(",", ":")) + "\n")


def load_planograms_jsonl(path: str | Path) -> list[Planogram]:
    out = []
    with Path(path).open(encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"{path}:{line_no}: {exc.msg}") from None
            try:
                out.append(planogram_from_dict(obj))
            except ParseError as exc:
                raise ParseError(f"{path}:{line_no}: {exc}") from None
    return out
