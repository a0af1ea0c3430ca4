"""Synthetic multi-store planogram corpus and the two training augmentations.

Every store gets its own fixture and a Dirichlet-skewed category preference,
so layouts share structure within a store and differ across stores.
Planograms are built by constructive shelf filling and are only emitted once
they pass every hard constraint.
"""

from __future__ import annotations

import json
import math
from collections.abc import Sequence
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .constraints import AGE, BRAND, Constraint, default_constraints, save_constraints, validate
from .domain import (
    Catalog,
    Fixture,
    Placement,
    Planogram,
    Product,
    load_catalog,
    load_planograms_jsonl,
    save_catalog,
    save_planograms_jsonl,
)

CATEGORIES = ("alcohol", "bakery", "beverages", "canned", "cleaning", "dairy", "snacks", "tobacco")
AGE_RESTRICTED = frozenset({"alcohol", "tobacco"})
MAX_ATTEMPTS = 200
MIN_CLEARANCE = 22.0


class InfeasibleConfigError(RuntimeError):
    pass


@dataclass(frozen=True)
class CorpusConfig:
    store_count: int = 50
    planograms_per_store: int = 10
    catalog_size: int = 120
    category_count: int = 8
    shelf_range: tuple[int, int] = (3, 5)
    slot_columns: int = 16
    width_range: tuple[float, float] = (90.0, 150.0)
    height_range: tuple[float, float] = (150.0, 210.0)
    capacity_range: tuple[float, float] = (10.0, 45.0)
    rng_seed: int = 7
    store_style_variance: float = 0.5

    def __post_init__(self):
        for name in ("store_count", "planograms_per_store", "catalog_size", "category_count", "slot_columns"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not 1 <= self.category_count <= len(CATEGORIES):
            raise ValueError(f"category_count must be in [1, {len(CATEGORIES)}]")
        lo, hi = self.shelf_range
        if not 1 <= lo <= hi:
            raise ValueError("shelf_range must satisfy 1 <= lo <= hi")
        if not 0.0 <= self.store_style_variance <= 1.0:
            raise ValueError("store_style_variance must be in [0, 1]")

    @classmethod
    def from_dict(cls, obj: dict) -> CorpusConfig:
        obj = dict(obj)
        for key in ("shelf_range", "width_range", "height_range", "capacity_range"):
            if key in obj:
                obj[key] = tuple(obj[key])
        return cls(**obj)


@dataclass
class Dataset:
    config: CorpusConfig
    catalog: Catalog
    constraints: tuple[Constraint, ...]
    planograms: list[Planogram]
    stores: list[dict] = field(default_factory=list)

    def fixtures(self) -> list[Fixture]:
        return [pg.fixture for pg in self.planograms]


def generate_catalog(config: CorpusConfig, rng: np.random.Generator | None = None) -> Catalog:
    rng = rng or np.random.default_rng([config.rng_seed, 0xCA7])
    cats = CATEGORIES[: config.category_count]
    products = []
    for i in range(config.catalog_size):
        cat = cats[i % len(cats)]
        brand = f"{cat}-b{rng.integers(0, 3)}"
        price = float(np.round(rng.uniform(1.0, 30.0), 2))
        margin_frac = rng.uniform(0.1, 0.4) if rng.random() > 0.05 else -rng.uniform(0.0, 0.1)
        products.append(
            Product(
                sku=f"SKU{i:04d}",
                width_cm=float(np.round(rng.uniform(5.0, 24.0), 1)),
                height_cm=float(np.round(rng.uniform(8.0, 36.0), 1)),
                depth_cm=float(np.round(rng.uniform(5.0, 30.0), 1)),
                weight_kg=float(np.round(rng.uniform(0.2, 2.5), 2)),
                category=cat,
                brand=brand,
                price=price,
                margin=float(np.round(price * margin_frac, 2)),
                age_restricted=cat in AGE_RESTRICTED,
            )
        )
    return Catalog(products)


def corpus_constraints(catalog: Catalog) -> tuple[Constraint, ...]:
    """Default constraint set with brand contracts on the two largest non-restricted brands."""
    counts: dict[str, int] = {}
    for p in catalog:
        if not p.age_restricted:
            counts[p.brand] = counts.get(p.brand, 0) + 1
    top = sorted(counts, key=lambda b: (-counts[b], b))[:2]
    bands = [(1, 2), (0, 1)]
    return default_constraints(catalog, [{"brand": b, "shelf_min": lo, "shelf_max": hi} for b, (lo, hi) in zip(top, bands)])


def _store_rng(seed: int, store: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, store]))


def sample_fixture(config: CorpusConfig, rng: np.random.Generator) -> Fixture:
    shelves = int(rng.integers(config.shelf_range[0], config.shelf_range[1] + 1))
    width = float(np.round(rng.uniform(*config.width_range), 1))
    height = float(np.round(rng.uniform(*config.height_range), 1))
    while True:
        shares = rng.dirichlet(np.full(shelves, 20.0))
        clear = np.floor(0.95 * height * shares * 10) / 10
        if clear.min() >= MIN_CLEARANCE:
            break
    caps = np.round(rng.uniform(*config.capacity_range, size=shelves), 1)
    return Fixture(width, height, shelves, tuple(zip(clear.tolist(), caps.tolist())), config.slot_columns)


def _contract_bands(constraints: Sequence[Constraint]) -> dict[str, tuple[int, int]]:
    bands = {}
    for c in constraints:
        if c.kind == BRAND:
            for k in c.params["contracts"]:
                bands[k["brand"]] = (k["shelf_min"], k["shelf_max"])
    return bands


def _min_age_shelf(constraints: Sequence[Constraint]) -> int:
    vals = [int(c.params["min_shelf_index"]) for c in constraints if c.kind == AGE]
    return max(vals) if vals else 0


def _fill_shelf(
    shelf: int,
    fixture: Fixture,
    catalog: Catalog,
    preference: dict[str, float],
    constraints: Sequence[Constraint],
    rng: np.random.Generator,
) -> list[Placement]:
    clearance, capacity = fixture.per_shelf[shelf]
    cw = fixture.column_width
    bands = _contract_bands(constraints)
    allowed = [c for c in catalog.categories if c not in AGE_RESTRICTED or shelf >= _min_age_shelf(constraints)]
    weights = np.array([preference.get(c, 0.0) for c in allowed]) + 1e-6
    n_cats = min(len(allowed), 1 + int(rng.random() < 0.5))
    chosen = list(rng.choice(allowed, size=n_cats, replace=False, p=weights / weights.sum()))

    def usable(p: Product) -> bool:
        if p.height_cm > clearance:
            return False
        band = bands.get(p.brand)
        return band is None or band[0] <= shelf <= band[1]

    candidates = []
    for rank, cat in enumerate(chosen):
        pool = [p for p in catalog.by_category(cat) if usable(p)]
        order = rng.permutation(len(pool))
        candidates += sorted(((rank, pool[i].brand, j, pool[i]) for j, i in enumerate(order)), key=lambda r: r[:3])

    placements = []
    cursor, load = 0, 0.0
    for *_, prod in candidates:
        facings = int(rng.integers(1, 4))
        while facings >= 1:
            span = fixture.span_for(prod, facings)
            canonical = int(math.floor(span * cw / prod.width_cm * (1 + 1e-9)))
            if cursor + span <= fixture.slot_columns and load + canonical * prod.weight_kg <= capacity:
                facings = canonical
                break
            facings -= 1
        if facings < 1:
            continue
        placements.append(Placement(shelf, cursor, span, prod.sku, facings))
        cursor += span
        load += facings * prod.weight_kg
        if cursor >= fixture.slot_columns:
            break
    return placements


def build_planogram(
    fixture: Fixture,
    catalog: Catalog,
    constraints: Sequence[Constraint],
    preference: dict[str, float],
    rng: np.random.Generator,
    store_id: str = "",
) -> Planogram:
    """Constructive fill of every shelf; retried until all constraints hold."""
    for _ in range(MAX_ATTEMPTS):
        placements = []
        for s in range(fixture.shelf_count):
            placements += _fill_shelf(s, fixture, catalog, preference, constraints, rng)
        shelves_used = {p.shelf_index for p in placements}
        if len(shelves_used) < fixture.shelf_count:
            continue
        pg = Planogram(fixture, tuple(placements), store_id)
        if validate(pg, constraints, catalog).overall == 1.0:
            return pg
    raise InfeasibleConfigError(
        f"could not fill fixture {fixture} under the constraints after {MAX_ATTEMPTS} attempts"
    )


def generate_corpus(
    config: CorpusConfig,
    constraints: Sequence[Constraint] | None = None,
    catalog: Catalog | None = None,
) -> Dataset:
    """Deterministic synthetic corpus; every planogram passes hard validation."""
    catalog = catalog or generate_catalog(config)
    constraints = tuple(constraints) if constraints is not None else corpus_constraints(catalog)
    categories = list(catalog.categories)
    alpha = 1.0 / (config.store_style_variance + 0.05)
    planograms, stores = [], []
    for store in range(config.store_count):
        rng = _store_rng(config.rng_seed, store)
        fixture = sample_fixture(config, rng)
        pref = dict(zip(categories, rng.dirichlet(np.full(len(categories), alpha)).tolist()))
        store_id = f"store-{store:03d}"
        stores.append({"store_id": store_id, "category_preference": pref})
        for _ in range(config.planograms_per_store):
            planograms.append(build_planogram(fixture, catalog, constraints, pref, rng, store_id))
    return Dataset(config, catalog, constraints, planograms, stores)


# ----------------------------------------------------------------------------
# augmentation


def _valid(pg: Planogram, catalog: Catalog, constraints: Sequence[Constraint]) -> bool:
    return validate(pg, constraints, catalog).overall == 1.0


def _same_sku_adjacent(pg: Planogram) -> bool:
    for s in range(pg.fixture.shelf_count):
        row = pg.on_shelf(s)
        for a, b in zip(row, row[1:]):
            if a.sku == b.sku and a.end_column == b.start_column:
                return True
    return False


def substitute(
    planogram: Planogram, rng: np.random.Generator, catalog: Catalog, constraints: Sequence[Constraint]
) -> Planogram:
    """Swap one placement's product for a same-category product on the same span.

    Returns the input unchanged when no legal substitute exists.
    """
    if not planogram.placements:
        return planogram
    fx = planogram.fixture
    cw = fx.column_width
    idx = int(rng.integers(len(planogram.placements)))
    target = planogram.placements[idx]
    old = catalog[target.sku]
    pool = [p for p in catalog.by_category(old.category) if p.sku != old.sku]
    for j in rng.permutation(len(pool)):
        prod = pool[j]
        facings = int(math.floor(target.span_columns * cw / prod.width_cm * (1 + 1e-9)))
        if facings < 1:
            continue
        new = Placement(target.shelf_index, target.start_column, target.span_columns, prod.sku, facings)
        placements = list(planogram.placements)
        placements[idx] = new
        candidate = planogram.replace(placements)
        if not _same_sku_adjacent(candidate) and _valid(candidate, catalog, constraints):
            return candidate
    return planogram


def rotate_shelves(
    planogram: Planogram, rng: np.random.Generator, catalog: Catalog, constraints: Sequence[Constraint]
) -> Planogram:
    """Exchange the contents of two compatible shelves.

    Returns the input unchanged when no exchange keeps every constraint satisfied.
    """
    S = planogram.fixture.shelf_count
    pairs = [(a, b) for a in range(S) for b in range(a + 1, S)]
    for j in rng.permutation(len(pairs)) if pairs else []:
        a, b = pairs[j]
        swap = {a: b, b: a}
        placements = [
            Placement(swap.get(p.shelf_index, p.shelf_index), p.start_column, p.span_columns, p.sku, p.facings)
            for p in planogram.placements
        ]
        candidate = planogram.replace(placements)
        if _valid(candidate, catalog, constraints):
            return candidate
    return planogram


def augment(
    planogram: Planogram, rng: np.random.Generator, catalog: Catalog, constraints: Sequence[Constraint]
) -> Planogram:
    """Random product substitution or shelf rotation (equal odds)."""
    if rng.random() < 0.5:
        return substitute(planogram, rng, catalog, constraints)
    return rotate_shelves(planogram, rng, catalog, constraints)


# ----------------------------------------------------------------------------
# files


def write_dataset(dataset: Dataset, directory: str | Path) -> Path:
    """``planograms.jsonl``, ``catalog.csv``, ``constraints.json`` and ``manifest.json``."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    save_planograms_jsonl(dataset.planograms, out / "planograms.jsonl")
    save_catalog(dataset.catalog, out / "catalog.csv")
    save_constraints(dataset.constraints, out / "constraints.json")
    manifest = {
        "config": asdict(dataset.config),
        "rng_seed": dataset.config.rng_seed,
        "planogram_count": len(dataset.planograms),
        "stores": dataset.stores,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return out


def read_dataset(directory: str | Path) -> Dataset:
    from .constraints import load_constraints

    d = Path(directory)
    manifest = json.loads((d / "manifest.json").read_text(encoding="utf-8"))
    return Dataset(
        CorpusConfig.from_dict(manifest["config"]),
        load_catalog(d / "catalog.csv"),
        load_constraints(d / "constraints.json"),
        load_planograms_jsonl(d / "planograms.jsonl"),
        manifest.get("stores", []),
    )
