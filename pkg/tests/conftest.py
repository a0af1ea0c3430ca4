import numpy as np
import pytest

from planoforge.constraints import default_constraints
from planoforge.corpus import CorpusConfig, generate_corpus
from planoforge.domain import Catalog, Fixture, Placement, Planogram, Product


def make_product(sku, category="dairy", width=10.0, height=20.0, weight=1.0, margin=1.0,
                 brand=None, age=False, price=5.0):
    return Product(sku, width, height, 10.0, weight, category, brand or f"{category}-b0", price, margin, age)


@pytest.fixture(scope="session")
def small_catalog():
    return Catalog([
        make_product("A1", "alcohol", width=8, height=30, age=True, brand="alcohol-b0"),
        make_product("B1", "bakery", width=12, height=15, margin=2.0),
        make_product("B2", "bakery", width=6, height=18, margin=0.5, brand="bakery-b1"),
        make_product("D1", "dairy", width=10, height=25, weight=2.0),
        make_product("D2", "dairy", width=15, height=12, margin=3.0),
    ])


@pytest.fixture(scope="session")
def small_fixture():
    return Fixture(80.0, 120.0, 3, ((40.0, 20.0), (40.0, 20.0), (40.0, 20.0)), slot_columns=8)


@pytest.fixture
def small_planogram(small_fixture):
    return Planogram(small_fixture, (
        Placement(0, 0, 2, "B1", 1),
        Placement(0, 2, 1, "B2", 1),
        Placement(1, 0, 3, "D2", 1),
        Placement(2, 4, 2, "A1", 2),
    ), "store-x")


@pytest.fixture(scope="session")
def small_constraints(small_catalog):
    return default_constraints(small_catalog, [{"brand": "bakery-b1", "shelf_min": 0, "shelf_max": 1}])


@pytest.fixture(scope="session")
def corpus():
    return generate_corpus(CorpusConfig())


@pytest.fixture(scope="session")
def tiny_corpus():
    return generate_corpus(CorpusConfig(store_count=4, planograms_per_store=5, catalog_size=40))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
