"""Random planogram generators shared by the property and acceptance tests."""

import math

import numpy as np

from planoforge.domain import Fixture, Placement, Planogram


def random_fixture(rng, shelves=None, columns=16):
    S = int(shelves or rng.integers(3, 6))
    clear = rng.uniform(15.0, 45.0, S)
    caps = rng.uniform(5.0, 40.0, S)
    return Fixture(float(rng.uniform(80, 150)), float(clear.sum() + rng.uniform(0, 20)), S,
                   tuple(zip(clear, caps)), columns)


def random_planogram(rng, catalog, fixture=None, fill=0.7, store_id=""):
    """Structurally valid placements with no regard for the soft constraints."""
    fx = fixture or random_fixture(rng)
    cw = fx.column_width
    products = catalog.products
    out = []
    for s in range(fx.shelf_count):
        k = 0
        while k < fx.slot_columns:
            if rng.random() > fill:
                k += 1
                continue
            prod = products[int(rng.integers(len(products)))]
            facings = int(rng.integers(1, 4))
            span = max(1, math.ceil(facings * prod.width_cm / cw - 1e-9))
            span += int(rng.integers(0, 2))
            if k + span > fx.slot_columns:
                break
            facings = max(1, min(facings, int(math.floor(span * cw / prod.width_cm + 1e-9))))
            if facings * prod.width_cm > span * cw:
                k += 1
                continue
            out.append(Placement(s, k, span, prod.sku, facings))
            k += span
    return Planogram(fx, tuple(out), store_id)
