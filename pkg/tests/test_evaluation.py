import itertools
import math
from fractions import Fraction

import numpy as np
import pytest

from planoforge import numerics as nx
from planoforge.constraints import KINDS, GridContext
from planoforge.domain import Catalog, Fixture, Placement, Planogram, encode
from planoforge.evaluation import (
    RevenueModel,
    RunReport,
    SampleRecord,
    build_report,
    expected_revenue,
    revenue_scale,
    space_utilization,
    tensor_revenue,
)

from conftest import make_product


def test_empty_planogram(small_fixture, small_catalog):
    pg = Planogram(small_fixture)
    assert expected_revenue(pg, small_catalog, RevenueModel()) == 0.0
    assert space_utilization(pg) == 0.0


def test_revenue_arithmetic():
    cat = Catalog([make_product("P", "dairy", width=5.0, margin=3.0)])
    fx = Fixture(50, 40, 1, ((30, 10),), 10)
    pg = Planogram(fx, (Placement(0, 0, 2, "P", 2),))
    rm = RevenueModel({"dairy": 1.0}, position_multipliers=(1.5,))
    assert expected_revenue(pg, cat, rm) == pytest.approx(9.0)


def test_unknown_category_uses_one(caplog):
    rm = RevenueModel({"dairy": 2.0})
    assert rm.demand("bakery") == 1.0


def test_full_utilization(small_fixture):
    pgs = [Placement(s, 0, 8, "D2", 4) for s in range(3)]
    assert space_utilization(Planogram(small_fixture, tuple(pgs))) == 1.0


def test_eye_level_rule():
    fx = Fixture(100, 200, 4, ((50, 10),) * 4)
    assert list(RevenueModel().multipliers(fx)) == [1.0, 1.0, 1.5, 1.0]


def test_moving_to_higher_multiplier_never_decreases_revenue():
    cat = Catalog([make_product(f"P{i}", "dairy", width=5.0, margin=1.0 + i) for i in range(5)])
    fx = Fixture(50, 100, 3, ((30, 50),) * 3, 10)
    rm = RevenueModel(position_multipliers=(1.0, 1.5, 1.2))
    base = tuple(Placement(0, 2 * i, 2, f"P{i}", 2) for i in range(5))
    pg = Planogram(fx, base)
    before = expected_revenue(pg, cat, rm)
    for i, shelf in itertools.product(range(5), (1, 2)):
        moved = list(base)
        moved[i] = Placement(shelf, 2 * i, 2, f"P{i}", 2)
        assert expected_revenue(pg.replace(moved), cat, rm) >= before


def test_utilization_matches_cell_count(corpus):
    cells = total = 0
    for pg in corpus.planograms:
        occ = np.zeros((pg.fixture.shelf_count, pg.fixture.slot_columns), dtype=bool)
        for p in pg.placements:
            occ[p.shelf_index, p.start_column:p.end_column] = True
        cells += occ.sum()
        total += occ.size
    direct = sum(Fraction(int(sum(p.span_columns for p in pg.placements)),
                          pg.fixture.shelf_count * pg.fixture.slot_columns) for pg in corpus.planograms)
    rep = build_report(corpus.planograms, corpus.constraints, corpus.catalog)
    assert rep.utilization["mean"] == float(direct / len(corpus.planograms))


def test_tensor_revenue_matches_planogram_revenue(corpus):
    rm = RevenueModel()
    pgs = corpus.planograms[:20]
    by_shape = {}
    for pg in pgs:
        by_shape.setdefault(pg.fixture.shelf_count, []).append(pg)
    for group in by_shape.values():
        ctx = GridContext.build(corpus.catalog, [p.fixture for p in group])
        x = nx.constant(np.stack([encode(p, corpus.catalog).grid for p in group]))
        got = tensor_revenue(x, ctx, rm).data
        want = [expected_revenue(p, corpus.catalog, rm) / revenue_scale(p.fixture, corpus.catalog, rm) for p in group]
        np.testing.assert_allclose(got, want, rtol=1e-9)


def test_single_compliant_sample(corpus):
    rep = build_report(corpus.planograms[:1], corpus.constraints, corpus.catalog)
    assert rep.satisfaction == {k: 1.0 for k in KINDS}


def test_partition_merge(corpus):
    pgs = corpus.planograms[:60]
    whole = build_report(pgs, corpus.constraints, corpus.catalog)
    parts = [build_report(pgs[a:b], corpus.constraints, corpus.catalog) for a, b in ((0, 7), (7, 33), (33, 60))]
    assert parts[0].merge(*parts[1:]) == whole


def test_empty_sample_set_rejected(corpus):
    with pytest.raises(ValueError):
        build_report([], corpus.constraints, corpus.catalog)


def test_render_has_five_rows():
    recs = tuple(SampleRecord("s", tuple((k, True) for k in KINDS), Fraction(1, 2), 1.0) for _ in range(3))
    text = RunReport(recs).render()
    assert text.count("%") >= 6
    assert "Overall average" in text
