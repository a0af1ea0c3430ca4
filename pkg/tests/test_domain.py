import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from planoforge.domain import (
    EMPTY_CODE,
    NORMALIZATION,
    SKU,
    Catalog,
    DomainError,
    Fixture,
    InvariantError,
    OverlapError,
    ParseError,
    Placement,
    Planogram,
    UnknownSkuError,
    check_planogram,
    decode,
    encode,
    fixture_from_dict,
    fixture_to_dict,
    load_catalog,
    load_planogram,
    planogram_from_dict,
    save_catalog,
    save_planogram,
)

from conftest import make_product


def test_codes_sorted_by_category_then_sku(small_catalog):
    skus = [p.sku for p in small_catalog]
    assert skus == ["A1", "B1", "B2", "D1", "D2"]
    codes = [small_catalog.code(s) for s in skus]
    np.testing.assert_allclose(codes, [-1 + 2 * (j + 1) / 5 for j in range(5)])
    assert small_catalog.knots[0] == EMPTY_CODE


def test_duplicate_sku_is_named():
    with pytest.raises(DomainError, match="X9"):
        Catalog([make_product("X9"), make_product("X9")])


def test_unknown_sku_lookup(small_catalog):
    with pytest.raises(UnknownSkuError):
        small_catalog["nope"]


def test_product_rejects_zero_weight():
    with pytest.raises(InvariantError):
        make_product("Z", weight=0.0)


def test_fixture_rejects_tall_shelves():
    with pytest.raises(InvariantError):
        Fixture(100, 50, 2, ((30, 10), (30, 10)))


def test_empty_planogram_encodes_to_empty_codes(small_fixture, small_catalog):
    x = encode(Planogram(small_fixture), small_catalog)
    assert np.all(x.grid[SKU] == EMPTY_CODE)
    assert decode(x, small_catalog, small_fixture).placements == ()


def test_single_product_occupies_two_cells(small_fixture, small_catalog):
    pg = Planogram(small_fixture, (Placement(0, 0, 2, "B1", 1),))
    x = encode(pg, small_catalog)
    assert int(np.sum(x.grid[SKU] != EMPTY_CODE)) == 2


def test_round_trip(small_planogram, small_catalog, small_fixture):
    x = encode(small_planogram, small_catalog)
    assert decode(x, small_catalog, small_fixture, "store-x") == small_planogram
    assert np.array_equal(encode(decode(x, small_catalog, small_fixture), small_catalog).grid, x.grid)


def test_overlap_is_reported_with_shelf_and_column(small_fixture, small_catalog):
    pg = Planogram(small_fixture, (Placement(1, 0, 3, "D2"), Placement(1, 2, 2, "B1")))
    with pytest.raises(OverlapError, match="shelf 1 column 2"):
        check_planogram(pg, small_catalog)


def test_encode_rejects_unknown_sku(small_fixture, small_catalog):
    with pytest.raises(UnknownSkuError):
        encode(Planogram(small_fixture, (Placement(0, 0, 2, "ghost"),)), small_catalog)


def test_decode_shape_mismatch(small_fixture, small_catalog):
    with pytest.raises(DomainError):
        decode(np.zeros((5, 2, 2)), small_catalog, small_fixture)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.1, 10.0))
def test_decode_is_total_on_noise(small_fixture, small_catalog, seed, scale):
    grid = np.random.default_rng(seed).normal(0.0, scale, small_fixture.grid_shape)
    pg = decode(grid, small_catalog, small_fixture)
    check_planogram(pg, small_catalog)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=5, max_size=5))
def test_normalization_invertible(vals):
    raw = np.array(vals).reshape(5, 1, 1)
    np.testing.assert_allclose(NORMALIZATION.denormalize(NORMALIZATION.normalize(raw)), raw, rtol=1e-9, atol=1e-9)


def test_catalog_csv_round_trip(tmp_path, small_catalog):
    save_catalog(small_catalog, tmp_path / "c.csv")
    assert load_catalog(tmp_path / "c.csv") == small_catalog


def test_catalog_parse_error_names_line_and_field(tmp_path, small_catalog):
    path = tmp_path / "c.csv"
    save_catalog(small_catalog, path)
    lines = path.read_text().splitlines()
    fields = lines[2].split(",")
    fields[4] = "heavy"
    lines[2] = ",".join(fields)
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(ParseError, match=r":3: field 'weight_kg'"):
        load_catalog(path)


def test_catalog_zero_weight_row_lists_record(tmp_path, small_catalog):
    path = tmp_path / "c.csv"
    save_catalog(small_catalog, path)
    lines = path.read_text().splitlines()
    fields = lines[1].split(",")
    fields[4] = "0"
    lines[1] = ",".join(fields)
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(InvariantError) as err:
        load_catalog(path)
    assert any("line 2" in v for v in err.value.violations)


def test_planogram_json_round_trip(tmp_path, small_planogram):
    save_planogram(small_planogram, tmp_path / "p.json")
    assert load_planogram(tmp_path / "p.json") == small_planogram


def test_unknown_json_field_rejected(small_planogram, small_fixture):
    from planoforge.domain import planogram_to_dict

    obj = planogram_to_dict(small_planogram)
    obj["colour"] = "red"
    with pytest.raises(DomainError):
        planogram_from_dict(obj)
    fobj = fixture_to_dict(small_fixture)
    assert fixture_from_dict(json.loads(json.dumps(fobj))) == small_fixture
