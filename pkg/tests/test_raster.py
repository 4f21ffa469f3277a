import numpy as np
import pytest

from burnseg.errors import BoundsError, DimensionError, LabelDomainError
from burnseg.raster import (
    ALL_BANDS,
    BandId,
    BandStack,
    GeoRef,
    Grid2D,
    LabelRaster,
    crop,
    dn_from_reflectance,
    map_binary,
    reflectance_from_dn,
)


def test_band_native_resolutions():
    assert BandId.B02.native_resolution == 10
    assert BandId.B8A.native_resolution == 20
    assert BandId.B09.native_resolution == 60
    assert len(ALL_BANDS) == 12


def test_grid_rejects_bad_shapes_and_dtypes():
    with pytest.raises(DimensionError):
        Grid2D(np.zeros((3,)))
    with pytest.raises(DimensionError):
        Grid2D(np.zeros((0, 4)))
    with pytest.raises(DimensionError):
        Grid2D(np.zeros((2, 2), dtype=np.int32))


def test_grid_forces_contiguity():
    base = np.arange(24, dtype=np.float64).reshape(4, 6)
    view = base[:, ::2]
    g = Grid2D(view)
    assert g.data.flags["C_CONTIGUOUS"]
    assert np.array_equal(g.data, view)


def test_crop_matches_loop_oracle():
    rng = np.random.default_rng(5)
    arr = rng.uniform(size=(13, 17))
    g = Grid2D(arr)
    out = crop(g, 3, 5, 6, 7).data
    expect = np.empty((6, 7))
    for r in range(6):
        for c in range(7):
            expect[r, c] = arr[3 + r, 5 + c]
    assert np.array_equal(out, expect)


def test_crop_out_of_bounds():
    g = Grid2D(np.zeros((8, 8)))
    with pytest.raises(BoundsError):
        crop(g, 4, 4, 5, 4)
    with pytest.raises(BoundsError):
        crop(g, -1, 0, 2, 2)


def test_map_binary_elementwise():
    a = Grid2D(np.array([[1.0, 2.0], [3.0, 4.0]]))
    b = Grid2D(np.array([[10.0, 20.0], [30.0, 40.0]]))
    out = map_binary(a, b, lambda x, y: y - x)
    assert np.array_equal(out.data, np.array([[9.0, 18.0], [27.0, 36.0]]))
    with pytest.raises(DimensionError):
        map_binary(a, Grid2D(np.zeros((3, 2))), lambda x, y: x)


def test_georef_bounds():
    ref = GeoRef(origin_x=300000.0, origin_y=4500000.0,
                 pixel_size_x=10.0, pixel_size_y=-10.0, crs_code=32632)
    b = ref.bounds(100, 200)
    assert b["west"] == 300000.0
    assert b["east"] == 300000.0 + 200 * 10.0
    assert b["north"] == 4500000.0
    assert b["south"] == 4500000.0 - 100 * 10.0


def test_label_domains_enforced():
    LabelRaster(Grid2D(np.array([[0, 1], [255, 0]], dtype=np.uint8)), "delineation")
    with pytest.raises(LabelDomainError):
        LabelRaster(Grid2D(np.array([[0, 2]], dtype=np.uint8)), "delineation")
    LabelRaster(Grid2D(np.array([[10, 95], [100, 255]], dtype=np.uint8)), "worldcover")
    with pytest.raises(LabelDomainError):
        LabelRaster(Grid2D(np.array([[11]], dtype=np.uint8)), "worldcover")
    with pytest.raises(LabelDomainError):
        LabelRaster(Grid2D(np.array([[0]], dtype=np.uint8)), "no-such-kind")


def test_reflectance_round_trip():
    rng = np.random.default_rng(0)
    dn = rng.integers(0, 10001, size=(32, 32)).astype(np.uint16)
    refl = reflectance_from_dn(dn)
    assert refl.dtype == np.float64
    assert np.array_equal(dn_from_reflectance(refl), dn)


def test_bandstack_shape_consistency():
    g = Grid2D(np.zeros((4, 4)))
    BandStack(bands={BandId.B02: g, BandId.B03: Grid2D(np.ones((4, 4)))},
              pixel_size=10.0)
    with pytest.raises(DimensionError):
        BandStack(bands={BandId.B02: g, BandId.B03: Grid2D(np.zeros((4, 5)))},
                  pixel_size=10.0)


def test_bandstack_as_array_order():
    a = Grid2D(np.full((2, 2), 1.0))
    b = Grid2D(np.full((2, 2), 2.0))
    stack = BandStack(bands={BandId.B03: b, BandId.B02: a}, pixel_size=10.0)
    arr = stack.as_array([BandId.B02, BandId.B03])
    assert arr.shape == (2, 2, 2)
    assert arr[0, 0, 0] == 1.0 and arr[1, 0, 0] == 2.0
