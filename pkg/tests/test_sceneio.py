import math
import os

import numpy as np
import pytest

from burnseg.errors import (
    IncompleteSceneError,
    ManifestError,
    ShapeConsistencyError,
    SplitError,
)
from burnseg.raster import ALL_BANDS, BandId, GeoRef
from burnseg.sceneio import (
    DatasetManifest,
    SceneEntry,
    load_scene,
    split_manifest,
    write_scene_files,
)


def _entry(i=0, **kw):
    defaults = dict(
        id=f"s{i}",
        event_date="2021-08-0%d" % (i + 1),
        band_files={BandId.B04: f"s{i}/B04.tif"},
        landcover_file=f"s{i}/landcover.tif",
        cloud_file=f"s{i}/cloud.tif",
        delineation_file=f"s{i}/delineation.tif",
    )
    defaults.update(kw)
    return SceneEntry(**defaults)


def test_entry_requires_a_target():
    with pytest.raises(ManifestError):
        _entry(delineation_file=None)
    # severity alone is enough
    _entry(delineation_file=None, severity_file="s0/severity.tif")


def test_entry_rejects_empty_id_and_bad_taxonomy():
    with pytest.raises(ManifestError):
        _entry(id="")
    with pytest.raises(ManifestError):
        _entry(landcover_taxonomy="corine")


def test_entry_dict_round_trip():
    e = _entry(3, severity_file="s3/severity.tif",
               aoi_bounds={"west": 1.0, "east": 2.0})
    d = e.to_dict()
    back = SceneEntry.from_dict(d)
    assert back == e
    with pytest.raises(ManifestError):
        SceneEntry.from_dict({**d, "surprise": 1})
    with pytest.raises(ManifestError):
        SceneEntry.from_dict({**d, "band_files": {"B99": "x.tif"}})


def test_manifest_rejects_duplicates_and_bad_splits():
    with pytest.raises(ManifestError):
        DatasetManifest(entries=[_entry(0), _entry(0)])
    entries = [_entry(i) for i in range(4)]
    with pytest.raises(ManifestError):
        DatasetManifest(entries=entries, splits={"train": ["nope"]})
    with pytest.raises(ManifestError):
        DatasetManifest(entries=entries,
                        splits={"train": ["s0", "s1"], "val": ["s1"], "test": ["s2", "s3"]})
    with pytest.raises(ManifestError):  # s3 unassigned
        DatasetManifest(entries=entries,
                        splits={"train": ["s0", "s1"], "val": ["s2"]})
    with pytest.raises(ManifestError):
        DatasetManifest(entries=entries, splits={"holdout": ["s0"]})
    DatasetManifest(entries=entries,
                    splits={"train": ["s0", "s1"], "val": ["s2"], "test": ["s3"]})


def test_manifest_save_load_identity(tmp_path):
    entries = [_entry(i) for i in range(5)]
    m = DatasetManifest(entries=entries,
                        splits={"train": ["s0", "s1", "s2"], "val": ["s3"], "test": ["s4"]},
                        meta={"generator": {"seed": 9}})
    p1 = str(tmp_path / "m.json")
    m.save(p1)
    m2 = DatasetManifest.load(p1)
    assert m2.to_dict() == m.to_dict()
    p2 = str(tmp_path / "m2.json")
    m2.save(p2)
    assert open(p1, "rb").read() == open(p2, "rb").read()


def test_manifest_load_rejects_garbage(tmp_path):
    p = str(tmp_path / "bad.json")
    open(p, "w").write("{not json")
    with pytest.raises(ManifestError):
        DatasetManifest.load(p)
    open(p, "w").write('["a", "b"]')
    with pytest.raises(ManifestError):
        DatasetManifest.load(p)


def test_split_sizes_and_determinism():
    m = DatasetManifest(entries=[_entry(i) for i in range(88)])
    s1 = split_manifest(m, 64 / 88, 8 / 88, seed=20240)
    assert [len(s1.splits[k]) for k in ("train", "val", "test")] == [64, 8, 16]
    s2 = split_manifest(m, 64 / 88, 8 / 88, seed=20240)
    assert s1.splits == s2.splits
    s3 = split_manifest(m, 64 / 88, 8 / 88, seed=1)
    assert s1.splits != s3.splits
    # disjoint and exhaustive
    all_ids = sorted(sum((s1.splits[k] for k in s1.splits), []))
    assert all_ids == sorted(e.id for e in m.entries)


def test_split_rejects_degenerate_setups():
    m = DatasetManifest(entries=[_entry(i) for i in range(10)])
    with pytest.raises(SplitError):
        split_manifest(m, 1.0, 0.0, seed=0)
    with pytest.raises(SplitError):
        split_manifest(DatasetManifest(entries=[_entry(0), _entry(1)]), 0.4, 0.3, seed=0)


def _write_one_scene(tmp_path, shape=(24, 24)):
    rng = np.random.default_rng(0)
    h, w = shape
    georef = GeoRef(300000.0, 4400000.0, 10.0, -10.0, crs_code=32632)
    band_dn = {}
    for bid in (BandId.B04, BandId.B08, BandId.B8A, BandId.B09):
        f = bid.native_resolution // 10
        s = (math.ceil(h / f), math.ceil(w / f))
        band_dn[bid] = (rng.integers(0, 10000, size=s).astype(np.uint16), f)
    labels = {
        "landcover": np.full(shape, 10, dtype=np.uint8),
        "cloud": (rng.random(shape) < 0.1).astype(np.uint8),
        "delineation": (rng.random(shape) < 0.3).astype(np.uint8),
    }
    entry = write_scene_files(str(tmp_path), "sc-1", band_dn, labels,
                              georef=georef, event_date="2021-07-15")
    return entry, band_dn, labels


def test_scene_write_load_round_trip(tmp_path):
    entry, band_dn, labels = _write_one_scene(tmp_path)
    m = DatasetManifest(entries=[entry])
    scene = load_scene(m, "sc-1", str(tmp_path),
                       bands=(BandId.B04, BandId.B08, BandId.B8A, BandId.B09))
    assert scene.label_shape == (24, 24)
    # digital numbers survive the reflectance scaling exactly
    for bid, (dn, f) in band_dn.items():
        np.testing.assert_array_equal(
            np.rint(scene.bands[bid].data * 10000).astype(np.uint16), dn)
        assert scene.band_factor(bid) == f
    assert np.array_equal(scene.cloud.data, labels["cloud"])
    assert np.array_equal(scene.delineation.data, labels["delineation"])
    assert scene.georef is not None and scene.georef.crs_code == 32632
    assert entry.aoi_bounds["west"] == 300000.0


def test_load_scene_missing_band(tmp_path):
    entry, _, _ = _write_one_scene(tmp_path)
    m = DatasetManifest(entries=[entry])
    with pytest.raises(IncompleteSceneError):
        load_scene(m, "sc-1", str(tmp_path), bands=ALL_BANDS)


def test_load_scene_shape_mismatch_detected(tmp_path):
    entry, band_dn, labels = _write_one_scene(tmp_path)
    # rewrite B8A at the wrong size
    from burnseg.tiffio import TiffImage, write_tiff
    bad = np.zeros((5, 5), dtype=np.uint16)
    write_tiff(os.path.join(str(tmp_path), entry.band_files[BandId.B8A]), TiffImage(bad))
    m = DatasetManifest(entries=[entry])
    with pytest.raises(ShapeConsistencyError):
        load_scene(m, "sc-1", str(tmp_path), bands=(BandId.B04, BandId.B8A))


def test_write_scene_rejects_wrong_factor_shape(tmp_path):
    labels = {"landcover": np.full((24, 24), 10, dtype=np.uint8),
              "cloud": np.zeros((24, 24), dtype=np.uint8),
              "delineation": np.zeros((24, 24), dtype=np.uint8)}
    band_dn = {BandId.B8A: (np.zeros((24, 24), dtype=np.uint16), 2)}  # should be 12x12
    with pytest.raises(ShapeConsistencyError):
        write_scene_files(str(tmp_path), "bad", band_dn, labels,
                          georef=None, event_date="2021-01-01")
