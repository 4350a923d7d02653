import json
import shutil
import struct
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from make_fixtures import golden_pair
from s4sits.data_io import Manifest, load_manifest, read_sample, validate_manifest, write_manifest, write_sample
from s4sits.errors import CorruptArchive, MissingFile, UnsupportedSchema
from s4sits.sits_core import Modality, ModalitySeries, SitsPair
from s4sits.synthetic import WorldConfig, generate_dataset, generate_sample

GOLDEN = Path(__file__).parent / "fixtures" / "golden"
FILES = ("header.json", "radar.bin", "optical.bin", "label.bin", "cloud.bin")


def test_round_trip(tmp_path):
    pair = generate_sample(WorldConfig(seed=1), 0)
    back = read_sample(write_sample(pair, tmp_path / "s"))
    assert back.equals(pair)
    assert back.optical.data.tobytes() == pair.optical.data.tobytes()
    assert back.label.dtype == np.int32 and back.cloud_mask.dtype == bool


def test_round_trip_without_optional_blobs(tmp_path):
    pair = generate_sample(WorldConfig(seed=1), 0)
    bare = SitsPair(pair.location_id, pair.radar, pair.optical)
    back = read_sample(write_sample(bare, tmp_path / "s"))
    assert back.label is None and back.cloud_mask is None
    assert not (tmp_path / "s" / "label.bin").exists()


def test_write_twice_identical(tmp_path):
    pair = generate_sample(WorldConfig(seed=2), 1)
    write_sample(pair, tmp_path / "a")
    write_sample(pair, tmp_path / "b")
    for name in FILES:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_blob_length(tmp_path):
    rng = np.random.default_rng(0)
    pair = SitsPair(
        "x",
        ModalitySeries(rng.random((4, 2, 16, 16), dtype=np.float32), [1, 2, 3, 4], Modality.RADAR),
        ModalitySeries(rng.random((4, 3, 16, 16), dtype=np.float32), [1, 2, 3, 4], Modality.OPTICAL),
    )
    write_sample(pair, tmp_path)
    assert (tmp_path / "optical.bin").stat().st_size == 12288


def test_golden_bytes_match(tmp_path):
    write_sample(golden_pair(), tmp_path)
    for name in FILES:
        assert (tmp_path / name).read_bytes() == (GOLDEN / name).read_bytes(), name


def test_golden_is_little_endian():
    # decode by hand with explicit '<' formats, independent of numpy and host order
    radar = struct.unpack("<16f", (GOLDEN / "radar.bin").read_bytes())
    assert radar == tuple(i * 0.5 - 1.0 for i in range(16))
    assert struct.unpack("<4i", (GOLDEN / "label.bin").read_bytes()) == (0, 1, 258, -1)
    assert (GOLDEN / "label.bin").read_bytes()[8:12] == b"\x02\x01\x00\x00"
    assert (GOLDEN / "cloud.bin").read_bytes() == b"\x01\x00\x00\x01"
    assert read_sample(GOLDEN).equals(golden_pair())


def _copy_golden(tmp_path):
    dst = tmp_path / "g"
    shutil.copytree(GOLDEN, dst)
    return dst


def test_truncated_blob(tmp_path):
    d = _copy_golden(tmp_path)
    (d / "optical.bin").write_bytes((d / "optical.bin").read_bytes()[:-1])
    with pytest.raises(CorruptArchive):
        read_sample(d)


def test_header_shape_disagreement(tmp_path):
    d = _copy_golden(tmp_path)
    header = json.loads((d / "header.json").read_text())
    header["radar"]["shape"] = [2, 2, 4, 1]
    (d / "header.json").write_text(json.dumps(header))
    with pytest.raises(CorruptArchive):
        read_sample(d)


def test_missing_blob(tmp_path):
    d = _copy_golden(tmp_path)
    (d / "label.bin").unlink()
    with pytest.raises(CorruptArchive):
        read_sample(d)


def test_unknown_schema(tmp_path):
    d = _copy_golden(tmp_path)
    header = json.loads((d / "header.json").read_text())
    header["schema_version"] = 99
    (d / "header.json").write_text(json.dumps(header))
    with pytest.raises(UnsupportedSchema):
        read_sample(d)


def test_missing_header(tmp_path):
    with pytest.raises(MissingFile):
        read_sample(tmp_path)


@settings(max_examples=100, deadline=None)
@given(
    seed=st.integers(0, 2**63 - 1),
    hw=st.integers(8, 12),
    t_opt=st.integers(1, 5),
    t_rad=st.integers(1, 5),
    rate=st.floats(0, 1),
    k=st.integers(2, 5),
)
def test_round_trip_property(tmp_path_factory, seed, hw, t_opt, t_rad, rate, k):
    cfg = WorldConfig(seed=seed, height=hw, width=hw + 1, t_optical=t_opt, t_radar=t_rad,
                      cloud_rate=rate, num_classes=k)
    pair = generate_sample(cfg, 0)
    d = tmp_path_factory.mktemp("rt")
    assert read_sample(write_sample(pair, d)).equals(pair)


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("ds")
    generate_dataset(WorldConfig(height=8, width=8, t_optical=3, t_radar=4), 12, root)
    return root


def test_split_filter(dataset):
    m = load_manifest(dataset)
    test_ids = m.ids("test")
    assert test_ids and set(test_ids) < set(m.ids())
    assert [p.location_id for p in m.iterate("test")] == sorted(test_ids)


def test_iteration_order(dataset):
    a = [p.location_id for p in load_manifest(dataset).iterate("train", seed=3, epoch=1)]
    b = [p.location_id for p in load_manifest(dataset).iterate("train", seed=3, epoch=1)]
    c = [p.location_id for p in load_manifest(dataset).iterate("train", seed=3, epoch=2)]
    assert a == b and sorted(a) == sorted(c) and a != c


def test_duplicate_id(tmp_path):
    entry = {"sample_id": "a", "relative_path": "a", "split": "train", "has_label": True}
    with pytest.raises(ValueError, match="duplicate"):
        validate_manifest([entry, dict(entry)])
    with pytest.raises(ValueError):
        write_manifest([entry, dict(entry)], tmp_path / "m.json")


def test_manifest_missing_paths(tmp_path):
    with pytest.raises(MissingFile):
        load_manifest(tmp_path)
    write_manifest([{"sample_id": "a", "relative_path": "a", "split": "val", "has_label": False}],
                   tmp_path / "manifest.json")
    with pytest.raises(MissingFile):
        load_manifest(tmp_path)


def test_manifest_path_of(dataset):
    m = load_manifest(dataset / "manifest.json")
    assert isinstance(m, Manifest)
    sid = m.ids()[0]
    assert m.path_of(sid) == dataset / sid
