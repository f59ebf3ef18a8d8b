import json

import numpy as np
import pytest

from flpr.data import (
    QF_GRID_FULL,
    RW_GRID_FULL,
    RW_GRID_LOW,
    DatasetSpec,
    build_dataset,
    desk_spec,
    materialize,
    read_manifest,
    render_record,
    sample_seed,
    write_manifest,
)
from flpr.plates import PlateString, decode_label


class TestGrids:
    def test_full_grid_sizes(self):
        assert len(QF_GRID_FULL) == 26
        assert len(RW_GRID_FULL) == 33
        assert len(DatasetSpec(1, grid="full").cells()) == 858

    def test_low_grid(self):
        assert RW_GRID_LOW == (20, 21, 22, 23, 24, 25)
        assert len(DatasetSpec(1, grid="low").cells()) == 156

    def test_grid_members(self):
        assert QF_GRID_FULL[:3] == (1, 5, 9) and QF_GRID_FULL[-2:] == (97, 100)
        assert RW_GRID_FULL[0] == 20 and RW_GRID_FULL[-1] == 180

    def test_grid_stream_covers_every_cell(self):
        spec = DatasetSpec(2, base_seed=3, grid="low")
        samples = list(build_dataset(spec, images=False))
        assert len(samples) == len(spec) == 312
        assert {(s.qf, s.r_w) for s in samples} == set(spec.cells())
        # the same plates are reused in every cell
        assert len({s.label for s in samples}) <= 2


class TestSpec:
    @pytest.mark.parametrize("kw", [
        dict(sample_count=0), dict(sample_count=1, r_w_range=(10, 50)),
        dict(sample_count=1, qf_range=(0, 10)), dict(sample_count=1, grid="bogus"),
    ])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            DatasetSpec(**kw)

    def test_dict_round_trip(self):
        spec = desk_spec(10, 4)
        assert DatasetSpec.from_dict(json.loads(json.dumps(spec.to_dict()))) == spec


class TestStream:
    def test_seeds_differ_per_index(self):
        assert len({sample_seed(0, i) for i in range(1000)}) == 1000
        assert sample_seed(1, 0) != sample_seed(0, 0)

    def test_ranges_respected(self):
        spec = DatasetSpec(200, 5, r_w_range=(20, 40), qf_range=(10, 30))
        for s in build_dataset(spec, images=False):
            assert 20 <= s.r_w <= 40 and 10 <= s.qf <= 30
            PlateString.parse(s.label)

    def test_deterministic_bytes(self):
        spec = desk_spec(20, 9)
        a = list(build_dataset(spec))
        b = list(build_dataset(spec))
        assert [s.record() for s in a] == [s.record() for s in b]
        assert all(x.image.tobytes() == y.image.tobytes() for x, y in zip(a, b))

    def test_class_follows_k(self):
        spec = DatasetSpec(50, 1, k_classes=10)
        for s in build_dataset(spec, images=False):
            assert s.c_n == (10 * s.qf + 99) // 100 - 1

    def test_images_regenerate_from_records(self):
        spec = desk_spec(5, 2)
        for s in build_dataset(spec):
            np.testing.assert_array_equal(render_record(s.record(), spec.width, spec.height), s.image)


def test_manifest_round_trip(tmp_path):
    spec = desk_spec(15, 8)
    path = tmp_path / "m.jsonl"
    assert write_manifest(path, spec) == 15
    spec2, recs = read_manifest(path)
    assert spec2 == spec
    assert recs == [s.record() for s in build_dataset(spec, images=False)]
    path2 = tmp_path / "m2.jsonl"
    write_manifest(path2, spec)
    assert path.read_bytes() == path2.read_bytes()


def test_materialize():
    spec = desk_spec(12, 1)
    c = materialize(spec, workers=1)
    assert c.images.shape == (12, 28, 120) and c.images.dtype == np.float32
    assert [decode_label(t) for t in c.targets] == c.labels
    sub = c.subset([0, 3])
    assert sub.labels == [c.labels[0], c.labels[3]]


def test_materialize_parallel_matches_serial():
    spec = desk_spec(80, 2)
    a = materialize(spec, workers=1)
    b = materialize(spec, workers=2)
    np.testing.assert_array_equal(a.images, b.images)
    assert a.labels == b.labels
