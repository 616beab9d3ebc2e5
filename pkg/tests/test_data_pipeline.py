import numpy as np
import pandas as pd
import pytest
from pydantic import ValidationError

from app.core.data_pipeline import (
    CheckinRecord,
    GowallaSpec,
    SyntheticSpec,
    checkin_records,
    drop_overlapping,
    gen_synthetic,
    ingest_from_spec,
    ingest_gowalla,
    meters_to_latlon,
    project_to_meters,
    rank_users,
    read_checkins,
)
from app.core.model import Location, Region
from app.errors import DataError

from .conftest import FIXTURE_USERS, GOWALLA_REGION, write_checkin_file


class TestSyntheticData:
    """Four clusters around the vertices of a square."""

    def test_default_sizes(self):
        splits = gen_synthetic(SyntheticSpec())
        total = len(splits.train) + len(splits.val) + len(splits.test)
        assert total == 2400
        np.testing.assert_array_equal(splits.test.class_counts(), [120] * 4)
        assert len(splits.val) == pytest.approx(0.2 * 1920, abs=1)

    def test_points_stay_near_their_vertex(self, small_synthetic_spec, small_splits):
        vertices = small_synthetic_spec.vertices()
        for split in ("train", "val", "test"):
            data = small_splits.by_name(split)
            offsets = np.linalg.norm(data.xy - vertices[data.class_ids], axis=1)
            assert offsets.max() <= 45.0 + 1e-9

    def test_classes_are_well_separated(self, small_splits):
        data = small_splits.train
        for a in range(4):
            for b in range(a + 1, 4):
                pa, pb = data.xy[data.class_ids == a], data.xy[data.class_ids == b]
                gaps = np.linalg.norm(pa[:, None, :] - pb[None, :, :], axis=2)
                assert gaps.min() >= 210.0

    def test_same_seed_same_data(self, small_synthetic_spec):
        a, b = gen_synthetic(small_synthetic_spec), gen_synthetic(small_synthetic_spec)
        np.testing.assert_array_equal(a.train.xy, b.train.xy)
        other = gen_synthetic(small_synthetic_spec.model_copy(update={"seed": 1}))
        assert not np.array_equal(a.train.xy, other.train.xy)

    def test_splits_are_disjoint(self, small_splits):
        rows = [tuple(p) for split in ("train", "val", "test") for p in small_splits.by_name(split).xy]
        assert len(rows) == len(set(rows))

    def test_fewer_classes(self):
        splits = gen_synthetic(SyntheticSpec(num_classes=2, samples_per_class=50, test_per_class=10))
        assert splits.train.num_classes == 2

    def test_invalid_spec(self):
        with pytest.raises(ValidationError):
            SyntheticSpec(max_radius=200.0)
        with pytest.raises(ValidationError):
            SyntheticSpec(samples_per_class=10, test_per_class=10)


class TestProjection:
    """Equirectangular projection about the region centre."""

    def test_one_millidegree_of_latitude(self):
        region = Region(center_lat=48.8635, center_lon=2.3486)
        loc = project_to_meters(region, 48.8645, 2.3486)
        assert isinstance(loc, Location)
        assert loc.y == pytest.approx(111.19, abs=0.01)
        assert loc.x == pytest.approx(0.0, abs=1e-9)

    def test_longitude_shrinks_with_latitude(self):
        region = Region(center_lat=60.0, center_lon=0.0)
        assert project_to_meters(region, 60.0, 0.001).x == pytest.approx(111.19 / 2, abs=0.01)

    def test_round_trip(self):
        rng = np.random.default_rng(0)
        xy = rng.uniform(-2250, 2250, size=(100, 2))
        lat, lon = meters_to_latlon(GOWALLA_REGION, xy)
        back = project_to_meters(GOWALLA_REGION, lat, lon)
        assert np.abs(back - xy).max() < 0.5


class TestCheckinFiles:
    """Parsing and ranking check-ins."""

    def test_read_and_rank(self, checkin_file):
        frame = read_checkins(checkin_file)
        assert len(frame) == sum(count + 25 for _, count, _ in FIXTURE_USERS)
        ranking = rank_users(frame)
        assert ranking["user"].tolist()[:2] == ["11", "12"]

    def test_ties_are_broken_by_numeric_id(self):
        frame = pd.DataFrame({"user": ["9", "10", "10", "9", "2"], "lat": 0.0, "lon": 0.0})
        assert rank_users(frame)["user"].tolist() == ["9", "10", "2"]

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError):
            read_checkins(tmp_path / "missing.txt")

    def test_too_few_columns(self, tmp_path):
        path = tmp_path / "short.txt"
        path.write_text("1 37.7\n2 37.8\n")
        with pytest.raises(DataError):
            read_checkins(path)

    def test_bad_rows_are_dropped(self, tmp_path):
        path = tmp_path / "mixed.txt"
        path.write_text("1,37.77,-122.41\n2,abc,-122.41\n3,95.0,-122.41\n")
        assert read_checkins(path)["user"].tolist() == ["1"]

    def test_rows_as_records(self, tmp_path):
        path = tmp_path / "rows.txt"
        path.write_text("7\t2010-10-19T23:55:27Z\t37.77\t-122.41\t22847\n")
        records = checkin_records(read_checkins(path, lat_col=2, lon_col=3))
        assert records == [CheckinRecord(user_id="7", lat=37.77, lon=-122.41)]

    def test_record_rejects_bad_latitude(self):
        with pytest.raises(ValidationError):
            CheckinRecord(user_id=1, lat=91.0, lon=0.0)

    def test_overlap_filter(self):
        frame = pd.DataFrame({"user": ["a", "b", "a", "c"], "x": [0.0, 1.0, 0.5, 500.0], "y": 0.0})
        kept = drop_overlapping(frame, 5.0)
        assert kept["user"].tolist() == ["c"]


class TestIngestion:
    """Selecting the most active users inside the region."""

    def test_selects_the_six_most_active_users(self, checkin_file):
        splits = ingest_gowalla(checkin_file, GOWALLA_REGION, columns=(0, 1, 2))
        assert splits.train.num_classes == 6
        np.testing.assert_array_equal(splits.test.class_counts(), [20] * 6)
        trainval = splits.train.class_counts() + splits.val.class_counts()
        np.testing.assert_array_equal(trainval, [82] * 6)

    def test_points_are_inside_the_region(self, checkin_file):
        splits = ingest_gowalla(checkin_file, GOWALLA_REGION)
        for split in ("train", "val", "test"):
            assert np.all(GOWALLA_REGION.contains(splits.by_name(split).xy))

    def test_class_zero_is_the_busiest_user(self, checkin_file):
        splits = ingest_gowalla(checkin_file, GOWALLA_REGION)
        centre = splits.train.xy[splits.train.class_ids == 0].mean(axis=0)
        np.testing.assert_allclose(centre, [-1200.0, -1200.0], atol=30.0)

    def test_line_order_does_not_matter(self, tmp_path):
        ordered = write_checkin_file(tmp_path / "ordered.txt")
        shuffled = write_checkin_file(tmp_path / "shuffled.txt", shuffle=True)
        a = ingest_gowalla(ordered, GOWALLA_REGION, seed=3)
        b = ingest_gowalla(shuffled, GOWALLA_REGION, seed=3)
        np.testing.assert_array_equal(a.test.xy, b.test.xy)
        np.testing.assert_array_equal(a.train.class_ids, b.train.class_ids)

    def test_not_enough_users(self, checkin_file):
        with pytest.raises(DataError, match="most active"):
            ingest_gowalla(checkin_file, GOWALLA_REGION, num_users=7)

    def test_everything_outside_the_region(self, tmp_path):
        path = write_checkin_file(tmp_path / "far.txt", users=[("1", 0, (0.0, 0.0))], outside=5)
        with pytest.raises(DataError, match="inside the region"):
            ingest_gowalla(path, GOWALLA_REGION)

    def test_spec_with_custom_columns(self, tmp_path):
        src = write_checkin_file(tmp_path / "plain.txt")
        lines = [line.split("\t") for line in src.read_text().splitlines()]
        dump = tmp_path / "dump.txt"
        dump.write_text("".join(f"{u}\t2010-10-19T23:55:27Z\t{lat}\t{lon}\t{loc}\n" for u, lat, lon, loc in lines))
        splits = ingest_from_spec(GowallaSpec(path=dump, lat_col=2, lon_col=3))
        assert splits.train.num_classes == 6
