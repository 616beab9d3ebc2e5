"""
Dataset construction: the synthetic four-cluster dataset, check-in file
ingestion and the local metric projection.
"""

import math
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, PositiveInt, field_validator, model_validator
from scipy.spatial import cKDTree
from sklearn.model_selection import train_test_split

from ..errors import DataError
from ..utils.logging import get_logger
from ..utils.rng import SeedFanout
from .model import Dataset, DatasetSplits, Location, Region

logger = get_logger(__name__)

EARTH_RADIUS_M = 6_371_008.8


class SyntheticSpec(BaseModel):
    """Clusters of points around the vertices of a small square in the middle of the region."""

    model_config = ConfigDict(frozen=True)

    region_side: float = Field(default=6500.0, gt=0.0, description="Side of the region in meters")
    square_side: float = Field(default=300.0, gt=0.0, description="Side of the square whose vertices are the cluster centres")
    max_radius: float = Field(default=45.0, gt=0.0, description="Largest distance of a point from its vertex")
    samples_per_class: PositiveInt = 600
    num_classes: int = Field(default=4, ge=2, le=4)
    test_per_class: PositiveInt = 120
    val_fraction: float = Field(default=0.2, gt=0.0, lt=1.0)
    seed: int = Field(default=0, ge=0)

    @model_validator(mode="after")
    def _check(self) -> "SyntheticSpec":
        if self.max_radius >= self.square_side / 2.0:
            raise ValueError("cluster radius must stay below half the distance between vertices")
        if self.test_per_class >= self.samples_per_class:
            raise ValueError("test_per_class must leave samples for training")
        if self.square_side / math.sqrt(2.0) + self.max_radius > self.region_side / 2.0:
            raise ValueError("clusters do not fit inside the region")
        return self

    def vertices(self) -> np.ndarray:
        h = self.square_side / 2.0
        return np.array([[-h, -h], [h, -h], [h, h], [-h, h]])[: self.num_classes]


def split_dataset(class_ids: np.ndarray, xy: np.ndarray, num_classes: int, region: Region,
                  test_per_class: int, val_fraction: float, seed: int) -> DatasetSplits:
    """Stratified train/val/test split with exactly `test_per_class` test samples per class."""
    indices = np.arange(len(class_ids))
    trainval, test = train_test_split(indices, test_size=test_per_class * num_classes,
                                      random_state=seed, stratify=class_ids)
    train, val = train_test_split(trainval, test_size=val_fraction, random_state=seed,
                                  stratify=class_ids[trainval])

    def subset(idx: np.ndarray, tag: str) -> Dataset:
        idx = np.sort(idx)
        return Dataset(class_ids=class_ids[idx], xy=xy[idx], num_classes=num_classes, region=region, split_tag=tag)

    return DatasetSplits(train=subset(train, "train"), val=subset(val, "val"), test=subset(test, "test"))


def gen_synthetic(spec: SyntheticSpec, region: Optional[Region] = None) -> DatasetSplits:
    """
    Points spread uniformly over a disc of radius max_radius around each
    vertex (radius = max_radius * sqrt(u), uniform direction).
    """
    region = region or Region(side=spec.region_side)
    rng = SeedFanout(spec.seed).stream("data")
    n = spec.samples_per_class
    class_ids = np.repeat(np.arange(spec.num_classes), n)
    theta = rng.uniform(0.0, 2.0 * math.pi, size=len(class_ids))
    radius = spec.max_radius * np.sqrt(rng.random(len(class_ids)))
    xy = spec.vertices()[class_ids] + np.column_stack([radius * np.cos(theta), radius * np.sin(theta)])
    splits = split_dataset(class_ids, xy, spec.num_classes, region, spec.test_per_class, spec.val_fraction, spec.seed)
    logger.info(
        "Synthetic dataset generated",
        extra={"classes": spec.num_classes, "samples": len(class_ids), "train": len(splits.train),
               "val": len(splits.val), "test": len(splits.test)},
    )
    return splits


def project_to_meters(region: Region, lat: Union[float, np.ndarray],
                      lon: Union[float, np.ndarray]) -> Union[Location, np.ndarray]:
    """
    Equirectangular projection about the region centre: x east, y north.
    Scalars give a Location, arrays an (N, 2) array.
    """
    lat_rad = np.radians(np.asarray(lat, dtype=float))
    lon_rad = np.radians(np.asarray(lon, dtype=float))
    lat0, lon0 = math.radians(region.center_lat), math.radians(region.center_lon)
    x = EARTH_RADIUS_M * (lon_rad - lon0) * math.cos(lat0)
    y = EARTH_RADIUS_M * (lat_rad - lat0)
    if np.ndim(x) == 0:
        return Location(x=float(x), y=float(y))
    return np.column_stack([x, y])


def meters_to_latlon(region: Region, xy: Union[Location, np.ndarray]) -> Tuple[np.ndarray, np.ndarray]:
    """Inverse of `project_to_meters`; returns (lat, lon) in degrees."""
    xy = xy.as_array() if isinstance(xy, Location) else np.asarray(xy, dtype=float)
    xy = np.atleast_2d(xy)
    lat0 = math.radians(region.center_lat)
    lat = region.center_lat + np.degrees(xy[:, 1] / EARTH_RADIUS_M)
    lon = region.center_lon + np.degrees(xy[:, 0] / (EARTH_RADIUS_M * math.cos(lat0)))
    return lat, lon


class CheckinRecord(BaseModel):
    """One check-in row; the timestamp and location id of the raw dump are not kept."""

    model_config = ConfigDict(frozen=True)

    user_id: str
    lat: float = Field(ge=-90.0, le=90.0)
    lon: float = Field(ge=-180.0, le=180.0)

    @field_validator("user_id", mode="before")
    @classmethod
    def _as_text(cls, value) -> str:
        return str(value).strip()


def checkin_records(frame: pd.DataFrame) -> List[CheckinRecord]:
    """Rows of a `read_checkins` frame as validated records."""
    return [CheckinRecord(user_id=u, lat=a, lon=o) for u, a, o in frame[["user", "lat", "lon"]].itertuples(index=False)]


class GowallaSpec(BaseModel):
    """Selection protocol for a check-in dump."""

    model_config = ConfigDict(frozen=True)

    path: Path
    region: Region = Region(center_lat=37.7749, center_lon=-122.4194, side=4500.0)
    num_users: PositiveInt = 6
    per_user_trainval: PositiveInt = 82
    per_user_test: PositiveInt = 20
    val_fraction: float = Field(default=0.2, gt=0.0, lt=1.0)
    seed: int = Field(default=0, ge=0)
    user_col: int = Field(default=0, ge=0)
    lat_col: int = Field(default=1, ge=0)
    lon_col: int = Field(default=2, ge=0)
    overlap_radius_m: Optional[float] = Field(default=None, gt=0.0, description="Drop points this close to another user's point")


def read_checkins(path: Union[str, Path], user_col: int = 0, lat_col: int = 1, lon_col: int = 2) -> pd.DataFrame:
    """
    Parse a whitespace- or comma-separated check-in file into user/lat/lon columns.
    Rows whose coordinates are missing or out of range are dropped.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"check-in file not found: {path}")
    try:
        raw = pd.read_csv(path, sep=r"[\s,]+", engine="python", header=None, dtype=str, comment="#")
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as exc:
        raise DataError(f"cannot parse check-in file {path}: {exc}") from exc

    needed = max(user_col, lat_col, lon_col)
    if raw.shape[1] <= needed:
        raise DataError(f"check-in file {path} has {raw.shape[1]} columns, column {needed} was requested")
    frame = pd.DataFrame({
        "user": raw[user_col].astype(str).str.strip(),
        "lat": pd.to_numeric(raw[lat_col], errors="coerce"),
        "lon": pd.to_numeric(raw[lon_col], errors="coerce"),
    })
    valid = frame["lat"].between(-90.0, 90.0) & frame["lon"].between(-180.0, 180.0)
    dropped = int((~valid).sum())
    if dropped:
        logger.warning("Dropped unparseable check-in rows", extra={"rows": dropped, "path": str(path)})
    return frame[valid].reset_index(drop=True)


def _user_sort_key(users: pd.Series) -> pd.Series:
    return users.astype(int) if users.str.fullmatch(r"\d+").all() else users


def rank_users(frame: pd.DataFrame) -> pd.DataFrame:
    """In-region check-in counts per user, most active first, ties broken by user id."""
    counts = frame.groupby("user").size().rename("count").reset_index()
    counts["key"] = _user_sort_key(counts["user"])
    return counts.sort_values(["count", "key"], ascending=[False, True], kind="mergesort").reset_index(drop=True)


def drop_overlapping(frame: pd.DataFrame, radius: float) -> pd.DataFrame:
    """Remove every point that lies within `radius` meters of another user's point."""
    pairs = cKDTree(frame[["x", "y"]].to_numpy()).query_pairs(radius, output_type="ndarray")
    if len(pairs) == 0:
        return frame
    users = frame["user"].to_numpy()
    clash = pairs[users[pairs[:, 0]] != users[pairs[:, 1]]]
    keep = np.ones(len(frame), dtype=bool)
    keep[clash.ravel()] = False
    logger.info("Overlap filter applied", extra={"radius_m": radius, "dropped": int((~keep).sum())})
    return frame[keep].reset_index(drop=True)


def ingest_gowalla(
    path: Union[str, Path],
    region: Region,
    num_users: int = 6,
    per_user_trainval: int = 82,
    per_user_test: int = 20,
    seed: int = 0,
    val_fraction: float = 0.2,
    columns: Tuple[int, int, int] = (0, 1, 2),
    overlap_radius_m: Optional[float] = None,
) -> DatasetSplits:
    """
    Select the most active users inside the region and subsample their check-ins.

    Records are put in canonical order before sampling, so the result does not
    depend on the order of lines in the input file.
    Args:
        path: Check-in file (user, lat, lon columns at the indices given by `columns`)
        region: Square region the check-ins must fall in
        num_users: Number of users (classes) to keep
        per_user_trainval: Samples per user for training and validation
        per_user_test: Samples per user for testing
        seed: Sampling and split seed
    """
    frame = read_checkins(path, *columns)
    xy = project_to_meters(region, frame["lat"].to_numpy(), frame["lon"].to_numpy()).reshape(-1, 2)
    frame = frame.assign(x=xy[:, 0], y=xy[:, 1])
    frame = frame[region.contains(xy)].reset_index(drop=True)
    if frame.empty:
        raise DataError(f"no qualifying users: no check-in of {path} falls inside the region")
    if overlap_radius_m:
        frame = drop_overlapping(frame, overlap_radius_m)

    needed = per_user_trainval + per_user_test
    ranking = rank_users(frame)
    qualifying = ranking[ranking["count"] >= needed]
    if len(qualifying) < num_users:
        best = ", ".join(f"{u}:{c}" for u, c in zip(ranking["user"].head(num_users), ranking["count"].head(num_users)))
        raise DataError(
            f"only {len(qualifying)} users have at least {needed} in-region check-ins, "
            f"{num_users} are required (most active: {best or 'none'})"
        )
    selected: List[str] = qualifying["user"].head(num_users).tolist()

    rng = SeedFanout(seed).stream("data")
    ids, points = [], []
    for class_id, user in enumerate(selected):
        records = frame[frame["user"] == user].sort_values(["x", "y"], kind="mergesort")
        chosen = records.iloc[np.sort(rng.choice(len(records), size=needed, replace=False))]
        ids.append(np.full(needed, class_id))
        points.append(chosen[["x", "y"]].to_numpy())

    logger.info("Check-ins ingested", extra={"users": selected, "per_user": needed, "region_side_m": region.side})
    return split_dataset(np.concatenate(ids), np.vstack(points), num_users, region, per_user_test,
                         val_fraction, seed)


def ingest_from_spec(spec: GowallaSpec) -> DatasetSplits:
    return ingest_gowalla(
        spec.path, spec.region, spec.num_users, spec.per_user_trainval, spec.per_user_test, spec.seed,
        val_fraction=spec.val_fraction, columns=(spec.user_col, spec.lat_col, spec.lon_col),
        overlap_radius_m=spec.overlap_radius_m,
    )
