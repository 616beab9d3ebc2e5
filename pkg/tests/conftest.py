import sys

import numpy as np
import pytest
from loguru import logger
from typer.testing import CliRunner

from app.config import Settings
from app.core.data_pipeline import SyntheticSpec, gen_synthetic, meters_to_latlon
from app.core.model import Region
from app.main import create_app
from app.utils.rng import SeedFanout

GOWALLA_REGION = Region(center_lat=37.7749, center_lon=-122.4194, side=4500.0)

# (user id, in-region check-ins, cluster centre in meters)
FIXTURE_USERS = [
    ("11", 130, (-1200.0, -1200.0)),
    ("12", 120, (1200.0, -1200.0)),
    ("13", 110, (1200.0, 1200.0)),
    ("14", 110, (-1200.0, 1200.0)),
    ("15", 105, (0.0, 0.0)),
    ("16", 102, (0.0, 1500.0)),
    ("17", 60, (0.0, -1500.0)),
    ("18", 40, (1500.0, 0.0)),
]


def create_test_settings(**overrides):
    """Create test settings with optional overrides."""
    defaults = {
        "app_name": "locpriv-test",
        "log_level": "WARNING",
        "json_logs": False,
        "workers": 1,
        "record_wall_time": False,
    }
    defaults.update(overrides)
    return Settings(**defaults)


@pytest.fixture(autouse=True)
def reset_logging():
    """Drop sinks bound to streams that a test may have closed."""
    yield
    logger.remove()
    logger.add(sys.stderr, level="WARNING")


@pytest.fixture
def fanout():
    return SeedFanout(0)


@pytest.fixture
def small_synthetic_spec():
    return SyntheticSpec(samples_per_class=60, test_per_class=12, seed=0)


@pytest.fixture
def small_splits(small_synthetic_spec):
    return gen_synthetic(small_synthetic_spec)


@pytest.fixture
def runner():
    return CliRunner()


@pytest.fixture
def cli_app():
    return create_app()


def write_checkin_file(path, users=FIXTURE_USERS, seed=0, shuffle=False, outside=25):
    """
    Write a whitespace-separated check-in file: user, lat, lon, then an ignored
    location id. Each user's points scatter 60 m around their centre, and a
    few records per user fall outside the region.
    """
    rng = np.random.default_rng(seed)
    lines = []
    for user, count, centre in users:
        xy = np.asarray(centre) + rng.normal(scale=60.0, size=(count, 2))
        lat, lon = meters_to_latlon(GOWALLA_REGION, xy)
        lines += [f"{user}\t{a:.7f}\t{o:.7f}\t{1000 + i}" for i, (a, o) in enumerate(zip(lat, lon))]
        far_lat, far_lon = meters_to_latlon(GOWALLA_REGION, np.full((outside, 2), 5000.0))
        lines += [f"{user}\t{a:.7f}\t{o:.7f}\t9" for a, o in zip(far_lat, far_lon)]
    if shuffle:
        lines = [lines[i] for i in np.random.default_rng(seed + 1).permutation(len(lines))]
    path.write_text("\n".join(lines) + "\n")
    return path


@pytest.fixture
def checkin_file(tmp_path):
    return write_checkin_file(tmp_path / "checkins.txt")
