"""
File formats: CSV tables with a provenance comment line, dataset CSV files
with a YAML sidecar, network checkpoints and tabular mechanisms.
"""

import hashlib
import json
from pathlib import Path
from typing import Any, Dict, Optional, Union

import numpy as np
import pandas as pd
import yaml
from pydantic import BaseModel, ConfigDict

from .. import __version__
from ..core.mechanisms import TabularMechanism
from ..core.model import CondTable, Dataset, Region
from ..core.neural import Mlp
from ..errors import DataError

PathLike = Union[str, Path]

FLOAT_FORMAT = "%.10g"


class Provenance(BaseModel):
    model_config = ConfigDict(frozen=True)

    config_hash: str
    seed: int
    version: str = __version__

    def comment(self) -> str:
        return f"# config_hash={self.config_hash} seed={self.seed} version={self.version}\n"


def config_hash(payload: Any) -> str:
    """Short SHA-256 of a JSON-serialisable payload with sorted keys."""
    text = json.dumps(payload, sort_keys=True, default=str)
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


def file_sha256(path: PathLike) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for block in iter(lambda: handle.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def write_csv(frame: pd.DataFrame, path: PathLike, provenance: Provenance, index: bool = False) -> Path:
    """Write a CSV file whose first line is the provenance comment."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as handle:
        handle.write(provenance.comment())
        frame.to_csv(handle, index=index, float_format=FLOAT_FORMAT, lineterminator="\n")
    return path


def read_csv(path: PathLike, **kwargs) -> pd.DataFrame:
    return pd.read_csv(path, comment="#", **kwargs)


def points_frame(class_ids: np.ndarray, xy: np.ndarray) -> pd.DataFrame:
    """`class_id,x_m,y_m` rows."""
    xy = np.atleast_2d(np.asarray(xy, dtype=float))
    return pd.DataFrame({"class_id": np.asarray(class_ids, dtype=np.int64), "x_m": xy[:, 0], "y_m": xy[:, 1]})


def save_dataset(dataset: Dataset, path: PathLike, provenance: Provenance,
                 extra: Optional[Dict[str, Any]] = None) -> Path:
    """Dataset CSV plus a `<name>.yaml` sidecar holding region, split and provenance."""
    path = write_csv(points_frame(dataset.class_ids, dataset.xy), path, provenance)
    sidecar = {
        "split": dataset.split_tag,
        "num_classes": dataset.num_classes,
        "region": dataset.region.model_dump(),
        "provenance": provenance.model_dump(),
        **(extra or {}),
    }
    with open(path.with_suffix(".yaml"), "w", encoding="utf-8") as handle:
        yaml.safe_dump(sidecar, handle, sort_keys=True)
    return path


def load_dataset(path: PathLike) -> Dataset:
    path = Path(path)
    sidecar_path = path.with_suffix(".yaml")
    if not path.is_file() or not sidecar_path.is_file():
        raise DataError(f"dataset {path} or its sidecar {sidecar_path.name} is missing")
    with open(sidecar_path, encoding="utf-8") as handle:
        sidecar = yaml.safe_load(handle)
    frame = read_csv(path)
    missing = {"class_id", "x_m", "y_m"} - set(frame.columns)
    if missing:
        raise DataError(f"dataset {path} lacks columns {sorted(missing)}")
    try:
        return Dataset(
            class_ids=frame["class_id"].to_numpy(),
            xy=frame[["x_m", "y_m"]].to_numpy(),
            num_classes=sidecar["num_classes"],
            region=Region(**sidecar["region"]),
            split_tag=sidecar["split"],
        )
    except (KeyError, ValueError) as exc:
        raise DataError(f"dataset {path} is invalid: {exc}") from exc


def save_checkpoint(net: Mlp, path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "layer_sizes": list(net.layer_sizes),
        "head": net.head,
        "rng_seed": net.rng_seed,
        "iteration": net.iteration,
        "weights": [w.tolist() for w in net.weights],
        "biases": [b.tolist() for b in net.biases],
    }
    with open(path, "w", encoding="utf-8") as handle:
        yaml.safe_dump(payload, handle, sort_keys=False)
    return path


def load_checkpoint(path: PathLike) -> Mlp:
    try:
        with open(path, encoding="utf-8") as handle:
            payload = yaml.safe_load(handle)
        return Mlp(
            layer_sizes=tuple(payload["layer_sizes"]),
            weights=tuple(np.asarray(w, dtype=float) for w in payload["weights"]),
            biases=tuple(np.asarray(b, dtype=float) for b in payload["biases"]),
            head=payload["head"],
            rng_seed=payload.get("rng_seed", 0),
            iteration=payload.get("iteration", 0),
        )
    except (OSError, KeyError, TypeError, ValueError, yaml.YAMLError) as exc:
        raise DataError(f"cannot load checkpoint {path}: {exc}") from exc


def save_mechanism(mech: TabularMechanism, path: PathLike, provenance: Provenance) -> Path:
    """Row-major matrix; the header names each output by its coordinates as `x_m;y_m`."""
    columns = [f"{float(x)!r};{float(y)!r}" for x, y in mech.support]
    return write_csv(pd.DataFrame(mech.table.matrix, columns=columns), path, provenance)


def load_mechanism(path: PathLike) -> TabularMechanism:
    try:
        frame = read_csv(path)
        support = [[float(v) for v in column.split(";")] for column in frame.columns]
        return TabularMechanism(support=support, table=CondTable(matrix=frame.to_numpy(dtype=float)))
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot load mechanism table {path}: {exc}") from exc
