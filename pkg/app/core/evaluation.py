"""
Grid-based Bayes-error estimation, classifier metrics and empirical distortion.

Obfuscated hits are binned on a square grid over the region; the Bayes error
is then 1 - sum over cells of the largest per-class hit count divided by the
total number of hits.
"""

from concurrent.futures import ThreadPoolExecutor
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, PositiveInt, model_validator
from sklearn.metrics import accuracy_score, f1_score

from ..errors import ContractError
from ..utils.logging import get_logger, log_evaluation
from ..utils.rng import SeedFanout
from .mechanisms import Obfuscator
from .model import CondTable, Dataset, Location, Region

logger = get_logger(__name__)

DEFAULT_GRIDS = (13, 65, 130, 260)
DEFAULT_OBF_COUNTS = (10, 100, 200, 500)


class Grid(BaseModel):
    model_config = ConfigDict(frozen=True)

    region: Region
    cells_per_side: PositiveInt

    @property
    def cell_side(self) -> float:
        return self.region.side / self.cells_per_side

    @property
    def num_cells(self) -> int:
        return self.cells_per_side * self.cells_per_side


def assign_cells(g: Grid, xy: np.ndarray) -> Tuple[np.ndarray, int]:
    """
    Flat cell index (row * cells_per_side + column) of every point, plus the
    number of points that lay outside the region and were clamped.

    Cells are (a, b] intervals along each axis, so a point on an interior
    boundary goes to the lower-index cell.
    """
    xy = np.atleast_2d(np.asarray(xy, dtype=float))
    n = g.cells_per_side
    scaled = np.round((xy + g.region.half_side) / g.cell_side, 9)
    cells = np.clip(np.ceil(scaled).astype(np.int64) - 1, 0, n - 1)
    clamped = int(np.count_nonzero(~g.region.contains(xy)))
    return cells[:, 1] * n + cells[:, 0], clamped


def assign_cell(g: Grid, z: Union[Location, np.ndarray]) -> int:
    point = z.as_array() if isinstance(z, Location) else np.asarray(z, dtype=float)
    return int(assign_cells(g, point.reshape(1, 2))[0][0])


class HitTable(BaseModel):
    """Per-cell, per-class hit counts; row = flat cell index, column = class."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    counts: np.ndarray
    clamped: int = Field(default=0, ge=0)

    @model_validator(mode="after")
    def _check(self) -> "HitTable":
        if self.counts.ndim != 2 or np.any(self.counts < 0):
            raise ValueError("hit counts must be a non-negative (cells, classes) matrix")
        return self

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @classmethod
    def empty(cls, num_cells: int, num_classes: int) -> "HitTable":
        return cls(counts=np.zeros((num_cells, num_classes), dtype=np.int64))

    @classmethod
    def from_hits(cls, g: Grid, xy: np.ndarray, labels: np.ndarray, num_classes: int) -> "HitTable":
        cells, clamped = assign_cells(g, xy)
        counts = np.zeros((g.num_cells, num_classes), dtype=np.int64)
        np.add.at(counts, (cells, np.asarray(labels, dtype=np.int64)), 1)
        return cls(counts=counts, clamped=clamped)

    def merge(self, other: "HitTable") -> "HitTable":
        if self.counts.shape != other.counts.shape:
            raise ContractError("cannot merge hit tables of different shapes")
        return HitTable(counts=self.counts + other.counts, clamped=self.clamped + other.clamped)


def bayes_error_grid(h: HitTable) -> float:
    """1 - sum_cells max_class hits / total hits."""
    total = h.total
    if total <= 0:
        raise ContractError("cannot estimate a Bayes error from zero hits")
    return float(1.0 - h.counts.max(axis=1).sum() / total)


def _replica_hits(mech: Obfuscator, data: Dataset, fanout: SeedFanout, stream: str, count: int) -> List[np.ndarray]:
    """`count` obfuscated copies of the dataset, copy r drawn from stream (stream, r)."""
    return [mech.obfuscate(data.xy, fanout.stream(stream, r)) for r in range(count)]


def _grid_column(g: Grid, replicas: Sequence[np.ndarray], labels: np.ndarray, num_classes: int,
                 obf_counts: Sequence[int]) -> Tuple[Dict[int, float], Dict[int, int]]:
    table = HitTable.empty(g.num_cells, num_classes)
    wanted = set(obf_counts)
    errors: Dict[int, float] = {}
    clamped: Dict[int, int] = {}
    for r, hits in enumerate(replicas, start=1):
        table = table.merge(HitTable.from_hits(g, hits, labels, num_classes))
        if r in wanted:
            errors[r] = bayes_error_grid(table)
            clamped[r] = table.clamped
    return errors, clamped


def evaluate_mechanism(
    mech: Obfuscator,
    data: Dataset,
    grids: Sequence[Grid],
    obf_counts: Sequence[int],
    fanout: SeedFanout,
    workers: int = 1,
    stream: str = "evaluation",
) -> pd.DataFrame:
    """
    Bayes-error matrix of a mechanism on one split.

    max(obf_counts) obfuscated copies of the split are drawn once; the
    estimate for count k uses the first k copies, so the counts are nested
    and share their randomness.
    Returns:
        DataFrame indexed by obf_count with one column per cells_per_side;
        the clamped-hit counts are kept in `attrs["clamped"]`.
    """
    if not grids or not obf_counts or min(obf_counts) < 1:
        raise ContractError("at least one grid and one positive obfuscation count are required")
    if len(data) == 0:
        raise ContractError("cannot evaluate on an empty split")
    name = getattr(mech, "name", type(mech).__name__)
    counts = sorted(set(int(c) for c in obf_counts))
    replicas = _replica_hits(mech, data, fanout, stream, counts[-1])

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        futures = [pool.submit(_grid_column, g, replicas, data.class_ids, data.num_classes, counts) for g in grids]
        columns = [future.result() for future in futures]

    frame = pd.DataFrame(
        {g.cells_per_side: [errors[c] for c in counts] for g, (errors, _) in zip(grids, columns)},
        index=pd.Index(counts, name="obf_count"),
    )
    frame.attrs["clamped"] = {g.cells_per_side: clamped for g, (_, clamped) in zip(grids, columns)}
    for g, (errors, clamped) in zip(grids, columns):
        for c in counts:
            log_evaluation(name, data.split_tag, g.cells_per_side, c, errors[c], clamped[c])
    return frame


def accuracy_f1(pred: np.ndarray, truth: np.ndarray) -> Tuple[float, float]:
    """Accuracy and macro-averaged F1 score."""
    pred, truth = np.asarray(pred), np.asarray(truth)
    if len(pred) == 0 or len(pred) != len(truth):
        raise ContractError("predictions and labels must be non-empty and of equal length")
    return (
        float(accuracy_score(truth, pred)),
        float(f1_score(truth, pred, average="macro", zero_division=0)),
    )


def empirical_distortion(w: np.ndarray, z: np.ndarray) -> float:
    """Mean Euclidean displacement between true and reported locations, in meters."""
    w, z = np.atleast_2d(w), np.atleast_2d(z)
    if w.shape != z.shape or len(w) == 0:
        raise ContractError("true and reported locations must be non-empty arrays of the same shape")
    return float(np.linalg.norm(z - w, axis=1).mean())


def argmax_rule_error(joint_xz: np.ndarray, pred: CondTable) -> float:
    """
    Exact error of the deterministic guess z -> argmax_y pred(y|z).
    Ties go to the lowest class index.
    """
    joint_xz = np.asarray(joint_xz, dtype=float)
    if pred.rows != joint_xz.shape[1] or pred.cols != joint_xz.shape[0]:
        raise ContractError("prediction table must have one row per observation and one column per class")
    guesses = pred.matrix.argmax(axis=1)
    return float(1.0 - joint_xz[guesses, np.arange(joint_xz.shape[1])].sum())


def monte_carlo_rule_error(joint_xz: np.ndarray, pred: CondTable, samples: int,
                           rng: np.random.Generator) -> float:
    """Sampled estimate of `argmax_rule_error`: draw (x, z) pairs and count wrong guesses."""
    joint_xz = np.asarray(joint_xz, dtype=float)
    if samples < 1:
        raise ContractError("at least one sample is required")
    flat = rng.choice(joint_xz.size, size=samples, p=joint_xz.ravel() / joint_xz.sum())
    x, z = np.unravel_index(flat, joint_xz.shape)
    return float(np.mean(pred.matrix.argmax(axis=1)[z] != x))


def standard_grids(region: Region, cells: Optional[Sequence[int]] = None) -> List[Grid]:
    return [Grid(region=region, cells_per_side=n) for n in (cells or DEFAULT_GRIDS)]
