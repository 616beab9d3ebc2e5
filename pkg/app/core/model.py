"""
Formal objects of the obfuscation setting.

Random-variable domains are finite index sets: X (user identities), W (true
locations), Z (reported locations) and Y (predicted identities). Mechanisms
and classifiers are row-stochastic tables; the data model is the empirical
joint P_{X,W} of a dataset.
"""

from typing import Callable, Literal, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from scipy.spatial.distance import cdist

from ..errors import ContractError
from ..utils.logging import get_logger

logger = get_logger(__name__)

STOCHASTIC_TOL = 1e-9

SplitTag = Literal["train", "val", "test"]


def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.array(array, dtype=float, copy=True)
    array.flags.writeable = False
    return array


class Region(BaseModel):
    """Square region of `side` meters centred on (center_lat, center_lon)."""

    model_config = ConfigDict(frozen=True)

    center_lat: float = Field(default=48.8635, ge=-90.0, le=90.0, description="Centre latitude in degrees")
    center_lon: float = Field(default=2.3486, ge=-180.0, le=180.0, description="Centre longitude in degrees")
    side: float = Field(default=6500.0, gt=0.0, description="Side length in meters")

    @property
    def half_side(self) -> float:
        return self.side / 2.0

    def normalize(self, xy: np.ndarray) -> np.ndarray:
        """Metric offsets to [-1, 1]^2 coordinates."""
        return 2.0 * np.asarray(xy, dtype=float) / self.side

    def denormalize(self, uv: np.ndarray) -> np.ndarray:
        return np.asarray(uv, dtype=float) * self.side / 2.0

    def contains(self, xy: np.ndarray, tol: float = 1e-6) -> np.ndarray:
        xy = np.atleast_2d(xy)
        return np.all(np.abs(xy) <= self.half_side + tol, axis=1)


class Location(BaseModel):
    """A point in meters east (x) and north (y) of the region centre."""

    model_config = ConfigDict(frozen=True)

    x: float
    y: float

    @field_validator("x", "y")
    @classmethod
    def _finite(cls, value: float) -> float:
        if not np.isfinite(value):
            raise ValueError("location coordinates must be finite")
        return value

    def normalized(self, side: float) -> Tuple[float, float]:
        return 2.0 * self.x / side, 2.0 * self.y / side

    @classmethod
    def from_normalized(cls, u: float, v: float, side: float) -> "Location":
        return cls(x=u * side / 2.0, y=v * side / 2.0)

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y], dtype=float)

    def distance(self, other: "Location") -> float:
        return float(np.hypot(self.x - other.x, self.y - other.y))


class LabeledSample(BaseModel):
    model_config = ConfigDict(frozen=True)

    class_id: int = Field(ge=0)
    location: Location


class Dataset(BaseModel):
    """
    One split of (user id, location) records.

    Stored column-wise: `class_ids` (N,) and `xy` (N, 2) in meters.
    """

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    class_ids: np.ndarray
    xy: np.ndarray
    num_classes: int = Field(gt=0)
    region: Region
    split_tag: SplitTag

    @field_validator("class_ids", mode="before")
    @classmethod
    def _as_int_vector(cls, value) -> np.ndarray:
        array = np.array(value, dtype=np.int64, copy=True).reshape(-1)
        array.flags.writeable = False
        return array

    @field_validator("xy", mode="before")
    @classmethod
    def _as_points(cls, value) -> np.ndarray:
        array = np.array(value, dtype=float, copy=True).reshape(-1, 2)
        if not np.all(np.isfinite(array)):
            raise ValueError("locations must be finite")
        array.flags.writeable = False
        return array

    @model_validator(mode="after")
    def _check_invariants(self) -> "Dataset":
        if len(self.class_ids) != len(self.xy):
            raise ValueError("class_ids and xy must have the same length")
        if len(self.class_ids) and (self.class_ids.min() < 0 or self.class_ids.max() >= self.num_classes):
            raise ValueError(f"class ids must lie in [0, {self.num_classes})")
        if self.split_tag == "train":
            missing = set(range(self.num_classes)) - set(np.unique(self.class_ids).tolist())
            if missing:
                raise ValueError(f"train split lacks classes {sorted(missing)}")
        if len(self.xy) and not np.all(self.region.contains(self.xy)):
            raise ValueError("all locations must lie inside the region")
        return self

    def __len__(self) -> int:
        return len(self.class_ids)

    @property
    def samples(self) -> list:
        return [
            LabeledSample(class_id=int(c), location=Location(x=float(p[0]), y=float(p[1])))
            for c, p in zip(self.class_ids, self.xy)
        ]

    def normalized_xy(self) -> np.ndarray:
        return self.region.normalize(self.xy)

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.class_ids, minlength=self.num_classes)


class DatasetSplits(BaseModel):
    model_config = ConfigDict(frozen=True)

    train: Dataset
    val: Dataset
    test: Dataset

    def by_name(self, split: str) -> Dataset:
        return {"train": self.train, "val": self.val, "test": self.test}[split]


class DiscreteDist(BaseModel):
    """Probability vector; entries non-negative and summing to 1 within 1e-9."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    probs: np.ndarray

    @field_validator("probs", mode="before")
    @classmethod
    def _check(cls, value) -> np.ndarray:
        array = np.asarray(value, dtype=float).reshape(-1)
        if array.size == 0 or np.any(np.isnan(array)) or np.any(array < -STOCHASTIC_TOL):
            raise ValueError("probabilities must be non-negative numbers")
        if abs(array.sum() - 1.0) > STOCHASTIC_TOL:
            raise ValueError(f"probabilities sum to {array.sum()!r}, not 1")
        return _frozen(np.clip(array, 0.0, None))

    @classmethod
    def uniform(cls, size: int) -> "DiscreteDist":
        return cls(probs=np.full(size, 1.0 / size))

    @property
    def size(self) -> int:
        return int(self.probs.size)


class CondTable(BaseModel):
    """Row-stochastic matrix: row i is the output distribution for input i."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    matrix: np.ndarray

    @field_validator("matrix", mode="before")
    @classmethod
    def _check(cls, value) -> np.ndarray:
        array = np.asarray(value, dtype=float)
        if array.ndim != 2 or array.size == 0:
            raise ValueError("a conditional table must be a non-empty matrix")
        if np.any(np.isnan(array)) or np.any(array < -STOCHASTIC_TOL):
            raise ValueError("conditional probabilities must be non-negative numbers")
        row_sums = array.sum(axis=1)
        if np.any(np.abs(row_sums - 1.0) > STOCHASTIC_TOL):
            raise ValueError("every row of a conditional table must sum to 1")
        return _frozen(np.clip(array, 0.0, None))

    @property
    def rows(self) -> int:
        return int(self.matrix.shape[0])

    @property
    def cols(self) -> int:
        return int(self.matrix.shape[1])

    @classmethod
    def identity(cls, size: int) -> "CondTable":
        return cls(matrix=np.eye(size))

    @classmethod
    def constant(cls, rows: int, cols: int, target: int = 0) -> "CondTable":
        matrix = np.zeros((rows, cols))
        matrix[:, target] = 1.0
        return cls(matrix=matrix)

    @classmethod
    def from_unnormalized(cls, weights: np.ndarray) -> "CondTable":
        weights = np.asarray(weights, dtype=float)
        return cls(matrix=weights / weights.sum(axis=1, keepdims=True))

    def mix(self, other: "CondTable", lam: float) -> "CondTable":
        """Convex combination lam*self + (1-lam)*other."""
        if not 0.0 <= lam <= 1.0:
            raise ContractError("mixing weight must lie in [0, 1]")
        if self.matrix.shape != other.matrix.shape:
            raise ContractError("cannot mix tables of different shapes")
        return CondTable(matrix=lam * self.matrix + (1.0 - lam) * other.matrix)


class JointTable(BaseModel):
    """Joint distribution P_{X,W,Z,Y} indexed as p[x, w, z, y]."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    p: np.ndarray

    @field_validator("p", mode="before")
    @classmethod
    def _check(cls, value) -> np.ndarray:
        array = np.asarray(value, dtype=float)
        if array.ndim != 4:
            raise ValueError("joint table must have four axes (x, w, z, y)")
        if abs(array.sum() - 1.0) > 1e-9:
            raise ValueError("joint table must sum to 1")
        return _frozen(array)

    def xw(self) -> np.ndarray:
        return self.p.sum(axis=(2, 3))

    def xz(self) -> np.ndarray:
        return self.p.sum(axis=(1, 3))

    def xy(self) -> np.ndarray:
        return self.p.sum(axis=(1, 2))

    def wz(self) -> np.ndarray:
        return self.p.sum(axis=(0, 3))

    def zy(self) -> np.ndarray:
        return self.p.sum(axis=(0, 1))


def empirical_joint(dataset: Dataset, decimals: int = 6) -> Tuple[np.ndarray, np.ndarray]:
    """
    Empirical P_{X,W} of a dataset.

    Each sample weighs 1/N; duplicate locations (after rounding to `decimals`
    meters digits) are merged and their weights summed.
    Returns:
        (joint of shape (num_classes, |W|), support locations of shape (|W|, 2))
    """
    if len(dataset) == 0:
        raise ContractError("cannot build a data model from an empty dataset")
    support, inverse = np.unique(np.round(dataset.xy, decimals), axis=0, return_inverse=True)
    joint = np.zeros((dataset.num_classes, len(support)))
    np.add.at(joint, (dataset.class_ids, inverse.reshape(-1)), 1.0 / len(dataset))
    return joint, support


def derive_joint(
    data_model: Union[np.ndarray, Dataset],
    mech: CondTable,
    pred: CondTable,
) -> JointTable:
    """
    P_{X,W,Z,Y}(x,w,z,y) = P_{X,W}(x,w) * P_{Z|W}(z|w) * P_{Y|Z}(y|z).
    Args:
        data_model: P_{X,W} as an (|X|, |W|) matrix, or a Dataset whose empirical joint is used
        mech: Obfuscation mechanism P_{Z|W}
        pred: Classifier P_{Y|Z}
    """
    p_xw = empirical_joint(data_model)[0] if isinstance(data_model, Dataset) else np.asarray(data_model, dtype=float)
    if p_xw.ndim != 2 or abs(p_xw.sum() - 1.0) > 1e-9 or np.any(p_xw < 0):
        raise ContractError("data model must be a non-negative (|X|, |W|) matrix summing to 1")
    if p_xw.shape[1] != mech.rows:
        raise ContractError(f"data model has {p_xw.shape[1]} locations but mechanism has {mech.rows} rows")
    if mech.cols != pred.rows:
        raise ContractError(f"mechanism has {mech.cols} outputs but classifier has {pred.rows} rows")
    return JointTable(p=np.einsum("xw,wz,zy->xwzy", p_xw, mech.matrix, pred.matrix))


def marginal_X(joint: JointTable) -> DiscreteDist:
    return DiscreteDist(probs=joint.p.sum(axis=(1, 2, 3)))


def marginal_W(joint: JointTable) -> DiscreteDist:
    return DiscreteDist(probs=joint.p.sum(axis=(0, 2, 3)))


def marginal_Z(joint: JointTable) -> DiscreteDist:
    return DiscreteDist(probs=joint.p.sum(axis=(0, 1, 3)))


def posterior_from_xz(p_xz: np.ndarray) -> Tuple[CondTable, np.ndarray]:
    """
    Posterior P_{X|Z} as a (|Z|, |X|) table from a joint P_{X,Z}.

    Rows for observations with zero mass are set to uniform.
    Returns:
        (posterior table, boolean mask of zero-mass observations)
    """
    p_xz = np.asarray(p_xz, dtype=float)
    p_z = p_xz.sum(axis=0)
    empty = p_z <= 0.0
    rows = np.empty((p_xz.shape[1], p_xz.shape[0]))
    rows[~empty] = (p_xz[:, ~empty] / p_z[~empty]).T
    rows[empty] = 1.0 / p_xz.shape[0]
    if np.any(empty):
        logger.warning(
            "Posterior undefined for zero-mass observations, using uniform rows",
            extra={"zero_mass_observations": int(empty.sum())},
        )
    return CondTable(matrix=rows), empty


def posterior_X_given_Z(joint: JointTable) -> CondTable:
    return posterior_from_xz(joint.xz())[0]


def distance_matrix(points_w: np.ndarray, points_z: np.ndarray) -> np.ndarray:
    """Euclidean distances in meters between every true and every reported location."""
    return cdist(np.atleast_2d(points_w), np.atleast_2d(points_z), metric="euclidean")


LossSpec = Union[np.ndarray, Callable[[int, int], float]]


def expected_distortion(p_w: DiscreteDist, mech: CondTable, loss: LossSpec) -> float:
    """
    Expected utility loss sum_w P_W(w) sum_z P_{Z|W}(z|w) loss(w, z), in meters.
    Args:
        p_w: Prior on true locations
        mech: Mechanism P_{Z|W}
        loss: (|W|, |Z|) matrix of losses, or a callable loss(w_index, z_index)
    """
    if p_w.size != mech.rows:
        raise ContractError(f"prior has {p_w.size} entries but mechanism has {mech.rows} rows")
    if callable(loss):
        loss_matrix = np.array([[loss(w, z) for z in range(mech.cols)] for w in range(mech.rows)], dtype=float)
    else:
        loss_matrix = np.asarray(loss, dtype=float)
    if loss_matrix.shape != mech.matrix.shape:
        raise ContractError(f"loss matrix shape {loss_matrix.shape} does not match mechanism {mech.matrix.shape}")
    if np.any(loss_matrix < 0):
        raise ContractError("loss must be non-negative")
    return float(np.einsum("w,wz,wz->", p_w.probs, mech.matrix, loss_matrix))

