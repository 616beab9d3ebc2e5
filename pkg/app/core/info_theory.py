"""
Entropy, conditional entropy, mutual information, cross entropy and Bayes
error of discrete distributions, plus the batch estimators used as training
losses.

All logarithms are natural (nats); use `to_bits` for reporting.
"""

from typing import Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator, model_validator
from scipy.special import entr

from ..errors import ContractError
from .model import CondTable, DiscreteDist

LOG_FLOOR = 1e-12

ArrayOrDist = Union[np.ndarray, DiscreteDist]


def to_bits(nats: float) -> float:
    return nats / np.log(2.0)


def _probs(p: ArrayOrDist) -> np.ndarray:
    return p.probs if isinstance(p, DiscreteDist) else np.asarray(p, dtype=float)


def _joint(joint_xy: np.ndarray) -> np.ndarray:
    joint_xy = np.asarray(joint_xy, dtype=float)
    if joint_xy.ndim != 2:
        raise ContractError("a joint distribution of two variables must be a matrix")
    if abs(joint_xy.sum() - 1.0) > 1e-9 or np.any(joint_xy < 0):
        raise ContractError("joint distribution must be non-negative and sum to 1")
    return joint_xy


def _plogp(p: np.ndarray) -> np.ndarray:
    """p * log(max(p, floor)), which is 0 at p = 0."""
    return p * np.log(np.maximum(p, LOG_FLOOR))


def _dplogp(p: np.ndarray) -> np.ndarray:
    return np.where(p > LOG_FLOOR, np.log(np.maximum(p, LOG_FLOOR)) + 1.0, np.log(LOG_FLOOR))


def entropy(p: ArrayOrDist) -> float:
    """Shannon entropy -sum p log p in nats, with 0 log 0 = 0."""
    return float(entr(_probs(p)).sum())


def joint_entropy(joint: np.ndarray) -> float:
    return float(entr(np.asarray(joint, dtype=float)).sum())


def cond_entropy(joint_xy: np.ndarray) -> float:
    """H(X|Y) for a joint indexed [x, y]."""
    joint_xy = _joint(joint_xy)
    return max(joint_entropy(joint_xy) - entropy(joint_xy.sum(axis=0)), 0.0)


def mutual_info(joint_xy: np.ndarray) -> float:
    """I(X;Y) = H(X) + H(Y) - H(X,Y) for a joint indexed [x, y]."""
    joint_xy = _joint(joint_xy)
    value = entropy(joint_xy.sum(axis=1)) + entropy(joint_xy.sum(axis=0)) - joint_entropy(joint_xy)
    return max(value, 0.0)


def bayes_error(joint_xy: np.ndarray) -> float:
    """Error of the maximum-a-posteriori guess of X from Y: 1 - sum_y max_x P(x, y)."""
    joint_xy = _joint(joint_xy)
    return float(1.0 - joint_xy.max(axis=0).sum())


def cross_entropy(p_z: DiscreteDist, post: CondTable, pred: CondTable) -> float:
    """
    CE between posterior and prediction: -sum_z P_Z(z) sum_x P_{X|Z}(x|z) log P_{Y|Z}(x|z).
    Args:
        p_z: Marginal of the observation
        post: Posterior P_{X|Z}, rows indexed by z
        pred: Classifier P_{Y|Z}, rows indexed by z
    """
    if post.matrix.shape != pred.matrix.shape or post.rows != p_z.size:
        raise ContractError("P_Z, posterior and prediction shapes disagree")
    log_pred = np.log(np.maximum(pred.matrix, LOG_FLOOR))
    return float(-np.einsum("z,zx,zx->", p_z.probs, post.matrix, log_pred))


def santhi_vardy_gap(joint_xy: np.ndarray) -> Tuple[float, float]:
    """
    Bayes error and its upper bound 1 - 2^(-H(X|Y)) with H in bits.
    Returns:
        (bayes_error, bound)
    """
    error = bayes_error(joint_xy)
    bound = 1.0 - 2.0 ** (-to_bits(cond_entropy(joint_xy)))
    return error, bound


class BatchMats(BaseModel):
    """Target (one-hot) and prediction (row-stochastic) matrices of one batch."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    T: np.ndarray
    Q: np.ndarray

    @field_validator("T", "Q", mode="before")
    @classmethod
    def _as_matrix(cls, value) -> np.ndarray:
        return np.atleast_2d(np.asarray(value, dtype=float))

    @model_validator(mode="after")
    def _check(self) -> "BatchMats":
        if self.T.shape != self.Q.shape or self.T.shape[0] < 1:
            raise ValueError("T and Q must be non-empty matrices of the same shape")
        if not np.all((self.T == 0) | (self.T == 1)) or not np.all(self.T.sum(axis=1) == 1):
            raise ValueError("every row of T must be one-hot")
        if np.any(self.Q < 0) or np.any(np.abs(self.Q.sum(axis=1) - 1.0) > 1e-6):
            raise ValueError("every row of Q must be a probability distribution")
        return self

    @property
    def size(self) -> int:
        return int(self.T.shape[0])

    @classmethod
    def from_labels(cls, labels: np.ndarray, Q: np.ndarray) -> "BatchMats":
        Q = np.atleast_2d(np.asarray(Q, dtype=float))
        T = np.zeros_like(Q)
        T[np.arange(len(labels)), np.asarray(labels, dtype=int)] = 1.0
        return cls(T=T, Q=Q)


def batch_estimates(b: BatchMats) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Batch estimates of P_X (target frequencies), P_Y (expected predictions)
    and P_{X,Y} = (1/N') sum_i T(i,.)^T Q(i,.).
    """
    n = b.size
    p_x = b.T.sum(axis=0) / n
    p_y = b.Q.sum(axis=0) / n
    p_xy = b.T.T @ b.Q / n
    return p_x, p_y, p_xy


def mi_from_estimates(p_x: np.ndarray, p_y: np.ndarray, p_xy: np.ndarray) -> float:
    """H(X) - H(X|Y): -sum P_X log P_X + sum P_XY log(P_XY / P_Y), log-clamped at 1e-12."""
    return float(-_plogp(p_x).sum() + _plogp(p_xy).sum() - _plogp(p_y).sum())


def batch_mutual_info(b: BatchMats) -> float:
    return mi_from_estimates(*batch_estimates(b))


def batch_mutual_info_grad(b: BatchMats) -> Tuple[float, np.ndarray]:
    """
    Batch MI and its gradient with respect to Q.

    dI/dQ(i, y) = (1/N') [ d(P_XY log P_XY)(x_i, y) - d(P_Y log P_Y)(y) ],
    where x_i is the target class of sample i.
    """
    p_x, p_y, p_xy = batch_estimates(b)
    value = mi_from_estimates(p_x, p_y, p_xy)
    targets = b.T.argmax(axis=1)
    grad = (_dplogp(p_xy)[targets, :] - _dplogp(p_y)[None, :]) / b.size
    return value, grad


def batch_cross_entropy_grad(b: BatchMats) -> Tuple[float, np.ndarray]:
    """Mean -log Q(i, x_i) over the batch and its gradient with respect to Q."""
    clamped = np.maximum(b.Q, LOG_FLOOR)
    value = float(-(b.T * np.log(clamped)).sum() / b.size)
    grad = np.where(b.Q > LOG_FLOOR, -b.T / clamped, 0.0) / b.size
    return value, grad
