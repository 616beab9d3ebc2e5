"""
Obfuscation mechanisms: the planar Laplace baseline and explicit tabular
mechanisms, with density evaluation and sampling.
"""

import math
import re
from typing import Protocol, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from ..errors import ContractError
from .model import CondTable, Location

BRANCH_POINT = -1.0 / math.e


def lambertw_m1(x: Union[float, np.ndarray], tol: float = 1e-10, max_iter: int = 100) -> np.ndarray:
    """
    Lower real branch W_{-1} of the Lambert W function on [-1/e, 0).

    Starts from the branch-point series near -1/e and from the asymptotic
    expansion log(-x) - log(-log(-x)) elsewhere, then refines with Halley's
    method until the relative step falls below `tol`.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if np.any(x < BRANCH_POINT - 1e-15) or np.any(x >= 0.0):
        raise ContractError("W_{-1} is real only on [-1/e, 0)")
    x = np.maximum(x, BRANCH_POINT)

    p = -np.sqrt(np.maximum(2.0 * (math.e * x + 1.0), 0.0))
    series = -1.0 + p - p**2 / 3.0 + 11.0 / 72.0 * p**3
    with np.errstate(divide="ignore", invalid="ignore"):
        l1 = np.log(-x)
        l2 = np.log(-l1)
        asymptotic = l1 - l2 + l2 / l1
    w = np.where(x < -0.25, series, asymptotic)

    active = np.ones_like(w, dtype=bool)
    for _ in range(max_iter):
        ew = np.exp(w)
        f = w * ew - x
        wp1 = w + 1.0
        safe = active & (np.abs(wp1) > 1e-300)
        with np.errstate(divide="ignore", invalid="ignore"):
            step = f / (ew * wp1 - (w + 2.0) * f / (2.0 * wp1))
        step = np.where(safe & np.isfinite(step), step, 0.0)
        w = np.minimum(w - step, -1.0)
        active = np.abs(step) > tol * np.abs(w)
        if not active.any():
            break
    return w


def parse_epsilon(value: Union[str, float]) -> float:
    """Accepts a number or the form 'ln2/<meters>' used for the experiment parameters."""
    if isinstance(value, (int, float)):
        return float(value)
    match = re.fullmatch(r"\s*ln2\s*/\s*([0-9.eE+-]+)\s*", value)
    if match:
        return math.log(2.0) / float(match.group(1))
    return float(value)


class PlanarLaplace(BaseModel):
    """Planar Laplace mechanism with privacy parameter epsilon (1/m)."""

    model_config = ConfigDict(frozen=True)

    epsilon: float = Field(gt=0.0)

    @field_validator("epsilon", mode="before")
    @classmethod
    def _parse(cls, value):
        return parse_epsilon(value)


def laplace_density(m: PlanarLaplace, w: Location, z: Union[Location, np.ndarray]) -> Union[float, np.ndarray]:
    """Density eps^2 / (2 pi) * exp(-eps * d(w, z)), in 1/m^2."""
    if isinstance(z, Location):
        return m.epsilon**2 / (2.0 * math.pi) * math.exp(-m.epsilon * w.distance(z))
    d = np.linalg.norm(np.atleast_2d(z) - w.as_array(), axis=1)
    return m.epsilon**2 / (2.0 * math.pi) * np.exp(-m.epsilon * d)


def laplace_expected_distortion(m: PlanarLaplace) -> float:
    """Expected displacement 2/eps, independent of the prior."""
    return 2.0 / m.epsilon


def laplace_radius_quantile(m: PlanarLaplace, u: np.ndarray) -> np.ndarray:
    """
    Inverse of the radial CDF 1 - (1 + eps r) exp(-eps r):
    r = -(W_{-1}((u - 1)/e) + 1) / eps for u in [0, 1).
    """
    u = np.asarray(u, dtype=float)
    if np.any(u < 0.0) or np.any(u >= 1.0):
        raise ContractError("quantile levels must lie in [0, 1)")
    return -(lambertw_m1((u - 1.0) / math.e).reshape(u.shape) + 1.0) / m.epsilon


def laplace_displacements(m: PlanarLaplace, n: int, rng: np.random.Generator) -> np.ndarray:
    """n independent displacement vectors (meters): uniform angle, inverse-CDF radius."""
    theta = rng.uniform(0.0, 2.0 * math.pi, size=n)
    radius = laplace_radius_quantile(m, rng.random(size=n))
    return np.column_stack([radius * np.cos(theta), radius * np.sin(theta)])


def laplace_sample(
    m: PlanarLaplace,
    w: Union[Location, np.ndarray],
    rng: np.random.Generator,
) -> Union[Location, np.ndarray]:
    """Obfuscate one Location, or every row of an (N, 2) array of metric points."""
    if isinstance(w, Location):
        dx, dy = laplace_displacements(m, 1, rng)[0]
        return Location(x=w.x + dx, y=w.y + dy)
    points = np.atleast_2d(np.asarray(w, dtype=float))
    return points + laplace_displacements(m, len(points), rng)


class TabularMechanism(BaseModel):
    """Explicit mechanism: row i of `table` is the output law over `support` for input i."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    support: np.ndarray
    table: CondTable

    @field_validator("support", mode="before")
    @classmethod
    def _as_points(cls, value) -> np.ndarray:
        array = np.array(value, dtype=float, copy=True).reshape(-1, 2)
        array.flags.writeable = False
        return array

    @model_validator(mode="after")
    def _check(self) -> "TabularMechanism":
        if self.table.cols != len(self.support):
            raise ValueError("table columns must match the number of support points")
        return self


def tabular_sample(
    t: TabularMechanism,
    w_index: Union[int, np.ndarray],
    rng: np.random.Generator,
) -> Union[Location, np.ndarray]:
    """Draw reported locations for one input index (Location) or an array of indices ((N, 2) array)."""
    indices = np.atleast_1d(np.asarray(w_index))
    if indices.dtype.kind not in "iu" or np.any(indices < 0) or np.any(indices >= t.table.rows):
        raise ContractError(f"input index out of range [0, {t.table.rows})")
    cdf = np.cumsum(t.table.matrix[indices], axis=1)
    u = rng.random(size=len(indices))[:, None]
    outputs = np.minimum((cdf <= u).sum(axis=1), t.table.cols - 1)
    points = t.support[outputs]
    if np.ndim(w_index) == 0:
        return Location(x=float(points[0, 0]), y=float(points[0, 1]))
    return points


class Obfuscator(Protocol):
    """Anything that maps an (N, 2) array of true metric locations to reported ones."""

    name: str

    def obfuscate(self, xy: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        ...


class IdentityObfuscator:
    name = "original"

    def obfuscate(self, xy: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        return np.array(xy, dtype=float, copy=True)


class LaplaceObfuscator:
    name = "laplace"

    def __init__(self, mechanism: PlanarLaplace):
        self.mechanism = mechanism

    def obfuscate(self, xy: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        return laplace_sample(self.mechanism, xy, rng)
