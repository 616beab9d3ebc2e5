"""
Exact and brute-force optimal mechanisms on tiny discrete instances.

The reported-location support is the instance's own location set. The Bayes
error 1 - sum_z max_x P(x, z) is concave in the mechanism and the distortion
is linear, so the constrained maximum can be found by exhaustive lattice
search (two or three locations), projected subgradient ascent or an exact
linear programme.
"""

from concurrent.futures import ThreadPoolExecutor
from itertools import product
from math import comb
from typing import Dict, Literal, Optional, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from scipy.optimize import linprog

from ..errors import ContractError
from ..utils.logging import get_logger
from ..utils.rng import SeedFanout
from .info_theory import bayes_error, mutual_info, to_bits
from .model import CondTable, DiscreteDist, derive_joint, distance_matrix, expected_distortion

logger = get_logger(__name__)

OracleMethod = Literal["auto", "lattice", "ascent", "lp"]

MAX_LOCATIONS = 6
LATTICE_LIMIT = 2_000_000
TIE_TOL = 1e-12


class TinyInstance(BaseModel):
    """
    Up to six locations; class c lives at location `assignment[c]` with prior `prior[c]`.
    """

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    locations: np.ndarray
    prior: Tuple[float, ...]
    assignment: Tuple[int, ...]
    L: float = Field(description="Distortion budget in meters")

    @field_validator("locations", mode="before")
    @classmethod
    def _as_points(cls, value) -> np.ndarray:
        array = np.array(value, dtype=float, copy=True).reshape(-1, 2)
        array.flags.writeable = False
        return array

    @model_validator(mode="after")
    def _check(self) -> "TinyInstance":
        if not 1 <= len(self.locations) <= MAX_LOCATIONS:
            raise ValueError(f"a tiny instance has between 1 and {MAX_LOCATIONS} locations")
        if len(self.prior) != len(self.assignment):
            raise ValueError("one prior weight per class is required")
        DiscreteDist(probs=self.prior)
        if any(not 0 <= a < len(self.locations) for a in self.assignment):
            raise ValueError("class assignment points outside the location list")
        return self

    @property
    def num_locations(self) -> int:
        return len(self.locations)

    @property
    def num_classes(self) -> int:
        return len(self.prior)

    def distances(self) -> np.ndarray:
        return distance_matrix(self.locations, self.locations)

    def data_model(self) -> np.ndarray:
        """P_{X,W} as a (classes, locations) matrix."""
        p_xw = np.zeros((self.num_classes, self.num_locations))
        p_xw[np.arange(self.num_classes), list(self.assignment)] = self.prior
        return p_xw

    def location_prior(self) -> DiscreteDist:
        return DiscreteDist(probs=self.data_model().sum(axis=0))


class OracleResult(BaseModel):
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    mechanism: CondTable
    bayes_error: float
    distortion_m: float
    method: str


def two_point_instance(distance: float = 100.0, L: float = 40.0) -> TinyInstance:
    """Two individuals A and B at locations `distance` meters apart, uniform prior."""
    return TinyInstance(locations=[[0.0, 0.0], [distance, 0.0]], prior=(0.5, 0.5), assignment=(0, 1), L=L)


def square_instance(side: float = 300.0, L: float = 173.0) -> TinyInstance:
    """Four individuals on the vertices of a square centred on the origin."""
    h = side / 2.0
    return TinyInstance(
        locations=[[-h, -h], [h, -h], [h, h], [-h, h]],
        prior=(0.25, 0.25, 0.25, 0.25),
        assignment=(0, 1, 2, 3),
        L=L,
    )


def mechanism_bayes_error(inst: TinyInstance, mech: np.ndarray) -> float:
    return bayes_error(inst.data_model() @ mech)


def mechanism_distortion(inst: TinyInstance, mech: np.ndarray) -> float:
    return expected_distortion(inst.location_prior(), CondTable(matrix=mech), inst.distances())


def _check_budget(inst: TinyInstance) -> None:
    if inst.L < 0:
        raise ContractError(f"infeasible budget L={inst.L} < 0")


def _row_lattice(n: int, steps: int) -> np.ndarray:
    """All probability vectors of length n whose entries are multiples of 1/steps."""
    if n == 1:
        return np.ones((1, 1))
    rows = [c + (steps - sum(c),) for c in product(range(steps + 1), repeat=n - 1) if sum(c) <= steps]
    return np.array(rows, dtype=float) / steps


def _lattice(inst: TinyInstance, resolution: float) -> np.ndarray:
    """
    Exhaustive search over row-stochastic matrices on the lattice.

    Rows of locations nobody occupies are fixed to the identity. Among
    maximisers the mechanism with the most even per-location distortion wins.
    """
    steps = int(round(1.0 / resolution))
    p_xw = inst.data_model()
    p_w = p_xw.sum(axis=0)
    d = inst.distances()
    occupied = np.flatnonzero(p_w > 0)
    row_choices = _row_lattice(inst.num_locations, steps)
    if len(row_choices) ** len(occupied) > LATTICE_LIMIT:
        raise ContractError(
            f"lattice of {len(row_choices)}^{len(occupied)} mechanisms is too large, use method 'ascent' or 'lp'"
        )

    axes = np.meshgrid(*[np.arange(len(row_choices))] * len(occupied), indexing="ij")
    combos = np.stack(axes, axis=-1).reshape(-1, len(occupied))
    # (combos, occupied, |Z|)
    rows = row_choices[combos]
    row_cost = np.einsum("kwz,wz->kw", rows, d[occupied])
    distortion = row_cost @ p_w[occupied]
    p_xz = np.einsum("xw,kwz->kxz", p_xw[:, occupied], rows)
    errors = 1.0 - p_xz.max(axis=1).sum(axis=1)

    feasible = distortion <= inst.L + 1e-9
    if not feasible.any():
        raise ContractError("no lattice mechanism satisfies the budget")
    errors = np.where(feasible, errors, -np.inf)
    best = errors.max()
    ties = np.flatnonzero(errors >= best - TIE_TOL)
    spread = row_cost[ties].max(axis=1) - row_cost[ties].min(axis=1)
    chosen = ties[np.argmin(spread)]

    mech = np.eye(inst.num_locations)
    mech[occupied] = rows[chosen]
    return mech


def _project_rows_to_simplex(m: np.ndarray) -> np.ndarray:
    """Euclidean projection of every row onto the probability simplex."""
    n = m.shape[1]
    u = -np.sort(-m, axis=1)
    css = np.cumsum(u, axis=1) - 1.0
    k = np.arange(1, n + 1)
    rho = (u - css / k > 0).sum(axis=1)
    theta = css[np.arange(len(m)), rho - 1] / rho
    return np.maximum(m - theta[:, None], 0.0)


def _repair(m: np.ndarray, p_w: np.ndarray, d: np.ndarray, L: float) -> np.ndarray:
    """Mix toward the identity (zero distortion) until the budget holds."""
    cost = float(np.einsum("w,wz,wz->", p_w, m, d))
    if cost <= L:
        return m
    lam = L / cost
    return lam * m + (1.0 - lam) * np.eye(len(m))


def _ascent_run(inst: TinyInstance, rng: np.random.Generator, iterations: int, step: float) -> Tuple[float, np.ndarray]:
    p_xw = inst.data_model()
    p_w = p_xw.sum(axis=0)
    d = inst.distances()
    n = inst.num_locations
    m = _repair(rng.dirichlet(np.ones(n), size=n), p_w, d, inst.L)
    best_value, best = mechanism_bayes_error(inst, m), m
    for t in range(1, iterations + 1):
        guesses = (p_xw @ m).argmax(axis=0)
        # subgradient of 1 - sum_z P(guess(z), z) with respect to m[w, z]
        grad = -p_xw[guesses, :].T
        m = _repair(_project_rows_to_simplex(m + step / np.sqrt(t) * grad), p_w, d, inst.L)
        value = mechanism_bayes_error(inst, m)
        if value > best_value:
            best_value, best = value, m
    return best_value, best


def _ascent(inst: TinyInstance, restarts: int, fanout: SeedFanout, workers: int,
            iterations: int = 2000, step: float = 0.5) -> np.ndarray:
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        runs = list(pool.map(lambda r: _ascent_run(inst, fanout.stream("oracle", r), iterations, step),
                             range(restarts)))
    return max(runs, key=lambda run: run[0])[1]


def _lp(inst: TinyInstance) -> np.ndarray:
    """
    Epigraph LP: minimise sum_z t_z subject to t_z >= P(x, z) for every x,
    row-stochastic m and expected distortion <= L.
    """
    p_xw = inst.data_model()
    p_w = p_xw.sum(axis=0)
    d = inst.distances()
    n, k = inst.num_locations, inst.num_classes
    nm = n * n

    c = np.concatenate([np.zeros(nm), np.ones(n)])
    a_ub, b_ub = [], []
    for x in range(k):
        for z in range(n):
            row = np.zeros(nm + n)
            row[np.arange(n) * n + z] = p_xw[x]
            row[nm + z] = -1.0
            a_ub.append(row)
            b_ub.append(0.0)
    a_ub.append(np.concatenate([(p_w[:, None] * d).ravel(), np.zeros(n)]))
    b_ub.append(inst.L)

    a_eq = np.zeros((n, nm + n))
    for w in range(n):
        a_eq[w, w * n:(w + 1) * n] = 1.0

    result = linprog(c, A_ub=np.array(a_ub), b_ub=np.array(b_ub), A_eq=a_eq, b_eq=np.ones(n),
                     bounds=[(0.0, None)] * (nm + n), method="highs")
    if not result.success:
        raise ContractError(f"linear programme failed: {result.message}")
    m = np.clip(result.x[:nm].reshape(n, n), 0.0, None)
    return m / m.sum(axis=1, keepdims=True)


def optimal_bayes_mechanism(
    inst: TinyInstance,
    resolution: float = 1e-3,
    method: OracleMethod = "auto",
    restarts: int = 32,
    fanout: Optional[SeedFanout] = None,
    workers: int = 1,
) -> Tuple[CondTable, float]:
    """
    Mechanism over the instance's own locations maximising the Bayes error
    under the distortion budget.
    Args:
        inst: Tiny instance
        resolution: Simplex lattice step for the exhaustive search
        method: 'lattice', 'ascent', 'lp', or 'auto' (lattice when small enough, else ascent)
        restarts: Random restarts of the ascent solver
        fanout: Seed source of the restarts (master seed 0 when omitted)
        workers: Threads running restarts
    Returns:
        (mechanism, Bayes error)
    """
    _check_budget(inst)
    if not 0.0 < resolution <= 0.5:
        raise ContractError("resolution must lie in (0, 0.5]")
    if method == "auto":
        steps = int(round(1.0 / resolution))
        occupied = int(np.count_nonzero(inst.location_prior().probs))
        size = comb(steps + inst.num_locations - 1, inst.num_locations - 1) if inst.num_locations <= 3 else LATTICE_LIMIT + 1
        method = "lattice" if size ** occupied <= LATTICE_LIMIT else "ascent"

    if method == "lattice":
        mech = _lattice(inst, resolution)
    elif method == "ascent":
        mech = _ascent(inst, restarts, fanout or SeedFanout(0), workers)
    else:
        mech = _lp(inst)

    error = mechanism_bayes_error(inst, mech)
    logger.info(
        "Optimal mechanism computed",
        extra={"method": method, "bayes_error": round(error, 6), "distortion_m": round(mechanism_distortion(inst, mech), 4)},
    )
    return CondTable(matrix=mech), error


def solve(inst: TinyInstance, method: OracleMethod = "auto", **kwargs) -> OracleResult:
    mech, error = optimal_bayes_mechanism(inst, method=method, **kwargs)
    return OracleResult(mechanism=mech, bayes_error=error,
                        distortion_m=mechanism_distortion(inst, mech.matrix), method=method)


def game_value_bounds(inst: TinyInstance) -> Tuple[float, float]:
    """
    Largest achievable Bayes error and I(X;Z) (nats) of the LP-optimal mechanism.
    The error never exceeds 1 - max prior.
    """
    mech, error = optimal_bayes_mechanism(inst, method="lp")
    return min(error, 1.0 - max(inst.prior)), mutual_info(inst.data_model() @ mech.matrix)


PAYOFF_GENERATORS = ("identity", "collapse-a", "collapse-b", "swap")
PAYOFF_CLASSIFIERS = ("identity", "all-A", "all-B", "swap")


def _two_by_two(name: str) -> CondTable:
    return CondTable(matrix={
        "identity": [[1.0, 0.0], [0.0, 1.0]],
        "swap": [[0.0, 1.0], [1.0, 0.0]],
        "collapse-a": [[1.0, 0.0], [1.0, 0.0]],
        "collapse-b": [[0.0, 1.0], [0.0, 1.0]],
        "all-A": [[1.0, 0.0], [1.0, 0.0]],
        "all-B": [[0.0, 1.0], [0.0, 1.0]],
    }[name])


def payoff_tables_demo() -> Dict[str, pd.DataFrame]:
    """
    Payoff tables of the two-user game: users A and B at locations a and b,
    uniform prior, every deterministic generator against every deterministic
    classifier.
    Returns:
        {"success": P(Y = X), "mi_bits": I(X;Y) in bits, "one_minus_bayes": 1 - B(X|Y)}
    """
    p_xw = np.diag([0.5, 0.5])
    tables = {key: pd.DataFrame(index=pd.Index(PAYOFF_GENERATORS, name="generator"), columns=PAYOFF_CLASSIFIERS,
                                dtype=float)
              for key in ("success", "mi_bits", "one_minus_bayes")}
    for g in PAYOFF_GENERATORS:
        for c in PAYOFF_CLASSIFIERS:
            p_xy = derive_joint(p_xw, _two_by_two(g), _two_by_two(c)).xy()
            tables["success"].loc[g, c] = float(np.trace(p_xy))
            tables["mi_bits"].loc[g, c] = to_bits(mutual_info(p_xy))
            tables["one_minus_bayes"].loc[g, c] = 1.0 - bayes_error(p_xy)
    return tables
