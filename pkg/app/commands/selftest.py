"""`selftest`: fast numerical checks of the core library."""

import math
from typing import Annotated, Callable, List, Tuple

import numpy as np
import typer
from pydantic import BaseModel
from rich.console import Console
from rich.table import Table

from ..core.info_theory import (
    BatchMats,
    batch_mutual_info,
    batch_mutual_info_grad,
    mi_from_estimates,
    mutual_info,
    santhi_vardy_gap,
)
from ..core.mechanisms import PlanarLaplace, laplace_displacements, laplace_expected_distortion
from ..core.neural import glorot_init, gradient_check, numerical_gradient, one_hot_cross_entropy, relative_error
from ..core.oracle import optimal_bayes_mechanism, payoff_tables_demo, two_point_instance
from ..utils.logging import get_logger
from ..utils.rng import SeedFanout

logger = get_logger(__name__)

router = typer.Typer()

GRADIENT_TOL = 1e-4


class CheckResult(BaseModel):
    name: str
    passed: bool
    detail: str


def _laplace_means(fanout: SeedFanout) -> Tuple[bool, str]:
    gaps = []
    for meters in (100, 60, 400, 180):
        mechanism = PlanarLaplace(epsilon=math.log(2.0) / meters)
        displacement = laplace_displacements(mechanism, 100_000, fanout.stream("laplace", meters))
        mean = float(np.linalg.norm(displacement, axis=1).mean())
        gaps.append(abs(mean - laplace_expected_distortion(mechanism)) / laplace_expected_distortion(mechanism))
    return max(gaps) < 0.02, f"largest relative gap {max(gaps):.4f}"


def _two_point_oracle(fanout: SeedFanout) -> Tuple[bool, str]:
    mech, error = optimal_bayes_mechanism(two_point_instance())
    swap = mech.matrix[0, 1]
    return abs(swap - 0.4) <= 1e-3 and abs(error - 0.4) <= 1e-3, f"swap {swap:.4f}, Bayes error {error:.4f}"


def _payoff_tables(fanout: SeedFanout) -> Tuple[bool, str]:
    tables = payoff_tables_demo()
    expected_success = np.array([[1, .5, .5, 0], [.5] * 4, [.5] * 4, [0, .5, .5, 1]])
    ok = np.allclose(tables["success"].to_numpy(), expected_success)
    ok &= np.allclose(tables["mi_bits"].to_numpy(), [[1, 0, 0, 1], [0] * 4, [0] * 4, [1, 0, 0, 1]])
    return bool(ok), "success, MI and 1-B tables"


def _classifier_gradient(fanout: SeedFanout) -> Tuple[bool, str]:
    rng = fanout.stream("selftest")
    net = glorot_init([2, 6, 4], seed=fanout.seed("selftest"), head="softmax")
    batch = rng.normal(size=(8, 2))
    labels = rng.integers(0, 4, size=8)
    error = gradient_check(net, batch, lambda q: one_hot_cross_entropy(q, labels))
    return error < GRADIENT_TOL, f"relative error {error:.2e}"


def _batch_mi_gradient(fanout: SeedFanout) -> Tuple[bool, str]:
    rng = fanout.stream("selftest", 1)
    labels = np.arange(12) % 3
    q = rng.dirichlet(np.ones(3), size=12)
    _, analytic = batch_mutual_info_grad(BatchMats.from_labels(labels, q))

    def value(flat: np.ndarray) -> float:
        t = np.zeros((12, 3))
        t[np.arange(12), labels] = 1.0
        q_flat = flat.reshape(12, 3)
        return mi_from_estimates(t.mean(axis=0), q_flat.mean(axis=0), t.T @ q_flat / 12)

    error = relative_error(analytic, numerical_gradient(value, q.ravel()))
    return error < GRADIENT_TOL, f"relative error {error:.2e}"


def _batch_matches_closed_form(fanout: SeedFanout) -> Tuple[bool, str]:
    rng = fanout.stream("selftest", 2)
    labels = rng.integers(0, 4, size=200)
    q = rng.dirichlet(np.ones(4), size=200)
    mats = BatchMats.from_labels(labels, q)
    gap = abs(batch_mutual_info(mats) - mutual_info(mats.T.T @ mats.Q / 200))
    return gap < 1e-10, f"gap {gap:.2e}"


def _santhi_vardy(fanout: SeedFanout) -> Tuple[bool, str]:
    rng = fanout.stream("selftest", 3)
    worst = -np.inf
    for _ in range(200):
        joint = rng.dirichlet(np.ones(12)).reshape(3, 4)
        error, bound = santhi_vardy_gap(joint)
        worst = max(worst, error - bound)
    return worst <= 1e-12, f"largest error - bound {worst:.2e}"


CHECKS: List[Tuple[str, Callable[[SeedFanout], Tuple[bool, str]]]] = [
    ("laplace mean displacement", _laplace_means),
    ("two-point oracle", _two_point_oracle),
    ("payoff tables", _payoff_tables),
    ("classifier gradient", _classifier_gradient),
    ("batch MI gradient", _batch_mi_gradient),
    ("batch MI vs closed form", _batch_matches_closed_form),
    ("Santhi-Vardy bound", _santhi_vardy),
]


def run_selftest(seed: int = 0) -> List[CheckResult]:
    fanout = SeedFanout(seed)
    results = []
    for name, check in CHECKS:
        passed, detail = check(fanout)
        results.append(CheckResult(name=name, passed=bool(passed), detail=detail))
        if not passed:
            logger.warning("Self-test check failed", extra={"check": name, "detail": detail})
    return results


@router.command("selftest")
def selftest(seed: Annotated[int, typer.Option(min=0)] = 0) -> None:
    """Run the fast numerical self-checks."""
    results = run_selftest(seed)
    table = Table(title="Self-test")
    table.add_column("check")
    table.add_column("status")
    table.add_column("detail")
    for result in results:
        table.add_row(result.name, "PASS" if result.passed else "FAIL", result.detail)
    Console().print(table)
    if not all(result.passed for result in results):
        raise typer.Exit(code=1)
