"""`laplace-sample`: draw planar Laplace displacements and compare their mean with 2/eps."""

from pathlib import Path
from typing import Annotated, Optional

import numpy as np
import typer
from rich.console import Console
from rich.table import Table

from ..core.evaluation import empirical_distortion
from ..core.mechanisms import PlanarLaplace, laplace_expected_distortion, laplace_sample
from ..utils.io import Provenance, config_hash, points_frame, write_csv
from ..utils.logging import get_logger
from ..utils.rng import SeedFanout

logger = get_logger(__name__)

router = typer.Typer()


@router.command("laplace-sample")
def laplace_sample_command(
    epsilon: Annotated[str, typer.Option(help="Privacy parameter in 1/m, a number or ln2/<meters>")] = "ln2/100",
    samples: Annotated[int, typer.Option(min=1, help="Number of obfuscated points")] = 100_000,
    x: Annotated[float, typer.Option(help="True location, meters east of the centre")] = 0.0,
    y: Annotated[float, typer.Option(help="True location, meters north of the centre")] = 0.0,
    seed: Annotated[int, typer.Option(min=0, help="Master seed")] = 0,
    output: Annotated[Optional[Path], typer.Option(help="Write the points as class_id,x_m,y_m CSV")] = None,
) -> None:
    """Sample the planar Laplace mechanism around one location."""
    mechanism = PlanarLaplace(epsilon=epsilon)
    origin = np.tile([x, y], (samples, 1))
    points = laplace_sample(mechanism, origin, SeedFanout(seed).stream("laplace"))
    measured = empirical_distortion(origin, points)
    expected = laplace_expected_distortion(mechanism)

    table = Table(title="Planar Laplace")
    for column in ("epsilon (1/m)", "samples", "mean displacement (m)", "2/epsilon (m)", "relative gap"):
        table.add_column(column, justify="right")
    table.add_row(f"{mechanism.epsilon:.6g}", str(samples), f"{measured:.2f}", f"{expected:.2f}",
                  f"{abs(measured - expected) / expected:.4f}")
    Console().print(table)

    if output is not None:
        provenance = Provenance(config_hash=config_hash({"epsilon": mechanism.epsilon, "x": x, "y": y}), seed=seed)
        write_csv(points_frame(np.zeros(samples, dtype=int), points), output, provenance)
        logger.info("Laplace samples written", extra={"path": str(output), "samples": samples})
