"""`oracle`: optimal mechanism of a tiny instance."""

from pathlib import Path
from typing import Annotated, Optional

import typer
from rich.console import Console
from rich.table import Table

from ..core.mechanisms import TabularMechanism
from ..core.oracle import solve, square_instance, two_point_instance
from ..errors import ConfigError
from ..utils.io import Provenance, config_hash, save_mechanism

router = typer.Typer()


@router.command("oracle")
def oracle(
    instance: Annotated[str, typer.Option(help="two-point or square")] = "two-point",
    budget: Annotated[float, typer.Option("--budget", "-L", help="Distortion budget in meters")] = 40.0,
    distance: Annotated[float, typer.Option(help="Distance between the points, or the square side, in meters")] = 100.0,
    method: Annotated[str, typer.Option(help="auto, lattice, ascent or lp")] = "auto",
    resolution: Annotated[float, typer.Option(help="Simplex lattice step")] = 1e-3,
    output: Annotated[Optional[Path], typer.Option(help="Write the mechanism matrix as CSV")] = None,
) -> None:
    """Compute the Bayes-error maximising mechanism under a distortion budget."""
    if instance == "two-point":
        inst = two_point_instance(distance=distance, L=budget)
    elif instance == "square":
        inst = square_instance(side=distance, L=budget)
    else:
        raise ConfigError(f"unknown instance {instance!r}; choose two-point or square")
    if method not in ("auto", "lattice", "ascent", "lp"):
        raise ConfigError(f"unknown method {method!r}")

    result = solve(inst, method=method, resolution=resolution)
    console = Console()
    table = Table(title=f"Optimal mechanism ({instance}, L={budget:g} m)")
    table.add_column("w \\ z")
    for z in range(inst.num_locations):
        table.add_column(f"z{z}", justify="right")
    for w, row in enumerate(result.mechanism.matrix):
        table.add_row(f"w{w}", *[f"{p:.4f}" for p in row])
    console.print(table)
    console.print(f"Bayes error: {result.bayes_error:.4f}")
    console.print(f"Expected distortion: {result.distortion_m:.2f} m")

    if output is not None:
        payload = {"instance": instance, "L": budget, "distance": distance, "method": method, "resolution": resolution}
        save_mechanism(TabularMechanism(support=inst.locations, table=result.mechanism), output,
                       Provenance(config_hash=config_hash(payload), seed=0))
