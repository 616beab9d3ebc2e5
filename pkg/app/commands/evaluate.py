"""`evaluate`: Bayes-error matrix of one mechanism on a stored dataset split."""

from pathlib import Path
from typing import Annotated, List, Optional

import typer
from rich.console import Console
from rich.table import Table

from ..core.adversarial import GeneratorObfuscator
from ..core.evaluation import DEFAULT_GRIDS, DEFAULT_OBF_COUNTS, evaluate_mechanism, standard_grids
from ..core.mechanisms import IdentityObfuscator, LaplaceObfuscator, Obfuscator, PlanarLaplace
from ..errors import ConfigError
from ..utils.io import Provenance, config_hash, load_checkpoint, load_dataset, write_csv
from ..utils.rng import SeedFanout

router = typer.Typer()


def build_mechanism(mechanism: str, epsilon: Optional[str], checkpoint: Optional[Path], region) -> Obfuscator:
    if mechanism == "original":
        return IdentityObfuscator()
    if mechanism == "laplace":
        if epsilon is None:
            raise ConfigError("the laplace mechanism needs --epsilon")
        return LaplaceObfuscator(PlanarLaplace(epsilon=epsilon))
    if mechanism == "ours":
        if checkpoint is None:
            raise ConfigError("the ours mechanism needs --checkpoint")
        return GeneratorObfuscator(load_checkpoint(checkpoint), region)
    raise ConfigError(f"unknown mechanism {mechanism!r}; choose original, laplace or ours")


@router.command("evaluate")
def evaluate(
    dataset: Annotated[Path, typer.Argument(help="Dataset CSV written by `data` or `run` (needs its YAML sidecar)")],
    mechanism: Annotated[str, typer.Option(help="original, laplace or ours")] = "original",
    epsilon: Annotated[Optional[str], typer.Option(help="Laplace epsilon, a number or ln2/<meters>")] = None,
    checkpoint: Annotated[Optional[Path], typer.Option(help="Generator checkpoint for the ours mechanism")] = None,
    grids: Annotated[Optional[List[int]], typer.Option("--grid", help="Cells per side, repeatable")] = None,
    obf_counts: Annotated[Optional[List[int]], typer.Option("--obf-count", help="Hits per location, repeatable")] = None,
    seed: Annotated[int, typer.Option(min=0)] = 0,
    workers: Annotated[int, typer.Option(min=1)] = 1,
    output: Annotated[Optional[Path], typer.Option(help="Write the matrix as CSV")] = None,
) -> None:
    """Estimate the grid Bayes error of a mechanism on a dataset split."""
    data = load_dataset(dataset)
    mech = build_mechanism(mechanism, epsilon, checkpoint, data.region)
    grid_sizes = grids or list(DEFAULT_GRIDS)
    counts = obf_counts or list(DEFAULT_OBF_COUNTS)
    frame = evaluate_mechanism(mech, data, standard_grids(data.region, grid_sizes), counts, SeedFanout(seed), workers,
                               stream=f"evaluation/{mech.name}/{data.split_tag}")

    table = Table(title=f"Bayes error: {mech.name} on {data.split_tag}")
    table.add_column("hits \\ cells")
    for cells in frame.columns:
        table.add_column(f"{cells}x{cells}", justify="right")
    for count, row in frame.iterrows():
        table.add_row(str(count), *[f"{value:.4f}" for value in row])
    Console().print(table)

    if output is not None:
        payload = {"mechanism": mechanism, "epsilon": epsilon, "dataset": str(dataset), "grids": grid_sizes,
                   "obf_counts": counts}
        write_csv(frame, output, Provenance(config_hash=config_hash(payload), seed=seed), index=True)
