"""
Experiment runner: data, adversarial game, baseline, evaluation and probe,
with every table written as CSV under the run's output directory.
"""

import tempfile
import time
from pathlib import Path
from typing import Annotated, Dict, List, Optional

import numpy as np
import pandas as pd
import typer
from pydantic import BaseModel, ConfigDict
from rich.console import Console
from rich.table import Table

from ..config import ExperimentConfig, Settings, get_settings, load_experiment_config
from ..core.adversarial import GameResult, GeneratorObfuscator, IterationLog, predict_labels, run_game, train_classifier
from ..core.data_pipeline import SyntheticSpec, gen_synthetic, ingest_from_spec
from ..core.evaluation import accuracy_f1, empirical_distortion, evaluate_mechanism, standard_grids
from ..core.mechanisms import IdentityObfuscator, LaplaceObfuscator, Obfuscator, PlanarLaplace
from ..core.model import DatasetSplits
from ..core.neural import Mlp, glorot_init
from ..core.oracle import payoff_tables_demo
from ..errors import ConfigError, NonConvergenceError
from ..utils.io import Provenance, config_hash, points_frame, save_checkpoint, save_dataset, write_csv
from ..utils.logging import get_logger, log_stage
from ..utils.rng import SeedFanout

logger = get_logger(__name__)

router = typer.Typer(help="Run experiments and demos")

ITERATION_COLUMNS = ["iter", "acc_train", "acc_val", "acc_test", "mi_nats", "distortion_m", "seconds"]
SPLITS = ("train", "val", "test")


class ExperimentReport(BaseModel):
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    output_dir: Path
    converged: bool
    iterations: int
    summary: pd.DataFrame
    probe: pd.DataFrame


class _Stage:
    """Times one stage and logs it on exit."""

    def __init__(self, name: str, **fields):
        self.name = name
        self.fields = fields

    def __enter__(self) -> "_Stage":
        self.started = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        duration_ms = (time.perf_counter() - self.started) * 1000.0
        log_stage(self.name, duration_ms, error=str(exc) if exc else None, **self.fields)


def load_splits(cfg: ExperimentConfig) -> DatasetSplits:
    if cfg.dataset.kind == "synthetic":
        return gen_synthetic(SyntheticSpec(**cfg.dataset.model_dump(exclude={"kind"})))
    return ingest_from_spec(cfg.dataset)


def iteration_frame(logs: List[IterationLog], record_wall_time: bool) -> pd.DataFrame:
    frame = pd.DataFrame([log.model_dump() for log in logs]).rename(columns={"iteration": "iter"})
    if frame.empty:
        return pd.DataFrame(columns=ITERATION_COLUMNS)
    if not record_wall_time:
        frame["seconds"] = 0.0
    return frame[ITERATION_COLUMNS]


def probe_mechanism(mech: Obfuscator, splits: DatasetSplits, cfg: ExperimentConfig,
                    seed: int, rng: np.random.Generator) -> List[Dict[str, object]]:
    """Train a fresh classifier on obfuscated train data and score it on every split."""
    region = splits.train.region
    k = cfg.game.seeds_per_location
    train = splits.train
    points = region.normalize(mech.obfuscate(np.repeat(train.xy, k, axis=0), rng))
    clf = glorot_init([2, *cfg.game.classifier_hidden, train.num_classes], seed=seed, head="softmax")
    clf = train_classifier(clf, points, np.repeat(train.class_ids, k), cfg.probe, rng)
    rows = []
    for split in SPLITS:
        data = splits.by_name(split)
        pred = predict_labels(clf, region.normalize(mech.obfuscate(data.xy, rng)))
        accuracy, macro_f1 = accuracy_f1(pred, data.class_ids)
        rows.append({"mechanism": mech.name, "split": split, "accuracy": accuracy, "macro_f1": macro_f1})
    return rows


def _prepare_output_dir(out: Path) -> None:
    """Create the output directory and check that files can be written into it."""
    try:
        out.mkdir(parents=True, exist_ok=True)
        with tempfile.NamedTemporaryFile(dir=out):
            pass
    except OSError as exc:
        raise ConfigError(f"output directory {out} is not writable: {exc}") from exc


def run_experiment(cfg: ExperimentConfig, settings: Optional[Settings] = None) -> ExperimentReport:
    """
    Run one experiment end to end and write its outputs.

    Outputs are written before a non-converged game is reported, so a failed
    run still leaves its iteration log, tables and point clouds behind.
    Raises:
        NonConvergenceError: the adversarial game hit its iteration budget
        ConfigError: the output directory cannot be created or written
    """
    settings = settings or get_settings()
    out = cfg.resolved_output_dir(settings)
    _prepare_output_dir(out)
    fanout = SeedFanout(cfg.master_seed)
    # The output location is not part of the experiment's identity.
    digest = config_hash(cfg.model_dump(mode="json", exclude={"output_dir"}))
    provenance = Provenance(config_hash=digest, seed=cfg.master_seed)
    logger.info("Experiment starting", extra={"experiment": cfg.name, "output_dir": str(out)})

    with _Stage("data", experiment=cfg.name):
        splits = load_splits(cfg)
        for split in SPLITS:
            save_dataset(splits.by_name(split), out / f"data_{split}.csv", provenance)

    logs: List[IterationLog] = []

    def on_iteration(entry: IterationLog, generator: Mlp) -> None:
        logs.append(entry)
        write_csv(iteration_frame(logs, settings.record_wall_time), out / "iterations.csv", provenance)
        if cfg.game.checkpoint_every and entry.iteration % cfg.game.checkpoint_every == 0:
            save_checkpoint(generator, out / "checkpoints" / f"generator_{entry.iteration:04d}.yaml")

    with _Stage("game", experiment=cfg.name, L=cfg.game.L):
        result: GameResult = run_game(splits, cfg.game, fanout, on_iteration=on_iteration)
        save_checkpoint(result.generator, out / "generator_final.yaml")

    region = splits.train.region
    mechanisms: List[Obfuscator] = [
        IdentityObfuscator(),
        LaplaceObfuscator(PlanarLaplace(epsilon=cfg.laplace_epsilon)),
        GeneratorObfuscator(result.generator, region),
    ]
    grids = standard_grids(region, cfg.grids)
    headline_split = "test" if "test" in cfg.eval_splits else cfg.eval_splits[0]
    summary_rows = []
    with _Stage("evaluation", experiment=cfg.name):
        for mech in mechanisms:
            headline = distortion = float("nan")
            for split in cfg.eval_splits:
                data = splits.by_name(split)
                table = evaluate_mechanism(mech, data, grids, cfg.obf_counts, fanout, settings.workers,
                                           stream=f"evaluation/{mech.name}/{split}")
                write_csv(table, out / f"bayes_{mech.name}_{split}.csv", provenance, index=True)
                points = mech.obfuscate(data.xy, fanout.stream(f"points/{mech.name}/{split}"))
                write_csv(points_frame(data.class_ids, points), out / f"points_{mech.name}_{split}.csv", provenance)
                if split == headline_split:
                    headline = float(table.loc[max(cfg.obf_counts), max(cfg.grids)])
                    distortion = empirical_distortion(data.xy, points)
            summary_rows.append({
                "mechanism": mech.name,
                "split": headline_split,
                "cells_per_side": max(cfg.grids),
                "obf_count": max(cfg.obf_counts),
                "bayes_error": headline,
                "expected": cfg.expected.get(mech.name, float("nan")),
                "distortion_m": distortion,
            })

    with _Stage("probe", experiment=cfg.name):
        probe_rows = []
        for index, mech in enumerate(mechanisms[1:]):
            probe_rows += probe_mechanism(mech, splits, cfg, fanout.seed("probe", index), fanout.stream("probe", index))
        probe = pd.DataFrame(probe_rows, columns=["mechanism", "split", "accuracy", "macro_f1"])
        write_csv(probe, out / "probe.csv", provenance)

    summary = pd.DataFrame(summary_rows)
    summary["converged"] = result.converged
    write_csv(summary, out / "summary.csv", provenance)
    logger.info("Experiment finished", extra={"experiment": cfg.name, "converged": result.converged})

    if not result.converged:
        raise NonConvergenceError(
            f"experiment {cfg.name!r} did not converge within {cfg.game.max_iterations} iterations; "
            f"outputs kept in {out}",
            iterations=len(result.logs),
        )
    return ExperimentReport(output_dir=out, converged=True, iterations=len(result.logs), summary=summary, probe=probe)


def print_summary(report: ExperimentReport) -> None:
    console = Console()
    table = Table(title=f"Summary ({report.output_dir})")
    for column in report.summary.columns:
        table.add_column(str(column))
    for row in report.summary.itertuples(index=False):
        table.add_row(*[f"{value:.4f}" if isinstance(value, float) else str(value) for value in row])
    console.print(table)


def print_payoff_tables() -> Dict[str, pd.DataFrame]:
    console = Console()
    tables = payoff_tables_demo()
    titles = {"success": "Success probability P(Y = X)", "mi_bits": "I(X;Y) in bits", "one_minus_bayes": "1 - B(X|Y)"}
    for key, frame in tables.items():
        table = Table(title=titles[key])
        table.add_column("G \\ C")
        for column in frame.columns:
            table.add_column(column, justify="right")
        for generator, row in frame.iterrows():
            table.add_row(generator, *[f"{value:.2f}" for value in row])
        console.print(table)
        console.print(frame.to_csv(float_format="%.4g", lineterminator="\n"))
    return tables


@router.command("run")
def run(
    config: Annotated[Path, typer.Argument(help="Experiment YAML file")],
    overrides: Annotated[Optional[List[str]], typer.Option(
        "--set", "-s", help="Override a field as dotted.key=value, e.g. --set game.L=180 (repeatable)"
    )] = None,
    output_dir: Annotated[Optional[Path], typer.Option(help="Write outputs here instead of the configured directory")] = None,
) -> None:
    """Run an experiment from a configuration file."""
    extra = list(overrides or [])
    if output_dir is not None:
        extra.append(f"output_dir={output_dir}")
    cfg = load_experiment_config(config, extra)
    print_summary(run_experiment(cfg))


@router.command("demo")
def demo(
    name: Annotated[str, typer.Argument(help="Demo to run (payoff-tables)")] = "payoff-tables",
) -> None:
    """Print the payoff tables of the two-user game."""
    if name != "payoff-tables":
        raise ConfigError(f"unknown demo {name!r}; available: payoff-tables")
    print_payoff_tables()
