from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Sequence, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, PositiveInt, ValidationError, field_validator, model_validator
from pydantic_settings import BaseSettings

from .core.adversarial import GameConfig
from .core.data_pipeline import GowallaSpec, SyntheticSpec
from .core.evaluation import DEFAULT_GRIDS, DEFAULT_OBF_COUNTS
from .core.mechanisms import parse_epsilon
from .core.neural import TrainConfig
from .errors import ConfigError
from .utils.logging import get_logger

logger = get_logger(__name__)

EPSILON_MISMATCH = 0.1


class Settings(BaseSettings):
    """Process-wide configuration with environment variable support."""

    app_name: str = Field(default="locpriv", description="Application name")
    log_level: str = Field(default="INFO", description="Logging level")
    json_logs: bool = Field(default=False, description="Emit JSON log records")

    output_root: Path = Field(default=Path("runs"), description="Directory receiving run outputs")
    workers: int = Field(default=1, ge=1, description="Threads for evaluation cells and oracle restarts")

    # Reproducibility
    record_wall_time: bool = Field(default=True, description="Write measured seconds into iteration logs")

    model_config = {
        "env_prefix": "LOCPRIV_",
        "env_file": ".env",
        "env_file_encoding": "utf-8",
        "case_sensitive": False,
    }


def get_settings() -> Settings:
    return Settings()


class SyntheticSource(SyntheticSpec):
    kind: Literal["synthetic"] = "synthetic"


class GowallaSource(GowallaSpec):
    kind: Literal["gowalla"] = "gowalla"

    @field_validator("path")
    @classmethod
    def _exists(cls, value: Path) -> Path:
        if not Path(value).is_file():
            raise ValueError(f"check-in file {value} does not exist")
        return value


class ExperimentConfig(BaseModel):
    """One experiment: data, game, baseline and evaluation settings."""

    model_config = ConfigDict(frozen=True)

    name: str
    dataset: Union[SyntheticSource, GowallaSource] = Field(discriminator="kind")
    game: GameConfig
    laplace_epsilon: float = Field(gt=0.0, description="Planar Laplace epsilon (1/m), number or 'ln2/<meters>'")
    grids: List[PositiveInt] = Field(default_factory=lambda: list(DEFAULT_GRIDS))
    obf_counts: List[PositiveInt] = Field(default_factory=lambda: list(DEFAULT_OBF_COUNTS))
    eval_splits: List[Literal["train", "val", "test"]] = Field(default_factory=lambda: ["train", "test"])
    output_dir: Optional[Path] = None
    master_seed: int = Field(default=0, ge=0)
    expected: Dict[str, float] = Field(default_factory=dict, description="Expected headline Bayes error per mechanism")
    probe: TrainConfig = TrainConfig(batch_size=512, epochs=30, learning_rate=1e-3)

    @field_validator("laplace_epsilon", mode="before")
    @classmethod
    def _parse_epsilon(cls, value):
        return parse_epsilon(value)

    @model_validator(mode="after")
    def _check(self) -> "ExperimentConfig":
        if not self.grids or not self.obf_counts:
            raise ValueError("at least one grid and one obfuscation count are required")
        if not self.eval_splits:
            raise ValueError("at least one evaluation split is required")
        return self

    def resolved_output_dir(self, settings: Settings) -> Path:
        return self.output_dir or settings.output_root / self.name


def _set_dotted(tree: Dict[str, Any], key: str, value: Any) -> None:
    node = tree
    parts = key.split(".")
    for part in parts[:-1]:
        child = node.setdefault(part, {})
        if not isinstance(child, dict):
            raise ConfigError(f"override {key!r} descends into non-mapping field {part!r}")
        node = child
    node[parts[-1]] = value


def apply_overrides(tree: Dict[str, Any], overrides: Sequence[str]) -> Dict[str, Any]:
    """Apply `dotted.key=value` overrides; values are parsed as YAML scalars."""
    for item in overrides:
        key, sep, raw = item.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"override {item!r} is not of the form key=value")
        try:
            value = yaml.safe_load(raw)
        except yaml.YAMLError as exc:
            raise ConfigError(f"override {item!r} has an unparseable value: {exc}") from exc
        _set_dotted(tree, key.strip(), value)
    return tree


def check_epsilon_budget(cfg: ExperimentConfig) -> bool:
    """Warn when the Laplace baseline's expected distortion 2/eps is far from the budget L."""
    laplace_distortion = 2.0 / cfg.laplace_epsilon
    mismatch = abs(laplace_distortion - cfg.game.L) / cfg.game.L
    if mismatch > EPSILON_MISMATCH:
        logger.warning(
            "Laplace distortion and budget disagree",
            extra={"laplace_distortion_m": round(laplace_distortion, 2), "L": cfg.game.L, "relative_gap": round(mismatch, 3)},
        )
        return False
    return True


def load_experiment_config(path: Union[str, Path], overrides: Sequence[str] = ()) -> ExperimentConfig:
    """
    Load an experiment configuration from YAML.
    Args:
        path: YAML file
        overrides: `dotted.key=value` pairs applied on top of the file
    Returns:
        Validated configuration
    """
    path = Path(path)
    try:
        with open(path, encoding="utf-8") as handle:
            tree = yaml.safe_load(handle) or {}
    except OSError as exc:
        raise ConfigError(f"cannot read configuration {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"configuration {path} is not valid YAML: {exc}") from exc
    if not isinstance(tree, dict):
        raise ConfigError(f"configuration {path} must be a mapping")

    tree = apply_overrides(tree, overrides)
    try:
        cfg = ExperimentConfig(**tree)
    except ValidationError as exc:
        raise ConfigError(f"invalid configuration {path}: {exc}") from exc
    check_epsilon_budget(cfg)
    return cfg
