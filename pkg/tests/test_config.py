from pathlib import Path

import pytest

from app.config import (
    ExperimentConfig,
    Settings,
    apply_overrides,
    check_epsilon_budget,
    get_settings,
    load_experiment_config,
)
from app.errors import ConfigError

from .conftest import create_test_settings

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"
SYNTHETIC_CONFIGS = sorted(CONFIG_DIR.glob("exp*_synthetic_*.yaml"))
GOWALLA_CONFIGS = sorted(CONFIG_DIR.glob("exp*_gowalla_*.yaml"))


class TestSettings:
    """Process-wide settings."""

    def test_defaults(self):
        settings = Settings()
        assert settings.app_name == "locpriv"
        assert settings.workers >= 1

    def test_environment_overrides(self, monkeypatch):
        monkeypatch.setenv("LOCPRIV_WORKERS", "3")
        monkeypatch.setenv("LOCPRIV_RECORD_WALL_TIME", "false")
        settings = get_settings()
        assert settings.workers == 3
        assert settings.record_wall_time is False

    def test_test_settings(self):
        settings = create_test_settings(workers=2)
        assert settings.workers == 2
        assert settings.log_level == "WARNING"


class TestBundledConfigs:
    """The shipped experiment files."""

    def test_there_are_four_experiments(self):
        assert len(SYNTHETIC_CONFIGS) == 3
        assert len(GOWALLA_CONFIGS) == 2

    @pytest.mark.parametrize("path", SYNTHETIC_CONFIGS, ids=lambda p: p.stem)
    def test_synthetic_configs_load(self, path):
        cfg = load_experiment_config(path)
        assert cfg.dataset.kind == "synthetic"
        assert cfg.game.gen_cfg.batch_size >= 16 * cfg.dataset.num_classes
        assert check_epsilon_budget(cfg)

    @pytest.mark.parametrize("path", GOWALLA_CONFIGS, ids=lambda p: p.stem)
    def test_gowalla_configs_need_the_dump(self, path, tmp_path):
        with pytest.raises(ConfigError, match="does not exist"):
            load_experiment_config(path, [f"dataset.path={tmp_path / 'absent.txt'}"])

    @pytest.mark.parametrize("path", GOWALLA_CONFIGS, ids=lambda p: p.stem)
    def test_gowalla_configs_load_with_a_dump(self, path, checkin_file):
        cfg = load_experiment_config(path, [f"dataset.path={checkin_file}"])
        assert cfg.dataset.kind == "gowalla"
        assert (cfg.dataset.lat_col, cfg.dataset.lon_col) == (2, 3)
        assert check_epsilon_budget(cfg)

    def test_relaxed_budget_matches_laplace(self):
        cfg = load_experiment_config(CONFIG_DIR / "exp1_synthetic_relaxed.yaml")
        assert 2.0 / cfg.laplace_epsilon == pytest.approx(288.54, abs=0.01)
        assert cfg.game.warm_start_epsilon == pytest.approx(cfg.laplace_epsilon)
        assert cfg.expected["ours"] == 0.74


class TestOverrides:
    """Dotted key=value overrides."""

    def test_nested_values_are_parsed(self):
        tree = apply_overrides({"game": {"L": 1}}, ["game.L=300", "game.gen_cfg.epochs=2", "name=x"])
        assert tree == {"game": {"L": 300, "gen_cfg": {"epochs": 2}}, "name": "x"}

    def test_override_reaches_the_config(self):
        cfg = load_experiment_config(CONFIG_DIR / "exp2_synthetic_strict.yaml",
                                     ["game.max_iterations=3", "grids=[13]", "output_dir=/tmp/run"])
        assert cfg.game.max_iterations == 3
        assert cfg.grids == [13]
        assert cfg.resolved_output_dir(create_test_settings()) == Path("/tmp/run")

    def test_output_dir_defaults_under_the_root(self):
        cfg = load_experiment_config(CONFIG_DIR / "exp2_synthetic_strict.yaml")
        settings = create_test_settings(output_root=Path("results"))
        assert cfg.resolved_output_dir(settings) == Path("results") / "exp2_synthetic_strict"

    @pytest.mark.parametrize("item", ["no-equals", "=3", "name.inner=1"])
    def test_malformed_overrides(self, item):
        with pytest.raises(ConfigError):
            apply_overrides({"name": "x"}, [item])

    def test_invalid_value_is_a_config_error(self):
        with pytest.raises(ConfigError):
            load_experiment_config(CONFIG_DIR / "exp1_synthetic_relaxed.yaml", ["game.L=-5"])


class TestLoading:
    """Reading experiment files."""

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_experiment_config(tmp_path / "nope.yaml")

    def test_not_yaml(self, tmp_path):
        path = tmp_path / "bad.yaml"
        path.write_text("name: [unclosed\n")
        with pytest.raises(ConfigError):
            load_experiment_config(path)

    def test_not_a_mapping(self, tmp_path):
        path = tmp_path / "list.yaml"
        path.write_text("- 1\n- 2\n")
        with pytest.raises(ConfigError):
            load_experiment_config(path)

    def test_unknown_dataset_kind(self, tmp_path):
        path = tmp_path / "kind.yaml"
        path.write_text("name: x\ndataset: {kind: other}\ngame: {L: 100}\nlaplace_epsilon: 0.02\n")
        with pytest.raises(ConfigError):
            load_experiment_config(path)

    def test_epsilon_mismatch_is_reported(self):
        cfg = ExperimentConfig(name="x", dataset={"kind": "synthetic"}, game={"L": 270.0}, laplace_epsilon="ln2/10")
        assert not check_epsilon_budget(cfg)
        cfg = ExperimentConfig(name="x", dataset={"kind": "synthetic"}, game={"L": 100.0}, laplace_epsilon=0.02)
        assert check_epsilon_budget(cfg)

    def test_evaluation_needs_a_split(self):
        with pytest.raises(ConfigError):
            load_experiment_config(CONFIG_DIR / "exp1_synthetic_relaxed.yaml", ["eval_splits=[]"])


class TestStabilisedGame:
    """Proximal term and stop target in the bundled files."""

    @pytest.mark.parametrize("path", SYNTHETIC_CONFIGS + GOWALLA_CONFIGS, ids=lambda p: p.stem)
    def test_mutual_info_runs_use_the_proximal_term(self, path, checkin_file):
        cfg = load_experiment_config(path, [f"dataset.path={checkin_file}"] if "gowalla" in path.stem else [])
        if cfg.game.generator_loss_mode == "mutual_info":
            assert cfg.game.proximal_radius_m == 20
        else:
            assert cfg.game.proximal_radius_m is None

    def test_strict_run_aims_above_chance(self):
        cfg = load_experiment_config(CONFIG_DIR / "exp2_synthetic_strict.yaml")
        assert cfg.game.target_accuracy == pytest.approx(0.52)
        relaxed = load_experiment_config(CONFIG_DIR / "exp1_synthetic_relaxed.yaml")
        assert relaxed.game.target_accuracy is None
