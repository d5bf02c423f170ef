"""Tests for run configuration"""

from unittest.mock import patch

import pytest
import yaml

from shapeprior.core.config import (
    CONFIG_ENV,
    RunConfig,
    deep_merge,
    from_dict,
    load_settings,
    resolve,
    write_resolved,
)
from shapeprior.core.errors import ConfigError, MissingInputError
from shapeprior.core.losses import Arm


class TestResolve:
    """Defaults, user file and flag overrides"""

    def setup_method(self):
        self.dotenv = patch("shapeprior.core.config.load_dotenv")
        self.dotenv.start()

    def teardown_method(self):
        self.dotenv.stop()

    def test_packaged_defaults(self):
        with patch.dict("os.environ", {}, clear=True):
            config = resolve()
        assert config.seed == 0
        assert config.train.lr0 == 0.001 and config.train.batch_size == 4
        assert config.net.num_classes == 5
        assert config.phantom.organ_names == ["large", "medium", "elongated", "small"]
        assert sum(config.data.counts().values()) == 300

    def test_defaults_match_dataclasses(self):
        assert from_dict(load_settings()) == RunConfig()

    def test_user_file_and_overrides(self, tmp_path):
        path = tmp_path / "run.yaml"
        path.write_text("seed: 4\ntrain:\n  max_epochs: 3\n  arm: dist\n")
        config = resolve(path, {"seed": 9, "train": {"arm": None}})
        assert config.seed == 9
        assert config.train.seed == 9
        assert config.train.max_epochs == 3
        assert config.train.arm is Arm.DIST

    def test_env_variable(self, tmp_path):
        path = tmp_path / "env.yaml"
        path.write_text("threads: 3\n")
        with patch.dict("os.environ", {CONFIG_ENV: str(path)}):
            assert resolve().threads == 3

    def test_missing_file(self, tmp_path):
        with pytest.raises(MissingInputError):
            resolve(tmp_path / "absent.yaml")

    def test_resolved_config_reproduces_run(self, tmp_path):
        config = resolve(None, {"seed": 12, "train": {"arm": "both"}})
        path = write_resolved(config, tmp_path)
        assert resolve(path) == config


class TestValidation:
    """Config errors map to ConfigError"""

    def merged(self, override):
        return deep_merge(load_settings(), override)

    def test_size_range(self):
        organs = [{"name": "x", "min_area": 50, "max_area": 10, "intensity_low": 0.1, "intensity_high": 0.2}]
        with pytest.raises(ConfigError):
            from_dict(self.merged({"phantom": {"organs": organs}, "net": {"num_classes": 2}}))

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="learning_rate"):
            from_dict(self.merged({"train": {"learning_rate": 0.1}}))

    def test_wrong_type(self):
        with pytest.raises(ConfigError):
            from_dict(self.merged({"train": {"batch_size": "four"}}))

    def test_unknown_arm(self):
        with pytest.raises(ConfigError):
            from_dict(self.merged({"train": {"arm": "everything"}}))

    def test_class_count_must_match_organs(self):
        with pytest.raises(ConfigError):
            from_dict(self.merged({"net": {"num_classes": 3}}))

    def test_cross_checks_can_be_skipped(self):
        config = from_dict(self.merged({"net": {"num_classes": 3}}), consistent=False)
        assert config.net.num_classes == 3

    def test_extents_divisible_by_depth(self):
        with pytest.raises(ConfigError):
            from_dict(self.merged({"phantom": {"height": 60}}))

    def test_invalid_net_becomes_config_error(self):
        with pytest.raises(ConfigError):
            from_dict(self.merged({"net": {"depth": 0}}))

    def test_deep_merge_keeps_siblings(self):
        merged = deep_merge({"a": {"b": 1, "c": 2}}, {"a": {"c": 3}})
        assert merged == {"a": {"b": 1, "c": 3}}

    def test_yaml_echo_is_plain(self):
        assert yaml.safe_load(RunConfig().to_yaml())["train"]["arm"] == "baseline"
