"""
Tests for ConfigManager utility
"""

import os
import sys

import yaml

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from utils.config_manager import ConfigManager


class TestConfigManager:
    """Test cases for ConfigManager"""

    def test_config_is_dict(self):
        """Test that config is a dictionary"""
        manager = ConfigManager()
        assert isinstance(manager.config, dict)

    def test_default_config_structure(self):
        """Test that default config has every section the modules read"""
        manager = ConfigManager()
        expected_sections = [
            "general",
            "ratings",
            "robdet",
            "training",
            "fixed_point",
            "paillier",
            "swhe",
            "khprf",
            "protocol",
            "harness",
            "bench",
            "histogram",
        ]
        for section in expected_sections:
            assert section in manager.config, f"Expected section '{section}' not found in config"

    def test_packaged_defaults(self):
        """Test the documented default values"""
        manager = ConfigManager()
        assert manager.get("fixed_point.theta") == 1000
        assert manager.get("fixed_point.granularity") == 10
        assert manager.get("fixed_point.lambda_bits") == 40
        assert manager.get("training.k") == 16
        assert manager.get("robdet.deviation_threshold") == 1.5
        assert manager.get("swhe.profiles.paper.poly_degree") == 8192
        assert manager.get("bench.samples") >= 30

    def test_hardcoded_defaults_match_file(self):
        """Test that the fallback defaults carry the same sections as the YAML file"""
        manager = ConfigManager()
        assert set(manager._get_hardcoded_defaults()) == set(manager.config)

    def test_missing_default_file_falls_back(self, tmp_path):
        """Test fallback to hard-coded defaults when the packaged file is gone"""
        manager = ConfigManager()
        manager.default_config_path = tmp_path / "missing.yaml"
        manager.load_config()
        assert manager.get("protocol.name") == "noproxy"

    def test_custom_config_overrides(self, tmp_path):
        """Test that a --config file is merged over the defaults"""
        custom = tmp_path / "custom.yaml"
        custom.write_text(yaml.dump({"training": {"k": 4}, "protocol": {"name": "proxy"}}))

        manager = ConfigManager(str(custom))
        assert manager.get("training.k") == 4
        assert manager.get("protocol.name") == "proxy"
        # untouched keys of a merged section survive
        assert manager.get("training.learning_rate") == 0.005

    def test_broken_custom_config_is_skipped(self, tmp_path):
        """Test that a YAML parse error leaves the defaults in place"""
        custom = tmp_path / "broken.yaml"
        custom.write_text("training: [unclosed")

        manager = ConfigManager(str(custom))
        assert manager.get("training.k") == 16

    def test_update_from_args(self):
        """Test updating config from CLI flags"""
        manager = ConfigManager()
        manager.update_from_args(
            {"protocol": "proxy", "thresholds": "4.5", "seed": 9, "unbatched": True, "bench_profile": "paper"}
        )

        assert manager.get("protocol.name") == "proxy"
        assert manager.get("protocol.thresholds") == "4.5"
        assert manager.get("general.seed") == 9
        assert manager.get("swhe.batching") is False
        assert manager.get("bench.profile") == "paper"

    def test_update_from_args_ignores_unknown_keys(self):
        """Test that unrelated argparse entries do not leak into the config"""
        manager = ConfigManager()
        manager.update_from_args({"command": "train", "ratings": "x.dat"})
        assert "command" not in manager.config

    def test_get_with_default(self):
        """Test get method with default value"""
        manager = ConfigManager()
        assert manager.get("nonexistent.key", "default_value") == "default_value"

    def test_set_creates_nested_keys(self):
        """Test set method on a new path"""
        manager = ConfigManager()
        manager.set("test.nested.key", "test_value")
        assert manager.get("test.nested.key") == "test_value"

    def test_export_config_round_trip(self, tmp_path):
        """Test that an exported config loads back unchanged"""
        manager = ConfigManager()
        manager.set("training.epochs", 3)
        path = tmp_path / "exported.yaml"
        manager.export_config(str(path))

        reloaded = ConfigManager(str(path))
        assert reloaded.config == manager.config
