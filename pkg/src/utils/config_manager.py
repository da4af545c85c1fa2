import logging
from pathlib import Path
from typing import Any

import yaml

logger = logging.getLogger(__name__)


class ConfigManager:
    """Layered configuration: packaged defaults, then ``--config``, then CLI flags."""

    def __init__(self, config_path: str | None = None):
        self.config_path = config_path
        self.config: dict[str, Any] = {}
        self.default_config_path = Path(__file__).parent.parent.parent / "config" / "default_config.yaml"
        self.load_config()

    def load_config(self) -> None:
        self.config = self._load_default_config()

        if self.config_path:
            custom_config = self._load_custom_config()
            if custom_config:
                self.config = self._merge_configs(self.config, custom_config)

    def _load_default_config(self) -> dict[str, Any]:
        try:
            with open(self.default_config_path) as f:
                return yaml.safe_load(f) or {}
        except FileNotFoundError:
            logger.warning(f"Default config not found at {self.default_config_path}")
            return self._get_hardcoded_defaults()
        except yaml.YAMLError as e:
            logger.error(f"Error parsing default config: {e}")
            return self._get_hardcoded_defaults()

    def _load_custom_config(self) -> dict[str, Any] | None:
        if not self.config_path or not Path(self.config_path).exists():
            logger.warning(f"Custom config not found at {self.config_path}")
            return None

        try:
            with open(self.config_path) as f:
                return yaml.safe_load(f)
        except yaml.YAMLError as e:
            logger.error(f"Error parsing custom config: {e}")
            return None

    def _merge_configs(self, base: dict[str, Any], override: dict[str, Any]) -> dict[str, Any]:
        result = base.copy()

        for key, value in override.items():
            if key in result and isinstance(result[key], dict) and isinstance(value, dict):
                result[key] = self._merge_configs(result[key], value)
            else:
                result[key] = value

        return result

    def _get_hardcoded_defaults(self) -> dict[str, Any]:
        return {
            "general": {
                "verbose": False,
                "log_file": "recshield.log",
                "seed": None,
            },
            "ratings": {"max_rating": 5},
            "robdet": {
                "detector": "deviation",
                "deviation_threshold": 1.5,
                "filler_threshold": 3.0,
            },
            "training": {
                "k": 16,
                "learning_rate": 0.005,
                "reg_features": 0.02,
                "reg_biases": 0.02,
                "epochs": 30,
                "init_scale": 0.05,
                "seed": 0,
            },
            "fixed_point": {
                "theta": 1000,
                "granularity": 10,
                "precision_bits": 40,
                "lambda_bits": 40,
            },
            "paillier": {"key_bits": 2048},
            "swhe": {
                "profile": "desk",
                "batching": True,
                "profiles": {
                    "desk": {"poly_degree": 4096, "coeff_modulus_bits": 440, "max_depth": 2, "sigma": 3.2},
                    "paper": {"poly_degree": 8192, "coeff_modulus_bits": 460, "max_depth": 2, "sigma": 3.2},
                },
            },
            "khprf": {"check_bytes": 16},
            "protocol": {
                "name": "noproxy",
                "thresholds": "5.0,4.9",
                "max_thresholds": 4,
            },
            "harness": {
                "channel_capacity": 4,
                "transport": "memory",
                "timeout_seconds": 600,
            },
            "bench": {"profile": "desk", "samples": 30, "chart": None},
            "histogram": {"output": "histogram.csv", "chart": None, "decimals": 1},
        }

    def get(self, key_path: str, default: Any = None) -> Any:
        keys = key_path.split(".")
        value = self.config

        for key in keys:
            if isinstance(value, dict) and key in value:
                value = value[key]
            else:
                return default

        return value

    def set(self, key_path: str, value: Any) -> None:
        keys = key_path.split(".")
        config = self.config

        for key in keys[:-1]:
            if key not in config:
                config[key] = {}
            config = config[key]

        config[keys[-1]] = value

    def export_config(self, path: str) -> None:
        with open(path, "w") as f:
            yaml.dump(self.config, f, default_flow_style=False, sort_keys=False)

        logger.info(f"Configuration exported to {path}")

    def update_from_args(self, args: dict[str, Any]) -> None:
        if args.get("verbose"):
            self.set("general.verbose", True)
        if args.get("log_file"):
            self.set("general.log_file", args["log_file"])
        if args.get("seed") is not None:
            self.set("general.seed", args["seed"])
        if args.get("protocol"):
            self.set("protocol.name", args["protocol"])
        if args.get("thresholds"):
            self.set("protocol.thresholds", args["thresholds"])
        if args.get("unbatched"):
            self.set("swhe.batching", False)
        if args.get("swhe_profile"):
            self.set("swhe.profile", args["swhe_profile"])
        if args.get("key_bits"):
            self.set("paillier.key_bits", args["key_bits"])
        if args.get("bench_profile"):
            self.set("bench.profile", args["bench_profile"])
        if args.get("samples"):
            self.set("bench.samples", args["samples"])
        if args.get("epochs") is not None:
            self.set("training.epochs", args["epochs"])
        if args.get("k"):
            self.set("training.k", args["k"])
