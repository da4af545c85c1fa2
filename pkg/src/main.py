#!/usr/bin/env python3

import argparse
import logging
import sys
from pathlib import Path
from typing import Any

from modules.benchmark import Benchmark, create_bench_chart
from modules.counters import SWHE_DEC, USER, assert_counters, expected_counts, table2_swhe_dec_cell
from modules.expert_model import TrainConfig, load_snapshot_file, save_snapshot_file, train, training_rmse
from modules.harness import PROTOCOLS, make_instance, run_session, session_spec
from modules.prediction_stats import PredictionHistogram
from modules.protocol_common import MAX_THRESHOLDS, ThresholdSet, sandwich_bounds
from modules.ratings import align_items, describe, load_movielens
from modules.robdet import robdet_filter
from utils.branding import print_banner
from utils.config_manager import ConfigManager
from utils.errors import EXIT_CONFIG_ERROR, EXIT_OK, EXIT_PROTOCOL_ERROR, ConfigurationError, ProtocolError
from utils.progress_tracker import ProgressTracker
from utils.randomness import make_rng

logger = logging.getLogger(__name__)


class RecShield:
    def __init__(self, config_path: str | None = None, args: dict[str, Any] | None = None):
        self.config_manager = ConfigManager(config_path)
        if args:
            self.config_manager.update_from_args(args)

        self.config = self.config_manager.config
        self.setup_logging()

        self.progress_tracker = ProgressTracker(verbose=self.config.get("general", {}).get("verbose", False))

    def setup_logging(self):
        log_file = self.config.get("general", {}).get("log_file", "recshield.log")
        verbose = self.config.get("general", {}).get("verbose", False)

        log_level = logging.DEBUG if verbose else logging.INFO

        logging.basicConfig(
            level=log_level,
            format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
            handlers=[
                logging.FileHandler(log_file),
                logging.StreamHandler(sys.stdout) if verbose else logging.NullHandler(),
            ],
        )

    @property
    def max_rating(self) -> int:
        return int(self.config.get("ratings", {}).get("max_rating", 5))

    @property
    def seed(self) -> int | None:
        return self.config.get("general", {}).get("seed")

    def thresholds(self) -> ThresholdSet:
        protocol = self.config.get("protocol", {})
        return ThresholdSet.parse(
            str(protocol.get("thresholds", "5.0,4.9")),
            session_spec(self.config),
            int(protocol.get("max_thresholds", MAX_THRESHOLDS)),
        )

    def protocol_name(self) -> str:
        name = self.config.get("protocol", {}).get("name", "noproxy")
        if name not in PROTOCOLS:
            raise ConfigurationError(f"unknown protocol '{name}' (expected one of {', '.join(PROTOCOLS)})")
        return name

    # -- commands ----------------------------------------------------------------

    def run_robdet(self, ratings_path: str) -> list[int]:
        matrix = load_movielens(ratings_path, self.max_rating)
        verdict = robdet_filter(matrix, self.config)
        self.progress_tracker.print_verdict_summary(verdict, matrix.user_ids)
        return verdict

    def train_model(self, ratings_path: str, output_path: str) -> None:
        experts = load_movielens(ratings_path, self.max_rating)
        self.progress_tracker.print_info(f"Loaded {describe(experts)}")
        verdict = robdet_filter(experts, self.config)
        cfg = TrainConfig.from_config(self.config)

        def on_epoch(epoch: int, loss: float) -> None:
            self.progress_tracker.step_done(f"Epoch {epoch + 1}: loss {loss:.2f}")

        self.progress_tracker.start_processing(cfg.epochs, "Training")
        try:
            params = train(experts, verdict, cfg, on_epoch=on_epoch)
        finally:
            self.progress_tracker.stop_processing()

        save_snapshot_file(params, output_path)
        self.progress_tracker.print_training_summary(
            {
                "Experts accepted": params.experts.num_users,
                "Experts rejected": len(verdict) - sum(verdict),
                "Items": params.num_items,
                "Latent factors": params.k,
                "Final loss": params.loss_history[-1] if params.loss_history else float("nan"),
                "Training RMSE": training_rmse(params),
            }
        )
        self.progress_tracker.print_success(f"Model written to {output_path}")

    def recommend(
        self,
        model_path: str | None,
        ratings_path: str | None,
        user_id: str | None,
        synthetic_items: int | None,
        transcript_path: str | None,
    ) -> set[int]:
        protocol = self.protocol_name()
        thresholds = self.thresholds()
        spec = session_spec(self.config)
        batched = bool(self.config.get("swhe", {}).get("batching", True))

        if synthetic_items:
            instance = make_instance(make_rng(self.seed, "cli", "instance"), synthetic_items, thresholds, spec)
            result = run_session(protocol, self.config, thresholds, self.seed, instance=instance, batched=batched)
            item_names = [str(j) for j in range(synthetic_items)]
            must, may = sandwich_bounds(instance.x_values(spec), instance.rated, thresholds)
            if not must <= result.recommended <= may:
                raise ProtocolError("recommended set falls outside the plaintext bounds")
        else:
            if not (model_path and ratings_path and user_id):
                raise ConfigurationError("recommend needs --model, --ratings and --user (or --synthetic)")
            model = load_snapshot_file(model_path)
            users = align_items(load_movielens(ratings_path, self.max_rating), model.experts.item_ids)
            ratings = users.user_vector(users.user_index(user_id))
            result = run_session(
                protocol, self.config, thresholds, self.seed, model=model, user_ratings=ratings, batched=batched
            )
            item_names = model.experts.item_ids

        if transcript_path:
            Path(transcript_path).write_bytes(result.transcript.to_bytes())
            self.progress_tracker.print_info(f"Transcript written to {transcript_path}")

        self.progress_tracker.print_recommendations(
            [item_names[j] for j in sorted(result.recommended)], protocol, thresholds.as_stars(spec)
        )
        return result.recommended

    def verify_counters(self, items: int) -> None:
        protocol = self.protocol_name()
        thresholds = self.thresholds()
        spec = session_spec(self.config)
        batched = bool(self.config.get("swhe", {}).get("batching", True))
        instance = make_instance(make_rng(self.seed, "cli", "instance"), items, thresholds, spec)
        result = run_session(protocol, self.config, thresholds, self.seed, instance=instance, batched=batched)

        expected = expected_counts(protocol, items, len(thresholds), result.slots)
        published, physical = None, None
        if protocol == "noproxy":
            published = {party: {SWHE_DEC: n} for party, n in table2_swhe_dec_cell(items).items()}
            physical = result.counters.physical_ciphertexts
        self.progress_tracker.console.print(
            self.progress_tracker.create_counters_table(result.counters.as_dict(), expected, published, physical)
        )
        assert_counters(result.counters, protocol, items, len(thresholds), result.slots)
        self.progress_tracker.print_success(f"Counters match for M={items}, T={len(thresholds)}")
        if published is not None:
            self.progress_tracker.print_warning(
                f"Published SWHE.Dec cell lists {items} for the RecSys, which holds no SWHE secret key; "
                f"expected {expected[USER].get(SWHE_DEC, 0)} user decryptions over {physical} physical ciphertexts"
            )

    def run_bench(self, profile: str | None, chart_path: str | None) -> None:
        bench = Benchmark(self.config)
        self.progress_tracker.start_processing(10, "Benchmarking")
        try:
            report = bench.run(profile, on_row=lambda row: self.progress_tracker.step_done(row.label))
        finally:
            self.progress_tracker.stop_processing()

        self.progress_tracker.console.print(self.progress_tracker.create_bench_table(report))
        chart_path = chart_path or self.config.get("bench", {}).get("chart")
        if chart_path and create_bench_chart(report, chart_path):
            self.progress_tracker.print_success(f"Chart written to {chart_path}")

    def run_histogram(self, model_path: str, ratings_path: str, output: str | None, chart_path: str | None) -> None:
        histogram_config = self.config.get("histogram", {})
        model = load_snapshot_file(model_path)
        users = align_items(load_movielens(ratings_path, self.max_rating), model.experts.item_ids)

        histogram = PredictionHistogram(self.config)
        counts = histogram.compute(model, users)
        csv_path = histogram.write_csv(counts, output or histogram_config.get("output", "histogram.csv"))
        self.progress_tracker.print_success(f"{sum(counts.values())} predictions written to {csv_path}")

        chart_path = chart_path or histogram_config.get("chart")
        marks = self.thresholds().as_stars(session_spec(self.config))
        if chart_path and histogram.create_chart(counts, chart_path, marks):
            self.progress_tracker.print_success(f"Chart written to {chart_path}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="recshield",
        description="RecShield - privacy-preserving threshold recommendations from an expert model",
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("-c", "--config", type=str, help="Path to configuration file")
    parser.add_argument("--export-config", type=str, metavar="FILE", help="Write the effective configuration")
    parser.add_argument("-v", "--verbose", action="store_true", help="Enable verbose output")
    parser.add_argument("--log-file", type=str, help="Log file path")
    parser.add_argument("--seed", type=int, help="Session seed (reproducible runs)")

    commands = parser.add_subparsers(dest="command")

    train_cmd = commands.add_parser("train", help="Filter expert profiles and train the model")
    train_cmd.add_argument("ratings", help="Expert ratings in MovieLens format")
    train_cmd.add_argument("-o", "--output", default="model.rsem", help="Model snapshot path")
    train_cmd.add_argument("--epochs", type=int, help="Training epochs")
    train_cmd.add_argument("-k", type=int, help="Latent factors")

    robdet_cmd = commands.add_parser("robdet", help="Show which expert profiles RobDet accepts")
    robdet_cmd.add_argument("ratings", help="Expert ratings in MovieLens format")

    rec_cmd = commands.add_parser("recommend", help="Run one private recommendation session")
    rec_cmd.add_argument("--protocol", choices=PROTOCOLS, help="Protocol variant")
    rec_cmd.add_argument("--thresholds", type=str, help="Threshold values in stars, e.g. 5.0,4.9")
    rec_cmd.add_argument("--model", type=str, help="Model snapshot")
    rec_cmd.add_argument("--ratings", type=str, help="User ratings in MovieLens format")
    rec_cmd.add_argument("--user", type=str, help="Raw user id inside --ratings")
    rec_cmd.add_argument("--synthetic", type=int, metavar="M", help="Use a random instance with M items instead")
    rec_cmd.add_argument("--unbatched", action="store_true", help="One item per SWHE ciphertext")
    rec_cmd.add_argument("--profile", dest="swhe_profile", choices=["desk", "paper"], help="SWHE parameter profile")
    rec_cmd.add_argument("--key-bits", type=int, help="Paillier modulus size")
    rec_cmd.add_argument("--transcript", type=str, help="Write the session transcript to this file")
    rec_cmd.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="Session seed")

    bench_cmd = commands.add_parser("bench", help="Time the cryptographic primitives")
    bench_cmd.add_argument("--profile", dest="bench_profile", choices=["desk", "paper"], help="Parameter profile")
    bench_cmd.add_argument("--samples", type=int, help="Samples per primitive (at least 30)")
    bench_cmd.add_argument("--chart", type=str, help="Write a comparison chart")

    hist_cmd = commands.add_parser("histogram", help="Distribution of predicted ratings")
    hist_cmd.add_argument("--model", type=str, required=True, help="Model snapshot")
    hist_cmd.add_argument("--ratings", type=str, required=True, help="User ratings in MovieLens format")
    hist_cmd.add_argument("-o", "--output", type=str, help="CSV output path")
    hist_cmd.add_argument("--chart", type=str, help="Write a bar chart")

    verify_cmd = commands.add_parser("verify-counters", help="Check operation counts against the closed forms")
    verify_cmd.add_argument("--protocol", choices=PROTOCOLS, help="Protocol variant")
    verify_cmd.add_argument("--thresholds", type=str, help="Threshold values in stars")
    verify_cmd.add_argument("--items", type=int, default=64, help="Number of items M")
    verify_cmd.add_argument("--unbatched", action="store_true", help="One item per SWHE ciphertext")
    verify_cmd.add_argument("--key-bits", type=int, help="Paillier modulus size")
    verify_cmd.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="Session seed")

    return parser


def dispatch(app: RecShield, args: argparse.Namespace) -> None:
    if args.command == "train":
        app.train_model(args.ratings, args.output)
    elif args.command == "robdet":
        app.run_robdet(args.ratings)
    elif args.command == "recommend":
        app.recommend(args.model, args.ratings, args.user, args.synthetic, args.transcript)
    elif args.command == "bench":
        app.run_bench(args.bench_profile, args.chart)
    elif args.command == "histogram":
        app.run_histogram(args.model, args.ratings, args.output, args.chart)
    elif args.command == "verify-counters":
        app.verify_counters(args.items)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    args_dict = {k: v for k, v in vars(args).items() if v is not None}

    if not args.command and not args.export_config:
        print_banner()
        parser.print_help()
        return EXIT_OK

    app = None
    try:
        app = RecShield(config_path=args.config, args=args_dict)
        if args.export_config:
            app.config_manager.export_config(args.export_config)
        dispatch(app, args)
        return EXIT_OK

    except ConfigurationError as e:
        logger.error(f"Configuration error: {e}")
        _report(app, str(e))
        return EXIT_CONFIG_ERROR
    except ProtocolError as e:
        logger.error(f"Protocol error: {e}")
        _report(app, str(e))
        return EXIT_PROTOCOL_ERROR
    except (FileNotFoundError, KeyError) as e:
        logger.error(f"Input error: {e}")
        _report(app, str(e))
        return EXIT_CONFIG_ERROR
    except Exception as e:
        logger.exception(f"Unexpected failure: {e}")
        _report(app, f"unexpected failure: {e}")
        return EXIT_PROTOCOL_ERROR


def _report(app: RecShield | None, message: str) -> None:
    if app is not None:
        app.progress_tracker.print_error(message)
    else:
        print(f"Error: {message}", file=sys.stderr)


if __name__ == "__main__":
    sys.exit(main())
