# This file is part of LocalForest.
# Copyright (C) 2025 Eliza

# LocalForest is free software: you can redistribute it and/or modify
# it under the terms of the GNU Affero General Public License as published
# by the Free Software Foundation, either version 3 of the License, or
# (at your option) any later version.

# LocalForest is distributed in the hope that it will be useful,
# but WITHOUT ANY WARRANTY; without even the implied warranty of
# MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE.  See the
# GNU Affero General Public License for more details.

# You should have received a copy of the GNU Affero General Public License
# along with this program.  If not, see <https://www.gnu.org/licenses/>.

import argparse
import json
import logging
import os
import platform
import numpy as np
import scipy
from lforest.config import ConfigError, load_config, config_hash
from lforest.experiments import EXPERIMENTS, ExperimentResult
from lforest.mcstats import ReplicateFailure

logger = logging.getLogger(__name__)

VERSION = "1.0.0"

EXIT_PASS = 0
EXIT_ERROR = 1
EXIT_CONFIG = 2
EXIT_STATISTICAL = 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lforest",
        description="Monte Carlo checks of distributional identities for "
                    "immigration forests, Lamperti transforms and "
                    "Brownian excursions.",
    )
    subparsers = parser.add_subparsers(dest="subcommand", required=True)
    for name in EXPERIMENTS:
        sub = subparsers.add_parser(name)
        sub.add_argument("--config", default=None,
                         help="JSON object overriding the defaults")
        sub.add_argument("--seed", type=int, default=0)
        sub.add_argument("--out", default=".")
        sub.add_argument("--format", choices=("csv", "json"), default="csv")
        sub.add_argument("--workers", type=int, default=1)
        sub.add_argument("--log-level", default="INFO",
                         choices=("DEBUG", "INFO", "WARNING", "ERROR"))
    return parser


def _metadata(config: dict) -> dict:
    return {
        "version": VERSION,
        "config_sha1": config_hash(config),
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
    }


def _to_json(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"{type(obj).__name__} is not JSON serializable")


def write_samples(result: ExperimentResult, out_dir: str,
                  fmt: str) -> str:
    replicate = np.arange(result.samples.size)
    if fmt == "csv":
        path = os.path.join(out_dir, f"{result.name}_samples.csv")
        np.savetxt(path, np.column_stack((replicate, result.samples)),
                   delimiter=",", header="replicate,value", comments="",
                   fmt=("%d", "%.17g"))
    else:
        path = os.path.join(out_dir, f"{result.name}_samples.json")
        with open(path, "w") as file:
            json.dump({"replicate": replicate.tolist(),
                       "value": result.samples.tolist()}, file)
    logger.info(f"Wrote {result.samples.size} samples to {path}")
    return path


def write_summary(result: ExperimentResult, config: dict, seed: int,
                  out_dir: str) -> str:
    summary = result.summary.to_json() | {
        "subcommand": result.name,
        "config": config,
        "seed": seed,
        "passed": result.passed,
        "checks": result.checks,
        "extras": result.extras,
        "metadata": _metadata(config),
    }
    path = os.path.join(out_dir, f"{result.name}_summary.json")
    with open(path, "w") as file:
        json.dump(summary, file, indent=4, default=_to_json)
    logger.info(f"Wrote summary to {path}")
    return path


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=args.log_level,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    if args.workers < 1:
        logger.error(f"--workers must be >= 1, got {args.workers}")
        return EXIT_CONFIG

    try:
        config = load_config(args.subcommand, args.config)
    except ConfigError as error:
        logger.error(str(error))
        return EXIT_CONFIG

    logger.info(f"Running {args.subcommand} with seed {args.seed}")
    try:
        result = EXPERIMENTS[args.subcommand](config, args.seed, args.workers)
    except (ConfigError, ValueError) as error:
        logger.error(f"Invalid {args.subcommand} config: {error}")
        return EXIT_CONFIG
    except ReplicateFailure as error:
        logger.error(str(error))
        return EXIT_ERROR

    os.makedirs(args.out, exist_ok=True)
    write_samples(result, args.out, args.format)
    write_summary(result, config, args.seed, args.out)

    if not result.passed:
        logger.warning(f"{args.subcommand}: acceptance checks failed")
        return EXIT_STATISTICAL
    logger.info(f"{args.subcommand}: all acceptance checks passed")
    return EXIT_PASS
