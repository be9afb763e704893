"""
command line surface. every subcommand takes --config, --seed, --out and any
number of --set section.key=value overrides
"""

import json
import os
import sys
from argparse import ArgumentParser, Namespace
from typing import Callable, Dict, List
import numpy as np
import structlog
from structlog import get_logger
from dvae import errors as err, const as k, util, config as cfg
from dvae.checkpoint import Checkpoint, load_checkpoint
from dvae.data import training_images
from dvae.evaluation import ablation_report, write_report_csv
from dvae.geometry import structure_estimate
from dvae.imaging import read_png, save_grid, structure_to_gray, write_png
from dvae.objective import run_math_checks
from dvae.pipeline import (
    colour_transfer,
    generate_conditional,
    generate_unconditional,
    interpolate_colour,
    recolour,
    train_stage1,
    train_stage2,
)

_LOGGER = get_logger()

_USAGE_ERRORS = (err.ConfigError, err.ContractViolation)


def _configure_logging():
    renderer = (
        structlog.dev.ConsoleRenderer(colors=True)
        if sys.stderr.isatty()
        else structlog.processors.JSONRenderer(sort_keys=True)
    )
    structlog.configure(
        processors=[
            structlog.processors.add_log_level,
            structlog.processors.TimeStamper(fmt="iso"),
            renderer,
        ],
        logger_factory=structlog.PrintLoggerFactory(sys.stderr),
    )


def _config(args: Namespace) -> cfg.TrainConfig:
    config = cfg.load(args.config) if args.config else cfg.TrainConfig()
    return cfg.apply(config, cfg.parse_overrides(args.set or [])).with_seed(args.seed)


def _out(args: Namespace, name: str = "") -> str:
    os.makedirs(args.out, exist_ok=True)
    return os.path.join(args.out, name) if name else args.out


def _checkpoint(args: Namespace, flag: str = "checkpoint") -> Checkpoint:
    path = getattr(args, flag)

    if not path:
        raise err.ContractViolation(f"--{flag.replace('_', '-')} is required")

    return load_checkpoint(path)


def _image(path: str, size: int) -> np.ndarray:
    if not path:
        raise err.ContractViolation("missing image path")
    return read_png(path, size)


def _blank(like: np.ndarray) -> np.ndarray:
    return np.ones_like(like)


def _train(args: Namespace):
    config = _config(args)
    train, _ = training_images(config)
    train_stage1(train, config, args.seed, out_dir=_out(args), steps=args.steps)


def _train_prior(args: Namespace):
    ckpt = _checkpoint(args)
    train, test = training_images(ckpt.config)
    train_stage2(ckpt, train, args.seed, test=test, out_dir=_out(args), steps=args.steps)


def _sample(args: Namespace):
    ckpt = _checkpoint(args)
    rng = util.rng_stream(args.seed, "sample")
    images = generate_unconditional(ckpt, args.n, args.temperature, rng, fixed_colour=args.fixed_colour)
    cols = int(np.ceil(np.sqrt(args.n)))
    save_grid(list(images), -(-args.n // cols), cols, _out(args, "samples.png"))


def _sample_cond(args: Namespace):
    """one row per exemplar (exemplar in the first cell) above its row of samples"""

    ckpt = _checkpoint(args)
    size = ckpt.config.model.image_size
    rng = util.rng_stream(args.seed, "sample")

    if args.exemplar:
        exemplars = [_image(path, size) for path in args.exemplar]
    else:
        _, test = training_images(ckpt.config)
        exemplars = list(test[: min(4, len(test))])

    tiles: List[np.ndarray] = []

    for exemplar in exemplars:
        samples = generate_conditional(ckpt, exemplar, args.n, rng, temperature=args.temperature)
        tiles.append(exemplar)
        tiles.extend(_blank(exemplar) for _ in range(args.n - 1))
        tiles.extend(samples)

    save_grid(tiles, 2 * len(exemplars), args.n, _out(args, "samples_cond.png"))


def _recolour(args: Namespace):
    ckpt = _checkpoint(args)
    source = _image(args.input, ckpt.config.model.image_size)
    images = recolour(ckpt, source, args.k, util.rng_stream(args.seed, "sample"))
    save_grid([source] + list(images), 1, args.k + 1, _out(args, "recolour.png"))


def _transfer(args: Namespace):
    ckpt = _checkpoint(args)
    size = ckpt.config.model.image_size
    source, exemplar = _image(args.input, size), _image(args.exemplar[0] if args.exemplar else "", size)
    save_grid([source, exemplar, colour_transfer(ckpt, source, exemplar)], 1, 3, _out(args, "transfer.png"))


def _interpolate(args: Namespace):
    ckpt = _checkpoint(args)
    size = ckpt.config.model.image_size
    source = _image(args.input, size)
    left = _image(args.exemplar[0] if args.exemplar else "", size)
    right = _image(args.exemplar_right, size)
    frames = interpolate_colour(ckpt, source, left, right, args.steps or 8)
    save_grid([left] + frames + [right], 1, len(frames) + 2, _out(args, "interpolate.png"))


def _eval_ablation(args: Namespace):
    with_reg = _checkpoint(args)
    without_reg = _checkpoint(args, "checkpoint_without")
    evaluation = with_reg.config.eval
    _, test = training_images(with_reg.config)
    rows = ablation_report(
        with_reg,
        without_reg,
        test[: evaluation.n_exemplars],
        evaluation.n_per_exemplar,
        util.rng_stream(args.seed, "eval"),
        n_pairs=evaluation.n_pairs,
        symmetric=args.symmetric or evaluation.symmetric,
        name=with_reg.variant,
    )
    write_report_csv(_out(args, "ablation.csv"), rows)


def _dump_structure(args: Namespace):
    ckpt = _checkpoint(args)
    source = _image(args.input, ckpt.config.model.image_size)
    write_png(_out(args, "structure.png"), structure_to_gray(structure_estimate(ckpt.model.geometry, source)))


def _verify_math(args: Namespace):
    results = run_math_checks(args.seed)
    util.write_csv(_out(args, "checks.csv"), k.CHECK_COLUMNS, (r.as_row() for r in results))
    failed = [r.name for r in results if not r.passed]

    if failed:
        raise err.NumericFault("verify-math", f"failed checks: {', '.join(failed)}")


COMMANDS: Dict[str, Callable[[Namespace], None]] = {
    "train": _train,
    "train-prior": _train_prior,
    "sample": _sample,
    "sample-cond": _sample_cond,
    "recolour": _recolour,
    "transfer": _transfer,
    "interpolate": _interpolate,
    "eval-ablation": _eval_ablation,
    "dump-structure": _dump_structure,
    "verify-math": _verify_math,
}


def build_parser() -> ArgumentParser:
    parser = ArgumentParser(description="dual latent vae")
    parser.add_argument("command", choices=sorted(COMMANDS), help="what to run")
    parser.add_argument("-c", "--config", help="config file", type=str)
    parser.add_argument("-s", "--seed", help="root seed", default=0, type=int)
    parser.add_argument("-o", "--out", help="output directory", default="out", type=str)
    parser.add_argument("--set", help="section.key=value override", action="append")
    parser.add_argument("--checkpoint", help="checkpoint file", type=str)
    parser.add_argument("--checkpoint-without", help="unregularised checkpoint for eval-ablation", type=str)
    parser.add_argument("-i", "--input", help="source png", type=str)
    parser.add_argument("-e", "--exemplar", help="exemplar png (repeatable)", action="append")
    parser.add_argument("--exemplar-right", help="right interpolation exemplar", type=str)
    parser.add_argument("-n", "--n", help="samples per grid row", default=8, type=int)
    parser.add_argument("-k", "--k", help="colourisations", default=4, type=int)
    parser.add_argument("--steps", help="training steps or interpolation points", type=int)
    parser.add_argument("-t", "--temperature", help="prior temperature", default=1.0, type=float)
    parser.add_argument("--symmetric", help="symmetric histogram kl", action="store_true")
    parser.add_argument("--fixed-colour", help="share one z_c across samples", action="store_true")
    return parser


def run(argv: List[str]) -> int:
    """exit code for argv; errors become a single machine readable line on stderr"""

    args = build_parser().parse_args(argv)
    log = _LOGGER.bind(command=args.command, seed=args.seed)

    try:
        COMMANDS[args.command](args)
    except Exception as exc:  # pylint: disable=broad-except
        code = 2 if isinstance(exc, _USAGE_ERRORS) else 1
        log.error("cli.failed", error=type(exc).__name__, code=code)
        print(f"error={type(exc).__name__} message={json.dumps(str(exc))}", file=sys.stderr)
        return code

    log.info("cli.done")
    return 0


def _main():
    """main entry point"""

    _configure_logging()
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    _main()
