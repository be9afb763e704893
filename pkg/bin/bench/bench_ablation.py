from os import makedirs, path
from argparse import ArgumentParser
from timeit import default_timer
from structlog import get_logger
import numpy as np
from dvae import config as cfg, util
from dvae.data import training_images
from dvae.evaluation import REFERENCE_KL, ablation_report, write_report_csv
from dvae.pipeline import train_stage1, train_stage2

LOGGER = get_logger()
DIRNAME = path.dirname(__file__)


def _fit(train: np.ndarray, config: cfg.TrainConfig, seed: int, steps: int):
    """stage one then the prior"""

    return train_stage2(train_stage1(train, config, seed, steps=steps), train, seed)


def main():
    """paired w_F=2 / w_F=0 runs on synthetic shapes, one report per seed"""

    parser = ArgumentParser()
    parser.add_argument("-s", "--seeds", type=int, help="number of seeds", default=3)
    parser.add_argument("--steps", type=int, help="stage one steps per run", default=None)
    parser.add_argument("--set", help="section.key=value override", action="append")
    parser.add_argument(
        "-o", "--out", type=str, help="output directory", default=path.join(DIRNAME, "../../tmp/ablation")
    )

    args = parser.parse_args()
    base = cfg.apply(cfg.TrainConfig(), cfg.parse_overrides(args.set or []))
    train, test = training_images(base)
    evaluation = base.eval
    makedirs(args.out, exist_ok=True)

    LOGGER.info(
        "config",
        seeds=args.seeds,
        steps=args.steps or base.train.steps,
        images=len(train),
        image_size=base.model.image_size,
    )

    summary = []

    for seed in range(args.seeds):
        start = default_timer()
        with_reg = _fit(train, base.with_seed(seed), seed, args.steps)
        without_reg = _fit(train, cfg.apply(base.with_seed(seed), [("loss.w_F", "0")]), seed, args.steps)
        rows = ablation_report(
            with_reg,
            without_reg,
            test[: evaluation.n_exemplars],
            evaluation.n_per_exemplar,
            util.rng_stream(seed, "eval"),
            n_pairs=evaluation.n_pairs,
            symmetric=evaluation.symmetric,
        )
        write_report_csv(path.join(args.out, f"ablation-{seed}.csv"), rows)
        summary.extend((seed,) + row.as_row() for row in rows)
        LOGGER.info("seed", seed=seed, elapsed=default_timer() - start, **{r.arm: r.mean_kl for r in rows})

    util.write_csv(path.join(args.out, "summary.csv"), ("seed", "model", "arm", "mean_kl", "stderr", "n"), summary)

    for arm in sorted({row[2] for row in summary}):
        LOGGER.info(
            "done",
            arm=arm,
            mean_kl=float(np.mean([row[3] for row in summary if row[2] == arm])),
            full_scale=REFERENCE_KL.get(arm),
        )


if __name__ == "__main__":
    main()
