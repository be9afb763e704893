from os import makedirs, path
from argparse import ArgumentParser
from timeit import default_timer
from structlog import get_logger
import numpy as np
from dvae.checkpoint import load_checkpoint
from dvae.data import training_images
from dvae.evaluation import colour_histogram, histogram_kl
from dvae.imaging import read_png, save_grid
from dvae.pipeline import corner_colour_grid

LOGGER = get_logger()
DIRNAME = path.dirname(__file__)


def _inputs(args, config):
    """source and four corner exemplars, from pngs or the synthetic test split"""

    size = config.model.image_size

    if args.input and args.exemplars:
        return read_png(args.input, size), np.stack([read_png(p, size) for p in args.exemplars])

    _, test = training_images(config)
    picks = np.random.default_rng(args.seed).choice(len(test), size=5, replace=False)
    return test[picks[0]], test[picks[1:]]


def main():
    """one source recoloured by bilinear mixes of four corner exemplars"""

    parser = ArgumentParser()
    parser.add_argument("--checkpoint", type=str, help="stage one checkpoint", required=True)
    parser.add_argument("-i", "--input", type=str, help="source png")
    parser.add_argument("-e", "--exemplars", nargs=4, help="top-left top-right bottom-left bottom-right pngs")
    parser.add_argument("-n", "--size", type=int, help="cells per side", default=5)
    parser.add_argument("-s", "--seed", type=int, help="test split picks", default=0)
    parser.add_argument(
        "-o", "--out", type=str, help="output directory", default=path.join(DIRNAME, "../../tmp/transfer_grid")
    )

    args = parser.parse_args()
    ckpt = load_checkpoint(args.checkpoint)
    source, corners = _inputs(args, ckpt.config)
    makedirs(args.out, exist_ok=True)
    LOGGER.info("config", checkpoint=args.checkpoint, variant=ckpt.model.variant, size=args.size)

    start = default_timer()
    cells = corner_colour_grid(ckpt, source, corners, args.size)
    elapsed = default_timer() - start
    last = args.size - 1

    for (row, col), corner in zip(((0, 0), (0, last), (last, 0), (last, last)), corners):
        cell = cells[row * args.size + col]
        LOGGER.info("corner", row=row, col=col, kl=histogram_kl(colour_histogram(corner), colour_histogram(cell)))

    save_grid(cells, args.size, args.size, path.join(args.out, "grid.png"))
    save_grid([source] + list(corners), 1, 5, path.join(args.out, "inputs.png"))
    LOGGER.info("done", cells=len(cells), elapsed=elapsed, out=args.out)


if __name__ == "__main__":
    main()
