"""
dataset ingestion and the synthetic shapes corpus. shape and colour are drawn
from a balanced product design and shuffled, so they are independent
"""

import glob
import os
from itertools import product
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple
import numpy as np
from structlog import get_logger
from dvae import errors as err, const as k, util
from dvae.imaging import read_png

_LOGGER = get_logger()

SHAPES = ("square", "circle", "triangle", "ring")

PALETTE = (
    (0.90, 0.10, 0.10),
    (0.10, 0.75, 0.15),
    (0.15, 0.25, 0.90),
    (0.95, 0.85, 0.10),
    (0.85, 0.15, 0.80),
    (0.10, 0.80, 0.85),
    (0.95, 0.50, 0.05),
    (0.50, 0.20, 0.70),
)

BACKGROUNDS = ((0.08, 0.08, 0.08), (0.50, 0.50, 0.50), (0.92, 0.92, 0.92))


def split_indices(n: int, split_seed: int) -> Tuple[np.ndarray, np.ndarray]:
    """seeded shuffle, 95/5. at least one test item once there are two items"""

    order = util.rng_stream(split_seed, "data.split").permutation(n)
    n_test = int(round(n * k.SPLIT_TEST_FRACTION))

    if n >= 2:
        n_test = max(1, n_test)

    return np.sort(order[n_test:]), np.sort(order[:n_test])


def _read(path: str, size: int) -> Optional[np.ndarray]:
    try:
        return read_png(path, size)
    except (OSError, ValueError, SyntaxError) as exc:
        _LOGGER.warning("data.skip", path=path, error=type(exc).__name__)
        return None


def read_images(paths: Sequence[str], size: int) -> Tuple[np.ndarray, int]:
    """decode on a thread pool, results kept in path order. returns (images, skipped)"""

    with ThreadPoolExecutor(max_workers=util.worker_count()) as pool:
        decoded = list(pool.map(lambda p: _read(p, size), paths))

    images = [img for img in decoded if img is not None]
    skipped = len(decoded) - len(images)

    if not images:
        raise err.DatasetError(f"no readable images among {len(paths)} files")

    return np.stack(images).astype(np.float32), skipped


def load_dataset(directory: str, image_size: int, split_seed: int = 0) -> Tuple[np.ndarray, np.ndarray]:
    """recursive png ingestion -> (train, test) N,H,W,3 arrays in [0, 1]"""

    if not os.path.isdir(directory):
        raise err.DatasetError(f"{directory} is not a directory")

    paths = sorted(glob.glob(os.path.join(directory, "**", "*.png"), recursive=True))

    if not paths:
        raise err.DatasetError(f"no png files under {directory}")

    images, skipped = read_images(paths, image_size)
    train, test = split_indices(len(images), split_seed)
    _LOGGER.info("data.load", directory=directory, train=len(train), test=len(test), skipped=skipped)
    return images[train], images[test]


@dataclass(frozen=True)
class SyntheticShapesSpec:
    size: int = 32
    shapes: Tuple[str, ...] = SHAPES
    shape_sizes: int = 2
    palette: Tuple[Tuple[float, float, float], ...] = PALETTE
    backgrounds: Tuple[Tuple[float, float, float], ...] = BACKGROUNDS
    count: int = 2000
    seed: int = 0

    @property
    def n_shape_classes(self) -> int:
        return len(self.shapes) * self.shape_sizes


@dataclass
class ShapesDataset:
    """images with the factors that produced them"""

    images: np.ndarray
    shape_labels: np.ndarray
    colour_labels: np.ndarray
    background_labels: np.ndarray
    masks: np.ndarray = field(repr=False)

    def __len__(self):
        return len(self.images)

    def subset(self, idx: np.ndarray) -> "ShapesDataset":
        return ShapesDataset(
            images=self.images[idx],
            shape_labels=self.shape_labels[idx],
            colour_labels=self.colour_labels[idx],
            background_labels=self.background_labels[idx],
            masks=self.masks[idx],
        )

    def split(self, split_seed: int = 0) -> Tuple["ShapesDataset", "ShapesDataset"]:
        train, test = split_indices(len(self), split_seed)
        return self.subset(train), self.subset(test)


def shape_mask(kind: str, size: int, centre: Tuple[float, float], radius: float) -> np.ndarray:
    """hard-edged boolean mask sampled at pixel centres"""

    ys, xs = np.mgrid[0:size, 0:size] + 0.5
    dy, dx = ys - centre[0], xs - centre[1]

    if kind == "square":
        return (np.abs(dx) <= radius) & (np.abs(dy) <= radius)
    if kind == "circle":
        return dx * dx + dy * dy <= radius * radius
    if kind == "triangle":
        return (np.abs(dy) <= radius) & (np.abs(dx) <= (dy + radius) / 2.0)
    if kind == "ring":
        dist = np.hypot(dx, dy)
        return (dist <= radius) & (dist >= 0.5 * radius)

    raise err.ContractViolation(f"unknown shape {kind!r}")


def _radius(spec: SyntheticShapesSpec, size_class: int) -> float:
    """size classes spread between a fifth and a third of the canvas"""

    if spec.shape_sizes == 1:
        return 0.25 * spec.size
    return spec.size * (0.2 + (0.33 - 0.2) * size_class / (spec.shape_sizes - 1))


def synth_shapes(spec: SyntheticShapesSpec = SyntheticShapesSpec()) -> ShapesDataset:
    """one flat-coloured shape on a flat background per image, no anti-aliasing"""

    if spec.count < 1 or spec.size < 8:
        raise err.ContractViolation("synthetic corpus needs count >= 1 and size >= 8")
    if not spec.palette or not spec.backgrounds or not spec.shapes or spec.shape_sizes < 1:
        raise err.ContractViolation("synthetic corpus needs shapes, sizes, palette and backgrounds")

    rng = util.rng_stream(spec.seed, "data.shapes")
    design = np.array(list(product(range(spec.n_shape_classes), range(len(spec.palette)))))
    reps = -(-spec.count // len(design))
    design = np.tile(design, (reps, 1))[rng.permutation(reps * len(design))][: spec.count]

    images = np.empty((spec.count, spec.size, spec.size, 3), dtype=np.float32)
    masks = np.empty((spec.count, spec.size, spec.size), dtype=bool)
    backgrounds = rng.integers(0, len(spec.backgrounds), size=spec.count)
    palette = np.asarray(spec.palette, dtype=np.float32)
    fills = np.asarray(spec.backgrounds, dtype=np.float32)

    for i, (shape_class, colour) in enumerate(design):
        kind = spec.shapes[shape_class // spec.shape_sizes]
        radius = _radius(spec, shape_class % spec.shape_sizes)
        margin = radius + 1.0
        centre = (rng.uniform(margin, spec.size - margin), rng.uniform(margin, spec.size - margin))
        mask = shape_mask(kind, spec.size, centre, radius)
        images[i] = fills[backgrounds[i]]
        images[i][mask] = palette[colour]
        masks[i] = mask

    _LOGGER.debug("data.synth", count=spec.count, classes=spec.n_shape_classes, colours=len(spec.palette))
    return ShapesDataset(
        images=images,
        shape_labels=design[:, 0].copy(),
        colour_labels=design[:, 1].copy(),
        background_labels=backgrounds,
        masks=masks,
    )


def spec_from_config(config, seed: int) -> SyntheticShapesSpec:
    """synthetic spec from the data and model config sections"""

    data = config.data

    if data.palette_size > len(PALETTE):
        raise err.ConfigError(f"data.palette_size at most {len(PALETTE)}")

    return SyntheticShapesSpec(
        size=config.model.image_size,
        shape_sizes=data.shape_sizes,
        palette=PALETTE[: data.palette_size],
        count=data.synthetic_count,
        seed=seed,
    )


def training_images(config) -> Tuple[np.ndarray, np.ndarray]:
    """(train, test) from data.path, or the synthetic corpus when the path is empty"""

    if config.data.path:
        return load_dataset(config.data.path, config.model.image_size, config.data.split_seed)

    train, test = synth_shapes(spec_from_config(config, config.data.split_seed)).split(config.data.split_seed)
    return train.images, test.images


def batches(images: np.ndarray, batch_size: int, rng: np.random.Generator) -> List[np.ndarray]:
    """one shuffled epoch of index batches; the last batch may be short"""

    order = rng.permutation(len(images))
    return [order[i : i + batch_size] for i in range(0, len(order), batch_size)]
