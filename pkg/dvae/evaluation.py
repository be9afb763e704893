"""
colour-control metrics: log-chroma histograms and their KL divergence, the
exemplar-conditioned ablation table, and a frechet distance over a fixed random
feature extractor (not comparable with inception-based scores)
"""

from typing import Dict, List, Optional, Sequence, Tuple
from dataclasses import dataclass
import numpy as np
from scipy import linalg
from scipy.special import rel_entr
from structlog import get_logger
from dvae import errors as err, const as k, util
from dvae.autodiff import Module, Conv2d, Tensor, ops, precision
from dvae.checkpoint import Checkpoint
from dvae.pipeline import generate_conditional

_LOGGER = get_logger()


@dataclass(frozen=True)
class ColourHistogram:
    """B x B bin weights over (u, v) log-chroma, smoothed, summing to 1"""

    bins: np.ndarray

    @property
    def flat(self) -> np.ndarray:
        return self.bins.reshape(-1)


def colour_histogram(
    image: np.ndarray,
    n_bins: int = k.HIST_BINS,
    value_range: Tuple[float, float] = k.HIST_RANGE,
    eps: float = k.HIST_LOG_EPS,
    floor: float = k.HIST_FLOOR,
) -> ColourHistogram:
    """
    u = log((R+eps)/(G+eps)), v = log((B+eps)/(G+eps)), hard-binned and weighted
    by pixel intensity sqrt(R^2+G^2+B^2). an all-black image falls back to
    counts. bins are floored then renormalised
    """

    pixels = util.ensure_rgb(np.asarray(image, dtype=np.float64)).reshape(-1, 3)

    if not np.all(np.isfinite(pixels)):
        raise err.NumericFault("colour_histogram", "non-finite pixels")

    r, g, b = pixels[:, 0], pixels[:, 1], pixels[:, 2]
    low, high = value_range
    u = np.clip(np.log((r + eps) / (g + eps)), low, high)
    v = np.clip(np.log((b + eps) / (g + eps)), low, high)
    weights = np.sqrt(r * r + g * g + b * b)

    if weights.sum() <= 0:
        weights = np.ones_like(weights)

    hist, _, _ = np.histogram2d(u, v, bins=n_bins, range=[value_range, value_range], weights=weights)
    hist /= hist.sum()
    hist = (1.0 - n_bins * n_bins * floor) * hist + floor
    return ColourHistogram(hist / hist.sum())


def histogram_kl(p: ColourHistogram, q: ColourHistogram, symmetric: bool = False) -> float:
    """sum p log(p / q); the symmetric form averages both directions"""

    if p.bins.shape != q.bins.shape:
        raise err.ContractViolation(f"histogram shapes differ: {p.bins.shape} vs {q.bins.shape}")

    forward = float(rel_entr(p.flat, q.flat).sum())

    if not symmetric:
        return max(forward, 0.0)

    backward = float(rel_entr(q.flat, p.flat).sum())
    return max(0.5 * (forward + backward), 0.0)


def _distinct_pairs(n: int, n_pairs: int, rng: np.random.Generator) -> np.ndarray:
    if n < 2:
        raise err.ContractViolation("pairwise baseline needs at least two images")

    first = rng.integers(0, n, size=n_pairs)
    second = rng.integers(0, n - 1, size=n_pairs)
    second = second + (second >= first)
    return np.stack([first, second], axis=1)


def pairwise_kl_samples(
    images: np.ndarray, n_pairs: int, rng: np.random.Generator, symmetric: bool = False
) -> np.ndarray:
    hists: Dict[int, ColourHistogram] = {}

    def hist(i: int) -> ColourHistogram:
        if i not in hists:
            hists[i] = colour_histogram(images[i])
        return hists[i]

    return np.array(
        [histogram_kl(hist(i), hist(j), symmetric) for i, j in _distinct_pairs(len(images), n_pairs, rng)]
    )


def pairwise_baseline_kl(
    test_images: np.ndarray, n_pairs: int, rng: np.random.Generator, symmetric: bool = False
) -> float:
    """mean KL over uniformly drawn ordered pairs of distinct images"""

    return float(pairwise_kl_samples(test_images, n_pairs, rng, symmetric).mean())


@dataclass(frozen=True)
class ReportRow:
    model: str
    arm: str
    mean_kl: float
    stderr: float
    n: int

    def as_row(self) -> Tuple:
        return (self.model, self.arm, self.mean_kl, self.stderr, self.n)


WITH_REG = "with_reg"
WITHOUT_REG = "without_reg"
PAIRWISE = "pairwise"
REFERENCE_KL = {
    WITH_REG: k.REFERENCE_KL_WITH_REG,
    WITHOUT_REG: k.REFERENCE_KL_WITHOUT_REG,
    PAIRWISE: k.REFERENCE_KL_PAIRWISE,
}


def _row(model: str, arm: str, values: Sequence[float]) -> ReportRow:
    values = np.asarray(values, dtype=np.float64)
    stderr = float(values.std(ddof=1) / np.sqrt(len(values))) if len(values) > 1 else 0.0
    return ReportRow(model=model, arm=arm, mean_kl=float(values.mean()), stderr=stderr, n=len(values))


def exemplar_kls(
    ckpt: Checkpoint,
    exemplars: np.ndarray,
    n_per_exemplar: int,
    seed: int,
    symmetric: bool = False,
) -> List[float]:
    """KL(exemplar || generated) for every conditioned sample"""

    rng = np.random.default_rng(seed)
    values = []

    for exemplar in exemplars:
        target = colour_histogram(exemplar)

        for image in generate_conditional(ckpt, exemplar, n_per_exemplar, rng):
            values.append(histogram_kl(target, colour_histogram(image), symmetric))

    return values


def ablation_report(
    model_with: Checkpoint,
    model_without: Checkpoint,
    test_images: np.ndarray,
    n_per_exemplar: int,
    rng: np.random.Generator,
    n_pairs: int = 200,
    symmetric: bool = False,
    name: str = k.VARIANT_DUAL,
) -> List[ReportRow]:
    """
    exemplar-conditioned histogram KL for the regularised and unregularised
    models plus the pairwise baseline over the same test images. both arms see
    the same sampling seed
    """

    if len(test_images) == 0:
        raise err.ContractViolation("ablation needs test images")

    arm_seed = int(rng.integers(0, 2 ** 31))
    log = _LOGGER.bind(exemplars=len(test_images), n_per_exemplar=n_per_exemplar)
    rows = []

    for arm, ckpt in ((WITH_REG, model_with), (WITHOUT_REG, model_without)):
        rows.append(_row(name, arm, exemplar_kls(ckpt, test_images, n_per_exemplar, arm_seed, symmetric)))
        log.info("eval.arm", arm=arm, mean_kl=rows[-1].mean_kl)

    rows.append(_row(name, PAIRWISE, pairwise_kl_samples(test_images, n_pairs, rng, symmetric)))
    log.info("eval.arm", arm=PAIRWISE, mean_kl=rows[-1].mean_kl)
    return rows


def write_report_csv(path: str, rows: Sequence[ReportRow]):
    util.write_csv(path, k.REPORT_COLUMNS, (row.as_row() for row in rows))


# frechet proxy


def _sqrtm_checked(product: np.ndarray, tol: float = 1e-4) -> Optional[np.ndarray]:
    """matrix root, or None when it does not reconstruct the product"""

    root = linalg.sqrtm(product)

    if np.iscomplexobj(root):
        if not np.allclose(np.diagonal(root).imag, 0, atol=1e-3):
            return None
        root = root.real

    if not np.all(np.isfinite(root)):
        return None

    scale = max(np.linalg.norm(product), 1e-12)

    if np.linalg.norm(root @ root - product) / scale > tol:
        return None

    return root


def frechet_distance(
    mu_a: np.ndarray, cov_a: np.ndarray, mu_b: np.ndarray, cov_b: np.ndarray, eps: float = 1e-6
) -> float:
    """|mu_a - mu_b|^2 + Tr(cov_a + cov_b - 2 (cov_a cov_b)^(1/2))"""

    mu_a, mu_b = np.atleast_1d(mu_a).astype(np.float64), np.atleast_1d(mu_b).astype(np.float64)
    cov_a, cov_b = np.atleast_2d(cov_a).astype(np.float64), np.atleast_2d(cov_b).astype(np.float64)

    if mu_a.shape != mu_b.shape or cov_a.shape != cov_b.shape:
        raise err.ContractViolation("frechet distance wants matching statistics")

    covmean = _sqrtm_checked(cov_a @ cov_b)

    if covmean is None:
        _LOGGER.warning("eval.frechet.singular", eps=eps)
        offset = np.eye(cov_a.shape[0]) * eps
        covmean = _sqrtm_checked((cov_a + offset) @ (cov_b + offset))

        if covmean is None:
            raise err.NumericFault("frechet_distance", "matrix square root did not converge")

    diff = mu_a - mu_b
    distance = float(diff @ diff + np.trace(cov_a) + np.trace(cov_b) - 2.0 * np.trace(covmean))
    return max(distance, 0.0)


class FeatureExtractor(Module):
    """fixed, randomly initialised conv stack; N,3,H,W -> N,features"""

    def __init__(self, seed: int, features: int = 16):
        rng = util.rng_stream(seed, "eval.extractor")
        self.convs = [
            Conv2d(rng, 3, 8, stride=2),
            Conv2d(rng, 8, features, stride=2),
            Conv2d(rng, features, features, stride=2),
        ]

    def forward(self, x: Tensor) -> Tensor:
        h = x

        for conv in self.convs:
            h = ops.leaky_relu(conv(h))

        return ops.spatial_mean(h)


def gaussian_stats(features: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    features = np.asarray(features, dtype=np.float64)
    return features.mean(axis=0), np.atleast_2d(np.cov(features, rowvar=False))


def extract_features(images: np.ndarray, extractor: FeatureExtractor, batch_size: int = 64) -> np.ndarray:
    x_all = util.to_nchw(np.asarray(images, dtype=np.float64))
    return np.concatenate(
        [extractor(Tensor(x_all[i : i + batch_size])).data for i in range(0, len(x_all), batch_size)]
    )


def frechet_proxy(set_a: np.ndarray, set_b: np.ndarray, extractor_seed: int = 0) -> float:
    """frechet distance between feature gaussians of two N,H,W,3 image sets"""

    if len(set_a) < 2 or len(set_b) < 2:
        raise err.ContractViolation("frechet proxy needs at least two images per set")

    with precision("float64"):
        extractor = FeatureExtractor(extractor_seed)
        mu_a, cov_a = gaussian_stats(extract_features(set_a, extractor))
        mu_b, cov_b = gaussian_stats(extract_features(set_b, extractor))

    return frechet_distance(mu_a, cov_a, mu_b, cov_b)
