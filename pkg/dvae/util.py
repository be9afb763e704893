import os
import csv
from typing import Iterable, Sequence, Any
import numpy as np
from xxhash import xxh32_intdigest
from dvae import const as k


def rng_stream(seed: int, name: str) -> np.random.Generator:
    """named random stream derived from the root seed"""

    return np.random.default_rng(xxh32_intdigest(name, seed=seed & 0xFFFFFFFF))


def worker_count() -> int:
    """decode workers, capped by env"""

    cap = os.environ.get(k.THREADS_ENV)

    if cap:
        return max(1, int(cap))
    return os.cpu_count() or 1


def to_nchw(images: np.ndarray) -> np.ndarray:
    """N,H,W,3 -> N,3,H,W"""

    return np.ascontiguousarray(np.transpose(images, (0, 3, 1, 2)))


def to_nhwc(batch: np.ndarray) -> np.ndarray:
    """N,3,H,W -> N,H,W,3"""

    return np.ascontiguousarray(np.transpose(batch, (0, 2, 3, 1)))


def ensure_rgb(image: np.ndarray) -> np.ndarray:
    """grayscale (H,W) or (H,W,1) gets replicated to 3 channels"""

    if image.ndim == 2:
        image = image[..., None]
    if image.shape[-1] == 1:
        image = np.repeat(image, 3, axis=-1)
    return image


def write_csv(path: str, header: Sequence[str], rows: Iterable[Sequence[Any]]):
    """plain csv with a fixed header"""

    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def append_csv(path: str, header: Sequence[str], row: Sequence[Any]):
    """append, writing the header on first use"""

    fresh = not os.path.exists(path)

    with open(path, "a", newline="") as handle:
        writer = csv.writer(handle)
        if fresh:
            writer.writerow(header)
        writer.writerow([_fmt(v) for v in row])


def read_csv(path: str):
    """rows as dicts"""

    with open(path, newline="") as handle:
        return list(csv.DictReader(handle))


def _fmt(value: Any) -> Any:
    """repr floats so reruns are byte identical"""

    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return value
