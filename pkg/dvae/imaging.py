"""png in and out"""

from typing import Optional, Sequence
import numpy as np
from PIL import Image as PILImage
from dvae import errors as err, util
from dvae.types import Image

_SIXTEEN_BIT = ("I;16", "I;16B", "I;16L", "I")


def read_png(path: str, size: Optional[int] = None) -> Image:
    """
    any png -> H,W,3 float32 in [0, 1]. 16-bit grayscale keeps its high byte,
    palette/gray/alpha modes convert to 8-bit rgb, resizing is bilinear
    """

    with PILImage.open(path) as img:
        img.load()

        if img.mode in _SIXTEEN_BIT:
            wide = np.asarray(img, dtype=np.uint32)
            gray = (np.clip(wide, 0, 65535) >> 8).astype(np.uint8)
            img = PILImage.fromarray(gray)

        rgb = img.convert("RGB")

        if size is not None and rgb.size != (size, size):
            rgb = rgb.resize((size, size), PILImage.BILINEAR)

        return np.asarray(rgb, dtype=np.float32) / 255.0


def to_uint8(image: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(image, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def write_png(path: str, image: np.ndarray):
    """H,W,3 or H,W in [0, 1]"""

    pixels = to_uint8(image)

    if pixels.ndim == 3 and pixels.shape[-1] == 1:
        pixels = pixels[..., 0]

    PILImage.fromarray(pixels).save(path)


def grid(images: Sequence[np.ndarray], rows: int, cols: int, pad: int = 1) -> np.ndarray:
    """tile H,W,3 images row-major onto one canvas; empty cells stay white"""

    if not len(images):
        raise err.ContractViolation("nothing to tile")
    if len(images) > rows * cols:
        raise err.ContractViolation(f"{len(images)} images do not fit {rows}x{cols}")

    tiles = [util.ensure_rgb(np.asarray(img)) for img in images]
    h, w = tiles[0].shape[:2]
    canvas = np.ones((rows * (h + pad) + pad, cols * (w + pad) + pad, 3), dtype=np.float32)

    for i, tile in enumerate(tiles):
        r, c = divmod(i, cols)
        top, left = pad + r * (h + pad), pad + c * (w + pad)
        canvas[top : top + h, left : left + w] = tile

    return canvas


def save_grid(images: Sequence[np.ndarray], rows: int, cols: int, path: str):
    write_png(path, grid(images, rows, cols))


def structure_to_gray(structure: np.ndarray) -> np.ndarray:
    """per-image min-max normalisation of a structure map to [0, 1]"""

    smap = structure[..., 0] if structure.ndim == 3 else structure
    low, high = float(smap.min()), float(smap.max())

    if high - low < 1e-12:
        return np.zeros_like(smap, dtype=np.float32)

    return ((smap - low) / (high - low)).astype(np.float32)
