from typing import Union
import numpy as np
from dvae import errors as err, util
from dvae.autodiff import Module, Conv2d, Tensor, ops


class GeometryModule(Module):
    """
    learned intensity transform. a stack of 3x3 reflect-padded convolutions
    (rgb -> hidden ... -> 3 channels) followed by channel-wise averaging, so the
    output is a single-channel structure estimate at input resolution
    """

    def __init__(self, rng: np.random.Generator, hidden: int = 16, layers: int = 3):
        channels = [3] + [hidden] * (layers - 1) + [3]
        self.convs = [Conv2d(rng, a, b) for a, b in zip(channels[:-1], channels[1:])]

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or x.shape[1] != 3:
            raise err.ContractViolation(f"geometry module wants N,3,H,W, got {x.shape}")

        h = x

        for i, conv in enumerate(self.convs):
            h = conv(h)
            if i < len(self.convs) - 1:
                h = ops.leaky_relu(h)

        return ops.channel_mean(h)

    def identity_passthrough(self):
        """fixed weights that copy rgb through every layer: output = mean(r, g, b)"""

        for conv in self.convs:
            out_c, in_c, kh, kw = conv.weight.shape
            conv.weight.data[...] = 0.0
            conv.bias.data[...] = 0.0

            for c in range(min(3, in_c, out_c)):
                conv.weight.data[c, c, kh // 2, kw // 2] = 1.0


def _check_images(images: np.ndarray):
    if not np.all(np.isfinite(images)):
        raise err.NumericFault("structure_estimate", "non-finite input")
    if images.min() < 0.0 or images.max() > 1.0:
        raise err.ContractViolation("images must lie in [0, 1]")


def structure_estimate(module: GeometryModule, image: Union[np.ndarray, Tensor]) -> np.ndarray:
    """
    forward-only structure map. accepts H,W,3 / H,W (grayscale is replicated)
    or an N,H,W,3 batch and returns H,W,1 / N,H,W,1
    """

    if isinstance(image, Tensor):
        image = image.data

    single = image.ndim in (2, 3) and (image.ndim == 2 or image.shape[-1] in (1, 3))
    batch = util.ensure_rgb(image)[None] if single else util.ensure_rgb(image)
    _check_images(batch)
    out = module(Tensor(util.to_nchw(batch)))
    maps = util.to_nhwc(out.data)
    return maps[0] if single else maps


def edge_interior_ratio(structure: np.ndarray, foreground: np.ndarray) -> float:
    """
    mean gradient magnitude of the structure map on the foreground boundary
    divided by its mean on interior foreground pixels
    """

    smap = structure[..., 0] if structure.ndim == 3 else structure
    gy, gx = np.gradient(smap.astype(np.float64))
    magnitude = np.hypot(gx, gy)
    mask = foreground.astype(bool)
    padded = np.pad(mask, 1, mode="edge")
    interior = (
        mask
        & padded[:-2, 1:-1]
        & padded[2:, 1:-1]
        & padded[1:-1, :-2]
        & padded[1:-1, 2:]
    )
    boundary = mask & ~interior

    if not boundary.any() or not interior.any():
        raise err.ContractViolation("foreground needs both boundary and interior pixels")

    return float(magnitude[boundary].mean() / max(magnitude[interior].mean(), 1e-12))
