"""
network bodies: colour encoder E_C, geometry encoder E_G, skip decoders D_G and
D_C, and the merge decoder D_X that injects geometry features before colour
features at every resolution
"""

from typing import List, Optional, Tuple, Union
from dataclasses import dataclass
import numpy as np
from dvae import errors as err, const as k
from dvae.config import ModelConfig, VQConfig
from dvae.autodiff import Module, Conv2d, Linear, LayerNorm, Tensor, ops
from dvae.geometry import GeometryModule
from dvae.latents import Codebook, GaussianLatent, quantize, reparameterize, lookup

ENCODER = "encoder"
SKIP = "skip"


@dataclass
class FeaturePyramid:
    """level k has spatial extent (H / 2^k, W / 2^k), level 0 is full resolution"""

    levels: List[Tensor]
    origin: str = ENCODER

    def __len__(self):
        return len(self.levels)

    def __getitem__(self, level: int) -> Tensor:
        return self.levels[level]

    def shapes(self) -> List[Tuple[int, ...]]:
        return [t.shape for t in self.levels]

    def validate(self):
        """adjacent levels differ by exactly 2x spatially"""

        for finer, coarser in zip(self.levels[:-1], self.levels[1:]):
            if finer.shape[2] != 2 * coarser.shape[2] or finer.shape[3] != 2 * coarser.shape[3]:
                raise err.ContractViolation(f"pyramid levels {finer.shape} -> {coarser.shape}")

    def flatten(self) -> np.ndarray:
        """N x (all level values), the vector [F^0, F^1, ...]"""

        n = self.levels[0].shape[0]
        return np.concatenate([t.data.reshape(n, -1) for t in self.levels], axis=1)


class DownBlock(Module):
    """stride-2 conv then a 3x3 conv, both leaky"""

    def __init__(self, rng: np.random.Generator, in_channels: int, out_channels: int):
        self.down = Conv2d(rng, in_channels, out_channels, stride=2)
        self.conv = Conv2d(rng, out_channels, out_channels)

    def forward(self, x: Tensor) -> Tensor:
        return ops.leaky_relu(self.conv(ops.leaky_relu(self.down(x))))


class PyramidEncoder(Module):
    """stem at full resolution plus K downsampling blocks; every block output is kept"""

    def __init__(self, rng: np.random.Generator, config: ModelConfig, in_channels: int):
        self.stem = Conv2d(rng, in_channels, config.width(0))
        self.blocks = [
            DownBlock(rng, config.width(level - 1), config.width(level))
            for level in range(1, config.levels + 1)
        ]

    def forward(self, x: Tensor) -> FeaturePyramid:
        h = ops.leaky_relu(self.stem(x))
        levels = [h]

        for block in self.blocks:
            h = block(h)
            levels.append(h)

        return FeaturePyramid(levels, ENCODER)


class GeometryEncoder(Module):
    """E_G: structure estimate -> (pre-quant grid, F_g)"""

    def __init__(self, rng: np.random.Generator, config: ModelConfig, quantized: bool = True):
        self.body = PyramidEncoder(rng, config, in_channels=1)
        self.head = Conv2d(rng, config.width(config.levels), config.embed_dim, kernel_size=1) if quantized else None

    def forward(self, structure: Tensor) -> Tuple[Optional[Tensor], FeaturePyramid]:
        if structure.ndim != 4 or structure.shape[1] != 1:
            raise err.ContractViolation(f"geometry encoder wants N,1,H,W, got {structure.shape}")

        pyramid = self.body(structure)
        pre_quant = self.head(pyramid[-1]) if self.head is not None else None
        return pre_quant, pyramid


class ColourEncoder(Module):
    """E_C: image -> (mu, logvar, F_c). heads read the spatial mean of the deepest level"""

    def __init__(self, rng: np.random.Generator, config: ModelConfig):
        self.body = PyramidEncoder(rng, config, in_channels=3)
        deepest = config.width(config.levels)
        self.mu_head = Linear(rng, deepest, config.colour_dim)
        self.logvar_head = Linear(rng, deepest, config.colour_dim)

    def forward(self, x: Tensor) -> Tuple[Tensor, Tensor, FeaturePyramid]:
        pyramid = self.body(x)
        pooled = ops.spatial_mean(pyramid[-1])
        return self.mu_head(pooled), self.logvar_head(pooled), pyramid


class GeometrySkipDecoder(Module):
    """D_G: quantized grid -> pyramid matching F_g level for level"""

    def __init__(self, rng: np.random.Generator, config: ModelConfig):
        levels = config.levels
        self.entry = Conv2d(rng, config.embed_dim, config.width(levels))
        self.ups = [Conv2d(rng, config.width(level + 1), config.width(level)) for level in reversed(range(levels))]

    def forward(self, z_q: Tensor) -> FeaturePyramid:
        h = ops.leaky_relu(self.entry(z_q))
        levels = [h]

        for conv in self.ups:
            h = ops.leaky_relu(conv(ops.upsample_nearest2x(h)))
            levels.insert(0, h)

        return FeaturePyramid(levels, SKIP)


class ColourSkipDecoder(Module):
    """D_C: global z_c -> per-level learned projection broadcast over space"""

    def __init__(self, rng: np.random.Generator, config: ModelConfig):
        self.projections = [
            Linear(rng, config.colour_dim, config.width(level)) for level in range(config.levels + 1)
        ]
        self.sizes = [config.level_size(level) for level in range(config.levels + 1)]

    def forward(self, z_c: Tensor) -> FeaturePyramid:
        if z_c.ndim != 2:
            raise err.ContractViolation(f"colour skip decoder wants N,d_c, got {z_c.shape}")

        return FeaturePyramid(
            [ops.broadcast_spatial(proj(z_c), size, size) for proj, size in zip(self.projections, self.sizes)],
            SKIP,
        )


class MergeModule(Module):
    """
    one decoder resolution: concat geometry skip -> layer norm -> conv, then
    concat colour skip -> layer norm -> conv, then optional 2x upsample
    """

    layer_norm_sites = 2

    def __init__(
        self,
        rng: np.random.Generator,
        carried: int,
        geometry: int,
        colour: int,
        width: int,
        upsample: bool,
    ):
        self.norm_geometry = LayerNorm(carried + geometry, axis=1)
        self.conv_geometry = Conv2d(rng, carried + geometry, width)
        self.norm_colour = LayerNorm(width + colour, axis=1)
        self.conv_colour = Conv2d(rng, width + colour, width)
        self.upsample = upsample

    def forward(self, carried: Optional[Tensor], geometry: Tensor, colour: Tensor) -> Tensor:
        h = geometry if carried is None else ops.concat([carried, geometry], axis=1)
        h = ops.leaky_relu(self.conv_geometry(self.norm_geometry(h)))
        h = ops.concat([h, colour], axis=1)
        h = ops.leaky_relu(self.conv_colour(self.norm_colour(h)))
        return ops.upsample_nearest2x(h) if self.upsample else h


class MergeDecoder(Module):
    """D_X: (geometry pyramid, colour pyramid) -> image in [0, 1]"""

    def __init__(self, rng: np.random.Generator, config: ModelConfig):
        levels = config.levels
        self.merges = [
            MergeModule(
                rng,
                carried=0 if level == levels else config.width(level + 1),
                geometry=config.width(level),
                colour=config.width(level),
                width=config.width(level),
                upsample=level > 0,
            )
            for level in reversed(range(levels + 1))
        ]
        self.to_rgb = Conv2d(rng, config.width(0), 3)

    def forward(self, geometry: FeaturePyramid, colour: FeaturePyramid) -> Tensor:
        if len(geometry) != len(self.merges) or len(colour) != len(self.merges):
            raise err.ContractViolation(
                f"merge decoder has {len(self.merges)} levels, got {len(geometry)} and {len(colour)}"
            )

        for g, c in zip(geometry.levels, colour.levels):
            if g.shape[0] != c.shape[0] or g.shape[2:] != c.shape[2:]:
                raise err.ContractViolation(f"pyramid levels incompatible: {g.shape} vs {c.shape}")

        h = None

        for merge, level in zip(self.merges, reversed(range(len(self.merges)))):
            h = merge(h, geometry[level], colour[level])

        return ops.sigmoid(self.to_rgb(h))


@dataclass
class ForwardResult:
    """every intermediate of one training forward pass"""

    structure: Tensor
    F_g: FeaturePyramid
    F_c: FeaturePyramid
    colour: GaussianLatent
    x_F: Tensor
    x_z: Tensor
    pre_quant: Optional[Tensor] = None
    z_q: Optional[Tensor] = None
    tokens: Optional[np.ndarray] = None
    commit: Optional[Tensor] = None
    G_z: Optional[FeaturePyramid] = None
    C_z: Optional[FeaturePyramid] = None


ImageInput = Union[np.ndarray, Tensor]


def as_batch(x: ImageInput) -> Tensor:
    """N,3,H,W tensor in [0, 1]"""

    if not isinstance(x, Tensor):
        x = Tensor(x)

    if x.ndim != 4 or x.shape[1] != 3:
        raise err.ContractViolation(f"expected N,3,H,W images, got {x.shape}")
    if not np.all(np.isfinite(x.data)):
        raise err.NumericFault("input", "non-finite pixels")

    return x


class _DualBase(Module):
    """parts shared by both variants"""

    variant = ""

    def __init__(self, config: ModelConfig, rng: np.random.Generator, quantized: bool):
        self.config = config
        self.geometry = GeometryModule(rng, hidden=config.geometry_hidden, layers=config.geometry_layers)
        self.enc_g = GeometryEncoder(rng, config, quantized=quantized)
        self.enc_c = ColourEncoder(rng, config)
        self.dec_c = ColourSkipDecoder(rng, config)
        self.dec_x = MergeDecoder(rng, config)

    def structure_estimate(self, x: ImageInput) -> Tensor:
        """F_g^0"""

        return self.geometry(as_batch(x))

    def encode_colour(self, x: ImageInput) -> Tuple[Tensor, Tensor, FeaturePyramid]:
        return self.enc_c(as_batch(x))

    def encode_geometry(self, structure: Tensor) -> Tuple[Optional[Tensor], FeaturePyramid]:
        return self.enc_g(structure)

    def skip_decode_colour(self, z_c: Tensor) -> FeaturePyramid:
        return self.dec_c(z_c)

    def merge_decode(self, geometry: FeaturePyramid, colour: FeaturePyramid) -> Tensor:
        return self.dec_x(geometry, colour)

    def colour_latent(self, x: Tensor, noise: np.ndarray) -> Tuple[GaussianLatent, FeaturePyramid]:
        mu, logvar, F_c = self.encode_colour(x)
        sample = reparameterize(mu, logvar, noise)
        return GaussianLatent(mu=mu, logvar=logvar, sample=sample, noise=noise), F_c

    def geometry_features(self, x: ImageInput) -> FeaturePyramid:
        """F_g for an image, used for recolouring and transfer"""

        _, F_g = self.encode_geometry(self.structure_estimate(x))
        return F_g

    def colour_mean(self, x: ImageInput) -> np.ndarray:
        """posterior mean of z_c, N,d_c"""

        mu, _, _ = self.encode_colour(x)
        return mu.data

    def decode_with_colour(self, F_g: FeaturePyramid, z_c: np.ndarray) -> Tensor:
        """D_X(F_g, D_C(z_c))"""

        return self.merge_decode(F_g, self.skip_decode_colour(Tensor(z_c)))


class DualVAE(_DualBase):
    """geometry tokens + colour gaussian, merged by D_X"""

    variant = k.VARIANT_DUAL

    def __init__(self, config: ModelConfig, rng: np.random.Generator, vq: VQConfig = VQConfig()):
        super().__init__(config, rng, quantized=True)
        self.dec_g = GeometrySkipDecoder(rng, config)
        self.codebook = Codebook.create(rng, config.n_embed, config.embed_dim, decay=vq.decay, eps=vq.eps)
        self.beta = vq.beta

    def skip_decode_geometry(self, z_q: Tensor) -> FeaturePyramid:
        if z_q.ndim != 4 or z_q.shape[1] != self.config.embed_dim:
            raise err.ContractViolation(f"D_G wants N,{self.config.embed_dim},h,w, got {z_q.shape}")

        return self.dec_g(z_q)

    def forward(self, x: ImageInput, noise: np.ndarray) -> ForwardResult:
        x = as_batch(x)
        structure = self.geometry(x)
        pre_quant, F_g = self.encode_geometry(structure)
        colour, F_c = self.colour_latent(x, noise)
        tokens, z_q, commit = quantize(pre_quant, self.codebook, self.beta)
        G_z = self.skip_decode_geometry(z_q)
        C_z = self.skip_decode_colour(colour.sample)
        return ForwardResult(
            structure=structure,
            F_g=F_g,
            F_c=F_c,
            colour=colour,
            x_F=self.merge_decode(F_g, F_c),
            x_z=self.merge_decode(G_z, C_z),
            pre_quant=pre_quant,
            z_q=z_q,
            tokens=tokens,
            commit=commit,
            G_z=G_z,
            C_z=C_z,
        )

    def tokens_of(self, x: ImageInput) -> np.ndarray:
        """token grid of an image batch"""

        pre_quant, _ = self.encode_geometry(self.structure_estimate(x))
        return self.codebook.nearest(
            pre_quant.data.transpose(0, 2, 3, 1).reshape(-1, self.config.embed_dim)
        ).reshape(pre_quant.shape[0], self.config.grid, self.config.grid)

    def decode_latents(self, tokens: np.ndarray, z_c: np.ndarray) -> Tensor:
        """D_X(D_G(z_g), D_C(z_c)) from a token grid and colour latents"""

        z_q = Tensor(lookup(self.codebook, tokens))
        return self.merge_decode(self.skip_decode_geometry(z_q), self.skip_decode_colour(Tensor(z_c)))


class ReDualVAE(_DualBase):
    """colour latent only; geometry features are used as encoded"""

    variant = k.VARIANT_REDUAL

    def __init__(self, config: ModelConfig, rng: np.random.Generator, vq: VQConfig = VQConfig()):
        super().__init__(config, rng, quantized=False)
        del vq

    def forward(self, x: ImageInput, noise: np.ndarray) -> ForwardResult:
        x = as_batch(x)
        structure = self.geometry(x)
        _, F_g = self.encode_geometry(structure)
        colour, F_c = self.colour_latent(x, noise)
        C_z = self.skip_decode_colour(colour.sample)
        return ForwardResult(
            structure=structure,
            F_g=F_g,
            F_c=F_c,
            colour=colour,
            x_F=self.merge_decode(F_g, F_c),
            x_z=self.merge_decode(F_g, C_z),
            C_z=C_z,
        )


Model = Union[DualVAE, ReDualVAE]


def build_model(config: ModelConfig, rng: np.random.Generator, vq: VQConfig = VQConfig()) -> Model:
    """variant from config"""

    if config.variant == k.VARIANT_REDUAL:
        return ReDualVAE(config, rng, vq)
    return DualVAE(config, rng, vq)
