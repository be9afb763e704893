"""
stage one (the dual vae), stage two (the token prior) and every way of
generating images from a trained checkpoint
"""

import os
from dataclasses import replace
from typing import List, Optional
import numpy as np
from structlog import get_logger
from dvae import errors as err, const as k, util, config as cfg
from dvae.autodiff import Tape
from dvae.checkpoint import (
    Checkpoint,
    checkpoint_path,
    make_optimizer,
    prune,
    save_checkpoint,
)
from dvae.data import batches
from dvae.networks import DualVAE, Model, build_model
from dvae.objective import model_loss
from dvae.prior import sample_tokens, train_prior
from dvae.types import Image

_LOGGER = get_logger()

LOSSES_CSV = "losses.csv"
PRIOR_LOSSES_CSV = "prior_losses.csv"
USAGE_CSV = "codebook_usage.csv"


def _nchw(images: np.ndarray) -> np.ndarray:
    """N,H,W,3 (or a single H,W,3 / grayscale image) -> N,3,H,W"""

    images = np.asarray(images, dtype=np.float32)

    if images.ndim == 2 or (images.ndim == 3 and images.shape[-1] in (1, 3)):
        images = images[None]

    images = np.stack([util.ensure_rgb(img) for img in images])

    if images.min() < 0.0 or images.max() > 1.0:
        raise err.ContractViolation("images must lie in [0, 1]")

    return util.to_nchw(images)


def _nhwc(batch) -> np.ndarray:
    return util.to_nhwc(batch.data)


def train_stage1(
    images: np.ndarray,
    config: cfg.TrainConfig,
    seed: int,
    out_dir: Optional[str] = None,
    steps: Optional[int] = None,
) -> Checkpoint:
    """
    adam on the variant's loss with an EMA codebook step after every update.
    with an out_dir, every step appends to losses.csv and checkpoints are
    written every train.checkpoint_every steps keeping the newest train.keep_last
    """

    if len(images) == 0:
        raise err.DatasetError("empty training set")

    config = config.with_seed(seed)
    steps = config.train.steps if steps is None else steps
    log = _LOGGER.bind(seed=seed, variant=config.model.variant)
    model = build_model(config.model, util.rng_stream(seed, "init"), config.vq)
    ckpt = Checkpoint(config=config, model=model, optimizer=make_optimizer(model, config))
    data_rng = util.rng_stream(seed, "data")
    noise_rng = util.rng_stream(seed, "noise")
    x_all = _nchw(images)
    last_good: Optional[str] = None
    losses_path = None

    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        losses_path = os.path.join(out_dir, LOSSES_CSV)
        util.write_csv(losses_path, k.LOSS_COLUMNS, [])

    if isinstance(model, DualVAE):
        model.codebook.reset_usage()

    model.train()
    queue: List[np.ndarray] = []
    log.info("train.start", steps=steps, images=len(x_all), batch_size=config.optim.batch_size)

    for step in range(1, steps + 1):
        if not queue:
            queue = batches(x_all, config.optim.batch_size, data_rng)

        x = x_all[queue.pop(0)]
        ckpt.optimizer.zero_grad()

        try:
            with Tape() as tape:
                breakdown = model_loss(x, model, noise_rng, config.loss)

            tape.backward(breakdown.tensor)
            ckpt.optimizer.step()

            if isinstance(model, DualVAE):
                result = breakdown.result
                model.codebook.ema_update(result.tokens, result.pre_quant.data)
        except err.NumericFault as exc:
            log.error("train.abort", step=step, where=exc.where, last_good=last_good)
            raise err.TrainingAborted(step, last_good) from exc

        ckpt.step = step

        if losses_path:
            util.append_csv(losses_path, k.LOSS_COLUMNS, breakdown.as_row(step))
        if step % config.train.log_every == 0 or step == 1:
            log.info("train.step", **dict(zip(k.LOSS_COLUMNS, breakdown.as_row(step))))
        if out_dir and (step % config.train.checkpoint_every == 0 or step == steps):
            path = checkpoint_path(out_dir, step)
            save_checkpoint(path, ckpt)
            prune(out_dir, config.train.keep_last)
            last_good = path
            log.info("train.checkpoint.saved", step=step, path=path)

    model.eval()

    if out_dir and isinstance(model, DualVAE):
        usage = model.codebook.usage_histogram()
        util.write_csv(os.path.join(out_dir, USAGE_CSV), k.USAGE_COLUMNS, enumerate(usage.tolist()))
        log.info("train.codebook", used=int((usage > 0).sum()), n_embed=len(usage))

    log.info("train.done", step=ckpt.step)
    return ckpt


def encode_tokens(model: DualVAE, images: np.ndarray, batch_size: int = 64) -> np.ndarray:
    """N,H,W,3 -> N,h,w token grids"""

    x_all = _nchw(images)
    return np.concatenate([model.tokens_of(x_all[i : i + batch_size]) for i in range(0, len(x_all), batch_size)])


def train_stage2(
    ckpt: Checkpoint,
    train: np.ndarray,
    seed: int,
    test: Optional[np.ndarray] = None,
    out_dir: Optional[str] = None,
    steps: Optional[int] = None,
) -> Checkpoint:
    """fit the token prior on the train split's token grids"""

    model = ckpt.require_dual().eval()
    prior_config = ckpt.config.prior

    if steps is not None:
        prior_config = replace(prior_config, steps=steps)

    grids = encode_tokens(model, train)
    heldout = encode_tokens(model, test) if test is not None and len(test) else None
    losses_path = None

    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        losses_path = os.path.join(out_dir, PRIOR_LOSSES_CSV)
        util.write_csv(losses_path, k.PRIOR_COLUMNS, [])

    ckpt.prior, ckpt.prior_optimizer, _ = train_prior(
        grids, model.config.n_embed, prior_config, seed, heldout=heldout, losses_path=losses_path
    )

    if out_dir:
        save_checkpoint(checkpoint_path(out_dir, ckpt.step), ckpt)

    return ckpt


# generation


def generate_unconditional(
    ckpt: Checkpoint,
    n: int,
    temperature: float,
    rng: np.random.Generator,
    fixed_colour: bool = False,
) -> np.ndarray:
    """
    z_g from the prior, z_c from N(0, I), decoded on the latent path. with
    fixed_colour one z_c is shared by all n images
    """

    model = ckpt.require_dual()
    tokens = sample_tokens(ckpt.require_prior(), n, temperature, rng)
    z_c = rng.standard_normal((1 if fixed_colour else n, model.config.colour_dim))
    z_c = np.broadcast_to(z_c, (n, model.config.colour_dim))
    return _nhwc(model.decode_latents(tokens, np.ascontiguousarray(z_c)))


def generate_conditional(
    ckpt: Checkpoint,
    exemplar: Image,
    n: int,
    rng: np.random.Generator,
    temperature: float = 1.0,
) -> np.ndarray:
    """z_c is the exemplar's posterior mean for every output; only z_g is sampled"""

    model = ckpt.require_dual()
    mu = model.colour_mean(_nchw(exemplar))
    tokens = sample_tokens(ckpt.require_prior(), n, temperature, rng)
    return _nhwc(model.decode_latents(tokens, np.repeat(mu, n, axis=0)))


def _transfer_one(model: Model, source: np.ndarray, z_c: np.ndarray) -> Image:
    """D_X(F_g(source), D_C(z_c)) for a single image and a single colour"""

    return _nhwc(model.decode_with_colour(model.geometry_features(source), z_c.reshape(1, -1)))[0]


def recolour(ckpt: Checkpoint, source: Image, count: int, rng: np.random.Generator) -> np.ndarray:
    """
    count colourisations of one image (grayscale is replicated to rgb) with
    z_c drawn from the gaussian prior
    """

    if count < 1:
        raise err.ContractViolation(f"need at least one colourisation, got {count}")

    model = ckpt.model
    x = _nchw(source)

    if len(x) != 1:
        raise err.ContractViolation("recolour takes one source image")

    z_c = rng.standard_normal((count, model.config.colour_dim))
    F_g = model.geometry_features(np.repeat(x, count, axis=0))
    return _nhwc(model.decode_with_colour(F_g, z_c))


def colour_transfer(ckpt: Checkpoint, source: Image, exemplar: Image) -> Image:
    """geometry of source, colour latent = posterior mean of exemplar"""

    model = ckpt.model
    return _transfer_one(model, _nchw(source), model.colour_mean(_nchw(exemplar)))


def interpolate_colour(
    ckpt: Checkpoint, source: Image, exemplar_left: Image, exemplar_right: Image, steps: int
) -> List[Image]:
    """z_c(t) = (1 - t) mu_left + t mu_right on an even grid of t in [0, 1]"""

    if steps < 2:
        raise err.ContractViolation(f"interpolation needs at least 2 steps, got {steps}")

    model = ckpt.model
    x = _nchw(source)
    mu_left = model.colour_mean(_nchw(exemplar_left))
    mu_right = model.colour_mean(_nchw(exemplar_right))
    return [_transfer_one(model, x, (1.0 - t) * mu_left + t * mu_right) for t in np.linspace(0.0, 1.0, steps)]


def corner_colour_grid(ckpt: Checkpoint, source: Image, corners: np.ndarray, size: int) -> List[Image]:
    """
    size x size transfers of source, row-major. corners are the top-left,
    top-right, bottom-left and bottom-right exemplars and every cell takes the
    bilinear mix of their colour means
    """

    if size < 2:
        raise err.ContractViolation(f"corner grid needs at least 2 cells a side, got {size}")
    if len(corners) != 4:
        raise err.ContractViolation(f"corner grid wants 4 exemplars, got {len(corners)}")

    model = ckpt.model
    x = _nchw(source)
    top_left, top_right, bottom_left, bottom_right = (model.colour_mean(_nchw(c)) for c in corners)
    cells = []

    for row in np.linspace(0.0, 1.0, size):
        left = (1.0 - row) * top_left + row * bottom_left
        right = (1.0 - row) * top_right + row * bottom_right
        cells.extend(_transfer_one(model, x, (1.0 - col) * left + col * right) for col in np.linspace(0.0, 1.0, size))

    return cells


def swap_colour(ckpt: Checkpoint, images: np.ndarray, colours: np.ndarray) -> np.ndarray:
    """
    decode the geometry of images[i] with the colour mean of colours[i]. the
    dual variant goes through its tokens, the redual variant through F_g
    """

    model = ckpt.model
    x, c = _nchw(images), _nchw(colours)

    if len(x) != len(c):
        raise err.ContractViolation(f"{len(x)} images but {len(c)} colour sources")

    mu = model.colour_mean(c)

    if isinstance(model, DualVAE):
        return _nhwc(model.decode_latents(model.tokens_of(x), mu))
    return _nhwc(model.decode_with_colour(model.geometry_features(x), mu))


def reconstruct(ckpt: Checkpoint, images: np.ndarray) -> np.ndarray:
    """latent-path reconstruction with z_c at its posterior mean"""

    return swap_colour(ckpt, images, images)
