import os
import glob
import re
from typing import Dict, List, Optional
from dataclasses import dataclass
import numpy as np
from structlog import get_logger
from dvae import errors as err, const as k, util, config as cfg
from dvae.autodiff import Adam
from dvae.networks import DualVAE, Model, build_model
from dvae.prior import ARPrior
from dvae.storage import read_bundle, write_bundle

_LOGGER = get_logger()

_NAME = re.compile(r"checkpoint-(\d+)" + re.escape(k.CHECKPOINT_SUFFIX) + "$")


@dataclass
class Checkpoint:
    """everything needed to resume training or to generate"""

    config: cfg.TrainConfig
    model: Model
    step: int = 0
    optimizer: Optional[Adam] = None
    prior: Optional[ARPrior] = None
    prior_optimizer: Optional[Adam] = None

    @property
    def variant(self) -> str:
        return self.model.variant

    def require_prior(self) -> ARPrior:
        if self.prior is None:
            raise err.ContractViolation("checkpoint has no stage-two prior, run train-prior first")
        return self.prior

    def require_dual(self) -> DualVAE:
        if not isinstance(self.model, DualVAE):
            raise err.ContractViolation(f"needs a {k.VARIANT_DUAL} checkpoint, got {self.variant}")
        return self.model


def make_optimizer(model, config: cfg.TrainConfig) -> Adam:
    optim = config.optim
    return Adam(model.named_parameters(), lr=optim.lr, beta1=optim.beta1, beta2=optim.beta2, eps=optim.eps)


def make_prior(config: cfg.TrainConfig, seed: int = 0) -> ARPrior:
    grid = config.model.grid
    return ARPrior(util.rng_stream(seed, "prior.init"), config.model.n_embed, (grid, grid), config.prior)


def _prefixed(prefix: str, state: Dict[str, np.ndarray]) -> Dict[str, np.ndarray]:
    return {f"{prefix}{name}": value for name, value in state.items()}


def _section(prefix: str, arrays: Dict[str, np.ndarray]) -> Dict[str, np.ndarray]:
    return {name[len(prefix) :]: value for name, value in arrays.items() if name.startswith(prefix)}


def to_arrays(ckpt: Checkpoint) -> Dict[str, np.ndarray]:
    """flat named-array view of a checkpoint"""

    arrays = {k.REC_STEP: np.asarray([ckpt.step], dtype=np.int64)}
    arrays.update(_prefixed(k.REC_PARAM, ckpt.model.state_dict()))

    if isinstance(ckpt.model, DualVAE):
        arrays.update(_prefixed(k.REC_CODEBOOK, ckpt.model.codebook.state_dict()))
    if ckpt.optimizer is not None:
        arrays.update(_prefixed(k.REC_ADAM, ckpt.optimizer.state_dict()))
    if ckpt.prior is not None:
        arrays.update(_prefixed(k.REC_PRIOR, ckpt.prior.state_dict()))
    if ckpt.prior_optimizer is not None:
        arrays.update(_prefixed(k.REC_PRIOR_ADAM, ckpt.prior_optimizer.state_dict()))

    return arrays


def save_checkpoint(path: str, ckpt: Checkpoint):
    """self-describing: the config travels with the weights"""

    write_bundle(path, cfg.dumps(ckpt.config), to_arrays(ckpt))
    _LOGGER.info("checkpoint.saved", path=path, step=ckpt.step, variant=ckpt.variant)


def load_checkpoint(path: str) -> Checkpoint:
    config_text, arrays = read_bundle(path)
    config = cfg.parse(config_text)

    if k.REC_STEP not in arrays:
        raise err.CheckpointError(f"{path}: no step record")

    model = build_model(config.model, util.rng_stream(config.train.seed, "init"), config.vq)
    model.load_state_dict(_section(k.REC_PARAM, arrays))

    if isinstance(model, DualVAE):
        model.codebook.load_state_dict(_section(k.REC_CODEBOOK, arrays))

    ckpt = Checkpoint(config=config, model=model, step=int(arrays[k.REC_STEP][0]))
    adam = _section(k.REC_ADAM, arrays)

    if adam:
        ckpt.optimizer = make_optimizer(model, config)
        ckpt.optimizer.load_state_dict(adam)

    prior_state = _section(k.REC_PRIOR, arrays)

    if prior_state:
        ckpt.prior = make_prior(config, config.train.seed)
        ckpt.prior.load_state_dict(prior_state)
        ckpt.prior.eval()
        prior_adam = _section(k.REC_PRIOR_ADAM, arrays)

        if prior_adam:
            ckpt.prior_optimizer = Adam(ckpt.prior.named_parameters(), lr=config.prior.lr)
            ckpt.prior_optimizer.load_state_dict(prior_adam)

    model.eval()
    _LOGGER.debug("checkpoint.loaded", path=path, step=ckpt.step, variant=model.variant)
    return ckpt


def checkpoint_path(out_dir: str, step: int) -> str:
    return os.path.join(out_dir, f"checkpoint-{step}{k.CHECKPOINT_SUFFIX}")


def list_checkpoints(out_dir: str) -> List[str]:
    """paths ordered by step"""

    found = []

    for path in glob.glob(os.path.join(out_dir, f"checkpoint-*{k.CHECKPOINT_SUFFIX}")):
        match = _NAME.search(os.path.basename(path))
        if match:
            found.append((int(match.group(1)), path))

    return [path for _, path in sorted(found)]


def prune(out_dir: str, keep_last: int) -> List[str]:
    """delete all but the newest keep_last checkpoints"""

    paths = list_checkpoints(out_dir)
    stale = paths[:-keep_last] if keep_last > 0 else paths

    for path in stale:
        os.remove(path)
        _LOGGER.debug("checkpoint.pruned", path=path)

    return stale
