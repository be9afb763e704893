"""
the two latent mechanisms: an EMA-trained vector-quantisation codebook with a
straight-through estimator for the geometry tokens, and a diagonal gaussian
with the reparameterisation trick for the colour latent
"""

from typing import Optional, Tuple
from contextlib import contextmanager
from dataclasses import dataclass, field
import numpy as np
from dvae import errors as err, const as k
from dvae.autodiff import Tensor, ops, default_dtype
from dvae.types import TokenGrid


@dataclass
class Codebook:
    """n_embed x dim table, re-estimated by exponential moving averages"""

    embeddings: np.ndarray
    ema_cluster_size: np.ndarray
    ema_sum: np.ndarray
    decay: float = k.EMA_DECAY
    eps: float = k.LAPLACE_EPS
    usage: np.ndarray = field(default=None)  # type: ignore
    _frozen: Optional[dict] = field(default=None, repr=False)

    def __post_init__(self):
        if self.usage is None:
            self.usage = np.zeros(len(self.embeddings), dtype=np.int64)

    @classmethod
    def create(
        cls,
        rng: np.random.Generator,
        n_embed: int,
        dim: int,
        decay: float = k.EMA_DECAY,
        eps: float = k.LAPLACE_EPS,
    ) -> "Codebook":
        """seeded normal entries scaled by 1/sqrt(dim), unit cluster sizes"""

        dtype = default_dtype()
        embeddings = (rng.standard_normal((n_embed, dim)) / np.sqrt(dim)).astype(dtype)
        return cls(
            embeddings=embeddings,
            ema_cluster_size=np.ones(n_embed, dtype=dtype),
            ema_sum=embeddings.copy(),
            decay=decay,
            eps=eps,
        )

    @property
    def n_embed(self) -> int:
        return self.embeddings.shape[0]

    @property
    def dim(self) -> int:
        return self.embeddings.shape[1]

    def nearest(self, vectors: np.ndarray) -> np.ndarray:
        """index of the closest entry in L2; ties go to the lowest index"""

        if self.n_embed == 0:
            raise err.ContractViolation("empty codebook")

        distances = (
            (vectors * vectors).sum(axis=1, keepdims=True)
            - 2.0 * vectors @ self.embeddings.T
            + (self.embeddings * self.embeddings).sum(axis=1)[None, :]
        )
        return distances.argmin(axis=1)

    @contextmanager
    def frozen_assignment(self):
        """
        inside this context the first quantize call captures the assignment and
        every later call reuses it, so z_q = pre_quant + fixed offset. that is
        the function whose exact gradient is the straight-through gradient
        """

        self._frozen = {}

        try:
            yield self
        finally:
            self._frozen = None

    def ema_update(self, tokens: np.ndarray, pre_quant: np.ndarray):
        """
        size <- decay*size + (1-decay)*count, sum <- decay*sum + (1-decay)*sum_x,
        entry <- sum / laplace-smoothed size. entries whose size has decayed to
        zero are left where they were
        """

        vectors = _flatten_grid(pre_quant).astype(self.embeddings.dtype)
        idx = np.asarray(tokens).reshape(-1)

        if len(idx) != len(vectors):
            raise err.ContractViolation("token count does not match pre-quant positions")

        counts = np.bincount(idx, minlength=self.n_embed).astype(self.embeddings.dtype)
        sums = np.zeros_like(self.embeddings)
        np.add.at(sums, idx, vectors)

        gamma = self.decay
        self.ema_cluster_size = gamma * self.ema_cluster_size + (1.0 - gamma) * counts
        self.ema_sum = gamma * self.ema_sum + (1.0 - gamma) * sums
        total = self.ema_cluster_size.sum()
        smoothed = (self.ema_cluster_size + self.eps) / (total + self.n_embed * self.eps) * total
        estimate = self.ema_sum / np.maximum(smoothed, k.EMPTY_CLUSTER)[:, None]
        # codes with no remaining mass keep their last entry
        empty = self.ema_cluster_size < k.EMPTY_CLUSTER
        self.embeddings = np.where(empty[:, None], self.embeddings, estimate).astype(self.embeddings.dtype)
        self.usage += counts.astype(np.int64)

        if not np.all(np.isfinite(self.embeddings)):
            raise err.NumericFault("codebook.ema_update")

    def usage_histogram(self) -> np.ndarray:
        return self.usage.copy()

    def reset_usage(self):
        self.usage[:] = 0

    def state_dict(self):
        return {
            "embeddings": self.embeddings,
            "ema_cluster_size": self.ema_cluster_size,
            "ema_sum": self.ema_sum,
            "usage": self.usage,
        }

    def load_state_dict(self, state):
        dtype = self.embeddings.dtype
        self.embeddings = np.asarray(state["embeddings"], dtype=dtype).reshape(self.embeddings.shape)
        self.ema_cluster_size = np.asarray(state["ema_cluster_size"], dtype=dtype).reshape(-1)
        self.ema_sum = np.asarray(state["ema_sum"], dtype=dtype).reshape(self.embeddings.shape)
        self.usage = np.asarray(state["usage"], dtype=np.int64).reshape(-1)


def _flatten_grid(grid: np.ndarray) -> np.ndarray:
    """N,D,h,w -> N*h*w, D"""

    n, dim, h, w = grid.shape
    return grid.transpose(0, 2, 3, 1).reshape(n * h * w, dim)


def lookup(codebook: Codebook, tokens: np.ndarray) -> np.ndarray:
    """N,h,w tokens -> N,D,h,w embedding grid"""

    tokens = np.asarray(tokens)

    if tokens.size and (tokens.min() < 0 or tokens.max() >= codebook.n_embed):
        raise err.ContractViolation("token out of vocabulary")

    return codebook.embeddings[tokens].transpose(0, 3, 1, 2)


def quantize(
    pre_quant: Tensor, codebook: Codebook, beta: float = k.COMMITMENT_BETA
) -> Tuple[TokenGrid, Tensor, Tensor]:
    """
    nearest-entry assignment per spatial vector. returns (tokens, z_q, commit)
    where z_q carries the straight-through gradient and
    commit = beta * mean over positions of ||pre_quant - sg[z_q]||^2
    """

    if pre_quant.ndim != 4:
        raise err.ContractViolation(f"pre_quant wants N,D,h,w, got {pre_quant.shape}")
    if codebook.n_embed == 0:
        raise err.ContractViolation("empty codebook")
    if pre_quant.shape[1] != codebook.dim:
        raise err.ContractViolation(f"pre_quant dim {pre_quant.shape[1]} != codebook dim {codebook.dim}")

    n, _, h, w = pre_quant.shape
    frozen = codebook._frozen  # pylint: disable=protected-access

    if frozen:
        tokens, quantized = frozen["tokens"], frozen["quantized"]
        forward = pre_quant.data + frozen["offset"]
    else:
        tokens = codebook.nearest(_flatten_grid(pre_quant.data)).reshape(n, h, w)
        quantized = lookup(codebook, tokens).astype(pre_quant.dtype)
        forward = quantized

        if frozen is not None:
            frozen.update(tokens=tokens, quantized=quantized, offset=quantized - pre_quant.data)

    z_q = ops.straight_through(pre_quant, forward)
    residual = ops.sub(pre_quant, Tensor.wrap(quantized))
    per_position = ops.sq_l2_norm(residual, axis=1)
    commit = ops.scale(ops.mean(per_position), beta)
    return tokens, z_q, commit


@dataclass
class GaussianLatent:
    """z_c with its posterior parameters and the noise that produced it"""

    mu: Tensor
    logvar: Tensor
    sample: Tensor
    noise: np.ndarray


def reparameterize(mu: Tensor, logvar: Tensor, noise: np.ndarray) -> Tensor:
    """mu + exp(logvar / 2) * noise"""

    if noise.shape != mu.shape or logvar.shape != mu.shape:
        raise err.ContractViolation("mu, logvar and noise must share a shape")

    std = ops.exp(ops.scale(logvar, 0.5))
    return ops.add(mu, ops.mul(std, Tensor.wrap(noise.astype(mu.dtype))))


def gaussian_kl(mu: Tensor, logvar: Tensor) -> Tensor:
    """
    KL[N(mu, diag exp(logvar)) || N(0, I)] = 1/2 sum(mu^2 + exp(logvar) - 1 - logvar),
    summed over the latent axis and averaged over a leading batch axis
    """

    dim = mu.shape[-1]
    terms = ops.sub(ops.add(ops.square(mu), ops.exp(logvar)), logvar)
    per_item = ops.scale(ops.sub(ops.sum(terms, axis=-1), float(dim)), 0.5)
    return per_item if per_item.ndim == 0 else ops.mean(per_item)


def gaussian_kl_np(mu: np.ndarray, logvar: np.ndarray) -> np.ndarray:
    """closed form on raw arrays, summed over the last axis"""

    return 0.5 * (mu * mu + np.exp(logvar) - 1.0 - logvar).sum(axis=-1)
