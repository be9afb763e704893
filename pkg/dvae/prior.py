"""
stage two: a causal self-attention model over raster-ordered token grids,
trained by next-token prediction and sampled ancestrally
"""

from typing import List, Optional, Tuple
import numpy as np
from structlog import get_logger
from dvae import errors as err, const as k, util
from dvae.config import PriorConfig
from dvae.types import TokenGrid
from dvae.autodiff import Module, Linear, LayerNorm, Embedding, Tensor, Tape, Adam, ops

_LOGGER = get_logger()


def flatten_grid(grids: np.ndarray) -> np.ndarray:
    """N,h,w -> N,h*w in row-major raster order"""

    grids = np.asarray(grids)
    return grids.reshape(grids.shape[0], -1) if grids.ndim == 3 else grids


def causal_mask(length: int) -> np.ndarray:
    """0 on and below the diagonal, a large negative above it"""

    return np.triu(np.full((length, length), k.MASK_VALUE), k=1)


class CausalSelfAttention(Module):
    def __init__(self, rng: np.random.Generator, channels: int, heads: int):
        if channels % heads:
            raise err.ContractViolation(f"{channels} channels do not split into {heads} heads")

        self.heads = heads
        self.query = Linear(rng, channels, channels)
        self.key = Linear(rng, channels, channels)
        self.value = Linear(rng, channels, channels)
        self.proj = Linear(rng, channels, channels)

    def _split(self, x: Tensor) -> Tensor:
        n, t, c = x.shape
        return ops.transpose(ops.reshape(x, (n, t, self.heads, c // self.heads)), (0, 2, 1, 3))

    def forward(self, x: Tensor) -> Tensor:
        n, t, c = x.shape
        q, k_, v = self._split(self.query(x)), self._split(self.key(x)), self._split(self.value(x))
        scores = ops.scale(ops.matmul(q, ops.transpose(k_, (0, 1, 3, 2))), 1.0 / np.sqrt(c // self.heads))
        scores = ops.add(scores, Tensor.wrap(causal_mask(t).astype(scores.dtype)))
        attended = ops.matmul(ops.softmax(scores, axis=-1), v)
        merged = ops.reshape(ops.transpose(attended, (0, 2, 1, 3)), (n, t, c))
        return self.proj(merged)


class Block(Module):
    """pre-norm attention then a 4x mlp, both residual"""

    def __init__(self, rng: np.random.Generator, channels: int, heads: int, dropout: float):
        self.ln1 = LayerNorm(channels)
        self.attn = CausalSelfAttention(rng, channels, heads)
        self.ln2 = LayerNorm(channels)
        self.fc = Linear(rng, channels, 4 * channels)
        self.out = Linear(rng, 4 * channels, channels)
        self.dropout = dropout
        self.rng = rng

    def forward(self, x: Tensor) -> Tensor:
        h = ops.dropout(self.attn(self.ln1(x)), self.dropout, self.rng, self.training)
        x = ops.add(x, h)
        h = self.out(ops.leaky_relu(self.fc(self.ln2(x))))
        return ops.add(x, ops.dropout(h, self.dropout, self.rng, self.training))


class ARPrior(Module):
    """
    logits at position t are a function of the start token and tokens < t only.
    the start token is index n_embed of the input embedding
    """

    def __init__(
        self,
        rng: np.random.Generator,
        n_embed: int,
        grid: Tuple[int, int],
        config: PriorConfig = PriorConfig(),
        zero_head: bool = False,
    ):
        self.n_embed = n_embed
        self.grid = tuple(grid)
        self.length = grid[0] * grid[1]
        self.tok = Embedding(rng, n_embed + 1, config.channels)
        self.pos = Embedding(rng, self.length, config.channels)
        self.blocks = [Block(rng, config.channels, config.heads, config.dropout) for _ in range(config.blocks)]
        self.ln_f = LayerNorm(config.channels)
        self.head = Linear(rng, config.channels, n_embed)

        if zero_head:
            self.head.weight.data[...] = 0.0
            self.head.bias.data[...] = 0.0

    def _check(self, sequence: np.ndarray):
        if sequence.ndim != 2 or sequence.shape[1] != self.length:
            raise err.ContractViolation(f"prior wants N,{self.length} sequences, got {sequence.shape}")
        if sequence.size and (sequence.min() < 0 or sequence.max() >= self.n_embed):
            raise err.ContractViolation("token out of vocabulary")

    def forward(self, tokens: np.ndarray) -> Tensor:
        """N,L (or N,h,w) tokens -> N,L,n_embed next-token logits"""

        sequence = flatten_grid(tokens)
        self._check(sequence)
        shifted = np.concatenate(
            [np.full((sequence.shape[0], 1), self.n_embed, dtype=np.int64), sequence[:, :-1]], axis=1
        )
        h = ops.add(self.tok(shifted), self.pos(np.arange(self.length)))

        for block in self.blocks:
            h = block(h)

        return self.head(self.ln_f(h))


def prior_nll(prior: ARPrior, sequence: np.ndarray) -> float:
    """mean -log p(token_t | tokens < t) in nats per token, eval mode"""

    training = prior.training
    prior.eval()

    try:
        sequence = flatten_grid(sequence)
        return ops.softmax_cross_entropy(prior(sequence), sequence).item()
    finally:
        prior.train(training)


def train_prior(
    grids: np.ndarray,
    n_embed: int,
    config: PriorConfig,
    seed: int,
    heldout: Optional[np.ndarray] = None,
    losses_path: Optional[str] = None,
    prior: Optional[ARPrior] = None,
    optimizer: Optional[Adam] = None,
) -> Tuple[ARPrior, Adam, List[float]]:
    """fit by next-token cross entropy on random minibatches of the grids"""

    grids = np.asarray(grids)

    if grids.ndim != 3 or len(grids) == 0:
        raise err.ContractViolation(f"train_prior wants a nonempty N,h,w token array, got {grids.shape}")
    if grids.min() < 0 or grids.max() >= n_embed:
        raise err.ContractViolation("token out of vocabulary")

    log = _LOGGER.bind(seed=seed, grids=len(grids))
    prior = prior or ARPrior(util.rng_stream(seed, "prior.init"), n_embed, grids.shape[1:], config)
    optimizer = optimizer or Adam(prior.named_parameters(), lr=config.lr)
    batches = util.rng_stream(seed, "prior.batches")
    sequences = flatten_grid(grids)
    history = []

    prior.train()
    log.info("prior.train.start", steps=config.steps)

    for step in range(1, config.steps + 1):
        batch = sequences[batches.integers(0, len(sequences), size=config.batch_size)]
        optimizer.zero_grad()

        with Tape() as tape:
            loss = ops.softmax_cross_entropy(prior(batch), batch)

        tape.backward(loss)
        optimizer.step()
        nll = loss.item()
        history.append(nll)

        if losses_path:
            util.append_csv(losses_path, k.PRIOR_COLUMNS, (step, nll))
        if step % 100 == 0 or step == config.steps:
            log.info("prior.step", step=step, nll=nll)

    prior.eval()

    if heldout is not None and len(heldout):
        log.info("prior.train.done", heldout_nll=prior_nll(prior, heldout), uniform=float(np.log(n_embed)))
    else:
        log.info("prior.train.done")

    return prior, optimizer, history


def sample_tokens(prior: ARPrior, n: int, temperature: float, rng: np.random.Generator) -> TokenGrid:
    """
    ancestral sampling in raster order -> N,h,w. temperatures below
    ARGMAX_TEMPERATURE decode greedily
    """

    if not temperature > 0:
        raise err.ContractViolation(f"temperature must be positive, got {temperature}")
    if n < 1:
        raise err.ContractViolation(f"need at least one sample, got {n}")

    training = prior.training
    prior.eval()
    sequence = np.zeros((n, prior.length), dtype=np.int64)

    try:
        for t in range(prior.length):
            logits = prior(sequence).data[:, t, :].astype(np.float64)

            if temperature < k.ARGMAX_TEMPERATURE:
                sequence[:, t] = logits.argmax(axis=1)
                continue

            probs = np.exp(ops.log_softmax_np(logits / temperature))
            cdf = np.cumsum(probs, axis=1)
            draws = rng.random(n) * cdf[:, -1]
            sequence[:, t] = np.minimum((cdf < draws[:, None]).sum(axis=1), prior.n_embed - 1)
    finally:
        prior.train(training)

    return sequence.reshape(n, *prior.grid)
