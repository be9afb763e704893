"""
training objectives for both variants plus the numerical checks behind them:
the laplace log-density identity, the reverse-lipschitz bound, and the
explicit/implicit elbo ordering
"""

from typing import Callable, List, Optional, Protocol, Tuple
from dataclasses import dataclass, field
import numpy as np
from structlog import get_logger
from dvae import errors as err, const as k, util
from dvae.config import LossConfig
from dvae.autodiff import Tensor, ops, precision
from dvae.latents import Codebook, gaussian_kl, gaussian_kl_np
from dvae.networks import DualVAE, FeaturePyramid, ForwardResult, Model, ReDualVAE, as_batch

_LOGGER = get_logger()


@dataclass
class LossBreakdown:
    """named loss components; total is the weighted sum"""

    recon_F: float
    recon_z: float
    vq_latent: float
    gauss_kl: float
    weights: Tuple[float, float, float, float]
    total: float
    tensor: Tensor = field(repr=False)
    result: Optional[ForwardResult] = field(default=None, repr=False)

    def as_row(self, step: int) -> Tuple:
        """step,recon_F,recon_z,vq,kl,total"""

        return (step, self.recon_F, self.recon_z, self.vq_latent, self.gauss_kl, self.total)


def recon_l1(x: Tensor, x_hat: Tensor) -> Tensor:
    """per-image L1 distance, averaged over the batch"""

    if x.shape != x_hat.shape:
        raise err.ContractViolation(f"reconstruction shape {x_hat.shape} != {x.shape}")

    return ops.mean(ops.l1_norm(ops.sub(x, x_hat), axis=(1, 2, 3)))


def combine(
    recon_F: Tensor,
    recon_z: Tensor,
    vq_latent: Tensor,
    gauss_kl_: Tensor,
    weights: Tuple[float, float, float, float],
    result: Optional[ForwardResult] = None,
) -> LossBreakdown:
    """weighted sum of the four components"""

    parts = {"recon_F": recon_F, "recon_z": recon_z, "vq_latent": vq_latent, "gauss_kl": gauss_kl_}

    for name, part in parts.items():
        if not np.all(np.isfinite(part.data)):
            raise err.NumericFault(f"loss.{name}")

    w_F, w_z, w_vq, w_kl = weights
    total = ops.add(
        ops.add(ops.scale(recon_F, w_F), ops.scale(recon_z, w_z)),
        ops.add(ops.scale(vq_latent, w_vq), ops.scale(gauss_kl_, w_kl)),
    )

    if not np.isfinite(total.item()):
        raise err.NumericFault("loss.total")

    return LossBreakdown(
        recon_F=recon_F.item(),
        recon_z=recon_z.item(),
        vq_latent=vq_latent.item(),
        gauss_kl=gauss_kl_.item(),
        weights=weights,
        total=total.item(),
        tensor=total,
        result=result,
    )


def _noise(model: Model, batch: int, rng: np.random.Generator) -> np.ndarray:
    return rng.standard_normal((batch, model.config.colour_dim))


def dualvae_loss(
    x, model: DualVAE, rng: np.random.Generator, weights: LossConfig = LossConfig()
) -> LossBreakdown:
    """
    w_F * |X - D_X(F_g, F_c)| + w_z * |X - D_X(D_G(z_g), D_C(z_c))| + w_vq * commit + w_kl * KL,
    one reparameterised colour sample per image
    """

    if not isinstance(model, DualVAE):
        raise err.ContractViolation("dualvae_loss needs a DualVAE")

    x = as_batch(x)
    result = model(x, _noise(model, x.shape[0], rng))
    return combine(
        recon_l1(x, result.x_F),
        recon_l1(x, result.x_z),
        result.commit,
        gaussian_kl(result.colour.mu, result.colour.logvar),
        (weights.w_F, weights.w_z, weights.w_vq, weights.w_kl),
        result,
    )


def redualvae_loss(
    x, model: ReDualVAE, rng: np.random.Generator, weights: LossConfig = LossConfig()
) -> LossBreakdown:
    """
    redual_w_z * |X - D_X(F_g, D_C(z_c))| + redual_w_F * |X - D_X(F_g, F_c)| + w_kl * KL.
    there is no token latent so the vq component is identically zero
    """

    if not isinstance(model, ReDualVAE):
        raise err.ContractViolation("redualvae_loss needs a ReDualVAE")

    x = as_batch(x)
    result = model(x, _noise(model, x.shape[0], rng))
    return combine(
        recon_l1(x, result.x_F),
        recon_l1(x, result.x_z),
        ops.const(0.0),
        gaussian_kl(result.colour.mu, result.colour.logvar),
        (weights.redual_w_F, weights.redual_w_z, 0.0, weights.w_kl),
        result,
    )


def model_loss(x, model: Model, rng: np.random.Generator, weights: LossConfig = LossConfig()) -> LossBreakdown:
    """variant dispatch"""

    if isinstance(model, ReDualVAE):
        return redualvae_loss(x, model, rng, weights)
    return dualvae_loss(x, model, rng, weights)


# laplace likelihood


def laplace_logprob(x: Tensor, mu: Tensor) -> Tensor:
    """unnormalised laplace log density with unit scale: -|x - mu|_1"""

    return ops.neg(ops.l1_norm(ops.sub(ops.const(x), ops.const(mu))))


# reverse lipschitz


@dataclass(frozen=True)
class LipschitzConfig:
    C: float = 1.0

    def __post_init__(self):
        if not self.C > 0:
            raise err.ContractViolation(f"lipschitz constant must be positive, got {self.C}")


@dataclass(frozen=True)
class LipschitzCheck:
    holds: bool
    ratio: float


def _l1(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.abs(np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)).sum())


def check_reverse_lipschitz(
    DX: Callable[[np.ndarray], np.ndarray], a: np.ndarray, b: np.ndarray, C: float = 1.0
) -> LipschitzCheck:
    """
    |a - b|_1 <= C |DX(a) - DX(b)|_1, plus the ratio |a - b| / |DX(a) - DX(b)|.
    the ratio is inf when DX collapses distinct inputs and 0 when a == b
    """

    C = LipschitzConfig(C).C
    inputs = _l1(a, b)
    outputs = _l1(DX(a), DX(b))

    if outputs == 0.0:
        ratio = 0.0 if inputs == 0.0 else float("inf")
    else:
        ratio = inputs / outputs

    return LipschitzCheck(holds=inputs <= C * outputs * (1.0 + 1e-12) + 1e-12, ratio=ratio)


# elbo models


@dataclass
class Posterior:
    """one latent draw and the KL of the posterior it came from"""

    z_g: np.ndarray
    z_c: np.ndarray
    kl: float


class ElboModel(Protocol):
    """what the elbo estimators need from a model, on flat single-example vectors"""

    def posterior(self, x: np.ndarray, F_g: np.ndarray, F_c: np.ndarray, rng: np.random.Generator) -> Posterior:
        ...

    def decode_g(self, z_g: np.ndarray) -> np.ndarray:
        ...

    def decode_c(self, z_c: np.ndarray) -> np.ndarray:
        ...

    def decode_x(self, g: np.ndarray, c: np.ndarray) -> np.ndarray:
        ...


def _orthogonal(rng: np.random.Generator, dim: int) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((dim, dim)))
    return q * np.sign(np.diag(r))


@dataclass
class LinearGaussianToy:
    """
    constructed model with orthogonal linear encoders, their transposes as skip
    decoders and a diagonal gaussian posterior of fixed log-variance. D_X is either
    plain concatenation or concatenation followed by a permutation and an offset,
    both of which are isometries in L1 and so 1-reverse-lipschitz
    """

    enc_g: np.ndarray
    enc_c: np.ndarray
    perm: np.ndarray
    offset: np.ndarray
    logvar: float = -2.0
    deterministic: bool = False

    IDENTITY = "identity"
    PERMUTATION = "permutation"

    @classmethod
    def create(
        cls,
        rng: np.random.Generator,
        dim_g: int = 6,
        dim_c: int = 4,
        mode: str = "permutation",
        logvar: float = -2.0,
        deterministic: bool = False,
    ) -> "LinearGaussianToy":
        total = dim_g + dim_c

        if mode == cls.IDENTITY:
            perm, offset = np.arange(total), np.zeros(total)
        elif mode == cls.PERMUTATION:
            perm, offset = rng.permutation(total), rng.normal(size=total)
        else:
            raise err.ContractViolation(f"unknown toy decoder mode {mode!r}")

        return cls(
            enc_g=_orthogonal(rng, dim_g),
            enc_c=_orthogonal(rng, dim_c),
            perm=perm,
            offset=offset,
            logvar=logvar,
            deterministic=deterministic,
        )

    @property
    def dim_g(self) -> int:
        return self.enc_g.shape[0]

    @property
    def dim_c(self) -> int:
        return self.enc_c.shape[0]

    def sample_features(self, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(X, F_g, F_c) where X = D_X(F_g, F_c) + laplace noise"""

        F_g = rng.normal(size=self.dim_g)
        F_c = rng.normal(size=self.dim_c)
        x = self.decode_x(F_g, F_c) + rng.laplace(size=self.dim_g + self.dim_c)
        return x, F_g, F_c

    def posterior(self, x: np.ndarray, F_g: np.ndarray, F_c: np.ndarray, rng: np.random.Generator) -> Posterior:
        del x
        mu_g, mu_c = self.enc_g @ F_g, self.enc_c @ F_c
        logvar_g = np.full_like(mu_g, self.logvar)
        logvar_c = np.full_like(mu_c, self.logvar)
        kl = float(gaussian_kl_np(mu_g, logvar_g) + gaussian_kl_np(mu_c, logvar_c))

        if self.deterministic:
            return Posterior(z_g=mu_g, z_c=mu_c, kl=kl)

        std = np.exp(0.5 * self.logvar)
        return Posterior(
            z_g=mu_g + std * rng.standard_normal(mu_g.shape),
            z_c=mu_c + std * rng.standard_normal(mu_c.shape),
            kl=kl,
        )

    def decode_g(self, z_g: np.ndarray) -> np.ndarray:
        return self.enc_g.T @ z_g

    def decode_c(self, z_c: np.ndarray) -> np.ndarray:
        return self.enc_c.T @ z_c

    def decode_x(self, g: np.ndarray, c: np.ndarray) -> np.ndarray:
        return np.concatenate([g, c])[self.perm] + self.offset


class DualVAEElbo:
    """
    a DualVAE seen as an elbo model: pyramids are flattened into one vector per
    image. the token posterior is one-hot under a uniform prior so its KL is the
    constant positions * log(N_embed)
    """

    def __init__(self, model: DualVAE):
        self.model = model.eval()
        config = model.config
        self.image_shape = (1, 3, config.image_size, config.image_size)
        self.level_shapes = [
            (1, config.width(level), config.level_size(level), config.level_size(level))
            for level in range(config.levels + 1)
        ]
        self.token_kl = config.grid * config.grid * float(np.log(config.n_embed))

    def _pyramid(self, flat: np.ndarray) -> FeaturePyramid:
        levels, start = [], 0

        for shape in self.level_shapes:
            size = int(np.prod(shape))
            levels.append(Tensor(flat[start : start + size].reshape(shape)))
            start += size

        if start != flat.size:
            raise err.ContractViolation(f"flat pyramid has {flat.size} values, expected {start}")

        return FeaturePyramid(levels)

    def features(self, image: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(X, F_g, F_c) flattened for one N,3,H,W image"""

        x = as_batch(image)
        F_g = self.model.geometry_features(x)
        _, _, F_c = self.model.encode_colour(x)
        return x.data.reshape(-1).astype(np.float64), F_g.flatten()[0], F_c.flatten()[0]

    def posterior(self, x: np.ndarray, F_g: np.ndarray, F_c: np.ndarray, rng: np.random.Generator) -> Posterior:
        del F_g, F_c
        image = x.reshape(self.image_shape)
        tokens = self.model.tokens_of(image)
        mu, logvar, _ = self.model.encode_colour(image)
        noise = rng.standard_normal(mu.shape)
        z_c = mu.data + np.exp(0.5 * logvar.data) * noise
        kl = float(gaussian_kl_np(mu.data, logvar.data).sum()) + self.token_kl
        return Posterior(z_g=tokens, z_c=z_c, kl=kl)

    def decode_g(self, z_g: np.ndarray) -> np.ndarray:
        z_q = Tensor(self.model.codebook.embeddings[z_g].transpose(0, 3, 1, 2))
        return self.model.skip_decode_geometry(z_q).flatten()[0]

    def decode_c(self, z_c: np.ndarray) -> np.ndarray:
        return self.model.skip_decode_colour(Tensor(z_c.reshape(1, -1))).flatten()[0]

    def decode_x(self, g: np.ndarray, c: np.ndarray) -> np.ndarray:
        return self.model.merge_decode(self._pyramid(g), self._pyramid(c)).data.reshape(-1)


@dataclass(frozen=True)
class MonteCarloEstimate:
    value: float
    stderr: float
    n_samples: int


def _estimate(draws: List[float]) -> MonteCarloEstimate:
    values = np.asarray(draws, dtype=np.float64)
    n = len(values)
    stderr = float(values.std(ddof=1) / np.sqrt(n)) if n > 1 else float("nan")
    return MonteCarloEstimate(value=float(values.mean()), stderr=stderr, n_samples=n)


def _check_samples(n_samples: int):
    if n_samples < 1:
        raise err.ContractViolation(f"n_samples must be >= 1, got {n_samples}")


def explicit_elbo_estimate(
    x: np.ndarray,
    F_g: np.ndarray,
    F_c: np.ndarray,
    model: ElboModel,
    n_samples: int,
    rng: np.random.Generator,
) -> MonteCarloEstimate:
    """
    mean over posterior draws of
    -|X - D_X(F_g, F_c)| - |F_g - D_g(z_g)| - |F_c - D_c(z_c)| - KL,
    additive constants dropped
    """

    _check_samples(n_samples)
    recon_F = _l1(x, model.decode_x(F_g, F_c))
    draws = []

    for _ in range(n_samples):
        post = model.posterior(x, F_g, F_c, rng)
        draws.append(-recon_F - _l1(F_g, model.decode_g(post.z_g)) - _l1(F_c, model.decode_c(post.z_c)) - post.kl)

    return _estimate(draws)


def implicit_elbo_estimate(
    x: np.ndarray,
    F_g: np.ndarray,
    F_c: np.ndarray,
    model: ElboModel,
    n_samples: int,
    rng: np.random.Generator,
) -> MonteCarloEstimate:
    """mean over posterior draws of -2|X - D_X(F)| - |X - D_X(D_g(z_g), D_c(z_c))| - KL"""

    _check_samples(n_samples)
    recon_F = _l1(x, model.decode_x(F_g, F_c))
    draws = []

    for _ in range(n_samples):
        post = model.posterior(x, F_g, F_c, rng)
        recon_z = _l1(x, model.decode_x(model.decode_g(post.z_g), model.decode_c(post.z_c)))
        draws.append(-2.0 * recon_F - recon_z - post.kl)

    return _estimate(draws)


@dataclass(frozen=True)
class FeatureBoundTerms:
    """
    lhs = |F_g - D_g(z_g)| + |F_c - D_c(z_c)|
    middle = C |D_X(F) - D_X(D(z))|
    rhs = C (|D_X(F) - X| + |D_X(D(z)) - X|)
    lhs <= middle needs reverse lipschitz; middle <= rhs is the triangle inequality
    """

    lhs: float
    middle: float
    rhs: float

    @property
    def reverse_lipschitz_step(self) -> bool:
        return self.lhs <= self.middle * (1.0 + 1e-12) + 1e-12

    @property
    def triangle_step(self) -> bool:
        return self.middle <= self.rhs * (1.0 + 1e-12) + 1e-12

    @property
    def holds(self) -> bool:
        return self.lhs <= self.rhs * (1.0 + 1e-12) + 1e-12


def feature_bound_terms(
    model: ElboModel,
    x: np.ndarray,
    F_g: np.ndarray,
    F_c: np.ndarray,
    z_g: np.ndarray,
    z_c: np.ndarray,
    C: float = 1.0,
) -> FeatureBoundTerms:
    """term-by-term feature reconstruction bound"""

    C = LipschitzConfig(C).C
    decoded_g, decoded_c = model.decode_g(z_g), model.decode_c(z_c)
    x_F = model.decode_x(F_g, F_c)
    x_z = model.decode_x(decoded_g, decoded_c)
    return FeatureBoundTerms(
        lhs=_l1(F_g, decoded_g) + _l1(F_c, decoded_c),
        middle=C * _l1(x_F, x_z),
        rhs=C * (_l1(x_F, x) + _l1(x_z, x)),
    )


# verify-math


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    statistic: float
    detail: str = ""

    def as_row(self) -> Tuple:
        return (self.name, "pass" if self.passed else "fail", self.statistic, self.detail)


def _check_laplace(rng: np.random.Generator, pairs: int = 1000) -> CheckResult:
    worst = 0.0

    for _ in range(pairs):
        x1, x2, mu = rng.normal(size=(3, 8))
        lhs = laplace_logprob(Tensor(x1), Tensor(mu)).item() - laplace_logprob(Tensor(x2), Tensor(mu)).item()
        rhs = np.abs(x2 - mu).sum() - np.abs(x1 - mu).sum()
        worst = max(worst, abs(lhs - rhs))

    return CheckResult("laplace_identity", worst <= 1e-9, worst, f"{pairs} pairs, max abs gap")


def _check_reverse_lipschitz(rng: np.random.Generator) -> List[CheckResult]:
    a, b = rng.normal(size=(2, 16))
    identity = check_reverse_lipschitz(lambda v: v, a, b)
    contraction = check_reverse_lipschitz(lambda v: 0.5 * v, a, b)
    return [
        CheckResult("reverse_lipschitz_identity", identity.holds and abs(identity.ratio - 1.0) < 1e-12, identity.ratio),
        CheckResult(
            "reverse_lipschitz_contraction",
            not contraction.holds and abs(contraction.ratio - 2.0) < 1e-12,
            contraction.ratio,
            "0.5 * identity must violate C = 1",
        ),
    ]


def _check_feature_bound(rng: np.random.Generator, tuples: int = 10_000) -> List[CheckResult]:
    toy = LinearGaussianToy.create(rng, mode=LinearGaussianToy.PERMUTATION)
    bound_violations = 0
    triangle_violations = 0
    worst = -np.inf

    for _ in range(tuples):
        x = rng.normal(size=toy.dim_g + toy.dim_c)
        F_g, F_c = rng.normal(size=toy.dim_g), rng.normal(size=toy.dim_c)
        z_g, z_c = rng.normal(size=toy.dim_g), rng.normal(size=toy.dim_c)
        terms = feature_bound_terms(toy, x, F_g, F_c, z_g, z_c)
        bound_violations += not terms.holds
        triangle_violations += not terms.triangle_step
        worst = max(worst, terms.lhs - terms.rhs)

    return [
        CheckResult("feature_bound", bound_violations == 0, float(bound_violations), f"{tuples} tuples, worst lhs-rhs {worst:.3g}"),
        CheckResult("feature_bound_triangle", triangle_violations == 0, float(triangle_violations), f"{tuples} tuples"),
    ]


def elbo_gap(model: LinearGaussianToy, draws: int, rng: np.random.Generator, n_samples: int = 1) -> MonteCarloEstimate:
    """
    explicit - implicit over independent data draws, both estimators fed the
    same posterior draws
    """

    gaps = []

    for _ in range(draws):
        x, F_g, F_c = model.sample_features(rng)
        seed = int(rng.integers(0, 2 ** 31))
        explicit = explicit_elbo_estimate(x, F_g, F_c, model, n_samples, np.random.default_rng(seed))
        implicit = implicit_elbo_estimate(x, F_g, F_c, model, n_samples, np.random.default_rng(seed))
        gaps.append(explicit.value - implicit.value)

    return _estimate(gaps)


def _check_elbo_ordering(rng: np.random.Generator, draws: int = 1000) -> CheckResult:
    toy = LinearGaussianToy.create(rng, mode=LinearGaussianToy.IDENTITY)
    gap = elbo_gap(toy, draws, rng)
    return CheckResult(
        "elbo_ordering",
        gap.value >= -3.0 * gap.stderr,
        gap.value,
        f"explicit - implicit over {draws} draws, stderr {gap.stderr:.3g}",
    )


def _check_gaussian_kl(rng: np.random.Generator, trials: int = 20, samples: int = 100_000) -> CheckResult:
    worst = 0.0

    for _ in range(trials):
        mu = rng.normal(size=4)
        logvar = rng.normal(scale=0.5, size=4)
        std = np.exp(0.5 * logvar)
        z = mu + std * rng.standard_normal((samples, 4))
        log_q = -0.5 * (((z - mu) / std) ** 2 + logvar + k.LOG2PI).sum(axis=1)
        log_p = -0.5 * (z ** 2 + k.LOG2PI).sum(axis=1)
        diff = log_q - log_p
        closed = float(gaussian_kl_np(mu, logvar))
        zscore = abs(diff.mean() - closed) / (diff.std(ddof=1) / np.sqrt(samples))
        worst = max(worst, zscore)

    return CheckResult("gaussian_kl_mc", worst <= 3.0, worst, f"{trials} trials, max z-score")


def _check_quantize(rng: np.random.Generator, vectors: int = 1000) -> CheckResult:
    codebook = Codebook.create(rng, 64, 8)
    points = rng.normal(size=(vectors, 8)) / np.sqrt(8)
    fast = codebook.nearest(points)
    brute = np.array([np.argmin(((codebook.embeddings - p) ** 2).sum(axis=1)) for p in points])
    mismatches = int((fast != brute).sum())
    return CheckResult("vq_nearest", mismatches == 0, float(mismatches), f"{vectors} vectors vs brute force")


def run_math_checks(seed: int = 0) -> List[CheckResult]:
    """every numerical check, 64-bit"""

    log = _LOGGER.bind(seed=seed)
    results: List[CheckResult] = []

    with precision("float64"):
        results.append(_check_laplace(util.rng_stream(seed, "verify.laplace")))
        results.extend(_check_reverse_lipschitz(util.rng_stream(seed, "verify.lipschitz")))
        results.extend(_check_feature_bound(util.rng_stream(seed, "verify.feature_bound")))
        results.append(_check_elbo_ordering(util.rng_stream(seed, "verify.elbo")))
        results.append(_check_gaussian_kl(util.rng_stream(seed, "verify.kl")))
        results.append(_check_quantize(util.rng_stream(seed, "verify.vq")))

    for result in results:
        log.info("verify.check", check=result.name, passed=result.passed, statistic=result.statistic)

    return results
