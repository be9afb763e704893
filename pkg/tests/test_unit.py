# pylint:disable=redefined-outer-name

import os
import numpy as np
from PIL import Image as PILImage
from pytest import fixture, mark, raises
from scipy.stats import chi2_contingency
import dvae.errors as err
import dvae.const as k
import dvae.config as cfg
import dvae.util as util
import dvae.storage as store
from dvae.autodiff import Conv2d, Tensor, Tape, ops, precision, grad_check
from dvae.latents import Codebook, lookup, quantize, gaussian_kl, gaussian_kl_np, reparameterize
from dvae.objective import (
    LinearGaussianToy,
    LipschitzConfig,
    check_reverse_lipschitz,
    combine,
    elbo_gap,
    explicit_elbo_estimate,
    feature_bound_terms,
    implicit_elbo_estimate,
    laplace_logprob,
    recon_l1,
    run_math_checks,
)
from dvae.data import SyntheticShapesSpec, load_dataset, split_indices, synth_shapes, PALETTE
from dvae.imaging import grid, read_png, structure_to_gray
from dvae.evaluation import (
    _sqrtm_checked,
    colour_histogram,
    frechet_distance,
    frechet_proxy,
    gaussian_stats,
    histogram_kl,
    pairwise_baseline_kl,
)


@fixture
def rng():
    """seeded generator"""

    return np.random.default_rng(1234)


@fixture
def toy(rng):
    """permuted, offset linear gaussian model"""

    return LinearGaussianToy.create(rng, mode=LinearGaussianToy.PERMUTATION)


def _weighted(op):
    """scalarise an op by a fixed random weighting so no gradient is trivially zero"""

    def f(*xs):
        out = op(*xs)
        weights = np.random.default_rng(7).normal(size=out.shape)
        return ops.sum(ops.mul(out, Tensor.wrap(weights)))

    return f


def _leaves(rng, *shapes):
    return [Tensor(rng.normal(size=shape), requires_grad=True) for shape in shapes]


PRIMITIVES = [
    ("exp", ops.exp, [(3, 4)]),
    ("square", ops.square, [(3, 4)]),
    ("abs", ops.abs, [(3, 4)]),
    ("leaky_relu", ops.leaky_relu, [(3, 4)]),
    ("sigmoid", ops.sigmoid, [(3, 4)]),
    ("tanh", ops.tanh, [(3, 4)]),
    ("mul", ops.mul, [(3, 4), (1, 4)]),
    ("sub", ops.sub, [(3, 4), (3, 4)]),
    ("mean", lambda x: ops.mean(x, axis=1), [(3, 4)]),
    ("l1_norm", lambda x: ops.l1_norm(x, axis=(1, 2)), [(2, 3, 4)]),
    ("sq_l2_norm", lambda x: ops.sq_l2_norm(x, axis=-1), [(2, 3, 4)]),
    ("transpose", lambda x: ops.transpose(x, (0, 2, 1)), [(2, 3, 4)]),
    ("concat", lambda a, b: ops.concat([a, b], axis=1), [(2, 3, 2, 2), (2, 1, 2, 2)]),
    ("broadcast_spatial", lambda v: ops.broadcast_spatial(v, 3, 2), [(2, 3)]),
    ("spatial_mean", ops.spatial_mean, [(2, 3, 4, 4)]),
    ("channel_mean", ops.channel_mean, [(2, 3, 4, 4)]),
    ("upsample_nearest2x", ops.upsample_nearest2x, [(1, 2, 3, 3)]),
    ("avg_pool2x", ops.avg_pool2x, [(1, 2, 4, 4)]),
    ("matmul", ops.matmul, [(2, 3, 4), (4, 5)]),
    ("linear", ops.linear, [(2, 3, 4), (4, 5), (5,)]),
    ("softmax", ops.softmax, [(3, 5)]),
    ("layer_norm", lambda x, g, b: ops.layer_norm(x, g, b, axis=1), [(2, 5, 3, 3), (5,), (5,)]),
    ("conv2d_reflect", lambda x, w, b: ops.conv2d(x, w, b), [(2, 3, 5, 5), (4, 3, 3, 3), (4,)]),
    ("conv2d_zero_stride2", lambda x, w: ops.conv2d(x, w, stride=2, padding="zero"), [(1, 2, 6, 6), (3, 2, 3, 3)]),
    ("embedding", lambda t: ops.embedding(t, np.array([[0, 3], [3, 1]])), [(5, 3)]),
]


@mark.parametrize("seed", range(5))
@mark.parametrize("name,op,shapes", PRIMITIVES, ids=[p[0] for p in PRIMITIVES])
def test_primitive_gradients(name, op, shapes, seed):
    with precision("float64"):
        result = grad_check(_weighted(op), _leaves(np.random.default_rng(seed), *shapes))

    assert result.n_checked > 0, name
    assert result.passed(1e-5), (name, result.max_rel_error)


def test_cross_entropy_gradient(rng):
    targets = np.array([[1, 4, 0], [2, 2, 3]])

    with precision("float64"):
        result = grad_check(lambda x: ops.softmax_cross_entropy(x, targets), _leaves(rng, (2, 3, 5)))

    assert result.passed(1e-5)


def test_straight_through_gradient_is_identity(rng):
    with precision("float64"):
        codebook = Codebook.create(rng, 8, 4)
        pre = Tensor(rng.normal(size=(2, 4, 3, 3)), requires_grad=True)

        with codebook.frozen_assignment():
            result = grad_check(_weighted(lambda x: quantize(x, codebook)[1]), pre)

        pre.grad = None

        with Tape() as tape:
            _, z_q, _ = quantize(pre, codebook)
            loss = ops.sum(z_q)

        tape.backward(loss)

    assert result.passed(1e-6)
    assert np.array_equal(pre.grad, np.ones_like(pre.data))


def test_backward_runs_once():
    x = Tensor(np.ones(3), requires_grad=True)

    with Tape() as tape:
        loss = ops.sum(ops.square(x))

    tape.backward(loss)

    assert np.allclose(x.grad, 2.0)

    with raises(err.TapeError):
        tape.backward(loss)


def test_non_finite_raises():
    with raises(err.NumericFault):
        ops.exp(Tensor(np.array([1000.0]), dtype=np.float32))


def test_precision_scope():
    with precision("float64"):
        assert Tensor(1.0).dtype == np.float64

    assert Tensor(1.0).dtype == np.float32

    with raises(err.ContractViolation):
        with precision("int32"):
            pass


def test_conv2d_rejects_even_kernel():
    with raises(err.ContractViolation):
        ops.conv2d(Tensor(np.zeros((1, 1, 4, 4))), Tensor(np.zeros((1, 1, 2, 2))))


def test_conv2d_box_filter():
    image = np.array([[0.0, 3.0, 6.0], [3.0, 3.0, 3.0], [0.0, 0.0, 9.0]])

    with precision("float64"):
        out = ops.conv2d(Tensor(image[None, None]), Tensor(np.full((1, 1, 3, 3), 1.0 / 9.0)), padding="zero")

    assert out.shape == (1, 1, 3, 3)
    assert abs(out.data[0, 0, 1, 1] - 3.0) < 1e-12


def test_conv2d_identity_kernel(rng):
    x = rng.normal(size=(2, 3, 5, 5))

    with precision("float64"):
        single = ops.conv2d(Tensor(x[:, :1]), Tensor(np.ones((1, 1, 1, 1))))
        mixed = ops.conv2d(Tensor(x), Tensor(np.eye(3)[:, :, None, None]))

    assert np.array_equal(single.data, x[:, :1])
    assert np.allclose(mixed.data, x, rtol=0, atol=1e-12)


def test_conv2d_reflect_keeps_constant(rng):
    with precision("float64"):
        x = Tensor(np.full((1, 3, 6, 6), 0.37))
        out = ops.conv2d(x, Tensor(rng.normal(size=(4, 3, 3, 3))), Tensor(rng.normal(size=4)))

    assert out.data.std(axis=(2, 3)).max() < 1e-12


def test_layer_norm_values():
    with precision("float64"):
        gain, bias = Tensor(np.ones(2)), Tensor(np.zeros(2))
        constant = ops.layer_norm(Tensor(np.full((3, 2), 5.0)), gain, bias)
        spread = ops.layer_norm(Tensor(np.array([[-1.0, 1.0]])), gain, bias)

    assert np.all(constant.data == 0.0)
    assert np.allclose(spread.data, [[-1.0, 1.0]], atol=1e-4)


def test_upsample_then_pool_is_identity(rng):
    x = rng.normal(size=(2, 3, 4, 5))

    with precision("float64"):
        out = ops.avg_pool2x(ops.upsample_nearest2x(Tensor(x)))

    assert out.shape == x.shape
    assert np.allclose(out.data, x, rtol=0, atol=1e-12)


def test_channel_mean_value():
    with precision("float64"):
        out = ops.channel_mean(Tensor(np.array([0.2, 0.4, 0.6]).reshape(1, 3, 1, 1)))

    assert out.shape == (1, 1, 1, 1)
    assert abs(out.item() - 0.4) < 1e-12


def test_backward_of_sum_and_l1(rng):
    with precision("float64"):
        x = Tensor(rng.normal(size=(3, 4)), requires_grad=True)

        with Tape() as tape:
            loss = ops.sum(x)

        tape.backward(loss)
        ones = x.grad
        x.grad = None

        with Tape() as tape:
            loss = ops.l1_norm(x)

        tape.backward(loss)

    assert np.array_equal(ones, np.ones((3, 4)))
    assert np.array_equal(x.grad, np.sign(x.data))


def test_grad_check_reports_kinks():
    with precision("float64"):
        smooth = grad_check(lambda x: ops.sum(ops.square(x)), Tensor(np.array([3.0]), requires_grad=True))
        l1 = grad_check(ops.l1_norm, Tensor(np.array([0.0, 1.5, -2.0]), requires_grad=True))
        relu = grad_check(
            lambda x: ops.sum(ops.leaky_relu(x)), Tensor(np.array([0.0, 0.7]), requires_grad=True)
        )

    assert smooth.max_rel_error < 1e-8 and smooth.n_kinks == 0
    assert l1.n_kinks == 1 and l1.n_checked == 2
    assert l1.passed(1e-6)
    assert relu.n_kinks == 1

    with raises(err.ContractViolation):
        grad_check(ops.l1_norm, Tensor(np.ones(2), requires_grad=True), eps=1e-8)


def test_forward_is_deterministic(rng):
    conv = Conv2d(rng, 3, 4)
    x = rng.random((2, 3, 8, 8))

    assert np.array_equal(conv(Tensor(x)).data, conv(Tensor(x)).data)
    assert np.array_equal(ops.softmax(Tensor(x)).data, ops.softmax(Tensor(x)).data)


# latents


def test_nearest_matches_brute_force(rng):
    codebook = Codebook.create(rng, 32, 6)
    points = rng.normal(size=(1000, 6)) / np.sqrt(6)
    brute = np.array([np.argmin(((codebook.embeddings - p) ** 2).sum(axis=1)) for p in points])

    assert np.array_equal(codebook.nearest(points), brute)


def test_nearest_ties_go_low():
    embeddings = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    codebook = Codebook(embeddings=embeddings, ema_cluster_size=np.ones(3), ema_sum=embeddings.copy())

    assert codebook.nearest(np.array([[1.0, 0.0]]))[0] == 0


def test_ema_converges_to_cluster_mean(rng):
    with precision("float64"):
        codebook = Codebook.create(rng, 2, 3)

    pre_quant = rng.normal(loc=0.7, size=(1, 3, 8, 8))
    tokens = np.zeros((1, 8, 8), dtype=np.int64)
    target = pre_quant.transpose(0, 2, 3, 1).reshape(-1, 3).mean(axis=0)

    for _ in range(500):
        codebook.ema_update(tokens, pre_quant)

    assert np.abs(codebook.embeddings[0] - target).max() < 1e-3
    assert codebook.usage_histogram()[0] == 500 * 64
    assert codebook.usage_histogram()[1] == 0


def test_ema_without_memory(rng):
    with precision("float64"):
        codebook = Codebook.create(rng, 4, 3, decay=0.0)

    before = codebook.embeddings.copy()
    pre_quant = rng.normal(size=(1, 3, 4, 4))
    tokens = np.zeros((1, 4, 4), dtype=np.int64)
    tokens[0, 2:] = 1
    vectors = pre_quant.transpose(0, 2, 3, 1).reshape(16, 3)
    codebook.ema_update(tokens, pre_quant)

    assert np.allclose(codebook.embeddings[0], vectors[:8].mean(axis=0), atol=1e-4)
    assert np.allclose(codebook.embeddings[1], vectors[8:].mean(axis=0), atol=1e-4)
    assert np.array_equal(codebook.embeddings[2:], before[2:])
    assert np.all(np.isfinite(codebook.embeddings))


def test_quantize_exact_entry(rng):
    with precision("float64"):
        codebook = Codebook.create(rng, 16, 4)
        pre = Tensor(lookup(codebook, np.full((1, 2, 3), 7)))
        tokens, z_q, commit = quantize(pre, codebook)

    assert np.all(tokens == 7)
    assert commit.item() == 0.0
    assert np.array_equal(z_q.data, pre.data)


def test_quantize_is_idempotent(rng):
    with precision("float64"):
        codebook = Codebook.create(rng, 16, 4)
        tokens, z_q, commit = quantize(Tensor(rng.normal(size=(2, 4, 3, 3)) / 2.0), codebook)
        again, z_q_again, commit_again = quantize(Tensor(z_q.data), codebook)

    assert commit.item() > 0.0
    assert np.array_equal(again, tokens)
    assert np.array_equal(z_q_again.data, z_q.data)
    assert commit_again.item() == 0.0


def test_lookup_rejects_unknown_token(rng):
    codebook = Codebook.create(rng, 4, 2)

    with raises(err.ContractViolation):
        lookup(codebook, np.array([[[4]]]))


def test_quantize_contract(rng):
    codebook = Codebook.create(rng, 4, 2)

    with raises(err.ContractViolation):
        quantize(Tensor(np.zeros((1, 3, 2, 2))), codebook)


def test_gaussian_kl_zero_at_prior():
    with precision("float64"):
        kl = gaussian_kl(Tensor(np.zeros(5)), Tensor(np.zeros(5)))

    assert kl.item() == 0.0


def test_gaussian_kl_matches_closed_form(rng):
    mu, logvar = rng.normal(size=(2, 4, 6))

    with precision("float64"):
        kl = gaussian_kl(Tensor(mu), Tensor(logvar)).item()

    assert abs(kl - gaussian_kl_np(mu, logvar).mean()) < 1e-12
    assert np.all(gaussian_kl_np(mu, logvar) >= 0)


def test_gaussian_kl_unit_shift():
    with precision("float64"):
        kl = gaussian_kl(Tensor(np.ones(1)), Tensor(np.zeros(1)))

    assert abs(kl.item() - 0.5) < 1e-12


def test_reparameterize_shapes():
    with raises(err.ContractViolation):
        reparameterize(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))), np.zeros((2, 4)))


def test_reparameterize_values(rng):
    noise = rng.normal(size=(2, 3))

    with precision("float64"):
        mu = Tensor(rng.normal(size=(2, 3)))
        at_mean = reparameterize(mu, Tensor(rng.normal(size=(2, 3))), np.zeros((2, 3)))
        unit = reparameterize(mu, Tensor(np.zeros((2, 3))), noise)

    assert np.array_equal(at_mean.data, mu.data)
    assert np.allclose(unit.data, mu.data + noise, rtol=0, atol=1e-12)


def test_reparameterize_statistics(rng):
    n = 100_000
    mu = np.array([0.5, -1.0])
    logvar = np.array([0.0, np.log(4.0)])
    std = np.exp(0.5 * logvar)

    with precision("float64"):
        samples = reparameterize(
            Tensor(np.tile(mu, (n, 1))), Tensor(np.tile(logvar, (n, 1))), rng.standard_normal((n, 2))
        ).data

    assert np.all(np.abs(samples.mean(axis=0) - mu) < 3.0 * std / np.sqrt(n))
    assert np.all(np.abs(samples.std(axis=0, ddof=1) - std) < 3.0 * std / np.sqrt(2.0 * n))


# objective math


def test_laplace_identity(rng):
    with precision("float64"):
        for _ in range(1000):
            x1, x2, mu = rng.normal(size=(3, 10))
            lhs = laplace_logprob(Tensor(x1), Tensor(mu)).item() - laplace_logprob(Tensor(x2), Tensor(mu)).item()
            rhs = np.abs(x2 - mu).sum() - np.abs(x1 - mu).sum()

            assert abs(lhs - rhs) <= 1e-9


def test_reverse_lipschitz(rng):
    a, b = rng.normal(size=(2, 7))
    identity = check_reverse_lipschitz(lambda v: v, a, b)
    contraction = check_reverse_lipschitz(lambda v: 0.5 * v, a, b)

    assert identity.holds and abs(identity.ratio - 1.0) < 1e-12
    assert not contraction.holds and abs(contraction.ratio - 2.0) < 1e-12
    assert check_reverse_lipschitz(lambda v: 0.5 * v, a, b, C=2.0).holds


def test_reverse_lipschitz_degenerate(rng):
    a, b = rng.normal(size=(2, 4))

    assert check_reverse_lipschitz(lambda v: np.zeros_like(v), a, b).ratio == float("inf")
    assert check_reverse_lipschitz(lambda v: v, a, a).ratio == 0.0

    with raises(err.ContractViolation):
        LipschitzConfig(C=0.0)


def test_feature_bound_holds(toy: LinearGaussianToy, rng):
    for _ in range(1000):
        x = rng.normal(size=toy.dim_g + toy.dim_c)
        F_g, F_c = rng.normal(size=toy.dim_g), rng.normal(size=toy.dim_c)
        z_g, z_c = rng.normal(size=toy.dim_g), rng.normal(size=toy.dim_c)
        terms = feature_bound_terms(toy, x, F_g, F_c, z_g, z_c)

        assert terms.reverse_lipschitz_step
        assert terms.triangle_step
        assert terms.holds


def test_implicit_elbo_below_explicit(rng):
    toy = LinearGaussianToy.create(rng, mode=LinearGaussianToy.IDENTITY)
    gap = elbo_gap(toy, 1000, rng)

    assert gap.value >= -3.0 * gap.stderr
    assert gap.n_samples == 1000


def test_deterministic_elbo_has_no_spread(toy: LinearGaussianToy, rng):
    toy.deterministic = True
    x, F_g, F_c = toy.sample_features(rng)
    explicit = explicit_elbo_estimate(x, F_g, F_c, toy, 4, rng)
    implicit = implicit_elbo_estimate(x, F_g, F_c, toy, 4, rng)

    assert explicit.stderr == 0.0
    assert implicit.stderr == 0.0
    assert implicit.value <= explicit.value + 1e-12

    with raises(err.ContractViolation):
        explicit_elbo_estimate(x, F_g, F_c, toy, 0, rng)


def test_zero_reconstruction_leaves_kl(toy: LinearGaussianToy, rng):
    toy.deterministic = True
    _, F_g, F_c = toy.sample_features(rng)
    x = toy.decode_x(F_g, F_c)
    kl = toy.posterior(x, F_g, F_c, rng).kl
    explicit = explicit_elbo_estimate(x, F_g, F_c, toy, 2, rng)
    implicit = implicit_elbo_estimate(x, F_g, F_c, toy, 2, rng)

    assert abs(explicit.value + kl) < 1e-9
    assert abs(implicit.value + kl) < 1e-9


@mark.parametrize("estimator", [explicit_elbo_estimate, implicit_elbo_estimate])
def test_elbo_variance_shrinks_with_samples(toy: LinearGaussianToy, rng, estimator):
    x, F_g, F_c = toy.sample_features(rng)
    spread = [np.var([estimator(x, F_g, F_c, toy, n, rng).value for _ in range(300)]) for n in (1, 4, 16)]

    assert spread[0] > 0
    assert 2.0 < spread[0] / spread[1] < 8.0
    assert 2.0 < spread[1] / spread[2] < 8.0


def test_degenerate_loss_is_zero(rng):
    with precision("float64"):
        x = Tensor(rng.random((2, 3, 4, 4)))
        codebook = Codebook.create(rng, 8, 4)
        _, _, commit = quantize(Tensor(lookup(codebook, np.full((2, 2, 2), 3))), codebook)
        zeros = Tensor(np.zeros((2, 5)))
        breakdown = combine(
            recon_l1(x, x), recon_l1(x, Tensor(x.data.copy())), commit, gaussian_kl(zeros, zeros), (2.0, 1.0, 1.0, 1.0)
        )

    assert breakdown.as_row(1) == (1, 0.0, 0.0, 0.0, 0.0, 0.0)

    with raises(err.NumericFault):
        combine(recon_l1(x, x), ops.const(np.nan), commit, gaussian_kl(zeros, zeros), (2.0, 1.0, 1.0, 1.0))


def test_math_checks_pass():
    results = run_math_checks(seed=0)
    by_name = {r.name: r for r in results}

    assert set(by_name) >= {"laplace_identity", "feature_bound", "elbo_ordering", "vq_nearest", "gaussian_kl_mc"}
    assert all(r.passed for r in results), [r.as_row() for r in results if not r.passed]
    assert by_name["gaussian_kl_mc"].statistic <= 3.0


# config


def test_config_round_trip():
    config = cfg.apply(
        cfg.TrainConfig(),
        cfg.parse_overrides(["model.widths=8,16", "model.image_size=16", "loss.w_F=0.0", "eval.symmetric=true"]),
    )

    assert cfg.parse(cfg.dumps(config)) == config
    assert config.model.widths == (8, 16)
    assert config.eval.symmetric is True


def test_config_comments_and_blanks():
    config = cfg.parse("# run\n\nmodel.f = 4  # smaller grid\noptim.lr = 0.001\n")

    assert config.model.f == 4
    assert config.optim.lr == 0.001


@mark.parametrize(
    "override",
    ["model.nope=1", "nope.f=4", "model.f=3", "model.image_size=30", "model.f=abc", "model.variant=gan", "flat=1"],
)
def test_config_rejects(override):
    with raises(err.ConfigError):
        cfg.apply(cfg.TrainConfig(), cfg.parse_overrides([override]))


def test_config_geometry():
    model = cfg.ModelConfig(image_size=32, f=8, widths=(4, 8))

    assert model.levels == 3
    assert model.grid == 4
    assert model.width(3) == 8
    assert model.level_size(2) == 8


# storage


def test_record_encode_decode():
    record = store.Record(name="param/w", payload=b"hello " * 100)

    for compression in (None, store.Compression()):
        decoded = list(store.scan(record.encode(compression)))

        assert len(decoded) == 1
        assert decoded[0].name == record.name
        assert decoded[0].payload == record.payload


def test_bundle_round_trip(tmp_path):
    path = str(tmp_path / "a.dvae")
    arrays = {
        "param/w": np.arange(24, dtype=np.float32).reshape(2, 3, 4),
        "step": np.asarray([7], dtype=np.int64),
        "scalar": np.asarray(1.5, dtype=np.float32),
    }
    store.write_bundle(path, "model.f = 4\n", arrays)
    text, loaded = store.read_bundle(path)

    assert text == "model.f = 4\n"
    assert set(loaded) == set(arrays)

    for name, value in arrays.items():
        assert loaded[name].dtype == value.dtype
        assert np.array_equal(loaded[name], value)

    assert not os.path.exists(path + ".tmp")


def test_bundle_checksum(tmp_path):
    path = str(tmp_path / "a.dvae")
    store.write_bundle(path, "", {"w": np.ones(4, dtype=np.float32)}, compression=store.Compression(None))

    with open(path, "rb") as handle:
        data = bytearray(handle.read())

    data[-1] ^= 0x01

    with open(path, "wb") as handle:
        handle.write(bytes(data))

    with raises(err.ChecksumMismatch):
        store.read_bundle(path)


def test_bundle_version_and_magic(tmp_path):
    path = str(tmp_path / "a.dvae")
    store.write_bundle(path, "", {})

    with open(path, "rb") as handle:
        data = bytearray(handle.read())

    data[len(k.MAGIC)] = k.FORMAT_VERSION + 1

    with open(path, "wb") as handle:
        handle.write(bytes(data))

    with raises(err.VersionMismatch):
        store.read_bundle(path)

    with open(path, "wb") as handle:
        handle.write(b"NOPE" + bytes(data[4:]))

    with raises(err.CheckpointError):
        store.read_bundle(path)


# data


def test_rng_streams_are_independent():
    a = util.rng_stream(3, "data").random(4)

    assert np.array_equal(a, util.rng_stream(3, "data").random(4))
    assert not np.array_equal(a, util.rng_stream(3, "noise").random(4))
    assert not np.array_equal(a, util.rng_stream(4, "data").random(4))


@mark.parametrize("n,n_test", [(100, 5), (2, 1), (3, 1), (1, 0)])
def test_split_sizes(n, n_test):
    train, test = split_indices(n, split_seed=5)

    assert len(test) == n_test
    assert len(train) + len(test) == n
    assert not set(train) & set(test)
    assert np.array_equal(split_indices(n, split_seed=5)[1], test)


def test_synth_shapes_reproducible():
    spec = SyntheticShapesSpec(size=16, count=50, seed=3)

    assert np.array_equal(synth_shapes(spec).images, synth_shapes(spec).images)


def test_synth_shapes_flat_colours():
    data = synth_shapes(SyntheticShapesSpec(size=16, count=40, seed=1))

    for image, mask, colour in zip(data.images, data.masks, data.colour_labels):
        assert mask.any()
        assert np.all(image[mask] == np.asarray(PALETTE[colour], dtype=np.float32))


def test_synth_shapes_factors_independent():
    spec = SyntheticShapesSpec(size=16, count=1000, seed=2)
    data = synth_shapes(spec)
    table = np.zeros((spec.n_shape_classes, len(spec.palette)))
    np.add.at(table, (data.shape_labels, data.colour_labels), 1)
    _, p_value, _, _ = chi2_contingency(table)

    assert p_value > 0.01


def test_read_png_sixteen_bit(tmp_path):
    path = str(tmp_path / "wide.png")
    wide = np.full((4, 4), 0x8040, dtype=np.uint16)
    PILImage.fromarray(wide).save(path)
    image = read_png(path)

    assert image.shape == (4, 4, 3)
    assert np.allclose(image, 0x80 / 255.0)


def test_read_png_gray_resized(tmp_path):
    path = str(tmp_path / "gray.png")
    PILImage.fromarray(np.full((10, 10), 51, dtype=np.uint8)).save(path)
    image = read_png(path, size=4)

    assert image.shape == (4, 4, 3)
    assert np.allclose(image, 51 / 255.0)


def test_load_dataset_skips_bad_files(tmp_path):
    for i in range(3):
        PILImage.fromarray(np.full((8, 8, 3), 40 * i, dtype=np.uint8)).save(str(tmp_path / f"{i}.png"))

    (tmp_path / "nested").mkdir()
    PILImage.fromarray(np.zeros((8, 8, 3), dtype=np.uint8)).save(str(tmp_path / "nested" / "n.png"))
    (tmp_path / "broken.png").write_bytes(b"not a png")
    train, test = load_dataset(str(tmp_path), 8)

    assert len(train) + len(test) == 4
    assert len(test) == 1


def test_load_dataset_empty(tmp_path):
    with raises(err.DatasetError):
        load_dataset(str(tmp_path), 8)


def test_grid_layout():
    tiles = [np.full((2, 2, 3), v, dtype=np.float32) for v in (0.0, 0.5, 1.0)]
    canvas = grid(tiles, rows=2, cols=2, pad=1)

    assert canvas.shape == (7, 7, 3)
    assert np.all(canvas[1:3, 4:6] == 0.5)
    assert np.all(canvas[4:6, 1:3] == 1.0)

    with raises(err.ContractViolation):
        grid(tiles, rows=1, cols=2)


def test_structure_to_gray():
    gray = structure_to_gray(np.array([[1.0, 3.0], [2.0, 5.0]]))

    assert gray.min() == 0.0 and gray.max() == 1.0
    assert np.all(structure_to_gray(np.ones((3, 3))) == 0.0)


# eval


def _solid(colour, size=8):
    return np.broadcast_to(np.asarray(colour, dtype=np.float32), (size, size, 3)).copy()


def test_histogram_normalised(rng):
    hist = colour_histogram(rng.random((8, 8, 3)))

    assert abs(hist.bins.sum() - 1.0) < 1e-12
    assert hist.bins.shape == (k.HIST_BINS, k.HIST_BINS)
    assert hist.bins.min() > 0


def test_histogram_invariances(rng):
    image = rng.random((8, 8, 3))
    hist = colour_histogram(image)
    shuffled = image.reshape(-1, 3)[rng.permutation(64)].reshape(8, 8, 3)

    assert np.allclose(hist.bins, colour_histogram(np.rot90(image)).bins)
    assert np.allclose(hist.bins, colour_histogram(shuffled).bins)


def test_histogram_solid_colour():
    bins = np.sort(colour_histogram(_solid((0.8, 0.5, 0.2))).flat)
    cells = k.HIST_BINS * k.HIST_BINS

    assert abs(bins[-1] - (1.0 - (cells - 1) * k.HIST_FLOOR)) < 1e-12
    assert np.allclose(bins[:-1], k.HIST_FLOOR, rtol=1e-9, atol=0)


def test_histogram_two_colours():
    image = _solid((1.0, 0.0, 0.0))
    image[:4] = (0.0, 0.0, 1.0)
    bins = np.sort(colour_histogram(image).flat)

    assert abs(bins[-1] - bins[-2]) < 1e-12
    assert bins[-2] > 100 * bins[-3]


def test_histogram_all_black():
    hist = colour_histogram(np.zeros((4, 4, 3)))

    assert abs(hist.bins.sum() - 1.0) < 1e-12


def test_histogram_kl(rng):
    red, blue = colour_histogram(_solid((0.9, 0.1, 0.1))), colour_histogram(_solid((0.1, 0.1, 0.9)))
    p, q = colour_histogram(rng.random((8, 8, 3))), colour_histogram(rng.random((8, 8, 3)))
    direct = sum(a * np.log(a / b) for a, b in zip(p.flat, q.flat))

    assert histogram_kl(red, red) == 0.0
    assert histogram_kl(red, blue) > 0.0
    assert abs(histogram_kl(p, q) - direct) < 1e-9
    assert abs(histogram_kl(p, q, symmetric=True) - 0.5 * (histogram_kl(p, q) + histogram_kl(q, p))) < 1e-12


def test_pairwise_baseline(rng):
    same = np.stack([_solid((0.2, 0.6, 0.3))] * 4)
    mixed = np.stack([_solid((0.9, 0.1, 0.1)), _solid((0.1, 0.9, 0.1)), _solid((0.1, 0.1, 0.9))])

    assert pairwise_baseline_kl(same, 20, rng) == 0.0
    assert pairwise_baseline_kl(mixed, 20, rng) > 0.0

    with raises(err.ContractViolation):
        pairwise_baseline_kl(same[:1], 5, rng)


def test_frechet_closed_form():
    assert abs(frechet_distance(np.array([0.0]), np.array([[1.0]]), np.array([1.0]), np.array([[4.0]])) - 2.0) < 1e-9


def test_frechet_from_gaussian_samples(rng):
    n = 100_000
    a, b = rng.normal(0.0, 1.0, size=(n, 1)), rng.normal(1.0, 2.0, size=(n, 1))
    distance = frechet_distance(*gaussian_stats(a), *gaussian_stats(b))

    assert abs(distance - 2.0) < 0.1


def test_sqrtm_reconstructs_product(rng):
    a, b = rng.normal(size=(2, 40, 4))
    product = np.cov(a, rowvar=False) @ np.cov(b, rowvar=False)
    root = _sqrtm_checked(product)

    assert root is not None
    assert np.linalg.norm(root @ root - product) / np.linalg.norm(product) <= 1e-4


def test_frechet_symmetric(rng):
    a, b = rng.normal(size=(50, 3)), rng.normal(loc=0.5, scale=2.0, size=(50, 3))
    stats_a = (a.mean(axis=0), np.cov(a, rowvar=False))
    stats_b = (b.mean(axis=0), np.cov(b, rowvar=False))
    forward = frechet_distance(*stats_a, *stats_b)

    assert forward > 0
    assert abs(forward - frechet_distance(*stats_b, *stats_a)) < 1e-8


def test_frechet_proxy_identical_sets(rng):
    images = rng.random((12, 16, 16, 3))

    assert frechet_proxy(images, images, extractor_seed=0) <= 1e-6
    assert frechet_proxy(images, images[::-1], extractor_seed=0) <= 1e-6
