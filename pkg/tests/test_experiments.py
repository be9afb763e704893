# pylint:disable=redefined-outer-name

import os
import numpy as np
from pytest import fixture, mark
import dvae.errors as err
import dvae.const as k
import dvae.config as cfg
from dvae.data import SyntheticShapesSpec, synth_shapes, training_images
from dvae.evaluation import ablation_report, colour_histogram, histogram_kl, pairwise_baseline_kl
from dvae.geometry import edge_interior_ratio, structure_estimate
from dvae.pipeline import LOSSES_CSV, colour_transfer, recolour, train_stage1, train_stage2
from dvae.util import read_csv

SEEDS = (0, 1, 2)
MARGIN = 0.9

pytestmark = mark.slow


def _regularised(seed: int) -> cfg.TrainConfig:
    return cfg.TrainConfig().with_seed(seed)


def _unregularised(seed: int) -> cfg.TrainConfig:
    return cfg.apply(_regularised(seed), [("loss.w_F", "0")])


@fixture(scope="module")
def split():
    """desk-scale synthetic shapes: 32x32, 8 shape classes x 8 colours, 2000 images"""

    return training_images(cfg.TrainConfig())


@fixture(scope="module")
def paired(split):
    """both stages for w_F=2 and w_F=0 at every seed"""

    train, _ = split
    runs = {}

    for seed in SEEDS:
        for name, config in (("with", _regularised(seed)), ("without", _unregularised(seed))):
            runs[(name, seed)] = train_stage2(train_stage1(train, config, seed), train, seed)

    return runs


def test_regulariser_improves_colour_control(paired, split):
    _, test = split
    evaluation = cfg.TrainConfig().eval
    means = {"with": [], "without": [], "pairwise": []}

    for seed in SEEDS:
        rows = ablation_report(
            paired[("with", seed)],
            paired[("without", seed)],
            test[: evaluation.n_exemplars],
            evaluation.n_per_exemplar,
            np.random.default_rng(seed),
            n_pairs=evaluation.n_pairs,
        )
        means["with"].append(rows[0].mean_kl)
        means["without"].append(rows[1].mean_kl)
        means["pairwise"].append(rows[2].mean_kl)

    with_reg = float(np.mean(means["with"]))

    assert with_reg < MARGIN * float(np.mean(means["without"]))
    assert with_reg < MARGIN * float(np.mean(means["pairwise"]))


def test_colour_resampling_keeps_structure(paired, split):
    _, test = split
    ckpt = paired[("with", 0)]
    rng = np.random.default_rng(0)
    rgb_change, structure_change = [], []

    for image in test[:50]:
        outputs = recolour(ckpt, image, 8, rng)
        structures = structure_estimate(ckpt.model.geometry, outputs)
        rgb_change.append(np.abs(outputs[1:] - outputs[:1]).mean())
        structure_change.append(np.abs(structures[1:] - structures[:1]).mean())

    assert np.mean(structure_change) < 0.5 * np.mean(rgb_change)


def test_redual_transfer_beats_baseline(split):
    train, test = split
    config = cfg.apply(cfg.TrainConfig(), [("model.variant", k.VARIANT_REDUAL)])
    ckpt = train_stage1(train, config, seed=0)
    exemplars = np.roll(test, 1, axis=0)
    kls = [
        histogram_kl(colour_histogram(exemplar), colour_histogram(colour_transfer(ckpt, source, exemplar)))
        for source, exemplar in zip(test, exemplars)
    ]

    assert np.mean(kls) < pairwise_baseline_kl(test, 200, np.random.default_rng(0))


@fixture(scope="module")
def short_run(split, tmp_path_factory):
    """500 desk-scale steps on 16 training images, with the loss log"""

    train, _ = split
    out_dir = str(tmp_path_factory.mktemp("short"))
    ckpt = train_stage1(train[:16], cfg.TrainConfig(), seed=0, out_dir=out_dir, steps=500)
    return ckpt, read_csv(os.path.join(out_dir, LOSSES_CSV))


def test_reconstruction_halves(short_run):
    _, rows = short_run
    recon_z = np.array([float(row["recon_z"]) for row in rows])

    assert len(recon_z) == 500
    assert recon_z[-50:].mean() <= 0.5 * recon_z[0]


def test_trained_structure_sharpens_edges(short_run):
    ckpt, _ = short_run
    shapes = synth_shapes(SyntheticShapesSpec(size=32, count=100, seed=7))
    structures = structure_estimate(ckpt.model.geometry, shapes.images)
    ratios = []

    for structure, mask in zip(structures, shapes.masks):
        try:
            ratios.append(edge_interior_ratio(structure, mask))
        except err.ContractViolation:
            continue

    assert len(ratios) >= 50
    assert np.mean(ratios) > 1.0
