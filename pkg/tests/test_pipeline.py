import csv
import logging
import math
import os

import numpy as np
import pytest

from anysr.imaging import ImagePlanar, crop, save_image
from anysr.lfr import LevelGrid
from anysr.model import ModelConfig, build, load_checkpoint
from anysr.pipeline import (
    DatasetError,
    ScaleDataset,
    TrainConfig,
    TrainingDiverged,
    build_dataset,
    lattice_step,
    load_train_config,
    lr_at,
    sample_batch,
    step_rng,
    train,
)
from anysr.resample import resize
from toy_corpus import write_corpus


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("toy")
    train_dir, held = write_corpus(root, count=4)
    return train_dir


@pytest.fixture(scope="module")
def dataset(corpus, tmp_path_factory):
    return build_dataset(corpus, LevelGrid(11), 32, tmp_path_factory.mktemp("cache"))


def test_lr_schedule():
    assert lr_at(0) == 1e-4
    assert lr_at(199_999) == 1e-4
    assert lr_at(200_000) == 5e-5
    assert lr_at(450_000) == 2.5e-5
    assert lr_at(10, 1e-3, 5) == 2.5e-4
    with pytest.raises(ValueError):
        lr_at(-1)


def test_config_defaults_and_validation():
    paper = TrainConfig()
    assert (paper.batch_size, paper.patch_size, paper.initial_lr, paper.lr_half_period) == (16, 48, 1e-4, 200_000)
    desk = TrainConfig.desk()
    assert (desk.batch_size, desk.patch_size, desk.total_updates, desk.initial_lr) == (8, 32, 2000, 1e-4)
    assert desk.model == ModelConfig.desk()
    for bad in (dict(patch_size=7), dict(batch_size=0), dict(lr_half_period=0)):
        with pytest.raises(ValueError):
            TrainConfig(**bad)


def test_config_file(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("# desk run\nbatch_size = 4\ninitial_lr=2e-4\nchannels=8\nca_reduction=2\nsa_enabled=false\n")
    cfg = load_train_config(path)
    assert cfg.batch_size == 4 and cfg.initial_lr == 2e-4 and cfg.patch_size == 32
    assert cfg.model.channels == 8 and not cfg.model.sa_enabled and cfg.model.num_blocks == 2
    path.write_text("bogus=1\n")
    with pytest.raises(ValueError):
        load_train_config(path)
    path.write_text("no equals sign\n")
    with pytest.raises(ValueError):
        load_train_config(path)


def test_lattice_step():
    assert lattice_step(1.0) == (1, 1)
    assert lattice_step(1.1) == (10, 11)
    assert lattice_step(1.5) == (2, 3)
    assert lattice_step(2.0) == (1, 2)


def test_dataset_caches_one_set_per_scale(tmp_path, rng):
    save_image(ImagePlanar(rng.uniform(0, 1, (3, 40, 40))), tmp_path / "a.png")
    ds = build_dataset(tmp_path, LevelGrid(2), patch_size=8)
    assert sorted(os.listdir(tmp_path / "_lr_cache")) == ["x1.000000", "x2.000000"]
    assert ds.lr[0][0] == ds.hr[0]
    assert ds.lr[1][0].shape == (3, 20, 20)


def test_dataset_lr_size_rule(tmp_path, rng):
    save_image(ImagePlanar(rng.uniform(0, 1, (3, 53, 97))), tmp_path / "a.png")
    ds = build_dataset(tmp_path, LevelGrid(11), patch_size=8, cache_dir=tmp_path / "c")
    assert ds.lr[7][0].shape == (3, 31, 57)


def test_cache_is_byte_identical(corpus, tmp_path):
    build_dataset(corpus, LevelGrid(3), 32, tmp_path / "c1")
    build_dataset(corpus, LevelGrid(3), 32, tmp_path / "c2")
    for sub in os.listdir(tmp_path / "c1"):
        for name in os.listdir(tmp_path / "c1" / sub):
            assert (tmp_path / "c1" / sub / name).read_bytes() == (tmp_path / "c2" / sub / name).read_bytes()


def test_small_images_skipped(tmp_path, rng, caplog):
    save_image(ImagePlanar(rng.uniform(0, 1, (3, 20, 20))), tmp_path / "small.png")
    with caplog.at_level(logging.WARNING):
        with pytest.raises(DatasetError):
            build_dataset(tmp_path, LevelGrid(2), patch_size=8)
    assert "small.png" in caplog.text
    save_image(ImagePlanar(rng.uniform(0, 1, (3, 40, 40))), tmp_path / "big.png")
    assert build_dataset(tmp_path, LevelGrid(2), patch_size=8).names == ["big.png"]


def test_empty_directory(tmp_path):
    with pytest.raises(DatasetError):
        build_dataset(tmp_path, LevelGrid(2))


def test_sampling_is_deterministic(dataset):
    a = sample_batch(dataset, step_rng(5, 3), 4, 32)
    b = sample_batch(dataset, step_rng(5, 3), 4, 32)
    assert a.level == b.level and a.origins == b.origins
    assert all(p.input == q.input and p.target == q.target for p, q in zip(a.pairs, b.pairs))


def test_batch_is_single_scale_and_sized(dataset):
    for step in range(20):
        batch = sample_batch(dataset, step_rng(0, step), 3, 32)
        assert all(p.scale == batch.scale == dataset.grid.scales[batch.level] for p in batch.pairs)
        x, y = batch.arrays()
        assert x.shape == y.shape == (3, 3, 32, 32)


def test_input_patch_is_resized_lr_window(dataset):
    for step in range(30):
        batch = sample_batch(dataset, step_rng(1, step), 2, 32, with_augment=False)
        q, p = lattice_step(batch.scale)
        for pair, o in zip(batch.pairs, batch.origins):
            lr = dataset.lr[batch.level][o.image]
            span = o.window + 2 * o.margin
            up = resize(crop(lr, o.lr_x - o.margin, o.lr_y - o.margin, span, span), batch.scale)
            off = o.margin * p // q
            assert pair.input == crop(up, off, off, 32, 32)
            hr = dataset.hr[o.image]
            assert pair.target == crop(hr, o.lr_x * p // q, o.lr_y * p // q, 32, 32)


def test_level_zero_pairs_are_identity(dataset):
    for step in range(200):
        batch = sample_batch(dataset, step_rng(2, step), 2, 32)
        if batch.level == 0:
            assert all(p.input == p.target for p in batch.pairs)
            return
    pytest.fail("level 0 never drawn")


def test_patches_align_on_a_smooth_wave(tmp_path):
    # bicubic reproduces a slow wave closely, so a one-pixel misalignment
    # (mean error ~0.016) stands far above the interpolation error (~0.001)
    yy, xx = np.mgrid[0:160, 0:160].astype(float)
    wave = 0.5 + 0.35 * np.sin(2 * np.pi * xx / 40) * np.cos(2 * np.pi * yy / 48)
    save_image(ImagePlanar(np.stack([wave, wave[::-1], wave.T])), tmp_path / "wave.png")
    ds = build_dataset(tmp_path, LevelGrid(11), 32, tmp_path / "c")
    for step in range(40):
        batch = sample_batch(ds, step_rng(3, step), 2, 32)
        for pair in batch.pairs:
            assert np.abs(pair.input.data - pair.target.data).mean() < 4e-3


def test_level_frequencies_are_uniform(dataset):
    n, L = 10_000, 11
    counts = np.zeros(L)
    for step in range(n):
        counts[int(step_rng(11, step).integers(L))] += 1
    # the level draw in sample_batch is the generator's first call
    assert sample_batch(dataset, step_rng(11, 0), 1, 32).level == int(step_rng(11, 0).integers(L))
    p = 1 / L
    sigma = math.sqrt(n * p * (1 - p))
    assert np.all(np.abs(counts - n * p) <= 3 * sigma)


def test_patch_too_large(tmp_path, rng):
    save_image(ImagePlanar(rng.uniform(0, 1, (3, 40, 40))), tmp_path / "a.png")
    ds = build_dataset(tmp_path, LevelGrid(2), patch_size=8)
    with pytest.raises(DatasetError):
        sample_batch(ds, step_rng(0, 1), 1, 40)


def small_cfg(corpus, out_dir, **kw):
    base = dict(seed=42, dataset=corpus, out_dir=str(out_dir), batch_size=4, total_updates=50, initial_lr=5e-4)
    base.update(kw)
    return TrainConfig.desk(**base)


def read_log(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_training_reduces_loss(corpus, dataset, tmp_path):
    result = train(small_cfg(corpus, tmp_path), dataset)
    losses = [r[2] for r in result.rows]
    assert len(losses) == 50 and all(math.isfinite(l) for l in losses)
    assert np.mean(losses[-10:]) < np.mean(losses[:10])
    rows = read_log(result.log_path)
    assert rows[0] == ["step", "level", "loss", "lr"] and len(rows) == 51
    assert load_checkpoint(result.checkpoint).step == 50


def test_identical_seeds_identical_logs(corpus, dataset, tmp_path):
    a = train(small_cfg(corpus, tmp_path / "a", total_updates=8), dataset)
    b = train(small_cfg(corpus, tmp_path / "b", total_updates=8), dataset)
    assert open(a.log_path, "rb").read() == open(b.log_path, "rb").read()
    c = train(small_cfg(corpus, tmp_path / "c", total_updates=8, seed=43), dataset)
    assert open(a.log_path, "rb").read() != open(c.log_path, "rb").read()


def test_resume_is_bitwise(corpus, dataset, tmp_path):
    full = train(small_cfg(corpus, tmp_path / "full", total_updates=12, checkpoint_every=6), dataset)
    resumed = train(
        small_cfg(corpus, tmp_path / "resumed", total_updates=12),
        dataset,
        resume=tmp_path / "full" / "step_0000006.ck",
    )
    assert resumed.rows == full.rows[6:]
    for p, q in zip(full.model.parameters().values(), resumed.model.parameters().values()):
        assert p.value.tobytes() == q.value.tobytes()
        assert p.v.tobytes() == q.v.tobytes()
    # resuming into the original directory rewrites the log tail identically
    before = open(full.log_path, "rb").read()
    train(small_cfg(corpus, tmp_path / "full", total_updates=12), dataset, resume=tmp_path / "full" / "step_0000006.ck")
    assert open(full.log_path, "rb").read() == before


def test_zero_updates_saves_initialization(tmp_path):
    cfg = TrainConfig.desk(total_updates=0, out_dir=str(tmp_path))
    result = train(cfg)
    init = build(cfg.model)
    for p, q in zip(init.parameters().values(), load_checkpoint(result.checkpoint).parameters().values()):
        assert p.value.tobytes() == q.value.tobytes()


def test_non_finite_loss_aborts(tmp_path, rng):
    bad = np.full((3, 64, 64), np.nan)
    ds = ScaleDataset(["bad.png"], [ImagePlanar(bad)], {0: [ImagePlanar(bad)], 1: [ImagePlanar(bad)]}, LevelGrid(2), "")
    cfg = TrainConfig.desk(total_updates=3, out_dir=str(tmp_path), batch_size=1, patch_size=8,
                           model=ModelConfig.desk(level_count=2))
    with pytest.raises(TrainingDiverged) as info:
        train(cfg, ds)
    assert info.value.step == 0
    rows = read_log(tmp_path / "train_log.csv")
    assert rows[-1][0] == "0" and rows[-1][2] == "nan"
