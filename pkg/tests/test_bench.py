import csv
import math
import shutil

import numpy as np
import pytest
from skimage.metrics import structural_similarity

from anysr.bench.evaluate import eval_bicubic, eval_model, evaluate, render, write_rows
from anysr.bench.metrics import IDENTICAL, EvalProtocol, MetricError, psnr, ssim, ssim_planes
from anysr.bench.studies import bench_strategies, default_strategies, density_study
from anysr.imaging import ImagePlanar, save_image
from anysr.lfr import LevelGrid, identity_predictor
from anysr.model import ModelConfig, build, save_checkpoint
from anysr.resample import degrade_pair, resize
from anysr.scheduler import execute, plan, plan_custom, plan_equal

RAW_RGB = EvalProtocol(channel="rgb", shave=0, quantize=False)


def img(data):
    return ImagePlanar(np.asarray(data, dtype=np.float64))


@pytest.fixture(scope="module")
def image_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("set")
    rng = np.random.default_rng(0)
    for i in range(3):
        # smooth content plus mild noise: a plausible natural-ish image
        yy, xx = np.mgrid[0:50, 0:60] / 10.0
        base = 0.5 + 0.3 * np.sin(xx * (1 + i) + yy) * np.cos(yy * 0.7)
        data = np.stack([base, base[::-1], base[:, ::-1]]) + rng.normal(0, 0.02, (3, 50, 60))
        save_image(ImagePlanar(np.clip(data, 0, 1)), d / f"im{i}.png")
    return d


def zero_model(**kw):
    model = build(ModelConfig.desk(**kw))
    for p in model.parameters().values():
        p.value[...] = 0
    return model


def test_psnr_identical_is_infinite(rng):
    a = img(rng.uniform(0, 1, (3, 8, 8)))
    assert psnr(a, a) == IDENTICAL == math.inf


def test_psnr_closed_forms():
    a = img(np.full((3, 20, 20), 100 / 255))
    b = img(np.full((3, 20, 20), 101 / 255))
    assert psnr(a, b, EvalProtocol(channel="rgb", shave=0)) == pytest.approx(20 * math.log10(255), abs=1e-5)
    c = img(np.full((3, 20, 20), 0.5))
    d = img(np.full((3, 20, 20), 0.6))
    assert psnr(c, d, RAW_RGB) == pytest.approx(20.0, abs=1e-5)


def test_psnr_decreases_with_noise(rng):
    a = img(rng.uniform(0.2, 0.8, (3, 32, 32)))
    noise = rng.uniform(-1, 1, a.shape)
    values = [psnr(a, img(a.data + amp * noise), RAW_RGB) for amp in (0.01, 0.02, 0.05, 0.1)]
    assert all(x > y for x, y in zip(values, values[1:]))


def test_ssim_identical_and_symmetric(rng):
    a = img(rng.uniform(0, 1, (3, 20, 20)))
    b = img(rng.uniform(0, 1, (3, 20, 20)))
    assert ssim(a, a) == pytest.approx(1.0, abs=1e-12)
    assert ssim(a, b) == ssim(b, a)
    assert -1 <= ssim(a, b) <= 1


def test_ssim_constant_closed_form():
    a, b = 0.3, 0.7
    c1 = 0.01**2
    expected = (2 * a * b + c1) / (a * a + b * b + c1)
    got = ssim(img(np.full((1, 16, 16), a)), img(np.full((1, 16, 16), b)), RAW_RGB)
    assert got == pytest.approx(expected, abs=1e-6)


def test_ssim_matches_scikit_image(rng):
    a = rng.uniform(0, 1, (24, 30))
    b = np.clip(a + rng.normal(0, 0.1, a.shape), 0, 1)
    ref = structural_similarity(
        a, b, data_range=1.0, gaussian_weights=True, sigma=1.5, use_sample_covariance=False
    )
    assert ssim_planes(a[None], b[None]) == pytest.approx(ref, abs=1e-9)


def test_metric_errors(rng):
    a = img(rng.uniform(0, 1, (3, 8, 8)))
    with pytest.raises(MetricError):
        psnr(a, img(rng.uniform(0, 1, (3, 8, 9))))
    with pytest.raises(MetricError):
        ssim(a, a, RAW_RGB)
    with pytest.raises(MetricError):
        EvalProtocol(channel="xyz")
    with pytest.raises(MetricError):
        EvalProtocol.named("nope")


def test_protocols():
    assert EvalProtocol.named("luma-shave").border(1.1) == 2
    assert EvalProtocol.named("luma-shave").border(3.0) == 3
    assert EvalProtocol.named("rgb-full").border(4.0) == 0


def test_eval_bicubic_matches_manual(image_dir):
    row = eval_bicubic(image_dir, 1.7)
    assert [s.name for s in row.per_image] == ["im0.png", "im1.png", "im2.png"]
    assert row.psnr == pytest.approx(np.mean([s.psnr for s in row.per_image]))
    from anysr.imaging import load_image, quantized

    lr, ref = degrade_pair(load_image(image_dir / "im1.png"), 1.7)
    manual = psnr(resize(quantized(lr), 1.7), ref, EvalProtocol(), 1.7)
    assert row.per_image[1].psnr == manual
    assert eval_bicubic(image_dir, 1.7).per_image == row.per_image


def test_eval_is_order_independent(image_dir, tmp_path):
    full = eval_bicubic(image_dir, 2.0)
    shutil.copy(image_dir / "im2.png", tmp_path / "im2.png")
    alone = eval_bicubic(tmp_path, 2.0)
    assert alone.per_image[0] == full.per_image[2]


def test_identity_model_equals_bicubic(image_dir):
    model = zero_model()
    for s in (1.3, 1.5, 2.0):
        assert eval_model(image_dir, s, model).per_image == eval_bicubic(image_dir, s).per_image


def test_on_grid_and_near_grid_agree(image_dir):
    model = build(ModelConfig.desk())
    a = eval_model(image_dir, 2.0, model).psnr
    b = eval_model(image_dir, 2.0 - 1e-12, model).psnr
    assert abs(a - b) < 1e-6


def test_recursive_path_above_two(image_dir):
    row = eval_model(image_dir, 3.0, build(ModelConfig.desk()))
    assert row.method == "recursive-model" and row.strategy == "2.000, 1.500"
    with pytest.raises(ValueError):
        eval_model(image_dir, 1.0, build(ModelConfig.desk()))


def test_write_rows(image_dir, tmp_path):
    rows = [eval_bicubic(image_dir, 2.0), eval_bicubic(image_dir, 1.5)]
    write_rows(rows, tmp_path / "r.csv")
    raw = (tmp_path / "r.csv").read_bytes()
    assert b"\r\n" not in raw
    parsed = list(csv.reader(raw.decode().splitlines()))
    assert parsed[0] == ["dataset", "scale", "method", "strategy", "images", "psnr", "ssim"]
    assert parsed[1][1] == "2" and float(parsed[1][5]) == pytest.approx(rows[0].psnr, abs=1e-4)


def test_default_strategies():
    labels = [p.steps for p in default_strategies(3)]
    assert labels[0] == (2.0, 1.5) and (1.5, 2.0) in labels
    assert plan_equal(3, 2).steps in labels and plan_equal(3, 3).steps in labels
    assert all(len(p) >= 1 for p in default_strategies(1.5))


def test_strategies_with_identity_predictor_equal_direct_chains(image_dir):
    strategies = [plan_custom(3, [1.732, 1.732]), plan_custom(3, [1.5, 2.0]), plan(3)]
    rows = bench_strategies(image_dir, 3, identity_predictor, strategies, level_count=11)
    assert [r.psnr for r in rows] == sorted((r.psnr for r in rows), reverse=True)
    grid = LevelGrid(11)
    for row in rows:
        s = next(p for p in strategies if p.label() == row.strategy)
        direct = evaluate(
            image_dir, 3, lambda lr, size: execute(s, lr, identity_predictor, grid, out_size=size), "x"
        )
        assert direct.per_image == row.per_image


def test_bench_strategies_rejects_wrong_target(image_dir):
    with pytest.raises(ValueError):
        bench_strategies(image_dir, 3, identity_predictor, [plan(4)], level_count=11)


def test_density_study_outputs(image_dir, tmp_path):
    path = tmp_path / "m.ck"
    save_checkpoint(build(ModelConfig.desk()), path)
    scales = [1.42, 1.44, 1.46, 1.48]
    points = density_study(image_dir, {5: path, 9: path, 17: path}, scales, out_csv=tmp_path / "d.csv", out_svg=tmp_path / "d.svg")
    rows = list(csv.reader(open(tmp_path / "d.csv")))
    assert rows[0] == ["L", "scale", "psnr"] and len(rows) == 1 + 3 * len(scales)
    curves = {L: [p.psnr for p in points if p.level_count == L] for L in (5, 9, 17)}
    assert curves[5] == curves[9] == curves[17]
    assert all(abs(a - b) < 1.0 for a, b in zip(curves[5], curves[5][1:]))
    svg = (tmp_path / "d.svg").read_text()
    assert svg.lstrip().startswith("<?xml") and "<svg" in svg


def test_density_study_missing_checkpoint(image_dir, tmp_path):
    with pytest.raises(Exception):
        density_study(image_dir, {5: tmp_path / "none.ck"}, [1.5])
    with pytest.raises(ValueError):
        density_study(image_dir, {}, [1.5])


def test_render_dispatch(rng):
    lr = ImagePlanar(rng.uniform(0, 1, (3, 10, 10)))
    grid = LevelGrid(11)
    assert render(lr, 1.5, identity_predictor, grid) == resize(lr, 1.5)
    assert render(lr, 3.0, identity_predictor, grid) == resize(resize(lr, 2.0), 1.5)
    assert render(lr, 1.5, identity_predictor, grid, strategy=plan(1.5)).shape == (3, 15, 15)
