import math

import numpy as np
import pytest

import avatarforge as af


def test_metrics_on_arrays():
    a = np.full((16, 16, 3), 0.5)
    b = a + 1.0 / 255.0
    assert af.psnr(a, b) == pytest.approx(48.1308, abs=1e-4)
    assert math.isinf(af.psnr(a, a))
    assert af.ssim(a, a) == pytest.approx(1.0)


def test_bad_shape_raises():
    with pytest.raises(af.DimensionError):
        af.psnr(np.zeros((4, 4)), np.zeros((4, 4)))


def test_image_round_trip(tmp_path):
    img = np.random.default_rng(0).integers(0, 256, (8, 12, 3)) / 255.0
    af.save_image(img, tmp_path / "a.png")
    back = af.load_image(tmp_path / "a.png")
    assert back.shape == (8, 12, 3)
    np.testing.assert_allclose(back, img, atol=1e-12)


def test_color_match_moves_statistics():
    rng = np.random.default_rng(1)
    src = rng.uniform(0.2, 0.4, (16, 16, 3))
    tgt = rng.uniform(0.5, 0.9, (16, 16, 3))
    out = af.color_match(src, tgt)
    np.testing.assert_allclose(out.mean(axis=(0, 1)), tgt.mean(axis=(0, 1)), atol=1e-6)


def test_fixture_and_views(tmp_path):
    train, test = af.make_fixture(tmp_path / "data", views=5, resolution=24)
    assert (train, test) == (4, 1)
    views = af.load_views(tmp_path / "data", "test")
    assert views[0][1].shape == (24, 24, 3)


def test_pipeline_end_to_end(tmp_path):
    af.make_fixture(tmp_path / "data", views=5, resolution=24)
    lines = []
    report = af.run_pipeline(
        {"dataset": str(tmp_path / "data"), "out": str(tmp_path / "run"), "renderer": "gs", "gs_iterations": 30},
        log=lines.append,
    )
    assert len(report["rows"]) == 1
    assert any("stage train" in s for s in lines)
    assert af.load_report(tmp_path / "run" / "report.json") == report
    renders = af.render_views(tmp_path / "run" / "model" / "point_cloud.ply", tmp_path / "data")
    assert renders[0].shape == (24, 24, 3)
    assert af.gaussian_count(tmp_path / "run" / "model" / "point_cloud.ply") > 0


def test_unknown_config_key(tmp_path):
    with pytest.raises(af.SchemaError):
        af.run_pipeline({"dataset": str(tmp_path), "out": str(tmp_path / "o"), "bogus": 1})
