import logging

import numpy as np
import pytest
from scipy.special import expit

from quasirecon.colormap import (
    ColorMapConfig,
    EncodedImage,
    channel_curve,
    decode_image,
    decode_rgb,
    encode_grid,
    encode_height,
    false_color,
    injectivity_gap,
)
from quasirecon.grids import JointGrid
from quasirecon.wigner import NoisyStateParams, WignerGridConfig, fock_density, wigner_from_density

PRESETS = [ColorMapConfig.wigner(), ColorMapConfig.cher(), ColorMapConfig.cher_scaled(0.837)]


def reference_curve(zeta, z0):
    r = 2 * 1.148 * expit(25 * (zeta - (z0 - 0.12))) * expit(-5 * (zeta - (z0 + 0.45))) - 1
    g = 2 * np.exp(-((zeta - z0) ** 2) / 0.0392) - 1
    b = 2 * 1.148 * expit(-25 * (zeta - (z0 + 0.12))) * expit(5 * (zeta - (z0 - 0.45))) - 1
    return np.clip(np.stack([r, g, b], axis=-1), -1, 1)


def test_presets():
    w, c = ColorMapConfig.wigner(), ColorMapConfig.cher()
    assert w.zeta(-0.45) == pytest.approx(0) and w.zeta(0.45) == pytest.approx(1) and w.zeta0 == 0.5
    assert c.zeta(-0.01) == pytest.approx(0) and c.zeta(0.045) == pytest.approx(1) and c.zeta0 == pytest.approx(1 / 5.5)
    s = ColorMapConfig.cher_scaled(0.8)
    assert s.zeta(0.0) == pytest.approx(s.zeta0)
    assert s.z_range[1] >= 0.8
    with pytest.raises(ValueError):
        ColorMapConfig(0.5, 0.1, 0.0)


@pytest.mark.parametrize("cfg", PRESETS[:2])
def test_curve_matches_reference(cfg):
    zeta = np.linspace(0, 1, 1001)
    np.testing.assert_allclose(channel_curve(zeta, cfg.zeta0), reference_curve(zeta, cfg.zeta0), atol=1e-14)
    assert np.all(np.abs(channel_curve(zeta, cfg.zeta0)) <= 1)


def test_green_examples():
    cfg = ColorMapConfig.wigner()
    assert channel_curve(cfg.zeta0, cfg.zeta0)[1] == pytest.approx(1.0, abs=1e-15)
    assert channel_curve(cfg.zeta0 + 0.14, cfg.zeta0)[1] == pytest.approx(0.21306, abs=1e-5)
    assert channel_curve(50.0, cfg.zeta0)[0] == pytest.approx(-1.0, abs=1e-12)


def test_encode_saturates_out_of_range():
    cfg = ColorMapConfig.wigner()
    np.testing.assert_array_equal(encode_height(5.0, cfg), encode_height(0.45, cfg))
    np.testing.assert_array_equal(encode_height(-5.0, cfg), encode_height(-0.45, cfg))


@pytest.mark.parametrize("cfg", PRESETS)
def test_round_trip_scalar(cfg):
    assert abs(decode_rgb(encode_height(0.0, cfg), cfg)) <= 1e-3 * cfg.z_scale
    peak = cfg.zeta0 * cfg.z_scale - cfg.z_offset
    rgb = np.array([channel_curve(cfg.zeta0, cfg.zeta0)[0], 1.0, channel_curve(cfg.zeta0, cfg.zeta0)[2]])
    assert decode_rgb(rgb, cfg) == pytest.approx(peak, abs=1e-4 * cfg.z_scale)


@pytest.mark.parametrize("cfg", PRESETS)
def test_round_trip_dense(cfg):
    lo, hi = cfg.z_range
    z = np.linspace(lo, hi, 100001)
    assert np.max(np.abs(decode_rgb(encode_height(z, cfg), cfg) - z)) <= 1e-5 * cfg.z_scale


@pytest.mark.parametrize("cfg", PRESETS[:2])
def test_noisy_round_trip(cfg):
    rng = np.random.default_rng(3)
    lo, hi = cfg.z_range
    z = rng.uniform(lo, hi, 5000)
    z[:1000] = 0.0
    noisy = encode_height(z, cfg) + rng.uniform(-0.01, 0.01, (z.size, 3))
    assert np.max(np.abs(decode_rgb(noisy, cfg) - z)) <= 0.01 * (hi - lo)


def test_injectivity():
    for cfg in PRESETS[:2]:
        assert injectivity_gap(cfg) > 0.01


def test_zero_grid_is_uniform():
    cfg = ColorMapConfig.cher()
    img = encode_grid(JointGrid.square(-3, 3, np.zeros((16, 16))), cfg)
    ref = encode_height(0.0, cfg)
    for k in range(3):
        np.testing.assert_allclose(img.channels[k], ref[k], atol=1e-7)
    back = decode_image(img, cfg)
    assert np.max(np.abs(back.values)) <= 1e-3 * cfg.z_scale


def test_vacuum_positivity_lights_red():
    cfg = ColorMapConfig.wigner()
    W = wigner_from_density(fock_density(NoisyStateParams("coherent", 0.0), 20), WignerGridConfig(n_joint=257))
    img = encode_grid(W, cfg)
    np.testing.assert_allclose(np.moveaxis(img.channels, 0, -1), encode_height(W.values, cfg), atol=1e-7)
    # f_R turns down above zeta0 + 0.45, so R peaks on a ring; positivity shows as R dominating B
    contrast = img.channels[0] - img.channels[2]
    assert contrast[W.values > 0.1].min() > 0.5
    assert contrast[128, 128] > 1.0 and abs(contrast[0, 0]) < 1e-3


def test_negative_well_lights_blue():
    cfg = ColorMapConfig.wigner()
    axis = np.linspace(-3, 3, 64)
    X, Y = np.meshgrid(axis, axis, indexing="ij")
    well = -0.3 * np.exp(-((X - 1) ** 2 + Y**2) / 0.1)
    img = encode_grid(JointGrid(axis, axis, well), cfg)
    # negativity shows as B dominating R; the zero background is near-white
    contrast = img.channels[2] - img.channels[0]
    inside = well < -0.1
    outside = np.abs(well) < 1e-6
    assert contrast[inside].min() > 0.5
    assert np.abs(contrast[outside]).max() < 1e-3


@pytest.mark.parametrize("cfg", PRESETS[:2])
def test_random_grid_round_trip(cfg):
    rng = np.random.default_rng(1)
    lo, hi = cfg.z_range
    axis = np.linspace(-1, 1, 32)
    for _ in range(100):
        vals = rng.uniform(lo, hi, (32, 32))
        back = decode_image(encode_grid(JointGrid(axis, axis, vals), cfg), cfg, axis, axis)
        assert np.max(np.abs(back.values - vals)) <= 0.005 * cfg.z_scale
        assert back.meta["out_of_gamut_fraction"] == 0


def test_out_of_gamut_warning(caplog):
    cfg = ColorMapConfig.wigner()
    with caplog.at_level(logging.WARNING):
        decode_rgb(np.array([-1.0, -1.0, -1.0]), cfg)
    assert "colour curve" in caplog.text
    img = np.full((3, 4, 4), -1.0)
    assert decode_image(img, cfg).meta["out_of_gamut_fraction"] == 1.0


def test_encoded_image_shape_and_preview():
    with pytest.raises(ValueError):
        EncodedImage(np.zeros((3, 4, 5)))
    img = EncodedImage(np.stack([np.full((2, 2), -1.0), np.zeros((2, 2)), np.ones((2, 2))]))
    prev = false_color(img)
    assert prev.shape == (2, 2, 3) and prev.dtype == np.uint8
    assert tuple(prev[0, 0]) == (0, 128, 255)
