import numpy as np
import pytest

from quasirecon.colormap import ColorMapConfig, encode_grid
from quasirecon.grids import JointGrid, Marginal, uniform_axis
from quasirecon.synth import GaussianComponent, SyntheticSample, analytic_marginals, cher_preset, eval_joint, sample_params
from quasirecon.verification import (
    MetricError,
    gt_deficient_verify,
    joint_marginals,
    l1_marginal,
    l2_image,
    negativity_volume,
)
from quasirecon.wigner import NoisyStateParams, fock_density, wigner_from_density

SO = cher_preset("cher-superohmic")
CMAP = ColorMapConfig.cher_scaled(SO.z_max)


def test_l2_identical_is_zero():
    a = np.random.default_rng(0).uniform(-1, 1, (3, 8, 8))
    assert l2_image(a, a) == 0.0


def test_l2_uniform_offset():
    a = np.zeros((3, 256, 256))
    assert l2_image(a, a + 1) == pytest.approx(np.sqrt(196608) / 196608, abs=1e-9)
    assert l2_image(a, a + 1) == pytest.approx(2.2552744890e-3, abs=1e-9)


def test_l2_shape_mismatch():
    with pytest.raises(MetricError):
        l2_image(np.zeros((3, 4, 4)), np.zeros((3, 8, 8)))


def test_l1_identical_is_zero():
    q = uniform_axis(-3, 3, 721)
    m = Marginal("x1", q, np.exp(-q * q))
    assert l1_marginal(m, m) == 0.0


def test_l1_one_step_shift_is_total_variation():
    q = uniform_axis(-3, 3, 721)
    g = np.exp(-q * q / 0.5)
    shifted = np.r_[g[1:], g[-1]]
    expected = np.sum(np.abs(np.diff(g))) / 721
    assert l1_marginal(Marginal("x1", q, g), Marginal("x1", q, shifted)) == pytest.approx(expected, rel=1e-12)
    assert expected > 0


def test_l1_grid_mismatch():
    q = uniform_axis(-3, 3, 721)
    with pytest.raises(MetricError):
        l1_marginal(Marginal("x1", q, q * 0), Marginal("x1", q * 1.01, q * 0))


def test_negativity_nonnegative_grid_is_zero():
    axis = uniform_axis(-3, 3, 32)
    assert negativity_volume(JointGrid(axis, axis, np.ones((32, 32)))) == 0.0


def test_negativity_of_disjoint_well():
    p = GaussianComponent((-3.0, -3.0), (0.5, 0.5), 0.0)
    up = GaussianComponent((3.0, -3.0), (0.5, 0.5), 0.0)
    down = GaussianComponent((0.0, 3.0), (0.4, 0.6), 0.3)
    amp = 0.3
    axis = uniform_axis(-8, 8, 1024)
    vol = negativity_volume(eval_joint(SyntheticSample(p, up, down, amp), axis))
    # the well is separated by > 10 sigma, so the negative region holds all of A * p''
    assert vol == pytest.approx(amp, rel=1e-4)


def test_negativity_decreases_with_noise():
    clean = negativity_volume(wigner_from_density(fock_density(NoisyStateParams("cat", 2.0))))
    noisy = negativity_volume(wigner_from_density(fock_density(NoisyStateParams("cat", 2.0, mu=0.8, nbar=2.0))))
    assert clean > noisy


def test_joint_marginals_of_gaussian():
    g = GaussianComponent((0.4, -0.3), (0.8, 1.1), 0.5)
    s = SyntheticSample(g, g, g, 0.0)
    axis = uniform_axis(-8, 8, 512)
    exact = analytic_marginals(s)
    proj = joint_marginals(eval_joint(s, axis), [m.grid for m in exact])
    for a, b in zip(exact, proj):
        assert l1_marginal(a, b) < 2e-5
        assert a.axis_label == b.axis_label


@pytest.mark.parametrize("size,budget", [(64, 2e-3), (256, 2e-3)])
def test_codec_only_budget(size, budget):
    axis = uniform_axis(*SO.window, size)
    for i in range(5):
        s = sample_params(0, SO, "signed", i)
        img = encode_grid(eval_joint(s, axis), CMAP)
        rep = gt_deficient_verify(img, analytic_marginals(s, SO.window), CMAP, SO.window, gt_img=img)
        assert max(rep.l1_relative) <= budget
        assert rep.reliable and rep.flags == [] and rep.l2_image == 0.0


def test_swapped_axes_flagged():
    s = sample_params(0, SO, "plain", 3)
    axis = uniform_axis(*SO.window, 64)
    joint = eval_joint(s, axis)
    swapped = JointGrid(axis, axis, joint.values.T.copy())
    rep = gt_deficient_verify(encode_grid(swapped, CMAP), analytic_marginals(s, SO.window), CMAP, SO.window)
    assert "x1/x13 swapped" in rep.flags
    assert rep.l1_relative[0] > 0.05


def test_out_of_gamut_is_unreliable():
    s = sample_params(0, SO, "plain", 0)
    img = np.full((3, 64, 64), -1.0)
    rep = gt_deficient_verify(img, analytic_marginals(s, SO.window), CMAP, SO.window)
    assert not rep.reliable and "out-of-gamut" in rep.flags
    assert rep.out_of_gamut_fraction == 1.0
    assert set(rep.to_dict()) >= {"l1_per_marginal", "negativity_volume", "out_of_gamut_fraction", "reliable", "flags"}
