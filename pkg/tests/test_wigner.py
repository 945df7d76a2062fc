import time

import numpy as np
import pytest

from quasirecon.dataset import WignerPreset, sample_wigner_params
from quasirecon.verification import joint_marginals, l1_marginal, negativity_volume
from quasirecon.wigner import (
    FockDensity,
    NoisyStateParams,
    TruncationError,
    WignerGridConfig,
    fock_density,
    marginals_closed_form,
    rotate,
    wigner_closed_form,
    wigner_from_density,
    wigner_marginals,
)

VAC = NoisyStateParams("coherent", 0.0)


def consistency_l1(params, n_cut=60):
    rho = fock_density(params, n_cut)
    joint = wigner_from_density(rho)
    direct = wigner_marginals(rho)
    proj = joint_marginals(joint, [m.grid for m in direct], ("x", "p", "u"))
    return [l1_marginal(d, p) for d, p in zip(direct, proj)]


def test_params_validation():
    with pytest.raises(ValueError):
        NoisyStateParams("squeezed", 1.0)
    with pytest.raises(ValueError):
        NoisyStateParams("coherent", 1.0, mu=0.0)
    with pytest.raises(ValueError):
        NoisyStateParams("coherent", 1.0, nbar=-0.1)
    assert NoisyStateParams("cat", 1.0, mu=0.8, nbar=1.0).nu == pytest.approx(0.36)


def test_vacuum_projector():
    rho = fock_density(VAC, 30)
    expected = np.zeros((30, 30))
    expected[0, 0] = 1
    np.testing.assert_allclose(rho.matrix, expected, atol=1e-14)


def test_identity_channel_is_pure():
    rho = fock_density(NoisyStateParams("coherent", 1.3 - 0.4j), 40)
    assert rho.purity() == pytest.approx(1.0, abs=1e-10)
    rho = fock_density(NoisyStateParams("cat", 2.0, theta_rel=0.7), 50)
    assert rho.purity() == pytest.approx(1.0, abs=1e-10)


def test_mean_photon_after_channel():
    p = NoisyStateParams("coherent", 1.0, mu=0.8, nbar=1.0)
    rho = fock_density(p, 40)
    assert rho.purity() < 1
    assert np.trace(rho.matrix).real == pytest.approx(1.0, abs=1e-10)
    assert rho.mean_photon() == pytest.approx(0.64 + p.nu, abs=1e-9)
    np.testing.assert_allclose(rho.matrix, rho.matrix.conj().T, atol=1e-14)
    assert np.linalg.eigvalsh(rho.matrix).min() > -1e-12


def test_truncation_error():
    with pytest.raises(TruncationError):
        fock_density(NoisyStateParams("coherent", 3.0, mu=0.9, nbar=2.0), 30)


def test_vacuum_wigner_peak():
    W = wigner_from_density(fock_density(VAC, 20), WignerGridConfig(n_joint=257))
    assert W.values.max() == pytest.approx(1 / np.pi, abs=1e-6)
    X, P = np.meshgrid(W.x, W.y, indexing="ij")
    np.testing.assert_allclose(W.values, np.exp(-X**2 - P**2) / np.pi, atol=1e-12)


def test_vacuum_marginals_identical():
    tri = wigner_marginals(fock_density(VAC, 20))
    ref = np.exp(-tri.first.grid ** 2) / np.sqrt(np.pi)
    for m in tri:
        np.testing.assert_allclose(m.values, ref, atol=1e-12)


def test_coherent_marginal_centre_and_variance():
    p = NoisyStateParams("coherent", 1.2, mu=0.7, nbar=1.5)
    m = wigner_marginals(fock_density(p, 60), WignerGridConfig(window=(-12.0, 12.0), n_marginal=1201)).first
    q, w = m.grid, m.values
    mean = np.trapezoid(q * w, q)
    var = np.trapezoid((q - mean) ** 2 * w, q)
    assert mean == pytest.approx(np.sqrt(2) * 0.7 * 1.2, abs=1e-6)
    assert var == pytest.approx((1 + 2 * p.nu) / 2, abs=1e-6)


def test_rotation_by_half_turn_moves_coherent_state():
    rho = fock_density(NoisyStateParams("coherent", 1.0), 30)
    flipped = fock_density(NoisyStateParams("coherent", -1.0), 30)
    np.testing.assert_allclose(rotate(rho, np.pi).matrix, flipped.matrix, atol=1e-12)


def test_cat_interference_and_noise():
    clean = wigner_from_density(fock_density(NoisyStateParams("cat", 2.0), 60))
    noisy = wigner_from_density(fock_density(NoisyStateParams("cat", 2.0, mu=0.6, nbar=2.0), 60))
    assert clean.values.min() < 0
    assert noisy.values.min() > clean.values.min()


def cat_negativity(mu, nbar):
    return negativity_volume(wigner_from_density(fock_density(NoisyStateParams("cat", 2.0, mu=mu, nbar=nbar))))


def test_cat_negativity_decreases_with_nbar():
    # the positivity threshold (1 - mu^2)(nbar + 1/2) = mu^2 / 2 lies beyond nbar = 2 for mu = 0.95
    vols = [cat_negativity(0.95, n) for n in (0, 1, 2)]
    assert vols[0] > vols[1] > vols[2] > 0


def test_cat_negativity_vanishes_past_positivity_threshold():
    # mu = 0.8: the channel noise reaches mu^2 / 2 at nbar = 0.389
    vols = [cat_negativity(0.8, n) for n in (0.0, 0.3, 1.0, 2.0)]
    assert vols[0] > vols[1] > 0
    assert vols[2] == 0 and vols[3] == 0


@pytest.mark.parametrize("index", [0, 1, 2])
def test_joint_marginal_consistency(index):
    p = sample_wigner_params(7, WignerPreset(), "test", index)
    assert max(consistency_l1(p)) <= 1e-3


def test_closed_form_matches_fock():
    for p in (
        NoisyStateParams("cat", 1.5 + 0.5j, theta_rel=1.1, mu=0.75, nbar=0.8),
        NoisyStateParams("coherent", -0.6 + 1.1j, mu=0.55, nbar=1.9),
    ):
        rho = fock_density(p)
        np.testing.assert_allclose(wigner_closed_form(p).values, wigner_from_density(rho).values, atol=1e-10)
        for a, b in zip(marginals_closed_form(p), wigner_marginals(rho)):
            np.testing.assert_allclose(a.values, b.values, atol=1e-10)


def test_runtime_per_state():
    p = NoisyStateParams("cat", 2.0 + 2.0j, theta_rel=0.3, mu=0.9, nbar=2.0)
    t0 = time.perf_counter()
    rho = fock_density(p, 60)
    wigner_from_density(rho)
    wigner_marginals(rho)
    assert time.perf_counter() - t0 < 10


def test_fock_density_rejects_non_hermitian():
    with pytest.raises(ValueError):
        FockDensity(np.array([[1.0, 1.0], [0.0, 0.0]]))
