import numpy as np
import pytest
import torch

from quasirecon.model import (
    Checkpoint,
    ConfigError,
    DeconvBlock,
    DivergenceError,
    IdentityBlock,
    ModelConfig,
    TrainConfig,
    build_model,
    predict,
    train,
)

TINY = ModelConfig(output_size=64, base_channels=2, blocks_per_stage=(1, 1, 1, 1, 1, 2))


def features(n, seed=0):
    rng = np.random.default_rng(seed)
    return rng.random((n, 3, 721)).astype(np.float32)


@pytest.mark.parametrize("size", [64, 128, 256])
def test_output_shape_and_range(size):
    m = build_model(ModelConfig(output_size=size, base_channels=2), seed=0).eval()
    with torch.no_grad():
        out = m(torch.as_tensor(features(2)))
    assert out.shape == (2, 3, size, size)
    assert out.abs().max() <= 1


def test_upsampling_layout():
    assert sum(s == 2 for s in ModelConfig(output_size=64).upsampling) == 4
    assert sum(s == 2 for s in ModelConfig(output_size=256).upsampling) == 6
    assert ModelConfig.desk().output_size == 64


@pytest.mark.parametrize(
    "kw", [dict(output_size=100), dict(blocks_per_stage=(2, 2)), dict(blocks_per_stage=(0,) * 6), dict(width_multipliers=(1,))]
)
def test_config_validation(kw):
    with pytest.raises(ConfigError):
        ModelConfig(**kw)


def test_rejects_bad_input():
    m = build_model(TINY).eval()
    with pytest.raises(ConfigError):
        m(torch.zeros(1, 3, 700))
    bad = torch.zeros(1, 3, 721)
    bad[0, 0, 0] = float("nan")
    with pytest.raises(ValueError):
        m(bad)
    with pytest.raises(ConfigError):
        predict(m, np.zeros((3, 10)))


def test_identity_block_with_zero_residual_is_identity():
    blk = IdentityBlock(8).eval()
    for mod in blk.main:
        if isinstance(mod, torch.nn.Conv2d):
            torch.nn.init.zeros_(mod.weight)
            torch.nn.init.zeros_(mod.bias)
    x = torch.randn(2, 8, 5, 5)
    assert torch.equal(blk(x), x)


def test_deconv_block_upsamples():
    blk = DeconvBlock(8, 4, 2).eval()
    assert blk(torch.randn(1, 8, 4, 4)).shape == (1, 4, 8, 8)
    assert DeconvBlock(8, 4, 1).eval()(torch.randn(1, 8, 4, 4)).shape == (1, 4, 4, 4)


def test_deterministic_given_seed():
    x = torch.as_tensor(features(3))
    a = build_model(TINY, seed=5).eval()
    b = build_model(TINY, seed=5).eval()
    with torch.no_grad():
        assert torch.equal(a(x), b(x))
        assert torch.equal(a(x), a(x))
    c = build_model(TINY, seed=6).eval()
    with torch.no_grad():
        assert not torch.equal(a(x), c(x))


def test_batch_matches_single_calls():
    m = build_model(TINY, seed=1)
    f = features(4)
    batch = predict(m, f)
    singles = np.stack([predict(m, f[i]) for i in range(4)])
    np.testing.assert_allclose(batch, singles, atol=1e-6)


def test_finite_difference_gradient():
    torch.manual_seed(0)
    m = build_model(TINY, seed=2).double()
    m.train()
    x = torch.as_tensor(features(4, 1), dtype=torch.float64)
    y = torch.rand(4, 3, 64, 64, dtype=torch.float64) * 2 - 1
    params = [p for p in m.parameters() if p.requires_grad]

    def loss():
        return torch.nn.functional.mse_loss(m(x), y)

    m.zero_grad()
    loss().backward()
    grad = [p.grad.clone() for p in params]
    gen = torch.Generator().manual_seed(3)
    for _ in range(3):
        v = [torch.randn(p.shape, generator=gen, dtype=torch.float64) for p in params]
        norm = torch.sqrt(sum((d * d).sum() for d in v))
        v = [d / norm for d in v]
        analytic = sum(float((g * d).sum()) for g, d in zip(grad, v))
        eps = 1e-6
        with torch.no_grad():
            for p, d in zip(params, v):
                p.add_(eps * d)
            up = float(loss())
            for p, d in zip(params, v):
                p.add_(-2 * eps * d)
            down = float(loss())
            for p, d in zip(params, v):
                p.add_(eps * d)
        numeric = (up - down) / (2 * eps)
        assert numeric == pytest.approx(analytic, rel=1e-3)


def test_training_reduces_loss_and_is_reproducible(tmp_path):
    f = features(24)
    lbl = np.tanh(np.random.default_rng(2).normal(size=(24, 3, 64, 64))).astype(np.float32) * 0.1
    cfg = TrainConfig(learning_rate=1e-3, batch_size=8, epochs=3, val_fraction=0.25)
    a = train(build_model(TINY, 0), f, lbl, cfg, {"mean": [0.5] * 3, "std": [0.3] * 3}, manifest_digest="abc")
    b = train(build_model(TINY, 0), f, lbl, cfg, {"mean": [0.5] * 3, "std": [0.3] * 3}, manifest_digest="abc")
    assert [r["train"] for r in a.curve] == [r["train"] for r in b.curve]
    assert a.curve[-1]["train"] < a.curve[0]["train"]
    assert a.epoch == 3 and len(a.curve) == 3
    path = tmp_path / "ck.pt"
    a.save(path)
    back = Checkpoint.load(path)
    assert back.manifest_digest == "abc" and back.model_config == TINY and back.train_config == cfg
    np.testing.assert_array_equal(predict(back, f[:2]), predict(a, f[:2]))
    assert (tmp_path / "ck.curve.json").exists()
    np.testing.assert_allclose(back.model().feature_mean.numpy().ravel(), 0.5)

    more = train(back.model(), f, lbl, TrainConfig(**{**cfg.to_dict(), "epochs": 5}), resume=back)
    assert len(more.curve) == 5 and more.epoch == 5


def test_label_size_must_match():
    with pytest.raises(ConfigError):
        train(build_model(TINY), features(4), np.zeros((4, 3, 32, 32), np.float32), TrainConfig(epochs=1))


def test_divergence_is_reported():
    cfg = TrainConfig(learning_rate=float("inf"), batch_size=4, epochs=3, val_fraction=0)
    with pytest.raises(DivergenceError) as err:
        train(build_model(TINY), features(8), np.zeros((8, 3, 64, 64), np.float32), cfg)
    assert isinstance(err.value.curve, list)
