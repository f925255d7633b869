import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import check_gradients
from tcgan.gan import (
    Discriminator, GanConfig, Generator, TrainingDiverged, batch_accuracy, conv_lengths, d_loss, g_loss, sample,
    train,
)
from tcgan.tensor import Tensor

TINY = dict(n_z=8, channel_widths=(2, 3, 4, 5), kernel_w=4, m=8, dtype="float64")


def tiny(**kw):
    return GanConfig(**{**TINY, **kw})


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 130), st.integers(1, 3), st.integers(1, 3))
def test_network_shapes(n, d, batch):
    cfg = tiny(n=n, d=d)
    G, D = Generator(cfg), Discriminator(cfg)
    x = G(Tensor(np.random.default_rng(0).uniform(-1, 1, (max(batch, 2), cfg.n_z))))
    assert x.shape == (max(batch, 2), n, d)
    p = D(x, training=False).data
    assert p.shape == (max(batch, 2),) and ((p > 0) & (p < 1)).all()
    assert D.lengths == conv_lengths(n, 2)
    assert G.base_len == math.ceil(n / 16)


def test_default_architecture_widths():
    cfg = GanConfig(n=100, dtype="float64")
    G, D = Generator(cfg), Discriminator(cfg)
    assert D.lengths == [50, 25, 13, 7]
    assert D.flat_dim == 7 * 256
    assert G.layers["dense"].weight.shape == (100, 7 * 256)
    assert [G.layers[f"fconv{i}"].weight.shape[2] for i in range(1, 5)] == [128, 64, 32, 1]
    assert G.full_len == 112 and G.crop_left == 6


def test_config_validation_and_round_trip():
    with pytest.raises(ValueError):
        GanConfig(delta=0.5)
    with pytest.raises(ValueError):
        GanConfig(delta=1.0)
    with pytest.raises(ValueError):
        GanConfig(channel_widths=(1, 2, 3))
    cfg = tiny(n=30)
    assert GanConfig.from_dict(cfg.to_dict()) == cfg


def test_losses_closed_form():
    real, fake = np.array([0.9, 0.6]), np.array([0.2, 0.3])
    expected = -np.mean(np.log(real) + np.log(1 - fake))
    assert d_loss(Tensor(real), Tensor(fake)).item() == pytest.approx(expected)
    assert g_loss(Tensor(fake)).item() == pytest.approx(-np.mean(np.log(fake)))
    # clamping keeps saturated outputs finite
    assert np.isfinite(d_loss(Tensor(np.array([0.0])), Tensor(np.array([1.0]))).item())
    assert g_loss(Tensor(np.array([0.0]))).item() == pytest.approx(-math.log(1e-7))


def test_loss_gradients(rng):
    real, fake = rng.uniform(0.05, 0.95, 6), rng.uniform(0.05, 0.95, 6)
    check_gradients(lambda a, b: d_loss(a, b), [real, fake])
    check_gradients(lambda b: g_loss(b), [fake])


def test_batch_accuracy_threshold():
    assert batch_accuracy([0.9, 0.5], [0.1, 0.5]) == 0.5
    assert batch_accuracy([0.51], [0.49]) == 1.0


def _param_snapshot(model):
    return {k: p.data.copy() for k, p in model.parameters().items()}


def _changed(before, model):
    return {k for k, p in model.parameters().items() if not np.array_equal(before[k], p.data)}


def test_gate_closed_leaves_discriminator_untouched():
    cfg = tiny(n=20, n_epoch=2)
    data = np.random.default_rng(0).normal(size=(24, 20, 1))
    D = Discriminator(cfg, np.random.default_rng(5))
    before, buffers = _param_snapshot(D), {k: v.copy() for k, v in D.buffers().items()}
    G, D, state = train(data, cfg, discriminator=D, gate=lambda acc, delta: False)
    assert not _changed(before, D)
    for k, v in D.buffers().items():
        np.testing.assert_array_equal(v, buffers[k])
    assert not any(r["d_updated"] for r in state.log)
    assert len(state.log) == 2 * 3


def test_discriminator_step_does_not_move_generator_directly():
    cfg = tiny(n=20, n_epoch=1, m=24, alpha=0.0)  # alpha=0 keeps G fixed; D must still be able to move
    data = np.random.default_rng(0).normal(size=(24, 20, 1))
    G = Generator(cfg, np.random.default_rng(1))
    before = _param_snapshot(G)
    train(data, cfg, generator=G, gate=lambda acc, delta: True)
    assert not _changed(before, G)


def test_generator_step_does_not_move_discriminator():
    cfg = tiny(n=20, n_epoch=1, m=12)
    data = np.random.default_rng(0).normal(size=(24, 20, 1))
    D = Discriminator(cfg, np.random.default_rng(5))
    G = Generator(cfg, np.random.default_rng(6))
    before_d, before_g = _param_snapshot(D), _param_snapshot(G)
    train(data, cfg, generator=G, discriminator=D, gate=lambda acc, delta: False)
    assert not _changed(before_d, D)
    assert _changed(before_g, G)


def test_gating_log_is_consistent_and_first_batch_updates():
    cfg = tiny(n=16, n_epoch=3, delta=0.6)
    data = np.sin(np.linspace(0, 6, 16))[None, :, None] + np.random.default_rng(1).normal(0, 0.1, (40, 16, 1))
    _, _, state = train(data, cfg)
    assert state.log[0]["acc_last"] == cfg.delta and state.log[0]["d_updated"]
    assert all(r["d_updated"] == (r["acc_last"] <= cfg.delta) for r in state.log)
    assert len(state.epoch_seconds) == 3
    assert state.epoch_means("d_loss").shape == (3,)


def test_training_is_deterministic():
    data = np.random.default_rng(0).normal(size=(20, 12, 2))
    cfg = tiny(n=12, d=2, n_epoch=2, seed=4)
    G1, D1, s1 = train(data, cfg)
    G2, D2, s2 = train(data, cfg)
    assert s1.log == s2.log
    np.testing.assert_array_equal(sample(G1, 5, seed=1), sample(G2, 5, seed=1))


def test_nan_input_raises_training_diverged():
    cfg = tiny(n=10, n_epoch=1)
    data = np.full((16, 10, 1), np.nan)
    with pytest.raises(TrainingDiverged):
        train(data, cfg)


def test_train_input_validation():
    cfg = tiny(n=10)
    with pytest.raises(ValueError, match="batch size"):
        train(np.zeros((4, 10, 1)), cfg)
    with pytest.raises(ValueError, match="expected data"):
        train(np.zeros((20, 11, 1)), cfg)


def test_sample_shapes_and_seeding():
    G = Generator(tiny(n=9, d=2))
    assert sample(G, 0).shape == (0, 9, 2)
    a = sample(G, 7, seed=3, chunk=2)
    np.testing.assert_array_equal(a, sample(G, 7, seed=3, chunk=2))
    np.testing.assert_allclose(a, sample(G, 7, seed=3), rtol=1e-12, atol=1e-20)
    assert a.shape == (7, 9, 2)


def test_log_csv(tmp_path):
    cfg = tiny(n=10, n_epoch=1)
    _, _, state = train(np.random.default_rng(0).normal(size=(16, 10, 1)), cfg)
    path = tmp_path / "log.csv"
    state.write_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "epoch,batch,d_loss,g_loss,acc_last,d_updated"
    assert len(lines) == 1 + 2


def test_end_to_end_gradients_through_both_networks():
    """Autodiff of g_loss(D(G(z))) and d_loss w.r.t. network weights vs central differences."""
    cfg = tiny(n=12, m=4)
    G, D = Generator(cfg, np.random.default_rng(0)), Discriminator(cfg, np.random.default_rng(1))
    z = np.random.default_rng(2).uniform(-1, 1, (4, cfg.n_z))
    x = np.random.default_rng(3).normal(size=(4, 12, 1))

    def losses():
        fake = G(Tensor(z), training=True)
        return g_loss(D(fake, training=True, update_stats=False)), d_loss(
            D(Tensor(x), training=True, update_stats=False), D(fake.detach(), training=True, update_stats=False))

    for loss_index, model in ((0, G), (1, D)):
        for p in list(G.parameters().values()) + list(D.parameters().values()):
            p.grad = None
        losses()[loss_index].backward()
        for name, p in model.parameters().items():
            grad = p.grad.reshape(-1)
            flat = p.data.reshape(-1)
            for k in np.random.default_rng(4).choice(flat.size, size=min(3, flat.size), replace=False):
                old = flat[k]
                flat[k] = old + 1e-6
                up = losses()[loss_index].item()
                flat[k] = old - 1e-6
                down = losses()[loss_index].item()
                flat[k] = old
                numeric = (up - down) / 2e-6
                assert abs(grad[k] - numeric) <= 1e-4 * max(abs(numeric), abs(grad[k]), 1e-3), (name, grad[k], numeric)
