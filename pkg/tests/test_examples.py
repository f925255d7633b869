"""Small worked examples with hand-derived expected values."""
import math

import numpy as np
import pytest

import tcgan.gan as gan_mod
from conftest import check_gradients
from oracles import conv1d_direct, mmd_double_sum
from tcgan import layers as L
from tcgan.cli import build_parser
from tcgan.data import _sine, multiclass4, synth_multiclass
from tcgan.downstream import KMeans, SupervisedTCGAN
from tcgan.encoder import Encoder
from tcgan.gan import Discriminator, GanConfig, Generator, batch_accuracy, d_loss, g_loss, train
from tcgan.metrics import mmd, nmi
from tcgan.optim import Adam
from tcgan.tensor import Tensor


def test_matmul_sum_gradient_tight():
    r = np.random.default_rng(0)
    check_gradients(lambda a, b: a @ b, [r.normal(size=(3, 4)), r.normal(size=(4, 2))], rtol=1e-6)


def test_conv_sliding_sum_example():
    x = np.array([1.0, 2, 3, 4]).reshape(1, 4, 1)
    w = np.ones((2, 1, 1))
    got = L.conv1d(Tensor(x), Tensor(w), None, 1).data[0, :, 0]
    # same-ceil: one zero appended on the right
    np.testing.assert_array_equal(got, [3, 5, 7, 4])
    np.testing.assert_array_equal(got, conv1d_direct(x, w, None, 1)[0, :, 0])


def test_conv_kernel_is_flipped():
    x = np.array([1.0, 0, 0]).reshape(1, 3, 1)
    w = np.array([1.0, 2.0, 3.0]).reshape(3, 1, 1)
    # y[t] = sum_i xpad[t+i] w[w-1-i] with xpad = [0, 1, 0, 0, 0]
    np.testing.assert_array_equal(L.conv1d(Tensor(x), Tensor(w), None, 1).data[0, :, 0], [2, 3, 0])  # cross-correlation would give [2, 1, 0]


def test_adam_scalar_convergence():
    w = Tensor(np.array([0.0]), requires_grad=True)
    opt = Adam({"w": w}, alpha=0.1)
    for _ in range(200):
        opt.zero_grad()
        ((w - 3.0) * (w - 3.0)).sum().backward()
        opt.step()
    assert abs(w.data[0] - 3.0) < 0.1


def test_loss_and_accuracy_examples():
    assert d_loss(Tensor(np.array([0.9])), Tensor(np.array([0.2]))).item() == pytest.approx(0.3285, abs=1e-4)
    assert g_loss(Tensor(np.array([0.25, 0.75]))).item() == pytest.approx(0.8370, abs=1e-4)
    assert batch_accuracy([0.9, 0.8], [0.1, 0.2]) == 1.0
    assert batch_accuracy([0.4], [0.6]) == 0.0
    assert batch_accuracy([0.9, 0.4], [0.1, 0.6]) == 0.5


def test_equilibrium_losses():
    half = Tensor(np.full(4, 0.5))
    assert d_loss(half, half).item() == pytest.approx(2 * math.log(2), abs=1e-15)
    assert g_loss(half).item() == pytest.approx(math.log(2), abs=1e-15)


def test_stubbed_accuracy_skips_discriminator(monkeypatch):
    monkeypatch.setattr(gan_mod, "batch_accuracy", lambda real, fake: 0.8)
    cfg = GanConfig(n=16, n_z=4, m=4, n_epoch=1, channel_widths=(2, 2, 2, 2), kernel_w=3, dtype="float64")
    G = Generator(cfg, np.random.default_rng(0))
    g_before = {k: p.data.copy() for k, p in G.parameters().items()}
    _, _, state = train(np.random.default_rng(1).normal(size=(12, 16, 1)), cfg, generator=G)
    assert [r["d_updated"] for r in state.log] == [True, False, False]
    assert [r["acc_last"] for r in state.log] == [0.75, 0.8, 0.8]
    assert any(not np.array_equal(g_before[k], p.data) for k, p in G.parameters().items())


@pytest.mark.parametrize("n", [16, 24, 100, 300])
def test_shapes_across_lengths(n):
    cfg = GanConfig(n=n, dtype="float64", channel_widths=(4, 4, 4, 4))
    x = Generator(cfg)(Tensor(np.random.default_rng(0).uniform(-1, 1, (16, 100))))
    assert x.shape == (16, n, 1)
    assert Discriminator(cfg)(x).shape == (16,)


def test_default_generator_output_shape():
    cfg = GanConfig()
    assert Generator(cfg)(Tensor(np.zeros((16, 100), dtype=np.float32))).shape == (16, 100, 1)


def test_encoder_dimension_defaults_and_short_series():
    assert Encoder(Discriminator(GanConfig(n=100))).n_v == 1536
    with pytest.raises(ValueError):
        Encoder(Discriminator(GanConfig(n=16)))


def test_encode_single_sample_matches_batch_row():
    D = Discriminator(GanConfig(n=100, dtype="float64"))
    for buf in D.buffers().values():
        buf += 0.3
    x = np.random.default_rng(0).normal(size=(8, 100, 1))
    enc = Encoder(D)
    np.testing.assert_allclose(enc.encode(x[:1])[0], enc.encode(x)[0], rtol=1e-13, atol=1e-15)


def test_batchnorm_running_stats_converge():
    bn = L.BatchNorm1D(2)
    x = np.random.default_rng(0).normal([1.0, -2.0], [3.0, 0.5], size=(32, 10, 2))
    for _ in range(200):
        bn(Tensor(x), training=True)
    np.testing.assert_allclose(bn.running_mean, x.mean(axis=(0, 1)), rtol=1e-8)
    np.testing.assert_allclose(bn.running_var, x.var(axis=(0, 1)), rtol=1e-8)


def test_mmd_two_point_example():
    x = np.array([[0.0], [1.0]])
    expected = math.exp(-0.5) - 1.0  # within terms e^-1/2 each; cross term (2 + 2 e^-1/2) / 4
    assert mmd(x, x.copy(), bandwidth=1.0) == pytest.approx(expected, abs=1e-12)
    assert mmd(x, x.copy(), bandwidth=1.0) == pytest.approx(mmd_double_sum(x, x, 1.0), abs=1e-12)


def test_nmi_independent_assignments():
    assert nmi([0, 0, 1, 1], [0, 1, 0, 1]) == 0.0


def test_sine_at_nyquist_is_zero():
    np.testing.assert_allclose(_sine(np.array(0.5), np.array(0.0), 4), 0.0, atol=1e-15)


def test_random_init_supervised_network_is_near_chance():
    accs = []
    for seed in range(5):
        ds = multiclass4(seed=seed, train_per_class=20, test_per_class=50, n=64)
        tr, te = ds.subset("train"), ds.subset("test")
        pred = SupervisedTCGAN(train=False, seed=seed).fit(tr.series, tr.labels).predict(te.series)
        accs.append(np.mean(pred == te.labels))
    assert abs(np.mean(accs) - 0.25) < 0.1


def test_supervised_network_learns_two_class_sines():
    train_ds = synth_multiclass(30, [(0.05, 0.1), (0.3, 0.35)], n=64, seed=0)
    test_ds = synth_multiclass(50, [(0.05, 0.1), (0.3, 0.35)], n=64, seed=1)
    clf = SupervisedTCGAN(epochs=20, seed=0)
    clf.fit(train_ds.series, train_ds.labels)
    assert np.mean(clf.predict(test_ds.series) == test_ds.labels) > 0.95


def test_kmeans_inertia_never_increases_over_100_datasets():
    rng = np.random.default_rng(11)
    for _ in range(100):
        x = rng.normal(size=(int(rng.integers(10, 60)), int(rng.integers(1, 5))))
        h = np.array(KMeans(int(rng.integers(2, 6)), n_init=1, tol=0, seed=int(rng.integers(1e6))).fit(x)
                     .inertia_history_)
        assert np.all(np.diff(h) <= 1e-9 * max(h[0], 1.0))


def test_cli_defaults_follow_training_defaults():
    args = build_parser().parse_args(["train-gan", "--data", "x.csv", "--out-ckpt", "g.npz"])
    assert (args.batch, args.epochs, args.delta, args.lr, args.beta1, args.beta2) == (16, 300, 0.75, 0.0002, 0.5, 0.9)
    cfg = GanConfig()
    assert (cfg.m, cfg.n_epoch, cfg.n_z) == (16, 300, 100)


def test_synth_default_count(tmp_path, monkeypatch):
    from tcgan.cli import main

    monkeypatch.chdir(tmp_path)
    monkeypatch.delenv("TCGAN_OUTPUT_ROOT", raising=False)
    assert main(["synth", "--preset", "sines-d1l100", "--out", "s.csv"]) == 0
    rows = (tmp_path / "s.csv").read_text().splitlines()
    assert len(rows) == 10_000 and len(rows[0].split(",")) == 101
