"""Optimizer tests: schedule endpoints, momentum recurrence, reproducibility."""

import numpy as np
import pytest

from patchmetric import optim
from patchmetric.arch import parse_arch
from patchmetric.errors import NumericalError, UsageError
from patchmetric.losses import LossConfig
from patchmetric.model import EmbeddingNet
from patchmetric.optim import SGD, TrainConfig, lr_schedule, train


class TestSchedule:
    def test_starts_at_lr_start(self):
        cfg = TrainConfig(lr_start=0.01, lr_end=0.0001, epochs=100)
        assert lr_schedule(0, cfg) == 0.01

    def test_ends_at_lr_end(self):
        cfg = TrainConfig(lr_start=0.01, lr_end=0.0001, epochs=100)
        assert lr_schedule(99, cfg) == pytest.approx(0.0001, rel=1e-12)

    def test_geometric_midpoint(self):
        cfg = TrainConfig(lr_start=0.01, lr_end=0.0001, epochs=3)
        assert lr_schedule(1, cfg) == pytest.approx(np.sqrt(0.01 * 0.0001), rel=1e-12)

    def test_single_epoch_returns_start(self):
        cfg = TrainConfig(epochs=1)
        assert lr_schedule(0, cfg) == cfg.lr_start

    def test_monotone_non_increasing(self):
        cfg = TrainConfig(lr_start=0.05, lr_end=0.001, epochs=17)
        rates = [lr_schedule(e, cfg) for e in range(17)]
        assert all(a >= b for a, b in zip(rates, rates[1:]))

    def test_out_of_range_epoch(self):
        with pytest.raises(UsageError):
            lr_schedule(5, TrainConfig(epochs=5))

    def test_invalid_config(self):
        with pytest.raises(UsageError):
            TrainConfig(lr_start=0.001, lr_end=0.01)


class TestSGDStep:
    def test_zero_grad_fixed_point(self):
        p = {"w": np.array([1.0, -2.0])}
        opt = SGD(p, TrainConfig(weight_decay=0.0))
        opt.step({"w": np.zeros(2)}, lr=0.1)
        np.testing.assert_array_equal(p["w"], [1.0, -2.0])

    def test_plain_gradient_descent(self):
        p = {"w": np.array([1.0])}
        opt = SGD(p, TrainConfig(momentum=0.0, weight_decay=0.0))
        opt.step({"w": np.array([2.0])}, lr=0.1)
        assert p["w"][0] == pytest.approx(1.0 - 0.1 * 2.0, abs=1e-15)

    def test_momentum_unrolled_two_steps(self):
        p = {"w": np.array([0.0])}
        cfg = TrainConfig(momentum=0.9, weight_decay=0.0)
        opt = SGD(p, cfg)
        g = {"w": np.array([1.0])}
        opt.step(g, lr=0.01)
        opt.step(g, lr=0.01)
        assert opt.velocity["w"][0] == pytest.approx(-0.01 * (1 + 0.9), abs=1e-15)

    def test_bn_params_skip_weight_decay(self):
        p = {"conv0.w": np.array([1.0]), "conv0.gain": np.array([1.0])}
        opt = SGD(p, TrainConfig(momentum=0.0, weight_decay=0.5))
        opt.step({"conv0.w": np.zeros(1), "conv0.gain": np.zeros(1)}, lr=0.1)
        assert p["conv0.w"][0] == pytest.approx(1.0 - 0.1 * 0.5)
        assert p["conv0.gain"][0] == 1.0

    def test_non_finite_gradient_aborts(self):
        opt = SGD({"w": np.zeros(1)}, TrainConfig())
        with pytest.raises(NumericalError, match="w"):
            opt.step({"w": np.array([np.nan])}, lr=0.1)


def toy_net(seed=0):
    return EmbeddingNet(parse_arch("B(16,2,1)-C(8,1,1)", (2, 1, 1)), seed=seed)


def toy_batches(rng_seed, n_batches=4, batch=8):
    rng = np.random.default_rng(rng_seed)
    a = rng.normal((1, 0), 0.3, size=(n_batches * batch, 2)).reshape(-1, 2, 1, 1)
    p = rng.normal((1, 0), 0.3, size=(n_batches * batch, 2)).reshape(-1, 2, 1, 1)
    n = rng.normal((-1, 0), 0.3, size=(n_batches * batch, 2)).reshape(-1, 2, 1, 1)

    def batches(epoch, seed):
        return [(a[i * batch:(i + 1) * batch], p[i * batch:(i + 1) * batch],
                 n[i * batch:(i + 1) * batch]) for i in range(n_batches)]

    return batches


class TestTrain:
    def test_zero_epochs_returns_empty_trace(self):
        net = toy_net()
        before = {k: v.copy() for k, v in net.parameters().items()}
        trace = train(net, toy_batches(0), "triplet", LossConfig(),
                      TrainConfig(epochs=0))
        assert trace == []
        for k, v in net.parameters().items():
            np.testing.assert_array_equal(v, before[k])

    def test_loss_decreases_on_separable_toy(self):
        net = toy_net(seed=1)
        cfg = TrainConfig(lr_start=0.05, lr_end=0.01, epochs=30,
                          weight_decay=0.0, seed=3)
        trace = train(net, toy_batches(1), "triplet",
                      LossConfig(triplet_margin=0.1), cfg)
        assert trace[-1].mean_loss < trace[0].mean_loss

    def test_bitwise_reproducibility(self):
        runs = []
        for _ in range(2):
            net = toy_net(seed=2)
            cfg = TrainConfig(lr_start=0.05, lr_end=0.01, epochs=5, seed=7)
            train(net, toy_batches(2), "global-embed",
                  LossConfig(global_margin=0.4, lam=0.8), cfg)
            runs.append({k: v.copy() for k, v in net.parameters().items()})
        for k in runs[0]:
            np.testing.assert_array_equal(runs[0][k], runs[1][k])

    def test_empty_dataset_rejected(self):
        with pytest.raises(UsageError):
            train(toy_net(), lambda e, s: [], "triplet", LossConfig(),
                  TrainConfig(epochs=1))

    def test_trace_csv(self, tmp_path):
        net = toy_net(seed=4)
        trace = train(net, toy_batches(4), "global-embed",
                      LossConfig(), TrainConfig(epochs=2, seed=0))
        path = tmp_path / "trace.csv"
        optim.write_trace_csv(trace, path)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "epoch,mean_loss,mu_plus,mu_minus,var_plus,var_minus"
        assert len(lines) == 3
