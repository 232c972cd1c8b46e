import math
from dataclasses import replace

import numpy as np
import pytest

from daan.datagen import LabeledDomain, ShiftScenario, TargetDomain, make_task
from daan.net import NetConfig, init_model
from daan.trainer import (
    METRICS_COLUMNS,
    MomentumSGD,
    TrainConfig,
    _Stream,
    evaluate,
    fit,
    lr_at,
    metrics_csv,
    parse_omega,
    read_metrics,
    steps_per_epoch,
    train_epoch,
    train_step,
    write_metrics,
)

# mpmath, 40 digits: 0.01 / 11**0.75
LR_AT_END = 0.001655600260761701725860584738943657


def small_cfg(**kw):
    net = NetConfig(input_dim=2, num_classes=3, feature_dim=8, hidden_width=8, discriminator_hidden=8, init_seed=kw.pop("init_seed", 0))
    base = dict(net=net, batch_size=16, epochs=3, seed=0)
    base.update(kw)
    return TrainConfig(**base)


@pytest.fixture(scope="module")
def task():
    return make_task(ShiftScenario("marginal", 2.0, 1), n=60)


class TestSchedule:
    def test_start(self):
        assert lr_at(0.0, small_cfg()) == 0.01

    def test_end_matches_oracle(self):
        assert lr_at(1.0, small_cfg()) == pytest.approx(LR_AT_END, rel=1e-14)

    def test_no_decay(self):
        cfg = small_cfg(alpha=0.0)
        assert {lr_at(k, cfg) for k in np.linspace(0, 1, 11)} == {0.01}

    def test_strictly_decreasing(self):
        lrs = [lr_at(k, small_cfg()) for k in np.linspace(0, 1, 200)]
        assert all(b < a for a, b in zip(lrs, lrs[1:]))

    @pytest.mark.parametrize("k", [-0.01, 1.01])
    def test_out_of_range(self, k):
        with pytest.raises(ValueError, match="progress"):
            lr_at(k, small_cfg())


class TestConfig:
    @pytest.mark.parametrize(
        "kw", [dict(eta0=0.0), dict(momentum=1.0), dict(momentum=-0.1), dict(omega="fixed:1.5"), dict(batch_size=1), dict(lam=-1.0)]
    )
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            small_cfg(**kw)

    @pytest.mark.parametrize("text,expect", [("dynamic", "dynamic"), ("fixed:0.3", 0.3), ("0.7", 0.7), (1, 1.0), (" Dynamic ", "dynamic")])
    def test_parse_omega(self, text, expect):
        assert parse_omega(text) == expect

    def test_parse_omega_garbage(self):
        with pytest.raises(ValueError, match="dynamic"):
            parse_omega("often")


class TestPlumbing:
    def test_steps_per_epoch(self):
        assert steps_per_epoch(60, 60, 16) == 8
        assert steps_per_epoch(60, 100, 16) == 13

    def test_stream_covers_each_pass(self):
        s = _Stream(10, np.random.default_rng(0))
        first = s.take(10)
        assert sorted(first) == list(range(10))
        again = np.concatenate([s.take(3) for _ in range(4)])
        assert sorted(again[:10]) == list(range(10))

    def test_momentum_update(self):
        p = {"w": np.array([1.0])}
        opt = MomentumSGD(p, 0.9)
        opt.step(p, {"w": np.array([1.0])}, 0.1, {})
        opt.step(p, {"w": np.array([1.0])}, 0.1, {"w": 10.0})
        # v1 = 1, v2 = 1.9
        assert p["w"][0] == pytest.approx(1.0 - 0.1 - 1.9)


def _epoch(cfg, task, model=None, omega=0.5, steps=None):
    src, tgt = task
    model = model or init_model(cfg.net)
    opt = MomentumSGD(model.params, cfg.momentum)
    losses = train_epoch(model, src.X, src.y, tgt.X, cfg, omega, (0, steps or 100), np.random.default_rng(cfg.seed), opt)
    return model, losses


class TestTrainEpoch:
    def test_lambda_zero_freezes_discriminators(self, task):
        cfg = small_cfg(lam=0.0)
        init = init_model(cfg.net)
        model, _ = _epoch(cfg, task, init.copy())
        for k in init.global_names + init.local_names:
            np.testing.assert_array_equal(model.params[k], init.params[k])
        assert not np.array_equal(model.params["f0.W"], init.params["f0.W"])

    def test_one_batch_epoch(self):
        src, tgt = make_task(ShiftScenario("marginal", 1.0, 0), n=9)
        cfg = small_cfg(batch_size=18)
        model = init_model(cfg.net)
        rng = np.random.default_rng(cfg.seed)
        # replay the single batch the epoch will draw
        probe = np.random.default_rng(cfg.seed)
        si, ti = probe.permutation(9), probe.permutation(9)
        _, (ly, lg, ll, pc), _ = train_step(model.copy(), src.X[si], src.y[si], tgt.X[ti], cfg, 0.5)
        losses = train_epoch(model, src.X, src.y, tgt.X, cfg, 0.5, (0, 1), rng, MomentumSGD(model.params, 0.9))
        assert losses.steps == 1
        assert (losses.L_y, losses.L_g, losses.L_l) == (ly, lg, ll)
        np.testing.assert_array_equal(losses.per_class_local, pc)

    def test_deterministic(self, task):
        a, la = _epoch(small_cfg(), task)
        b, lb = _epoch(small_cfg(), task)
        assert a.equals(b)
        assert la.L_y == lb.L_y

    def test_empty_domain(self, task):
        src, _ = task
        cfg = small_cfg()
        m = init_model(cfg.net)
        with pytest.raises(ValueError, match="non-empty"):
            train_epoch(m, src.X, src.y, np.zeros((0, 2)), cfg, 0.5, (0, 1), np.random.default_rng(0), MomentumSGD(m.params, 0.9))

    def test_classifier_lr_multiplier(self, task):
        """With the multiplier at 1 only the classifier update changes."""
        a, _ = _epoch(small_cfg(classifier_lr_mult=1.0, epochs=1), task, steps=1)
        b, _ = _epoch(small_cfg(epochs=1), task, steps=1)
        assert not np.array_equal(a.params["y.W"], b.params["y.W"])


class TestEvaluate:
    def test_perfect(self):
        cfg = small_cfg()
        m = init_model(cfg.net)
        m.params["y.W"][:] = 0
        m.params["y.b"] = np.array([5.0, 0.0, 0.0])
        assert evaluate(m, np.ones((4, 2)), [0, 0, 0, 0]) == 1.0
        assert evaluate(m, np.ones((4, 2)), [1, 2, 1, 2]) == 0.0

    def test_ties_go_to_lowest_index(self):
        m = init_model(small_cfg().net)
        m.params["y.W"][:] = 0
        y = np.array([0, 1, 2, 0, 1, 2, 0, 1, 2, 0])
        assert evaluate(m, np.zeros((10, 2)), y) == 0.4

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            evaluate(init_model(small_cfg().net), np.zeros((3, 2)), [0, 1])

    def test_empty(self):
        with pytest.raises(ValueError, match="empty"):
            evaluate(init_model(small_cfg().net), np.zeros((0, 2)), [])


class TestFit:
    def test_zero_epochs(self, task):
        cfg = small_cfg(epochs=0)
        r = fit(cfg, *task)
        assert r.metrics == []
        assert r.model.equals(init_model(cfg.net))

    def test_fixed_column(self, task):
        r = fit(small_cfg(omega="fixed:0.5"), *task)
        assert [row.omega for row in r.metrics] == [0.5] * 3

    def test_dynamic_starts_at_one(self, task):
        r = fit(small_cfg(epochs=4), *task)
        assert r.metrics[0].omega == 1.0
        assert r.omega_history[0] == (0, 1.0)
        assert len(r.omega_history) == 5
        assert all(0.0 <= w <= 1.0 for _, w in r.omega_history)
        # the column records the weight each epoch trained with
        assert [row.omega for row in r.metrics] == [w for _, w in r.omega_history[:-1]]

    @pytest.mark.parametrize("omega,frozen", [(0.0, "local_names"), (1.0, "global_names")])
    def test_degenerate_modes(self, task, omega, frozen):
        cfg = small_cfg(omega=omega)
        init = init_model(cfg.net)
        r = fit(cfg, *task)
        names = getattr(init, frozen)
        assert all(np.array_equal(r.model.params[k], init.params[k]) for k in names)
        other = init.global_names if frozen == "local_names" else init.local_names
        assert any(not np.array_equal(r.model.params[k], init.params[k]) for k in other)

    def test_metrics_deterministic(self, task):
        cfg = small_cfg()
        assert metrics_csv(fit(cfg, *task).metrics) == metrics_csv(fit(cfg, *task).metrics)

    def test_eval_labels_touch_only_accuracy(self, task):
        src, tgt = task
        cfg = small_cfg()
        with_eval = fit(cfg, src, tgt).metrics
        without = fit(cfg, src, TargetDomain(tgt.X)).metrics
        for a, b in zip(with_eval, without):
            assert math.isnan(b.target_accuracy) and not math.isnan(a.target_accuracy)
            assert (a.L_y, a.L_g, a.L_l, a.omega, a.lr, a.source_accuracy) == (b.L_y, b.L_g, b.L_l, b.omega, b.lr, b.source_accuracy)

    def test_lr_column(self, task):
        rows = fit(small_cfg(), *task).metrics
        assert rows[0].lr == 0.01
        assert rows[1].lr == pytest.approx(0.01 / (1 + 10 / 3) ** 0.75)

    def test_unequal_domains(self, task):
        src, tgt = task
        r = fit(small_cfg(epochs=1), src, TargetDomain(tgt.X[:25], tgt.y_eval[:25]))
        assert len(r.metrics) == 1

    def test_wrong_dim_rejected(self, task):
        src, tgt = task
        with pytest.raises(ValueError, match="input columns"):
            fit(small_cfg(), src, TargetDomain(np.ones((5, 3))))


class TestMetricsCSV:
    def test_header_and_digits(self, task, tmp_path):
        rows = fit(small_cfg(epochs=2), *task).metrics
        path = write_metrics(tmp_path / "m.csv", rows)
        lines = path.read_text().splitlines()
        assert lines[0] == ",".join(METRICS_COLUMNS)
        assert len(lines) == 3
        fields = lines[1].split(",")
        assert fields[-1] == "0"
        assert all(len(f.replace("-", "").replace(".", "").lstrip("0").split("e")[0]) <= 9 for f in fields)

    def test_round_trip(self, task, tmp_path):
        rows = fit(small_cfg(epochs=2), *task).metrics
        back = read_metrics(write_metrics(tmp_path / "m.csv", rows))
        assert [r.epoch for r in back] == [1, 2]
        assert back[0].L_y == pytest.approx(rows[0].L_y, rel=1e-8)

    def test_wall_clock_optional(self, task):
        rows = fit(small_cfg(epochs=1), *task).metrics
        assert metrics_csv(rows, wall_clock=True).splitlines()[1].split(",")[-1] != "0"

    def test_bad_header(self, tmp_path):
        (tmp_path / "m.csv").write_text("epoch,loss\n")
        with pytest.raises(ValueError, match="row 1"):
            read_metrics(tmp_path / "m.csv")
