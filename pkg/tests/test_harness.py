import pytest

from daan.harness import (
    DEFAULT_TASKS,
    GRID,
    Experiment,
    ExperimentConfig,
    StrategyResult,
    Task,
    attach_error,
    config_fingerprint,
    omega_error,
    report,
    run_tag,
)
from daan.net import NetConfig
from daan.trainer import TrainConfig

TASK = Task("marginal", 2.0)


def tiny_train(**kw):
    net = NetConfig(input_dim=2, num_classes=3, feature_dim=6, hidden_width=6, discriminator_hidden=6)
    return TrainConfig(net=net, batch_size=16, epochs=2, **kw)


@pytest.fixture
def exp(tmp_path):
    return Experiment(ExperimentConfig(tiny_train(), tmp_path, tasks=[TASK], repeats=2, t=3, n=48))


class TestOmegaError:
    @pytest.mark.parametrize(
        "method,grid,expect", [(0.885, 0.900, 1.5), (0.9, 0.9, 0.0), (0.910, 0.900, -1.0)]
    )
    def test_examples(self, method, grid, expect):
        assert omega_error(method, grid) == pytest.approx(expect, abs=1e-12)

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            omega_error(1.2, 0.9)


class TestConfig:
    def test_grid(self):
        assert len(GRID) == 11 and GRID[0] == 0.0 and GRID[-1] == 1.0

    def test_default_protocol(self):
        kinds = [t.kind for t in DEFAULT_TASKS]
        assert kinds.count("marginal") == 2 and kinds.count("conditional") == 2

    @pytest.mark.parametrize("kw", [dict(repeats=0), dict(t=0), dict(tasks=[])])
    def test_invalid(self, tmp_path, kw):
        with pytest.raises(ValueError):
            ExperimentConfig(tiny_train(), tmp_path, **kw)

    def test_fingerprint_ignores_omega_and_seed(self):
        a = config_fingerprint(tiny_train())
        assert a == config_fingerprint(tiny_train(omega=0.3, seed=9))
        assert a != config_fingerprint(tiny_train(lam=0.5))

    def test_run_tag(self):
        assert run_tag("dynamic") == "dynamic"
        assert run_tag(0.1) == "fixed-0.1"


class TestStrategies:
    def test_dynamic(self, exp):
        r = exp.run_strategy("dynamic", TASK)
        assert len(r.seed_accuracies) == 2
        assert all(0.0 <= a <= 1.0 for a in r.seed_accuracies)

    def test_single_repeat_is_single_fit(self, tmp_path):
        e = Experiment(ExperimentConfig(tiny_train(), tmp_path, tasks=[TASK], repeats=1, n=48))
        r = e.run_dynamic(TASK)
        assert r.seed_accuracies == [e.final_accuracy(TASK, 0, "dynamic")]

    def test_grid_and_average_share_runs(self, exp):
        g = exp.run_strategy("grid", TASK)
        files = sorted(p.stat().st_mtime_ns for p in (exp.out / "runs").rglob("*.csv"))
        a = exp.run_strategy("average", TASK)
        assert sorted(p.stat().st_mtime_ns for p in (exp.out / "runs").rglob("*.csv")) == files
        assert len(files) == 22
        assert g.accuracies == a.accuracies
        for seed_accs, best, mean in zip(g.accuracies, g.seed_accuracies, a.seed_accuracies):
            assert len(seed_accs) == 11
            assert best == max(seed_accs) and best >= mean
        assert g.omega_error == 0.0

    def test_grid_endpoints_match_single_fits(self, exp):
        g = exp.run_grid(TASK)
        assert g.accuracies[0][0] == exp.final_accuracy(TASK, 0, 0.0)
        assert g.accuracies[1][-1] == exp.final_accuracy(TASK, 1, 1.0)

    def test_random(self, exp):
        r = exp.run_random(TASK)
        assert r.omegas == [exp.random_omegas(0), exp.random_omegas(1)]
        assert exp.random_omegas(0) == exp.random_omegas(0)
        for accs, mean in zip(r.accuracies, r.seed_accuracies):
            assert min(accs) - 1e-12 <= mean <= max(accs) + 1e-12

    def test_random_single_draw(self, tmp_path):
        e = Experiment(ExperimentConfig(tiny_train(), tmp_path, tasks=[TASK], repeats=1, t=1, n=48))
        r = e.run_random(TASK)
        assert r.seed_accuracies == [e.final_accuracy(TASK, 0, r.omegas[0][0])]

    def test_error_attached_after_grid(self, exp):
        exp.run_strategy("grid", TASK)
        r = exp.run_strategy("average", TASK)
        assert r.omega_error >= 0.0

    def test_unknown_strategy(self, exp):
        with pytest.raises(ValueError, match="unknown strategy"):
            exp.run_strategy("bayes", TASK)

    def test_datasets_shared(self, exp):
        exp.run_dynamic(TASK)
        before = (exp.data_dir(TASK, 0) / "source.csv").read_bytes()
        exp.run_grid(TASK)
        assert (exp.data_dir(TASK, 0) / "source.csv").read_bytes() == before

    def test_rerun_byte_identical(self, tmp_path):
        texts = []
        for sub in ("a", "b"):
            e = Experiment(ExperimentConfig(tiny_train(), tmp_path / sub, tasks=[TASK], repeats=2, n=48))
            texts.append(e.save(e.run_dynamic(TASK)).read_bytes())
        assert texts[0] == texts[1]

    def test_json_round_trip(self, exp):
        r = exp.run_dynamic(TASK)
        assert StrategyResult.from_json(r.to_json()) == r

    def test_attach_error_missing_seed(self):
        grid = StrategyResult("grid", "t", [0], [0.9], [[0.9]])
        with pytest.raises(ValueError, match="lack seeds"):
            attach_error(StrategyResult("dynamic", "t", [1], [0.8], [[0.8]]), grid)


class TestReport:
    def test_empty_dir(self, tmp_path):
        with pytest.raises(FileNotFoundError, match="0 runs"):
            report(tmp_path)

    def test_summary(self, exp):
        for s in ("grid", "dynamic", "random"):
            exp.run_strategy(s, TASK)
        rep = report(exp.out)
        lines = rep.summaries[0].read_text().splitlines()
        assert lines[0] == "strategy,mean_accuracy,std,omega_error"
        assert [l.split(",")[0] for l in lines[1:]] == ["dynamic", "grid", "random"]
        assert lines[2].endswith(",0")
        assert len(rep.trajectories) == 2
        traj = rep.trajectories[0].read_text().splitlines()
        assert traj[0] == "epoch,omega" and len(traj) == 3
        assert rep.missing == []

    def test_idempotent(self, exp):
        exp.run_strategy("grid", TASK)
        exp.run_strategy("dynamic", TASK)
        first = {p: p.read_bytes() for p in report(exp.out).summaries}
        second = {p: p.read_bytes() for p in report(exp.out).summaries}
        assert first == second

    def test_missing_runs_listed(self, exp):
        exp.run_strategy("dynamic", TASK)
        victim = exp.run_path(TASK, 1, "dynamic")
        victim.unlink()
        rep = report(exp.out)
        assert rep.missing == [victim.relative_to(exp.out).as_posix()]
        assert rep.summaries and len(rep.trajectories) == 1
