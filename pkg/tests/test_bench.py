from pathlib import Path

import numpy as np
import pytest

from arpex import bench
from arpex.bench import PolicySpec
from arpex.trainer import TrainConfig

DATA = Path(__file__).parent / "data"


class TestPolicySpec:
    @pytest.mark.parametrize("text,expected", [("gaussian", PolicySpec("gaussian")), ("arp:3:0.8", PolicySpec("arp", 3, 0.8)), (" ARP:5:0.5 ", PolicySpec("arp", 5, 0.5))])
    def test_parse(self, text, expected):
        assert PolicySpec.parse(text) == expected

    @pytest.mark.parametrize("text", ["ou", "arp:3", "arp:x:0.5"])
    def test_parse_errors(self, text):
        with pytest.raises(ValueError):
            PolicySpec.parse(text)

    def test_round_trip_str(self):
        assert str(PolicySpec.parse("arp:3:0.95")) == "arp:3:0.95"


class TestExploration:
    @pytest.mark.parametrize("spec", ["gaussian", "arp:1:0.5", "arp:3:0.9", "arp:5:0.8"])
    @pytest.mark.parametrize("scale", [1.0, 3.0])
    def test_kernel_matches_reference(self, spec, scale):
        fast = bench.explore_episodes(10, spec, 2000, seed=3, sigma_scale=scale)
        slow = bench.explore_episodes_reference(10, spec, 2000, seed=3, sigma_scale=scale)
        assert len(fast) > 0
        np.testing.assert_array_equal(fast, slow)

    def test_chunking_invariant(self):
        a = bench.explore_episodes(50, "arp:3:0.8", 5000, seed=1)
        b = bench.explore_episodes(50, "arp:3:0.8", 5000, seed=1, chunk=777)
        np.testing.assert_array_equal(a, b)

    def test_timeouts_flagged(self):
        from arpex.envs import SquareParams

        lengths = bench.explore_episodes(10, "gaussian", 500, seed=0, params=SquareParams(action_rate=10, episode_cap_seconds=5.0))
        assert np.all(lengths[lengths < 0] == -50)

    def test_report(self):
        r = bench.summarize_exploration(10.0, "gaussian", 1.0, 100.0, [0], [np.array([20, -10000, 40])])
        assert r.episodes_completed == 2 and r.episodes_timed_out == 1
        assert r.mean_time == pytest.approx((2.0 + 1000.0 + 4.0) / 3)
        assert r.median_time == 4.0 and not r.censored

    def test_censored(self):
        r = bench.summarize_exploration(10.0, "gaussian", 1.0, 100.0, [0], [np.zeros(0, dtype=np.int64)])
        assert r.censored and r.mean_time == 100.0

    def test_mean_time_at_least_dt(self):
        for r in bench.run_exploration([25.0], ["gaussian", "arp:3:0.9"], 2000, seeds=[0, 1]):
            assert r.mean_time >= 1 / 25
            assert r.seeds == [0, 1]

    def test_deterministic(self):
        a = bench.run_exploration([50.0], ["arp:3:0.95"], 3000, seeds=[4])
        b = bench.run_exploration([50.0], ["arp:3:0.95"], 3000, seeds=[4])
        assert a == b


class TestTrajectories:
    def test_golden_file(self):
        rows = bench.run_trajectories(100, "arp:3:0.8", 10, 2, seed=0)
        golden = bench.read_csv(DATA / "trajectory_arp3_0.8_100hz_seed0.csv")
        assert len(rows) == len(golden) == 2 * 1001
        got = np.array([[r["run"], r["t"], r["x"], r["y"]] for r in rows])
        ref = np.array([[float(g[k]) for k in ("run", "t", "x", "y")] for g in golden])
        np.testing.assert_allclose(got, ref, rtol=1e-12, atol=1e-15)

    def test_inside_arena(self):
        rows = bench.run_trajectories(10, "gaussian", 10, 3, seed=1, sigma_scale=10.0)
        xy = np.array([[r["x"], r["y"]] for r in rows])
        assert np.all(np.abs(xy) <= 5.0)

    def test_no_termination(self):
        rows = bench.run_trajectories(10, "arp:3:0.95", 30, 1, seed=2)
        assert rows[-1]["t"] == pytest.approx(30.0)

    def test_white_noise_covers_less(self):
        white = np.median(bench.bounding_box_areas(bench.run_trajectories(100, "arp:3:0.0", 10, 5, seed=0)))
        smooth = np.median(bench.bounding_box_areas(bench.run_trajectories(100, "arp:3:0.95", 10, 5, seed=0)))
        assert white / smooth < 0.3

    def test_bounding_box(self):
        rows = [{"run": 0, "x": 0.0, "y": 0.0}, {"run": 0, "x": 2.0, "y": -1.0}, {"run": 1, "x": 1.0, "y": 1.0}]
        np.testing.assert_array_equal(bench.bounding_box_areas(rows), [2.0, 0.0])


class TestLearning:
    def test_evaluate_first_episodes(self):
        from arpex.trainer import make_policy

        pol = make_policy(("arp", 3, 0.9), TrainConfig(), np.random.default_rng(0))
        returns = bench.evaluate(pol, 10.0, episodes=4, seed=0, episode_cap_seconds=20.0)
        assert returns.shape == (4,)
        assert np.all((returns < 0) & (returns >= -20.0 - 1e-9))

    def test_evaluate_deterministic(self):
        from arpex.trainer import make_policy

        pol = make_policy("gaussian", TrainConfig(), np.random.default_rng(0))
        a = bench.evaluate(pol, 10.0, episodes=3, seed=5, episode_cap_seconds=30.0)
        b = bench.evaluate(pol, 10.0, episodes=3, seed=5, episode_cap_seconds=30.0)
        np.testing.assert_array_equal(a, b)

    def test_run_learning_small(self):
        cfg = TrainConfig(batch_size=256, opt_batch=64, opt_epochs=1, hidden=(8,), n_envs=4, episode_cap_seconds=30.0)
        runs = bench.run_learning(10.0, "arp:3:0.8", 51.2, seeds=[0, 1], config=cfg, eval_episodes=2)
        assert [r.seed for r in runs] == [0, 1]
        rows = bench.learning_curve_rows(runs)
        assert len(rows) == 2
        assert rows[-1]["sim_seconds"] == pytest.approx(51.2)

    def test_white_noise_run_equals_gaussian(self):
        cfg = TrainConfig(batch_size=256, opt_batch=64, opt_epochs=1, hidden=(8,), n_envs=4, episode_cap_seconds=30.0)
        a = bench.run_learning_seed(10.0, "arp:3:0.0", 0, TrainConfig(**{**cfg.__dict__, "total_sim_seconds": 51.2}), eval_episodes=2)
        g = bench.run_learning_seed(10.0, "gaussian", 0, TrainConfig(**{**cfg.__dict__, "total_sim_seconds": 51.2}), eval_episodes=2)
        assert a.initial_eval == pytest.approx(g.initial_eval, abs=1e-10)
        assert a.final_eval == pytest.approx(g.final_eval, abs=1e-10)
        for ra, rg in zip(a.history, g.history):
            assert ra["kl"] == pytest.approx(rg["kl"], abs=1e-10)


class TestCsv:
    def test_round_trip(self, tmp_path):
        rows = [{"a": 1, "b": 0.1}, {"a": 2, "b": np.float64(1 / 3)}]
        bench.write_csv(tmp_path / "x.csv", rows, ["a", "b"])
        text = (tmp_path / "x.csv").read_text()
        assert text.startswith("# arpex-v1\na,b\n")
        back = bench.read_csv(tmp_path / "x.csv")
        assert float(back[1]["b"]) == 1 / 3
