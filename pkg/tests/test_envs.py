"""Matrix game tests: observations, reward sampling, ground truth, spec files."""

import json

import numpy as np
import pytest

from dfac.distributions import NormalSpec
from dfac.envs import (
    benchmark_spec,
    ground_truth,
    load_spec,
    parse_spec,
    reset,
    spec_to_dict,
    step,
)
from dfac.seeding import stream


@pytest.fixture(scope="module")
def game():
    return benchmark_spec()


class TestReset:
    def test_two_agent_observations(self, game):
        obs = reset(game)
        assert np.array_equal(obs[0], [1.0, 1.0, 0.0])
        assert np.array_equal(obs[1], [1.0, 0.0, 1.0])

    def test_three_agent_observation(self):
        spec = parse_spec({
            "agents": 3,
            "actions": [["x"], ["x"], ["x"]],
            "payoff": [{"action": ["x", "x", "x"], "mean": 1.0, "std": 0.0}],
        })
        assert np.array_equal(reset(spec)[2], [1.0, 0.0, 0.0, 1.0])


class TestStep:
    def test_deterministic_cell_exact(self, game):
        rng = stream(0, "env")
        joint = game.action_indices(["C1", "C2"])
        for _ in range(20):
            t = step(game, joint, rng)
            assert t.reward == 6.0
            assert t.done

    def test_out_of_range_action_rejected(self, game):
        with pytest.raises(ValueError):
            step(game, (0, 5), stream(0, "env"))

    def test_seeded_determinism(self, game):
        a = [step(game, (0, 0), stream(42, "env")).reward for _ in range(1)]
        b = [step(game, (0, 0), stream(42, "env")).reward for _ in range(1)]
        assert a == b

    @pytest.mark.slow
    def test_monte_carlo_moments_all_cells(self, game):
        # sample mean within 5 standard errors of mu, sample variance within
        # 5 standard errors of sigma^2, at 1e5 draws per cell
        rng = stream(123, "env-mc")
        n = 100_000
        for joint, payoff in game.payoff.items():
            rewards = np.asarray([step(game, joint, rng).reward for _ in range(n)])
            mean_se = payoff.std / np.sqrt(n)
            assert abs(rewards.mean() - payoff.mean) <= max(5 * mean_se, 1e-12)
            var = payoff.std**2
            if payoff.std == 0.0:
                assert np.all(rewards == payoff.mean)
            else:
                var_se = var * np.sqrt(2.0 / (n - 1))
                assert abs(rewards.var(ddof=1) - var) <= 5 * var_se

    def test_quick_moments_stochastic_cell(self, game):
        rng = stream(7, "env-quick")
        joint = game.action_indices(["A1", "A2"])
        rewards = np.asarray([step(game, joint, rng).reward for _ in range(20_000)])
        assert rewards.mean() == pytest.approx(8.0, abs=0.15)
        assert rewards.var(ddof=1) == pytest.approx(8.0, abs=0.6)


class TestGroundTruth:
    def test_benchmark_optimum(self, game):
        truth = ground_truth(game)
        assert truth.optimal_action == (0, 0)
        assert truth.optimal_return == 8.0
        only_best = [i for i, m in enumerate(truth.means) if m == 8.0]
        assert only_best == [truth.optimal_index]

    def test_constant_payoffs_tie_break_first(self):
        spec = parse_spec({
            "agents": 2,
            "actions": [["a", "b"], ["a", "b"]],
            "payoff": [{"action": [x, y], "mean": 3.0, "std": 0.0}
                       for x in ("a", "b") for y in ("a", "b")],
        })
        truth = ground_truth(spec)
        assert truth.optimal_action == (0, 0)
        assert truth.optimal_return == 3.0

    def test_single_agent_game(self):
        spec = parse_spec({
            "agents": 1,
            "actions": [["l", "r"]],
            "payoff": [
                {"action": ["l"], "mean": 0.0, "std": 1.0},
                {"action": ["r"], "mean": 1.0, "std": 1.0},
            ],
        })
        truth = ground_truth(spec)
        assert truth.optimal_action == (1,)
        assert list(truth.means) == [0.0, 1.0]


class TestSpecFiles:
    def test_bundled_benchmark_matches_published_table(self, game):
        truth = ground_truth(game)
        expected = {
            ("A1", "A2"): (8, 8), ("A1", "B2"): (-12, 6), ("A1", "C2"): (-12, 4),
            ("B1", "A2"): (-12, 6), ("B1", "B2"): (6, 4), ("B1", "C2"): (0, 2),
            ("C1", "A2"): (-12, 4), ("C1", "B2"): (0, 2), ("C1", "C2"): (6, 0),
        }
        for names, (mu, var) in expected.items():
            payoff = game.payoff[game.action_indices(names)]
            assert payoff.mean == mu
            assert payoff.std**2 == pytest.approx(var, abs=1e-12)
        assert truth.optimal_return == 8

    def test_missing_payoff_entry_rejected(self):
        with pytest.raises(ValueError, match="missing"):
            parse_spec({
                "agents": 2,
                "actions": [["a", "b"], ["a", "b"]],
                "payoff": [{"action": ["a", "a"], "mean": 1, "std": 0}],
            })

    def test_empty_payoff_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            parse_spec({"agents": 1, "actions": [["a"]], "payoff": []})

    def test_negative_std_rejected_with_location(self):
        with pytest.raises(ValueError, match=r"payoff\[1\]"):
            parse_spec({
                "agents": 1,
                "actions": [["a", "b"]],
                "payoff": [
                    {"action": ["a"], "mean": 1, "std": 0},
                    {"action": ["b"], "mean": 1, "std": -1},
                ],
            })

    def test_unknown_keys_rejected(self):
        with pytest.raises(ValueError, match="unknown"):
            parse_spec({"agents": 1, "actions": [["a"]], "payoff": [], "foo": 1})

    def test_load_rejects_malformed_json(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{not json", encoding="utf-8")
        with pytest.raises(ValueError, match="line"):
            load_spec(path)

    def test_file_roundtrip(self, game, tmp_path):
        path = tmp_path / "game.json"
        path.write_text(json.dumps(spec_to_dict(game)), encoding="utf-8")
        back = load_spec(path)
        assert back.action_names == game.action_names
        assert back.payoff == game.payoff


class TestSampler:
    def test_inverse_cdf_sampling_matches_quantiles(self):
        # the sampler is the quantile function applied to open-interval
        # uniforms; spot-check the transform against direct evaluation
        spec = NormalSpec(0.0, 1.0)
        rng = stream(5, "sampler")
        draws = np.asarray([
            step(
                parse_spec({
                    "agents": 1, "actions": [["a"]],
                    "payoff": [{"action": ["a"], "mean": 0.0, "std": 1.0}],
                }),
                (0,), rng,
            ).reward
            for _ in range(4000)
        ])
        assert abs(draws.mean()) < 0.1
        assert np.all(np.isfinite(draws))
        assert draws.std() == pytest.approx(1.0, abs=0.05)
