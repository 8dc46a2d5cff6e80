"""Rollouts, interventional sensitivity, and the advantage metric."""

import numpy as np
import pytest

from gabril import envsim, evaluator
from gabril.envsim import (INDICATOR_ORIGIN, INDICATOR_SIZE, N_ACTIONS,
                           EnvConfig, RenderConfig)
from gabril.errors import (ConfigurationError, ContractViolation,
                           UndefinedMetricError)
from gabril.evaluator import (ScriptedExpertPolicy, UniformRandomPolicy, abc,
                              compare, intervention_sensitivity, rollout,
                              tv_distance)

ENV = EnvConfig(render=RenderConfig(confounded=True))


class IndicatorReaderPolicy:
    """Deliberately confounded: decodes the corner patch and echoes it."""

    def action_probs(self, obs_batch):
        r0, c0 = INDICATOR_ORIGIN
        probs = np.zeros((len(obs_batch), N_ACTIONS))
        for i, obs in enumerate(obs_batch):
            patch = obs[0, r0:r0 + INDICATOR_SIZE, c0:c0 + INDICATOR_SIZE]
            match = [np.abs(patch - p).sum()
                     for p in envsim.INDICATOR_PATTERNS]
            probs[i, int(np.argmin(match))] = 1.0
        return probs

    def greedy_actions(self, obs_batch):
        return self.action_probs(obs_batch).argmax(axis=1)


class IndicatorBlindPolicy:
    """Masks the corner patch before deciding; provably intervention-proof."""

    def action_probs(self, obs_batch):
        r0, c0 = INDICATOR_ORIGIN
        probs = np.zeros((len(obs_batch), N_ACTIONS))
        for i, obs in enumerate(obs_batch):
            o = obs.copy()
            o[0, r0:r0 + INDICATOR_SIZE, c0:c0 + INDICATOR_SIZE] = 0.0
            probs[i, int(o.sum() * 1000) % N_ACTIONS] = 1.0
        return probs


class TestTvDistance:
    def test_identical_distributions(self):
        assert tv_distance([0.25] * 4, [0.25] * 4) == 0.0

    def test_disjoint_one_hots(self):
        assert tv_distance([1, 0, 0, 0], [0, 0, 1, 0]) == 1.0

    def test_hand_case(self):
        assert np.allclose(tv_distance([0.5, 0.5, 0, 0], [0.25, 0.25, 0.25, 0.25]),
                           0.5)

    def test_symmetry(self):
        p, q = [0.7, 0.1, 0.1, 0.1], [0.4, 0.3, 0.2, 0.1]
        assert tv_distance(p, q) == tv_distance(q, p)


class TestRollout:
    def test_expert_scores_max_return(self):
        rep = rollout(ScriptedExpertPolicy(), ENV, 10, seed=0)
        assert rep.mean_return == ENV.episode_length

    def test_random_policy_near_chance(self):
        rep = rollout(UniformRandomPolicy(0), ENV, 100, seed=0)
        assert abs(rep.mean_return - 16.0) < 3.0

    def test_deterministic(self):
        a = rollout(UniformRandomPolicy(1), ENV, 5, seed=3)
        b = rollout(UniformRandomPolicy(1), ENV, 5, seed=3)
        assert a.to_dict() == b.to_dict()

    def test_variant_recorded_and_validated(self):
        rep = rollout(ScriptedExpertPolicy(), ENV, 2, seed=0,
                      variant="confounded-shifted")
        assert rep.variant == "confounded-shifted"
        with pytest.raises(ConfigurationError):
            rollout(ScriptedExpertPolicy(), ENV, 2, seed=0, variant="bogus")

    def test_expert_immune_to_shift(self):
        # the scripted expert reads the causal factor, so severing the
        # indicator correlation cannot touch its score
        rep = rollout(ScriptedExpertPolicy(), ENV, 5, seed=1,
                      variant="confounded-shifted")
        assert rep.mean_return == ENV.episode_length

    def test_episode_count_validated(self):
        with pytest.raises(ContractViolation):
            rollout(ScriptedExpertPolicy(), ENV, 0, seed=0)


class TestInterventionSensitivity:
    def test_indicator_reader_is_maximally_sensitive(self):
        rep = intervention_sensitivity(IndicatorReaderPolicy(), ENV, 10, seed=0)
        assert rep.mean_tv == 1.0 and rep.max_tv == 1.0

    def test_indicator_blind_policy_scores_zero(self):
        rep = intervention_sensitivity(IndicatorBlindPolicy(), ENV, 10, seed=0)
        assert rep.mean_tv == 0.0 and rep.max_tv == 0.0

    def test_pair_count_per_state(self):
        rep = intervention_sensitivity(IndicatorBlindPolicy(), ENV, 4, seed=1)
        assert len(rep.per_state) == 4
        assert all(len(row) == 6 for row in rep.per_state)

    def test_deterministic(self):
        a = intervention_sensitivity(IndicatorReaderPolicy(), ENV, 5, seed=2)
        b = intervention_sensitivity(IndicatorReaderPolicy(), ENV, 5, seed=2)
        assert a.per_state == b.per_state


class TestAbc:
    def test_published_alien_scores(self):
        assert abs(abc(1576.2, 1395.1) - 12.98) < 0.01

    def test_sign_and_zero(self):
        assert abc(90.0, 100.0) == -10.0
        assert abc(100.0, 100.0) == 0.0

    def test_zero_baseline_undefined(self):
        with pytest.raises(UndefinedMetricError):
            abc(10.0, 0.0)


# Published per-environment scores for the BC baseline and the
# gaze-regularized method, used to check the aggregate advantage table.
PUBLISHED = {
    "Alien": (1002.2, 1148.8), "Assault": (730.4, 773.0),
    "Asterix": (514.1, 689.9), "Breakout": (5.0, 7.9),
    "ChopperCommand": (2270.0, 2759.0), "DemonAttack": (263.2, 436.7),
    "Enduro": (291.0, 306.8), "Freeway": (22.14, 22.77),
    "Frostbite": (990.7, 1601.9), "MsPacman": (1435.1, 1637.3),
    "Phoenix": (1638.4, 2006.9), "Qbert": (3597.1, 5839.8),
    "RoadRunner": (9177.3, 9165.7), "Seaquest": (405.8, 567.7),
    "UpNDown": (4270.2, 4273.8),
}


class TestCompare:
    @staticmethod
    def manifests():
        rows = []
        for env_name, (bc, gab) in PUBLISHED.items():
            rows.append({"method": "BC", "environment": env_name, "score": bc})
            rows.append({"method": "GABRIL", "environment": env_name,
                         "score": gab})
        return rows

    def test_mean_abc_reproduces_published_value(self):
        _, record = compare(self.manifests())
        assert abs(record["methods"]["GABRIL"]["mean_abc"] - 27.1) < 0.5

    def test_bc_advantage_over_itself_is_zero(self):
        _, record = compare(self.manifests())
        assert record["methods"]["BC"]["mean_abc"] == 0.0

    def test_table_text_mentions_methods(self):
        table, _ = compare(self.manifests())
        assert "GABRIL" in table and "BC" in table

    def test_missing_baseline_rejected(self):
        with pytest.raises(ConfigurationError):
            compare([{"method": "GABRIL", "environment": "X", "score": 1.0}])

    def test_empty_input_rejected(self):
        with pytest.raises(ConfigurationError):
            compare([])
