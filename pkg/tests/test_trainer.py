"""Training loop: determinism, gaze thinning, and the lambda=0 reduction."""

import numpy as np
import pytest

import gabril.autodiff as ad
from gabril import envsim, trainer
from gabril.envsim import EnvConfig, RenderConfig
from gabril.errors import ContractViolation
from gabril.gaze import MaskParams
from gabril.model import ModelConfig, PolicyModel
from gabril.trainer import (TrainConfig, apply_gaze_fraction, flatten_dataset,
                            train)

SMALL_ENV = EnvConfig(render=RenderConfig(confounded=True), episode_length=16)
SMALL_MODEL = ModelConfig(conv1=(4, 5, 2, 0), conv2=(8, 3, 2, 1), hidden=16)
MASKS = MaskParams(alpha=0.7, beta=0.99, gamma=3.0, k=3)


def small_config(**kwargs):
    base = dict(seed=0, epochs=2, batch_size=32, lam=0.0, mask_params=MASKS,
                model=SMALL_MODEL, env=SMALL_ENV)
    base.update(kwargs)
    return TrainConfig(**base)


@pytest.fixture(scope="module")
def dataset():
    return envsim.collect(SMALL_ENV, 12, seed=3)


class TestConfig:
    def test_round_trips_through_dict(self):
        cfg = small_config(lam=2.5, gaze_fraction=0.4)
        assert TrainConfig.from_dict(cfg.to_dict()) == cfg

    def test_invalid_gaze_fraction_rejected(self):
        with pytest.raises(ContractViolation):
            small_config(gaze_fraction=1.5)

    def test_invalid_batch_size_rejected(self):
        with pytest.raises(ContractViolation):
            small_config(batch_size=0)


class TestGazeFraction:
    def test_exact_count_kept(self, dataset):
        n_total = sum(len(r) for r in dataset)
        for fraction in (0.0, 0.2, 0.5, 1.0):
            thinned = apply_gaze_fraction(dataset, fraction, seed=0)
            kept = sum(s.valid for r in thinned for s in r.gaze)
            assert kept == round(fraction * n_total)

    def test_deterministic_selection(self, dataset):
        a = apply_gaze_fraction(dataset, 0.3, seed=5)
        b = apply_gaze_fraction(dataset, 0.3, seed=5)
        assert all(sa.valid == sb.valid for ra, rb in zip(a, b)
                   for sa, sb in zip(ra.gaze, rb.gaze))

    def test_coordinates_preserved_on_dropped_frames(self, dataset):
        thinned = apply_gaze_fraction(dataset, 0.5, seed=1)
        for orig, thin in zip(dataset, thinned):
            for so, st in zip(orig.gaze, thin.gaze):
                assert (so.x, so.y) == (st.x, st.y)
            assert orig.actions == thin.actions

    def test_observations_untouched(self, dataset):
        thinned = apply_gaze_fraction(dataset, 0.2, seed=2)
        for orig, thin in zip(dataset, thinned):
            assert thin.observations is orig.observations


class TestFlatten:
    def test_shapes(self, dataset):
        obs, actions, masks, valid = flatten_dataset(dataset, MASKS, (40, 40))
        n = sum(len(r) for r in dataset)
        assert obs.shape == (n, 1, 40, 40)
        assert actions.shape == (n,)
        assert masks.shape == (n, 40, 40)
        assert valid.shape == (n,)

    def test_all_valid_when_gaze_complete(self, dataset):
        _, _, _, valid = flatten_dataset(dataset, MASKS, (40, 40))
        assert valid.all()

    def test_dropped_frames_marked_invalid(self, dataset):
        thinned = apply_gaze_fraction(dataset, 0.25, seed=0)
        _, _, _, valid = flatten_dataset(thinned, MASKS, (40, 40))
        assert valid.sum() == round(0.25 * len(valid))


class TestTrain:
    def test_bit_identical_metrics_across_runs(self, dataset):
        cfg = small_config(lam=5.0)
        _, m1 = train(cfg, dataset)
        _, m2 = train(cfg, dataset)
        assert m1.steps == m2.steps
        assert m1.evals == m2.evals

    def test_seed_changes_trajectory(self, dataset):
        _, m1 = train(small_config(seed=0), dataset)
        _, m2 = train(small_config(seed=1), dataset)
        assert m1.loss_sequence() != m2.loss_sequence()

    def test_empty_dataset_rejected(self):
        with pytest.raises(ContractViolation):
            train(small_config(), [])

    def test_overfits_small_dataset(self, dataset):
        cfg = small_config(epochs=60, learning_rate=3e-3, val_fraction=0.0)
        subset = dataset[:2]   # 32 frames
        model, metrics = train(cfg, subset)
        obs, actions, _, _ = flatten_dataset(subset, MASKS, (40, 40),
                                             with_masks=False)
        final_bc = ad.cross_entropy(model.act(model.encode(obs)), actions)
        assert final_bc.item() < 0.01

    def test_lambda_zero_matches_reference_loop(self, dataset):
        """Training with lam=0 must be bit-identical to a plain cloning loop
        that has no gaze machinery at all."""
        cfg = small_config(epochs=2, val_fraction=0.0)
        _, metrics = train(cfg, dataset)

        obs, actions, _, _ = flatten_dataset(dataset, cfg.mask_params,
                                             (40, 40), with_masks=False)
        model = PolicyModel(cfg.model, lam=0.0, seed=cfg.seed)
        opt = ad.Adam(model.parameters(), lr=cfg.learning_rate)
        rng = np.random.default_rng([cfg.seed, 101])
        perm = rng.permutation(len(actions))
        losses = []
        for _ in range(cfg.epochs):
            order = rng.permutation(len(perm))
            for start in range(0, len(order), cfg.batch_size):
                idx = perm[order[start:start + cfg.batch_size]]
                loss = ad.cross_entropy(model.act(model.encode(obs[idx])),
                                        actions[idx])
                ad.backward(loss)
                opt.step()
                opt.zero_grad()
                losses.append(loss.item())
        assert losses == metrics.loss_sequence()

    def test_checkpoints_written(self, dataset, tmp_path):
        out = tmp_path / "run.gbck"
        train(small_config(), dataset, checkpoint_path=out)
        assert out.exists()
        assert (tmp_path / "run.gbck.best").exists()

    def test_gaze_loss_logged_when_lambda_positive(self, dataset):
        _, metrics = train(small_config(lam=3.0), dataset)
        assert any(s[2] > 0.0 for s in metrics.steps)
        _, metrics0 = train(small_config(lam=0.0), dataset)
        assert all(s[2] == 0.0 for s in metrics0.steps)
