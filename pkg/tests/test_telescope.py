"""Telescopic estimator: exactness, gradient linearity, warmup protocol."""

import numpy as np
import pytest

from msgnn.datasets import gen_sbm
from msgnn.engine import (
    backward,
    flatten_weights,
    forward,
    init_model,
    nll_loss_with_grad,
)
from msgnn.graphs import GraphData, LabelVector, Masks, NodeSelection, restrict_data
from msgnn.telescope import (
    IdentitySampler,
    SubsetPairSampler,
    TelescopeConfig,
    TelescopeError,
    loss_gap_gamma,
    telescope_gradient,
    telescopic_loss,
    train_ms_gradient,
)
from msgnn.training import TrainSchedule, train_single_level


def fine_loss_and_grad(model, data):
    logits, tape = forward(model, data.graph, data.x)
    loss, dlogits = nll_loss_with_grad(logits, data.y, data.masks.train)
    return loss, backward(tape, dlogits)


def grads_max_dev(a, b):
    return max(np.max(np.abs(ga[k] - gb[k])) for ga, gb in zip(a, b) for k in ga)


class TestLossGapGamma:
    def test_matches_small_reference_gap(self):
        assert loss_gap_gamma(0.94, 1.0) == pytest.approx(0.06)

    def test_equal_losses(self):
        assert loss_gap_gamma(1.3, 1.3) == 0.0

    def test_double_loss(self):
        assert loss_gap_gamma(2.0, 1.0) == 1.0

    def test_zero_fine_loss_rejected(self):
        with pytest.raises(TelescopeError):
            loss_gap_gamma(0.5, 0.0)


class TestConfig:
    def test_default_samples_double_toward_coarse(self):
        assert TelescopeConfig(levels=3).samples() == (1, 2, 4)

    def test_decreasing_counts_rejected(self):
        with pytest.raises(TelescopeError):
            TelescopeConfig(levels=2, samples_per_term=(3, 1))

    def test_retain_fraction_bounds(self):
        with pytest.raises(TelescopeError):
            TelescopeConfig(retain_fraction=1.0)

    def test_equal_counts_allowed_for_diagnostics(self):
        cfg = TelescopeConfig(levels=2, samples_per_term=(1, 1))
        assert cfg.samples() == (1, 1)


class TestTelescopicLoss:
    @pytest.fixture(scope="class")
    def data(self):
        return gen_sbm(64, 4, 0.2, 0.03, seed=0)

    def test_single_level_is_plain_fine_loss(self, data):
        model = init_model("gcn", [4, 6, 4], np.random.default_rng(0))
        value, terms = telescopic_loss(model, IdentitySampler(data),
                                       TelescopeConfig(levels=1))
        fine, _ = fine_loss_and_grad(model, data)
        assert value == pytest.approx(fine, abs=1e-15)
        assert len(terms) == 1

    def test_identical_data_telescopes_exactly(self, data):
        model = init_model("gcn", [4, 6, 4], np.random.default_rng(1))
        for levels in (2, 3, 5):
            cfg = TelescopeConfig(levels=levels, samples_per_term=(1,) * levels)
            value, _ = telescopic_loss(model, IdentitySampler(data), cfg)
            fine, _ = fine_loss_and_grad(model, data)
            assert abs(value - fine) < 1e-10

    def test_two_scale_hand_case(self, data):
        """R=2 with M=(1,2): value must equal the hand-assembled combination."""

        class ScriptedSampler:
            def __init__(self, fine, coarse_draws):
                self.fine = fine
                self.coarse_draws = list(coarse_draws)
                self.pair_draws = []

            def sample_chain(self, r):
                assert r == 2
                return self.coarse_draws.pop(0)

            def pair(self, r):
                assert r == 2
                return self.fine, self.coarse_draws.pop(0)

        rng = np.random.default_rng(2)
        draws = []
        for _ in range(3):
            keep = np.sort(rng.choice(64, size=32, replace=False))
            draws.append(restrict_data(data, NodeSelection(keep)))
        model = init_model("gcn", [4, 6, 4], np.random.default_rng(3))

        losses = []
        for d in draws + [data]:
            logits, _ = forward(model, d.graph, d.x)
            loss, _ = nll_loss_with_grad(logits, d.y, d.masks.train, need_grad=False)
            losses.append(loss)
        want = 0.5 * (losses[0] + losses[1]) + (losses[3] - losses[2])

        sampler = ScriptedSampler(data, draws)
        cfg = TelescopeConfig(levels=2, samples_per_term=(1, 2))
        value, terms = telescopic_loss(model, sampler, cfg)
        assert value == pytest.approx(want, abs=1e-12)
        assert len(terms) == 4

    def test_gradient_equals_weighted_term_combination(self, data):
        """Backward through the estimator = independently recomputed
        per-term gradients combined with the same signs and weights."""

        class RecordingSampler:
            """Wraps a sampler and remembers every draw in term order."""

            def __init__(self, inner):
                self.inner = inner
                self.draws = []

            def sample_chain(self, r):
                d = self.inner.sample_chain(r)
                self.draws.append((1.0, d))
                return d

            def pair(self, r):
                finer, coarser = self.inner.pair(r)
                self.draws.append((1.0, finer))
                self.draws.append((-1.0, coarser))
                return finer, coarser

        model = init_model("gcn", [4, 6, 4], np.random.default_rng(4))
        sampler = RecordingSampler(SubsetPairSampler(data, 0.75,
                                                     np.random.default_rng(5)))
        cfg = TelescopeConfig(levels=3)
        _, terms = telescopic_loss(model, sampler, cfg)
        got = telescope_gradient(model, terms)

        from msgnn.engine import accumulate, zero_gradients

        assert len(sampler.draws) == len(terms)
        want = zero_gradients(model)
        for (sign, draw), term in zip(sampler.draws, terms):
            assert sign * abs(term.coef) == pytest.approx(term.coef)
            logits, tape = forward(model, draw.graph, draw.x)
            _, dlogits = nll_loss_with_grad(logits, draw.y, draw.masks.train)
            accumulate(want, backward(tape, dlogits), term.coef)
        assert grads_max_dev(got, want) < 1e-10

    def test_shared_samples_gradient_matches_fine(self, data):
        model = init_model("gcn", [4, 6, 4], np.random.default_rng(6))
        cfg = TelescopeConfig(levels=2, samples_per_term=(1, 1))
        _, terms = telescopic_loss(model, IdentitySampler(data), cfg)
        tele_grad = telescope_gradient(model, terms)
        _, fine_grad = fine_loss_and_grad(model, data)
        assert grads_max_dev(tele_grad, fine_grad) < 1e-10


class TestSubsetPairSampler:
    def test_pairs_are_nested(self):
        data = gen_sbm(40, 2, 0.3, 0.05, seed=1)
        # unique feature rows identify nodes across restrictions
        x = np.arange(40, dtype=float)[:, None] @ np.ones((1, 2))
        data = GraphData(data.graph, x, data.y, data.masks)
        sampler = SubsetPairSampler(data, 0.75, np.random.default_rng(2))
        finer, coarser = sampler.pair(2)
        fine_ids = set(finer.x[:, 0].tolist())
        coarse_ids = set(coarser.x[:, 0].tolist())
        assert coarse_ids < fine_ids
        assert len(coarser.x) == round(0.75 * len(finer.x))

    def test_scale_sizes_compose(self):
        data = gen_sbm(64, 2, 0.3, 0.05, seed=3)
        sampler = SubsetPairSampler(data, 0.5, np.random.default_rng(4))
        assert sampler.sample_chain(1).num_nodes == 64
        assert sampler.sample_chain(2).num_nodes == 32
        assert sampler.sample_chain(3).num_nodes == 16


class TestTrainMsGradient:
    @pytest.fixture(scope="class")
    def data(self):
        return gen_sbm(96, 3, 0.25, 0.02, feature_noise=0.6, seed=5)

    def test_switch_epoch_zero_equals_plain_training(self, data):
        cfg = TelescopeConfig(levels=2, retain_fraction=0.75, switch_epoch=0)
        m1 = init_model("gcn", [3, 8, 3], np.random.default_rng(0))
        m1, log = train_ms_gradient(m1, data, cfg, TrainSchedule((25,), 1e-2, 5, seed=1))
        m2 = init_model("gcn", [3, 8, 3], np.random.default_rng(0))
        m2, logb = train_single_level(m2, data, TrainSchedule((25,), 1e-2, 5, seed=1))
        assert np.array_equal(flatten_weights(m1), flatten_weights(m2))
        assert [r.train_loss for r in log.records] == [
            r.train_loss for r in logb.records
        ]

    def test_warmup_phase_uses_coarse_scale_and_fewer_flops(self, data):
        cfg = TelescopeConfig(levels=2, retain_fraction=0.75, switch_epoch=20)
        model = init_model("gcn", [3, 8, 3], np.random.default_rng(1))
        model, log = train_ms_gradient(
            model, data, cfg, TrainSchedule((40,), 1e-2, 4, seed=2)
        )
        levels = {r.level for r in log.records}
        assert levels == {1, 2}
        base = init_model("gcn", [3, 8, 3], np.random.default_rng(1))
        _, logb = train_single_level(base, data, TrainSchedule((40,), 1e-2, 4, seed=2))
        assert log.total_flops() < logb.total_flops()

    def test_multi_budget_schedule_rejected(self, data):
        cfg = TelescopeConfig(levels=2, switch_epoch=1)
        with pytest.raises(Exception):
            train_ms_gradient(
                init_model("gcn", [3, 8, 3], np.random.default_rng(0)),
                data, cfg, TrainSchedule((5, 5), 1e-2, 5, 0),
            )
