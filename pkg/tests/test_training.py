import numpy as np
import pytest

from maxsquare.datasets import ClassificationDomainSpec, gen_classification_pair
from maxsquare.errors import ConfigError, DomainError, ShapeError
from maxsquare.models import MlpSpec, init_params, mlp_forward
from maxsquare.training import (
    LossLogRow,
    OptimizerState,
    TrainConfig,
    adapt,
    anneal_lr,
    confidence_split,
    poly_lr,
    pretrain_source,
    read_loss_log,
    sgd_step,
    write_loss_log,
)
from maxsquare import autodiff as ad

BLOBS = ClassificationDomainSpec(
    num_classes=2,
    samples_per_class=60,
    means=((-2.0, 0.0), (2.0, 0.0)),
    cov_scale=0.5,
    target_shift=(0.4, 0.2),
    target_noise=0.1,
    seed=21,
)
MLP = MlpSpec(2, (16,), 2)


class TestSchedules:
    def test_poly_endpoints(self):
        assert poly_lr(2.5e-4, 0, 2000) == 2.5e-4
        assert poly_lr(2.5e-4, 2000, 2000) == 0.0

    def test_poly_midpoint_value(self):
        # 2.5e-4 * 0.5^0.9, frozen from high-precision evaluation
        assert poly_lr(2.5e-4, 1000, 2000, 0.9) == pytest.approx(
            1.3397168281703666e-4, rel=1e-12
        )

    def test_poly_domain(self):
        with pytest.raises(DomainError):
            poly_lr(1e-3, 0, 0)
        with pytest.raises(DomainError):
            poly_lr(1e-3, 5, 4)

    def test_anneal_values(self):
        assert anneal_lr(0.01, 0.0) == 0.01
        # 0.01 / 11^0.75, frozen from high-precision evaluation
        assert anneal_lr(0.01, 1.0) == pytest.approx(1.6556002607617017e-3, rel=1e-12)
        assert anneal_lr(0.01, 0.7, alpha=0.0) == 0.01

    def test_schedules_nonincreasing(self):
        polys = [poly_lr(1e-2, i, 100) for i in range(101)]
        anneals = [anneal_lr(1e-2, i / 100) for i in range(101)]
        assert all(a >= b for a, b in zip(polys, polys[1:]))
        assert all(a >= b for a, b in zip(anneals, anneals[1:]))


class TestSgd:
    def test_zero_grad_zero_decay_is_identity(self):
        params = {"w": ad.parameter(np.array([1.0, -2.0]))}
        state = OptimizerState.initial(params)
        out, _ = sgd_step(params, {"w": np.zeros(2)}, state, 0.1, 0.9, 0.0)
        assert np.array_equal(out["w"].array, params["w"].array)

    def test_first_step_plain_gradient(self):
        params = {"w": ad.parameter(np.array([1.0, 2.0]))}
        state = OptimizerState.initial(params)
        g = {"w": np.array([0.5, -1.0])}
        out, _ = sgd_step(params, g, state, 0.1, 0.9, 0.0)
        np.testing.assert_allclose(out["w"].array, [0.95, 2.1], atol=1e-15)

    def test_two_steps_momentum_unrolled(self):
        # v1 = g, v2 = 0.9 g + g; total displacement = 2.9 * lr * g
        params = {"w": ad.parameter(np.array([1.0, 2.0]))}
        state = OptimizerState.initial(params)
        g = {"w": np.array([0.5, -1.0])}
        p1, s1 = sgd_step(params, g, state, 0.1, 0.9, 0.0)
        p2, _ = sgd_step(p1, g, s1, 0.1, 0.9, 0.0)
        np.testing.assert_allclose(
            p2["w"].array - params["w"].array, -2.9 * 0.1 * g["w"], atol=1e-15
        )

    def test_momentum_zero_reduces_to_gradient_descent(self):
        params = {"w": ad.parameter(np.array([3.0]))}
        state = OptimizerState.initial(params)
        g = {"w": np.array([2.0])}
        out, state = sgd_step(params, g, state, 0.25, 0.0, 0.0)
        assert out["w"].array[0] == 3.0 - 0.25 * 2.0

    def test_weight_decay_added_to_gradient(self):
        params = {"w": ad.parameter(np.array([2.0]))}
        state = OptimizerState.initial(params)
        out, _ = sgd_step(params, {"w": np.zeros(1)}, state, 0.1, 0.0, 0.5)
        assert out["w"].array[0] == pytest.approx(2.0 - 0.1 * 0.5 * 2.0, abs=1e-15)

    def test_shape_mismatch(self):
        params = {"w": ad.parameter(np.zeros(2))}
        state = OptimizerState.initial(params)
        with pytest.raises(ShapeError):
            sgd_step(params, {"w": np.zeros(3)}, state, 0.1, 0.9, 0.0)


class TestPretrain:
    def test_zero_iterations_returns_initialization(self):
        src, _ = gen_classification_pair(BLOBS)
        cfg = TrainConfig.for_classification(pretrain_iter=0, seed=5)
        params = pretrain_source(MLP, src, cfg)
        ref = init_params(MLP, seed=5)
        assert all(np.array_equal(params[k].array, ref[k].array) for k in params)

    def test_separable_blobs_reach_high_accuracy(self):
        src, _ = gen_classification_pair(BLOBS)
        cfg = TrainConfig.for_classification(pretrain_iter=500, seed=0)
        params = pretrain_source(MLP, src, cfg)
        probs = mlp_forward(MLP, params, src.features).array
        assert (probs.argmax(1) == src.labels).mean() >= 0.95

    def test_deterministic(self):
        src, _ = gen_classification_pair(BLOBS)
        cfg = TrainConfig.for_classification(pretrain_iter=120, seed=3)
        a = pretrain_source(MLP, src, cfg)
        b = pretrain_source(MLP, src, cfg)
        assert all(np.array_equal(a[k].array, b[k].array) for k in a)


class TestAdapt:
    def test_log_length_and_determinism(self):
        src, tgt = gen_classification_pair(BLOBS)
        cfg = TrainConfig.for_classification(pretrain_iter=50, max_iter=40, seed=1)
        pre = pretrain_source(MLP, src, cfg)
        p1, log1 = adapt(MLP, dict(pre), src, tgt.features, cfg)
        p2, log2 = adapt(MLP, dict(pre), src, tgt.features, cfg)
        assert len(log1) == cfg.max_iter
        assert log1 == log2
        assert all(np.array_equal(p1[k].array, p2[k].array) for k in p1)

    def test_lambda_zero_matches_ce_only_regardless_of_selector(self):
        src, tgt = gen_classification_pair(BLOBS)
        pre = init_params(MLP, seed=2)
        outs = []
        for loss in ("entropy", "maxsquare", "maxsquare_iw"):
            cfg = TrainConfig.for_classification(
                loss, lambda_t=0.0, pretrain_iter=0, max_iter=30, seed=2
            )
            params, log = adapt(MLP, dict(pre), src, tgt.features, cfg)
            outs.append((params, log))
        ref_params, ref_log = outs[0]
        for params, log in outs[1:]:
            assert all(
                np.array_equal(ref_params[k].array, params[k].array) for k in params
            )
            assert [r.loss_ce for r in log] == [r.loss_ce for r in ref_log]

    def test_loss_totals_compose(self):
        src, tgt = gen_classification_pair(BLOBS)
        cfg = TrainConfig.for_classification("maxsquare", pretrain_iter=0, max_iter=10, seed=4)
        _, log = adapt(MLP, init_params(MLP, seed=4), src, tgt.features, cfg)
        for row in log:
            assert row.loss_total == pytest.approx(
                row.loss_ce + cfg.lambda_t * row.loss_target, rel=1e-12
            )

    def test_multi_level_rejected_for_mlp(self):
        src, tgt = gen_classification_pair(BLOBS)
        cfg = TrainConfig.for_classification(pretrain_iter=0, max_iter=1, multi_level=True)
        with pytest.raises(ConfigError):
            adapt(MLP, init_params(MLP), src, tgt.features, cfg)


class TestConfidenceSplit:
    def test_distinct_confidences(self):
        p = np.array([[0.9, 0.1], [0.55, 0.45], [0.75, 0.25]])
        top, bottom = confidence_split(p, 1 / 3)
        assert list(top) == [0] and list(bottom) == [1]

    def test_counts(self):
        rng = np.random.default_rng(0)
        p = rng.dirichlet(np.ones(3), size=10)
        top, bottom = confidence_split(p, 0.3)
        assert len(top) == 3 and len(bottom) == 3

    def test_ties_resolve_to_lowest_index(self):
        p = np.full((4, 2), 0.5)
        top, bottom = confidence_split(p, 0.5)
        assert list(top) == [0, 1] and list(bottom) == [0, 1]

    def test_empty(self):
        top, bottom = confidence_split(np.zeros((0, 2)), 0.3)
        assert top.size == 0 and bottom.size == 0

    def test_fraction_domain(self):
        with pytest.raises(DomainError):
            confidence_split(np.full((2, 2), 0.5), 0.6)


class TestLossLog:
    def test_roundtrip_and_byte_determinism(self, tmp_path):
        log = [
            LossLogRow(0, 0.01, 1.25, 1.0, 2.5),
            LossLogRow(1, 0.009, -0.5, 0.1, -6.0),
        ]
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        write_loss_log(log, a)
        write_loss_log(log, b)
        assert a.read_bytes() == b.read_bytes()
        assert read_loss_log(a) == log

    def test_header(self, tmp_path):
        path = tmp_path / "log.csv"
        write_loss_log([], path)
        assert path.read_text().splitlines()[0] == "iter,lr,loss_total,loss_ce,loss_target"


class TestTrainConfig:
    def test_unknown_loss_rejected(self):
        with pytest.raises(ConfigError):
            TrainConfig(loss="kl")

    def test_momentum_range(self):
        with pytest.raises(ConfigError):
            TrainConfig(momentum=1.0)

    def test_classification_presets_follow_loss(self):
        assert TrainConfig.for_classification("maxsquare").lambda_t == 0.3
        assert TrainConfig.for_classification("entropy").lambda_t == 0.03
        cfg = TrainConfig.for_classification("entropy")
        assert cfg.schedule == "anneal" and cfg.lr0 == 0.01

    def test_segmentation_defaults(self):
        cfg = TrainConfig()
        assert cfg.lambda_t == 0.1 and cfg.alpha == 0.2 and cfg.delta == 0.95
        assert cfg.lambda_low == 0.1 and cfg.momentum == 0.9
        assert cfg.weight_decay == 5e-4 and cfg.poly_power == 0.9
