# tests/test_training.py
"""
Tests for the training objective, optimizer and epoch loop
"""
import math
from unittest.mock import patch

import numpy as np
import pandas as pd
import pytest

from tests import TINY_EVENT, TINY_GATE, TINY_TRAIN, tiny_dataset
from utils.event_utils import EventConfig
from utils.gate_utils import GateNetConfig
from utils.snn_utils import TAU_RANGE, VTH_RANGE
from utils.tensor_utils import Parameter, Tensor, add, finite_difference_check, matmul, reshape, sigmoid
from utils.training_utils import (
    EPOCH_COLUMNS,
    AdamW,
    Batch,
    ClipDataset,
    LossCalculator,
    TrainConfig,
    Trainer,
    build_model,
    clip_grad_norm,
    cosine_factor,
    evaluate,
    load_model,
)
from utils.validation_utils import NumericError, ValidationError


@pytest.fixture(scope='module')
def dataset():
    return tiny_dataset(n_pairs=2)


def make_trainer(dataset, seed=TINY_TRAIN['seed'], **overrides):
    values = dict(TINY_TRAIN)
    values.update(overrides)
    model = build_model(dataset, GateNetConfig(**TINY_GATE), EventConfig(**TINY_EVENT), seed=seed)
    return Trainer(model, TrainConfig(**values))


def brute_force_supcon(features, labels, temperature):
    z = features / np.linalg.norm(features, axis=1, keepdims=True)
    losses = []
    for i in range(len(labels)):
        positives = [p for p in range(len(labels)) if p != i and labels[p] == labels[i]]
        if not positives:
            continue
        denom = sum(math.exp(z[i] @ z[a] / temperature) for a in range(len(labels)) if a != i)
        losses.append(-np.mean([math.log(math.exp(z[i] @ z[p] / temperature) / denom) for p in positives]))
    return float(np.mean(losses))


class TestBCE:
    """Test binary cross-entropy"""

    def test_half(self):
        """Test p = 0.5 gives ln 2 for either label"""
        assert LossCalculator.bce_value(0.5, 0) == pytest.approx(math.log(2.0))
        assert LossCalculator.bce_value(0.5, 1) == pytest.approx(math.log(2.0))

    def test_exact_prediction(self):
        """Test p = y is clamped to a tiny loss"""
        assert LossCalculator.bce_value(1.0, 1) == pytest.approx(0.0, abs=1e-6)
        assert LossCalculator.bce_value(0.0, 0) == pytest.approx(0.0, abs=1e-6)

    def test_label_smoothing(self):
        """Test p = 0.8, y = 1, s = 0.1"""
        expected = -0.95 * math.log(0.8) - 0.05 * math.log(0.2)
        assert LossCalculator.bce_value(0.8, 1, smoothing=0.1) == pytest.approx(expected)
        assert expected == pytest.approx(0.2925, abs=1e-4)


class TestSupCon:
    """Test the supervised contrastive term"""

    def test_identical_pair(self):
        """Test two identical same-label features"""
        assert LossCalculator.supcon(np.ones((2, 3)), [1, 1]).item() == pytest.approx(0.0, abs=1e-12)

    def test_no_positives(self):
        """Test two samples of different labels"""
        features = np.random.default_rng(0).standard_normal((2, 3))
        assert LossCalculator.supcon(features, [0, 1]).item() == 0.0

    def test_against_double_loop(self):
        """Test a 2 + 2 batch against a direct evaluation"""
        features = np.random.default_rng(1).standard_normal((4, 5))
        labels = [0, 1, 0, 1]
        value = LossCalculator.supcon(features, labels, 0.07).item()
        assert value == pytest.approx(brute_force_supcon(features, labels, 0.07), rel=1e-9)

    def test_unpaired_anchor_excluded(self):
        """Test an anchor without positives does not dilute the average"""
        features = np.random.default_rng(2).standard_normal((3, 4))
        value = LossCalculator.supcon(features, [0, 0, 1], 0.5).item()
        assert value == pytest.approx(brute_force_supcon(features, [0, 0, 1], 0.5), rel=1e-9)

    def test_gradient(self):
        """Test SupCon gradients against central differences"""
        labels = [0, 1, 0, 1]
        point = np.random.default_rng(3).standard_normal((4, 3))
        assert finite_difference_check(lambda f: LossCalculator.supcon(f, labels, 0.5), point) < 1e-4


class TestRatePenalty:
    """Test the firing-rate prior"""

    @pytest.mark.parametrize('rate,expected', [(0.15, 0.0), (0.25, 1e-4), (0.0, 2.25e-4)])
    def test_values(self, rate, expected):
        """Test 0.01 (s - 0.15)^2"""
        assert LossCalculator.rate_penalty(rate).item() == pytest.approx(expected, abs=1e-15)


class TestTotalLoss:
    """Test composition of the objective"""

    def test_heads_at_half(self):
        """Test (1 + lambda_aux) ln 2 with degenerate SupCon and s = r*"""
        half = np.full(2, 0.5)
        features = np.random.default_rng(0).standard_normal((2, 4))
        loss, parts = LossCalculator.total_loss(half, half, features, np.array([0, 1]), 0.15, TrainConfig())
        assert loss.item() == pytest.approx(1.2 * math.log(2.0))
        assert parts['supcon'] == 0.0 and parts['rate'] == 0.0

    def test_main_only(self):
        """Test zero auxiliary weights leave the main BCE"""
        rng = np.random.default_rng(1)
        y_hat, y_snn = rng.uniform(0.1, 0.9, 4), rng.uniform(0.1, 0.9, 4)
        labels = np.array([0, 1, 1, 0])
        cfg = TrainConfig(lambda_aux=0.0, lambda_supcon=0.0, lambda_rate=0.0)
        loss, _ = LossCalculator.total_loss(y_hat, y_snn, rng.standard_normal((4, 3)), labels, 0.4, cfg)
        assert loss.item() == LossCalculator.bce(y_hat, labels, cfg.label_smoothing).item()

    def test_head_weight_gradient(self):
        """Test the loss gradient for a head weight against central differences"""
        rng = np.random.default_rng(2)
        features = rng.standard_normal((4, 3))
        labels = np.array([0, 1, 0, 1])
        cfg = TrainConfig()

        def loss_of(w):
            logits = reshape(matmul(Tensor(features), w), (4,))
            p = sigmoid(logits)
            fused = add(Tensor(features), reshape(logits, (4, 1)))
            return LossCalculator.total_loss(p, p, fused, labels, 0.2, cfg)[0]

        point = rng.standard_normal((3, 1)) * 0.1
        assert finite_difference_check(loss_of, point) < 1e-4

    def test_anomaly_term_optional(self):
        """Test the anomaly BCE only counts when weighted"""
        half = np.full(2, 0.5)
        trace = np.full((2, 4), 0.5)
        features = np.ones((2, 3))
        off, parts_off = LossCalculator.total_loss(half, half, features, np.array([0, 1]), 0.15, TrainConfig(),
                                                   trace=trace)
        on, parts_on = LossCalculator.total_loss(half, half, features, np.array([0, 1]), 0.15,
                                                 TrainConfig(lambda_anom=0.2), trace=trace)
        assert parts_off['anomaly'] == 0.0
        assert parts_on['anomaly'] == pytest.approx(math.log(2.0))
        assert on.item() == pytest.approx(off.item() + 0.2 * math.log(2.0))


class TestAdamW:
    """Test the optimizer update"""

    def test_zero_gradient_no_decay(self):
        """Test parameters stay put"""
        p = Parameter(np.array([1.0, -2.0]), name='p')
        opt = AdamW([p], lr=0.1, weight_decay=0.0)
        for _ in range(5):
            opt.step()
        np.testing.assert_array_equal(p.data, [1.0, -2.0])

    def test_constant_gradient(self):
        """Test each step moves by lr against the gradient sign"""
        p = Parameter(np.zeros(2), name='p')
        opt = AdamW([p], lr=0.01, weight_decay=0.0)
        for _ in range(40):
            p.grad = np.array([3.0, -0.5])
            opt.step()
        np.testing.assert_allclose(p.data, [-0.4, 0.4], rtol=1e-6)

    def test_decay_only(self):
        """Test w <- w (1 - lr wd)"""
        p = Parameter(np.array([2.0]), name='p')
        opt = AdamW([p], lr=0.1, weight_decay=0.5)
        opt.step()
        opt.step()
        assert p.data[0] == pytest.approx(2.0 * 0.95 ** 2)

    def test_groups_and_fixed_parameters(self):
        """Test per-group learning rates and skipping fixed parameters"""
        fast, slow = Parameter(np.zeros(1), 'fast'), Parameter(np.zeros(1), 'slow')
        fixed = Parameter(np.zeros(1), 'fixed', learnable=False)
        opt = AdamW([{'params': [fast, fixed]}, {'params': [slow], 'lr': 0.001}], lr=0.1, weight_decay=0.0)
        for p in (fast, slow, fixed):
            p.grad = np.ones(1)
        opt.step()
        assert fast.data[0] == pytest.approx(-0.1)
        assert slow.data[0] == pytest.approx(-0.001)
        assert fixed.data[0] == 0.0
        opt.set_lr_factor(0.5)
        assert opt.param_groups[1]['lr'] == pytest.approx(0.0005)


class TestClipGradNorm:
    """Test global norm clipping"""

    def test_small_norm(self):
        """Test norm 0.5 is untouched"""
        p = Parameter(np.zeros(2), 'p')
        p.grad = np.array([0.3, 0.4])
        assert clip_grad_norm([p]) == 1.0
        np.testing.assert_allclose(p.grad, [0.3, 0.4])

    def test_large_norm(self):
        """Test norm 4 scales by 0.25 to exactly 1"""
        a, b = Parameter(np.zeros(1), 'a'), Parameter(np.zeros(1), 'b')
        a.grad, b.grad = np.array([0.0]), np.array([4.0])
        assert clip_grad_norm([a, b], 1.0) == pytest.approx(0.25)
        assert math.hypot(a.grad[0], b.grad[0]) <= 1.0 + 1e-9

    def test_zero_gradients(self):
        """Test all-zero gradients"""
        assert clip_grad_norm([Parameter(np.zeros(3), 'p')]) == 1.0


class TestSchedule:
    """Test the cosine learning-rate factor"""

    def test_endpoints(self):
        """Test 1 at the start, 0.5 halfway, 0 at the end"""
        assert cosine_factor(0, 10) == 1.0
        assert cosine_factor(5, 10) == pytest.approx(0.5)
        assert cosine_factor(10, 10) == pytest.approx(0.0)
        assert cosine_factor(3, 0) == 1.0


class TestTrainConfig:
    """Test training configuration"""

    def test_rejects_negative_weights(self):
        """Test negative loss weights"""
        with pytest.raises(ValidationError):
            TrainConfig(lambda_aux=-0.1)

    def test_rejects_zero_temperature(self):
        """Test SupCon temperature must be positive"""
        with pytest.raises(ValidationError):
            TrainConfig(supcon_temperature=0.0)

    def test_rejects_wrong_types(self):
        """Test string and boolean values for numeric fields"""
        with pytest.raises(ValidationError, match="epochs"):
            TrainConfig.from_dict({'epochs': '1'})
        with pytest.raises(ValidationError, match="lr"):
            TrainConfig.from_dict({'lr': False})
        assert TrainConfig.from_dict({'lr': 1}).lr == 1

    def test_negative_clip_norm(self):
        """Test the clipping norm must be non-negative"""
        with pytest.raises(ValidationError, match="grad_clip_norm must be non-negative"):
            TrainConfig(grad_clip_norm=-1.0)

    def test_round_trip(self):
        """Test dict conversion"""
        cfg = TrainConfig(epochs=3, seed=9)
        assert TrainConfig.from_dict(cfg.to_dict()) == cfg


class TestDataset:
    """Test clip datasets and batching"""

    def test_shapes(self, dataset):
        """Test pooled maps, labels and video vectors"""
        assert len(dataset) == 4
        assert dataset.pooled.shape == (4, 6, 6, 7, 7)
        assert dataset.video_dim == 8
        assert list(dataset.labels) == [0, 1, 0, 1]

    def test_shuffled_batches_cover_all(self, dataset):
        """Test every clip appears once per pass"""
        seen = [name for batch in dataset.batches(3, np.random.default_rng(0)) for name in batch.names]
        assert sorted(seen) == sorted(dataset.names)

    def test_batch_labels(self):
        """Test batch validation"""
        with pytest.raises(ValidationError):
            Batch(np.zeros((1, 2, 4, 7, 7)), np.array([2]))
        with pytest.raises(ValidationError):
            Batch(np.zeros((0, 2, 4, 7, 7)), np.array([]))

    def test_pixel_only(self):
        """Test datasets without embeddings have four channels and no video"""
        data = tiny_dataset(n_pairs=1, with_embeddings=False)
        assert data.channels == 4 and data.video is None


class TestTrainer:
    """Test the epoch loop"""

    def test_determinism(self, dataset):
        """Test two runs with one seed give the same loss"""
        first = make_trainer(dataset).fit(dataset, epochs=1)
        second = make_trainer(dataset).fit(dataset, epochs=1)
        assert first['loss'].iloc[0] == second['loss'].iloc[0]

    def test_zero_learning_rate(self, dataset):
        """Test lr = 0 leaves parameters unchanged"""
        trainer = make_trainer(dataset, lr=0.0)
        before = trainer.model.state_dict()
        trainer.fit(dataset, epochs=1)
        after = trainer.model.state_dict()
        for name, value in before.items():
            np.testing.assert_array_equal(after[name], value)

    def test_history_columns_and_clamp(self, dataset):
        """Test epoch rows and LIF ranges after training"""
        trainer = make_trainer(dataset, lr=0.05)
        history = trainer.fit(dataset, epochs=2)
        assert list(history.columns) == EPOCH_COLUMNS
        assert list(history['epoch']) == [1, 2]
        tau, v_th = trainer.model.lif.params.recovered()
        assert np.all((tau >= TAU_RANGE[0]) & (tau <= TAU_RANGE[1]))
        assert np.all((v_th >= VTH_RANGE[0]) & (v_th <= VTH_RANGE[1]))
        assert np.all(history['grad_scale'] <= 1.0)

    def test_silent_branch_flag(self, dataset):
        """Test the auxiliary head is flagged when it receives no gradient"""
        history = make_trainer(dataset, lambda_aux=0.0).fit(dataset, epochs=1)
        assert bool(history['silent_sdtb'].iloc[0]) is True
        history = make_trainer(dataset).fit(dataset, epochs=1)
        assert bool(history['silent_sdtb'].iloc[0]) is False

    def test_non_finite_loss(self, dataset):
        """Test a NaN loss aborts with the step position"""
        trainer = make_trainer(dataset)
        with patch.object(LossCalculator, 'total_loss', return_value=(Tensor(np.nan), {})):
            with pytest.raises(NumericError, match='epoch 1 step 0'):
                trainer.train_epoch(dataset, 1)

    def test_outputs_written(self, dataset, tmp_path):
        """Test the CSV log and the checkpoint after fit"""
        trainer = make_trainer(dataset)
        ckpt, log = tmp_path / 'model.spkc', tmp_path / 'log.csv'
        trainer.fit(dataset, epochs=1, checkpoint_path=ckpt, log_path=log)
        log_df = pd.read_csv(log)
        assert list(log_df.columns) == EPOCH_COLUMNS
        assert len(log_df) == 1

        model, run_config = load_model(ckpt)
        assert run_config['train']['epochs'] == TINY_TRAIN['epochs']
        original = trainer.model(dataset.pooled, dataset.video).fused.y_hat.data
        np.testing.assert_array_equal(model(dataset.pooled, dataset.video).fused.y_hat.data, original)

    def test_zero_epochs_still_checkpoint(self, dataset, tmp_path):
        """Test epochs = 0 writes an untrained checkpoint"""
        ckpt = tmp_path / 'init.spkc'
        history = make_trainer(dataset).fit(dataset, epochs=0, checkpoint_path=ckpt)
        assert history.empty
        assert ckpt.exists()


class TestEvaluate:
    """Test scoring"""

    def test_scores_and_summary(self, dataset):
        """Test per-clip rows and the summary"""
        model = make_trainer(dataset).model
        scores, summary = evaluate(model, dataset)
        assert list(scores.columns) == ['clip', 'label', 'score', 'score_snn', 'prediction']
        assert summary['clips'] == 4
        assert summary['auc'] == pytest.approx(0.5)
        assert 0.0 <= summary['accuracy'] <= 1.0

    def test_single_class(self, dataset):
        """Test AUC is reported as missing for one class"""
        single = ClipDataset(dataset.pooled[[0, 2]], [0, 0], dataset.video[[0, 2]])
        model = make_trainer(dataset).model
        _, summary = evaluate(model, single)
        assert summary['auc'] is None
