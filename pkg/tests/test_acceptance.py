# tests/test_acceptance.py
"""
End-to-end checks on the synthetic dataset
Full-size training runs are slow; enable them with SPIKETRACE_RUN_SLOW=1
"""
import time

import numpy as np
import pandas as pd
import pytest

import config
from tests import TEST_CONFIG, TINY_EVENT, TINY_GATE
from utils.analytics_utils import raw_anomaly_trace
from utils.demo_utils import load_pairs
from utils.event_utils import EventConfig, residual_frame_means
from utils.gate_utils import GateNetConfig
from utils.training_utils import ClipDataset, TrainConfig, Trainer, build_model, evaluate

slow = pytest.mark.skipif(not TEST_CONFIG['run_slow'], reason="set SPIKETRACE_RUN_SLOW=1 to run training checks")

SEEDS = config.TRAIN_SETTINGS['seeds']

# Desk-scale acceptance set
FULL_SYNTH = {'frames': 8, 'size': 56}
FULL_TRAIN_PAIRS = 200
FULL_TEST_PAIRS = 50
CPU_BUDGET_SECONDS = 600.0
CONVERGED_ACCURACY = 0.95

# Smoke-sized set used by default
SMOKE_SYNTH = {'frames': 6, 'size': 28}
SMOKE_TRAIN = {'epochs': 2, 'batch_size': 4, 'lr': 3e-3}


def split(train_pairs, test_pairs, event_config, synth):
    train = ClipDataset.from_clips(*load_pairs(train_pairs, base_seed=0, with_embeddings=False, **synth),
                                   event_config)
    test = ClipDataset.from_clips(*load_pairs(test_pairs, base_seed=10_000, with_embeddings=False, **synth),
                                  event_config)
    return train, test


def train_and_score(train, test, gate_config, event_config, train_config):
    """Train one model; return it with its held-out AUC, epoch history and wall time"""
    model = build_model(train, gate_config, event_config, seed=train_config.seed)
    start = time.perf_counter()
    history = Trainer(model, train_config).fit(train)
    seconds = time.perf_counter() - start
    _, summary = evaluate(model, test)
    return {'model': model, 'auc': summary['auc'], 'history': history, 'seconds': seconds}


def epochs_to_converge(history, target=CONVERGED_ACCURACY):
    """First epoch whose training accuracy reaches target; epochs + 1 when it never does"""
    reached = np.flatnonzero(history['accuracy'].values >= target)
    return int(history['epoch'].iloc[reached[0]]) if reached.size else len(history) + 1


class TestAnomalyTraceSeparation:
    """Test the raw anomaly trace orders the two classes"""

    def test_class_means(self):
        """Test natural clips accumulate more residual energy at every t >= 2"""
        clips, _ = load_pairs(10, with_embeddings=False, frames=8, size=28)
        traces = np.array([raw_anomaly_trace(residual_frame_means(c)) for c in clips])
        labels = np.array([c.label for c in clips])
        natural, generated = traces[labels == 0].mean(axis=0), traces[labels == 1].mean(axis=0)
        assert np.all(natural[1:] > generated[1:])

    @slow
    def test_class_means_full_size(self):
        """Test the same ordering on 56 x 56 clips"""
        clips, _ = load_pairs(FULL_TEST_PAIRS, with_embeddings=False, **FULL_SYNTH)
        traces = np.array([raw_anomaly_trace(residual_frame_means(c)) for c in clips])
        labels = np.array([c.label for c in clips])
        assert np.all(traces[labels == 0].mean(axis=0)[1:] > traces[labels == 1].mean(axis=0)[1:])


class TestSmokeTraining:
    """Test the acceptance pipelines end to end on a handful of tiny clips"""

    @pytest.fixture(scope='class')
    def data(self):
        event_config = EventConfig(**TINY_EVENT)
        train, test = split(4, 2, event_config, SMOKE_SYNTH)
        return train, test, event_config

    def run(self, data, **gate_values):
        train, test, event_config = data
        gate_config = GateNetConfig(**dict(TINY_GATE, sdtb_only=True, **gate_values))
        return train_and_score(train, test, gate_config, event_config,
                               TrainConfig(seed=TEST_CONFIG['seed'], **SMOKE_TRAIN))

    def test_sdtb_only_run(self, data):
        """Test an SDTB-only model trains and scores the held-out pairs"""
        result = self.run(data)
        assert result['model'].video_dim == 0
        assert list(result['history']['epoch']) == [1, 2]
        assert np.all(np.isfinite(result['history']['loss']))
        assert 0.0 <= result['auc'] <= 1.0

    def test_fixed_lif_stays_fixed(self, data):
        """Test fixed LIF keeps tau and V_th while learnable LIF moves them"""
        fixed, learnable = self.run(data, learnable_lif=False), self.run(data, learnable_lif=True)
        initial = build_model(data[0], GateNetConfig(**dict(TINY_GATE, sdtb_only=True)), data[2],
                              seed=TEST_CONFIG['seed']).lif.params.recovered()
        for before, after in zip(initial, fixed['model'].lif.params.recovered()):
            np.testing.assert_array_equal(after, before)
        moved = learnable['model'].lif.params.recovered()
        assert any(not np.allclose(after, before) for before, after in zip(initial, moved))
        assert 0.0 <= fixed['auc'] <= 1.0 and 0.0 <= learnable['auc'] <= 1.0

    def test_convergence_epoch(self):
        """Test the convergence epoch counts from 1 and marks runs that never converge"""
        history = pd.DataFrame({'epoch': [1, 2, 3], 'accuracy': [0.5, 0.96, 1.0]})
        assert epochs_to_converge(history) == 2
        assert epochs_to_converge(history.assign(accuracy=[0.1, 0.2, 0.3])) == 4


@pytest.fixture(scope='module')
def full_split():
    event_config = EventConfig()
    train, test = split(FULL_TRAIN_PAIRS, FULL_TEST_PAIRS, event_config, FULL_SYNTH)
    return train, test, event_config


def full_runs(full_split, learnable_lif):
    train, test, event_config = full_split
    gate_config = GateNetConfig(sdtb_only=True, learnable_lif=learnable_lif)
    return [train_and_score(train, test, gate_config, event_config, TrainConfig(seed=seed)) for seed in SEEDS]


@pytest.fixture(scope='module')
def learnable_runs(full_split):
    return full_runs(full_split, learnable_lif=True)


@pytest.fixture(scope='module')
def fixed_runs(full_split):
    return full_runs(full_split, learnable_lif=False)


@slow
class TestSdtbOnlyAcceptance:
    """Test the desk-config SDTB-only model on 200 clips per class, median over three seeds"""

    def test_dataset_shape(self, full_split):
        """Test the acceptance set is 200 clips per class at T = 8"""
        train, _, _ = full_split
        assert len(train) == 2 * FULL_TRAIN_PAIRS
        assert int(np.sum(train.labels)) == FULL_TRAIN_PAIRS
        assert train.frames == 8

    def test_median_auc(self, learnable_runs):
        """Test held-out AUC of at least 0.95"""
        assert np.median([run['auc'] for run in learnable_runs]) >= 0.95

    def test_cpu_budget(self, learnable_runs):
        """Test training finishes within ten minutes"""
        assert np.median([run['seconds'] for run in learnable_runs]) <= CPU_BUDGET_SECONDS

    def test_loss_decreases(self, learnable_runs):
        """Test the last epoch improves on the first"""
        drops = [run['history']['loss'].iloc[-1] - run['history']['loss'].iloc[0] for run in learnable_runs]
        assert np.median(drops) < 0.0

    def test_rate_in_band(self, learnable_runs):
        """Test the regularized firing rate settles in [0.05, 0.5]"""
        rates = [run['history']['firing_rate'].iloc[-1] for run in learnable_runs]
        assert 0.05 <= np.median(rates) <= 0.5
        assert not any(run['history']['silent_sdtb'].any() for run in learnable_runs)


@slow
class TestLearnableLifAcceptance:
    """Test learnable LIF against fixed LIF, median over three seeds"""

    def test_auc_not_worse(self, learnable_runs, fixed_runs):
        """Test learnable AUC >= fixed AUC - 0.01"""
        learnable = np.median([run['auc'] for run in learnable_runs])
        fixed = np.median([run['auc'] for run in fixed_runs])
        assert learnable >= fixed - 0.01

    def test_converges_no_later(self, learnable_runs, fixed_runs):
        """Test learnable LIF reaches 95% training accuracy in no more epochs"""
        learnable = np.median([epochs_to_converge(run['history']) for run in learnable_runs])
        fixed = np.median([epochs_to_converge(run['history']) for run in fixed_runs])
        assert learnable <= fixed
