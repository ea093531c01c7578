# utils/training_utils.py
"""
Training objective, AdamW optimizer, gradient clipping, datasets and the epoch loop
"""
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

import config
from . import tensor_utils as tu
from .analytics_utils import MetricsCalculator
from .event_utils import Clip, EmbeddingSequence, EventConfig, EventEncoder
from .export_utils import CheckpointIO, ManifestIO, ReportGenerator, TensorFileIO
from .gate_utils import ForwardResult, GateNetConfig, SpikeGateNet
from .logging_utils import get_logger
from .validation_utils import ArrayValidator, ConfigValidator, NumericError, SpikeTraceError, ValidationError

logger = get_logger(__name__)

PROB_EPS = 1e-7

EPOCH_COLUMNS = ['epoch', 'loss', 'bce_main', 'bce_aux', 'supcon', 'rate', 'anomaly', 'firing_rate',
                 'accuracy', 'lr', 'grad_scale', 'aux_grad_norm', 'silent_sdtb']


@dataclass
class TrainConfig:
    """Loss weights, optimizer constants and loop settings"""
    lambda_aux: float = config.TRAIN_SETTINGS['lambda_aux']
    lambda_supcon: float = config.TRAIN_SETTINGS['lambda_supcon']
    lambda_rate: float = config.TRAIN_SETTINGS['lambda_rate']
    lambda_anom: float = config.TRAIN_SETTINGS['lambda_anom']
    rate_target: float = config.TRAIN_SETTINGS['rate_target']
    supcon_temperature: float = config.TRAIN_SETTINGS['supcon_temperature']
    label_smoothing: float = config.TRAIN_SETTINGS['label_smoothing']
    grad_clip_norm: float = config.TRAIN_SETTINGS['grad_clip_norm']
    lr: float = config.TRAIN_SETTINGS['lr']
    weight_decay: float = config.TRAIN_SETTINGS['weight_decay']
    betas: List[float] = field(default_factory=lambda: list(config.TRAIN_SETTINGS['betas']))
    adam_eps: float = config.TRAIN_SETTINGS['adam_eps']
    lr_schedule: str = config.TRAIN_SETTINGS['lr_schedule']
    epochs: int = config.TRAIN_SETTINGS['epochs']
    batch_size: int = config.TRAIN_SETTINGS['batch_size']
    seed: int = config.TRAIN_SETTINGS['seed']
    silent_grad_threshold: float = config.TRAIN_SETTINGS['silent_grad_threshold']

    def __post_init__(self):
        ConfigValidator.require(
            *(ConfigValidator.validate_non_negative(getattr(self, name), name)
              for name in ('lambda_aux', 'lambda_supcon', 'lambda_rate', 'lambda_anom',
                           'weight_decay', 'lr', 'label_smoothing', 'grad_clip_norm')),
            ConfigValidator.validate_positive(self.supcon_temperature, 'supcon_temperature'),
            ConfigValidator.validate_positive(self.adam_eps, 'adam_eps'),
        )
        if self.lr_schedule not in ('cosine', 'constant'):
            raise ValidationError(f"unknown lr schedule '{self.lr_schedule}'")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValidationError("batch size must be >= 1 and epochs >= 0")

    def to_dict(self) -> Dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, values: Dict) -> 'TrainConfig':
        ConfigValidator.validate_keys('train', values, [f.name for f in fields(cls)])
        ConfigValidator.validate_types('train', values, asdict(cls()))
        return cls(**values)


@dataclass
class Batch:
    """Stacked inputs for one optimizer step"""
    pooled: np.ndarray                 # B x T x C x G x G
    labels: np.ndarray                 # B
    video: Optional[np.ndarray] = None  # B x D
    names: List[str] = field(default_factory=list)

    def __post_init__(self):
        if len(self.labels) == 0:
            raise ValidationError("batch must contain at least one sample")
        if not np.all(np.isin(self.labels, (0, 1))):
            raise ValidationError("batch labels must be 0 or 1")

    def __len__(self):
        return len(self.labels)


class ClipDataset:
    """Clips with their precomputed pooled event maps and video vectors"""

    def __init__(self, pooled: np.ndarray, labels: Sequence[int], video: Optional[np.ndarray] = None,
                 names: Optional[List[str]] = None, clips: Optional[List[Clip]] = None,
                 embeddings: Optional[List[Optional[EmbeddingSequence]]] = None):
        self.pooled = np.asarray(pooled, dtype=np.float64)
        self.labels = np.asarray(labels, dtype=np.int64)
        self.video = None if video is None else np.asarray(video, dtype=np.float64)
        self.names = names or [f'clip_{i:04d}' for i in range(len(self.labels))]
        self.clips = clips or []
        self.embeddings = embeddings or []
        if len(self.labels) == 0:
            raise ValidationError("dataset is empty")

    def __len__(self):
        return len(self.labels)

    @property
    def frames(self) -> int:
        return self.pooled.shape[1]

    @property
    def channels(self) -> int:
        return self.pooled.shape[2]

    @property
    def video_dim(self) -> int:
        return 0 if self.video is None else self.video.shape[1]

    @classmethod
    def from_clips(cls, clips: List[Clip], embeddings: Optional[List[Optional[EmbeddingSequence]]] = None,
                   event_config: Optional[EventConfig] = None, names: Optional[List[str]] = None) -> 'ClipDataset':
        encoder = EventEncoder(event_config)
        embeddings = embeddings or [None] * len(clips)
        pooled = [encoder.pooled_channels(clip, emb)[0] for clip, emb in zip(clips, embeddings)]
        have_video = encoder.config.use_embeddings and all(emb is not None for emb in embeddings)
        video = np.stack([emb.video_vector() for emb in embeddings]) if have_video else None
        channel_counts = {p.shape[1] for p in pooled}
        if len(channel_counts) != 1:
            raise ValidationError("clips mix embedding and pixel-only inputs")
        return cls(np.stack(pooled), [c.label for c in clips], video, names, clips, embeddings)

    @classmethod
    def from_directory(cls, data_dir: Union[str, Path], event_config: Optional[EventConfig] = None) -> 'ClipDataset':
        """Load every manifest entry of a dataset directory"""
        data_dir = Path(data_dir)
        clips, embeddings, names = [], [], []
        for entry in ManifestIO.read(data_dir):
            frames = TensorFileIO.read(data_dir / entry['path'])
            clips.append(Clip(np.clip(frames, 0.0, 1.0), label=int(entry['label']),
                              source=entry.get('source', ''), fps=float(entry.get('fps', config.SYNTH_SETTINGS['fps']))))
            emb_path = entry.get('embedding')
            embeddings.append(EmbeddingSequence.from_array(TensorFileIO.read(data_dir / emb_path)) if emb_path else None)
            names.append(Path(entry['path']).stem)
        logger.info(f"Loaded {len(clips)} clips from {data_dir}")
        return cls.from_clips(clips, embeddings, event_config, names)

    def batch(self, indices: Sequence[int]) -> Batch:
        indices = list(indices)
        video = None if self.video is None else self.video[indices]
        return Batch(self.pooled[indices], self.labels[indices], video, [self.names[i] for i in indices])

    def batches(self, batch_size: int, rng: Optional[np.random.Generator] = None) -> Iterator[Batch]:
        order = np.arange(len(self)) if rng is None else rng.permutation(len(self))
        for start in range(0, len(order), batch_size):
            yield self.batch(order[start:start + batch_size])


class LossCalculator:
    """Terms of the training objective"""

    @staticmethod
    def smooth_targets(labels: np.ndarray, smoothing: float) -> np.ndarray:
        return np.asarray(labels, dtype=np.float64) * (1.0 - smoothing) + 0.5 * smoothing

    @staticmethod
    def bce(p, labels, smoothing: float = 0.0) -> tu.Tensor:
        """Batch-mean BCE with probabilities clamped to [1e-7, 1 - 1e-7]"""
        p = tu.clamp(tu.as_tensor(p), PROB_EPS, 1.0 - PROB_EPS)
        y = LossCalculator.smooth_targets(np.atleast_1d(labels), smoothing).reshape(p.shape)
        terms = tu.add(tu.mul(tu.log(p), y), tu.mul(tu.log(tu.sub(1.0, p)), 1.0 - y))
        return tu.neg(tu.mean(terms))

    @staticmethod
    def bce_value(p: float, y: int, smoothing: float = 0.0) -> float:
        return LossCalculator.bce(np.array([p]), np.array([y]), smoothing).item()

    @staticmethod
    def supcon(features, labels, temperature: float = config.TRAIN_SETTINGS['supcon_temperature']) -> tu.Tensor:
        """Supervised contrastive loss over L2-normalized features.

        Anchors without a same-label partner are left out of the average.
        """
        features = tu.as_tensor(features)
        labels = np.asarray(labels)
        n = labels.shape[0]
        if n < 2:
            return tu.Tensor(0.0)
        z = tu.l2_normalize(features, axis=-1)
        sim = tu.mul(tu.matmul(z, tu.transpose(z, (1, 0))), 1.0 / temperature)
        shifted = tu.sub(sim, np.max(sim.data, axis=1, keepdims=True))
        off_diag = 1.0 - np.eye(n)
        positives = (labels[:, None] == labels[None, :]) * off_diag
        counts = positives.sum(axis=1)
        valid = counts > 0
        if not np.any(valid):
            return tu.Tensor(0.0)
        denom = tu.sum_reduce(tu.mul(tu.exp(shifted), off_diag), axis=1, keepdims=True)
        log_prob = tu.sub(shifted, tu.log(denom))
        per_anchor = tu.sum_reduce(tu.mul(log_prob, positives), axis=1)
        weights = np.where(valid, 1.0 / np.maximum(counts, 1), 0.0) / valid.sum()
        return tu.neg(tu.sum_reduce(tu.mul(per_anchor, weights)))

    @staticmethod
    def rate_penalty(rate, target: float = config.TRAIN_SETTINGS['rate_target'],
                     weight: float = config.TRAIN_SETTINGS['lambda_rate']) -> tu.Tensor:
        """weight * (rate - target)^2"""
        gap = tu.sub(tu.as_tensor(rate), target)
        return tu.mul(tu.mul(gap, gap), weight)

    @staticmethod
    def anomaly_term(trace, labels, smoothing: float = 0.0) -> tu.Tensor:
        """BCE(sigma(mean_t(A) - 0.5), y) on the clip-mean trace"""
        score = tu.sigmoid(tu.sub(tu.mean(tu.as_tensor(trace), axis=-1), 0.5))
        return LossCalculator.bce(score, labels, smoothing)

    @staticmethod
    def total_loss(y_hat, y_snn, features, labels, rate, train_config: TrainConfig,
                   trace=None) -> Tuple[tu.Tensor, Dict[str, float]]:
        """BCE + l1 BCE_aux + l2 SupCon + l_rate (s - r*)^2 [+ l_anom anomaly BCE]"""
        cfg = train_config
        main = LossCalculator.bce(y_hat, labels, cfg.label_smoothing)
        total = main
        parts = {'bce_main': main.item(), 'bce_aux': 0.0, 'supcon': 0.0, 'rate': 0.0, 'anomaly': 0.0}
        if cfg.lambda_aux > 0:
            aux = LossCalculator.bce(y_snn, labels, cfg.label_smoothing)
            total = tu.add(total, tu.mul(aux, cfg.lambda_aux))
            parts['bce_aux'] = aux.item()
        if cfg.lambda_supcon > 0:
            con = LossCalculator.supcon(features, labels, cfg.supcon_temperature)
            total = tu.add(total, tu.mul(con, cfg.lambda_supcon))
            parts['supcon'] = con.item()
        if cfg.lambda_rate > 0:
            penalty = LossCalculator.rate_penalty(rate, cfg.rate_target, cfg.lambda_rate)
            total = tu.add(total, penalty)
            parts['rate'] = penalty.item()
        if cfg.lambda_anom > 0 and trace is not None:
            anom = LossCalculator.anomaly_term(trace, labels, cfg.label_smoothing)
            total = tu.add(total, tu.mul(anom, cfg.lambda_anom))
            parts['anomaly'] = anom.item()
        return total, parts


class AdamW:
    """Adaptive-moment optimizer with decoupled weight decay and parameter groups"""

    def __init__(self, params, lr: float = config.TRAIN_SETTINGS['lr'],
                 betas: Sequence[float] = tuple(config.TRAIN_SETTINGS['betas']),
                 eps: float = config.TRAIN_SETTINGS['adam_eps'],
                 weight_decay: float = config.TRAIN_SETTINGS['weight_decay']):
        params = list(params)
        if params and isinstance(params[0], dict):
            groups = params
        else:
            groups = [{'params': params}]
        self.param_groups = []
        for group in groups:
            g = {'lr': lr, 'weight_decay': weight_decay}
            g.update(group)
            g['params'] = [p for p in g['params'] if p.learnable]
            g['base_lr'] = g['lr']
            self.param_groups.append(g)
        self.betas = tuple(betas)
        self.eps = eps
        self.steps = 0
        self.state: Dict[int, Dict[str, np.ndarray]] = {}

    def parameters(self) -> List[tu.Parameter]:
        return [p for g in self.param_groups for p in g['params']]

    def set_lr_factor(self, factor: float):
        for g in self.param_groups:
            g['lr'] = g['base_lr'] * factor

    def step(self):
        self.steps += 1
        beta1, beta2 = self.betas
        bias1 = 1.0 - beta1 ** self.steps
        bias2 = 1.0 - beta2 ** self.steps
        for group in self.param_groups:
            lr, wd = group['lr'], group['weight_decay']
            for p in group['params']:
                slot = self.state.setdefault(id(p), {'m': np.zeros_like(p.data), 'v': np.zeros_like(p.data)})
                g = p.grad
                slot['m'] = beta1 * slot['m'] + (1.0 - beta1) * g
                slot['v'] = beta2 * slot['v'] + (1.0 - beta2) * g * g
                m_hat = slot['m'] / bias1
                v_hat = slot['v'] / bias2
                p.data = p.data * (1.0 - lr * wd) - lr * m_hat / (np.sqrt(v_hat) + self.eps)


def cosine_factor(step: int, total_steps: int) -> float:
    """Cosine decay from 1 to 0 over total_steps"""
    if total_steps <= 0:
        return 1.0
    return 0.5 * (1.0 + math.cos(math.pi * min(step, total_steps) / total_steps))


def global_grad_norm(params: Sequence[tu.Parameter]) -> float:
    return float(math.sqrt(sum(float(np.sum(p.grad * p.grad)) for p in params)))


def clip_grad_norm(params: Sequence[tu.Parameter], max_norm: float = config.TRAIN_SETTINGS['grad_clip_norm']) -> float:
    """Rescale gradients to global L2 norm <= max_norm; returns the applied scale"""
    params = list(params)
    norm = global_grad_norm(params)
    if norm <= max_norm or norm == 0.0:
        return 1.0
    scale = max_norm / norm
    for p in params:
        p.grad = p.grad * scale
    return scale


def build_model(dataset: ClipDataset, gate_config: Optional[GateNetConfig] = None,
                event_config: Optional[EventConfig] = None, seed: int = 0) -> SpikeGateNet:
    """Fill data-dependent widths of the gate config and build the network"""
    values = (gate_config or GateNetConfig()).to_dict()
    values['channels'] = dataset.channels
    values['frames'] = dataset.frames
    values['video_dim'] = 0 if values['sdtb_only'] else dataset.video_dim
    event_config = event_config or EventConfig()
    return SpikeGateNet(GateNetConfig(**values), event_config, seed=seed)


def accuracy(scores: np.ndarray, labels: np.ndarray, threshold: float = config.METRIC_SETTINGS['decision_threshold']) -> float:
    return float(np.mean((np.asarray(scores) > threshold).astype(int) == np.asarray(labels)))


class Trainer:
    """Runs the epoch loop: forward, losses, backward, clip, optimizer, clamp"""

    def __init__(self, model: SpikeGateNet, train_config: Optional[TrainConfig] = None):
        self.model = model
        self.config = train_config or TrainConfig()
        self.optimizer = AdamW(model.parameters(), lr=self.config.lr, betas=self.config.betas,
                               eps=self.config.adam_eps, weight_decay=self.config.weight_decay)
        self.history: List[Dict] = []
        self._total_steps = 0
        self._step_index = 0

    def run_config(self) -> Dict:
        return {'event': self.model.event_config.to_dict(), 'model': self.model.config.to_dict(),
                'train': self.config.to_dict()}

    def train_step(self, batch: Batch, epoch: int, step: int) -> Dict:
        params = self.model.parameters()
        tu.zero_grad(params)
        try:
            with tu.Tape() as tape:
                result: ForwardResult = self.model(batch.pooled, batch.video)
                loss, parts = LossCalculator.total_loss(
                    result.fused.y_hat, result.fused.y_snn, result.fused.features, batch.labels,
                    result.firing_rate, self.config, trace=result.gate.trace)
            ArrayValidator.validate_finite(loss.data, "loss")
            tu.backward(loss, tape)
        except NumericError as e:
            raise NumericError(f"epoch {epoch} step {step}: {e}") from e

        aux_norm = global_grad_norm(self.model.aux_parameters())
        scale = clip_grad_norm(params, self.config.grad_clip_norm)
        if self.config.lr_schedule == 'cosine':
            self.optimizer.set_lr_factor(cosine_factor(self._step_index, self._total_steps))
        self.optimizer.step()
        self.model.clamp_params()
        self._step_index += 1

        logger.debug(f"epoch {epoch} step {step}: loss={loss.item():.6f} scale={scale:.4f}")
        return {'loss': loss.item(), **parts, 'firing_rate': result.firing_rate.item(), 'grad_scale': scale,
                'aux_grad_norm': aux_norm, 'lr': self.optimizer.param_groups[0]['lr'] if self.optimizer.param_groups else 0.0,
                'scores': result.fused.y_hat.data.copy()}

    def train_epoch(self, dataset: ClipDataset, epoch: int) -> Dict:
        """One pass over the shuffled dataset; returns the epoch metrics row"""
        if len(dataset) == 0:
            raise ValidationError("cannot train on an empty dataset")
        rng = np.random.default_rng([self.config.seed, epoch])
        rows, scores, labels = [], [], []
        for step, batch in enumerate(dataset.batches(self.config.batch_size, rng)):
            row = self.train_step(batch, epoch, step)
            scores.append(row.pop('scores'))
            labels.append(batch.labels)
            rows.append((len(batch), row))

        total = sum(n for n, _ in rows)
        metrics = {'epoch': epoch}
        for key in ('loss', 'bce_main', 'bce_aux', 'supcon', 'rate', 'anomaly', 'firing_rate', 'grad_scale'):
            metrics[key] = float(sum(n * r[key] for n, r in rows) / total)
        metrics['accuracy'] = accuracy(np.concatenate(scores), np.concatenate(labels))
        metrics['lr'] = rows[-1][1]['lr']
        metrics['aux_grad_norm'] = float(sum(r['aux_grad_norm'] for _, r in rows))
        metrics['silent_sdtb'] = bool(metrics['aux_grad_norm'] < self.config.silent_grad_threshold)
        if metrics['silent_sdtb']:
            logger.warning(f"epoch {epoch}: auxiliary head received no gradient (silent spiking branch)")
        logger.info(f"epoch {epoch}: loss={metrics['loss']:.4f} acc={metrics['accuracy']:.3f} "
                    f"rate={metrics['firing_rate']:.3f}")
        return metrics

    def fit(self, dataset: ClipDataset, epochs: Optional[int] = None, checkpoint_path: Optional[Path] = None,
            log_path: Optional[Path] = None) -> pd.DataFrame:
        """Train for the configured epochs, writing the CSV log and a checkpoint after each epoch"""
        epochs = self.config.epochs if epochs is None else epochs
        steps_per_epoch = math.ceil(len(dataset) / self.config.batch_size)
        self._total_steps = epochs * steps_per_epoch
        self._step_index = 0
        for epoch in range(1, epochs + 1):
            self.history.append(self.train_epoch(dataset, epoch))
            self._write_outputs(checkpoint_path, log_path)
        if epochs == 0:
            self._write_outputs(checkpoint_path, log_path)
        return pd.DataFrame(self.history, columns=EPOCH_COLUMNS)

    def _write_outputs(self, checkpoint_path: Optional[Path], log_path: Optional[Path]):
        if log_path is not None:
            ReportGenerator.generate_csv_export(pd.DataFrame(self.history, columns=EPOCH_COLUMNS), log_path,
                                                columns=EPOCH_COLUMNS)
        if checkpoint_path is not None:
            CheckpointIO.save(checkpoint_path, self.model.state_dict(), self.run_config())


def evaluate(model: SpikeGateNet, dataset: ClipDataset, batch_size: int = config.TRAIN_SETTINGS['batch_size'],
             threshold: float = config.METRIC_SETTINGS['decision_threshold']) -> Tuple[pd.DataFrame, Dict]:
    """Per-clip scores plus accuracy and AUROC"""
    rows = []
    for batch in dataset.batches(batch_size):
        result = model(batch.pooled, batch.video)
        for i, name in enumerate(batch.names):
            score = float(result.fused.y_hat.data[i])
            rows.append({'clip': name, 'label': int(batch.labels[i]), 'score': score,
                         'score_snn': float(result.fused.y_snn.data[i]), 'prediction': int(score > threshold)})
    df = pd.DataFrame(rows, columns=['clip', 'label', 'score', 'score_snn', 'prediction'])
    summary = {'clips': len(df), 'accuracy': accuracy(df['score'].values, df['label'].values, threshold)}
    try:
        summary['auc'] = MetricsCalculator.auc(df['score'].values, df['label'].values)
    except ValidationError:
        logger.warning("AUC undefined: evaluation set contains a single class")
        summary['auc'] = None
    return df, summary


def load_model(checkpoint_path: Union[str, Path]) -> Tuple[SpikeGateNet, Dict]:
    """Rebuild a model from a checkpoint"""
    run_config, state = CheckpointIO.load(checkpoint_path)
    try:
        event_config = EventConfig.from_dict(run_config['event'])
        gate_config = GateNetConfig.from_dict(run_config['model'])
        seed = run_config.get('train', {}).get('seed', 0)
    except (KeyError, TypeError) as e:
        raise ValidationError(f"checkpoint config incomplete: {e}")
    model = SpikeGateNet(gate_config, event_config, seed=seed)
    model.load_state_dict(state)
    return model, run_config
