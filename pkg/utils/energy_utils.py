# utils/energy_utils.py
"""
Energy utilities: analytic MAC/SOP counting for the spiking gate and a
matched dense gate, firing-rate measurement and picojoule energy reports
"""
from dataclasses import asdict, dataclass, field
from typing import Dict, Optional

import numpy as np
import pandas as pd

import config
from .gate_utils import GateNetConfig, SpikeGateNet
from .logging_utils import get_logger
from .validation_utils import ValidationError

logger = get_logger(__name__)

MODES = ('snn', 'ann')
PJ_TO_MJ = 1e-9


def conv_macs(c_in: int, c_out: int, k: int, h: int, w: int, groups: int = 1) -> int:
    """c_in / groups * c_out * k^2 * h * w"""
    return (c_in // groups) * c_out * k * k * h * w


def linear_macs(n: int, d_in: int, d_out: int) -> int:
    return n * d_in * d_out


class OpCounter:
    """Per-stage dense operation counts for one clip of T frames"""

    @staticmethod
    def count_dense_ops(cfg: GateNetConfig, mode: str = 'snn', frames: Optional[int] = None,
                        channels: Optional[int] = None, video_dim: Optional[int] = None) -> Dict[str, int]:
        """Stage name -> MACs (ann) or dense-equivalent accumulates (snn).

        Attention is linear in the token count for snn (K^T V first) and
        quadratic for ann (softmax Q K^T then A V). Every other stage is
        counted the same way for both modes.
        """
        if mode not in MODES:
            raise ValidationError(f"unknown counting mode '{mode}'")
        frames = frames or cfg.frames or config.ENERGY_SETTINGS['frames']
        channels = channels or cfg.channels or config.ENERGY_SETTINGS['channels']
        video_dim = (cfg.video_dim or 0) if video_dim is None else video_dim
        grid, d = cfg.grid, cfg.hidden_dim
        per_frame = grid * grid
        tokens = frames * per_frame

        stages = {
            'stem': frames * channels * conv_macs(1, cfg.stem_width, 3, grid, grid),
            'fusion': linear_macs(tokens, channels * cfg.stem_width, d),
        }

        inner = d * cfg.sepconv_expansion
        sepconv = tokens * inner * cfg.sepconv_kernel ** 2 + linear_macs(tokens, inner, d)
        if cfg.sepconv_expansion > 1:
            sepconv += linear_macs(tokens, d, inner)
        if mode == 'snn':
            attention = 2 * tokens * d * d // cfg.heads
        else:
            attention = 2 * tokens * tokens * d

        depth = cfg.depth
        stages['blocks.sepconv'] = depth * sepconv
        stages['blocks.attn_proj'] = depth * 4 * linear_macs(tokens, d, d)
        stages['blocks.attention'] = depth * attention
        stages['blocks.mlp'] = depth * 2 * linear_macs(tokens, d, cfg.mlp_hidden)
        stages['gate'] = linear_macs(tokens, d, 1)
        sdtb = cfg.anom_dim + cfg.gate_dim
        stages['projections'] = linear_macs(1, frames, cfg.anom_dim) + linear_macs(1, 2 * frames, cfg.gate_dim)
        stages['heads'] = (linear_macs(1, video_dim + sdtb, cfg.head_hidden) + cfg.head_hidden
                           + linear_macs(1, sdtb, cfg.head_hidden) + cfg.head_hidden)
        return stages

    @staticmethod
    def total(stages: Dict[str, int]) -> int:
        return int(sum(stages.values()))


@dataclass
class EnergyReport:
    """Operation counts and energy per clip"""
    dense_ops: float
    firing_rate: float
    sops: float
    ann_macs: float
    energy_snn_mj: float
    energy_ann_mj: float
    gate_firing_rate: Optional[float] = None
    e_mac_pj: float = config.ENERGY_SETTINGS['e_mac_pj']
    e_ac_pj: float = config.ENERGY_SETTINGS['e_ac_pj']
    backbone_gflops: float = config.ENERGY_SETTINGS['backbone_gflops']
    stages: Dict[str, Dict[str, float]] = field(default_factory=dict)

    @property
    def backbone_energy_mj(self) -> float:
        return self.backbone_gflops * 1e9 * self.e_mac_pj * PJ_TO_MJ

    @property
    def pipeline_energy_snn_mj(self) -> float:
        return self.backbone_energy_mj + self.energy_snn_mj

    @property
    def pipeline_energy_ann_mj(self) -> float:
        return self.backbone_energy_mj + self.energy_ann_mj

    def to_dict(self) -> Dict:
        body = asdict(self)
        body.update({
            'dense_gops': self.dense_ops / 1e9,
            'sops_g': self.sops / 1e9,
            'ann_gmacs': self.ann_macs / 1e9,
            'backbone_energy_mj': self.backbone_energy_mj,
            'pipeline_energy_snn_mj': self.pipeline_energy_snn_mj,
            'pipeline_energy_ann_mj': self.pipeline_energy_ann_mj,
            'overhead_snn_pct': 100.0 * self.energy_snn_mj / self.backbone_energy_mj,
            'overhead_ann_pct': 100.0 * self.energy_ann_mj / self.backbone_energy_mj,
        })
        return body

    def stage_table(self) -> pd.DataFrame:
        rows = [{'stage': name, **values} for name, values in self.stages.items()]
        return pd.DataFrame(rows, columns=['stage', 'dense_ops', 'sops', 'ann_macs', 'energy_snn_mj', 'energy_ann_mj'])


def snn_energy_mj(sops: float, e_ac_pj: float = config.ENERGY_SETTINGS['e_ac_pj']) -> float:
    return sops * e_ac_pj * PJ_TO_MJ


def ann_energy_mj(macs: float, e_mac_pj: float = config.ENERGY_SETTINGS['e_mac_pj']) -> float:
    return macs * e_mac_pj * PJ_TO_MJ


def energy_report(dense_ops: float, firing_rate: float, ann_macs: float = 0.0,
                  stage_ops: Optional[Dict[str, int]] = None, ann_stage_ops: Optional[Dict[str, int]] = None,
                  gate_firing_rate: Optional[float] = None) -> EnergyReport:
    """SOPs = dense ops x firing rate; E_snn = SOPs x E_AC; E_ann = MACs x E_MAC"""
    values = np.array([dense_ops, firing_rate, ann_macs], dtype=np.float64)
    if not np.all(np.isfinite(values)) or np.any(values < 0):
        raise ValidationError("energy inputs must be finite and non-negative")
    sops = dense_ops * firing_rate

    stages = {}
    for name in sorted(set(stage_ops or {}) | set(ann_stage_ops or {})):
        dense = float((stage_ops or {}).get(name, 0))
        macs = float((ann_stage_ops or {}).get(name, 0))
        stages[name] = {'dense_ops': dense, 'sops': dense * firing_rate, 'ann_macs': macs,
                        'energy_snn_mj': snn_energy_mj(dense * firing_rate), 'energy_ann_mj': ann_energy_mj(macs)}

    return EnergyReport(dense_ops=float(dense_ops), firing_rate=float(firing_rate), sops=float(sops),
                        ann_macs=float(ann_macs), energy_snn_mj=snn_energy_mj(sops),
                        energy_ann_mj=ann_energy_mj(ann_macs), gate_firing_rate=gate_firing_rate, stages=stages)


def measure_firing_rate(model: SpikeGateNet, dataset, batch_size: int = config.TRAIN_SETTINGS['batch_size'],
                        gate_threshold: float = 0.5) -> Dict[str, float]:
    """Clip-weighted mean of s/L over all spike sites, and the fraction of gate cells above threshold"""
    if len(dataset) == 0:
        raise ValidationError("firing rate needs at least one clip")
    spike_total, gate_total, count = 0.0, 0.0, 0
    for batch in dataset.batches(batch_size):
        result = model(batch.pooled, batch.video)
        n = len(batch)
        spike_total += result.firing_rate.item() * n
        gate_total += float(np.mean(result.gate.gate_maps.data > gate_threshold)) * n
        count += n
    return {'spike_rate': spike_total / count, 'gate_rate': gate_total / count}


def model_energy_report(model: SpikeGateNet, dataset) -> EnergyReport:
    """Count ops for the model's config and charge them at the measured firing rate"""
    cfg = model.config
    snn_stages = OpCounter.count_dense_ops(cfg, 'snn', video_dim=model.video_dim)
    ann_stages = OpCounter.count_dense_ops(cfg, 'ann', video_dim=model.video_dim)
    rates = measure_firing_rate(model, dataset)
    report = energy_report(OpCounter.total(snn_stages), rates['spike_rate'], OpCounter.total(ann_stages),
                           snn_stages, ann_stages, gate_firing_rate=rates['gate_rate'])
    logger.info(f"SOPs {report.sops / 1e9:.4f} G at rate {report.firing_rate:.4f}: "
                f"{report.energy_snn_mj:.4f} mJ (dense gate {report.energy_ann_mj:.4f} mJ)")
    return report
