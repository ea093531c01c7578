# utils/analytics_utils.py
"""
Analytics utilities: sparsity, temporal spectra, trajectory geometry,
the raw anomaly trace, gate-map statistics and per-pool metric reports
"""
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.spatial import ConvexHull, QhullError
from scipy.stats import rankdata

import config
from .event_utils import (Clip, EmbeddingSequence, EventConfig, FrameResiduals, adaptive_avg_pool,
                          edge_map, pseudo_events, residual_frame_means)
from .logging_utils import get_logger
from .validation_utils import ArrayValidator, ValidationError

logger = get_logger(__name__)

ZERO_NORM = 1e-8


class MetricsCalculator:
    """Scalar statistics of signals and scores"""

    @staticmethod
    def hoyer(x: np.ndarray) -> float:
        """(sqrt(N) - |x|_1 / |x|_2) / (sqrt(N) - 1); all-zero input gives 0"""
        x = np.ravel(np.asarray(x, dtype=np.float64))
        n = x.size
        ArrayValidator.validate_min_length(n, 2, 'hoyer input')
        l2 = np.linalg.norm(x)
        if l2 == 0.0:
            return 0.0
        root = math.sqrt(n)
        return float((root - np.abs(x).sum() / l2) / (root - 1.0))

    @staticmethod
    def spectral_centroid(series: np.ndarray) -> float:
        """Power-weighted mean frequency (cycles/frame) over bins 1..T/2 of the mean-removed series"""
        s = np.asarray(series, dtype=np.float64).ravel()
        length = s.size
        ArrayValidator.validate_min_length(length, 4, 'spectral centroid series')
        power = np.abs(np.fft.rfft(s - s.mean())) ** 2
        bins = np.arange(1, length // 2 + 1)
        power = power[bins]
        total = power.sum()
        if total <= 1e-24 * max(1.0, float(np.sum(s * s))):
            return 0.0
        return float(np.sum(bins / length * power) / total)

    @staticmethod
    def auc(scores: np.ndarray, labels: np.ndarray) -> float:
        """Rank-based AUROC; tied scores count half"""
        scores = np.asarray(scores, dtype=np.float64).ravel()
        labels = np.asarray(labels).ravel()
        if scores.shape != labels.shape:
            raise ValidationError("scores and labels must have the same length")
        positives = int(np.sum(labels == 1))
        negatives = int(np.sum(labels == 0))
        if positives == 0 or negatives == 0:
            raise ValidationError("AUC needs both classes present")
        ranks = rankdata(scores)
        rank_sum = ranks[labels == 1].sum()
        return float((rank_sum - positives * (positives + 1) / 2.0) / (positives * negatives))

    @staticmethod
    def frame_hoyer(frames: np.ndarray) -> float:
        """Mean Hoyer sparsity over frames"""
        return float(np.mean([MetricsCalculator.hoyer(f) for f in frames]))


class TrajectoryAnalyzer:
    """Geometry of per-frame feature trajectories"""

    @staticmethod
    def angular_curvature(trajectory: np.ndarray) -> Tuple[np.ndarray, float]:
        """Turning angle between consecutive displacements; returns (per-step angles, clip median)"""
        z = np.asarray(trajectory, dtype=np.float64)
        if z.ndim == 1:
            z = z[:, None]
        ArrayValidator.validate_min_length(z.shape[0], 3, 'trajectory')
        steps = np.diff(z, axis=0)
        norms = np.linalg.norm(steps, axis=-1)
        dots = np.sum(steps[1:] * steps[:-1], axis=-1)
        moving = (norms[1:] >= ZERO_NORM) & (norms[:-1] >= ZERO_NORM)
        cos = np.where(moving, dots / np.where(moving, norms[1:] * norms[:-1], 1.0), 1.0)
        angles = np.where(moving, np.arccos(np.clip(cos, -1.0, 1.0)), 0.0)
        return angles, float(np.median(angles))

    @staticmethod
    def _diff_stats(z: np.ndarray, prefix: str) -> Dict[str, float]:
        d1 = np.linalg.norm(np.diff(z, axis=0), axis=-1)
        d2 = np.abs(np.diff(d1))
        stats = {}
        for name, values in (('d1', d1), ('d2', d2)):
            stats[f'{prefix}{name}_mean'] = float(values.mean())
            stats[f'{prefix}{name}_std'] = float(values.std())
            stats[f'{prefix}{name}_max'] = float(values.max())
            stats[f'{prefix}{name}_min'] = float(values.min())
        return stats

    @staticmethod
    def traj_diff_stats(features: np.ndarray) -> Dict[str, float]:
        """First/second-order difference statistics, Euclidean and on L2-normalized features"""
        z = np.asarray(features, dtype=np.float64)
        ArrayValidator.validate_rank(z, 2, 'trajectory features')
        ArrayValidator.validate_min_length(z.shape[0], 3, 'trajectory')
        norms = np.linalg.norm(z, axis=-1, keepdims=True)
        unit = z / np.maximum(norms, ZERO_NORM)
        stats = TrajectoryAnalyzer._diff_stats(z, '')
        stats.update(TrajectoryAnalyzer._diff_stats(unit, 'cos_'))
        return stats

    @staticmethod
    def fit_pca3(points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Mean and top-3 principal axes (D x 3, zero columns past the rank).

        Each axis is signed so its largest-magnitude coordinate is positive.
        """
        x = np.asarray(points, dtype=np.float64)
        ArrayValidator.validate_rank(x, 2, 'PCA points')
        ArrayValidator.validate_min_length(x.shape[0], 4, 'PCA points')
        mean = x.mean(axis=0)
        centered = x - mean
        cov = centered.T @ centered / max(x.shape[0] - 1, 1)
        values, vectors = np.linalg.eigh(cov)
        order = np.argsort(values)[::-1]
        values, vectors = values[order], vectors[:, order]

        basis = np.zeros((x.shape[1], 3))
        scale = max(float(values[0]), 0.0) if values.size else 0.0
        for i in range(min(3, vectors.shape[1])):
            if values[i] <= 1e-12 * max(scale, 1e-300):
                break
            axis = vectors[:, i]
            pivot = np.argmax(np.abs(axis))
            basis[:, i] = axis if axis[pivot] > 0 else -axis
        return mean, basis

    @staticmethod
    def pca3_project(points: np.ndarray, fitted: Optional[Tuple[np.ndarray, np.ndarray]] = None) -> np.ndarray:
        """Project onto three principal axes, fitted on ``points`` unless a pool fit is given"""
        x = np.asarray(points, dtype=np.float64)
        mean, basis = fitted if fitted is not None else TrajectoryAnalyzer.fit_pca3(x)
        return (x - mean) @ basis

    @staticmethod
    def convex_hull_volume(points: np.ndarray) -> float:
        """Volume of the 3D convex hull; coplanar or degenerate sets give 0"""
        p = np.asarray(points, dtype=np.float64)
        ArrayValidator.validate_rank(p, 2, 'hull points')
        if p.shape[1] != 3:
            raise ValidationError(f"hull points must be 3-vectors, got shape {p.shape}")
        if p.shape[0] < 4:
            raise ValidationError(f"convex hull needs at least 4 points, got {p.shape[0]}")
        if np.linalg.matrix_rank(p - p.mean(axis=0), tol=1e-12) < 3:
            logger.warning("degenerate point set, hull volume set to 0")
            return 0.0
        try:
            return float(ConvexHull(p).volume)
        except QhullError:
            logger.warning("qhull rejected the point set, hull volume set to 0")
            return 0.0


def raw_anomaly_trace(frame_means: Sequence[float], tau_anom: float = config.METRIC_SETTINGS['tau_anom']) -> np.ndarray:
    """A_t = A_{t-1} exp(-1/tau) + a_t with A_0 = 0; tau = inf is a running sum"""
    a = np.asarray(frame_means, dtype=np.float64).ravel()
    if np.any(a < 0):
        raise ValidationError("anomaly trace inputs must be non-negative")
    if tau_anom <= 0:
        raise ValidationError("tau_anom must be positive")
    decay = 1.0 if math.isinf(tau_anom) else math.exp(-1.0 / tau_anom)
    trace = np.zeros_like(a)
    level = 0.0
    for t, value in enumerate(a):
        level = level * decay + value
        trace[t] = level
    return trace


@dataclass(frozen=True)
class BoundaryMasks:
    """Outer 1-ring and interior cells of a G x G grid"""
    grid: int

    def __post_init__(self):
        if self.grid < 3:
            raise ValidationError("boundary masks need a grid of at least 3")

    @property
    def boundary(self) -> np.ndarray:
        mask = np.ones((self.grid, self.grid), dtype=bool)
        mask[1:-1, 1:-1] = False
        return mask

    @property
    def interior(self) -> np.ndarray:
        return ~self.boundary

    @property
    def boundary_size(self) -> int:
        return 4 * (self.grid - 1)

    @property
    def interior_size(self) -> int:
        return (self.grid - 2) ** 2


def run_cells(active: np.ndarray, min_run: int) -> np.ndarray:
    """Mark cells of a 1D boolean line that sit in runs of at least min_run"""
    active = np.asarray(active, dtype=bool)
    marked = np.zeros_like(active)
    start = None
    for i, on in enumerate(np.append(active, False)):
        if on and start is None:
            start = i
        elif not on and start is not None:
            if i - start >= min_run:
                marked[start:i] = True
            start = None
    return marked


class GateMapAnalyzer:
    """Spatial statistics of gate maps"""

    @staticmethod
    def active_cells(gate_map: np.ndarray, percentile: float = config.METRIC_SETTINGS['fire_percentile']) -> np.ndarray:
        gate_map = np.asarray(gate_map, dtype=np.float64)
        return gate_map > np.percentile(gate_map, percentile)

    @staticmethod
    def fire_fractions(active: np.ndarray, run_length: int = config.METRIC_SETTINGS['run_length']) -> Tuple[float, float]:
        """(BF, IF) of one boolean G x G activity mask"""
        active = np.asarray(active, dtype=bool)
        grid = ArrayValidator.validate_square(active.size, 'gate map')
        masks = BoundaryMasks(grid)

        edge_hits = np.zeros_like(active)
        edge_hits[0, :] |= run_cells(active[0, :], run_length)
        edge_hits[-1, :] |= run_cells(active[-1, :], run_length)
        edge_hits[:, 0] |= run_cells(active[:, 0], run_length)
        edge_hits[:, -1] |= run_cells(active[:, -1], run_length)

        inner = active[1:-1, 1:-1]
        inner_hits = np.zeros_like(inner)
        for i in range(inner.shape[0]):
            inner_hits[i, :] |= run_cells(inner[i, :], run_length)
            inner_hits[:, i] |= run_cells(inner[:, i], run_length)

        bf = edge_hits[masks.boundary].sum() / masks.boundary_size
        inf = inner_hits.sum() / masks.interior_size
        return float(bf), float(inf)

    @staticmethod
    def boundary_interior_fire(gate_maps: np.ndarray, percentile: float = config.METRIC_SETTINGS['fire_percentile'],
                               run_length: int = config.METRIC_SETTINGS['run_length'],
                               skip_first: bool = True) -> Tuple[float, float, np.ndarray]:
        """Clip BF/IF averaged over frames plus the per-frame (BF, IF) rows"""
        maps = np.asarray(gate_maps, dtype=np.float64)
        if maps.ndim == 2:
            maps = maps[None]
        ArrayValidator.validate_rank(maps, 3, 'gate maps')
        per_frame = np.array([GateMapAnalyzer.fire_fractions(GateMapAnalyzer.active_cells(m, percentile), run_length)
                              for m in maps])
        used = per_frame[1:] if skip_first and len(per_frame) > 1 else per_frame
        return float(used[:, 0].mean()), float(used[:, 1].mean()), per_frame

    @staticmethod
    def edge_gate_overlap(gate_map: np.ndarray, edges: np.ndarray,
                          edge_percentile: float = config.METRIC_SETTINGS['edge_percentile'],
                          top_fraction: float = config.METRIC_SETTINGS['precision_top_fraction']) -> Dict[str, float]:
        """Agreement between a gate map and the binarized edge map of the same frame"""
        gate = np.asarray(gate_map, dtype=np.float64).ravel()
        edge_values = np.asarray(edges, dtype=np.float64).ravel()
        if gate.shape != edge_values.shape:
            raise ValidationError(f"gate map {np.shape(gate_map)} and edge map {np.shape(edges)} are not aligned")
        is_edge = edge_values > np.percentile(edge_values, edge_percentile)
        binary = is_edge.astype(np.float64)

        if np.ptp(gate) == 0.0 or np.ptp(binary) == 0.0:
            pearson = 0.0
        else:
            pearson = float(np.corrcoef(gate, binary)[0, 1])

        k = max(1, int(round(top_fraction * gate.size)))
        top = np.argsort(-gate, kind='stable')[:k]
        precision = float(is_edge[top].mean())

        mean_edge = float(gate[is_edge].mean()) if is_edge.any() else 0.0
        mean_nonedge = float(gate[~is_edge].mean()) if (~is_edge).any() else 0.0
        ratio = mean_edge / mean_nonedge if mean_nonedge > 0 else 0.0
        return {'pearson': pearson, 'precision_at_top': precision, 'mean_gate_edge': mean_edge,
                'mean_gate_nonedge': mean_nonedge, 'edge_ratio': float(ratio)}

    @staticmethod
    def clip_edge_overlap(clip: Clip, gate_maps: np.ndarray, grid: int) -> List[Dict[str, float]]:
        """Per-frame overlap rows for frames 1..T-1"""
        luma = FrameResiduals.to_luma(clip)
        return [GateMapAnalyzer.edge_gate_overlap(gate_maps[t], edge_map(luma[t], grid))
                for t in range(1, len(gate_maps))]


class ClipMetrics:
    """Per-clip metric values keyed by metric name"""

    @staticmethod
    def hoyer_stats(clip: Clip) -> Dict[str, float]:
        """S_rgb over luma frames and S_res over high-frequency residuals of frames 1..T-1"""
        luma = FrameResiduals.to_luma(clip)
        residual = FrameResiduals.aligned_residual('HF', clip)[1:]
        return {'S_rgb': MetricsCalculator.frame_hoyer(luma), 'S_res': MetricsCalculator.frame_hoyer(residual)}

    @staticmethod
    def centroid(clip: Clip, grid: int = config.EVENT_SETTINGS['grid']) -> float:
        """Mean spectral centroid of the pooled high-frequency residual cells"""
        raw = FrameResiduals.compute_residual('HF', clip)
        pooled = adaptive_avg_pool(raw, grid)
        series = pooled.reshape(pooled.shape[0], -1)
        return float(np.mean([MetricsCalculator.spectral_centroid(series[:, i]) for i in range(series.shape[1])]))

    @staticmethod
    def chroma(clip: Clip) -> float:
        return MetricsCalculator.frame_hoyer(FrameResiduals.compute_residual('Chroma', clip))

    @staticmethod
    def event_rate(clip: Clip, event_config: Optional[EventConfig] = None) -> float:
        return float(pseudo_events(clip, event_config)[1:].mean())


def generate_metric_report(clips: List[Clip], embeddings: Optional[List[Optional[EmbeddingSequence]]] = None,
                           metrics: Optional[List[str]] = None, names: Optional[List[str]] = None,
                           tau_anom: float = config.METRIC_SETTINGS['tau_anom'],
                           event_config: Optional[EventConfig] = None) -> pd.DataFrame:
    """One row per clip with the requested metrics, followed by pool mean and std rows"""
    metrics = metrics or list(config.METRIC_SETTINGS['default_metrics'])
    unknown = set(metrics) - set(config.METRIC_SETTINGS['available_metrics'])
    if unknown:
        raise ValidationError(f"unknown metrics: {sorted(unknown)}")
    if not clips:
        raise ValidationError("metric report needs at least one clip")
    event_config = event_config or EventConfig()
    embeddings = embeddings or [None] * len(clips)
    names = names or [f'clip_{i:04d}' for i in range(len(clips))]

    trajectories = [emb.trajectory() if emb is not None else None for emb in embeddings]
    pool_fit = None
    if 'volume' in metrics and all(tr is not None for tr in trajectories):
        pool_fit = TrajectoryAnalyzer.fit_pca3(np.concatenate(trajectories, axis=0))

    rows = []
    for name, clip, traj in zip(names, clips, trajectories):
        row = {'clip': name, 'label': clip.label}
        if 'hoyer' in metrics:
            row.update(ClipMetrics.hoyer_stats(clip))
        if 'fc' in metrics:
            row['f_c'] = ClipMetrics.centroid(clip, event_config.grid)
        if 'chroma' in metrics:
            row['S_chroma'] = ClipMetrics.chroma(clip)
        if 'events' in metrics:
            row['event_rate'] = ClipMetrics.event_rate(clip, event_config)
        if 'anomaly' in metrics:
            trace = raw_anomaly_trace(residual_frame_means(clip), tau_anom)
            row.update({f'anom_{t + 1}': float(v) for t, v in enumerate(trace)})
            row['anom_final'] = float(trace[-1])
        if traj is not None:
            if 'curvature' in metrics:
                row['theta'] = TrajectoryAnalyzer.angular_curvature(traj)[1]
            if 'volume' in metrics:
                row['volume'] = TrajectoryAnalyzer.convex_hull_volume(TrajectoryAnalyzer.pca3_project(traj, pool_fit))
            if 'traj' in metrics:
                row.update(TrajectoryAnalyzer.traj_diff_stats(traj))
        rows.append(row)

    df = pd.DataFrame(rows)
    numeric = df.drop(columns=['clip', 'label'])
    summary = pd.DataFrame([{'clip': 'mean', **numeric.mean().to_dict()},
                            {'clip': 'std', **numeric.std(ddof=0).to_dict()}])
    logger.info(f"Computed {len(metrics)} metrics for {len(clips)} clips")
    return pd.concat([df, summary], ignore_index=True)
