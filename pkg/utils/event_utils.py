# utils/event_utils.py
"""
Pseudo-event front-end: frame residuals, trajectory channels and the
multi-channel event tensor fed to the spiking gate
"""
from dataclasses import asdict, dataclass, field, fields
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.ndimage import correlate
from scipy.special import expit

import config
from . import tensor_utils as tu
from .validation_utils import ArrayValidator, ConfigValidator, ValidationError

LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])
CB_WEIGHTS = np.array([-0.169, -0.331, 0.500])
CR_WEIGHTS = np.array([0.500, -0.419, -0.081])

LAPLACIAN_KERNEL = np.array([[0.0, 1.0, 0.0],
                             [1.0, -4.0, 1.0],
                             [0.0, 1.0, 0.0]])
SOBEL_X = np.array([[-1.0, 0.0, 1.0],
                    [-2.0, 0.0, 2.0],
                    [-1.0, 0.0, 1.0]])
SOBEL_Y = SOBEL_X.T.copy()

RESIDUAL_KINDS = ('HF', 'Sobel', 'AbsDiff', 'Diff2', 'Chroma')
# Largest squashed event value; float64 sigmoid rounds to 1.0 past about 37
SQUASH_CEILING = 1.0 - 1e-12
LABELS = {'real': 0, 'fake': 1}


@dataclass
class Clip:
    """Decoded frames in [0, 1] with label and metadata"""
    frames: np.ndarray
    label: int = 0
    source: str = ''
    fps: float = 8.0

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if isinstance(self.label, str):
            if self.label not in LABELS:
                raise ValidationError(f"unknown clip label '{self.label}'")
            self.label = LABELS[self.label]
        ArrayValidator.validate_rank(self.frames, 4, 'clip frames')
        if self.frames.shape[-1] != 3:
            raise ValidationError(f"clip frames must have 3 colour channels, got shape {self.frames.shape}")
        ArrayValidator.validate_min_length(self.frames.shape[0], 2, 'clip')
        ArrayValidator.validate_unit_range(self.frames, 'clip frames')

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    def reversed(self) -> 'Clip':
        return Clip(self.frames[::-1].copy(), self.label, self.source, self.fps)


@dataclass
class EmbeddingSequence:
    """Per-frame patch tokens plus optional frame-level and video-level vectors"""
    patches: np.ndarray
    frame_vectors: Optional[np.ndarray] = None
    video: Optional[np.ndarray] = None

    def __post_init__(self):
        self.patches = np.asarray(self.patches, dtype=np.float64)
        ArrayValidator.validate_rank(self.patches, 3, 'patch tokens')
        ArrayValidator.validate_square(self.patches.shape[1], 'patch tokens')
        if self.frame_vectors is not None:
            self.frame_vectors = np.asarray(self.frame_vectors, dtype=np.float64)
        if self.video is not None:
            self.video = np.asarray(self.video, dtype=np.float64)

    @property
    def num_frames(self) -> int:
        return self.patches.shape[0]

    @property
    def grid(self) -> int:
        return ArrayValidator.validate_square(self.patches.shape[1], 'patch tokens')

    @property
    def dim(self) -> int:
        return self.patches.shape[2]

    def video_vector(self) -> np.ndarray:
        """Z_video: stored vector, else time-mean of frame vectors, else patch mean"""
        if self.video is not None:
            return self.video
        if self.frame_vectors is not None:
            return self.frame_vectors.mean(axis=0)
        return self.patches.mean(axis=(0, 1))

    def trajectory(self) -> np.ndarray:
        """Per-frame frame-level vectors (T x D)"""
        if self.frame_vectors is not None:
            return self.frame_vectors
        return self.patches.mean(axis=1)

    @classmethod
    def from_array(cls, tokens: np.ndarray) -> 'EmbeddingSequence':
        """Split a T x (1+N) x D or T x N x D token array"""
        tokens = np.asarray(tokens, dtype=np.float64)
        ArrayValidator.validate_rank(tokens, 3, 'embedding tokens')
        n = tokens.shape[1]
        side = int(round(np.sqrt(n - 1))) if n > 1 else 0
        if n > 1 and side * side == n - 1:
            return cls(patches=tokens[:, 1:], frame_vectors=tokens[:, 0])
        return cls(patches=tokens)

    def to_array(self) -> np.ndarray:
        """Pack as T x (1+N) x D with the frame-level vector as token 0"""
        return np.concatenate([self.trajectory()[:, None, :], self.patches], axis=1)


@dataclass
class EventConfig:
    """Front-end thresholds and post-processing constants"""
    c_th: float = config.EVENT_SETTINGS['c_th']
    beta: float = config.EVENT_SETTINGS['beta']
    grid: int = config.EVENT_SETTINGS['grid']
    tau_post: float = config.EVENT_SETTINGS['tau_post']
    s_post: float = config.EVENT_SETTINGS['s_post']
    w_init: float = config.EVENT_SETTINGS['w_init']
    norm_eps: float = config.EVENT_SETTINGS['norm_eps']
    sobel_eps: float = config.EVENT_SETTINGS['sobel_eps']
    use_embeddings: bool = config.EVENT_SETTINGS['use_embeddings']

    def __post_init__(self):
        if not self.c_th > 0:
            raise ValidationError("c_th must be positive")
        if not self.beta > 0 or not self.s_post > 0:
            raise ValidationError("soft-threshold widths must be positive")
        if self.grid < 2:
            raise ValidationError("event grid must be at least 2")

    @staticmethod
    def derive_beta(c_th: float) -> float:
        return max(c_th * 0.25, 1e-6)

    @classmethod
    def from_threshold(cls, c_th: float, **kwargs) -> 'EventConfig':
        return cls(c_th=c_th, beta=cls.derive_beta(c_th), **kwargs)

    def to_dict(self) -> Dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, values: Dict) -> 'EventConfig':
        ConfigValidator.validate_keys('event', values, [f.name for f in fields(cls)])
        ConfigValidator.validate_types('event', values, asdict(cls()))
        return cls(**values)


@dataclass
class EventTensor:
    """T x C x G x G pseudo-event grid.

    ``pooled`` keeps the normalized, pooled maps before the learnable
    scale so the gate network can re-apply softplus(w_c) on its own tape.
    """
    values: np.ndarray
    pooled: np.ndarray
    channel_names: List[str] = field(default_factory=list)

    @property
    def num_channels(self) -> int:
        return self.values.shape[1]

    @property
    def num_frames(self) -> int:
        return self.values.shape[0]

    @property
    def grid(self) -> int:
        return self.values.shape[-1]


class FrameResiduals:
    """Per-pixel temporal residual maps of a clip"""

    @staticmethod
    def to_luma(clip: Clip) -> np.ndarray:
        """BT.601 luma, T x H x W"""
        return clip.frames @ LUMA_WEIGHTS

    @staticmethod
    def filter3x3(image: np.ndarray, kernel: np.ndarray) -> np.ndarray:
        """3x3 cross-correlation of each frame with zero padding"""
        if image.ndim == 2:
            return correlate(image, kernel, mode='constant', cval=0.0)
        return np.stack([correlate(frame, kernel, mode='constant', cval=0.0) for frame in image])

    @staticmethod
    def sobel_magnitude(luma: np.ndarray, eps: float = config.EVENT_SETTINGS['sobel_eps']) -> np.ndarray:
        """sqrt(Gx^2 + Gy^2 + eps) per frame"""
        gx = FrameResiduals.filter3x3(luma, SOBEL_X)
        gy = FrameResiduals.filter3x3(luma, SOBEL_Y)
        return np.sqrt(gx * gx + gy * gy + eps)

    @staticmethod
    def abs_diff(clip: Clip) -> np.ndarray:
        """Colour-averaged absolute frame difference, (T-1) x H x W"""
        return np.abs(np.diff(clip.frames, axis=0)).mean(axis=-1)

    @staticmethod
    def chroma(clip: Clip) -> np.ndarray:
        """|dCb| + |dCr| in YCbCr, (T-1) x H x W"""
        cb = clip.frames @ CB_WEIGHTS + 0.5
        cr = clip.frames @ CR_WEIGHTS + 0.5
        return np.abs(np.diff(cb, axis=0)) + np.abs(np.diff(cr, axis=0))

    @staticmethod
    def compute_residual(kind: str, clip: Clip, sobel_eps: float = config.EVENT_SETTINGS['sobel_eps']) -> np.ndarray:
        """Residual of the requested kind; Diff2 has T-2 frames, the rest T-1"""
        if kind not in RESIDUAL_KINDS:
            raise ValidationError(f"unknown residual kind '{kind}'")
        if kind == 'Diff2':
            ArrayValidator.validate_min_length(clip.num_frames, 3, 'Diff2 residual')
            return np.abs(np.diff(FrameResiduals.abs_diff(clip), axis=0))
        if kind == 'AbsDiff':
            return FrameResiduals.abs_diff(clip)
        if kind == 'Chroma':
            return FrameResiduals.chroma(clip)

        luma = FrameResiduals.to_luma(clip)
        if kind == 'HF':
            lap = FrameResiduals.filter3x3(luma, LAPLACIAN_KERNEL)
            return np.abs(np.diff(lap, axis=0))
        return np.abs(np.diff(FrameResiduals.sobel_magnitude(luma, sobel_eps), axis=0))

    @staticmethod
    def aligned_residual(kind: str, clip: Clip, sobel_eps: float = config.EVENT_SETTINGS['sobel_eps']) -> np.ndarray:
        """Residual left-padded with zero frames to length T"""
        raw = FrameResiduals.compute_residual(kind, clip, sobel_eps)
        pad = clip.num_frames - raw.shape[0]
        return np.concatenate([np.zeros((pad,) + raw.shape[1:]), raw], axis=0)

    @staticmethod
    def first_valid_frame(kind: str) -> int:
        return 2 if kind in ('Diff2', 'kappa') else 1


def soft_threshold(delta, c_th: float, beta: float):
    """sigma((delta - c_th) / beta); numpy in, numpy out, Tensor in, Tensor out"""
    if beta <= 0:
        raise ValidationError("soft-threshold width must be positive")
    if isinstance(delta, tu.Tensor):
        return tu.sigmoid(tu.mul(tu.sub(delta, c_th), 1.0 / beta))
    return expit((np.asarray(delta, dtype=np.float64) - c_th) / beta)


def adaptive_avg_pool(maps: np.ndarray, grid: int) -> np.ndarray:
    """Average over G x G contiguous blocks whose sizes differ by at most 1"""
    height, width = maps.shape[-2:]
    if height < grid or width < grid:
        raise ValidationError(f"cannot pool {height}x{width} maps to a {grid}x{grid} grid")
    rows = (np.arange(grid + 1) * height) // grid
    cols = (np.arange(grid + 1) * width) // grid
    summed = np.add.reduceat(np.add.reduceat(maps, rows[:-1], axis=-2), cols[:-1], axis=-1)
    counts = np.outer(np.diff(rows), np.diff(cols))
    return summed / counts


class EventPostprocessor:
    """Normalization, pooling, learnable scaling and squashing of one channel"""

    @staticmethod
    def normalize_and_pool(raw: np.ndarray, grid: int, first_valid: int = 1,
                           eps: float = config.EVENT_SETTINGS['norm_eps']) -> np.ndarray:
        """Divide by the clip-level mean over valid frames, then pool to G x G"""
        raw = np.asarray(raw, dtype=np.float64)
        if np.any(raw < 0):
            raise ValidationError("raw residual maps must be non-negative")
        valid = raw[first_valid:]
        scale = valid.mean() if valid.size else 0.0
        return adaptive_avg_pool(raw / (scale + eps), grid)

    @staticmethod
    def frame_mask(num_frames: int) -> np.ndarray:
        mask = np.ones((num_frames, 1, 1))
        mask[0] = 0.0
        return mask

    @staticmethod
    def scale_and_threshold(pooled, w_c, event_config: EventConfig):
        """softplus(w_c) * x, soft threshold capped below 1, frame 0 zeroed.

        ``pooled`` is T x C x G x G (or B x T x C x G x G) and ``w_c`` has C entries.
        Works on numpy arrays or on tape tensors.
        """
        if isinstance(pooled, tu.Tensor) or isinstance(w_c, tu.Tensor):
            pooled = tu.as_tensor(pooled)
            channels = pooled.shape[-3]
            scale = tu.reshape(tu.softplus(w_c), (channels, 1, 1))
            squashed = tu.clamp(soft_threshold(tu.mul(pooled, scale), event_config.tau_post, event_config.s_post),
                                hi=SQUASH_CEILING)
            mask = EventPostprocessor.frame_mask(pooled.shape[-4]).reshape((pooled.shape[-4], 1, 1, 1))
            return tu.mul(squashed, mask)

        pooled = np.asarray(pooled, dtype=np.float64)
        channels = pooled.shape[-3]
        scale = np.logaddexp(0.0, np.asarray(w_c, dtype=np.float64)).reshape(channels, 1, 1)
        squashed = np.minimum(soft_threshold(pooled * scale, event_config.tau_post, event_config.s_post),
                              SQUASH_CEILING)
        mask = EventPostprocessor.frame_mask(pooled.shape[-4]).reshape((pooled.shape[-4], 1, 1, 1))
        return squashed * mask

    @staticmethod
    def postprocess_channel(raw: np.ndarray, event_config: EventConfig, w_c: Union[float, tu.Tensor] = None,
                            first_valid: int = 1):
        """Full single-channel chain, T x H x W -> T x G x G"""
        if w_c is None:
            w_c = event_config.w_init
        pooled = EventPostprocessor.normalize_and_pool(raw, event_config.grid, first_valid, event_config.norm_eps)
        w = w_c if isinstance(w_c, tu.Tensor) else np.array([w_c], dtype=np.float64)
        out = EventPostprocessor.scale_and_threshold(pooled[:, None], w, event_config)
        if isinstance(out, tu.Tensor):
            return tu.reshape(out, pooled.shape)
        return out[:, 0]


def trajectory_channels(emb: EmbeddingSequence, num_frames: Optional[int] = None) -> Tuple[np.ndarray, np.ndarray]:
    """Per-patch displacement d and turning angle kappa, each T x G x G"""
    if num_frames is not None and emb.num_frames != num_frames:
        raise ValidationError(f"embedding has {emb.num_frames} frames, clip has {num_frames}")
    side = emb.grid
    steps = np.diff(emb.patches, axis=0)  # (T-1) x N x D
    norms = np.linalg.norm(steps, axis=-1)
    t_len, n_tokens = emb.num_frames, emb.patches.shape[1]

    d = np.zeros((t_len, n_tokens))
    d[1:] = norms

    kappa = np.zeros((t_len, n_tokens))
    if t_len >= 3:
        dots = np.sum(steps[1:] * steps[:-1], axis=-1)
        denom = norms[1:] * norms[:-1]
        moving = (norms[1:] >= 1e-8) & (norms[:-1] >= 1e-8)
        cos = np.where(moving, dots / np.where(moving, denom, 1.0), 1.0)
        kappa[2:] = np.where(moving, np.arccos(np.clip(cos, -1.0, 1.0)), 0.0)

    return d.reshape(t_len, side, side), kappa.reshape(t_len, side, side)


def pseudo_events(clip: Clip, event_config: Optional[EventConfig] = None) -> np.ndarray:
    """Full-resolution soft events on the absolute frame difference, frame 0 zeroed"""
    event_config = event_config or EventConfig()
    delta = FrameResiduals.aligned_residual('AbsDiff', clip)
    events = soft_threshold(delta, event_config.c_th, event_config.beta)
    events[0] = 0.0
    return events


def edge_map(frame_luma: np.ndarray, grid: int) -> np.ndarray:
    """Sobel magnitude of one luma frame pooled to the event grid"""
    return adaptive_avg_pool(FrameResiduals.sobel_magnitude(frame_luma), grid)


def residual_frame_means(clip: Clip, kinds: Sequence[str] = ('HF', 'Sobel', 'AbsDiff', 'Diff2')) -> np.ndarray:
    """a_t for t = 1..T-1: spatial mean averaged over the aligned residual channels"""
    stacked = np.stack([FrameResiduals.aligned_residual(kind, clip) for kind in kinds])
    return stacked.mean(axis=(0, 2, 3))[1:]


class EventEncoder:
    """Builds event tensors for clips under one EventConfig"""

    def __init__(self, event_config: Optional[EventConfig] = None):
        self.config = event_config or EventConfig()

    def channel_names(self, with_embeddings: bool) -> List[str]:
        names = list(config.EVENT_SETTINGS['channels_pixel'])
        if with_embeddings:
            names += list(config.EVENT_SETTINGS['channels_trajectory'])
        return names

    def pooled_channels(self, clip: Clip, emb: Optional[EmbeddingSequence] = None) -> Tuple[np.ndarray, List[str]]:
        """Normalized, pooled maps for every channel, T x C x G x G"""
        use_emb = emb is not None and self.config.use_embeddings
        names = self.channel_names(use_emb)
        maps = []
        for kind in config.EVENT_SETTINGS['channels_pixel']:
            raw = FrameResiduals.aligned_residual(kind, clip, self.config.sobel_eps)
            maps.append(EventPostprocessor.normalize_and_pool(
                raw, self.config.grid, FrameResiduals.first_valid_frame(kind), self.config.norm_eps))
        if use_emb:
            if emb.grid != self.config.grid:
                raise ValidationError(f"embedding grid {emb.grid} does not match event grid {self.config.grid}")
            d, kappa = trajectory_channels(emb, clip.num_frames)
            for name, raw in (('d', d), ('kappa', kappa)):
                maps.append(EventPostprocessor.normalize_and_pool(
                    raw, self.config.grid, FrameResiduals.first_valid_frame(name), self.config.norm_eps))
        return np.stack(maps, axis=1), names

    def encode(self, clip: Clip, emb: Optional[EmbeddingSequence] = None,
               scales: Optional[np.ndarray] = None) -> EventTensor:
        """Assemble the C-channel event tensor (C = 6 with embeddings, else 4)"""
        pooled, names = self.pooled_channels(clip, emb)
        w = np.full(len(names), self.config.w_init) if scales is None else np.asarray(scales, dtype=np.float64)
        values = EventPostprocessor.scale_and_threshold(pooled, w, self.config)
        return EventTensor(values=values, pooled=pooled, channel_names=names)


def assemble_event_tensor(clip: Clip, emb: Optional[EmbeddingSequence] = None,
                          event_config: Optional[EventConfig] = None) -> EventTensor:
    return EventEncoder(event_config).encode(clip, emb)
