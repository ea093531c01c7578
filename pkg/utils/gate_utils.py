# utils/gate_utils.py
"""
Spike-driven temporal branch: per-channel LIF stems, channel fusion,
spike blocks with linear spike attention, the gate head, the anomaly
accumulator and the fused classifier heads
"""
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Dict, List, Optional, Tuple

import numpy as np

import config
from . import tensor_utils as tu
from .event_utils import EventConfig, EventPostprocessor
from .logging_utils import get_logger
from .snn_utils import PerChannelLIF, SPIKE_LEVELS, clamp_params
from .validation_utils import ConfigValidator, ValidationError

logger = get_logger(__name__)


@dataclass
class GateNetConfig:
    """Widths, depth and head constants of the gate network.

    ``channels``, ``frames`` and ``video_dim`` left at None are taken from
    the data when the model is built.
    """
    hidden_dim: int = config.GATE_SETTINGS['hidden_dim']
    depth: int = config.GATE_SETTINGS['depth']
    heads: int = config.GATE_SETTINGS['heads']
    mlp_ratio: float = config.GATE_SETTINGS['mlp_ratio']
    stem_width: int = config.GATE_SETTINGS['stem_width']
    grid: int = config.GATE_SETTINGS['grid']
    gate_bias: float = config.GATE_SETTINGS['gate_bias']
    gate_temperature: float = config.GATE_SETTINGS['gate_temperature']
    acc_tau: float = config.GATE_SETTINGS['acc_tau']
    acc_lambda: float = config.GATE_SETTINGS['acc_lambda']
    anom_dim: int = config.GATE_SETTINGS['anom_dim']
    gate_dim: int = config.GATE_SETTINGS['gate_dim']
    head_hidden: int = config.GATE_SETTINGS['head_hidden']
    sepconv_expansion: int = config.GATE_SETTINGS['sepconv_expansion']
    sepconv_kernel: int = config.GATE_SETTINGS['sepconv_kernel']
    attn_scale: Optional[float] = config.GATE_SETTINGS['attn_scale']
    learnable_lif: bool = config.GATE_SETTINGS['learnable_lif']
    spike_levels: int = SPIKE_LEVELS
    surrogate_alpha: float = config.SNN_SETTINGS['surrogate_alpha']
    reset: str = config.SNN_SETTINGS['reset']
    streaming: bool = config.SNN_SETTINGS['streaming']
    channels: Optional[int] = None
    frames: Optional[int] = None
    video_dim: Optional[int] = None
    sdtb_only: bool = False

    def __post_init__(self):
        if self.hidden_dim % self.heads:
            raise ValidationError(f"hidden_dim {self.hidden_dim} must be divisible by heads {self.heads}")
        ConfigValidator.require(ConfigValidator.validate_positive(self.gate_temperature, 'gate_temperature'),
                                ConfigValidator.validate_positive(self.acc_tau, 'acc_tau'))
        if self.spike_levels != SPIKE_LEVELS:
            raise ValidationError(f"spike_levels is fixed at {SPIKE_LEVELS}, got {self.spike_levels}")
        if self.depth < 0:
            raise ValidationError("depth must be non-negative")
        if self.sepconv_kernel % 2 == 0:
            raise ValidationError("sepconv kernel must be odd")

    @property
    def head_dim(self) -> int:
        return self.hidden_dim // self.heads

    @property
    def mlp_hidden(self) -> int:
        return int(round(self.hidden_dim * self.mlp_ratio))

    @property
    def scale(self) -> float:
        return self.attn_scale if self.attn_scale is not None else 1.0 / math.sqrt(self.head_dim)

    @classmethod
    def full_scale(cls, **overrides) -> 'GateNetConfig':
        values = dict(config.FULL_SCALE_GATE)
        values.update(overrides)
        return cls(**values)

    def to_dict(self) -> Dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, values: Dict) -> 'GateNetConfig':
        ConfigValidator.validate_keys('model', values, [f.name for f in fields(cls)])
        ConfigValidator.validate_types('model', values, asdict(cls()))
        return cls(**values)


@dataclass
class GateOutput:
    """Gate maps, per-frame (mean, max) stats, anomaly trace and projections"""
    gate_maps: tu.Tensor       # B x T x G x G
    stats: tu.Tensor           # B x T x 2
    trace: tu.Tensor           # B x T
    f_anom: tu.Tensor          # B x anom_dim
    f_gate: tu.Tensor          # B x gate_dim


@dataclass
class FusedRepresentation:
    features: tu.Tensor        # B x (video_dim + anom_dim + gate_dim)
    y_hat: tu.Tensor           # B
    y_snn: tu.Tensor           # B


@dataclass
class ForwardResult:
    gate: GateOutput
    fused: FusedRepresentation
    firing_rate: tu.Tensor
    site_rates: Dict[str, float] = field(default_factory=dict)


def xavier_uniform(rng: np.random.Generator, shape: Tuple[int, ...], fan_in: int, fan_out: int) -> np.ndarray:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


def anomaly_accumulator(gate_means, tau_a: float = config.GATE_SETTINGS['acc_tau'],
                        lam: float = config.GATE_SETTINGS['acc_lambda']):
    """A_t = (1 - 1/tau_a) A_{t-1} + lam * g_t along the last axis, A before t=0 is 0.

    Numpy in, numpy out; Tensor in, Tensor out. Never fires.
    """
    decay = 1.0 - 1.0 / tau_a
    if isinstance(gate_means, tu.Tensor):
        acc, trace = None, []
        for t in range(gate_means.shape[-1]):
            drive = tu.mul(tu.getitem(gate_means, (Ellipsis, t)), lam)
            acc = drive if acc is None else tu.add(tu.mul(acc, decay), drive)
            trace.append(acc)
        return tu.stack(trace, axis=-1)

    gate_means = np.asarray(gate_means, dtype=np.float64)
    trace = np.zeros_like(gate_means)
    acc = np.zeros(gate_means.shape[:-1])
    for t in range(gate_means.shape[-1]):
        acc = decay * acc + lam * gate_means[..., t]
        trace[..., t] = acc
    return trace


class SpikeRecorder:
    """Collects every multispike output of one forward pass"""

    def __init__(self, levels: int, alpha: float):
        self.levels = levels
        self.alpha = alpha
        self.sites: List[Tuple[str, tu.Tensor]] = []

    def spike(self, name: str, x: tu.Tensor) -> tu.Tensor:
        s = tu.multispike(x, 1.0, self.levels, self.alpha)
        self.sites.append((name, s))
        return s

    def add(self, name: str, s: tu.Tensor):
        self.sites.append((name, s))

    def firing_rate(self) -> tu.Tensor:
        """Differentiable mean of s / L over all sites"""
        if not self.sites:
            return tu.Tensor(0.0)
        total = self.sites[0][1].sum()
        for _, s in self.sites[1:]:
            total = tu.add(total, s.sum())
        count = sum(s.size for _, s in self.sites)
        return tu.mul(total, 1.0 / (self.levels * count))

    def site_rates(self) -> Dict[str, float]:
        rates: Dict[str, List[float]] = {}
        for name, s in self.sites:
            rates.setdefault(name, []).append(float(s.data.mean() / self.levels))
        return {name: float(np.mean(vals)) for name, vals in rates.items()}


class ParameterRegistry:
    """Named parameter store shared by all layers of one model"""

    def __init__(self, seed: int):
        self.rng = np.random.default_rng(seed)
        self.params: Dict[str, tu.Parameter] = {}

    def create(self, name: str, value: np.ndarray, learnable: bool = True) -> tu.Parameter:
        if name in self.params:
            raise ValidationError(f"duplicate parameter name '{name}'")
        param = tu.Parameter(value, name=name, learnable=learnable)
        self.params[name] = param
        return param

    def adopt(self, param: tu.Parameter) -> tu.Parameter:
        self.params[param.name] = param
        return param


class Linear:
    """Token-wise dense layer on the last axis"""

    def __init__(self, registry: ParameterRegistry, name: str, d_in: int, d_out: int,
                 bias: bool = True, zero: bool = False):
        shape = (d_in, d_out)
        init = np.zeros(shape) if zero else xavier_uniform(registry.rng, shape, d_in, d_out)
        self.weight = registry.create(f'{name}.weight', init)
        self.bias = registry.create(f'{name}.bias', np.zeros(d_out)) if bias else None

    def __call__(self, x: tu.Tensor) -> tu.Tensor:
        out = tu.matmul(x, self.weight)
        return tu.add(out, self.bias) if self.bias is not None else out


class Affine:
    """Per-channel scale and shift (batch norm folded)"""

    def __init__(self, registry: ParameterRegistry, name: str, channels: int, channel_axis: int = -1):
        self.gamma = registry.create(f'{name}.gamma', np.ones(channels))
        self.beta = registry.create(f'{name}.beta', np.zeros(channels))
        self.channel_axis = channel_axis

    def __call__(self, x: tu.Tensor) -> tu.Tensor:
        if self.channel_axis == -1:
            return tu.add(tu.mul(x, self.gamma), self.beta)
        shape = (-1,) + (1,) * (x.ndim - 1 - self.channel_axis)
        return tu.add(tu.mul(x, tu.reshape(self.gamma, shape)), tu.reshape(self.beta, shape))


def tokens_to_maps(u: tu.Tensor, frames: int, grid: int) -> tu.Tensor:
    """B x (T*G*G) x d -> (B*T) x d x G x G"""
    batch, _, dim = u.shape
    x = tu.reshape(u, (batch, frames, grid, grid, dim))
    x = tu.transpose(x, (0, 1, 4, 2, 3))
    return tu.reshape(x, (batch * frames, dim, grid, grid))


def maps_to_tokens(x: tu.Tensor, batch: int, frames: int) -> tu.Tensor:
    """(B*T) x d x G x G -> B x (T*G*G) x d"""
    _, dim, height, width = x.shape
    x = tu.reshape(x, (batch, frames, dim, height, width))
    x = tu.transpose(x, (0, 1, 3, 4, 2))
    return tu.reshape(x, (batch, frames * height * width, dim))


class SpikeSepConv:
    """Multispike -> depthwise k x k -> pointwise -> affine, with optional expansion"""

    def __init__(self, registry: ParameterRegistry, name: str, cfg: GateNetConfig):
        dim, k, e = cfg.hidden_dim, cfg.sepconv_kernel, cfg.sepconv_expansion
        inner = dim * e
        self.name = name
        self.kernel = k
        self.expand = Linear(registry, f'{name}.expand', dim, inner) if e > 1 else None
        self.dw = registry.create(f'{name}.dw.weight', xavier_uniform(registry.rng, (inner, 1, k, k), k * k, k * k))
        self.pw = Linear(registry, f'{name}.pw', inner, dim)
        self.norm = Affine(registry, f'{name}.norm', dim)

    def __call__(self, u: tu.Tensor, rec: SpikeRecorder, frames: int, grid: int) -> tu.Tensor:
        x = rec.spike(f'{self.name}.in', u)
        if self.expand is not None:
            x = rec.spike(f'{self.name}.mid', self.expand(x))
        maps = tu.depthwise_conv2d(tokens_to_maps(x, frames, grid), self.dw, padding=self.kernel // 2)
        return self.norm(self.pw(maps_to_tokens(maps, u.shape[0], frames)))


class SpikeAttention:
    """Linear spike attention over the joint (time, token) axis"""

    def __init__(self, registry: ParameterRegistry, name: str, cfg: GateNetConfig):
        dim = cfg.hidden_dim
        self.name = name
        self.heads = cfg.heads
        self.head_dim = cfg.head_dim
        self.scale = cfg.scale
        self.q = Linear(registry, f'{name}.q', dim, dim)
        self.k = Linear(registry, f'{name}.k', dim, dim)
        self.v = Linear(registry, f'{name}.v', dim, dim)
        self.out = Linear(registry, f'{name}.out', dim, dim)

    def split_heads(self, x: tu.Tensor) -> tu.Tensor:
        batch, tokens, _ = x.shape
        return tu.transpose(tu.reshape(x, (batch, tokens, self.heads, self.head_dim)), (0, 2, 1, 3))

    def __call__(self, u: tu.Tensor, rec: SpikeRecorder) -> tu.Tensor:
        batch, tokens, dim = u.shape
        q = self.split_heads(rec.spike(f'{self.name}.q', self.q(u)))
        k = self.split_heads(rec.spike(f'{self.name}.k', self.k(u)))
        v = self.split_heads(rec.spike(f'{self.name}.v', self.v(u)))
        attn = linear_spike_attention(q, k, v, self.scale)
        s = rec.spike(f'{self.name}.attn', attn)
        merged = tu.reshape(tu.transpose(s, (0, 2, 1, 3)), (batch, tokens, dim))
        return self.out(merged)


def linear_spike_attention(q: tu.Tensor, k: tu.Tensor, v: tu.Tensor, scale: float) -> tu.Tensor:
    """Q (K^T V) * scale, computed with K^T V first"""
    kv = tu.matmul(tu.transpose(k, tuple(range(k.ndim - 2)) + (k.ndim - 1, k.ndim - 2)), v)
    return tu.mul(tu.matmul(q, kv), scale)


class SpikeMLP:
    """Linear -> Multispike -> Linear -> Multispike"""

    def __init__(self, registry: ParameterRegistry, name: str, cfg: GateNetConfig):
        self.name = name
        self.fc1 = Linear(registry, f'{name}.fc1', cfg.hidden_dim, cfg.mlp_hidden)
        self.fc2 = Linear(registry, f'{name}.fc2', cfg.mlp_hidden, cfg.hidden_dim)

    def __call__(self, u: tu.Tensor, rec: SpikeRecorder) -> tu.Tensor:
        h = rec.spike(f'{self.name}.hidden', self.fc1(u))
        return rec.spike(f'{self.name}.out', self.fc2(h))


class SpikeBlock:
    """Residual SepConv, attention and MLP"""

    def __init__(self, registry: ParameterRegistry, name: str, cfg: GateNetConfig):
        self.sepconv = SpikeSepConv(registry, f'{name}.sepconv', cfg)
        self.attn = SpikeAttention(registry, f'{name}.attn', cfg)
        self.mlp = SpikeMLP(registry, f'{name}.mlp', cfg)

    def __call__(self, u: tu.Tensor, rec: SpikeRecorder, frames: int, grid: int) -> tu.Tensor:
        u = tu.add(u, self.sepconv(u, rec, frames, grid))
        u = tu.add(u, self.attn(u, rec))
        return tu.add(u, self.mlp(u, rec))


class ClassifierHead:
    """Linear -> GELU -> Linear (zero-initialized) -> sigmoid"""

    def __init__(self, registry: ParameterRegistry, name: str, d_in: int, hidden: int):
        self.fc1 = Linear(registry, f'{name}.fc1', d_in, hidden)
        self.fc2 = Linear(registry, f'{name}.fc2', hidden, 1, zero=True)

    def __call__(self, x: tu.Tensor) -> tu.Tensor:
        logit = self.fc2(tu.gelu(self.fc1(x)))
        return tu.sigmoid(tu.reshape(logit, (x.shape[0],)))


class SpikeGateNet:
    """Event tensor (+ optional video embedding) -> gate maps, trace and class probabilities"""

    def __init__(self, cfg: GateNetConfig, event_config: Optional[EventConfig] = None, seed: int = 0):
        if cfg.channels is None or cfg.frames is None:
            raise ValidationError("channels and frames must be set before building the model")
        self.config = cfg
        self.event_config = event_config or EventConfig()
        if self.event_config.grid != cfg.grid:
            raise ValidationError(f"event grid {self.event_config.grid} does not match model grid {cfg.grid}")
        self.video_dim = 0 if cfg.sdtb_only or cfg.video_dim is None else cfg.video_dim
        self.seed = seed
        reg = ParameterRegistry(seed)
        self.registry = reg
        channels, width = cfg.channels, cfg.stem_width

        self.event_scale = reg.create('events.w_c', np.full(channels, self.event_config.w_init))
        self.lif = PerChannelLIF(channels, name='stem.lif', learnable=cfg.learnable_lif, reset=cfg.reset,
                                 levels=cfg.spike_levels, alpha=cfg.surrogate_alpha, streaming=cfg.streaming)
        for p in self.lif.parameters():
            reg.adopt(p)
        self.stem_weight = reg.create('stem.conv.weight',
                                      xavier_uniform(reg.rng, (channels * width, 1, 3, 3), 9, width * 9))
        self.stem_norm = Affine(reg, 'stem.norm', channels * width, channel_axis=1)
        self.fusion = Linear(reg, 'fusion', channels * width, cfg.hidden_dim)
        self.fusion_norm = Affine(reg, 'fusion.norm', cfg.hidden_dim)
        self.blocks = [SpikeBlock(reg, f'blocks.{i}', cfg) for i in range(cfg.depth)]
        self.gate_weight = reg.create('gate.weight', xavier_uniform(reg.rng, (cfg.hidden_dim, 1), cfg.hidden_dim, 1))
        self.gate_bias = reg.create('gate.bias', np.array([cfg.gate_bias]))
        self.anom_proj = Linear(reg, 'proj.anom', cfg.frames, cfg.anom_dim)
        self.gate_proj = Linear(reg, 'proj.gate', 2 * cfg.frames, cfg.gate_dim)
        sdtb_dim = cfg.anom_dim + cfg.gate_dim
        self.head = ClassifierHead(reg, 'head.main', self.video_dim + sdtb_dim, cfg.head_hidden)
        self.aux_head = ClassifierHead(reg, 'head.aux', sdtb_dim, cfg.head_hidden)

    # --- parameters ---------------------------------------------------------

    def named_parameters(self) -> Dict[str, tu.Parameter]:
        return dict(self.registry.params)

    def parameters(self) -> List[tu.Parameter]:
        return list(self.registry.params.values())

    def aux_parameters(self) -> List[tu.Parameter]:
        return [p for name, p in self.registry.params.items() if name.startswith('head.aux')]

    def clamp_params(self):
        clamp_params(self.lif.params)

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in sorted(self.registry.params.items())}

    def load_state_dict(self, state: Dict[str, np.ndarray]):
        missing = set(self.registry.params) - set(state)
        unknown = set(state) - set(self.registry.params)
        if missing or unknown:
            raise ValidationError(f"checkpoint parameters do not match model (missing={sorted(missing)}, "
                                  f"unknown={sorted(unknown)})")
        for name, value in state.items():
            param = self.registry.params[name]
            value = np.asarray(value, dtype=np.float64)
            if value.shape != param.shape:
                raise ValidationError(f"shape mismatch for '{name}': {value.shape} vs {param.shape}")
            param.data = value.copy()

    # --- stages -------------------------------------------------------------

    def scale_events(self, pooled: np.ndarray) -> tu.Tensor:
        """Apply softplus(w_c) and the post threshold to pooled maps, B x T x C x G x G"""
        return EventPostprocessor.scale_and_threshold(tu.Tensor(pooled), self.event_scale, self.event_config)

    def stage1_perchannel(self, events: tu.Tensor, rec: SpikeRecorder) -> tu.Tensor:
        """Per-channel LIF -> grouped 3x3 conv to D_c maps -> affine; (B*T) x C*D_c x G x G"""
        batch, frames, channels, grid, _ = events.shape
        spikes = self.lif(events)
        rec.add('stem.lif', spikes)
        maps = tu.reshape(spikes, (batch * frames, channels, grid, grid))
        return self.stem_norm(tu.conv2d(maps, self.stem_weight, padding=1, groups=channels))

    def stage2_fusion(self, stem: tu.Tensor, batch: int, frames: int) -> tu.Tensor:
        """1x1 fusion to d, affine, GELU; B x (T*G*G) x d"""
        tokens = maps_to_tokens(stem, batch, frames)
        return tu.gelu(self.fusion_norm(self.fusion(tokens)))

    def spike_block(self, index: int, u: tu.Tensor, rec: SpikeRecorder, frames: int) -> tu.Tensor:
        return self.blocks[index](u, rec, frames, self.config.grid)

    def gate_head(self, u: tu.Tensor, frames: int) -> tu.Tensor:
        """sigma((U w + b) / tau_gate) -> B x T x G x G"""
        grid = self.config.grid
        logits = tu.add(tu.matmul(u, self.gate_weight), self.gate_bias)
        gate = tu.sigmoid(tu.mul(logits, 1.0 / self.config.gate_temperature))
        return tu.reshape(gate, (u.shape[0], frames, grid, grid))

    def gate_statistics(self, gate_maps: tu.Tensor) -> GateOutput:
        batch, frames = gate_maps.shape[:2]
        flat = tu.reshape(gate_maps, (batch, frames, -1))
        g_mean = tu.mean(flat, axis=-1)
        g_max = tu.max_reduce(flat, axis=-1)
        stats = tu.stack([g_mean, g_max], axis=-1)
        trace = anomaly_accumulator(g_mean, self.config.acc_tau, self.config.acc_lambda)
        f_anom = self.anom_proj(trace)
        f_gate = self.gate_proj(tu.reshape(stats, (batch, 2 * frames)))
        return GateOutput(gate_maps=gate_maps, stats=stats, trace=trace, f_anom=f_anom, f_gate=f_gate)

    def fuse_and_classify(self, video: Optional[np.ndarray], gate: GateOutput) -> FusedRepresentation:
        sdtb = tu.concat([gate.f_anom, gate.f_gate], axis=-1)
        if self.video_dim:
            if video is None:
                raise ValidationError("model expects a video embedding but none was given")
            video = np.asarray(video, dtype=np.float64).reshape(sdtb.shape[0], -1)
            if video.shape[1] != self.video_dim:
                raise ValidationError(f"video embedding dim {video.shape[1]} != {self.video_dim}")
            features = tu.concat([tu.Tensor(video), sdtb], axis=-1)
        else:
            features = sdtb
        return FusedRepresentation(features=features, y_hat=self.head(features), y_snn=self.aux_head(sdtb))

    # --- forward ------------------------------------------------------------

    def forward(self, pooled: np.ndarray, video: Optional[np.ndarray] = None) -> ForwardResult:
        """Run the branch on pooled event maps (B x T x C x G x G)"""
        pooled = np.asarray(pooled, dtype=np.float64)
        if pooled.ndim == 4:
            pooled = pooled[None]
        batch, frames, channels = pooled.shape[:3]
        if channels != self.config.channels or frames != self.config.frames:
            raise ValidationError(f"model built for T={self.config.frames}, C={self.config.channels}; "
                                  f"got T={frames}, C={channels}")
        rec = SpikeRecorder(self.config.spike_levels, self.config.surrogate_alpha)
        events = self.scale_events(pooled)
        u = self.stage2_fusion(self.stage1_perchannel(events, rec), batch, frames)
        for i in range(len(self.blocks)):
            u = self.spike_block(i, u, rec, frames)
        gate = self.gate_statistics(self.gate_head(u, frames))
        fused = self.fuse_and_classify(video, gate)
        return ForwardResult(gate=gate, fused=fused, firing_rate=rec.firing_rate(), site_rates=rec.site_rates())

    __call__ = forward
