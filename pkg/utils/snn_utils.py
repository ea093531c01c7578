# utils/snn_utils.py
"""
Leaky integrate-and-fire neurons with per-channel learnable log-domain
time constants and thresholds, multispike firing and the ATan surrogate
"""
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

import config
from . import tensor_utils as tu
from .logging_utils import get_logger
from .validation_utils import NumericError, ValidationError

logger = get_logger(__name__)

SPIKE_LEVELS = config.SNN_SETTINGS['spike_levels']
TAU_RANGE = tuple(config.SNN_SETTINGS['tau_range'])
VTH_RANGE = tuple(config.SNN_SETTINGS['vth_range'])
RESET_MODES = ('soft', 'hard')


def multispike_forward(v: float, v_th: float, levels: int = SPIKE_LEVELS, mode: str = 'round') -> int:
    """floor(clamp(v / v_th, 0, L) + 0.5)"""
    if v_th <= 0:
        raise ValidationError("threshold must be positive")
    return int(tu.multispike_levels(np.float64(v) / v_th, levels, mode))


def multispike_surrogate(v: float, v_th: float, alpha: float = config.SNN_SETTINGS['surrogate_alpha'],
                         levels: int = SPIKE_LEVELS, mode: str = 'round') -> float:
    """ATan surrogate of ds/du at u = v / v_th, summed over the L thresholds"""
    if alpha <= 0:
        raise ValidationError("surrogate alpha must be positive")
    return float(tu.atan_surrogate(np.float64(v) / v_th, levels, alpha, mode))


def firing_rate(spikes: np.ndarray, levels: int = SPIKE_LEVELS) -> float:
    """Mean of s / L"""
    spikes = np.asarray(spikes, dtype=np.float64)
    return float(spikes.mean() / levels) if spikes.size else 0.0


@dataclass
class LifChannelParams:
    """Log-domain time constant and threshold, one entry per channel"""
    theta_tau: tu.Parameter
    theta_vth: tu.Parameter
    tau_base: float = config.SNN_SETTINGS['tau_base']
    vth_base: float = config.SNN_SETTINGS['vth_base']
    tau_range: Tuple[float, float] = TAU_RANGE
    vth_range: Tuple[float, float] = VTH_RANGE

    @classmethod
    def create(cls, channels: int, prefix: str = 'lif', learnable: bool = True,
               tau: Optional[float] = None, v_th: Optional[float] = None) -> 'LifChannelParams':
        """Initialize theta at 0 (tau = 2, V_th = 1) unless explicit values are given"""
        tau_base = config.SNN_SETTINGS['tau_base']
        vth_base = config.SNN_SETTINGS['vth_base']
        theta_tau = np.full(channels, 0.0 if tau is None else math.log(tau / tau_base))
        theta_vth = np.full(channels, 0.0 if v_th is None else math.log(v_th / vth_base))
        return cls(tu.Parameter(theta_tau, f'{prefix}.theta_tau', learnable),
                   tu.Parameter(theta_vth, f'{prefix}.theta_vth', learnable))

    @property
    def channels(self) -> int:
        return self.theta_tau.size

    def parameters(self) -> List[tu.Parameter]:
        return [self.theta_tau, self.theta_vth]

    def tau(self) -> tu.Tensor:
        """tau_c = tau0 * exp(theta), clipped to the allowed range"""
        return tu.clamp(tu.mul(tu.exp(self.theta_tau), self.tau_base), *self.tau_range)

    def v_th(self) -> tu.Tensor:
        return tu.clamp(tu.mul(tu.exp(self.theta_vth), self.vth_base), *self.vth_range)

    def recovered(self) -> Tuple[np.ndarray, np.ndarray]:
        """Current (tau, V_th) values as plain arrays"""
        return self.tau().data.copy(), self.v_th().data.copy()


def clamp_params(params: LifChannelParams) -> None:
    """Clip theta so the recovered tau and V_th sit inside their ranges"""
    lo, hi = params.tau_range
    params.theta_tau.data = np.clip(params.theta_tau.data, math.log(lo / params.tau_base), math.log(hi / params.tau_base))
    lo, hi = params.vth_range
    params.theta_vth.data = np.clip(params.theta_vth.data, math.log(lo / params.vth_base), math.log(hi / params.vth_base))


@dataclass
class LifState:
    """Membrane potential carried between timesteps"""
    v: Optional[tu.Tensor] = None
    step: int = 0

    def reset(self):
        self.v = None
        self.step = 0


def lif_step(x: tu.Tensor, state: LifState, tau, v_th, levels: int = SPIKE_LEVELS,
             alpha: float = config.SNN_SETTINGS['surrogate_alpha'], reset: str = 'soft',
             mode: str = 'round') -> tu.Tensor:
    """One update: charge, fire, reset. Returns the spike tensor and advances state"""
    decay = tu.sub(1.0, tu.div(1.0, tau))
    v = x if state.v is None else tu.add(tu.mul(decay, state.v), x)
    spikes = tu.multispike(v, v_th, levels, alpha, mode)
    fired = tu.detach(spikes)
    if reset == 'soft':
        v = tu.sub(v, tu.mul(fired, v_th))
    else:
        v = tu.mul(v, (fired.data == 0).astype(np.float64))
    if not np.all(np.isfinite(v.data)):
        raise NumericError(f"non-finite membrane at step {state.step}")
    state.v = v
    state.step += 1
    return spikes


def lif_sequence(inputs, params: Union[LifChannelParams, Tuple[float, float]], reset: str = 'soft',
                 levels: int = SPIKE_LEVELS, alpha: float = config.SNN_SETTINGS['surrogate_alpha'],
                 state: Optional[LifState] = None, mode: str = 'round') -> Tuple[tu.Tensor, LifState]:
    """Integrate a T x ... input along axis 0.

    ``params`` is either LifChannelParams (broadcast over the trailing axes)
    or a fixed (tau, V_th) pair.
    """
    if reset not in RESET_MODES:
        raise ValidationError(f"unknown reset mode '{reset}'")
    inputs = tu.as_tensor(inputs)
    if not np.all(np.isfinite(inputs.data)):
        raise NumericError("non-finite LIF input")
    if isinstance(params, LifChannelParams):
        tau, v_th = params.tau(), params.v_th()
    else:
        tau, v_th = tu.as_tensor(params[0]), tu.as_tensor(params[1])

    state = state or LifState()
    spikes = [lif_step(tu.getitem(inputs, t), state, tau, v_th, levels, alpha, reset, mode)
              for t in range(inputs.shape[0])]
    return tu.stack(spikes, axis=0), state


class PerChannelLIF:
    """Bank of LIF neurons with an independent (tau_c, V_th,c) per input channel.

    Input layout is B x T x C x H x W. With ``streaming`` on, the final
    membrane of one call seeds the next call when shapes agree.
    """

    def __init__(self, channels: int, name: str = 'lif', learnable: bool = True,
                 reset: str = config.SNN_SETTINGS['reset'], levels: int = SPIKE_LEVELS,
                 alpha: float = config.SNN_SETTINGS['surrogate_alpha'],
                 streaming: bool = config.SNN_SETTINGS['streaming']):
        if reset not in RESET_MODES:
            raise ValidationError(f"unknown reset mode '{reset}'")
        self.params = LifChannelParams.create(channels, prefix=name, learnable=learnable)
        self.reset = reset
        self.levels = levels
        self.alpha = alpha
        self.streaming = streaming
        self._cache: Optional[np.ndarray] = None

    def parameters(self) -> List[tu.Parameter]:
        return self.params.parameters()

    def clamp(self):
        clamp_params(self.params)

    def clear_cache(self):
        self._cache = None

    def __call__(self, x: tu.Tensor) -> tu.Tensor:
        x = tu.as_tensor(x)
        if x.ndim != 5 or x.shape[2] != self.params.channels:
            raise ValidationError(f"PerChannelLIF expects B x T x {self.params.channels} x H x W, got {x.shape}")
        channels = self.params.channels
        tau = tu.reshape(self.params.tau(), (1, channels, 1, 1))
        v_th = tu.reshape(self.params.v_th(), (1, channels, 1, 1))

        state = LifState()
        frame_shape = (x.shape[0],) + x.shape[2:]
        if self.streaming and self._cache is not None and self._cache.shape == frame_shape:
            state.v = tu.Tensor(self._cache)

        spikes = [lif_step(tu.getitem(x, (slice(None), t)), state, tau, v_th,
                           self.levels, self.alpha, self.reset)
                  for t in range(x.shape[1])]
        if self.streaming:
            self._cache = state.v.data.copy()
        return tu.stack(spikes, axis=1)
