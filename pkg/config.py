# config.py
"""
Centralized configuration for SpikeTrace
All defaults for the event front-end, spiking gate, training and analysis in one place
"""
import os
import math
from dotenv import load_dotenv

load_dotenv()

# App Information
APP_NAME = "SpikeTrace"
APP_VERSION = "1.0.0"
APP_DESCRIPTION = "Spiking temporal pathway for AI-generated video detection"

# Environment Detection
IS_PRODUCTION = os.getenv('ENVIRONMENT', 'development') == 'production'

# Pseudo-event front-end
EVENT_SETTINGS = {
    'c_th': 0.10,
    'beta': 0.025,
    'grid': 14,
    'tau_post': 0.1,
    's_post': 0.05,
    'norm_eps': 1e-8,
    'sobel_eps': 1e-6,
    'w_init': math.log(math.e - 1.0),  # softplus(w_init) == 1
    'use_embeddings': True,
    'channels_pixel': ['HF', 'Sobel', 'AbsDiff', 'Diff2'],
    'channels_trajectory': ['d', 'kappa'],
}

# LIF neurons and multispike firing
SNN_SETTINGS = {
    'spike_levels': 4,
    'tau_base': 2.0,
    'vth_base': 1.0,
    'tau_range': [0.5, 20.0],
    'vth_range': [0.05, 10.0],
    'surrogate_alpha': 2.0,
    'reset': 'soft',
    'streaming': False,
}

# Spike-driven gate network (desk scale)
GATE_SETTINGS = {
    'hidden_dim': 64,
    'depth': 2,
    'heads': 4,
    'mlp_ratio': 2.5,
    'stem_width': 8,
    'grid': 14,
    'gate_bias': -2.0,
    'gate_temperature': 1.0,
    'acc_tau': 2.0,
    'acc_lambda': 0.5,
    'anom_dim': 64,
    'gate_dim': 64,
    'head_hidden': 64,
    'sepconv_expansion': 1,
    'sepconv_kernel': 3,
    'attn_scale': None,
    'learnable_lif': True,
}

# Full-size network used for the energy tables
FULL_SCALE_GATE = {
    'hidden_dim': 256,
    'depth': 8,
    'heads': 4,
    'mlp_ratio': 2.5,
    'stem_width': 20,
    'grid': 14,
}

# Training objective and optimizer
TRAIN_SETTINGS = {
    'lambda_aux': 0.2,
    'lambda_supcon': 0.3,
    'lambda_rate': 0.01,
    'lambda_anom': 0.0,
    'rate_target': 0.15,
    'supcon_temperature': 0.07,
    'label_smoothing': 0.1,
    'grad_clip_norm': 1.0,
    'lr': 3e-4,
    'weight_decay': 0.01,
    'betas': [0.9, 0.999],
    'adam_eps': 1e-8,
    'lr_schedule': 'cosine',
    'epochs': 30,
    'batch_size': 8,
    'seed': int(os.getenv('SPIKETRACE_SEED', '2025')),
    'seeds': [2025, 2026, 2027],
    'silent_grad_threshold': 1e-8,
}

# Analysis metrics
METRIC_SETTINGS = {
    'tau_anom': 4.0,
    'fire_percentile': 70.0,
    'run_length': 3,
    'edge_percentile': 70.0,
    'precision_top_fraction': 0.2,
    'decision_threshold': 0.5,
    'default_metrics': ['hoyer', 'fc', 'curvature', 'volume', 'anomaly'],
    'available_metrics': ['hoyer', 'fc', 'curvature', 'volume', 'anomaly', 'traj', 'chroma', 'events'],
}

# Energy accounting (45 nm reference values)
ENERGY_SETTINGS = {
    'e_mac_pj': 4.6,
    'e_ac_pj': 0.9,
    'backbone_gflops': 281.2,
    'frames': 8,
    'channels': 6,
}

# Synthetic data generator
SYNTH_SETTINGS = {
    'frames': 8,
    'size': 56,
    'embed_dim': 32,
    'tokens': 196,
    'clips_per_class': 2,
    'seed': 0,
    'fps': 8.0,
    'speed': 1.5,
    'flicker': 0.06,
    'texture_scale': 4.0,
    'smoothness': 1.0,
    'demo_dir': os.getenv('SPIKETRACE_DEMO_DIR', 'demo_data'),
}

# Process exit codes for the command line
EXIT_CODES = {
    'ok': 0,
    'usage': 1,
    'data': 2,
    'numeric': 3,
}

# Logging Configuration
LOGGING = {
    'level': os.getenv('SPIKETRACE_LOG_LEVEL', 'INFO' if IS_PRODUCTION else 'DEBUG'),
    'format': '%(asctime)s - %(name)s - %(levelname)s - %(message)s',
    'file': 'spiketrace.log',
    'log_to_console': True,
    'log_to_file': IS_PRODUCTION
}


# Helper Functions
def get_default_run_config() -> dict:
    """Get the default JSON run config with its three sections"""
    from utils.event_utils import EventConfig
    from utils.gate_utils import GateNetConfig
    from utils.training_utils import TrainConfig

    return {
        'event': EventConfig().to_dict(),
        'model': GateNetConfig().to_dict(),
        'train': TrainConfig().to_dict(),
    }

