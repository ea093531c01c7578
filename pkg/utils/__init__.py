# utils/__init__.py
"""
Utils package for SpikeTrace
Provides easy imports for the event front-end, spiking gate, training and analysis
"""

# Validation utilities
from .validation_utils import (
    SpikeTraceError,
    ValidationError,
    DataFormatError,
    NumericError,
    ArrayValidator,
    ConfigValidator,
    ManifestValidator
)

# Logging utilities
from .logging_utils import setup_logging, get_logger

# Differentiable core
from .tensor_utils import Tensor, Parameter, Tape, backward, finite_difference_check

# Event front-end
from .event_utils import (
    Clip,
    EmbeddingSequence,
    EventConfig,
    EventEncoder,
    EventTensor,
    assemble_event_tensor
)

# Spiking neurons
from .snn_utils import (
    LifChannelParams,
    LifState,
    PerChannelLIF,
    multispike_forward,
    multispike_surrogate,
    lif_sequence
)

# Gate network
from .gate_utils import (
    GateNetConfig,
    GateOutput,
    FusedRepresentation,
    SpikeGateNet
)

# Training
from .training_utils import (
    TrainConfig,
    Batch,
    ClipDataset,
    LossCalculator,
    AdamW,
    Trainer,
    build_model,
    evaluate,
    load_model
)

# Analytics utilities
from .analytics_utils import (
    MetricsCalculator,
    TrajectoryAnalyzer,
    GateMapAnalyzer,
    BoundaryMasks,
    raw_anomaly_trace,
    generate_metric_report
)

# Energy accounting
from .energy_utils import OpCounter, EnergyReport, energy_report, measure_firing_rate

# Export utilities
from .export_utils import (
    TensorFileIO,
    CheckpointIO,
    ManifestIO,
    ReportGenerator
)

# Demo utilities
from .demo_utils import (
    ClipRecipe,
    DemoDataGenerator,
    make_dataset
)

# Version
__version__ = '1.0.0'
__author__ = 'SpikeTrace Team'

# Define what should be imported when using "from utils import *"
__all__ = [
    # Validation utilities
    'SpikeTraceError',
    'ValidationError',
    'DataFormatError',
    'NumericError',
    'ArrayValidator',
    'ConfigValidator',
    'ManifestValidator',

    # Logging utilities
    'setup_logging',
    'get_logger',

    # Differentiable core
    'Tensor',
    'Parameter',
    'Tape',
    'backward',
    'finite_difference_check',

    # Event front-end
    'Clip',
    'EmbeddingSequence',
    'EventConfig',
    'EventEncoder',
    'EventTensor',
    'assemble_event_tensor',

    # Spiking neurons
    'LifChannelParams',
    'LifState',
    'PerChannelLIF',
    'multispike_forward',
    'multispike_surrogate',
    'lif_sequence',

    # Gate network
    'GateNetConfig',
    'GateOutput',
    'FusedRepresentation',
    'SpikeGateNet',

    # Training
    'TrainConfig',
    'Batch',
    'ClipDataset',
    'LossCalculator',
    'AdamW',
    'Trainer',
    'build_model',
    'evaluate',
    'load_model',

    # Analytics utilities
    'MetricsCalculator',
    'TrajectoryAnalyzer',
    'GateMapAnalyzer',
    'BoundaryMasks',
    'raw_anomaly_trace',
    'generate_metric_report',

    # Energy accounting
    'OpCounter',
    'EnergyReport',
    'energy_report',
    'measure_firing_rate',

    # Export utilities
    'TensorFileIO',
    'CheckpointIO',
    'ManifestIO',
    'ReportGenerator',

    # Demo utilities
    'ClipRecipe',
    'DemoDataGenerator',
    'make_dataset'
]
