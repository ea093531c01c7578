# tests/__init__.py
"""
Test suite for SpikeTrace
Run tests with: python -m pytest tests/
"""

import os
import sys

# Add the parent directory to the path so we can import our modules
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

# Test configuration
TEST_CONFIG = {
    'run_slow': os.getenv('SPIKETRACE_RUN_SLOW') == '1',
    'fd_tolerance': 1e-4,
    'seed': 11,
}

# Small clips on a 7 x 7 grid keep the gate network fast
TINY_SYNTH = {
    'frames': 6,
    'size': 28,
}
TINY_EMBEDDING = {
    'dim': 8,
    'tokens': 49,
}
TINY_EVENT = {
    'grid': 7,
}
TINY_GATE = {
    'hidden_dim': 8,
    'depth': 1,
    'heads': 2,
    'mlp_ratio': 2.0,
    'stem_width': 2,
    'grid': 7,
    'anom_dim': 4,
    'gate_dim': 4,
    'head_hidden': 8,
}
TINY_TRAIN = {
    'epochs': 2,
    'batch_size': 4,
    'lr': 1e-3,
    'seed': 5,
}


# Shared test fixtures and utilities
def tiny_clips(n_pairs=2, base_seed=0, with_embeddings=True):
    """Paired natural/generated clips at the tiny sizes above"""
    from utils.demo_utils import DemoDataGenerator, ClipRecipe

    clips, embeddings = [], []
    for k in range(n_pairs):
        for recipe in ClipRecipe.paired(base_seed + k, **TINY_SYNTH):
            clips.append(DemoDataGenerator.gen_clip(recipe))
            embeddings.append(DemoDataGenerator.gen_embeddings(recipe, **TINY_EMBEDDING) if with_embeddings else None)
    return clips, embeddings


def tiny_dataset(n_pairs=2, base_seed=0, with_embeddings=True):
    """ClipDataset over tiny_clips on the 7 x 7 event grid"""
    from utils.event_utils import EventConfig
    from utils.training_utils import ClipDataset

    clips, embeddings = tiny_clips(n_pairs, base_seed, with_embeddings)
    return ClipDataset.from_clips(clips, embeddings, EventConfig(**TINY_EVENT))
