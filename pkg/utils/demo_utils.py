# utils/demo_utils.py
"""
Demo utilities for generating synthetic natural/generated clip pairs and datasets
"""
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
from scipy.ndimage import gaussian_filter

import config
from .event_utils import Clip, EmbeddingSequence, LABELS
from .export_utils import ManifestIO, TensorFileIO
from .logging_utils import get_logger
from .validation_utils import ArrayValidator, ValidationError

logger = get_logger(__name__)

CLASSES = ('natural', 'generated')
CLASS_STREAM = {'natural': 1, 'generated': 2}


@dataclass(frozen=True)
class ClipRecipe:
    """Recipe for one synthetic clip and its embedding sequence"""
    kind: str = 'natural'
    frames: int = config.SYNTH_SETTINGS['frames']
    size: int = config.SYNTH_SETTINGS['size']
    speed: float = config.SYNTH_SETTINGS['speed']
    flicker: float = config.SYNTH_SETTINGS['flicker']
    texture_scale: float = config.SYNTH_SETTINGS['texture_scale']
    smoothness: float = config.SYNTH_SETTINGS['smoothness']
    seed: int = config.SYNTH_SETTINGS['seed']
    fps: float = config.SYNTH_SETTINGS['fps']

    def __post_init__(self):
        if self.kind not in CLASSES:
            raise ValidationError(f"unknown synthetic class '{self.kind}'")
        ArrayValidator.validate_min_length(self.frames, 2, 'synthetic clip')
        if self.size < 8:
            raise ValidationError("synthetic frame size must be at least 8")
        if min(self.speed, self.flicker, self.texture_scale) < 0 or not 0.0 <= self.smoothness <= 1.0:
            raise ValidationError("speed, flicker and texture scale must be >= 0 and smoothness in [0, 1]")

    @property
    def label(self) -> int:
        return LABELS['fake'] if self.kind == 'generated' else LABELS['real']

    @classmethod
    def paired(cls, seed: int, **kwargs) -> Tuple['ClipRecipe', 'ClipRecipe']:
        """Natural and generated recipes sharing one content seed"""
        natural = cls(kind='natural', seed=seed, **kwargs)
        return natural, replace(natural, kind='generated')


class DemoDataGenerator:
    """Render synthetic clips whose temporal statistics differ by class"""

    NUM_SHAPES = 3

    @staticmethod
    def _content(recipe: ClipRecipe) -> Dict[str, np.ndarray]:
        """Background texture and moving shapes shared by both classes"""
        rng = np.random.default_rng(recipe.seed)
        noise = rng.uniform(size=(recipe.size, recipe.size, 3))
        texture = gaussian_filter(noise, sigma=(recipe.texture_scale, recipe.texture_scale, 0)) if recipe.texture_scale else noise
        span = texture.max() - texture.min()
        texture = 0.2 + 0.6 * (texture - texture.min()) / (span if span > 0 else 1.0)
        angles = rng.uniform(0.0, 2.0 * np.pi, DemoDataGenerator.NUM_SHAPES)
        return {
            'background': texture,
            'centres': rng.uniform(0.25 * recipe.size, 0.75 * recipe.size, (DemoDataGenerator.NUM_SHAPES, 2)),
            'velocities': np.stack([np.cos(angles), np.sin(angles)], axis=1),
            'radii': rng.uniform(0.08 * recipe.size, 0.16 * recipe.size, DemoDataGenerator.NUM_SHAPES),
            'colours': rng.uniform(0.05, 0.95, (DemoDataGenerator.NUM_SHAPES, 3)),
        }

    @staticmethod
    def _render(content: Dict[str, np.ndarray], centres: np.ndarray, size: int) -> np.ndarray:
        """Composite anti-aliased discs over the background"""
        yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
        frame = content['background'].copy()
        for centre, radius, colour in zip(centres, content['radii'], content['colours']):
            dist = np.hypot(yy - centre[0], xx - centre[1])
            alpha = np.clip(radius - dist + 0.5, 0.0, 1.0)[..., None]
            frame = frame * (1.0 - alpha) + colour * alpha
        return frame

    @staticmethod
    def blend_weights(frames: int, smoothness: float) -> np.ndarray:
        """Interpolation weights from 0 to 1, mixing linear and smoothstep ramps"""
        u = np.linspace(0.0, 1.0, frames)
        return (1.0 - smoothness) * u + smoothness * u * u * (3.0 - 2.0 * u)

    @staticmethod
    def gen_clip(recipe: ClipRecipe) -> Clip:
        """Natural: shapes move frame by frame with per-frame pixel flicker.
        Generated: a keyframe pair cross-faded by a smooth ramp.
        """
        content = DemoDataGenerator._content(recipe)
        steps = np.arange(recipe.frames, dtype=np.float64)[:, None, None]
        tracks = content['centres'][None] + recipe.speed * steps * content['velocities'][None]

        if recipe.kind == 'natural':
            rng = np.random.default_rng([recipe.seed, CLASS_STREAM['natural']])
            frames = np.stack([DemoDataGenerator._render(content, tracks[t], recipe.size) for t in range(recipe.frames)])
            if recipe.flicker > 0:
                frames = frames + recipe.flicker * rng.uniform(-1.0, 1.0, frames.shape)
        else:
            first = DemoDataGenerator._render(content, tracks[0], recipe.size)
            last = DemoDataGenerator._render(content, tracks[-1], recipe.size)
            w = DemoDataGenerator.blend_weights(recipe.frames, recipe.smoothness)[:, None, None, None]
            frames = (1.0 - w) * first[None] + w * last[None]

        return Clip(np.clip(frames, 0.0, 1.0), label=recipe.label, source=f'synth:{recipe.kind}', fps=recipe.fps)

    @staticmethod
    def _unit(rng: np.random.Generator, shape: Tuple[int, ...]) -> np.ndarray:
        v = rng.standard_normal(shape)
        return v / np.linalg.norm(v, axis=-1, keepdims=True)

    @staticmethod
    def slerp(a: np.ndarray, b: np.ndarray, w: float) -> np.ndarray:
        """Spherical interpolation along the last axis; equal endpoints stay put"""
        na, nb = np.linalg.norm(a, axis=-1, keepdims=True), np.linalg.norm(b, axis=-1, keepdims=True)
        cos = np.clip(np.sum(a * b, axis=-1, keepdims=True) / (na * nb), -1.0, 1.0)
        omega = np.arccos(cos)
        sin = np.sin(omega)
        safe = np.where(sin > 1e-12, sin, 1.0)
        mixed = (np.sin((1.0 - w) * omega) * a + np.sin(w * omega) * b) / safe
        return np.where(sin > 1e-12, mixed, (1.0 - w) * a + w * b)

    @staticmethod
    def gen_embeddings(recipe: ClipRecipe, dim: int = config.SYNTH_SETTINGS['embed_dim'],
                       tokens: int = config.SYNTH_SETTINGS['tokens']) -> EmbeddingSequence:
        """Natural: random walks with a fresh direction every step.
        Generated: spherical interpolation between two anchors.
        Row 0 of every frame is the frame-level vector.
        """
        ArrayValidator.validate_square(tokens, 'synthetic embedding')
        anchor_rng = np.random.default_rng([recipe.seed, 7])
        start = anchor_rng.standard_normal((1 + tokens, dim))
        step = 0.25 * recipe.speed

        if recipe.kind == 'natural':
            rng = np.random.default_rng([recipe.seed, CLASS_STREAM['natural']])
            moves = step * DemoDataGenerator._unit(rng, (recipe.frames - 1, 1 + tokens, dim))
            seq = np.concatenate([start[None], start[None] + np.cumsum(moves, axis=0)], axis=0)
        else:
            rng = np.random.default_rng([recipe.seed, CLASS_STREAM['generated']])
            # second anchor: rotate the first towards a random orthogonal direction
            radius = np.linalg.norm(start, axis=-1, keepdims=True)
            ortho = rng.standard_normal(start.shape)
            ortho -= np.sum(ortho * start, axis=-1, keepdims=True) / radius ** 2 * start
            ortho /= np.linalg.norm(ortho, axis=-1, keepdims=True)
            angle = step * (recipe.frames - 1) / np.maximum(radius, 1e-8)
            end = np.cos(angle) * start + np.sin(angle) * radius * ortho
            weights = DemoDataGenerator.blend_weights(recipe.frames, recipe.smoothness)
            seq = np.stack([DemoDataGenerator.slerp(start, end, w) for w in weights])
            gap = np.linalg.norm(end - start, axis=-1, keepdims=True)
            seq = seq + 1e-3 * gap[None] * rng.standard_normal(seq.shape)

        return EmbeddingSequence.from_array(seq)


def make_dataset(n_per_class: int, out_dir: Union[str, Path], base_seed: int = config.SYNTH_SETTINGS['seed'],
                 with_embeddings: bool = True, **recipe_kwargs) -> List[Dict]:
    """Write paired clips (CT01), optional embeddings and manifest.json; returns the manifest entries"""
    if n_per_class < 1:
        raise ValidationError("need at least one clip per class")
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise ValidationError(f"cannot create dataset directory {out_dir}: {e}")

    entries = []
    for k in range(n_per_class):
        seed = base_seed + k
        for recipe in ClipRecipe.paired(seed, **recipe_kwargs):
            index = len(entries)
            clip = DemoDataGenerator.gen_clip(recipe)
            clip_name = f'clip_{index:04d}.ct01'
            TensorFileIO.write(out_dir / clip_name, clip.frames)
            entry = {'path': clip_name, 'label': recipe.label, 'seed': seed, 'fps': recipe.fps, 'source': recipe.kind}
            if with_embeddings:
                emb_name = f'emb_{index:04d}.ct01'
                TensorFileIO.write(out_dir / emb_name, DemoDataGenerator.gen_embeddings(recipe).to_array())
                entry['embedding'] = emb_name
            entries.append(entry)

    ManifestIO.write(out_dir, entries)
    logger.info(f"Wrote {len(entries)} synthetic clips to {out_dir}")
    return entries


def load_pairs(n_pairs: int, base_seed: int = 0, with_embeddings: bool = True,
               **recipe_kwargs) -> Tuple[List[Clip], List[Optional[EmbeddingSequence]]]:
    """In-memory version of make_dataset"""
    clips, embeddings = [], []
    for k in range(n_pairs):
        for recipe in ClipRecipe.paired(base_seed + k, **recipe_kwargs):
            clips.append(DemoDataGenerator.gen_clip(recipe))
            embeddings.append(DemoDataGenerator.gen_embeddings(recipe) if with_embeddings else None)
    return clips, embeddings
