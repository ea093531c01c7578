# utils/export_utils.py
"""
Export utilities: CT01 tensor files, versioned checkpoints, CSV/JSON reports and graymaps
"""
import json
import struct
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
import pandas as pd

import config
from .logging_utils import get_logger
from .validation_utils import DataFormatError, ManifestValidator, ValidationError

logger = get_logger(__name__)

PathLike = Union[str, Path]

CT01_MAGIC = b'CT01'
CT01_DTYPE_F32 = 1
CHECKPOINT_MAGIC = b'SPKC'
CHECKPOINT_VERSION = 1
CSV_FLOAT_FORMAT = '%.10g'


class TensorFileIO:
    """Read and write the CT01 binary tensor format"""

    @staticmethod
    def encode(array: np.ndarray) -> bytes:
        """Serialize an array as CT01 bytes (payload is little-endian f32)"""
        array = np.asarray(array)
        header = CT01_MAGIC + struct.pack('<BI', CT01_DTYPE_F32, array.ndim)
        header += struct.pack(f'<{array.ndim}I', *array.shape)
        return header + np.ascontiguousarray(array, dtype='<f4').tobytes()

    @staticmethod
    def decode(blob: bytes, name: str = 'tensor') -> np.ndarray:
        """Parse CT01 bytes into a float64 array"""
        if len(blob) < 9 or blob[:4] != CT01_MAGIC:
            raise DataFormatError(f"{name}: missing CT01 magic")
        dtype, rank = struct.unpack_from('<BI', blob, 4)
        if dtype != CT01_DTYPE_F32:
            raise DataFormatError(f"{name}: unsupported dtype tag {dtype}")
        offset = 9 + 4 * rank
        if len(blob) < offset:
            raise DataFormatError(f"{name}: truncated header")
        shape = struct.unpack_from(f'<{rank}I', blob, 9)
        expected = 4 * int(np.prod(shape, dtype=np.int64))
        if len(blob) - offset != expected:
            raise DataFormatError(f"{name}: payload is {len(blob) - offset} bytes, expected {expected}")
        return np.frombuffer(blob, dtype='<f4', offset=offset).astype(np.float64).reshape(shape)

    @staticmethod
    def write(path: PathLike, array: np.ndarray) -> Path:
        path = Path(path)
        try:
            path.write_bytes(TensorFileIO.encode(array))
        except OSError as e:
            raise ValidationError(f"cannot write {path}: {e}")
        return path

    @staticmethod
    def read(path: PathLike) -> np.ndarray:
        path = Path(path)
        try:
            blob = path.read_bytes()
        except OSError as e:
            raise DataFormatError(f"cannot read {path}: {e}")
        return TensorFileIO.decode(blob, str(path))


class CheckpointIO:
    """Versioned parameter checkpoints: magic, version, JSON header, f64 payload"""

    @staticmethod
    def encode(state: Dict[str, np.ndarray], run_config: Dict) -> bytes:
        entries, chunks, offset = [], [], 0
        for name in sorted(state):
            value = np.ascontiguousarray(state[name], dtype='<f8')
            entries.append({'name': name, 'shape': list(value.shape), 'offset': offset})
            chunks.append(value.tobytes())
            offset += value.nbytes
        header = json.dumps({'version': CHECKPOINT_VERSION, 'config': run_config, 'params': entries},
                            sort_keys=True).encode('utf-8')
        return CHECKPOINT_MAGIC + struct.pack('<II', CHECKPOINT_VERSION, len(header)) + header + b''.join(chunks)

    @staticmethod
    def decode(blob: bytes, name: str = 'checkpoint') -> Tuple[Dict, Dict[str, np.ndarray]]:
        if len(blob) < 12 or blob[:4] != CHECKPOINT_MAGIC:
            raise DataFormatError(f"{name}: not a checkpoint file")
        version, header_len = struct.unpack_from('<II', blob, 4)
        if version != CHECKPOINT_VERSION:
            raise DataFormatError(f"{name}: unsupported checkpoint version {version}")
        try:
            header = json.loads(blob[12:12 + header_len].decode('utf-8'))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise DataFormatError(f"{name}: corrupt header ({e})")
        payload = blob[12 + header_len:]
        state = {}
        for entry in header.get('params', []):
            count = int(np.prod(entry['shape'], dtype=np.int64))
            end = entry['offset'] + 8 * count
            if end > len(payload):
                raise DataFormatError(f"{name}: payload too short for '{entry['name']}'")
            state[entry['name']] = np.frombuffer(payload, dtype='<f8', count=count,
                                                 offset=entry['offset']).reshape(entry['shape']).copy()
        return header.get('config', {}), state

    @staticmethod
    def save(path: PathLike, state: Dict[str, np.ndarray], run_config: Dict) -> Path:
        path = Path(path)
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_bytes(CheckpointIO.encode(state, run_config))
        except OSError as e:
            raise ValidationError(f"cannot write checkpoint {path}: {e}")
        logger.info(f"Checkpoint written to {path}")
        return path

    @staticmethod
    def load(path: PathLike) -> Tuple[Dict, Dict[str, np.ndarray]]:
        path = Path(path)
        try:
            blob = path.read_bytes()
        except OSError as e:
            raise DataFormatError(f"cannot read checkpoint {path}: {e}")
        return CheckpointIO.decode(blob, str(path))


class ManifestIO:
    """Dataset manifest files"""

    FILENAME = 'manifest.json'

    @staticmethod
    def write(out_dir: PathLike, entries: List[Dict], extra: Optional[Dict] = None) -> Path:
        path = Path(out_dir) / ManifestIO.FILENAME
        body = {'entries': entries}
        body.update(extra or {})
        path.write_text(json.dumps(body, indent=2, sort_keys=True) + '\n')
        return path

    @staticmethod
    def read(data_dir: PathLike) -> List[Dict]:
        path = Path(data_dir) / ManifestIO.FILENAME
        try:
            manifest = json.loads(path.read_text())
        except OSError as e:
            raise DataFormatError(f"cannot read manifest {path}: {e}")
        except json.JSONDecodeError as e:
            raise DataFormatError(f"manifest {path} is not valid JSON: {e}")
        return ManifestValidator.validate_manifest(manifest)


class ReportGenerator:
    """Generate CSV, JSON and graymap outputs"""

    @staticmethod
    def generate_csv_export(rows: Union[pd.DataFrame, List[Dict]], path: Optional[PathLike] = None,
                            columns: Optional[List[str]] = None) -> str:
        """Render rows as CSV text and optionally write it"""
        df = rows if isinstance(rows, pd.DataFrame) else pd.DataFrame(rows)
        if columns:
            df = df[[col for col in columns if col in df.columns]]
        text = df.to_csv(index=False, float_format=CSV_FLOAT_FORMAT, lineterminator='\n')
        if path is not None:
            Path(path).write_text(text)
        return text

    @staticmethod
    def generate_json_report(data: Dict, path: Optional[PathLike] = None) -> str:
        text = json.dumps(data, indent=2, sort_keys=True) + '\n'
        if path is not None:
            Path(path).write_text(text)
        return text

    @staticmethod
    def encode_pgm(gate_map: np.ndarray) -> bytes:
        """8-bit binary graymap, values in [0, 1] scaled to [0, 255]"""
        gate_map = np.asarray(gate_map, dtype=np.float64)
        if gate_map.ndim != 2:
            raise ValidationError(f"graymap needs a 2D map, got shape {gate_map.shape}")
        pixels = np.clip(np.round(gate_map * 255.0), 0, 255).astype(np.uint8)
        height, width = pixels.shape
        return f'P5\n{width} {height}\n255\n'.encode('ascii') + pixels.tobytes()

    @staticmethod
    def decode_pgm(blob: bytes) -> np.ndarray:
        parts = blob.split(b'\n', 3)
        if len(parts) < 4 or parts[0] != b'P5':
            raise DataFormatError("not a binary graymap")
        width, height = (int(v) for v in parts[1].split())
        return np.frombuffer(parts[3], dtype=np.uint8).reshape(height, width)

    @staticmethod
    def write_gatemaps(gate_maps: np.ndarray, out_dir: PathLike, stem: str = 'frame') -> List[Path]:
        """One graymap per frame; frame 0 is written black"""
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        paths = []
        for t, frame in enumerate(np.asarray(gate_maps)):
            if t == 0:
                frame = np.zeros_like(frame)
            path = out_dir / f'{stem}_{t:03d}.pgm'
            path.write_bytes(ReportGenerator.encode_pgm(frame))
            paths.append(path)
        return paths


def generate_report_filename(report_type: str, fmt: str) -> str:
    """Generate a stable filename for a report"""
    return f"{config.APP_NAME.lower()}_{report_type}.{fmt}"
