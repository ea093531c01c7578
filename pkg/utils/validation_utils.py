# utils/validation_utils.py
"""
Validation utilities for inputs, run configs, manifests and numeric integrity
"""
import math
from typing import Any, Dict, Iterable, List, Tuple

import numpy as np


class SpikeTraceError(Exception):
    """Base exception for all SpikeTrace failures"""
    kind = 'error'


class ValidationError(SpikeTraceError):
    """Custom exception for validation errors"""
    kind = 'validation'


class DataFormatError(ValidationError):
    """Malformed tensor, checkpoint or manifest file"""
    kind = 'data_format'


class NumericError(SpikeTraceError):
    """Non-finite value produced during computation"""
    kind = 'numeric'


def _is_number(value: Any) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


class ArrayValidator:
    """Shape and value checks for numpy inputs"""

    @staticmethod
    def validate_rank(array: np.ndarray, rank: int, name: str) -> bool:
        """Check that an array has the expected rank"""
        if array.ndim != rank:
            raise ValidationError(f"{name} must have rank {rank}, got shape {tuple(array.shape)}")
        return True

    @staticmethod
    def validate_unit_range(array: np.ndarray, name: str) -> bool:
        """Check that all values lie in [0, 1]"""
        if array.size and (np.min(array) < 0.0 or np.max(array) > 1.0):
            raise ValidationError(f"{name} values must lie in [0, 1]")
        return True

    @staticmethod
    def validate_finite(array: np.ndarray, name: str) -> bool:
        """Raise NumericError when an array holds NaN or Inf"""
        if not np.all(np.isfinite(array)):
            raise NumericError(f"non-finite values in {name}")
        return True

    @staticmethod
    def validate_min_length(length: int, minimum: int, name: str) -> bool:
        """Check a sequence is long enough for the requested operation"""
        if length < minimum:
            raise ValidationError(f"{name} needs at least {minimum} entries, got {length}")
        return True

    @staticmethod
    def validate_square(n: int, name: str) -> int:
        """Return the side of a perfect-square token count"""
        side = int(round(math.sqrt(n)))
        if side * side != n:
            raise ValidationError(f"{name} token count {n} is not a perfect square")
        return side


class ConfigValidator:
    """Schema checks for the JSON run config"""

    SECTIONS = ('event', 'model', 'train')

    @staticmethod
    def validate_keys(section: str, values: Dict[str, Any], allowed: Iterable[str]) -> bool:
        """Reject keys that are not fields of the section's config type"""
        if not isinstance(values, dict):
            raise ValidationError(f"config section '{section}' must be an object")
        unknown = sorted(set(values) - set(allowed))
        if unknown:
            raise ValidationError(f"unknown keys in config section '{section}': {', '.join(unknown)}")
        return True

    @staticmethod
    def validate_types(section: str, values: Dict[str, Any], defaults: Dict[str, Any]) -> bool:
        """Check each value against the JSON type of the field's default.

        Fields defaulting to None accept null or a number; float fields accept
        integers; booleans never pass as numbers.
        """
        for key, value in values.items():
            default = defaults.get(key)
            if default is None:
                expected, valid = 'a number or null', value is None or _is_number(value)
            elif isinstance(default, bool):
                expected, valid = 'a boolean', isinstance(value, bool)
            elif isinstance(default, int):
                expected, valid = 'an integer', isinstance(value, int) and not isinstance(value, bool)
            elif isinstance(default, float):
                expected, valid = 'a number', _is_number(value)
            elif isinstance(default, (list, tuple)):
                expected = 'a list of numbers'
                valid = isinstance(value, (list, tuple)) and all(_is_number(v) for v in value)
            else:
                expected, valid = f'a {type(default).__name__}', isinstance(value, type(default))
            if not valid:
                raise ValidationError(f"config section '{section}' key '{key}' must be {expected}, "
                                      f"got {type(value).__name__}")
        return True

    @staticmethod
    def validate_run_config(run_config: Dict[str, Any]) -> bool:
        """Validate the top-level layout of a run config"""
        if not isinstance(run_config, dict):
            raise ValidationError("run config must be a JSON object")
        unknown = sorted(set(run_config) - set(ConfigValidator.SECTIONS))
        if unknown:
            raise ValidationError(f"unknown config sections: {', '.join(unknown)}")
        return True

    @staticmethod
    def validate_positive(value: float, name: str) -> Tuple[bool, str]:
        """Validate a strictly positive number"""
        if value is None or not value > 0:
            return False, f"{name} must be positive"
        return True, "Valid"

    @staticmethod
    def validate_non_negative(value: float, name: str) -> Tuple[bool, str]:
        """Validate a non-negative number"""
        if value is None or value < 0:
            return False, f"{name} must be non-negative"
        return True, "Valid"

    @staticmethod
    def require(*results: Tuple[bool, str]) -> bool:
        """Raise on the first failed (valid, message) check"""
        for valid, msg in results:
            if not valid:
                raise ValidationError(msg)
        return True


class ManifestValidator:
    """Checks for dataset manifests"""

    REQUIRED_KEYS = ('path', 'label')
    OPTIONAL_KEYS = ('embedding', 'seed', 'fps', 'source')

    @staticmethod
    def validate_entry(entry: Dict[str, Any], index: int) -> bool:
        """Validate one manifest entry"""
        if not isinstance(entry, dict):
            raise DataFormatError(f"manifest entry {index} is not an object")
        for key in ManifestValidator.REQUIRED_KEYS:
            if key not in entry:
                raise DataFormatError(f"manifest entry {index} missing '{key}'")
        unknown = set(entry) - set(ManifestValidator.REQUIRED_KEYS) - set(ManifestValidator.OPTIONAL_KEYS)
        if unknown:
            raise DataFormatError(f"manifest entry {index} has unknown keys: {', '.join(sorted(unknown))}")
        if entry['label'] not in (0, 1):
            raise DataFormatError(f"manifest entry {index} label must be 0 or 1")
        return True

    @staticmethod
    def validate_manifest(manifest: Dict[str, Any]) -> List[Dict[str, Any]]:
        """Validate a manifest and return its entries"""
        if not isinstance(manifest, dict) or 'entries' not in manifest:
            raise DataFormatError("manifest must be an object with an 'entries' list")
        entries = manifest['entries']
        if not isinstance(entries, list) or not entries:
            raise DataFormatError("manifest has no entries")
        for i, entry in enumerate(entries):
            ManifestValidator.validate_entry(entry, i)
        return entries
