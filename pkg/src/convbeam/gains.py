"""External per-bin gain masks for shaping the estimated speech PSD.

A mask supplies a gain G(k, n) in [0, 1]; the adaptive filters scale their
speech PSD estimate by G^2 before flooring.  Masks can come from anywhere
(an oracle, a separate enhancement model); here they are read from a small
binary file so runs stay reproducible.
"""

from __future__ import annotations

import struct
import warnings
from pathlib import Path

import numpy as np

__all__ = [
    "GainProvider",
    "IdentityGain",
    "MaskFileGain",
    "apply_gain",
    "identity_provider",
    "mask_file_provider",
    "read_gain_mask",
    "write_gain_mask",
]

_MAGIC = b"GMSK"
_HEADER = struct.Struct("<4sII")


def apply_gain(phi_x, gain):
    """Scale a PSD estimate by gain^2, clamping the gain into [0, 1] first.

    Values outside [0, 1] trigger a warning; they usually mean a mask was
    written with the wrong scale.
    """
    g = np.asarray(gain, dtype=np.float64)
    if np.any(g < 0.0) or np.any(g > 1.0):
        warnings.warn("gain outside [0, 1]; clamping", stacklevel=2)
        g = np.clip(g, 0.0, 1.0)
    return (g * g) * phi_x


class GainProvider:
    """Source of a (bins, frames) gain matrix for one utterance."""

    def gains(self, num_bins: int, num_frames: int) -> np.ndarray:
        raise NotImplementedError


class IdentityGain(GainProvider):
    """All-ones mask; scaling by it leaves the PSD untouched."""

    def gains(self, num_bins: int, num_frames: int) -> np.ndarray:
        return np.ones((num_bins, num_frames))


class MaskFileGain(GainProvider):
    """Mask loaded from a gain-mask file; dimensions must match the utterance."""

    def __init__(self, path) -> None:
        self.path = Path(path)
        self._mask = read_gain_mask(self.path)

    def gains(self, num_bins: int, num_frames: int) -> np.ndarray:
        k, n = self._mask.shape
        if (k, n) != (num_bins, num_frames):
            raise ValueError(
                f"{self.path}: mask is {k}x{n} but utterance needs "
                f"{num_bins}x{num_frames}"
            )
        return self._mask


def identity_provider() -> GainProvider:
    return IdentityGain()


def mask_file_provider(path) -> GainProvider:
    return MaskFileGain(path)


def write_gain_mask(path, gains: np.ndarray) -> None:
    """Write a (bins, frames) float32 mask: 'GMSK', u32 bins, u32 frames, data.

    Data is little-endian, bin-major (all frames of bin 0 first).
    """
    g = np.asarray(gains, dtype=np.float64)
    if g.ndim != 2:
        raise ValueError(f"gains must have shape (bins, frames), got {g.shape}")
    payload = np.ascontiguousarray(g, dtype="<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, g.shape[0], g.shape[1]))
        fh.write(payload)


def read_gain_mask(path) -> np.ndarray:
    """Read a mask written by :func:`write_gain_mask`, clamping into [0, 1]."""
    blob = Path(path).read_bytes()
    if len(blob) < _HEADER.size:
        raise OSError(f"{path}: truncated header ({len(blob)} bytes)")
    magic, num_bins, num_frames = _HEADER.unpack_from(blob)
    if magic != _MAGIC:
        raise OSError(f"{path}: bad magic {magic!r}, expected {_MAGIC!r}")
    expected = _HEADER.size + 4 * num_bins * num_frames
    if len(blob) != expected:
        raise OSError(
            f"{path}: expected {expected} bytes for {num_bins}x{num_frames} mask, "
            f"got {len(blob)}"
        )
    mask = np.frombuffer(blob, dtype="<f4", offset=_HEADER.size).astype(np.float64)
    mask = mask.reshape(num_bins, num_frames)
    if np.any(mask < 0.0) or np.any(mask > 1.0):
        warnings.warn(f"{path}: mask values outside [0, 1]; clamping", stacklevel=2)
        mask = np.clip(mask, 0.0, 1.0)
    return mask
