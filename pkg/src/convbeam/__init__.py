"""Multichannel speech dereverberation and noise reduction.

Adaptive convolutional beamforming in the STFT domain: a distortionless
multichannel filter with a prediction tail spanning past frames, updated
per bin by a two-row affine projection step, plus fixed beamformers, a
recursive-coherence variant, synthetic scene generators, enhancement
metrics, and a complexity benchmark.
"""

from .apa import ApaParams, ApaState, apa_update, init_state, process_utterance
from .fixedbf import apply_fixed, delay_and_sum, superdirective_mvdr
from .geometry import (
    ArrayGeometry,
    SteeringVector,
    circular_array,
    diffuse_coherence,
    load_geometry,
    plane_wave_steering,
    srp_phat_localize,
)
from .metrics import cepstral_distance, compute_metrics, fw_seg_snr
from .pipeline import METHODS, RunConfig, enhance
from .scenes import Scene, exp_decay_rir_scene, mclp_scene, measure_srr, synthetic_speech
from .sdmvdr import process_utterance_sdmvdr
from .stft import BandPlan, Spectrogram, StftConfig, istft, stft
from .wavio import AudioBuffer, WavError, read_wav, write_wav

__version__ = "0.1.0"

__all__ = [
    "ApaParams",
    "ApaState",
    "ArrayGeometry",
    "AudioBuffer",
    "BandPlan",
    "METHODS",
    "RunConfig",
    "Scene",
    "Spectrogram",
    "SteeringVector",
    "StftConfig",
    "WavError",
    "apa_update",
    "apply_fixed",
    "cepstral_distance",
    "circular_array",
    "compute_metrics",
    "delay_and_sum",
    "diffuse_coherence",
    "enhance",
    "exp_decay_rir_scene",
    "fw_seg_snr",
    "init_state",
    "istft",
    "load_geometry",
    "mclp_scene",
    "measure_srr",
    "plane_wave_steering",
    "process_utterance",
    "process_utterance_sdmvdr",
    "read_wav",
    "srp_phat_localize",
    "stft",
    "superdirective_mvdr",
    "synthetic_speech",
    "write_wav",
    "__version__",
]
