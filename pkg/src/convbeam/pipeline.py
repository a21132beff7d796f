"""Utterance-level enhancement pipeline shared by the command line and tests.

One call runs: level normalization to -20 dBFS at the reference mic, STFT,
localization (unless a DOA is given), steering, the selected beamformer,
synthesis, and de-normalization.  All randomness-free; identical inputs and
configuration give bit-identical outputs.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .apa import ApaParams, process_utterance
from .fixedbf import apply_fixed, delay_and_sum, superdirective_mvdr
from .gains import mask_file_provider
from .geometry import ArrayGeometry, diffuse_coherence, plane_wave_steering, srp_phat_localize
from .sdmvdr import process_utterance_sdmvdr
from .stft import Spectrogram, StftConfig, istft, stft
from .wavio import AudioBuffer, resample_check

__all__ = ["METHODS", "RunConfig", "enhance"]

METHODS = ("ref-mic", "delay-sum", "sd-mvdr", "mpdr-apa", "conv-mpdr-apa", "conv-sdmvdr")

_TARGET_RMS = 10.0 ** (-20.0 / 20.0)  # -20 dBFS


@dataclass
class RunConfig:
    """Everything the enhancement pipeline needs besides the audio itself."""

    method: str
    geometry: ArrayGeometry
    doa: float | None = None  # radians; None means estimate
    params: ApaParams = field(default_factory=ApaParams)
    stft_config: StftConfig = field(default_factory=StftConfig)
    loading: float = 0.01
    prior_pass: bool = True
    gain_mask: str | None = None
    threads: int = 1
    seed: int = 0

    def __post_init__(self) -> None:
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if self.threads < 1:
            raise ValueError(f"threads must be >= 1, got {self.threads}")


def _flat_plan(params: ApaParams) -> ApaParams:
    from .stft import BandPlan

    return ApaParams(
        phi_b=params.phi_b,
        phi_r=params.phi_r,
        phi_a=params.phi_a,
        eta=params.eta,
        alpha_r=params.alpha_r,
        band_plan=BandPlan((), (0,), params.band_plan.delay),
        mean_floor=params.mean_floor,
    )


def enhance(buf: AudioBuffer, cfg: RunConfig) -> tuple:
    """Process one utterance; returns (AudioBuffer, summary dict)."""
    t0 = time.perf_counter()
    resample_check(buf, cfg.stft_config.sample_rate)
    if buf.num_channels != cfg.geometry.num_mics:
        raise ValueError(
            f"input has {buf.num_channels} channels but geometry has "
            f"{cfg.geometry.num_mics} microphones"
        )
    ref = cfg.geometry.reference_mic
    rms = float(np.sqrt(np.mean(buf.samples[ref] ** 2)))
    scale = _TARGET_RMS / rms if rms > 0.0 else 1.0
    spec = stft(buf.samples * scale, cfg.stft_config)

    doa = cfg.doa
    if doa is None:
        doa = srp_phat_localize(spec, cfg.geometry)
    steering = plane_wave_steering(cfg.geometry, doa, cfg.stft_config)

    gains = None
    if cfg.gain_mask is not None:
        gains = mask_file_provider(cfg.gain_mask).gains(spec.num_bins, spec.num_frames)

    method = cfg.method
    if method == "ref-mic":
        out = spec.channel(ref)
    elif method == "delay-sum":
        out = apply_fixed(delay_and_sum(steering), spec)
    elif method == "sd-mvdr":
        gamma = diffuse_coherence(cfg.geometry, cfg.stft_config)
        out = apply_fixed(superdirective_mvdr(steering, gamma, cfg.loading), spec)
    elif method in ("mpdr-apa", "conv-mpdr-apa"):
        params = _flat_plan(cfg.params) if method == "mpdr-apa" else cfg.params
        out = process_utterance(
            spec,
            steering,
            params,
            gains=gains,
            prior_pass=cfg.prior_pass,
            num_threads=cfg.threads,
        )
    else:  # conv-sdmvdr
        gamma = diffuse_coherence(cfg.geometry, cfg.stft_config)
        out = process_utterance_sdmvdr(
            spec,
            steering,
            gamma,
            cfg.params,
            loading=cfg.loading,
            gains=gains,
            prior_pass=cfg.prior_pass,
            num_threads=cfg.threads,
        )

    samples = istft(out, length=buf.num_samples) / scale
    orders = cfg.params.band_plan.orders if method.startswith("conv") else (0,)
    summary = {
        "method": method,
        "doa_deg": math.degrees(doa),
        "frames": spec.num_frames,
        "orders": ",".join(str(o) for o in orders),
        "elapsed_s": time.perf_counter() - t0,
    }
    return AudioBuffer(samples, buf.sample_rate), summary
