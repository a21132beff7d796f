"""Synthetic multichannel scenes with known dry/reverb/noise decompositions.

Two generators are provided.  The first builds reverberation directly from
the frame-recursive model the adaptive canceller assumes (a matched-model
oracle: the optimum filter cancels its reverb exactly).  The second convolves
time-domain exponentially decaying impulse responses, which sits outside that
model class and exercises mismatch.  Every scene keeps its components as
separate spectrograms so tests can measure exactly how much of each survives
processing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import fftconvolve, lfilter

from .geometry import (
    SPEED_OF_SOUND,
    ArrayGeometry,
    SteeringVector,
    diffuse_coherence,
    plane_wave_steering,
)
from .stft import Spectrogram, StftConfig, stft

__all__ = [
    "Scene",
    "synthetic_speech",
    "random_mclp",
    "mclp_spectral_radius",
    "mclp_scene",
    "exp_decay_rir_scene",
    "diffuse_noise",
    "measure_srr",
]


@dataclass
class Scene:
    """A mixture and its exact additive decomposition in the STFT domain.

    mixture = steering * dry + reverb + noise, bin by bin.  ``true_mclp``
    holds the (bins, L-D+1, M, M) recursion coefficients when the scene was
    generated from the frame-recursive model, else None.
    """

    mixture: Spectrogram
    dry: Spectrogram
    reverb: Spectrogram
    noise: Spectrogram
    steering: SteeringVector
    true_mclp: np.ndarray | None = None
    metadata: dict = field(default_factory=dict)

    def components_sum(self) -> np.ndarray:
        """Recompute steering * dry + reverb + noise for invariant checks."""
        a = self.steering.vectors
        direct = a.T[:, :, None] * self.dry.data[0][None, :, :]
        return direct + self.reverb.data + self.noise.data


def synthetic_speech(duration: float, sample_rate: int = 16000, seed: int = 0) -> np.ndarray:
    """Deterministic speech-shaped test signal: modulated warm noise.

    Not speech, but it has the two properties the adaptive tests need: a
    tilted long-term spectrum and syllable-rate amplitude modulation.
    Normalized to RMS 0.1 (-20 dBFS).
    """
    if duration <= 0:
        raise ValueError(f"duration must be positive, got {duration}")
    rng = np.random.default_rng(seed)
    n = int(round(duration * sample_rate))
    x = rng.standard_normal(n)
    x = lfilter([1.0], [1.0, -0.92], x)
    t = np.arange(n) / sample_rate
    env = (0.35 + 0.65 * 0.5 * (1.0 + np.sin(2.0 * np.pi * 2.7 * t))) * (
        0.6 + 0.4 * 0.5 * (1.0 + np.sin(2.0 * np.pi * 0.4 * t + 1.0))
    )
    x *= env
    return 0.1 * x / np.sqrt(np.mean(x**2))


# ---------------------------------------------------------------------------
# frame-recursive (matched-model) scenes
# ---------------------------------------------------------------------------


def mclp_spectral_radius(c_lags: np.ndarray, delay: int) -> np.ndarray:
    """Spectral radius of the frame recursion y(n) = sum_l C_l y(n-l) per bin.

    ``c_lags`` has shape (bins, L-D+1, M, M) (a single bin may drop the
    leading axis).  Radius < 1 keeps the recursion stable.
    """
    c = np.asarray(c_lags, dtype=np.complex128)
    single = c.ndim == 3
    if single:
        c = c[None]
    num_bins, blocks, m, m2 = c.shape
    if m != m2:
        raise ValueError(f"coefficients must be square, got shape {c.shape}")
    order = delay + blocks - 1
    companion = np.zeros((num_bins, m * order, m * order), dtype=np.complex128)
    for lag in range(delay, order + 1):
        companion[:, :m, (lag - 1) * m : lag * m] = c[:, lag - delay]
    if order > 1:
        idx = np.arange(m * (order - 1))
        companion[:, m + idx, idx] = 1.0
    radius = np.max(np.abs(np.linalg.eigvals(companion)), axis=1)
    return radius[0] if single else radius


def random_mclp(
    num_mics: int,
    order: int,
    delay: int = 1,
    config: StftConfig | None = None,
    seed: int = 0,
    decay: float = 0.7,
    target_radius: float = 0.9,
    max_tries: int = 10,
) -> np.ndarray:
    """Draw per-bin recursion coefficients with geometrically decaying lags.

    Entry magnitudes fall off as decay**(l - delay); each bin is rescaled by
    s**l (which scales every recursion eigenvalue by exactly s) so its
    spectral radius lands on ``target_radius``.  A draw that still fails the
    stability check retries with the next seed, up to ``max_tries``.
    """
    if config is None:
        config = StftConfig()
    if order <= delay:
        raise ValueError(f"order must exceed delay ({delay}), got {order}")
    if not 0.0 < target_radius < 1.0:
        raise ValueError(f"target_radius must be in (0, 1), got {target_radius}")
    blocks = order - delay + 1
    k = config.num_bins
    lags = np.arange(delay, order + 1)
    for attempt in range(max_tries):
        rng = np.random.default_rng(seed + attempt)
        scale = decay ** (lags - delay) / (2.0 * math.sqrt(num_mics * blocks))
        c = rng.standard_normal((k, blocks, num_mics, num_mics)) + 1j * rng.standard_normal(
            (k, blocks, num_mics, num_mics)
        )
        c *= scale[None, :, None, None] / math.sqrt(2.0)
        radius = mclp_spectral_radius(c, delay)
        if np.any(radius == 0.0) or not np.all(np.isfinite(radius)):
            continue
        s = target_radius / radius
        c *= (s[:, None] ** lags[None, :])[:, :, None, None]
        radius = mclp_spectral_radius(c, delay)
        if np.all(radius < 1.0):
            return c
    raise RuntimeError(f"no stable coefficient draw in {max_tries} attempts from seed {seed}")


def mclp_scene(
    dry: np.ndarray,
    steering: SteeringVector,
    coeffs: np.ndarray,
    delay: int = 1,
    snr_db: float = math.inf,
    config: StftConfig | None = None,
    seed: int = 0,
) -> Scene:
    """Scene whose reverb obeys the frame recursion the canceller models.

    The clean multichannel signal is built frame by frame as
    y(n) = a X(n) + sum_{l=D..L} C_l y(n-l), so the reverb at frame n is a
    linear function of the *already mixed* past frames.  Spatially white
    noise is then added at ``snr_db`` (inf for noiseless).
    """
    if config is None:
        config = StftConfig()
    dry_spec = stft(np.asarray(dry, dtype=np.float64), config)
    x = dry_spec.data[0]
    num_bins, num_frames = x.shape
    a = steering.vectors
    num_mics = a.shape[1]
    c = np.asarray(coeffs, dtype=np.complex128)
    if c.ndim != 4 or c.shape[0] != num_bins or c.shape[2:] != (num_mics, num_mics):
        raise ValueError(
            f"coefficients must have shape ({num_bins}, lags, {num_mics}, {num_mics}), "
            f"got {c.shape}"
        )
    blocks = c.shape[1]
    order = delay + blocks - 1
    radius = mclp_spectral_radius(c, delay)
    worst = float(np.max(radius))
    if worst >= 1.0:
        raise ValueError(f"unstable recursion: spectral radius {worst:.4f} >= 1")

    direct = a.T[:, :, None] * x[None, :, :]
    reverb = np.zeros((num_mics, num_bins, num_frames), dtype=np.complex128)
    rings = np.zeros((order, num_bins, num_mics), dtype=np.complex128)
    for n in range(num_frames):
        rev_n = np.einsum("krij,rkj->ki", c, rings[delay - 1 :])
        y_n = a * x[:, n][:, None] + rev_n
        reverb[:, :, n] = rev_n.T
        rings[1:] = rings[:-1]
        rings[0] = y_n

    clean = direct + reverb
    rng = np.random.default_rng(seed)
    if math.isinf(snr_db):
        noise = np.zeros_like(clean)
    else:
        p_clean = float(np.mean(np.abs(clean) ** 2))
        sigma = math.sqrt(p_clean / 10.0 ** (snr_db / 10.0))
        noise = (
            rng.standard_normal(clean.shape) + 1j * rng.standard_normal(clean.shape)
        ) * (sigma / math.sqrt(2.0))
    mixture = clean + noise
    return Scene(
        mixture=Spectrogram(mixture, config),
        dry=dry_spec,
        reverb=Spectrogram(reverb, config),
        noise=Spectrogram(noise, config),
        steering=steering,
        true_mclp=c,
        metadata={
            "kind": "mclp",
            "delay": delay,
            "order": order,
            "snr_db": snr_db,
            "seed": seed,
            "max_spectral_radius": worst,
        },
    )


# ---------------------------------------------------------------------------
# time-domain impulse response scenes
# ---------------------------------------------------------------------------


def exp_decay_rir_scene(
    dry: np.ndarray,
    geom: ArrayGeometry,
    azimuth: float,
    t60: float,
    drr_db: float = 0.0,
    snr_db: float = math.inf,
    config: StftConfig | None = None,
    seed: int = 0,
    c: float = SPEED_OF_SOUND,
) -> Scene:
    """Scene from per-mic impulse responses: direct delta plus decaying tail.

    The direct path is a fractionally delayed (windowed-sinc) impulse with
    plane-wave inter-mic delays; the tail is white Gaussian shaped by
    exp(-6.9 t / T60), scaled to the requested direct-to-reverberant ratio.
    This reverb does NOT follow the canceller's frame recursion, so it serves
    as the model-mismatch case.  The stored reverb component is defined as
    whatever the steered dry signal fails to explain, keeping the component
    sum exact.
    """
    if config is None:
        config = StftConfig()
    if t60 < 0:
        raise ValueError(f"t60 must be >= 0, got {t60}")
    dry = np.asarray(dry, dtype=np.float64)
    if dry.ndim != 1:
        raise ValueError(f"dry signal must be 1-d, got shape {dry.shape}")
    fs = config.sample_rate
    rng = np.random.default_rng(seed)

    direction_delays = -(geom.positions @ _unit_vec(azimuth)) / c
    direction_delays -= direction_delays[geom.reference_mic]
    half = 16
    offset = half + int(np.ceil(np.max(np.abs(direction_delays)) * fs))
    frac_delays = direction_delays * fs + offset

    n_tail = int(round(t60 * fs))
    # the farthest direct tap sits at ceil(max frac delay) + half; the tail,
    # when present, runs from ceil(frac) + 2 for n_tail samples
    n_rir = int(np.ceil(np.max(frac_delays))) + half + n_tail + 3
    rirs_direct = np.zeros((geom.num_mics, n_rir))
    rirs_tail = np.zeros((geom.num_mics, n_rir))
    sinc_win = np.hanning(2 * half + 1)
    for m in range(geom.num_mics):
        center = int(round(frac_delays[m]))
        taps = np.arange(center - half, center + half + 1)
        rirs_direct[m, taps] = np.sinc(taps - frac_delays[m]) * sinc_win
        if n_tail > 0:
            start = int(np.ceil(frac_delays[m])) + 2
            t_idx = np.arange(n_tail)
            tail = rng.standard_normal(n_tail) * np.exp(-6.9 * t_idx / (t60 * fs))
            e_direct = np.sum(rirs_direct[m] ** 2)
            e_tail = np.sum(tail**2)
            if math.isinf(drr_db):
                gain = 0.0
            else:
                gain = math.sqrt(e_direct / (e_tail * 10.0 ** (drr_db / 10.0)))
            rirs_tail[m, start : start + n_tail] = gain * tail

    n_samples = dry.shape[0]
    direct_sig = np.stack(
        [fftconvolve(dry, rirs_direct[m])[:n_samples] for m in range(geom.num_mics)]
    )
    tail_sig = np.stack(
        [fftconvolve(dry, rirs_tail[m])[:n_samples] for m in range(geom.num_mics)]
    )
    dry_at_ref = direct_sig[geom.reference_mic]

    steering = plane_wave_steering(geom, azimuth, config, c=c)
    dry_spec = stft(dry_at_ref, config)
    clean_spec = stft(direct_sig + tail_sig, config)
    a = steering.vectors
    steered_dry = a.T[:, :, None] * dry_spec.data[0][None, :, :]
    reverb_data = clean_spec.data - steered_dry

    num_frames = dry_spec.num_frames
    if math.isinf(snr_db):
        noise_data = np.zeros_like(clean_spec.data)
    else:
        noise = diffuse_noise_frames(geom, config, num_frames, seed=seed + 1)
        p_clean = float(np.mean(np.abs(clean_spec.data) ** 2))
        p_noise = float(np.mean(np.abs(noise) ** 2))
        noise_data = noise * math.sqrt(p_clean / (p_noise * 10.0 ** (snr_db / 10.0)))
    mixture = clean_spec.data + noise_data
    return Scene(
        mixture=Spectrogram(mixture, config),
        dry=dry_spec,
        reverb=Spectrogram(reverb_data, config),
        noise=Spectrogram(noise_data, config),
        steering=steering,
        true_mclp=None,
        metadata={
            "kind": "rir",
            "doa_deg": math.degrees(azimuth),
            "t60_s": t60,
            "drr_db": drr_db,
            "snr_db": snr_db,
            "seed": seed,
            "rirs": rirs_direct + rirs_tail,
            "rir_tail": rirs_tail,
        },
    )


def _unit_vec(azimuth: float) -> np.ndarray:
    return np.array([math.cos(azimuth), math.sin(azimuth), 0.0])


# ---------------------------------------------------------------------------
# diffuse noise
# ---------------------------------------------------------------------------


def diffuse_noise_frames(
    geom: ArrayGeometry,
    config: StftConfig,
    num_frames: int,
    seed: int = 0,
    loading: float = 0.01,
) -> np.ndarray:
    """(M, bins, frames) noise with the array's diffuse coherence, unit-ish power."""
    if num_frames < 1:
        raise ValueError(f"num_frames must be >= 1, got {num_frames}")
    gamma = diffuse_coherence(geom, config).gamma
    m = geom.num_mics
    chol = np.linalg.cholesky(gamma + loading * np.eye(m)[None, :, :])
    rng = np.random.default_rng(seed)
    shape = (config.num_bins, m, num_frames)
    white = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / math.sqrt(2.0)
    colored = np.einsum("kij,kjn->kin", chol, white)
    return np.ascontiguousarray(colored.transpose(1, 0, 2))


def diffuse_noise(
    geom: ArrayGeometry,
    config: StftConfig | None = None,
    duration: float = 1.0,
    seed: int = 0,
    loading: float = 0.01,
) -> Spectrogram:
    """Spectrogram of spherically diffuse noise for ``duration`` seconds.

    Each bin colors an independent white complex Gaussian by the Cholesky
    factor of the loaded coherence matrix, so the sample coherence converges
    to the model as frames accumulate.
    """
    if config is None:
        config = StftConfig()
    num_frames = config.num_frames(int(round(duration * config.sample_rate)))
    data = diffuse_noise_frames(geom, config, num_frames, seed, loading)
    return Spectrogram(data, config)


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------


def measure_srr(scene: Scene, estimate, cap_db: float = 60.0) -> float:
    """Signal-to-residual ratio of an estimate against the scene's dry signal.

    The estimate is projected onto the dry spectrogram (one complex scale
    over all bins and frames); the ratio of projected to residual power is
    returned in dB, capped at ``cap_db`` so a perfect estimate stays finite.
    """
    est = estimate.data[0] if isinstance(estimate, Spectrogram) else np.asarray(estimate)
    dry = scene.dry.data[0]
    if est.shape != dry.shape:
        raise ValueError(f"estimate shape {est.shape} does not match dry {dry.shape}")
    denom = np.vdot(dry, dry).real
    if denom == 0.0:
        raise ValueError("dry reference is identically zero")
    alpha = np.vdot(dry, est) / denom
    p_proj = float(abs(alpha) ** 2 * denom)
    p_res = float(np.sum(np.abs(est - alpha * dry) ** 2))
    if p_res == 0.0:
        return cap_db
    if p_proj == 0.0:
        return -math.inf
    return min(cap_db, 10.0 * math.log10(p_proj / p_res))
