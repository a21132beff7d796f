"""Convolutional MPDR beamforming by a per-bin affine projection update.

Each frequency bin carries one stacked filter

    w = [w_b; -c_D; ...; -c_L]            (length Q = M*(L - D + 2))

whose head beamforms the current frame and whose tail predicts the
late-reverberation component at the beamformer output from L-D+1 delayed
frames.  The filter is applied Hermitian, x_hat = w^H ytilde, with

    ytilde = [y(n); y(n-D); ...; y(n-L)].

A Kalman recursion with fixed diagonal state covariance (phi_b on the head,
phi_r on the tail) and fixed observation covariance diag(phi_x, phi_a)
collapses to a two-row affine projection step: one row pushes the output
power toward zero, the other holds a^H w at one.  Only a 2x2 system is
inverted per update, so the cost per bin and frame stays linear in Q.

Filter updates, PSD flooring, and the over-subtraction limiter all follow
the frame order documented in :func:`process_frame`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .gains import apply_gain
from .stft import BandPlan, Spectrogram, StftConfig

__all__ = [
    "ApaParams",
    "ApaState",
    "Observation",
    "init_state",
    "stack_observation",
    "speech_psd_estimate",
    "psd_floor",
    "kalman_gain",
    "apa_update",
    "limited_output",
    "process_frame",
    "process_utterance",
]


# ---------------------------------------------------------------------------
# parameters and state
# ---------------------------------------------------------------------------


@dataclass
class ApaParams:
    """Tuning knobs for the adaptive update.

    Variances are linear powers relative to a unit-power full-scale signal;
    the command line takes them in dB and converts.  Defaults assume input
    normalized to -20 dBFS reference-mic RMS.
    """

    phi_b: float = 10.0 ** (-37.0 / 10.0)
    phi_r: float = 10.0 ** (-40.0 / 10.0)
    phi_a: float = 10.0 ** (-120.0 / 10.0)
    eta: float = 10.0 ** (-25.0 / 10.0)
    alpha_r: float = 1.0
    band_plan: BandPlan = field(default_factory=BandPlan)
    # floor on eta * ||y||^2 / M by default; False uses the raw norm
    mean_floor: bool = True

    def __post_init__(self) -> None:
        for name in ("phi_b", "phi_r", "phi_a", "eta"):
            value = getattr(self, name)
            if not value > 0.0:
                raise ValueError(f"{name} must be > 0, got {value}")
        if not 0.0 <= self.alpha_r <= 1.0:
            raise ValueError(f"alpha_r must be in [0, 1], got {self.alpha_r}")

    @property
    def delay(self) -> int:
        return self.band_plan.delay


@dataclass
class ApaState:
    """Adaptive filter state of one frequency bin.

    ``history[l-1]`` holds the input frame y(n-l); for order 0 the history is
    empty and the filter reduces to its beamforming head.
    """

    w_hat: np.ndarray
    history: np.ndarray
    order: int
    delay: int
    num_mics: int

    @property
    def stacked_len(self) -> int:
        """Q = M*(L - D + 2), or M when the order is zero."""
        return self.w_hat.shape[0]

    def push(self, y_now: np.ndarray) -> None:
        """Advance the frame history by one step."""
        if self.order > 0:
            self.history[1:] = self.history[:-1]
            self.history[0] = y_now

    def reset_history(self) -> None:
        self.history[:] = 0.0


@dataclass
class Observation:
    """One frame of stacked input plus the zero-padded steering vector."""

    y_tilde: np.ndarray
    a_tilde: np.ndarray


def init_state(a: np.ndarray, order: int, delay: int = 1) -> ApaState:
    """Fresh state for one bin: beamforming head a/||a||^2, zero tail.

    That head satisfies the constraint a^H w = 1 exactly, so adaptation
    starts from a plain delay-and-sum beamformer with no prediction.
    """
    a = np.asarray(a, dtype=np.complex128)
    if a.ndim != 1 or a.shape[0] < 1:
        raise ValueError(f"steering vector must be 1-d and non-empty, got shape {a.shape}")
    if delay < 1:
        raise ValueError(f"delay must be >= 1, got {delay}")
    if order != 0 and order <= delay:
        raise ValueError(f"order must be 0 or > delay ({delay}), got {order}")
    norm_sq = float(np.sum(np.abs(a) ** 2))
    if norm_sq == 0.0:
        raise ValueError("steering vector has zero norm")
    num_mics = a.shape[0]
    blocks = 0 if order == 0 else order - delay + 1
    w_hat = np.zeros(num_mics * (blocks + 1), dtype=np.complex128)
    w_hat[:num_mics] = a / norm_sq
    history = np.zeros((order, num_mics), dtype=np.complex128)
    return ApaState(w_hat, history, order, delay, num_mics)


# ---------------------------------------------------------------------------
# per-frame operations
# ---------------------------------------------------------------------------


def stack_observation(state: ApaState, y_now: np.ndarray, a: np.ndarray) -> Observation:
    """Stack the current frame with the delayed frames y(n-D)..y(n-L)."""
    m = state.num_mics
    if y_now.shape != (m,):
        raise ValueError(f"expected frame of shape ({m},), got {y_now.shape}")
    if a.shape != (m,):
        raise ValueError(f"expected steering of shape ({m},), got {a.shape}")
    q = state.stacked_len
    y_tilde = np.empty(q, dtype=np.complex128)
    y_tilde[:m] = y_now
    if state.order > 0:
        y_tilde[m:] = state.history[state.delay - 1 :].ravel()
    a_tilde = np.zeros(q, dtype=np.complex128)
    a_tilde[:m] = a
    return Observation(y_tilde, a_tilde)


def speech_psd_estimate(state: ApaState, obs: Observation) -> float:
    """Instantaneous PSD estimate |w(n-1)^H ytilde(n)|^2 from the prior filter."""
    return float(abs(np.vdot(state.w_hat, obs.y_tilde)) ** 2)


def psd_floor(phi_x: float, y_now: np.ndarray, eta: float, mean_over_mics: bool = True) -> float:
    """Lower-bound the PSD estimate by a fraction of the input frame power.

    The floor keeps the update gain bounded when the prior filter output
    momentarily vanishes.
    """
    power = float(np.sum(np.abs(y_now) ** 2))
    if mean_over_mics:
        power /= y_now.shape[0]
    return max(phi_x, eta * power)


def _gain_blocks(y_tilde, a_tilde, num_mics, phi_b, phi_r, phi_x, phi_a, counter=None):
    """Shared pieces of the gain computation.

    Returns (py, s00, s01, s11) where py = Phi_w ytilde (element-wise) and
    [[s00, s01], [conj(s01), s11]] is the 2x2 innovation covariance.
    """
    m = num_mics
    py = np.empty_like(y_tilde)
    np.multiply(y_tilde[:m], phi_b, out=py[:m])
    if y_tilde.shape[0] > m:
        np.multiply(y_tilde[m:], phi_r, out=py[m:])
    s00 = np.vdot(y_tilde, py).real + phi_x
    s01 = phi_b * np.vdot(y_tilde[:m], a_tilde[:m])
    s11 = phi_b * np.vdot(a_tilde[:m], a_tilde[:m]).real + phi_a
    if counter is not None:
        q = y_tilde.shape[0]
        counter.cmac(q)  # Phi_w * ytilde
        counter.cmac(q)  # ytilde^H (Phi_w ytilde)
        counter.cmac(m + 1)  # phi_b * (y^H a)
        counter.cmac(m)  # ||a||^2
        counter.rmac(2)  # adding phi_x, phi_a
    return py, s00, s01, s11


def _solve_two_rows(s00, s01, s11, e0, e1):
    """Cofactor solve of the 2x2 innovation system.

    A silent frame together with a zero PSD floor zeroes the observation row
    completely (s00 = 0 with e0 = 0); the constraint row then acts alone.  A
    genuinely singular system only arises when every variance is zero.
    """
    det = s00 * s11 - (s01.real**2 + s01.imag**2)
    if det > 0.0:
        g0 = (s11 * e0 - s01 * e1) / det
        g1 = (s00 * e1 - np.conj(s01) * e0) / det
        return g0, g1
    if s00 == 0.0 and s11 > 0.0:
        return 0.0j, e1 / s11
    raise np.linalg.LinAlgError("singular 2x2 innovation covariance; all variances are zero")


def kalman_gain(
    y_tilde: np.ndarray,
    a_tilde: np.ndarray,
    num_mics: int,
    phi_b: float,
    phi_r: float,
    phi_x: float,
    phi_a: float,
) -> np.ndarray:
    """Explicit (Q, 2) gain K = Phi_w F^H (F Phi_w F^H + Phi_eps)^-1.

    F stacks the observation row ytilde^H and the constraint row atilde^H.
    This form exists for verification; :func:`apa_update` fuses the same
    algebra without materializing K.
    """
    y_tilde = np.asarray(y_tilde, dtype=np.complex128)
    a_tilde = np.asarray(a_tilde, dtype=np.complex128)
    py, s00, s01, s11 = _gain_blocks(y_tilde, a_tilde, num_mics, phi_b, phi_r, phi_x, phi_a)
    pa = np.zeros_like(a_tilde)
    pa[:num_mics] = phi_b * a_tilde[:num_mics]
    det = s00 * s11 - (s01.real**2 + s01.imag**2)
    gain = np.empty((y_tilde.shape[0], 2), dtype=np.complex128)
    if det > 0.0:
        gain[:, 0] = (py * s11 - pa * np.conj(s01)) / det
        gain[:, 1] = (pa * s00 - py * s01) / det
    elif s00 == 0.0 and s11 > 0.0:
        gain[:, 0] = 0.0
        gain[:, 1] = pa / s11
    else:
        raise np.linalg.LinAlgError(
            "singular 2x2 innovation covariance; all variances are zero"
        )
    return gain


def apa_update(
    state: ApaState,
    obs: Observation,
    phi_x: float,
    params: ApaParams,
    counter=None,
) -> ApaState:
    """One two-row affine projection step; mutates and returns the state.

    The innovation pairs the (conjugated) prior filter output against target
    0 with variance phi_x, and the constraint residual 1 - a^H w against
    target variance phi_a.  The correction never forms a QxQ matrix.
    """
    w = state.w_hat
    y_tilde, a_tilde = obs.y_tilde, obs.a_tilde
    m = state.num_mics
    py, s00, s01, s11 = _gain_blocks(
        y_tilde, a_tilde, m, params.phi_b, params.phi_r, phi_x, params.phi_a, counter
    )
    e0 = -np.vdot(y_tilde, w)
    e1 = 1.0 - np.vdot(a_tilde[:m], w[:m])
    g0, g1 = _solve_two_rows(s00, s01, s11, e0, e1)
    w += py * g0
    w[:m] += (params.phi_b * g1) * a_tilde[:m]
    if counter is not None:
        q = y_tilde.shape[0]
        counter.cmac(q)  # innovation row 0
        counter.cmac(m)  # constraint residual
        counter.cmac(6)  # 2x2 inversion
        counter.div(2)
        counter.cmac(q)  # correction along Phi_w ytilde
        counter.cmac(m)  # correction along Phi_w atilde
    return state


def limited_output(x_b: complex, x_r: complex, alpha_r: float) -> complex:
    """Subtract the reverberation estimate, capped at the beamformer magnitude.

    The cap keeps a momentarily overestimated x_r from more than cancelling
    the beamformer branch; alpha_r = 0 disables subtraction entirely.
    """
    mag_r = abs(x_r)
    if mag_r == 0.0:
        return x_b
    step = alpha_r * min(mag_r, abs(x_b))
    return x_b - step * (x_r / mag_r)


def _step_bin(state, y_now, a, params, gain, counter=None):
    """Advance one bin by one frame; returns (x_hat, x_b, x_r)."""
    obs = stack_observation(state, y_now, a)
    phi_x = speech_psd_estimate(state, obs)
    if gain is not None:
        phi_x = float(apply_gain(phi_x, gain))
    phi_x = psd_floor(phi_x, y_now, params.eta, params.mean_floor)
    apa_update(state, obs, phi_x, params, counter)
    m = state.num_mics
    x_full = np.vdot(state.w_hat, obs.y_tilde)
    x_b = np.vdot(state.w_hat[:m], y_now)
    x_r = x_b - x_full
    x_hat = limited_output(x_b, x_r, params.alpha_r)
    state.push(y_now)
    return x_hat, x_b, x_r


def process_frame(
    states: list,
    frame: np.ndarray,
    steering: np.ndarray,
    params: ApaParams,
    gains: np.ndarray | None = None,
) -> np.ndarray:
    """Process one STFT frame (bins, M) through every bin's filter.

    Per bin: stack the observation, estimate and floor the PSD (optionally
    scaled by an external gain), run the affine projection update, emit the
    limited output from the updated filter, then push the frame into the
    history.  ``steering`` is the (bins, M) steering matrix and ``gains`` an
    optional per-bin gain column for this frame.
    """
    num_bins = len(states)
    if frame.shape[0] != num_bins:
        raise ValueError(f"frame has {frame.shape[0]} bins, expected {num_bins}")
    out = np.empty(num_bins, dtype=np.complex128)
    for k in range(num_bins):
        gain = None if gains is None else gains[k]
        out[k], _, _ = _step_bin(states[k], frame[k], steering[k], params, gain)
    return out


# ---------------------------------------------------------------------------
# utterance-level driver
# ---------------------------------------------------------------------------


def process_utterance(
    spec: Spectrogram,
    steering,
    params: ApaParams,
    gains: np.ndarray | None = None,
    prior_pass: bool = False,
    num_threads: int = 1,
    shadows: list | None = None,
    return_components: bool = False,
):
    """Run the adaptive beamformer over a whole utterance, bin by bin.

    ``steering`` may be a SteeringVector or a raw (bins, M) array.  With
    ``prior_pass`` the utterance is processed once to convergence, final
    filters are kept, histories zeroed, and the utterance reprocessed.

    ``shadows`` is an optional list of (M, bins, frames) component arrays
    (for instance the scene's reverb) that are pushed through the same filter
    trajectory without the limiter, giving a linear decomposition of the
    output; they are returned as a list of (bins, frames) arrays.

    Bins are independent, so ``num_threads`` > 1 splits them across a thread
    pool; outputs are written per bin and results are identical to the
    single-threaded run.
    """
    vectors = getattr(steering, "vectors", steering)
    vectors = np.asarray(vectors, dtype=np.complex128)
    data = spec.data
    num_ch, num_bins, num_frames = data.shape
    if vectors.shape != (num_bins, num_ch):
        raise ValueError(
            f"steering shape {vectors.shape} does not match spectrogram "
            f"({num_bins} bins, {num_ch} channels)"
        )
    if gains is not None:
        gains = np.asarray(gains, dtype=np.float64)
        if gains.shape != (num_bins, num_frames):
            raise ValueError(
                f"gain mask shape {gains.shape} does not match ({num_bins}, {num_frames})"
            )
    orders = params.band_plan.bin_orders(spec.config)
    out = np.empty((num_bins, num_frames), dtype=np.complex128)
    out_b = np.empty_like(out) if return_components else None
    out_r = np.empty_like(out) if return_components else None
    shadow_out = None
    if shadows is not None:
        shadow_out = [np.empty((num_bins, num_frames), dtype=np.complex128) for _ in shadows]

    def run(k: int) -> None:
        a_k = vectors[k]
        state = init_state(a_k, int(orders[k]), params.delay)
        if prior_pass:
            for n in range(num_frames):
                gain = None if gains is None else gains[k, n]
                _step_bin(state, data[:, k, n], a_k, params, gain)
            state.reset_history()
        shadow_hists = (
            [np.zeros_like(state.history) for _ in shadows] if shadows is not None else None
        )
        d = state.delay
        for n in range(num_frames):
            gain = None if gains is None else gains[k, n]
            stacked_shadows = None
            if shadow_hists is not None:
                stacked_shadows = []
                for s, hist in enumerate(shadow_hists):
                    y_s = shadows[s][:, k, n]
                    if state.order > 0:
                        stacked_shadows.append(np.concatenate([y_s, hist[d - 1 :].ravel()]))
                        hist[1:] = hist[:-1]
                        hist[0] = y_s
                    else:
                        stacked_shadows.append(y_s)
            x_hat, x_b, x_r = _step_bin(state, data[:, k, n], a_k, params, gain)
            out[k, n] = x_hat
            if return_components:
                out_b[k, n] = x_b
                out_r[k, n] = x_r
            if stacked_shadows is not None:
                for s, y_s_tilde in enumerate(stacked_shadows):
                    shadow_out[s][k, n] = np.vdot(state.w_hat, y_s_tilde)

    if num_threads <= 1:
        for k in range(num_bins):
            run(k)
    else:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=num_threads) as pool:
            list(pool.map(run, range(num_bins)))

    result = Spectrogram(out, spec.config)
    extras = {}
    if return_components:
        extras["x_b"] = out_b
        extras["x_r"] = out_r
    if shadow_out is not None:
        extras["shadows"] = shadow_out
    if extras:
        return result, extras
    return result
