"""Ego-noise and wind-noise suppression ahead of localization.

Noise statistics come from one of several estimators (energy VAD, motor-speed
templates, recursive averaging, or an oracle noise recording); the multichannel
Wiener filter consumes them. Wind is handled by a zero-phase high-pass and
noisy microphone pairs can be dropped with :func:`select_pairs`.
"""
from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import butter, sosfiltfilt

from .errors import (EmptyInput, EmptyTemplateBank, InvalidAlpha, InvalidCutoff,
                     ShapeMismatch, SingularNoiseCovariance, SpeedOutOfRange,
                     TooFewFrames, ZeroSignal)
from .recording import MultichannelRecording
from .spectral import SpatialCovariance, Spectrogram, accumulate_covariance, as_spectrogram

LOADING = 1e-9
SPEED_MARGIN = 0.2
DEFAULT_VAD_PERCENTILE = 0.3
NOISE_KINDS = ("vad", "whole", "motor-template", "recursive", "oracle")


@dataclass(frozen=True, eq=False)
class NoiseModel:
    noise_cov: SpatialCovariance
    source: str

    def __post_init__(self):
        if self.source not in NOISE_KINDS:
            raise ValueError(f"unknown noise estimator {self.source!r}")


@dataclass(frozen=True, eq=False)
class MotorProfile:
    """Propeller speeds plus a bank of per-motor noise power templates.

    ``template_bank`` maps rpm -> array of shape (motors, bins) or
    (motors, channels, bins); bin ``k`` sits at ``k * template_bin_hz``.
    """

    speeds: tuple[float, ...]
    template_bank: dict = field(default_factory=dict)
    template_bin_hz: float | None = None

    def __post_init__(self):
        speeds = tuple(float(s) for s in self.speeds)
        if any(s < 0 or not np.isfinite(s) for s in speeds):
            raise ValueError("motor speeds must be finite and non-negative")
        bank = {float(k): np.asarray(v, dtype=np.float64) for k, v in sorted(self.template_bank.items())}
        object.__setattr__(self, "speeds", speeds)
        object.__setattr__(self, "template_bank", bank)

    @property
    def bank_speeds(self) -> np.ndarray:
        return np.array(list(self.template_bank.keys()))


@dataclass(frozen=True)
class PairMask:
    """Accepted flag per unordered microphone pair (i < j)."""

    pairs: tuple[tuple[int, int], ...]
    accepted: tuple[bool, ...]

    def __post_init__(self):
        if len(self.pairs) != len(self.accepted):
            raise ShapeMismatch("pairs and accepted flags differ in length")
        if not any(self.accepted):
            raise ValueError("a pair mask must accept at least one pair")

    @classmethod
    def all_pairs(cls, n_channels: int) -> "PairMask":
        pairs = tuple(itertools.combinations(range(n_channels), 2))
        return cls(pairs, (True,) * len(pairs))

    @property
    def accepted_pairs(self) -> list[tuple[int, int]]:
        return [p for p, ok in zip(self.pairs, self.accepted) if ok]


def psd_project(matrices: np.ndarray) -> np.ndarray:
    """Clamp negative eigenvalues of Hermitian matrices (..., C, C) to zero."""
    herm = 0.5 * (matrices + np.conj(np.swapaxes(matrices, -1, -2)))
    w, v = np.linalg.eigh(herm)
    w = np.maximum(w, 0.0)
    return (v * w[..., None, :]) @ np.conj(np.swapaxes(v, -1, -2))


def diagonal_load(matrices: np.ndarray, factor: float = LOADING) -> np.ndarray:
    """Add factor * trace / C to the diagonal of each matrix."""
    C = matrices.shape[-1]
    tr = np.real(np.trace(matrices, axis1=-2, axis2=-1))
    eps = factor * np.abs(tr) / C
    return matrices + eps[..., None, None] * np.eye(C)


def _frame_energy(spec: Spectrogram) -> np.ndarray:
    return np.sum(np.abs(spec.data) ** 2, axis=(1, 2))


def estimate_noise_vad(blocks, energy_percentile: float = DEFAULT_VAD_PERCENTILE,
                       bin_range=None) -> NoiseModel:
    """Noise covariance from the quietest frames.

    Frames whose broadband energy is at or below the given quantile of the
    frame-energy distribution are treated as noise-only.
    """
    spec = as_spectrogram(blocks)
    if spec.n_frames < 10:
        raise TooFewFrames(f"VAD needs >= 10 frames, got {spec.n_frames}")
    if not 0.0 < energy_percentile <= 1.0:
        raise ValueError("energy_percentile must be in (0, 1]")
    energy = _frame_energy(spec)
    if not np.any(energy > 0):
        raise ZeroSignal("input is all zeros")
    threshold = np.quantile(energy, energy_percentile)
    quiet = energy <= threshold
    return NoiseModel(accumulate_covariance(spec.select(quiet), bin_range), "vad")


def estimate_noise_whole(blocks, bin_range=None) -> NoiseModel:
    """Average over every frame; suits noise that dominates the whole recording."""
    spec = as_spectrogram(blocks)
    if spec.n_frames < 1:
        raise EmptyInput("no frames to average")
    return NoiseModel(accumulate_covariance(spec, bin_range), "whole")


def estimate_noise_oracle(noise_blocks, bin_range=None) -> NoiseModel:
    """Noise covariance from a separately available noise-only signal."""
    return NoiseModel(accumulate_covariance(noise_blocks, bin_range), "oracle")


def interpolate_template(profile: MotorProfile, motor: int, rpm: float) -> np.ndarray:
    """Template for one motor, linear between the two nearest bank speeds."""
    keys = profile.bank_speeds
    lo, hi = keys[0], keys[-1]
    if rpm < lo * (1 - SPEED_MARGIN) or rpm > hi * (1 + SPEED_MARGIN):
        raise SpeedOutOfRange(f"motor {motor}: {rpm} rpm outside bank [{lo}, {hi}] by more than 20%")
    if rpm < lo or rpm > hi:
        warnings.warn(f"motor {motor}: {rpm} rpm clamped to template bank [{lo}, {hi}]", stacklevel=3)
        rpm = min(max(rpm, lo), hi)
    bank = [profile.template_bank[k][motor] for k in keys]
    k = int(np.searchsorted(keys, rpm, side="right")) - 1
    if k >= len(keys) - 1:
        return bank[-1].copy()
    frac = (rpm - keys[k]) / (keys[k + 1] - keys[k])
    return (1 - frac) * bank[k] + frac * bank[k + 1]


def estimate_noise_motor(profile: MotorProfile, fft_size: int, sample_rate: float | None = None,
                         n_channels: int = 8, bin_range=None) -> NoiseModel:
    """Diagonal noise covariance from speed-weighted motor templates.

    Per bin, the noise power is the sum over motors of each motor's template
    interpolated at its current speed. Templates carry power only, so the
    cross-channel terms are left at zero.
    """
    if not profile.template_bank:
        raise EmptyTemplateBank("motor profile has no templates")
    power = sum(interpolate_template(profile, m, rpm) for m, rpm in enumerate(profile.speeds))
    if power.ndim == 1:
        power = np.broadcast_to(power, (n_channels, power.shape[0]))
    n_bins = fft_size // 2 + 1
    if power.shape[-1] != n_bins:
        if sample_rate is None or profile.template_bin_hz is None:
            raise ShapeMismatch(
                f"templates have {power.shape[-1]} bins, fft_size {fft_size} needs {n_bins}; "
                "give sample_rate and template_bin_hz to resample")
        src = np.arange(power.shape[-1]) * profile.template_bin_hz
        dst = np.arange(n_bins) * sample_rate / fft_size
        power = np.stack([np.interp(dst, src, p) for p in power])
    power = np.maximum(power, 0.0)
    bin_hz = (sample_rate / fft_size) if sample_rate else (profile.template_bin_hz or 1.0)
    bins = np.arange(n_bins)
    if bin_range is not None:
        freqs = bins * bin_hz
        bins = bins[(freqs >= bin_range[0]) & (freqs <= bin_range[1])]
    C = power.shape[0]
    mats = np.zeros((len(bins), C, C), dtype=complex)
    mats[:, np.arange(C), np.arange(C)] = power[:, bins].T
    return NoiseModel(SpatialCovariance(mats, bins, bin_hz, 1), "motor-template")


def estimate_noise_recursive(blocks, alpha: float = 0.95, bin_range=None) -> NoiseModel:
    """R_t = alpha R_{t-1} + (1 - alpha) x_t x_t^H with R_0 = 0; returns R_T."""
    spec = as_spectrogram(blocks)
    if spec.n_frames < 1:
        raise EmptyInput("recursive averaging needs at least one block")
    if not 0.0 <= alpha < 1.0:
        raise InvalidAlpha(f"alpha must be in [0, 1), got {alpha}")
    bins = np.arange(spec.n_bins) if bin_range is None else spec.band(*bin_range)
    x = spec.data[:, :, bins]
    R = np.zeros((len(bins), spec.n_channels, spec.n_channels), dtype=complex)
    for t in range(spec.n_frames):
        xt = x[t].T  # (F, C)
        R = alpha * R + (1 - alpha) * (xt[:, :, None] * xt.conj()[:, None, :])
    return NoiseModel(SpatialCovariance(R, bins, spec.bin_hz, spec.n_frames), "recursive")


def mwf_filters(blocks, noise: NoiseModel, mu: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Per-bin Wiener matrices W = (Phi_s + mu Phi_n)^-1 Phi_s.

    Returns ``(bins, W)`` where ``W[b]`` applies to FFT bin ``bins[b]``; the
    speech covariance is Phi_x - Phi_n projected on the PSD cone.
    """
    spec = as_spectrogram(blocks)
    if mu < 0:
        raise ValueError("mu must be >= 0")
    ncov = noise.noise_cov
    if ncov.n_channels != spec.n_channels:
        raise ShapeMismatch(f"noise model has {ncov.n_channels} channels, input {spec.n_channels}")
    bins = ncov.bins[ncov.bins < spec.n_bins]
    x = spec.data[:, :, bins]
    phi_x = np.einsum("tcf,tdf->fcd", x, x.conj()) / spec.n_frames
    phi_n = ncov.matrices[: len(bins)]
    phi_s = psd_project(phi_x - phi_n)
    A = diagonal_load(phi_s + mu * phi_n)
    # trace of a zero matrix gives zero loading; fall back to loading from phi_x
    C = spec.n_channels
    tr = np.real(np.trace(A, axis1=-2, axis2=-1))
    zero = tr <= 0
    if np.any(zero):
        fallback = LOADING * np.maximum(np.real(np.trace(phi_x[zero], axis1=-2, axis2=-1)) / C, 1e-300)
        A[zero] = A[zero] + fallback[:, None, None] * np.eye(C)
    try:
        W = np.linalg.solve(A, phi_s)
    except np.linalg.LinAlgError as exc:
        raise SingularNoiseCovariance("Wiener system singular after diagonal loading") from exc
    if not np.all(np.isfinite(W)):
        raise SingularNoiseCovariance("Wiener filter is not finite")
    return bins, W


def apply_filters(blocks, bins, W) -> Spectrogram:
    """y_t = W^H x_t on the given bins; other bins pass through."""
    spec = as_spectrogram(blocks)
    out = spec.data.copy()
    x = spec.data[:, :, bins]
    out[:, :, bins] = np.einsum("fcd,tcf->tdf", W.conj(), x)
    return spec.with_data(out)


def mwf(blocks, noise: NoiseModel, mu: float = 1.0) -> Spectrogram:
    """Multichannel Wiener filter; output has the input's shape."""
    spec = as_spectrogram(blocks)
    bins, W = mwf_filters(spec, noise, mu)
    return apply_filters(spec, bins, W)


def highpass(recording: MultichannelRecording, cutoff: float = 100.0, order: int = 4) -> MultichannelRecording:
    """Zero-phase Butterworth high-pass (forward-backward, so the magnitude is squared)."""
    nyq = recording.sample_rate / 2.0
    if not 0.0 < cutoff < nyq:
        raise InvalidCutoff(f"cutoff {cutoff} Hz must lie in (0, {nyq})")
    sos = butter(order, cutoff, btype="highpass", fs=recording.sample_rate, output="sos")
    x = recording.samples
    # pad over a few periods of the cutoff so edge transients settle
    padlen = min(int(3 * recording.sample_rate / cutoff), x.shape[1] - 1)
    y = sosfiltfilt(sos, x, axis=-1, padlen=max(padlen, 0))
    return recording.with_samples(y)


def select_pairs(blocks, noise: NoiseModel, snr_floor_db: float = 0.0, band=None) -> PairMask:
    """Reject microphone pairs whose estimated SNR falls below a floor.

    Per channel, signal power is the in-band noisy power minus the noise-model
    power (floored at 0); a pair's SNR is the ratio of the two-channel sums.
    If every pair fails, the pair with the best SNR is kept.
    """
    spec = as_spectrogram(blocks)
    C = spec.n_channels
    if C < 2:
        raise ShapeMismatch("pair selection needs at least two channels")
    ncov = noise.noise_cov
    bins = ncov.bins[ncov.bins < spec.n_bins]
    if band is not None:
        f = bins * spec.bin_hz
        keep = (f >= band[0]) & (f <= band[1])
        bins, nmat = bins[keep], ncov.matrices[: len(keep)][keep]
    else:
        nmat = ncov.matrices[: len(bins)]
    px = np.mean(np.abs(spec.data[:, :, bins]) ** 2, axis=0).sum(axis=-1)  # (C,)
    pn = np.real(np.diagonal(nmat, axis1=-2, axis2=-1)).sum(axis=0)
    pairs = tuple(itertools.combinations(range(C), 2))
    snr = []
    for i, j in pairs:
        n = pn[i] + pn[j]
        s = max(px[i] + px[j] - n, 0.0)
        if n <= 0:
            snr.append(np.inf)
        elif s == 0:
            snr.append(-np.inf)
        else:
            snr.append(10 * np.log10(s / n))
    snr = np.array(snr)
    accepted = snr >= snr_floor_db
    if not accepted.any():
        accepted[int(np.argmax(snr))] = True
    return PairMask(pairs, tuple(bool(a) for a in accepted))
