"""End-to-end processing of one recording: enhance, localize, track, sample.

A configured localizer is a spectrum function ``(recording, grid) ->
AngularSpectrum`` so the tracking layer can call it on arbitrary windows. When
an oracle noise recording is available it travels with the mixture as extra
channels (mixture first, then noise) so that windowing slices both together.
"""
from __future__ import annotations

import logging
from functools import lru_cache

import numpy as np

from . import enhance as en
from .config import PipelineConfig
from .errors import InvalidConfig, ShapeMismatch
from .geometry import ArrayGeometry, DirectionGrid, build_grid
from .localize import AngularSpectrum, gevd_music, music, normalize_scores, pick_peak, srp
from .recording import MultichannelRecording
from .simulate import flight_timestamps
from .spectral import SpatialCovariance, accumulate_covariance, stft
from .tracking import (KalmanConfig, Trajectory, coarse_to_fine, kalman_smooth, localize_windows,
                       sample_at_timestamps, viterbi_smooth)

log = logging.getLogger(__name__)


@lru_cache(maxsize=8)
def _grid(az_step: float, el_step: float, el_min: float, el_max: float) -> DirectionGrid:
    return build_grid(az_step, el_step, (el_min, el_max))


def make_grid(cfg: PipelineConfig) -> DirectionGrid:
    g = cfg.grid
    return _grid(g.az_step, g.el_step, g.el_min, g.el_max)


def _needs_noise(cfg: PipelineConfig) -> bool:
    return "mwf" in cfg.enhance.chain or "select_pairs" in cfg.enhance.chain or cfg.method == "gevd_music"


def _scaled_motor_noise(profile: en.MotorProfile, spec, cfg: PipelineConfig) -> en.NoiseModel:
    """Template noise model rescaled to the recording's level.

    Templates fix the spectral shape; the absolute level is matched to the
    quietest frames (the VAD estimate) by a median power ratio over bins.
    """
    model = en.estimate_noise_motor(profile, cfg.stft.fft_size, spec.sample_rate, spec.n_channels)
    ref = en.estimate_noise_vad(spec, cfg.enhance.vad_percentile).noise_cov
    tmpl = np.real(np.einsum("fcc->f", model.noise_cov.matrices))
    quiet = np.real(np.einsum("fcc->f", ref.matrices))
    ok = tmpl > 0
    scale = float(np.median(quiet[ok] / tmpl[ok])) if ok.any() else 1.0
    cov = model.noise_cov
    return en.NoiseModel(SpatialCovariance(cov.matrices * scale, cov.bins, cov.bin_hz, cov.frame_count),
                         "motor-template")


def estimate_noise(spec, cfg: PipelineConfig, noise_spec=None, motor: en.MotorProfile | None = None):
    kind = cfg.enhance.noise
    if kind == "vad":
        return en.estimate_noise_vad(spec, cfg.enhance.vad_percentile)
    if kind == "whole":
        return en.estimate_noise_whole(spec)
    if kind == "recursive":
        return en.estimate_noise_recursive(spec, cfg.enhance.recursive_alpha)
    if kind == "oracle":
        if noise_spec is None:
            raise InvalidConfig("oracle noise estimation needs a noise-only recording")
        return en.estimate_noise_oracle(noise_spec)
    if motor is None or not motor.template_bank:
        raise InvalidConfig("motor-template noise estimation needs motor speeds and a template bank")
    return _scaled_motor_noise(motor, spec, cfg)


def _split(rec: MultichannelRecording, n_mics: int):
    if rec.n_channels == n_mics:
        return rec, None
    if rec.n_channels == 2 * n_mics:
        x = rec.samples
        return (MultichannelRecording(x[:n_mics], rec.sample_rate, motor_rpm=rec.motor_rpm),
                MultichannelRecording(x[n_mics:], rec.sample_rate))
    raise ShapeMismatch(f"recording has {rec.n_channels} channels, geometry {n_mics} microphones")


def make_spectrum_fn(cfg: PipelineConfig, geom: ArrayGeometry, motor: en.MotorProfile | None = None):
    """Spectrum function implementing the configured enhancement chain and method."""
    s, lo = cfg.stft, cfg.localize

    def spectrum(rec: MultichannelRecording, grid: DirectionGrid) -> AngularSpectrum:
        x, nz = _split(rec, geom.n_mics)
        if "highpass" in cfg.enhance.chain:
            x = en.highpass(x, cfg.enhance.highpass_cutoff, cfg.enhance.highpass_order)
            if nz is not None:
                nz = en.highpass(nz, cfg.enhance.highpass_cutoff, cfg.enhance.highpass_order)
        spec = stft(x, s.fft_size, s.hop, s.window)
        noise = mask = None
        if _needs_noise(cfg):
            noise_spec = stft(nz, s.fft_size, s.hop, s.window) if nz is not None else None
            noise = estimate_noise(spec, cfg, noise_spec, motor)
        for op in cfg.enhance.chain:
            if op == "select_pairs":
                mask = en.select_pairs(spec, noise, cfg.enhance.pair_snr_floor_db, cfg.band)
            elif op == "mwf":
                spec = en.mwf(spec, noise, cfg.enhance.mu)
        if lo.method in ("srp_phat", "srp_nonlin"):
            weighting = "phat" if lo.method == "srp_phat" else "nonlin"
            return srp(spec, grid, geom, mask, weighting, lo.gamma, cfg.band)
        cov = accumulate_covariance(spec)
        if lo.method == "music":
            return music(cov, grid, geom, lo.n_sources, cfg.band)
        return gevd_music(cov, noise, grid, geom, lo.n_sources, cfg.band)

    return spectrum


def _with_noise(rec: MultichannelRecording, noise: MultichannelRecording | None) -> MultichannelRecording:
    if noise is None:
        return rec
    if noise.n_channels != rec.n_channels or noise.n_samples < rec.n_samples:
        raise ShapeMismatch("oracle noise must match the recording's channels and cover its length")
    return MultichannelRecording(np.vstack([rec.samples, noise.samples[:, : rec.n_samples]]), rec.sample_rate,
                                 motor_rpm=rec.motor_rpm)


def _motor(cfg: PipelineConfig, rec: MultichannelRecording, motor_speeds, templates):
    speeds = motor_speeds if motor_speeds is not None else rec.motor_rpm
    if cfg.enhance.noise != "motor-template" or not _needs_noise(cfg):
        return None
    if speeds is None or templates is None:
        raise InvalidConfig("motor-template noise estimation needs motor speeds and a template bank")
    bank, bin_hz = templates
    return en.MotorProfile(tuple(speeds), bank, bin_hz)


def track(rec: MultichannelRecording, cfg: PipelineConfig, fn, grid: DirectionGrid) -> Trajectory:
    """Direction trajectory of a moving source according to ``cfg.tracking``."""
    tr = cfg.tracking
    if tr.method == "coarse_to_fine":
        return coarse_to_fine(rec, fn, grid, tr.window, tr.search_radius, tr.stride)
    raw, spectra = localize_windows(rec, fn, grid, tr.window, tr.stride)
    if tr.method == "kalman":
        return kalman_smooth(raw, KalmanConfig(tr.process_noise, tr.measurement_noise, tr.initial_var, tr.gate_sigma))
    if tr.method == "viterbi":
        spectra = [normalize_scores(sp) for sp in spectra]
        return viterbi_smooth(spectra, tr.transition_penalty, tr.top_k or None, raw.times)
    return raw


def localize_recording(rec: MultichannelRecording, cfg: PipelineConfig, geom: ArrayGeometry, kind: str,
                       motor_speeds=None, noise: MultichannelRecording | None = None,
                       templates=None, timestamps=None):
    """Static: one Direction. Flight: ``{timestamp_index: Direction}``."""
    if rec.n_channels != geom.n_mics:
        raise ShapeMismatch(f"recording has {rec.n_channels} channels, geometry {geom.n_mics} microphones")
    grid = make_grid(cfg)
    fn = make_spectrum_fn(cfg, geom, _motor(cfg, rec, motor_speeds, templates))
    x = _with_noise(rec, noise)
    if kind == "static":
        return pick_peak(fn(x, grid)).direction
    if kind != "flight":
        raise InvalidConfig(f"unknown task kind {kind!r}")
    traj = track(x, cfg, fn, grid)
    times = flight_timestamps(rec.duration) if timestamps is None else np.asarray(timestamps, dtype=float)
    dirs = sample_at_timestamps(traj, times, cfg.tracking.sample_window)
    return {k: d for k, d in enumerate(dirs)}


def localize_file(path, config: PipelineConfig, geom: ArrayGeometry, kind: str, motor_speeds=None,
                  noise_path=None, templates=None, timestamps=None):
    from . import io as dio

    rec = dio.read_wav(path)
    noise = dio.read_wav(noise_path) if noise_path is not None else None
    return localize_recording(rec, config, geom, kind, motor_speeds, noise, templates, timestamps)


def enhancer(rec: MultichannelRecording, cfg: PipelineConfig, noise: MultichannelRecording | None = None,
             motor_speeds=None, templates=None):
    """Fix the chain's statistics on ``rec`` and return the resulting linear operator.

    The returned function maps any recording shaped like ``rec`` through the
    high-pass and the Wiener filters estimated from ``rec``. Output keeps the
    input's shape; samples not covered by a full STFT frame are zeroed when a
    Wiener stage is present.
    """
    chain = cfg.enhance.chain
    hp = "highpass" in chain
    e = cfg.enhance

    def pre(x):
        return en.highpass(x, e.highpass_cutoff, e.highpass_order) if hp else x

    if "mwf" not in chain:
        return pre
    from .spectral import istft

    s = cfg.stft
    x = pre(rec)
    spec = stft(x, s.fft_size, s.hop, s.window)
    noise_spec = None
    if noise is not None:
        noise_spec = stft(pre(noise.segment(0, rec.n_samples)), s.fft_size, s.hop, s.window)
    model = estimate_noise(spec, cfg, noise_spec, _motor(cfg, rec, motor_speeds, templates))
    bins, W = en.mwf_filters(spec, model, e.mu)

    def apply(r: MultichannelRecording) -> MultichannelRecording:
        z = pre(r)
        y = istft(en.apply_filters(stft(z, s.fft_size, s.hop, s.window), bins, W))
        out = np.zeros_like(z.samples)
        m = min(out.shape[1], y.n_samples)
        out[:, :m] = y.samples[:, :m]
        return z.with_samples(out)

    return apply


def enhance_recording(rec: MultichannelRecording, cfg: PipelineConfig, noise: MultichannelRecording | None = None,
                      motor_speeds=None, templates=None) -> MultichannelRecording:
    """Apply the configured chain; same channels, length and rate as the input."""
    return enhancer(rec, cfg, noise, motor_speeds, templates)(rec)


__all__ = ["make_grid", "make_spectrum_fn", "estimate_noise", "track", "localize_recording",
           "localize_file", "enhancer", "enhance_recording"]
