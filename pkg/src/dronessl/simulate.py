"""Synthetic drone-recording scenes.

A clean far-field source is rendered onto the array with fractional delays,
synthetic rotor ego-noise is rendered from near-field rotor positions, and the
two are mixed at a prescribed SNR. ``generate_task`` writes whole static or
flight datasets in the on-disk layout read by :mod:`dronessl.io`.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .enhance import MotorProfile
from .errors import DelayTooLarge, IoFailure, ShapeMismatch, ZeroNoise
from .geometry import ArrayGeometry, Direction, cube_array, random_directions, rotate_towards, slerp
from .recording import MultichannelRecording

SAMPLE_RATE = 44100
FIR_TAPS = 31
KAISER_BETA = 8.6
UPDATE_SECONDS = 0.010
FLIGHT_TIMESTAMPS = 15
FLIGHT_DURATION = 4.0
STATIC_DURATION = 2.0
GT_WINDOW = 0.5
MAX_RATE = 30.0  # deg/s
SOURCE_KINDS = ("speech", "white", "sinusoid")

# Rotor hubs relative to the array center (m): a quadrotor above the array.
DEFAULT_ROTORS = np.array([
    [0.25, 0.25, 0.12],
    [-0.25, 0.25, 0.12],
    [-0.25, -0.25, 0.12],
    [0.25, -0.25, 0.12],
])


def _kernel(frac: float) -> np.ndarray:
    """31-tap Kaiser-windowed sinc delaying by ``frac`` in [0, 1) around tap 15."""
    half = FIR_TAPS // 2
    t = np.arange(FIR_TAPS) - half - frac
    # window evaluated on the shifted axis keeps the kernel symmetric about half + frac
    x = np.clip(t / (half + 1), -1.0, 1.0)
    w = np.i0(KAISER_BETA * np.sqrt(1.0 - x ** 2)) / np.i0(KAISER_BETA)
    h = np.sinc(t) * w
    return h / h.sum()


def fractional_delay(signal, delay: float) -> np.ndarray:
    """Delay a 1-D signal by a real number of samples (zeros shifted in).

    output[t] ~= input[t - delay], via a 31-tap Kaiser (beta 8.6) windowed sinc.
    Integer delays reduce to an exact shift.
    """
    x = np.asarray(signal, dtype=np.float64)
    n = len(x)
    if not abs(delay) < n / 4:
        raise DelayTooLarge(f"|delay| {delay} must be below length/4 = {n / 4}")
    whole = int(np.floor(delay))
    frac = delay - whole
    if frac < 1e-12:
        y = x
    else:
        y = np.convolve(x, _kernel(frac))[FIR_TAPS // 2: FIR_TAPS // 2 + n]
    out = np.zeros(n)
    if whole >= 0:
        out[whole:] = y[: n - whole]
    else:
        out[: n + whole] = y[-whole:]
    return out


def varying_delay(signal, delays, block: int) -> np.ndarray:
    """Fractional delay re-evaluated every ``block`` samples.

    ``delays[b]`` (in samples) applies to output samples ``b*block .. (b+1)*block``.
    """
    x = np.asarray(signal, dtype=np.float64)
    n = len(x)
    out = np.zeros(n)
    half = FIR_TAPS // 2
    padded = np.concatenate([np.zeros(FIR_TAPS), x, np.zeros(FIR_TAPS)])
    for b, d in enumerate(delays):
        start = b * block
        stop = min(start + block, n)
        if start >= n:
            break
        whole = int(np.floor(d))
        h = _kernel(d - whole)
        t = np.arange(start, stop)
        # output[t] = sum_k h[k] x[t - whole - (k - half)]
        src = t[:, None] - whole - (np.arange(FIR_TAPS)[None, :] - half) + FIR_TAPS
        ok = (src >= 0) & (src < len(padded))
        vals = np.where(ok, padded[np.clip(src, 0, len(padded) - 1)], 0.0)
        out[start:stop] = vals @ h
    return out


@dataclass(frozen=True)
class DirectionPath:
    """Piecewise-great-circle source path through (time, direction) waypoints."""

    times: tuple[float, ...]
    directions: tuple[Direction, ...]

    def __post_init__(self):
        if len(self.times) != len(self.directions) or not self.times:
            raise ValueError("path needs matching, nonempty times and directions")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("path times must increase")

    def vector_at(self, t) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, dtype=np.float64))
        times = np.asarray(self.times)
        vecs = np.array([d.vector for d in self.directions])
        out = np.empty((len(t), 3))
        for n, tn in enumerate(t):
            if tn <= times[0]:
                out[n] = vecs[0]
            elif tn >= times[-1]:
                out[n] = vecs[-1]
            else:
                k = int(np.searchsorted(times, tn, side="right")) - 1
                frac = (tn - times[k]) / (times[k + 1] - times[k])
                out[n] = slerp(vecs[k], vecs[k + 1], frac)
        return out

    def at(self, t: float) -> Direction:
        return Direction.from_vector(self.vector_at(t)[0])

    def window_mean(self, center: float, width: float = GT_WINDOW, step: float = UPDATE_SECONDS) -> Direction:
        """Spherical mean of the path over [center - width/2, center + width/2]."""
        ts = np.arange(center - width / 2, center + width / 2 + 1e-9, step)
        m = self.vector_at(ts).mean(axis=0)
        return Direction.from_vector(m)


@dataclass(frozen=True, eq=False)
class SceneSpec:
    source_direction: Direction | DirectionPath
    source_kind: str = "speech"
    snr_db: float = 0.0
    duration: float = STATIC_DURATION
    geometry: ArrayGeometry = field(default_factory=cube_array)
    seed: int = 0
    sample_rate: float = SAMPLE_RATE
    frequency: float = 1000.0  # sinusoid sources only

    def __post_init__(self):
        if not self.duration > 0:
            raise ValueError("duration must be positive")
        if not np.isfinite(self.snr_db):
            raise ValueError("snr_db must be finite")
        if self.source_kind not in SOURCE_KINDS:
            raise ValueError(f"unknown source kind {self.source_kind!r}")


@dataclass(frozen=True, eq=False)
class NoiseSource:
    """Ego-noise generator settings.

    ``kind`` is ``"synthetic"`` (harmonic rotor model) or ``"recorded"``
    (``path`` to a WAV tiled/truncated to length).
    """

    kind: str = "synthetic"
    rpm: tuple[float, ...] = (5200.0, 5500.0, 5800.0, 6100.0)
    harmonics: int = 60
    floor_db: float = -20.0
    modulation: float = 0.05
    rotor_positions: np.ndarray = field(default_factory=lambda: DEFAULT_ROTORS.copy())
    path: str | None = None
    channel_gain: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.kind not in ("synthetic", "recorded"):
            raise ValueError(f"unknown noise kind {self.kind!r}")
        if self.kind == "synthetic" and any(r <= 0 for r in self.rpm):
            raise ValueError("synthetic rotor speeds must be > 0")
        if self.kind == "recorded" and not self.path:
            raise ValueError("recorded noise needs a path")


def speech_like(n: int, sample_rate: float, rng: np.random.Generator) -> np.ndarray:
    """White noise shaped like long-term speech: 100 Hz-8 kHz band, -6 dB/octave
    above 500 Hz, with a 4 Hz syllabic amplitude modulation."""
    spec = np.fft.rfft(rng.standard_normal(n))
    f = np.fft.rfftfreq(n, 1.0 / sample_rate)
    gain = np.where(f > 500.0, 500.0 / np.maximum(f, 1e-9), 1.0)
    gain[(f < 100.0) | (f > 8000.0)] = 0.0
    x = np.fft.irfft(spec * gain, n=n)
    t = np.arange(n) / sample_rate
    phase = rng.uniform(0, 2 * np.pi)
    envelope = 0.5 * (1.0 + np.sin(2 * np.pi * 4.0 * t + phase))
    x = x * envelope
    return x / np.sqrt(np.mean(x ** 2))


def source_signal(spec: SceneSpec, n: int, rng: np.random.Generator) -> np.ndarray:
    if spec.source_kind == "speech":
        return speech_like(n, spec.sample_rate, rng)
    if spec.source_kind == "white":
        return rng.standard_normal(n)
    t = np.arange(n) / spec.sample_rate
    return np.sqrt(2) * np.sin(2 * np.pi * spec.frequency * t + rng.uniform(0, 2 * np.pi))


def render_source(spec: SceneSpec) -> MultichannelRecording:
    """Far-field rendering of the scene's clean source onto the array.

    Channel k is the source delayed by tdoa(d, mic 0 -> mic k) * fs. Moving
    sources have their direction re-evaluated every 10 ms.
    """
    rng = np.random.default_rng(spec.seed)
    geom = spec.geometry
    fs = spec.sample_rate
    n = int(round(spec.duration * fs))
    margin = FIR_TAPS + int(np.ceil(2 * np.max(np.linalg.norm(geom.mic_positions, axis=1)) / geom.speed_of_sound * fs)) + 4
    s = source_signal(spec, n + 2 * margin, rng)
    rel = geom.mic_positions[0] - geom.mic_positions  # tau_0k = u . (m0 - mk) / c
    out = np.empty((geom.n_mics, n))
    if isinstance(spec.source_direction, Direction):
        delays = spec.source_direction.vector @ rel.T / geom.speed_of_sound * fs
        for k in range(geom.n_mics):
            out[k] = fractional_delay(s, delays[k])[margin:margin + n]
    else:
        block = max(1, int(round(UPDATE_SECONDS * fs)))
        n_blocks = -(-(n + 2 * margin) // block)
        times = (np.arange(n_blocks) * block - margin + block / 2) / fs
        vecs = spec.source_direction.vector_at(np.clip(times, 0, spec.duration))
        delays = vecs @ rel.T / geom.speed_of_sound * fs  # (B, M)
        for k in range(geom.n_mics):
            out[k] = varying_delay(s, delays[:, k], block)[margin:margin + n]
    return MultichannelRecording(out, fs)


def _rpm_walk(rng: np.random.Generator, n: int, fs: float, depth: float) -> np.ndarray:
    """Slow multiplicative speed wander, bounded to +-depth."""
    if depth <= 0:
        return np.ones(n)
    knots = max(2, int(np.ceil(n / fs * 10)) + 1)  # 10 Hz control rate
    steps = rng.normal(0.0, depth / 3, knots)
    walk = np.clip(np.cumsum(steps), -depth, depth)
    return 1.0 + np.interp(np.arange(n), np.linspace(0, n - 1, knots), walk)


def motor_signal(rpm: float, harmonics: int, floor_db: float, modulation: float, n: int,
                 fs: float, rng: np.random.Generator) -> np.ndarray:
    """One rotor: harmonic comb at rpm/60 with 1/h amplitudes plus a white floor."""
    f0 = rpm / 60.0 * _rpm_walk(rng, n, fs, modulation)
    base = np.exp(2j * np.pi * np.cumsum(f0) / fs)
    z = np.ones(n, dtype=complex)
    x = np.zeros(n)
    for h in range(1, harmonics + 1):
        if h * rpm / 60.0 * (1 + modulation) >= fs / 2:
            break
        z *= base  # z = base**h, cheaper than evaluating sin(h * phase)
        x += np.imag(z * np.exp(1j * rng.uniform(0, 2 * np.pi))) / h
    p = np.mean(x ** 2)
    x += np.sqrt(p * 10 ** (floor_db / 10)) * rng.standard_normal(n)
    return x


def _propagate(signal: np.ndarray, src: np.ndarray, geom: ArrayGeometry, fs: float,
               gains=None) -> np.ndarray:
    """Near-field rendering of a point source at ``src``: delay and 1/r gain per mic."""
    dist = np.linalg.norm(geom.mic_positions - src, axis=1)
    ref = dist.min()
    out = np.empty((geom.n_mics, len(signal)))
    for k in range(geom.n_mics):
        d = (dist[k] - ref) / geom.speed_of_sound * fs
        out[k] = fractional_delay(signal, d) * ref / dist[k]
    if gains is not None:
        out *= np.asarray(gains)[:, None]
    return out


def synth_ego_noise(noise: NoiseSource, duration: float, geometry: ArrayGeometry | None = None,
                    seed: int = 0, sample_rate: float = SAMPLE_RATE,
                    template_rpms: int = 0) -> tuple[MultichannelRecording, MotorProfile]:
    """Multichannel rotor noise and the matching motor-speed metadata.

    With ``template_rpms > 0`` the profile also carries a template bank: the
    channel-averaged power spectrum (1024-point) of each motor rendered alone
    at that many speeds spanning +-10% around the mean rotor speed.
    """
    if not duration > 0:
        raise ValueError("duration must be positive")
    geom = geometry or cube_array()
    n = int(round(duration * sample_rate))
    if noise.kind == "recorded":
        from .io import read_wav  # local: io depends on this module's layout helpers

        rec = read_wav(noise.path)
        reps = -(-n // rec.n_samples)
        data = np.tile(rec.samples, (1, reps))[:, :n]
        return MultichannelRecording(data, rec.sample_rate), MotorProfile(tuple(noise.rpm))
    rotors = np.asarray(noise.rotor_positions, dtype=np.float64)
    rpms = list(noise.rpm)
    if len(rpms) != len(rotors):
        raise ShapeMismatch(f"{len(rpms)} rotor speeds for {len(rotors)} rotor positions")
    mix = np.zeros((geom.n_mics, n))
    for m, (rpm, pos) in enumerate(zip(rpms, rotors)):
        sig_rng = np.random.default_rng([seed, m])
        sig = motor_signal(rpm, noise.harmonics, noise.floor_db, noise.modulation, n, sample_rate, sig_rng)
        mix += _propagate(sig, pos, geom, sample_rate, noise.channel_gain)
    profile = MotorProfile(tuple(rpms))
    if template_rpms > 0:
        keys = np.mean(rpms) * np.linspace(0.9, 1.1, template_rpms)
        profile = render_templates(keys, noise, geom, seed, sample_rate, speeds=rpms)
    return MultichannelRecording(mix, sample_rate, motor_rpm=tuple(rpms)), profile


def render_templates(rpms, noise: NoiseSource | None = None, geometry: ArrayGeometry | None = None,
                     seed: int = 0, sample_rate: float = SAMPLE_RATE, speeds=None,
                     fft_size: int = 1024) -> MotorProfile:
    """Template bank: each motor rendered alone, unmodulated, at every speed in ``rpms``.

    A template is the channel-averaged power spectrum of 0.5 s of that motor.
    """
    noise = noise or NoiseSource()
    geom = geometry or cube_array()
    rotors = np.asarray(noise.rotor_positions, dtype=np.float64)
    bank = {}
    for key in rpms:
        per_motor = []
        for m, pos in enumerate(rotors):
            trng = np.random.default_rng([seed, m, 1])
            sig = motor_signal(float(key), noise.harmonics, noise.floor_db, 0.0, int(0.5 * sample_rate),
                               sample_rate, trng)
            per_motor.append(_power_spectrum(
                _propagate(sig, pos, geom, sample_rate, noise.channel_gain), fft_size).mean(axis=0))
        bank[float(key)] = np.array(per_motor)
    speeds = tuple(speeds) if speeds is not None else tuple(float(np.mean(rpms)) for _ in rotors)
    return MotorProfile(speeds, bank, sample_rate / fft_size)


DATASET_TEMPLATE_RPMS = tuple(float(r) for r in range(4000, 7001, 250))


def _power_spectrum(x: np.ndarray, fft_size: int = 1024) -> np.ndarray:
    """Mean periodogram per channel (Hann, half overlap), shape (C, fft_size//2+1)."""
    win = np.hanning(fft_size + 1)[:-1]
    hop = fft_size // 2
    count = (x.shape[1] - fft_size) // hop + 1
    idx = np.arange(fft_size)[None, :] + hop * np.arange(count)[:, None]
    return np.mean(np.abs(np.fft.rfft(x[:, idx] * win, axis=-1)) ** 2, axis=1)


def mix_components(clean: MultichannelRecording, noise: MultichannelRecording,
                   snr_db: float) -> tuple[MultichannelRecording, np.ndarray]:
    """Mixture plus the scaled noise that was added to it."""
    if clean.n_channels != noise.n_channels or clean.sample_rate != noise.sample_rate:
        raise ShapeMismatch("clean and noise differ in channel count or sample rate")
    if noise.n_samples < clean.n_samples:
        raise ShapeMismatch("noise is shorter than the clean signal")
    if not np.isfinite(snr_db):
        raise ValueError("snr_db must be finite")
    nz = noise.samples[:, : clean.n_samples]
    p_noise = np.mean(nz ** 2)
    if p_noise == 0:
        raise ZeroNoise("noise signal has zero power")
    p_clean = np.mean(clean.samples ** 2)
    scale = np.sqrt(p_clean / (p_noise * 10 ** (snr_db / 10)))
    scaled = scale * nz
    return clean.with_samples(clean.samples + scaled), scaled


def mix_at_snr(clean: MultichannelRecording, noise: MultichannelRecording, snr_db: float) -> MultichannelRecording:
    """clean + g * noise with g chosen so that 10 log10(P_clean / P_noise) = snr_db.

    Power is the mean square over all channels and samples.
    """
    return mix_components(clean, noise, snr_db)[0]


@dataclass(frozen=True, eq=False)
class Scene:
    """One rendered scene with its decomposition and ground truth."""

    recording_id: str
    mixture: MultichannelRecording
    clean: MultichannelRecording
    noise: np.ndarray  # scaled noise actually added
    truth: Direction | list
    motor: MotorProfile
    spec: SceneSpec


def flight_timestamps(duration: float = FLIGHT_DURATION, count: int = FLIGHT_TIMESTAMPS,
                      window: float = GT_WINDOW) -> np.ndarray:
    """Regularly spaced timestamps whose averaging windows fit in the recording."""
    return np.linspace(window / 2, duration - window / 2, count)


def random_path(rng: np.random.Generator, duration: float = FLIGHT_DURATION,
                max_rate: float = MAX_RATE, segments: int = 2) -> DirectionPath:
    """Piecewise great-circle path with each segment's rate drawn below ``max_rate``."""
    u = random_directions(rng, 1)[0]
    times = np.linspace(0.0, duration, segments + 1)
    vecs = [u]
    for k in range(segments):
        rate = rng.uniform(0.2, 1.0) * max_rate
        target = random_directions(rng, 1)[0]
        vecs.append(rotate_towards(vecs[-1], target, rate * (times[k + 1] - times[k])))
    return DirectionPath(tuple(times), tuple(Direction.from_vector(v) for v in vecs))


def make_scene(kind: str, index: int, seed: int, snr_db: float, source_kind: str = "speech",
               geometry: ArrayGeometry | None = None, noise: NoiseSource | None = None,
               direction: Direction | DirectionPath | None = None,
               duration: float | None = None, template_rpms: int = 0) -> Scene:
    """Render one static or flight scene deterministically from (seed, index)."""
    geom = geometry or cube_array()
    rng = np.random.default_rng([seed, index])
    if kind == "static":
        duration = duration or STATIC_DURATION
        if direction is None:
            direction = Direction.from_vector(random_directions(rng, 1)[0])
    elif kind == "flight":
        duration = duration or FLIGHT_DURATION
        if direction is None:
            direction = random_path(rng, duration)
    else:
        raise ValueError(f"unknown task kind {kind!r}")
    spec = SceneSpec(direction, source_kind, snr_db, duration, geom, seed=int(rng.integers(2 ** 31)))
    clean = render_source(spec)
    noise = noise or _default_noise(rng)
    noise_rec, motor = synth_ego_noise(noise, duration, geom, int(rng.integers(2 ** 31)),
                                       spec.sample_rate, template_rpms)
    mixture, scaled = mix_components(clean, noise_rec, snr_db)
    mixture = MultichannelRecording(mixture.samples, mixture.sample_rate, motor_rpm=motor.speeds)
    if kind == "static":
        truth = direction
    else:
        truth = [(float(t), direction.window_mean(t)) for t in flight_timestamps(duration)]
    return Scene(f"{kind}{index:03d}", mixture, clean, scaled, truth, motor, spec)


def _default_noise(rng: np.random.Generator) -> NoiseSource:
    base = rng.uniform(4500.0, 6500.0)
    rpm = tuple(float(base * rng.uniform(0.95, 1.05)) for _ in range(4))
    return NoiseSource(rpm=rpm)


def generate_task(kind: str, count: int, snr_range=(-20.0, 5.0), seed: int = 0,
                  out_dir: str | os.PathLike | None = None, source_kind: str = "speech",
                  geometry: ArrayGeometry | None = None, write_noise: bool = False) -> list[Scene]:
    """Generate a static or flight dataset; optionally write it to ``out_dir``.

    Recording ``i`` derives all its randomness from (seed, i), so datasets are
    reproducible and recordings independent of each other.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    lo, hi = float(snr_range[0]), float(snr_range[1])
    if not (np.isfinite(lo) and np.isfinite(hi)) or lo > hi:
        raise ValueError(f"invalid SNR range {snr_range}")
    geom = geometry or cube_array()
    scenes = []
    for i in range(count):
        snr = float(np.random.default_rng([seed, i, 7]).uniform(lo, hi))
        scenes.append(make_scene(kind, i, seed, snr, source_kind, geom))
    if out_dir is not None:
        write_dataset(scenes, out_dir, kind, geom, write_noise)
    return scenes


def write_dataset(scenes, out_dir, kind: str, geometry: ArrayGeometry, write_noise: bool = False,
                  template_bank: bool = True) -> Path:
    from . import io as dio

    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        for sc in scenes:
            dio.write_wav(sc.mixture, out / f"{sc.recording_id}.wav", "float32")
            if write_noise:
                (out / "noise").mkdir(exist_ok=True)
                dio.write_wav(MultichannelRecording(sc.noise, sc.mixture.sample_rate),
                              out / "noise" / f"{sc.recording_id}.wav", "float32")
        from .evaluation import GroundTruth

        if kind == "static":
            gt = GroundTruth("static", {sc.recording_id: sc.truth for sc in scenes})
        else:
            gt = GroundTruth("flight", {sc.recording_id: list(sc.truth) for sc in scenes})
        dio.write_ground_truth(gt, out / "ground_truth.csv")
        dio.write_motor_speeds({sc.recording_id: sc.motor.speeds for sc in scenes}, out / "motor_speeds.csv")
        dio.write_geometry(geometry, out / "geometry.txt")
        if scenes and scenes[0].motor.speeds and template_bank:
            dio.write_motor_templates(render_templates(DATASET_TEMPLATE_RPMS, geometry=geometry),
                                      out / "motor_templates.csv")
    except OSError as exc:
        raise IoFailure(f"cannot write dataset to {out}: {exc}") from exc
    return out


__all__ = [
    "fractional_delay", "varying_delay", "DirectionPath", "SceneSpec", "NoiseSource",
    "render_source", "synth_ego_noise", "mix_at_snr", "mix_components", "make_scene",
    "generate_task", "write_dataset", "render_templates", "flight_timestamps", "speech_like",
]
