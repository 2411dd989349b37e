"""Time-frequency primitives: framing, STFT/ISTFT and spatial covariance.

Shape convention: spectra are stored as (frames, channels, bins), one-sided
(``fft_size // 2 + 1`` bins), so the time axis comes first and a single block
is a (channels, bins) matrix.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np
from scipy.signal import get_window

from .errors import EmptyInput, InconsistentBlocks, InvalidConfig, RecordingTooShort
from .recording import MultichannelRecording

DEFAULT_FFT_SIZE = 1024
DEFAULT_HOP = 512
DEFAULT_WINDOW = "hann"

_WINDOW_ALIASES = {"rect": "boxcar", "rectangular": "boxcar", "none": "boxcar"}


@dataclass(frozen=True, eq=False)
class Frame:
    samples: np.ndarray  # (channels, length)
    start_sample: int
    sample_rate: float


@dataclass(frozen=True, eq=False)
class SpectralBlock:
    bins: np.ndarray  # (channels, fft_size // 2 + 1), complex
    bin_hz: float
    frame_index: int


@dataclass(frozen=True, eq=False)
class Spectrogram:
    """A stack of spectral blocks sharing one analysis configuration.

    Behaves as a sequence of :class:`SpectralBlock`; ``data`` exposes the
    underlying (frames, channels, bins) array for vectorized code.
    """

    data: np.ndarray
    sample_rate: float
    fft_size: int
    hop: int
    window: str = DEFAULT_WINDOW
    first_frame: int = 0

    @property
    def bin_hz(self) -> float:
        return self.sample_rate / self.fft_size

    @property
    def n_frames(self) -> int:
        return self.data.shape[0]

    @property
    def n_channels(self) -> int:
        return self.data.shape[1]

    @property
    def n_bins(self) -> int:
        return self.data.shape[2]

    @property
    def freqs(self) -> np.ndarray:
        return np.arange(self.n_bins) * self.bin_hz

    def __len__(self) -> int:
        return self.n_frames

    def __iter__(self) -> Iterator[SpectralBlock]:
        for t in range(self.n_frames):
            yield self[t]

    def __getitem__(self, index):
        if isinstance(index, slice):
            start = range(self.n_frames)[index]
            offset = start[0] if len(start) else 0
            return Spectrogram(self.data[index], self.sample_rate, self.fft_size, self.hop,
                               self.window, self.first_frame + offset)
        return SpectralBlock(self.data[index], self.bin_hz, self.first_frame + range(self.n_frames)[index])

    def select(self, frames) -> "Spectrogram":
        """Subset of frames by index array or boolean mask."""
        return Spectrogram(self.data[frames], self.sample_rate, self.fft_size, self.hop,
                           self.window, self.first_frame)

    def with_data(self, data) -> "Spectrogram":
        data = np.asarray(data)
        if data.shape != self.data.shape:
            raise InconsistentBlocks(f"shape {data.shape} != {self.data.shape}")
        return Spectrogram(data, self.sample_rate, self.fft_size, self.hop, self.window, self.first_frame)

    def band(self, fmin: float | None = None, fmax: float | None = None) -> np.ndarray:
        """Indices of bins whose center frequency lies in [fmin, fmax]."""
        return band_bins(self.n_bins, self.bin_hz, fmin, fmax)


@dataclass(frozen=True, eq=False)
class SpatialCovariance:
    """Per-bin channel covariance. ``matrices[b]`` belongs to FFT bin ``bins[b]``."""

    matrices: np.ndarray  # (n_bins_kept, C, C)
    bins: np.ndarray
    bin_hz: float
    frame_count: int

    @property
    def n_channels(self) -> int:
        return self.matrices.shape[-1]

    def restrict(self, bins) -> "SpatialCovariance":
        """Keep only the given FFT bins (must be a subset of ``self.bins``)."""
        bins = np.asarray(bins)
        pos = np.searchsorted(self.bins, bins)
        if np.any(pos >= len(self.bins)) or np.any(self.bins[np.minimum(pos, len(self.bins) - 1)] != bins):
            raise InconsistentBlocks("requested bins not covered by covariance")
        return SpatialCovariance(self.matrices[pos], bins, self.bin_hz, self.frame_count)


def band_bins(n_bins: int, bin_hz: float, fmin=None, fmax=None) -> np.ndarray:
    freqs = np.arange(n_bins) * bin_hz
    keep = np.ones(n_bins, dtype=bool)
    if fmin is not None:
        keep &= freqs >= fmin
    if fmax is not None:
        keep &= freqs <= fmax
    return np.flatnonzero(keep)


def make_window(kind: str, size: int) -> np.ndarray:
    kind = _WINDOW_ALIASES.get(kind, kind)
    try:
        return get_window(kind, size, fftbins=True).astype(np.float64)
    except ValueError as exc:
        raise InvalidConfig(f"unknown window {kind!r}") from exc


def frames(recording: MultichannelRecording, size: int, hop: int) -> list[Frame]:
    """Cut a recording into (possibly overlapping) analysis frames."""
    if hop <= 0 or size <= 0:
        raise InvalidConfig("frame size and hop must be positive")
    n = recording.n_samples
    if n < size:
        raise RecordingTooShort(f"recording has {n} samples, frame needs {size}")
    count = (n - size) // hop + 1
    return [Frame(recording.samples[:, t * hop:t * hop + size], t * hop, recording.sample_rate)
            for t in range(count)]


def stft(recording: MultichannelRecording, fft_size: int = DEFAULT_FFT_SIZE,
         hop: int = DEFAULT_HOP, window: str = DEFAULT_WINDOW) -> Spectrogram:
    """Short-time Fourier transform of every channel, without padding.

    Produces ``floor((n - fft_size) / hop) + 1`` blocks.
    """
    if fft_size <= 0 or fft_size & (fft_size - 1):
        raise InvalidConfig(f"fft_size must be a power of two, got {fft_size}")
    if hop <= 0 or hop > fft_size:
        raise InvalidConfig(f"hop must be in (0, fft_size], got {hop}")
    x = recording.samples
    n = x.shape[1]
    if n < fft_size:
        raise RecordingTooShort(f"recording has {n} samples, fft_size is {fft_size}")
    count = (n - fft_size) // hop + 1
    win = make_window(window, fft_size)
    idx = np.arange(fft_size)[np.newaxis, :] + hop * np.arange(count)[:, np.newaxis]
    segments = x[:, idx]  # (C, T, N)
    spec = np.fft.rfft(segments * win, axis=-1)
    return Spectrogram(np.ascontiguousarray(spec.transpose(1, 0, 2)), recording.sample_rate,
                       fft_size, hop, window)


def as_spectrogram(blocks, sample_rate: float | None = None, hop: int | None = None,
                   window: str = DEFAULT_WINDOW) -> Spectrogram:
    """Accept a Spectrogram or a sequence of SpectralBlock."""
    if isinstance(blocks, Spectrogram):
        return blocks
    blocks = list(blocks)
    if not blocks:
        raise EmptyInput("no spectral blocks")
    shape = blocks[0].bins.shape
    for b in blocks:
        if b.bins.shape != shape:
            raise InconsistentBlocks(f"block shape {b.bins.shape} != {shape}")
    fft_size = 2 * (shape[-1] - 1)
    if sample_rate is None:
        sample_rate = blocks[0].bin_hz * fft_size
    data = np.stack([b.bins for b in blocks])
    return Spectrogram(data, sample_rate, fft_size, hop or fft_size // 2, window,
                       blocks[0].frame_index)


def istft(blocks, hop: int | None = None, window: str | None = None) -> MultichannelRecording:
    """Weighted overlap-add inverse of :func:`stft`.

    Output length is ``(T - 1) * hop + fft_size``. Reconstruction is exact on the
    fully overlapped interior for any window whose squared overlap-add is nonzero there.
    """
    if isinstance(blocks, Spectrogram):
        spec = blocks
        hop = hop or spec.hop
        window = window or spec.window
    else:
        blocks = list(blocks)
        if not blocks:
            raise InconsistentBlocks("no blocks to invert")
        spec = as_spectrogram(blocks, hop=hop, window=window or DEFAULT_WINDOW)
        window = window or DEFAULT_WINDOW
        hop = hop or spec.hop
    if spec.n_frames == 0:
        raise InconsistentBlocks("no blocks to invert")
    n_fft = spec.fft_size
    if hop <= 0 or hop > n_fft:
        raise InvalidConfig(f"hop must be in (0, fft_size], got {hop}")
    win = make_window(window, n_fft)
    T = spec.n_frames
    C = spec.n_channels
    length = (T - 1) * hop + n_fft
    frames_td = np.fft.irfft(spec.data, n=n_fft, axis=-1) * win  # (T, C, N)
    out = np.zeros((C, length))
    norm = np.zeros(length)
    for t in range(T):
        out[:, t * hop:t * hop + n_fft] += frames_td[t]
        norm[t * hop:t * hop + n_fft] += win ** 2
    nz = norm > 1e-12 * norm.max()
    out[:, nz] /= norm[nz]
    out[:, ~nz] = 0.0
    return MultichannelRecording(out, spec.sample_rate)


def accumulate_covariance(blocks, bin_range: tuple[float, float] | None = None) -> SpatialCovariance:
    """Plain average of per-frame outer products x_t x_t^H, per frequency bin."""
    spec = as_spectrogram(blocks)
    if spec.n_frames < 1:
        raise EmptyInput("covariance needs at least one block")
    bins = np.arange(spec.n_bins) if bin_range is None else spec.band(*bin_range)
    x = spec.data[:, :, bins]  # (T, C, F)
    cov = np.einsum("tcf,tdf->fcd", x, x.conj()) / spec.n_frames
    cov = 0.5 * (cov + cov.conj().transpose(0, 2, 1))
    return SpatialCovariance(cov, bins, spec.bin_hz, spec.n_frames)


def outer_products(spec: Spectrogram, bins=None) -> np.ndarray:
    """Per-frame outer products, shape (T, F, C, C)."""
    x = spec.data if bins is None else spec.data[:, :, bins]
    return np.einsum("tcf,tdf->tfcd", x, x.conj())

