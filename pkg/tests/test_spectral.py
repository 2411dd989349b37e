import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import THOROUGH
from dronessl.errors import EmptyInput, InconsistentBlocks, InvalidConfig, RecordingTooShort
from dronessl.recording import MultichannelRecording
from dronessl.spectral import (SpectralBlock, Spectrogram, accumulate_covariance, as_spectrogram, frames,
                               istft, stft)

FS = 44100


def rec(x, fs=FS):
    return MultichannelRecording(np.atleast_2d(x), fs)


def naive_dft(x):
    n = len(x)
    k = np.arange(n // 2 + 1)[:, None]
    t = np.arange(n)[None, :]
    return (x[None, :] * np.exp(-2j * np.pi * k * t / n)).sum(axis=1)


class TestStft:
    def test_zero_signal_gives_zero_bins(self):
        for size, hop, win in [(256, 128, "hann"), (1024, 512, "rect"), (512, 100, "hamming")]:
            spec = stft(rec(np.zeros(3000)), size, hop, win)
            assert np.all(spec.data == 0)

    def test_bin_centered_sinusoid_peaks_at_its_bin(self):
        n, k = 1024, 37
        t = np.arange(8 * n)
        x = np.cos(2 * np.pi * k * t / n + 0.3)
        spec = stft(rec(x), n, 256, "rect")
        assert np.all(np.argmax(np.abs(spec.data[:, 0, :]), axis=-1) == k)
        # naive O(N^2) DFT oracle on the first frame
        np.testing.assert_allclose(spec.data[0, 0], naive_dft(x[:n]), atol=1e-8)

    def test_block_count(self):
        spec = stft(rec(np.ones(4096)), 1024, 512)
        assert spec.n_frames == 7
        assert spec.n_bins == 513
        assert spec.bin_hz == FS / 1024

    @given(st.integers(1024, 20000), st.sampled_from([1024, 512, 256]), st.integers(1, 1024))
    def test_block_count_formula(self, n, size, hop):
        hop = min(hop, size)
        spec = stft(rec(np.zeros(n)), size, hop)
        assert spec.n_frames == (n - size) // hop + 1
        assert len(frames(rec(np.zeros(n)), size, hop)) == spec.n_frames

    def test_errors(self):
        with pytest.raises(RecordingTooShort):
            stft(rec(np.zeros(1000)), 1024, 512)
        with pytest.raises(InvalidConfig):
            stft(rec(np.zeros(4096)), 1024, 0)
        with pytest.raises(InvalidConfig):
            stft(rec(np.zeros(4096)), 1000, 500)
        with pytest.raises(InvalidConfig):
            stft(rec(np.zeros(4096)), 1024, 2048)

    @THOROUGH
    @given(st.integers(0, 2 ** 32 - 1), st.floats(-3, 3), st.floats(-3, 3))
    def test_linearity(self, seed, a, b):
        r = np.random.default_rng(seed)
        x, y = r.standard_normal((2, 2, 2048))
        lhs = stft(rec(a * x + b * y), 512, 256).data
        rhs = a * stft(rec(x), 512, 256).data + b * stft(rec(y), 512, 256).data
        scale = max(np.max(np.abs(lhs)), 1e-300)
        assert np.max(np.abs(lhs - rhs)) <= 1e-9 * scale + 1e-12

    @THOROUGH
    @given(st.integers(0, 2 ** 32 - 1))
    def test_parseval_rect(self, seed):
        x = np.random.default_rng(seed).standard_normal(512)
        spec = stft(rec(x), 512, 512, "rect").data[0, 0]
        # one-sided spectrum: double every bin except DC and Nyquist
        w = np.full(257, 2.0)
        w[[0, -1]] = 1.0
        spectral = np.sum(w * np.abs(spec) ** 2) / 512
        assert spectral == pytest.approx(np.sum(x ** 2), rel=1e-6)


def interior_error(x, y, size):
    sl = slice(size, x.shape[-1] - size)
    return np.sqrt(np.mean((x[..., sl] - y[..., sl]) ** 2)) / np.sqrt(np.mean(x[..., sl] ** 2))


class TestIstft:
    def test_white_noise_round_trip(self, rng):
        x = rng.standard_normal((3, 20000))
        y = istft(stft(rec(x), 1024, 512)).samples
        assert interior_error(x[:, : y.shape[1]], y, 1024) < 1e-6

    def test_sinusoid_round_trip(self):
        t = np.arange(30000) / FS
        x = np.sin(2 * np.pi * 441.7 * t)
        y = istft(stft(rec(x), 1024, 512)).samples[0]
        assert interior_error(x[: len(y)], y, 1024) < 1e-6

    def test_zero_blocks(self):
        spec = Spectrogram(np.zeros((5, 2, 513), complex), FS, 1024, 512)
        assert np.all(istft(spec).samples == 0)

    @given(st.integers(0, 2 ** 32 - 1), st.sampled_from([(256, 128), (512, 256), (512, 128)]))
    def test_round_trip_property(self, seed, cfg):
        size, hop = cfg
        x = np.random.default_rng(seed).standard_normal((1, 6 * size))
        y = istft(stft(rec(x), size, hop)).samples
        assert interior_error(x[:, : y.shape[1]], y, size) < 1e-6

    def test_accepts_block_sequence(self, rng):
        x = rng.standard_normal((2, 8192))
        spec = stft(rec(x), 1024, 512)
        y1 = istft(spec).samples
        y2 = istft(list(spec), hop=512, window="hann").samples
        np.testing.assert_array_equal(y1, y2)

    def test_inconsistent_blocks(self):
        blocks = [SpectralBlock(np.zeros((2, 513), complex), FS / 1024, 0),
                  SpectralBlock(np.zeros((3, 513), complex), FS / 1024, 1)]
        with pytest.raises(InconsistentBlocks):
            istft(blocks, 512, "hann")
        with pytest.raises(InconsistentBlocks):
            istft([], 512, "hann")


class TestCovariance:
    def block(self, values, bin_idx=3, channels=1):
        b = np.zeros((channels, 9), complex)
        b[:, bin_idx] = values
        return SpectralBlock(b, 100.0, 0)

    def test_single_block_power(self):
        cov = accumulate_covariance([self.block(2 + 0j)])
        assert cov.matrices[3].shape == (1, 1)
        assert cov.matrices[3][0, 0] == 4
        assert cov.frame_count == 1

    def test_two_blocks_average(self):
        cov = accumulate_covariance([self.block(1 + 0j), self.block(1j)])
        assert cov.matrices[3][0, 0] == pytest.approx(1.0)
        assert cov.frame_count == 2

    def test_against_naive_loop(self, rng):
        T, C, F = 12, 8, 33
        data = rng.standard_normal((T, C, F)) + 1j * rng.standard_normal((T, C, F))
        cov = accumulate_covariance(Spectrogram(data, 1000.0, 64, 32))
        naive = np.zeros((F, C, C), complex)
        for f in range(F):
            for t in range(T):
                for i in range(C):
                    for j in range(C):
                        naive[f, i, j] += data[t, i, f] * np.conj(data[t, j, f])
        naive /= T
        assert np.max(np.abs(cov.matrices - naive)) < 1e-12

    def test_bin_range(self, rng):
        data = rng.standard_normal((4, 2, 33)) + 0j
        cov = accumulate_covariance(Spectrogram(data, 1000.0, 64, 32), (100.0, 200.0))
        np.testing.assert_array_equal(cov.bins, [7, 8, 9, 10, 11, 12])
        full = accumulate_covariance(Spectrogram(data, 1000.0, 64, 32))
        np.testing.assert_allclose(cov.matrices, full.restrict(cov.bins).matrices)

    def test_empty(self):
        with pytest.raises(EmptyInput):
            accumulate_covariance([])

    @THOROUGH
    @given(st.integers(0, 2 ** 32 - 1), st.integers(1, 6), st.integers(2, 6))
    def test_hermitian_psd(self, seed, T, C):
        r = np.random.default_rng(seed)
        scale = 10.0 ** r.uniform(-6, 6)
        data = scale * (r.standard_normal((T, C, 5)) + 1j * r.standard_normal((T, C, 5)))
        m = accumulate_covariance(Spectrogram(data, 1000.0, 8, 4)).matrices
        assert np.allclose(m, np.conj(np.swapaxes(m, -1, -2)), rtol=0, atol=1e-9 * np.max(np.abs(m)))
        diag = np.einsum("fcc->fc", m)
        assert np.all(np.abs(diag.imag) == 0) and np.all(diag.real >= 0)
        w = np.linalg.eigvalsh(m)
        assert np.all(w.min(axis=-1) >= -1e-9 * np.abs(w).max(axis=-1))


def test_spectrogram_sequence_interface(rng):
    spec = stft(rec(rng.standard_normal((2, 5000))), 1024, 512)
    assert len(spec) == len(list(spec)) == spec.n_frames
    part = spec[2:4]
    assert part.n_frames == 2 and part.first_frame == 2
    assert spec[3].frame_index == 3
    again = as_spectrogram(list(spec), sample_rate=FS, hop=512)
    np.testing.assert_array_equal(again.data, spec.data)
